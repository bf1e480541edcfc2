use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use skillgraph::pipeline::{Pipeline, PipelineConfig, PipelineError, ARTIFACT_FILE, MANIFEST_FILE};
use skillgraph::query::QueryEngine;
use skillgraph::report::{Format, Table};

/// Builds the skill graph from a posting corpus and emits the analysis reports.
///
/// Settings resolve as: configuration file, then `SKILLGRAPH_*` environment
/// variables, then command-line flags. Without `--config` a default synthetic
/// corpus is used.
#[derive(Debug, Parser)]
#[command(name = "skillgraph", version)]
struct Cli {
    /// TOML pipeline configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for reports and cached artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Structured,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Structured => Format::Structured,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load or generate the corpus and de-duplicate it.
    Ingest,
    /// Resolve activity and tool surface forms into canonical entities.
    Cluster,
    /// Build the graph and its communities; write topology and graph exports.
    Graph,
    /// Risk aggregation, heterogeneity, communities, bridge skills, importance.
    Analyze,
    /// Transition network, safe harbors, gap skills, exemplars.
    Transitions,
    /// Clustering threshold grid and transition threshold grids.
    Sensitivity,
    /// Stratified validation sample and, when judgments exist, error rates.
    Validate,
    /// Run every stage and write all reports, the service artifact and the manifest.
    Report,
    /// Serve the query API over an artifact.
    Serve {
        /// Artifact file; defaults to the one in the output directory.
        #[arg(long)]
        artifact: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

const DEFAULT_CONFIG: &str = "[corpus.synthetic]\n";

fn load_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::from_toml_str(DEFAULT_CONFIG)?,
    };
    cfg.apply_env(std::env::vars())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn report_written(p: &Pipeline, files: &[String]) {
    for f in files {
        println!("{}", p.out_dir().join(f).display());
    }
}

fn write(p: &Pipeline, tables: Vec<Table>) -> Result<(), PipelineError> {
    let files = p.write_tables(&tables)?;
    report_written(p, &files);
    Ok(())
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let cfg = load_config(&cli)?;
    if let Command::Serve { artifact, addr } = &cli.command {
        let path = artifact.clone().unwrap_or_else(|| cfg.out_dir.join(ARTIFACT_FILE));
        let engine = QueryEngine::load(&path).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))?;
        let rt = tokio::runtime::Runtime::new().map_err(|e| PipelineError::Data(e.to_string()))?;
        eprintln!("serving {} on http://{addr}", path.display());
        return rt
            .block_on(skillgraph_service::serve(*addr, Arc::new(engine)))
            .map_err(|e| PipelineError::Data(format!("{addr}: {e}")));
    }

    let p = Pipeline::new(cfg, cli.format.into())?;
    match cli.command {
        Command::Ingest => {
            let ing = p.ingest()?;
            println!("{} postings", ing.corpus.postings.len());
        }
        Command::Cluster => {
            let ing = p.ingested()?;
            let cl = p.cluster(&ing)?;
            println!("{} activity clusters, {} tool clusters", cl.activities.len(), cl.tools.len());
        }
        Command::Graph => {
            let ing = p.ingested()?;
            let cl = p.clustered(&ing)?;
            let built = p.build(&ing, &cl)?;
            write(&p, p.graph_tables(&built)?)?;
        }
        Command::Analyze => {
            let (ing, _, built) = p.prepare()?;
            write(&p, p.analysis_tables(&ing, &built)?)?;
        }
        Command::Transitions => {
            let (_, _, built) = p.prepare()?;
            write(&p, p.transition_outputs(&built)?.tables)?;
        }
        Command::Sensitivity => {
            let (ing, _, built) = p.prepare()?;
            write(&p, p.sensitivity_tables(&ing, &built)?.0)?;
        }
        Command::Validate => {
            let ing = p.ingested()?;
            let cl = p.clustered(&ing)?;
            write(&p, p.validation_tables(&ing, &cl)?)?;
        }
        Command::Report => {
            let manifest = p.run()?;
            let files: Vec<String> = manifest.files.into_iter().map(|e| e.file).collect();
            report_written(&p, &files);
            println!("{}", p.out_dir().join(MANIFEST_FILE).display());
        }
        Command::Serve { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
