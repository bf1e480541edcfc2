use thiserror::Error;

/// Minimum number of observations at or above `x_min` for a fit.
pub const MIN_POINTS: usize = 10;

const GAMMA_LO: f64 = 1.0 + 1e-6;
const GAMMA_HI: f64 = 20.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PowerLawError {
    #[error("need at least {MIN_POINTS} values >= x_min, got {0}")]
    TooFewPoints(usize),
    #[error("all values are equal; the exponent is not identifiable")]
    Degenerate,
    #[error("x_min must be at least 1")]
    BadXmin,
}

/// Hurwitz zeta `sum_{k>=0} (k + q)^-s` for `s > 1`, `q > 0`, by Euler-Maclaurin
/// summation with ten explicit terms and six Bernoulli corrections.
pub fn hurwitz_zeta(s: f64, q: f64) -> f64 {
    const N: usize = 10;
    // B_2j / (2j)!
    const B: [f64; 6] = [
        1.0 / 12.0,
        -1.0 / 720.0,
        1.0 / 30_240.0,
        -1.0 / 1_209_600.0,
        1.0 / 47_900_160.0,
        -691.0 / 1_307_674_368_000.0,
    ];
    let head: f64 = (0..N).map(|k| (k as f64 + q).powf(-s)).sum();
    let a = N as f64 + q;
    let mut sum = head + a.powf(1.0 - s) / (s - 1.0) + 0.5 * a.powf(-s);
    // Rising factorial s (s+1) ... (s+2j-2) times a^(-s-2j+1).
    let mut rising = s;
    let mut power = a.powf(-s - 1.0);
    for (j, b) in B.iter().enumerate() {
        sum += b * rising * power;
        let k = 2.0 * j as f64;
        rising *= (s + k + 1.0) * (s + k + 2.0);
        power /= a * a;
    }
    sum
}

/// Discrete power-law exponent by maximum likelihood over values `>= x_min`:
/// maximizes `-n ln zeta(gamma, x_min) - gamma * sum(ln x)`.
pub fn fit_power_law(values: &[u64], x_min: u64) -> Result<f64, PowerLawError> {
    if x_min == 0 {
        return Err(PowerLawError::BadXmin);
    }
    let tail: Vec<f64> = values
        .iter()
        .filter(|v| **v >= x_min)
        .map(|v| *v as f64)
        .collect();
    if tail.len() < MIN_POINTS {
        return Err(PowerLawError::TooFewPoints(tail.len()));
    }
    if tail.iter().all(|v| *v == tail[0]) {
        return Err(PowerLawError::Degenerate);
    }
    let n = tail.len() as f64;
    let log_sum: f64 = tail.iter().map(|v| v.ln()).sum();
    let q = x_min as f64;
    let neg_ll = |g: f64| n * hurwitz_zeta(g, q).ln() + g * log_sum;

    // The negative log-likelihood is convex in gamma; golden-section search.
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (GAMMA_LO, GAMMA_HI);
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (neg_ll(x1), neg_ll(x2));
    while hi - lo > 1e-10 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = neg_ll(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = neg_ll(x2);
        }
    }
    Ok((lo + hi) / 2.0)
}
