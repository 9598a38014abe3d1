use anyhow::{bail, Result};

/// Wilson score interval for a binomial proportion, clipped to [0, 1].
///
/// center = (p + z^2/2n) / (1 + z^2/n)
/// half   = z * sqrt(p(1-p)/n + z^2/4n^2) / (1 + z^2/n)
pub fn wilson_interval(successes: u64, n: u64, z: f64) -> Result<(f64, f64)> {
    if n == 0 {
        bail!("wilson interval needs n >= 1");
    }
    if successes > n {
        bail!("successes {} exceed n {}", successes, n);
    }
    if !(z > 0.0) {
        bail!("z must be positive");
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    // At the boundaries the closed form collapses exactly: lower(0, n) = 0
    // and upper(n, n) = 1. Pin them rather than leaving the last ulp to
    // rounding.
    let lo = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if successes == n { 1.0 } else { (center + half).min(1.0) };
    Ok((lo, hi))
}

/// Two-sided 95% z value used throughout the harness.
pub const Z95: f64 = 1.96;
