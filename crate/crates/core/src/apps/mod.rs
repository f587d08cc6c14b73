//! The three applications: probabilistic heat solving, PDE discovery for viscous Burgers and
//! boundary-constrained displacement estimation, plus reference solvers for their data.

pub mod discovery;
pub mod heat;
pub mod reference;
pub mod tensile;

use statrs::function::erf::erfc;

/// Quantile `p` of the equal-weight Gaussian mixture `Σ N(means_m, sd²) / M`.
pub fn mixture_quantile(means: &[f64], sd: f64, p: f64) -> f64 {
    let lo0 = means.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi0 = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(sd > 0.0) {
        let mut s = means.to_vec();
        s.sort_by(f64::total_cmp);
        let k = ((p * s.len() as f64).ceil() as usize).clamp(1, s.len());
        return s[k - 1];
    }
    let cdf = |q: f64| means.iter().map(|m| normal_cdf((q - m) / sd)).sum::<f64>() / means.len() as f64;
    let (mut lo, mut hi) = (lo0 - 10.0 * sd, hi0 + 10.0 * sd);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * (1.0 + mid.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}
