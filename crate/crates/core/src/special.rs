//! Log-Gamma helpers.

use statrs::function::gamma::ln_gamma;

/// `ln Gamma(a + n) - ln Gamma(a)`, the log rising factorial.
///
/// Small `n` is summed term by term, which avoids the cancellation between two
/// large log-Gamma values when `a` is large.
pub fn ln_rising(a: f64, n: u64) -> f64 {
    if n <= 64 {
        (0..n).map(|j| (a + j as f64).ln()).sum()
    } else {
        ln_gamma(a + n as f64) - ln_gamma(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_log_gamma() {
        for &a in &[1e-3, 0.5, 1.0, 7.25, 300.0] {
            for &n in &[0u64, 1, 5, 64, 65, 400] {
                let direct = ln_gamma(a + n as f64) - ln_gamma(a);
                let scale = 1.0 + direct.abs();
                assert!((ln_rising(a, n) - direct).abs() < 1e-11 * scale, "a={a} n={n}");
            }
        }
        // (1)(2)(3) = 6
        assert!((ln_rising(1.0, 3) - 6f64.ln()).abs() < 1e-15);
    }
}
