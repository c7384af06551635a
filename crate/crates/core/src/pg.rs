//! Standard Poisson-Gamma recruitment model with constant center rates.
//!
//! Center rates are `lambda_i ~ Gamma(alpha, beta)` with prior mean
//! `m = alpha / beta`. Given `k_i` enrollments over `tau_i` days the marginal
//! of `k_i` is negative binomial, and the posterior of `lambda_i` is
//! `Gamma(alpha + k_i, beta + tau_i)`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::PanelSummary;
use crate::error::{AccrualError, Result};
use crate::forecast::{check_grid, Forecast, ForecastPoint};
use crate::optim::{nelder_mead_max, SimplexOptions};
use crate::special::ln_rising;

pub const ALPHA_MIN: f64 = 1e-4;
pub const ALPHA_MAX: f64 = 1e4;
pub const M_MIN: f64 = 1e-10;
pub const M_MAX: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgFit {
    pub alpha: f64,
    pub m: f64,
    pub loglik: f64,
    pub n_obs: usize,
}

impl PgFit {
    pub fn beta(&self) -> f64 {
        self.alpha / self.m
    }
}

/// Per-center posterior `Gamma(shape_i, rate_i)` of the recruitment rate.
#[derive(Debug, Clone, PartialEq)]
pub struct PgPosterior {
    pub shape: Vec<f64>,
    pub rate: Vec<f64>,
}

impl PgPosterior {
    pub fn mean(&self) -> Vec<f64> {
        self.shape.iter().zip(&self.rate).map(|(a, b)| a / b).collect()
    }

    pub fn variance(&self) -> Vec<f64> {
        self.shape.iter().zip(&self.rate).map(|(a, b)| a / (b * b)).collect()
    }
}

/// Negative-binomial log-likelihood of the center totals.
pub fn pg_loglik(alpha: f64, m: f64, summary: &PanelSummary) -> Result<f64> {
    if !(alpha > 0.0 && m > 0.0) {
        return Err(AccrualError::InvalidArgument(format!(
            "alpha and m must be positive (alpha = {alpha}, m = {m})"
        )));
    }
    let mut total = 0.0;
    for (&k, &tau) in summary.k.iter().zip(&summary.tau) {
        let mt = m * tau as f64;
        let k_f = k as f64;
        // k ln(m tau / (alpha + m tau)) + alpha ln(alpha / (alpha + m tau))
        let mut term = ln_rising(alpha, k) - ln_gamma(k_f + 1.0) - alpha * (mt / alpha).ln_1p();
        if k > 0 {
            term -= k_f * (alpha / mt).ln_1p();
        }
        total += term;
    }
    if total.is_finite() {
        Ok(total)
    } else {
        Err(AccrualError::NonFinite("pg_loglik"))
    }
}

/// Method-of-moments starting point `(alpha_0, m_0)`, clamped into bounds.
fn moment_start(summary: &PanelSummary) -> (f64, f64) {
    let c = summary.num_centers() as f64;
    let k_sum: f64 = summary.k.iter().map(|&k| k as f64).sum();
    let tau_sum: f64 = summary.tau.iter().map(|&t| t as f64).sum();
    let m0 = (k_sum / tau_sum).clamp(M_MIN, M_MAX);
    let rates: Vec<f64> = summary.k.iter().zip(&summary.tau).map(|(&k, &t)| k as f64 / t as f64).collect();
    let var = rates.iter().map(|r| (r - m0).powi(2)).sum::<f64>() / (c - 1.0).max(1.0);
    let poisson_part = m0 * summary.tau.iter().map(|&t| 1.0 / t as f64).sum::<f64>() / c;
    let excess = var - poisson_part;
    let alpha0 = if excess > 0.0 { m0 * m0 / excess } else { ALPHA_MAX };
    (alpha0.clamp(ALPHA_MIN, ALPHA_MAX), m0)
}

/// Empirical-Bayes estimate of `(alpha, m)` by maximizing [`pg_loglik`].
pub fn pg_fit(summary: &PanelSummary) -> Result<PgFit> {
    if summary.num_centers() < 2 {
        return Err(AccrualError::InvalidArgument("the Poisson-Gamma fit needs at least 2 centers".into()));
    }
    if summary.k.iter().all(|&k| k == 0) {
        return Err(AccrualError::NoEnrollments);
    }
    let lower = [ALPHA_MIN.ln(), M_MIN.ln()];
    let upper = [ALPHA_MAX.ln(), M_MAX.ln()];
    let objective = |x: &[f64]| pg_loglik(x[0].exp(), x[1].exp(), summary).unwrap_or(f64::NEG_INFINITY);

    let (alpha0, m0) = moment_start(summary);
    let base = [alpha0.ln(), m0.ln()];
    let jitter = [(0.0, 0.0), (1.0, 0.0), (-1.0, 0.0), (0.0, 0.3), (0.0, -0.3)];
    let opts = SimplexOptions::default();

    let mut best: Option<(Vec<f64>, f64)> = None;
    for (da, dm) in jitter {
        let start = [base[0] + da, base[1] + dm];
        let mut r = nelder_mead_max(objective, &start, &lower, &upper, opts);
        // one restart from the reported optimum guards against a collapsed simplex
        let polish =
            nelder_mead_max(objective, &r.x, &lower, &upper, SimplexOptions { initial_step: 0.05, ..opts });
        if polish.value >= r.value {
            r = polish;
        }
        // strict improvement keeps the earliest start on ties
        if best.as_ref().is_none_or(|(_, v)| r.value > *v) {
            best = Some((r.x, r.value));
        }
    }
    let (x, loglik) = best.expect("at least one start");
    Ok(PgFit { alpha: x[0].exp(), m: x[1].exp(), loglik, n_obs: summary.tau.iter().sum() })
}

pub fn pg_posterior(fit: &PgFit, summary: &PanelSummary) -> PgPosterior {
    let beta = fit.beta();
    PgPosterior {
        shape: summary.k.iter().map(|&k| fit.alpha + k as f64).collect(),
        rate: summary.tau.iter().map(|&t| beta + t as f64).collect(),
    }
}

/// Forecast of additional enrollments `N^a(T) ~ Poisson((T - t_int) Lambda)`
/// with `Lambda` the sum of posterior center rates.
pub fn pg_forecast(post: &PgPosterior, t_int: usize, grid: &[usize]) -> Result<Forecast> {
    check_grid(t_int, grid)?;
    let rate_mean: f64 = post.shape.iter().zip(&post.rate).map(|(a, b)| a / b).sum();
    let rate_var: f64 = post.shape.iter().zip(&post.rate).map(|(a, b)| a / (b * b)).sum();
    let points = grid
        .iter()
        .map(|&t| {
            let h = (t - t_int) as f64;
            ForecastPoint::from_rate_moments(t, h * rate_mean, h * h * rate_var)
        })
        .collect();
    Ok(Forecast { t_int, points })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(k: &[u64], tau: &[usize]) -> PanelSummary {
        PanelSummary {
            ids: (0..k.len()).map(|i| i.to_string()).collect(),
            k: k.to_vec(),
            tau: tau.to_vec(),
            daily: vec![],
            cumulative: vec![],
        }
    }

    #[test]
    fn geometric_cases() {
        let v = pg_loglik(1.0, 1.0, &summary(&[1], &[1])).unwrap();
        assert!((v - 0.25f64.ln()).abs() < 1e-12);
        let v = pg_loglik(2.0, 1.0, &summary(&[0], &[1])).unwrap();
        assert!((v - (4.0f64 / 9.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn scale_consistency() {
        let s = summary(&[3, 0, 7], &[10, 4, 12]);
        let doubled = summary(&[3, 0, 7], &[20, 8, 24]);
        let a = pg_loglik(1.3, 0.4, &s).unwrap();
        let b = pg_loglik(1.3, 0.2, &doubled).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_parameters() {
        let s = summary(&[1], &[1]);
        assert!(pg_loglik(0.0, 1.0, &s).is_err());
        assert!(pg_loglik(1.0, -1.0, &s).is_err());
    }

    #[test]
    fn equidispersed_hits_alpha_cap() {
        let s = summary(&[10; 8], &[50; 8]);
        let fit = pg_fit(&s).unwrap();
        assert!(fit.alpha > ALPHA_MAX * 0.999, "alpha = {}", fit.alpha);
        assert!((fit.m - 0.2).abs() < 1e-6);
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(pg_fit(&summary(&[0, 0], &[5, 5])), Err(AccrualError::NoEnrollments)));
        assert!(pg_fit(&summary(&[3], &[5])).is_err());
    }

    #[test]
    fn optimality_probe() {
        let s = summary(&[2, 0, 5, 9, 1, 4], &[10, 4, 7, 20, 3, 15]);
        let fit = pg_fit(&s).unwrap();
        let mut state = 0x2545f4914f6cdd1du64;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..1000 {
            let alpha = (ALPHA_MIN.ln() + next() * (ALPHA_MAX.ln() - ALPHA_MIN.ln())).exp();
            let m = (-6.0 + next() * 8.0).exp();
            assert!(fit.loglik >= pg_loglik(alpha, m, &s).unwrap() - 1e-12);
        }
    }

    #[test]
    fn posterior_arithmetic() {
        let fit = PgFit { alpha: 2.0, m: 2.0 / 3.0, loglik: 0.0, n_obs: 5 };
        let post = pg_posterior(&fit, &summary(&[4, 0], &[5, 5]));
        assert_eq!(post.shape[0], 6.0);
        assert!((post.rate[0] - 8.0).abs() < 1e-12);
        assert!(post.mean()[1] < fit.m);
    }

    #[test]
    fn forecast_moments() {
        let post = PgPosterior { shape: vec![6.0], rate: vec![8.0] };
        let f = pg_forecast(&post, 20, &[30]).unwrap();
        let p = f.points[0];
        assert!((p.expectation - 7.5).abs() < 1e-12);
        assert!((p.variance - 16.875).abs() < 1e-12);
        assert!(pg_forecast(&post, 20, &[20]).is_err());
    }
}
