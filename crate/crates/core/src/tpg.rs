//! Time-dependent Poisson-Gamma model.
//!
//! Before the plateau point `t_p` each center-day has its own rate
//! `lambda_i(s) ~ Gamma(alpha, alpha / m(phi, s))`; from `t_p` on the rate is
//! frozen at `lambda_i(t_p)`. The mean `m(phi, s)` is a clamped B-spline on
//! the log scale (see [`crate::spline`]).
//!
//! Log-likelihoods here are the log-probability of the observed daily counts
//! with `sum_{i,s} ln n_i(s)!` dropped. That term does not depend on the
//! parameters, the plateau point, or the spline template, so values are
//! comparable across every candidate fitted to the same panel.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::EnrollmentPanel;
use crate::error::{AccrualError, Result};
use crate::forecast::{check_grid, Forecast, ForecastPoint};
use crate::optim::brent_max;
use crate::pg::{ALPHA_MAX, ALPHA_MIN};
use crate::special::ln_rising;
use crate::spline::{MeanFunction, SplineSpec};

/// Minimum number of centers that must have reached a candidate plateau point.
pub const PLATEAU_QUORUM: usize = 3;

const ETA_MIN: f64 = -30.0;
const ETA_MAX: f64 = 15.0;

/// Spline family of a candidate model: polynomial degree and number of
/// internal knots. A single knot sits at `t_p / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SplineTemplate {
    pub degree: usize,
    pub knots: usize,
}

impl SplineTemplate {
    pub const fn new(degree: usize, knots: usize) -> Self {
        Self { degree, knots }
    }

    /// Nominal basis dimension `d`.
    pub fn dim(&self) -> usize {
        self.degree + 1 + self.knots
    }

    /// Free parameters: the spline coefficients, `alpha`, and `t_p`.
    pub fn num_params(&self) -> usize {
        self.dim() + 2
    }

    /// Spline for plateau point `t_p`, or `None` when the knots do not fit
    /// strictly inside `(1, t_p)`. `t_p = 1` is always the constant model.
    pub fn spec_for(&self, t_p: usize) -> Option<SplineSpec> {
        if t_p <= 1 {
            return SplineSpec::new(self.degree, Vec::new(), 1).ok();
        }
        let knots = match self.knots {
            0 => Vec::new(),
            1 => {
                let k = t_p.div_ceil(2).max(2);
                if k >= t_p {
                    return None;
                }
                vec![k as f64]
            }
            _ => return None,
        };
        SplineSpec::new(self.degree, knots, t_p).ok()
    }
}

impl std::fmt::Display for SplineTemplate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self.degree {
            2 => "quadratic",
            3 => "cubic",
            _ => "spline",
        };
        write!(f, "{name}/{} knot(s)", self.knots)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub t_p: usize,
    pub alpha: f64,
    pub loglik: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpgFit {
    pub alpha: f64,
    pub mean_fn: MeanFunction,
    /// Maximized log-likelihood, up to the data-only constant noted in the module docs.
    pub loglik: f64,
    pub n_obs: usize,
    pub c_star: usize,
    /// Profile log-likelihood over every scanned plateau point.
    #[serde(skip)]
    pub profile: Vec<ProfilePoint>,
}

impl TpgFit {
    pub fn t_p(&self) -> usize {
        self.mean_fn.t_p()
    }
}

/// Number of centers whose observed span reaches `t_p`.
pub fn c_star(panel: &EnrollmentPanel, t_p: usize) -> usize {
    panel.centers().iter().filter(|c| c.t_int_local() >= t_p).count()
}

/// Largest admissible plateau point: the `q`-th longest observed span, with
/// `q = min(3, C)`.
pub fn max_plateau(panel: &EnrollmentPanel) -> usize {
    let mut spans: Vec<usize> = panel.centers().iter().map(|c| c.t_int_local()).collect();
    spans.sort_unstable_by(|a, b| b.cmp(a));
    let q = PLATEAU_QUORUM.min(spans.len());
    spans[q - 1]
}

/// Direct log-likelihood, center by center and day by day.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn tpg_loglik(alpha: f64, mf: &MeanFunction, panel: &EnrollmentPanel) -> Result<f64> {
    if !(alpha > 0.0) {
        return Err(AccrualError::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    let t_p = mf.t_p();
    let m_p = mf.plateau_mean();
    let lg_alpha = ln_gamma(alpha);
    let mut total = 0.0;
    for center in panel.centers() {
        let span = center.t_int_local();
        if span >= t_p {
            let n_star: u64 = center.counts[t_p - 1..].iter().map(|&n| n as u64).sum();
            let days = (span - t_p + 1) as f64;
            let lm = days * m_p;
            let n = n_star as f64;
            // marginal of the plateau days sharing one Gamma rate
            total += ln_gamma(alpha + n) - lg_alpha - alpha * (lm / alpha).ln_1p();
            if n_star > 0 {
                total -= n * ((alpha / lm).ln_1p() + days.ln());
            }
        }
        for (s, &n) in center.counts.iter().enumerate().take(span.min(t_p - 1)) {
            let m = mf.mean_eval(s + 1);
            let n = n as f64;
            total += ln_gamma(alpha + n) - lg_alpha - alpha * (m / alpha).ln_1p();
            if n > 0.0 {
                total -= n * (alpha / m).ln_1p();
            }
        }
    }
    if total.is_finite() {
        Ok(total)
    } else {
        Err(AccrualError::NonFinite("tpg_loglik"))
    }
}

/// Parameter-free panel statistics shared by every plateau point.
struct PanelStats {
    /// Longest observed span.
    max_span: usize,
    /// `R_s`: centers observed on local day `s` (index `s - 1`).
    at_risk: Vec<f64>,
    /// `S_s`: pooled enrollments on local day `s`.
    pooled: Vec<f64>,
    /// Per-center suffix sums, `suffix[i][s - 1] = sum_{s' >= s} n_i(s')`.
    suffix: Vec<Vec<u64>>,
    spans: Vec<usize>,
    /// Counts observed on each local day, for the rising-factorial histogram.
    day_counts: Vec<Vec<u32>>,
    total: u64,
}

impl PanelStats {
    fn new(panel: &EnrollmentPanel) -> Self {
        let max_span = panel.centers().iter().map(|c| c.t_int_local()).max().unwrap_or(0);
        let mut at_risk = vec![0.0; max_span];
        let mut pooled = vec![0.0; max_span];
        let mut day_counts = vec![Vec::new(); max_span];
        let mut suffix = Vec::with_capacity(panel.num_centers());
        let mut spans = Vec::with_capacity(panel.num_centers());
        for c in panel.centers() {
            for (s, &n) in c.counts.iter().enumerate() {
                at_risk[s] += 1.0;
                pooled[s] += n as f64;
                day_counts[s].push(n);
            }
            let mut acc = 0u64;
            let mut sfx = vec![0u64; c.counts.len()];
            for (s, &n) in c.counts.iter().enumerate().rev() {
                acc += n as u64;
                sfx[s] = acc;
            }
            suffix.push(sfx);
            spans.push(c.t_int_local());
        }
        Self { max_span, at_risk, pooled, suffix, spans, day_counts, total: panel.total_enrolled() }
    }
}

/// Sufficient statistics and basis rows for one plateau point.
struct PlateauProblem<'a> {
    stats: &'a PanelStats,
    t_p: usize,
    dim: usize,
    /// Row-major `(t_p - 1) x dim` basis values for pre-plateau days.
    basis: Vec<f64>,
    /// Distinct pre-plateau cell counts with multiplicities.
    histogram: &'a [(u32, f64)],
    /// Plateau blocks `(N_i*, days)`.
    blocks: Vec<(u64, f64)>,
}

impl<'a> PlateauProblem<'a> {
    fn new(stats: &'a PanelStats, spec: &SplineSpec, histogram: &'a [(u32, f64)]) -> Self {
        let t_p = spec.t_p();
        let dim = spec.dim();
        let mut basis = vec![0.0; (t_p - 1) * dim];
        for s in 1..t_p {
            spec.basis_into(s as f64, &mut basis[(s - 1) * dim..s * dim])
                .expect("pre-plateau day inside [1, t_p)");
        }
        let blocks = stats
            .spans
            .iter()
            .zip(&stats.suffix)
            .filter(|(&span, _)| span >= t_p)
            .map(|(&span, sfx)| (sfx[t_p - 1], (span - t_p + 1) as f64))
            .collect();
        Self { stats, t_p, dim, basis, histogram, blocks }
    }

    /// Terms depending on `alpha` only.
    fn alpha_part(&self, alpha: f64) -> f64 {
        let cells: f64 = self.histogram.iter().map(|&(n, mult)| mult * ln_rising(alpha, n as u64)).sum();
        let blocks: f64 = self
            .blocks
            .iter()
            .map(|&(n, days)| {
                let mut v = ln_rising(alpha, n);
                if n > 0 {
                    v -= n as f64 * days.ln();
                }
                v
            })
            .sum();
        cells + blocks
    }

    /// Terms depending on `eta`, with gradient and Hessian when requested.
    fn eta_part(
        &self,
        alpha: f64,
        eta: &[f64],
        mut grad: Option<(&mut DVector<f64>, &mut DMatrix<f64>)>,
    ) -> f64 {
        let d = self.dim;
        if let Some((g, h)) = grad.as_mut() {
            g.fill(0.0);
            h.fill(0.0);
        }
        let mut value = 0.0;
        for s in 0..self.t_p - 1 {
            let row = &self.basis[s * d..(s + 1) * d];
            let x: f64 = row.iter().zip(eta).map(|(b, e)| b * e).sum();
            let w = x.exp();
            let (r, sum) = (self.stats.at_risk[s], self.stats.pooled[s]);
            value -= r * alpha * (w / alpha).ln_1p();
            if sum > 0.0 {
                value -= sum * (alpha / w).ln_1p();
            }
            if let Some((g, h)) = grad.as_mut() {
                let denom = alpha + w;
                let first = alpha * (sum - r * w) / denom;
                let second = -alpha * w * (sum + r * alpha) / (denom * denom);
                for k in 0..d {
                    if row[k] == 0.0 {
                        continue;
                    }
                    g[k] += row[k] * first;
                    for l in 0..d {
                        h[(k, l)] += second * row[k] * row[l];
                    }
                }
            }
        }
        let w = eta[d - 1].exp();
        let mut g_p = 0.0;
        let mut h_p = 0.0;
        for &(n, days) in &self.blocks {
            let v = days * w;
            let n = n as f64;
            value -= alpha * (v / alpha).ln_1p();
            if n > 0.0 {
                value -= n * (alpha / v).ln_1p();
            }
            let denom = alpha + v;
            g_p += alpha * (n - v) / denom;
            h_p -= alpha * v * (n + alpha) / (denom * denom);
        }
        if let Some((g, h)) = grad.as_mut() {
            g[d - 1] += g_p;
            h[(d - 1, d - 1)] += h_p;
        }
        value
    }

    /// Maximize over `eta` for fixed `alpha`. The objective is concave in
    /// `eta`, so damped Newton with backtracking converges from any start.
    fn maximize_eta(&self, alpha: f64, eta: &mut [f64]) -> f64 {
        let d = self.dim;
        let mut g = DVector::zeros(d);
        let mut h = DMatrix::zeros(d, d);
        for v in eta.iter_mut() {
            *v = v.clamp(ETA_MIN, ETA_MAX);
        }
        let mut value = self.eta_part(alpha, eta, Some((&mut g, &mut h)));
        let mut trial = vec![0.0; d];
        for _ in 0..100 {
            let neg_h = -&h;
            let scale = (0..d).map(|k| neg_h[(k, k)].abs()).fold(0.0, f64::max).max(1.0);
            let mut system = neg_h;
            for k in 0..d {
                system[(k, k)] += 1e-10 * scale;
            }
            let step = match system.cholesky() {
                Some(chol) => chol.solve(&g),
                None => g.clone() / scale,
            };
            // Newton decrement
            if g.dot(&step) < 1e-12 {
                break;
            }
            let mut t = 1.0;
            let mut improved = false;
            for _ in 0..40 {
                for k in 0..d {
                    trial[k] = (eta[k] + t * step[k]).clamp(ETA_MIN, ETA_MAX);
                }
                let v = self.eta_part(alpha, &trial, None);
                if v >= value {
                    improved = true;
                    break;
                }
                t *= 0.5;
            }
            if !improved {
                break;
            }
            let moved = trial.iter().zip(eta.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            eta.copy_from_slice(&trial);
            value = self.eta_part(alpha, eta, Some((&mut g, &mut h)));
            if moved < 1e-11 {
                break;
            }
        }
        value
    }

    fn loglik(&self, alpha: f64, eta: &mut [f64]) -> f64 {
        self.alpha_part(alpha) + self.maximize_eta(alpha, eta)
    }

    /// Profile over `log alpha`: grid bracketing followed by Brent refinement.
    fn maximize(&self, eta: &mut Vec<f64>) -> (f64, f64) {
        let (lo, hi) = (ALPHA_MIN.ln(), ALPHA_MAX.ln());
        const GRID: usize = 13;
        let mut best = (0usize, f64::NEG_INFINITY);
        let mut etas = Vec::with_capacity(GRID);
        let mut warm = eta.clone();
        let grid: Vec<f64> = (0..GRID).map(|j| lo + (hi - lo) * j as f64 / (GRID - 1) as f64).collect();
        for (j, &y) in grid.iter().enumerate() {
            let v = self.loglik(y.exp(), &mut warm);
            etas.push(warm.clone());
            if v > best.1 {
                best = (j, v);
            }
        }
        let j = best.0;
        let (a, b) = (grid[j.saturating_sub(1)], grid[(j + 1).min(GRID - 1)]);
        let mut warm = etas[j].clone();
        let (y, _) = brent_max(|y| self.loglik(y.exp(), &mut warm), a, b, 1e-10, 200);
        // re-solve at the reported alpha so eta and the value are consistent
        let mut final_eta = etas[j].clone();
        let mut value = self.loglik(y.exp(), &mut final_eta);
        let (mut y, mut chosen) = (y, final_eta);
        if best.1 > value {
            y = grid[j];
            chosen = etas[j].clone();
            value = best.1;
        }
        *eta = chosen;
        (y.exp(), value)
    }
}

/// Incrementally maintained histogram of pre-plateau cell counts.
struct CellHistogram {
    counts: Vec<f64>,
    entries: Vec<(u32, f64)>,
    days: usize,
}

impl CellHistogram {
    fn new() -> Self {
        Self { counts: Vec::new(), entries: Vec::new(), days: 0 }
    }

    /// Include local days `1..t_p`.
    fn advance_to(&mut self, stats: &PanelStats, t_p: usize) {
        let target = t_p.saturating_sub(1);
        if target < self.days {
            *self = Self::new();
        }
        while self.days < target {
            for &n in &stats.day_counts[self.days] {
                let n = n as usize;
                if n >= self.counts.len() {
                    self.counts.resize(n + 1, 0.0);
                }
                self.counts[n] += 1.0;
            }
            self.days += 1;
        }
        self.entries = self
            .counts
            .iter()
            .enumerate()
            .filter(|&(n, &c)| n > 0 && c > 0.0)
            .map(|(n, &c)| (n as u32, c))
            .collect();
    }
}

fn check_fittable(panel: &EnrollmentPanel) -> Result<()> {
    if panel.num_centers() < 2 {
        return Err(AccrualError::InvalidArgument("the time-dependent fit needs at least 2 centers".into()));
    }
    if panel.total_enrolled() == 0 {
        return Err(AccrualError::NoEnrollments);
    }
    Ok(())
}

fn initial_eta(stats: &PanelStats, dim: usize) -> Vec<f64> {
    let cells: f64 = stats.at_risk.iter().sum();
    let rate = (stats.total as f64 / cells).max(1e-6);
    vec![rate.ln(); dim]
}

fn build_fit(
    panel: &EnrollmentPanel,
    spec: SplineSpec,
    alpha: f64,
    eta: Vec<f64>,
    loglik: f64,
    profile: Vec<ProfilePoint>,
) -> Result<TpgFit> {
    let t_p = spec.t_p();
    Ok(TpgFit {
        alpha,
        mean_fn: MeanFunction::new(spec, eta)?,
        loglik,
        n_obs: panel.observation_cells(),
        c_star: c_star(panel, t_p),
        profile,
    })
}

/// Fit `(alpha, eta)` with the plateau point held at `t_p`.
pub fn fit_at_plateau(panel: &EnrollmentPanel, template: SplineTemplate, t_p: usize) -> Result<TpgFit> {
    check_fittable(panel)?;
    if t_p == 0 || t_p > max_plateau(panel) {
        return Err(AccrualError::InsufficientPlateauData(format!(
            "plateau point {t_p} is outside [1, {}]",
            max_plateau(panel)
        )));
    }
    let spec = template
        .spec_for(t_p)
        .ok_or_else(|| AccrualError::InvalidArgument(format!("{template} does not admit t_p = {t_p}")))?;
    let stats = PanelStats::new(panel);
    let mut hist = CellHistogram::new();
    hist.advance_to(&stats, t_p);
    let problem = PlateauProblem::new(&stats, &spec, &hist.entries);
    let mut eta = initial_eta(&stats, spec.dim());
    let (alpha, loglik) = problem.maximize(&mut eta);
    let point = ProfilePoint { t_p, alpha, loglik };
    build_fit(panel, spec, alpha, eta, loglik, vec![point])
}

/// Profile-likelihood fit: every admissible integer plateau point is scanned
/// and the one with the highest maximized likelihood kept (smallest `t_p` on ties).
pub fn tpg_fit(panel: &EnrollmentPanel, template: SplineTemplate) -> Result<TpgFit> {
    check_fittable(panel)?;
    let t_max = max_plateau(panel);
    let stats = PanelStats::new(panel);
    debug_assert!(t_max <= stats.max_span);

    let mut hist = CellHistogram::new();
    let mut profile = Vec::with_capacity(t_max);
    let mut best: Option<(SplineSpec, f64, Vec<f64>, f64)> = None;
    let mut warm: Option<Vec<f64>> = None;

    for t_p in 1..=t_max {
        let Some(spec) = template.spec_for(t_p) else {
            continue;
        };
        hist.advance_to(&stats, t_p);
        let problem = PlateauProblem::new(&stats, &spec, &hist.entries);
        let mut eta = match &warm {
            Some(prev) if prev.len() == spec.dim() => prev.clone(),
            Some(prev) => vec![prev[prev.len() - 1]; spec.dim()],
            None => initial_eta(&stats, spec.dim()),
        };
        let (alpha, loglik) = problem.maximize(&mut eta);
        profile.push(ProfilePoint { t_p, alpha, loglik });
        warm = Some(eta.clone());
        if best.as_ref().is_none_or(|b| loglik > b.3) {
            best = Some((spec, alpha, eta, loglik));
        }
    }

    let (spec, alpha, eta, loglik) = best.ok_or_else(|| {
        AccrualError::InsufficientPlateauData(format!(
            "no admissible plateau point for {template} (largest admissible t_p = {t_max})"
        ))
    })?;
    build_fit(panel, spec, alpha, eta, loglik, profile)
}

/// Forecast of additional enrollments after `t_int`.
///
/// Centers past the plateau project their posterior plateau rate
/// `Gamma(alpha + N_i*, beta(t_p) + t_int_i - t_p + 1)` over `T - t_int`
/// days. The others draw independent prior rates for their remaining
/// pre-plateau days and one prior plateau rate for local days `t_p` through
/// `T - u_i + 1`.
pub fn tpg_forecast(fit: &TpgFit, panel: &EnrollmentPanel, grid: &[usize]) -> Result<Forecast> {
    let t_int = panel.t_int();
    check_grid(t_int, grid)?;
    let alpha = fit.alpha;
    let mf = &fit.mean_fn;
    let t_p = mf.t_p();
    let m_p = mf.plateau_mean();
    let beta_p = alpha / m_p;

    // prefix sums of prior means and variances over local days 1..t_p-1
    let mut mean_prefix = vec![0.0; t_p];
    let mut var_prefix = vec![0.0; t_p];
    for s in 1..t_p {
        let m = mf.mean_eval(s);
        mean_prefix[s] = mean_prefix[s - 1] + m;
        var_prefix[s] = var_prefix[s - 1] + m * m / alpha;
    }

    let mut post_mean = 0.0;
    let mut post_var = 0.0;
    let mut pending = Vec::new();
    for c in panel.centers() {
        let span = c.t_int_local();
        if span >= t_p {
            let n_star: u64 = c.counts[t_p - 1..].iter().map(|&n| n as u64).sum();
            let a = alpha + n_star as f64;
            let b = beta_p + (span - t_p + 1) as f64;
            post_mean += a / b;
            post_var += a / (b * b);
        } else {
            pending.push((c.u, span));
        }
    }

    let points = grid
        .iter()
        .map(|&t| {
            let h = (t - t_int) as f64;
            let mut mean = h * post_mean;
            let mut var = h * h * post_var;
            for &(u, span) in &pending {
                let last_local = t - u + 1;
                let pre_end = (t_p - 1).min(last_local);
                if pre_end > span {
                    mean += mean_prefix[pre_end] - mean_prefix[span];
                    var += var_prefix[pre_end] - var_prefix[span];
                }
                let plateau_days = (last_local + 1).saturating_sub(t_p) as f64;
                mean += plateau_days * m_p;
                var += plateau_days * plateau_days * m_p * m_p / alpha;
            }
            ForecastPoint::from_rate_moments(t, mean, var)
        })
        .collect();
    Ok(Forecast { t_int, points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CenterRecord;

    fn panel(rows: &[(usize, &[u32])], t_int: usize) -> EnrollmentPanel {
        let centers = rows
            .iter()
            .enumerate()
            .map(|(i, (u, counts))| CenterRecord { id: format!("c{i}"), u: *u, counts: counts.to_vec() })
            .collect();
        EnrollmentPanel::new(centers, t_int).unwrap()
    }

    fn demo_panel() -> EnrollmentPanel {
        panel(
            &[
                (1, &[0, 1, 3, 2, 1, 0, 2, 1]),
                (2, &[1, 0, 2, 4, 1, 1, 0]),
                (1, &[2, 2, 0, 1, 3, 1, 1, 0]),
                (4, &[0, 1, 1, 2, 0]),
                (6, &[1, 0, 2]),
            ],
            8,
        )
    }

    #[test]
    fn template_specs() {
        let t = SplineTemplate::new(3, 1);
        assert_eq!(t.num_params(), 7);
        assert!(t.spec_for(2).is_none());
        assert_eq!(t.spec_for(3).unwrap().internal_knots(), &[2.0]);
        assert_eq!(t.spec_for(60).unwrap().internal_knots(), &[30.0]);
        assert_eq!(t.spec_for(61).unwrap().internal_knots(), &[31.0]);
        assert_eq!(t.spec_for(1).unwrap().dim(), 4);
        assert_eq!(SplineTemplate::new(2, 0).spec_for(2).unwrap().dim(), 3);
    }

    #[test]
    fn quorum_bound() {
        let p = demo_panel();
        assert_eq!(max_plateau(&p), 7);
        assert_eq!(c_star(&p, 7), 3);
        let two = panel(&[(1, &[1, 2, 3]), (2, &[1, 1])], 3);
        assert_eq!(max_plateau(&two), 2);
    }

    #[test]
    fn fast_path_matches_direct() {
        let p = demo_panel();
        let stats = PanelStats::new(&p);
        for template in [SplineTemplate::new(2, 0), SplineTemplate::new(3, 1)] {
            for t_p in 1..=7 {
                let Some(spec) = template.spec_for(t_p) else { continue };
                let mut hist = CellHistogram::new();
                hist.advance_to(&stats, t_p);
                let problem = PlateauProblem::new(&stats, &spec, &hist.entries);
                let eta: Vec<f64> = (0..spec.dim()).map(|k| -0.4 + 0.15 * k as f64).collect();
                for alpha in [0.05, 1.3, 40.0, 9000.0] {
                    let fast = problem.alpha_part(alpha) + problem.eta_part(alpha, &eta, None);
                    let mf = MeanFunction::new(spec.clone(), eta.clone()).unwrap();
                    let direct = tpg_loglik(alpha, &mf, &p).unwrap();
                    assert!(
                        (fast - direct).abs() < 1e-9 * (1.0 + direct.abs()),
                        "t_p={t_p} alpha={alpha}: {fast} vs {direct}"
                    );
                }
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = demo_panel();
        let stats = PanelStats::new(&p);
        let spec = SplineTemplate::new(3, 1).spec_for(6).unwrap();
        let mut hist = CellHistogram::new();
        hist.advance_to(&stats, 6);
        let problem = PlateauProblem::new(&stats, &spec, &hist.entries);
        let eta = vec![-0.3, 0.2, 0.5, -0.1, 0.05];
        let alpha = 2.5;
        let d = eta.len();
        let mut g = DVector::zeros(d);
        let mut h = DMatrix::zeros(d, d);
        problem.eta_part(alpha, &eta, Some((&mut g, &mut h)));
        let eps = 1e-6;
        for k in 0..d {
            let mut up = eta.clone();
            let mut dn = eta.clone();
            up[k] += eps;
            dn[k] -= eps;
            let fd = (problem.eta_part(alpha, &up, None) - problem.eta_part(alpha, &dn, None)) / (2.0 * eps);
            assert!((fd - g[k]).abs() < 1e-6, "grad {k}: {fd} vs {}", g[k]);
            let mut gu = DVector::zeros(d);
            let mut gd = DVector::zeros(d);
            let mut scratch = DMatrix::zeros(d, d);
            problem.eta_part(alpha, &up, Some((&mut gu, &mut scratch)));
            problem.eta_part(alpha, &dn, Some((&mut gd, &mut scratch)));
            for l in 0..d {
                let fd2 = (gu[l] - gd[l]) / (2.0 * eps);
                assert!((fd2 - h[(l, k)]).abs() < 1e-5, "hess {l},{k}");
            }
        }
    }

    #[test]
    fn profile_argmax() {
        let p = demo_panel();
        let fit = tpg_fit(&p, SplineTemplate::new(2, 0)).unwrap();
        assert!(fit.profile.iter().all(|pt| fit.loglik >= pt.loglik));
        assert_eq!(fit.c_star, c_star(&p, fit.t_p()));
        let direct = tpg_loglik(fit.alpha, &fit.mean_fn, &p).unwrap();
        assert!((direct - fit.loglik).abs() < 1e-8 * (1.0 + direct.abs()));
    }

    #[test]
    fn fit_errors() {
        let zeros = panel(&[(1, &[0, 0]), (1, &[0, 0]), (1, &[0, 0])], 2);
        assert!(matches!(tpg_fit(&zeros, SplineTemplate::new(2, 0)), Err(AccrualError::NoEnrollments)));
        let one = panel(&[(1, &[1, 0])], 2);
        assert!(tpg_fit(&one, SplineTemplate::new(2, 0)).is_err());
        // 1-knot templates need t_p >= 3
        let short = panel(&[(1, &[1, 0]), (1, &[0, 1]), (2, &[1])], 2);
        assert!(tpg_fit(&short, SplineTemplate::new(3, 1)).is_ok());
        assert!(fit_at_plateau(&short, SplineTemplate::new(3, 1), 2).is_err());
        assert!(matches!(
            fit_at_plateau(&short, SplineTemplate::new(3, 0), 3),
            Err(AccrualError::InsufficientPlateauData(_))
        ));
    }

    #[test]
    fn single_group_one_center_forecast() {
        // alpha = 1, m_p = 0.5 -> beta = 2; N* = 2 over 3 days -> Gamma(3, 5)
        let p = panel(&[(1, &[0, 1, 1, 0])], 4);
        let spec = SplineSpec::new(2, vec![], 2).unwrap();
        let mf = MeanFunction::new(spec, vec![0.0, 0.0, 0.5f64.ln()]).unwrap();
        let fit = TpgFit { alpha: 1.0, mean_fn: mf, loglik: 0.0, n_obs: 4, c_star: 1, profile: vec![] };
        let f = tpg_forecast(&fit, &p, &[14]).unwrap();
        let pt = f.points[0];
        assert!((pt.expectation - 6.0).abs() < 1e-12);
        assert!((pt.variance - 18.0).abs() < 1e-12);
        assert_eq!(pt.lower95, 0.0);
        assert!((pt.upper95 - 14.315).abs() < 1e-3);
        assert!(tpg_forecast(&fit, &p, &[4]).is_err());
    }

    #[test]
    fn group_two_day_accounting() {
        // A center that has not reached t_p contributes T - t_int future days in total.
        let p = panel(&[(1, &[1, 1, 1, 1, 1, 1]), (5, &[0, 1])], 6);
        let spec = SplineSpec::new(2, vec![], 4).unwrap();
        let mf = MeanFunction::new(spec, vec![0.0; 3]).unwrap();
        let fit = TpgFit { alpha: 2.0, mean_fn: mf, loglik: 0.0, n_obs: 8, c_star: 1, profile: vec![] };
        let f = tpg_forecast(&fit, &p, &[7, 8, 12]).unwrap();
        // m = 1 everywhere, so the late center adds exactly one per future day
        let post_mean = (2.0 + 3.0) / (2.0 + 3.0);
        for pt in &f.points {
            let h = (pt.t - 6) as f64;
            assert!((pt.expectation - (h * post_mean + h)).abs() < 1e-12, "T={}", pt.t);
        }
    }
}
