//! Simulation study: generative recruitment scenarios and the coverage, bias
//! and standard-error harness comparing the time-dependent and standard models.
//!
//! Every replication draws from its own ChaCha stream: stream `r << 20` for
//! the initiation times of replication `r` and `(r << 20) + 1 + i` for center
//! `i`. Results therefore do not depend on scheduling or thread count.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Gamma as GammaDist};

use crate::data::{summarize, CenterRecord, EnrollmentPanel};
use crate::error::{AccrualError, Result};
use crate::pg::{pg_fit, pg_forecast, pg_posterior};
use crate::selection::{select_model, CandidateSet};
use crate::tpg::tpg_forecast;

/// Generative parameters of one scenario and the design it is run under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub c1: f64,
    pub c2: f64,
    /// Gamma shape of the mean curve; unused when `c2 = 0`.
    pub p1: Option<f64>,
    /// Gamma rate of the mean curve; unused when `c2 = 0`.
    pub p2: Option<f64>,
    /// 1 for the shifted pdf curve, 2 for the cdf curve.
    pub q: Option<u8>,
    pub t_p: usize,
    pub alpha: f64,
    #[serde(rename = "C")]
    pub centers: usize,
    pub t_int_list: Vec<usize>,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub setting: u8,
    #[serde(default = "default_case")]
    pub case: u8,
    #[serde(default)]
    pub seed: u64,
}

fn default_case() -> u8 {
    1
}

pub const PRESET_NAMES: [&str; 5] = ["scenario1", "scenario2", "scenario3", "scenario4", "scenario5"];

impl ScenarioConfig {
    /// One of the five bundled scenarios, in the simultaneous-start setting
    /// with 20 centers. Scenarios 1 and 2 ramp up slowly along the Gamma cdf;
    /// scenarios 3 and 4 start fast with an early pdf bump.
    pub fn preset(name: &str) -> Result<Self> {
        type Row = (f64, f64, Option<f64>, Option<f64>, usize, Option<u8>, [usize; 2], usize);
        #[rustfmt::skip]
        let (c1, c2, p1, p2, t_p, q, t_ints, horizon): Row =
            match name {
                "scenario1" => (0.2, 0.50, Some(0.55), Some(0.09), 60, Some(2), [80, 160], 300),
                "scenario2" => (0.2, 0.50, Some(10.0), Some(0.15), 150, Some(2), [200, 300], 500),
                "scenario3" => (0.2, 8.0, Some(1.0), Some(0.05), 130, Some(1), [160, 250], 500),
                "scenario4" => (0.2, 13.0, Some(2.40), Some(0.11), 100, Some(1), [120, 200], 400),
                "scenario5" => (0.2, 0.0, None, None, 1, None, [80, 160], 300),
                other => {
                    return Err(AccrualError::InvalidArgument(format!(
                        "unknown scenario {other:?} (expected one of {})",
                        PRESET_NAMES.join(", ")
                    )))
                }
            };
        Ok(Self {
            name: name.to_string(),
            c1,
            c2,
            p1,
            p2,
            q,
            t_p,
            alpha: 1.0,
            centers: 20,
            t_int_list: t_ints.to_vec(),
            horizon,
            setting: 1,
            case: 1,
            seed: 0,
        })
    }

    /// Switch to staggered initiation times with the interim times used for
    /// that design.
    pub fn staggered(mut self, case: u8) -> Result<Self> {
        let t_ints = match self.name.as_str() {
            "scenario1" => vec![80, 110],
            "scenario2" => vec![200, 260],
            "scenario3" => vec![160, 220],
            "scenario4" => vec![120, 170],
            "scenario5" => {
                return Err(AccrualError::InvalidArgument(
                    "scenario5 plateaus at the start and has no staggered design".into(),
                ))
            }
            _ => self.t_int_list.clone(),
        };
        self.setting = 2;
        self.case = case;
        self.t_int_list = t_ints;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(AccrualError::InvalidArgument(format!("{}: {msg}", self.name)));
        if self.c1 < 0.0 || self.c2 < 0.0 {
            return bad("c1 and c2 must be nonnegative".into());
        }
        if self.c2 > 0.0 {
            match (self.p1, self.p2, self.q) {
                (Some(p1), Some(p2), Some(1 | 2)) if p1 > 0.0 && p2 > 0.0 => {}
                _ => return bad("a non-constant curve needs p1 > 0, p2 > 0 and q in {1, 2}".into()),
            }
        } else if self.c1 <= 0.0 {
            return bad("constant curve needs c1 > 0".into());
        }
        if self.t_p == 0 || self.alpha <= 0.0 || self.centers == 0 {
            return bad("t_p, alpha and C must be positive".into());
        }
        if self.t_int_list.is_empty() || self.t_int_list.contains(&0) {
            return bad("t_int_list must hold positive interim times".into());
        }
        if self.t_int_list.iter().any(|&t| t >= self.horizon) {
            return bad("every interim time must precede T".into());
        }
        match (self.setting, self.case) {
            (1, _) => {}
            (2, 1 | 2) => {
                if self.first_interim() <= self.t_p {
                    return bad("staggered design needs the first interim after t_p".into());
                }
            }
            _ => return bad("setting must be 1 or 2 and case 1 or 2".into()),
        }
        Ok(())
    }

    pub fn first_interim(&self) -> usize {
        self.t_int_list.iter().copied().min().unwrap_or(0)
    }
}

/// Mean curve `f^q(t)`: `c1` plus `c2` times the Gamma(p1, p2) pdf (`q = 1`)
/// or cdf (`q = 2`). Callers freeze it at `t_p`.
pub fn mean_curve(cfg: &ScenarioConfig, t: f64) -> f64 {
    if cfg.c2 == 0.0 {
        return cfg.c1;
    }
    let (Some(p1), Some(p2)) = (cfg.p1, cfg.p2) else {
        return cfg.c1;
    };
    let dist = GammaDist::new(p1, p2).expect("validated curve parameters");
    match cfg.q {
        Some(2) => cfg.c1 + cfg.c2 * dist.cdf(t),
        _ => cfg.c1 + cfg.c2 * dist.pdf(t),
    }
}

/// Latent rates and counts of one center over local days `1..=len`.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterPath {
    pub rates: Vec<f64>,
    pub counts: Vec<u32>,
}

/// Daily rates are independent `Gamma(alpha, alpha / f(t))` draws up to
/// `t_p` and frozen at the day-`t_p` draw afterwards; counts are Poisson.
pub fn draw_center_path<R: rand::Rng + ?Sized>(cfg: &ScenarioConfig, len: usize, rng: &mut R) -> CenterPath {
    let mut rates = Vec::with_capacity(len);
    let mut counts = Vec::with_capacity(len);
    let mut frozen = None;
    for t in 1..=len {
        let rate = match frozen {
            Some(r) => r,
            None => {
                let mean = mean_curve(cfg, t as f64);
                let r =
                    Gamma::new(cfg.alpha, mean / cfg.alpha).expect("positive Gamma parameters").sample(rng);
                if t >= cfg.t_p {
                    frozen = Some(r);
                }
                r
            }
        };
        let n =
            if rate > 0.0 { Poisson::new(rate).expect("finite positive rate").sample(rng) as u32 } else { 0 };
        rates.push(rate);
        counts.push(n);
    }
    CenterPath { rates, counts }
}

/// Initiation times. Setting 1 starts every center on day 1. Setting 2 starts
/// `C*` centers (half in case 1, two thirds in case 2) uniformly on
/// `[1, t1 - t_p]` and the rest on `[t1 - t_p + 1, t1]`, `t1` the first interim.
pub fn draw_initiations<R: rand::Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<Vec<usize>> {
    if cfg.setting == 1 {
        return Ok(vec![1; cfg.centers]);
    }
    let t1 = cfg.first_interim();
    if t1 <= cfg.t_p {
        return Err(AccrualError::InvalidArgument(format!(
            "staggered initiation needs t_int ({t1}) after t_p ({})",
            cfg.t_p
        )));
    }
    let early = early_centers(cfg.centers, cfg.case);
    let split = t1 - cfg.t_p;
    let first = Uniform::new_inclusive(1, split).expect("nonempty range");
    let second = Uniform::new_inclusive(split + 1, t1).expect("nonempty range");
    Ok((0..cfg.centers).map(|i| if i < early { first.sample(rng) } else { second.sample(rng) }).collect())
}

/// `C*`: centers started early enough to pass the plateau by the first interim.
pub fn early_centers(centers: usize, case: u8) -> usize {
    let c = centers as f64;
    let share = if case == 2 { 2.0 * c / 3.0 } else { c / 2.0 };
    share.round() as usize
}

fn stream_rng(seed: u64, replication: usize, slot: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((replication as u64) << 20) + slot as u64);
    rng
}

/// Full enrollment panel of one replication observed through `T`.
pub fn simulate_panel(cfg: &ScenarioConfig, replication: usize) -> Result<EnrollmentPanel> {
    cfg.validate()?;
    let u = draw_initiations(cfg, &mut stream_rng(cfg.seed, replication, 0))?;
    let centers = u
        .iter()
        .enumerate()
        .map(|(i, &u)| {
            let mut rng = stream_rng(cfg.seed, replication, i + 1);
            let path = draw_center_path(cfg, cfg.horizon - u + 1, &mut rng);
            CenterRecord { id: format!("center{:03}", i + 1), u, counts: path.counts }
        })
        .collect();
    EnrollmentPanel::new(centers, cfg.horizon)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub expectation: f64,
    pub lower95: f64,
    pub upper95: f64,
}

impl Prediction {
    pub fn covers(&self, observed: f64) -> bool {
        self.lower95 <= observed && observed <= self.upper95
    }
}

/// One replication evaluated at one interim time.
#[derive(Debug, Clone, PartialEq)]
pub struct RepOutcome {
    pub observed: u64,
    pub tpg: Option<Prediction>,
    pub pg: Option<Prediction>,
    /// Internal knots of the selected template and the fitted plateau point.
    pub tpg_knots: Option<usize>,
    pub tpg_t_p: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub covered: usize,
    pub coverage: f64,
    pub pct_bias: f64,
    pub se: f64,
}

impl Metrics {
    fn from_predictions(pairs: &[(Prediction, u64)]) -> Self {
        let n = pairs.len();
        let covered = pairs.iter().filter(|(p, obs)| p.covers(*obs as f64)).count();
        let rel: Vec<f64> = pairs
            .iter()
            .filter(|(_, obs)| *obs > 0)
            .map(|(p, obs)| (p.expectation - *obs as f64).abs() / *obs as f64)
            .collect();
        let pct_bias =
            if rel.is_empty() { f64::NAN } else { 100.0 * rel.iter().sum::<f64>() / rel.len() as f64 };
        let mean = pairs.iter().map(|(p, _)| p.expectation).sum::<f64>() / n as f64;
        let se = if n > 1 {
            (pairs.iter().map(|(p, _)| (p.expectation - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { covered, coverage: if n > 0 { covered as f64 / n as f64 } else { f64::NAN }, pct_bias, se }
    }
}

/// Aggregated results of one `(scenario, setting, case, C, t_int)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellReport {
    pub scenario: String,
    pub setting: u8,
    pub case: u8,
    pub centers: usize,
    pub t_int: usize,
    pub horizon: usize,
    /// Replications that entered the metrics.
    pub replications: usize,
    pub failures: usize,
    pub tpg: Metrics,
    pub pg: Option<Metrics>,
    pub outcomes: Vec<RepOutcome>,
}

impl CellReport {
    /// Replications in which BIC chose a template with an internal knot.
    pub fn knot_selections(&self) -> usize {
        self.outcomes.iter().filter(|o| o.tpg_knots.is_some_and(|k| k > 0)).count()
    }
}

pub const REPORT_HEADER: [&str; 14] = [
    "scenario", "setting", "case", "C", "t_int", "T", "reps", "failures", "cr_tpg", "bias_tpg", "se_tpg",
    "cr_pg", "bias_pg", "se_pg",
];

pub fn write_report<W: Write>(rows: &[CellReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(REPORT_HEADER)?;
    let fmt = |v: f64| format!("{v:.6}");
    for r in rows {
        let (cr_pg, bias_pg, se_pg) = match &r.pg {
            Some(m) => (fmt(m.coverage), fmt(m.pct_bias), fmt(m.se)),
            None => (String::new(), String::new(), String::new()),
        };
        w.write_record([
            r.scenario.clone(),
            r.setting.to_string(),
            r.case.to_string(),
            r.centers.to_string(),
            r.t_int.to_string(),
            r.horizon.to_string(),
            r.replications.to_string(),
            r.failures.to_string(),
            fmt(r.tpg.coverage),
            fmt(r.tpg.pct_bias),
            fmt(r.tpg.se),
            cr_pg,
            bias_pg,
            se_pg,
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn predict_tpg(panel: &EnrollmentPanel, horizon: usize) -> Result<(Prediction, usize, usize)> {
    let selection = select_model(panel, &CandidateSet::default())?;
    let knots = selection.best_template().knots;
    let fit = selection.best();
    let f = tpg_forecast(fit, panel, &[horizon])?;
    let p = f.points[0];
    Ok((Prediction { expectation: p.expectation, lower95: p.lower95, upper95: p.upper95 }, knots, fit.t_p()))
}

fn predict_pg(panel: &EnrollmentPanel, horizon: usize) -> Result<Prediction> {
    let summary = summarize(panel);
    let fit = pg_fit(&summary)?;
    let f = pg_forecast(&pg_posterior(&fit, &summary), panel.t_int(), &[horizon])?;
    let p = f.points[0];
    Ok(Prediction { expectation: p.expectation, lower95: p.lower95, upper95: p.upper95 })
}

fn run_replication(cfg: &ScenarioConfig, replication: usize, fit_both: bool) -> Result<Vec<RepOutcome>> {
    let full = simulate_panel(cfg, replication)?;
    let final_total = full.total_enrolled();
    cfg.t_int_list
        .iter()
        .map(|&t_int| {
            let panel = full.truncate(t_int)?;
            let observed = final_total - panel.total_enrolled();
            let tpg = predict_tpg(&panel, cfg.horizon).ok();
            let pg = if fit_both { predict_pg(&panel, cfg.horizon).ok() } else { None };
            Ok(RepOutcome {
                observed,
                tpg: tpg.map(|t| t.0),
                pg,
                tpg_knots: tpg.map(|t| t.1),
                tpg_t_p: tpg.map(|t| t.2),
            })
        })
        .collect()
}

/// Run `replications` replications of a scenario and report one row per
/// interim time. A replication whose fit fails is excluded from the metrics
/// and counted in `failures`.
pub fn run_cell(cfg: &ScenarioConfig, replications: usize, fit_both: bool) -> Result<Vec<CellReport>> {
    cfg.validate()?;
    if replications == 0 {
        return Err(AccrualError::InvalidArgument("replications must be at least 1".into()));
    }
    let per_rep: Vec<Vec<RepOutcome>> = (0..replications)
        .into_par_iter()
        .map(|r| run_replication(cfg, r, fit_both))
        .collect::<Result<_>>()?;

    Ok(cfg
        .t_int_list
        .iter()
        .enumerate()
        .map(|(j, &t_int)| {
            let outcomes: Vec<RepOutcome> = per_rep.iter().map(|reps| reps[j].clone()).collect();
            let ok: Vec<&RepOutcome> =
                outcomes.iter().filter(|o| o.tpg.is_some() && (!fit_both || o.pg.is_some())).collect();
            let tpg: Vec<(Prediction, u64)> = ok.iter().map(|o| (o.tpg.unwrap(), o.observed)).collect();
            let pg = fit_both.then(|| {
                let pairs: Vec<(Prediction, u64)> = ok.iter().map(|o| (o.pg.unwrap(), o.observed)).collect();
                Metrics::from_predictions(&pairs)
            });
            CellReport {
                scenario: cfg.name.clone(),
                setting: cfg.setting,
                case: cfg.case,
                centers: cfg.centers,
                t_int,
                horizon: cfg.horizon,
                replications: ok.len(),
                failures: replications - ok.len(),
                tpg: Metrics::from_predictions(&tpg),
                pg,
                outcomes,
            }
        })
        .collect())
}
