//! BIC selection among spline templates.

use std::io::Write;

use rayon::prelude::*;

use crate::data::EnrollmentPanel;
use crate::error::{AccrualError, Result};
use crate::tpg::{tpg_fit, SplineTemplate, TpgFit};

/// `p ln(n) - 2 loglik`; lower is better.
pub fn bic(loglik: f64, p: usize, n_obs: usize) -> f64 {
    p as f64 * (n_obs as f64).ln() - 2.0 * loglik
}

/// Ordered list of templates to compare.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    pub templates: Vec<SplineTemplate>,
}

impl Default for CandidateSet {
    /// Quadratic and cubic splines with zero or one internal knot.
    fn default() -> Self {
        Self {
            templates: vec![
                SplineTemplate::new(2, 0),
                SplineTemplate::new(3, 0),
                SplineTemplate::new(2, 1),
                SplineTemplate::new(3, 1),
            ],
        }
    }
}

impl CandidateSet {
    pub fn single(template: SplineTemplate) -> Self {
        Self { templates: vec![template] }
    }
}

#[derive(Debug, Clone)]
pub struct CandidateOutcome {
    pub template: SplineTemplate,
    pub fit: std::result::Result<TpgFit, String>,
    pub bic: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub candidates: Vec<CandidateOutcome>,
    pub selected: usize,
}

impl Selection {
    pub fn best(&self) -> &TpgFit {
        self.candidates[self.selected].fit.as_ref().expect("selected candidate has a fit")
    }

    pub fn best_template(&self) -> SplineTemplate {
        self.candidates[self.selected].template
    }

    pub fn into_best(mut self) -> TpgFit {
        self.candidates.swap_remove(self.selected).fit.expect("selected candidate has a fit")
    }

    /// `degree,knots,t_p,alpha,loglik,p,bic,selected`, one row per template.
    /// Failed candidates leave the numeric fields empty.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["degree", "knots", "t_p", "alpha", "loglik", "p", "bic", "selected"])?;
        for (i, c) in self.candidates.iter().enumerate() {
            let p = c.template.num_params().to_string();
            let selected = if i == self.selected { "true" } else { "false" };
            let row = match &c.fit {
                Ok(fit) => [
                    c.template.degree.to_string(),
                    c.template.knots.to_string(),
                    fit.t_p().to_string(),
                    fit.alpha.to_string(),
                    fit.loglik.to_string(),
                    p,
                    c.bic.map(|b| b.to_string()).unwrap_or_default(),
                    selected.to_string(),
                ],
                Err(_) => [
                    c.template.degree.to_string(),
                    c.template.knots.to_string(),
                    String::new(),
                    String::new(),
                    String::new(),
                    p,
                    String::new(),
                    selected.to_string(),
                ],
            };
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fit every template and keep the lowest BIC, with `n = sum_i t_int_i`.
/// Ties go to fewer parameters, then lower degree.
pub fn select_model(panel: &EnrollmentPanel, candidates: &CandidateSet) -> Result<Selection> {
    if candidates.templates.is_empty() {
        return Err(AccrualError::InvalidArgument("no candidate templates".into()));
    }
    let n_obs = panel.observation_cells();
    let results: Vec<Result<TpgFit>> = candidates.templates.par_iter().map(|&t| tpg_fit(panel, t)).collect();

    let mut first_error = None;
    let mut outcomes = Vec::with_capacity(results.len());
    for (&template, result) in candidates.templates.iter().zip(results) {
        match result {
            Ok(fit) => {
                let score = bic(fit.loglik, template.num_params(), n_obs);
                outcomes.push(CandidateOutcome { template, fit: Ok(fit), bic: Some(score) });
            }
            Err(e) => {
                let message = e.to_string();
                first_error.get_or_insert(e);
                outcomes.push(CandidateOutcome { template, fit: Err(message), bic: None });
            }
        }
    }

    let selected = outcomes
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.bic.map(|b| (i, b, c.template)))
        .min_by(|a, b| {
            a.1.total_cmp(&b.1)
                .then(a.2.num_params().cmp(&b.2.num_params()))
                .then(a.2.degree.cmp(&b.2.degree))
        })
        .map(|(i, _, _)| i);

    match selected {
        Some(selected) => Ok(Selection { candidates: outcomes, selected }),
        None => Err(first_error.expect("every candidate failed")),
    }
}
