//! Recruitment forecasting for multicenter studies with Poisson-Gamma models.
//!
//! The standard model ([`pg`]) gives every center a constant enrollment rate
//! drawn from a common Gamma prior. The time-dependent model ([`tpg`]) lets the
//! prior mean follow a B-spline ([`spline`]) until an unknown plateau point,
//! after which rates are constant. Candidate spline families are compared by
//! BIC ([`selection`]) and [`sim`] reproduces the simulation study comparing
//! both models.

pub mod data;
pub mod error;
pub mod forecast;
pub mod optim;
pub mod pg;
pub mod selection;
pub mod sim;
pub mod special;
pub mod spline;
pub mod tpg;

pub use data::{
    ingest_csv, ingest_reader, summarize, write_csv, CenterRecord, EnrollmentPanel, PanelSummary,
};
pub use error::{AccrualError, Result};
pub use forecast::{time_to_target, Forecast, ForecastPoint, TimeToTarget, Z_95};
pub use pg::{pg_fit, pg_forecast, pg_loglik, pg_posterior, PgFit, PgPosterior};
pub use selection::{bic, select_model, CandidateOutcome, CandidateSet, Selection};
pub use sim::{run_cell, simulate_panel, CellReport, ScenarioConfig};
pub use spline::{MeanFunction, SplineSpec};
pub use tpg::{fit_at_plateau, tpg_fit, tpg_forecast, tpg_loglik, SplineTemplate, TpgFit};
