//! Forecasts of additional enrollments and their inversion into time-to-target.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{AccrualError, Result};

/// Two-sided 95% standard normal quantile.
pub const Z_95: f64 = 1.959964;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastPoint {
    /// Absolute time `T > t_int`.
    pub t: usize,
    pub expectation: f64,
    pub variance: f64,
    pub lower95: f64,
    pub upper95: f64,
}

impl ForecastPoint {
    /// Builds the point from the moments of the forecast rate `Lambda^a(T)`.
    /// The count variance adds the Poisson term `E[Lambda^a]`.
    pub fn from_rate_moments(t: usize, rate_mean: f64, rate_var: f64) -> Self {
        let expectation = rate_mean;
        let variance = rate_var + rate_mean;
        let half = Z_95 * variance.sqrt();
        Self { t, expectation, variance, lower95: (expectation - half).max(0.0), upper95: expectation + half }
    }
}

/// Distribution summary of `N^a(T)` over a grid of horizons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub t_int: usize,
    pub points: Vec<ForecastPoint>,
}

impl Forecast {
    pub fn at(&self, t: usize) -> Option<&ForecastPoint> {
        self.points.iter().find(|p| p.t == t)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["T", "expectation", "variance", "lower95", "upper95"])?;
        for p in &self.points {
            w.write_record([
                p.t.to_string(),
                p.expectation.to_string(),
                p.variance.to_string(),
                p.lower95.to_string(),
                p.upper95.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Validates a horizon grid: non-empty and strictly after the interim time.
pub(crate) fn check_grid(t_int: usize, grid: &[usize]) -> Result<()> {
    if grid.is_empty() {
        return Err(AccrualError::InvalidArgument("empty forecast grid".into()));
    }
    if let Some(&bad) = grid.iter().find(|&&t| t <= t_int) {
        return Err(AccrualError::InvalidArgument(format!(
            "forecast horizon T = {bad} must exceed t_int = {t_int}"
        )));
    }
    Ok(())
}

/// Time at which a target is reached; `None` when the grid is exhausted first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeToTarget {
    pub target: u64,
    pub point: Option<usize>,
    pub lower: Option<usize>,
    pub upper: Option<usize>,
}

/// Invert the forecast curves. The optimistic (upper) curve crosses first and
/// gives the lower time bound; the pessimistic (lower) curve gives the upper.
pub fn time_to_target(forecast: &Forecast, current_total: u64, target: u64) -> TimeToTarget {
    let current = current_total as f64;
    let needed = target as f64;
    let first = |curve: fn(&ForecastPoint) -> f64| {
        forecast.points.iter().find(|p| current + curve(p) >= needed).map(|p| p.t)
    };
    TimeToTarget {
        target,
        point: first(|p| p.expectation),
        lower: first(|p| p.upper95),
        upper: first(|p| p.lower95),
    }
}
