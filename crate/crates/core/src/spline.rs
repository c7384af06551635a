//! Clamped B-spline bases on `[1, t_p]` and the plateau-continued log-mean.
//!
//! The knot vector repeats each boundary (`1` and `t_p`) `degree + 1` times,
//! so the last basis function equals one at `t_p` and the spline meets the
//! plateau value `eta_d` continuously.

use serde::{Deserialize, Serialize};

use crate::error::{AccrualError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SplineSpecRaw")]
pub struct SplineSpec {
    degree: usize,
    internal_knots: Vec<f64>,
    t_p: usize,
}

#[derive(Deserialize)]
struct SplineSpecRaw {
    degree: usize,
    internal_knots: Vec<f64>,
    t_p: usize,
}

impl TryFrom<SplineSpecRaw> for SplineSpec {
    type Error = AccrualError;

    fn try_from(raw: SplineSpecRaw) -> Result<Self> {
        SplineSpec::new(raw.degree, raw.internal_knots, raw.t_p)
    }
}

impl SplineSpec {
    pub fn new(degree: usize, internal_knots: Vec<f64>, t_p: usize) -> Result<Self> {
        if !(2..=3).contains(&degree) {
            return Err(AccrualError::InvalidArgument(format!("spline degree must be 2 or 3, got {degree}")));
        }
        if t_p == 0 {
            return Err(AccrualError::InvalidArgument("plateau point must be >= 1".into()));
        }
        let upper = t_p as f64;
        let mut prev = 1.0;
        for &k in &internal_knots {
            if !(k > prev && k < upper) {
                return Err(AccrualError::InvalidArgument(format!(
                    "internal knots must be strictly increasing inside (1, {t_p}), got {internal_knots:?}"
                )));
            }
            prev = k;
        }
        Ok(Self { degree, internal_knots, t_p })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn internal_knots(&self) -> &[f64] {
        &self.internal_knots
    }

    pub fn t_p(&self) -> usize {
        self.t_p
    }

    /// Number of basis functions.
    pub fn dim(&self) -> usize {
        self.degree + 1 + self.internal_knots.len()
    }

    pub fn knot_vector(&self) -> Vec<f64> {
        let p = self.degree + 1;
        let mut knots = Vec::with_capacity(2 * p + self.internal_knots.len());
        knots.extend(std::iter::repeat_n(1.0, p));
        knots.extend_from_slice(&self.internal_knots);
        knots.extend(std::iter::repeat_n(self.t_p as f64, p));
        knots
    }

    /// Basis values `(gamma_1(t), ..., gamma_d(t))` for `t` in `[1, t_p]`.
    pub fn basis_eval(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.basis_into(t, &mut out)?;
        Ok(out)
    }

    /// Like [`basis_eval`](Self::basis_eval), writing into `out` (length `dim()`).
    pub fn basis_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let upper = self.t_p as f64;
        if !(1.0..=upper).contains(&t) {
            return Err(AccrualError::InvalidArgument(format!(
                "basis evaluated at t = {t} outside [1, {}]",
                self.t_p
            )));
        }
        debug_assert_eq!(out.len(), self.dim());
        out.fill(0.0);
        if self.t_p == 1 {
            // Degenerate interval: only the plateau coefficient is active.
            out[self.dim() - 1] = 1.0;
            return Ok(());
        }

        let knots = self.knot_vector();
        let p = self.degree;
        let n = self.dim() - 1;
        let span = if t >= upper {
            n
        } else {
            // last index i with knots[i] <= t, restricted to [p, n]
            let idx = knots.partition_point(|&k| k <= t) - 1;
            idx.clamp(p, n)
        };

        // Cox-de Boor triangular table over the p + 1 nonzero functions.
        let mut vals = [0.0f64; 4];
        let mut left = [0.0f64; 4];
        let mut right = [0.0f64; 4];
        vals[0] = 1.0;
        for j in 1..=p {
            left[j] = t - knots[span + 1 - j];
            right[j] = knots[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = vals[r] / (right[r + 1] + left[j - r]);
                vals[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            vals[j] = saved;
        }
        out[span - p..=span].copy_from_slice(&vals[..=p]);
        Ok(())
    }
}

/// `m(phi, t) = exp(sum_k eta_k gamma_k(t))` before the plateau, `exp(eta_d)` from it on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeanFunctionRaw")]
pub struct MeanFunction {
    #[serde(flatten)]
    spec: SplineSpec,
    eta: Vec<f64>,
}

#[derive(Deserialize)]
struct MeanFunctionRaw {
    degree: usize,
    internal_knots: Vec<f64>,
    t_p: usize,
    eta: Vec<f64>,
}

impl TryFrom<MeanFunctionRaw> for MeanFunction {
    type Error = AccrualError;

    fn try_from(raw: MeanFunctionRaw) -> Result<Self> {
        let spec = SplineSpec::new(raw.degree, raw.internal_knots, raw.t_p)?;
        MeanFunction::new(spec, raw.eta)
    }
}

impl MeanFunction {
    pub fn new(spec: SplineSpec, eta: Vec<f64>) -> Result<Self> {
        if eta.len() != spec.dim() {
            return Err(AccrualError::InvalidArgument(format!(
                "expected {} spline coefficients, got {}",
                spec.dim(),
                eta.len()
            )));
        }
        if eta.iter().any(|e| !e.is_finite()) {
            return Err(AccrualError::InvalidArgument("spline coefficients must be finite".into()));
        }
        Ok(Self { spec, eta })
    }

    /// Constant mean `m` (`t_p = 1`), the standard model's footing.
    pub fn constant(degree: usize, m: f64) -> Result<Self> {
        let spec = SplineSpec::new(degree, Vec::new(), 1)?;
        let mut eta = vec![0.0; spec.dim()];
        eta[spec.dim() - 1] = m.ln();
        Self::new(spec, eta)
    }

    pub fn spec(&self) -> &SplineSpec {
        &self.spec
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn t_p(&self) -> usize {
        self.spec.t_p
    }

    /// Plateau mean `exp(eta_d)`.
    pub fn plateau_mean(&self) -> f64 {
        self.eta[self.eta.len() - 1].exp()
    }

    /// Log-mean at real-valued center-local time `t >= 1`.
    pub fn log_mean_at(&self, t: f64) -> f64 {
        if t >= self.spec.t_p as f64 {
            return self.eta[self.eta.len() - 1];
        }
        let mut basis = vec![0.0; self.spec.dim()];
        self.spec.basis_into(t.max(1.0), &mut basis).expect("t lies inside [1, t_p)");
        basis.iter().zip(&self.eta).map(|(g, e)| g * e).sum()
    }

    pub fn mean_at(&self, t: f64) -> f64 {
        self.log_mean_at(t).exp()
    }

    /// `m(phi, t)` at integer center-local time `t >= 1`.
    pub fn mean_eval(&self, t: usize) -> f64 {
        self.mean_at(t as f64)
    }

    /// `beta(t, phi) = alpha / m(phi, t)`.
    pub fn beta_eval(&self, alpha: f64, t: usize) -> f64 {
        alpha / self.mean_eval(t)
    }
}
