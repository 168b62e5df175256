//! Hybrid model definition: regime-indexed drift and diffusion.
//!
//! The diffusion matrix is stored *unscaled*; the integrator applies the
//! `sqrt(δ)` noise scaling at simulation time, so one model serves a whole
//! scaling schedule.

use std::sync::Arc;

use crate::error::Error;
use crate::Result;

/// Drift or per-capita drift: writes `f(x, regime)` into `out` (`dim` entries).
pub type DriftFn = Arc<dyn Fn(&[f64], usize, &mut [f64]) + Send + Sync>;
/// Diffusion or per-capita diffusion: writes the row-major `dim × noise_dim`
/// matrix `σ(x, regime)` into `out`.
pub type DiffusionFn = Arc<dyn Fn(&[f64], usize, &mut [f64]) + Send + Sync>;

#[derive(Clone)]
enum Form {
    /// Coefficients given directly.
    Plain { drift: DriftFn, diffusion: DiffusionFn },
    /// Coefficients given per capita: `f_k = x_k g_k`, `σ_kj = x_k s_kj`.
    /// Every coordinate is positivity-flagged and is integrated in log
    /// coordinates, which keeps it strictly positive for any step size.
    Positive { rate_drift: DriftFn, rate_diffusion: DiffusionFn },
}

/// A regime-indexed SDE specification `(f, σ)` on `R^dim`.
///
/// Cloning copies the description, not the closures: coefficients are held
/// by `Arc`, so clones are cheap and share them.
#[derive(Clone)]
pub struct HybridModel {
    dim: usize,
    num_regimes: usize,
    noise_dim: usize,
    form: Form,
}

impl HybridModel {
    /// Model with coefficients given directly. No positivity is enforced.
    pub fn new(
        dim: usize,
        num_regimes: usize,
        noise_dim: usize,
        drift: DriftFn,
        diffusion: DiffusionFn,
    ) -> Result<Self> {
        Self::validate_dims(dim, num_regimes, noise_dim)?;
        Ok(Self { dim, num_regimes, noise_dim, form: Form::Plain { drift, diffusion } })
    }

    /// Model whose coefficients are multiplicative in every coordinate,
    /// specified through their per-capita parts: `f_k(x,i) = x_k g_k(x,i)`
    /// and `σ_kj(x,i) = x_k s_kj(x,i)`. Such coordinates stay positive
    /// exactly under the log-coordinate integrator.
    pub fn positive(
        dim: usize,
        num_regimes: usize,
        noise_dim: usize,
        rate_drift: DriftFn,
        rate_diffusion: DiffusionFn,
    ) -> Result<Self> {
        Self::validate_dims(dim, num_regimes, noise_dim)?;
        Ok(Self { dim, num_regimes, noise_dim, form: Form::Positive { rate_drift, rate_diffusion } })
    }

    fn validate_dims(dim: usize, num_regimes: usize, noise_dim: usize) -> Result<()> {
        if dim == 0 || num_regimes == 0 || noise_dim == 0 {
            return Err(Error::InvalidModel(format!(
                "dimensions must be positive (dim {dim}, regimes {num_regimes}, noise {noise_dim})"
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_regimes(&self) -> usize {
        self.num_regimes
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    /// Whether every coordinate is positivity-flagged (multiplicative form).
    pub fn is_positive(&self) -> bool {
        matches!(self.form, Form::Positive { .. })
    }

    /// Drift `f(x, regime)`.
    pub fn drift(&self, x: &[f64], regime: usize, out: &mut [f64]) {
        match &self.form {
            Form::Plain { drift, .. } => drift(x, regime, out),
            Form::Positive { rate_drift, .. } => {
                rate_drift(x, regime, out);
                for (o, xi) in out.iter_mut().zip(x) {
                    *o *= xi;
                }
            }
        }
    }

    /// Unscaled diffusion matrix `σ(x, regime)`, row-major `dim × noise_dim`.
    pub fn diffusion(&self, x: &[f64], regime: usize, out: &mut [f64]) {
        match &self.form {
            Form::Plain { diffusion, .. } => diffusion(x, regime, out),
            Form::Positive { rate_diffusion, .. } => {
                rate_diffusion(x, regime, out);
                for k in 0..self.dim {
                    for j in 0..self.noise_dim {
                        out[k * self.noise_dim + j] *= x[k];
                    }
                }
            }
        }
    }

    /// Per-capita drift `g(x, regime)` with `f_k = x_k g_k`. Positive models
    /// only.
    pub(crate) fn rate_drift(&self, x: &[f64], regime: usize, out: &mut [f64]) {
        match &self.form {
            Form::Positive { rate_drift, .. } => rate_drift(x, regime, out),
            Form::Plain { .. } => unreachable!("rate form requested from a plain model"),
        }
    }

    /// Per-capita diffusion `s(x, regime)` with `σ_kj = x_k s_kj`. Positive
    /// models only.
    pub(crate) fn rate_diffusion(&self, x: &[f64], regime: usize, out: &mut [f64]) {
        match &self.form {
            Form::Positive { rate_diffusion, .. } => rate_diffusion(x, regime, out),
            Form::Plain { .. } => unreachable!("rate form requested from a plain model"),
        }
    }
}

impl std::fmt::Debug for HybridModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HybridModel")
            .field("dim", &self.dim)
            .field("num_regimes", &self.num_regimes)
            .field("noise_dim", &self.noise_dim)
            .field("positive", &self.is_positive())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positive_form_multiplies_coordinates() {
        // g = (2, -1), s = diag(3, 5) per capita.
        let m = HybridModel::positive(
            2,
            1,
            2,
            Arc::new(|_x, _i, out| {
                out[0] = 2.0;
                out[1] = -1.0;
            }),
            Arc::new(|_x, _i, out| {
                out.fill(0.0);
                out[0] = 3.0;
                out[3] = 5.0;
            }),
        )
        .unwrap();
        let x = [0.5, 4.0];
        let mut f = [0.0; 2];
        m.drift(&x, 0, &mut f);
        assert_eq!(f, [1.0, -4.0]);
        let mut s = [0.0; 4];
        m.diffusion(&x, 0, &mut s);
        assert_eq!(s, [1.5, 0.0, 0.0, 20.0]);
    }

    #[test]
    fn rejects_zero_dimensions() {
        let r = HybridModel::new(
            0,
            1,
            1,
            Arc::new(|_, _, _| {}),
            Arc::new(|_, _, _| {}),
        );
        assert!(matches!(r, Err(Error::InvalidModel(_))));
    }
}
