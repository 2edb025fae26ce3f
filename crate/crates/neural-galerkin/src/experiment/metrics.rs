//! Error metrics over a parameter trajectory: relative field error against a
//! reference solution and conservation error of sampled quantities, both
//! estimated on a dedicated test grid.

use nalgebra::DVector;
use rayon::prelude::*;
use thiserror::Error;

use crate::models::{
    estimate_quantity, ModelsError, Quantity, SampleSet,
};
use crate::params::{JetRequest, ParamVector, Parametrization, ParamsError};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Models(#[from] ModelsError),
    #[error("reference field vanishes on the test grid at step {0}; relative error undefined")]
    ZeroReference(usize),
    #[error("reference values and test grid disagree: {0} points vs {1} reference entries per component")]
    ShapeMismatch(usize, usize),
}

/// Per-step metric rows aligned with the stored trajectory times.
#[derive(Debug, Clone)]
pub struct MetricSeries {
    pub times: Vec<f64>,
    /// Relative field error at the test points.
    pub e_r: Vec<f64>,
    /// Conservation error per quantity: `|q̂(t_k) − q̂(t_0)|` with the
    /// test-grid estimator.
    pub e_c: Vec<Vec<f64>>,
    /// Raw test-grid quantity estimates.
    pub q_hat: Vec<Vec<f64>>,
    /// Embedding iterations per stored step (0 at step 0 and when disabled).
    pub embed_iters: Vec<usize>,
    /// Max-over-stages tangent residual per stored step (0 at step 0).
    pub lsq_residual: Vec<f64>,
}

impl MetricSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn max_e_c(&self, quantity: usize) -> f64 {
        self.e_c[quantity].iter().cloned().fold(0.0, f64::max)
    }

    pub fn final_e_r(&self) -> f64 {
        *self.e_r.last().expect("non-empty series")
    }

    pub fn max_e_r(&self) -> f64 {
        self.e_r.iter().cloned().fold(0.0, f64::max)
    }
}

/// Evaluate the parametrized field at every test point, component-major
/// (`out[c * n + i]`), matching the reference frame layout.
pub fn field_on_samples(
    net: &dyn Parametrization,
    theta: &ParamVector,
    samples: &SampleSet,
) -> Result<Vec<f64>, MetricsError> {
    let m = net.output_dim();
    let n = samples.len();
    let per_point: Vec<DVector<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let jet = net.eval_jet(theta, samples.point(i), JetRequest::value())?;
            Ok(jet.value)
        })
        .collect::<Result<_, ParamsError>>()?;
    let mut out = vec![0.0; m * n];
    for (i, v) in per_point.iter().enumerate() {
        for c in 0..m {
            out[c * n + i] = v[c];
        }
    }
    Ok(out)
}

/// Relative error `Σᵢ‖û(xᵢ) − u_ref(xᵢ)‖ / Σᵢ‖u_ref(xᵢ)‖` over the test
/// points, with per-point Euclidean norms across components. Both buffers
/// are component-major over the same point set.
pub fn relative_error(
    approx: &[f64],
    reference: &[f64],
    n_points: usize,
    step: usize,
) -> Result<f64, MetricsError> {
    if approx.len() != reference.len() || n_points == 0 || approx.len() % n_points != 0 {
        return Err(MetricsError::ShapeMismatch(n_points, reference.len()));
    }
    let m = approx.len() / n_points;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n_points {
        let mut diff_sq = 0.0;
        let mut ref_sq = 0.0;
        for c in 0..m {
            let a = approx[c * n_points + i];
            let r = reference[c * n_points + i];
            diff_sq += (a - r) * (a - r);
            ref_sq += r * r;
        }
        num += diff_sq.sqrt();
        den += ref_sq.sqrt();
    }
    if den == 0.0 {
        return Err(MetricsError::ZeroReference(step));
    }
    Ok(num / den)
}

/// Test-grid quantity estimates for every stored parameter state:
/// `values[quantity][step]`.
pub fn quantity_series(
    net: &dyn Parametrization,
    params: &[ParamVector],
    quantities: &[Quantity],
    test_samples: &SampleSet,
) -> Result<Vec<Vec<f64>>, MetricsError> {
    let mut values = vec![Vec::with_capacity(params.len()); quantities.len()];
    for theta in params {
        for (qi, q) in quantities.iter().enumerate() {
            values[qi].push(estimate_quantity(net, theta, &q.kernel, test_samples)?);
        }
    }
    Ok(values)
}

/// Conservation error series `|q̂(t_k) − q̂(t_0)|` from raw estimates.
pub fn conservation_error(q_hat: &[f64]) -> Vec<f64> {
    let q0 = q_hat.first().copied().unwrap_or(0.0);
    q_hat.iter().map(|&q| (q - q0).abs()).collect()
}
