//! Post-step embedding onto the sampled conserved-quantity manifold.
//!
//! After a time step produces a tentative parameter θ̃, the embedding finds
//! the closest point (in the Euclidean parameter metric) on the manifold
//! `{θ : q̂ᵢ(θ) = targetᵢ}`:
//!
//! `min ½‖η − θ̃‖²  s.t.  c(η) = 0,  cᵢ(η) = q̂ᵢ(η) − targetᵢ`.
//!
//! The optimality system is solved by a simplified Newton iteration with the
//! constraint Jacobian `C′ = ∂c/∂θ (θ̃)` frozen at the tentative point:
//! every update stays in the range of `C′ᵀ`, so the correction never drifts
//! along directions the constraints cannot see.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::models::{
    estimate_quantity, quantity_param_grad, ModelsError, Quantity, SampleSet,
};
use crate::params::{ParamVector, Parametrization, ParamsError};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Models(#[from] ModelsError),
    #[error("embedding settings invalid: tol must be positive and kmax nonzero")]
    InvalidSettings,
    #[error("constraint gradients are linearly dependent at the tentative point")]
    SingularConstraintGram,
    #[error(
        "embedding did not converge: residual {residual:.3e} after {iterations} iterations"
    )]
    Nonconvergence {
        iterations: usize,
        residual: f64,
        /// Best iterate found, for callers that want to continue anyway.
        theta: ParamVector,
    },
}

/// Convergence controls for the embedding iteration.
#[derive(Debug, Clone, Copy)]
pub struct EmbedSettings {
    /// Stop once `‖c(θ)‖∞` falls at or below this value.
    pub tol: f64,
    /// Maximum number of Newton updates.
    pub kmax: usize,
}

impl Default for EmbedSettings {
    fn default() -> Self {
        Self { tol: 1e-12, kmax: 50 }
    }
}

/// Result of a successful embedding.
pub struct EmbedReport {
    pub theta: ParamVector,
    /// Newton iterations consumed; an already-feasible input counts as 1.
    pub iterations: usize,
    /// `‖c(θ)‖∞` at the returned parameter.
    pub residual: f64,
}

/// Freeze conservation targets at the current parameter: each returned
/// quantity carries `target = q̂(θ)`.
pub fn freeze_targets(
    net: &dyn Parametrization,
    theta: &ParamVector,
    quantities: &[Quantity],
    samples: &SampleSet,
) -> Result<Vec<Quantity>, EmbedError> {
    quantities
        .iter()
        .map(|q| {
            let value = estimate_quantity(net, theta, &q.kernel, samples)?;
            Ok(Quantity::with_target(q.kernel.clone(), value))
        })
        .collect()
}

/// Constraint residual `c(θ)` with `cᵢ = q̂ᵢ(θ) − targetᵢ`.
pub fn constraint_residual(
    net: &dyn Parametrization,
    theta: &ParamVector,
    quantities: &[Quantity],
    samples: &SampleSet,
) -> Result<DVector<f64>, EmbedError> {
    let mut c = DVector::zeros(quantities.len());
    for (i, q) in quantities.iter().enumerate() {
        c[i] = estimate_quantity(net, theta, &q.kernel, samples)? - q.target();
    }
    Ok(c)
}

/// Constraint Jacobian: row `i` is `∇_θ q̂ᵢ(θ)ᵀ`.
pub fn constraint_jacobian(
    net: &dyn Parametrization,
    theta: &ParamVector,
    quantities: &[Quantity],
    samples: &SampleSet,
) -> Result<DMatrix<f64>, EmbedError> {
    let p = net.param_count();
    let mut jac = DMatrix::zeros(quantities.len(), p);
    for (i, q) in quantities.iter().enumerate() {
        let grad = quantity_param_grad(net, theta, &q.kernel, samples)?;
        jac.row_mut(i).copy_from(&grad.transpose());
    }
    Ok(jac)
}

/// Conserved-quantity gradients as columns, the constraint matrix for the
/// in-step least-squares solve.
pub fn constraint_gradients(
    net: &dyn Parametrization,
    theta: &ParamVector,
    quantities: &[Quantity],
    samples: &SampleSet,
) -> Result<DMatrix<f64>, EmbedError> {
    Ok(constraint_jacobian(net, theta, quantities, samples)?.transpose())
}

/// Project the tentative parameter θ̃ back onto the constraint manifold.
///
/// Quantities must have frozen targets. On nonconvergence the best iterate
/// seen is reported inside the error so the caller can decide whether to
/// abort or continue.
pub fn embed(
    net: &dyn Parametrization,
    theta_tilde: &ParamVector,
    quantities: &[Quantity],
    samples: &SampleSet,
    settings: EmbedSettings,
) -> Result<EmbedReport, EmbedError> {
    if !(settings.tol > 0.0) || settings.kmax == 0 {
        return Err(EmbedError::InvalidSettings);
    }
    let c0 = constraint_residual(net, theta_tilde, quantities, samples)?;
    if c0.amax() <= settings.tol || quantities.is_empty() {
        return Ok(EmbedReport {
            theta: theta_tilde.clone(),
            iterations: 1,
            residual: if quantities.is_empty() { 0.0 } else { c0.amax() },
        });
    }

    // Frozen Jacobian and its Gram factorization.
    let jac = constraint_jacobian(net, theta_tilde, quantities, samples)?;
    let gram = &jac * jac.transpose();
    let chol = nalgebra::Cholesky::new(gram).ok_or(EmbedError::SingularConstraintGram)?;

    let mut lambda = DVector::zeros(quantities.len());
    let mut theta = theta_tilde.clone();
    let mut c = c0;
    let mut best = (c.amax(), theta.clone(), 0usize);
    let mut history = vec![best.0];
    for k in 1..=settings.kmax {
        let delta_lambda = -chol.solve(&c);
        lambda += delta_lambda;
        theta = theta_tilde + jac.tr_mul(&lambda);
        c = constraint_residual(net, &theta, quantities, samples)?;
        let norm = c.amax();
        if !norm.is_finite() {
            let (residual, theta, _) = best;
            return Err(EmbedError::Nonconvergence { iterations: k, residual, theta });
        }
        if norm <= settings.tol {
            return Ok(EmbedReport { theta, iterations: k, residual: norm });
        }
        if norm < best.0 {
            best = (norm, theta.clone(), k);
        }
        history.push(norm);
        // Stall guard: a healthy Newton contraction at least halves the
        // residual every few iterations; bail out early otherwise.
        if k >= 5 && history[k] > 0.5 * history[k - 5] {
            let (residual, theta, _) = best;
            return Err(EmbedError::Nonconvergence { iterations: k, residual, theta });
        }
    }
    let (residual, theta, _) = best;
    Err(EmbedError::Nonconvergence { iterations: settings.kmax, residual, theta })
}
