//! Evolution equations, conserved-quantity kernels, and sampled estimators.
//!
//! A [`PdeModel`] supplies the right-hand side `f(x, u)` evaluated through a
//! derivative jet, the periodic box it lives on, and (when the equation is
//! Hamiltonian with a factorizable gradient `∇h(u) = Q(u)·u`) the operators
//! needed by the weighted Galerkin system. Conserved quantities are sampled
//! against the uniform probability measure on the box:
//! `q̂(θ) = (1/n) Σ_s κ(u(θ, ·))(x_s)`.

mod burgers;
mod quantity;
mod sampling;
mod shallow_water;
mod wave;

pub use burgers::Burgers;
#[cfg(test)]
pub(crate) use burgers::periodized_gaussian;
pub use quantity::{KernelGrad, Quantity, QuantityKernel};
pub use sampling::SampleSet;
pub use shallow_water::ShallowWater;
pub use wave::Wave;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::params::{Jet, JetRequest, ParamVector, Parametrization, ParamsError};

#[derive(Debug, Error)]
pub enum ModelsError {
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error("non-finite field values at sample {index} (x = {x:?})")]
    NonFinite { index: usize, x: Vec<f64> },
    #[error("{0}")]
    Invalid(String),
}

/// Periodic box `[lo_j, hi_j)` per axis.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Domain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Domain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        assert!(lo.iter().zip(&hi).all(|(a, b)| a < b));
        Domain { lo, hi }
    }

    /// Symmetric box `[-half, half)^d`.
    pub fn symmetric(half: f64, dim: usize) -> Self {
        Domain::new(vec![-half; dim], vec![half; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lengths(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).collect()
    }

    /// Wrap a coordinate into `[lo_j, hi_j)` by periodicity.
    pub fn wrap(&self, axis: usize, x: f64) -> f64 {
        let len = self.hi[axis] - self.lo[axis];
        let mut y = (x - self.lo[axis]) % len;
        if y < 0.0 {
            y += len;
        }
        self.lo[axis] + y
    }
}

/// An evolution equation `∂_t u = f(x, u)` on a periodic box.
pub trait PdeModel: Send + Sync {
    fn name(&self) -> &'static str;
    fn spatial_dim(&self) -> usize;
    /// Number of field components `m`.
    fn field_dim(&self) -> usize;
    fn domain(&self) -> Domain;

    /// Highest spatial derivative order appearing in `f`.
    fn spatial_order(&self) -> u8;

    /// Right-hand side at one point, evaluated from a jet of the field.
    fn rhs(&self, x: &[f64], jet: &Jet) -> DVector<f64>;

    /// Hamiltonian structure with factorizable gradient, when available.
    fn hamiltonian(&self) -> Option<&dyn HamiltonianStructure> {
        None
    }

    /// The conserved quantities tracked in the benchmark for this equation.
    fn default_quantities(&self) -> Vec<Quantity>;

    /// Benchmark initial condition (periodized so it matches the box).
    fn initial(&self, x: &[f64]) -> DVector<f64>;
}

/// Hamiltonian form `∂_t u = J(u) δH/δu` with `δH/δu = ∇h(u) = Q(u)·u`.
pub trait HamiltonianStructure: Send + Sync {
    /// Pointwise symmetric factor `Q(u)`.
    fn q_matrix(&self, u: &DVector<f64>) -> DMatrix<f64>;

    /// Apply the skew operator: `(J(v) q)(x)` from the state jet `v` and the
    /// value/first-derivative data of the argument function `q` at `x`.
    fn j_apply(
        &self,
        state: &Jet,
        q_value: &DVector<f64>,
        q_du: &DMatrix<f64>,
    ) -> DVector<f64>;

    /// Hamiltonian density `h(u)`.
    fn density(&self, u: &DVector<f64>) -> f64;

    /// State gradient `∇h(u)`; factorizability means this equals `Q(u)·u`.
    fn density_grad(&self, u: &DVector<f64>) -> DVector<f64> {
        self.q_matrix(u) * u
    }

    /// The density as a sampled-quantity kernel (for `Ĥ` estimates).
    fn kernel(&self) -> QuantityKernel;
}

/// Sampled quantity estimate `q̂(θ) = (1/n) Σ_s κ(x_s)` against the uniform
/// probability measure on the box.
pub fn estimate_quantity(
    net: &dyn Parametrization,
    theta: &ParamVector,
    kernel: &QuantityKernel,
    samples: &SampleSet,
) -> Result<f64, ModelsError> {
    let req = JetRequest::spatial(kernel.spatial_order());
    let sum = sum_over_samples(samples, |x| {
        let jet = net.eval_jet(theta, x, req)?;
        Ok(kernel.value(&jet))
    })?;
    Ok(sum / samples.len() as f64)
}

/// Gradient of [`estimate_quantity`] w.r.t. θ, by the chain rule through the
/// jet: `∇_θ q̂ = (1/n) Σ_s [(∂κ/∂u)ᵀ ∇_θu + Σ_j (∂κ/∂(∂_j u))ᵀ ∇_θ ∂_j u]`.
pub fn quantity_param_grad(
    net: &dyn Parametrization,
    theta: &ParamVector,
    kernel: &QuantityKernel,
    samples: &SampleSet,
) -> Result<DVector<f64>, ModelsError> {
    let p = net.param_count();
    let mut req = JetRequest::spatial(kernel.spatial_order()).with_param_grad();
    if kernel.spatial_order() >= 1 {
        req = req.with_param_grad_du();
    }
    let mut grad = DVector::zeros(p);
    for (index, x) in samples.iter().enumerate() {
        let jet = net.eval_jet(theta, x, req)?;
        if !jet.is_finite() {
            return Err(ModelsError::NonFinite { index, x: x.to_vec() });
        }
        let kg = kernel.grad(&jet);
        grad.gemv_tr(1.0, jet.grad_theta(), &kg.wrt_u, 1.0);
        if let Some(wrt_du) = &kg.wrt_du {
            for j in 0..net.input_dim() {
                grad.gemv_tr(1.0, &jet.grad_theta_du()[j], &wrt_du.column(j).into_owned(), 1.0);
            }
        }
    }
    Ok(grad / samples.len() as f64)
}

/// Deterministic chunked reduction: per-chunk partial sums are combined in
/// chunk order, so results are identical for any number of worker threads.
fn sum_over_samples<F>(samples: &SampleSet, f: F) -> Result<f64, ModelsError>
where
    F: Fn(&[f64]) -> Result<f64, ParamsError> + Sync,
{
    use rayon::prelude::*;
    const CHUNK: usize = 1024;
    let d = samples.dim();
    let partials: Vec<Result<f64, ModelsError>> = samples
        .coords()
        .par_chunks(CHUNK * d)
        .enumerate()
        .map(|(ci, chunk)| {
            let mut acc = 0.0;
            for (i, x) in chunk.chunks_exact(d).enumerate() {
                let v = f(x)?;
                if !v.is_finite() {
                    return Err(ModelsError::NonFinite {
                        index: ci * CHUNK + i,
                        x: x.to_vec(),
                    });
                }
                acc += v;
            }
            Ok(acc)
        })
        .collect();
    let mut total = 0.0;
    for p in partials {
        total += p?;
    }
    Ok(total)
}
