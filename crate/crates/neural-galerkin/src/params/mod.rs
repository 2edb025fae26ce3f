//! Nonlinear parametrizations `u(θ, x)` of spatial fields and their
//! derivative jets.
//!
//! Everything downstream (Galerkin projection, constraint Jacobians,
//! Hamiltonian-weighted systems) consumes a [`Jet`]: the field value together
//! with spatial derivatives up to second order, the parameter gradient
//! `∇_θ u`, and the parameter gradient of first spatial derivatives. All
//! derivatives are propagated analytically layer by layer, never by finite
//! differences, so second derivatives are exact to machine precision.

mod analytic;
mod mlp;

pub use analytic::{Feature, LinearFeatures, SeparableSine};
pub use mlp::MlpNet;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Flat parameter vector. Layer weights/biases map into it via [`ParamLayout`].
pub type ParamVector = DVector<f64>;

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("invalid jet request: {0}")]
    InvalidRequest(String),
}

/// Activation applied on hidden layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// `σ(z) = sin(z)`; smooth, periodic-friendly, derivatives of all orders.
    Sin,
    /// No nonlinearity; turns the network into a linear map per layer.
    Identity,
}

/// First layer that makes the network exactly periodic on a box.
///
/// Inputs are embedded through the fixed feature map
/// `γ(x) = (sin(2πx_j/L_j), cos(2πx_j/L_j))_j` before the first trainable
/// affine map, so `u(θ, x + L_j e_j) = u(θ, x)` holds identically for every
/// parameter value.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PeriodicSpec {
    /// Period per spatial axis (the box edge lengths).
    pub periods: Vec<f64>,
    /// Output width of the layer.
    pub width: usize,
}

/// Shape of a feed-forward parametrization: an optional periodic input layer,
/// sinusoidal (or identity) hidden layers, and a linear output layer.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub output_dim: usize,
    /// Periodic embedding layer; `None` means the first hidden layer reads
    /// the raw coordinates.
    pub periodic: Option<PeriodicSpec>,
    /// Widths of the hidden layers after the periodic layer.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Whether the linear output layer carries a bias. Must be `false` for
    /// the separable (basis ⊗ coefficient) view to exist.
    pub output_bias: bool,
}

impl Architecture {
    pub fn validate(&self) -> Result<(), ParamsError> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(ParamsError::InvalidArchitecture(
                "input_dim and output_dim must be positive".into(),
            ));
        }
        if let Some(p) = &self.periodic {
            if p.periods.len() != self.input_dim {
                return Err(ParamsError::InvalidArchitecture(format!(
                    "periodic layer has {} periods for input_dim {}",
                    p.periods.len(),
                    self.input_dim
                )));
            }
            if p.width == 0 || p.periods.iter().any(|l| !(*l > 0.0)) {
                return Err(ParamsError::InvalidArchitecture(
                    "periodic layer needs positive width and periods".into(),
                ));
            }
        }
        if self.hidden.iter().any(|w| *w == 0) {
            return Err(ParamsError::InvalidArchitecture(
                "hidden widths must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Where one layer's weights and bias live inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    /// Offset of the row-major `rows × cols` weight block.
    pub weight_offset: usize,
    pub rows: usize,
    pub cols: usize,
    /// Offset of the length-`rows` bias, if the layer has one.
    pub bias_offset: Option<usize>,
}

impl LayerLayout {
    pub fn weight_index(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.rows && col < self.cols);
        self.weight_offset + row * self.cols + col
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols + if self.bias_offset.is_some() { self.rows } else { 0 }
    }
}

/// Map from (layer, weight/bias) to index ranges of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub layers: Vec<LayerLayout>,
    pub total: usize,
}

/// Which jet fields to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JetRequest {
    /// Spatial derivative order: 0, 1 or 2.
    pub order: u8,
    /// Compute `∇_θ u` (`m × p`).
    pub param_grad: bool,
    /// Compute `∇_θ ∂u/∂x_j` for every axis (requires `order ≥ 1`).
    pub param_grad_du: bool,
}

impl JetRequest {
    pub const fn value() -> Self {
        JetRequest { order: 0, param_grad: false, param_grad_du: false }
    }

    pub const fn spatial(order: u8) -> Self {
        JetRequest { order, param_grad: false, param_grad_du: false }
    }

    pub const fn with_param_grad(mut self) -> Self {
        self.param_grad = true;
        self
    }

    pub const fn with_param_grad_du(mut self) -> Self {
        self.param_grad_du = true;
        self
    }

    pub fn validate(&self) -> Result<(), ParamsError> {
        if self.order > 2 {
            return Err(ParamsError::InvalidRequest(format!(
                "spatial order {} not supported (max 2)",
                self.order
            )));
        }
        if self.param_grad_du && self.order == 0 {
            return Err(ParamsError::InvalidRequest(
                "param_grad_du requires order >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Value and derivatives of `u(θ, ·)` at one spatial point.
///
/// Field shapes for output dimension `m`, spatial dimension `d`, parameter
/// count `p`:
/// * `value`: `m`
/// * `du`: `m × d`, entry `(i, j) = ∂u_i/∂x_j`
/// * `d2u`: one `d × d` Hessian per output component
/// * `grad_theta`: `m × p`, entry `(i, k) = ∂u_i/∂θ_k`
/// * `grad_theta_du`: per axis `j` an `m × p` matrix `∂(∂u_i/∂x_j)/∂θ_k`
#[derive(Debug, Clone)]
pub struct Jet {
    pub value: DVector<f64>,
    pub du: Option<DMatrix<f64>>,
    pub d2u: Option<Vec<DMatrix<f64>>>,
    pub grad_theta: Option<DMatrix<f64>>,
    pub grad_theta_du: Option<Vec<DMatrix<f64>>>,
}

impl Jet {
    pub fn du(&self) -> &DMatrix<f64> {
        self.du.as_ref().expect("jet was computed without spatial derivatives")
    }

    pub fn d2u(&self) -> &[DMatrix<f64>] {
        self.d2u.as_ref().expect("jet was computed without second derivatives")
    }

    pub fn grad_theta(&self) -> &DMatrix<f64> {
        self.grad_theta.as_ref().expect("jet was computed without parameter gradients")
    }

    pub fn grad_theta_du(&self) -> &[DMatrix<f64>] {
        self.grad_theta_du
            .as_ref()
            .expect("jet was computed without parameter gradients of spatial derivatives")
    }

    /// `Σ_j ∂²u_i/∂x_j²` for output component `i`.
    pub fn laplacian(&self, i: usize) -> f64 {
        self.d2u()[i].trace()
    }

    pub fn is_finite(&self) -> bool {
        let finite_mat = |m: &DMatrix<f64>| m.iter().all(|v| v.is_finite());
        self.value.iter().all(|v| v.is_finite())
            && self.du.as_ref().is_none_or(|m| finite_mat(m))
            && self.d2u.as_ref().is_none_or(|hs| hs.iter().all(finite_mat))
            && self.grad_theta.as_ref().is_none_or(|m| finite_mat(m))
            && self.grad_theta_du.as_ref().is_none_or(|gs| gs.iter().all(finite_mat))
    }
}

/// A differentiable field parametrization `u(θ, x)`.
pub trait Parametrization: Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn param_count(&self) -> usize;

    /// Evaluate the requested jet at one point. Derivatives are analytic.
    fn eval_jet(
        &self,
        theta: &ParamVector,
        x: &[f64],
        request: JetRequest,
    ) -> Result<Jet, ParamsError>;

    /// The separable view `u(θ, x) = Σ_i β_i φ_i(x, α)`, if this
    /// parametrization ends in a bias-free linear layer.
    fn separable(&self) -> Option<&dyn Separable> {
        None
    }

    fn check_args(&self, theta: &ParamVector, x: &[f64]) -> Result<(), ParamsError> {
        if theta.len() != self.param_count() {
            return Err(ParamsError::DimensionMismatch {
                what: "theta",
                expected: self.param_count(),
                got: theta.len(),
            });
        }
        if x.len() != self.input_dim() {
            return Err(ParamsError::DimensionMismatch {
                what: "x",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }
}

/// Basis function values `φ_i(x, α)` and their spatial derivatives.
#[derive(Debug, Clone)]
pub struct BasisJet {
    /// `n_basis` values.
    pub phi: DVector<f64>,
    /// `n_basis × d` first derivatives.
    pub dphi: Option<DMatrix<f64>>,
}

/// Separable structure `u(θ, x) = V(x, α) β` with
/// `V(x, α) = [φ_1(x, α), …, φ_{n_basis}(x, α)] ⊗ I_m`.
///
/// The flat parameter vector is split into nonlinear basis parameters `α` and
/// linear coefficients `β = (β_1ᵀ, …, β_{n_basis}ᵀ)ᵀ` with `β_i ∈ R^m` the
/// coefficients of basis `i`. The index maps below translate between that
/// `[α; β]` ordering and this parametrization's flat layout.
pub trait Separable: Parametrization {
    fn n_basis(&self) -> usize;

    /// Flat-θ indices of the α entries, in α order.
    fn alpha_indices(&self) -> &[usize];

    /// Flat-θ indices of the β entries, in `(basis-major, component-minor)`
    /// order: entry `i·m + r` is the weight of basis `i` on output `r`.
    fn beta_indices(&self) -> &[usize];

    /// Evaluate the basis functions at `x` (with first spatial derivatives
    /// when `order ≥ 1`).
    fn basis_jet(
        &self,
        theta: &ParamVector,
        x: &[f64],
        order: u8,
    ) -> Result<BasisJet, ParamsError>;

    fn alpha_len(&self) -> usize {
        self.alpha_indices().len()
    }

    /// Extract `β` from a flat parameter vector.
    fn beta(&self, theta: &ParamVector) -> DVector<f64> {
        DVector::from_iterator(
            self.beta_indices().len(),
            self.beta_indices().iter().map(|&i| theta[i]),
        )
    }

    /// Extract `α` from a flat parameter vector.
    fn alpha(&self, theta: &ParamVector) -> DVector<f64> {
        DVector::from_iterator(
            self.alpha_indices().len(),
            self.alpha_indices().iter().map(|&i| theta[i]),
        )
    }

    /// The `m × (n_basis · m)` matrix `V(x, α) = [φ_1, …, φ_{n_basis}] ⊗ I_m`.
    fn v_matrix(&self, theta: &ParamVector, x: &[f64]) -> Result<DMatrix<f64>, ParamsError> {
        let m = self.output_dim();
        let basis = self.basis_jet(theta, x, 0)?;
        let mut v = DMatrix::zeros(m, self.n_basis() * m);
        for i in 0..self.n_basis() {
            for r in 0..m {
                v[(r, i * m + r)] = basis.phi[i];
            }
        }
        Ok(v)
    }
}

/// Build a network and deterministically seeded initial parameters.
///
/// Entries are drawn i.i.d. uniform on `[-1/√fan_in, 1/√fan_in]` per layer
/// (weights row-major first, then the bias) from a ChaCha20 stream, so equal
/// seeds give bitwise-equal parameters on every platform.
pub fn build(arch: Architecture, seed: u64) -> Result<(MlpNet, ParamVector), ParamsError> {
    let net = MlpNet::new(arch)?;
    let theta = net.init_params(seed);
    Ok((net, theta))
}
