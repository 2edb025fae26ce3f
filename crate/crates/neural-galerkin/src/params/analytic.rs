//! Closed-form parametrizations with hand-written jets.
//!
//! These are small, transparent models used throughout the test suites and
//! the book examples: a linear-in-θ feature expansion and a separable sine
//! basis with trainable frequencies. Their derivatives are written out
//! symbolically, which makes them convenient oracles for the network jets.

use nalgebra::{DMatrix, DVector};

use super::{
    BasisJet, Jet, JetRequest, ParamVector, Parametrization, ParamsError, Separable,
};

/// One closed-form scalar feature of the spatial coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Feature {
    /// Constant `1`.
    One,
    /// Coordinate `x_axis`.
    Coord(usize),
    /// `sin(freq · x_axis + phase)`.
    Sin { freq: f64, axis: usize, phase: f64 },
}

impl Feature {
    fn value(&self, x: &[f64]) -> f64 {
        match *self {
            Feature::One => 1.0,
            Feature::Coord(a) => x[a],
            Feature::Sin { freq, axis, phase } => (freq * x[axis] + phase).sin(),
        }
    }

    fn d1(&self, x: &[f64], j: usize) -> f64 {
        match *self {
            Feature::One => 0.0,
            Feature::Coord(a) => f64::from(a == j),
            Feature::Sin { freq, axis, phase } => {
                if axis == j {
                    freq * (freq * x[axis] + phase).cos()
                } else {
                    0.0
                }
            }
        }
    }

    fn d2(&self, x: &[f64], j: usize, k: usize) -> f64 {
        match *self {
            Feature::One | Feature::Coord(_) => 0.0,
            Feature::Sin { freq, axis, phase } => {
                if axis == j && axis == k {
                    -freq * freq * (freq * x[axis] + phase).sin()
                } else {
                    0.0
                }
            }
        }
    }
}

/// Scalar linear-in-θ parametrization `u(θ, x) = Σ_i θ_i f_i(x)`.
///
/// Being linear makes every Galerkin quantity computable by hand; the
/// tangent space does not depend on θ. The separable view is the degenerate
/// case with no nonlinear parameters (`α` empty, `β = θ`).
#[derive(Debug, Clone)]
pub struct LinearFeatures {
    features: Vec<Feature>,
    input_dim: usize,
    beta_idx: Vec<usize>,
}

impl LinearFeatures {
    pub fn new(input_dim: usize, features: Vec<Feature>) -> Self {
        let beta_idx = (0..features.len()).collect();
        LinearFeatures { features, input_dim, beta_idx }
    }

    /// `θ₁ + θ₂ sin(πx)` on one axis; the standard two-parameter example.
    pub fn const_plus_sin_pi() -> Self {
        LinearFeatures::new(
            1,
            vec![Feature::One, Feature::Sin { freq: std::f64::consts::PI, axis: 0, phase: 0.0 }],
        )
    }
}

impl Parametrization for LinearFeatures {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn param_count(&self) -> usize {
        self.features.len()
    }

    fn eval_jet(
        &self,
        theta: &ParamVector,
        x: &[f64],
        request: JetRequest,
    ) -> Result<Jet, ParamsError> {
        request.validate()?;
        self.check_args(theta, x)?;
        let d = self.input_dim;
        let p = self.features.len();
        let vals: Vec<f64> = self.features.iter().map(|f| f.value(x)).collect();
        let value = DVector::from_element(1, theta.iter().zip(&vals).map(|(t, v)| t * v).sum());
        let du = (request.order >= 1).then(|| {
            DMatrix::from_fn(1, d, |_, j| {
                self.features.iter().enumerate().map(|(i, f)| theta[i] * f.d1(x, j)).sum()
            })
        });
        let d2u = (request.order >= 2).then(|| {
            vec![DMatrix::from_fn(d, d, |j, k| {
                self.features.iter().enumerate().map(|(i, f)| theta[i] * f.d2(x, j, k)).sum()
            })]
        });
        let grad_theta =
            request.param_grad.then(|| DMatrix::from_fn(1, p, |_, i| vals[i]));
        let grad_theta_du = request.param_grad_du.then(|| {
            (0..d)
                .map(|j| DMatrix::from_fn(1, p, |_, i| self.features[i].d1(x, j)))
                .collect()
        });
        Ok(Jet { value, du, d2u, grad_theta, grad_theta_du })
    }

    fn separable(&self) -> Option<&dyn Separable> {
        Some(self)
    }
}

impl Separable for LinearFeatures {
    fn n_basis(&self) -> usize {
        self.features.len()
    }

    fn alpha_indices(&self) -> &[usize] {
        &[]
    }

    fn beta_indices(&self) -> &[usize] {
        &self.beta_idx
    }

    fn basis_jet(
        &self,
        _theta: &ParamVector,
        x: &[f64],
        order: u8,
    ) -> Result<BasisJet, ParamsError> {
        let n = self.features.len();
        let phi = DVector::from_fn(n, |i, _| self.features[i].value(x));
        let dphi = (order >= 1).then(|| {
            DMatrix::from_fn(n, self.input_dim, |i, j| self.features[i].d1(x, j))
        });
        Ok(BasisJet { phi, dphi })
    }
}

/// Separable sine basis on one spatial axis:
/// `u_r(θ, x) = Σ_i β_{i,r} sin(α_i x + phase_i)`.
///
/// Parameters are stored `[β; α]` with `β` basis-major (all `m` coefficients
/// of basis 1, then basis 2, …), matching the separable index convention.
#[derive(Debug, Clone)]
pub struct SeparableSine {
    n_basis: usize,
    output_dim: usize,
    phases: Vec<f64>,
    alpha_idx: Vec<usize>,
    beta_idx: Vec<usize>,
}

impl SeparableSine {
    pub fn new(n_basis: usize, output_dim: usize, phases: Vec<f64>) -> Self {
        assert_eq!(phases.len(), n_basis);
        let nb = n_basis * output_dim;
        SeparableSine {
            n_basis,
            output_dim,
            phases,
            alpha_idx: (nb..nb + n_basis).collect(),
            beta_idx: (0..nb).collect(),
        }
    }

    fn split<'a>(&self, theta: &'a ParamVector) -> (&'a [f64], &'a [f64]) {
        let nb = self.n_basis * self.output_dim;
        let s = theta.as_slice();
        (&s[..nb], &s[nb..])
    }
}

impl Parametrization for SeparableSine {
    fn input_dim(&self) -> usize {
        1
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn param_count(&self) -> usize {
        self.n_basis * (self.output_dim + 1)
    }

    fn eval_jet(
        &self,
        theta: &ParamVector,
        x: &[f64],
        request: JetRequest,
    ) -> Result<Jet, ParamsError> {
        request.validate()?;
        self.check_args(theta, x)?;
        let (beta, alpha) = self.split(theta);
        let m = self.output_dim;
        let n = self.n_basis;
        let xv = x[0];
        let arg = |i: usize| alpha[i] * xv + self.phases[i];
        let b = |i: usize, r: usize| beta[i * m + r];

        let mut value = DVector::zeros(m);
        for i in 0..n {
            let s = arg(i).sin();
            for r in 0..m {
                value[r] += b(i, r) * s;
            }
        }
        let du = (request.order >= 1).then(|| {
            DMatrix::from_fn(m, 1, |r, _| {
                (0..n).map(|i| b(i, r) * alpha[i] * arg(i).cos()).sum()
            })
        });
        let d2u = (request.order >= 2).then(|| {
            (0..m)
                .map(|r| {
                    DMatrix::from_element(
                        1,
                        1,
                        (0..n).map(|i| -b(i, r) * alpha[i] * alpha[i] * arg(i).sin()).sum(),
                    )
                })
                .collect()
        });
        let grad_theta = request.param_grad.then(|| {
            let mut g = DMatrix::zeros(m, self.param_count());
            for i in 0..n {
                let s = arg(i).sin();
                let c = arg(i).cos();
                for r in 0..m {
                    g[(r, i * m + r)] = s;
                    g[(r, n * m + i)] = b(i, r) * xv * c;
                }
            }
            g
        });
        let grad_theta_du = request.param_grad_du.then(|| {
            let mut g = DMatrix::zeros(m, self.param_count());
            for i in 0..n {
                let s = arg(i).sin();
                let c = arg(i).cos();
                for r in 0..m {
                    g[(r, i * m + r)] = alpha[i] * c;
                    g[(r, n * m + i)] = b(i, r) * (c - alpha[i] * xv * s);
                }
            }
            vec![g]
        });
        Ok(Jet { value, du, d2u, grad_theta, grad_theta_du })
    }

    fn separable(&self) -> Option<&dyn Separable> {
        Some(self)
    }
}

impl Separable for SeparableSine {
    fn n_basis(&self) -> usize {
        self.n_basis
    }

    fn alpha_indices(&self) -> &[usize] {
        &self.alpha_idx
    }

    fn beta_indices(&self) -> &[usize] {
        &self.beta_idx
    }

    fn basis_jet(
        &self,
        theta: &ParamVector,
        x: &[f64],
        order: u8,
    ) -> Result<BasisJet, ParamsError> {
        self.check_args(theta, x)?;
        let (_, alpha) = self.split(theta);
        let n = self.n_basis;
        let phi = DVector::from_fn(n, |i, _| (alpha[i] * x[0] + self.phases[i]).sin());
        let dphi = (order >= 1).then(|| {
            DMatrix::from_fn(n, 1, |i, _| alpha[i] * (alpha[i] * x[0] + self.phases[i]).cos())
        });
        Ok(BasisJet { phi, dphi })
    }
}
