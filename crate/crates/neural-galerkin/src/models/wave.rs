//! Linear acoustic wave system on `[-1, 1)` in first-order form.
//!
//! `∂_t ρ = -ρ̄ ∂_x v`, `∂_t v = -(c²/ρ̄) ∂_x ρ`, which is `∂_t u = J δH/δu`
//! with the constant skew operator `J = -[[0, ∂_x], [∂_x, 0]]`, Hamiltonian
//! density `½(c²/ρ̄ · ρ² + ρ̄ · v²)`, and factor `Q = diag(c²/ρ̄, ρ̄)`.

use nalgebra::{DMatrix, DVector};

use super::burgers::periodized_gaussian;
use super::{Domain, HamiltonianStructure, PdeModel, Quantity, QuantityKernel};
use crate::params::Jet;

#[derive(Debug, Clone)]
pub struct Wave {
    /// Wave speed `c`.
    pub c: f64,
    /// Reference density `ρ̄`.
    pub rho_ref: f64,
    /// Initial density bump inverse-width.
    pub ic_width: f64,
    ham: WaveHamiltonian,
}

impl Wave {
    pub fn new(c: f64, rho_ref: f64, ic_width: f64) -> Self {
        Wave { c, rho_ref, ic_width, ham: WaveHamiltonian { c, rho_ref } }
    }

    pub fn benchmark() -> Self {
        Wave::new(1.0, 1.0, 9.0)
    }

    /// Density profile of the initial condition (velocity starts at zero).
    pub fn initial_density(&self, x: f64) -> f64 {
        periodized_gaussian(x, 1.0, self.ic_width, 2.0)
    }
}

impl PdeModel for Wave {
    fn name(&self) -> &'static str {
        "wave"
    }

    fn spatial_dim(&self) -> usize {
        1
    }

    fn field_dim(&self) -> usize {
        2
    }

    fn domain(&self) -> Domain {
        Domain::symmetric(1.0, 1)
    }

    fn spatial_order(&self) -> u8 {
        1
    }

    fn rhs(&self, _x: &[f64], jet: &Jet) -> DVector<f64> {
        let du = jet.du();
        DVector::from_column_slice(&[
            -self.rho_ref * du[(1, 0)],
            -(self.c * self.c / self.rho_ref) * du[(0, 0)],
        ])
    }

    fn hamiltonian(&self) -> Option<&dyn HamiltonianStructure> {
        Some(&self.ham)
    }

    fn default_quantities(&self) -> Vec<Quantity> {
        vec![Quantity::new(QuantityKernel::WaveEnergy { c: self.c, rho_ref: self.rho_ref })]
    }

    fn initial(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(&[self.initial_density(x[0]), 0.0])
    }
}

#[derive(Debug, Clone)]
struct WaveHamiltonian {
    c: f64,
    rho_ref: f64,
}

impl HamiltonianStructure for WaveHamiltonian {
    fn q_matrix(&self, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&[
            self.c * self.c / self.rho_ref,
            self.rho_ref,
        ]))
    }

    fn j_apply(
        &self,
        _state: &Jet,
        _q_value: &DVector<f64>,
        q_du: &DMatrix<f64>,
    ) -> DVector<f64> {
        // J = -[[0, ∂x], [∂x, 0]] swaps components and differentiates.
        DVector::from_column_slice(&[-q_du[(1, 0)], -q_du[(0, 0)]])
    }

    fn density(&self, u: &DVector<f64>) -> f64 {
        0.5 * (self.c * self.c / self.rho_ref * u[0] * u[0] + self.rho_ref * u[1] * u[1])
    }

    fn kernel(&self) -> QuantityKernel {
        QuantityKernel::WaveEnergy { c: self.c, rho_ref: self.rho_ref }
    }
}
