//! Inviscid advection (Burgers) equation `∂_t u = -u ∂_x u` on `[-1, 1)`.

use nalgebra::{DMatrix, DVector};

use super::{Domain, HamiltonianStructure, PdeModel, Quantity, QuantityKernel};
use crate::params::Jet;

/// Scalar advection benchmark. The tracked quantity is the mass `∫ u`.
///
/// Hamiltonian form: `∂_t u = J(u) δH/δu` with `H(u) = ½‖u‖²` (so `Q ≡ 1`)
/// and the state-dependent skew operator
/// `J(v) q = -⅓ (∂_x(v·q) + v·∂_x q)`.
#[derive(Debug, Clone)]
pub struct Burgers {
    /// Initial bump amplitude.
    pub ic_amplitude: f64,
    /// Initial bump inverse-width (`u₀ ∝ exp(-width·x²)`).
    pub ic_width: f64,
}

impl Burgers {
    pub fn benchmark() -> Self {
        Burgers { ic_amplitude: 1.0, ic_width: 25.0 }
    }
}

impl PdeModel for Burgers {
    fn name(&self) -> &'static str {
        "burgers"
    }

    fn spatial_dim(&self) -> usize {
        1
    }

    fn field_dim(&self) -> usize {
        1
    }

    fn domain(&self) -> Domain {
        Domain::symmetric(1.0, 1)
    }

    fn spatial_order(&self) -> u8 {
        1
    }

    fn rhs(&self, _x: &[f64], jet: &Jet) -> DVector<f64> {
        DVector::from_element(1, -jet.value[0] * jet.du()[(0, 0)])
    }

    fn hamiltonian(&self) -> Option<&dyn HamiltonianStructure> {
        Some(&BurgersHamiltonian)
    }

    fn default_quantities(&self) -> Vec<Quantity> {
        vec![Quantity::new(QuantityKernel::Mass { component: 0 })]
    }

    fn initial(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_element(1, periodized_gaussian(x[0], self.ic_amplitude, self.ic_width, 2.0))
    }
}

/// Gaussian bump summed over periodic images so the restriction to one box is
/// exactly periodic (three images suffice at the widths used here).
pub(crate) fn periodized_gaussian(x: f64, amplitude: f64, width: f64, period: f64) -> f64 {
    let mut v = 0.0;
    for k in -1..=1 {
        let y = x + k as f64 * period;
        v += (-width * y * y).exp();
    }
    amplitude * v
}

struct BurgersHamiltonian;

impl HamiltonianStructure for BurgersHamiltonian {
    fn q_matrix(&self, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(1, 1)
    }

    fn j_apply(
        &self,
        state: &Jet,
        q_value: &DVector<f64>,
        q_du: &DMatrix<f64>,
    ) -> DVector<f64> {
        // -⅓ (∂_x(v q) + v ∂_x q) = -⅓ (q ∂_x v + 2 v ∂_x q)
        let v = state.value[0];
        let vx = state.du()[(0, 0)];
        DVector::from_element(1, -(q_value[0] * vx + 2.0 * v * q_du[(0, 0)]) / 3.0)
    }

    fn density(&self, u: &DVector<f64>) -> f64 {
        0.5 * u[0] * u[0]
    }

    fn kernel(&self) -> QuantityKernel {
        QuantityKernel::BurgersEnergy
    }
}
