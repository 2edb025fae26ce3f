//! Irrotational shallow-water equations on `[-4, 4)²` in scaled variables.
//!
//! With depth perturbation `h̃ = h - 1` and potential shift `φ̃ = φ + t`, the
//! system reads
//! `∂_t h̃ = -∇h̃·∇φ̃ - (h̃+1) Δφ̃`,
//! `∂_t φ̃ = -½‖∇φ̃‖² - h̃`,
//! and conserves the energy `½ ∫ (h̃+1)‖∇φ̃‖² + (h̃+1)²`. The energy is not of
//! the factorizable form `∇h(u) = Q(u)u`, so no weighted system is attached.

use nalgebra::DVector;

use super::{Domain, PdeModel, Quantity, QuantityKernel};
use crate::params::Jet;

#[derive(Debug, Clone)]
pub struct ShallowWater {
    /// Initial depth-bump amplitude.
    pub ic_amplitude: f64,
    /// Initial depth-bump inverse-width.
    pub ic_width: f64,
}

impl ShallowWater {
    pub fn benchmark() -> Self {
        ShallowWater { ic_amplitude: 0.33, ic_width: 1.7 }
    }

    /// Depth perturbation profile of the initial condition (potential starts
    /// at zero). Periodized over neighbouring boxes.
    pub fn initial_depth(&self, x: &[f64]) -> f64 {
        let period = 8.0;
        let mut v = 0.0;
        for kx in -1..=1 {
            for ky in -1..=1 {
                let dx = x[0] + kx as f64 * period;
                let dy = x[1] + ky as f64 * period;
                v += (-self.ic_width * (dx * dx + dy * dy)).exp();
            }
        }
        self.ic_amplitude * v
    }
}

impl PdeModel for ShallowWater {
    fn name(&self) -> &'static str {
        "shallow_water"
    }

    fn spatial_dim(&self) -> usize {
        2
    }

    fn field_dim(&self) -> usize {
        2
    }

    fn domain(&self) -> Domain {
        Domain::symmetric(4.0, 2)
    }

    fn spatial_order(&self) -> u8 {
        2
    }

    fn rhs(&self, _x: &[f64], jet: &Jet) -> DVector<f64> {
        let h = jet.value[0];
        let du = jet.du();
        let (hx, hy) = (du[(0, 0)], du[(0, 1)]);
        let (px, py) = (du[(1, 0)], du[(1, 1)]);
        let lap_phi = jet.laplacian(1);
        DVector::from_column_slice(&[
            -(hx * px + hy * py) - (h + 1.0) * lap_phi,
            -0.5 * (px * px + py * py) - h,
        ])
    }

    fn default_quantities(&self) -> Vec<Quantity> {
        vec![Quantity::new(QuantityKernel::ShallowWaterEnergy)]
    }

    fn initial(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(&[self.initial_depth(x), 0.0])
    }
}
