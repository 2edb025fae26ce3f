//! Conserved-quantity kernels `κ(u)(x)` and their jet-level gradients.

use nalgebra::{DMatrix, DVector};

use crate::params::Jet;

/// Pointwise kernel of a sampled quantity `q̂ = (1/n) Σ κ(u)(x_s)`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum QuantityKernel {
    /// `κ = u_component` (e.g. mass of a scalar field).
    Mass { component: usize },
    /// `κ = ½ u²` for a scalar field — the advection Hamiltonian density.
    BurgersEnergy,
    /// `κ = ½ (c²/ρ̄ · ρ² + ρ̄ · v²)` for the linear wave system `(ρ, v)`.
    WaveEnergy { c: f64, rho_ref: f64 },
    /// Shallow-water energy density in scaled variables `(h̃, φ̃)`:
    /// `κ = ½ ((h̃+1)·‖∇φ̃‖² + (h̃+1)²)`.
    ShallowWaterEnergy,
}

/// Partial derivatives of a kernel w.r.t. the jet fields it reads.
#[derive(Debug, Clone)]
pub struct KernelGrad {
    /// `∂κ/∂u_i`, length `m`.
    pub wrt_u: DVector<f64>,
    /// `∂κ/∂(∂u_i/∂x_j)` as an `m × d` matrix, when the kernel reads first
    /// derivatives.
    pub wrt_du: Option<DMatrix<f64>>,
}

impl QuantityKernel {
    /// Highest spatial derivative order the kernel reads from the jet.
    pub fn spatial_order(&self) -> u8 {
        match self {
            QuantityKernel::ShallowWaterEnergy => 1,
            _ => 0,
        }
    }

    pub fn value(&self, jet: &Jet) -> f64 {
        match *self {
            QuantityKernel::Mass { component } => jet.value[component],
            QuantityKernel::BurgersEnergy => 0.5 * jet.value[0] * jet.value[0],
            QuantityKernel::WaveEnergy { c, rho_ref } => {
                let (rho, v) = (jet.value[0], jet.value[1]);
                0.5 * (c * c / rho_ref * rho * rho + rho_ref * v * v)
            }
            QuantityKernel::ShallowWaterEnergy => {
                let h1 = jet.value[0] + 1.0;
                let du = jet.du();
                let grad_phi_sq = du[(1, 0)] * du[(1, 0)] + du[(1, 1)] * du[(1, 1)];
                0.5 * (h1 * grad_phi_sq + h1 * h1)
            }
        }
    }

    pub fn grad(&self, jet: &Jet) -> KernelGrad {
        let m = jet.value.len();
        match *self {
            QuantityKernel::Mass { component } => {
                let mut g = DVector::zeros(m);
                g[component] = 1.0;
                KernelGrad { wrt_u: g, wrt_du: None }
            }
            QuantityKernel::BurgersEnergy => KernelGrad {
                wrt_u: DVector::from_element(1, jet.value[0]),
                wrt_du: None,
            },
            QuantityKernel::WaveEnergy { c, rho_ref } => {
                let mut g = DVector::zeros(2);
                g[0] = c * c / rho_ref * jet.value[0];
                g[1] = rho_ref * jet.value[1];
                KernelGrad { wrt_u: g, wrt_du: None }
            }
            QuantityKernel::ShallowWaterEnergy => {
                let h1 = jet.value[0] + 1.0;
                let du = jet.du();
                let grad_phi_sq = du[(1, 0)] * du[(1, 0)] + du[(1, 1)] * du[(1, 1)];
                let mut wrt_u = DVector::zeros(2);
                wrt_u[0] = 0.5 * grad_phi_sq + h1;
                let mut wrt_du = DMatrix::zeros(2, 2);
                wrt_du[(1, 0)] = h1 * du[(1, 0)];
                wrt_du[(1, 1)] = h1 * du[(1, 1)];
                KernelGrad { wrt_u, wrt_du: Some(wrt_du) }
            }
        }
    }

    /// Column name used in metrics output.
    pub fn label(&self) -> &'static str {
        match self {
            QuantityKernel::Mass { .. } => "mass",
            QuantityKernel::BurgersEnergy | QuantityKernel::WaveEnergy { .. } => "energy",
            QuantityKernel::ShallowWaterEnergy => "energy",
        }
    }
}

/// A tracked quantity: kernel plus the target value frozen from the initial
/// parameter.
#[derive(Debug, Clone)]
pub struct Quantity {
    pub kernel: QuantityKernel,
    /// `q̂(θ₀)` on the quantity sample set; `None` until frozen.
    pub target: Option<f64>,
}

impl Quantity {
    pub fn new(kernel: QuantityKernel) -> Self {
        Quantity { kernel, target: None }
    }

    pub fn with_target(kernel: QuantityKernel, target: f64) -> Self {
        Quantity { kernel, target: Some(target) }
    }

    pub fn target(&self) -> f64 {
        self.target.expect("quantity target not frozen from the initial parameter")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn jet_from(value: &[f64], du: Option<DMatrix<f64>>) -> Jet {
        Jet {
            value: DVector::from_column_slice(value),
            du,
            d2u: None,
            grad_theta: None,
            grad_theta_du: None,
        }
    }

    #[test]
    fn wave_energy_gradient_is_q_times_state() {
        let kernel = QuantityKernel::WaveEnergy { c: 2.0, rho_ref: 0.5 };
        let jet = jet_from(&[0.3, -1.2], None);
        let g = kernel.grad(&jet);
        assert!((g.wrt_u[0] - 2.0 * 2.0 / 0.5 * 0.3).abs() < 1e-15);
        assert!((g.wrt_u[1] - 0.5 * -1.2).abs() < 1e-15);
    }

    #[test]
    fn shallow_water_energy_value_and_grad() {
        let du = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.4, -0.3]);
        let jet = jet_from(&[0.2, 7.0], Some(du));
        let kernel = QuantityKernel::ShallowWaterEnergy;
        let h1 = 1.2;
        let gp2 = 0.4f64 * 0.4 + 0.3 * 0.3;
        assert!((kernel.value(&jet) - 0.5 * (h1 * gp2 + h1 * h1)).abs() < 1e-15);
        let g = kernel.grad(&jet);
        assert!((g.wrt_u[0] - (0.5 * gp2 + h1)).abs() < 1e-15);
        assert_eq!(g.wrt_u[1], 0.0);
        let wd = g.wrt_du.unwrap();
        assert!((wd[(1, 0)] - h1 * 0.4).abs() < 1e-15);
        assert!((wd[(1, 1)] + h1 * 0.3).abs() < 1e-15);
    }
}
