//! Weighted Galerkin systems that conserve a sampled quadratic invariant by
//! construction.
//!
//! For separable parametrizations `u(θ', x) = V(α, x) β` with reordered
//! parameters `θ' = [α; β]`, and evolution equations with a factorizable
//! right-hand side `f(u) = J(u) Q u`, the sampled dynamics can be written
//!
//! `M̂_Q(θ') θ̇' = Ĵ_Q(θ') D θ'`,
//!
//! with the weighted Gram `M̂_Q = (1/n) Σ_s T_sᵀ Q T_s`, the selector `D`
//! zeroing the α block, and a skew-symmetric `Ĵ_Q`. Because the sampled
//! invariant gradient satisfies `∇_θ' Ĥ = M̂_Q D θ'` with the same samples,
//! the chain rule gives `dĤ/dt = (Dθ')ᵀ Ĵ_Q (Dθ') = 0`: conservation is
//! exact up to the linear-solver tolerance, independent of the sample count.
//!
//! The β–β coupling is assembled as the skew part of the raw bilinear sums;
//! its symmetric remainder is a quadrature artifact that vanishes as the
//! continuum limit is approached. The α–β block enters the right-hand side
//! verbatim; its mirrored negative exists only to keep `Ĵ_Q` skew.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::galerkin::{solve_constrained_normal, GalerkinError, NormalSystem};
use crate::models::{ModelsError, PdeModel, SampleSet};
use crate::params::{JetRequest, ParamVector, Parametrization, ParamsError};

#[derive(Debug, Error)]
pub enum WeightedError {
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Models(#[from] ModelsError),
    #[error(transparent)]
    Solve(#[from] GalerkinError),
    #[error("parametrization exposes no separable structure")]
    NotSeparable,
    #[error("model right-hand side does not factor through a quadratic invariant")]
    NoFactorization,
    #[error("non-finite weighted system at sample {index}")]
    NonFinite { index: usize },
}

/// Assembled weighted system in `θ' = [α; β]` ordering.
pub struct WeightedSystem {
    /// Weighted Gram `M̂_Q`, symmetric positive semidefinite.
    pub gram: DMatrix<f64>,
    /// α–β coupling block of `Ĵ_Q` (`n_α × n_β`).
    pub j12: DMatrix<f64>,
    /// Skew-symmetric β–β block of `Ĵ_Q` (`n_β × n_β`).
    pub j22: DMatrix<f64>,
    /// Raw β–β bilinear sums; `j22` is the skew part of this matrix.
    pub s_raw: DMatrix<f64>,
    pub n_alpha: usize,
    pub n_beta: usize,
    /// `θ'[i] = θ[perm[i]]`: map from the reordered to the flat layout.
    pub perm: Vec<usize>,
}

impl WeightedSystem {
    pub fn dim(&self) -> usize {
        self.n_alpha + self.n_beta
    }

    /// Gather a flat parameter vector into `[α; β]` order.
    pub fn to_prime(&self, theta: &ParamVector) -> DVector<f64> {
        DVector::from_fn(self.perm.len(), |i, _| theta[self.perm[i]])
    }

    /// Scatter an `[α; β]`-ordered vector back to the flat layout.
    pub fn from_prime(&self, prime: &DVector<f64>) -> ParamVector {
        let mut theta = DVector::zeros(prime.len());
        for (i, &f) in self.perm.iter().enumerate() {
            theta[f] = prime[i];
        }
        theta
    }

    /// The full skew matrix `[[0, Ĵ¹²], [−Ĵ¹²ᵀ, Ĵ²²]]`.
    pub fn j_matrix(&self) -> DMatrix<f64> {
        let (na, nb) = (self.n_alpha, self.n_beta);
        let mut j = DMatrix::zeros(na + nb, na + nb);
        j.view_mut((0, na), (na, nb)).copy_from(&self.j12);
        j.view_mut((na, 0), (nb, na)).copy_from(&(-self.j12.transpose()));
        j.view_mut((na, na), (nb, nb)).copy_from(&self.j22);
        j
    }

    /// Right-hand side `Ĵ_Q D θ' = [Ĵ¹² β; Ĵ²² β]`.
    pub fn rhs(&self, theta_prime: &DVector<f64>) -> DVector<f64> {
        let beta = theta_prime.rows(self.n_alpha, self.n_beta);
        let mut out = DVector::zeros(self.dim());
        out.rows_mut(0, self.n_alpha).copy_from(&(&self.j12 * beta));
        out.rows_mut(self.n_alpha, self.n_beta).copy_from(&(&self.j22 * beta));
        out
    }

    /// Sampled invariant gradient `∇_θ' Ĥ = M̂_Q D θ'`.
    pub fn hamiltonian_gradient(&self, theta_prime: &DVector<f64>) -> DVector<f64> {
        let mut z = DVector::zeros(self.dim());
        z.rows_mut(self.n_alpha, self.n_beta)
            .copy_from(&theta_prime.rows(self.n_alpha, self.n_beta));
        &self.gram * z
    }
}

/// Assemble the weighted system at the given flat parameter vector.
pub fn assemble_weighted(
    net: &dyn Parametrization,
    theta: &ParamVector,
    model: &dyn PdeModel,
    samples: &SampleSet,
) -> Result<WeightedSystem, WeightedError> {
    let sep = net.separable().ok_or(WeightedError::NotSeparable)?;
    let ham = model.hamiltonian().ok_or(WeightedError::NoFactorization)?;
    if samples.is_empty() {
        return Err(WeightedError::Solve(GalerkinError::EmptySampleSet));
    }
    let m = net.output_dim();
    let d = net.input_dim();
    let n = samples.len();
    let alpha_idx = sep.alpha_indices();
    let beta_idx = sep.beta_indices();
    let (na, nb) = (alpha_idx.len(), beta_idx.len());
    let p = na + nb;
    let perm: Vec<usize> = alpha_idx.iter().chain(beta_idx.iter()).copied().collect();

    let req = JetRequest::spatial(1).with_param_grad();
    // Row-major stacks of T (reordered Jacobian rows) and Q·T across samples,
    // combined into the Gram by one strided product at the end.
    let mut t_rows = vec![0.0; n * m * p];
    let mut qt_rows = vec![0.0; n * m * p];
    let mut j12 = DMatrix::zeros(na, nb);
    let mut s_raw = DMatrix::zeros(nb, nb);
    let mut qv = DMatrix::zeros(m, nb);
    let mut r_mat = DMatrix::zeros(m, nb);

    for (si, x) in samples.iter().enumerate() {
        let jet = net.eval_jet(theta, x, req)?;
        let basis = sep.basis_jet(theta, x, 1)?;
        if !jet.is_finite() || !basis.phi.iter().all(|v| v.is_finite()) {
            return Err(WeightedError::NonFinite { index: si });
        }
        let q = ham.q_matrix(&jet.value);
        let grad = jet.grad_theta();

        // Reordered Jacobian rows and their weighted copies.
        for r in 0..m {
            let t_row = &mut t_rows[(si * m + r) * p..(si * m + r + 1) * p];
            for (c, &f) in perm.iter().enumerate() {
                t_row[c] = grad[(r, f)];
            }
        }
        for r in 0..m {
            let base = si * m;
            for c in 0..p {
                let mut acc = 0.0;
                for k in 0..m {
                    acc += q[(r, k)] * t_rows[(base + k) * p + c];
                }
                qt_rows[(base + r) * p + c] = acc;
            }
        }

        // Columns of Q·V and of J applied to each weighted basis field.
        let dphi = basis.dphi.as_ref().expect("first-order basis jet");
        for i in 0..nb / m {
            for rc in 0..m {
                let l = i * m + rc;
                let qcol = q.column(rc);
                for row in 0..m {
                    qv[(row, l)] = basis.phi[i] * qcol[row];
                }
                let mut q_du = DMatrix::zeros(m, d);
                for j in 0..d {
                    for row in 0..m {
                        q_du[(row, j)] = dphi[(i, j)] * qcol[row];
                    }
                }
                let applied = ham.j_apply(&jet, &qv.column(l).into_owned(), &q_du);
                r_mat.set_column(l, &applied);
            }
        }

        // J¹² += (Q T^α)ᵀ R, row-major T^α slice read back per sample.
        for k in 0..na {
            for l in 0..nb {
                let mut acc = 0.0;
                for row in 0..m {
                    acc += qt_rows[(si * m + row) * p + k] * r_mat[(row, l)];
                }
                j12[(k, l)] += acc;
            }
        }
        s_raw.gemm_tr(1.0, &qv, &r_mat, 1.0);
    }

    // Gram via one strided product: gram = Tᵀ (Q T) / n.
    let mut gram_buf = vec![0.0; p * p];
    unsafe {
        matrixmultiply::dgemm(
            p,
            n * m,
            p,
            1.0 / n as f64,
            t_rows.as_ptr(),
            1,
            p as isize,
            qt_rows.as_ptr(),
            p as isize,
            1,
            0.0,
            gram_buf.as_mut_ptr(),
            p as isize,
            1,
        );
    }
    let gram_raw = DMatrix::from_row_slice(p, p, &gram_buf);
    // Symmetrize away the product roundoff so the conservation identity sees
    // an exactly symmetric Gram.
    let gram = DMatrix::from_fn(p, p, |i, j| 0.5 * (gram_raw[(i, j)] + gram_raw[(j, i)]));

    j12 /= n as f64;
    s_raw /= n as f64;
    let j22 = DMatrix::from_fn(nb, nb, |k, l| 0.5 * (s_raw[(k, l)] - s_raw[(l, k)]));
    if !gram.iter().all(|v| v.is_finite())
        || !j12.iter().all(|v| v.is_finite())
        || !j22.iter().all(|v| v.is_finite())
    {
        return Err(WeightedError::NonFinite { index: usize::MAX });
    }
    Ok(WeightedSystem { gram, j12, j22, s_raw, n_alpha: na, n_beta: nb, perm })
}

/// Solve `M̂_Q θ̇' = Ĵ_Q D θ'` with Tikhonov regularization, returning the
/// parameter velocity in `[α; β]` order.
pub fn solve_weighted(
    sys: &WeightedSystem,
    theta_prime: &DVector<f64>,
    reg: f64,
) -> Result<DVector<f64>, GalerkinError> {
    let rhs = sys.rhs(theta_prime);
    let normal = NormalSystem {
        gram: sys.gram.clone(),
        rhs: rhs.clone(),
        rows: sys.dim(),
        b_norm_sq: rhs.norm_squared(),
    };
    let report = solve_constrained_normal(&normal, &DMatrix::zeros(sys.dim(), 0), reg)?;
    Ok(report.delta)
}

/// Residual of the sampled invariant-gradient identity: the assembled
/// `M̂_Q D θ'` against an independently accumulated `(1/n) Σ T_sᵀ ∂h/∂u(û_s)`.
pub fn hamiltonian_gradient_residual(
    net: &dyn Parametrization,
    theta: &ParamVector,
    model: &dyn PdeModel,
    samples: &SampleSet,
    sys: &WeightedSystem,
) -> Result<f64, WeightedError> {
    let ham = model.hamiltonian().ok_or(WeightedError::NoFactorization)?;
    let req = JetRequest::value().with_param_grad();
    let mut direct = DVector::zeros(sys.dim());
    for x in samples.iter() {
        let jet = net.eval_jet(theta, x, req)?;
        let dh = ham.density_grad(&jet.value);
        let grad = jet.grad_theta();
        for (c, &f) in sys.perm.iter().enumerate() {
            let mut acc = 0.0;
            for r in 0..net.output_dim() {
                acc += grad[(r, f)] * dh[r];
            }
            direct[c] += acc;
        }
    }
    direct /= samples.len() as f64;
    let assembled = sys.hamiltonian_gradient(&sys.to_prime(theta));
    Ok((direct - assembled).amax())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::galerkin::assemble_mf;
    use crate::models::{Burgers, Domain, Wave};
    use crate::params::{build, Activation, Architecture, PeriodicSpec, SeparableSine};
    use proptest::prelude::*;

    fn wave_net() -> (crate::params::MlpNet, ParamVector) {
        let arch = Architecture {
            input_dim: 1,
            output_dim: 2,
            periodic: Some(PeriodicSpec { periods: vec![2.0], width: 6 }),
            hidden: vec![6, 8],
            activation: Activation::Sin,
            output_bias: false,
        };
        build(arch, 11).unwrap()
    }

    fn grid(n: usize) -> SampleSet {
        SampleSet::equidistant(&Domain::symmetric(1.0, 1), &[n], 0.0)
    }

    #[test]
    fn j_matrix_is_skew_to_the_last_bit() {
        let (net, theta) = wave_net();
        let model = Wave::benchmark();
        let sys = assemble_weighted(&net, &theta, &model, &grid(48)).unwrap();
        let j = sys.j_matrix();
        let asym = (&j + j.transpose()).amax();
        assert_eq!(asym, 0.0);
    }

    #[test]
    fn identity_weight_reproduces_plain_gram_in_permuted_order() {
        // Burgers carries Q = I, so M̂_Q must match the unweighted Gram after
        // undoing the [α; β] reordering.
        let (net, theta) = {
            let arch = Architecture {
                input_dim: 1,
                output_dim: 1,
                periodic: Some(PeriodicSpec { periods: vec![2.0], width: 5 }),
                hidden: vec![6],
                activation: Activation::Sin,
                output_bias: false,
            };
            build(arch, 3).unwrap()
        };
        let model = Burgers::benchmark();
        let samples = grid(32);
        let sys = assemble_weighted(&net, &theta, &model, &samples).unwrap();
        let (m_hat, _) = assemble_mf(&net, &theta, &model, &samples).unwrap();
        let p = sys.dim();
        let mut err = 0.0f64;
        for i in 0..p {
            for j in 0..p {
                err = err.max((sys.gram[(i, j)] - m_hat[(sys.perm[i], sys.perm[j])]).abs());
            }
        }
        assert!(err < 1e-13, "permuted Gram mismatch {err:.3e}");
    }

    #[test]
    fn two_parameter_system_matches_hand_computation() {
        // u = β sin(αx + φ): all blocks reduce to short trigonometric sums.
        let net = SeparableSine::new(1, 1, vec![0.2]);
        let theta = DVector::from_column_slice(&[0.8, 1.3]); // [β, α] flat
        let model = Burgers::benchmark();
        let xs = [-0.5, 0.1, 0.7];
        let samples = SampleSet::from_coords(1, xs.to_vec());
        let sys = assemble_weighted(&net, &theta, &model, &samples).unwrap();
        assert_eq!((sys.n_alpha, sys.n_beta), (1, 1));

        let (beta, alpha, phase) = (0.8, 1.3, 0.2);
        let n = xs.len() as f64;
        let (mut maa, mut mab, mut mbb, mut j12, mut s) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &x in &xs {
            let (sn, cs) = ((alpha * x + phase).sin(), (alpha * x + phase).cos());
            let ta = beta * x * cs; // ∂u/∂α
            let tb = sn; // ∂u/∂β
            maa += ta * ta / n;
            mab += ta * tb / n;
            mbb += tb * tb / n;
            // J applied to the basis field sin(αx+φ):
            // −(q u_x + 2 u q_x)/3 with u = β sin, u_x = αβ cos, q_x = α cos.
            let applied = -(sn * alpha * beta * cs + 2.0 * beta * sn * alpha * cs) / 3.0;
            j12 += ta * applied / n;
            s += tb * applied / n;
        }
        assert!((sys.gram[(0, 0)] - maa).abs() < 1e-14);
        assert!((sys.gram[(0, 1)] - mab).abs() < 1e-14);
        assert!((sys.gram[(1, 1)] - mbb).abs() < 1e-14);
        assert!((sys.j12[(0, 0)] - j12).abs() < 1e-14);
        assert!((sys.s_raw[(0, 0)] - s).abs() < 1e-14);
        // A 1×1 skew block is exactly zero.
        assert_eq!(sys.j22[(0, 0)], 0.0);

        let prime = sys.to_prime(&theta);
        assert_eq!(prime[0], 1.3); // α first
        assert_eq!(prime[1], 0.8);
        let rhs = sys.rhs(&prime);
        assert!((rhs[0] - j12 * beta).abs() < 1e-14);
        assert_eq!(rhs[1], 0.0);
    }

    #[test]
    fn zero_linear_coefficients_give_zero_rhs() {
        let (net, mut theta) = wave_net();
        let model = Wave::benchmark();
        let samples = grid(32);
        let sys = assemble_weighted(&net, &theta, &model, &samples).unwrap();
        // Zero out the β block in the flat layout.
        let beta_flat: Vec<usize> = sys.perm[sys.n_alpha..].to_vec();
        for f in beta_flat {
            theta[f] = 0.0;
        }
        let rhs = sys.rhs(&sys.to_prime(&theta));
        assert_eq!(rhs.amax(), 0.0);
    }

    #[test]
    fn weighted_gram_is_positive_semidefinite() {
        let (net, theta) = wave_net();
        let model = Wave::benchmark();
        let sys = assemble_weighted(&net, &theta, &model, &grid(64)).unwrap();
        let eig = sys.gram.clone().symmetric_eigen();
        let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        let max = eig.eigenvalues.iter().copied().fold(0.0f64, f64::max);
        assert!(min > -1e-12 * max.max(1.0), "negative eigenvalue {min:.3e}");
    }

    #[test]
    fn factored_rhs_matches_independent_accumulation() {
        // Assemble F̂ = (1/n) Σ T_sᵀ Q J(û)(Q û) by per-sample loops with no
        // intermediate matrices, then compare blockwise: the α rows must equal
        // Ĵ¹²β exactly (no symmetrization there), the β rows must equal the
        // raw coupling product S β.
        let (net, theta) = wave_net();
        let model = Wave::benchmark();
        let samples = grid(40);
        let sys = assemble_weighted(&net, &theta, &model, &samples).unwrap();
        let ham = model.hamiltonian().unwrap();

        let m = net.output_dim();
        let p = sys.dim();
        let mut direct = DVector::zeros(p);
        let req = JetRequest::spatial(1).with_param_grad();
        for x in samples.iter() {
            let jet = net.eval_jet(&theta, x, req).unwrap();
            let q = ham.q_matrix(&jet.value);
            // Weighted state field Q û with its spatial derivative Q ∂û.
            let qu = &q * &jet.value;
            let qdu = &q * jet.du();
            let applied = ham.j_apply(&jet, &qu, &qdu);
            let weighted = &q * &applied; // T_sᵀ Q (J Q û): weight re-applied
            let grad = jet.grad_theta();
            for (c, &f) in sys.perm.iter().enumerate() {
                let mut acc = 0.0;
                for r in 0..m {
                    acc += grad[(r, f)] * weighted[r];
                }
                direct[c] += acc;
            }
        }
        direct /= samples.len() as f64;

        let prime = sys.to_prime(&theta);
        let beta = prime.rows(sys.n_alpha, sys.n_beta).into_owned();
        let alpha_block = (&sys.j12 * &beta) - direct.rows(0, sys.n_alpha);
        let beta_block = (&sys.s_raw * &beta) - direct.rows(sys.n_alpha, sys.n_beta);
        assert!(alpha_block.amax() < 1e-12, "α rows differ {:.3e}", alpha_block.amax());
        assert!(beta_block.amax() < 1e-12, "β rows differ {:.3e}", beta_block.amax());
    }

    #[test]
    fn invariant_gradient_identity_holds_with_shared_samples() {
        let (net, theta) = wave_net();
        let model = Wave::benchmark();
        let samples = grid(56);
        let sys = assemble_weighted(&net, &theta, &model, &samples).unwrap();
        let res = hamiltonian_gradient_residual(&net, &theta, &model, &samples, &sys).unwrap();
        assert!(res < 1e-12, "gradient identity residual {res:.3e}");

        // Finite-difference oracle on the sampled invariant itself.
        let ham = model.hamiltonian().unwrap();
        let sampled_h = |th: &ParamVector| -> f64 {
            let mut acc = 0.0;
            for x in samples.iter() {
                let jet = net.eval_jet(th, x, JetRequest::value()).unwrap();
                acc += ham.density(&jet.value);
            }
            acc / samples.len() as f64
        };
        let assembled = sys.hamiltonian_gradient(&sys.to_prime(&theta));
        let h = 1e-6;
        for &flat in [0usize, 7, sys.perm[sys.n_alpha], *sys.perm.last().unwrap()].iter() {
            let mut tp = theta.clone();
            tp[flat] += h;
            let mut tm = theta.clone();
            tm[flat] -= h;
            let fd = (sampled_h(&tp) - sampled_h(&tm)) / (2.0 * h);
            let c = sys.perm.iter().position(|&f| f == flat).unwrap();
            assert!(
                (assembled[c] - fd).abs() < 1e-6 * (1.0 + fd.abs()),
                "component {flat}: assembled {:.6e} vs fd {fd:.6e}",
                assembled[c]
            );
        }
    }

    #[test]
    fn solved_velocity_conserves_the_sampled_invariant() {
        let (net, theta) = wave_net();
        let model = Wave::benchmark();
        let samples = grid(64);
        let sys = assemble_weighted(&net, &theta, &model, &samples).unwrap();
        let prime = sys.to_prime(&theta);
        let vel = solve_weighted(&sys, &prime, 1e-12).unwrap();
        let gradient = sys.hamiltonian_gradient(&prime);
        let drift = gradient.dot(&vel).abs();
        let scale = gradient.norm() * vel.norm();
        assert!(drift <= 1e-9 * scale.max(1e-300), "invariant drift rate {drift:.3e}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn skewness_and_rhs_shape_hold_for_random_separable_nets(
            seed in 0u64..1000,
            n_basis in 1usize..4,
        ) {
            let mut phases = Vec::new();
            for i in 0..n_basis {
                phases.push(seed as f64 * 0.01 + i as f64 * 0.4);
            }
            let net = SeparableSine::new(n_basis, 1, phases);
            let theta = DVector::from_fn(net.param_count(), |i, _| {
                0.3 + ((seed as f64 + i as f64) * 0.7).sin() * 0.5
            });
            let model = Burgers::benchmark();
            let samples = grid(24);
            let sys = assemble_weighted(&net, &theta, &model, &samples).unwrap();
            let j = sys.j_matrix();
            prop_assert_eq!((&j + j.transpose()).amax(), 0.0);
            let rhs = sys.rhs(&sys.to_prime(&theta));
            prop_assert_eq!(rhs.len(), sys.dim());
        }
    }
}
