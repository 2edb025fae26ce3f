//! Tangent-space projection of the dynamics: least-squares assembly and the
//! equality-constrained, regularized solve.
//!
//! At parameter θ the update direction solves
//! `min_δ ‖Â δ − b̂‖² + reg·‖δ‖²  s.t.  ĝᵀ δ = 0`,
//! where the rows of `Â` are `∇_θ u(θ, x_s)ᵀ`, `b̂` stacks the right-hand side
//! `f(x_s, u)`, and the columns of `ĝ` are gradients of sampled conserved
//! quantities. Constraints are eliminated by Householder reflections (a QR
//! null-space method); the reduced system is solved in normal form with the
//! Tikhonov term keeping near-singular tangent Grams well-posed.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::models::{ModelsError, PdeModel, SampleSet};
use crate::params::{JetRequest, ParamVector, Parametrization, ParamsError};

#[derive(Debug, Error)]
pub enum GalerkinError {
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Models(#[from] ModelsError),
    #[error("non-finite jet or right-hand side at sample {index} (x = {x:?})")]
    NonFiniteSample { index: usize, x: Vec<f64> },
    #[error("assembled system contains non-finite entries")]
    NonFiniteSystem,
    #[error("regularization must be non-negative, got {0}")]
    InvalidRegularization(f64),
    #[error("degenerate system: unresolved right-hand side in a null direction (reg = 0)")]
    Degenerate,
    #[error("empty sample set")]
    EmptySampleSet,
}

/// Dense least-squares data: `a` has one row per (sample, component) pair in
/// sample-major order; `b` stacks the right-hand side the same way.
pub struct LsqSystem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// Normal-form data accumulated without materializing `A`:
/// `gram = Σ AᵀA`, `rhs = Σ Aᵀb̂`, plus `‖b̂‖²` for residual reporting.
pub struct NormalSystem {
    pub gram: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub rows: usize,
    pub b_norm_sq: f64,
}

/// Solution of the constrained least-squares problem plus diagnostics.
pub struct SolveReport {
    pub delta: DVector<f64>,
    /// Linearly dependent constraint columns dropped during elimination.
    pub dropped_constraints: usize,
    /// `max_i |g_iᵀ δ|` over the kept constraints.
    pub constraint_violation: f64,
}

/// Assemble the dense least-squares pair `(Â, b̂)` over the sample set.
pub fn assemble_lsq(
    net: &dyn Parametrization,
    theta: &ParamVector,
    model: &dyn PdeModel,
    samples: &SampleSet,
) -> Result<LsqSystem, GalerkinError> {
    if samples.is_empty() {
        return Err(GalerkinError::EmptySampleSet);
    }
    let m = net.output_dim();
    let p = net.param_count();
    let mut a = DMatrix::zeros(samples.len() * m, p);
    let mut b = DVector::zeros(samples.len() * m);
    let req = JetRequest::spatial(model.spatial_order()).with_param_grad();
    for (i, x) in samples.iter().enumerate() {
        let jet = net.eval_jet(theta, x, req)?;
        let f = model.rhs(x, &jet);
        if !jet.is_finite() || !f.iter().all(|v| v.is_finite()) {
            return Err(GalerkinError::NonFiniteSample { index: i, x: x.to_vec() });
        }
        a.view_mut((i * m, 0), (m, p)).copy_from(jet.grad_theta());
        b.rows_mut(i * m, m).copy_from(&f);
    }
    Ok(LsqSystem { a, b })
}

/// Sampled Galerkin operators `M̂ = (1/n) Σ ∇_θu ∇_θuᵀ`, `F̂ = (1/n) Σ ∇_θu·f`.
pub fn assemble_mf(
    net: &dyn Parametrization,
    theta: &ParamVector,
    model: &dyn PdeModel,
    samples: &SampleSet,
) -> Result<(DMatrix<f64>, DVector<f64>), GalerkinError> {
    let sys = assemble_normal(net, theta, model, samples)?;
    let n = samples.len() as f64;
    Ok((sys.gram / n, sys.rhs / n))
}

/// Streamed normal-form assembly. Points are processed in fixed-size chunks;
/// each chunk's rows go through one strided `AᵀA` product and the partial
/// results are combined in chunk order, so the outcome is bitwise identical
/// for any number of worker threads.
pub fn assemble_normal(
    net: &dyn Parametrization,
    theta: &ParamVector,
    model: &dyn PdeModel,
    samples: &SampleSet,
) -> Result<NormalSystem, GalerkinError> {
    const CHUNK: usize = 1024;
    if samples.is_empty() {
        return Err(GalerkinError::EmptySampleSet);
    }
    let m = net.output_dim();
    let p = net.param_count();
    let d = samples.dim();
    let req = JetRequest::spatial(model.spatial_order()).with_param_grad();

    struct Partial {
        gram: Vec<f64>,
        rhs: DVector<f64>,
        b_norm_sq: f64,
    }

    let partials: Vec<Result<Partial, GalerkinError>> = samples
        .coords()
        .par_chunks(CHUNK * d)
        .enumerate()
        .map(|(ci, chunk)| {
            let n_pts = chunk.len() / d;
            let rows = n_pts * m;
            // Row-major (rows × p) block of A for this chunk.
            let mut block = vec![0.0; rows * p];
            let mut bvec = vec![0.0; rows];
            for (i, x) in chunk.chunks_exact(d).enumerate() {
                let jet = net.eval_jet(theta, x, req)?;
                let f = model.rhs(x, &jet);
                let cheap_ok = jet.value.iter().all(|v| v.is_finite())
                    && jet.du.as_ref().is_none_or(|du| du.iter().all(|v| v.is_finite()))
                    && f.iter().all(|v| v.is_finite());
                if !cheap_ok {
                    return Err(GalerkinError::NonFiniteSample {
                        index: ci * CHUNK + i,
                        x: x.to_vec(),
                    });
                }
                let grad = jet.grad_theta();
                for r in 0..m {
                    let row = &mut block[(i * m + r) * p..(i * m + r + 1) * p];
                    for c in 0..p {
                        row[c] = grad[(r, c)];
                    }
                    bvec[i * m + r] = f[r];
                }
            }
            let mut gram = vec![0.0; p * p];
            // gram = blockᵀ · block with the transpose expressed by strides.
            unsafe {
                matrixmultiply::dgemm(
                    p,
                    rows,
                    p,
                    1.0,
                    block.as_ptr(),
                    1,
                    p as isize,
                    block.as_ptr(),
                    p as isize,
                    1,
                    0.0,
                    gram.as_mut_ptr(),
                    p as isize,
                    1,
                );
            }
            let mut rhs = DVector::zeros(p);
            let mut b_norm_sq = 0.0;
            for (row, &bi) in block.chunks_exact(p).zip(&bvec) {
                if bi != 0.0 {
                    for c in 0..p {
                        rhs[c] += row[c] * bi;
                    }
                }
                b_norm_sq += bi * bi;
            }
            Ok(Partial { gram, rhs, b_norm_sq })
        })
        .collect();

    let mut gram = vec![0.0; p * p];
    let mut rhs = DVector::zeros(p);
    let mut b_norm_sq = 0.0;
    for part in partials {
        let part = part?;
        for (acc, v) in gram.iter_mut().zip(&part.gram) {
            *acc += v;
        }
        rhs += part.rhs;
        b_norm_sq += part.b_norm_sq;
    }
    // AᵀA is symmetric, so the row-major buffer can be read column-major.
    let gram = DMatrix::from_column_slice(p, p, &gram);
    if !gram.iter().all(|v| v.is_finite()) || !rhs.iter().all(|v| v.is_finite()) {
        // A parameter gradient went non-finite without touching value/du;
        // rescan with the full check to name the offending point.
        for (i, x) in samples.iter().enumerate() {
            let jet = net.eval_jet(theta, x, req)?;
            if !jet.is_finite() {
                return Err(GalerkinError::NonFiniteSample { index: i, x: x.to_vec() });
            }
        }
        return Err(GalerkinError::NonFiniteSystem);
    }
    Ok(NormalSystem { gram, rhs, rows: samples.len() * m, b_norm_sq })
}

/// Solve `min ‖Aδ − b‖² + reg‖δ‖²` subject to `gᵀδ = 0`.
///
/// `g` has one column per constraint. `reg` is the absolute Tikhonov
/// coefficient; pass 0 for the unregularized problem (which errors out if the
/// system is degenerate along an unresolved direction).
pub fn solve_constrained_lsq(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    g: &DMatrix<f64>,
    reg: f64,
) -> Result<SolveReport, GalerkinError> {
    let sys = NormalSystem {
        gram: a.tr_mul(a),
        rhs: a.tr_mul(b),
        rows: a.nrows(),
        b_norm_sq: b.norm_squared(),
    };
    solve_constrained_normal(&sys, g, reg)
}

/// Normal-form twin of [`solve_constrained_lsq`] for streamed assembly.
pub fn solve_constrained_normal(
    sys: &NormalSystem,
    g: &DMatrix<f64>,
    reg: f64,
) -> Result<SolveReport, GalerkinError> {
    if !(reg >= 0.0) {
        return Err(GalerkinError::InvalidRegularization(reg));
    }
    let p = sys.gram.nrows();
    assert_eq!(g.nrows(), p, "constraint gradient length must match parameter count");

    let mut c = sys.gram.clone();
    let mut d = sys.rhs.clone();

    // Eliminate constraints: Householder reflections H_1…H_r with
    // (H_r…H_1) g upper-triangular; rank-deficient columns are dropped.
    let mut reflections: Vec<DVector<f64>> = Vec::new();
    let mut dropped = 0;
    let scale = g
        .column_iter()
        .map(|col| col.norm())
        .fold(0.0f64, f64::max);
    for col in 0..g.ncols() {
        let rank = reflections.len();
        if rank == p {
            dropped += 1;
            continue;
        }
        let mut gc = g.column(col).into_owned();
        for v in &reflections {
            reflect(&mut gc, v);
        }
        let tail_norm = gc.rows(rank, p - rank).norm();
        if tail_norm <= 1e-13 * scale.max(f64::MIN_POSITIVE) {
            dropped += 1;
            continue;
        }
        // Householder vector zeroing gc below `rank`.
        let mut v = DVector::zeros(p);
        v.rows_mut(rank, p - rank).copy_from(&gc.rows(rank, p - rank));
        let alpha = -gc[rank].signum() * tail_norm;
        v[rank] -= alpha;
        let vnorm = v.norm();
        if vnorm > 0.0 {
            v /= vnorm;
            reflect_sym(&mut c, &v);
            reflect(&mut d, &v);
            reflections.push(v);
        } else {
            // Column already triangular: nothing to reflect.
            reflections.push(v);
        }
    }
    let r = reflections.len();

    // Reduced solve on the trailing (p - r) coordinates.
    let free = p - r;
    let mut delta = DVector::zeros(p);
    if free > 0 {
        let mut cff = c.view((r, r), (free, free)).into_owned();
        for i in 0..free {
            cff[(i, i)] += reg;
        }
        let dff = d.rows(r, free).into_owned();
        let y = match nalgebra::Cholesky::new(cff.clone()) {
            Some(chol) => chol.solve(&dff),
            None => pseudo_solve(&cff, &dff, reg == 0.0)?,
        };
        delta.rows_mut(r, free).copy_from(&y);
    }
    // Map back through the reflections in reverse order.
    for v in reflections.iter().rev() {
        reflect(&mut delta, v);
    }

    let mut violation = 0.0f64;
    for col in g.column_iter() {
        violation = violation.max(col.dot(&delta).abs());
    }
    if !delta.iter().all(|v| v.is_finite()) {
        return Err(GalerkinError::NonFiniteSystem);
    }
    Ok(SolveReport { delta, dropped_constraints: dropped, constraint_violation: violation })
}

/// Root-mean-square residual `‖Aδ − b‖/√rows` recovered from normal-form data.
pub fn residual_rms(sys: &NormalSystem, delta: &DVector<f64>) -> f64 {
    let quad = (&sys.gram * delta).dot(delta) - 2.0 * sys.rhs.dot(delta) + sys.b_norm_sq;
    (quad.max(0.0) / sys.rows as f64).sqrt()
}

/// Apply `H = I - 2vvᵀ` (unit `v`) to a vector in place.
fn reflect(x: &mut DVector<f64>, v: &DVector<f64>) {
    let t = 2.0 * v.dot(x);
    if t != 0.0 {
        x.axpy(-t, v, 1.0);
    }
}

/// Apply `H C H` for symmetric `C` in place.
fn reflect_sym(c: &mut DMatrix<f64>, v: &DVector<f64>) {
    let w = &*c * v; // C v
    let vcv = v.dot(&w);
    // C ← C - 2 v wᵀ - 2 w vᵀ + 4 (vᵀ C v) v vᵀ
    c.ger(4.0 * vcv, v, v, 1.0);
    c.ger(-2.0, v, &w, 1.0);
    c.ger(-2.0, &w, v, 1.0);
}

/// Eigenvalue-cutoff pseudo-inverse solve for a symmetric PSD matrix. With
/// `strict` set (reg = 0), a right-hand side with weight in the discarded
/// null space is an error instead of being silently projected away.
fn pseudo_solve(
    c: &DMatrix<f64>,
    d: &DVector<f64>,
    strict: bool,
) -> Result<DVector<f64>, GalerkinError> {
    let eig = c.clone().symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
    let cutoff = max_ev * 1e-13;
    let coords = eig.eigenvectors.tr_mul(d);
    let mut y = DVector::zeros(d.len());
    for i in 0..coords.len() {
        if eig.eigenvalues[i] > cutoff {
            y[i] = coords[i] / eig.eigenvalues[i];
        } else if strict && coords[i].abs() > 1e-10 * d.norm().max(f64::MIN_POSITIVE) {
            return Err(GalerkinError::Degenerate);
        }
    }
    Ok(&eig.eigenvectors * y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Burgers, Domain, SampleSet};
    use crate::params::{Feature, LinearFeatures};

    fn sin_cos_net() -> LinearFeatures {
        let pi = std::f64::consts::PI;
        LinearFeatures::new(
            1,
            vec![
                Feature::Sin { freq: pi, axis: 0, phase: 0.0 },
                Feature::Sin { freq: pi, axis: 0, phase: 0.5 * pi }, // cos(πx)
            ],
        )
    }

    #[test]
    fn dense_assembly_for_linear_parametrization_by_hand() {
        let net = LinearFeatures::const_plus_sin_pi();
        let theta = DVector::from_column_slice(&[0.3, 0.8]);
        let model = Burgers::benchmark();
        let samples = SampleSet::from_coords(1, vec![0.25, -0.5]);
        let sys = assemble_lsq(&net, &theta, &model, &samples).unwrap();
        // Rows of A are the feature values at each sample.
        let pi = std::f64::consts::PI;
        for (i, &x) in [0.25, -0.5].iter().enumerate() {
            assert!((sys.a[(i, 0)] - 1.0).abs() < 1e-15);
            assert!((sys.a[(i, 1)] - (pi * x).sin()).abs() < 1e-15);
            let u = 0.3 + 0.8 * (pi * x).sin();
            let ux = 0.8 * pi * (pi * x).cos();
            assert!((sys.b[i] + u * ux).abs() < 1e-14);
        }
    }

    #[test]
    fn gram_of_orthogonal_features_is_scaled_identity() {
        let net = sin_cos_net();
        let theta = DVector::from_column_slice(&[0.5, -0.2]);
        let model = Burgers::benchmark();
        let dom = Domain::symmetric(1.0, 1);
        let samples = SampleSet::equidistant(&dom, &[16], 0.0);
        let (m_hat, _) = assemble_mf(&net, &theta, &model, &samples).unwrap();
        // Equidistant means of sin², cos², sin·cos over a full period.
        assert!((m_hat[(0, 0)] - 0.5).abs() < 1e-14);
        assert!((m_hat[(1, 1)] - 0.5).abs() < 1e-14);
        assert!(m_hat[(0, 1)].abs() < 1e-14);
    }

    #[test]
    fn streamed_normal_form_matches_dense_products() {
        let net = sin_cos_net();
        let theta = DVector::from_column_slice(&[0.9, 0.4]);
        let model = Burgers::benchmark();
        let dom = Domain::symmetric(1.0, 1);
        let samples = SampleSet::equidistant(&dom, &[37], 0.25);
        let dense = assemble_lsq(&net, &theta, &model, &samples).unwrap();
        let sys = assemble_normal(&net, &theta, &model, &samples).unwrap();
        assert!((&sys.gram - dense.a.tr_mul(&dense.a)).amax() < 1e-13);
        assert!((&sys.rhs - dense.a.tr_mul(&dense.b)).amax() < 1e-13);
        assert!((sys.b_norm_sq - dense.b.norm_squared()).abs() < 1e-13);
    }

    #[test]
    fn unit_constraint_pins_first_coordinate() {
        // A = I₂, b = (1, 1), g = e₁, reg = 0 → δ = (0, 1).
        let a = DMatrix::identity(2, 2);
        let b = DVector::from_column_slice(&[1.0, 1.0]);
        let g = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let sol = solve_constrained_lsq(&a, &b, &g, 0.0).unwrap();
        assert!((sol.delta[0]).abs() < 1e-14);
        assert!((sol.delta[1] - 1.0).abs() < 1e-14);
        assert_eq!(sol.dropped_constraints, 0);
    }

    #[test]
    fn no_constraints_reduces_to_plain_least_squares() {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.5, -0.3, 1.2, 0.8, -0.7, 0.2, 0.1]);
        let b = DVector::from_column_slice(&[1.0, -0.5, 0.25, 0.75]);
        let g = DMatrix::zeros(2, 0);
        let sol = solve_constrained_lsq(&a, &b, &g, 0.0).unwrap();
        let oracle = a.clone().svd(true, true).solve(&b, 1e-12).unwrap();
        assert!((&sol.delta - oracle).amax() < 1e-10);
    }

    #[test]
    fn regularized_solution_approaches_constrained_minimizer() {
        // Well-conditioned instance; the KKT system is the oracle.
        let a = DMatrix::from_fn(8, 4, |i, j| {
            if i % 4 == j { 2.0 } else { 0.4 * ((3 * i + 5 * j) as f64 * 1.3).sin() }
        });
        let b = DVector::from_fn(8, |i, _| ((i as f64) * 0.37).cos());
        let g = DMatrix::from_fn(4, 1, |i, _| 1.0 + i as f64 * 0.25);
        let sol = solve_constrained_lsq(&a, &b, &g, 1e-12).unwrap();

        let p = 4;
        let mut kkt = DMatrix::zeros(p + 1, p + 1);
        kkt.view_mut((0, 0), (p, p)).copy_from(&a.tr_mul(&a));
        kkt.view_mut((0, p), (p, 1)).copy_from(&g);
        kkt.view_mut((p, 0), (1, p)).copy_from(&g.transpose());
        let mut rhs = DVector::zeros(p + 1);
        rhs.rows_mut(0, p).copy_from(&a.tr_mul(&b));
        let kkt_sol = kkt.lu().solve(&rhs).unwrap();
        assert!((&sol.delta - kkt_sol.rows(0, p)).amax() < 1e-8);
        assert!(sol.constraint_violation <= 1e-11 * g.norm() * sol.delta.norm().max(1.0));
    }

    #[test]
    fn dependent_constraint_columns_are_dropped() {
        let a = DMatrix::from_fn(6, 3, |i, j| ((i + 2 * j) as f64 * 0.53).sin());
        let b = DVector::from_fn(6, |i, _| (i as f64 * 0.29).cos());
        let g1 = DMatrix::from_column_slice(3, 1, &[1.0, -0.5, 2.0]);
        let mut g2 = DMatrix::zeros(3, 2);
        g2.set_column(0, &g1.column(0));
        g2.set_column(1, &(g1.column(0) * 3.0)); // dependent copy
        let s1 = solve_constrained_lsq(&a, &b, &g1, 1e-10).unwrap();
        let s2 = solve_constrained_lsq(&a, &b, &g2, 1e-10).unwrap();
        assert_eq!(s2.dropped_constraints, 1);
        assert!((&s1.delta - &s2.delta).amax() < 1e-12);
    }

    #[test]
    fn residual_rms_matches_direct_norm() {
        let a = DMatrix::from_fn(5, 2, |i, j| ((i + j) as f64 * 0.41).sin());
        let b = DVector::from_fn(5, |i, _| 0.3 + i as f64 * 0.11);
        let g = DMatrix::zeros(2, 0);
        let sol = solve_constrained_lsq(&a, &b, &g, 1e-9).unwrap();
        let sys = NormalSystem {
            gram: a.tr_mul(&a),
            rhs: a.tr_mul(&b),
            rows: 5,
            b_norm_sq: b.norm_squared(),
        };
        let direct = ((&a * &sol.delta) - &b).norm() / (5.0f64).sqrt();
        assert!((residual_rms(&sys, &sol.delta) - direct).abs() < 1e-12);
    }

    #[test]
    fn negative_regularization_is_rejected() {
        let a = DMatrix::identity(2, 2);
        let b = DVector::zeros(2);
        let g = DMatrix::zeros(2, 0);
        assert!(matches!(
            solve_constrained_lsq(&a, &b, &g, -1.0),
            Err(GalerkinError::InvalidRegularization(_))
        ));
    }

    #[test]
    fn jointly_degenerate_system_errors_without_regularization() {
        // A annihilates e₂ while b still asks for motion there.
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        let b = DVector::from_column_slice(&[1.0, -1.0]);
        let g = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        // After eliminating g, the free direction is e₂ with zero Gram but a
        // right-hand side only in the null space: d = Aᵀb = (0, 0) here, so
        // craft a truly inconsistent case instead via the raw normal form.
        let sys = NormalSystem {
            gram: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            rhs: DVector::from_column_slice(&[0.5, 0.3]),
            rows: 2,
            b_norm_sq: 1.0,
        };
        assert!(matches!(
            solve_constrained_normal(&sys, &DMatrix::zeros(2, 0), 0.0),
            Err(GalerkinError::Degenerate)
        ));
        // With regularization the same data is solvable.
        assert!(solve_constrained_normal(&sys, &DMatrix::zeros(2, 0), 1e-8).is_ok());
        let _ = (a, b, g);
    }
}
