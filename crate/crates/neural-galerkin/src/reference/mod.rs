//! Pseudo-spectral reference solutions on periodic domains.
//!
//! The benchmark equations are integrated with a classical RK4 step in
//! Fourier space; quadratic nonlinearities are formed pointwise in physical
//! space and filtered with the 2/3 rule so that no aliased content enters
//! the retained band. Frames are stored at caller-requested output times and
//! can be evaluated on any equidistant grid by exact trigonometric
//! interpolation (spectrum phase shift plus padded inverse transform) or at
//! arbitrary points by direct mode summation.

pub mod fft;

use fft::GridFft;
use rustfft::num_complex::Complex64;
use thiserror::Error;

use crate::models::{Domain, PdeModel, SampleSet};

#[derive(Debug, Error)]
pub enum ReferenceError {
    #[error("no spectral scheme for model '{0}'")]
    UnsupportedModel(String),
    #[error("grid of {got} points per axis is too small, need at least {need}")]
    GridTooSmall { need: usize, got: usize },
    #[error("output time {0} is not a multiple of the reference step")]
    TimeNotOnStep(f64),
    #[error("output times must be sorted, nonnegative, and within the run")]
    InvalidOutputTimes,
    #[error(
        "step size {dt:.3e} exceeds the stability limit {limit:.3e} \
         (speed {speed:.3}, finest retained wavenumber {k_max:.3})"
    )]
    Cfl { dt: f64, limit: f64, speed: f64, k_max: f64 },
    #[error("reference state became non-finite at step {step}")]
    NonFinite { step: usize },
}

/// Spectral right-hand sides for the supported benchmark equations.
#[derive(Debug, Clone, Copy)]
pub enum Equation {
    /// `u_t = −u u_x`, integrated in conservative form `−(u²/2)_x`.
    Burgers,
    /// `ρ_t = −ρ̄ v_x`, `v_t = −(c²/ρ̄) ρ_x`.
    Wave { c: f64, rho_ref: f64 },
    /// `h_t = −∇h·∇φ − (1+h)Δφ`, `φ_t = −½‖∇φ‖² − h`.
    ShallowWater,
}

impl Equation {
    /// Pick the scheme matching a model by name, with benchmark parameters.
    pub fn for_model(model: &dyn PdeModel) -> Result<Equation, ReferenceError> {
        match model.name() {
            "burgers" => Ok(Equation::Burgers),
            "wave" => Ok(Equation::Wave { c: 1.0, rho_ref: 1.0 }),
            "shallow_water" => Ok(Equation::ShallowWater),
            other => Err(ReferenceError::UnsupportedModel(other.to_string())),
        }
    }

    fn field_dim(&self) -> usize {
        match self {
            Equation::Burgers => 1,
            Equation::Wave { .. } | Equation::ShallowWater => 2,
        }
    }

    fn spatial_dim(&self) -> usize {
        match self {
            Equation::Burgers | Equation::Wave { .. } => 1,
            Equation::ShallowWater => 2,
        }
    }

    /// Whether the right-hand side forms pointwise products (and therefore
    /// needs the dealiasing filter).
    fn nonlinear(&self) -> bool {
        !matches!(self, Equation::Wave { .. })
    }

    /// Conservative estimate of the fastest signal speed in the initial data.
    fn max_speed(&self, fields: &[Vec<f64>]) -> f64 {
        let sup = |f: &Vec<f64>| f.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        match self {
            Equation::Burgers => sup(&fields[0]).max(1e-3),
            Equation::Wave { c, .. } => c.abs(),
            Equation::ShallowWater => {
                // Gravity-wave speed √(1 + h) plus any initial advection.
                (1.0 + sup(&fields[0])).sqrt() + sup(&fields[1])
            }
        }
    }

    /// Spectral right-hand side; `spec` holds one spectrum per component.
    fn rhs(&self, fft: &GridFft, spec: &[Vec<Complex64>]) -> Vec<Vec<Complex64>> {
        match *self {
            Equation::Burgers => {
                let u = fft.inverse(&spec[0]);
                let w: Vec<f64> = u.iter().map(|&v| 0.5 * v * v).collect();
                let mut w_hat = fft.forward(&w);
                fft.dealias(&mut w_hat);
                let mut d = fft.derivative(&w_hat, 0);
                for c in &mut d {
                    *c = -*c;
                }
                vec![d]
            }
            Equation::Wave { c, rho_ref } => {
                let dv = fft.derivative(&spec[1], 0);
                let drho = fft.derivative(&spec[0], 0);
                let rho_rhs: Vec<Complex64> = dv.iter().map(|&z| -rho_ref * z).collect();
                let v_rhs: Vec<Complex64> =
                    drho.iter().map(|&z| -(c * c / rho_ref) * z).collect();
                vec![rho_rhs, v_rhs]
            }
            Equation::ShallowWater => {
                let h = fft.inverse(&spec[0]);
                let hx = fft.inverse(&fft.derivative(&spec[0], 0));
                let hy = fft.inverse(&fft.derivative(&spec[0], 1));
                let px = fft.inverse(&fft.derivative(&spec[1], 0));
                let py = fft.inverse(&fft.derivative(&spec[1], 1));
                let lap = fft.inverse(&fft.laplacian(&spec[1]));
                let n = h.len();
                let mut h_rhs = vec![0.0; n];
                let mut p_rhs = vec![0.0; n];
                for i in 0..n {
                    h_rhs[i] = -(hx[i] * px[i] + hy[i] * py[i]) - (1.0 + h[i]) * lap[i];
                    p_rhs[i] = -0.5 * (px[i] * px[i] + py[i] * py[i]) - h[i];
                }
                let mut h_hat = fft.forward(&h_rhs);
                let mut p_hat = fft.forward(&p_rhs);
                fft.dealias(&mut h_hat);
                fft.dealias(&mut p_hat);
                vec![h_hat, p_hat]
            }
        }
    }
}

/// Stored reference trajectory: physical-space frames at the output times.
#[derive(Debug, Clone)]
pub struct ReferenceSolution {
    pub model: String,
    pub domain: Domain,
    pub n: Vec<usize>,
    pub field_dim: usize,
    pub times: Vec<f64>,
    /// One frame per output time, component-major: `frame[c * points + j]`.
    frames: Vec<Vec<f64>>,
    lengths: Vec<f64>,
}

impl ReferenceSolution {
    /// Rebuild a solution from stored frames (for example a cache file).
    /// `frames` are component-major physical values on the solver grid.
    pub fn from_parts(
        model: &dyn PdeModel,
        n: Vec<usize>,
        times: Vec<f64>,
        frames: Vec<Vec<f64>>,
    ) -> Self {
        let domain = model.domain();
        let pts: usize = n.iter().product();
        let m = model.field_dim();
        assert_eq!(times.len(), frames.len());
        assert!(frames.iter().all(|f| f.len() == m * pts));
        let lengths = domain.lengths();
        ReferenceSolution {
            model: model.name().to_string(),
            domain,
            n,
            field_dim: m,
            times,
            frames,
            lengths,
        }
    }

    pub fn points_per_frame(&self) -> usize {
        self.n.iter().product()
    }

    pub fn frame(&self, i: usize) -> &[f64] {
        &self.frames[i]
    }

    /// Index of the stored frame at time `t`, if one matches to `tol`.
    pub fn index_of_time(&self, t: f64, tol: f64) -> Option<usize> {
        self.times.iter().position(|&s| (s - t).abs() <= tol)
    }

    /// Mean of one component over the solver grid (the conserved grid mass).
    pub fn grid_mean(&self, frame: usize, component: usize) -> f64 {
        let pts = self.points_per_frame();
        let block = &self.frames[frame][component * pts..(component + 1) * pts];
        block.iter().sum::<f64>() / pts as f64
    }

    /// Evaluate a frame on an equidistant grid of `per_axis` points offset by
    /// `offset` target cells, by exact trigonometric interpolation. The
    /// result is component-major like [`Self::frame`], point order matching
    /// [`SampleSet::equidistant`].
    pub fn sample_grid(&self, frame: usize, per_axis: &[usize], offset: f64) -> Vec<f64> {
        assert_eq!(per_axis.len(), self.n.len());
        let src = GridFft::new(&self.n, &self.lengths);
        let dst = GridFft::new(per_axis, &self.lengths);
        let src_pts = self.points_per_frame();
        let dst_pts: usize = per_axis.iter().product();
        let mut out = vec![0.0; self.field_dim * dst_pts];
        let two_pi = 2.0 * std::f64::consts::PI;
        for comp in 0..self.field_dim {
            let block = &self.frames[frame][comp * src_pts..(comp + 1) * src_pts];
            let spec = src.forward(block);
            // Scatter modes into the destination layout with the offset
            // phase; modes absent from either grid are dropped (the source
            // is band-limited well inside both).
            let mut dst_spec = vec![Complex64::new(0.0, 0.0); dst_pts];
            let d = self.n.len();
            let mut idx = vec![0usize; d];
            for flat in 0..src_pts {
                let mut ok = true;
                let mut dst_flat = 0usize;
                let mut phase = 0.0;
                for axis in 0..d {
                    let m = src.mode(axis, idx[axis]);
                    let n_src = self.n[axis] as i64;
                    let n_dst = per_axis[axis] as i64;
                    // Drop the source Nyquist slot and anything the target
                    // cannot represent unambiguously.
                    if (self.n[axis] % 2 == 0 && idx[axis] == self.n[axis] / 2)
                        || 2 * m.abs() >= n_dst
                    {
                        ok = false;
                        break;
                    }
                    let slot = m.rem_euclid(n_dst) as usize;
                    dst_flat = dst_flat * per_axis[axis] + slot;
                    phase += two_pi * m as f64 * offset / n_dst as f64;
                    let _ = n_src;
                }
                if ok {
                    dst_spec[dst_flat] =
                        spec[flat] * Complex64::new(phase.cos(), phase.sin());
                }
                for axis in (0..d).rev() {
                    idx[axis] += 1;
                    if idx[axis] < self.n[axis] {
                        break;
                    }
                    idx[axis] = 0;
                }
            }
            let vals = dst.inverse(&dst_spec);
            out[comp * dst_pts..(comp + 1) * dst_pts].copy_from_slice(&vals);
        }
        out
    }

    /// Evaluate a frame at arbitrary points by direct mode summation
    /// (intended for small point sets).
    pub fn sample_points(&self, frame: usize, samples: &SampleSet) -> Vec<f64> {
        let src = GridFft::new(&self.n, &self.lengths);
        let src_pts = self.points_per_frame();
        let d = self.n.len();
        let mut out = vec![0.0; self.field_dim * samples.len()];
        for comp in 0..self.field_dim {
            let block = &self.frames[frame][comp * src_pts..(comp + 1) * src_pts];
            let spec = src.forward(block);
            for (pi, x) in samples.iter().enumerate() {
                let mut acc = 0.0;
                let mut idx = vec![0usize; d];
                for flat in 0..src_pts {
                    let c = spec[flat];
                    if c.norm_sqr() > 1e-64 {
                        let mut arg = 0.0;
                        let mut nyquist = false;
                        for axis in 0..d {
                            if self.n[axis] % 2 == 0 && idx[axis] == self.n[axis] / 2 {
                                nyquist = true;
                                break;
                            }
                            arg += src.wavenumber(axis, idx[axis])
                                * (x[axis] - self.domain.lo[axis]);
                        }
                        if !nyquist {
                            acc += c.re * arg.cos() - c.im * arg.sin();
                        }
                    }
                    for axis in (0..d).rev() {
                        idx[axis] += 1;
                        if idx[axis] < self.n[axis] {
                            break;
                        }
                        idx[axis] = 0;
                    }
                }
                out[comp * samples.len() + pi] = acc;
            }
        }
        out
    }
}

/// Integrate the reference equation and store frames at `output_times`.
///
/// Initial data is sampled from the model on the solver grid and band-limited
/// to the retained spectrum. Every output time must be a multiple of `dt`
/// (relative tolerance 1e-9) and `output_times` must be sorted ascending.
pub fn solve_reference(
    eq: Equation,
    model: &dyn PdeModel,
    n_per_axis: usize,
    dt: f64,
    output_times: &[f64],
) -> Result<ReferenceSolution, ReferenceError> {
    let d = eq.spatial_dim();
    if n_per_axis < 16 {
        return Err(ReferenceError::GridTooSmall { need: 16, got: n_per_axis });
    }
    let domain = model.domain();
    let lengths = domain.lengths();
    let n: Vec<usize> = vec![n_per_axis; d];
    let fft = GridFft::new(&n, &lengths);
    let m = eq.field_dim();

    // Output schedule → step indices.
    if output_times.windows(2).any(|w| w[1] <= w[0]) || output_times.iter().any(|&t| t < 0.0) {
        return Err(ReferenceError::InvalidOutputTimes);
    }
    let mut store_steps = Vec::with_capacity(output_times.len());
    for &t in output_times {
        let steps = t / dt;
        let rounded = steps.round();
        if (steps - rounded).abs() > 1e-9 * rounded.max(1.0) {
            return Err(ReferenceError::TimeNotOnStep(t));
        }
        store_steps.push(rounded as usize);
    }
    let last_step = store_steps.last().copied().unwrap_or(0);

    // Initial data on the solver grid, band-limited.
    let grid = SampleSet::equidistant(&domain, &n, 0.0);
    let mut phys: Vec<Vec<f64>> = vec![vec![0.0; fft.total()]; m];
    for (j, x) in grid.iter().enumerate() {
        let u0 = model.initial(x);
        for c in 0..m {
            phys[c][j] = u0[c];
        }
    }
    let mut spec: Vec<Vec<Complex64>> = phys.iter().map(|f| fft.forward(f)).collect();
    for s in &mut spec {
        fft.dealias(s);
    }
    let phys_filtered: Vec<Vec<f64>> = spec.iter().map(|s| fft.inverse(s)).collect();

    // Stability guard on the initial data (signal speeds do not grow for
    // these benchmarks over the configured horizons).
    let speed = eq.max_speed(&phys_filtered);
    let k_retained = if eq.nonlinear() { n_per_axis / 3 } else { n_per_axis / 2 };
    let k_max = (d as f64).sqrt() * 2.0 * std::f64::consts::PI * k_retained as f64
        / lengths.iter().cloned().fold(f64::INFINITY, f64::min);
    let limit = 2.8 / (speed * k_max).max(1e-300);
    if dt > limit {
        return Err(ReferenceError::Cfl { dt, limit, speed, k_max });
    }

    let mut sol = ReferenceSolution {
        model: model.name().to_string(),
        domain,
        n: n.clone(),
        field_dim: m,
        times: Vec::new(),
        frames: Vec::new(),
        lengths,
    };
    let mut store_iter = store_steps.iter().peekable();
    let mut maybe_store = |step: usize,
                           spec: &[Vec<Complex64>],
                           sol: &mut ReferenceSolution|
     -> Result<(), ReferenceError> {
        while store_iter.peek() == Some(&&step) {
            store_iter.next();
            let mut frame = Vec::with_capacity(m * fft.total());
            for s in spec {
                let f = fft.inverse(s);
                if !f.iter().all(|v| v.is_finite()) {
                    return Err(ReferenceError::NonFinite { step });
                }
                frame.extend_from_slice(&f);
            }
            sol.times.push(step as f64 * dt);
            sol.frames.push(frame);
        }
        Ok(())
    };

    maybe_store(0, &spec, &mut sol)?;
    for step in 1..=last_step {
        let k1 = eq.rhs(&fft, &spec);
        let s2 = axpy_state(&spec, &k1, 0.5 * dt);
        let k2 = eq.rhs(&fft, &s2);
        let s3 = axpy_state(&spec, &k2, 0.5 * dt);
        let k3 = eq.rhs(&fft, &s3);
        let s4 = axpy_state(&spec, &k3, dt);
        let k4 = eq.rhs(&fft, &s4);
        for c in 0..m {
            for i in 0..spec[c].len() {
                spec[c][i] += (k1[c][i] + 2.0 * (k2[c][i] + k3[c][i]) + k4[c][i])
                    * (dt / 6.0);
            }
        }
        if step % 64 == 0 && !spec[0].iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(ReferenceError::NonFinite { step });
        }
        maybe_store(step, &spec, &mut sol)?;
    }
    Ok(sol)
}

fn axpy_state(
    base: &[Vec<Complex64>],
    dir: &[Vec<Complex64>],
    scale: f64,
) -> Vec<Vec<Complex64>> {
    base.iter()
        .zip(dir)
        .map(|(b, d)| b.iter().zip(d).map(|(&x, &y)| x + y * scale).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Burgers, ShallowWater, Wave};

    #[test]
    fn burgers_grid_mass_is_conserved_exactly() {
        let model = Burgers::benchmark();
        let eq = Equation::for_model(&model).unwrap();
        let times: Vec<f64> = (0..=10).map(|i| i as f64 * 0.01).collect();
        let sol = solve_reference(eq, &model, 256, 1e-3, &times).unwrap();
        let m0 = sol.grid_mean(0, 0);
        for i in 1..sol.times.len() {
            let drift = (sol.grid_mean(i, 0) - m0).abs();
            assert!(drift <= 1e-13 * m0.abs().max(1.0), "frame {i}: drift {drift:.3e}");
        }
    }

    #[test]
    fn wave_solution_matches_traveling_decomposition() {
        // With v₀ = 0 the density splits into two counter-propagating copies
        // of the initial profile and v picks up their difference.
        let model = Wave::benchmark();
        let eq = Equation::for_model(&model).unwrap();
        let dt = 1.0 / 512.0;
        let sol = solve_reference(eq, &model, 256, dt, &[0.0, 1.0]).unwrap();
        let dom = model.domain();
        let pts = sol.points_per_frame();
        let frame = sol.frame(1);
        let t = 1.0;
        for j in 0..pts {
            let x = -1.0 + 2.0 * j as f64 / pts as f64;
            let left = model.initial_density(dom.wrap(0, x - t));
            let right = model.initial_density(dom.wrap(0, x + t));
            let rho_want = 0.5 * (left + right);
            let v_want = 0.5 * (left - right);
            assert!(
                (frame[j] - rho_want).abs() < 1e-6,
                "ρ at node {j}: {} vs {rho_want}",
                frame[j]
            );
            assert!(
                (frame[pts + j] - v_want).abs() < 1e-6,
                "v at node {j}: {} vs {v_want}",
                frame[pts + j]
            );
        }
    }

    #[test]
    fn shallow_water_is_self_convergent_under_grid_refinement() {
        let model = ShallowWater::benchmark();
        let eq = Equation::for_model(&model).unwrap();
        let dt = 2e-3;
        let coarse = solve_reference(eq, &model, 64, dt, &[0.5]).unwrap();
        let fine = solve_reference(eq, &model, 128, dt, &[0.5]).unwrap();
        // Every coarse node coincides with an even-indexed fine node.
        let nc = 64;
        let mut worst = 0.0f64;
        for comp in 0..2 {
            let cf = coarse.frame(0);
            let ff = fine.frame(0);
            for ix in 0..nc {
                for iy in 0..nc {
                    let a = cf[comp * nc * nc + ix * nc + iy];
                    let b = ff[comp * 128 * 128 + (2 * ix) * 128 + 2 * iy];
                    worst = worst.max((a - b).abs());
                }
            }
        }
        assert!(worst < 1e-6, "grid-refinement disagreement {worst:.3e}");
    }

    #[test]
    fn grid_interpolation_is_exact_for_band_limited_fields() {
        let model = Wave::benchmark();
        let eq = Equation::for_model(&model).unwrap();
        let sol = solve_reference(eq, &model, 128, 1e-3, &[0.0, 0.05]).unwrap();
        // Same grid, zero offset: must reproduce the stored frame.
        let same = sol.sample_grid(1, &[128], 0.0);
        for (a, b) in same.iter().zip(sol.frame(1)) {
            assert!((a - b).abs() < 1e-11);
        }
        // Finer offset grid versus direct mode summation.
        let per_axis = [192usize];
        let offset = 0.25;
        let grid_vals = sol.sample_grid(1, &per_axis, offset);
        let h = 2.0 / 192.0;
        let coords: Vec<f64> = (0..192).map(|i| -1.0 + (i as f64 + offset) * h).collect();
        let samples = SampleSet::from_coords(1, coords);
        let direct = sol.sample_points(1, &samples);
        for (a, b) in grid_vals.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn misaligned_output_times_are_rejected() {
        let model = Burgers::benchmark();
        let eq = Equation::for_model(&model).unwrap();
        let err = solve_reference(eq, &model, 64, 1e-3, &[0.0105]).unwrap_err();
        assert!(matches!(err, ReferenceError::TimeNotOnStep(_)));
    }

    #[test]
    fn unstable_step_size_is_rejected() {
        let model = Wave::benchmark();
        let eq = Equation::for_model(&model).unwrap();
        let err = solve_reference(eq, &model, 512, 0.1, &[0.1]).unwrap_err();
        assert!(matches!(err, ReferenceError::Cfl { .. }));
    }
}
