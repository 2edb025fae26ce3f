//! Explicit time integration of the parameter dynamics.
//!
//! Each stage velocity comes from the regularized (optionally constrained)
//! tangent-space solve at that stage's parameter; after a completed step the
//! state can additionally be embedded back onto the conserved-quantity
//! manifold. The weighted variant swaps the stage solve for the
//! structure-preserving system assembled from the separable parametrization.

pub mod fit;

pub use fit::{fit_initial, FitError, FitReport, FitSettings};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::embed::{constraint_gradients, embed, EmbedError, EmbedSettings};
use crate::galerkin::{
    assemble_normal, residual_rms, solve_constrained_normal, GalerkinError, NormalSystem,
};
use crate::models::{estimate_quantity, ModelsError, PdeModel, Quantity, SampleSet};
use crate::params::{ParamVector, Parametrization, ParamsError};
use crate::weighted::{assemble_weighted, solve_weighted, WeightedError};

#[derive(Debug, Error)]
pub enum TimeintError {
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Models(#[from] ModelsError),
    #[error(transparent)]
    Galerkin(#[from] GalerkinError),
    #[error(transparent)]
    Weighted(#[from] WeightedError),
    #[error("embedding failed at step {step}: {source}")]
    Embed {
        step: usize,
        #[source]
        source: EmbedError,
    },
    #[error("constraints or embedding requested but a quantity target is not frozen")]
    MissingTargets,
    #[error("step size must be positive, got {0}")]
    InvalidStepSize(f64),
    #[error("non-finite parameter state after step {step}")]
    NonFiniteState { step: usize },
}

/// Explicit Runge–Kutta scheme for the parameter flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Euler,
    Rk4,
}

/// How stage velocities are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VelocityMode {
    /// Plain regularized least-squares solve.
    Plain,
    /// Project each stage velocity onto the tangent space of the sampled
    /// conserved quantities.
    Constrained,
    /// Structure-preserving weighted system (separable parametrizations with
    /// a factorizable right-hand side).
    Weighted,
}

#[derive(Debug, Clone, Copy)]
pub struct StepperConfig {
    pub scheme: Scheme,
    pub dt: f64,
    /// Relative Tikhonov scale; the absolute coefficient is this value times
    /// the mean diagonal of the assembled Gram.
    pub reg: f64,
    pub mode: VelocityMode,
    /// Post-step embedding onto the quantity manifold, if enabled.
    pub embed: Option<EmbedSettings>,
}

impl Default for StepperConfig {
    fn default() -> Self {
        Self { scheme: Scheme::Rk4, dt: 1e-3, reg: 1e-8, mode: VelocityMode::Plain, embed: None }
    }
}

/// Per-step diagnostics recorded by the driver.
#[derive(Debug, Clone)]
pub struct StepDiag {
    /// Time at the end of the step.
    pub time: f64,
    /// Max over stages of the root-mean-square tangent residual
    /// `‖Â θ̇ − b̂‖ / √rows` (weighted mode: `‖M̂_Q θ̇ − Ĵ_Q Dθ'‖ / √p`).
    pub lsq_residual: f64,
    /// Max over stages of `|ĝᵀθ̇| / (‖ĝ‖·‖θ̇‖)`; for the weighted mode the
    /// same ratio with the sampled invariant gradient in place of ĝ.
    pub stage_orthogonality: f64,
    /// Newton iterations spent in the post-step embedding (0 when disabled).
    pub embed_iterations: usize,
    /// Constraint residual after embedding (0 when disabled).
    pub embed_residual: f64,
    /// Sampled quantity values at the end of the step.
    pub quantity_values: Vec<f64>,
}

/// Parameter trajectory with one state per step boundary.
pub struct Trajectory {
    pub times: Vec<f64>,
    pub params: Vec<ParamVector>,
    pub diagnostics: Vec<StepDiag>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

struct StageOutcome {
    velocity: ParamVector,
    residual: f64,
    orthogonality: f64,
}

fn stage_velocity(
    net: &dyn Parametrization,
    model: &dyn PdeModel,
    theta: &ParamVector,
    quantities: &[Quantity],
    galerkin_samples: &SampleSet,
    quantity_samples: &SampleSet,
    cfg: &StepperConfig,
) -> Result<StageOutcome, TimeintError> {
    match cfg.mode {
        VelocityMode::Weighted => {
            let sys = assemble_weighted(net, theta, model, galerkin_samples)?;
            let p = sys.dim();
            let reg_abs = cfg.reg * sys.gram.trace() / p as f64;
            let prime = sys.to_prime(theta);
            let vel_prime = solve_weighted(&sys, &prime, reg_abs)?;
            let rhs = sys.rhs(&prime);
            let residual = ((&sys.gram * &vel_prime) - rhs).norm() / (p as f64).sqrt();
            let grad_h = sys.hamiltonian_gradient(&prime);
            let scale = grad_h.norm() * vel_prime.norm();
            let orthogonality = if scale > 0.0 { grad_h.dot(&vel_prime).abs() / scale } else { 0.0 };
            Ok(StageOutcome { velocity: sys.from_prime(&vel_prime), residual, orthogonality })
        }
        VelocityMode::Plain | VelocityMode::Constrained => {
            let sys: NormalSystem = assemble_normal(net, theta, model, galerkin_samples)?;
            let p = sys.gram.nrows();
            let reg_abs = cfg.reg * sys.gram.trace() / p as f64;
            let g = if cfg.mode == VelocityMode::Constrained && !quantities.is_empty() {
                constraint_gradients(net, theta, quantities, quantity_samples)
                    .map_err(embed_to_timeint)?
            } else {
                DMatrix::zeros(p, 0)
            };
            let report = solve_constrained_normal(&sys, &g, reg_abs)?;
            let residual = residual_rms(&sys, &report.delta);
            let scale = g.norm() * report.delta.norm();
            let orthogonality =
                if scale > 0.0 { report.constraint_violation / scale } else { 0.0 };
            Ok(StageOutcome { velocity: report.delta, residual, orthogonality })
        }
    }
}

fn embed_to_timeint(e: EmbedError) -> TimeintError {
    match e {
        EmbedError::Params(p) => TimeintError::Params(p),
        EmbedError::Models(m) => TimeintError::Models(m),
        other => TimeintError::Embed { step: usize::MAX, source: other },
    }
}

/// Integrate `n_steps` steps of size `cfg.dt` from `theta0`.
///
/// `galerkin_samples` feed the tangent-space solve; `quantity_samples` feed
/// constraint gradients, embeddings, and the recorded quantity values. When
/// constraints or embeddings are active every quantity must carry a frozen
/// target.
pub fn integrate(
    net: &dyn Parametrization,
    model: &dyn PdeModel,
    theta0: &ParamVector,
    quantities: &[Quantity],
    galerkin_samples: &SampleSet,
    quantity_samples: &SampleSet,
    cfg: &StepperConfig,
    n_steps: usize,
) -> Result<Trajectory, TimeintError> {
    if !(cfg.dt > 0.0) {
        return Err(TimeintError::InvalidStepSize(cfg.dt));
    }
    let needs_targets = cfg.embed.is_some() || cfg.mode == VelocityMode::Constrained;
    if needs_targets && quantities.iter().any(|q| q.target.is_none()) {
        return Err(TimeintError::MissingTargets);
    }

    let mut times = Vec::with_capacity(n_steps + 1);
    let mut params = Vec::with_capacity(n_steps + 1);
    let mut diagnostics = Vec::with_capacity(n_steps);
    times.push(0.0);
    params.push(theta0.clone());

    let mut theta = theta0.clone();
    for step in 0..n_steps {
        let mut residual = 0.0f64;
        let mut orthogonality = 0.0f64;
        let mut eval = |th: &ParamVector| -> Result<ParamVector, TimeintError> {
            let out = stage_velocity(
                net,
                model,
                th,
                quantities,
                galerkin_samples,
                quantity_samples,
                cfg,
            )?;
            residual = residual.max(out.residual);
            orthogonality = orthogonality.max(out.orthogonality);
            Ok(out.velocity)
        };
        let dt = cfg.dt;
        let mut tentative = match cfg.scheme {
            Scheme::Euler => {
                let k1 = eval(&theta)?;
                &theta + k1 * dt
            }
            Scheme::Rk4 => {
                let k1 = eval(&theta)?;
                let k2 = eval(&(&theta + &k1 * (0.5 * dt)))?;
                let k3 = eval(&(&theta + &k2 * (0.5 * dt)))?;
                let k4 = eval(&(&theta + &k3 * dt))?;
                &theta + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
            }
        };
        let (mut embed_iterations, mut embed_residual) = (0usize, 0.0f64);
        if let Some(settings) = cfg.embed {
            if !quantities.is_empty() {
                let report = embed(net, &tentative, quantities, quantity_samples, settings)
                    .map_err(|e| match e {
                        EmbedError::Params(p) => TimeintError::Params(p),
                        EmbedError::Models(m) => TimeintError::Models(m),
                        other => TimeintError::Embed { step, source: other },
                    })?;
                tentative = report.theta;
                embed_iterations = report.iterations;
                embed_residual = report.residual;
            }
        }
        if !tentative.iter().all(|v| v.is_finite()) {
            return Err(TimeintError::NonFiniteState { step });
        }
        theta = tentative;
        let time = dt * (step + 1) as f64;
        let mut quantity_values = Vec::with_capacity(quantities.len());
        for q in quantities {
            quantity_values.push(estimate_quantity(net, &theta, &q.kernel, quantity_samples)?);
        }
        times.push(time);
        params.push(theta.clone());
        diagnostics.push(StepDiag {
            time,
            lsq_residual: residual,
            stage_orthogonality: orthogonality,
            embed_iterations,
            embed_residual,
            quantity_values,
        });
    }
    Ok(Trajectory { times, params, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use crate::embed::freeze_targets;
    use crate::galerkin::assemble_mf;
    use crate::models::{Domain, QuantityKernel, Wave};
    use crate::params::{
        build, Activation, Architecture, Feature, Jet, LinearFeatures, PeriodicSpec,
    };

    /// Linear-growth surrogate `∂_t u = u`: for any parametrization the
    /// projected parameter flow is exactly `θ̇ = θ`.
    struct GrowthModel {
        domain: Domain,
    }

    impl PdeModel for GrowthModel {
        fn name(&self) -> &'static str {
            "growth"
        }
        fn spatial_dim(&self) -> usize {
            1
        }
        fn field_dim(&self) -> usize {
            1
        }
        fn domain(&self) -> Domain {
            self.domain.clone()
        }
        fn spatial_order(&self) -> u8 {
            0
        }
        fn rhs(&self, _x: &[f64], state: &Jet) -> DVector<f64> {
            state.value.clone()
        }
        fn default_quantities(&self) -> Vec<Quantity> {
            vec![]
        }
        fn initial(&self, _x: &[f64]) -> DVector<f64> {
            DVector::zeros(1)
        }
    }

    /// Quadratic surrogate `∂_t u = u²` on a constant-in-space field: the
    /// single parameter obeys `θ̇ = θ²` with exact solution θ₀/(1 − θ₀ t).
    struct QuadraticModel {
        domain: Domain,
    }

    impl PdeModel for QuadraticModel {
        fn name(&self) -> &'static str {
            "quadratic"
        }
        fn spatial_dim(&self) -> usize {
            1
        }
        fn field_dim(&self) -> usize {
            1
        }
        fn domain(&self) -> Domain {
            self.domain.clone()
        }
        fn spatial_order(&self) -> u8 {
            0
        }
        fn rhs(&self, _x: &[f64], state: &Jet) -> DVector<f64> {
            DVector::from_column_slice(&[state.value[0] * state.value[0]])
        }
        fn default_quantities(&self) -> Vec<Quantity> {
            vec![]
        }
        fn initial(&self, _x: &[f64]) -> DVector<f64> {
            DVector::zeros(1)
        }
    }

    fn grid(n: usize) -> SampleSet {
        SampleSet::equidistant(&Domain::symmetric(1.0, 1), &[n], 0.0)
    }

    #[test]
    fn euler_reproduces_exact_growth_factors() {
        let net = LinearFeatures::const_plus_sin_pi();
        let model = GrowthModel { domain: Domain::symmetric(1.0, 1) };
        let theta0 = DVector::from_column_slice(&[0.8, -0.3]);
        let cfg = StepperConfig {
            scheme: Scheme::Euler,
            dt: 0.1,
            reg: 0.0,
            mode: VelocityMode::Plain,
            embed: None,
        };
        let traj = integrate(&net, &model, &theta0, &[], &grid(32), &grid(32), &cfg, 5).unwrap();
        let factor = 1.1f64.powi(5);
        for i in 0..2 {
            assert!(
                (traj.params[5][i] - factor * theta0[i]).abs() < 1e-10,
                "component {i}"
            );
        }
    }

    #[test]
    fn rk4_reproduces_exact_taylor_growth() {
        let net = LinearFeatures::const_plus_sin_pi();
        let model = GrowthModel { domain: Domain::symmetric(1.0, 1) };
        let theta0 = DVector::from_column_slice(&[1.0, 0.5]);
        let dt = 0.2;
        let cfg = StepperConfig {
            scheme: Scheme::Rk4,
            dt,
            reg: 0.0,
            mode: VelocityMode::Plain,
            embed: None,
        };
        let traj = integrate(&net, &model, &theta0, &[], &grid(16), &grid(16), &cfg, 4).unwrap();
        let factor =
            (1.0 + dt + dt * dt / 2.0 + dt * dt * dt / 6.0 + dt * dt * dt * dt / 24.0).powi(4);
        for i in 0..2 {
            assert!((traj.params[4][i] - factor * theta0[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn rk4_reaches_fourth_order_on_a_nonlinear_flow() {
        let net = LinearFeatures::new(1, vec![Feature::One]);
        let model = QuadraticModel { domain: Domain::symmetric(1.0, 1) };
        let theta0 = DVector::from_column_slice(&[0.5]);
        let t_end = 1.0;
        let exact = 0.5 / (1.0 - 0.5 * t_end);
        let mut errors = Vec::new();
        for k in [8usize, 16, 32] {
            let cfg = StepperConfig {
                scheme: Scheme::Rk4,
                dt: t_end / k as f64,
                reg: 0.0,
                mode: VelocityMode::Plain,
                embed: None,
            };
            let traj =
                integrate(&net, &model, &theta0, &[], &grid(8), &grid(8), &cfg, k).unwrap();
            errors.push((traj.params[k][0] - exact).abs());
        }
        let order01 = (errors[0] / errors[1]).log2();
        let order12 = (errors[1] / errors[2]).log2();
        assert!(order01 > 3.8, "observed order {order01:.2}");
        assert!(order12 > 3.8, "observed order {order12:.2}");
    }

    fn small_wave_net() -> (crate::params::MlpNet, ParamVector) {
        let arch = Architecture {
            input_dim: 1,
            output_dim: 2,
            periodic: Some(PeriodicSpec { periods: vec![2.0], width: 5 }),
            hidden: vec![6],
            activation: Activation::Sin,
            output_bias: false,
        };
        build(arch, 13).unwrap()
    }

    #[test]
    fn plain_stepping_matches_independent_dense_integration() {
        // Reference path: assemble M̂, F̂ densely and run a hand-rolled RK4
        // with a Cholesky solve — no shared stepping code. A well-conditioned
        // linear parametrization keeps solver roundoff out of the comparison.
        let pi = std::f64::consts::PI;
        let net = LinearFeatures::new(
            1,
            vec![
                Feature::One,
                Feature::Sin { freq: pi, axis: 0, phase: 0.0 },
                Feature::Sin { freq: pi, axis: 0, phase: 0.5 * pi },
            ],
        );
        let theta0 = DVector::from_column_slice(&[0.1, 0.6, -0.4]);
        let model = crate::models::Burgers::benchmark();
        let samples = grid(48);
        let dt = 1e-3;
        let reg_rel = 1e-10;

        let velocity = |th: &ParamVector| -> ParamVector {
            let (m_hat, f_hat) = assemble_mf(&net, th, &model, &samples).unwrap();
            let p = m_hat.nrows();
            let mut damped = m_hat.clone();
            let reg = reg_rel * m_hat.trace() / p as f64;
            for i in 0..p {
                damped[(i, i)] += reg;
            }
            damped.cholesky().expect("dense solve").solve(&f_hat)
        };
        let mut theta_ref = theta0.clone();
        for _ in 0..10 {
            let k1 = velocity(&theta_ref);
            let k2 = velocity(&(&theta_ref + &k1 * (0.5 * dt)));
            let k3 = velocity(&(&theta_ref + &k2 * (0.5 * dt)));
            let k4 = velocity(&(&theta_ref + &k3 * dt));
            theta_ref += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        }

        let cfg = StepperConfig {
            scheme: Scheme::Rk4,
            dt,
            reg: reg_rel,
            mode: VelocityMode::Plain,
            embed: None,
        };
        let traj = integrate(&net, &model, &theta0, &[], &samples, &samples, &cfg, 10).unwrap();
        let err = (&traj.params[10] - &theta_ref).amax();
        assert!(err < 1e-8, "trajectory deviation {err:.3e}");
    }

    #[test]
    fn constrained_stages_stay_orthogonal_to_quantity_gradients() {
        let (net, theta0) = small_wave_net();
        let model = Wave::benchmark();
        let samples = grid(48);
        let quantities = freeze_targets(
            &net,
            &theta0,
            &[
                Quantity::new(QuantityKernel::Mass { component: 0 }),
                Quantity::new(QuantityKernel::Mass { component: 1 }),
            ],
            &samples,
        )
        .unwrap();
        let cfg = StepperConfig {
            scheme: Scheme::Rk4,
            dt: 1e-3,
            reg: 1e-10,
            mode: VelocityMode::Constrained,
            embed: None,
        };
        let traj =
            integrate(&net, &model, &theta0, &quantities, &samples, &samples, &cfg, 5).unwrap();
        for diag in &traj.diagnostics {
            assert!(
                diag.stage_orthogonality <= 1e-11,
                "stage orthogonality {:.3e}",
                diag.stage_orthogonality
            );
        }
    }

    #[test]
    fn embedded_steps_keep_quantities_at_their_targets() {
        let (net, theta0) = small_wave_net();
        let model = Wave::benchmark();
        let samples = grid(64);
        let quantities = freeze_targets(
            &net,
            &theta0,
            &[Quantity::new(QuantityKernel::WaveEnergy { c: 1.0, rho_ref: 1.0 })],
            &samples,
        )
        .unwrap();
        let cfg = StepperConfig {
            scheme: Scheme::Rk4,
            dt: 2e-3,
            reg: 1e-8,
            mode: VelocityMode::Constrained,
            embed: Some(EmbedSettings::default()),
        };
        let traj =
            integrate(&net, &model, &theta0, &quantities, &samples, &samples, &cfg, 8).unwrap();
        for diag in &traj.diagnostics {
            assert!(
                (diag.quantity_values[0] - quantities[0].target()).abs() <= 1e-11,
                "quantity drifted to {:.3e}",
                (diag.quantity_values[0] - quantities[0].target()).abs()
            );
            assert!(diag.embed_iterations >= 1);
        }
    }

    #[test]
    fn weighted_mode_conserves_the_sampled_invariant_over_steps() {
        let (net, theta0) = small_wave_net();
        let model = Wave::benchmark();
        let samples = grid(64);
        let energy = Quantity::new(QuantityKernel::WaveEnergy { c: 1.0, rho_ref: 1.0 });
        let h0 = estimate_quantity(&net, &theta0, &energy.kernel, &samples).unwrap();
        let cfg = StepperConfig {
            scheme: Scheme::Rk4,
            dt: 1e-3,
            reg: 1e-12,
            mode: VelocityMode::Weighted,
            embed: None,
        };
        let traj = integrate(&net, &model, &theta0, &[], &samples, &samples, &cfg, 20).unwrap();
        let h_end = estimate_quantity(&net, &traj.params[20], &energy.kernel, &samples).unwrap();
        assert!(
            (h_end - h0).abs() <= 1e-9 * h0.abs().max(1.0),
            "invariant drift {:.3e}",
            (h_end - h0).abs()
        );
        for diag in &traj.diagnostics {
            assert!(diag.stage_orthogonality <= 1e-9);
        }
    }

    #[test]
    fn integration_is_deterministic() {
        let (net, theta0) = small_wave_net();
        let model = Wave::benchmark();
        let samples = grid(48);
        let cfg = StepperConfig::default();
        let a = integrate(&net, &model, &theta0, &[], &samples, &samples, &cfg, 4).unwrap();
        let b = integrate(&net, &model, &theta0, &[], &samples, &samples, &cfg, 4).unwrap();
        for (pa, pb) in a.params.iter().zip(&b.params) {
            assert_eq!(pa, pb);
        }
    }

    #[test]
    fn missing_targets_are_rejected() {
        let (net, theta0) = small_wave_net();
        let model = Wave::benchmark();
        let samples = grid(16);
        let quantities = vec![Quantity::new(QuantityKernel::Mass { component: 0 })];
        let cfg = StepperConfig {
            mode: VelocityMode::Constrained,
            ..Default::default()
        };
        assert!(matches!(
            integrate(&net, &model, &theta0, &quantities, &samples, &samples, &cfg, 1),
            Err(TimeintError::MissingTargets)
        ));
    }
}
