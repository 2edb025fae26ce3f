//! Experiment driver: initial fit, trajectory integration, reference
//! comparison, and output files for one configuration.

use std::path::PathBuf;
use std::time::Instant;

use serde_json::json;
use thiserror::Error;

use crate::embed::{freeze_targets, EmbedError, EmbedSettings};
use crate::experiment::config::{Config, ConfigError, ModelKind, Variant};
use crate::experiment::io::{
    read_trajectory_bin, write_metrics_csv, write_manifest, write_trajectory_bin,
    write_trajectory_csv, IoError, TrajectoryFile,
};
use crate::experiment::metrics::{
    conservation_error, field_on_samples, quantity_series, relative_error, MetricSeries,
    MetricsError,
};
use crate::models::{ModelsError, PdeModel, Quantity, SampleSet};
use crate::params::{build, ParamVector, Parametrization, ParamsError};
use crate::reference::{solve_reference, Equation, ReferenceError, ReferenceSolution};
use crate::timeint::{
    fit_initial, integrate, FitError, FitSettings, StepperConfig, TimeintError, Trajectory,
    VelocityMode,
};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Models(#[from] ModelsError),
    #[error("initial fit failed on every seed; best rmse {best_rmse:.3e} (tol {tol:.3e})")]
    FitFailed { best_rmse: f64, tol: f64 },
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Timeint(#[from] TimeintError),
    #[error("freezing quantity targets failed: {0}")]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Reference(#[from] ReferenceError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("reference solution misses stored time {0}")]
    ReferenceTimeMissing(f64),
}

/// What `check` learned without running anything.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub variant: Variant,
    pub model: String,
    pub param_count: usize,
    pub n_steps: usize,
    pub stored_steps: usize,
    pub lsq_points: usize,
    pub quantity_points: usize,
    pub test_points: usize,
    pub quantity_labels: Vec<String>,
}

/// Outcome of a completed run.
pub struct RunSummary {
    pub name: String,
    pub variant: Variant,
    pub quantity_labels: Vec<String>,
    pub metrics: MetricSeries,
    pub fit_seed: u64,
    pub fit_rmse: f64,
    pub fit_iterations: usize,
    /// Embedding iterations for every integration step (not just stored ones).
    pub embed_iterations: Vec<usize>,
    pub trajectory_path: PathBuf,
    pub metrics_path: PathBuf,
    pub manifest_path: PathBuf,
    pub wall_seconds: f64,
}

impl RunSummary {
    pub fn median_embed_iterations(&self) -> f64 {
        percentile(&self.embed_iterations, 0.5)
    }
}

fn percentile(samples: &[usize], q: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut sorted: Vec<usize> = samples.to_vec();
    sorted.sort_unstable();
    let rank = q * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] as f64 * (1.0 - frac) + sorted[hi] as f64 * frac
}

fn equation_for(cfg: &Config) -> Equation {
    match cfg.model.kind {
        ModelKind::Burgers => Equation::Burgers,
        ModelKind::Wave => Equation::Wave { c: cfg.model.c, rho_ref: cfg.model.rho_ref },
        ModelKind::ShallowWater => Equation::ShallowWater,
    }
}

/// Validate the config and report the derived run shape.
pub fn check(cfg: &Config) -> Result<CheckReport, RunnerError> {
    let n_steps = cfg.validate()?;
    let model = cfg.build_model();
    let arch = cfg.build_architecture(model.as_ref());
    let (_, theta0) = build(arch, cfg.experiment.seed)?;
    let labels = model
        .default_quantities()
        .iter()
        .map(|q| q.kernel.label().to_string())
        .collect();
    Ok(CheckReport {
        name: cfg.experiment.name.clone(),
        variant: cfg.experiment.variant,
        model: model.name().to_string(),
        param_count: theta0.len(),
        n_steps,
        stored_steps: n_steps / cfg.output.stride + 1,
        lsq_points: cfg.sampling.lsq.iter().product(),
        quantity_points: cfg.sampling.quantity.iter().product(),
        test_points: cfg.sampling.test.iter().product(),
        quantity_labels: labels,
    })
}

/// Stored output times of a run: step 0 plus every `stride`-th step.
fn stored_times(cfg: &Config, n_steps: usize) -> Vec<f64> {
    (0..=n_steps / cfg.output.stride)
        .map(|k| (k * cfg.output.stride) as f64 * cfg.time.dt)
        .collect()
}

/// Compute the reference solution at the stored times and cache it.
pub fn build_reference(cfg: &Config) -> Result<(PathBuf, usize), RunnerError> {
    let n_steps = cfg.validate()?;
    let model = cfg.build_model();
    let sol = solve_reference(
        equation_for(cfg),
        model.as_ref(),
        cfg.reference.n,
        cfg.reference.dt,
        &stored_times(cfg, n_steps),
    )?;
    let path = cfg.reference_path();
    save_reference(&path, &sol, model.as_ref())?;
    Ok((path, sol.times.len()))
}

fn save_reference(
    path: &std::path::Path,
    sol: &ReferenceSolution,
    model: &dyn PdeModel,
) -> Result<(), RunnerError> {
    let pts = sol.points_per_frame();
    let mut file = TrajectoryFile::new(model.field_dim() * pts, model.field_dim(), sol.n.len());
    for (i, &t) in sol.times.iter().enumerate() {
        file.push(t, sol.frame(i).to_vec());
    }
    write_trajectory_bin(path, &file)?;
    Ok(())
}

/// Load the cached reference if it matches the config; rebuild it otherwise.
fn load_or_build_reference(
    cfg: &Config,
    model: &dyn PdeModel,
    times: &[f64],
) -> Result<ReferenceSolution, RunnerError> {
    let path = cfg.reference_path();
    let d = model.spatial_dim();
    let pts = cfg.reference.n.pow(d as u32);
    let tol = 0.5 * cfg.reference.dt;
    if let Ok(file) = read_trajectory_bin(&path) {
        let shape_ok = file.p == model.field_dim() * pts
            && file.m == model.field_dim()
            && file.d == d;
        let times_ok = times.iter().all(|&t| {
            file.times.iter().any(|&s| (s - t).abs() <= tol)
        });
        if shape_ok && times_ok {
            return Ok(ReferenceSolution::from_parts(
                model,
                vec![cfg.reference.n; d],
                file.times,
                file.records,
            ));
        }
    }
    let sol = solve_reference(
        equation_for(cfg),
        model,
        cfg.reference.n,
        cfg.reference.dt,
        times,
    )?;
    save_reference(&path, &sol, model)?;
    Ok(sol)
}

struct FitOutcome {
    theta: ParamVector,
    seed: u64,
    rmse: f64,
    iterations: usize,
    tried: Vec<(u64, Option<f64>)>,
}

/// Fit the initial condition, trying seeds in order until one converges.
fn fit_with_seeds(
    cfg: &Config,
    net: &dyn Parametrization,
    model: &dyn PdeModel,
    fit_samples: &SampleSet,
) -> Result<FitOutcome, RunnerError> {
    let seeds = if cfg.fit.seeds.is_empty() {
        vec![cfg.experiment.seed]
    } else {
        cfg.fit.seeds.clone()
    };
    let settings = FitSettings {
        tol_rmse: cfg.fit.tol_rmse,
        max_iters: cfg.fit.max_iters,
        ..FitSettings::default()
    };
    let arch = cfg.build_architecture(model);
    let target = |x: &[f64]| model.initial(x);
    let mut tried = Vec::new();
    let mut best_rmse = f64::INFINITY;
    for &seed in &seeds {
        let (_, theta0) = build(arch.clone(), seed)?;
        match fit_initial(net, &theta0, fit_samples, &target, settings) {
            Ok(report) => {
                tried.push((seed, Some(report.rmse)));
                return Ok(FitOutcome {
                    theta: report.theta,
                    seed,
                    rmse: report.rmse,
                    iterations: report.iterations,
                    tried,
                });
            }
            Err(FitError::Nonconvergence { rmse, .. }) => {
                tried.push((seed, Some(rmse)));
                best_rmse = best_rmse.min(rmse);
            }
            Err(other) => return Err(other.into()),
        }
    }
    Err(RunnerError::FitFailed { best_rmse, tol: cfg.fit.tol_rmse })
}

fn stepper_config(cfg: &Config) -> StepperConfig {
    let embed = match cfg.experiment.variant {
        Variant::Embedded => Some(EmbedSettings {
            tol: cfg.solver.embed_tol,
            kmax: cfg.solver.embed_kmax,
        }),
        _ => None,
    };
    let mode = match cfg.experiment.variant {
        Variant::Plain => VelocityMode::Plain,
        Variant::Constrained | Variant::Embedded => VelocityMode::Constrained,
        Variant::Weighted => VelocityMode::Weighted,
    };
    StepperConfig { scheme: cfg.time.scheme, dt: cfg.time.dt, reg: cfg.solver.reg, mode, embed }
}

/// Run the full experiment pipeline and write all output files.
pub fn run(cfg: &Config) -> Result<RunSummary, RunnerError> {
    let started = Instant::now();
    let n_steps = cfg.validate()?;
    let model = cfg.build_model();
    let model = model.as_ref();
    let domain = model.domain();
    let arch = cfg.build_architecture(model);
    let (net, _) = build(arch, cfg.experiment.seed)?;

    let lsq_grid = SampleSet::equidistant(&domain, &cfg.sampling.lsq, 0.0);
    let quantity_grid = SampleSet::equidistant(&domain, &cfg.sampling.quantity, 0.0);
    let test_offset = cfg.test_offset_in_test_cells(0);
    let test_grid = SampleSet::equidistant(&domain, &cfg.sampling.test, test_offset);
    let fit_grid = if cfg.fit.grid.is_empty() {
        lsq_grid.clone()
    } else {
        SampleSet::equidistant(&domain, &cfg.fit.grid, 0.0)
    };

    let fit = fit_with_seeds(cfg, &net, model, &fit_grid)?;
    let quantities: Vec<Quantity> =
        freeze_targets(&net, &fit.theta, &model.default_quantities(), &quantity_grid)?;
    let labels: Vec<String> =
        quantities.iter().map(|q| q.kernel.label().to_string()).collect();

    let step_cfg = stepper_config(cfg);
    let traj = integrate(
        &net,
        model,
        &fit.theta,
        &quantities,
        &lsq_grid,
        &quantity_grid,
        &step_cfg,
        n_steps,
    )?;

    let (series, stored_params) =
        compute_metrics(cfg, model, &net, &traj, &quantities, &test_grid)?;

    let out_dir = cfg.output_dir();
    let trajectory_path = out_dir.join("trajectory.csv");
    let metrics_path = out_dir.join("metrics.csv");
    let manifest_path = out_dir.join("manifest.json");

    let p = net.param_count();
    let mut traj_file = TrajectoryFile::new(p, model.field_dim(), model.spatial_dim());
    for (t, theta) in series.times.iter().zip(&stored_params) {
        traj_file.push(*t, theta.as_slice().to_vec());
    }
    write_trajectory_csv(&trajectory_path, &traj_file)?;
    write_metrics_csv(&metrics_path, &series, &labels)?;

    let embed_iterations: Vec<usize> =
        traj.diagnostics.iter().map(|d| d.embed_iterations).collect();
    let summary = RunSummary {
        name: cfg.experiment.name.clone(),
        variant: cfg.experiment.variant,
        quantity_labels: labels,
        metrics: series,
        fit_seed: fit.seed,
        fit_rmse: fit.rmse,
        fit_iterations: fit.iterations,
        embed_iterations,
        trajectory_path,
        metrics_path,
        manifest_path,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    write_manifest(&summary.manifest_path, &manifest_json(cfg, &summary, &fit, p, n_steps))?;
    Ok(summary)
}

/// Decimate the trajectory by the output stride and evaluate all metrics.
fn compute_metrics(
    cfg: &Config,
    model: &dyn PdeModel,
    net: &dyn Parametrization,
    traj: &Trajectory,
    quantities: &[Quantity],
    test_grid: &SampleSet,
) -> Result<(MetricSeries, Vec<ParamVector>), RunnerError> {
    let stride = cfg.output.stride;
    let mut times = Vec::new();
    let mut stored_params = Vec::new();
    let mut embed_iters = Vec::new();
    let mut lsq_residual = Vec::new();
    for k in (0..traj.len()).step_by(stride) {
        times.push(traj.times[k]);
        stored_params.push(traj.params[k].clone());
        if k == 0 {
            embed_iters.push(0);
            lsq_residual.push(0.0);
        } else {
            let diag = &traj.diagnostics[k - 1];
            embed_iters.push(diag.embed_iterations);
            lsq_residual.push(diag.lsq_residual);
        }
    }

    let reference = load_or_build_reference(cfg, model, &times)?;
    let tol = 0.5 * cfg.reference.dt;
    let n_test = test_grid.len();
    let test_offset = cfg.test_offset_in_test_cells(0);
    let mut e_r = Vec::with_capacity(times.len());
    for (k, (&t, theta)) in times.iter().zip(&stored_params).enumerate() {
        let frame = reference
            .index_of_time(t, tol)
            .ok_or(RunnerError::ReferenceTimeMissing(t))?;
        let ref_vals = reference.sample_grid(frame, &cfg.sampling.test, test_offset);
        let net_vals = field_on_samples(net, theta, test_grid)?;
        e_r.push(relative_error(&net_vals, &ref_vals, n_test, k)?);
    }

    let q_hat = quantity_series(net, &stored_params, quantities, test_grid)?;
    let e_c = q_hat.iter().map(|series| conservation_error(series)).collect();

    Ok((
        MetricSeries { times, e_r, e_c, q_hat, embed_iters, lsq_residual },
        stored_params,
    ))
}

fn manifest_json(
    cfg: &Config,
    summary: &RunSummary,
    fit: &FitOutcome,
    param_count: usize,
    n_steps: usize,
) -> serde_json::Value {
    let iters = &summary.embed_iterations;
    let max_e_c: serde_json::Map<String, serde_json::Value> = summary
        .quantity_labels
        .iter()
        .enumerate()
        .map(|(i, label)| (label.clone(), json!(summary.metrics.max_e_c(i))))
        .collect();
    json!({
        "name": summary.name,
        "variant": summary.variant.as_str(),
        "config": cfg,
        "param_count": param_count,
        "n_steps": n_steps,
        "stored_steps": summary.metrics.len(),
        "fit": {
            "seed": fit.seed,
            "rmse": fit.rmse,
            "iterations": fit.iterations,
            "tried": fit.tried.iter().map(|(s, r)| json!({"seed": s, "rmse": r})).collect::<Vec<_>>(),
        },
        "quantities": summary.quantity_labels,
        "targets": cfg_targets(fit, summary),
        "embed_iterations": {
            "min": iters.iter().min().copied().unwrap_or(0),
            "median": percentile(iters, 0.5),
            "p90": percentile(iters, 0.9),
            "max": iters.iter().max().copied().unwrap_or(0),
        },
        "max_e_c": max_e_c,
        "final_e_r": summary.metrics.final_e_r(),
        "max_e_r": summary.metrics.max_e_r(),
        "versions": { "neural-galerkin": env!("CARGO_PKG_VERSION") },
        "wall_seconds": summary.wall_seconds,
        "outputs": {
            "trajectory": summary.trajectory_path,
            "metrics": summary.metrics_path,
        },
    })
}

fn cfg_targets(_fit: &FitOutcome, summary: &RunSummary) -> serde_json::Value {
    // The frozen targets equal the test-grid estimates at step 0 up to
    // quadrature differences; report the step-0 test estimates.
    summary
        .quantity_labels
        .iter()
        .enumerate()
        .map(|(i, label)| json!({"quantity": label, "initial_test_estimate": summary.metrics.q_hat[i][0]}))
        .collect::<Vec<_>>()
        .into()
}
