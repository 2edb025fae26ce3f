//! Experiment configuration: TOML schema, defaults, and validation.
//!
//! A config file fully determines a run: model, architecture, sample grids,
//! time stepping, solver variant, initial fit, reference solver, and output
//! layout. Reruns of a validated config with the same seed are byte-identical.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{Burgers, Domain, PdeModel, ShallowWater, Wave};
use crate::params::{Activation, Architecture, PeriodicSpec};
use crate::timeint::Scheme;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {source}")]
    Parse { path: PathBuf, source: Box<toml::de::Error> },
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

/// Which velocity field and correction the stepper uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Regularized least-squares velocities, no conservation machinery.
    Plain,
    /// Stage velocities projected onto the tangent space of the sampled
    /// quantities (conservation in continuous time only).
    Constrained,
    /// Constrained velocities plus a post-step embedding onto the sampled
    /// quantity manifold (conservation in discrete time).
    Embedded,
    /// Structure-preserving weighted system for factorizable Hamiltonians.
    Weighted,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Plain => "plain",
            Variant::Constrained => "constrained",
            Variant::Embedded => "embedded",
            Variant::Weighted => "weighted",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    /// Name used for output files and the manifest.
    pub name: String,
    pub variant: Variant,
    /// Seed for the network initialization (and the fit, unless
    /// `fit.seeds` overrides it).
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_seed() -> u64 {
    0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Burgers,
    Wave,
    ShallowWater,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    /// Wave speed (wave model only).
    #[serde(default = "default_one")]
    pub c: f64,
    /// Reference density ρ̄ (wave model only).
    #[serde(default = "default_one")]
    pub rho_ref: f64,
}

fn default_one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSection {
    /// Width of the periodic input layer.
    pub periodic_width: usize,
    /// Hidden layer widths after the periodic layer.
    pub hidden: Vec<usize>,
    /// Bias on the linear output layer. Must be `false` for the weighted
    /// variant, which needs the separable (basis ⊗ coefficient) view.
    #[serde(default)]
    pub output_bias: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    /// Least-squares grid shape (points per axis) for the tangent solve.
    pub lsq: Vec<usize>,
    /// Quantity-estimation grid shape for constraints and embeddings.
    pub quantity: Vec<usize>,
    /// Test grid shape for error metrics.
    pub test: Vec<usize>,
    /// Test-grid shift in units of the least-squares grid cell; the default
    /// quarter cell keeps every benchmark's test grid disjoint from both
    /// training grids.
    #[serde(default = "default_test_offset")]
    pub test_offset: f64,
}

fn default_test_offset() -> f64 {
    0.25
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub t_end: f64,
    pub dt: f64,
    pub scheme: Scheme,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    /// Relative Tikhonov scale for the tangent solve.
    #[serde(default = "default_reg")]
    pub reg: f64,
    /// Embedding stopping tolerance on ‖c‖∞.
    #[serde(default = "default_embed_tol")]
    pub embed_tol: f64,
    /// Embedding iteration cap.
    #[serde(default = "default_embed_kmax")]
    pub embed_kmax: usize,
}

fn default_reg() -> f64 {
    1e-8
}

fn default_embed_tol() -> f64 {
    1e-12
}

fn default_embed_kmax() -> usize {
    50
}

impl Default for SolverSection {
    fn default() -> Self {
        Self { reg: default_reg(), embed_tol: default_embed_tol(), embed_kmax: default_embed_kmax() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    #[serde(default = "default_fit_tol")]
    pub tol_rmse: f64,
    #[serde(default = "default_fit_iters")]
    pub max_iters: usize,
    /// Candidate initialization seeds; the best fit wins. Empty means
    /// `[experiment.seed]`.
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// Fit grid shape; empty means the least-squares grid.
    #[serde(default)]
    pub grid: Vec<usize>,
}

fn default_fit_tol() -> f64 {
    1e-5
}

fn default_fit_iters() -> usize {
    500
}

impl Default for FitSection {
    fn default() -> Self {
        Self {
            tol_rmse: default_fit_tol(),
            max_iters: default_fit_iters(),
            seeds: Vec::new(),
            grid: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSection {
    /// Spectral grid size per axis.
    pub n: usize,
    pub dt: f64,
    /// Cache file, relative to the output directory. Empty means
    /// `reference.bin`.
    #[serde(default)]
    pub file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Output directory; relative paths resolve against the working
    /// directory, or against `NG_OUTPUT_ROOT` when that is set.
    pub dir: PathBuf,
    /// Store every `stride`-th step in the trajectory and metrics files
    /// (step 0 and the final step are always stored). Must divide the step
    /// count.
    #[serde(default = "default_stride")]
    pub stride: usize,
}

fn default_stride() -> usize {
    1
}

/// A parsed, not yet validated experiment file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub experiment: ExperimentSection,
    pub model: ModelSection,
    pub architecture: ArchitectureSection,
    pub sampling: SamplingSection,
    pub time: TimeSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub fit: FitSection,
    pub reference: ReferenceSection,
    pub output: OutputSection,
}

impl Config {
    pub fn from_path(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Config::from_str(&text, path)
    }

    pub fn from_str(text: &str, path: &Path) -> Result<Config, ConfigError> {
        toml::from_str(text)
            .map_err(|source| ConfigError::Parse { path: path.to_path_buf(), source: Box::new(source) })
    }

    /// Instantiate the benchmark model.
    pub fn build_model(&self) -> Box<dyn PdeModel> {
        match self.model.kind {
            ModelKind::Burgers => Box::new(Burgers::benchmark()),
            ModelKind::Wave => {
                let bench = Wave::benchmark();
                Box::new(Wave::new(self.model.c, self.model.rho_ref, bench.ic_width))
            }
            ModelKind::ShallowWater => Box::new(ShallowWater::benchmark()),
        }
    }

    /// Architecture for the model's domain and field dimension.
    pub fn build_architecture(&self, model: &dyn PdeModel) -> Architecture {
        Architecture {
            input_dim: model.spatial_dim(),
            output_dim: model.field_dim(),
            periodic: Some(PeriodicSpec {
                periods: model.domain().lengths(),
                width: self.architecture.periodic_width,
            }),
            hidden: self.architecture.hidden.clone(),
            activation: Activation::Sin,
            output_bias: self.architecture.output_bias,
        }
    }

    /// Number of time steps (validated to be integral).
    pub fn n_steps(&self) -> usize {
        (self.time.t_end / self.time.dt).round() as usize
    }

    /// Output directory after applying the `NG_OUTPUT_ROOT` override.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os("NG_OUTPUT_ROOT") {
            Some(root) if self.output.dir.is_relative() => {
                PathBuf::from(root).join(&self.output.dir)
            }
            _ => self.output.dir.clone(),
        }
    }

    pub fn reference_path(&self) -> PathBuf {
        let name = if self.reference.file.is_empty() {
            "reference.bin"
        } else {
            self.reference.file.as_str()
        };
        self.output_dir().join(name)
    }

    /// Validate cross-field invariants. Returns the validated step count.
    pub fn validate(&self) -> Result<usize, ConfigError> {
        let model = self.build_model();
        let d = model.spatial_dim();
        for (label, shape) in [
            ("sampling.lsq", &self.sampling.lsq),
            ("sampling.quantity", &self.sampling.quantity),
            ("sampling.test", &self.sampling.test),
        ] {
            if shape.len() != d {
                return Err(invalid(format!(
                    "{label} must list {d} axis sizes for model '{}', got {}",
                    model.name(),
                    shape.len()
                )));
            }
            if shape.iter().any(|&n| n == 0) {
                return Err(invalid(format!("{label} contains a zero axis")));
            }
        }
        if !self.fit.grid.is_empty() && self.fit.grid.len() != d {
            return Err(invalid(format!("fit.grid must list {d} axis sizes")));
        }

        if !(self.time.dt > 0.0) || !(self.time.t_end > 0.0) {
            return Err(invalid("time.dt and time.t_end must be positive"));
        }
        let steps = self.time.t_end / self.time.dt;
        let k = steps.round();
        if k < 1.0 || (steps - k).abs() > 1e-9 * k {
            return Err(invalid(format!(
                "time.t_end ({}) must be an integer number of steps of time.dt ({})",
                self.time.t_end, self.time.dt
            )));
        }
        let n_steps = k as usize;

        if self.output.stride == 0 || n_steps % self.output.stride != 0 {
            return Err(invalid(format!(
                "output.stride ({}) must divide the step count ({n_steps})",
                self.output.stride
            )));
        }

        if !(self.solver.reg >= 0.0) {
            return Err(invalid("solver.reg must be nonnegative"));
        }
        if self.solver.embed_kmax == 0 || !(self.solver.embed_tol > 0.0) {
            return Err(invalid("solver.embed_tol must be positive and embed_kmax nonzero"));
        }

        if self.experiment.variant == Variant::Weighted {
            if self.architecture.output_bias {
                return Err(invalid(
                    "the weighted variant needs a separable network: set \
                     architecture.output_bias = false",
                ));
            }
            if model.hamiltonian().is_none() {
                return Err(invalid(format!(
                    "model '{}' has no factorizable Hamiltonian structure for \
                     the weighted variant",
                    model.name()
                )));
            }
        }

        // Every stored output time must land on a reference solver step.
        if !(self.reference.dt > 0.0) || self.reference.n < 16 {
            return Err(invalid("reference.dt must be positive and reference.n ≥ 16"));
        }
        let stored_dt = self.time.dt * self.output.stride as f64;
        let ratio = stored_dt / self.reference.dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.round().max(1.0) {
            return Err(invalid(format!(
                "reference.dt ({}) must divide the stored step spacing ({stored_dt})",
                self.reference.dt
            )));
        }

        let domain = model.domain();
        self.check_grid_disjointness(&domain)?;
        Ok(n_steps)
    }

    /// The test grid must share no point with the least-squares or quantity
    /// grids. Tensor grids intersect only if they collide on every axis, so
    /// each training grid is cleared by one collision-free axis.
    fn check_grid_disjointness(&self, domain: &Domain) -> Result<(), ConfigError> {
        let d = domain.dim();
        let lengths = domain.lengths();
        for (label, shape) in
            [("lsq", &self.sampling.lsq), ("quantity", &self.sampling.quantity)]
        {
            let mut disjoint = false;
            for axis in 0..d {
                let len = lengths[axis];
                let n_test = self.sampling.test[axis];
                let h_test = len / n_test as f64;
                let shift = self.sampling.test_offset * len / self.sampling.lsq[axis] as f64;
                let h_train = len / shape[axis] as f64;
                let collides = (0..n_test).any(|i| {
                    let x = i as f64 * h_test + shift;
                    let j = (x / h_train).round();
                    (x - j * h_train).abs() < 1e-9 * h_train && (j as usize) < shape[axis]
                });
                if !collides {
                    disjoint = true;
                    break;
                }
            }
            if !disjoint {
                return Err(invalid(format!(
                    "test grid coincides with the {label} grid; adjust \
                     sampling.test_offset or the grid sizes"
                )));
            }
        }
        Ok(())
    }

    /// Offset of the test grid in units of its own cell (the form the
    /// sampling and interpolation routines use).
    pub fn test_offset_in_test_cells(&self, axis: usize) -> f64 {
        self.sampling.test_offset * self.sampling.test[axis] as f64
            / self.sampling.lsq[axis] as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_toml() -> String {
        r#"
[experiment]
name = "burgers_demo"
variant = "embedded"
seed = 3

[model]
kind = "burgers"

[architecture]
periodic_width = 10
hidden = [10, 10, 10]
output_bias = true

[sampling]
lsq = [200]
quantity = [200]
test = [400]

[time]
t_end = 0.2
dt = 5e-3
scheme = "rk4"

[reference]
n = 256
dt = 1e-3

[output]
dir = "out/burgers_demo"
"#
        .to_string()
    }

    #[test]
    fn round_trips_and_validates_the_burgers_preset() {
        let cfg = Config::from_str(&base_toml(), Path::new("mem")).unwrap();
        assert_eq!(cfg.validate().unwrap(), 40);
        assert_eq!(cfg.n_steps(), 40);
        assert_eq!(cfg.experiment.variant, Variant::Embedded);
        assert_eq!(cfg.solver.reg, 1e-8);
        // Quarter-cell offset on a half-spacing test grid → half a test cell.
        assert!((cfg.test_offset_in_test_cells(0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_mismatched_step_count() {
        let toml = base_toml().replace("dt = 5e-3", "dt = 3e-3");
        let cfg = Config::from_str(&toml, Path::new("mem")).unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("integer number of steps"));
    }

    #[test]
    fn rejects_coincident_test_grid() {
        let toml = base_toml().replace(
            "test = [400]",
            "test = [400]\ntest_offset = 0.0",
        );
        let cfg = Config::from_str(&toml, Path::new("mem")).unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("test grid coincides"));
    }

    #[test]
    fn rejects_weighted_variant_with_output_bias() {
        let toml = base_toml()
            .replace("variant = \"embedded\"", "variant = \"weighted\"")
            .replace("kind = \"burgers\"", "kind = \"wave\"")
            .replace("lsq = [200]", "lsq = [256]")
            .replace("quantity = [200]", "quantity = [256]")
            .replace("test = [400]", "test = [512]");
        let cfg = Config::from_str(&toml, Path::new("mem")).unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("output_bias"));
    }

    #[test]
    fn rejects_reference_step_that_misses_stored_times() {
        let toml = base_toml().replace("dt = 1e-3", "dt = 2e-3");
        let cfg = Config::from_str(&toml, Path::new("mem")).unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("reference.dt"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let toml = base_toml() + "\n[solver]\ntypo_field = 1.0\n";
        assert!(Config::from_str(&toml, Path::new("mem")).is_err());
    }
}
