//! Nonlinear least-squares fit of the initial condition.
//!
//! Before stepping can start, the parametrization must represent the initial
//! field: `min_θ Σ_s ‖u(θ, x_s) − u₀(x_s)‖²`. A Levenberg–Marquardt
//! iteration (Gauss–Newton with adaptive Marquardt damping on the Gram
//! diagonal) is robust enough for the small networks used here and is fully
//! deterministic for a fixed starting parameter.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::params::{JetRequest, ParamVector, Parametrization, ParamsError};

#[derive(Debug, Error)]
pub enum FitError {
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error("non-finite residual or Jacobian during fit")]
    NonFinite,
    #[error("fit stalled at rmse {rmse:.3e} after {iterations} iterations (tol {tol:.3e})")]
    Nonconvergence { rmse: f64, iterations: usize, tol: f64, theta: ParamVector },
}

#[derive(Debug, Clone, Copy)]
pub struct FitSettings {
    /// Target root-mean-square residual over all samples and components.
    pub tol_rmse: f64,
    pub max_iters: usize,
    /// Initial Marquardt damping factor.
    pub lambda0: f64,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self { tol_rmse: 1e-5, max_iters: 500, lambda0: 1e-2 }
    }
}

pub struct FitReport {
    pub theta: ParamVector,
    pub rmse: f64,
    pub iterations: usize,
}

/// Fit θ so that the parametrized field matches `target` on the samples.
///
/// `samples` is a flat coordinate buffer with `dim` coordinates per point,
/// matching [`crate::models::SampleSet::coords`].
pub fn fit_initial(
    net: &dyn Parametrization,
    theta0: &ParamVector,
    samples: &crate::models::SampleSet,
    target: &dyn Fn(&[f64]) -> DVector<f64>,
    settings: FitSettings,
) -> Result<FitReport, FitError> {
    let m = net.output_dim();
    let p = net.param_count();
    let n_rows = samples.len() * m;
    let req = JetRequest::value().with_param_grad();

    let residual_and_system = |theta: &ParamVector,
                               with_system: bool|
     -> Result<(f64, Option<(DMatrix<f64>, DVector<f64>)>), FitError> {
        let mut sum_sq = 0.0;
        let mut gram = if with_system { Some(DMatrix::zeros(p, p)) } else { None };
        let mut grad = if with_system { Some(DVector::zeros(p)) } else { None };
        let value_req = if with_system { req } else { JetRequest::value() };
        for x in samples.iter() {
            let jet = net.eval_jet(theta, x, value_req)?;
            let r = &jet.value - target(x);
            if !r.iter().all(|v| v.is_finite()) {
                return Err(FitError::NonFinite);
            }
            sum_sq += r.norm_squared();
            if with_system {
                let j = jet.grad_theta();
                // gram += JᵀJ, grad += Jᵀr for this sample's m rows.
                gram.as_mut().unwrap().gemm_tr(1.0, j, j, 1.0);
                grad.as_mut().unwrap().gemv_tr(1.0, j, &r, 1.0);
            }
        }
        let rmse = (sum_sq / n_rows as f64).sqrt();
        if !rmse.is_finite() {
            return Err(FitError::NonFinite);
        }
        Ok((rmse, gram.zip(grad)))
    };

    let mut theta = theta0.clone();
    let (mut rmse, _) = residual_and_system(&theta, false)?;
    let mut lambda = settings.lambda0;
    for iter in 1..=settings.max_iters {
        if rmse <= settings.tol_rmse {
            return Ok(FitReport { theta, rmse, iterations: iter - 1 });
        }
        let (_, sys) = residual_and_system(&theta, true)?;
        let (gram, grad) = sys.expect("system requested");
        // Inner damping loop: retry with stronger damping until the step
        // reduces the residual.
        let mut accepted = false;
        for _ in 0..40 {
            let mut damped = gram.clone();
            for i in 0..p {
                let floor = damped[(i, i)].abs().max(1e-12);
                damped[(i, i)] += lambda * floor;
            }
            let step = match nalgebra::Cholesky::new(damped) {
                Some(ch) => ch.solve(&(-&grad)),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let trial = &theta + &step;
            let (trial_rmse, _) = match residual_and_system(&trial, false) {
                Ok(v) => v,
                Err(_) => {
                    lambda *= 10.0;
                    continue;
                }
            };
            if trial_rmse < rmse {
                theta = trial;
                rmse = trial_rmse;
                lambda = (lambda / 3.0).max(1e-14);
                accepted = true;
                break;
            }
            lambda *= 4.0;
            if lambda > 1e14 {
                break;
            }
        }
        if !accepted {
            if rmse <= settings.tol_rmse {
                return Ok(FitReport { theta, rmse, iterations: iter });
            }
            return Err(FitError::Nonconvergence {
                rmse,
                iterations: iter,
                tol: settings.tol_rmse,
                theta,
            });
        }
    }
    if rmse <= settings.tol_rmse {
        let iterations = settings.max_iters;
        return Ok(FitReport { theta, rmse, iterations });
    }
    Err(FitError::Nonconvergence {
        rmse,
        iterations: settings.max_iters,
        tol: settings.tol_rmse,
        theta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Domain, SampleSet};
    use crate::params::{build, Activation, Architecture, LinearFeatures, PeriodicSpec};

    #[test]
    fn linear_parametrization_is_fit_exactly() {
        let net = LinearFeatures::const_plus_sin_pi();
        let theta0 = DVector::from_column_slice(&[0.0, 0.0]);
        let samples = SampleSet::equidistant(&Domain::symmetric(1.0, 1), &[48], 0.0);
        let pi = std::f64::consts::PI;
        let target = |x: &[f64]| DVector::from_column_slice(&[0.7 + 0.25 * (pi * x[0]).sin()]);
        let report = fit_initial(
            &net,
            &theta0,
            &samples,
            &target,
            FitSettings { tol_rmse: 1e-10, ..Default::default() },
        )
        .unwrap();
        assert!(report.rmse <= 1e-10);
        assert!((report.theta[0] - 0.7).abs() < 1e-8);
        assert!((report.theta[1] - 0.25).abs() < 1e-8);
    }

    #[test]
    fn periodic_network_fits_a_smooth_bump() {
        let arch = Architecture {
            input_dim: 1,
            output_dim: 1,
            periodic: Some(PeriodicSpec { periods: vec![2.0], width: 8 }),
            hidden: vec![8],
            activation: Activation::Sin,
            output_bias: true,
        };
        let (net, theta0) = build(arch, 21).unwrap();
        let samples = SampleSet::equidistant(&Domain::symmetric(1.0, 1), &[96], 0.0);
        let target = |x: &[f64]| {
            DVector::from_column_slice(&[crate::models::periodized_gaussian(x[0], 1.0, 9.0, 2.0)])
        };
        let report = fit_initial(
            &net,
            &theta0,
            &samples,
            &target,
            FitSettings { tol_rmse: 1e-4, max_iters: 2000, ..Default::default() },
        )
        .unwrap();
        assert!(report.rmse <= 1e-4, "rmse {:.3e}", report.rmse);
    }

    #[test]
    fn fit_is_deterministic() {
        let arch = Architecture {
            input_dim: 1,
            output_dim: 1,
            periodic: Some(PeriodicSpec { periods: vec![2.0], width: 6 }),
            hidden: vec![6],
            activation: Activation::Sin,
            output_bias: true,
        };
        let (net, theta0) = build(arch, 5).unwrap();
        let samples = SampleSet::equidistant(&Domain::symmetric(1.0, 1), &[64], 0.0);
        let pi = std::f64::consts::PI;
        let target =
            |x: &[f64]| DVector::from_column_slice(&[0.4 * (pi * x[0]).sin() + 0.1]);
        let s = FitSettings { tol_rmse: 1e-6, max_iters: 800, ..Default::default() };
        let a = fit_initial(&net, &theta0, &samples, &target, s).unwrap();
        let b = fit_initial(&net, &theta0, &samples, &target, s).unwrap();
        assert_eq!(a.theta, b.theta);
        assert_eq!(a.rmse, b.rmse);
    }
}
