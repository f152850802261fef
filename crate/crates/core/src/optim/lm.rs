//! Levenberg-Marquardt on a truncated SVD of the Jacobian.
//!
//! Every epoch the sensitivity matrix `J = ∂ŷ/∂θ` is factored as `J = U S Vᵀ`
//! and the directions whose singular value falls below
//! `svd_rel_tol · s_max` are dropped. Those directions are the ones the model
//! output cannot see (state-basis changes, neuron permutations, linear terms
//! that the nonlinear branch can absorb), so the update is restricted to the
//! data-driven coordinate frame spanned by the retained right singular
//! vectors:
//!
//! ```text
//! Δ = V_r (S_r² + λI)⁻¹ S_r U_rᵀ r,    r = y − ŷ(θ)
//! ```
//!
//! A trial step is accepted only when it strictly lowers the cost; `λ` is
//! divided by ten after an accepted step and multiplied by ten after a
//! rejected one.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Residuals and output sensitivities of a parametrized model.
pub trait LeastSquaresProblem {
    fn n_params(&self) -> usize;

    fn n_residuals(&self) -> usize;

    /// `r = y − ŷ(θ)`, or `None` when the model output diverges.
    fn residuals(&mut self, theta: &DVector<f64>) -> Option<DVector<f64>>;

    /// Residuals together with `∂ŷ/∂θ` (note: the sensitivity of the model
    /// output, i.e. minus the Jacobian of the residuals).
    fn jacobian(&mut self, theta: &DVector<f64>) -> Option<(DVector<f64>, DMatrix<f64>)>;
}

#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmOptions {
    pub max_epochs: usize,
    pub lambda_init: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    /// Singular values below `svd_rel_tol · s_max` are discarded.
    pub svd_rel_tol: f64,
    /// Stop when the cost improved by less than this fraction over the last
    /// `cost_tol_window` epochs.
    pub cost_tol: f64,
    pub cost_tol_window: usize,
    pub max_lambda: f64,
    /// Rejected trial steps allowed within one epoch.
    pub max_retries: usize,
    /// Upper bound on `rows × cols` of the Jacobian.
    pub max_jacobian_entries: usize,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_epochs: 300,
            lambda_init: 1e-2,
            lambda_up: 10.0,
            lambda_down: 0.1,
            svd_rel_tol: 1e-8,
            cost_tol: 1e-9,
            cost_tol_window: 10,
            max_lambda: 1e10,
            max_retries: 20,
            max_jacobian_entries: 50_000_000,
        }
    }
}

impl LmOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_up > 1.0 && 1.0 > self.lambda_down && self.lambda_down > 0.0) {
            return Err(Error::arg("need lambda_up > 1 > lambda_down > 0"));
        }
        if !(self.svd_rel_tol > 0.0 && self.svd_rel_tol < 1.0) {
            return Err(Error::arg("svd_rel_tol must lie in (0, 1)"));
        }
        if self.max_epochs < 1 {
            return Err(Error::arg("max_epochs must be at least 1"));
        }
        if !(self.lambda_init > 0.0) || !(self.max_lambda > self.lambda_init) {
            return Err(Error::arg("need 0 < lambda_init < max_lambda"));
        }
        if !(self.cost_tol >= 0.0) || self.cost_tol_window < 1 {
            return Err(Error::arg("cost_tol must be >= 0 and its window >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    MaxEpochs,
    /// Zero residual, zero gradient, a step too small to move the
    /// parameters, or relative improvement below `cost_tol`.
    Tolerance,
    LambdaOverflow,
}

/// One trial step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub lambda: f64,
    /// Cost of the trial point (`inf` if the model diverged there).
    pub trial_cost: f64,
    pub accepted: bool,
}

/// State at the end of an epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub cost: f64,
    /// `λ` after the epoch's update rule was applied.
    pub lambda: f64,
    pub accepted: bool,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmResult {
    pub theta: DVector<f64>,
    /// Initial cost followed by the cost after each accepted epoch.
    pub cost_history: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
    pub epochs_run: usize,
    pub stop_reason: StopReason,
    pub wall_time: f64,
}

impl LmResult {
    pub fn final_cost(&self) -> f64 {
        *self.cost_history.last().expect("history holds the initial cost")
    }
}

/// Truncated SVD of `J` in a form that produces damped steps for any `λ`.
#[derive(Debug, Clone)]
pub struct DampedSubspace {
    /// Retained right singular vectors, `n_params × rank`.
    pub v: DMatrix<f64>,
    pub s: DVector<f64>,
    /// `U_rᵀ r`.
    pub projected: DVector<f64>,
}

impl DampedSubspace {
    pub fn new(j: &DMatrix<f64>, r: &DVector<f64>, rel_tol: f64) -> Result<Self> {
        let (m, n) = j.shape();
        if r.len() != m {
            return Err(Error::dim("residual length differs from Jacobian rows"));
        }
        let (s, v, projected) = if m > n {
            // QR of [J r] gives Q₁ᵀr in the last column of R, so the SVD only
            // has to be taken of the small triangular factor.
            let aug = faer::Mat::<f64>::from_fn(m, n + 1, |i, k| if k < n { j[(i, k)] } else { r[i] });
            let qr = aug.qr();
            let rf = qr.thin_R();
            let r_j = faer::Mat::<f64>::from_fn(n, n, |i, k| rf[(i, k)]);
            let qtr = DVector::from_fn(n, |i, _| rf[(i, n)]);
            let svd = r_j
                .thin_svd()
                .map_err(|e| Error::RankDeficient(format!("SVD failed: {e:?}")))?;
            let s = DVector::from_fn(n, |i, _| svd.S().column_vector()[i]);
            let u = DMatrix::from_fn(n, n, |a, b| svd.U()[(a, b)]);
            let v = DMatrix::from_fn(n, n, |a, b| svd.V()[(a, b)]);
            (s, v, u.transpose() * qtr)
        } else {
            let jf = faer::Mat::<f64>::from_fn(m, n, |a, b| j[(a, b)]);
            let svd = jf
                .thin_svd()
                .map_err(|e| Error::RankDeficient(format!("SVD failed: {e:?}")))?;
            let k = m.min(n);
            let s = DVector::from_fn(k, |i, _| svd.S().column_vector()[i]);
            let u = DMatrix::from_fn(m, k, |a, b| svd.U()[(a, b)]);
            let v = DMatrix::from_fn(n, k, |a, b| svd.V()[(a, b)]);
            (s, v, u.transpose() * r)
        };
        let s_max = s.iter().copied().fold(0.0, f64::max);
        let rank = s.iter().filter(|&&si| si > rel_tol * s_max && si > 0.0).count();
        // faer returns singular values in non-increasing order.
        Ok(DampedSubspace {
            v: v.columns(0, rank).into_owned(),
            s: s.rows(0, rank).into_owned(),
            projected: projected.rows(0, rank).into_owned(),
        })
    }

    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// `V_r (S_r² + λI)⁻¹ S_r U_rᵀ r`.
    pub fn step(&self, lambda: f64) -> DVector<f64> {
        let coeffs = DVector::from_fn(self.rank(), |i, _| {
            let s = self.s[i];
            s * self.projected[i] / (s * s + lambda)
        });
        &self.v * coeffs
    }

    /// `‖S_r U_rᵀ r‖`, the norm of the gradient restricted to the frame.
    pub fn gradient_norm(&self) -> f64 {
        self.s.component_mul(&self.projected).norm()
    }
}

fn mean_square(r: &DVector<f64>) -> f64 {
    r.norm_squared() / r.len() as f64
}

/// Minimize the mean squared residual starting from `theta0`.
pub fn minimize<P: LeastSquaresProblem>(
    problem: &mut P,
    theta0: DVector<f64>,
    opts: &LmOptions,
) -> Result<LmResult> {
    opts.validate()?;
    let start = Instant::now();
    let (m, n) = (problem.n_residuals(), problem.n_params());
    if theta0.len() != n {
        return Err(Error::dim(format!("theta has {} entries, problem has {n}", theta0.len())));
    }
    if m.saturating_mul(n) > opts.max_jacobian_entries {
        return Err(Error::JacobianTooLarge {
            rows: m,
            cols: n,
            limit: opts.max_jacobian_entries,
        });
    }
    let mut theta = theta0;
    let r0 = problem.residuals(&theta).ok_or(Error::Divergence { sample: 0 })?;
    let mut cost = mean_square(&r0);
    if !cost.is_finite() {
        return Err(Error::Divergence { sample: 0 });
    }
    let mut lambda = opts.lambda_init;
    let mut cost_history = vec![cost];
    let mut epochs: Vec<EpochRecord> = Vec::new();
    let mut steps = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;
    let mut epochs_run = 0;

    'epochs: for epoch in 1..=opts.max_epochs {
        epochs_run = epoch;
        if cost == 0.0 {
            stop_reason = StopReason::Tolerance;
            epochs.push(EpochRecord {
                epoch,
                cost,
                lambda,
                accepted: false,
                rank: 0,
            });
            break;
        }
        let (r, j) = problem
            .jacobian(&theta)
            .ok_or(Error::Divergence { sample: 0 })?;
        let frame = DampedSubspace::new(&j, &r, opts.svd_rel_tol)?;
        if frame.rank() == 0 || frame.gradient_norm() == 0.0 {
            stop_reason = StopReason::Tolerance;
            epochs.push(EpochRecord {
                epoch,
                cost,
                lambda,
                accepted: false,
                rank: frame.rank(),
            });
            break;
        }

        let mut accepted = false;
        for _ in 0..=opts.max_retries {
            let delta = frame.step(lambda);
            if delta.norm() <= f64::EPSILON * theta.norm() {
                // The damped step is below the resolution of θ: converged.
                epochs.push(EpochRecord {
                    epoch,
                    cost,
                    lambda,
                    accepted: false,
                    rank: frame.rank(),
                });
                stop_reason = StopReason::Tolerance;
                break 'epochs;
            }
            let trial = &theta + delta;
            let trial_cost = problem
                .residuals(&trial)
                .map(|r| mean_square(&r))
                .filter(|c| c.is_finite())
                .unwrap_or(f64::INFINITY);
            if trial_cost < cost {
                steps.push(StepRecord {
                    epoch,
                    lambda,
                    trial_cost,
                    accepted: true,
                });
                theta = trial;
                cost = trial_cost;
                lambda *= opts.lambda_down;
                accepted = true;
                break;
            }
            steps.push(StepRecord {
                epoch,
                lambda,
                trial_cost,
                accepted: false,
            });
            lambda *= opts.lambda_up;
            if lambda > opts.max_lambda {
                epochs.push(EpochRecord {
                    epoch,
                    cost,
                    lambda,
                    accepted: false,
                    rank: frame.rank(),
                });
                stop_reason = StopReason::LambdaOverflow;
                break 'epochs;
            }
        }
        if accepted {
            cost_history.push(cost);
        }
        epochs.push(EpochRecord {
            epoch,
            cost,
            lambda,
            accepted,
            rank: frame.rank(),
        });

        let w = opts.cost_tol_window;
        if epochs.len() > w {
            let before = epochs[epochs.len() - 1 - w].cost;
            if before - cost <= opts.cost_tol * before {
                stop_reason = StopReason::Tolerance;
                break;
            }
        }
    }

    Ok(LmResult {
        theta,
        cost_history,
        epochs,
        steps,
        epochs_run,
        stop_reason,
        wall_time: start.elapsed().as_secs_f64(),
    })
}
