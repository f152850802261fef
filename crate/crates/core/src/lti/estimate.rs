//! Linear approximation of a (possibly nonlinear) system: subspace
//! initialization followed by simulation-error refinement.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::subspace::{default_horizon, subspace_estimate};
use super::{simulate_lti, LtiStateSpace};
use crate::optim::{lm_train, LmOptions, StopReason, TrainOptions};
use crate::signal::{rmse_matrix, Dataset};
use crate::ssnn::{Activation, BlockName, GrSsnnModel, Model};
use crate::{Error, Result};

#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateOptions {
    /// Hankel block rows; `max(2·order + 2, 10)` when absent.
    pub horizon: Option<usize>,
    /// Run the simulation-error refinement stage.
    pub refine: bool,
    pub lm: LmOptions,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            horizon: None,
            refine: true,
            lm: LmOptions {
                max_epochs: 100,
                ..LmOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LtiEstimate {
    /// Refined model (the subspace model when refinement is off or failed).
    pub model: LtiStateSpace,
    pub x0: DVector<f64>,
    pub subspace_model: LtiStateSpace,
    pub subspace_x0: DVector<f64>,
    pub subspace_rmse: f64,
    pub refined_rmse: f64,
    pub refine_epochs: usize,
    pub refine_stop: Option<StopReason>,
    pub stable: bool,
    pub warnings: Vec<String>,
}

/// Estimate a linear state-space model of order `order` from `d`.
pub fn estimate_lti(d: &Dataset, order: usize, opts: &EstimateOptions) -> Result<LtiEstimate> {
    if order == 0 {
        return Err(Error::arg("model order must be at least 1"));
    }
    if d.len() < 20 * (order + 1) {
        return Err(Error::arg(format!(
            "order {order} needs at least {} samples, dataset has {}",
            20 * (order + 1),
            d.len()
        )));
    }
    let horizon = opts.horizon.unwrap_or_else(|| default_horizon(order));
    let sub = subspace_estimate(&d.u, &d.y, order, horizon)?;
    let mut warnings = Vec::new();
    if sub.input_rank_deficient {
        warnings.push(format!(
            "input is not persistently exciting of order {}: the input block-Hankel matrix is rank deficient",
            2 * horizon
        ));
    }
    let rmse_of = |m: &LtiStateSpace, x0: &DVector<f64>| -> Result<f64> {
        rmse_matrix(&d.y, &simulate_lti(m, &d.u, x0)?.y, 0)
    };
    let subspace_rmse = rmse_of(&sub.model, &sub.x0)?;

    let mut model = sub.model.clone();
    let mut x0 = sub.x0.clone();
    let mut refined_rmse = subspace_rmse;
    let mut refine_epochs = 0;
    let mut refine_stop = None;
    if opts.refine && subspace_rmse.is_finite() {
        // The linear model is trained as a residual network whose (silent)
        // nonlinear branch is frozen, so the same Jacobian and LM code serve.
        let net = Model::GrSsnn(GrSsnnModel::from_linear(sub.model.clone(), 1, Activation::Tanh)?);
        let train = TrainOptions {
            train_x0: true,
            x0: Some(sub.x0.iter().copied().collect()),
            free_blocks: Some(vec![BlockName::A, BlockName::B, BlockName::C, BlockName::D]),
        };
        match lm_train(&net, d, &opts.lm, &train) {
            Ok(report) => {
                if let Model::GrSsnn(g) = &report.final_model {
                    model = g.linear.clone();
                }
                x0 = report.final_x0.clone();
                refined_rmse = rmse_of(&model, &x0)?;
                refine_epochs = report.epochs_run;
                refine_stop = Some(report.stop_reason);
            }
            Err(Error::Divergence { sample }) => {
                warnings.push(format!(
                    "refinement skipped: the subspace model diverges at sample {sample}"
                ));
            }
            Err(e) => return Err(e),
        }
    }
    let stable = model.is_stable();
    if !stable {
        warnings.push(format!("estimated model is unstable (spectral radius {})", model.spectral_radius()));
    }
    Ok(LtiEstimate {
        model,
        x0,
        subspace_model: sub.model,
        subspace_x0: sub.x0,
        subspace_rmse,
        refined_rmse,
        refine_epochs,
        refine_stop,
        stable,
        warnings,
    })
}
