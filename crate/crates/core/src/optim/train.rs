use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::lm::{minimize, EpochRecord, LeastSquaresProblem, LmOptions, StepRecord, StopReason};
use crate::signal::Dataset;
use crate::ssnn::{self, pack, unpack, BlockName, Model, ModelFile, ParamLayout};
use crate::{Error, Result};

/// Mean squared simulation error over all `N·n_y` residuals, or `+∞` when the
/// simulation diverges.
pub fn cost(model: &Model, data: &Dataset, x0: &DVector<f64>) -> Result<f64> {
    if data.n_outputs() != model.dims().ny {
        return Err(Error::dim("dataset output count differs from the model"));
    }
    match ssnn::simulate(model, &data.u, x0) {
        Ok(sim) => Ok((&data.y - sim.y).norm_squared() / (data.len() * data.n_outputs()) as f64),
        Err(Error::Divergence { .. }) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    /// Estimate the initial state together with the weights.
    pub train_x0: bool,
    /// Starting initial state; zero when absent.
    pub x0: Option<Vec<f64>>,
    /// Restrict training to these blocks (all blocks when absent). `x0` is
    /// governed by `train_x0` alone.
    pub free_blocks: Option<Vec<BlockName>>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            train_x0: true,
            x0: None,
            free_blocks: None,
        }
    }
}

/// Outcome of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Initial cost, then the cost after every accepted epoch.
    pub cost_history: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
    pub final_model: Model,
    pub final_x0: DVector<f64>,
    /// Full parameter vector (all blocks, frozen ones included).
    pub final_theta: DVector<f64>,
    pub layout: ParamLayout,
    pub epochs_run: usize,
    pub stop_reason: StopReason,
    pub wall_time: f64,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    cost_history: &'a [f64],
    epochs: &'a [EpochRecord],
    steps: &'a [StepRecord],
    epochs_run: usize,
    stop_reason: StopReason,
    wall_time: f64,
    layout: &'a ParamLayout,
    final_theta: Vec<f64>,
    final_model: ModelFile,
}

impl TrainReport {
    pub fn initial_cost(&self) -> f64 {
        self.cost_history[0]
    }

    pub fn final_cost(&self) -> f64 {
        *self.cost_history.last().expect("history holds the initial cost")
    }

    /// Cost at the end of each epoch, index 0 being the initial cost.
    pub fn cost_curve(&self) -> Vec<f64> {
        std::iter::once(self.initial_cost())
            .chain(self.epochs.iter().map(|e| e.cost))
            .collect()
    }

    /// Training RMSE at the end of `epoch`; runs that stopped earlier keep
    /// their final value.
    pub fn rmse_at_epoch(&self, epoch: usize) -> f64 {
        let curve = self.cost_curve();
        curve[epoch.min(curve.len() - 1)].sqrt()
    }

    /// First epoch whose training RMSE is at or below `target`.
    pub fn first_epoch_reaching(&self, target: f64) -> Option<usize> {
        self.cost_curve().iter().position(|c| c.sqrt() <= target)
    }

    pub fn to_json(&self) -> Result<String> {
        let r = ReportJson {
            cost_history: &self.cost_history,
            epochs: &self.epochs,
            steps: &self.steps,
            epochs_run: self.epochs_run,
            stop_reason: self.stop_reason,
            wall_time: self.wall_time,
            layout: &self.layout,
            final_theta: self.final_theta.iter().copied().collect(),
            final_model: ModelFile::new(&self.final_model, Some(&self.final_x0), None),
        };
        Ok(serde_json::to_string_pretty(&r)?)
    }

    /// Per-epoch CSV `epoch,cost,rmse,lambda,accepted`. Row 0 is the initial
    /// point. `rmse_scale` converts the training RMSE to reporting units
    /// (the output scale of a normalized single-output dataset, or 1).
    pub fn write_epoch_csv<W: Write>(&self, w: W, lambda_init: f64, rmse_scale: f64) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Io(e.into());
        out.write_record(["epoch", "cost", "rmse", "lambda", "accepted"]).map_err(io)?;
        let c0 = self.initial_cost();
        out.write_record(&["0".to_string(), format!("{c0:e}"), format!("{:e}", c0.sqrt() * rmse_scale), format!("{lambda_init:e}"), "true".to_string()])
            .map_err(io)?;
        for e in &self.epochs {
            out.write_record(&[
                e.epoch.to_string(),
                format!("{:e}", e.cost),
                format!("{:e}", e.cost.sqrt() * rmse_scale),
                format!("{:e}", e.lambda),
                e.accepted.to_string(),
            ])
            .map_err(io)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Simulation-error least-squares problem over a subset of `θ`.
struct SimulationError<'a> {
    layout: ParamLayout,
    base: DVector<f64>,
    free: Vec<usize>,
    fixed_x0: DVector<f64>,
    u: &'a DMatrix<f64>,
    /// Outputs flattened in `k·n_y + i` order.
    y: DVector<f64>,
}

impl SimulationError<'_> {
    fn full(&self, t: &DVector<f64>) -> DVector<f64> {
        if self.free.len() == self.base.len() {
            return t.clone();
        }
        let mut f = self.base.clone();
        for (k, &i) in self.free.iter().enumerate() {
            f[i] = t[k];
        }
        f
    }

    fn model(&self, t: &DVector<f64>) -> Option<(Model, DVector<f64>)> {
        let (m, x0) = unpack(&self.full(t), &self.layout).ok()?;
        Some((m, x0.unwrap_or_else(|| self.fixed_x0.clone())))
    }

    fn residual(&self, y_hat: &DMatrix<f64>) -> DVector<f64> {
        let ny = y_hat.ncols();
        DVector::from_fn(self.y.len(), |j, _| self.y[j] - y_hat[(j / ny, j % ny)])
    }
}

impl LeastSquaresProblem for SimulationError<'_> {
    fn n_params(&self) -> usize {
        self.free.len()
    }

    fn n_residuals(&self) -> usize {
        self.y.len()
    }

    fn residuals(&mut self, theta: &DVector<f64>) -> Option<DVector<f64>> {
        let (m, x0) = self.model(theta)?;
        let sim = ssnn::simulate(&m, self.u, &x0).ok()?;
        Some(self.residual(&sim.y))
    }

    fn jacobian(&mut self, theta: &DVector<f64>) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let (m, x0) = self.model(theta)?;
        let (sim, j) = ssnn::jacobian(&m, self.u, &x0, &self.layout).ok()?;
        let j = if self.free.len() == self.base.len() {
            j
        } else {
            j.select_columns(&self.free)
        };
        Some((self.residual(&sim.y), j))
    }
}

/// Train `model` on `data` by Levenberg-Marquardt on the simulation error.
pub fn lm_train(model: &Model, data: &Dataset, lm: &LmOptions, opts: &TrainOptions) -> Result<TrainReport> {
    model.validate()?;
    let dims = model.dims();
    if data.n_inputs() != dims.nu || data.n_outputs() != dims.ny {
        return Err(Error::dim("dataset channel counts differ from the model"));
    }
    let x0 = match &opts.x0 {
        Some(v) if v.len() != dims.nx => return Err(Error::dim("initial x0 length differs from n_x")),
        Some(v) => DVector::from_column_slice(v),
        None => DVector::zeros(dims.nx),
    };
    // Report the true divergence sample rather than the optimizer's generic one.
    ssnn::simulate(model, &data.u, &x0)?;

    let packed = pack(model, opts.train_x0.then_some(&x0));
    let layout = packed.layout.clone();
    let free: Vec<usize> = match &opts.free_blocks {
        None => (0..layout.len()).collect(),
        Some(names) => {
            for n in names {
                if layout.block(*n).is_none() {
                    return Err(Error::arg(format!("block {} is not part of this model", n.symbol())));
                }
            }
            let mut names = names.clone();
            if opts.train_x0 {
                names.push(BlockName::X0);
            }
            layout.indices_of(&names)
        }
    };
    if free.is_empty() {
        return Err(Error::arg("no free parameters to train"));
    }
    let (n, ny) = (data.len(), dims.ny);
    let mut problem = SimulationError {
        layout: layout.clone(),
        base: packed.theta.clone(),
        free: free.clone(),
        fixed_x0: x0,
        u: &data.u,
        y: DVector::from_fn(n * ny, |j, _| data.y[(j / ny, j % ny)]),
    };
    let theta0 = DVector::from_fn(free.len(), |k, _| packed.theta[free[k]]);
    let res = minimize(&mut problem, theta0, lm)?;
    let final_theta = problem.full(&res.theta);
    let (final_model, final_x0) = problem.model(&res.theta).ok_or_else(|| Error::arg("final parameters do not unpack"))?;
    Ok(TrainReport {
        cost_history: res.cost_history,
        epochs: res.epochs,
        steps: res.steps,
        final_model,
        final_x0,
        final_theta,
        layout,
        epochs_run: res.epochs_run,
        stop_reason: res.stop_reason,
        wall_time: res.wall_time,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::simulate_lti;
    use crate::rng;
    use crate::signal::rmse_matrix;
    use crate::ssnn::testutil::{random_input, random_model};
    use crate::ssnn::{Activation, Dims, GrSsnnModel, Structure};

    fn dataset_from(model: &Model, u: DMatrix<f64>) -> Dataset {
        let y = ssnn::simulate(model, &u, &DVector::zeros(model.dims().nx)).unwrap().y;
        Dataset::new(u, y, 1.0).unwrap()
    }

    #[test]
    fn cost_examples() {
        let dims = Dims::new(2, 1, 1, 3).unwrap();
        let zero = Model::zeros(Structure::Ssnn, dims, Activation::Tanh);
        let u = random_input(100, 1, 1);
        let y = random_input(100, 1, 2);
        let d = Dataset::new(u, y.clone(), 1.0).unwrap();
        let r = crate::signal::rms(y.as_slice());
        let c = cost(&zero, &d, &DVector::zeros(2)).unwrap();
        assert!((c - r * r).abs() <= 1e-14 * r * r);

        let m = random_model(Structure::Ssnn, dims, Activation::Tanh, 4, 0.7);
        let y_hat = ssnn::simulate(&m, &d.u, &DVector::zeros(2)).unwrap().y;
        let e = rmse_matrix(&d.y, &y_hat, 0).unwrap();
        let c = cost(&m, &d, &DVector::zeros(2)).unwrap();
        assert!((c - e * e).abs() <= 1e-12 * e * e);

        let exact = dataset_from(&m, d.u.clone());
        assert_eq!(cost(&m, &exact, &DVector::zeros(2)).unwrap(), 0.0);
    }

    #[test]
    fn divergent_model_costs_infinity() {
        let lin = crate::lti::LtiStateSpace::new(
            DMatrix::from_element(1, 1, 3.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        let m = Model::GrSsnn(GrSsnnModel::from_linear(lin, 2, Activation::Tanh).unwrap());
        let d = Dataset::new(DMatrix::from_element(50, 1, 1.0), DMatrix::zeros(50, 1), 1.0).unwrap();
        assert_eq!(cost(&m, &d, &DVector::zeros(1)).unwrap(), f64::INFINITY);
        assert!(matches!(
            lm_train(&m, &d, &LmOptions::default(), &TrainOptions::default()),
            Err(Error::Divergence { .. })
        ));
    }

    /// With A, B and the nonlinear branch frozen, the output is linear in
    /// (C, D): the optimum is an ordinary least-squares fit on [x(k), u(k)].
    #[test]
    fn linear_in_parameters_subproblem_matches_least_squares() {
        // States scaled to unit variance, as the pipeline does before training.
        let n = 1000;
        let u = random_input(n, 1, 3);
        let lin = crate::lti::normalize_states(&crate::lti::tests::random_stable(3, 1, 1, 42, 0.9), &u).unwrap().0;
        let mut r = rng::substream(9, "noise");
        let clean = simulate_lti(&lin, &u, &DVector::zeros(3)).unwrap();
        let y = DMatrix::from_fn(n, 1, |k, _| clean.y[(k, 0)] + 0.1 * rng::symmetric_unit(&mut r));
        let d = Dataset::new(u.clone(), y.clone(), 1.0).unwrap();

        // Start away from the optimum: wrong C and D.
        let mut start = lin.clone();
        start.c.fill(0.0);
        start.d.fill(0.0);
        let m = Model::GrSsnn(GrSsnnModel::from_linear(start, 4, Activation::Tanh).unwrap());
        let opts = TrainOptions {
            train_x0: false,
            x0: None,
            free_blocks: Some(vec![BlockName::C, BlockName::D]),
        };
        let report = lm_train(&m, &d, &LmOptions::default(), &opts).unwrap();

        let phi = DMatrix::from_fn(n, 4, |k, j| if j < 3 { clean.x[(k, j)] } else { u[(k, 0)] });
        let yv = DVector::from_column_slice(y.as_slice());
        let ls = (phi.transpose() * &phi).cholesky().unwrap().solve(&(phi.transpose() * &yv));
        let best = (&yv - &phi * ls).norm_squared() / n as f64;
        let hit = report.cost_history.iter().take(3).position(|c| (c - best).abs() <= 1e-10 * best);
        assert!(hit.is_some_and(|k| k <= 2), "history {:?}, optimum {best}", report.cost_history);
        // Frozen blocks did not move.
        if let Model::GrSsnn(g) = &report.final_model {
            assert_eq!(g.linear.a, lin.a);
            assert_eq!(g.linear.b, lin.b);
            assert!(g.state.w_out.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn exact_model_stops_at_first_epoch() {
        let dims = Dims::new(2, 1, 1, 4).unwrap();
        let m = random_model(Structure::Ssnn, dims, Activation::Tanh, 8, 0.5);
        let d = dataset_from(&m, random_input(200, 1, 5));
        let report = lm_train(&m, &d, &LmOptions::default(), &TrainOptions::default()).unwrap();
        assert_eq!(report.epochs_run, 1);
        assert_eq!(report.stop_reason, StopReason::Tolerance);
        assert_eq!(report.final_cost(), 0.0);
    }

    fn teacher_student(structure: Structure, seed: u64) -> (Model, Dataset) {
        let dims = Dims::new(2, 1, 1, 4).unwrap();
        let teacher = random_model(Structure::Ssnn, dims, Activation::Tanh, 100 + seed, 0.6);
        let d = dataset_from(&teacher, random_input(300, 1, seed));
        (random_model(structure, dims, Activation::Tanh, seed, 0.3), d)
    }

    #[test]
    fn accepted_costs_strictly_decrease_and_runs_reproduce() {
        let lm = LmOptions {
            max_epochs: 25,
            ..LmOptions::default()
        };
        for structure in [Structure::Ssnn, Structure::GrSsnn] {
            let (m, d) = teacher_student(structure, 3);
            let a = lm_train(&m, &d, &lm, &TrainOptions::default()).unwrap();
            let b = lm_train(&m, &d, &lm, &TrainOptions::default()).unwrap();
            for w in a.cost_history.windows(2) {
                assert!(w[1] < w[0]);
            }
            assert!(a.final_cost() < a.initial_cost());
            assert!(a.epochs_run <= 25);
            assert_eq!(a.cost_history, b.cost_history);
            assert_eq!(a.final_theta, b.final_theta);
            assert_eq!(a.steps, b.steps);
        }
    }

    #[test]
    fn neuron_permutation_does_not_change_the_result() {
        let lm = LmOptions {
            max_epochs: 20,
            ..LmOptions::default()
        };
        let (m, d) = teacher_student(Structure::GrSsnn, 6);
        let p = m.permute_neurons(&[2, 0, 3, 1], &[1, 3, 0, 2]);
        let a = lm_train(&m, &d, &lm, &TrainOptions::default()).unwrap();
        let b = lm_train(&p, &d, &lm, &TrainOptions::default()).unwrap();
        let (ca, cb) = (a.final_cost(), b.final_cost());
        assert!((ca - cb).abs() <= 1e-6 * ca, "{ca} vs {cb}");
    }

    #[test]
    fn epoch_log_and_json() {
        let lm = LmOptions {
            max_epochs: 5,
            ..LmOptions::default()
        };
        let (m, d) = teacher_student(Structure::Ssnn, 2);
        let r = lm_train(&m, &d, &lm, &TrainOptions::default()).unwrap();
        let mut buf = Vec::new();
        r.write_epoch_csv(&mut buf, lm.lambda_init, 1.0).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epoch,cost,rmse,lambda,accepted\n0,"));
        assert_eq!(text.lines().count(), 2 + r.epochs.len());
        let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(v["epochs_run"], r.epochs_run);
        assert_eq!(r.rmse_at_epoch(0), r.initial_cost().sqrt());
        assert_eq!(r.rmse_at_epoch(1000), r.cost_curve().last().unwrap().sqrt());
        assert_eq!(r.first_epoch_reaching(f64::INFINITY), Some(0));
    }

    #[test]
    fn unknown_free_block_is_rejected() {
        let (m, d) = teacher_student(Structure::Ssnn, 1);
        let opts = TrainOptions {
            free_blocks: Some(vec![BlockName::A]),
            ..TrainOptions::default()
        };
        assert!(lm_train(&m, &d, &LmOptions::default(), &opts).is_err());
    }
}
