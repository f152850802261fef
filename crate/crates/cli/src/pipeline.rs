//! data → linear approximation → initialization → training → evaluation,
//! repeated over schemes and seeds.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use ssnn_core::init::{initialize, GammaSelection, InitKind, InitScheme};
use ssnn_core::lti::{dataset_hash, estimate_lti, normalize_states, LtiModelFile, LtiProvenance, LtiStateSpace};
use ssnn_core::optim::{lm_train, StopReason, TrainOptions, TrainReport};
use ssnn_core::signal::{normalize_dataset, rmse_matrix, Dataset, Normalization};
use ssnn_core::ssnn::{simulate, Dims, Model, ModelFile};

use crate::config::{ExperimentConfig, TestProtocol};
use crate::data::{obtain_data, ExperimentData, TestRecord};
use crate::report::{aggregate, write_aggregate_csv, write_runs_csv, AggregateRow, RunRow};
use crate::Failure;

/// Everything shared by the runs of a sweep.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub data: ExperimentData,
    /// Normalized training record.
    pub train: Dataset,
    pub norm: Normalization,
    pub dims: Dims,
    /// State-normalized linear approximation, when a scheme needs one.
    pub lti: Option<LtiModelFile>,
}

impl Prepared {
    pub fn lti_model(&self) -> Option<LtiStateSpace> {
        self.lti.as_ref().map(|f| f.to_model().expect("stored model is consistent"))
    }

    pub fn lti_hash(&self) -> Option<String> {
        self.lti.as_ref().map(LtiModelFile::model_hash)
    }
}

/// Estimate the linear approximation on the normalized training record and
/// rescale its states to unit variance.
pub fn estimate_linear(cfg: &ExperimentConfig, train: &Dataset) -> anyhow::Result<LtiModelFile> {
    let est = estimate_lti(train, cfg.model.nx, &cfg.lti).context("estimating the linear approximation")?;
    let (model, scales) = normalize_states(&est.model, &train.u).context("normalizing the linear model's states")?;
    let x0 = est.x0.component_div(&scales);
    let provenance = LtiProvenance {
        dataset_hash: dataset_hash(train),
        order: cfg.model.nx,
        subspace_rmse: est.subspace_rmse,
        refined_rmse: est.refined_rmse,
        stable: est.stable,
        state_scales: Some(scales.iter().copied().collect()),
        warnings: est.warnings,
    };
    Ok(LtiModelFile::new(&model, Some(&x0), provenance))
}

pub fn prepare_with(cfg: &ExperimentConfig, data: ExperimentData) -> Result<Prepared, Failure> {
    let train = normalize_dataset(&data.train, cfg.training.normalize_output)
        .context("normalizing the training record")
        .map_err(Failure::Data)?;
    let norm = train.normalization.clone().expect("normalize_dataset records its map");
    let dims = Dims::new(cfg.model.nx, train.n_inputs(), train.n_outputs(), cfg.model.nn).map_err(|e| Failure::Config(e.into()))?;
    let lti = if cfg.schemes.iter().any(|k| k.needs_lti()) {
        Some(estimate_linear(cfg, &train).map_err(Failure::Data)?)
    } else {
        None
    };
    let prepared = Prepared {
        data,
        train,
        norm,
        dims,
        lti,
    };
    // A scheme that cannot be built from this configuration is a
    // configuration problem, not a diverged run.
    for &kind in &cfg.schemes {
        init_model(cfg, &prepared, kind, cfg.monte_carlo.base_seed)
            .with_context(|| format!("initializing {kind}"))
            .map_err(Failure::Config)?;
    }
    Ok(prepared)
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, Failure> {
    let data = obtain_data(cfg).map_err(Failure::Data)?;
    prepare_with(cfg, data)
}

pub fn init_model(cfg: &ExperimentConfig, p: &Prepared, kind: InitKind, seed: u64) -> anyhow::Result<(Model, Option<GammaSelection>)> {
    let scheme = InitScheme {
        kind,
        seed,
        z_max: Some(cfg.init.z_max),
        gamma: cfg.init.gamma,
    };
    Ok(initialize(&scheme, p.lti_model().as_ref(), p.dims, cfg.model.activation, &p.train.u)?)
}

/// Test RMSE in physical units, the model starting from the zero state.
/// `None` when the simulation diverges.
pub fn evaluate(model: &Model, norm: &Normalization, record: &TestRecord) -> anyhow::Result<Option<f64>> {
    let un = norm.normalize_input(&record.data.u);
    let n = un.nrows();
    let x0 = DVector::zeros(model.dims().nx);
    let (u_sim, skip) = match record.protocol {
        TestProtocol::Periodic { periods } => {
            let mut u = DMatrix::zeros(n * periods, un.ncols());
            for p in 0..periods {
                u.rows_mut(p * n, n).copy_from(&un);
            }
            (u, 0)
        }
        TestProtocol::Transient { skip } => (un, skip),
    };
    let sim = match simulate(model, &u_sim, &x0) {
        Ok(s) => s,
        Err(ssnn_core::Error::Divergence { .. }) => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let y_hat = norm.denormalize_output(&sim.y.rows(sim.y.nrows() - n, n).into_owned());
    let e = rmse_matrix(&record.data.y, &y_hat, skip)?;
    Ok(e.is_finite().then_some(e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestScore {
    pub test_record: String,
    pub rmse: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub scheme: InitKind,
    pub run: usize,
    pub seed: u64,
    pub gamma: Option<f64>,
    /// Training RMSE after each epoch (index 0: initial model), in output
    /// units for single-output data, normalized units otherwise.
    pub train_rmse: Vec<f64>,
    pub scores: Vec<TestScore>,
    /// Training failed; no scores.
    pub diverged: bool,
    pub error: Option<String>,
    pub stop_reason: Option<StopReason>,
    pub report: Option<TrainReport>,
    pub initial_model: Model,
}

fn rmse_scale(p: &Prepared) -> f64 {
    if p.norm.y_scale.len() == 1 {
        p.norm.y_scale[0]
    } else {
        1.0
    }
}

/// One scheme and seed: initialize, train, score every test record. Failures
/// after initialization are recorded, never raised.
pub fn run_one(cfg: &ExperimentConfig, p: &Prepared, kind: InitKind, run: usize) -> anyhow::Result<RunResult> {
    let seed = cfg.monte_carlo.base_seed.wrapping_add(run as u64);
    let (model, gamma) = init_model(cfg, p, kind, seed)?;
    let opts = TrainOptions {
        train_x0: cfg.training.train_x0,
        x0: None,
        free_blocks: None,
    };
    let mut result = RunResult {
        scheme: kind,
        run,
        seed,
        gamma: gamma.map(|g| g.gamma),
        train_rmse: Vec::new(),
        scores: Vec::new(),
        diverged: false,
        error: None,
        stop_reason: None,
        report: None,
        initial_model: model.clone(),
    };
    let report = match lm_train(&model, &p.train, &cfg.lm, &opts) {
        Ok(r) => r,
        Err(e) => {
            result.diverged = true;
            result.error = Some(e.to_string());
            result.scores = p
                .data
                .tests
                .iter()
                .map(|t| TestScore {
                    test_record: t.name.clone(),
                    rmse: None,
                })
                .collect();
            return Ok(result);
        }
    };
    let scale = rmse_scale(p);
    result.train_rmse = report.cost_curve().iter().map(|c| c.sqrt() * scale).collect();
    result.stop_reason = Some(report.stop_reason);
    for t in &p.data.tests {
        result.scores.push(TestScore {
            test_record: t.name.clone(),
            rmse: evaluate(&report.final_model, &p.norm, t)?,
        });
    }
    result.report = Some(report);
    Ok(result)
}

#[derive(Debug, Clone)]
pub struct MonteCarloReport {
    pub lti_hash: Option<String>,
    pub runs: Vec<RunResult>,
    pub rows: Vec<RunRow>,
    pub aggregates: Vec<AggregateRow>,
}

impl MonteCarloReport {
    pub fn runs_of(&self, kind: InitKind) -> impl Iterator<Item = &RunResult> {
        self.runs.iter().filter(move |r| r.scheme == kind)
    }

    pub fn aggregate_for(&self, kind: InitKind, test_record: &str) -> Option<&AggregateRow> {
        self.aggregates
            .iter()
            .find(|a| a.scheme == kind.name() && a.test_record == test_record)
    }
}

fn rows_of(runs: &[RunResult]) -> Vec<RunRow> {
    runs.iter()
        .flat_map(|r| {
            r.scores.iter().map(move |s| RunRow {
                scheme: r.scheme.name().to_string(),
                test_record: s.test_record.clone(),
                run: r.run,
                seed: r.seed,
                rmse: s.rmse,
                diverged: s.rmse.is_none(),
            })
        })
        .collect()
}

pub fn run_sweep(cfg: &ExperimentConfig, p: &Prepared) -> Result<MonteCarloReport, Failure> {
    let jobs: Vec<(InitKind, usize)> = cfg
        .schemes
        .iter()
        .flat_map(|&k| (0..cfg.monte_carlo.runs).map(move |r| (k, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.monte_carlo.workers.unwrap_or(0))
        .build()
        .map_err(|e| Failure::Config(e.into()))?;
    let runs = pool
        .install(|| {
            jobs.par_iter()
                .map(|&(k, r)| run_one(cfg, p, k, r).with_context(|| format!("{k} run {r}")))
                .collect::<anyhow::Result<Vec<_>>>()
        })
        .map_err(Failure::Data)?;
    let rows = rows_of(&runs);
    let aggregates = aggregate(&rows);
    Ok(MonteCarloReport {
        lti_hash: p.lti_hash(),
        runs,
        rows,
        aggregates,
    })
}

#[derive(Serialize)]
struct RunSummary<'a> {
    scheme: InitKind,
    run: usize,
    seed: u64,
    gamma: Option<f64>,
    lti_hash: Option<&'a str>,
    diverged: bool,
    error: Option<&'a str>,
    stop_reason: Option<StopReason>,
    epochs_run: Option<usize>,
    wall_time: Option<f64>,
    initial_train_rmse: Option<f64>,
    final_train_rmse: Option<f64>,
    scores: &'a [TestScore],
}

fn run_dir(out: &Path, r: &RunResult) -> PathBuf {
    out.join("runs").join(r.scheme.name()).join(format!("run_{:03}", r.run))
}

/// Per-run artifacts for one finished run.
pub fn write_run(out: &Path, p: &Prepared, cfg: &ExperimentConfig, r: &RunResult, lti_hash: Option<&str>) -> anyhow::Result<PathBuf> {
    let dir = run_dir(out, r);
    fs::create_dir_all(&dir)?;
    let summary = RunSummary {
        scheme: r.scheme,
        run: r.run,
        seed: r.seed,
        gamma: r.gamma,
        lti_hash,
        diverged: r.diverged,
        error: r.error.as_deref(),
        stop_reason: r.stop_reason,
        epochs_run: r.report.as_ref().map(|t| t.epochs_run),
        wall_time: r.report.as_ref().map(|t| t.wall_time),
        initial_train_rmse: r.train_rmse.first().copied(),
        final_train_rmse: r.train_rmse.last().copied(),
        scores: &r.scores,
    };
    fs::write(dir.join("run.json"), serde_json::to_string_pretty(&summary)?)?;
    ModelFile::new(&r.initial_model, None, Some(p.norm.clone())).save(dir.join("initial_model.json"))?;
    if let Some(report) = &r.report {
        ModelFile::new(&report.final_model, Some(&report.final_x0), Some(p.norm.clone())).save(dir.join("model.json"))?;
        fs::write(dir.join("train_report.json"), report.to_json()?)?;
        let f = fs::File::create(dir.join("epochs.csv"))?;
        report.write_epoch_csv(f, cfg.lm.lambda_init, rmse_scale(p))?;
    }
    Ok(dir)
}

/// `lti.json`, `runs.csv`, `aggregate.csv`, `report.json` and one directory
/// per run.
pub fn write_report(out: &Path, p: &Prepared, cfg: &ExperimentConfig, report: &MonteCarloReport) -> anyhow::Result<()> {
    fs::create_dir_all(out)?;
    if let Some(lti) = &p.lti {
        lti.save(out.join("lti.json"))?;
    }
    if let Some(m) = &p.data.manifest {
        fs::write(out.join("data_manifest.json"), serde_json::to_string_pretty(m)?)?;
    }
    fs::write(out.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
    for r in &report.runs {
        write_run(out, p, cfg, r, report.lti_hash.as_deref())?;
    }
    write_runs_csv(&report.rows, fs::File::create(out.join("runs.csv"))?)?;
    write_aggregate_csv(&report.aggregates, fs::File::create(out.join("aggregate.csv"))?)?;
    #[derive(Serialize)]
    struct Top<'a> {
        lti_hash: Option<&'a str>,
        runs: usize,
        diverged_runs: usize,
        aggregates: &'a [AggregateRow],
    }
    let top = Top {
        lti_hash: report.lti_hash.as_deref(),
        runs: report.runs.len(),
        diverged_runs: report.runs.iter().filter(|r| r.diverged).count(),
        aggregates: &report.aggregates,
    };
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&top)?)?;
    Ok(())
}

/// Prepare, sweep, and (with `out`) write every artifact. Fails with
/// [`Failure::AllDiverged`] after writing when no run produced a score.
pub fn run_pipeline(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<MonteCarloReport, Failure> {
    let p = prepare(cfg)?;
    let report = run_sweep(cfg, &p)?;
    if let Some(out) = out {
        write_report(out, &p, cfg, &report).map_err(Failure::Io)?;
    }
    if report.rows.iter().all(|r| r.diverged) {
        return Err(Failure::AllDiverged(format!("all {} runs diverged", report.runs.len())));
    }
    Ok(report)
}
