use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use ssnn_core::init::InitKind;
use ssnn_core::ssnn::ModelFile;
use ssnn_cli::config::{schema_json, ExperimentConfig};
use ssnn_cli::data::{obtain_data, write_data};
use ssnn_cli::pipeline::{evaluate, prepare, run_one, run_pipeline, write_run, TestScore};
use ssnn_cli::report::{read_runs_file, summarize, write_aggregate_csv, write_runs_csv};
use ssnn_cli::Failure;

#[derive(Parser)]
#[command(name = "ssnn", version, about = "State-space neural network identification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `monte_carlo.base_seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate or load the training and test records and write them as CSV.
    GenerateData(Common),
    /// Estimate the state-normalized linear approximation.
    EstimateLti(Common),
    /// Train a single model.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scheme: InitKind,
        /// Run index; the seed is `base_seed + run`.
        #[arg(long, default_value_t = 0)]
        run: usize,
    },
    /// Score a saved model on the configured test records.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Monte-Carlo sweep over the configured schemes.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Overrides `monte_carlo.runs`.
        #[arg(long)]
        runs: Option<usize>,
        /// Overrides `monte_carlo.workers`.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Pool run tables (`runs.csv`) into one long table and its aggregate.
    Summarize {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "summary")]
        out: PathBuf,
    },
    /// Print the JSON schema of the experiment configuration.
    Schema,
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf), Failure> {
    let mut cfg = ExperimentConfig::load(&common.config).map_err(Failure::Config)?;
    if let Some(s) = common.seed {
        cfg.monte_carlo.base_seed = s;
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.output_dir());
    Ok((cfg, out))
}

fn io<T>(r: anyhow::Result<T>) -> Result<T, Failure> {
    r.map_err(Failure::Io)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Failure> {
    io((|| {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_string_pretty(value)?)?;
        Ok(())
    })())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenerateData(common) => {
            let (cfg, out) = load(&common)?;
            let data = obtain_data(&cfg).map_err(Failure::Data)?;
            io(write_data(&data, &out))?;
            eprintln!("wrote {} records to {}", 1 + data.tests.len(), out.display());
        }
        Command::EstimateLti(common) => {
            let (cfg, out) = load(&common)?;
            let train = ssnn_core::signal::normalize_dataset(&obtain_data(&cfg).map_err(Failure::Data)?.train, cfg.training.normalize_output)
                .map_err(|e| Failure::Data(e.into()))?;
            let lti = ssnn_cli::pipeline::estimate_linear(&cfg, &train).map_err(Failure::Data)?;
            io(fs::create_dir_all(&out).map_err(Into::into))?;
            io(lti.save(out.join("lti.json")).map_err(Into::into))?;
            let p = &lti.provenance;
            eprintln!(
                "order {}: subspace rmse {:.3e}, refined rmse {:.3e}, stable {}",
                p.order, p.subspace_rmse, p.refined_rmse, p.stable
            );
            for w in &p.warnings {
                eprintln!("warning: {w}");
            }
        }
        Command::Train { common, scheme, run } => {
            let (mut cfg, out) = load(&common)?;
            cfg.schemes = vec![scheme];
            let p = prepare(&cfg)?;
            let r = run_one(&cfg, &p, scheme, run).map_err(Failure::Data)?;
            let dir = io(write_run(&out, &p, &cfg, &r, p.lti_hash().as_deref()))?;
            if let Some(lti) = &p.lti {
                io(lti.save(out.join("lti.json")).map_err(Into::into))?;
            }
            for s in &r.scores {
                eprintln!("{}: {}", s.test_record, s.rmse.map_or("diverged".to_string(), |v| format!("{v:.4e}")));
            }
            eprintln!("artifacts in {}", dir.display());
            if r.diverged {
                return Err(Failure::AllDiverged(format!("training diverged: {}", r.error.unwrap_or_default())));
            }
        }
        Command::Evaluate { common, model } => {
            let (cfg, out) = load(&common)?;
            let file = ModelFile::load(&model).map_err(|e| Failure::Data(e.into()))?;
            let (m, _) = file.to_model().map_err(|e| Failure::Data(e.into()))?;
            let norm = file
                .normalization
                .clone()
                .ok_or_else(|| Failure::Data(anyhow::anyhow!("model file carries no normalization")))?;
            let data = obtain_data(&cfg).map_err(Failure::Data)?;
            let mut scores = Vec::new();
            for t in &data.tests {
                let rmse = evaluate(&m, &norm, t).with_context(|| format!("evaluating {}", t.name)).map_err(Failure::Data)?;
                eprintln!("{}: {}", t.name, rmse.map_or("diverged".to_string(), |v| format!("{v:.4e}")));
                scores.push(TestScore {
                    test_record: t.name.clone(),
                    rmse,
                });
            }
            write_json(&out.join("evaluation.json"), &scores)?;
            if scores.iter().all(|s| s.rmse.is_none()) {
                return Err(Failure::AllDiverged("the model diverges on every test record".into()));
            }
        }
        Command::Sweep { common, runs, workers } => {
            let (mut cfg, out) = load(&common)?;
            if let Some(n) = runs {
                cfg.monte_carlo.runs = n;
            }
            if workers.is_some() {
                cfg.monte_carlo.workers = workers;
            }
            cfg.validate().map_err(Failure::Config)?;
            let report = run_pipeline(&cfg, Some(&out))?;
            for a in &report.aggregates {
                eprintln!(
                    "{:>13} {:>10}: median {} (p10 {}, p90 {}), {} of {} diverged",
                    a.scheme,
                    a.test_record,
                    a.median.map_or("-".into(), |v| format!("{v:.4e}")),
                    a.p10.map_or("-".into(), |v| format!("{v:.4e}")),
                    a.p90.map_or("-".into(), |v| format!("{v:.4e}")),
                    a.diverged,
                    a.runs
                );
            }
            eprintln!("results in {}", out.display());
        }
        Command::Summarize { inputs, out } => {
            let tables = inputs
                .iter()
                .map(|p| read_runs_file(p))
                .collect::<anyhow::Result<Vec<_>>>()
                .map_err(Failure::Data)?;
            let (rows, agg) = summarize(&tables).map_err(Failure::Data)?;
            io((|| {
                fs::create_dir_all(&out)?;
                write_runs_csv(&rows, fs::File::create(out.join("runs.csv"))?)?;
                write_aggregate_csv(&agg, fs::File::create(out.join("aggregate.csv"))?)?;
                Ok(())
            })())?;
            eprintln!("{} rows, {} groups written to {}", rows.len(), agg.len(), out.display());
        }
        Command::Schema => print!("{}", schema_json()),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
