//! Training and test records of an experiment, simulated or read from disk.

use std::fs;
use std::path::Path;

use anyhow::Context;
use ssnn_core::bench::{load_dataset, make_boucwen_datasets, make_wh_datasets, save_dataset, BenchmarkData, DatasetManifest};
use ssnn_core::signal::Dataset;

use crate::config::{DataSource, ExperimentConfig, TestProtocol};

#[derive(Debug, Clone, PartialEq)]
pub struct TestRecord {
    pub name: String,
    pub data: Dataset,
    pub protocol: TestProtocol,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentData {
    /// Physical units.
    pub train: Dataset,
    pub tests: Vec<TestRecord>,
    pub manifest: Option<DatasetManifest>,
}

fn from_benchmark(b: BenchmarkData, cfg: &ExperimentConfig) -> ExperimentData {
    let mut tests = vec![TestRecord {
        name: "multisine".into(),
        data: b.test_multisine,
        protocol: TestProtocol::Periodic {
            periods: cfg.evaluation.periods,
        },
    }];
    if let Some(sweep) = b.test_sweep {
        tests.push(TestRecord {
            name: "sweep".into(),
            data: sweep,
            protocol: TestProtocol::Transient {
                skip: cfg.evaluation.sweep_skip,
            },
        });
    }
    ExperimentData {
        train: b.train,
        tests,
        manifest: Some(b.manifest),
    }
}

pub fn obtain_data(cfg: &ExperimentConfig) -> anyhow::Result<ExperimentData> {
    let data = match &cfg.data {
        DataSource::BoucWen(spec) => from_benchmark(make_boucwen_datasets(spec)?, cfg),
        DataSource::WienerHammerstein(spec) => from_benchmark(make_wh_datasets(spec)?, cfg),
        DataSource::Files(f) => {
            let train = load_dataset(&f.train, f.sample_rate)
                .with_context(|| format!("loading training data {}", f.train.display()))?;
            let mut tests = Vec::with_capacity(f.tests.len());
            for t in &f.tests {
                let data = load_dataset(&t.path, f.sample_rate)
                    .with_context(|| format!("loading test record {:?}", t.name))?;
                if (data.n_inputs(), data.n_outputs()) != (train.n_inputs(), train.n_outputs()) {
                    anyhow::bail!("test record {:?} has a different channel layout than the training data", t.name);
                }
                tests.push(TestRecord {
                    name: t.name.clone(),
                    data,
                    protocol: t.protocol,
                });
            }
            ExperimentData {
                train,
                tests,
                manifest: None,
            }
        }
    };
    for t in &data.tests {
        if let TestProtocol::Transient { skip } = t.protocol {
            if skip >= t.data.len() {
                anyhow::bail!("test record {:?}: skip {skip} leaves no samples out of {}", t.name, t.data.len());
            }
        }
    }
    Ok(data)
}

/// `train.csv`, `test_<name>.csv` (with sidecars) and `manifest.json`.
pub fn write_data(d: &ExperimentData, dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    save_dataset(&d.train, dir.join("train.csv"))?;
    for t in &d.tests {
        save_dataset(&t.data, dir.join(format!("test_{}.csv", t.name)))?;
    }
    if let Some(m) = &d.manifest {
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(m)?)?;
    }
    Ok(())
}
