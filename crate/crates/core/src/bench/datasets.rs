//! Training and test records for the two benchmark systems.
//!
//! Periodic records are steady-state periods: the period is repeated from
//! the state left by the previous one until two consecutive periods agree.

use serde::{Deserialize, Serialize};

use super::boucwen::{simulate_boucwen_from, BoucWenParams, BoucWenState};
use super::wh::{add_output_noise, simulate_wh_from, WhSpec, WhState};
use crate::signal::{generate_multisine, generate_sinesweep, rms, Dataset, MultisineSpec, SweepSpec};
use crate::{Error, Result};

const SIMULATOR_VERSION: &str = env!("CARGO_PKG_VERSION");

fn default_tol() -> f64 {
    1e-6
}

fn default_max_periods() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteadyState {
    #[serde(skip)]
    pub y: Vec<f64>,
    /// Periods simulated, the kept one included.
    pub periods: usize,
    /// `rms(last − previous) / rms(last)`.
    pub residual: f64,
}

/// Repeat one period of `u` until two consecutive output periods agree to
/// `tol` (relative RMS), simulating at least two periods.
fn periodic_steady_state<S: Clone>(
    u: &[f64],
    init: S,
    tol: f64,
    max_periods: usize,
    mut step: impl FnMut(&[f64], &S) -> Result<(Vec<f64>, S)>,
) -> Result<(SteadyState, S)> {
    let (mut prev, mut state) = step(u, &init)?;
    for periods in 2..=max_periods.max(2) {
        let start = state.clone();
        let (y, next) = step(u, &start)?;
        let scale = rms(&y);
        let diff: Vec<f64> = y.iter().zip(&prev).map(|(a, b)| a - b).collect();
        let residual = if scale > 0.0 { rms(&diff) / scale } else { rms(&diff) };
        if residual <= tol {
            return Ok((SteadyState { y, periods, residual }, start));
        }
        prev = y;
        state = next;
    }
    Err(Error::arg(format!(
        "no periodic steady state within {max_periods} periods at relative tolerance {tol}"
    )))
}

#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoucWenDataSpec {
    pub params: BoucWenParams,
    /// Training excitation; the test multisine uses the same spec with
    /// `test_seed`.
    pub multisine: MultisineSpec,
    pub test_seed: u64,
    pub sweep: SweepSpec,
    /// Seconds; the time needed to cover the band when absent.
    #[serde(default)]
    pub sweep_duration: Option<f64>,
    #[serde(default = "default_tol")]
    pub steady_state_tol: f64,
    #[serde(default = "default_max_periods")]
    pub max_periods: usize,
}

impl BoucWenDataSpec {
    /// 8192-sample multisine, 5–150 Hz at 50 N rms; 20–50 Hz sweep at
    /// 10 Hz/min and 40 N rms.
    pub fn with_params(params: BoucWenParams, n_samples: usize, seed: u64) -> Self {
        let fs = params.sample_rate;
        BoucWenDataSpec {
            params,
            multisine: MultisineSpec {
                n_samples,
                sample_rate: fs,
                f_min: 5.0,
                f_max: 150.0,
                target_rms: 50.0,
                seed,
            },
            test_seed: seed.wrapping_add(1),
            sweep: SweepSpec {
                f_start: 20.0,
                f_end: 50.0,
                sweep_rate: 10.0,
                amplitude: 40.0,
                sample_rate: fs,
            },
            sweep_duration: None,
            steady_state_tol: default_tol(),
            max_periods: default_max_periods(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        let fs = self.params.sample_rate;
        if self.multisine.sample_rate != fs || self.sweep.sample_rate != fs {
            return Err(Error::arg(format!(
                "excitation sample rates must equal the system sample rate {fs}"
            )));
        }
        if self.test_seed == self.multisine.seed {
            return Err(Error::arg("test multisine seed must differ from the training seed"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetManifest {
    pub system: String,
    pub simulator_version: String,
    pub preset_hash: String,
    pub spec: serde_json::Value,
    pub train: SteadyState,
    pub test_multisine: SteadyState,
    /// Relative max-abs change of the kept training period when the
    /// integration step is halved (Bouc-Wen only).
    pub step_halving_error: Option<f64>,
    /// Noise std actually added (Wiener-Hammerstein only).
    pub output_noise_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkData {
    pub train: Dataset,
    pub test_multisine: Dataset,
    /// Sweep from rest, transient retained.
    pub test_sweep: Option<Dataset>,
    pub manifest: DatasetManifest,
}

fn max_abs_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

pub fn make_boucwen_datasets(spec: &BoucWenDataSpec) -> Result<BenchmarkData> {
    spec.validate()?;
    let p = &spec.params;
    let fs = p.sample_rate;
    let step = |u: &[f64], s: &BoucWenState| simulate_boucwen_from(p, u, *s);

    let u_train = generate_multisine(&spec.multisine)?;
    let (train, train_start) =
        periodic_steady_state(&u_train, BoucWenState::default(), spec.steady_state_tol, spec.max_periods, step)?;
    let fine = BoucWenParams {
        oversample: 2 * p.oversample,
        ..p.clone()
    };
    let (y_fine, _) = simulate_boucwen_from(&fine, &u_train, train_start)?;
    let step_halving_error = max_abs_rel(&train.y, &y_fine);

    let u_test = generate_multisine(&MultisineSpec {
        seed: spec.test_seed,
        ..spec.multisine.clone()
    })?;
    let (test, _) = periodic_steady_state(&u_test, BoucWenState::default(), spec.steady_state_tol, spec.max_periods, step)?;

    let duration = spec.sweep_duration.unwrap_or_else(|| spec.sweep.min_duration());
    let u_sweep = generate_sinesweep(&spec.sweep, duration)?;
    let (y_sweep, _) = simulate_boucwen_from(p, &u_sweep, BoucWenState::default())?;

    Ok(BenchmarkData {
        train: Dataset::siso(&u_train, &train.y, fs)?,
        test_multisine: Dataset::siso(&u_test, &test.y, fs)?,
        test_sweep: Some(Dataset::siso(&u_sweep, &y_sweep, fs)?),
        manifest: DatasetManifest {
            system: "bouc-wen".into(),
            simulator_version: SIMULATOR_VERSION.into(),
            preset_hash: p.preset_hash(),
            spec: serde_json::to_value(spec)?,
            train,
            test_multisine: test,
            step_halving_error: Some(step_halving_error),
            output_noise_std: None,
        },
    })
}

#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhDataSpec {
    #[serde(default)]
    pub system: WhSpec,
    pub multisine: MultisineSpec,
    pub test_seed: u64,
    /// Seeds the output noise of both records (separate substreams).
    pub noise_seed: u64,
    /// When set, the output noise std is `rms(clean training output)·10^(−snr/20)`,
    /// replacing `system.output_noise_std`.
    #[serde(default)]
    pub snr_db: Option<f64>,
    #[serde(default = "default_tol")]
    pub steady_state_tol: f64,
    #[serde(default = "default_max_periods")]
    pub max_periods: usize,
}

pub fn make_wh_datasets(spec: &WhDataSpec) -> Result<BenchmarkData> {
    if spec.test_seed == spec.multisine.seed {
        return Err(Error::arg("test multisine seed must differ from the training seed"));
    }
    let p = spec.system.params()?;
    let fs = spec.multisine.sample_rate;
    let step = |u: &[f64], s: &WhState| simulate_wh_from(&p, u, s);

    let u_train = generate_multisine(&spec.multisine)?;
    let (train, _) = periodic_steady_state(&u_train, WhState::rest(&p), spec.steady_state_tol, spec.max_periods, step)?;
    let u_test = generate_multisine(&MultisineSpec {
        seed: spec.test_seed,
        ..spec.multisine.clone()
    })?;
    let (test, _) = periodic_steady_state(&u_test, WhState::rest(&p), spec.steady_state_tol, spec.max_periods, step)?;

    let noise_std = match spec.snr_db {
        Some(snr) => rms(&train.y) * 10f64.powf(-snr / 20.0),
        None => p.output_noise_std,
    };
    let mut y_train = train.y.clone();
    let mut y_test = test.y.clone();
    add_output_noise(&mut y_train, noise_std, spec.noise_seed);
    add_output_noise(&mut y_test, noise_std, spec.noise_seed.wrapping_add(1));

    let spec_json = serde_json::to_value(spec)?;
    let mut hasher = <sha2::Sha256 as sha2::Digest>::new();
    sha2::Digest::update(&mut hasher, serde_json::to_vec(&spec.system)?);
    let preset_hash = sha2::Digest::finalize(hasher).iter().map(|b| format!("{b:02x}")).collect();
    Ok(BenchmarkData {
        train: Dataset::siso(&u_train, &y_train, fs)?,
        test_multisine: Dataset::siso(&u_test, &y_test, fs)?,
        test_sweep: None,
        manifest: DatasetManifest {
            system: "wiener-hammerstein".into(),
            simulator_version: SIMULATOR_VERSION.into(),
            preset_hash,
            spec: spec_json,
            train,
            test_multisine: test,
            step_halving_error: None,
            output_noise_std: Some(noise_std),
        },
    })
}
