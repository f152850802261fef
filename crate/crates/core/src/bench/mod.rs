//! Benchmark systems: a Bouc-Wen hysteretic oscillator, a synthetic
//! Wiener-Hammerstein cascade, the periodic/sweep records built from them,
//! and CSV ingestion for measured data.

mod boucwen;
mod datasets;
mod io;
mod wh;

pub use boucwen::{simulate_boucwen, simulate_boucwen_from, BoucWenParams, BoucWenState};
pub use datasets::{
    make_boucwen_datasets, make_wh_datasets, BenchmarkData, BoucWenDataSpec, DatasetManifest, SteadyState,
    WhDataSpec,
};
pub use io::{load_dataset, save_dataset, sidecar_path};
pub use wh::{add_output_noise, simulate_wh, simulate_wh_from, StaticNonlinearity, WhParams, WhSpec, WhState};
