//! Signal containers, excitation generators, normalization and the RMSE metric.
//!
//! Standard deviations are population standard deviations (divide by `N`)
//! throughout the crate.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::{Error, Result};

/// Sampled input/output record.
///
/// `u` is `N × n_u`, `y` is `N × n_y`, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub u: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub sample_rate: f64,
    pub normalization: Option<Normalization>,
}

/// Affine maps that took a dataset from physical units to normalized units:
/// `normalized = (physical - offset) / scale`, per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub u_offset: Vec<f64>,
    pub u_scale: Vec<f64>,
    pub y_offset: Vec<f64>,
    pub y_scale: Vec<f64>,
}

impl Dataset {
    pub fn new(u: DMatrix<f64>, y: DMatrix<f64>, sample_rate: f64) -> Result<Self> {
        if u.nrows() == 0 {
            return Err(Error::arg("dataset needs at least one sample"));
        }
        if u.nrows() != y.nrows() {
            return Err(Error::dim(format!(
                "input has {} samples, output has {}",
                u.nrows(),
                y.nrows()
            )));
        }
        if u.ncols() == 0 || y.ncols() == 0 {
            return Err(Error::dim("dataset needs at least one input and one output"));
        }
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::arg(format!("sample rate must be positive, got {sample_rate}")));
        }
        Ok(Dataset {
            u,
            y,
            sample_rate,
            normalization: None,
        })
    }

    /// Single-input single-output dataset from two equally long slices.
    pub fn siso(u: &[f64], y: &[f64], sample_rate: f64) -> Result<Self> {
        Dataset::new(
            DMatrix::from_column_slice(u.len(), 1, u),
            DMatrix::from_column_slice(y.len(), 1, y),
            sample_rate,
        )
    }

    pub fn len(&self) -> usize {
        self.u.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.u.nrows() == 0
    }

    pub fn n_inputs(&self) -> usize {
        self.u.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.y.ncols()
    }

    /// Undo the recorded normalization, returning the dataset in physical units.
    pub fn denormalize(&self) -> Dataset {
        match &self.normalization {
            None => self.clone(),
            Some(n) => Dataset {
                u: n.denormalize_input(&self.u),
                y: n.denormalize_output(&self.y),
                sample_rate: self.sample_rate,
                normalization: None,
            },
        }
    }
}

impl Normalization {
    /// Identity map for the given channel counts.
    pub fn identity(n_u: usize, n_y: usize) -> Self {
        Normalization {
            u_offset: vec![0.0; n_u],
            u_scale: vec![1.0; n_u],
            y_offset: vec![0.0; n_y],
            y_scale: vec![1.0; n_y],
        }
    }

    /// Apply this map to a dataset in physical units (e.g. a test record
    /// normalized with training statistics).
    pub fn apply(&self, d: &Dataset) -> Result<Dataset> {
        if d.normalization.is_some() {
            return Err(Error::arg("dataset is already normalized"));
        }
        if d.n_inputs() != self.u_scale.len() || d.n_outputs() != self.y_scale.len() {
            return Err(Error::dim("normalization channel count differs from dataset"));
        }
        Ok(Dataset {
            u: affine(&d.u, &self.u_offset, &self.u_scale, false),
            y: affine(&d.y, &self.y_offset, &self.y_scale, false),
            sample_rate: d.sample_rate,
            normalization: Some(self.clone()),
        })
    }

    pub fn normalize_input(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        affine(u, &self.u_offset, &self.u_scale, false)
    }

    pub fn denormalize_input(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        affine(u, &self.u_offset, &self.u_scale, true)
    }

    pub fn normalize_output(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        affine(y, &self.y_offset, &self.y_scale, false)
    }

    pub fn denormalize_output(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        affine(y, &self.y_offset, &self.y_scale, true)
    }
}

fn affine(m: &DMatrix<f64>, offset: &[f64], scale: &[f64], inverse: bool) -> DMatrix<f64> {
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        for v in col.iter_mut() {
            *v = if inverse {
                *v * scale[j] + offset[j]
            } else {
                (*v - offset[j]) / scale[j]
            };
        }
    }
    out
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population standard deviation (divides by `N`).
pub fn std_dev(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64).sqrt()
}

/// Root mean square of a signal.
pub fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Normalize every input channel to zero mean and unit (population) standard
/// deviation. Outputs get the same treatment when `normalize_output` is set,
/// otherwise they keep their units (offset 0, scale 1).
pub fn normalize_dataset(d: &Dataset, normalize_output: bool) -> Result<Dataset> {
    if d.normalization.is_some() {
        return Err(Error::arg("dataset is already normalized"));
    }
    let stats = |m: &DMatrix<f64>| -> Result<(Vec<f64>, Vec<f64>)> {
        let mut offs = Vec::with_capacity(m.ncols());
        let mut scales = Vec::with_capacity(m.ncols());
        for (j, col) in m.column_iter().enumerate() {
            let c: Vec<f64> = col.iter().copied().collect();
            let s = std_dev(&c);
            if !(s > 0.0) {
                return Err(Error::ZeroVariance { channel: j });
            }
            offs.push(mean(&c));
            scales.push(s);
        }
        Ok((offs, scales))
    };
    let (u_offset, u_scale) = stats(&d.u)?;
    let (y_offset, y_scale) = if normalize_output {
        stats(&d.y)?
    } else {
        (vec![0.0; d.n_outputs()], vec![1.0; d.n_outputs()])
    };
    Normalization {
        u_offset,
        u_scale,
        y_offset,
        y_scale,
    }
    .apply(d)
}

/// Root mean squared error over the samples with index `>= skip`.
pub fn rmse(y: &[f64], y_hat: &[f64], skip: usize) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(Error::dim(format!(
            "rmse of signals with lengths {} and {}",
            y.len(),
            y_hat.len()
        )));
    }
    if skip >= y.len() {
        return Err(Error::arg(format!("skip {skip} leaves no samples out of {}", y.len())));
    }
    let n = (y.len() - skip) as f64;
    let ss: f64 = y[skip..]
        .iter()
        .zip(&y_hat[skip..])
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((ss / n).sqrt())
}

/// RMSE over all channels of two `N × n_y` matrices, skipping leading rows.
pub fn rmse_matrix(y: &DMatrix<f64>, y_hat: &DMatrix<f64>, skip: usize) -> Result<f64> {
    if y.shape() != y_hat.shape() {
        return Err(Error::dim(format!("rmse of {:?} vs {:?}", y.shape(), y_hat.shape())));
    }
    if skip >= y.nrows() {
        return Err(Error::arg(format!("skip {skip} leaves no samples out of {}", y.nrows())));
    }
    let rows = y.nrows() - skip;
    let a = y.rows(skip, rows);
    let b = y_hat.rows(skip, rows);
    Ok(((a - b).norm_squared() / (rows * y.ncols()) as f64).sqrt())
}

/// Random-phase multisine on a flat amplitude grid.
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultisineSpec {
    pub n_samples: usize,
    pub sample_rate: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub target_rms: f64,
    pub seed: u64,
}

impl MultisineSpec {
    /// Inclusive range of excited DFT bins.
    pub fn bins(&self) -> Result<(usize, usize)> {
        let n = self.n_samples;
        if n < 2 {
            return Err(Error::arg("multisine needs at least 2 samples"));
        }
        if !(self.sample_rate > 0.0) {
            return Err(Error::arg("sample rate must be positive"));
        }
        if !(self.f_min > 0.0 && self.f_min <= self.f_max) {
            return Err(Error::arg(format!(
                "need 0 < f_min <= f_max, got [{}, {}]",
                self.f_min, self.f_max
            )));
        }
        if self.f_max >= self.sample_rate / 2.0 {
            return Err(Error::arg(format!(
                "f_max {} is at or above Nyquist {}",
                self.f_max,
                self.sample_rate / 2.0
            )));
        }
        if !(self.target_rms > 0.0) {
            return Err(Error::arg("target rms must be positive"));
        }
        let resolution = self.sample_rate / n as f64;
        let lo = ((self.f_min / resolution).round() as usize).max(1);
        let hi = (self.f_max / resolution).round() as usize;
        if hi * 2 >= n {
            return Err(Error::arg("excited band reaches the Nyquist bin"));
        }
        if lo > hi {
            return Err(Error::arg(format!(
                "no DFT bin between {} Hz and {} Hz at resolution {resolution} Hz",
                self.f_min, self.f_max
            )));
        }
        Ok((lo, hi))
    }
}

/// One period of a random-phase multisine, scaled to the requested RMS.
pub fn generate_multisine(spec: &MultisineSpec) -> Result<Vec<f64>> {
    let (lo, hi) = spec.bins()?;
    let n = spec.n_samples;
    let mut phase_rng = rng::substream(spec.seed, "multisine-phases");
    let phases: Vec<f64> = (lo..=hi)
        .map(|_| 2.0 * PI * rng::unit_f64(&mut phase_rng))
        .collect();
    let mut u = vec![0.0; n];
    for (k, phase) in (lo..=hi).zip(&phases) {
        for (i, v) in u.iter_mut().enumerate() {
            // Reduce k*i modulo N in integers so the period is exact.
            let m = (k * i) % n;
            *v += (2.0 * PI * m as f64 / n as f64 + phase).cos();
        }
    }
    let scale = spec.target_rms / rms(&u);
    u.iter_mut().for_each(|v| *v *= scale);
    Ok(u)
}

/// Linear sine sweep.
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub f_start: f64,
    pub f_end: f64,
    /// Hz per minute.
    pub sweep_rate: f64,
    /// RMS amplitude; the peak is `amplitude·√2`.
    pub amplitude: f64,
    pub sample_rate: f64,
}

impl SweepSpec {
    /// Time needed to sweep from `f_start` to `f_end`, in seconds.
    pub fn min_duration(&self) -> f64 {
        (self.f_end - self.f_start).abs() / self.sweep_rate * 60.0
    }

    /// Chirp rate in Hz/s, signed by the sweep direction.
    pub fn rate_hz_per_s(&self) -> f64 {
        if self.f_end == self.f_start {
            return 0.0;
        }
        (self.f_end - self.f_start).signum() * self.sweep_rate / 60.0
    }

    pub fn instantaneous_frequency(&self, t: f64) -> f64 {
        self.f_start + self.rate_hz_per_s() * t
    }

    fn validate(&self) -> Result<()> {
        let nyq = self.sample_rate / 2.0;
        if !(self.sample_rate > 0.0) {
            return Err(Error::arg("sample rate must be positive"));
        }
        for f in [self.f_start, self.f_end] {
            if !(f > 0.0 && f < nyq) {
                return Err(Error::arg(format!("sweep frequency {f} outside (0, {nyq})")));
            }
        }
        if !(self.sweep_rate > 0.0) {
            return Err(Error::arg("sweep rate must be positive"));
        }
        Ok(())
    }
}

/// Sweep `u(t) = amplitude·√2·cos(2π(f_start·t + ½·r·t²))` sampled at
/// `t = i / fs` for `round(duration·fs)` samples. Once the end frequency is
/// reached the frequency keeps changing at the same rate.
pub fn generate_sinesweep(spec: &SweepSpec, duration: f64) -> Result<Vec<f64>> {
    spec.validate()?;
    let needed = spec.min_duration();
    if duration < needed * (1.0 - 1e-12) {
        return Err(Error::arg(format!(
            "duration {duration} s is shorter than the {needed} s needed to cover the band"
        )));
    }
    let n = (duration * spec.sample_rate).round() as usize;
    let r = spec.rate_hz_per_s();
    let peak = spec.amplitude * std::f64::consts::SQRT_2;
    Ok((0..n)
        .map(|i| {
            let t = i as f64 / spec.sample_rate;
            peak * (2.0 * PI * (spec.f_start * t + 0.5 * r * t * t)).cos()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Naive O(N²) DFT magnitude, independent of any FFT library.
    fn dft_mag(x: &[f64], k: usize) -> f64 {
        let n = x.len();
        let (mut re, mut im) = (0.0, 0.0);
        for (i, v) in x.iter().enumerate() {
            let ang = 2.0 * PI * ((k * i) % n) as f64 / n as f64;
            re += v * ang.cos();
            im -= v * ang.sin();
        }
        (re * re + im * im).sqrt()
    }

    #[test]
    fn multisine_bouc_wen_protocol() {
        let spec = MultisineSpec {
            n_samples: 8192,
            sample_rate: 750.0,
            f_min: 5.0,
            f_max: 150.0,
            target_rms: 50.0,
            seed: 3,
        };
        let u = generate_multisine(&spec).unwrap();
        assert_eq!(u.len(), 8192);
        assert!((rms(&u) - 50.0).abs() <= 50.0 * 1e-9);
        let (lo, hi) = spec.bins().unwrap();
        assert_eq!((lo, hi), (55, 1638));
        let peak = dft_mag(&u, lo + 10);
        for k in [0, 1, 20, lo - 1, hi + 1, hi + 100, 4095] {
            assert!(dft_mag(&u, k) <= 1e-9 * peak, "bin {k} leaked");
        }
    }

    #[test]
    fn multisine_single_bin_is_a_cosine() {
        let spec = MultisineSpec {
            n_samples: 64,
            sample_rate: 64.0,
            f_min: 8.0,
            f_max: 8.0,
            target_rms: 2.0,
            seed: 11,
        };
        let u = generate_multisine(&spec).unwrap();
        assert!((rms(&u) - 2.0).abs() < 1e-12);
        let nonzero: Vec<usize> = (0..=32).filter(|&k| dft_mag(&u, k) > 1e-9).collect();
        assert_eq!(nonzero, vec![8]);
    }

    #[test]
    fn multisine_seed_determinism() {
        let mut spec = MultisineSpec {
            n_samples: 256,
            sample_rate: 100.0,
            f_min: 1.0,
            f_max: 30.0,
            target_rms: 1.0,
            seed: 5,
        };
        let a = generate_multisine(&spec).unwrap();
        let b = generate_multisine(&spec).unwrap();
        assert_eq!(a, b);
        spec.seed = 6;
        let c = generate_multisine(&spec).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn multisine_rejects_bad_bands() {
        let mut spec = MultisineSpec {
            n_samples: 64,
            sample_rate: 64.0,
            f_min: 8.0,
            f_max: 32.0,
            target_rms: 1.0,
            seed: 0,
        };
        assert!(generate_multisine(&spec).is_err());
        // Both edges round below the first usable bin.
        spec.f_min = 0.1;
        spec.f_max = 0.2;
        assert!(generate_multisine(&spec).is_err());
    }

    #[test]
    fn sweep_benchmark_protocol_frequency_content() {
        let spec = SweepSpec {
            f_start: 20.0,
            f_end: 50.0,
            sweep_rate: 10.0,
            amplitude: 40.0,
            sample_rate: 750.0,
        };
        let d = spec.min_duration();
        assert!((d - 180.0).abs() < 1e-12);
        let u = generate_sinesweep(&spec, d).unwrap();
        assert_eq!(u.len(), 135_000);
        // Dominant frequency in a one-second window, by scanning a DTFT grid.
        let peak_freq = |seg: &[f64]| -> f64 {
            let mut best = (0.0, 0.0);
            let mut f = 10.0;
            while f < 60.0 {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, v) in seg.iter().enumerate() {
                    let ang = 2.0 * PI * f * i as f64 / 750.0;
                    re += v * ang.cos();
                    im += v * ang.sin();
                }
                let m = re * re + im * im;
                if m > best.1 {
                    best = (f, m);
                }
                f += 0.1;
            }
            best.0
        };
        let first = peak_freq(&u[..750]);
        let last = peak_freq(&u[u.len() - 750..]);
        assert!((first - 20.0).abs() < 1.0, "first second peaks at {first}");
        assert!((last - 50.0).abs() < 1.0, "last second peaks at {last}");
    }

    #[test]
    fn degenerate_sweep_is_a_sinusoid() {
        let spec = SweepSpec {
            f_start: 5.0,
            f_end: 5.0,
            sweep_rate: 1.0,
            amplitude: 1.0,
            sample_rate: 100.0,
        };
        let u = generate_sinesweep(&spec, 1.0).unwrap();
        for (i, v) in u.iter().enumerate() {
            let expect = 2f64.sqrt() * (2.0 * PI * 5.0 * i as f64 / 100.0).cos();
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn sweep_zero_crossings_match_integrated_frequency() {
        let spec = SweepSpec {
            f_start: 2.0,
            f_end: 8.0,
            sweep_rate: 60.0,
            amplitude: 1.0,
            sample_rate: 200.0,
        };
        let duration = spec.min_duration();
        let u = generate_sinesweep(&spec, duration).unwrap();
        // Integrate 2π f(t) with the trapezoid rule on a fine grid and record
        // where the phase crosses π/2 + mπ (zeros of the cosine).
        let fine = 100;
        let dt = 1.0 / (spec.sample_rate * fine as f64);
        let mut phase = 0.0;
        let mut next = PI / 2.0;
        let mut oracle = Vec::new();
        let steps = (duration / dt) as usize;
        for s in 0..steps {
            let t = s as f64 * dt;
            let f0 = spec.instantaneous_frequency(t);
            let f1 = spec.instantaneous_frequency(t + dt);
            phase += PI * (f0 + f1) * dt;
            if phase >= next {
                oracle.push((t + dt) * spec.sample_rate);
                next += PI;
            }
        }
        let mut crossings = Vec::new();
        for i in 1..u.len() {
            if u[i - 1].signum() != u[i].signum() {
                crossings.push(i as f64);
            }
        }
        assert!(crossings.len() + 1 >= oracle.len() && crossings.len() <= oracle.len() + 1);
        for (c, o) in crossings.iter().zip(&oracle) {
            assert!((c - o).abs() <= 1.0, "crossing at sample {c} vs oracle {o}");
        }
    }

    #[test]
    fn sweep_rejects_short_duration() {
        let spec = SweepSpec {
            f_start: 20.0,
            f_end: 50.0,
            sweep_rate: 10.0,
            amplitude: 1.0,
            sample_rate: 750.0,
        };
        assert!(generate_sinesweep(&spec, 179.0).is_err());
    }

    #[test]
    fn normalize_examples() {
        let d = Dataset::siso(&[1.0, -1.0, 1.0, -1.0], &[0.0; 4], 1.0).unwrap();
        let n = normalize_dataset(&d, false).unwrap();
        assert_eq!(n.u.as_slice(), &[1.0, -1.0, 1.0, -1.0]);
        assert_eq!(n.y, d.y);

        let d = Dataset::siso(&[10.0, 20.0, 30.0], &[1.0, 2.0, 4.0], 1.0).unwrap();
        let n = normalize_dataset(&d, true).unwrap();
        let u: Vec<f64> = n.u.iter().copied().collect();
        assert!(mean(&u).abs() < 1e-12);
        assert!((std_dev(&u) - 1.0).abs() < 1e-12);
        let scale = n.normalization.as_ref().unwrap().u_scale[0];
        assert!((scale - (200.0f64 / 3.0).sqrt()).abs() < 1e-12);

        let d = Dataset::siso(&[5.0, 5.0, 5.0], &[1.0, 2.0, 3.0], 1.0).unwrap();
        assert!(matches!(
            normalize_dataset(&d, false),
            Err(Error::ZeroVariance { channel: 0 })
        ));
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0], 0).unwrap(), 0.0);
        let e = rmse(&[0.0, 0.0], &[3.0, 4.0], 0).unwrap();
        assert!((e - 3.5355339059327378).abs() < 1e-15);
        assert!(rmse(&[0.0], &[0.0, 1.0], 0).is_err());
        assert!(rmse(&[0.0, 1.0], &[0.0, 1.0], 2).is_err());

        let y: Vec<f64> = (0..10_000).map(|i| i as f64).collect();
        let mut yh = y.clone();
        for v in yh.iter_mut().take(2000) {
            *v += 1e6;
        }
        for v in yh.iter_mut().skip(2000) {
            *v += 2.0;
        }
        assert!((rmse(&y, &yh, 2000).unwrap() - 2.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn multisine_rms_and_periodicity(seed in any::<u64>(), lo in 1usize..20, width in 0usize..20) {
            let spec = MultisineSpec {
                n_samples: 128,
                sample_rate: 128.0,
                f_min: lo as f64,
                f_max: (lo + width) as f64,
                target_rms: 3.0,
                seed,
            };
            let u = generate_multisine(&spec).unwrap();
            prop_assert!((rms(&u) - 3.0).abs() <= 3.0 * 1e-9);
            // Two concatenated periods form a 2N-periodic record whose odd DFT
            // bins vanish only if the continuation across the seam is exact.
            let mut twice = u.clone();
            twice.extend_from_slice(&u);
            let peak = dft_mag(&twice, 2 * lo);
            for k in (1..128).step_by(2) {
                prop_assert!(dft_mag(&twice, k) <= 1e-9 * peak);
            }
        }

        #[test]
        fn normalization_round_trip(vals in proptest::collection::vec(-1e3f64..1e3, 3..40), ys in proptest::collection::vec(-10f64..10.0, 3..40)) {
            let n = vals.len().min(ys.len());
            let d = Dataset::siso(&vals[..n], &ys[..n], 10.0).unwrap();
            prop_assume!(std_dev(&vals[..n]) > 1e-6 && std_dev(&ys[..n]) > 1e-6);
            let norm = normalize_dataset(&d, true).unwrap();
            let back = norm.denormalize();
            for (a, b) in back.u.iter().zip(d.u.iter()) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
            for (a, b) in back.y.iter().zip(d.y.iter()) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }

        #[test]
        fn rmse_of_identical_signals_is_zero(vals in proptest::collection::vec(-1e3f64..1e3, 1..50), skip_frac in 0.0f64..1.0) {
            let skip = ((vals.len() as f64) * skip_frac) as usize;
            let skip = skip.min(vals.len() - 1);
            prop_assert_eq!(rmse(&vals, &vals, skip).unwrap(), 0.0);
        }
    }
}
