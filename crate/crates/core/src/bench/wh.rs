//! Wiener-Hammerstein cascade: linear filter, static nonlinearity, linear
//! filter, with white Gaussian noise added at the output.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::lti::{simulate_lti, LtiStateSpace};
use crate::rng;
use crate::{Error, Result};

#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StaticNonlinearity {
    Identity,
    /// `v` below the knee, `knee + slope·(v − knee)` above it.
    Saturation { knee: f64, slope: f64 },
}

impl StaticNonlinearity {
    #[inline]
    pub fn eval(&self, v: f64) -> f64 {
        match *self {
            StaticNonlinearity::Identity => v,
            StaticNonlinearity::Saturation { knee, slope } => {
                if v <= knee {
                    v
                } else {
                    knee + slope * (v - knee)
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if let StaticNonlinearity::Saturation { knee, slope } = *self {
            if !knee.is_finite() || !(0.0..=1.0).contains(&slope) {
                return Err(Error::arg("saturation needs a finite knee and a slope in [0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WhParams {
    pub front: LtiStateSpace,
    pub back: LtiStateSpace,
    pub nl: StaticNonlinearity,
    pub output_noise_std: f64,
}

/// Transfer-function description of a cascade, in descending powers of `z`.
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhSpec {
    pub front_num: Vec<f64>,
    pub front_den: Vec<f64>,
    pub back_num: Vec<f64>,
    pub back_den: Vec<f64>,
    pub nl: StaticNonlinearity,
    pub output_noise_std: f64,
}

/// `K (z + 1)³ / den(z)` with `K` chosen for unit DC gain.
fn unit_dc_lowpass(den: [f64; 4]) -> (Vec<f64>, Vec<f64>) {
    let k = den.iter().sum::<f64>() / 8.0;
    (vec![k, 3.0 * k, 3.0 * k, k], den.to_vec())
}

impl Default for WhSpec {
    /// Two third-order low-pass filters (one real pole and a complex pair
    /// each) around a saturation that flattens the upper half of the swing.
    fn default() -> Self {
        // (z − 0.6)(z² − 1.5z + 0.7) and (z − 0.5)(z² − 1.2z + 0.6)
        let (front_num, front_den) = unit_dc_lowpass([1.0, -2.1, 1.6, -0.42]);
        let (back_num, back_den) = unit_dc_lowpass([1.0, -1.7, 1.2, -0.3]);
        WhSpec {
            front_num,
            front_den,
            back_num,
            back_den,
            nl: StaticNonlinearity::Saturation { knee: 0.4, slope: 0.1 },
            output_noise_std: 0.0,
        }
    }
}

impl WhSpec {
    pub fn params(&self) -> Result<WhParams> {
        let p = WhParams {
            front: LtiStateSpace::from_transfer_function(&self.front_num, &self.front_den)?,
            back: LtiStateSpace::from_transfer_function(&self.back_num, &self.back_den)?,
            nl: self.nl,
            output_noise_std: self.output_noise_std,
        };
        p.validate()?;
        Ok(p)
    }
}

impl WhParams {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [("front", &self.front), ("back", &self.back)] {
            if f.nu() != 1 || f.ny() != 1 {
                return Err(Error::dim(format!("{name} filter must be single-input single-output")));
            }
            if !f.is_stable() {
                return Err(Error::arg(format!(
                    "{name} filter is unstable (spectral radius {})",
                    f.spectral_radius()
                )));
            }
        }
        if !(self.output_noise_std >= 0.0 && self.output_noise_std.is_finite()) {
            return Err(Error::arg("output noise std must be finite and non-negative"));
        }
        self.nl.validate()
    }
}

/// Filter states of the two linear blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct WhState {
    pub front: DVector<f64>,
    pub back: DVector<f64>,
}

impl WhState {
    pub fn rest(p: &WhParams) -> Self {
        WhState {
            front: DVector::zeros(p.front.nx()),
            back: DVector::zeros(p.back.nx()),
        }
    }
}

/// Noise-free response from `state`, and the state after the last sample.
pub fn simulate_wh_from(p: &WhParams, u: &[f64], state: &WhState) -> Result<(Vec<f64>, WhState)> {
    p.validate()?;
    let n = u.len();
    let front = simulate_lti(&p.front, &DMatrix::from_column_slice(n, 1, u), &state.front)?;
    let v = front.y.map(|x| p.nl.eval(x));
    let back = simulate_lti(&p.back, &v, &state.back)?;
    let next = WhState {
        front: front.x.row(n).transpose(),
        back: back.x.row(n).transpose(),
    };
    Ok((back.y.column(0).iter().copied().collect(), next))
}

/// Add `N(0, std²)` noise drawn from the `"output-noise"` substream of `seed`.
pub fn add_output_noise(y: &mut [f64], std: f64, seed: u64) {
    if std == 0.0 {
        return;
    }
    let mut r = rng::substream(seed, "output-noise");
    for v in y {
        let e: f64 = StandardNormal.sample(&mut r);
        *v += std * e;
    }
}

/// Response from rest with output noise.
pub fn simulate_wh(p: &WhParams, u: &[f64], noise_seed: u64) -> Result<Vec<f64>> {
    let (mut y, _) = simulate_wh_from(p, u, &WhState::rest(p))?;
    add_output_noise(&mut y, p.output_noise_std, noise_seed);
    Ok(y)
}
