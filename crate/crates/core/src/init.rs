//! Initialization schemes.
//!
//! Random schemes draw every weight block from its own seeded substream:
//!
//! | block            | `random-ssnn`      | `random-gr`        |
//! |------------------|--------------------|--------------------|
//! | `W_x`            | `U(-1,1)`          | `U(-1,1)`          |
//! | `W_fx`, `W_gx`   | `U(-1,1)/√n_x`     | `U(-1,1)/√n_x`     |
//! | `W_fu`, `W_gu`   | `U(-1,1)/√n_u`     | `U(-1,1)/√n_u`     |
//! | `W_y`            | `U(-1,1)`          | `0`                |
//! | `A`              |                    | `0`                |
//! | `B`, `C`, `D`    |                    | `U(-1,1)`          |
//! | biases           | `0`                | `0`                |
//!
//! The linear-approximation schemes embed a (state-normalized) linear model
//! `(A, B, C, D)`:
//!
//! - `lti-suykens`: `W_x = [I U]/γ`, `W_fx = [γA; 0]`, `W_fu = [γB; 0]`, and
//!   the same pattern with `C`, `D` for the output branch. With `γ` small the
//!   tanh layer works in its linear regime and the network reproduces the
//!   linear model.
//! - `lti-improved`: as above, but the extra neurons get random input weights
//!   and biases while their outer weights are zero.
//! - `lti-gr`: the residual structure takes `(A, B, C, D)` as its linear part;
//!   the nonlinear branch gets random input weights and biases and zero outer
//!   weights, so the initial model equals the linear one exactly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::lti::{simulate_lti, LtiStateSpace};
use crate::rng;
use crate::ssnn::{Activation, Branch, Dims, GrSsnnModel, Model, SsnnModel};
use crate::{Error, Result};

/// Default bound on the pre-activation magnitude of the linear-regime
/// schemes: tanh deviates from the identity by at most `z²/3 ≈ 8.3e-4`
/// relative below it.
pub const DEFAULT_Z_MAX: f64 = 0.05;

#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    RandomSsnn,
    RandomGr,
    LtiSuykens,
    LtiImproved,
    LtiGr,
}

impl InitKind {
    pub const ALL: [InitKind; 5] = [
        InitKind::RandomSsnn,
        InitKind::RandomGr,
        InitKind::LtiSuykens,
        InitKind::LtiImproved,
        InitKind::LtiGr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InitKind::RandomSsnn => "random-ssnn",
            InitKind::RandomGr => "random-gr",
            InitKind::LtiSuykens => "lti-suykens",
            InitKind::LtiImproved => "lti-improved",
            InitKind::LtiGr => "lti-gr",
        }
    }

    pub fn needs_lti(self) -> bool {
        matches!(self, InitKind::LtiSuykens | InitKind::LtiImproved | InitKind::LtiGr)
    }

    /// Schemes that rely on the linear regime of tanh and hence on `γ`.
    pub fn needs_gamma(self) -> bool {
        matches!(self, InitKind::LtiSuykens | InitKind::LtiImproved)
    }
}

impl std::str::FromStr for InitKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        InitKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::arg(format!("unknown initialization scheme {s:?}")))
    }
}

impl std::fmt::Display for InitKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One initialization recipe as it appears in an experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitScheme {
    pub kind: InitKind,
    #[serde(default)]
    pub seed: u64,
    /// Linearity threshold for `γ` selection.
    #[serde(default)]
    pub z_max: Option<f64>,
    /// Fixed `γ`, bypassing the selection.
    #[serde(default)]
    pub gamma: Option<f64>,
}

fn uniform(seed: u64, name: &str, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    let mut r = rng::substream(seed, name);
    DMatrix::from_fn(rows, cols, |_, _| scale * rng::symmetric_unit(&mut r))
}

fn uniform_vec(seed: u64, name: &str, len: usize) -> DVector<f64> {
    let mut r = rng::substream(seed, name);
    DVector::from_fn(len, |_, _| rng::symmetric_unit(&mut r))
}

/// Random input weights of one branch, `(W_in_x, W_in_u)`.
fn input_weights(seed: u64, names: [&str; 2], dims: Dims, rows: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    (
        uniform(seed, names[0], rows, dims.nx, 1.0 / (dims.nx as f64).sqrt()),
        uniform(seed, names[1], rows, dims.nu, 1.0 / (dims.nu as f64).sqrt()),
    )
}

/// Draw a model according to one of the random schemes.
pub fn init_random(kind: InitKind, dims: Dims, activation: Activation, seed: u64) -> Result<Model> {
    dims.validate()?;
    let nn = dims.nn;
    let (w_fx, w_fu) = input_weights(seed, ["W_fx", "W_fu"], dims, nn);
    let (w_gx, w_gu) = input_weights(seed, ["W_gx", "W_gu"], dims, nn);
    let state = Branch {
        w_out: uniform(seed, "W_x", dims.nx, nn, 1.0),
        w_in_x: w_fx,
        w_in_u: w_fu,
        b_hidden: DVector::zeros(nn),
        b_out: DVector::zeros(dims.nx),
    };
    let mut output = Branch {
        w_out: uniform(seed, "W_y", dims.ny, nn, 1.0),
        w_in_x: w_gx,
        w_in_u: w_gu,
        b_hidden: DVector::zeros(nn),
        b_out: DVector::zeros(dims.ny),
    };
    match kind {
        InitKind::RandomSsnn => Ok(Model::Ssnn(SsnnModel {
            dims,
            activation,
            state,
            output,
        })),
        InitKind::RandomGr => {
            output.w_out.fill(0.0);
            let linear = LtiStateSpace::new(
                DMatrix::zeros(dims.nx, dims.nx),
                uniform(seed, "B", dims.nx, dims.nu, 1.0),
                uniform(seed, "C", dims.ny, dims.nx, 1.0),
                uniform(seed, "D", dims.ny, dims.nu, 1.0),
            )?;
            Ok(Model::GrSsnn(GrSsnnModel {
                dims,
                activation,
                linear,
                state,
                output,
            }))
        }
        _ => Err(Error::arg(format!("{kind} is not a random scheme"))),
    }
}

/// `[top; bottom]`
fn stack(top: DMatrix<f64>, bottom: DMatrix<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    m.rows_mut(0, top.nrows()).copy_from(&top);
    m.rows_mut(top.nrows(), bottom.nrows()).copy_from(&bottom);
    m
}

/// `[left right]`
fn side_by_side(left: DMatrix<f64>, right: DMatrix<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(left.nrows(), left.ncols() + right.ncols());
    m.columns_mut(0, left.ncols()).copy_from(&left);
    m.columns_mut(left.ncols(), right.ncols()).copy_from(&right);
    m
}

/// Network branch emulating `out = M1 x + M2 u` in the linear regime.
///
/// `random_tail` selects the improved variant (random input weights and
/// biases on the extra neurons, zero outer weights) over the original one
/// (zero input weights, random outer weights).
#[allow(clippy::too_many_arguments)]
fn linear_regime_branch(m1: &DMatrix<f64>, m2: &DMatrix<f64>, dims: Dims, gamma: f64, seed: u64, names: [&str; 4], random_tail: bool) -> Branch {
    let n_out = m1.nrows();
    let extra = dims.nn - n_out;
    let eye = DMatrix::identity(n_out, n_out) / gamma;
    if random_tail {
        let (tx, tu) = input_weights(seed, [names[1], names[2]], dims, extra);
        let tail_b = uniform_vec(seed, names[3], extra);
        Branch {
            w_out: side_by_side(eye, DMatrix::zeros(n_out, extra)),
            w_in_x: stack(m1 * gamma, tx),
            w_in_u: stack(m2 * gamma, tu),
            b_hidden: DVector::from_iterator(dims.nn, std::iter::repeat_n(0.0, n_out).chain(tail_b.iter().copied())),
            b_out: DVector::zeros(n_out),
        }
    } else {
        Branch {
            w_out: side_by_side(eye, uniform(seed, names[0], n_out, extra, 1.0 / gamma)),
            w_in_x: stack(m1 * gamma, DMatrix::zeros(extra, dims.nx)),
            w_in_u: stack(m2 * gamma, DMatrix::zeros(extra, dims.nu)),
            b_hidden: DVector::zeros(dims.nn),
            b_out: DVector::zeros(n_out),
        }
    }
}

/// Build a model around the linear model `lti` (normalized to unit state
/// variance). `gamma` is required by `lti-suykens` and `lti-improved` and
/// ignored by `lti-gr`.
pub fn init_from_lti(kind: InitKind, lti: &LtiStateSpace, dims: Dims, activation: Activation, gamma: Option<f64>, seed: u64) -> Result<Model> {
    dims.validate()?;
    if (lti.nx(), lti.nu(), lti.ny()) != (dims.nx, dims.nu, dims.ny) {
        return Err(Error::dim("linear model dimensions differ from the network dimensions"));
    }
    if dims.nn < dims.nx {
        return Err(Error::arg(format!(
            "{kind} needs at least as many neurons ({}) as states ({})",
            dims.nn, dims.nx
        )));
    }
    match kind {
        InitKind::LtiGr => {
            let (w_fx, w_fu) = input_weights(seed, ["W_fx", "W_fu"], dims, dims.nn);
            let (w_gx, w_gu) = input_weights(seed, ["W_gx", "W_gu"], dims, dims.nn);
            Ok(Model::GrSsnn(GrSsnnModel {
                dims,
                activation,
                linear: lti.clone(),
                state: Branch {
                    w_out: DMatrix::zeros(dims.nx, dims.nn),
                    w_in_x: w_fx,
                    w_in_u: w_fu,
                    b_hidden: uniform_vec(seed, "b_f", dims.nn),
                    b_out: DVector::zeros(dims.nx),
                },
                output: Branch {
                    w_out: DMatrix::zeros(dims.ny, dims.nn),
                    w_in_x: w_gx,
                    w_in_u: w_gu,
                    b_hidden: uniform_vec(seed, "b_g", dims.nn),
                    b_out: DVector::zeros(dims.ny),
                },
            }))
        }
        InitKind::LtiSuykens | InitKind::LtiImproved => {
            if activation != Activation::Tanh {
                return Err(Error::arg(format!("{kind} relies on the linear regime of tanh")));
            }
            if dims.nn < dims.ny {
                return Err(Error::arg(format!(
                    "{kind} needs at least as many neurons ({}) as outputs ({})",
                    dims.nn, dims.ny
                )));
            }
            let gamma = gamma.ok_or_else(|| Error::arg(format!("{kind} needs gamma")))?;
            if !(gamma > 0.0 && gamma.is_finite()) {
                return Err(Error::arg(format!("gamma must be positive, got {gamma}")));
            }
            let improved = kind == InitKind::LtiImproved;
            Ok(Model::Ssnn(SsnnModel {
                dims,
                activation,
                state: linear_regime_branch(&lti.a, &lti.b, dims, gamma, seed, ["W_x", "W_fx", "W_fu", "b_f"], improved),
                output: linear_regime_branch(&lti.c, &lti.d, dims, gamma, seed, ["W_y", "W_gx", "W_gu", "b_g"], improved),
            }))
        }
        _ => Err(Error::arg(format!("{kind} does not start from a linear model"))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaSelection {
    pub gamma: f64,
    /// Largest `|A x + B u|` or `|C x + D u|` entry over the record.
    pub max_preactivation: f64,
    pub warning: Option<String>,
}

/// Largest linear-model pre-activation magnitude: `|A x(k) + B u(k)|` and
/// `|C x(k) + D u(k)|` over all samples and channels, from rest.
pub fn max_preactivation(lti: &LtiStateSpace, u: &DMatrix<f64>) -> Result<f64> {
    let sim = simulate_lti(lti, u, &DVector::zeros(lti.nx()))?;
    // A x(k) + B u(k) is x(k+1).
    let m = sim.x.rows(1, u.nrows()).abs().max().max(sim.y.abs().max());
    if !m.is_finite() {
        return Err(Error::Divergence { sample: 0 });
    }
    Ok(m)
}

/// `γ = z_max / max |pre-activation|`, one value shared by both branches.
pub fn select_gamma(lti: &LtiStateSpace, u: &DMatrix<f64>, z_max: f64) -> Result<GammaSelection> {
    if !(z_max > 0.0 && z_max.is_finite()) {
        return Err(Error::arg(format!("z_max must be positive, got {z_max}")));
    }
    let m = max_preactivation(lti, u)?;
    if m == 0.0 {
        return Ok(GammaSelection {
            gamma: 1.0,
            max_preactivation: 0.0,
            warning: Some("all pre-activations are zero on this input; using gamma = 1".to_string()),
        });
    }
    Ok(GammaSelection {
        gamma: z_max / m,
        max_preactivation: m,
        warning: None,
    })
}

/// Initialize by `scheme`: random kinds ignore `lti`; linear-regime kinds
/// select `γ` on `u` unless the scheme fixes it.
pub fn initialize(scheme: &InitScheme, lti: Option<&LtiStateSpace>, dims: Dims, activation: Activation, u: &DMatrix<f64>) -> Result<(Model, Option<GammaSelection>)> {
    if !scheme.kind.needs_lti() {
        return Ok((init_random(scheme.kind, dims, activation, scheme.seed)?, None));
    }
    let lti = lti.ok_or_else(|| Error::arg(format!("{} needs a linear model", scheme.kind)))?;
    let selection = if scheme.kind.needs_gamma() {
        Some(match scheme.gamma {
            Some(g) => GammaSelection {
                gamma: g,
                max_preactivation: max_preactivation(lti, u)?,
                warning: None,
            },
            None => select_gamma(lti, u, scheme.z_max.unwrap_or(DEFAULT_Z_MAX))?,
        })
    } else {
        None
    };
    let model = init_from_lti(scheme.kind, lti, dims, activation, selection.as_ref().map(|s| s.gamma), scheme.seed)?;
    Ok((model, selection))
}
