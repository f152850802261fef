//! State-space neural networks.
//!
//! Plain structure:
//!
//! ```text
//! x(k+1) = W_x σ(W_fx x(k) + W_fu u(k) + b_f) + b_x
//! y(k)   = W_y σ(W_gx x(k) + W_gu u(k) + b_g) + b_y
//! ```
//!
//! The generalized residual structure adds `A x + B u` to the state equation
//! and `C x + D u` to the output equation, in parallel with the nonlinear
//! branches.

mod io;
mod jacobian;
mod params;
mod simulate;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::lti::LtiStateSpace;
use crate::{Error, Result};

pub use io::ModelFile;
pub use jacobian::{gradient_bptt, jacobian};
pub use params::{pack, unpack, Block, BlockName, ParamLayout, ParamVector, LAYOUT_VERSION};
pub use simulate::{simulate, Simulation, DIVERGENCE_LIMIT};

#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Tanh,
    /// `exp(−z²)`
    GaussianRbf,
    /// `max(0, z)`
    Relu,
}

impl Activation {
    #[inline]
    pub fn eval(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::GaussianRbf => (-z * z).exp(),
            Activation::Relu => z.max(0.0),
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::GaussianRbf => -2.0 * z * (-z * z).exp(),
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Structure {
    Ssnn,
    GrSsnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub nu: usize,
    pub ny: usize,
    /// Neurons per hidden layer (state and output branch alike).
    pub nn: usize,
}

impl Dims {
    pub fn new(nx: usize, nu: usize, ny: usize, nn: usize) -> Result<Self> {
        let d = Dims { nx, nu, ny, nn };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.nu == 0 || self.ny == 0 || self.nn == 0 {
            return Err(Error::arg(format!("all dimensions must be positive, got {self:?}")));
        }
        Ok(())
    }
}

/// One-hidden-layer network `W_out σ(W_in_x x + W_in_u u + b_hidden) + b_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    /// `W_x` / `W_y`: `n_out × n_n`.
    pub w_out: DMatrix<f64>,
    /// `W_fx` / `W_gx`: `n_n × n_x`.
    pub w_in_x: DMatrix<f64>,
    /// `W_fu` / `W_gu`: `n_n × n_u`.
    pub w_in_u: DMatrix<f64>,
    /// `b_f` / `b_g`.
    pub b_hidden: DVector<f64>,
    /// `b_x` / `b_y`.
    pub b_out: DVector<f64>,
}

impl Branch {
    pub fn zeros(n_out: usize, dims: Dims) -> Self {
        Branch {
            w_out: DMatrix::zeros(n_out, dims.nn),
            w_in_x: DMatrix::zeros(dims.nn, dims.nx),
            w_in_u: DMatrix::zeros(dims.nn, dims.nu),
            b_hidden: DVector::zeros(dims.nn),
            b_out: DVector::zeros(n_out),
        }
    }

    pub fn n_out(&self) -> usize {
        self.w_out.nrows()
    }

    fn check(&self, n_out: usize, dims: Dims, name: &str) -> Result<()> {
        let ok = self.w_out.shape() == (n_out, dims.nn)
            && self.w_in_x.shape() == (dims.nn, dims.nx)
            && self.w_in_u.shape() == (dims.nn, dims.nu)
            && self.b_hidden.len() == dims.nn
            && self.b_out.len() == n_out;
        if ok {
            Ok(())
        } else {
            Err(Error::dim(format!("{name} branch shapes do not match {dims:?}")))
        }
    }

    /// Reorder the hidden neurons: neuron `i` of the result is neuron
    /// `perm[i]` of `self`.
    pub fn permute_neurons(&self, perm: &[usize]) -> Branch {
        let nn = self.b_hidden.len();
        assert_eq!(perm.len(), nn, "permutation length must equal the neuron count");
        Branch {
            w_out: DMatrix::from_fn(self.w_out.nrows(), nn, |r, c| self.w_out[(r, perm[c])]),
            w_in_x: DMatrix::from_fn(nn, self.w_in_x.ncols(), |r, c| self.w_in_x[(perm[r], c)]),
            w_in_u: DMatrix::from_fn(nn, self.w_in_u.ncols(), |r, c| self.w_in_u[(perm[r], c)]),
            b_hidden: DVector::from_fn(nn, |r, _| self.b_hidden[perm[r]]),
            b_out: self.b_out.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsnnModel {
    pub dims: Dims,
    pub activation: Activation,
    pub state: Branch,
    pub output: Branch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrSsnnModel {
    pub dims: Dims,
    pub activation: Activation,
    pub linear: LtiStateSpace,
    pub state: Branch,
    pub output: Branch,
}

/// Either network structure.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Ssnn(SsnnModel),
    GrSsnn(GrSsnnModel),
}

impl SsnnModel {
    pub fn zeros(dims: Dims, activation: Activation) -> Self {
        SsnnModel {
            dims,
            activation,
            state: Branch::zeros(dims.nx, dims),
            output: Branch::zeros(dims.ny, dims),
        }
    }
}

impl GrSsnnModel {
    pub fn zeros(dims: Dims, activation: Activation) -> Self {
        GrSsnnModel {
            dims,
            activation,
            linear: LtiStateSpace::zeros(dims.nx, dims.nu, dims.ny),
            state: Branch::zeros(dims.nx, dims),
            output: Branch::zeros(dims.ny, dims),
        }
    }

    /// Residual network with the given linear part and a silent nonlinear
    /// branch.
    pub fn from_linear(linear: LtiStateSpace, nn: usize, activation: Activation) -> Result<Self> {
        let dims = Dims::new(linear.nx(), linear.nu(), linear.ny(), nn)?;
        Ok(GrSsnnModel {
            linear,
            ..GrSsnnModel::zeros(dims, activation)
        })
    }
}

impl Model {
    pub fn zeros(structure: Structure, dims: Dims, activation: Activation) -> Self {
        match structure {
            Structure::Ssnn => Model::Ssnn(SsnnModel::zeros(dims, activation)),
            Structure::GrSsnn => Model::GrSsnn(GrSsnnModel::zeros(dims, activation)),
        }
    }

    pub fn structure(&self) -> Structure {
        match self {
            Model::Ssnn(_) => Structure::Ssnn,
            Model::GrSsnn(_) => Structure::GrSsnn,
        }
    }

    pub fn dims(&self) -> Dims {
        match self {
            Model::Ssnn(m) => m.dims,
            Model::GrSsnn(m) => m.dims,
        }
    }

    pub fn activation(&self) -> Activation {
        match self {
            Model::Ssnn(m) => m.activation,
            Model::GrSsnn(m) => m.activation,
        }
    }

    pub fn state_branch(&self) -> &Branch {
        match self {
            Model::Ssnn(m) => &m.state,
            Model::GrSsnn(m) => &m.state,
        }
    }

    pub fn output_branch(&self) -> &Branch {
        match self {
            Model::Ssnn(m) => &m.output,
            Model::GrSsnn(m) => &m.output,
        }
    }

    pub fn linear(&self) -> Option<&LtiStateSpace> {
        match self {
            Model::Ssnn(_) => None,
            Model::GrSsnn(m) => Some(&m.linear),
        }
    }

    /// Check every block against `dims`.
    pub fn validate(&self) -> Result<()> {
        let dims = self.dims();
        dims.validate()?;
        self.state_branch().check(dims.nx, dims, "state")?;
        self.output_branch().check(dims.ny, dims, "output")?;
        if let Some(l) = self.linear() {
            if (l.nx(), l.nu(), l.ny()) != (dims.nx, dims.nu, dims.ny) {
                return Err(Error::dim("linear part dimensions differ from model dimensions"));
            }
        }
        Ok(())
    }

    /// Same model with the hidden neurons of both branches reordered.
    pub fn permute_neurons(&self, state_perm: &[usize], output_perm: &[usize]) -> Model {
        match self {
            Model::Ssnn(m) => Model::Ssnn(SsnnModel {
                state: m.state.permute_neurons(state_perm),
                output: m.output.permute_neurons(output_perm),
                ..m.clone()
            }),
            Model::GrSsnn(m) => Model::GrSsnn(GrSsnnModel {
                state: m.state.permute_neurons(state_perm),
                output: m.output.permute_neurons(output_perm),
                ..m.clone()
            }),
        }
    }
}

impl From<SsnnModel> for Model {
    fn from(m: SsnnModel) -> Self {
        Model::Ssnn(m)
    }
}

impl From<GrSsnnModel> for Model {
    fn from(m: GrSsnnModel) -> Self {
        Model::GrSsnn(m)
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_derivatives_match_central_differences() {
        for act in [Activation::Tanh, Activation::GaussianRbf, Activation::Relu] {
            for &z in &[-2.0, -0.3, 0.1, 0.7, 1.9] {
                let h = 1e-6;
                let fd = (act.eval(z + h) - act.eval(z - h)) / (2.0 * h);
                assert!((fd - act.derivative(z)).abs() < 1e-8, "{act:?} at {z}");
            }
        }
        assert_eq!(Activation::default(), Activation::Tanh);
        assert_eq!(Activation::GaussianRbf.eval(0.0), 1.0);
        assert_eq!(Activation::Relu.eval(-3.0), 0.0);
    }

    #[test]
    fn dims_must_be_positive() {
        assert!(Dims::new(0, 1, 1, 3).is_err());
        assert!(Dims::new(2, 1, 1, 0).is_err());
        assert!(Dims::new(2, 1, 1, 3).is_ok());
    }

    #[test]
    fn shape_validation() {
        let dims = Dims::new(2, 1, 1, 3).unwrap();
        let mut m = SsnnModel::zeros(dims, Activation::Tanh);
        assert!(Model::Ssnn(m.clone()).validate().is_ok());
        m.state.w_in_x = DMatrix::zeros(3, 3);
        assert!(Model::Ssnn(m).validate().is_err());
    }
}
