use nalgebra::{DMatrix, DVector};

use super::{Activation, Branch, Model};
use crate::lti::affine_step;
use crate::{Error, Result};

/// States beyond this magnitude count as a diverged simulation.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Simulated output (`N × n_y`) and state trajectory (`(N+1) × n_x`).
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub y: DMatrix<f64>,
    pub x: DMatrix<f64>,
}

/// Hidden-layer values of one branch at one sample.
#[derive(Debug, Clone)]
pub(crate) struct HiddenLayer {
    pub h: Vec<f64>,
    /// `σ'(z)`
    pub dh: Vec<f64>,
}

impl HiddenLayer {
    pub fn new(nn: usize) -> Self {
        HiddenLayer {
            h: vec![0.0; nn],
            dh: vec![0.0; nn],
        }
    }
}

impl Branch {
    /// Evaluate the hidden layer and add the branch output to `out`.
    #[inline]
    pub(crate) fn accumulate(&self, act: Activation, x: &[f64], u: &[f64], hidden: &mut HiddenLayer, derivative: bool, out: &mut [f64]) {
        let nn = self.b_hidden.len();
        for j in 0..nn {
            let mut z = self.b_hidden[j];
            for (l, xl) in x.iter().enumerate() {
                z += self.w_in_x[(j, l)] * xl;
            }
            for (l, ul) in u.iter().enumerate() {
                z += self.w_in_u[(j, l)] * ul;
            }
            hidden.h[j] = act.eval(z);
            if derivative {
                hidden.dh[j] = act.derivative(z);
            }
        }
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = self.b_out[i];
            for j in 0..nn {
                acc += self.w_out[(i, j)] * hidden.h[j];
            }
            *o += acc;
        }
    }
}

/// Scratch space for one recursion step.
pub(crate) struct Stepper {
    pub state_hidden: HiddenLayer,
    pub output_hidden: HiddenLayer,
}

impl Stepper {
    pub fn new(model: &Model) -> Self {
        let nn = model.dims().nn;
        Stepper {
            state_hidden: HiddenLayer::new(nn),
            output_hidden: HiddenLayer::new(nn),
        }
    }

    /// Compute `y(k)` and `x(k+1)` from `x(k)`, `u(k)`.
    #[inline]
    pub fn step(&mut self, model: &Model, x: &[f64], u: &[f64], derivative: bool, y: &mut [f64], x_next: &mut [f64]) {
        let act = model.activation();
        match model.linear() {
            Some(lin) => {
                affine_step(&lin.c, &lin.d, x, u, y);
                affine_step(&lin.a, &lin.b, x, u, x_next);
            }
            None => {
                y.fill(0.0);
                x_next.fill(0.0);
            }
        }
        model
            .output_branch()
            .accumulate(act, x, u, &mut self.output_hidden, derivative, y);
        model
            .state_branch()
            .accumulate(act, x, u, &mut self.state_hidden, derivative, x_next);
    }
}

pub(crate) fn check_inputs(model: &Model, u: &DMatrix<f64>, x0: &DVector<f64>) -> Result<()> {
    model.validate()?;
    let dims = model.dims();
    if u.ncols() != dims.nu {
        return Err(Error::dim(format!("input has {} channels, model expects {}", u.ncols(), dims.nu)));
    }
    if x0.len() != dims.nx {
        return Err(Error::dim(format!("x0 has length {}, model has {} states", x0.len(), dims.nx)));
    }
    Ok(())
}

#[inline]
pub(crate) fn diverged(v: &[f64]) -> bool {
    v.iter().any(|s| !s.is_finite() || s.abs() > DIVERGENCE_LIMIT)
}

/// Run the model recursion from `x0` over the rows of `u`.
pub fn simulate(model: &Model, u: &DMatrix<f64>, x0: &DVector<f64>) -> Result<Simulation> {
    check_inputs(model, u, x0)?;
    let dims = model.dims();
    let n = u.nrows();
    let mut y = DMatrix::zeros(n, dims.ny);
    let mut xs = DMatrix::zeros(n + 1, dims.nx);
    let mut stepper = Stepper::new(model);
    let mut x: Vec<f64> = x0.iter().copied().collect();
    let mut x_next = vec![0.0; dims.nx];
    let mut yk = vec![0.0; dims.ny];
    let mut uk = vec![0.0; dims.nu];
    if diverged(&x) {
        return Err(Error::Divergence { sample: 0 });
    }
    for k in 0..n {
        for (j, v) in uk.iter_mut().enumerate() {
            *v = u[(k, j)];
        }
        for (j, v) in x.iter().enumerate() {
            xs[(k, j)] = *v;
        }
        stepper.step(model, &x, &uk, false, &mut yk, &mut x_next);
        if yk.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { sample: k });
        }
        if diverged(&x_next) {
            return Err(Error::Divergence { sample: k + 1 });
        }
        for (j, v) in yk.iter().enumerate() {
            y[(k, j)] = *v;
        }
        std::mem::swap(&mut x, &mut x_next);
    }
    for (j, v) in x.iter().enumerate() {
        xs[(n, j)] = *v;
    }
    Ok(Simulation { y, x: xs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::{simulate_lti, LtiStateSpace};
    use crate::ssnn::testutil::{random_input, random_model};
    use crate::ssnn::{Dims, GrSsnnModel, SsnnModel, Structure};
    use proptest::prelude::*;

    /// Straight transcription of the two model equations with nalgebra
    /// matrix products, one sample at a time.
    fn reference(model: &Model, u: &DMatrix<f64>, x0: &DVector<f64>) -> DMatrix<f64> {
        let act = model.activation();
        let sig = |z: DVector<f64>| z.map(|v| act.eval(v));
        let mut x = x0.clone();
        let mut y = DMatrix::zeros(u.nrows(), model.dims().ny);
        for k in 0..u.nrows() {
            let uk = u.row(k).transpose();
            let f = model.state_branch();
            let g = model.output_branch();
            let mut xn = &f.w_out * sig(&f.w_in_x * &x + &f.w_in_u * &uk + &f.b_hidden) + &f.b_out;
            let mut yk = &g.w_out * sig(&g.w_in_x * &x + &g.w_in_u * &uk + &g.b_hidden) + &g.b_out;
            if let Some(l) = model.linear() {
                xn += &l.a * &x + &l.b * &uk;
                yk += &l.c * &x + &l.d * &uk;
            }
            y.set_row(k, &yk.transpose());
            x = xn;
        }
        y
    }

    #[test]
    fn zero_model_is_silent() {
        let dims = Dims::new(3, 2, 2, 4).unwrap();
        let m = Model::Ssnn(SsnnModel::zeros(dims, Activation::Tanh));
        let u = random_input(30, 2, 1);
        let sim = simulate(&m, &u, &DVector::zeros(3)).unwrap();
        assert!(sim.y.iter().all(|v| *v == 0.0));
        assert!(sim.x.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn silent_branch_reduces_to_linear_simulation() {
        let lin = crate::lti::tests::random_stable(3, 1, 1, 5, 0.9);
        for act in [Activation::Tanh, Activation::GaussianRbf, Activation::Relu] {
            let m = Model::GrSsnn(GrSsnnModel::from_linear(lin.clone(), 6, act).unwrap());
            let u = random_input(200, 1, 2);
            let x0 = DVector::from_vec(vec![0.1, -0.2, 0.3]);
            let a = simulate(&m, &u, &x0).unwrap();
            let b = simulate_lti(&lin, &u, &x0).unwrap();
            assert_eq!(a.y, b.y);
            assert_eq!(a.x, b.x);
        }
    }

    #[test]
    fn matches_reference_recursion() {
        let dims = Dims::new(2, 1, 1, 3).unwrap();
        for structure in [Structure::Ssnn, Structure::GrSsnn] {
            let m = random_model(structure, dims, Activation::Tanh, 17, 0.8);
            let u = random_input(20, 1, 3);
            let x0 = DVector::from_vec(vec![0.2, -0.1]);
            let sim = simulate(&m, &u, &x0).unwrap();
            let r = reference(&m, &u, &x0);
            let scale = r.abs().max().max(1e-300);
            assert!((sim.y - r).abs().max() <= 1e-13 * scale);
        }
    }

    #[test]
    fn divergence_reports_first_bad_sample() {
        // x(k+1) = 10 x(k) + u: exceeds the limit after a handful of samples.
        let lin = LtiStateSpace::new(
            DMatrix::from_element(1, 1, 10.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        let m = Model::GrSsnn(GrSsnnModel::from_linear(lin, 1, Activation::Tanh).unwrap());
        let u = DMatrix::from_element(20, 1, 1.0);
        match simulate(&m, &u, &DVector::zeros(1)) {
            // x(k) = (10^k − 1)/9 first exceeds 1e6 at k = 7.
            Err(Error::Divergence { sample }) => assert_eq!(sample, 7),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn residual_reduction_for_random_linear_parts(seed in any::<u64>(), nx in 1usize..4) {
            let lin = crate::lti::tests::random_stable(nx, 1, 1, seed, 0.95);
            let m = Model::GrSsnn(GrSsnnModel::from_linear(lin.clone(), 4, Activation::Tanh).unwrap());
            let u = random_input(100, 1, seed);
            let a = simulate(&m, &u, &DVector::zeros(nx)).unwrap();
            let b = simulate_lti(&lin, &u, &DVector::zeros(nx)).unwrap();
            let scale = b.y.abs().max().max(1e-300);
            prop_assert!((a.y - b.y).abs().max() <= 1e-14 * scale);
        }

        #[test]
        fn neuron_permutation_leaves_output_unchanged(seed in any::<u64>(), gr in any::<bool>()) {
            let dims = Dims::new(2, 1, 1, 5).unwrap();
            let structure = if gr { Structure::GrSsnn } else { Structure::Ssnn };
            let m = random_model(structure, dims, Activation::Tanh, seed, 0.5);
            let perm_f = [3, 0, 4, 1, 2];
            let perm_g = [1, 2, 0, 4, 3];
            let p = m.permute_neurons(&perm_f, &perm_g);
            let u = random_input(50, 1, seed ^ 1);
            let a = simulate(&m, &u, &DVector::zeros(2));
            let b = simulate(&p, &u, &DVector::zeros(2));
            if let (Ok(a), Ok(b)) = (a, b) {
                let scale = a.y.abs().max().max(1e-300);
                prop_assert!((a.y - b.y).abs().max() <= 1e-14 * scale.max(1.0));
            }
        }
    }
}
