//! Exact derivatives of the simulated output with respect to `θ`.
//!
//! [`jacobian`] propagates the state sensitivities `S(k) = ∂x(k)/∂θ` forward
//! through the unrolled recursion,
//!
//! ```text
//! S(k+1) = F_x(k) S(k) + ∂f/∂θ(k),    ∂ŷ(k)/∂θ = G_x(k) S(k) + ∂g/∂θ(k),
//! ```
//!
//! which yields every row of the Jacobian in one pass. [`gradient_bptt`]
//! runs the same chain rule backwards in time (backpropagation through time)
//! and returns `Jᵀw` for a weight sequence `w`, without forming `J`.

use nalgebra::{DMatrix, DVector};

use super::params::{Block, BlockName, ParamLayout};
use super::simulate::{check_inputs, diverged, HiddenLayer, Simulation, Stepper};
use super::{Branch, Model};
use crate::{Error, Result};

/// Blocks of one branch, in the order `W_out, W_in_x, W_in_u, b_hidden, b_out`.
type BranchBlocks<'a> = [&'a Block; 5];

fn branch_blocks(layout: &ParamLayout, state: bool) -> BranchBlocks<'_> {
    let names = if state {
        [BlockName::Wx, BlockName::Wfx, BlockName::Wfu, BlockName::Bf, BlockName::Bx]
    } else {
        [BlockName::Wy, BlockName::Wgx, BlockName::Wgu, BlockName::Bg, BlockName::By]
    };
    names.map(|n| layout.block(n).expect("every structure has both branches"))
}

/// Partial derivatives of a branch output with respect to its own
/// parameters, reported as `add(output_row, theta_index, value)`.
#[inline]
fn branch_partials(branch: &Branch, blocks: BranchBlocks, x: &[f64], u: &[f64], hidden: &HiddenLayer, add: &mut impl FnMut(usize, usize, f64)) {
    let [w_out, w_in_x, w_in_u, b_hidden, b_out] = blocks;
    let n_out = branch.n_out();
    let nn = hidden.h.len();
    for i in 0..n_out {
        for j in 0..nn {
            add(i, w_out.index(i, j), hidden.h[j]);
        }
        add(i, b_out.index(i, 0), 1.0);
    }
    for j in 0..nn {
        let dh = hidden.dh[j];
        if dh == 0.0 {
            continue;
        }
        for i in 0..n_out {
            let g = branch.w_out[(i, j)] * dh;
            if g == 0.0 {
                continue;
            }
            for (l, xl) in x.iter().enumerate() {
                add(i, w_in_x.index(j, l), g * xl);
            }
            for (l, ul) in u.iter().enumerate() {
                add(i, w_in_u.index(j, l), g * ul);
            }
            add(i, b_hidden.index(j, 0), g);
        }
    }
}

/// Partials of `M1 x + M2 u` with respect to `M1` and `M2`.
#[inline]
fn linear_partials(m1: &Block, m2: &Block, x: &[f64], u: &[f64], add: &mut impl FnMut(usize, usize, f64)) {
    for i in 0..m1.rows {
        for (l, xl) in x.iter().enumerate() {
            add(i, m1.index(i, l), *xl);
        }
        for (l, ul) in u.iter().enumerate() {
            add(i, m2.index(i, l), *ul);
        }
    }
}

/// `∂(branch + linear part)/∂x = M1 + W_out diag(σ') W_in_x`.
fn state_derivative(branch: &Branch, linear: Option<&DMatrix<f64>>, hidden: &HiddenLayer) -> DMatrix<f64> {
    let (n_out, nx) = (branch.n_out(), branch.w_in_x.ncols());
    let mut out = match linear {
        Some(m) => m.clone(),
        None => DMatrix::zeros(n_out, nx),
    };
    for j in 0..hidden.dh.len() {
        let dh = hidden.dh[j];
        if dh == 0.0 {
            continue;
        }
        for i in 0..n_out {
            let g = branch.w_out[(i, j)] * dh;
            for l in 0..nx {
                out[(i, l)] += g * branch.w_in_x[(j, l)];
            }
        }
    }
    out
}

fn check_layout(model: &Model, layout: &ParamLayout) -> Result<()> {
    if layout.structure != model.structure() || layout.dims != model.dims() {
        return Err(Error::dim("parameter layout does not describe this model"));
    }
    Ok(())
}

/// Simulate and return `J = ∂ŷ/∂θ` of size `(N·n_y) × dim(θ)`, row
/// `k·n_y + i` holding the derivative of output channel `i` at sample `k`.
/// Columns follow `layout`; the `x0` columns are present when the layout has
/// an `x0` block.
pub fn jacobian(model: &Model, u: &DMatrix<f64>, x0: &DVector<f64>, layout: &ParamLayout) -> Result<(Simulation, DMatrix<f64>)> {
    check_inputs(model, u, x0)?;
    check_layout(model, layout)?;
    let dims = model.dims();
    let (nx, nu, ny) = (dims.nx, dims.nu, dims.ny);
    let n = u.nrows();
    let p = layout.len();
    let state_blocks = branch_blocks(layout, true);
    let output_blocks = branch_blocks(layout, false);
    let lin_blocks = model.linear().map(|_| {
        [BlockName::A, BlockName::B, BlockName::C, BlockName::D].map(|b| layout.block(b).unwrap())
    });

    let mut jac = DMatrix::zeros(n * ny, p);
    let mut sens = DMatrix::zeros(nx, p);
    let mut sens_next = DMatrix::zeros(nx, p);
    if let Some(b) = layout.block(BlockName::X0) {
        for i in 0..nx {
            sens[(i, b.index(i, 0))] = 1.0;
        }
    }

    let mut y = DMatrix::zeros(n, ny);
    let mut xs = DMatrix::zeros(n + 1, nx);
    let mut stepper = Stepper::new(model);
    let mut x: Vec<f64> = x0.iter().copied().collect();
    let mut x_next = vec![0.0; nx];
    let mut yk = vec![0.0; ny];
    let mut uk = vec![0.0; nu];
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
        stepper.step(model, &x, &uk, true, &mut yk, &mut x_next);
        if yk.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { sample: k });
        }
        if diverged(&x_next) {
            return Err(Error::Divergence { sample: k + 1 });
        }
        for (j, v) in yk.iter().enumerate() {
            y[(k, j)] = *v;
        }

        // Output rows: G_x S(k) + direct partials.
        let gx = state_derivative(model.output_branch(), model.linear().map(|l| &l.c), &stepper.output_hidden);
        let row0 = k * ny;
        for col in 0..p {
            let s_col = sens.column(col);
            for i in 0..ny {
                let mut acc = 0.0;
                for l in 0..nx {
                    acc += gx[(i, l)] * s_col[l];
                }
                jac[(row0 + i, col)] = acc;
            }
        }
        {
            let mut add = |i: usize, col: usize, v: f64| jac[(row0 + i, col)] += v;
            branch_partials(model.output_branch(), output_blocks, &x, &uk, &stepper.output_hidden, &mut add);
            if let Some([_, _, c, d]) = lin_blocks {
                linear_partials(c, d, &x, &uk, &mut add);
            }
        }

        // State sensitivities: S(k+1) = F_x S(k) + direct partials.
        let fx = state_derivative(model.state_branch(), model.linear().map(|l| &l.a), &stepper.state_hidden);
        for col in 0..p {
            let s_col = sens.column(col);
            for i in 0..nx {
                let mut acc = 0.0;
                for l in 0..nx {
                    acc += fx[(i, l)] * s_col[l];
                }
                sens_next[(i, col)] = acc;
            }
        }
        {
            let mut add = |i: usize, col: usize, v: f64| sens_next[(i, col)] += v;
            branch_partials(model.state_branch(), state_blocks, &x, &uk, &stepper.state_hidden, &mut add);
            if let Some([a, b, _, _]) = lin_blocks {
                linear_partials(a, b, &x, &uk, &mut add);
            }
        }
        std::mem::swap(&mut sens, &mut sens_next);
        std::mem::swap(&mut x, &mut x_next);
    }
    for (j, v) in x.iter().enumerate() {
        xs[(n, j)] = *v;
    }
    Ok((Simulation { y, x: xs }, jac))
}

/// Backpropagation through time: `Σ_k (∂ŷ(k)/∂θ)ᵀ w(k)` for the `N × n_y`
/// weight matrix `w`. With `w = y − ŷ` this is `−½ N·n_y` times the gradient
/// of the mean squared simulation error.
pub fn gradient_bptt(model: &Model, u: &DMatrix<f64>, x0: &DVector<f64>, layout: &ParamLayout, weights: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_inputs(model, u, x0)?;
    check_layout(model, layout)?;
    let dims = model.dims();
    if weights.shape() != (u.nrows(), dims.ny) {
        return Err(Error::dim("weights must be N x n_y"));
    }
    let sim = super::simulate(model, u, x0)?;
    let (nx, nu, ny) = (dims.nx, dims.nu, dims.ny);
    let state_blocks = branch_blocks(layout, true);
    let output_blocks = branch_blocks(layout, false);
    let lin_blocks = model.linear().map(|_| {
        [BlockName::A, BlockName::B, BlockName::C, BlockName::D].map(|b| layout.block(b).unwrap())
    });

    let mut grad = DVector::zeros(layout.len());
    // ∂L/∂x(k+1); x(N) does not reach any output.
    let mut adjoint = DVector::zeros(nx);
    let mut stepper = Stepper::new(model);
    let mut x = vec![0.0; nx];
    let mut uk = vec![0.0; nu];
    let mut y_scratch = vec![0.0; ny];
    let mut x_scratch = vec![0.0; nx];
    for k in (0..u.nrows()).rev() {
        for (j, v) in x.iter_mut().enumerate() {
            *v = sim.x[(k, j)];
        }
        for (j, v) in uk.iter_mut().enumerate() {
            *v = u[(k, j)];
        }
        stepper.step(model, &x, &uk, true, &mut y_scratch, &mut x_scratch);
        let w = weights.row(k).transpose();
        {
            let mut add = |i: usize, col: usize, v: f64| grad[col] += w[i] * v;
            branch_partials(model.output_branch(), output_blocks, &x, &uk, &stepper.output_hidden, &mut add);
            if let Some([_, _, c, d]) = lin_blocks {
                linear_partials(c, d, &x, &uk, &mut add);
            }
        }
        {
            let a = &adjoint;
            let mut add = |i: usize, col: usize, v: f64| grad[col] += a[i] * v;
            branch_partials(model.state_branch(), state_blocks, &x, &uk, &stepper.state_hidden, &mut add);
            if let Some([a_blk, b_blk, _, _]) = lin_blocks {
                linear_partials(a_blk, b_blk, &x, &uk, &mut add);
            }
        }
        let gx = state_derivative(model.output_branch(), model.linear().map(|l| &l.c), &stepper.output_hidden);
        let fx = state_derivative(model.state_branch(), model.linear().map(|l| &l.a), &stepper.state_hidden);
        adjoint = gx.transpose() * &w + fx.transpose() * &adjoint;
    }
    if let Some(b) = layout.block(BlockName::X0) {
        for i in 0..nx {
            grad[b.index(i, 0)] = adjoint[i];
        }
    }
    Ok(grad)
}
