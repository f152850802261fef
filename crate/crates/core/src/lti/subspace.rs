//! Deterministic subspace identification (past-output MOESP).
//!
//! With block-Hankel matrices of future inputs `U_f`, past inputs and
//! outputs `W_p = [U_p; Y_p]` and future outputs `Y_f`, the LQ factorization
//!
//! ```text
//! [U_f; W_p; Y_f] = L Q
//! ```
//!
//! isolates in `L32` the part of `Y_f` that the past explains after the
//! future inputs are projected out. Its column space is the extended
//! observability matrix `Γ = [C; CA; …; CA^{i-1}]`, from which `C` is the
//! first block row and `A` follows from the shift structure. `B`, `D` and the
//! initial state then enter the output linearly and are fitted by least
//! squares.

use nalgebra::{DMatrix, DVector};

use super::{simulate_lti, LtiStateSpace};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceEstimate {
    pub model: LtiStateSpace,
    pub x0: DVector<f64>,
    pub horizon: usize,
    /// Singular values of `L32`, the order-revealing spectrum.
    pub singular_values: Vec<f64>,
    /// The input block-Hankel matrix is numerically rank deficient: the input
    /// is not persistently exciting of order `2·horizon`.
    pub input_rank_deficient: bool,
}

/// Default horizon (block rows per Hankel half) for a model order.
pub fn default_horizon(order: usize) -> usize {
    (2 * order + 2).max(10)
}

/// `rows·channels × cols` block-Hankel matrix whose column `t` stacks
/// `s(start + t), …, s(start + t + rows − 1)`.
fn block_hankel(s: &DMatrix<f64>, start: usize, rows: usize, cols: usize) -> DMatrix<f64> {
    let ch = s.ncols();
    DMatrix::from_fn(rows * ch, cols, |r, t| s[(start + t + r / ch, r % ch)])
}

/// Subspace estimate of the given order, `horizon` block rows per half.
pub fn subspace_estimate(u: &DMatrix<f64>, y: &DMatrix<f64>, order: usize, horizon: usize) -> Result<SubspaceEstimate> {
    if order == 0 {
        return Err(Error::arg("model order must be at least 1"));
    }
    if u.nrows() != y.nrows() {
        return Err(Error::dim("input and output lengths differ"));
    }
    let (n, m, l) = (u.nrows(), u.ncols(), y.ncols());
    let i = horizon;
    if i <= order {
        return Err(Error::arg(format!("horizon {i} must exceed the order {order}")));
    }
    let rows = 2 * i * (m + l);
    if n + 1 < 2 * i || n + 1 - 2 * i < rows {
        return Err(Error::arg(format!(
            "{n} samples are too few for horizon {i}: need at least {}",
            rows + 2 * i - 1
        )));
    }
    let j = n + 1 - 2 * i;
    let up = block_hankel(u, 0, i, j);
    let uf = block_hankel(u, i, i, j);
    let yp = block_hankel(y, 0, i, j);
    let yf = block_hankel(y, i, i, j);

    let input_rank_deficient = {
        let mut hu = DMatrix::zeros(2 * i * m, j);
        hu.rows_mut(0, i * m).copy_from(&up);
        hu.rows_mut(i * m, i * m).copy_from(&uf);
        let r = hu.transpose().qr().r();
        let d: Vec<f64> = r.diagonal().iter().map(|v| v.abs()).collect();
        let dmax = d.iter().copied().fold(0.0, f64::max);
        d.iter().any(|&v| v <= 1e-10 * dmax)
    };

    // Stack [U_f; U_p; Y_p; Y_f] and take the LQ factor via QR of the transpose.
    let mut h = DMatrix::zeros(rows, j);
    h.rows_mut(0, i * m).copy_from(&uf);
    h.rows_mut(i * m, i * m).copy_from(&up);
    h.rows_mut(2 * i * m, i * l).copy_from(&yp);
    h.rows_mut(2 * i * m + i * l, i * l).copy_from(&yf);
    let lower = h.transpose().qr().r().transpose();
    let past = i * (m + l);
    let l32 = lower.view((i * m + past, i * m), (i * l, past)).into_owned();

    let svd = l32.svd(true, false);
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s: Vec<f64> = idx.iter().map(|&k| svd.singular_values[k]).collect();
    if s.len() < order || !(s[order - 1] > 1e-13 * s[0]) {
        return Err(Error::RankDeficient(format!(
            "the data do not support order {order} (singular values {:?})",
            &s[..s.len().min(order + 1)]
        )));
    }
    let u_svd = svd.u.as_ref().expect("left singular vectors were requested");
    let gamma = DMatrix::from_fn(i * l, order, |r, c| u_svd[(r, idx[c])] * s[c].sqrt());
    let c_mat = gamma.rows(0, l).into_owned();
    let upper = gamma.rows(0, (i - 1) * l).into_owned();
    let lower_shift = gamma.rows(l, (i - 1) * l).into_owned();
    let a_mat = upper
        .svd(true, true)
        .solve(&lower_shift, 1e-14)
        .map_err(|e| Error::RankDeficient(e.to_string()))?;

    let (b_mat, d_mat, x0) = fit_bd_x0(&a_mat, &c_mat, u, y)?;
    Ok(SubspaceEstimate {
        model: LtiStateSpace::new(a_mat, b_mat, c_mat, d_mat)?,
        x0,
        horizon: i,
        singular_values: s,
        input_rank_deficient,
    })
}

/// With `A` and `C` fixed the output is linear in `B`, `D` and `x0`; the
/// regressor of each entry is obtained by simulating the corresponding unit
/// system.
fn fit_bd_x0(a: &DMatrix<f64>, c: &DMatrix<f64>, u: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>, DVector<f64>)> {
    let (n, m, l, nx) = (u.nrows(), u.ncols(), y.ncols(), a.nrows());
    let n_par = nx * m + l * m + nx;
    let mut phi = DMatrix::zeros(n * l, n_par);
    let mut col = 0;
    for p in 0..nx {
        for q in 0..m {
            let mut b = DMatrix::zeros(nx, m);
            b[(p, q)] = 1.0;
            let sys = LtiStateSpace::new(a.clone(), b, c.clone(), DMatrix::zeros(l, m))?;
            let sim = simulate_lti(&sys, u, &DVector::zeros(nx))?;
            for k in 0..n {
                for ch in 0..l {
                    phi[(k * l + ch, col)] = sim.y[(k, ch)];
                }
            }
            col += 1;
        }
    }
    for p in 0..l {
        for q in 0..m {
            for k in 0..n {
                phi[(k * l + p, col)] = u[(k, q)];
            }
            col += 1;
        }
    }
    let free = LtiStateSpace::new(a.clone(), DMatrix::zeros(nx, m), c.clone(), DMatrix::zeros(l, m))?;
    let zero_u = DMatrix::zeros(n, m);
    for p in 0..nx {
        let mut x0 = DVector::zeros(nx);
        x0[p] = 1.0;
        let sim = simulate_lti(&free, &zero_u, &x0)?;
        for k in 0..n {
            for ch in 0..l {
                phi[(k * l + ch, col)] = sim.y[(k, ch)];
            }
        }
        col += 1;
    }
    let target = DVector::from_fn(n * l, |r, _| y[(r / l, r % l)]);
    let theta = phi
        .svd(true, true)
        .solve(&target, 1e-13)
        .map_err(|e| Error::RankDeficient(e.to_string()))?;
    let b = DMatrix::from_fn(nx, m, |p, q| theta[p * m + q]);
    let d = DMatrix::from_fn(l, m, |p, q| theta[nx * m + p * m + q]);
    let x0 = DVector::from_fn(nx, |p, _| theta[nx * m + l * m + p]);
    Ok((b, d, x0))
}
