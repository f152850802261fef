//! Discrete-time linear state-space models.
//!
//! `x(k+1) = A x(k) + B u(k)`, `y(k) = C x(k) + D u(k)`.

mod estimate;
mod io;
mod subspace;

use nalgebra::{Complex, DMatrix, DVector};

use crate::signal;
use crate::{Error, Result};

pub use estimate::{estimate_lti, EstimateOptions, LtiEstimate};
pub use io::{dataset_hash, LtiModelFile, LtiProvenance};
pub use subspace::{default_horizon, subspace_estimate, SubspaceEstimate};

#[derive(Debug, Clone, PartialEq)]
pub struct LtiStateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

/// Output and state trajectory of a simulation. `x` has `N + 1` rows: the
/// state after the last input sample is included.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSimulation {
    pub y: DMatrix<f64>,
    pub x: DMatrix<f64>,
}

impl LtiStateSpace {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let nx = a.nrows();
        if a.ncols() != nx {
            return Err(Error::dim(format!("A is {}x{}, must be square", a.nrows(), a.ncols())));
        }
        if b.nrows() != nx {
            return Err(Error::dim(format!("B has {} rows, A has {nx}", b.nrows())));
        }
        if c.ncols() != nx {
            return Err(Error::dim(format!("C has {} columns, A has {nx}", c.ncols())));
        }
        if d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(Error::dim(format!(
                "D is {}x{}, expected {}x{}",
                d.nrows(),
                d.ncols(),
                c.nrows(),
                b.ncols()
            )));
        }
        Ok(LtiStateSpace { a, b, c, d })
    }

    /// All-zero model of the given dimensions.
    pub fn zeros(nx: usize, nu: usize, ny: usize) -> Self {
        LtiStateSpace {
            a: DMatrix::zeros(nx, nx),
            b: DMatrix::zeros(nx, nu),
            c: DMatrix::zeros(ny, nx),
            d: DMatrix::zeros(ny, nu),
        }
    }

    /// SISO model in controllable canonical form from `num(z)/den(z)`, both
    /// given in descending powers of `z` with `den[0] != 0` and
    /// `num.len() <= den.len()`.
    pub fn from_transfer_function(num: &[f64], den: &[f64]) -> Result<Self> {
        if den.is_empty() || den[0] == 0.0 {
            return Err(Error::arg("leading denominator coefficient must be nonzero"));
        }
        if num.len() > den.len() {
            return Err(Error::arg("transfer function is not proper"));
        }
        let n = den.len() - 1;
        let a0 = den[0];
        let den: Vec<f64> = den.iter().map(|v| v / a0).collect();
        let mut padded = vec![0.0; den.len() - num.len()];
        padded.extend(num.iter().map(|v| v / a0));
        let d0 = padded[0];
        let mut a = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, 1);
        let mut c = DMatrix::zeros(1, n);
        if n > 0 {
            for j in 0..n {
                a[(0, j)] = -den[j + 1];
            }
            for i in 1..n {
                a[(i, i - 1)] = 1.0;
            }
            b[(0, 0)] = 1.0;
            for j in 0..n {
                c[(0, j)] = padded[j + 1] - d0 * den[j + 1];
            }
        }
        LtiStateSpace::new(a, b, c, DMatrix::from_element(1, 1, d0))
    }

    pub fn nx(&self) -> usize {
        self.a.nrows()
    }

    pub fn nu(&self) -> usize {
        self.b.ncols()
    }

    pub fn ny(&self) -> usize {
        self.c.nrows()
    }

    pub fn eigenvalues(&self) -> Vec<Complex<f64>> {
        if self.nx() == 0 {
            return Vec::new();
        }
        self.a.complex_eigenvalues().iter().copied().collect()
    }

    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues().iter().map(|l| l.norm()).fold(0.0, f64::max)
    }

    /// All eigenvalues of `A` strictly inside the unit circle.
    pub fn is_stable(&self) -> bool {
        self.spectral_radius() < 1.0
    }

    /// Markov parameters `D, CB, CAB, …, CA^{lags-2}B`.
    pub fn impulse_response(&self, lags: usize) -> Vec<DMatrix<f64>> {
        let mut out = Vec::with_capacity(lags);
        if lags == 0 {
            return out;
        }
        out.push(self.d.clone());
        let mut ak_b = self.b.clone();
        for _ in 1..lags {
            out.push(&self.c * &ak_b);
            ak_b = &self.a * ak_b;
        }
        out
    }

    /// Change of state basis `x = T x'`: `A' = T⁻¹AT, B' = T⁻¹B, C' = CT`.
    pub fn similarity_transform(&self, t: &DMatrix<f64>) -> Result<Self> {
        if t.shape() != (self.nx(), self.nx()) {
            return Err(Error::dim("transform must be nx x nx"));
        }
        let t_inv = t
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::arg("similarity transform is singular"))?;
        Ok(LtiStateSpace {
            a: &t_inv * &self.a * t,
            b: &t_inv * &self.b,
            c: &self.c * t,
            d: self.d.clone(),
        })
    }

    /// Cascade: the output of `self` drives `next`.
    pub fn series(&self, next: &LtiStateSpace) -> Result<Self> {
        if next.nu() != self.ny() {
            return Err(Error::dim("series connection needs matching output/input counts"));
        }
        let (n1, n2) = (self.nx(), next.nx());
        let mut a = DMatrix::zeros(n1 + n2, n1 + n2);
        a.view_mut((0, 0), (n1, n1)).copy_from(&self.a);
        a.view_mut((n1, 0), (n2, n1)).copy_from(&(&next.b * &self.c));
        a.view_mut((n1, n1), (n2, n2)).copy_from(&next.a);
        let mut b = DMatrix::zeros(n1 + n2, self.nu());
        b.view_mut((0, 0), (n1, self.nu())).copy_from(&self.b);
        b.view_mut((n1, 0), (n2, self.nu())).copy_from(&(&next.b * &self.d));
        let mut c = DMatrix::zeros(next.ny(), n1 + n2);
        c.view_mut((0, 0), (next.ny(), n1)).copy_from(&(&next.d * &self.c));
        c.view_mut((0, n1), (next.ny(), n2)).copy_from(&next.c);
        LtiStateSpace::new(a, b, c, &next.d * &self.d)
    }
}

/// `out = M1·x + M2·u`, accumulated in a fixed order. Shared by every
/// simulator so that a residual network with a silent nonlinear branch
/// reproduces the linear simulation bit for bit.
#[inline]
pub(crate) fn affine_step(m1: &DMatrix<f64>, m2: &DMatrix<f64>, x: &[f64], u: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (l, xl) in x.iter().enumerate() {
            acc += m1[(i, l)] * xl;
        }
        for (l, ul) in u.iter().enumerate() {
            acc += m2[(i, l)] * ul;
        }
        *o = acc;
    }
}

/// Exact recursion of the linear model from `x0`.
pub fn simulate_lti(m: &LtiStateSpace, u: &DMatrix<f64>, x0: &DVector<f64>) -> Result<LtiSimulation> {
    if u.ncols() != m.nu() {
        return Err(Error::dim(format!("input has {} channels, model expects {}", u.ncols(), m.nu())));
    }
    if x0.len() != m.nx() {
        return Err(Error::dim(format!("x0 has length {}, model has {} states", x0.len(), m.nx())));
    }
    let n = u.nrows();
    let (nx, ny) = (m.nx(), m.ny());
    let mut y = DMatrix::zeros(n, ny);
    let mut xs = DMatrix::zeros(n + 1, nx);
    let mut x: Vec<f64> = x0.iter().copied().collect();
    let mut x_next = vec![0.0; nx];
    let mut yk = vec![0.0; ny];
    let mut uk = vec![0.0; m.nu()];
    for k in 0..n {
        for (j, v) in uk.iter_mut().enumerate() {
            *v = u[(k, j)];
        }
        for (j, v) in x.iter().enumerate() {
            xs[(k, j)] = *v;
        }
        affine_step(&m.c, &m.d, &x, &uk, &mut yk);
        for (j, v) in yk.iter().enumerate() {
            y[(k, j)] = *v;
        }
        affine_step(&m.a, &m.b, &x, &uk, &mut x_next);
        std::mem::swap(&mut x, &mut x_next);
    }
    for (j, v) in x.iter().enumerate() {
        xs[(n, j)] = *v;
    }
    Ok(LtiSimulation { y, x: xs })
}

/// Rescale the states so that each has unit (population) standard deviation
/// when the model is driven by `u` from rest.
///
/// Returns the scaled model and the diagonal of `T = diag(std(x_i))`; the new
/// state is `x' = T⁻¹x`. The statistics are taken over the `N` states that
/// produce outputs, `x(0) … x(N-1)`.
pub fn normalize_states(m: &LtiStateSpace, u: &DMatrix<f64>) -> Result<(LtiStateSpace, DVector<f64>)> {
    if !m.is_stable() {
        return Err(Error::arg(format!(
            "state normalization needs a stable model (spectral radius {})",
            m.spectral_radius()
        )));
    }
    let sim = simulate_lti(m, u, &DVector::zeros(m.nx()))?;
    let n = u.nrows();
    let mut scales = DVector::zeros(m.nx());
    for i in 0..m.nx() {
        let xi: Vec<f64> = (0..n).map(|k| sim.x[(k, i)]).collect();
        let s = signal::std_dev(&xi);
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::UnreachableState { state: i });
        }
        scales[i] = s;
    }
    let nx = m.nx();
    let mut out = m.clone();
    for i in 0..nx {
        for j in 0..nx {
            out.a[(i, j)] = m.a[(i, j)] * scales[j] / scales[i];
        }
        for j in 0..m.nu() {
            out.b[(i, j)] = m.b[(i, j)] / scales[i];
        }
    }
    for i in 0..m.ny() {
        for j in 0..nx {
            out.c[(i, j)] = m.c[(i, j)] * scales[j];
        }
    }
    Ok((out, scales))
}
