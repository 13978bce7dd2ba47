//! Nonlinear DAE plant models `H(p)x + L(p)z + F(p)f + E(x) = 0`, their
//! stacked coefficient form, and the ODE embedding.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{arg_err, dim_err, Error, Result};
use crate::linalg::complex_rank;
use crate::poly::{PolyMatrix, C64};

pub type NonlinearFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// The `E(x)` term. `Zero` marks a linear model.
#[derive(Clone)]
pub enum Nonlinearity {
    Zero,
    Function(NonlinearFn),
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Nonlinearity::Zero => f.write_str("Zero"),
            Nonlinearity::Function(_) => f.write_str("Function(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NonlinearDaeModel {
    h: PolyMatrix,
    l: PolyMatrix,
    f: PolyMatrix,
    nonlinearity: Nonlinearity,
}

impl NonlinearDaeModel {
    pub fn new(h: PolyMatrix, l: PolyMatrix, f: PolyMatrix, nonlinearity: Nonlinearity) -> Result<Self> {
        let n_r = h.rows();
        if l.rows() != n_r || f.rows() != n_r {
            return dim_err(format!(
                "H, L, F must share a row count (got {}, {}, {})",
                n_r,
                l.rows(),
                f.rows()
            ));
        }
        if n_r == 0 {
            return arg_err("model has no equations");
        }
        Ok(Self { h, l, f, nonlinearity })
    }

    pub fn linear(h: PolyMatrix, l: PolyMatrix, f: PolyMatrix) -> Result<Self> {
        Self::new(h, l, f, Nonlinearity::Zero)
    }

    pub fn h(&self) -> &PolyMatrix {
        &self.h
    }
    pub fn l(&self) -> &PolyMatrix {
        &self.l
    }
    pub fn f(&self) -> &PolyMatrix {
        &self.f
    }
    pub fn nonlinearity(&self) -> &Nonlinearity {
        &self.nonlinearity
    }
    pub fn n_r(&self) -> usize {
        self.h.rows()
    }
    pub fn n_x(&self) -> usize {
        self.h.cols()
    }
    pub fn n_z(&self) -> usize {
        self.l.cols()
    }
    pub fn n_f(&self) -> usize {
        self.f.cols()
    }

    /// Evaluates `E(x)`; a linear model returns zeros.
    pub fn eval_nonlinearity(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.n_x() {
            return dim_err(format!("state has length {}, model expects {}", x.len(), self.n_x()));
        }
        match &self.nonlinearity {
            Nonlinearity::Zero => Ok(DVector::zeros(self.n_r())),
            Nonlinearity::Function(e) => {
                let v = e(x);
                if v.len() != self.n_r() {
                    return dim_err(format!("E(x) has length {}, expected {}", v.len(), self.n_r()));
                }
                Ok(v)
            }
        }
    }
}

/// Evaluates a polynomial matrix at `p = s`.
pub fn eval_poly_matrix(m: &PolyMatrix, s: C64) -> DMatrix<C64> {
    m.eval(s)
}

/// Block-Toeplitz coefficient form of `(H, F)` for a numerator of degree `d_n`.
///
/// Row blocks index the numerator power `i = 0..=d_n`; each row block holds the
/// `n_r` channels. Column block `j` of `hbar` collects the coefficient of `p^j`
/// in `N(p) H(p)`, so `nbar * hbar` stacks the coefficients of that product.
#[derive(Debug, Clone)]
pub struct StackedSystem {
    pub hbar: DMatrix<f64>,
    pub fbar: DMatrix<f64>,
    pub d_n: usize,
    pub n_r: usize,
    pub n_x: usize,
    pub n_f: usize,
    pub d_h: usize,
    pub d_f: usize,
}

fn block_toeplitz(m: &PolyMatrix, d_n: usize) -> DMatrix<f64> {
    let (r, c) = (m.rows(), m.cols());
    let d = m.degree();
    let mut out = DMatrix::zeros(r * (d_n + 1), c * (d_n + d + 1));
    for i in 0..=d_n {
        for (k, coeff) in m.coeffs().iter().enumerate() {
            out.view_mut((i * r, (i + k) * c), (r, c)).copy_from(coeff);
        }
    }
    out
}

pub fn stack_system(h: &PolyMatrix, f: &PolyMatrix, d_n: usize) -> Result<StackedSystem> {
    if h.rows() != f.rows() {
        return dim_err("H and F must share a row count");
    }
    Ok(StackedSystem {
        hbar: block_toeplitz(h, d_n),
        fbar: block_toeplitz(f, d_n),
        d_n,
        n_r: h.rows(),
        n_x: h.cols(),
        n_f: f.cols(),
        d_h: h.degree(),
        d_f: f.degree(),
    })
}

impl StackedSystem {
    /// Number of sensitivity components `n_f (d_F + d_N + 1)`.
    pub fn sensitivity_len(&self) -> usize {
        self.fbar.ncols()
    }

    pub fn numerator_len(&self) -> usize {
        self.n_r * (self.d_n + 1)
    }
}

/// Right-hand side of an ODE `X' = h(X)`.
pub trait Drift: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &DVector<f64>) -> DVector<f64>;
}

/// `h(X) = A (X - X_e)`.
#[derive(Debug, Clone)]
pub struct LinearDrift {
    pub a: DMatrix<f64>,
    pub x_e: DVector<f64>,
}

impl Drift for LinearDrift {
    fn dim(&self) -> usize {
        self.a.nrows()
    }
    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * (x - &self.x_e)
    }
}

/// Wraps a closure as a drift.
pub struct FnDrift<F> {
    dim: usize,
    f: F,
}

impl<F> FnDrift<F>
where
    F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> Drift for FnDrift<F>
where
    F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.f)(x)
    }
}

/// `X' = h(X) + B_d d + B_f f`, `Y = C X`.
#[derive(Clone)]
pub struct OdeSystem {
    pub drift: Arc<dyn Drift>,
    pub b_d: DMatrix<f64>,
    pub b_f: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl fmt::Debug for OdeSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OdeSystem")
            .field("n_state", &self.n_state())
            .field("n_d", &self.n_d())
            .field("n_f", &self.n_f())
            .field("n_y", &self.n_y())
            .finish()
    }
}

impl OdeSystem {
    pub fn new(drift: Arc<dyn Drift>, b_d: DMatrix<f64>, b_f: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let n = drift.dim();
        if b_d.nrows() != n || b_f.nrows() != n || c.ncols() != n {
            return dim_err(format!(
                "state dimension {n} does not match B_d {}x{}, B_f {}x{}, C {}x{}",
                b_d.nrows(),
                b_d.ncols(),
                b_f.nrows(),
                b_f.ncols(),
                c.nrows(),
                c.ncols()
            ));
        }
        Ok(Self { drift, b_d, b_f, c })
    }

    pub fn n_state(&self) -> usize {
        self.drift.dim()
    }
    pub fn n_d(&self) -> usize {
        self.b_d.ncols()
    }
    pub fn n_f(&self) -> usize {
        self.b_f.ncols()
    }
    pub fn n_y(&self) -> usize {
        self.c.nrows()
    }

    /// Full right-hand side including disturbance and fault inputs.
    pub fn rhs(&self, x: &DVector<f64>, d: &DVector<f64>, f: &DVector<f64>) -> DVector<f64> {
        let mut v = self.drift.eval(x);
        v += &self.b_d * d;
        v += &self.b_f * f;
        v
    }

    /// The same plant with its drift replaced by the Jacobian linearization at `x_e`.
    pub fn linearized(&self, x_e: &DVector<f64>) -> Result<OdeSystem> {
        let a = linearize(self.drift.as_ref(), x_e)?;
        Ok(OdeSystem {
            drift: Arc::new(LinearDrift { a, x_e: x_e.clone() }),
            b_d: self.b_d.clone(),
            b_f: self.b_f.clone(),
            c: self.c.clone(),
        })
    }
}

/// Central-difference Jacobian of the drift at `x`.
pub fn linearize(drift: &dyn Drift, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = drift.dim();
    if x.len() != n {
        return dim_err(format!("point has length {}, drift dimension is {n}", x.len()));
    }
    let mut jac = DMatrix::zeros(n, n);
    let mut xp = x.clone();
    for j in 0..n {
        let h = 1e-6_f64.max(1e-6 * x[j].abs());
        let orig = xp[j];
        xp[j] = orig + h;
        let fp = drift.eval(&xp);
        xp[j] = orig - h;
        let fm = drift.eval(&xp);
        xp[j] = orig;
        let col = (fp - fm) / (2.0 * h);
        jac.set_column(j, &col);
    }
    if jac.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Jacobian".into()));
    }
    Ok(jac)
}

pub const EQUILIBRIUM_TOL: f64 = 1e-9;

/// Embeds the ODE plant around the equilibrium `x_e` with unknowns
/// `x = [X - X_e; d]` and measurement `z = Y - C X_e`.
pub fn ode_to_dae(sys: &OdeSystem, x_e: &DVector<f64>) -> Result<NonlinearDaeModel> {
    let n_state = sys.n_state();
    if x_e.len() != n_state {
        return dim_err(format!("equilibrium has length {}, state is {n_state}", x_e.len()));
    }
    let h0 = sys.drift.eval(x_e);
    let residual = h0.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    if !residual.is_finite() || residual > EQUILIBRIUM_TOL {
        return Err(Error::EquilibriumResidual {
            residual,
            tolerance: EQUILIBRIUM_TOL,
        });
    }
    let a = linearize(sys.drift.as_ref(), x_e)?;
    let (n_d, n_f, n_y) = (sys.n_d(), sys.n_f(), sys.n_y());
    let n_r = n_state + n_y;
    let n_x = n_state + n_d;

    let mut h0m = DMatrix::zeros(n_r, n_x);
    h0m.view_mut((0, 0), (n_state, n_state)).copy_from(&a);
    h0m.view_mut((0, n_state), (n_state, n_d)).copy_from(&sys.b_d);
    h0m.view_mut((n_state, 0), (n_y, n_state)).copy_from(&sys.c);
    let mut h1m = DMatrix::zeros(n_r, n_x);
    for i in 0..n_state {
        h1m[(i, i)] = -1.0;
    }
    let h = PolyMatrix::new(vec![h0m, h1m])?;

    let mut lm = DMatrix::zeros(n_r, n_y);
    for i in 0..n_y {
        lm[(n_state + i, i)] = -1.0;
    }
    let l = PolyMatrix::constant(lm);

    let mut fm = DMatrix::zeros(n_r, n_f);
    fm.view_mut((0, 0), (n_state, n_f)).copy_from(&sys.b_f);
    let f = PolyMatrix::constant(fm);

    let drift = sys.drift.clone();
    let x_e = x_e.clone();
    let e: NonlinearFn = Arc::new(move |x: &DVector<f64>| {
        let dx = x.rows(0, n_state).into_owned();
        let big_x = &x_e + &dx;
        let mut out = DVector::zeros(n_r);
        let v = drift.eval(&big_x) - &a * dx;
        out.rows_mut(0, n_state).copy_from(&v);
        out
    });
    NonlinearDaeModel::new(h, l, f, Nonlinearity::Function(e))
}

/// Moves every fault column except `target` (0-based) into the unknowns.
pub fn isolate_fault(model: &NonlinearDaeModel, target: usize) -> Result<NonlinearDaeModel> {
    let n_f = model.n_f();
    if target >= n_f {
        return arg_err(format!("target fault {target} out of range for {n_f} faults"));
    }
    if n_f == 1 {
        return arg_err("model has a single fault; nothing to isolate");
    }
    let others: Vec<usize> = (0..n_f).filter(|&j| j != target).collect();
    let h = PolyMatrix::hcat(&[&model.h, &model.f.select_columns(&others)])?;
    let f = model.f.column(target);
    let n_x = model.n_x();
    let nonlinearity = match &model.nonlinearity {
        Nonlinearity::Zero => Nonlinearity::Zero,
        Nonlinearity::Function(e) => {
            let e = e.clone();
            Nonlinearity::Function(Arc::new(move |x: &DVector<f64>| e(&x.rows(0, n_x).into_owned())))
        }
    };
    NonlinearDaeModel::new(h, model.l.clone(), f, nonlinearity)
}

#[derive(Debug, Clone, Serialize)]
pub struct RankSample {
    pub s_re: f64,
    pub s_im: f64,
    pub rank_h: usize,
    pub rank_hf: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct DetectabilityReport {
    pub detectable: bool,
    pub samples: Vec<RankSample>,
}

const RANK_POINTS: usize = 5;
const RANK_TOL: f64 = 1e-8;
const RANK_SEED: u64 = 0x0d15_ea5e;

/// Rank test `rank [H F] > rank H` at random points off the real axis, decided by majority.
pub fn detectability_check(h: &PolyMatrix, f: &PolyMatrix) -> Result<DetectabilityReport> {
    if h.rows() != f.rows() {
        return dim_err("H and F must share a row count");
    }
    let hf = PolyMatrix::hcat(&[h, f])?;
    let mut rng = ChaCha8Rng::seed_from_u64(RANK_SEED);
    let mut samples = Vec::with_capacity(RANK_POINTS);
    for _ in 0..RANK_POINTS {
        let radius = rng.gen_range(0.5..2.0);
        let angle = rng.gen_range(0.1..(std::f64::consts::PI - 0.1));
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let s = C64::from_polar(radius, sign * angle);
        samples.push(RankSample {
            s_re: s.re,
            s_im: s.im,
            rank_h: complex_rank(&h.eval(s), RANK_TOL),
            rank_hf: complex_rank(&hf.eval(s), RANK_TOL),
        });
    }
    let votes = samples.iter().filter(|r| r.rank_hf > r.rank_h).count();
    Ok(DetectabilityReport {
        detectable: 2 * votes > RANK_POINTS,
        samples,
    })
}

impl DetectabilityReport {
    pub fn into_result(self) -> Result<Self> {
        if self.detectable {
            Ok(self)
        } else {
            let agreeing = self.samples.iter().filter(|r| r.rank_hf <= r.rank_h).count();
            Err(Error::NotDetectable {
                agreeing,
                points: self.samples.len(),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    #[test]
    fn stacking_reproduces_product() {
        let h = PolyMatrix::new(vec![mat(2, 1, &[1.0, -2.0]), mat(2, 1, &[0.5, 1.0])]).unwrap();
        let f = PolyMatrix::constant(mat(2, 1, &[1.0, 0.0]));
        let st = stack_system(&h, &f, 2).unwrap();
        assert_eq!(st.hbar.shape(), (6, 4));
        let nbar = DVector::from_vec(vec![0.3, -1.0, 2.0, 0.1, -0.7, 0.4]);
        let n = PolyMatrix::new((0..3).map(|i| mat(1, 2, &[nbar[2 * i], nbar[2 * i + 1]])).collect()).unwrap();
        let s = C64::new(0.2, 1.3);
        let direct = (n.eval(s) * h.eval(s))[(0, 0)];
        let coeffs = nbar.transpose() * &st.hbar;
        let mut via = C64::new(0.0, 0.0);
        for k in (0..coeffs.len()).rev() {
            via = via * s + coeffs[k];
        }
        assert!((direct - via).norm() < 1e-13);
    }

    #[test]
    fn isolation_moves_columns() {
        let h = PolyMatrix::constant(mat(2, 1, &[1.0, 0.0]));
        let l = PolyMatrix::constant(mat(2, 1, &[0.0, -1.0]));
        let f = PolyMatrix::constant(mat(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let m = NonlinearDaeModel::linear(h, l, f).unwrap();
        let iso = isolate_fault(&m, 1).unwrap();
        assert_eq!(iso.n_x(), 2);
        assert_eq!(iso.h().coeff(0)[(1, 1)], 3.0);
        assert_eq!(iso.f().coeff(0)[(0, 0)], 2.0);
    }

    #[test]
    fn embedding_rejects_non_equilibrium() {
        let sys = OdeSystem::new(
            Arc::new(FnDrift::new(1, |x: &DVector<f64>| DVector::from_element(1, 1.0 - x[0]))),
            DMatrix::zeros(1, 0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let err = ode_to_dae(&sys, &DVector::from_element(1, 0.0)).unwrap_err();
        assert!(matches!(err, Error::EquilibriumResidual { .. }));
        assert!(ode_to_dae(&sys, &DVector::from_element(1, 1.0)).is_ok());
    }
}
