//! Nonlinearity signatures: Fourier projection of `e_x(t) = E(x(t))` and the
//! quadratic forms `Q` with `||a^{-1} N e||^2 ~ nbar Q nbar^T`.

use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, dim_err, Error, Result};
use crate::lti::inverse_denominator_realization;
use crate::poly::{check_stable, roots, PolyMatrix, C64};
use crate::signal::{simpson_weights, weighted_gram, SampledSignal};

/// Orthonormal trigonometric basis on `[0, T]`:
/// `b_0 = 1/sqrt(T)`, `b_{2q-1} = sqrt(2/T) sin(q w t)`, `b_{2q} = sqrt(2/T) cos(q w t)`.
#[derive(Debug, Clone, Serialize)]
pub struct BasisSpec {
    pub k: usize,
    pub horizon: f64,
    pub omega: f64,
    pub orthonormal: bool,
    /// `d/dt b = D b` on the basis vector.
    #[serde(skip)]
    pub derivative: DMatrix<f64>,
}

pub fn make_fourier_basis(k: usize, horizon: f64) -> Result<BasisSpec> {
    if k % 2 != 0 {
        return arg_err(format!("basis size k must be even so harmonics come in pairs, got {k}"));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return arg_err(format!("horizon must be positive, got {horizon}"));
    }
    let omega = 2.0 * PI / horizon;
    let mut d = DMatrix::zeros(k + 1, k + 1);
    for q in 1..=k / 2 {
        let (s, c) = (2 * q - 1, 2 * q);
        let w = q as f64 * omega;
        d[(s, c)] = w;
        d[(c, s)] = -w;
    }
    Ok(BasisSpec {
        k,
        horizon,
        omega,
        orthonormal: true,
        derivative: d,
    })
}

impl BasisSpec {
    pub fn len(&self) -> usize {
        self.k + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn harmonic(i: usize) -> usize {
        i.div_ceil(2)
    }

    pub fn eval(&self, i: usize, t: f64) -> f64 {
        let t_len = self.horizon;
        if i == 0 {
            return 1.0 / t_len.sqrt();
        }
        let q = Self::harmonic(i) as f64;
        let amp = (2.0 / t_len).sqrt();
        if i % 2 == 1 {
            amp * (q * self.omega * t).sin()
        } else {
            amp * (q * self.omega * t).cos()
        }
    }

    /// Sample-major matrix of all basis functions on `n` points from zero.
    pub fn sample(&self, n: usize, dt: f64) -> DMatrix<f64> {
        DMatrix::from_fn(n, self.len(), |r, i| self.eval(i, r as f64 * dt))
    }

    fn check_grid(&self, e: &SampledSignal) -> Result<()> {
        let span = e.t_end() - e.t0();
        if e.t0().abs() > 1e-9 * self.horizon || (span - self.horizon).abs() > 1e-9 * self.horizon {
            return dim_err(format!(
                "signal covers [{}, {}], basis horizon is [0, {}]",
                e.t0(),
                e.t_end(),
                self.horizon
            ));
        }
        if e.len() < 3 {
            return arg_err("signal needs at least three samples");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectionCoefficients {
    /// `n_r x (k+1)`: row `l` holds the coefficients of channel `l`.
    pub beta: Vec<Vec<f64>>,
    /// L2 norm of the truncation remainder.
    pub delta: f64,
}

impl ProjectionCoefficients {
    pub fn beta_matrix(&self) -> DMatrix<f64> {
        let rows = self.beta.len();
        let cols = self.beta.first().map_or(0, |r| r.len());
        DMatrix::from_fn(rows, cols, |i, j| self.beta[i][j])
    }
}

fn project_with(e: &SampledSignal, weighted: &DMatrix<f64>, sampled: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let beta = e.values().transpose() * weighted;
    let remainder = e.values() - sampled * beta.transpose();
    let w = simpson_weights(e.len(), e.dt());
    let mut d2 = 0.0;
    for c in 0..remainder.ncols() {
        d2 += remainder.column(c).iter().zip(&w).map(|(r, w)| w * r * r).sum::<f64>();
    }
    (beta, d2.max(0.0).sqrt())
}

fn weighted_basis(sampled: &DMatrix<f64>, dt: f64) -> DMatrix<f64> {
    let w = simpson_weights(sampled.nrows(), dt);
    let mut wb = sampled.clone();
    for (r, wr) in w.iter().enumerate() {
        wb.row_mut(r).scale_mut(*wr);
    }
    wb
}

/// Truncated projection of every channel of `e` onto the basis.
pub fn project(e: &SampledSignal, basis: &BasisSpec) -> Result<ProjectionCoefficients> {
    basis.check_grid(e)?;
    let sampled = basis.sample(e.len(), e.dt());
    let (beta, delta) = project_with(e, &weighted_basis(&sampled, e.dt()), &sampled);
    Ok(ProjectionCoefficients {
        beta: (0..beta.nrows())
            .map(|i| beta.row(i).iter().copied().collect())
            .collect(),
        delta,
    })
}

/// How the Gram matrix of the filtered basis is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GramMode {
    /// Steady-state (periodic) response of `1/a(p)` to each basis function.
    Periodic,
    /// Response of `1/a(p)` from zero initial state, integrated numerically.
    ZeroState,
    /// `G = I`.
    Identity,
}

fn abs_inv_den_sq(a: &[f64], w: f64) -> f64 {
    let s = C64::new(0.0, w);
    let mut acc = C64::new(0.0, 0.0);
    for &c in a.iter().rev() {
        acc = acc * s + c;
    }
    1.0 / acc.norm_sqr()
}

/// Zero-state outputs of `1/a(p)` driven by each basis function, on `n` samples.
fn zero_state_outputs(basis: &BasisSpec, a: &[f64], n: usize, dt: f64) -> DMatrix<f64> {
    let (af, bf) = inverse_denominator_realization(a);
    let l = af.nrows();
    let t = basis.horizon;
    let mut out = DMatrix::zeros(n, basis.len());
    let harmonics: Vec<usize> = (0..=basis.k / 2).collect();
    let cols: Vec<Vec<(usize, DVector<f64>)>> = {
        use rayon::prelude::*;
        harmonics
            .par_iter()
            .map(|&q| {
                let w = q as f64 * basis.omega;
                let amp = if q == 0 { (1.0 / t).sqrt() } else { (2.0 / t).sqrt() };
                // state: [x_sin; x_cos; s; c] with s = sin(wt), c = cos(wt)
                let size = 2 * l + 2;
                let mut m = DMatrix::zeros(size, size);
                m.view_mut((0, 0), (l, l)).copy_from(&af);
                m.view_mut((l, l), (l, l)).copy_from(&af);
                for i in 0..l {
                    m[(i, 2 * l)] = bf[(i, 0)] * amp;
                    m[(l + i, 2 * l + 1)] = bf[(i, 0)] * amp;
                }
                m[(2 * l, 2 * l + 1)] = w;
                m[(2 * l + 1, 2 * l)] = -w;
                let phi = (m * dt).exp();
                let mut x = DVector::zeros(size);
                x[2 * l + 1] = 1.0;
                let mut ys = DVector::zeros(n);
                let mut yc = DVector::zeros(n);
                for r in 0..n {
                    ys[r] = x[0];
                    yc[r] = x[l];
                    if r + 1 < n {
                        x = &phi * &x;
                    }
                }
                if q == 0 {
                    vec![(0, yc)]
                } else {
                    vec![(2 * q - 1, ys), (2 * q, yc)]
                }
            })
            .collect()
    };
    for group in cols {
        for (i, col) in group {
            out.set_column(i, &col);
        }
    }
    out
}

const GRAM_REL_TOL: f64 = 1e-8;
const GRAM_MAX_INTERVALS: usize = 1 << 18;

/// Gram matrix `G_ij = <a^{-1} b_i, a^{-1} b_j>` on `[0, T]`.
pub fn gram_matrix(basis: &BasisSpec, a: &PolyMatrix, mode: GramMode) -> Result<DMatrix<f64>> {
    check_stable(a)?;
    let ac = a.trimmed().scalar_coeffs()?;
    let n = basis.len();
    match mode {
        GramMode::Identity => Ok(DMatrix::identity(n, n)),
        GramMode::Periodic => Ok(DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                abs_inv_den_sq(&ac, BasisSpec::harmonic(i) as f64 * basis.omega)
            } else {
                0.0
            }
        })),
        GramMode::ZeroState => {
            let mut intervals = 4096;
            let mut prev: Option<DMatrix<f64>> = None;
            loop {
                let dt = basis.horizon / intervals as f64;
                let y = zero_state_outputs(basis, &ac, intervals + 1, dt);
                let g = weighted_gram(&y, dt);
                if let Some(p) = &prev {
                    let converged = (0..n).all(|i| {
                        (0..n).all(|j| {
                            let scale = (g[(i, i)] * g[(j, j)]).sqrt();
                            (g[(i, j)] - p[(i, j)]).abs() <= GRAM_REL_TOL * scale
                        })
                    });
                    if converged || intervals >= GRAM_MAX_INTERVALS {
                        return Ok(g);
                    }
                }
                prev = Some(g);
                intervals *= 2;
            }
        }
    }
}

/// `[beta; beta D; ...; beta D^{d_N}]`, blocks of `n_r` rows per power.
pub fn dbar_matrix(beta: &DMatrix<f64>, derivative: &DMatrix<f64>, d_n: usize) -> DMatrix<f64> {
    let (n_r, kk) = beta.shape();
    let mut out = DMatrix::zeros(n_r * (d_n + 1), kk);
    let mut block = beta.clone();
    for i in 0..=d_n {
        out.view_mut((i * n_r, 0), (n_r, kk)).copy_from(&block);
        if i < d_n {
            block = &block * derivative;
        }
    }
    out
}

/// Largest gain of `N(jw)/a(jw)` over frequency (`N = 1` when omitted).
pub fn hinf_norm(a: &PolyMatrix, numerator: Option<&PolyMatrix>) -> Result<f64> {
    check_stable(a)?;
    let ac = a.trimmed().scalar_coeffs()?;
    let deg_a = ac.len() - 1;
    if let Some(n) = numerator {
        let deg_n = n.trimmed().degree();
        if deg_n > deg_a {
            return Err(Error::Improper {
                numerator: deg_n,
                denominator: deg_a,
            });
        }
    }
    let gain = |w: f64| -> f64 {
        let s = C64::new(0.0, w);
        let mut den = C64::new(0.0, 0.0);
        for &c in ac.iter().rev() {
            den = den * s + c;
        }
        let num = match numerator {
            None => 1.0,
            Some(n) => {
                let v = n.eval(s);
                if v.nrows() == 1 || v.ncols() == 1 {
                    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
                } else {
                    v.singular_values().iter().copied().fold(0.0, f64::max)
                }
            }
        };
        num / den.norm()
    };
    let scale = roots(&ac)?.iter().map(|r| r.norm()).fold(0.0, f64::max).max(1e-3);
    let pts = 2048;
    let grid: Vec<f64> = (0..pts)
        .map(|i| scale * 10f64.powf(-4.0 + 8.0 * i as f64 / (pts - 1) as f64))
        .collect();
    let vals: Vec<f64> = grid.iter().map(|&w| gain(w)).collect();
    let mut best = gain(0.0).max(vals.iter().copied().fold(0.0, f64::max));
    for i in 0..pts {
        let left = if i == 0 { vals[0] } else { vals[i - 1] };
        let right = if i + 1 == pts { vals[i] } else { vals[i + 1] };
        if vals[i] >= left && vals[i] >= right {
            let lo = if i == 0 { grid[0] } else { grid[i - 1] };
            let hi = if i + 1 == pts { grid[i] } else { grid[i + 1] };
            best = best.max(golden_max(&gain, lo.ln(), hi.ln()));
        }
    }
    if !best.is_finite() {
        return Err(Error::NonFinite("H-infinity norm".into()));
    }
    Ok(best)
}

fn golden_max(f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1.exp()), f(x2.exp()));
    for _ in 0..100 {
        if (hi - lo).abs() < 1e-12 {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2.exp());
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1.exp());
        }
    }
    f1.max(f2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Basis,
    Exact,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SignatureMatrix {
    pub provenance: Provenance,
    pub horizon: f64,
    /// Row-major `n_r (d_N + 1)` square matrix.
    pub q: Vec<Vec<f64>>,
}

impl SignatureMatrix {
    pub fn from_matrix(q: &DMatrix<f64>, provenance: Provenance, horizon: f64) -> Self {
        Self {
            provenance,
            horizon,
            q: (0..q.nrows()).map(|i| q.row(i).iter().copied().collect()).collect(),
        }
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.q.len();
        DMatrix::from_fn(n, n, |i, j| self.q[i][j])
    }

    /// `nbar Q nbar^T`
    pub fn payoff(&self, nbar: &DVector<f64>) -> f64 {
        crate::linalg::quad_form(&self.matrix(), nbar)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBoundReport {
    pub delta: f64,
    pub e_norm: f64,
    pub inv_den_hinf: f64,
    pub c: f64,
    pub c_tilde: f64,
    pub c_bar: f64,
    pub bound: f64,
}

/// Basis samples and their quadrature-weighted copy on one grid.
type SampledBasis = Arc<(DMatrix<f64>, DMatrix<f64>)>;

/// Basis, denominator and Gram matrix bundled for repeated signature evaluation.
#[derive(Debug)]
pub struct SignatureEngine {
    basis: BasisSpec,
    denominator: Vec<f64>,
    d_n: usize,
    gram: DMatrix<f64>,
    inv_den_hinf: f64,
    mode: GramMode,
    cache: Mutex<Option<(usize, u64, SampledBasis)>>,
}

impl SignatureEngine {
    pub fn new(basis: BasisSpec, a: &PolyMatrix, d_n: usize, mode: GramMode) -> Result<Self> {
        let gram = gram_matrix(&basis, a, mode)?;
        let inv_den_hinf = hinf_norm(a, None)?;
        Ok(Self {
            basis,
            denominator: a.trimmed().scalar_coeffs()?,
            d_n,
            gram,
            inv_den_hinf,
            mode,
            cache: Mutex::new(None),
        })
    }

    pub fn basis(&self) -> &BasisSpec {
        &self.basis
    }
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }
    pub fn d_n(&self) -> usize {
        self.d_n
    }
    pub fn mode(&self) -> GramMode {
        self.mode
    }
    pub fn denominator(&self) -> &[f64] {
        &self.denominator
    }
    pub fn inv_den_hinf(&self) -> f64 {
        self.inv_den_hinf
    }

    fn sampled(&self, n: usize, dt: f64) -> SampledBasis {
        let mut guard = self.cache.lock().expect("cache lock");
        if let Some((cn, cdt, m)) = guard.as_ref() {
            if *cn == n && *cdt == dt.to_bits() {
                return m.clone();
            }
        }
        let sampled = self.basis.sample(n, dt);
        let weighted = weighted_basis(&sampled, dt);
        let m = Arc::new((sampled, weighted));
        *guard = Some((n, dt.to_bits(), m.clone()));
        m
    }

    pub fn error_bound(&self, n_r: usize, e_norm: f64, delta: f64) -> ErrorBoundReport {
        let c = ((n_r * (self.d_n + 1)) as f64).sqrt() * self.inv_den_hinf;
        let c_bar = (1.0 + 2.0 * e_norm) * c * self.inv_den_hinf;
        ErrorBoundReport {
            delta,
            e_norm,
            inv_den_hinf: self.inv_den_hinf,
            c,
            c_tilde: c,
            c_bar,
            bound: c_bar * delta,
        }
    }

    /// Basis signature `Dbar G Dbar^T` and its error-bound constants.
    pub fn signature_matrix(&self, e: &SampledSignal) -> Result<(SignatureMatrix, ErrorBoundReport)> {
        self.basis.check_grid(e)?;
        if e.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("signature input".into()));
        }
        let m = self.sampled(e.len(), e.dt());
        let (beta, delta) = project_with(e, &m.1, &m.0);
        let dbar = dbar_matrix(&beta, &self.basis.derivative, self.d_n);
        let q = crate::linalg::symmetrize(&(&dbar * &self.gram * dbar.transpose()));
        let report = self.error_bound(e.channels(), e.l2_norm(), delta);
        Ok((
            SignatureMatrix::from_matrix(&q, Provenance::Basis, self.basis.horizon),
            report,
        ))
    }

    pub fn signature_matrix_exact(&self, e: &SampledSignal) -> Result<SignatureMatrix> {
        let a = PolyMatrix::scalar(&self.denominator)?;
        signature_matrix_exact(e, &a, self.d_n)
    }
}

pub fn signature_matrix(
    e: &SampledSignal,
    basis: &BasisSpec,
    a: &PolyMatrix,
    d_n: usize,
) -> Result<(SignatureMatrix, ErrorBoundReport)> {
    SignatureEngine::new(basis.clone(), a, d_n, GramMode::Periodic)?.signature_matrix(e)
}

/// Weights mapping four samples to the value and first three derivatives of
/// their interpolating cubic at offset `at` (sample offsets `0..4`).
fn cubic_derivative_weights(at: usize) -> DMatrix<f64> {
    let v = DMatrix::from_fn(4, 4, |r, c| (r as f64 - at as f64).powi(c as i32));
    let coef = v.try_inverse().expect("Vandermonde on distinct nodes");
    // coefficient m times m! is the m-th derivative at the origin
    let fact = [1.0, 1.0, 2.0, 6.0];
    DMatrix::from_fn(4, 4, |m, r| coef[(m, r)] * fact[m])
}

/// Zero-state response of `1/a(p)` to one channel, returning the derivative
/// states on the sample grid. The input is interpolated by local cubics and
/// each interval is integrated exactly.
fn filter_channel(af: &DMatrix<f64>, bf: &DMatrix<f64>, u: &[f64], dt: f64) -> DMatrix<f64> {
    let l = af.nrows();
    let n = u.len();
    // state [x; u; du; d2u; d3u]
    let size = l + 4;
    let mut m = DMatrix::zeros(size, size);
    m.view_mut((0, 0), (l, l)).copy_from(af);
    m.view_mut((0, l), (l, 1)).copy_from(bf);
    for i in 0..3 {
        m[(l + i, l + i + 1)] = 1.0;
    }
    let e = (m * dt).exp();
    let phi = e.view((0, 0), (l, l)).into_owned();
    let gammas = e.view((0, l), (l, 4)).into_owned();
    let weights: Vec<DMatrix<f64>> = (0..3).map(cubic_derivative_weights).collect();
    let mut xs = DMatrix::zeros(n, l);
    let mut x = DVector::zeros(l);
    for k in 0..n - 1 {
        let (start, at) = if k == 0 {
            (0, 0)
        } else if k + 2 >= n {
            (n - 4, k + 4 - n)
        } else {
            (k - 1, 1)
        };
        let w = &weights[at];
        let mut drive = DVector::zeros(l);
        for deriv in 0..4 {
            let d: f64 = (0..4).map(|r| w[(deriv, r)] * u[start + r]).sum();
            drive += gammas.column(deriv) * (d / dt.powi(deriv as i32));
        }
        x = &phi * &x + drive;
        xs.row_mut(k + 1).copy_from(&x.transpose());
    }
    xs
}

/// Signature `Q = int psi psi^T` with `psi = [a^{-1} e; a^{-1} p e; ...]`,
/// filtered from zero initial state.
pub fn signature_matrix_exact(e: &SampledSignal, a: &PolyMatrix, d_n: usize) -> Result<SignatureMatrix> {
    check_stable(a)?;
    let ac = a.trimmed().scalar_coeffs()?;
    let l = ac.len() - 1;
    if d_n > l {
        return Err(Error::Improper {
            numerator: d_n,
            denominator: l,
        });
    }
    if e.len() < 4 {
        return arg_err("signal needs at least four samples");
    }
    if e.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("signature input".into()));
    }
    let n_r = e.channels();
    let (af, bf) = inverse_denominator_realization(&ac);
    let mut psi = DMatrix::zeros(e.len(), n_r * (d_n + 1));
    for ch in 0..n_r {
        let u: Vec<f64> = e.values().column(ch).iter().copied().collect();
        if u.iter().all(|&v| v == 0.0) {
            continue;
        }
        let xs = filter_channel(&af, &bf, &u, e.dt());
        for i in 0..=d_n {
            let col = i * n_r + ch;
            if i < l {
                psi.set_column(col, &xs.column(i));
            } else {
                for r in 0..e.len() {
                    let acc: f64 = (0..l).map(|kk| ac[kk] * xs[(r, kk)]).sum();
                    psi[(r, col)] = (u[r] - acc) / ac[l];
                }
            }
        }
    }
    let q = weighted_gram(&psi, e.dt());
    Ok(SignatureMatrix::from_matrix(&q, Provenance::Exact, e.t_end() - e.t0()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn derivative_matrix_acts_on_basis() {
        let b = make_fourier_basis(6, 2.0).unwrap();
        let t = 0.37;
        let h = 1e-6;
        for i in 0..b.len() {
            let fd = (b.eval(i, t + h) - b.eval(i, t - h)) / (2.0 * h);
            let via: f64 = (0..b.len()).map(|j| b.derivative[(i, j)] * b.eval(j, t)).sum();
            assert_relative_eq!(fd, via, epsilon = 1e-6);
        }
    }

    #[test]
    fn hinf_anchor_values() {
        assert_relative_eq!(
            hinf_norm(&PolyMatrix::repeated_root(2.0, 1), None).unwrap(),
            0.5,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            hinf_norm(&PolyMatrix::repeated_root(2.0, 7), None).unwrap(),
            2f64.powi(-7),
            epsilon = 1e-15
        );
    }

    #[test]
    fn hinf_finds_resonance() {
        // 1/(p^2 + 0.2 p + 1): peak 1/(2 zeta sqrt(1 - zeta^2)) with zeta = 0.1
        let a = PolyMatrix::scalar(&[1.0, 0.2, 1.0]).unwrap();
        let zeta: f64 = 0.1;
        let peak = 1.0 / (2.0 * zeta * (1.0 - zeta * zeta).sqrt());
        assert_relative_eq!(hinf_norm(&a, None).unwrap(), peak, epsilon = 1e-9);
    }

    #[test]
    fn cubic_weights_reproduce_cubics() {
        for at in 0..3 {
            let w = cubic_derivative_weights(at);
            let f = |x: f64| 2.0 - x + 0.5 * x * x + 0.25 * x * x * x;
            let samples: Vec<f64> = (0..4).map(|r| f(r as f64 - at as f64)).collect();
            let d: Vec<f64> = (0..4).map(|m| (0..4).map(|r| w[(m, r)] * samples[r]).sum()).collect();
            assert_relative_eq!(d[0], 2.0, epsilon = 1e-12);
            assert_relative_eq!(d[1], -1.0, epsilon = 1e-12);
            assert_relative_eq!(d[2], 1.0, epsilon = 1e-12);
            assert_relative_eq!(d[3], 1.5, epsilon = 1e-12);
        }
    }
}
