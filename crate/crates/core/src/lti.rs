//! Continuous-time LTI pieces shared by the signature engine and the filter runtime.

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, Result};

/// Exact discretization of `x' = A x + B u` with `u` linear between samples:
/// `x[k+1] = phi x[k] + g0 u[k] + g1 u[k+1]`.
#[derive(Debug, Clone)]
pub struct FohStep {
    pub phi: DMatrix<f64>,
    pub g0: DMatrix<f64>,
    pub g1: DMatrix<f64>,
}

pub fn foh_discretize(a: &DMatrix<f64>, b: &DMatrix<f64>, dt: f64) -> Result<FohStep> {
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n {
        return dim_err(format!(
            "A is {}x{}, B is {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        ));
    }
    let size = n + 2 * m;
    let mut big = DMatrix::zeros(size, size);
    big.view_mut((0, 0), (n, n)).copy_from(a);
    big.view_mut((0, n), (n, m)).copy_from(b);
    for i in 0..m {
        big[(n + i, n + m + i)] = 1.0;
    }
    let e = (big * dt).exp();
    let phi = e.view((0, 0), (n, n)).into_owned();
    let gamma1 = e.view((0, n), (n, m)).into_owned();
    let gamma2 = e.view((0, n + m), (n, m)).into_owned() / dt;
    Ok(FohStep {
        phi,
        g0: &gamma1 - &gamma2,
        g1: gamma2,
    })
}

impl FohStep {
    /// Propagates from `x0` across sample-major inputs, returning sample-major states.
    pub fn propagate(&self, x0: &DVector<f64>, u: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.phi.nrows();
        let len = u.nrows();
        let mut xs = DMatrix::zeros(len, n);
        if len == 0 {
            return xs;
        }
        let mut x = x0.clone();
        xs.row_mut(0).copy_from(&x.transpose());
        let mut u_prev = u.row(0).transpose();
        for k in 1..len {
            let u_next = u.row(k).transpose();
            x = &self.phi * &x + &self.g0 * &u_prev + &self.g1 * &u_next;
            xs.row_mut(k).copy_from(&x.transpose());
            u_prev = u_next;
        }
        xs
    }
}

/// Controllable companion realization of `1/a(p)` whose states are
/// `y, y', ..., y^(l-1)` for `y = a(p)^{-1} u`.
pub fn inverse_denominator_realization(a: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let l = a.len() - 1;
    let lead = a[l];
    let mut am = DMatrix::zeros(l, l);
    for i in 0..l.saturating_sub(1) {
        am[(i, i + 1)] = 1.0;
    }
    for k in 0..l {
        am[(l - 1, k)] = -a[k] / lead;
    }
    let mut bm = DMatrix::zeros(l, 1);
    if l > 0 {
        bm[(l - 1, 0)] = 1.0 / lead;
    }
    (am, bm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn foh_is_exact_for_ramp_input() {
        // x' = -x + u, u = t, x(0) = 0  =>  x = t - 1 + e^{-t}
        let a = DMatrix::from_element(1, 1, -1.0);
        let b = DMatrix::from_element(1, 1, 1.0);
        let dt = 0.5;
        let step = foh_discretize(&a, &b, dt).unwrap();
        let u = DMatrix::from_fn(9, 1, |k, _| k as f64 * dt);
        let xs = step.propagate(&DVector::zeros(1), &u);
        for k in 0..9 {
            let t = k as f64 * dt;
            assert_relative_eq!(xs[(k, 0)], t - 1.0 + (-t).exp(), epsilon = 1e-13);
        }
    }

    #[test]
    fn companion_states_are_derivatives() {
        // 1/(p+1)^2 driven by a unit step: y = 1 - (1+t)e^{-t}, y' = t e^{-t}
        let (a, b) = inverse_denominator_realization(&[1.0, 2.0, 1.0]);
        let step = foh_discretize(&a, &b, 0.01).unwrap();
        let u = DMatrix::from_element(301, 1, 1.0);
        let xs = step.propagate(&DVector::zeros(2), &u);
        let t: f64 = 3.0;
        assert_relative_eq!(xs[(300, 0)], 1.0 - (1.0 + t) * (-t).exp(), epsilon = 1e-12);
        assert_relative_eq!(xs[(300, 1)], t * (-t).exp(), epsilon = 1e-12);
    }
}
