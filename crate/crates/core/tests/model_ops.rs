use std::sync::Arc;

use approx::assert_relative_eq;
use fdi_core::dae::{
    detectability_check, eval_poly_matrix, isolate_fault, ode_to_dae, stack_system, FnDrift, LinearDrift,
    NonlinearDaeModel, OdeSystem,
};
use fdi_core::poly::C64;
use fdi_core::{ErrorClass, PolyMatrix};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn m(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(r, c, v)
}

/// `H = [p+1; 1]`, `F = [1; 0]`.
fn hand_model() -> (PolyMatrix, PolyMatrix) {
    let h = PolyMatrix::new(vec![m(2, 1, &[1.0, 1.0]), m(2, 1, &[1.0, 0.0])]).unwrap();
    let f = PolyMatrix::constant(m(2, 1, &[1.0, 0.0]));
    (h, f)
}

#[test]
fn eval_constant_matrix() {
    let v = eval_poly_matrix(&PolyMatrix::constant(m(1, 1, &[1.0])), C64::new(5.0, 0.0));
    assert_eq!(v[(0, 0)], C64::new(1.0, 0.0));
}

#[test]
fn eval_one_plus_p_at_j() {
    let mp = PolyMatrix::scalar(&[1.0, 1.0]).unwrap();
    let v = eval_poly_matrix(&mp, C64::new(0.0, 1.0));
    assert_eq!(v[(0, 0)], C64::new(1.0, 1.0));
}

#[test]
fn eval_at_root_vanishes() {
    let v = eval_poly_matrix(&PolyMatrix::repeated_root(2.0, 2), C64::new(-2.0, 0.0));
    assert!(v[(0, 0)].norm() < 1e-14);
}

#[test]
fn hand_stacking_layout() {
    // derived by expanding N(p)H(p) for N = N_0 + N_1 p
    let (h, f) = hand_model();
    let s = stack_system(&h, &f, 1).unwrap();
    let hbar = m(4, 3, &[1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0]);
    let fbar = m(4, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    assert_eq!(s.hbar, hbar);
    assert_eq!(s.fbar, fbar);
    assert_eq!(s.sensitivity_len(), 2);
    assert_eq!(s.numerator_len(), 4);
}

#[test]
fn degree_zero_numerator_is_single_block_row() {
    let (h, f) = hand_model();
    let s = stack_system(&h, &f, 0).unwrap();
    assert_eq!(s.hbar, m(2, 2, &[1.0, 1.0, 1.0, 0.0]));
}

#[test]
fn stacking_rejects_row_mismatch() {
    let (h, _) = hand_model();
    let f = PolyMatrix::constant(m(3, 1, &[1.0, 0.0, 0.0]));
    assert_eq!(stack_system(&h, &f, 1).unwrap_err().class(), ErrorClass::Input);
}

fn linear_ode(a: DMatrix<f64>, b_d: DMatrix<f64>, b_f: DMatrix<f64>, c: DMatrix<f64>) -> OdeSystem {
    let n = a.nrows();
    let drift = Arc::new(LinearDrift {
        a,
        x_e: DVector::zeros(n),
    });
    OdeSystem::new(drift, b_d, b_f, c).unwrap()
}

#[test]
fn embedding_dimensions() {
    let sys = linear_ode(
        m(2, 2, &[-1.0, 0.5, 0.0, -2.0]),
        m(2, 1, &[1.0, 0.0]),
        m(2, 1, &[0.0, 1.0]),
        DMatrix::identity(2, 2),
    );
    let model = ode_to_dae(&sys, &DVector::zeros(2)).unwrap();
    assert_eq!((model.n_x(), model.n_z(), model.n_r(), model.n_f()), (3, 2, 4, 1));
}

#[test]
fn embedding_of_linear_system_has_no_nonlinearity() {
    let sys = linear_ode(
        m(2, 2, &[-1.0, 0.5, 0.0, -2.0]),
        m(2, 1, &[1.0, 0.0]),
        m(2, 1, &[0.0, 1.0]),
        DMatrix::identity(2, 2),
    );
    let model = ode_to_dae(&sys, &DVector::zeros(2)).unwrap();
    for x in [[0.3, -1.0, 2.0], [10.0, 4.0, -7.0]] {
        let e = model.eval_nonlinearity(&DVector::from_row_slice(&x)).unwrap();
        assert!(e.amax() < 1e-6, "{e}");
    }
}

#[test]
fn cubic_drift_embedding() {
    // X' = -X^3 has A = 0 at the origin, so E = [-X^3; 0]
    let sys = OdeSystem::new(
        Arc::new(FnDrift::new(1, |x: &DVector<f64>| {
            DVector::from_element(1, -x[0].powi(3))
        })),
        DMatrix::zeros(1, 1),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 1.0),
    )
    .unwrap();
    let model = ode_to_dae(&sys, &DVector::zeros(1)).unwrap();
    assert!(model.h().coeff(0)[(0, 0)].abs() < 1e-9);
    for xv in [0.5, -1.2, 2.0] {
        let e = model.eval_nonlinearity(&DVector::from_row_slice(&[xv, 3.0])).unwrap();
        assert_relative_eq!(e[0], -xv.powi(3), max_relative = 1e-9);
        assert_eq!(e[1], 0.0);
    }
}

#[test]
fn embedded_residual_vanishes_along_trajectory() {
    // X' = -X + 0.2 sin(X) + d, Y = X, sampled on a fine grid
    let sys = OdeSystem::new(
        Arc::new(FnDrift::new(1, |x: &DVector<f64>| {
            DVector::from_element(1, -x[0] + 0.2 * x[0].sin())
        })),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 0.0),
        DMatrix::from_element(1, 1, 1.0),
    )
    .unwrap();
    let model = ode_to_dae(&sys, &DVector::zeros(1)).unwrap();
    let d = |t: f64| 0.5 * (2.0 * t).sin();
    let rhs = |t: f64, x: f64| -x + 0.2 * x.sin() + d(t);
    let dt = 1e-4;
    let mut xs = vec![0.0];
    for k in 0..20_000 {
        let t = k as f64 * dt;
        let x = xs[k];
        let k1 = rhs(t, x);
        let k2 = rhs(t + dt / 2.0, x + dt / 2.0 * k1);
        let k3 = rhs(t + dt / 2.0, x + dt / 2.0 * k2);
        let k4 = rhs(t + dt, x + dt * k3);
        xs.push(x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
    }
    let (h0, h1, l0) = (model.h().coeff(0), model.h().coeff(1), model.l().coeff(0));
    for k in (100..19_900).step_by(997) {
        let t = k as f64 * dt;
        let xk = DVector::from_row_slice(&[xs[k], d(t)]);
        let xdot = DVector::from_row_slice(&[(xs[k + 1] - xs[k - 1]) / (2.0 * dt), 0.0]);
        let z = DVector::from_element(1, xs[k]);
        let r = h0 * &xk + h1 * &xdot + l0 * &z + model.eval_nonlinearity(&xk).unwrap();
        assert!(r.amax() < 1e-6, "t = {t}: {r}");
    }
}

fn three_fault_model() -> NonlinearDaeModel {
    let (h, _) = hand_model();
    let l = PolyMatrix::constant(m(2, 2, &[-1.0, 0.0, 0.0, -1.0]));
    let f = PolyMatrix::constant(m(2, 3, &[1.0, 0.0, 2.0, 0.0, 1.0, -1.0]));
    NonlinearDaeModel::linear(h, l, f).unwrap()
}

#[test]
fn isolating_first_of_three_faults() {
    let model = three_fault_model();
    let iso = isolate_fault(&model, 0).unwrap();
    assert_eq!(iso.n_x(), model.n_x() + 2);
    assert_eq!(iso.n_f(), 1);
    assert_eq!(iso.f().coeff(0), &model.f().coeff(0).columns(0, 1).into_owned());
}

#[test]
fn isolating_second_of_two_faults() {
    let (h, _) = hand_model();
    let l = PolyMatrix::constant(m(2, 1, &[0.0, -1.0]));
    let f = PolyMatrix::constant(m(2, 2, &[1.0, 3.0, 0.0, 4.0]));
    let model = NonlinearDaeModel::linear(h.clone(), l, f).unwrap();
    let iso = isolate_fault(&model, 1).unwrap();
    assert_eq!(iso.f().coeff(0), &m(2, 1, &[3.0, 4.0]));
    let expected = PolyMatrix::hcat(&[&h, &PolyMatrix::constant(m(2, 1, &[1.0, 0.0]))]).unwrap();
    assert_eq!(iso.h(), &expected);
}

#[test]
fn isolation_errors() {
    let model = three_fault_model();
    assert_eq!(isolate_fault(&model, 3).unwrap_err().class(), ErrorClass::Input);
    let (h, f) = hand_model();
    let single = NonlinearDaeModel::linear(h, PolyMatrix::constant(m(2, 1, &[0.0, -1.0])), f).unwrap();
    assert_eq!(isolate_fault(&single, 0).unwrap_err().class(), ErrorClass::Input);
}

#[test]
fn isolated_fault_hidden_by_the_others_is_not_detectable() {
    // F_1 = 2 H lies in the span of [H, F_2] once F_2 joins the unknowns
    let (h, f2) = hand_model();
    let f1 = h.scale(2.0);
    let f = PolyMatrix::hcat(&[&f1, &f2]).unwrap();
    let model = NonlinearDaeModel::linear(h, PolyMatrix::constant(m(2, 1, &[0.0, -1.0])), f).unwrap();
    assert!(detectability_check(model.h(), model.f()).unwrap().detectable);
    let iso = isolate_fault(&model, 0).unwrap();
    let report = detectability_check(iso.h(), iso.f()).unwrap();
    assert!(!report.detectable);
    assert!(report.samples.iter().all(|s| s.rank_hf == s.rank_h));
    assert_eq!(report.into_result().unwrap_err().class(), ErrorClass::Infeasible);
}

#[test]
fn hand_model_is_detectable() {
    let (h, f) = hand_model();
    let report = detectability_check(&h, &f).unwrap();
    assert!(report.detectable);
    assert!(report.samples.iter().all(|s| s.rank_h == 1 && s.rank_hf == 2));
}

#[test]
fn duplicated_column_is_not_detectable() {
    let (h, _) = hand_model();
    assert!(!detectability_check(&h, &h).unwrap().detectable);
}

#[test]
fn zero_fault_is_not_detectable() {
    let (h, _) = hand_model();
    assert!(!detectability_check(&h, &PolyMatrix::zeros(2, 1)).unwrap().detectable);
}

fn poly_strategy(rows: usize, cols: usize, max_deg: usize) -> impl Strategy<Value = PolyMatrix> {
    (0..=max_deg).prop_flat_map(move |d| {
        prop::collection::vec(prop::collection::vec(-2.0..2.0f64, rows * cols), d + 1).prop_map(move |blocks| {
            PolyMatrix::new(blocks.iter().map(|b| DMatrix::from_row_slice(rows, cols, b)).collect()).unwrap()
        })
    })
}

/// `N(s)` from stacked coefficients `[N_0 ... N_dN]`.
fn numerator_at(nbar: &[f64], n_r: usize, s: C64) -> DMatrix<C64> {
    let mut out = DMatrix::zeros(1, n_r);
    let mut pow = C64::new(1.0, 0.0);
    for block in nbar.chunks(n_r) {
        for (c, &v) in block.iter().enumerate() {
            out[(0, c)] += pow * v;
        }
        pow *= s;
    }
    out
}

/// `sum_j row_j s^j` where the row is split into blocks of `width`.
fn block_series(row: &DMatrix<f64>, width: usize, s: C64) -> DMatrix<C64> {
    let mut out = DMatrix::zeros(1, width);
    let mut pow = C64::new(1.0, 0.0);
    for j in 0..row.ncols() / width {
        for c in 0..width {
            out[(0, c)] += pow * row[(0, j * width + c)];
        }
        pow *= s;
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stacking_matches_polynomial_product(
        h in poly_strategy(3, 2, 3),
        f in poly_strategy(3, 2, 2),
        d_n in 0usize..4,
        seed in prop::collection::vec(-1.0..1.0f64, 12),
        re in -1.5..1.5f64,
        im in -1.5..1.5f64,
    ) {
        let s = C64::new(re, im);
        let st = stack_system(&h, &f, d_n).unwrap();
        let nbar: Vec<f64> = seed.iter().cycle().take(3 * (d_n + 1)).copied().collect();
        let n_row = DMatrix::from_row_slice(1, nbar.len(), &nbar);
        let n_s = numerator_at(&nbar, 3, s);
        for (poly, bar) in [(&h, &st.hbar), (&f, &st.fbar)] {
            let expected = &n_s * poly.eval(s);
            let got = block_series(&(&n_row * bar), poly.cols(), s);
            let scale = 1.0 + expected.iter().map(|v| v.norm()).fold(0.0, f64::max);
            for (a, b) in expected.iter().zip(got.iter()) {
                prop_assert!((a - b).norm() <= 1e-10 * scale);
            }
        }
    }

    #[test]
    fn isolation_preserves_column_count(n_f in 2usize..5, target_seed in 0usize..100) {
        let (h, _) = hand_model();
        let f = PolyMatrix::constant(DMatrix::from_fn(2, n_f, |i, j| (i + 2 * j) as f64));
        let model = NonlinearDaeModel::linear(h, PolyMatrix::constant(m(2, 1, &[0.0, -1.0])), f).unwrap();
        let iso = isolate_fault(&model, target_seed % n_f).unwrap();
        prop_assert_eq!(iso.n_x() + iso.n_f(), model.n_x() + model.n_f());
    }

    #[test]
    fn detectability_invariant_under_row_scaling(k0 in 0.2..5.0f64, k1 in 0.2..5.0f64) {
        let (h, f) = hand_model();
        let d = PolyMatrix::constant(DMatrix::from_diagonal(&DVector::from_row_slice(&[k0, -k1])));
        let hs = d.mul(&h).unwrap();
        prop_assert!(detectability_check(&hs, &d.mul(&f).unwrap()).unwrap().detectable);
        prop_assert!(!detectability_check(&hs, &d.mul(&h).unwrap()).unwrap().detectable);
    }
}
