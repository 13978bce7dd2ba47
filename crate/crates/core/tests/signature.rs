use std::f64::consts::PI;

use approx::assert_relative_eq;
use fdi_core::runtime::{realize_filter, residual_l2, run_filter};
use fdi_core::signature::{
    dbar_matrix, gram_matrix, hinf_norm, make_fourier_basis, project, signature_matrix_exact, GramMode, SignatureEngine,
};
use fdi_core::synth::FilterCoefficients;
use fdi_core::{ErrorClass, PolyMatrix, SampledSignal};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn two_function_derivative_pattern() {
    let b = make_fourier_basis(2, 3.0).unwrap();
    let w = 2.0 * PI / 3.0;
    let expected = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, 0.0, w, 0.0, -w, 0.0]);
    assert_eq!(b.derivative, expected);
}

#[test]
fn constant_basis() {
    let b = make_fourier_basis(0, 2.0).unwrap();
    assert_eq!(b.len(), 1);
    assert_eq!(b.derivative, DMatrix::zeros(1, 1));
    assert_relative_eq!(b.eval(0, 0.7), 1.0 / 2f64.sqrt());
}

#[test]
fn odd_basis_size_rejected() {
    assert_eq!(make_fourier_basis(3, 1.0).unwrap_err().class(), ErrorClass::Input);
}

#[test]
fn scaling_commutes_with_derivative() {
    let t = 2.5;
    let b = make_fourier_basis(8, t).unwrap();
    let s = DMatrix::from_fn(9, 9, |i, j| match (i, j) {
        (0, 0) => 1.0 / t.sqrt(),
        (i, j) if i == j => (2.0 / t).sqrt(),
        _ => 0.0,
    });
    let conj = &s * &b.derivative * s.try_inverse().unwrap();
    assert!((conj - &b.derivative).amax() < 1e-12);
}

#[test]
fn derivative_matrix_differentiates_the_basis() {
    let b = make_fourier_basis(10, 4.0).unwrap();
    let h = 1e-5;
    for &t in &[0.3, 1.7, 3.2] {
        let vals = DVector::from_fn(b.len(), |i, _| b.eval(i, t));
        let fd = DVector::from_fn(b.len(), |i, _| (b.eval(i, t + h) - b.eval(i, t - h)) / (2.0 * h));
        let got = &b.derivative * vals;
        assert!((got - fd).amax() < 1e-6);
    }
}

fn grid(t: f64, n: usize, channels: usize, f: impl FnMut(f64, &mut [f64])) -> SampledSignal {
    SampledSignal::from_fn(0.0, t / (n - 1) as f64, n, channels, f).unwrap()
}

#[test]
fn projecting_a_basis_element() {
    let b = make_fourier_basis(6, 2.0).unwrap();
    let e = grid(2.0, 2001, 1, |t, o| o[0] = b.eval(3, t));
    let p = project(&e, &b).unwrap();
    for (i, v) in p.beta[0].iter().enumerate() {
        let want = if i == 3 { 1.0 } else { 0.0 };
        assert!((v - want).abs() < 1e-10, "coefficient {i} = {v}");
    }
    assert!(p.delta < 1e-8);
}

#[test]
fn projecting_zero() {
    let b = make_fourier_basis(4, 1.0).unwrap();
    let p = project(&grid(1.0, 101, 2, |_, o| o.fill(0.0)), &b).unwrap();
    assert!(p.beta.iter().flatten().all(|&v| v == 0.0));
    assert_eq!(p.delta, 0.0);
}

#[test]
fn ramp_truncation_residual() {
    // |t|^2 = T^3/3, the kept energy is T^3/4 + sum_q T^3 / (2 pi^2 q^2)
    let t = 1.0;
    let b = make_fourier_basis(80, t).unwrap();
    let p = project(&grid(t, 40_001, 1, |s, o| o[0] = s), &b).unwrap();
    let kept: f64 = (1..=40).map(|q| 1.0 / (2.0 * PI * PI * (q * q) as f64)).sum();
    let oracle = (t.powi(3) * (1.0 / 12.0 - kept)).sqrt();
    assert_relative_eq!(p.delta, oracle, max_relative = 1e-3);
}

#[test]
fn projection_against_grid_mismatch() {
    let b = make_fourier_basis(4, 2.0).unwrap();
    assert!(project(&grid(1.0, 101, 1, |_, o| o[0] = 1.0), &b).is_err());
}

#[test]
fn truncation_residual_is_monotone_in_k() {
    let e = grid(3.0, 6001, 2, |t, o| {
        o[0] = (t * t).exp().min(50.0) - t;
        o[1] = (1.3 * t).sin() * t;
    });
    let mut prev = f64::INFINITY;
    for k in (0..=30).step_by(2) {
        let d = project(&e, &make_fourier_basis(k, 3.0).unwrap()).unwrap().delta;
        assert!(d <= prev * (1.0 + 1e-12), "k = {k}: {d} > {prev}");
        prev = d;
    }
}

#[test]
fn identity_gram() {
    let b = make_fourier_basis(6, 1.0).unwrap();
    let g = gram_matrix(&b, &PolyMatrix::repeated_root(3.0, 2), GramMode::Identity).unwrap();
    assert_eq!(g, DMatrix::identity(7, 7));
}

#[test]
fn unit_denominator_gram_is_identity() {
    let b = make_fourier_basis(6, 1.0).unwrap();
    let g = gram_matrix(&b, &PolyMatrix::scalar(&[1.0]).unwrap(), GramMode::Periodic).unwrap();
    assert!((g - DMatrix::identity(7, 7)).amax() < 1e-15);
}

#[test]
fn zero_state_gram_of_first_order_lag() {
    // (1/T) int_0^T (1 - e^{-t})^2 dt
    let t: f64 = 5.0;
    let b = make_fourier_basis(0, t).unwrap();
    let g = gram_matrix(&b, &PolyMatrix::scalar(&[1.0, 1.0]).unwrap(), GramMode::ZeroState).unwrap();
    let oracle = (t - 2.0 * (1.0 - (-t).exp()) + 0.5 * (1.0 - (-2.0 * t).exp())) / t;
    assert_relative_eq!(g[(0, 0)], oracle, max_relative = 1e-8);
}

#[test]
fn zero_state_gram_is_symmetric_psd() {
    let b = make_fourier_basis(8, 2.0).unwrap();
    let g = gram_matrix(&b, &PolyMatrix::repeated_root(2.0, 3), GramMode::ZeroState).unwrap();
    assert!((&g - g.transpose()).amax() < 1e-14);
    let eig = g.symmetric_eigen().eigenvalues;
    assert!(eig.min() >= -1e-10 * eig.max());
}

#[test]
fn unstable_denominator_rejected() {
    let b = make_fourier_basis(2, 1.0).unwrap();
    let err = gram_matrix(&b, &PolyMatrix::scalar(&[-1.0, 1.0]).unwrap(), GramMode::Periodic).unwrap_err();
    assert_eq!(err.class(), ErrorClass::Input);
}

#[test]
fn dbar_degenerate_cases() {
    let beta = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 0.0]);
    let d = make_fourier_basis(2, 1.0).unwrap().derivative;
    assert_eq!(dbar_matrix(&beta, &d, 0), beta);
    let beta0 = DMatrix::from_row_slice(2, 1, &[1.5, -2.0]);
    let stacked = dbar_matrix(&beta0, &DMatrix::zeros(1, 1), 3);
    assert_eq!(stacked.rows(0, 2).into_owned(), beta0);
    assert!(stacked.rows(2, 6).iter().all(|&v| v == 0.0));
}

#[test]
fn dbar_applies_numerator_derivatives() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let basis = make_fourier_basis(6, 2.0).unwrap();
    let beta = DMatrix::from_fn(2, 7, |_, _| rng.gen_range(-1.0..1.0));
    let nbar = DVector::from_fn(6, |_, _| rng.gen_range(-1.0..1.0));
    let dbar = dbar_matrix(&beta, &basis.derivative, 2);
    let u = |t: f64| &beta * DVector::from_fn(7, |i, _| basis.eval(i, t));
    let h = 1e-3;
    for &t in &[0.4, 1.1, 1.6] {
        let b = DVector::from_fn(7, |i, _| basis.eval(i, t));
        let lhs = (nbar.transpose() * &dbar * b)[(0, 0)];
        let d1 = (u(t + h) - u(t - h)) / (2.0 * h);
        let d2 = (u(t + h) - u(t) * 2.0 + u(t - h)) / (h * h);
        let rhs = nbar.rows(0, 2).dot(&u(t)) + nbar.rows(2, 2).dot(&d1) + nbar.rows(4, 2).dot(&d2);
        assert!((lhs - rhs).abs() < 1e-4 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
    }
}

#[test]
fn zero_signal_signature() {
    let basis = make_fourier_basis(10, 2.0).unwrap();
    let engine = SignatureEngine::new(basis, &PolyMatrix::repeated_root(2.0, 3), 2, GramMode::Periodic).unwrap();
    let e = grid(2.0, 401, 2, |_, o| o.fill(0.0));
    let (q, report) = engine.signature_matrix(&e).unwrap();
    assert!(q.matrix().iter().all(|&v| v == 0.0));
    assert_eq!(report.bound, 0.0);
    let qe = signature_matrix_exact(&e, &PolyMatrix::repeated_root(2.0, 3), 2).unwrap();
    assert!(qe.matrix().iter().all(|&v| v == 0.0));
}

#[test]
fn pure_element_signature_with_identity_gram() {
    let basis = make_fourier_basis(6, 2.0).unwrap();
    let b3 = basis.clone();
    let engine = SignatureEngine::new(basis, &PolyMatrix::repeated_root(2.0, 1), 0, GramMode::Identity).unwrap();
    let e = grid(2.0, 2001, 2, |t, o| {
        o[0] = b3.eval(3, t);
        o[1] = 0.0;
    });
    let q = engine.signature_matrix(&e).unwrap().0.matrix();
    let expected = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
    assert!((q - expected).amax() < 1e-9);
}

/// `||a^{-1} N e||^2` through the runtime realization, a path independent of the signature code.
fn filtered_energy(nbar: &[f64], n_r: usize, d_n: usize, a: &[f64], e: &SampledSignal) -> f64 {
    let filter = FilterCoefficients::new(n_r, d_n, nbar.to_vec(), a.to_vec()).unwrap();
    let l = PolyMatrix::constant(DMatrix::identity(n_r, n_r));
    let trace = run_filter(&realize_filter(&filter, &l).unwrap(), e).unwrap();
    residual_l2(&trace, e.t0(), e.t_end()).unwrap().powi(2)
}

#[test]
fn exact_scalar_signature_matches_direct_filtering() {
    let a = PolyMatrix::repeated_root(2.0, 3);
    let e = grid(4.0, 8001, 1, |t, o| o[0] = (1.7 * t).sin() + 0.3 * t * t);
    let q = signature_matrix_exact(&e, &a, 0).unwrap().matrix();
    let direct = filtered_energy(&[1.0], 1, 0, &a.scalar_coeffs().unwrap(), &e);
    assert_relative_eq!(q[(0, 0)], direct, max_relative = 1e-6);
}

#[test]
fn residual_identity_on_random_numerators() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = PolyMatrix::repeated_root(2.0, 3);
    let ac = a.scalar_coeffs().unwrap();
    for _ in 0..5 {
        let w: [f64; 3] = [
            rng.gen_range(0.5..3.0),
            rng.gen_range(0.5..3.0),
            rng.gen_range(0.0..1.0),
        ];
        let e = grid(5.0, 10_001, 2, |t, o| {
            o[0] = (w[0] * t).sin() + w[2] * t;
            o[1] = (w[1] * t).cos() * (-0.2 * t).exp();
        });
        let q = signature_matrix_exact(&e, &a, 2).unwrap().matrix();
        let nbar: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let quad = (DVector::from_row_slice(&nbar).transpose() * &q * DVector::from_row_slice(&nbar))[(0, 0)];
        let direct = filtered_energy(&nbar, 2, 2, &ac, &e);
        assert_relative_eq!(quad, direct, max_relative = 1e-6);
    }
}

#[test]
fn exact_signature_is_symmetric_psd() {
    let e = grid(3.0, 3001, 3, |t, o| {
        o[0] = t.sin();
        o[1] = (2.0 * t).cos() + 1.0;
        o[2] = t * (3.0 - t);
    });
    let q = signature_matrix_exact(&e, &PolyMatrix::repeated_root(1.0, 4), 3)
        .unwrap()
        .matrix();
    assert!((&q - q.transpose()).amax() <= 1e-14 * q.amax());
    let eig = q.symmetric_eigen().eigenvalues;
    assert!(eig.min() >= -1e-10 * eig.max());
}

#[test]
fn basis_signature_converges_for_windowed_signals() {
    // signals vanishing with their derivatives at both ends, zero-state Gram matrix
    let t = 4.0;
    let a = PolyMatrix::repeated_root(2.0, 3);
    let e = grid(t, 8001, 2, |s, o| {
        let w = (PI * s / t).sin().powi(6);
        o[0] = w * (2.0 * s).sin();
        o[1] = w * (1.0 + 0.5 * s);
    });
    let exact = signature_matrix_exact(&e, &a, 2).unwrap().matrix();
    let mut gaps = Vec::new();
    for k in [8, 16, 32] {
        let engine = SignatureEngine::new(make_fourier_basis(k, t).unwrap(), &a, 2, GramMode::ZeroState).unwrap();
        let (q, _) = engine.signature_matrix(&e).unwrap();
        gaps.push((q.matrix() - &exact).norm() / exact.norm());
    }
    assert!(gaps[2] < gaps[0], "{gaps:?}");
    assert!(gaps[2] < 1e-6, "{gaps:?}");
}

#[test]
fn hinf_anchors() {
    assert_relative_eq!(
        hinf_norm(&PolyMatrix::scalar(&[2.0, 1.0]).unwrap(), None).unwrap(),
        0.5,
        max_relative = 1e-9
    );
    let a7 = PolyMatrix::repeated_root(2.0, 7);
    assert_relative_eq!(hinf_norm(&a7, None).unwrap(), 2f64.powi(-7), max_relative = 1e-6);
    assert_relative_eq!(hinf_norm(&a7, Some(&a7)).unwrap(), 1.0, max_relative = 1e-9);
}
