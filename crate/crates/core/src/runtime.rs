//! Running a synthesized filter on measured data.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{arg_err, dim_err, Error, Result};
use crate::lti::{foh_discretize, FohStep};
use crate::poly::{check_stable, PolyMatrix, C64};
use crate::signal::{simpson, SampledSignal};
use crate::synth::FilterCoefficients;

/// Observable-canonical realization of `a(p)^{-1} N(p) L(p)`, one output.
#[derive(Debug, Clone)]
pub struct StateSpaceFilter {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    state: DVector<f64>,
    step: Option<(u64, FohStep)>,
}

pub fn realize_filter(filter: &FilterCoefficients, l: &PolyMatrix) -> Result<StateSpaceFilter> {
    let a = filter.denominator_poly();
    check_stable(&a)?;
    let den = a.trimmed().scalar_coeffs()?;
    let order = den.len() - 1;
    let num = filter.numerator();
    if num.cols() != l.rows() {
        return dim_err(format!("filter has {} inputs, L has {} rows", num.cols(), l.rows()));
    }
    let b = num.mul(l)?.trimmed();
    let n_z = b.cols();
    if b.degree() > order && b.coeffs()[order + 1..].iter().any(|m| m.iter().any(|&v| v != 0.0)) {
        return Err(Error::Improper {
            numerator: b.degree(),
            denominator: order,
        });
    }
    let lead = den[order];
    let monic: Vec<f64> = den.iter().map(|v| v / lead).collect();
    let coeff = |k: usize| -> DMatrix<f64> {
        if k <= b.degree() {
            b.coeff(k) / lead
        } else {
            DMatrix::zeros(1, n_z)
        }
    };
    let d = coeff(order);
    let mut am = DMatrix::zeros(order, order);
    let mut bm = DMatrix::zeros(order, n_z);
    for i in 0..order {
        am[(i, 0)] = -monic[order - 1 - i];
        if i + 1 < order {
            am[(i, i + 1)] = 1.0;
        }
        let k = order - 1 - i;
        let row = coeff(k) - &d * monic[k];
        bm.row_mut(i).copy_from(&row);
    }
    let mut cm = DMatrix::zeros(1, order);
    cm[(0, 0)] = 1.0;
    Ok(StateSpaceFilter {
        a: am,
        b: bm,
        c: cm,
        d,
        state: DVector::zeros(order),
        step: None,
    })
}

impl StateSpaceFilter {
    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.state
    }

    pub fn reset(&mut self) {
        self.state.fill(0.0);
    }

    /// Frequency response row `C (sI - A)^{-1} B + D`.
    pub fn transfer(&self, s: C64) -> Result<DMatrix<C64>> {
        let n = self.order();
        let mut m: DMatrix<C64> = self.a.map(|v| C64::new(-v, 0.0));
        for i in 0..n {
            m[(i, i)] += s;
        }
        let bc = self.b.map(|v| C64::new(v, 0.0));
        let x = m.lu().solve(&bc).ok_or_else(|| Error::Singular("sI - A".into()))?;
        Ok(self.c.map(|v| C64::new(v, 0.0)) * x + self.d.map(|v| C64::new(v, 0.0)))
    }

    /// Continues from the current state over `z`, whose first sample lines up with it.
    pub fn run(&mut self, z: &SampledSignal) -> Result<ResidualTrace> {
        if z.channels() != self.inputs() {
            return dim_err(format!(
                "measurement has {} channels, filter expects {}",
                z.channels(),
                self.inputs()
            ));
        }
        if z.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("measurement".into()));
        }
        let key = z.dt().to_bits();
        if self.step.as_ref().map(|(k, _)| *k) != Some(key) {
            self.step = Some((key, foh_discretize(&self.a, &self.b, z.dt())?));
        }
        let step = &self.step.as_ref().expect("set above").1;
        let xs = step.propagate(&self.state, z.values());
        let mut r = DMatrix::zeros(z.len(), 1);
        for k in 0..z.len() {
            let v = (&self.c * xs.row(k).transpose())[(0, 0)] + (&self.d * z.sample(k))[(0, 0)];
            r[(k, 0)] = v;
        }
        if let Some(last) = xs.nrows().checked_sub(1) {
            self.state = xs.row(last).transpose();
        }
        Ok(ResidualTrace {
            signal: SampledSignal::new(z.t0(), z.dt(), r)?,
        })
    }
}

/// Filters `z` from zero state without touching `filter`.
pub fn run_filter(filter: &StateSpaceFilter, z: &SampledSignal) -> Result<ResidualTrace> {
    let mut f = filter.clone();
    f.reset();
    f.run(z)
}

#[derive(Debug, Clone)]
pub struct ResidualTrace {
    pub signal: SampledSignal,
}

impl ResidualTrace {
    pub fn values(&self) -> Vec<f64> {
        self.signal.values().column(0).iter().copied().collect()
    }

    fn index_range(&self, t0: f64, t1: f64) -> (usize, usize) {
        let s = &self.signal;
        let eps = 1e-9 * s.dt();
        let lo = ((t0 - s.t0() - eps) / s.dt()).ceil().max(0.0) as usize;
        let hi = ((t1 - s.t0() + eps) / s.dt()).floor().max(0.0) as usize;
        (lo, hi.min(s.len().saturating_sub(1)))
    }

    /// Trace as CSV with the windowed norm and alarm state.
    pub fn to_csv(&self, alarm: Option<&AlarmReport>) -> String {
        let mut out = String::from("t,r");
        if alarm.is_some() {
            out.push_str(",windowed_l2,alarm");
        }
        out.push('\n');
        let v = self.values();
        for (k, r) in v.iter().enumerate() {
            write!(out, "{},{}", self.signal.time(k), r).unwrap();
            if let Some(a) = alarm {
                write!(out, ",{},{}", a.windowed_l2[k], u8::from(a.active[k])).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// `sqrt(int_{t0}^{t1} r^2 dt)` by composite Simpson on the samples in the window.
pub fn residual_l2(trace: &ResidualTrace, t0: f64, t1: f64) -> Result<f64> {
    if !(t1 > t0) {
        return arg_err(format!("empty window [{t0}, {t1}]"));
    }
    let s = &trace.signal;
    if t0 < s.t0() - 1e-9 * s.dt() || t1 > s.t_end() + 1e-9 * s.dt() {
        return arg_err(format!(
            "window [{t0}, {t1}] outside record [{}, {}]",
            s.t0(),
            s.t_end()
        ));
    }
    let (lo, hi) = trace.index_range(t0, t1);
    if hi <= lo {
        return arg_err("window holds fewer than two samples");
    }
    let sq: Vec<f64> = (lo..=hi).map(|k| s.values()[(k, 0)].powi(2)).collect();
    Ok(simpson(&sq, s.dt()).max(0.0).sqrt())
}

/// `max_{t <= t_ack} |r| / max_t |r|`.
pub fn rho_indicator(trace: &ResidualTrace, t_ack: f64) -> Result<f64> {
    let s = &trace.signal;
    if !(t_ack > s.t0() && t_ack < s.t_end()) {
        return arg_err(format!(
            "attack time {t_ack} must lie inside ({}, {})",
            s.t0(),
            s.t_end()
        ));
    }
    let v = trace.values();
    let total = v.iter().fold(0.0_f64, |a, r| a.max(r.abs()));
    if total == 0.0 {
        return Err(Error::ZeroResidual);
    }
    let (_, hi) = trace.index_range(s.t0(), t_ack);
    let before = v[..=hi].iter().fold(0.0_f64, |a, r| a.max(r.abs()));
    Ok(before / total)
}

#[derive(Debug, Clone, Serialize)]
pub struct AlarmReport {
    pub threshold: f64,
    pub window: f64,
    /// Trailing-window L2 norm per sample (partial windows before the first full one).
    pub windowed_l2: Vec<f64>,
    pub active: Vec<bool>,
    /// Times at which the alarm switches on.
    pub crossings: Vec<f64>,
}

impl AlarmReport {
    pub fn first_alarm(&self) -> Option<f64> {
        self.crossings.first().copied()
    }

    pub fn max_windowed(&self) -> f64 {
        self.windowed_l2.iter().copied().fold(0.0, f64::max)
    }
}

/// Raises an alarm whenever the L2 norm over the trailing window exceeds `sqrt(gamma)`.
pub fn threshold_alarm(trace: &ResidualTrace, gamma: f64, window: f64) -> Result<AlarmReport> {
    if gamma.is_nan() || gamma < 0.0 {
        return arg_err(format!("threshold must be non-negative, got {gamma}"));
    }
    let s = &trace.signal;
    if !(window > 0.0) {
        return arg_err("alarm window must be positive");
    }
    let w = (window / s.dt()).round() as usize;
    if w == 0 || w >= s.len() {
        return arg_err(format!("window of {w} samples does not fit a record of {}", s.len()));
    }
    let v = trace.values();
    let mut prefix = vec![0.0; v.len()];
    for k in 1..v.len() {
        prefix[k] = prefix[k - 1] + 0.5 * s.dt() * (v[k - 1] * v[k - 1] + v[k] * v[k]);
    }
    let limit = gamma.sqrt();
    let mut windowed = Vec::with_capacity(v.len());
    let mut active = Vec::with_capacity(v.len());
    let mut crossings = Vec::new();
    let mut prev = false;
    for k in 0..v.len() {
        let energy = if k >= w { prefix[k] - prefix[k - w] } else { prefix[k] };
        let l2 = energy.max(0.0).sqrt();
        windowed.push(l2);
        let on = k >= w && l2 > limit;
        if on && !prev {
            crossings.push(s.time(k));
        }
        active.push(on);
        prev = on;
    }
    Ok(AlarmReport {
        threshold: gamma,
        window,
        windowed_l2: windowed,
        active,
        crossings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn trace(vals: &[f64], dt: f64) -> ResidualTrace {
        ResidualTrace {
            signal: SampledSignal::new(0.0, dt, DMatrix::from_column_slice(vals.len(), 1, vals)).unwrap(),
        }
    }

    #[test]
    fn realization_matches_polynomial_ratio() {
        let f = FilterCoefficients::new(2, 1, vec![1.0, -0.5, 0.25, 2.0], vec![6.0, 5.0, 1.0]).unwrap();
        let l = PolyMatrix::new(vec![
            DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        ])
        .unwrap();
        let ss = realize_filter(&f, &l).unwrap();
        for s in [C64::new(0.0, 0.7), C64::new(-0.3, 2.1), C64::new(1.5, -0.2)] {
            let direct = f.numerator().mul(&l).unwrap().eval(s)[(0, 0)] / f.denominator_poly().eval(s)[(0, 0)];
            let via = ss.transfer(s).unwrap()[(0, 0)];
            assert!((direct - via).norm() < 1e-12 * direct.norm().max(1.0));
        }
    }

    #[test]
    fn improper_numerator_rejected() {
        let f = FilterCoefficients::new(1, 2, vec![0.0, 0.0, 1.0], vec![1.0, 1.0]).unwrap();
        let l = PolyMatrix::constant(DMatrix::from_element(1, 1, 1.0));
        assert!(matches!(realize_filter(&f, &l), Err(Error::Improper { .. })));
    }

    #[test]
    fn rho_of_pre_attack_zero_trace() {
        let mut v = vec![0.0; 101];
        for x in v.iter_mut().skip(60) {
            *x = 2.0;
        }
        let tr = trace(&v, 0.1);
        assert_eq!(rho_indicator(&tr, 5.0).unwrap(), 0.0);
        assert!(matches!(
            rho_indicator(&trace(&[0.0; 10], 0.1), 0.5),
            Err(Error::ZeroResidual)
        ));
    }

    #[test]
    fn rho_is_scale_invariant() {
        let v: Vec<f64> = (0..200)
            .map(|k| (k as f64 * 0.1).sin() * (1.0 + k as f64 * 0.01))
            .collect();
        let scaled: Vec<f64> = v.iter().map(|x| -3.5 * x).collect();
        let a = rho_indicator(&trace(&v, 0.05), 4.0).unwrap();
        let b = rho_indicator(&trace(&scaled, 0.05), 4.0).unwrap();
        assert_relative_eq!(a, b, epsilon = 1e-15);
    }

    #[test]
    fn constant_residual_alarms_at_first_full_window() {
        let tr = trace(&[1.5; 201], 0.01);
        let rep = threshold_alarm(&tr, 1.0, 0.5).unwrap();
        // 1.5^2 * 0.5 = 1.125 > 1
        assert_eq!(rep.crossings.len(), 1);
        assert_relative_eq!(rep.first_alarm().unwrap(), 0.5, epsilon = 1e-12);
        assert!(threshold_alarm(&tr, f64::INFINITY, 0.5).unwrap().crossings.is_empty());
    }

    #[test]
    fn l2_of_linear_ramp() {
        let v: Vec<f64> = (0..=100).map(|k| k as f64 * 0.01).collect();
        let tr = trace(&v, 0.01);
        assert_relative_eq!(
            residual_l2(&tr, 0.0, 1.0).unwrap(),
            (1.0f64 / 3.0).sqrt(),
            epsilon = 1e-12
        );
        assert!(residual_l2(&tr, 0.5, 0.5).is_err());
    }
}
