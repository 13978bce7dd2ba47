//! Two-area power system with automatic generation control (AGC), used as a
//! nonlinear testbed.
//!
//! State layout for `g` generators: rotor angles `delta` (rad), frequencies
//! `f` (Hz), mechanical powers `P_m` (MW), then the two AGC signals (MW).
//! Measurements are `[f; P_m]`; the disturbance is the per-generator load
//! deviation; the single fault is a false-data injection on the AGC signal
//! of area one.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dae::{linearize, ode_to_dae, Drift, NonlinearDaeModel, OdeSystem, EQUILIBRIUM_TOL};
use crate::error::{arg_err, dim_err, Error, Result};
use crate::poly::C64;
use crate::signal::SampledSignal;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub name: String,
    /// Terminal bus (0-based).
    pub bus: usize,
    /// 1 or 2.
    pub area: usize,
    /// Inertia constant H (s).
    pub inertia: f64,
    /// Rating S_B (MVA).
    pub rating: f64,
    /// Load damping D (Hz/MW).
    pub damping: f64,
    /// Droop S (Hz/MW).
    pub droop: f64,
    /// Governor-turbine time constant (s).
    pub t_ch: f64,
    /// Participation in primary control.
    pub primary_share: f64,
    /// Participation in AGC.
    pub agc_share: f64,
    /// Transient reactance, per unit on the system base.
    pub xd_prime: f64,
    /// Internal voltage magnitude (p.u.).
    pub emf: f64,
    /// Scheduled output (MW); ignored for the reference machine.
    pub p_set: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaParams {
    /// Integral time T_N (s).
    pub t_n: f64,
    /// Proportional gain C_p.
    pub c_p: f64,
    /// Anti-windup gain K.
    pub anti_windup: f64,
    /// Symmetric AGC saturation (MW); `None` is unlimited.
    pub agc_limit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineParams {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    /// Total line charging susceptance (p.u.).
    #[serde(default)]
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadParams {
    pub bus: usize,
    /// MW
    pub p: f64,
    /// MVAr
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSystemConfig {
    /// Nominal frequency (Hz).
    pub f0: f64,
    /// System base (MVA).
    pub s_base: f64,
    pub n_buses: usize,
    pub generators: Vec<GeneratorParams>,
    pub areas: Vec<AreaParams>,
    pub lines: Vec<LineParams>,
    pub loads: Vec<LoadParams>,
    /// Indices into `lines`; each is oriented from its area-one bus to its area-two bus.
    pub tie_lines: Vec<usize>,
    /// Symmetric limit on the primary control signal (MW); `None` is unlimited.
    #[serde(default)]
    pub primary_limit: Option<f64>,
}

impl PowerSystemConfig {
    /// Three-machine, five-bus desk-scale system with a lossless, heavily loaded tie line.
    pub fn desk_scale() -> Self {
        let gen = |name: &str, bus, area, inertia, rating: f64, t_ch, p_set| GeneratorParams {
            name: name.to_string(),
            bus,
            area,
            inertia,
            rating,
            damping: 0.1,
            droop: 0.05 * 50.0 / rating,
            t_ch,
            primary_share: 1.0,
            agc_share: 0.0,
            xd_prime: 0.3 * 100.0 / rating,
            emf: 1.1,
            p_set,
        };
        let mut generators = vec![
            gen("G1", 0, 1, 5.0, 500.0, 0.3, 0.0),
            gen("G2", 1, 1, 4.0, 400.0, 0.4, 300.0),
            gen("G3", 4, 2, 6.0, 400.0, 0.35, 150.0),
        ];
        generators[0].agc_share = 0.6;
        generators[1].agc_share = 0.4;
        generators[2].agc_share = 1.0;
        let area = AreaParams {
            t_n: 20.0,
            c_p: 0.2,
            anti_windup: 1.0,
            agc_limit: None,
        };
        let line = |from, to, r, x| LineParams { from, to, r, x, b: 0.0 };
        Self {
            f0: 50.0,
            s_base: 100.0,
            n_buses: 5,
            generators,
            areas: vec![area.clone(), area],
            lines: vec![
                line(0, 2, 0.005, 0.05),
                line(1, 2, 0.006, 0.06),
                line(0, 1, 0.01, 0.1),
                line(2, 3, 0.0, 0.3),
                line(4, 3, 0.004, 0.04),
            ],
            loads: vec![
                LoadParams {
                    bus: 2,
                    p: 450.0,
                    q: 100.0,
                },
                LoadParams {
                    bus: 3,
                    p: 350.0,
                    q: 80.0,
                },
            ],
            tie_lines: vec![3],
            primary_limit: None,
        }
    }

    fn validate(&self) -> Result<()> {
        let g = self.generators.len();
        if g == 0 {
            return arg_err("at least one generator is required");
        }
        if self.areas.len() != 2 {
            return arg_err(format!("exactly two areas are required, found {}", self.areas.len()));
        }
        if self.tie_lines.is_empty() {
            return arg_err("at least one tie line is required");
        }
        for (i, gp) in self.generators.iter().enumerate() {
            if gp.bus >= self.n_buses {
                return arg_err(format!("generator {i} sits on missing bus {}", gp.bus));
            }
            if gp.area != 1 && gp.area != 2 {
                return arg_err(format!("generator {i} has area {}, expected 1 or 2", gp.area));
            }
            for (name, v) in [
                ("inertia", gp.inertia),
                ("rating", gp.rating),
                ("damping", gp.damping),
                ("droop", gp.droop),
                ("t_ch", gp.t_ch),
                ("xd_prime", gp.xd_prime),
                ("emf", gp.emf),
            ] {
                if !(v > 0.0 && v.is_finite()) {
                    return arg_err(format!("generator {i}: {name} must be positive, got {v}"));
                }
            }
        }
        for (k, a) in self.areas.iter().enumerate() {
            if !(a.t_n > 0.0) {
                return arg_err(format!("area {}: T_N must be positive", k + 1));
            }
        }
        for (i, l) in self.lines.iter().enumerate() {
            if l.from >= self.n_buses || l.to >= self.n_buses || l.from == l.to {
                return arg_err(format!("line {i} has invalid endpoints"));
            }
            if l.r == 0.0 && l.x == 0.0 {
                return arg_err(format!("line {i} has zero impedance"));
            }
        }
        for &t in &self.tie_lines {
            if t >= self.lines.len() {
                return arg_err(format!("tie line index {t} out of range"));
            }
        }
        for l in &self.loads {
            if l.bus >= self.n_buses {
                return arg_err(format!("load on missing bus {}", l.bus));
            }
        }
        Ok(())
    }

    /// Per-generator AGC gains `(c, b)` that realise `-ACE/T_N - C_p dACE/dt`
    /// with frequency bias `1/S + 1/D`.
    pub fn agc_gains(&self) -> Vec<(f64, f64)> {
        self.generators
            .iter()
            .map(|gp| {
                let area = &self.areas[gp.area - 1];
                let bias = 1.0 / gp.droop + 1.0 / gp.damping;
                let k = self.f0 / (2.0 * gp.inertia * gp.rating);
                let c = -bias / area.t_n + area.c_p * bias * k / gp.damping;
                let b = -area.c_p * bias * k;
                (c, b)
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct KronReduction {
    /// Reduced admittance between the kept nodes.
    pub y_red: DMatrix<C64>,
    /// Maps kept-node voltages to eliminated-node voltages.
    pub recon: DMatrix<C64>,
}

/// Eliminates every node after the first `keep` nodes of `y`.
pub fn kron_reduce(y: &DMatrix<C64>, keep: usize) -> Result<KronReduction> {
    let n = y.nrows();
    if y.ncols() != n || keep > n {
        return dim_err(format!(
            "cannot keep {keep} nodes of a {}x{} admittance",
            y.nrows(),
            y.ncols()
        ));
    }
    let m = n - keep;
    let ygg = y.view((0, 0), (keep, keep)).into_owned();
    if m == 0 {
        return Ok(KronReduction {
            y_red: ygg,
            recon: DMatrix::zeros(0, keep),
        });
    }
    let ygn = y.view((0, keep), (keep, m)).into_owned();
    let yng = y.view((keep, 0), (m, keep)).into_owned();
    let ynn = y.view((keep, keep), (m, m)).into_owned();
    let lu = ynn.lu();
    let x = lu
        .solve(&yng)
        .ok_or_else(|| Error::Singular("interior admittance block".into()))?;
    if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::Singular("interior admittance block".into()));
    }
    Ok(KronReduction {
        y_red: ygg - ygn * &x,
        recon: -x,
    })
}

/// Assembled two-area model; implements the drift `h(X)`.
#[derive(Debug, Clone)]
pub struct TwoAreaSystem {
    pub config: PowerSystemConfig,
    pub y_bus: DMatrix<C64>,
    pub reduction: KronReduction,
    pub gains: Vec<(f64, f64)>,
    /// Turbine set points `P_m^0` (MW).
    pub p_m0: Vec<f64>,
    /// Scheduled net interchange per area (MW).
    pub tie_schedule: [f64; 2],
    /// Operating-point rotor angles.
    pub delta0: Vec<f64>,
}

fn sat(v: f64, limit: Option<f64>) -> f64 {
    match limit {
        Some(l) => v.clamp(-l, l),
        None => v,
    }
}

impl TwoAreaSystem {
    pub fn n_gen(&self) -> usize {
        self.config.generators.len()
    }

    pub fn n_state(&self) -> usize {
        3 * self.n_gen() + 2
    }

    fn emfs(&self, delta: &[f64]) -> DVector<C64> {
        DVector::from_iterator(
            delta.len(),
            self.config
                .generators
                .iter()
                .zip(delta)
                .map(|(gp, &d)| C64::from_polar(gp.emf, d)),
        )
    }

    /// Electrical power per generator (MW).
    pub fn electrical_power(&self, delta: &[f64]) -> Vec<f64> {
        let e = self.emfs(delta);
        let i = &self.reduction.y_red * &e;
        (0..e.len())
            .map(|k| self.config.s_base * (e[k] * i[k].conj()).re)
            .collect()
    }

    fn tie_flow(&self, v: &DVector<C64>, i: usize, j: usize) -> f64 {
        self.config.s_base * (self.y_bus[(i, j)].conj() * v[i] * v[j].conj()).re
    }

    fn tie_flow_rate(&self, v: &DVector<C64>, vdot: &DVector<C64>, i: usize, j: usize) -> f64 {
        let y = self.y_bus[(i, j)].conj();
        self.config.s_base * (y * (vdot[i] * v[j].conj() + v[i] * vdot[j].conj())).re
    }

    /// Net tie flow out of each area and its time derivative.
    pub fn tie_flows(&self, delta: &[f64], delta_dot: &[f64]) -> ([f64; 2], [f64; 2]) {
        let e = self.emfs(delta);
        let v = &self.reduction.recon * &e;
        let edot = DVector::from_iterator(e.len(), e.iter().zip(delta_dot).map(|(e, d)| C64::new(0.0, *d) * e));
        let vdot = &self.reduction.recon * edot;
        let mut flow = [0.0; 2];
        let mut rate = [0.0; 2];
        for &t in &self.config.tie_lines {
            let l = &self.config.lines[t];
            flow[0] += self.tie_flow(&v, l.from, l.to);
            flow[1] += self.tie_flow(&v, l.to, l.from);
            rate[0] += self.tie_flow_rate(&v, &vdot, l.from, l.to);
            rate[1] += self.tie_flow_rate(&v, &vdot, l.to, l.from);
        }
        (flow, rate)
    }

    /// Equilibrium state at the configured operating point.
    pub fn operating_point(&self) -> DVector<f64> {
        let g = self.n_gen();
        let mut x = DVector::zeros(self.n_state());
        for i in 0..g {
            x[i] = self.delta0[i];
            x[g + i] = self.config.f0;
            x[2 * g + i] = self.p_m0[i];
        }
        x
    }

    /// `B_d`, `B_f` and `C` for the standard input/output assignment.
    pub fn io_matrices(&self) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let g = self.n_gen();
        let n = self.n_state();
        let mut b_d = DMatrix::zeros(n, g);
        let mut b_f = DMatrix::zeros(n, 1);
        let mut c = DMatrix::zeros(2 * g, n);
        for (i, gp) in self.config.generators.iter().enumerate() {
            b_d[(g + i, i)] = -self.config.f0 / (2.0 * gp.inertia * gp.rating);
            b_d[(3 * g + gp.area - 1, i)] = -self.gains[i].1;
            if gp.area == 1 {
                b_f[(2 * g + i, 0)] = gp.agc_share / gp.t_ch;
            }
            c[(i, g + i)] = 1.0;
            c[(g + i, 2 * g + i)] = 1.0;
        }
        (b_d, b_f, c)
    }
}

impl Drift for TwoAreaSystem {
    fn dim(&self) -> usize {
        self.n_state()
    }

    fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        let g = self.n_gen();
        let cfg = &self.config;
        let delta: Vec<f64> = x.rows(0, g).iter().copied().collect();
        let freq: Vec<f64> = x.rows(g, g).iter().copied().collect();
        let pm: Vec<f64> = x.rows(2 * g, g).iter().copied().collect();
        let agc = [x[3 * g], x[3 * g + 1]];
        let pe = self.electrical_power(&delta);
        let delta_dot: Vec<f64> = freq.iter().map(|f| 2.0 * PI * (f - cfg.f0)).collect();
        let (flow, rate) = self.tie_flows(&delta, &delta_dot);

        let mut out = DVector::zeros(self.n_state());
        let mut agc_dot = [0.0; 2];
        for (i, gp) in cfg.generators.iter().enumerate() {
            let df = freq[i] - cfg.f0;
            out[i] = delta_dot[i];
            out[g + i] = cfg.f0 / (2.0 * gp.inertia * gp.rating) * (pm[i] - pe[i] - df / gp.damping);
            let k = gp.area - 1;
            let primary = sat(-df / gp.droop, cfg.primary_limit);
            let secondary = sat(agc[k], cfg.areas[k].agc_limit);
            out[2 * g + i] = (self.p_m0[i] + gp.primary_share * primary + gp.agc_share * secondary - pm[i]) / gp.t_ch;
            let (c, b) = self.gains[i];
            agc_dot[k] += c * df + b * (pm[i] - pe[i]);
        }
        for k in 0..2 {
            let area = &cfg.areas[k];
            let mismatch = flow[k] - self.tie_schedule[k];
            let windup = agc[k] - sat(agc[k], area.agc_limit);
            agc_dot[k] += -mismatch / area.t_n - area.c_p * rate[k] - area.anti_windup / area.t_n * windup;
            out[3 * g + k] = agc_dot[k];
        }
        out
    }
}

fn admittance(cfg: &PowerSystemConfig) -> (DMatrix<C64>, DMatrix<C64>) {
    let g = cfg.generators.len();
    let n = cfg.n_buses;
    let mut y = DMatrix::from_element(g + n, g + n, C64::new(0.0, 0.0));
    let add = |y: &mut DMatrix<C64>, a: usize, b: usize, v: C64| {
        y[(a, a)] += v;
        y[(b, b)] += v;
        y[(a, b)] -= v;
        y[(b, a)] -= v;
    };
    for (i, gp) in cfg.generators.iter().enumerate() {
        add(&mut y, i, g + gp.bus, C64::new(0.0, -1.0 / gp.xd_prime));
    }
    for l in &cfg.lines {
        let ys = C64::new(1.0, 0.0) / C64::new(l.r, l.x);
        add(&mut y, g + l.from, g + l.to, ys);
        y[(g + l.from, g + l.from)] += C64::new(0.0, l.b / 2.0);
        y[(g + l.to, g + l.to)] += C64::new(0.0, l.b / 2.0);
    }
    for ld in &cfg.loads {
        y[(g + ld.bus, g + ld.bus)] += C64::new(ld.p, -ld.q) / cfg.s_base;
    }
    let y_bus = y.view((g, g), (n, n)).into_owned();
    (y, y_bus)
}

/// Assembles the testbed and solves for the rotor angles that deliver the
/// scheduled outputs (the first generator is the angle reference and slack).
pub fn build_two_area_model(config: &PowerSystemConfig) -> Result<TwoAreaSystem> {
    config.validate()?;
    let g = config.generators.len();
    let (y_full, y_bus) = admittance(config);
    let reduction = kron_reduce(&y_full, g)?;
    let mut sys = TwoAreaSystem {
        config: config.clone(),
        y_bus,
        reduction,
        gains: config.agc_gains(),
        p_m0: vec![0.0; g],
        tie_schedule: [0.0; 2],
        delta0: vec![0.0; g],
    };

    // Newton on the non-reference angles.
    let mut delta = vec![0.0; g];
    let target: Vec<f64> = config.generators.iter().map(|gp| gp.p_set).collect();
    for iter in 0..100 {
        let pe = sys.electrical_power(&delta);
        let res: Vec<f64> = (1..g).map(|i| pe[i] - target[i]).collect();
        let norm = res.iter().fold(0.0_f64, |a, r| a.max(r.abs()));
        if norm < 1e-10 * config.s_base {
            break;
        }
        if iter == 99 || !norm.is_finite() {
            return Err(Error::NonConvergence {
                iterations: iter + 1,
                residual: norm,
                best: delta,
            });
        }
        let mut jac = DMatrix::zeros(g - 1, g - 1);
        for j in 1..g {
            let h = 1e-7;
            let mut dp = delta.clone();
            dp[j] += h;
            let mut dm = delta.clone();
            dm[j] -= h;
            let (pp, pm) = (sys.electrical_power(&dp), sys.electrical_power(&dm));
            for i in 1..g {
                jac[(i - 1, j - 1)] = (pp[i] - pm[i]) / (2.0 * h);
            }
        }
        let step = jac
            .lu()
            .solve(&DVector::from_vec(res))
            .ok_or_else(|| Error::Singular("power flow Jacobian".into()))?;
        for j in 1..g {
            delta[j] -= step[j - 1];
        }
    }
    let pe = sys.electrical_power(&delta);
    sys.p_m0 = pe;
    sys.delta0 = delta.clone();
    let (flow, _) = sys.tie_flows(&delta, &vec![0.0; g]);
    sys.tie_schedule = flow;
    Ok(sys)
}

impl TwoAreaSystem {
    pub fn ode_system(self: &Arc<Self>) -> Result<OdeSystem> {
        let (b_d, b_f, c) = self.io_matrices();
        OdeSystem::new(self.clone(), b_d, b_f, c)
    }
}

/// Damped Gauss-Newton on `h(X) = 0` using a pseudo-inverse step, so singular
/// Jacobians (such as a free angle reference) are tolerated.
pub fn find_equilibrium(drift: &dyn Drift, guess: &DVector<f64>) -> Result<DVector<f64>> {
    let mut x = guess.clone();
    let norm = |v: &DVector<f64>| v.iter().fold(0.0_f64, |a, r| a.max(r.abs()));
    let mut h = drift.eval(&x);
    let mut res = norm(&h);
    for _ in 0..100 {
        if !res.is_finite() {
            break;
        }
        if res <= EQUILIBRIUM_TOL {
            return Ok(x);
        }
        let jac = linearize(drift, &x)?;
        let svd = jac.svd(true, true);
        let step = svd
            .solve(&h, 1e-12 * svd.singular_values.max())
            .map_err(|e| Error::Singular(e.to_string()))?;
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let cand = &x - &step * t;
            let hc = drift.eval(&cand);
            let rc = norm(&hc);
            if rc < res {
                x = cand;
                h = hc;
                res = rc;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if res <= EQUILIBRIUM_TOL {
        return Ok(x);
    }
    Err(Error::NonConvergence {
        iterations: 100,
        residual: res,
        best: x.iter().copied().collect(),
    })
}

/// Time-dependent input such as a load profile or an injected attack.
pub trait TimeSignal: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, t: f64) -> DVector<f64>;
}

/// Identically zero input.
#[derive(Debug, Clone, Copy)]
pub struct ZeroSignal(pub usize);

impl TimeSignal for ZeroSignal {
    fn dim(&self) -> usize {
        self.0
    }
    fn value(&self, _t: f64) -> DVector<f64> {
        DVector::zeros(self.0)
    }
}

/// `amplitude` on every channel for `t >= onset`.
#[derive(Debug, Clone)]
pub struct StepSignal {
    pub onset: f64,
    pub amplitude: DVector<f64>,
}

impl TimeSignal for StepSignal {
    fn dim(&self) -> usize {
        self.amplitude.len()
    }
    fn value(&self, t: f64) -> DVector<f64> {
        if t >= self.onset {
            self.amplitude.clone()
        } else {
            DVector::zeros(self.amplitude.len())
        }
    }
}

/// `alpha_0 + sum_j alpha_j sin(omega_j t + phi_j)` switched on at `onset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadSignal {
    pub offset: f64,
    pub amplitudes: Vec<f64>,
    pub omegas: Vec<f64>,
    pub phases: Vec<f64>,
    #[serde(default)]
    pub onset: f64,
}

impl LoadSignal {
    pub fn step(offset: f64, onset: f64) -> Self {
        Self {
            offset,
            amplitudes: Vec::new(),
            omegas: Vec::new(),
            phases: Vec::new(),
            onset,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t < self.onset {
            return 0.0;
        }
        self.offset
            + self
                .amplitudes
                .iter()
                .zip(&self.omegas)
                .zip(&self.phases)
                .map(|((a, w), p)| a * (w * t + p).sin())
                .sum::<f64>()
    }

    pub fn energy(&self) -> f64 {
        self.offset * self.offset + self.amplitudes.iter().map(|a| a * a).sum::<f64>()
    }
}

/// Load deviations per generator node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadProfile {
    pub nodes: Vec<Option<LoadSignal>>,
}

impl LoadProfile {
    pub fn quiet(n: usize) -> Self {
        Self { nodes: vec![None; n] }
    }
}

impl TimeSignal for LoadProfile {
    fn dim(&self) -> usize {
        self.nodes.len()
    }
    fn value(&self, t: f64) -> DVector<f64> {
        DVector::from_iterator(
            self.nodes.len(),
            self.nodes.iter().map(|n| n.as_ref().map_or(0.0, |s| s.eval(t))),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadDisturbanceParams {
    /// Range of the constant part (MW).
    pub offset: (f64, f64),
    /// Range of each sinusoid amplitude (MW).
    pub amplitude: (f64, f64),
    /// Range of sinusoid frequencies (rad/s).
    pub omega: (f64, f64),
    /// Inclusive range of the number of sinusoids.
    pub harmonics: (usize, usize),
    /// Upper bound on `sum alpha^2`; larger draws are scaled back onto it.
    pub energy_cap: f64,
    #[serde(default)]
    pub onset: f64,
}

impl Default for LoadDisturbanceParams {
    fn default() -> Self {
        Self {
            offset: (-120.0, 120.0),
            amplitude: (0.0, 30.0),
            omega: (0.1, 2.0),
            harmonics: (0, 3),
            energy_cap: 150.0 * 150.0,
            onset: 0.0,
        }
    }
}

fn draw(rng: &mut impl Rng, range: (f64, f64)) -> f64 {
    if range.1 > range.0 {
        rng.gen_range(range.0..range.1)
    } else {
        range.0
    }
}

pub fn sample_load_disturbance(params: &LoadDisturbanceParams, rng: &mut impl Rng) -> Result<LoadSignal> {
    if params.harmonics.0 > params.harmonics.1 {
        return arg_err("harmonic count range is empty");
    }
    if !(params.energy_cap > 0.0) {
        return arg_err("energy cap must be positive");
    }
    let eta = rng.gen_range(params.harmonics.0..=params.harmonics.1);
    let mut s = LoadSignal {
        offset: draw(rng, params.offset),
        amplitudes: (0..eta).map(|_| draw(rng, params.amplitude)).collect(),
        omegas: (0..eta).map(|_| draw(rng, params.omega)).collect(),
        phases: (0..eta).map(|_| rng.gen_range(0.0..2.0 * PI)).collect(),
        onset: params.onset,
    };
    let energy = s.energy();
    if energy > params.energy_cap {
        let k = (params.energy_cap / energy).sqrt();
        s.offset *= k;
        for a in &mut s.amplitudes {
            *a *= k;
        }
    }
    Ok(s)
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: SampledSignal,
    pub outputs: SampledSignal,
}

/// Fixed-step RK4 on `X' = h(X) + B_d d(t) + B_f f(t)` from `x0` over `[0, horizon]`.
pub fn simulate(
    sys: &OdeSystem,
    d: &dyn TimeSignal,
    f: &dyn TimeSignal,
    horizon: f64,
    dt: f64,
    x0: &DVector<f64>,
) -> Result<Trajectory> {
    if d.dim() != sys.n_d() || f.dim() != sys.n_f() || x0.len() != sys.n_state() {
        return dim_err("input, fault or initial state dimension does not match the plant");
    }
    if !(dt > 0.0 && horizon > 0.0) {
        return arg_err("step and horizon must be positive");
    }
    let steps = (horizon / dt).round() as usize;
    if ((steps as f64) * dt - horizon).abs() > 1e-9 * horizon {
        return arg_err(format!("horizon {horizon} is not a multiple of the step {dt}"));
    }
    let jac = linearize(sys.drift.as_ref(), x0)?;
    let fastest = jac.complex_eigenvalues().iter().map(|l| l.norm()).fold(0.0, f64::max);
    if fastest > 0.1 / dt {
        return Err(Error::Stiff { dt, fastest });
    }
    let n = sys.n_state();
    let mut xs = DMatrix::zeros(steps + 1, n);
    let mut x = x0.clone();
    let edge = 1e-6 * dt;
    xs.row_mut(0).copy_from(&x.transpose());
    for k in 0..steps {
        let t = k as f64 * dt;
        // One-sided limits inside the step so jumps on grid points are resolved exactly.
        let (ta, tm, tb) = (t + edge, t + dt / 2.0, t + dt - edge);
        let (d0, d1, d2) = (d.value(ta), d.value(tm), d.value(tb));
        let (f0, f1, f2) = (f.value(ta), f.value(tm), f.value(tb));
        let k1 = sys.rhs(&x, &d0, &f0);
        let k2 = sys.rhs(&(&x + &k1 * (dt / 2.0)), &d1, &f1);
        let k3 = sys.rhs(&(&x + &k2 * (dt / 2.0)), &d1, &f1);
        let k4 = sys.rhs(&(&x + &k3 * dt), &d2, &f2);
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        if x.iter().any(|v| !v.is_finite() || v.abs() > 1e12) {
            return Err(Error::Divergence {
                time: t + dt,
                samples_kept: k + 1,
            });
        }
        xs.row_mut(k + 1).copy_from(&x.transpose());
    }
    let ys = &xs * sys.c.transpose();
    Ok(Trajectory {
        states: SampledSignal::new(0.0, dt, xs)?,
        outputs: SampledSignal::new(0.0, dt, ys)?,
    })
}

/// The DAE embedding of a plant together with what is needed to simulate it.
#[derive(Debug, Clone)]
pub struct Plant {
    pub ode: OdeSystem,
    pub x_e: DVector<f64>,
    pub model: NonlinearDaeModel,
}

impl Plant {
    pub fn new(ode: OdeSystem, x_e: DVector<f64>) -> Result<Self> {
        let model = ode_to_dae(&ode, &x_e)?;
        Ok(Self { ode, x_e, model })
    }

    /// Builds the two-area testbed and polishes its equilibrium.
    pub fn two_area(config: &PowerSystemConfig) -> Result<Self> {
        let sys = Arc::new(build_two_area_model(config)?);
        let ode = sys.ode_system()?;
        let x_e = find_equilibrium(sys.as_ref(), &sys.operating_point())?;
        Self::new(ode, x_e)
    }

    pub fn linearized(&self) -> Result<Self> {
        Self::new(self.ode.linearized(&self.x_e)?, self.x_e.clone())
    }

    /// Measurement deviation `z = Y - C X_e`.
    pub fn measurement(&self, traj: &Trajectory) -> Result<SampledSignal> {
        let ye = &self.ode.c * &self.x_e;
        let mut z = traj.outputs.values().clone();
        for mut row in z.row_iter_mut() {
            row -= ye.transpose();
        }
        SampledSignal::new(traj.outputs.t0(), traj.outputs.dt(), z)
    }
}

/// Samples `e_x(t) = E(x(t))` along a trajectory.
pub fn nonlinearity_signature_of(plant: &Plant, traj: &Trajectory) -> Result<SampledSignal> {
    let n_state = plant.ode.n_state();
    let n_x = plant.model.n_x();
    let n_r = plant.model.n_r();
    let states = traj.states.values();
    if states.ncols() != n_state {
        return dim_err("trajectory does not match the plant");
    }
    let mut e = DMatrix::zeros(states.nrows(), n_r);
    let mut x = DVector::zeros(n_x);
    for k in 0..states.nrows() {
        for i in 0..n_state {
            x[i] = states[(k, i)] - plant.x_e[i];
        }
        let v = plant.model.eval_nonlinearity(&x)?;
        e.row_mut(k).copy_from(&v.transpose());
    }
    SampledSignal::new(traj.states.t0(), traj.states.dt(), e)
}
