//! Scenario generation, training, Monte-Carlo evaluation and the empirical
//! convergence diagnostic, plus the on-disk experiment layout.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dae::NonlinearDaeModel;
use crate::error::{arg_err, dim_err, Error, Result};
use crate::linalg::quad_form;
use crate::poly::PolyMatrix;
use crate::power::{
    nonlinearity_signature_of, sample_load_disturbance, simulate, LoadDisturbanceParams, LoadProfile, LoadSignal,
    Plant, TimeSignal, ZeroSignal,
};
use crate::runtime::{realize_filter, residual_l2, rho_indicator, run_filter, threshold_alarm, ResidualTrace};
use crate::signature::{make_fourier_basis, ErrorBoundReport, GramMode, Provenance, SignatureEngine, SignatureMatrix};
use crate::synth::{
    sample_complexity, ChanceCertificate, Payoff, Perspective, ScenarioParams, SynthesisProblem, SynthesisResult,
};

/// Filter structure and signature settings shared by every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub d_n: usize,
    /// `a(p) = (p + root)^multiplicity`
    pub root: f64,
    pub multiplicity: usize,
    /// Number of Fourier basis functions.
    pub k: usize,
    /// Signature horizon (s).
    pub horizon: f64,
    pub gram: GramMode,
    pub signature: Provenance,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            d_n: 7,
            root: 2.0,
            multiplicity: 7,
            k: 160,
            horizon: 10.0,
            gram: GramMode::Periodic,
            signature: Provenance::Basis,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d_n > self.multiplicity {
            return arg_err(format!(
                "filter degree {} exceeds denominator degree {}",
                self.d_n, self.multiplicity
            ));
        }
        if !(self.root > 0.0) {
            return arg_err("denominator root must be positive for a stable filter");
        }
        if self.k == 0 || self.k % 2 != 0 {
            return arg_err(format!("basis size must be even and positive, got {}", self.k));
        }
        if !(self.horizon > 0.0) {
            return arg_err("horizon must be positive");
        }
        Ok(())
    }

    pub fn denominator(&self) -> PolyMatrix {
        PolyMatrix::repeated_root(self.root, self.multiplicity)
    }

    pub fn engine(&self) -> Result<SignatureEngine> {
        self.validate()?;
        SignatureEngine::new(
            make_fourier_basis(self.k, self.horizon)?,
            &self.denominator(),
            self.d_n,
            self.gram,
        )
    }
}

/// Which disturbance channels are excited together, and how often.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub load: LoadDisturbanceParams,
    pub patterns: Vec<Vec<usize>>,
    pub draws: usize,
    pub dt: f64,
}

impl ScenarioSpec {
    /// Every channel excited on its own, `draws` times each.
    pub fn per_node(channels: usize, draws: usize, load: LoadDisturbanceParams) -> Self {
        Self {
            load,
            patterns: (0..channels).map(|i| vec![i]).collect(),
            draws,
            dt: 1e-3,
        }
    }

    pub fn count(&self) -> usize {
        self.patterns.len() * self.draws
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioEntry {
    pub id: usize,
    pub nodes: Vec<usize>,
    pub profile: LoadProfile,
    pub signature: SignatureMatrix,
    pub bound: Option<ErrorBoundReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub id: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSet {
    pub master_seed: u64,
    pub filter: FilterSpec,
    pub spec: ScenarioSpec,
    pub model_fingerprint: String,
    pub entries: Vec<ScenarioEntry>,
    pub skipped: Vec<Skipped>,
}

impl ScenarioSet {
    pub fn matrices(&self) -> Vec<DMatrix<f64>> {
        self.entries.iter().map(|e| e.signature.matrix()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let set: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        let dims: Vec<usize> = set.entries.iter().map(|e| e.signature.q.len()).collect();
        if dims.windows(2).any(|w| w[0] != w[1]) {
            return dim_err("scenario matrices disagree in size");
        }
        Ok(set)
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn draw_profile(
    channels: usize,
    nodes: &[usize],
    load: &LoadDisturbanceParams,
    rng: &mut ChaCha8Rng,
) -> Result<LoadProfile> {
    let mut profile = LoadProfile::quiet(channels);
    for &n in nodes {
        if n >= channels {
            return arg_err(format!("disturbance channel {n} out of range for {channels}"));
        }
        profile.nodes[n] = Some(sample_load_disturbance(load, rng)?);
    }
    Ok(profile)
}

/// Simulates every scenario fault-free, extracts its nonlinearity signature
/// and forms the signature matrix. Scenario `i` draws from stream `i` of the
/// master seed, so the result does not depend on scheduling.
pub fn generate_scenarios(
    plant: &Plant,
    spec: &ScenarioSpec,
    filter: &FilterSpec,
    master_seed: u64,
    model_fingerprint: &str,
) -> Result<ScenarioSet> {
    if spec.count() == 0 {
        return arg_err("scenario count must be at least one");
    }
    let engine = filter.engine()?;
    let channels = plant.ode.n_d();
    let ids: Vec<(usize, &Vec<usize>)> = spec
        .patterns
        .iter()
        .flat_map(|p| std::iter::repeat(p).take(spec.draws))
        .enumerate()
        .collect();
    let outcomes: Vec<Result<ScenarioEntry>> = ids
        .par_iter()
        .map(|&(id, nodes)| {
            let mut rng = stream_rng(master_seed, id as u64);
            let profile = draw_profile(channels, nodes, &spec.load, &mut rng)?;
            let traj = simulate(
                &plant.ode,
                &profile,
                &ZeroSignal(plant.ode.n_f()),
                filter.horizon,
                spec.dt,
                &plant.x_e,
            )?;
            let e = nonlinearity_signature_of(plant, &traj)?;
            let (signature, bound) = match filter.signature {
                Provenance::Basis => {
                    let (s, b) = engine.signature_matrix(&e)?;
                    (s, Some(b))
                }
                Provenance::Exact => (engine.signature_matrix_exact(&e)?, None),
            };
            Ok(ScenarioEntry {
                id,
                nodes: nodes.clone(),
                profile,
                signature,
                bound,
            })
        })
        .collect();
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for (id, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(e) => entries.push(e),
            Err(err @ (Error::Divergence { .. } | Error::Stiff { .. })) => skipped.push(Skipped {
                id,
                reason: err.to_string(),
            }),
            Err(err) => return Err(err),
        }
    }
    Ok(ScenarioSet {
        master_seed,
        filter: filter.clone(),
        spec: spec.clone(),
        model_fingerprint: model_fingerprint.to_string(),
        entries,
        skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    /// `Average` or `Chance`.
    pub perspective: Perspective,
    pub payoff: Payoff,
    /// `(epsilon, beta)` for the chance certificate.
    pub certificate: Option<(f64, f64)>,
    /// Train even when the certificate asks for more scenarios than supplied.
    pub allow_insufficient: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            perspective: Perspective::Average,
            payoff: Payoff::Quadratic,
            certificate: None,
            allow_insufficient: false,
        }
    }
}

/// Two-stage synthesis on a scenario set.
pub fn train(model: &NonlinearDaeModel, set: &ScenarioSet, opts: &TrainOptions) -> Result<SynthesisResult> {
    if set.is_empty() {
        return arg_err("scenario set is empty");
    }
    let filter = &set.filter;
    filter.validate()?;
    let expect = model.n_r() * (filter.d_n + 1);
    if let Some(bad) = set.entries.iter().find(|e| e.signature.q.len() != expect) {
        return dim_err(format!(
            "scenario {} has a {}-square signature, the model needs {expect}",
            bad.id,
            bad.signature.q.len()
        ));
    }
    let certificate = match opts.certificate {
        Some((epsilon, beta)) => {
            let required = sample_complexity(&ScenarioParams {
                epsilon,
                beta,
                n_r: model.n_r(),
                n_f: model.n_f(),
                d_n: filter.d_n,
                d_f: model.f().degree(),
            })?;
            if opts.perspective == Perspective::Chance && (set.len() as u64) < required && !opts.allow_insufficient {
                return Err(Error::InsufficientScenarios {
                    have: set.len(),
                    required,
                });
            }
            Some(ChanceCertificate {
                epsilon,
                beta,
                required,
                supplied: set.len(),
            })
        }
        None => None,
    };
    let problem = SynthesisProblem::from_model(model, filter.d_n, &filter.denominator())?;
    let qs = set.matrices();
    let mut result = match opts.perspective {
        Perspective::Average => problem.two_stage_average(&qs, opts.payoff)?,
        Perspective::Chance => {
            if opts.payoff != Payoff::Quadratic {
                return Err(Error::UnsupportedPayoff(format!(
                    "{:?} for the chance program",
                    opts.payoff
                )));
            }
            problem.two_stage_chance(&qs)?
        }
        other => {
            return arg_err(format!(
                "training supports the average and chance programs, not {other:?}"
            ))
        }
    };
    if opts.perspective == Perspective::Chance {
        result.certificate = certificate;
    }
    Ok(result)
}

/// Mean and max of `nbar Q_i nbar^T` over the training set.
pub fn training_payoffs(set: &ScenarioSet, result: &SynthesisResult) -> (f64, f64) {
    let nbar = result.filter.nbar_vector();
    let vals: Vec<f64> = set
        .entries
        .iter()
        .map(|e| quad_form(&e.signature.matrix(), &nbar))
        .collect();
    let mean = vals.iter().sum::<f64>() / vals.len().max(1) as f64;
    (mean, vals.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackSpec {
    Step { amplitude: f64 },
    Sine { amplitude: f64, omega: f64 },
}

/// Attack on the single fault channel switched on at `onset`.
#[derive(Debug, Clone, Copy)]
pub struct AttackSignal {
    pub spec: AttackSpec,
    pub onset: f64,
}

impl TimeSignal for AttackSignal {
    fn dim(&self) -> usize {
        1
    }
    fn value(&self, t: f64) -> DVector<f64> {
        let v = if t < self.onset {
            0.0
        } else {
            match self.spec {
                AttackSpec::Step { amplitude } => amplitude,
                AttackSpec::Sine { amplitude, omega } => amplitude * (omega * (t - self.onset)).sin(),
            }
        };
        DVector::from_element(1, v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub load: LoadDisturbanceParams,
    /// Distinct channels excited per trial.
    pub nodes_per_trial: usize,
    pub horizon: f64,
    pub t_ack: f64,
    pub dt: f64,
    pub attack: AttackSpec,
    /// Trailing window of the threshold alarm (s).
    pub window: f64,
    pub linearized: bool,
}

impl Default for TrialSpec {
    fn default() -> Self {
        Self {
            load: LoadDisturbanceParams::default(),
            nodes_per_trial: 2,
            horizon: 20.0,
            t_ack: 18.0,
            dt: 1e-3,
            attack: AttackSpec::Step { amplitude: 14.0 },
            window: 10.0,
            linearized: false,
        }
    }
}

/// Per-filter outcome of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    /// `None` when the residual vanishes identically.
    pub rho: Option<f64>,
    /// Largest trailing-window L2 norm before the attack.
    pub max_windowed: f64,
    /// Pre-attack residual energy exceeded the trained threshold.
    pub violation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub id: usize,
    pub nodes: Vec<usize>,
    pub outcomes: Vec<FilterOutcome>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub filters: Vec<String>,
    pub trials: Vec<TrialRecord>,
    pub failed: Vec<Skipped>,
}

/// One simulated trial with residuals for every filter.
pub struct TrialRun {
    pub nodes: Vec<usize>,
    pub residuals: Vec<ResidualTrace>,
}

fn run_trial(
    plant: &Plant,
    filters: &[(String, &SynthesisResult)],
    profile: &LoadProfile,
    spec: &TrialSpec,
) -> Result<Vec<ResidualTrace>> {
    let attack = AttackSignal {
        spec: spec.attack,
        onset: spec.t_ack,
    };
    let traj = simulate(&plant.ode, profile, &attack, spec.horizon, spec.dt, &plant.x_e)?;
    let z = plant.measurement(&traj)?;
    filters
        .iter()
        .map(|(_, r)| run_filter(&realize_filter(&r.filter, plant.model.l())?, &z))
        .collect()
}

/// Simulates one trial with the given load profile and returns the residuals.
pub fn simulate_trial(
    plant: &Plant,
    filters: &[(String, &SynthesisResult)],
    profile: &LoadProfile,
    spec: &TrialSpec,
) -> Result<TrialRun> {
    let plant = if spec.linearized {
        plant.linearized()?
    } else {
        plant.clone()
    };
    let residuals = run_trial(&plant, filters, profile, spec)?;
    let nodes = profile
        .nodes
        .iter()
        .enumerate()
        .filter_map(|(i, n)| n.as_ref().map(|_| i))
        .collect();
    Ok(TrialRun { nodes, residuals })
}

fn outcome(trace: &ResidualTrace, result: &SynthesisResult, spec: &TrialSpec, horizon: f64) -> Result<FilterOutcome> {
    let rho = match rho_indicator(trace, spec.t_ack) {
        Ok(r) => Some(r),
        Err(Error::ZeroResidual) => None,
        Err(e) => return Err(e),
    };
    let pre = trace_prefix(trace, spec.t_ack)?;
    let max_windowed = if spec.window < pre.signal.t_end() {
        threshold_alarm(&pre, result.gamma_star.unwrap_or(0.0), spec.window)?.max_windowed()
    } else {
        residual_l2(&pre, 0.0, pre.signal.t_end())?
    };
    let energy = residual_l2(trace, 0.0, horizon.min(spec.t_ack))?.powi(2);
    let violation = result.gamma_star.is_some_and(|g| energy > g);
    Ok(FilterOutcome {
        rho,
        max_windowed,
        violation,
    })
}

fn trace_prefix(trace: &ResidualTrace, t: f64) -> Result<ResidualTrace> {
    let s = &trace.signal;
    let n = (((t - s.t0()) / s.dt()).round() as usize + 1).min(s.len());
    let v = s.values().rows(0, n).into_owned();
    Ok(ResidualTrace {
        signal: crate::signal::SampledSignal::new(s.t0(), s.dt(), v)?,
    })
}

/// Paired Monte-Carlo evaluation: every filter sees the same trials.
/// `threshold_horizon` is the training horizon over which `gamma*` applies.
pub fn evaluate(
    plant: &Plant,
    filters: &[(String, &SynthesisResult)],
    spec: &TrialSpec,
    n_trials: usize,
    seed: u64,
    threshold_horizon: f64,
) -> Result<EvaluationReport> {
    if !(spec.t_ack > 0.0 && spec.t_ack < spec.horizon) {
        return arg_err("attack time must lie inside the horizon");
    }
    let channels = plant.ode.n_d();
    if spec.nodes_per_trial == 0 || spec.nodes_per_trial > channels {
        return arg_err(format!("cannot excite {} of {channels} channels", spec.nodes_per_trial));
    }
    let plant = if spec.linearized {
        plant.linearized()?
    } else {
        plant.clone()
    };
    let results: Vec<Result<TrialRecord>> = (0..n_trials)
        .into_par_iter()
        .map(|id| {
            let mut rng = stream_rng(seed, id as u64);
            let mut nodes = sample_indices(&mut rng, channels, spec.nodes_per_trial).into_vec();
            nodes.sort_unstable();
            let profile = draw_profile(channels, &nodes, &spec.load, &mut rng)?;
            let traces = run_trial(&plant, filters, &profile, spec)?;
            let outcomes = traces
                .iter()
                .zip(filters)
                .map(|(t, (_, r))| outcome(t, r, spec, threshold_horizon))
                .collect::<Result<Vec<_>>>()?;
            Ok(TrialRecord { id, nodes, outcomes })
        })
        .collect();
    let mut trials = Vec::new();
    let mut failed = Vec::new();
    for (id, r) in results.into_iter().enumerate() {
        match r {
            Ok(t) => trials.push(t),
            Err(err @ (Error::Divergence { .. } | Error::Stiff { .. })) => failed.push(Skipped {
                id,
                reason: err.to_string(),
            }),
            Err(err) => return Err(err),
        }
    }
    Ok(EvaluationReport {
        filters: filters.iter().map(|(n, _)| n.clone()).collect(),
        trials,
        failed,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:e}"))
}

impl EvaluationReport {
    /// Empirical false-alarm frequency per filter.
    pub fn violation_frequency(&self) -> Vec<f64> {
        let n = self.trials.len().max(1) as f64;
        (0..self.filters.len())
            .map(|f| self.trials.iter().filter(|t| t.outcomes[f].violation).count() as f64 / n)
            .collect()
    }

    /// Fraction of trials in which filter `a` has strictly smaller rho than filter `b`.
    pub fn paired_win_rate(&self, a: usize, b: usize) -> f64 {
        let wins = self
            .trials
            .iter()
            .filter(|t| match (t.outcomes[a].rho, t.outcomes[b].rho) {
                (Some(x), Some(y)) => x < y,
                _ => false,
            })
            .count();
        wins as f64 / self.trials.len().max(1) as f64
    }

    /// Counts per filter over `bins` equal bins of `[0, 1]`.
    pub fn rho_bins(&self, bins: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![0; bins]; self.filters.len()];
        for t in &self.trials {
            for (f, o) in t.outcomes.iter().enumerate() {
                if let Some(r) = o.rho {
                    let b = ((r * bins as f64) as usize).min(bins - 1);
                    out[f][b] += 1;
                }
            }
        }
        out
    }

    /// One row per trial.
    pub fn rho_csv(&self) -> String {
        let mut s = String::from("trial,nodes");
        for f in &self.filters {
            let _ = write!(s, ",rho_{f}");
        }
        s.push('\n');
        for t in &self.trials {
            let nodes: Vec<String> = t.nodes.iter().map(|n| n.to_string()).collect();
            let _ = write!(s, "{},{}", t.id, nodes.join(" "));
            for o in &t.outcomes {
                let _ = write!(s, ",{}", fmt_opt(o.rho));
            }
            s.push('\n');
        }
        s
    }

    pub fn bins_csv(&self, bins: usize) -> String {
        let counts = self.rho_bins(bins);
        let mut s = String::from("bin_lo,bin_hi");
        for f in &self.filters {
            let _ = write!(s, ",count_{f}");
        }
        s.push('\n');
        for b in 0..bins {
            let _ = write!(s, "{},{}", b as f64 / bins as f64, (b + 1) as f64 / bins as f64);
            for c in &counts {
                let _ = write!(s, ",{}", c[b]);
            }
            s.push('\n');
        }
        s
    }

    pub fn violations_csv(&self) -> String {
        let mut s = String::from("trial,filter,max_windowed_l2,violation\n");
        for t in &self.trials {
            for (f, o) in t.outcomes.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{},{},{:e},{}",
                    t.id,
                    self.filters[f],
                    o.max_windowed,
                    u8::from(o.violation)
                );
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceSpec {
    pub schedule: Vec<usize>,
    /// Random points of the unit infinity ball approximating the sup.
    pub directions: usize,
    /// Independent subsamples averaged per schedule entry.
    pub replicates: usize,
}

impl Default for ConvergenceSpec {
    fn default() -> Self {
        Self {
            schedule: vec![10, 20, 40, 80, 160],
            directions: 256,
            replicates: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub schedule: Vec<usize>,
    pub errors: Vec<f64>,
    /// Least-squares slope of `ln e_n` against `ln n`; `None` when some `e_n` is zero.
    pub slope: Option<f64>,
}

impl ConvergenceReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,e_n\n");
        for (n, e) in self.schedule.iter().zip(&self.errors) {
            let _ = writeln!(s, "{n},{e:e}");
        }
        s
    }
}

/// Payoff of every pool scenario at every direction; rows are directions.
pub fn payoff_table(pool: &[DMatrix<f64>], directions: &[DVector<f64>]) -> DMatrix<f64> {
    let cols: Vec<Vec<f64>> = pool
        .par_iter()
        .map(|q| directions.iter().map(|d| quad_form(q, d)).collect())
        .collect();
    DMatrix::from_fn(directions.len(), pool.len(), |i, j| cols[j][i])
}

/// Uniform empirical average error: for each `n`, the sup over the sampled
/// directions of the gap between an `n`-sample mean (drawn with replacement
/// from the pool) and the pool mean, averaged over replicates.
pub fn convergence_diagnostic(
    pool: &[DMatrix<f64>],
    trained: Option<&DVector<f64>>,
    spec: &ConvergenceSpec,
    seed: u64,
) -> Result<ConvergenceReport> {
    if pool.is_empty() {
        return arg_err("scenario pool is empty");
    }
    if spec.schedule.is_empty() || spec.schedule.windows(2).any(|w| w[0] >= w[1]) || spec.schedule[0] == 0 {
        return arg_err("schedule must be positive and strictly increasing");
    }
    if spec.replicates == 0 {
        return arg_err("at least one replicate is required");
    }
    let dim = pool[0].nrows();
    let mut rng = stream_rng(seed, 0);
    let mut directions: Vec<DVector<f64>> = (0..spec.directions)
        .map(|_| DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..=1.0)))
        .collect();
    if let Some(t) = trained {
        if t.len() != dim {
            return dim_err("trained filter does not match the pool");
        }
        let m = t.amax();
        if m > 0.0 {
            directions.push(t / m);
        }
    }
    let mut table = payoff_table(pool, &directions);
    // Centring on the first scenario keeps identical payoffs exactly identical.
    for mut row in table.row_iter_mut() {
        let first = row[0];
        row.add_scalar_mut(-first);
    }
    let reference: Vec<f64> = (0..directions.len()).map(|i| table.row(i).mean()).collect();
    let mut errors = Vec::with_capacity(spec.schedule.len());
    for (s, &n) in spec.schedule.iter().enumerate() {
        let mut rng = stream_rng(seed, 1 + s as u64);
        let mut total = 0.0;
        for _ in 0..spec.replicates {
            let pick: Vec<usize> = (0..n).map(|_| rng.gen_range(0..pool.len())).collect();
            let sup = (0..directions.len())
                .map(|i| {
                    let mean = pick.iter().map(|&j| table[(i, j)]).sum::<f64>() / n as f64;
                    (mean - reference[i]).abs()
                })
                .fold(0.0, f64::max);
            total += sup;
        }
        errors.push(total / spec.replicates as f64);
    }
    let slope = log_log_slope(&spec.schedule, &errors);
    Ok(ConvergenceReport {
        schedule: spec.schedule.clone(),
        errors,
        slope,
    })
}

pub fn log_log_slope(n: &[usize], e: &[f64]) -> Option<f64> {
    if n.len() < 2 || e.iter().any(|v| !(*v > 0.0)) {
        return None;
    }
    let xs: Vec<f64> = n.iter().map(|v| (*v as f64).ln()).collect();
    let ys: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Some(sxy / sxx)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// Reproducibility record written next to every experiment's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seeds: Vec<u64>,
    pub config_hash: String,
    pub model_hash: String,
    /// Output file name to its sha256.
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, seeds: Vec<u64>, config: &impl Serialize, model_hash: &str) -> Result<Self> {
        Ok(Self {
            tool: "fdi".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seeds,
            config_hash: sha256_hex(&serde_json::to_vec(config)?),
            model_hash: model_hash.into(),
            files: BTreeMap::new(),
        })
    }

    /// Writes `contents` into `dir/name` and records its hash.
    pub fn write_file(&mut self, dir: &Path, name: &str, contents: &[u8]) -> Result<()> {
        std::fs::write(dir.join(name), contents)?;
        self.files.insert(name.into(), sha256_hex(contents));
        Ok(())
    }

    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(&serde_json::to_vec(self)?))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(dir.join("manifest.json"), text)?;
        Ok(())
    }
}

/// A synthesized filter as persisted on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedFilter {
    pub result: SynthesisResult,
    pub spec: FilterSpec,
    pub model_hash: String,
    /// Hash of the scenario set it was trained on, if any.
    #[serde(default)]
    pub scenario_hash: Option<String>,
}

impl TrainedFilter {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        serde_json::from_slice(&std::fs::read(path)?).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }
}

/// A load step of `amplitude` at each listed channel.
pub fn step_profile(channels: usize, steps: &[(usize, f64)], onset: f64) -> Result<LoadProfile> {
    let mut p = LoadProfile::quiet(channels);
    for &(n, amp) in steps {
        if n >= channels {
            return arg_err(format!("disturbance channel {n} out of range for {channels}"));
        }
        p.nodes[n] = Some(LoadSignal::step(amp, onset));
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_mass_pool_has_zero_error() {
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let pool = vec![q; 8];
        let r = convergence_diagnostic(
            &pool,
            None,
            &ConvergenceSpec {
                schedule: vec![2, 4],
                directions: 16,
                replicates: 3,
            },
            1,
        )
        .unwrap();
        assert_eq!(r.errors, vec![0.0, 0.0]);
        assert!(r.slope.is_none());
    }

    #[test]
    fn slope_of_power_law() {
        let n = [10, 20, 40];
        let e: Vec<f64> = n.iter().map(|v| 3.0 * (*v as f64).powf(-0.5)).collect();
        assert!((log_log_slope(&n, &e).unwrap() + 0.5).abs() < 1e-12);
    }

    #[test]
    fn sha_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn filter_spec_rejects_odd_basis() {
        let spec = FilterSpec {
            k: 7,
            ..Default::default()
        };
        assert!(spec.validate().is_err());
    }
}
