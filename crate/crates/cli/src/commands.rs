use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fdi_core::dae::{detectability_check, isolate_fault};
use fdi_core::harness::convergence_diagnostic;
use fdi_core::harness::{
    evaluate, generate_scenarios, sha256_hex, simulate_trial, step_profile, train, AttackSpec, ConvergenceSpec,
    EvaluationReport, Manifest, ScenarioSpec, TrainOptions, TrialSpec,
};
use fdi_core::signature::{GramMode, Provenance};
use fdi_core::synth::{sample_complexity, ScenarioParams, SynthesisProblem};
use fdi_core::{load_model, Error, FilterSpec, LoadedModel, Perspective, Plant, Result, ScenarioSet, TrainedFilter};
use serde_json::json;

use crate::config::{pick, pick_opt, ConfigFile};
use crate::{
    CheckArgs, Cli, Command, ConvergeArgs, EvalArgs, FilterArgs, GenArgs, ModelArgs, RunArgs, SamplesArgs, SynthArgs,
    TrialArgs,
};

fn input(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    if let Some(jobs) = pick_opt(cli.jobs, &cfg.jobs) {
        if jobs == 0 {
            return Err(input("--jobs must be at least one"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| input(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Check(a) => check(&a, &cfg),
        Command::Synth(a) => synth(&a, &cfg),
        Command::Run(a) => run(&a, &cfg),
        Command::Samples(a) => samples(&a),
        Command::GenScenarios(a) => gen_scenarios(&a, &cfg),
        Command::Eval(a) => eval(&a, &cfg),
        Command::Converge(a) => converge(&a, &cfg),
    }
}

fn existing(path: PathBuf, what: &str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(input(format!("{what} {} does not exist", path.display())))
    }
}

fn load(args: &ModelArgs, cfg: &ConfigFile) -> Result<(LoadedModel, String)> {
    let path = pick_opt(args.model.clone(), &cfg.model).ok_or_else(|| input("--model is required"))?;
    let (mut model, hash) = load_model(&existing(path, "model file")?)?;
    if let Some(target) = pick_opt(args.fault, &cfg.fault) {
        model = match model {
            LoadedModel::Dae(m) => LoadedModel::Dae(isolate_fault(&m, target)?),
            LoadedModel::Plant(mut p) => {
                p.model = isolate_fault(&p.model, target)?;
                LoadedModel::Plant(p)
            }
        };
    }
    Ok((model, hash))
}

fn plant_of(model: &LoadedModel) -> Result<&Plant> {
    model
        .plant()
        .ok_or_else(|| input("this command needs a simulable model (ode_linear or power_system)"))
}

fn parse_named<T: serde::de::DeserializeOwned>(what: &str, v: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(v.to_string())).map_err(|_| input(format!("unknown {what} '{v}'")))
}

fn filter_overridden(a: &FilterArgs, cfg: &ConfigFile) -> bool {
    a.d_n.is_some()
        || a.root.is_some()
        || a.multiplicity.is_some()
        || a.k.is_some()
        || a.horizon.is_some()
        || a.gram.is_some()
        || a.signature.is_some()
        || cfg.d_n.is_some()
        || cfg.root.is_some()
        || cfg.multiplicity.is_some()
        || cfg.k.is_some()
        || cfg.horizon.is_some()
        || cfg.gram.is_some()
        || cfg.signature.is_some()
}

fn filter_spec(a: &FilterArgs, cfg: &ConfigFile) -> Result<FilterSpec> {
    let d = FilterSpec::default();
    let gram: GramMode = match pick_opt(a.gram.clone(), &cfg.gram) {
        Some(g) => parse_named("gram mode", &g)?,
        None => d.gram,
    };
    let signature: Provenance = match pick_opt(a.signature.clone(), &cfg.signature) {
        Some(s) => parse_named("signature kind", &s)?,
        None => d.signature,
    };
    let d_n = pick(a.d_n, &cfg.d_n, d.d_n);
    let spec = FilterSpec {
        d_n,
        root: pick(a.root, &cfg.root, d.root),
        multiplicity: pick(a.multiplicity, &cfg.multiplicity, d_n.max(1)),
        k: pick(a.k, &cfg.k, d.k),
        horizon: pick(a.horizon, &cfg.horizon, d.horizon),
        gram,
        signature,
    };
    spec.validate()?;
    Ok(spec)
}

fn out_dir(flag: &Option<PathBuf>, cfg: &ConfigFile) -> Result<PathBuf> {
    let dir = pick(flag.clone(), &cfg.out, PathBuf::from("fdi-out"));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn finish(manifest: Manifest, dir: &Path) -> Result<String> {
    manifest.save(dir)?;
    manifest.hash()
}

fn check(a: &CheckArgs, cfg: &ConfigFile) -> Result<()> {
    let (model, _) = load(&a.model, cfg)?;
    let report = detectability_check(model.dae().h(), model.dae().f())?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    report.into_result().map(|_| ())
}

fn samples(a: &SamplesArgs) -> Result<()> {
    let (n_r, n_f, d_f) = match &a.model {
        Some(p) => {
            let (m, _) = load_model(&existing(p.clone(), "model file")?)?;
            let dae = m.dae();
            (dae.n_r(), dae.n_f(), dae.f().degree())
        }
        None => (
            a.n_r.ok_or_else(|| input("--n-r or --model is required"))?,
            a.n_f.ok_or_else(|| input("--n-f or --model is required"))?,
            a.d_f.unwrap_or(0),
        ),
    };
    let n = sample_complexity(&ScenarioParams {
        epsilon: a.epsilon,
        beta: a.beta,
        n_r: a.n_r.unwrap_or(n_r),
        n_f: a.n_f.unwrap_or(n_f),
        d_n: a.d_n.unwrap_or(FilterSpec::default().d_n),
        d_f: a.d_f.unwrap_or(d_f),
    })?;
    println!("{n}");
    Ok(())
}

fn load_set(path: PathBuf, model_hash: &str) -> Result<(ScenarioSet, String)> {
    let path = existing(path, "scenario set")?;
    let bytes = std::fs::read(&path)?;
    let set: ScenarioSet =
        serde_json::from_slice(&bytes).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    if set.model_fingerprint != model_hash {
        return Err(input("scenario set was generated from a different model file"));
    }
    Ok((set, sha256_hex(&bytes)))
}

fn synth(a: &SynthArgs, cfg: &ConfigFile) -> Result<()> {
    let perspective = pick(a.perspective.clone(), &cfg.perspective, "approach1".into());
    let (model, hash) = load(&a.model, cfg)?;
    let dae = model.dae();
    let epsilon = pick_opt(a.epsilon, &cfg.epsilon);
    let beta = pick_opt(a.beta, &cfg.beta);
    let certificate = match (epsilon, beta) {
        (Some(e), Some(b)) => Some((e, b)),
        (None, None) => None,
        _ => return Err(input("--epsilon and --beta go together")),
    };
    let scenario_path = pick_opt(a.scenarios.clone(), &cfg.scenarios);
    let (result, spec, scenario_hash, seeds) = match perspective.as_str() {
        "feasible" | "approach1" => {
            let spec = filter_spec(&a.filter, cfg)?;
            let problem = SynthesisProblem::from_model(dae, spec.d_n, &spec.denominator())?;
            let r = if perspective == "feasible" {
                problem.feasible_filter()?
            } else {
                problem.max_sensitivity_filter()?
            };
            (r, spec, None, vec![])
        }
        "robust" | "ap" | "cp" => {
            let path = scenario_path.ok_or_else(|| input(format!("--scenarios is required for {perspective}")))?;
            let (set, set_hash) = load_set(path, &hash)?;
            if filter_overridden(&a.filter, cfg) && filter_spec(&a.filter, cfg)? != set.filter {
                return Err(input(
                    "filter settings differ from those the scenario set was built with",
                ));
            }
            let spec = set.filter.clone();
            let r = if perspective == "robust" {
                let qs = set.matrices();
                if qs.is_empty() {
                    return Err(input("scenario set is empty"));
                }
                let mean = qs.iter().fold(qs[0].clone() * 0.0, |acc, q| acc + q) / qs.len() as f64;
                SynthesisProblem::from_model(dae, spec.d_n, &spec.denominator())?.robust_filter_qp(&mean)?
            } else {
                let opts = TrainOptions {
                    perspective: if perspective == "ap" {
                        Perspective::Average
                    } else {
                        Perspective::Chance
                    },
                    certificate,
                    allow_insufficient: a.allow_insufficient || cfg.allow_insufficient.unwrap_or(false),
                    ..TrainOptions::default()
                };
                train(dae, &set, &opts)?
            };
            (r, spec, Some(set_hash), vec![set.master_seed])
        }
        other => return Err(input(format!("unknown perspective '{other}'"))),
    };
    let dir = out_dir(&a.out, cfg)?;
    let artifact = TrainedFilter {
        result,
        spec,
        model_hash: hash.clone(),
        scenario_hash,
    };
    let mut text = serde_json::to_string_pretty(&artifact)?;
    text.push('\n');
    let settings = json!({"perspective": perspective, "spec": artifact.spec, "certificate": certificate});
    let mut manifest = Manifest::new("synth", seeds, &settings, &hash)?;
    manifest.write_file(&dir, "filter.json", text.as_bytes())?;
    let mh = finish(manifest, &dir)?;
    let r = &artifact.result;
    let gamma = r.gamma_star.map_or_else(|| "none".to_string(), |g| format!("{g:e}"));
    let sign = match r.active_branch.sign {
        fdi_core::synth::Sign::Plus => '+',
        fdi_core::synth::Sign::Minus => '-',
    };
    println!(
        "perspective={perspective} gamma_star={gamma} branch={}{sign} manifest={mh}",
        r.active_branch.column
    );
    if let Some(c) = &r.certificate {
        println!(
            "certificate epsilon={} beta={} required={} supplied={}",
            c.epsilon, c.beta, c.required, c.supplied
        );
    }
    Ok(())
}

fn parse_pattern(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|v| v.trim().parse().map_err(|_| input(format!("bad channel list '{s}'"))))
        .collect()
}

fn gen_scenarios(a: &GenArgs, cfg: &ConfigFile) -> Result<()> {
    let (model, hash) = load(&a.model, cfg)?;
    let plant = plant_of(&model)?;
    let spec = filter_spec(&a.filter, cfg)?;
    let channels = plant.ode.n_d();
    let patterns = if !a.patterns.is_empty() {
        a.patterns
            .iter()
            .map(|p| parse_pattern(p))
            .collect::<Result<Vec<_>>>()?
    } else {
        cfg.patterns
            .clone()
            .unwrap_or_else(|| (0..channels).map(|i| vec![i]).collect())
    };
    let scenarios = ScenarioSpec {
        load: cfg.load.clone().unwrap_or_default(),
        patterns,
        draws: pick(a.draws, &cfg.draws, 5),
        dt: pick(a.dt, &cfg.dt, 1e-3),
    };
    let seed = pick(a.seed, &cfg.seed, 0);
    eprintln!("simulating {} scenarios", scenarios.count());
    let set = generate_scenarios(plant, &scenarios, &spec, seed, &hash)?;
    for s in &set.skipped {
        eprintln!("skipped scenario {}: {}", s.id, s.reason);
    }
    let dir = out_dir(&a.out, cfg)?;
    let mut manifest = Manifest::new(
        "gen-scenarios",
        vec![seed],
        &json!({"spec": spec, "scenarios": scenarios}),
        &hash,
    )?;
    manifest.write_file(&dir, "scenarios.json", &serde_json::to_vec(&set)?)?;
    let mh = finish(manifest, &dir)?;
    println!("scenarios={} skipped={} manifest={mh}", set.len(), set.skipped.len());
    Ok(())
}

fn load_filters(specs: &[String], cfg: &ConfigFile, model_hash: &str) -> Result<Vec<(String, TrainedFilter)>> {
    let list: Vec<String> = if specs.is_empty() {
        cfg.filters.clone().unwrap_or_default()
    } else {
        specs.to_vec()
    };
    if list.is_empty() {
        return Err(input("at least one --filter is required"));
    }
    list.iter()
        .map(|s| {
            let (name, path) = match s.split_once('=') {
                Some((n, p)) => (n.to_string(), PathBuf::from(p)),
                None => {
                    let p = PathBuf::from(s);
                    let n = p
                        .file_stem()
                        .map_or_else(|| "filter".to_string(), |x| x.to_string_lossy().into_owned());
                    (n, p)
                }
            };
            let f = TrainedFilter::load(&existing(path, "filter file")?)?;
            if f.model_hash != model_hash {
                return Err(input(format!(
                    "filter '{name}' was synthesized for a different model file"
                )));
            }
            Ok((name, f))
        })
        .collect()
}

fn trial_spec(
    a: &TrialArgs,
    cfg: &ConfigFile,
    t_ack_default: impl Fn(f64) -> f64,
    nodes: usize,
    window: f64,
) -> Result<TrialSpec> {
    let horizon = pick(a.sim_horizon, &cfg.sim_horizon, 20.0);
    let amplitude = pick(a.attack, &cfg.attack, 14.0);
    let attack = match pick_opt(a.attack_omega, &cfg.attack_omega) {
        Some(omega) => AttackSpec::Sine { amplitude, omega },
        None => AttackSpec::Step { amplitude },
    };
    let spec = TrialSpec {
        load: cfg.load.clone().unwrap_or_default(),
        nodes_per_trial: nodes,
        horizon,
        t_ack: pick(a.t_ack, &cfg.t_ack, t_ack_default(horizon)),
        dt: pick(a.dt, &cfg.dt, 1e-3),
        attack,
        window: pick(a.window, &cfg.window, window),
        linearized: a.linearized || cfg.linearized.unwrap_or(false),
    };
    if !(spec.t_ack > 0.0 && spec.t_ack < spec.horizon) {
        return Err(input("--t-ack must lie inside the simulation horizon"));
    }
    Ok(spec)
}

/// Shortest horizon any of the filters was trained on; the default alarm window.
fn training_horizon(filters: &[(String, TrainedFilter)]) -> f64 {
    filters
        .iter()
        .map(|(_, f)| f.spec.horizon)
        .fold(f64::INFINITY, f64::min)
}

fn write_eval(report: &EvaluationReport, dir: &Path, manifest: &mut Manifest) -> Result<()> {
    manifest.write_file(dir, "rho_histogram.csv", report.rho_csv().as_bytes())?;
    manifest.write_file(dir, "rho_bins.csv", report.bins_csv(20).as_bytes())?;
    manifest.write_file(dir, "violations.csv", report.violations_csv().as_bytes())?;
    let summary = json!({
        "filters": report.filters,
        "trials": report.trials.len(),
        "failed": report.failed,
        "violation_frequency": report.violation_frequency(),
    });
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    manifest.write_file(dir, "summary.json", text.as_bytes())?;
    Ok(())
}

fn print_eval(report: &EvaluationReport) {
    let freq = report.violation_frequency();
    for (i, name) in report.filters.iter().enumerate() {
        let mut rhos: Vec<f64> = report.trials.iter().filter_map(|t| t.outcomes[i].rho).collect();
        rhos.sort_by(f64::total_cmp);
        let median = rhos.get(rhos.len() / 2).copied().unwrap_or(f64::NAN);
        println!(
            "filter={name} median_rho={median:.6} violation_frequency={:.4}",
            freq[i]
        );
    }
    for j in 1..report.filters.len() {
        println!(
            "{} below {} in {:.1}% of pairs",
            report.filters[0],
            report.filters[j],
            100.0 * report.paired_win_rate(0, j)
        );
    }
}

fn monte_carlo(
    command: &str,
    model: &ModelArgs,
    trial: &TrialArgs,
    trials: usize,
    nodes: Option<usize>,
    cfg: &ConfigFile,
) -> Result<()> {
    let (m, hash) = load(model, cfg)?;
    let plant = plant_of(&m)?;
    let filters = load_filters(&trial.filters, cfg, &hash)?;
    let nodes = pick(nodes, &cfg.nodes_per_trial, 2.min(plant.ode.n_d()));
    let horizon = training_horizon(&filters);
    let spec = trial_spec(trial, cfg, |h| 0.9 * h, nodes, horizon)?;
    let seed = pick(trial.seed, &cfg.seed, 0);
    let refs: Vec<(String, &fdi_core::SynthesisResult)> = filters.iter().map(|(n, f)| (n.clone(), &f.result)).collect();
    eprintln!("running {trials} trials");
    let report = evaluate(plant, &refs, &spec, trials, seed, horizon)?;
    let dir = out_dir(&trial.out, cfg)?;
    let names: Vec<&String> = filters.iter().map(|(n, _)| n).collect();
    let mut manifest = Manifest::new(
        command,
        vec![seed],
        &json!({"trial": spec, "trials": trials, "filters": names}),
        &hash,
    )?;
    write_eval(&report, &dir, &mut manifest)?;
    let mh = finish(manifest, &dir)?;
    print_eval(&report);
    println!("manifest={mh}");
    Ok(())
}

fn eval(a: &EvalArgs, cfg: &ConfigFile) -> Result<()> {
    let trials = pick(a.trials, &cfg.trials, 100);
    monte_carlo("eval", &a.model, &a.trial, trials, a.nodes_per_trial, cfg)
}

fn parse_step(s: &str) -> Result<(usize, f64)> {
    let (c, v) = s
        .split_once(':')
        .ok_or_else(|| input(format!("load '{s}' is not CHANNEL:MW")))?;
    Ok((
        c.trim().parse().map_err(|_| input(format!("bad channel in '{s}'")))?,
        v.trim().parse().map_err(|_| input(format!("bad amplitude in '{s}'")))?,
    ))
}

fn run(a: &RunArgs, cfg: &ConfigFile) -> Result<()> {
    if let Some(trials) = pick_opt(a.trials, &cfg.trials) {
        return monte_carlo("run", &a.model, &a.trial, trials, a.nodes_per_trial, cfg);
    }
    let (m, hash) = load(&a.model, cfg)?;
    let plant = plant_of(&m)?;
    let filters = load_filters(&a.trial.filters, cfg, &hash)?;
    let channels = plant.ode.n_d();
    let steps: Vec<(usize, f64)> = {
        let list = if a.loads.is_empty() {
            cfg.loads.clone().unwrap_or_default()
        } else {
            a.loads.clone()
        };
        if list.is_empty() {
            if channels >= 3 {
                vec![(0, 150.0), (2, -75.0)]
            } else {
                vec![(0, 150.0)]
            }
        } else {
            list.iter().map(|s| parse_step(s)).collect::<Result<_>>()?
        }
    };
    let t_load = pick(a.t_load, &cfg.t_load, 1.0);
    let profile = step_profile(channels, &steps, t_load)?;
    let spec = trial_spec(
        &a.trial,
        cfg,
        |_| 10.0,
        steps.len().min(channels),
        training_horizon(&filters),
    )?;
    let refs: Vec<(String, &fdi_core::SynthesisResult)> = filters.iter().map(|(n, f)| (n.clone(), &f.result)).collect();
    let trial = simulate_trial(plant, &refs, &profile, &spec)?;

    let mut residuals = String::from("t");
    for (n, _) in &refs {
        let _ = write!(residuals, ",r_{n}");
    }
    residuals.push('\n');
    let vals: Vec<Vec<f64>> = trial.residuals.iter().map(|r| r.values()).collect();
    let len = vals.first().map_or(0, Vec::len);
    for k in 0..len {
        let _ = write!(residuals, "{}", trial.residuals[0].signal.time(k));
        for v in &vals {
            let _ = write!(residuals, ",{:e}", v[k]);
        }
        residuals.push('\n');
    }
    let mut rho_csv = String::from("filter,rho,max_abs_pre_attack,max_abs\n");
    for ((n, _), r) in refs.iter().zip(&trial.residuals) {
        let rho = match fdi_core::runtime::rho_indicator(r, spec.t_ack) {
            Ok(v) => format!("{v:e}"),
            Err(Error::ZeroResidual) => String::new(),
            Err(e) => return Err(e),
        };
        let v = r.values();
        let cut = ((spec.t_ack / spec.dt).round() as usize + 1).min(v.len());
        let pre = v[..cut].iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        let all = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        let _ = writeln!(rho_csv, "{n},{rho},{pre:e},{all:e}");
        println!("filter={n} rho={rho}");
    }
    let dir = out_dir(&a.trial.out, cfg)?;
    let settings = json!({"trial": spec, "loads": steps, "t_load": t_load});
    let mut manifest = Manifest::new("run", vec![], &settings, &hash)?;
    manifest.write_file(&dir, "residuals.csv", residuals.as_bytes())?;
    manifest.write_file(&dir, "rho.csv", rho_csv.as_bytes())?;
    let mh = finish(manifest, &dir)?;
    println!("manifest={mh}");
    Ok(())
}

fn converge(a: &ConvergeArgs, cfg: &ConfigFile) -> Result<()> {
    let (m, hash) = load(&a.model, cfg)?;
    let seed = pick(a.seed, &cfg.seed, 0);
    let set = match pick_opt(a.scenarios.clone(), &cfg.scenarios) {
        Some(p) => load_set(p, &hash)?.0,
        None => {
            let plant = plant_of(&m)?;
            let spec = filter_spec(&a.filter, cfg)?;
            let pool = pick(a.pool, &cfg.pool, 320);
            let channels = plant.ode.n_d();
            let scenarios = ScenarioSpec {
                load: cfg.load.clone().unwrap_or_default(),
                patterns: (0..channels).map(|i| vec![i]).collect(),
                draws: pool.div_ceil(channels),
                dt: pick(a.dt, &cfg.dt, 1e-3),
            };
            eprintln!("simulating a pool of {} scenarios", scenarios.count());
            generate_scenarios(plant, &scenarios, &spec, seed, &hash)?
        }
    };
    let schedule = match &a.schedule {
        Some(s) => parse_pattern(s)?,
        None => cfg
            .schedule
            .clone()
            .unwrap_or_else(|| ConvergenceSpec::default().schedule),
    };
    let spec = ConvergenceSpec {
        schedule,
        directions: pick(a.directions, &cfg.directions, 256),
        replicates: pick(a.replicates, &cfg.replicates, 20),
    };
    let trained = match &a.trained {
        Some(p) => Some(
            TrainedFilter::load(&existing(p.clone(), "filter file")?)?
                .result
                .filter
                .nbar_vector(),
        ),
        None => None,
    };
    let report = convergence_diagnostic(&set.matrices(), trained.as_ref(), &spec, seed)?;
    let dir = out_dir(&a.out, cfg)?;
    let mut manifest = Manifest::new(
        "converge",
        vec![seed],
        &json!({"convergence": spec, "pool": set.len()}),
        &hash,
    )?;
    manifest.write_file(&dir, "convergence.csv", report.to_csv().as_bytes())?;
    let mh = finish(manifest, &dir)?;
    for (n, e) in report.schedule.iter().zip(&report.errors) {
        println!("n={n} e_n={e:e}");
    }
    match report.slope {
        Some(s) => println!("slope={s:.4}"),
        None => println!("slope=undefined"),
    }
    println!("manifest={mh}");
    Ok(())
}
