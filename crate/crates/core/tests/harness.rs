use fdi_core::harness::{
    convergence_diagnostic, generate_scenarios, log_log_slope, train, training_payoffs, ConvergenceSpec, ScenarioSpec,
    TrainOptions,
};
use fdi_core::power::{LoadDisturbanceParams, PowerSystemConfig};
use fdi_core::signature::GramMode;
use fdi_core::{Error, FilterSpec, Payoff, Perspective, Plant, ScenarioSet};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_filter() -> FilterSpec {
    FilterSpec {
        d_n: 2,
        root: 2.0,
        multiplicity: 3,
        k: 16,
        horizon: 3.0,
        gram: GramMode::Periodic,
        ..FilterSpec::default()
    }
}

fn desk() -> Plant {
    Plant::two_area(&PowerSystemConfig::desk_scale()).unwrap()
}

fn scenarios(plant: &Plant, draws: usize, load: LoadDisturbanceParams, seed: u64) -> ScenarioSet {
    let mut spec = ScenarioSpec::per_node(plant.ode.n_d(), draws, load);
    spec.dt = 2e-3;
    generate_scenarios(plant, &spec, &small_filter(), seed, "test").unwrap()
}

#[test]
fn scenario_count_is_nodes_times_draws() {
    let plant = desk();
    let set = scenarios(&plant, 2, LoadDisturbanceParams::default(), 3);
    assert_eq!(set.len(), plant.ode.n_d() * 2);
    assert!(set.skipped.is_empty());
    for (i, e) in set.entries.iter().enumerate() {
        assert_eq!(e.id, i);
        assert_eq!(e.nodes, vec![i / 2]);
        assert!(e.bound.is_some());
    }
}

#[test]
fn same_seed_same_bytes() {
    let plant = desk();
    let a = scenarios(&plant, 1, LoadDisturbanceParams::default(), 11);
    let b = scenarios(&plant, 1, LoadDisturbanceParams::default(), 11);
    let c = scenarios(&plant, 1, LoadDisturbanceParams::default(), 12);
    assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
    assert_ne!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&c).unwrap());
}

#[test]
fn quiet_load_gives_zero_signature() {
    let quiet = LoadDisturbanceParams {
        offset: (0.0, 0.0),
        amplitude: (0.0, 0.0),
        harmonics: (0, 0),
        ..LoadDisturbanceParams::default()
    };
    let set = scenarios(&desk(), 1, quiet, 5);
    for q in set.matrices() {
        assert!(q.amax() < 1e-12, "{}", q.amax());
    }
}

#[test]
fn save_load_round_trip() {
    let set = scenarios(&desk(), 1, LoadDisturbanceParams::default(), 8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("set.json");
    set.save(&path).unwrap();
    let back = ScenarioSet::load(&path).unwrap();
    assert_eq!(serde_json::to_vec(&set).unwrap(), serde_json::to_vec(&back).unwrap());
}

#[test]
fn training_certificates_hold() {
    let plant = desk();
    let set = scenarios(&plant, 2, LoadDisturbanceParams::default(), 21);
    let ap = train(&plant.model, &set, &TrainOptions::default()).unwrap();
    let cp = train(
        &plant.model,
        &set,
        &TrainOptions {
            perspective: Perspective::Chance,
            ..TrainOptions::default()
        },
    )
    .unwrap();
    let (ap_g, cp_g) = (ap.gamma_star.unwrap(), cp.gamma_star.unwrap());
    let (mean, _) = training_payoffs(&set, &ap);
    let (_, max) = training_payoffs(&set, &cp);
    let slack = 1e-6 * set.matrices().iter().map(|q| q.trace()).fold(0.0, f64::max);
    assert!(mean <= ap_g * (1.0 + 1e-6) + slack, "{mean} > {ap_g}");
    assert!(max <= cp_g * (1.0 + 1e-6) + slack, "{max} > {cp_g}");
    assert!(cp_g + slack >= ap_g);
}

#[test]
fn chance_training_refuses_short_sets() {
    let plant = desk();
    let set = scenarios(&plant, 1, LoadDisturbanceParams::default(), 2);
    let opts = TrainOptions {
        perspective: Perspective::Chance,
        certificate: Some((0.1, 0.01)),
        ..TrainOptions::default()
    };
    match train(&plant.model, &set, &opts) {
        Err(Error::InsufficientScenarios { have, required }) => {
            assert_eq!(have, 3);
            assert!(required > 3);
        }
        other => panic!("expected refusal, got {other:?}"),
    }
    let forced = train(
        &plant.model,
        &set,
        &TrainOptions {
            allow_insufficient: true,
            ..opts
        },
    )
    .unwrap();
    let cert = forced.certificate.unwrap();
    assert_eq!(cert.supplied, 3);
    assert_eq!((cert.epsilon, cert.beta), (0.1, 0.01));
}

#[test]
fn chance_training_rejects_linear_payoff() {
    let plant = desk();
    let set = scenarios(&plant, 1, LoadDisturbanceParams::default(), 2);
    let opts = TrainOptions {
        perspective: Perspective::Chance,
        payoff: Payoff::Linear,
        ..TrainOptions::default()
    };
    assert!(matches!(
        train(&plant.model, &set, &opts),
        Err(Error::UnsupportedPayoff(_))
    ));
}

#[test]
fn iid_pool_error_decays() {
    // rank-one Q = v v^T with v uniform: payoffs are iid with finite variance
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pool: Vec<DMatrix<f64>> = (0..400)
        .map(|_| {
            let v = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
            &v * v.transpose()
        })
        .collect();
    let spec = ConvergenceSpec {
        schedule: vec![10, 20, 40, 80, 160],
        directions: 32,
        replicates: 40,
    };
    let r = convergence_diagnostic(&pool, None, &spec, 9).unwrap();
    let slope = r.slope.unwrap();
    assert!((-0.8..=-0.3).contains(&slope), "slope {slope}");
}

#[test]
fn slope_of_exact_power_law() {
    let n = [10, 20, 40, 80];
    let e: Vec<f64> = n.iter().map(|&v| 3.0 * (v as f64).powf(-0.5)).collect();
    assert!((log_log_slope(&n, &e).unwrap() + 0.5).abs() < 1e-12);
    assert!(log_log_slope(&n, &[1.0, 0.0, 1.0, 1.0]).is_none());
}

#[test]
fn bad_convergence_inputs() {
    let pool = vec![DMatrix::identity(2, 2)];
    let bad = ConvergenceSpec {
        schedule: vec![20, 10],
        ..ConvergenceSpec::default()
    };
    assert!(convergence_diagnostic(&pool, None, &bad, 0).is_err());
    assert!(convergence_diagnostic(&[], None, &ConvergenceSpec::default(), 0).is_err());
}
