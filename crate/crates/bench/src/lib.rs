//! Fixtures shared by the benchmarks.

use fdi_core::power::{nonlinearity_signature_of, simulate, LoadProfile, LoadSignal, Trajectory, ZeroSignal};
use fdi_core::synth::SynthesisProblem;
use fdi_core::{FilterSpec, Plant, PowerSystemConfig, SampledSignal};
use nalgebra::DMatrix;

pub fn desk_plant() -> Plant {
    Plant::two_area(&PowerSystemConfig::desk_scale()).expect("desk system builds")
}

pub fn desk_problem(plant: &Plant, spec: &FilterSpec) -> SynthesisProblem {
    SynthesisProblem::from_model(&plant.model, spec.d_n, &spec.denominator()).expect("desk problem")
}

/// Fault-free run under a load step plus a slow swing at node 0.
pub fn desk_run(plant: &Plant, spec: &FilterSpec) -> Trajectory {
    let mut profile = LoadProfile::quiet(plant.ode.n_d());
    profile.nodes[0] = Some(LoadSignal {
        offset: 80.0,
        amplitudes: vec![20.0],
        omegas: vec![0.7],
        phases: vec![0.3],
        onset: 0.0,
    });
    simulate(
        &plant.ode,
        &profile,
        &ZeroSignal(plant.ode.n_f()),
        spec.horizon,
        1e-3,
        &plant.x_e,
    )
    .expect("fault-free run")
}

pub fn desk_signature(plant: &Plant, traj: &Trajectory) -> SampledSignal {
    nonlinearity_signature_of(plant, traj).expect("signature")
}

/// `n` deterministic PSD matrices of size `dim`.
pub fn psd_scenarios(dim: usize, n: usize) -> Vec<DMatrix<f64>> {
    (0..n)
        .map(|s| {
            let b = DMatrix::from_fn(dim, dim + 2, |i, j| ((1 + i * 7 + j * 13 + s * 31) as f64).sin());
            &b * b.transpose()
        })
        .collect()
}
