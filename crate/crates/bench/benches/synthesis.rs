use criterion::{criterion_group, criterion_main, Criterion};
use fdi_bench::{desk_plant, desk_problem, desk_run, desk_signature, psd_scenarios};
use fdi_core::runtime::{realize_filter, run_filter};
use fdi_core::synth::SynthesisProblem;
use fdi_core::{FilterSpec, Payoff};

fn synthesis(c: &mut Criterion) {
    let plant = desk_plant();
    let spec = FilterSpec::default();
    let mut g = c.benchmark_group("synthesis");
    g.sample_size(10);
    g.bench_function("problem_setup", |b| {
        b.iter(|| SynthesisProblem::from_model(&plant.model, spec.d_n, &spec.denominator()).unwrap())
    });
    let problem = desk_problem(&plant, &spec);
    g.bench_function("approach1", |b| b.iter(|| problem.max_sensitivity_filter().unwrap()));
    let dim = problem.numerator_len();
    for n in [10, 100] {
        let qs = psd_scenarios(dim, n);
        g.bench_function(format!("average_n{n}"), |b| {
            b.iter(|| problem.two_stage_average(&qs, Payoff::Quadratic).unwrap())
        });
        g.bench_function(format!("chance_n{n}"), |b| {
            b.iter(|| problem.two_stage_chance(&qs).unwrap())
        });
    }
    g.finish();
}

fn signature(c: &mut Criterion) {
    let plant = desk_plant();
    let spec = FilterSpec::default();
    let e = desk_signature(&plant, &desk_run(&plant, &spec));
    let engine = spec.engine().unwrap();
    let mut g = c.benchmark_group("signature");
    g.sample_size(10);
    g.bench_function("basis_k160", |b| b.iter(|| engine.signature_matrix(&e).unwrap()));
    g.bench_function("exact", |b| b.iter(|| engine.signature_matrix_exact(&e).unwrap()));
    g.finish();
}

fn runtime(c: &mut Criterion) {
    let plant = desk_plant();
    let spec = FilterSpec::default();
    let filter = desk_problem(&plant, &spec).max_sensitivity_filter().unwrap();
    let z = plant.measurement(&desk_run(&plant, &spec)).unwrap();
    let mut g = c.benchmark_group("runtime");
    g.sample_size(10);
    g.bench_function("realize", |b| {
        b.iter(|| realize_filter(&filter.filter, plant.model.l()).unwrap())
    });
    let ssf = realize_filter(&filter.filter, plant.model.l()).unwrap();
    g.bench_function("filter_10s", |b| b.iter(|| run_filter(&ssf, &z).unwrap()));
    g.finish();
}

criterion_group!(benches, synthesis, signature, runtime);
criterion_main!(benches);
