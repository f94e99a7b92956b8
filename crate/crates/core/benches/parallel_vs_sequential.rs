use std::hint::black_box;
use std::path::Path;

use criterion::{criterion_group, criterion_main, Criterion};
use lrq_core::assign::{build_gap_model, SeedMode};
use lrq_core::dual::{dual_value, full_subproblems, DualState, LAMBDA_MAX, LAMBDA_MIN};
use lrq_core::primal::{reconstruct, repair, CompletionOrder, CostTable};
use lrq_core::qubo::{encode, PenaltyConfig};
use lrq_core::subsolve::{sample_noisy, solve_exact, SamplerConfig};
use lrq_core::{Execution, Instance};

fn load() -> Instance {
    Instance::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/instances/M-n151-k12.vrp")).unwrap()
}

fn bench(c: &mut Criterion) {
    let inst = load();
    let model = build_gap_model(&inst, SeedMode::Angular).unwrap();
    let state = DualState::new(&model, (LAMBDA_MIN, LAMBDA_MAX));
    let subs = full_subproblems(&model, &inst, &state.lambda);
    let sampler = SamplerConfig { shots: 64, sweeps: 50, ..Default::default() };

    let mut g = c.benchmark_group("dual_exact");
    for exec in [Execution::Sequential, Execution::Parallel] {
        g.bench_function(format!("{exec:?}"), |b| {
            b.iter(|| {
                dual_value(&subs, &state.lambda, exec, |s| solve_exact(s).map(|k| k.selection)).unwrap()
            })
        });
    }
    g.finish();

    let qubos: Vec<_> = subs.iter().take(4).map(|s| encode(s, &PenaltyConfig::default())).collect();
    let mut g = c.benchmark_group("sampler");
    g.sample_size(10);
    for exec in [Execution::Sequential, Execution::Parallel] {
        g.bench_function(format!("{exec:?}"), |b| {
            b.iter(|| {
                for q in &qubos {
                    black_box(sample_noisy(black_box(q), &sampler, exec));
                }
            })
        });
    }
    g.finish();

    let eval = dual_value(&subs, &state.lambda, Execution::Sequential, |s| solve_exact(s).map(|k| k.selection)).unwrap();
    let costs = CostTable::reduced(&model, &state.lambda);
    let assignment = repair(&eval.selections, &costs, &inst, CompletionOrder::DecreasingDemand).unwrap();
    let mut g = c.benchmark_group("reconstruct");
    for exec in [Execution::Sequential, Execution::Parallel] {
        g.bench_function(format!("{exec:?}"), |b| b.iter(|| reconstruct(black_box(&assignment), &inst, exec)));
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
