use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use mfe_core::dp::{Belief, DpProblem, GridSpec};
use mfe_core::market::{LoanModel, MarketParams};
use mfe_core::mfe::{budget_kernel, stationary_distribution};
use mfe_core::sim::{step, Population};

fn bank() -> DpProblem {
    DpProblem::new(MarketParams::default(), LoanModel::Bank, GridSpec::default()).unwrap()
}

fn value_iteration(c: &mut Criterion) {
    let dp = bank();
    let z = Belief::new(0.16).unwrap();
    c.bench_function("value_iterate bank z=0.16", |b| b.iter(|| dp.value_iterate(z, 1e-8, 1_000_000).unwrap()));
}

fn stationary(c: &mut Criterion) {
    let dp = bank();
    let z = Belief::new(0.16).unwrap();
    let v = dp.value_iterate(z, 1e-8, 1_000_000).unwrap().value;
    let policy = dp.extract_client_policy(&v);
    let kernel = budget_kernel(&dp, z, &policy).unwrap();
    c.bench_function("stationary_distribution bank", |b| b.iter(|| stationary_distribution(&kernel).unwrap()));
}

fn sim_step(c: &mut Criterion) {
    let dp = bank();
    let z = Belief::new(0.16).unwrap();
    let v = dp.value_iterate(z, 1e-8, 1_000_000).unwrap().value;
    let policy = dp.extract_client_policy(&v);
    let params = MarketParams::default();
    let pop = Population::sample(1, 100_000, &params.psi);
    c.bench_function("sim step 1e5 agents", |b| {
        b.iter_batched(
            || pop.clone(),
            |mut p| step(&mut p, &policy, &params, LoanModel::Bank).unwrap(),
            BatchSize::LargeInput,
        )
    });
}

criterion_group!(benches, value_iteration, stationary, sim_step);
criterion_main!(benches);
