use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use debias_core::*;

fn bench_riesz_fits(c: &mut Criterion) {
    let ds = DgpSpec::ate_logistic(1).sample(2000).unwrap();
    let split = BasisSpec::treatment_split(ds.q(), 1).unwrap();
    let zb = BasisSpec::raw_plus_intercept(ds.q(), false).unwrap();
    let functional = TargetFunctional::Ate;

    c.bench_function("riesz closed-form ls (n=2000, p=12)", |b| {
        b.iter(|| fit_riesz_ls_closed_form(black_box(&ds), &functional, &split, 0.0).unwrap())
    });

    let model = RieszModel::InvPropensityLogistic { basis: zb };
    c.bench_function("riesz bfgs logistic kl (n=2000)", |b| {
        b.iter(|| {
            fit_riesz_bregman(
                black_box(&ds),
                &functional,
                &model,
                ConvexGenerator::Kl,
                None,
                0.0,
                SolverSettings::default(),
            )
            .unwrap()
        })
    });
}

fn bench_estimate(c: &mut Criterion) {
    let ds = DgpSpec::ate_logistic(2).sample(2000).unwrap();
    let config = EstimatorConfig {
        functional: FunctionalKind::Ate,
        gamma_basis: BasisSpec::treatment_split(ds.q(), 1).unwrap(),
        riesz_model: RieszModel::LinearInBasis {
            basis: BasisSpec::treatment_split(ds.q(), 1).unwrap(),
        },
        generator: ConvexGenerator::Ls,
        weighted: false,
        ridge: 0.0,
        tmle: false,
        iterations: 0,
        solver: SolverSettings::default(),
    };
    c.bench_function("estimate 5-fold crossfit (n=2000)", |b| {
        b.iter_batched(
            || CrossFitPlan::stratified(&ds, 5, 7).unwrap(),
            |plan| estimate_crossfit(black_box(&ds), &config, &plan).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn bench_primitives(c: &mut Criterion) {
    let gen = ConvexGenerator::Entropy;
    c.bench_function("bregman pointwise entropy (1k pairs)", |b| {
        b.iter(|| {
            let mut acc = 0.0;
            for i in 0..1000 {
                let a0 = 1.5 + (i % 17) as f64 * 0.1;
                let a = 1.2 + (i % 13) as f64 * 0.15;
                acc += gen.bregman_pointwise(black_box(a0), black_box(a)).unwrap();
            }
            acc
        })
    });

    let basis = BasisSpec::polynomial(5, 2, true).unwrap();
    let z = ndarray::Array1::from_vec(vec![0.3, -0.2, 0.7, 0.1, -0.9]);
    c.bench_function("polynomial basis eval (p=28)", |b| {
        let mut out = vec![0.0; basis.p()];
        b.iter(|| basis.eval_into(black_box(0.4), z.view(), &mut out).unwrap())
    });
}

criterion_group!(benches, bench_riesz_fits, bench_estimate, bench_primitives);
criterion_main!(benches);
