use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DVector;
use zo_bilevel::problems::random_problem;
use zo_bilevel::rng::{stream, Phase};
use zo_bilevel::smoothing::{est_grad_x, est_grad_y, est_hess_xy, est_hess_yy_action};
use zo_bilevel::szhia::{mean_square_gamma, run_szhia};
use zo_bilevel::verify::{rate_fixture, rate_run_config};
use zo_bilevel::zdsba::run_zdsba;
use zo_bilevel::{BlockPoint, NoiseModel, Regime, SmoothingParams, SzhiaConfig};

const BATCH: usize = 1000;

fn estimators(c: &mut Criterion) {
    let mut g = c.benchmark_group("estimators");
    for d in [2usize, 8, 32] {
        let prob = random_problem(d, d, 1.0, NoiseModel::LinearTerm { sigma: 0.1 }, 1).unwrap();
        let point = BlockPoint::new(DVector::from_element(d, 0.3), DVector::from_element(d, -0.2)).unwrap();
        let z = DVector::from_element(d, 1.0);
        let upper = prob.upper();
        let lower = prob.lower();
        g.bench_with_input(BenchmarkId::new("grad_x", d), &d, |b, _| {
            let mut rng = stream(1, Phase::Verify, 0);
            b.iter(|| est_grad_x(&upper, black_box(&point), 1e-3, 1e-3, &mut rng, BATCH).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("grad_y", d), &d, |b, _| {
            let mut rng = stream(1, Phase::Verify, 1);
            b.iter(|| est_grad_y(&lower, black_box(&point), 1e-3, 1e-3, &mut rng, BATCH).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("hess_xy", d), &d, |b, _| {
            let mut rng = stream(1, Phase::Verify, 2);
            b.iter(|| est_hess_xy(&lower, black_box(&point), 1e-3, 1e-3, &mut rng, BATCH).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("hess_yy_action", d), &d, |b, _| {
            let mut rng = stream(1, Phase::Verify, 3);
            b.iter(|| est_hess_yy_action(&lower, black_box(&point), 1e-3, 1e-3, &z, &mut rng, BATCH).unwrap())
        });
    }
    g.finish();
}

fn szhia(c: &mut Criterion) {
    let mut g = c.benchmark_group("szhia");
    for m in [2usize, 8, 32] {
        let prob = random_problem(2, m, 1.0, NoiseModel::LinearTerm { sigma: 0.1 }, 2).unwrap();
        let constants = prob.constants(1.0);
        let gamma = mean_square_gamma(constants.lambda_g, constants.l1_g, m);
        let params = SmoothingParams::for_budget(2, m, 100);
        let cfg = SzhiaConfig::new(gamma, 200);
        let (x, y) = (DVector::zeros(2), DVector::zeros(m));
        g.bench_with_input(BenchmarkId::new("200 steps", m), &m, |b, _| {
            let mut rng = stream(2, Phase::Szhia, 0);
            b.iter(|| run_szhia(&prob.upper(), &prob.lower(), &x, &y, &params, &cfg, &constants, &mut rng).unwrap())
        });
    }
    g.finish();
}

fn zdsba(c: &mut Criterion) {
    let mut g = c.benchmark_group("zdsba");
    g.sample_size(10);
    for regime in Regime::ALL {
        let fx = rate_fixture(regime, 2, 2, 1.0, 0.1, 3).unwrap();
        let cfg = rate_run_config(&fx, 100, None).unwrap();
        g.bench_function(BenchmarkId::new("N=100", regime), |b| b.iter(|| run_zdsba(&fx.problem, &cfg, black_box(7)).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, estimators, szhia, zdsba);
criterion_main!(benches);
