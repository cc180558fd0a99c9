use std::hint::black_box;

use bobw_core::pm::{analyze, game::apple_tasting, ExoOptions, ExoSolver, LocalConfig, LocalPmLearner};
use bobw_core::{ftrl, ActionSet, FtrlProblem, Potential, Predictor, Region, SemiBanditConfig, SemiBanditLearner};
use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn regularizers(c: &mut Criterion) {
    let phi = Potential::hybrid_local(11.5);
    c.bench_function("hybrid stability", |b| {
        b.iter(|| phi.stability(black_box(0.3), black_box(-2.5)).unwrap())
    });
    c.bench_function("hybrid grad inverse", |b| b.iter(|| phi.grad_inverse(black_box(3.7)).unwrap()));
}

fn ftrl_solve(c: &mut Criterion) {
    let problem = FtrlProblem {
        linear: vec![10.0, 40.0, 12.0, 55.0, 3.0],
        weights: vec![2.0, 3.0, 2.5, 1.5, 4.0],
        potential: Potential::hybrid_lbinfv(12.0),
        region: Region::MSetBox { m: 2 },
    };
    c.bench_function("ftrl m-set d=5", |b| b.iter(|| ftrl::solve(black_box(&problem)).unwrap()));
}

fn semibandit_round(c: &mut Criterion) {
    let config = SemiBanditConfig {
        d: 5,
        action_set: ActionSet::MSet { m: 2 },
        horizon: 1_000_000,
        epsilon: 0.5,
        predictor: Predictor::LeastSquares,
    };
    let mut learner = SemiBanditLearner::new(config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let means = [0.3, 0.3, 0.5, 0.5, 0.5];
    c.bench_function("lbinfv round", |b| {
        b.iter(|| {
            let losses: Vec<f64> = means.iter().map(|&m| f64::from(u8::from(rng.random::<f64>() < m))).collect();
            learner.step(&losses, &mut rng).unwrap()
        })
    });
}

fn pm(c: &mut Criterion) {
    let game = apple_tasting();
    let analysis = analyze(&game).unwrap();
    c.bench_function("analyze apple tasting", |b| b.iter(|| analyze(black_box(&game)).unwrap()));
    let solver = ExoSolver::new(&game, &analysis).unwrap();
    let opts = ExoOptions::default();
    c.bench_function("exo cold solve", |b| {
        b.iter(|| solver.solve(black_box(&[0.9, 0.1]), &[16.0, 20.0], 11.5, None, &opts))
    });
    let mut learner = LocalPmLearner::new(&game, &analysis, LocalConfig::new(1_000_000)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    c.bench_function("pm-local round", |b| {
        b.iter(|| {
            let x = usize::from(rng.random::<f64>() < 0.7);
            learner.step(&mut rng, |a| game.feedback(a, x)).unwrap()
        })
    });
}

criterion_group!(benches, regularizers, ftrl_solve, semibandit_round, pm);
criterion_main!(benches);
