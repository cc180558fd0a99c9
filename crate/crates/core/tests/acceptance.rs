//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. `ACCEPTANCE_ONLY=1,4` restricts the run.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use bobw_core::env::{PmEnvSpec, SbEnvSpec};
use bobw_core::ftrl;
use bobw_core::harness::{self, ExperimentConfig, GrowthModel, RunArtifact};
use bobw_core::pm::exo::lemma_bound;
use bobw_core::pm::{analyze, exo_objective, ExoOptions, ExoSolver, Observability, PmGame};
use bobw_core::semibandit::{decompose, estimate_loss};
use bobw_core::{ActionSet, FtrlProblem, Potential, Region};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn workers() -> usize {
    harness::resolve_workers(None).unwrap_or(1)
}

fn run_config(json: &str) -> RunArtifact {
    let cfg = ExperimentConfig::from_json(json).expect("valid config");
    harness::run(&cfg, Path::new("."), workers()).expect("run succeeds").0
}

// ---------------------------------------------------------------- oracles

/// Direct `D(y, x) = phi(y) - phi(x) - phi'(x)(y - x)` for the three
/// component potentials on their natural domains.
fn component_bregman(kind: usize, y: f64, x: f64) -> f64 {
    let (phi, dphi): (fn(f64) -> f64, fn(f64) -> f64) = match kind {
        0 => (|v| (1.0 - v) * (1.0 - v).ln(), |v| -(1.0 - v).ln() - 1.0),
        1 => (|v| -v.ln(), |v| -1.0 / v),
        _ => (|v| -(1.0 - v).ln(), |v| 1.0 / (1.0 - v)),
    };
    phi(y) - phi(x) - dphi(x) * (y - x)
}

/// `max_y a(x - y) - D(y, x)` by a coarse grid over the domain followed by
/// two finer grids around the incumbent.
fn grid_stability(kind: usize, x: f64, a: f64) -> f64 {
    let f = |y: f64| a * (x - y) - component_bregman(kind, y, x);
    let (mut lo, mut hi) = match kind {
        1 => (1e-9, 60.0),
        _ => (-60.0, 1.0 - 1e-12),
    };
    let mut best = f64::NEG_INFINITY;
    for _ in 0..3 {
        let n = 20_000;
        let h = (hi - lo) / n as f64;
        let mut arg = lo;
        for i in 0..=n {
            let y = lo + h * i as f64;
            let v = f(y);
            if v > best {
                best = v;
                arg = y;
            }
        }
        lo = (arg - 2.0 * h).max(lo);
        hi = (arg + 2.0 * h).min(hi);
    }
    best
}

fn xi(x: f64) -> f64 {
    (-x).exp() + x - 1.0
}

fn zeta(x: f64) -> f64 {
    x - (1.0 + x).ln()
}

fn criterion_1() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pots = [Potential::comp_neg_shannon(), Potential::log_barrier(), Potential::comp_log_barrier()];
    let (mut closed_err, mut grid_err) = (0.0f64, 0.0f64);
    for kind in 0..3 {
        for _ in 0..1000 {
            let q: f64 = rng.random_range(0.01..0.99);
            let z: f64 = match kind {
                0 => rng.random_range(-5.0..3.0),
                1 => rng.random_range(-0.95 / q..5.0),
                _ => rng.random_range(-5.0..0.95 / (1.0 - q)),
            };
            let closed = match kind {
                0 => (1.0 - q) * xi(-z),
                1 => zeta(z * q),
                _ => zeta(-z * (1.0 - q)),
            };
            let got = pots[kind].stability(q, z).expect("finite stability");
            let scale = closed.abs().max(1.0);
            closed_err = closed_err.max((got - closed).abs() / scale);
            grid_err = grid_err.max((got - grid_stability(kind, q, z)).abs() / scale);
        }
    }
    verdict(
        closed_err <= 1e-6 && grid_err <= 1e-5,
        format!("closed-form err {closed_err:.2e} (tol 1e-6), grid err {grid_err:.2e} (tol 1e-5)"),
    )
}

fn criterion_2() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let gamma = rng.random_range(2.0..14.0);
        let potential = match i % 3 {
            0 => Potential::hybrid_lbinfv(gamma),
            1 => Potential::hybrid_local(gamma),
            _ => Potential::barrier_pair(),
        };
        let linear = vec![rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)];
        let weights = vec![rng.random_range(0.5..20.0), rng.random_range(0.5..20.0)];
        let region = if i % 2 == 0 {
            Region::full_simplex(2)
        } else {
            Region::MSetBox { m: 1 }
        };
        let problem = FtrlProblem {
            linear: linear.clone(),
            weights: weights.clone(),
            potential,
            region,
        };
        let sol = ftrl::solve(&problem).expect("solvable");
        let obj = |u: f64| {
            let v = [u, 1.0 - u];
            (0..2)
                .map(|a| linear[a] * v[a] + weights[a] * potential.eval(v[a]).unwrap())
                .sum::<f64>()
        };
        let n = 1_000_000;
        let (mut best, mut arg) = (f64::INFINITY, 0.0);
        for j in 1..n {
            let u = j as f64 / n as f64;
            let v = obj(u);
            if v < best {
                best = v;
                arg = u;
            }
        }
        worst = worst.max((sol.point[0] - arg).abs());
    }
    verdict(worst <= 1e-5, format!("max argmin gap {worst:.2e} over 100 instances (tol 1e-5)"))
}

// ---------------------------------------------------------------- random games

/// Random locally observable games with at least two Pareto actions.
fn random_local_games(count: usize, seed: u64) -> Vec<PmGame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < count {
        let k = rng.random_range(2..=4usize);
        let d = rng.random_range(2..=4usize);
        let loss: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..d).map(|_| f64::from(rng.random_range(0..=20u8)) / 20.0).collect())
            .collect();
        let alphabet = rng.random_range(1..=3u8);
        let feedback: Vec<Vec<String>> = (0..k)
            .map(|_| (0..d).map(|_| format!("s{}", rng.random_range(0..alphabet))).collect())
            .collect();
        let Ok(game) = PmGame::new(loss, feedback) else { continue };
        let Ok(analysis) = analyze(&game) else { continue };
        if analysis.observability == Observability::Locally && analysis.pareto.len() >= 2 {
            out.push(game);
        }
    }
    out
}

fn random_q(rng: &mut ChaCha8Rng, k: usize, pareto: &[usize]) -> Vec<f64> {
    let spread = [0.3, 1.0, 4.0, 12.0][rng.random_range(0..4)];
    let mut q = vec![0.0; k];
    for &a in pareto {
        q[a] = (-spread * rng.random::<f64>() * 3.0).exp();
    }
    let s: f64 = q.iter().sum();
    q.iter_mut().for_each(|v| *v /= s);
    q
}

fn criterion_3() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // Semi-bandit: exact expectation of the estimator over the sampled action.
    let mut sb_res = 0.0f64;
    for i in 0..200 {
        let d = 2 + i % 3;
        let m = 1 + rng.random_range(0..d - 1);
        let set = ActionSet::MSet { m };
        // the uniform point mixed with a random convex combination of m-subsets
        let weights: Vec<f64> = (0..5).map(|_| rng.random_range(0.1..1.0)).collect();
        let uniform = rng.random_range(0.01..0.5);
        let total: f64 = weights.iter().sum::<f64>() / (1.0 - uniform);
        let mut x = vec![uniform * m as f64 / d as f64; d];
        for w in &weights {
            let mut idx: Vec<usize> = (0..d).collect();
            for j in 0..m {
                let r = rng.random_range(j..d);
                idx.swap(j, r);
                x[idx[j]] += w / total;
            }
        }
        let dec = decompose(&x, &set).expect("x in hull");
        let pred: Vec<f64> = (0..d).map(|_| rng.random()).collect();
        let losses: Vec<f64> = (0..d).map(|_| rng.random()).collect();
        let mut mean = vec![0.0; d];
        for (w, action) in &dec.atoms {
            let est = estimate_loss(&pred, &x, action, &losses).unwrap();
            for j in 0..d {
                mean[j] += w * est[j];
            }
        }
        for j in 0..d {
            sb_res = sb_res.max((mean[j] - losses[j]).abs());
        }
    }
    // Partial monitoring: Pareto differences of the estimate are exact.
    let mut pm_res = 0.0f64;
    for game in random_local_games(30, 33) {
        let an = analyze(&game).unwrap();
        let solver = ExoSolver::new(&game, &an).unwrap();
        let k = game.k();
        for _ in 0..5 {
            let q = random_q(&mut rng, k, &an.pareto);
            let c: Vec<f64> = (0..solver.basis_len()).map(|_| rng.random_range(-2.0..2.0)).collect();
            let p = q.clone();
            for x in 0..game.d() {
                let mut mean = vec![0.0; k];
                for &a in &an.pareto {
                    let col = solver.estimate_column(&c, a, game.feedback(a, x));
                    for b in 0..k {
                        mean[b] += p[a] * col[b] / p[a];
                    }
                }
                for &a in &an.pareto {
                    for &b in &an.pareto {
                        let want = game.loss(a, x) - game.loss(b, x);
                        pm_res = pm_res.max((mean[a] - mean[b] - want).abs());
                    }
                }
            }
        }
    }
    verdict(
        sb_res <= 1e-12 && pm_res <= 1e-9,
        format!("semi-bandit residual {sb_res:.2e} (tol 1e-12), PM residual {pm_res:.2e} (tol 1e-9)"),
    )
}

fn criterion_4() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let opts = ExoOptions::default();
    let mut worst = f64::NEG_INFINITY;
    let mut fallbacks = 0;
    for game in random_local_games(50, 44) {
        let an = analyze(&game).unwrap();
        let solver = ExoSolver::new(&game, &an).unwrap();
        let k = game.k();
        let mk = (an.m * k) as f64;
        for _ in 0..20 {
            let q = random_q(&mut rng, k, &an.pareto);
            let beta: Vec<f64> = (0..k).map(|_| 4.0 * mk * rng.random_range(1.0..4.0)).collect();
            let gamma = rng.random_range(2.0..14.0);
            let sol = solver.solve(&q, &beta, gamma, None, &opts);
            fallbacks += usize::from(sol.fallback);
            let value = exo_objective(&game, &sol.p, &solver.estimation_function(&sol.g_coeffs), &q, &beta, gamma);
            let bound = lemma_bound(an.m, k, &q, &beta, gamma);
            worst = worst.max(value - bound);
        }
    }
    verdict(
        worst <= 1e-3,
        format!("max(value - bound) = {worst:.3e} (tol 1e-3) over 1000 solves, {fallbacks} baseline fallbacks"),
    )
}

// ---------------------------------------------------------------- simulations

const APPLE: &str = r#"{"loss": [[1, 0], [0, 1]], "feedback": [["a", "a"], ["b", "c"]]}"#;
const GLOBAL_ONLY: &str = r#"{"loss": [[0, 1], [1, 0], [1, 1]], "feedback": [["a", "a"], ["a", "a"], ["b", "c"]]}"#;

fn pm_config(algorithm: &str, game: &str, env: &PmEnvSpec, horizon: u64, reps: u32, seed: u64) -> String {
    format!(
        r#"{{"algorithm": {{"kind": "{algorithm}"}},
            "problem": {{"protocol": "partial_monitoring", "game": {game}, "environment": {}}},
            "horizon": {horizon}, "replications": {reps}, "base_seed": {seed}}}"#,
        serde_json::to_string(env).unwrap()
    )
}

fn apple_stochastic() -> &'static RunArtifact {
    static RUN: OnceLock<RunArtifact> = OnceLock::new();
    RUN.get_or_init(|| {
        let env = PmEnvSpec::Stochastic { nu: vec![0.3, 0.7] };
        run_config(&pm_config("pm_local", APPLE, &env, 100_000, 20, 600))
    })
}

fn quotient(art: &RunArtifact, model: GrowthModel) -> f64 {
    art.slope_check(model).unwrap().quotient_quarter.expect("T/4 on the grid")
}

fn final_mean(art: &RunArtifact) -> f64 {
    art.aggregate.last().unwrap().mean
}

fn criterion_5() -> Verdict {
    let env = SbEnvSpec::Stochastic {
        means: vec![0.3, 0.3, 0.5, 0.5, 0.5],
        law: bobw_core::env::LossLaw::Bernoulli,
    };
    let json = format!(
        r#"{{"algorithm": {{"kind": "lbinfv_ls"}},
            "problem": {{"protocol": "semi_bandit", "d": 5, "action_set": {{"kind": "m_set", "m": 2}}, "environment": {}}},
            "horizon": 200000, "replications": 20, "base_seed": 500}}"#,
        serde_json::to_string(&env).unwrap()
    );
    let art = run_config(&json);
    let q = quotient(&art, GrowthModel::LogT);
    verdict(
        (0.6..=1.5).contains(&q),
        format!("LBINFV-LS quotient {q:.3} in [0.6, 1.5], mean R(T) = {:.1}", final_mean(&art)),
    )
}

fn criterion_6() -> Verdict {
    let local = apple_stochastic();
    let ql = quotient(local, GrowthModel::LogT);
    let env = PmEnvSpec::Stochastic { nu: vec![0.3, 0.7] };
    let global = run_config(&pm_config("pm_global", GLOBAL_ONLY, &env, 100_000, 20, 610));
    let qg = quotient(&global, GrowthModel::LogT);
    verdict(
        (0.6..=1.5).contains(&ql) && (0.5..=2.0).contains(&qg),
        format!(
            "PM-Local quotient {ql:.3} in [0.6, 1.5] (R(T) = {:.1}, {} ExO fallbacks); PM-Global quotient {qg:.3} in [0.5, 2.0] (R(T) = {:.1}, {} gamma clamps)",
            final_mean(local),
            local.diagnostics.exo_fallbacks,
            final_mean(&global),
            global.diagnostics.gamma_clamps
        ),
    )
}

fn criterion_7() -> Verdict {
    let env = PmEnvSpec::Adversarial {
        pattern: vec![0, 1],
        block: 1,
    };
    let local = run_config(&pm_config("pm_local", APPLE, &env, 100_000, 4, 700));
    let ql = quotient(&local, GrowthModel::SqrtTLogT);
    let global = run_config(&pm_config("pm_global", GLOBAL_ONLY, &env, 100_000, 20, 710));
    let qg = quotient(&global, GrowthModel::T23);
    verdict(
        (0.5..=2.0).contains(&ql) && (0.5..=2.0).contains(&qg),
        format!(
            "PM-Local R/sqrt(T log T) quotient {ql:.3} (R(T) = {:.2}); PM-Global R/T^(2/3) quotient {qg:.3} (R(T) = {:.1}); window [0.5, 2]",
            final_mean(&local),
            final_mean(&global)
        ),
    )
}

fn criterion_8() -> Verdict {
    let budget = 500.0;
    let env = PmEnvSpec::Corrupted {
        nu: vec![0.3, 0.7],
        corruption: bobw_core::env::PmCorruption::FlipToWorst,
        budget,
    };
    let corrupted = run_config(&pm_config("pm_local", APPLE, &env, 100_000, 4, 800));
    let clean = final_mean(apple_stochastic());
    let limit = 4.0 * clean + budget;
    let got = final_mean(&corrupted);
    let worst = corrupted.replications.iter().map(|r| r.final_regret).fold(0.0, f64::max);
    verdict(
        got <= limit,
        format!(
            "mean R(T) with C = 500: {got:.1} (worst replication {worst:.1}) <= 4 x {clean:.1} + 500 = {limit:.1}; corruption spent {:.1}",
            corrupted.diagnostics.corruption_used
        ),
    )
}

fn criterion_9() -> Verdict {
    let configs = [
        pm_config("pm_local", APPLE, &PmEnvSpec::Stochastic { nu: vec![0.3, 0.7] }, 3000, 3, 9),
        pm_config(
            "pm_global",
            GLOBAL_ONLY,
            &PmEnvSpec::Corrupted {
                nu: vec![0.3, 0.7],
                corruption: bobw_core::env::PmCorruption::FlipToWorst,
                budget: 50.0,
            },
            3000,
            3,
            9,
        ),
        r#"{"algorithm": {"kind": "lbinfv_gd", "eta": 0.25},
            "problem": {"protocol": "semi_bandit", "d": 4, "action_set": {"kind": "m_set", "m": 2},
                        "environment": {"regime": "adversarial", "pattern": [[1, 0, 0.5, 0], [0, 1, 0.5, 1]], "block": 7}},
            "horizon": 3000, "replications": 3, "base_seed": 9}"#
            .to_string(),
    ];
    let mut identical = true;
    for json in &configs {
        let cfg = ExperimentConfig::from_json(json).unwrap();
        let a = harness::run(&cfg, Path::new("."), 1).unwrap().0.to_json();
        let b = harness::run(&cfg, Path::new("."), 3).unwrap().0.to_json();
        let c = harness::run(&cfg, Path::new("."), 1).unwrap().0.to_json();
        identical &= a == b && a == c;
    }
    verdict(identical, format!("{} configs rerun with 1 and 3 workers, byte-identical: {identical}", configs.len()))
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let criteria: [(usize, &str, fn() -> Verdict, Duration); 9] = [
        (1, "regularizer stability oracles", criterion_1, Duration::from_secs(5)),
        (2, "FTRL grid oracle", criterion_2, Duration::from_secs(30)),
        (3, "estimator unbiasedness", criterion_3, Duration::from_secs(5)),
        (4, "ExO value bound", criterion_4, Duration::from_secs(300)),
        (5, "semi-bandit stochastic log growth", criterion_5, Duration::from_secs(600)),
        (6, "PM stochastic log growth", criterion_6, Duration::from_secs(1800)),
        (7, "PM adversarial growth", criterion_7, Duration::from_secs(1800)),
        (8, "corruption robustness", criterion_8, Duration::from_secs(900)),
        (9, "determinism", criterion_9, Duration::from_secs(60)),
    ];
    let mut failures = 0;
    for (id, name, f, budget) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let in_time = elapsed <= budget;
        let pass = v.pass && in_time;
        failures += usize::from(!pass);
        println!(
            "criterion {id} ({name}): {} -- {}; {:.1}s of {}s budget",
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
