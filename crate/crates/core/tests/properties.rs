use bobw_core::pm::game::apple_tasting;
use bobw_core::pm::{analyze, ExoSolver, PmGame};
use bobw_core::semibandit::{decompose, ActionSet};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn game_strategy() -> impl Strategy<Value = PmGame> {
    (2usize..=4, 2usize..=3)
        .prop_flat_map(|(k, d)| {
            (
                prop::collection::vec(prop::collection::vec(0u8..=2, d), k),
                prop::collection::vec(prop::collection::vec(0u8..=2, d), k),
            )
        })
        .prop_filter_map("valid game", |(loss, fb)| {
            let loss = loss
                .into_iter()
                .map(|r| r.into_iter().map(|v| f64::from(v) / 2.0).collect())
                .collect();
            let fb = fb
                .into_iter()
                .map(|r| r.into_iter().map(|s| ["a", "b", "c"][s as usize].to_string()).collect())
                .collect();
            PmGame::new(loss, fb).ok()
        })
}

fn permute(game: &PmGame, actions: &[usize], outcomes: &[usize]) -> PmGame {
    let names = game.symbols();
    let loss = actions
        .iter()
        .map(|&a| outcomes.iter().map(|&x| game.loss(a, x)).collect())
        .collect();
    let fb = actions
        .iter()
        .map(|&a| outcomes.iter().map(|&x| names[game.feedback(a, x)].clone()).collect())
        .collect();
    PmGame::new(loss, fb).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn classification_is_invariant_under_relabeling(
        game in game_strategy(),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut actions: Vec<usize> = (0..game.k()).collect();
        let mut outcomes: Vec<usize> = (0..game.d()).collect();
        actions.shuffle(&mut rng);
        outcomes.shuffle(&mut rng);
        let relabeled = permute(&game, &actions, &outcomes);
        let (Ok(a), Ok(b)) = (analyze(&game), analyze(&relabeled)) else {
            prop_assert_eq!(analyze(&game).is_ok(), analyze(&relabeled).is_ok());
            return Ok(());
        };
        prop_assert_eq!(a.observability, b.observability);
        let mut pareto: Vec<usize> = b.pareto.iter().map(|&i| actions[i]).collect();
        pareto.sort();
        prop_assert_eq!(pareto, a.pareto.clone());
        let mut neighbors: Vec<[usize; 2]> = b
            .neighbors
            .iter()
            .map(|&[i, j]| {
                let (x, y) = (actions[i], actions[j]);
                [x.min(y), x.max(y)]
            })
            .collect();
        neighbors.sort();
        prop_assert_eq!(neighbors, a.neighbors.clone());
    }

    #[test]
    fn mset_decomposition_reproduces_point(
        weights in prop::collection::vec(0.01f64..1.0, 1..6),
        seed in any::<u64>(),
    ) {
        use rand::seq::index::sample;
        let (d, m) = (6, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let total: f64 = weights.iter().sum();
        let mut x = vec![0.0; d];
        for w in &weights {
            for i in sample(&mut rng, d, m) {
                x[i] += w / total;
            }
        }
        let dec = decompose(&x, &ActionSet::MSet { m }).unwrap();
        prop_assert!(dec.atoms.len() <= d + 1);
        let mass: f64 = dec.atoms.iter().map(|(w, _)| w).sum();
        prop_assert!((mass - 1.0).abs() < 1e-9);
        for (w, a) in &dec.atoms {
            prop_assert!(*w >= 0.0);
            prop_assert_eq!(a.iter().filter(|&&s| s).count(), m);
        }
        for (u, v) in dec.point(d).iter().zip(&x) {
            prop_assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn exo_objective_is_convex_along_segments(
        p0 in 0.05f64..0.95,
        p1 in 0.05f64..0.95,
        q0 in 0.05f64..0.95,
        c0 in prop::collection::vec(-0.5f64..0.5, 8),
        c1 in prop::collection::vec(-0.5f64..0.5, 8),
        gamma in 2.0f64..12.0,
    ) {
        let game = apple_tasting();
        let an = analyze(&game).unwrap();
        let solver = ExoSolver::new(&game, &an).unwrap();
        let n = solver.basis_len();
        let q = [q0, 1.0 - q0];
        let beta = [16.0, 24.0];
        let f = |p: f64, c: &[f64]| solver.objective(&[p, 1.0 - p], c, &q, &beta, gamma);
        let (ca, cb) = (&c0[..n], &c1[..n]);
        let mid: Vec<f64> = ca.iter().zip(cb).map(|(u, v)| 0.5 * (u + v)).collect();
        let (fa, fb) = (f(p0, ca), f(p1, cb));
        prop_assume!(fa.is_finite() && fb.is_finite());
        let fm = f(0.5 * (p0 + p1), &mid);
        prop_assert!(fm <= 0.5 * (fa + fb) + 1e-9 * (1.0 + fa.abs() + fb.abs()));
    }
}

#[test]
fn mset_sampling_matches_marginals() {
    let x = [0.9, 0.7, 0.2, 0.15, 0.05];
    let dec = decompose(&x, &ActionSet::MSet { m: 2 }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let draws = 100_000;
    let mut freq = [0usize; 5];
    for _ in 0..draws {
        for (f, &s) in freq.iter_mut().zip(dec.sample(&mut rng)) {
            *f += usize::from(s);
        }
    }
    for (f, xi) in freq.iter().zip(x) {
        let emp = *f as f64 / draws as f64;
        let sd = (xi * (1.0 - xi) / draws as f64).sqrt();
        assert!((emp - xi).abs() <= 5.0 * sd + 1e-12, "{emp} vs {xi}");
    }
}
