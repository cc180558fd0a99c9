//! Learner for locally observable games: hybrid-regularizer FTRL with
//! action-wise learning rates, and exploration by optimization every round.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::analysis::{GameAnalysis, Observability};
use super::exo::{ExoOptions, ExoSolution, ExoSolver};
use super::game::PmGame;
use crate::error::{Error, Result};
use crate::ftrl::{self, FtrlProblem, Region};
use crate::regularizers::Potential;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalConfig {
    pub horizon: u64,
    pub epsilon: f64,
    pub exo: ExoOptions,
}

impl LocalConfig {
    pub fn new(horizon: u64) -> Self {
        Self {
            horizon,
            epsilon: 1e-3,
            exo: ExoOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LocalRound {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub beta: Vec<f64>,
    pub action: usize,
    pub symbol: usize,
    pub y_hat: Vec<f64>,
    pub exo: ExoSolution,
}

#[derive(Debug, Clone)]
pub struct LocalPmLearner {
    config: LocalConfig,
    k: usize,
    mk: f64,
    pareto: Vec<usize>,
    solver: ExoSolver,
    gamma: f64,
    cum_y: Vec<f64>,
    cum_alpha: Vec<f64>,
    round: u64,
    last_dual: Option<f64>,
    warm: Option<ExoSolution>,
    fallbacks: u64,
    unconverged: u64,
}

impl LocalPmLearner {
    pub fn new(game: &PmGame, analysis: &GameAnalysis, config: LocalConfig) -> Result<Self> {
        if analysis.observability != Observability::Locally {
            return Err(Error::Incompatible(format!(
                "the local learner needs a locally observable game; this game is {:?}",
                analysis.observability
            )));
        }
        if config.horizon < 8 {
            return Err(Error::Config(format!(
                "horizon {} is below the minimum of 8",
                config.horizon
            )));
        }
        if !(config.epsilon > 0.0 && config.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon = {} must be positive", config.epsilon)));
        }
        let k = game.k();
        Ok(Self {
            mk: (analysis.m * k) as f64,
            pareto: analysis.pareto.clone(),
            solver: ExoSolver::new(game, analysis)?,
            gamma: (config.horizon as f64).ln(),
            cum_y: vec![0.0; k],
            cum_alpha: vec![0.0; k],
            round: 0,
            last_dual: None,
            warm: None,
            fallbacks: 0,
            unconverged: 0,
            config,
            k,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn cum_y(&self) -> &[f64] {
        &self.cum_y
    }

    pub fn fallbacks(&self) -> u64 {
        self.fallbacks
    }

    pub fn unconverged(&self) -> u64 {
        self.unconverged
    }

    pub fn solver(&self) -> &ExoSolver {
        &self.solver
    }

    /// `beta_a = max(4mk, 2mk sqrt(alpha_0 + cum_alpha_a / gamma))`.
    pub fn beta(&self) -> Vec<f64> {
        let alpha0 = self.gamma.powf(-1.5) + self.config.epsilon;
        let c = 2.0 * self.mk;
        self.cum_alpha
            .iter()
            .map(|a| (c * (alpha0 + a / self.gamma).sqrt()).max(4.0 * self.mk))
            .collect()
    }

    /// FTRL point over the Pareto actions.
    pub fn compute_q(&mut self) -> Result<Vec<f64>> {
        let problem = FtrlProblem {
            linear: self.cum_y.clone(),
            weights: self.beta(),
            potential: Potential::hybrid_local(self.gamma),
            region: Region::Simplex {
                support: self.pareto.clone(),
            },
        };
        let sol = ftrl::solve_warm(&problem, self.last_dual)?;
        self.last_dual = Some(sol.dual);
        Ok(sol.point)
    }

    /// Accumulates `alpha_a = min(q_a, (1 - q_a) / (gamma q_a))`.
    pub fn learning_rate_update(&mut self, q: &[f64]) {
        for (c, &qa) in self.cum_alpha.iter_mut().zip(q) {
            *c += learning_rate_increment(qa, self.gamma);
        }
    }

    /// One round. `feedback` maps the chosen action to the observed symbol.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R, feedback: impl FnOnce(usize) -> usize) -> Result<LocalRound> {
        if self.round >= self.config.horizon {
            return Err(Error::InvalidProblem("horizon exhausted".into()));
        }
        let q = self.compute_q()?;
        let beta = self.beta();
        let exo = self
            .solver
            .solve(&q, &beta, self.gamma, self.warm.as_ref(), &self.config.exo);
        if exo.fallback {
            self.fallbacks += 1;
        }
        if !exo.converged {
            self.unconverged += 1;
        }
        let action = sample(&exo.p, rng);
        let symbol = feedback(action);
        let column = self.solver.estimate_column(&exo.g_coeffs, action, symbol);
        let pa = exo.p[action];
        let y_hat: Vec<f64> = column.iter().map(|g| g / pa).collect();
        for (c, y) in self.cum_y.iter_mut().zip(&y_hat) {
            *c += y;
        }
        self.learning_rate_update(&q);
        self.round += 1;
        self.warm = Some(exo.clone());
        Ok(LocalRound {
            q,
            p: exo.p.clone(),
            beta,
            action,
            symbol,
            y_hat,
            exo,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

pub fn learning_rate_increment(q: f64, gamma: f64) -> f64 {
    if q <= 0.0 {
        0.0
    } else {
        q.min((1.0 - q) / (gamma * q))
    }
}

/// Inverse-CDF draw from a probability vector.
pub fn sample<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let total: f64 = p.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (a, &pa) in p.iter().enumerate() {
        if pa > 0.0 {
            if u < pa {
                return a;
            }
            u -= pa;
            last = a;
        }
    }
    last
}

#[cfg(test)]
mod tests {
    use super::super::analysis::analyze;
    use super::super::game::apple_tasting;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn learning_rate_cases() {
        assert_eq!(learning_rate_increment(1.0, 4.0), 0.0);
        assert_eq!(learning_rate_increment(0.5, 4.0), 0.25);
        assert_eq!(learning_rate_increment(1e-9, 4.0), 1e-9);
    }

    #[test]
    fn first_round_is_uniform_and_beta_floor_holds() {
        let g = apple_tasting();
        let an = analyze(&g).unwrap();
        let mut l = LocalPmLearner::new(&g, &an, LocalConfig::new(1000)).unwrap();
        for b in l.beta() {
            assert!((b - 16.0).abs() < 1e-12);
        }
        let q = l.compute_q().unwrap();
        assert!((q[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn short_horizon_rejected() {
        let g = apple_tasting();
        let an = analyze(&g).unwrap();
        assert!(matches!(
            LocalPmLearner::new(&g, &an, LocalConfig::new(4)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn replay_is_bit_exact() {
        let g = apple_tasting();
        let an = analyze(&g).unwrap();
        let run = || {
            let mut l = LocalPmLearner::new(&g, &an, LocalConfig::new(8)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            (0..8)
                .map(|t| {
                    let x = t % 2;
                    let r = l.step(&mut rng, |a| g.feedback(a, x)).unwrap();
                    (r.action, r.q, r.p)
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn exploration_respects_half_of_q() {
        let g = apple_tasting();
        let an = analyze(&g).unwrap();
        let mut l = LocalPmLearner::new(&g, &an, LocalConfig::new(500)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let r = l.step(&mut rng, |a| g.feedback(a, 1)).unwrap();
            for a in 0..2 {
                assert!(r.p[a] >= r.q[a] / 2.0 - 1e-12);
                assert!(r.beta[a] >= 16.0);
            }
        }
    }
}
