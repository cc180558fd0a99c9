//! Learner for globally observable games: FTRL with a log-barrier plus
//! complement log-barrier regularizer, a scalar learning rate driven by the
//! cumulative `z_t`, and uniform mixing.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::analysis::{EstimationFunction, GameAnalysis, Observability};
use super::game::PmGame;
use super::local::sample;
use crate::error::{Error, Result};
use crate::ftrl::{self, FtrlProblem, Region};
use crate::regularizers::Potential;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalConfig {
    pub horizon: u64,
    /// Overrides the default `c_1 = (3 c_G / (k log T))^{2/3}`.
    pub c1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct GlobalRound {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub beta: f64,
    pub z: f64,
    pub mix: f64,
    pub clamped: bool,
    pub action: usize,
    pub symbol: usize,
    pub y_hat: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GlobalPmLearner {
    horizon: u64,
    k: usize,
    pareto: Vec<usize>,
    g_circ: EstimationFunction,
    c_g: f64,
    c1: f64,
    cum_y: Vec<f64>,
    cum_z: f64,
    round: u64,
    last_dual: Option<f64>,
    clamps: u64,
}

impl GlobalPmLearner {
    pub fn new(game: &PmGame, analysis: &GameAnalysis, config: GlobalConfig) -> Result<Self> {
        if analysis.observability == Observability::NotGlobal {
            return Err(Error::Incompatible(
                "the global learner needs a globally observable game".into(),
            ));
        }
        if config.horizon < 2 {
            return Err(Error::Config("horizon must be at least 2".into()));
        }
        let (Some(g_circ), Some(c_g)) = (analysis.g_circ_global.clone(), analysis.c_g) else {
            return Err(Error::Incompatible("missing global estimation function".into()));
        };
        let k = game.k();
        let c1 = match config.c1 {
            Some(c) if c > 0.0 && c.is_finite() => c,
            Some(c) => return Err(Error::Config(format!("c1 = {c} must be positive"))),
            None => (3.0 * c_g / (k as f64 * (config.horizon as f64).ln())).powf(2.0 / 3.0),
        };
        Ok(Self {
            horizon: config.horizon,
            k,
            pareto: analysis.pareto.clone(),
            g_circ,
            c_g,
            c1,
            cum_y: vec![0.0; k],
            cum_z: 0.0,
            round: 0,
            last_dual: None,
            clamps: 0,
        })
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn clamps(&self) -> u64 {
        self.clamps
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    /// `beta_t = c_1 (k + sum_{s<t} z_s)^{2/3}`.
    pub fn beta(&self) -> f64 {
        self.c1 * (self.k as f64 + self.cum_z).powf(2.0 / 3.0)
    }

    pub fn global_ftrl(&mut self) -> Result<Vec<f64>> {
        let problem = FtrlProblem {
            linear: self.cum_y.clone(),
            weights: vec![self.beta(); self.k],
            potential: Potential::barrier_pair(),
            region: Region::Simplex {
                support: self.pareto.clone(),
            },
        };
        let sol = ftrl::solve_warm(&problem, self.last_dual)?;
        self.last_dual = Some(sol.dual);
        Ok(sol.point)
    }

    /// Returns `(p, gamma_t, z_t, clamped)`.
    pub fn mix_and_rate(&self, q: &[f64]) -> (Vec<f64>, f64, f64, bool) {
        mix_and_rate(q, self.c_g, self.beta())
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R, feedback: impl FnOnce(usize) -> usize) -> Result<GlobalRound> {
        if self.round >= self.horizon {
            return Err(Error::InvalidProblem("horizon exhausted".into()));
        }
        let q = self.global_ftrl()?;
        let beta = self.beta();
        let (p, mix, z, clamped) = self.mix_and_rate(&q);
        if clamped {
            self.clamps += 1;
        }
        let action = sample(&p, rng);
        let symbol = feedback(action);
        let y_hat: Vec<f64> = (0..self.k)
            .map(|b| self.g_circ.get(action, symbol, b) / p[action])
            .collect();
        for (c, y) in self.cum_y.iter_mut().zip(&y_hat) {
            *c += y;
        }
        self.cum_z += z;
        self.round += 1;
        Ok(GlobalRound {
            q,
            p,
            beta,
            z,
            mix,
            clamped,
            action,
            symbol,
            y_hat,
        })
    }
}

/// `z = sum_a min(q_a, 1 - q_a)`, `gamma = min(1, sqrt(2) c_G z / sqrt(beta))`,
/// `p = (1 - gamma) q + gamma / k`. Returns `(p, gamma, z, clamped)`.
pub fn mix_and_rate(q: &[f64], c_g: f64, beta: f64) -> (Vec<f64>, f64, f64, bool) {
    let k = q.len() as f64;
    let z: f64 = q.iter().map(|&v| v.min(1.0 - v)).sum();
    let raw = std::f64::consts::SQRT_2 * c_g * z / beta.sqrt();
    let mix = raw.min(1.0);
    let p = q.iter().map(|&v| (1.0 - mix) * v + mix / k).collect();
    (p, mix, z, raw > 1.0)
}
