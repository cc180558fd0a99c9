//! Outcome and loss generators for stochastic, adversarial and corrupted
//! regimes, plus regret accounting.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pm::PmGame;
use crate::semibandit::ActionSet;

/// Optimal actions must beat the runner-up by at least this much.
pub const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossLaw {
    Bernoulli,
    /// Uniform on `[mu - width/2, mu + width/2]`.
    UniformInterval { width: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SbCorruption {
    /// Sets the loss of the given arms (default: the optimal arms) to 1.
    TargetedBoost { arms: Option<Vec<usize>> },
}

/// Semi-bandit loss regimes. Adversarial schedules repeat `pattern`, each
/// entry held for `block` rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum SbEnvSpec {
    Stochastic {
        means: Vec<f64>,
        law: LossLaw,
    },
    Adversarial {
        pattern: Vec<Vec<f64>>,
        block: u64,
    },
    Corrupted {
        means: Vec<f64>,
        law: LossLaw,
        corruption: SbCorruption,
        budget: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PmCorruption {
    /// Replaces the drawn outcome by one maximizing the optimal action's loss.
    FlipToWorst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum PmEnvSpec {
    Stochastic {
        nu: Vec<f64>,
    },
    Adversarial {
        pattern: Vec<usize>,
        block: u64,
    },
    Corrupted {
        nu: Vec<f64>,
        corruption: PmCorruption,
        budget: f64,
    },
}

/// `Delta_a = (L nu)_a - min_b (L nu)_b`, restricted to nothing: every action
/// gets a gap. Returns the gaps and the unique optimal action.
pub fn pm_gaps(game: &PmGame, nu: &[f64]) -> Result<(Vec<f64>, usize)> {
    check_distribution(nu, game.d())?;
    let expected: Vec<f64> = (0..game.k())
        .map(|a| game.loss_row(a).iter().zip(nu).map(|(l, p)| l * p).sum())
        .collect();
    let best = argmin_unique(&expected)
        .ok_or_else(|| Error::Config("the optimal action is not unique".into()))?;
    let gaps = expected.iter().map(|v| v - expected[best]).collect();
    Ok((gaps, best))
}

/// The unique best action for mean losses `mu`, with its expected loss.
pub fn sb_optimum(action_set: &ActionSet, mu: &[f64]) -> Result<(Vec<bool>, f64)> {
    let best = action_set.best_action(mu);
    let best_val = dot(&best, mu);
    let unique = match action_set {
        ActionSet::MSet { m } => {
            let mut sorted = mu.to_vec();
            sorted.sort_by(f64::total_cmp);
            *m == mu.len() || sorted[*m] - sorted[*m - 1] > TIE_TOL
        }
        ActionSet::ExplicitVertices { vertices } => {
            let mut vals: Vec<f64> = vertices
                .iter()
                .map(|v| v.iter().zip(mu).map(|(&b, m)| f64::from(b) * m).sum())
                .collect();
            vals.sort_by(f64::total_cmp);
            vals.len() < 2 || vals[1] - vals[0] > TIE_TOL
        }
    };
    if !unique {
        return Err(Error::Config("the optimal action is not unique".into()));
    }
    Ok((best, best_val))
}

fn dot(action: &[bool], v: &[f64]) -> f64 {
    action.iter().zip(v).filter(|(a, _)| **a).map(|(_, x)| x).sum()
}

fn argmin_unique(v: &[f64]) -> Option<usize> {
    let (best, &min) = v.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1))?;
    let unique = v
        .iter()
        .enumerate()
        .all(|(i, &x)| i == best || x - min > TIE_TOL);
    unique.then_some(best)
}

fn check_distribution(nu: &[f64], d: usize) -> Result<()> {
    if nu.len() != d {
        return Err(Error::Config(format!("nu has {} entries, expected {d}", nu.len())));
    }
    if nu.iter().any(|&p| !(p >= 0.0 && p.is_finite())) || (nu.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config("nu must be a probability vector".into()));
    }
    Ok(())
}

fn check_means(means: &[f64], law: &LossLaw, d: usize) -> Result<()> {
    if means.len() != d {
        return Err(Error::Config(format!("means has {} entries, expected {d}", means.len())));
    }
    for &mu in means {
        let half = match law {
            LossLaw::Bernoulli => 0.0,
            LossLaw::UniformInterval { width } => {
                if !(*width >= 0.0) {
                    return Err(Error::Config(format!("interval width {width} must be nonnegative")));
                }
                width / 2.0
            }
        };
        if !(mu - half >= 0.0 && mu + half <= 1.0) {
            return Err(Error::Config(format!("mean {mu} does not fit in [0, 1] under {law:?}")));
        }
    }
    Ok(())
}

fn check_budget(budget: f64) -> Result<()> {
    if !(budget >= 0.0 && budget.is_finite()) {
        return Err(Error::Config(format!("corruption budget {budget} must be finite and nonnegative")));
    }
    Ok(())
}

fn check_block(block: u64, len: usize) -> Result<()> {
    if block == 0 || len == 0 {
        return Err(Error::Config("adversarial pattern must be nonempty with a positive block".into()));
    }
    Ok(())
}

fn cyclic<T>(pattern: &[T], block: u64, t: u64) -> &T {
    &pattern[((t / block) % pattern.len() as u64) as usize]
}

/// One emitted round: the value the learner faces and, under corruption, the
/// uncorrupted draw.
#[derive(Debug, Clone, PartialEq)]
pub struct Emission<T> {
    pub value: T,
    pub shadow: T,
}

#[derive(Debug, Clone)]
pub struct SemiBanditEnv {
    spec: SbEnvSpec,
    target: Vec<usize>,
    remaining: f64,
    used: f64,
}

impl SemiBanditEnv {
    pub fn new(spec: SbEnvSpec, d: usize, action_set: &ActionSet) -> Result<Self> {
        let mut target = Vec::new();
        let mut remaining = 0.0;
        match &spec {
            SbEnvSpec::Stochastic { means, law } => check_means(means, law, d)?,
            SbEnvSpec::Adversarial { pattern, block } => {
                check_block(*block, pattern.len())?;
                for l in pattern {
                    if l.len() != d || l.iter().any(|v| !(0.0..=1.0).contains(v)) {
                        return Err(Error::Config("adversarial losses must be length-d vectors in [0, 1]".into()));
                    }
                }
            }
            SbEnvSpec::Corrupted {
                means,
                law,
                corruption: SbCorruption::TargetedBoost { arms },
                budget,
            } => {
                check_means(means, law, d)?;
                check_budget(*budget)?;
                remaining = *budget;
                target = match arms {
                    Some(a) => {
                        if a.iter().any(|&i| i >= d) {
                            return Err(Error::Config("boosted arm index out of range".into()));
                        }
                        a.clone()
                    }
                    None => {
                        let (best, _) = sb_optimum(action_set, means)?;
                        (0..d).filter(|&i| best[i]).collect()
                    }
                };
            }
        }
        Ok(Self {
            spec,
            target,
            remaining,
            used: 0.0,
        })
    }

    pub fn spec(&self) -> &SbEnvSpec {
        &self.spec
    }

    pub fn means(&self) -> Option<&[f64]> {
        match &self.spec {
            SbEnvSpec::Stochastic { means, .. } | SbEnvSpec::Corrupted { means, .. } => Some(means),
            SbEnvSpec::Adversarial { .. } => None,
        }
    }

    pub fn corruption_used(&self) -> f64 {
        self.used
    }

    fn draw<R: Rng + ?Sized>(means: &[f64], law: &LossLaw, rng: &mut R) -> Vec<f64> {
        means
            .iter()
            .map(|&mu| match law {
                LossLaw::Bernoulli => f64::from(u8::from(rng.random::<f64>() < mu)),
                LossLaw::UniformInterval { width } => mu + width * (rng.random::<f64>() - 0.5),
            })
            .collect()
    }

    /// Losses for round `t` (0-based).
    pub fn emit<R: Rng + ?Sized>(&mut self, t: u64, rng: &mut R) -> Emission<Vec<f64>> {
        match &self.spec {
            SbEnvSpec::Stochastic { means, law } => {
                let l = Self::draw(means, law, rng);
                Emission {
                    value: l.clone(),
                    shadow: l,
                }
            }
            SbEnvSpec::Adversarial { pattern, block } => {
                let l = cyclic(pattern, *block, t).clone();
                Emission {
                    value: l.clone(),
                    shadow: l,
                }
            }
            SbEnvSpec::Corrupted { means, law, .. } => {
                let shadow = Self::draw(means, law, rng);
                let mut value = shadow.clone();
                for &i in &self.target {
                    value[i] = 1.0;
                }
                let cost = value
                    .iter()
                    .zip(&shadow)
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                if cost > 0.0 && cost <= self.remaining {
                    self.remaining -= cost;
                    self.used += cost;
                    Emission { value, shadow }
                } else {
                    Emission {
                        value: shadow.clone(),
                        shadow,
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct PmEnv {
    spec: PmEnvSpec,
    /// Loss rows as a local copy, for corruption costs.
    loss: Vec<Vec<f64>>,
    worst: usize,
    remaining: f64,
    used: f64,
}

impl PmEnv {
    pub fn new(spec: PmEnvSpec, game: &PmGame) -> Result<Self> {
        let d = game.d();
        let mut worst = 0;
        let mut remaining = 0.0;
        match &spec {
            PmEnvSpec::Stochastic { nu } => check_distribution(nu, d)?,
            PmEnvSpec::Adversarial { pattern, block } => {
                check_block(*block, pattern.len())?;
                if pattern.iter().any(|&x| x >= d) {
                    return Err(Error::Config("adversarial outcome index out of range".into()));
                }
            }
            PmEnvSpec::Corrupted {
                nu,
                corruption: PmCorruption::FlipToWorst,
                budget,
            } => {
                check_budget(*budget)?;
                let (_, best) = pm_gaps(game, nu)?;
                let row = game.loss_row(best);
                worst = (0..d).fold(0, |w, x| if row[x] > row[w] { x } else { w });
                remaining = *budget;
            }
        }
        Ok(Self {
            spec,
            loss: game.loss_matrix().to_vec(),
            worst,
            remaining,
            used: 0.0,
        })
    }

    pub fn spec(&self) -> &PmEnvSpec {
        &self.spec
    }

    pub fn nu(&self) -> Option<&[f64]> {
        match &self.spec {
            PmEnvSpec::Stochastic { nu } | PmEnvSpec::Corrupted { nu, .. } => Some(nu),
            PmEnvSpec::Adversarial { .. } => None,
        }
    }

    pub fn corruption_used(&self) -> f64 {
        self.used
    }

    fn draw<R: Rng + ?Sized>(nu: &[f64], rng: &mut R) -> usize {
        crate::pm::local::sample(nu, rng)
    }

    /// Outcome for round `t` (0-based).
    pub fn emit<R: Rng + ?Sized>(&mut self, t: u64, rng: &mut R) -> Emission<usize> {
        match &self.spec {
            PmEnvSpec::Stochastic { nu } => {
                let x = Self::draw(nu, rng);
                Emission { value: x, shadow: x }
            }
            PmEnvSpec::Adversarial { pattern, block } => {
                let x = *cyclic(pattern, *block, t);
                Emission { value: x, shadow: x }
            }
            PmEnvSpec::Corrupted { nu, .. } => {
                let shadow = Self::draw(nu, rng);
                let value = self.worst;
                let cost = self
                    .loss
                    .iter()
                    .fold(0.0f64, |m, row| m.max((row[value] - row[shadow]).abs()));
                if cost > 0.0 && cost <= self.remaining {
                    self.remaining -= cost;
                    self.used += cost;
                    Emission { value, shadow }
                } else {
                    Emission { value: shadow, shadow }
                }
            }
        }
    }
}

/// How regret increments are measured.
#[derive(Debug, Clone)]
pub enum RegretMode {
    /// Expected per-action losses with a unique optimum; increments are gaps.
    Pseudo { expected: Vec<f64>, best: f64 },
    /// The realized outcome sequence against the best fixed action in
    /// hindsight. The learner's loss is passed in as its expectation under
    /// its own sampling distribution, which removes the learner's coin-flip
    /// noise without changing the expected regret.
    BestFixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: u64,
    /// Action index (partial monitoring) or bitmask of selected arms.
    pub action: usize,
    pub learner_loss: f64,
    pub comparator_loss: f64,
    pub regret: f64,
}

/// Cumulative regret, recorded at the requested checkpoints (or every round).
#[derive(Debug, Clone)]
pub struct RegretTrace {
    mode: RegretMode,
    t: u64,
    learner: f64,
    pseudo: f64,
    checkpoints: Vec<u64>,
    next: usize,
    record_all: bool,
    pub records: Vec<TraceRecord>,
}

impl RegretTrace {
    pub fn new(mode: RegretMode, checkpoints: Vec<u64>, record_all: bool) -> Self {
        Self {
            mode,
            t: 0,
            learner: 0.0,
            pseudo: 0.0,
            checkpoints,
            next: 0,
            record_all,
            records: Vec::new(),
        }
    }

    pub fn rounds(&self) -> u64 {
        self.t
    }

    pub fn regret(&self) -> f64 {
        self.pseudo
    }

    /// Records one round. `expected` is the chosen action's expected loss
    /// (pseudo mode); `mixed_loss` is the learner's loss averaged over its
    /// sampling distribution and `comparator_total` the best fixed cumulative
    /// loss so far (best-fixed mode).
    pub fn push(&mut self, action: usize, mixed_loss: f64, expected: f64, comparator_total: f64) {
        self.t += 1;
        let (learner_loss, comparator_loss) = match &self.mode {
            RegretMode::Pseudo { best, .. } => {
                self.learner += expected;
                self.pseudo += expected - best;
                (self.learner, *best * self.t as f64)
            }
            RegretMode::BestFixed => {
                self.learner += mixed_loss;
                self.pseudo = self.learner - comparator_total;
                (self.learner, comparator_total)
            }
        };
        let at_checkpoint = self.checkpoints.get(self.next) == Some(&self.t);
        if at_checkpoint {
            self.next += 1;
        }
        if at_checkpoint || self.record_all {
            self.records.push(TraceRecord {
                t: self.t,
                action,
                learner_loss,
                comparator_loss,
                regret: self.pseudo,
            });
        }
    }

    pub fn expected(&self, action: usize) -> Option<f64> {
        match &self.mode {
            RegretMode::Pseudo { expected, .. } => Some(expected[action]),
            RegretMode::BestFixed => None,
        }
    }
}

/// `{ceil(T 2^-j)}` for all `j` with value at least 8, ascending, always
/// including `T`.
pub fn checkpoint_grid(horizon: u64) -> Vec<u64> {
    let mut grid = vec![horizon];
    let mut j = 1u32;
    while j < 64 {
        let t = horizon.div_ceil(1u64 << j);
        if t < 8 {
            break;
        }
        if grid.last() != Some(&t) {
            grid.push(t);
        }
        j += 1;
    }
    grid.reverse();
    grid
}
