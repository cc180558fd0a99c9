//! LBINFV for combinatorial semi-bandits.
//!
//! Each round the learner
//! 1. solves an optimistic FTRL step `x(t) = argmin <L_hat(t-1) + m(t), x> + psi_t(x)`
//!    with `psi_t(x) = sum_i beta_i(t) phi(x_i)` and the LBINFV hybrid potential,
//! 2. writes `x(t)` as a convex combination of actions and samples one,
//! 3. observes the losses of the selected base-arms,
//! 4. updates the importance-weighted estimator, the per-arm regularization
//!    strengths `beta_i` (using this round's prediction `m(t)`), and finally
//!    refreshes the optimistic prediction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ftrl::{self, FtrlProblem, Region};
use crate::linalg::{LinearProgram, LpOutcome, Relation};
use crate::regularizers::Potential;

/// Selected coordinates with `x_i` below this are treated as a sampling bug.
const MIN_SELECTED_PROB: f64 = 1e-12;
const DECOMPOSITION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionSet {
    /// All 0/1 vectors with exactly `m` ones.
    MSet { m: usize },
    /// An explicit list of 0/1 vertices.
    ExplicitVertices { vertices: Vec<Vec<u8>> },
}

impl ActionSet {
    pub fn validate(&self, d: usize) -> Result<()> {
        match self {
            ActionSet::MSet { m } if *m == 0 || *m > d => Err(Error::Config(format!(
                "m-set size {m} must lie in 1..={d}"
            ))),
            ActionSet::ExplicitVertices { vertices } => {
                if vertices.is_empty() {
                    return Err(Error::Config("empty vertex list".into()));
                }
                for v in vertices {
                    if v.len() != d || v.iter().any(|&b| b > 1) {
                        return Err(Error::Config(format!(
                            "vertex {v:?} is not a 0/1 vector of length {d}"
                        )));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Best fixed action for a loss vector: minimizes `<losses, a>`.
    pub fn best_action(&self, losses: &[f64]) -> Vec<bool> {
        match self {
            ActionSet::MSet { m } => {
                let mut idx: Vec<usize> = (0..losses.len()).collect();
                idx.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
                let mut act = vec![false; losses.len()];
                for &i in idx.iter().take(*m) {
                    act[i] = true;
                }
                act
            }
            ActionSet::ExplicitVertices { vertices } => {
                let value = |v: &Vec<u8>| -> f64 {
                    v.iter().zip(losses).map(|(&b, l)| b as f64 * l).sum()
                };
                let best = vertices
                    .iter()
                    .min_by(|a, b| value(a).total_cmp(&value(b)))
                    .expect("validated nonempty");
                best.iter().map(|&b| b == 1).collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predictor {
    /// Regularized running mean of observed losses.
    LeastSquares,
    /// Exponential smoothing of observed losses with step `eta` in `(0, 1/2)`.
    GradientDescent { eta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiBanditConfig {
    pub d: usize,
    pub action_set: ActionSet,
    pub horizon: u64,
    pub epsilon: f64,
    pub predictor: Predictor,
}

impl SemiBanditConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Config("need at least one base-arm".into()));
        }
        self.action_set.validate(self.d)?;
        if self.horizon < 2 {
            return Err(Error::Config("horizon must be at least 2".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 0.5) {
            return Err(Error::Config(format!(
                "epsilon = {} outside (0, 1/2]",
                self.epsilon
            )));
        }
        if let Predictor::GradientDescent { eta } = self.predictor {
            if !(eta > 0.0 && eta < 0.5) {
                return Err(Error::Config(format!("eta = {eta} outside (0, 1/2)")));
            }
        }
        Ok(())
    }
}

/// A convex combination `sum_j weight_j * action_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub atoms: Vec<(f64, Vec<bool>)>,
}

impl Decomposition {
    pub fn point(&self, d: usize) -> Vec<f64> {
        let mut x = vec![0.0; d];
        for (w, a) in &self.atoms {
            for (xi, &ai) in x.iter_mut().zip(a) {
                if ai {
                    *xi += w;
                }
            }
        }
        x
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &[bool] {
        let total: f64 = self.atoms.iter().map(|(w, _)| w).sum();
        let mut u = rng.random::<f64>() * total;
        for (w, a) in &self.atoms {
            if u < *w {
                return a;
            }
            u -= w;
        }
        &self.atoms.last().expect("nonempty decomposition").1
    }
}

/// Writes `x` as a convex combination of at most `d + 1` actions.
///
/// For m-sets this is the greedy Caratheodory scheme: take the `m` largest
/// residual coordinates (lowest index first on ties) and remove the largest
/// multiple that keeps every residual coordinate below the remaining mass.
/// Explicit vertex lists go through a feasibility LP whose basic solution
/// has at most `d + 1` nonzero weights.
pub fn decompose(x: &[f64], action_set: &ActionSet) -> Result<Decomposition> {
    let d = x.len();
    let atoms = match action_set {
        ActionSet::MSet { m } => greedy_mset(x, *m),
        ActionSet::ExplicitVertices { vertices } => vertex_lp(x, vertices)?,
    };
    let decomposition = Decomposition { atoms };
    let total: f64 = decomposition.atoms.iter().map(|(w, _)| w).sum();
    let y = decomposition.point(d);
    let residual = y
        .iter()
        .zip(x)
        .map(|(a, b)| (a - b).abs())
        .fold((total - 1.0).abs(), f64::max);
    if residual > DECOMPOSITION_TOL || decomposition.atoms.is_empty() {
        return Err(Error::Decomposition(residual));
    }
    Ok(decomposition)
}

fn greedy_mset(x: &[f64], m: usize) -> Vec<(f64, Vec<bool>)> {
    let d = x.len();
    let mut residual: Vec<f64> = x.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let mut mass = 1.0;
    let mut atoms = Vec::new();
    let mut order: Vec<usize> = (0..d).collect();
    for _ in 0..=2 * d + 1 {
        if mass <= 1e-15 {
            break;
        }
        order.sort_by(|&a, &b| residual[b].total_cmp(&residual[a]).then(a.cmp(&b)));
        let inside = order[m - 1];
        let mut step = residual[inside];
        if m < d {
            step = step.min(mass - residual[order[m]]);
        }
        let step = step.clamp(0.0, mass);
        if step <= 0.0 {
            break;
        }
        let mut action = vec![false; d];
        for &i in order.iter().take(m) {
            action[i] = true;
            residual[i] = (residual[i] - step).max(0.0);
        }
        mass -= step;
        atoms.push((step, action));
    }
    atoms
}

fn vertex_lp(x: &[f64], vertices: &[Vec<u8>]) -> Result<Vec<(f64, Vec<bool>)>> {
    let n = vertices.len();
    let mut lp = LinearProgram::minimize(vec![0.0; n]);
    lp.constrain(vec![1.0; n], Relation::Eq, 1.0);
    for (i, &xi) in x.iter().enumerate() {
        let row = vertices.iter().map(|v| v[i] as f64).collect();
        lp.constrain(row, Relation::Eq, xi);
    }
    match lp.solve() {
        LpOutcome::Optimal { x: w, .. } => Ok(w
            .iter()
            .zip(vertices)
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, v)| (*w, v.iter().map(|&b| b == 1).collect()))
            .collect()),
        _ => Err(Error::Decomposition(f64::INFINITY)),
    }
}

/// Least-squares prediction `m_i = (1/2 + sum of observed losses) / (1 + N_i)`.
pub fn predict_ls(observed_sum: &[f64], counts: &[u64]) -> Vec<f64> {
    observed_sum
        .iter()
        .zip(counts)
        .map(|(s, &n)| (0.5 + s) / (1.0 + n as f64))
        .collect()
}

/// One gradient-descent step of the optimistic prediction on selected arms.
pub fn predict_gd_update(m: &[f64], action: &[bool], losses: &[f64], eta: f64) -> Vec<f64> {
    m.iter()
        .zip(action)
        .zip(losses)
        .map(|((&mi, &ai), &li)| if ai { (1.0 - eta) * mi + eta * li } else { mi })
        .collect()
}

/// Unbiased estimator `l_hat_i = m_i + a_i (l_i - m_i) / x_i`.
pub fn estimate_loss(m: &[f64], x: &[f64], action: &[bool], losses: &[f64]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.len() {
        if action[i] {
            if x[i] < MIN_SELECTED_PROB {
                return Err(Error::Numerical(format!(
                    "arm {i} selected with probability {:e}",
                    x[i]
                )));
            }
            out.push(m[i] + (losses[i] - m[i]) / x[i]);
        } else {
            out.push(m[i]);
        }
    }
    Ok(out)
}

/// `alpha_i = a_i (l_i - m_i)^2 min{1, 2 (1 - x_i) / (x_i^2 gamma)}`.
pub fn alpha(m: &[f64], x: &[f64], action: &[bool], losses: &[f64], gamma: f64) -> Vec<f64> {
    (0..m.len())
        .map(|i| {
            if !action[i] {
                return 0.0;
            }
            let err = losses[i] - m[i];
            let cap = (2.0 * (1.0 - x[i]) / (x[i] * x[i] * gamma)).min(1.0);
            err * err * cap.max(0.0)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub x: Vec<f64>,
    pub action: Vec<bool>,
    /// Loss of each selected base-arm; `None` for unselected arms.
    pub observed: Vec<Option<f64>>,
    pub decomposition: Decomposition,
    pub loss_estimate: Vec<f64>,
    /// Prediction `m(t)` used in this round.
    pub prediction: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SemiBanditLearner {
    config: SemiBanditConfig,
    gamma: f64,
    cum_loss_est: Vec<f64>,
    prediction: Vec<f64>,
    observed_sum: Vec<f64>,
    counts: Vec<u64>,
    cum_alpha: Vec<f64>,
    round: u64,
    last_dual: Option<f64>,
    vertex_weights: Option<Vec<f64>>,
}

impl SemiBanditLearner {
    pub fn new(config: SemiBanditConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d;
        Ok(Self {
            gamma: (config.horizon as f64).ln(),
            cum_loss_est: vec![0.0; d],
            prediction: vec![0.5; d],
            observed_sum: vec![0.0; d],
            counts: vec![0; d],
            cum_alpha: vec![0.0; d],
            round: 0,
            last_dual: None,
            vertex_weights: None,
            config,
        })
    }

    pub fn config(&self) -> &SemiBanditConfig {
        &self.config
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn prediction(&self) -> &[f64] {
        &self.prediction
    }

    pub fn cum_loss_est(&self) -> &[f64] {
        &self.cum_loss_est
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn cum_alpha(&self) -> &[f64] {
        &self.cum_alpha
    }

    /// Least-squares prediction from the learner's history.
    pub fn predict_ls(&self) -> Vec<f64> {
        predict_ls(&self.observed_sum, &self.counts)
    }

    /// `beta_i = sqrt((1 + eps)^2 + cum_alpha_i / gamma)`.
    pub fn beta(&self) -> Vec<f64> {
        let base = (1.0 + self.config.epsilon).powi(2);
        self.cum_alpha
            .iter()
            .map(|a| (base + a / self.gamma).sqrt())
            .collect()
    }

    /// The optimistic FTRL point for the current round.
    pub fn compute_x(&mut self) -> Result<Vec<f64>> {
        let d = self.config.d;
        let linear: Vec<f64> = self
            .cum_loss_est
            .iter()
            .zip(&self.prediction)
            .map(|(l, m)| l + m)
            .collect();
        let weights = self.beta();
        let potential = Potential::hybrid_lbinfv(self.gamma);
        match &self.config.action_set {
            ActionSet::MSet { m } if *m == d => Ok(vec![1.0; d]),
            ActionSet::MSet { m } => {
                let problem = FtrlProblem {
                    linear,
                    weights,
                    potential,
                    region: Region::MSetBox { m: *m },
                };
                let sol = ftrl::solve_warm(&problem, self.last_dual)?;
                self.last_dual = Some(sol.dual);
                Ok(sol.point)
            }
            ActionSet::ExplicitVertices { vertices } => {
                let (x, w) = vertex_ftrl(
                    vertices,
                    &linear,
                    &weights,
                    &potential,
                    self.vertex_weights.as_deref(),
                )?;
                self.vertex_weights = Some(w);
                Ok(x)
            }
        }
    }

    /// One full round against the environment's loss vector. Only the
    /// coordinates of the selected action are read.
    pub fn step<R: Rng + ?Sized>(&mut self, losses: &[f64], rng: &mut R) -> Result<RoundOutcome> {
        let d = self.config.d;
        if self.round >= self.config.horizon {
            return Err(Error::InvalidProblem("horizon exhausted".into()));
        }
        if losses.len() != d {
            return Err(Error::InvalidProblem(format!(
                "expected {d} losses, got {}",
                losses.len()
            )));
        }
        let x = self.compute_x()?;
        let decomposition = decompose(&x, &self.config.action_set)?;
        let action = decomposition.sample(rng).to_vec();
        let observed: Vec<Option<f64>> = action
            .iter()
            .zip(losses)
            .map(|(&a, &l)| a.then_some(l))
            .collect();
        // Unselected coordinates are never read below; zero them so that
        // nothing unobserved can leak into the update.
        let seen: Vec<f64> = observed.iter().map(|o| o.unwrap_or(0.0)).collect();

        let m_t = self.prediction.clone();
        let l_hat = estimate_loss(&m_t, &x, &action, &seen)?;
        for (c, l) in self.cum_loss_est.iter_mut().zip(&l_hat) {
            *c += l;
        }
        self.update_alpha_beta(&action, &x, &seen, &m_t);

        for i in 0..d {
            if action[i] {
                self.counts[i] += 1;
                self.observed_sum[i] += seen[i];
            }
        }
        self.prediction = match self.config.predictor {
            Predictor::LeastSquares => self.predict_ls(),
            Predictor::GradientDescent { eta } => predict_gd_update(&m_t, &action, &seen, eta),
        };
        self.round += 1;
        Ok(RoundOutcome {
            x,
            action,
            observed,
            decomposition,
            loss_estimate: l_hat,
            prediction: m_t,
        })
    }

    pub fn update_alpha_beta(&mut self, action: &[bool], x: &[f64], losses: &[f64], m: &[f64]) {
        let a = alpha(m, x, action, losses, self.gamma);
        for (c, v) in self.cum_alpha.iter_mut().zip(a) {
            *c += v;
        }
    }
}

/// FTRL over the convex hull of an explicit vertex list, parametrized by
/// vertex weights and solved by exponentiated gradient with a monotone line
/// search. Coordinates that are constant across vertices carry no
/// regularizer (the potential is undefined at 0 and 1).
fn vertex_ftrl(
    vertices: &[Vec<u8>],
    linear: &[f64],
    weights: &[f64],
    potential: &Potential,
    warm: Option<&[f64]>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = vertices.len();
    let d = linear.len();
    let free: Vec<bool> = (0..d)
        .map(|i| {
            let first = vertices[0][i];
            vertices.iter().any(|v| v[i] != first)
        })
        .collect();
    let point = |w: &[f64]| -> Vec<f64> {
        let mut x = vec![0.0; d];
        for (wj, v) in w.iter().zip(vertices) {
            for i in 0..d {
                x[i] += wj * v[i] as f64;
            }
        }
        x
    };
    let value = |x: &[f64]| -> f64 {
        let mut v = 0.0;
        for i in 0..d {
            v += linear[i] * x[i];
            if free[i] {
                match potential.eval(x[i]) {
                    Ok(p) => v += weights[i] * p,
                    Err(_) => return f64::INFINITY,
                }
            }
        }
        v
    };
    let mut w: Vec<f64> = match warm {
        Some(w) if w.len() == n && w.iter().all(|v| *v > 0.0) => w.to_vec(),
        _ => vec![1.0 / n as f64; n],
    };
    if n == 1 {
        return Ok((point(&w), w));
    }
    let mut x = point(&w);
    let mut f = value(&x);
    if !f.is_finite() {
        w = vec![1.0 / n as f64; n];
        x = point(&w);
        f = value(&x);
    }
    let mut eta = 1.0;
    for _ in 0..20_000 {
        let gx: Vec<f64> = (0..d)
            .map(|i| {
                let mut g = linear[i];
                if free[i] {
                    g += weights[i] * potential.grad(x[i]).unwrap_or(0.0);
                }
                g
            })
            .collect();
        let gw: Vec<f64> = vertices
            .iter()
            .map(|v| v.iter().zip(&gx).map(|(&b, g)| b as f64 * g).sum())
            .collect();
        let gmin = gw.iter().cloned().fold(f64::INFINITY, f64::min);
        let gap: f64 = w.iter().zip(&gw).map(|(wj, g)| wj * (g - gmin)).sum();
        if gap <= 1e-11 * (1.0 + f.abs()) {
            break;
        }
        let mut accepted = false;
        for _ in 0..60 {
            let mut cand: Vec<f64> = w
                .iter()
                .zip(&gw)
                .map(|(wj, g)| (wj * (-eta * (g - gmin)).exp()).max(1e-300))
                .collect();
            let tot: f64 = cand.iter().sum();
            cand.iter_mut().for_each(|c| *c /= tot);
            let cx = point(&cand);
            let cf = value(&cx);
            if cf <= f {
                w = cand;
                x = cx;
                f = cf;
                eta *= 1.5;
                accepted = true;
                break;
            }
            eta *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if !f.is_finite() {
        return Err(Error::Numerical("vertex FTRL left the interior".into()));
    }
    Ok((x, w))
}
