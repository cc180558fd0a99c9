//! Exploration by optimization with the hybrid regularizer.
//!
//! Per round the learner picks a sampling distribution `p` in
//! `R(q) = {p in simplex : p >= q / 2}` and an estimation function `G` with
//! admissible loss-difference estimates, minimizing
//!
//! ```text
//! max_x [ (p - q)^T L e_x + sum_b beta_b sum_a p_a S_{q_b}(G(a, Phi_ax)_b / (beta_b p_a)) ]
//! ```
//!
//! `G` is parametrized as `G° + sum_j c_j N_j` over a null-space basis, so
//! every coefficient vector is admissible. The max over outcomes is smoothed
//! by a log-sum-exp whose temperature is driven down in stages, and each stage
//! runs a spectral projected gradient method. The reported value is always the
//! exact (unsmoothed) objective at the best point seen.

use serde::{Deserialize, Serialize};

use super::analysis::{EstimationFunction, GameAnalysis};
use super::game::PmGame;
use crate::error::{Error, Result};
use crate::regularizers::Potential;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExoOptions {
    pub max_iterations: usize,
    /// Relative stopping tolerance on the objective.
    pub tolerance: f64,
}

impl Default for ExoOptions {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExoSolution {
    /// Sampling distribution over all `k` actions (zero off the Pareto set).
    pub p: Vec<f64>,
    pub g_coeffs: Vec<f64>,
    pub value: f64,
    /// Objective at `(q, G°)`.
    pub baseline: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The solver's point was discarded in favor of `(q, G°)`.
    pub fallback: bool,
}

/// Direct evaluation of the objective for an arbitrary estimation function.
/// Terms with `q_b = 0` are skipped; a positive `G` entry against `p_a = 0`
/// makes the objective infinite.
pub fn exo_objective(
    game: &PmGame,
    p: &[f64],
    g: &EstimationFunction,
    q: &[f64],
    beta: &[f64],
    gamma: f64,
) -> f64 {
    let phi = Potential::hybrid_local(gamma);
    let k = game.k();
    let mut best = f64::NEG_INFINITY;
    for x in 0..game.d() {
        let mut v: f64 = (0..k).map(|a| (p[a] - q[a]) * game.loss(a, x)).sum();
        for b in 0..k {
            if q[b] <= 0.0 {
                continue;
            }
            for a in 0..k {
                let ga = g.get(a, game.feedback(a, x), b);
                if ga == 0.0 {
                    continue;
                }
                if p[a] <= 0.0 {
                    return f64::INFINITY;
                }
                match phi.stability(q[b], ga / (beta[b] * p[a])) {
                    Ok(s) => v += beta[b] * p[a] * s,
                    Err(_) => return f64::INFINITY,
                }
            }
        }
        best = best.max(v);
    }
    best
}

/// The right-hand side of the optimal-value bound
/// `2 m^2 k^2 sum_b min(q_b, (1 - q_b) / (gamma q_b)) / beta_b`.
pub fn lemma_bound(m: usize, k: usize, q: &[f64], beta: &[f64], gamma: f64) -> f64 {
    let mk = (m * k) as f64;
    2.0 * mk * mk
        * q.iter()
            .zip(beta)
            .filter(|(q, _)| **q > 0.0)
            .map(|(&q, &b)| q.min((1.0 - q) / (gamma * q)) / b)
            .sum::<f64>()
}

/// Precomputed, flattened view of a locally observable game for fast ExO
/// evaluations. Entries of `G` live in slots `(a, sigma)` with `a` Pareto and
/// `sigma` a symbol of row `a`; each slot holds one value per Pareto `b`.
#[derive(Debug, Clone)]
pub struct ExoSolver {
    k: usize,
    pareto: Vec<usize>,
    symbols: usize,
    /// `slot_of[a_idx][sigma]`
    slot_of: Vec<Vec<Option<usize>>>,
    slot_owner: Vec<(usize, usize)>,
    /// `loss[x][a_idx]`
    loss: Vec<Vec<f64>>,
    /// `slot_at[x][a_idx]`
    slot_at: Vec<Vec<usize>>,
    g0: Vec<f64>,
    basis: Vec<Vec<f64>>,
}

/// Per-evaluation scratch space.
struct Work {
    s: Vec<f64>,
    ds: Vec<f64>,
    vals: Vec<f64>,
    dp: Vec<f64>,
    dg: Vec<f64>,
    g: Vec<f64>,
}

impl ExoSolver {
    pub fn new(game: &PmGame, analysis: &GameAnalysis) -> Result<Self> {
        let g_circ = analysis.g_circ_local.as_ref().ok_or_else(|| {
            Error::Incompatible(format!(
                "exploration by optimization needs a locally observable game, this one is {:?}",
                analysis.observability
            ))
        })?;
        let pareto = analysis.pareto.clone();
        let n = pareto.len();
        let s = game.symbol_count();
        let mut slot_of = vec![vec![None; s]; n];
        let mut slot_owner = Vec::new();
        for (ai, &a) in pareto.iter().enumerate() {
            for sig in game.row_symbols(a) {
                slot_of[ai][sig] = Some(slot_owner.len());
                slot_owner.push((a, sig));
            }
        }
        let flatten = |f: &EstimationFunction| -> Vec<f64> {
            slot_owner
                .iter()
                .flat_map(|&(a, sig)| pareto.iter().map(move |&b| f.get(a, sig, b)))
                .collect()
        };
        let g0 = flatten(g_circ);
        let basis = analysis.h_null_basis.iter().map(flatten).collect();
        let loss = (0..game.d())
            .map(|x| pareto.iter().map(|&a| game.loss(a, x)).collect())
            .collect();
        let slot_at = (0..game.d())
            .map(|x| {
                pareto
                    .iter()
                    .enumerate()
                    .map(|(ai, &a)| slot_of[ai][game.feedback(a, x)].expect("row symbol has a slot"))
                    .collect()
            })
            .collect();
        Ok(Self {
            k: game.k(),
            pareto,
            symbols: s,
            slot_of,
            slot_owner,
            loss,
            slot_at,
            g0,
            basis,
        })
    }

    pub fn pareto(&self) -> &[usize] {
        &self.pareto
    }

    pub fn basis_len(&self) -> usize {
        self.basis.len()
    }

    /// Flattened `G° + sum_j c_j N_j`.
    fn g_flat(&self, c: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(&self.g0);
        for (cj, nj) in c.iter().zip(&self.basis) {
            if *cj != 0.0 {
                for (o, v) in out.iter_mut().zip(nj) {
                    *o += cj * v;
                }
            }
        }
    }

    /// The estimation function for coefficients `c` as a full `[k][Sigma][k]`
    /// table.
    pub fn estimation_function(&self, c: &[f64]) -> EstimationFunction {
        let mut flat = Vec::new();
        self.g_flat(c, &mut flat);
        let n = self.pareto.len();
        let mut f = EstimationFunction::zeros(self.k, self.symbols);
        for (slot, &(a, sig)) in self.slot_owner.iter().enumerate() {
            for (bi, &b) in self.pareto.iter().enumerate() {
                f.values[a][sig][b] = flat[slot * n + bi];
            }
        }
        f
    }

    /// `G(a, sigma)` as a length-`k` vector, zero off the Pareto set.
    pub fn estimate_column(&self, c: &[f64], a: usize, sigma: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.k];
        let Some(ai) = self.pareto.iter().position(|&p| p == a) else {
            return out;
        };
        let Some(slot) = self.slot_of[ai].get(sigma).copied().flatten() else {
            return out;
        };
        let n = self.pareto.len();
        for (bi, &b) in self.pareto.iter().enumerate() {
            let mut v = self.g0[slot * n + bi];
            for (cj, nj) in c.iter().zip(&self.basis) {
                v += cj * nj[slot * n + bi];
            }
            out[b] = v;
        }
        out
    }

    fn work(&self) -> Work {
        let n = self.pareto.len();
        let ns = self.slot_owner.len() * n;
        Work {
            s: vec![0.0; ns],
            ds: vec![0.0; ns],
            vals: vec![0.0; self.loss.len()],
            dp: vec![0.0; n],
            dg: vec![0.0; ns],
            g: Vec::with_capacity(ns),
        }
    }

    /// Per-outcome objective values at restricted `p` (over Pareto actions)
    /// and coefficients `c`. Fills stability values and slopes per slot.
    /// Returns false if some stability evaluation failed.
    fn outcome_values(&self, p: &[f64], c: &[f64], q: &[f64], beta: &[f64], phi: &Potential, w: &mut Work) -> bool {
        let n = self.pareto.len();
        let mut g = std::mem::take(&mut w.g);
        self.g_flat(c, &mut g);
        for (slot, _) in self.slot_owner.iter().enumerate() {
            let ai = self.slot_owner_idx(slot);
            let pa = p[ai];
            for bi in 0..n {
                let idx = slot * n + bi;
                let gv = g[idx];
                if gv == 0.0 {
                    w.s[idx] = 0.0;
                    w.ds[idx] = 0.0;
                    continue;
                }
                match phi.stability_with_slope(q[bi], gv / (beta[bi] * pa)) {
                    Ok((s, ds)) => {
                        w.s[idx] = s;
                        w.ds[idx] = ds;
                    }
                    Err(_) => {
                        w.g = g;
                        return false;
                    }
                }
            }
        }
        for (x, val) in w.vals.iter_mut().enumerate() {
            let mut v = 0.0;
            for ai in 0..n {
                v += (p[ai] - q[ai]) * self.loss[x][ai];
                let slot = self.slot_at[x][ai];
                for bi in 0..n {
                    v += beta[bi] * p[ai] * w.s[slot * n + bi];
                }
            }
            *val = v;
        }
        w.g = g;
        true
    }

    fn slot_owner_idx(&self, slot: usize) -> usize {
        let a = self.slot_owner[slot].0;
        self.pareto.iter().position(|&p| p == a).expect("slot owner is Pareto")
    }

    /// Exact objective with `p` over all `k` actions and `q`, `beta` over all
    /// `k` actions.
    pub fn objective(&self, p: &[f64], c: &[f64], q: &[f64], beta: &[f64], gamma: f64) -> f64 {
        let pr: Vec<f64> = self.pareto.iter().map(|&a| p[a]).collect();
        let qr: Vec<f64> = self.pareto.iter().map(|&a| q[a]).collect();
        let br: Vec<f64> = self.pareto.iter().map(|&a| beta[a]).collect();
        let phi = Potential::hybrid_local(gamma);
        let mut w = self.work();
        if pr.iter().any(|&v| v <= 0.0) || !self.outcome_values(&pr, c, &qr, &br, &phi, &mut w) {
            return f64::INFINITY;
        }
        w.vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Smoothed objective `mu * log sum_x exp(v_x / mu)` with its gradient in
    /// `(p, c)`. Returns `(smoothed, exact max)`.
    #[allow(clippy::too_many_arguments)]
    fn smoothed(&self, p: &[f64], c: &[f64], q: &[f64], beta: &[f64], phi: &Potential, mu: f64, w: &mut Work, grad: &mut [f64]) -> (f64, f64) {
        if !self.outcome_values(p, c, q, beta, phi, w) {
            return (f64::INFINITY, f64::INFINITY);
        }
        let n = self.pareto.len();
        let vmax = w.vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in w.vals.iter_mut() {
            *v = ((*v - vmax) / mu).exp();
            total += *v;
        }
        let smooth = vmax + mu * total.ln();
        w.dp.iter_mut().for_each(|v| *v = 0.0);
        w.dg.iter_mut().for_each(|v| *v = 0.0);
        for x in 0..w.vals.len() {
            let wx = w.vals[x] / total;
            if wx == 0.0 {
                continue;
            }
            for ai in 0..n {
                let slot = self.slot_at[x][ai];
                let mut dpa = self.loss[x][ai];
                for bi in 0..n {
                    let idx = slot * n + bi;
                    let ds = w.ds[idx];
                    if ds != 0.0 || w.s[idx] != 0.0 {
                        let z = w.g[idx] / (beta[bi] * p[ai]);
                        dpa += beta[bi] * (w.s[idx] - z * ds);
                        w.dg[idx] += wx * ds;
                    }
                }
                w.dp[ai] += wx * dpa;
            }
        }
        grad[..n].copy_from_slice(&w.dp);
        for (j, nj) in self.basis.iter().enumerate() {
            grad[n + j] = nj.iter().zip(&w.dg).map(|(a, b)| a * b).sum();
        }
        (smooth, vmax)
    }

    /// Approximately solves the ExO program at `q` (over all `k` actions,
    /// zero off the Pareto set) with per-action rates `beta`.
    pub fn solve(&self, q: &[f64], beta: &[f64], gamma: f64, warm: Option<&ExoSolution>, opts: &ExoOptions) -> ExoSolution {
        let n = self.pareto.len();
        let nb = self.basis.len();
        let qr: Vec<f64> = self.pareto.iter().map(|&a| q[a]).collect();
        let br: Vec<f64> = self.pareto.iter().map(|&a| beta[a]).collect();
        let phi = Potential::hybrid_local(gamma);
        let mut w = self.work();

        let half: Vec<f64> = qr.iter().map(|v| v / 2.0).collect();
        let to_p = |v: &[f64]| -> Vec<f64> { (0..n).map(|i| half[i] + v[i]).collect() };
        let project = |v: &mut [f64]| project_simplex(&mut v[..n], 0.5);

        let zero_c = vec![0.0; nb];
        let baseline = if self.outcome_values(&qr, &zero_c, &qr, &br, &phi, &mut w) {
            w.vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        } else {
            f64::INFINITY
        };
        let full_p = |pr: &[f64]| -> Vec<f64> {
            let mut p = vec![0.0; self.k];
            for (i, &a) in self.pareto.iter().enumerate() {
                p[a] = pr[i];
            }
            p
        };
        let fallback = |iterations: usize| ExoSolution {
            p: q.to_vec(),
            g_coeffs: zero_c.clone(),
            value: baseline,
            baseline,
            iterations,
            converged: false,
            fallback: true,
        };
        if n == 1 {
            return ExoSolution {
                p: full_p(&[1.0]),
                g_coeffs: zero_c.clone(),
                value: baseline,
                baseline,
                iterations: 0,
                converged: true,
                fallback: false,
            };
        }

        let mut v = vec![0.0; n + nb];
        v[..n].copy_from_slice(&half);
        if let Some(ws) = warm {
            if ws.p.len() == self.k && ws.g_coeffs.len() == nb && !ws.fallback {
                for (i, &a) in self.pareto.iter().enumerate() {
                    v[i] = ws.p[a] - half[i];
                }
                v[n..].copy_from_slice(&ws.g_coeffs);
            }
        }
        project(&mut v);

        let mut best_v = v.clone();
        let mut best_val = f64::INFINITY;
        let mut grad = vec![0.0; n + nb];
        let mut iterations = 0;
        let mut converged = false;

        let scale0 = if baseline.is_finite() { baseline.abs() } else { 1.0 };
        let mut mu = 0.05 * (scale0 + 1e-6);
        let mu_final = opts.tolerance * 0.01 * (scale0 + 1e-6);

        'stages: loop {
            let eval = |v: &[f64], w: &mut Work, grad: &mut [f64]| -> (f64, f64) {
                let p = to_p(v);
                if p.iter().any(|&x| x <= 0.0) {
                    return (f64::INFINITY, f64::INFINITY);
                }
                self.smoothed(&p, &v[n..], &qr, &br, &phi, mu, w, grad)
            };
            let (mut f, exact) = eval(&v, &mut w, &mut grad);
            if exact < best_val {
                best_val = exact;
                best_v.copy_from_slice(&v);
            }
            if !f.is_finite() {
                break;
            }
            let mut lambda = {
                let mut t = v.clone();
                for i in 0..t.len() {
                    t[i] -= grad[i];
                }
                project(&mut t);
                let d = t.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                if d > 0.0 {
                    (1.0 / d).min(1e6)
                } else {
                    1.0
                }
            };
            let mut history = vec![f; 1];
            let mut stage_iters = 0;
            loop {
                if iterations >= opts.max_iterations {
                    break 'stages;
                }
                iterations += 1;
                stage_iters += 1;
                let mut trial = v.clone();
                for i in 0..trial.len() {
                    trial[i] -= lambda * grad[i];
                }
                project(&mut trial);
                let dir: Vec<f64> = trial.iter().zip(&v).map(|(a, b)| a - b).collect();
                let dnorm = dir.iter().fold(0.0f64, |m, d| m.max(d.abs()));
                let slope: f64 = dir.iter().zip(&grad).map(|(a, b)| a * b).sum();
                let stage_tol = if mu <= mu_final { 1e-9 } else { 1e-7 };
                if dnorm <= stage_tol * lambda.max(1.0) || slope > -1e-15 * (1.0 + f.abs()) {
                    break;
                }
                let fref = history.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut alpha = 1.0;
                let mut new_grad = vec![0.0; n + nb];
                let mut accepted = None;
                for _ in 0..40 {
                    let cand: Vec<f64> = v.iter().zip(&dir).map(|(a, d)| a + alpha * d).collect();
                    let (fc, ec) = eval(&cand, &mut w, &mut new_grad);
                    if ec < best_val {
                        best_val = ec;
                        best_v.copy_from_slice(&cand);
                    }
                    if fc <= fref + 1e-4 * alpha * slope {
                        accepted = Some((cand, fc));
                        break;
                    }
                    alpha *= 0.5;
                }
                let Some((cand, fc)) = accepted else {
                    break;
                };
                let s: Vec<f64> = cand.iter().zip(&v).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = new_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
                let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
                let ss: f64 = s.iter().map(|a| a * a).sum();
                lambda = if sy > 0.0 { (ss / sy).clamp(1e-12, 1e6) } else { 1e6 };
                let improvement = f - fc;
                v = cand;
                f = fc;
                grad.copy_from_slice(&new_grad);
                history.push(f);
                if history.len() > 10 {
                    history.remove(0);
                }
                if stage_iters > 5 && improvement.abs() <= 1e-3 * mu {
                    break;
                }
            }
            if mu <= mu_final {
                converged = true;
                break;
            }
            mu = (mu * 0.1).max(mu_final);
            // restart each stage from the best exact point
            v.copy_from_slice(&best_v);
        }

        if !best_val.is_finite() || best_val > baseline {
            return fallback(iterations);
        }
        let pr = to_p(&best_v);
        ExoSolution {
            p: full_p(&pr),
            g_coeffs: best_v[n..].to_vec(),
            value: best_val,
            baseline,
            iterations,
            converged,
            fallback: false,
        }
    }
}

/// Euclidean projection onto `{s >= 0 : sum s = r}`.
pub fn project_simplex(v: &mut [f64], r: f64) {
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut css = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        css += ui;
        let t = (css - r) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}
