//! Structural analysis of a partial-monitoring game: cells, Pareto-optimal
//! actions, the neighbor graph, edge estimators, the in-tree estimation
//! function `G°`, and the null space spanned by admissible perturbations of
//! `G°`.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::game::PmGame;
use crate::error::{Error, Result};
use crate::linalg::{null_space, rank, LinearProgram, LpOutcome, Relation};

/// Slack below which a polytope constraint counts as tight.
pub const GEOMETRY_TOL: f64 = 1e-7;
/// Residual tolerance for estimator identities.
pub const IDENTITY_TOL: f64 = 1e-9;
const NULL_SPACE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observability {
    Locally,
    GloballyOnly,
    NotGlobal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorMode {
    /// Only the two endpoint actions may carry weight.
    Local,
    /// Every action may carry weight.
    Global,
}

/// `w: [k] x Sigma -> R` with `sum_c w(c, Phi_cx) = L_ax - L_bx` for all `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeEstimator {
    pub w: Vec<Vec<f64>>,
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeReport {
    /// The estimators target `L_a - L_b` for `pair = [a, b]`.
    pub pair: [usize; 2],
    pub local: Option<EdgeEstimator>,
    pub global: Option<EdgeEstimator>,
}

/// `G: [k] x Sigma -> R^k`, stored as `values[a][sigma][b]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationFunction {
    pub values: Vec<Vec<Vec<f64>>>,
}

impl EstimationFunction {
    pub fn zeros(k: usize, symbols: usize) -> Self {
        Self {
            values: vec![vec![vec![0.0; k]; symbols]; k],
        }
    }

    #[inline]
    pub fn get(&self, a: usize, sigma: usize, b: usize) -> f64 {
        self.values[a][sigma][b]
    }

    pub fn norm_inf(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .flatten()
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest violation of `sum_a (G(a, Phi_ax)_b - G(a, Phi_ax)_c) = L_bx - L_cx`
    /// over `b, c` in `pareto` and all outcomes.
    pub fn difference_residual(&self, game: &PmGame, pareto: &[usize]) -> f64 {
        let mut worst: f64 = 0.0;
        for x in 0..game.d() {
            for &b in pareto {
                for &c in pareto {
                    let mut s = 0.0;
                    for a in 0..game.k() {
                        let sig = game.feedback(a, x);
                        s += self.get(a, sig, b) - self.get(a, sig, c);
                    }
                    worst = worst.max((s - (game.loss(b, x) - game.loss(c, x))).abs());
                }
            }
        }
        worst
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameAnalysis {
    pub k: usize,
    pub d: usize,
    /// Largest number of distinct symbols in one feedback row.
    pub m: usize,
    pub pareto: Vec<usize>,
    pub dominated: Vec<usize>,
    pub neighbors: Vec<[usize; 2]>,
    pub observability: Observability,
    pub edges: Vec<EdgeReport>,
    pub root: usize,
    /// In-tree edges as `[child, parent]`.
    pub tree: Vec<[usize; 2]>,
    pub g_circ_local: Option<EstimationFunction>,
    pub g_circ_global: Option<EstimationFunction>,
    /// `||G°||_inf` of the global-mode in-tree function.
    pub g_circ_norm: Option<f64>,
    /// `max(1, k ||G°||_inf)`.
    pub c_g: Option<f64>,
    /// Basis of the perturbations `N` with `G° + N` still admissible, over
    /// entries `N(a, sigma)_b` with `a, b` Pareto.
    pub h_null_basis: Vec<EstimationFunction>,
    pub h_unknowns: usize,
    pub h_rank: usize,
    pub h_rank_sketch: usize,
    /// Geometry tests that passed with slack below `10 * GEOMETRY_TOL`.
    pub borderline: Vec<String>,
}

/// Dimension test result for `{u >= 0 : eqs, ineqs}`.
struct PolytopeDim {
    dim: usize,
    /// Smallest slack among inequalities judged not tight.
    min_loose_slack: f64,
}

/// Dimension of `{u in R^d : u >= 0, E u = e, A u <= b}` via implicit-equality
/// detection: each inequality's slack is maximized in turn, and the ones that
/// cannot be made strictly loose join the equality system.
fn polytope_dim(d: usize, eqs: &[(Vec<f64>, f64)], ineqs: &[(Vec<f64>, f64)]) -> Option<PolytopeDim> {
    let mut all_ineqs: Vec<(Vec<f64>, f64)> = (0..d)
        .map(|x| {
            let mut r = vec![0.0; d];
            r[x] = -1.0;
            (r, 0.0)
        })
        .collect();
    all_ineqs.extend_from_slice(ineqs);

    let mut tight_rows: Vec<Vec<f64>> = eqs.iter().map(|e| e.0.clone()).collect();
    let mut min_loose = f64::INFINITY;
    for (i, (row, _)) in all_ineqs.iter().enumerate() {
        // variables: u (d, nonneg), t (free); maximize t
        let mut obj = vec![0.0; d + 1];
        obj[d] = -1.0;
        let mut lp = LinearProgram::minimize(obj);
        lp.set_free(d);
        for (e, v) in eqs {
            let mut r = e.clone();
            r.push(0.0);
            lp.constrain(r, Relation::Eq, *v);
        }
        for (j, (a, b)) in all_ineqs.iter().enumerate() {
            let mut r = a.clone();
            r.push(if j == i { 1.0 } else { 0.0 });
            lp.constrain(r, Relation::Le, *b);
        }
        let mut cap = vec![0.0; d];
        cap.push(1.0);
        lp.constrain(cap, Relation::Le, 1.0);
        let slack = match lp.solve() {
            LpOutcome::Optimal { x, .. } => x[d],
            LpOutcome::Infeasible => return None,
            LpOutcome::Unbounded => 1.0,
        };
        if slack < -GEOMETRY_TOL {
            return None;
        }
        if slack < GEOMETRY_TOL {
            tight_rows.push(row.clone());
        } else {
            min_loose = min_loose.min(slack);
        }
    }
    let r = rank(&tight_rows, 1e-9);
    Some(PolytopeDim {
        dim: d - r.min(d),
        min_loose_slack: min_loose,
    })
}

fn diff_row(game: &PmGame, a: usize, b: usize) -> Vec<f64> {
    (0..game.d()).map(|x| game.loss(a, x) - game.loss(b, x)).collect()
}

/// Minimum-`||w||_inf` solution of the edge identity for `L_a - L_b`, or
/// `None` when infeasible.
pub fn solve_edge_estimator(game: &PmGame, a: usize, b: usize, mode: EstimatorMode) -> Option<EdgeEstimator> {
    let k = game.k();
    let s = game.symbol_count();
    let actions: Vec<usize> = match mode {
        EstimatorMode::Local => {
            let mut v = vec![a, b];
            v.sort_unstable();
            v.dedup();
            v
        }
        EstimatorMode::Global => (0..k).collect(),
    };
    let mut vars: Vec<(usize, usize)> = Vec::new();
    for &c in &actions {
        for sig in game.row_symbols(c) {
            vars.push((c, sig));
        }
    }
    let n = vars.len();
    let mut obj = vec![0.0; n + 1];
    obj[n] = 1.0;
    let mut lp = LinearProgram::minimize(obj);
    for j in 0..n {
        lp.set_free(j);
        let mut r = vec![0.0; n + 1];
        r[n] = 1.0;
        r[j] = -1.0;
        lp.constrain(r.clone(), Relation::Ge, 0.0);
        r[j] = 1.0;
        lp.constrain(r, Relation::Ge, 0.0);
    }
    for x in 0..game.d() {
        let mut r = vec![0.0; n + 1];
        for (j, &(c, sig)) in vars.iter().enumerate() {
            if game.feedback(c, x) == sig {
                r[j] = 1.0;
            }
        }
        lp.constrain(r, Relation::Eq, game.loss(a, x) - game.loss(b, x));
    }
    let LpOutcome::Optimal { x: sol, .. } = lp.solve() else {
        return None;
    };
    let mut w = vec![vec![0.0; s]; k];
    for (j, &(c, sig)) in vars.iter().enumerate() {
        w[c][sig] = sol[j];
    }
    let est = EdgeEstimator {
        norm: w.iter().flatten().fold(0.0, |m, v: &f64| m.max(v.abs())),
        w,
    };
    (edge_residual(game, a, b, &est.w) <= IDENTITY_TOL).then_some(est)
}

/// `max_x |sum_c w(c, Phi_cx) - (L_ax - L_bx)|`.
pub fn edge_residual(game: &PmGame, a: usize, b: usize, w: &[Vec<f64>]) -> f64 {
    (0..game.d())
        .map(|x| {
            let s: f64 = (0..game.k()).map(|c| w[c][game.feedback(c, x)]).sum();
            (s - (game.loss(a, x) - game.loss(b, x))).abs()
        })
        .fold(0.0, f64::max)
}

struct Cells {
    pareto: Vec<usize>,
    dominated: Vec<usize>,
    neighbors: Vec<[usize; 2]>,
    borderline: Vec<String>,
}

fn analyze_cells(game: &PmGame) -> Result<Cells> {
    let k = game.k();
    let d = game.d();
    for a in 0..k {
        for b in a + 1..k {
            if game.loss_row(a) == game.loss_row(b) {
                return Err(Error::GameRejected(format!(
                    "actions {a} and {b} are duplicates (identical loss rows)"
                )));
            }
        }
    }
    let simplex = (vec![1.0; d], 1.0);
    let mut borderline = Vec::new();
    let mut pareto = Vec::new();
    let mut dominated = Vec::new();
    for a in 0..k {
        let ineqs: Vec<(Vec<f64>, f64)> = (0..k)
            .filter(|&b| b != a)
            .map(|b| (diff_row(game, a, b), 0.0))
            .collect();
        match polytope_dim(d, std::slice::from_ref(&simplex), &ineqs) {
            None => dominated.push(a),
            Some(p) if p.dim == d - 1 => {
                if p.min_loose_slack < 10.0 * GEOMETRY_TOL {
                    borderline.push(format!(
                        "cell of action {a} is full-dimensional with slack {:e}",
                        p.min_loose_slack
                    ));
                }
                pareto.push(a);
            }
            Some(p) => {
                return Err(Error::GameRejected(format!(
                    "action {a} is degenerate: its cell has dimension {} < {}",
                    p.dim,
                    d - 1
                )))
            }
        }
    }
    let mut neighbors = Vec::new();
    for (i, &a) in pareto.iter().enumerate() {
        for &b in &pareto[i + 1..] {
            let eqs = vec![simplex.clone(), (diff_row(game, a, b), 0.0)];
            let ineqs: Vec<(Vec<f64>, f64)> = (0..k)
                .filter(|&c| c != a && c != b)
                .map(|c| (diff_row(game, a, c), 0.0))
                .collect();
            if let Some(p) = polytope_dim(d, &eqs, &ineqs) {
                if d >= 2 && p.dim == d - 2 {
                    if p.min_loose_slack < 10.0 * GEOMETRY_TOL {
                        borderline.push(format!(
                            "neighbor test {a}-{b} passed with slack {:e}",
                            p.min_loose_slack
                        ));
                    }
                    neighbors.push([a, b]);
                }
            }
        }
    }
    Ok(Cells {
        pareto,
        dominated,
        neighbors,
        borderline,
    })
}

/// Breadth-first in-tree over the neighbor graph rooted at `root`; edges are
/// returned as `[child, parent]`. Returns `None` if the graph is disconnected.
fn in_tree(pareto: &[usize], neighbors: &[[usize; 2]], root: usize) -> Option<Vec<[usize; 2]>> {
    let mut parent: Vec<Option<usize>> = vec![None; pareto.iter().max().map_or(0, |m| m + 1)];
    let mut seen = vec![false; parent.len()];
    let mut queue = VecDeque::from([root]);
    seen[root] = true;
    let mut order = Vec::new();
    while let Some(u) = queue.pop_front() {
        let mut adj: Vec<usize> = neighbors
            .iter()
            .filter_map(|e| match *e {
                [a, b] if a == u => Some(b),
                [a, b] if b == u => Some(a),
                _ => None,
            })
            .collect();
        adj.sort_unstable();
        for v in adj {
            if !seen[v] {
                seen[v] = true;
                parent[v] = Some(u);
                order.push([v, u]);
                queue.push_back(v);
            }
        }
    }
    pareto.iter().all(|&a| seen[a]).then_some(order)
}

/// Path from `b` to the root as a list of `[child, parent]` edges.
fn path_to_root(tree: &[[usize; 2]], b: usize) -> Vec<[usize; 2]> {
    let mut path = Vec::new();
    let mut cur = b;
    while let Some(e) = tree.iter().find(|e| e[0] == cur) {
        path.push(*e);
        cur = e[1];
    }
    path
}

fn build_g_circ(game: &PmGame, pareto: &[usize], tree: &[[usize; 2]], edges: &[EdgeReport], mode: EstimatorMode) -> Option<EstimationFunction> {
    let k = game.k();
    let s = game.symbol_count();
    let mut g = EstimationFunction::zeros(k, s);
    for &b in pareto {
        for [child, parent] in path_to_root(tree, b) {
            let report = edges.iter().find(|e| {
                e.pair == [child, parent] || e.pair == [parent, child]
            })?;
            let est = match mode {
                EstimatorMode::Local => report.local.as_ref()?,
                EstimatorMode::Global => report.global.as_ref()?,
            };
            // w estimates L_pair0 - L_pair1; the path needs L_child - L_parent.
            let sign = if report.pair[0] == child { 1.0 } else { -1.0 };
            for a in 0..k {
                for sig in 0..s {
                    g.values[a][sig][b] += sign * est.w[a][sig];
                }
            }
        }
    }
    Some(g)
}

struct NullSpace {
    basis: Vec<EstimationFunction>,
    unknowns: usize,
    rank: usize,
    rank_sketch: usize,
}

/// Basis of `{N : (e_b - e_c)^T sum_a N(a, Phi_ax) = 0 for all b, c in Pareto, x}`
/// over entries with `a, b` Pareto and `sigma` appearing in row `a`.
fn h_null_space(game: &PmGame, pareto: &[usize]) -> Result<NullSpace> {
    let k = game.k();
    let s = game.symbol_count();
    let mut cols: Vec<(usize, usize, usize)> = Vec::new();
    for &a in pareto {
        for sig in game.row_symbols(a) {
            for &b in pareto {
                cols.push((a, sig, b));
            }
        }
    }
    let n = cols.len();
    let col_of = |a: usize, sig: usize, b: usize| cols.iter().position(|&c| c == (a, sig, b));
    let c0 = pareto[0];
    let mut rows = Vec::new();
    for x in 0..game.d() {
        for &b in &pareto[1..] {
            let mut r = vec![0.0; n];
            for &a in pareto {
                let sig = game.feedback(a, x);
                r[col_of(a, sig, b).expect("column exists")] += 1.0;
                r[col_of(a, sig, c0).expect("column exists")] -= 1.0;
            }
            rows.push(r);
        }
    }
    let vectors = null_space(&rows, n, NULL_SPACE_TOL);
    let rank_direct = rank(&rows, 1e-9);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let sketch: Vec<Vec<f64>> = (0..rows.len())
        .map(|_| {
            let coef: Vec<f64> = (0..rows.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            (0..n)
                .map(|j| coef.iter().zip(&rows).map(|(c, r)| c * r[j]).sum())
                .collect()
        })
        .collect();
    let rank_sketch = rank(&sketch, 1e-8);
    if n - vectors.len() != rank_sketch || rank_direct != rank_sketch {
        return Err(Error::Numerical(format!(
            "null-space rank mismatch: svd {}, elimination {rank_direct}, sketch {rank_sketch}",
            n - vectors.len()
        )));
    }
    let basis = vectors
        .into_iter()
        .map(|v| {
            let mut f = EstimationFunction::zeros(k, s);
            for (j, &(a, sig, b)) in cols.iter().enumerate() {
                f.values[a][sig][b] = v[j];
            }
            f
        })
        .collect();
    Ok(NullSpace {
        basis,
        unknowns: n,
        rank: rank_sketch,
        rank_sketch,
    })
}

/// Full structural analysis. Duplicate or degenerate actions and a
/// disconnected neighbor graph are rejected.
pub fn analyze(game: &PmGame) -> Result<GameAnalysis> {
    let Cells {
        pareto,
        dominated,
        neighbors,
        borderline,
    } = analyze_cells(game)?;
    let root = *pareto
        .first()
        .ok_or_else(|| Error::GameRejected("no Pareto-optimal action".into()))?;
    let tree = in_tree(&pareto, &neighbors, root).ok_or_else(|| {
        Error::GameRejected("neighbor graph over Pareto-optimal actions is disconnected".into())
    })?;

    let edges: Vec<EdgeReport> = neighbors
        .iter()
        .map(|&[a, b]| EdgeReport {
            pair: [a, b],
            local: solve_edge_estimator(game, a, b, EstimatorMode::Local),
            global: solve_edge_estimator(game, a, b, EstimatorMode::Global),
        })
        .collect();
    let observability = if edges.iter().all(|e| e.local.is_some()) {
        Observability::Locally
    } else if edges.iter().all(|e| e.global.is_some()) {
        Observability::GloballyOnly
    } else {
        Observability::NotGlobal
    };

    let g_circ_local = (observability == Observability::Locally)
        .then(|| build_g_circ(game, &pareto, &tree, &edges, EstimatorMode::Local))
        .flatten();
    let g_circ_global = (observability != Observability::NotGlobal)
        .then(|| build_g_circ(game, &pareto, &tree, &edges, EstimatorMode::Global))
        .flatten();
    for (name, g) in [("local", &g_circ_local), ("global", &g_circ_global)] {
        if let Some(g) = g {
            let res = g.difference_residual(game, &pareto);
            if res > IDENTITY_TOL {
                return Err(Error::Numerical(format!(
                    "{name} in-tree estimation function violates the difference identity by {res:e}"
                )));
            }
        }
    }
    let g_circ_norm = g_circ_global.as_ref().map(EstimationFunction::norm_inf);
    let c_g = g_circ_norm.map(|n| (game.k() as f64 * n).max(1.0));

    let ns = h_null_space(game, &pareto)?;
    Ok(GameAnalysis {
        k: game.k(),
        d: game.d(),
        m: game.max_row_symbols(),
        pareto,
        dominated,
        neighbors,
        observability,
        edges,
        root,
        tree,
        g_circ_local,
        g_circ_global,
        g_circ_norm,
        c_g,
        h_null_basis: ns.basis,
        h_unknowns: ns.unknowns,
        h_rank: ns.rank,
        h_rank_sketch: ns.rank_sketch,
        borderline,
    })
}

impl GameAnalysis {
    /// Re-checks every stored estimator and in-tree function against the
    /// game, e.g. after loading a serialized report.
    pub fn verify(&self, game: &PmGame) -> Result<()> {
        if game.k() != self.k || game.d() != self.d {
            return Err(Error::Config("analysis does not match the game's dimensions".into()));
        }
        for e in &self.edges {
            let [a, b] = e.pair;
            if let Some(l) = &e.local {
                let res = edge_residual(game, a, b, &l.w);
                let leaks = (0..self.k)
                    .filter(|&c| c != a && c != b)
                    .any(|c| l.w[c].iter().any(|&v| v != 0.0));
                if res > IDENTITY_TOL || leaks {
                    return Err(Error::Numerical(format!(
                        "local estimator of edge {a}-{b} fails verification (residual {res:e})"
                    )));
                }
            }
            if let Some(g) = &e.global {
                let res = edge_residual(game, a, b, &g.w);
                if res > IDENTITY_TOL {
                    return Err(Error::Numerical(format!(
                        "global estimator of edge {a}-{b} fails verification (residual {res:e})"
                    )));
                }
            }
        }
        for g in [&self.g_circ_local, &self.g_circ_global].into_iter().flatten() {
            let res = g.difference_residual(game, &self.pareto);
            if res > IDENTITY_TOL {
                return Err(Error::Numerical(format!(
                    "in-tree function fails the difference identity by {res:e}"
                )));
            }
        }
        Ok(())
    }

    pub fn is_pareto(&self, a: usize) -> bool {
        self.pareto.contains(&a)
    }
}
