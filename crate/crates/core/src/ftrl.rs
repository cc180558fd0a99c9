//! Exact FTRL steps for separable regularizers.
//!
//! Minimizes `<L, q> + sum_a w_a phi(q_a)` over either the probability simplex
//! restricted to a support set or the m-set polytope `{x in [0,1]^d : sum x = m}`.
//! Stationarity gives `q_a(mu) = (phi')^{-1}((mu - L_a) / w_a)`, so the whole
//! problem reduces to a monotone scalar equation `sum_a q_a(mu) = target` in
//! the Lagrange multiplier `mu`. The barrier in every supported potential
//! keeps the coordinates strictly inside `(0, 1)`, so no box constraints are
//! handled explicitly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regularizers::Potential;

const SUM_TOL: f64 = 1e-12;
const MAX_DOUBLINGS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Region {
    /// Probability simplex with coordinates outside `support` pinned to zero.
    Simplex { support: Vec<usize> },
    /// `{x in [0,1]^d : sum x = m}`.
    MSetBox { m: usize },
}

impl Region {
    pub fn full_simplex(k: usize) -> Self {
        Region::Simplex {
            support: (0..k).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FtrlProblem {
    pub linear: Vec<f64>,
    pub weights: Vec<f64>,
    pub potential: Potential,
    pub region: Region,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FtrlSolution {
    pub point: Vec<f64>,
    /// Lagrange multiplier of the sum constraint.
    pub dual: f64,
    /// Largest of the sum-constraint violation and the scaled stationarity
    /// violation `|w_a phi'(q_a) + L_a - mu| / max(1, |mu|)`.
    pub kkt_residual: f64,
}

impl FtrlProblem {
    pub fn validate(&self) -> Result<()> {
        let n = self.linear.len();
        if n == 0 || self.weights.len() != n {
            return Err(Error::InvalidProblem(format!(
                "linear term has {n} entries, weights {}",
                self.weights.len()
            )));
        }
        if self.linear.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidProblem("non-finite linear term".into()));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidProblem("weights must be positive".into()));
        }
        let (lo, hi) = self.potential.domain();
        if lo != 0.0 || hi != 1.0 {
            return Err(Error::InvalidProblem(
                "FTRL potentials must live on (0, 1)".into(),
            ));
        }
        match &self.region {
            Region::Simplex { support } => {
                if support.is_empty() || support.iter().any(|&a| a >= n) {
                    return Err(Error::InvalidProblem("bad support set".into()));
                }
            }
            Region::MSetBox { m } => {
                if *m == 0 || *m > n {
                    return Err(Error::InvalidProblem(format!("m = {m} not in 1..={n}")));
                }
            }
        }
        Ok(())
    }

    fn active(&self) -> Vec<usize> {
        match &self.region {
            Region::Simplex { support } => {
                let mut s = support.clone();
                s.sort_unstable();
                s.dedup();
                s
            }
            Region::MSetBox { .. } => (0..self.linear.len()).collect(),
        }
    }

    fn target(&self) -> f64 {
        match &self.region {
            Region::Simplex { .. } => 1.0,
            Region::MSetBox { m } => *m as f64,
        }
    }

    fn coord(&self, a: usize, mu: f64) -> f64 {
        self.potential
            .grad_inverse_saturating((mu - self.linear[a]) / self.weights[a])
    }

    /// Primal point induced by a multiplier value.
    pub fn point_at(&self, mu: f64) -> Vec<f64> {
        let mut point = vec![0.0; self.linear.len()];
        for a in self.active() {
            point[a] = self.coord(a, mu);
        }
        point
    }

    /// `sum_a q_a(mu)` over the active coordinates.
    pub fn mass_at(&self, mu: f64) -> f64 {
        self.active().into_iter().map(|a| self.coord(a, mu)).sum()
    }

    /// FTRL objective at a feasible point; `+inf` if a coordinate is on the boundary.
    pub fn objective(&self, point: &[f64]) -> f64 {
        let mut v = 0.0;
        for a in self.active() {
            match self.potential.eval(point[a]) {
                Ok(phi) => v += self.linear[a] * point[a] + self.weights[a] * phi,
                Err(_) => return f64::INFINITY,
            }
        }
        v
    }
}

/// Solve from scratch.
pub fn solve(problem: &FtrlProblem) -> Result<FtrlSolution> {
    solve_warm(problem, None)
}

/// Solve, using `mu_hint` (typically the previous round's multiplier) as the
/// first Newton iterate when it lies inside the bracket.
pub fn solve_warm(problem: &FtrlProblem, mu_hint: Option<f64>) -> Result<FtrlSolution> {
    problem.validate()?;
    let active = problem.active();
    let target = problem.target();
    let n = active.len() as f64;
    if target >= n {
        // Only one feasible point: every active coordinate equals one.
        let mut point = vec![0.0; problem.linear.len()];
        for &a in &active {
            point[a] = 1.0;
        }
        return Ok(FtrlSolution {
            point,
            dual: f64::INFINITY,
            kkt_residual: 0.0,
        });
    }

    // At mu_a = L_a + w_a phi'(target / n) coordinate a equals target / n, so
    // the extreme values bracket the root.
    let level = problem.potential.grad(target / n)?;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &a in &active {
        let mu = problem.linear[a] + problem.weights[a] * level;
        lo = lo.min(mu);
        hi = hi.max(mu);
    }
    let mu = dual_search_from(problem, lo, hi, mu_hint)?;
    let point = problem.point_at(mu);
    let kkt_residual = kkt_residual(problem, &point, mu);
    Ok(FtrlSolution {
        point,
        dual: mu,
        kkt_residual,
    })
}

fn kkt_residual(problem: &FtrlProblem, point: &[f64], mu: f64) -> f64 {
    let active = problem.active();
    let sum: f64 = active.iter().map(|&a| point[a]).sum();
    let scale = mu.abs().max(1.0);
    active
        .iter()
        .map(|&a| {
            let g = problem.potential.grad(point[a]).unwrap_or(f64::INFINITY);
            (problem.weights[a] * g + problem.linear[a] - mu).abs() / scale
        })
        .fold((sum - problem.target()).abs(), f64::max)
}

/// Find `mu` with `|sum_a q_a(mu) - target| <= 1e-12`, starting from the
/// bracket `[mu_lo, mu_hi]` and widening it by doubling if it does not
/// contain the root.
pub fn dual_search(problem: &FtrlProblem, mu_lo: f64, mu_hi: f64) -> Result<f64> {
    problem.validate()?;
    dual_search_from(problem, mu_lo, mu_hi, None)
}

fn dual_search_from(
    problem: &FtrlProblem,
    mu_lo: f64,
    mu_hi: f64,
    hint: Option<f64>,
) -> Result<f64> {
    let active = problem.active();
    let target = problem.target();
    let excess = |mu: f64| -> (f64, f64) {
        let mut mass = 0.0;
        let mut slope = 0.0;
        for &a in &active {
            let q = problem.coord(a, mu);
            mass += q;
            slope += 1.0 / (problem.weights[a] * problem.potential.hess_unchecked(q));
        }
        (mass - target, slope)
    };

    let (mut lo, mut hi) = (mu_lo.min(mu_hi), mu_lo.max(mu_hi));
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::DualBracket(0));
    }
    let mut width = (hi - lo).max(1.0);
    let mut doublings = 0;
    while excess(lo).0 > 0.0 {
        lo -= width;
        width *= 2.0;
        doublings += 1;
        if doublings > MAX_DOUBLINGS || !lo.is_finite() {
            return Err(Error::DualBracket(doublings));
        }
    }
    while excess(hi).0 < 0.0 {
        hi += width;
        width *= 2.0;
        doublings += 1;
        if doublings > MAX_DOUBLINGS || !hi.is_finite() {
            return Err(Error::DualBracket(doublings));
        }
    }

    let mut mu = match hint {
        Some(h) if h > lo && h < hi => h,
        _ => 0.5 * (lo + hi),
    };
    for _ in 0..500 {
        let (f, df) = excess(mu);
        if f.is_nan() {
            return Err(Error::Numerical("NaN in dual search".into()));
        }
        if f.abs() <= SUM_TOL {
            return Ok(mu);
        }
        if f < 0.0 {
            lo = mu;
        } else {
            hi = mu;
        }
        if hi - lo <= 4.0 * f64::EPSILON * mu.abs().max(1.0) {
            // Bracket exhausted at double precision.
            return Ok(mu);
        }
        let newton = mu - f / df;
        mu = if newton > lo && newton < hi && df > 0.0 {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(Error::Numerical("dual search did not converge".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regularizers::PotentialKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn simplex(linear: Vec<f64>, weights: Vec<f64>, potential: Potential) -> FtrlProblem {
        let k = linear.len();
        FtrlProblem {
            linear,
            weights,
            potential,
            region: Region::full_simplex(k),
        }
    }

    #[test]
    fn symmetric_simplex_is_uniform() {
        let p = simplex(vec![0.0; 4], vec![1.0; 4], Potential::hybrid_local(3.0));
        let s = solve(&p).unwrap();
        for q in &s.point {
            assert!((q - 0.25).abs() < 1e-12);
        }
        assert!(s.kkt_residual < 1e-10);
    }

    #[test]
    fn symmetric_mset_box() {
        let p = FtrlProblem {
            linear: vec![0.0; 4],
            weights: vec![1.0; 4],
            potential: Potential::hybrid_lbinfv(3.0),
            region: Region::MSetBox { m: 2 },
        };
        let s = solve(&p).unwrap();
        for q in &s.point {
            assert!((q - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn two_coordinates_match_grid_minimization() {
        let p = simplex(vec![0.0, 1.0], vec![1.0, 1.0], Potential::hybrid_local(2.0));
        let s = solve(&p).unwrap();
        // brute force over the 1-D slice q = (t, 1 - t)
        let n = 1_000_000;
        let mut best = (f64::INFINITY, 0.0);
        for i in 1..n {
            let t = i as f64 / n as f64;
            let v = p.objective(&[t, 1.0 - t]);
            if v < best.0 {
                best = (v, t);
            }
        }
        assert!((s.point[0] - best.1).abs() < 1e-5);
        assert!(s.point[0] > 0.5);
    }

    #[test]
    fn support_is_respected() {
        let p = FtrlProblem {
            linear: vec![0.3, 5.0, 0.1, 2.0],
            weights: vec![1.0, 2.0, 1.5, 1.0],
            potential: Potential::hybrid_local(2.0),
            region: Region::Simplex {
                support: vec![0, 2, 3],
            },
        };
        let s = solve(&p).unwrap();
        assert_eq!(s.point[1], 0.0);
        assert!(s.point[0] > 0.0 && s.point[2] > 0.0 && s.point[3] > 0.0);
        assert!((s.point.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        for &a in &[0, 2, 3] {
            let g = p.potential.grad(s.point[a]).unwrap();
            assert!((p.weights[a] * g + p.linear[a] - s.dual).abs() < 1e-8);
        }
    }

    #[test]
    fn dual_search_symmetric_and_consistent() {
        let p = simplex(vec![0.7, 0.7], vec![2.0, 2.0], Potential::barrier_pair());
        let mu = dual_search(&p, -100.0, 100.0).unwrap();
        let q = p.point_at(mu);
        assert!((q[0] - 0.5).abs() < 1e-12 && (q[1] - 0.5).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = simplex(
            (0..3).map(|_| rng.random_range(-2.0..2.0)).collect(),
            (0..3).map(|_| rng.random_range(0.5..3.0)).collect(),
            Potential::hybrid_local(2.5),
        );
        // deliberately poor bracket forces widening
        let mu = dual_search(&p, 50.0, 60.0).unwrap();
        let s = solve(&p).unwrap();
        for (a, b) in p.point_at(mu).iter().zip(&s.point) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn mass_is_monotone_in_mu() {
        let p = simplex(vec![0.0, 3.0, -1.0], vec![1.0, 0.5, 2.0], Potential::hybrid_local(4.0));
        let mut prev = f64::NEG_INFINITY;
        for i in -200..200 {
            let m = p.mass_at(i as f64 * 0.1);
            assert!(m >= prev);
            prev = m;
        }
    }

    #[test]
    fn non_finite_losses_are_rejected() {
        let p = simplex(vec![f64::NAN, 0.0], vec![1.0, 1.0], Potential::hybrid_local(2.0));
        assert!(solve(&p).is_err());
        let p = simplex(vec![0.0, 0.0], vec![1.0, 1.0], Potential::log_barrier());
        assert!(solve(&p).is_err());
    }

    #[test]
    fn random_instances_beat_random_feasible_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for kind in [PotentialKind::HybridLocal, PotentialKind::BarrierPair] {
            for _ in 0..40 {
                let k = rng.random_range(2..=5);
                let p = simplex(
                    (0..k).map(|_| rng.random_range(-3.0..3.0)).collect(),
                    (0..k).map(|_| rng.random_range(0.2..4.0)).collect(),
                    Potential::new(kind, rng.random_range(1.0..5.0)),
                );
                let s = solve(&p).unwrap();
                let best = p.objective(&s.point);
                for _ in 0..10_000 {
                    let raw: Vec<f64> = (0..k).map(|_| -rng.random::<f64>().ln()).collect();
                    let tot: f64 = raw.iter().sum();
                    let x: Vec<f64> = raw.iter().map(|r| r / tot).collect();
                    assert!(best <= p.objective(&x) + 1e-9);
                }
            }
        }
    }

    #[test]
    fn scaling_invariance() {
        let base = simplex(vec![0.4, -1.0, 2.0], vec![1.0, 2.0, 0.5], Potential::hybrid_local(3.0));
        let s1 = solve(&base).unwrap();
        let scaled = simplex(
            base.linear.iter().map(|v| v * 7.5).collect(),
            base.weights.iter().map(|v| v * 7.5).collect(),
            base.potential,
        );
        let s2 = solve(&scaled).unwrap();
        for (a, b) in s1.point.iter().zip(&s2.point) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
