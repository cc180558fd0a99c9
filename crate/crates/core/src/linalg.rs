//! Small dense linear-programming and linear-algebra routines.
//!
//! Games analyzed here have at most a handful of actions and outcomes, so a
//! textbook two-phase tableau simplex with Bland's rule is plenty.

use nalgebra::DMatrix;

const PIVOT_EPS: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

/// `minimize c^T x` subject to linear constraints, with each variable either
/// nonnegative or free.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    objective: Vec<f64>,
    free: Vec<bool>,
    rows: Vec<(Vec<f64>, Relation, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

impl LinearProgram {
    /// A program over `n` nonnegative variables with objective `c`.
    pub fn minimize(objective: Vec<f64>) -> Self {
        let n = objective.len();
        Self {
            objective,
            free: vec![false; n],
            rows: Vec::new(),
        }
    }

    pub fn set_free(&mut self, var: usize) -> &mut Self {
        self.free[var] = true;
        self
    }

    pub fn constrain(&mut self, coeffs: Vec<f64>, rel: Relation, rhs: f64) -> &mut Self {
        assert_eq!(coeffs.len(), self.objective.len());
        self.rows.push((coeffs, rel, rhs));
        self
    }

    pub fn solve(&self) -> LpOutcome {
        // Column layout: one column per nonnegative variable, two for each
        // free variable, then one slack per inequality.
        let n = self.objective.len();
        let mut col_of = Vec::with_capacity(n);
        let mut ncols = 0;
        for &f in &self.free {
            col_of.push(ncols);
            ncols += if f { 2 } else { 1 };
        }
        let n_struct = ncols;
        let n_slack = self.rows.iter().filter(|r| r.1 != Relation::Eq).count();
        let n_std = n_struct + n_slack;
        let m = self.rows.len();
        let width = n_std + m + 1;
        let rhs_col = width - 1;

        let mut tab = vec![vec![0.0; width]; m];
        let mut slack = n_struct;
        for (i, (coeffs, rel, rhs)) in self.rows.iter().enumerate() {
            let row = &mut tab[i];
            for (j, &c) in coeffs.iter().enumerate() {
                row[col_of[j]] = c;
                if self.free[j] {
                    row[col_of[j] + 1] = -c;
                }
            }
            match rel {
                Relation::Le => {
                    row[slack] = 1.0;
                    slack += 1;
                }
                Relation::Ge => {
                    row[slack] = -1.0;
                    slack += 1;
                }
                Relation::Eq => {}
            }
            row[rhs_col] = *rhs;
            if *rhs < 0.0 {
                for v in row.iter_mut() {
                    *v = -*v;
                }
            }
            row[n_std + i] = 1.0;
        }
        let mut basis: Vec<usize> = (n_std..n_std + m).collect();

        // Phase 1: minimize the sum of artificials.
        let mut cost = vec![0.0; width];
        for c in cost.iter_mut().take(n_std + m).skip(n_std) {
            *c = 1.0;
        }
        if run_simplex(&mut tab, &mut basis, &cost, n_std + m).is_err() {
            return LpOutcome::Infeasible;
        }
        let infeas: f64 = basis
            .iter()
            .zip(&tab)
            .filter(|(&b, _)| b >= n_std)
            .map(|(_, row)| row[rhs_col])
            .sum();
        let scale = 1.0 + self.rows.iter().map(|r| r.2.abs()).fold(0.0, f64::max);
        if infeas > 1e-9 * scale {
            return LpOutcome::Infeasible;
        }
        // Drive remaining artificials out of the basis; drop redundant rows.
        let mut i = 0;
        while i < tab.len() {
            if basis[i] >= n_std {
                match (0..n_std).find(|&j| tab[i][j].abs() > 1e-9) {
                    Some(j) => pivot(&mut tab, &mut basis, i, j),
                    None => {
                        tab.remove(i);
                        basis.remove(i);
                        continue;
                    }
                }
            }
            i += 1;
        }
        for row in tab.iter_mut() {
            for v in row.iter_mut().take(n_std + m).skip(n_std) {
                *v = 0.0;
            }
        }

        // Phase 2 over structural and slack columns only.
        let mut cost = vec![0.0; width];
        for (j, &c) in self.objective.iter().enumerate() {
            cost[col_of[j]] = c;
            if self.free[j] {
                cost[col_of[j] + 1] = -c;
            }
        }
        if run_simplex(&mut tab, &mut basis, &cost, n_std).is_err() {
            return LpOutcome::Unbounded;
        }

        let mut std_x = vec![0.0; n_std];
        for (row, &b) in tab.iter().zip(&basis) {
            if b < n_std {
                std_x[b] = row[rhs_col];
            }
        }
        let x: Vec<f64> = (0..n)
            .map(|j| {
                let v = std_x[col_of[j]];
                if self.free[j] {
                    v - std_x[col_of[j] + 1]
                } else {
                    v
                }
            })
            .collect();
        let value = x.iter().zip(&self.objective).map(|(a, b)| a * b).sum();
        LpOutcome::Optimal { x, value }
    }
}

struct Unbounded;

/// Bland's-rule primal simplex on an already-feasible tableau, entering only
/// columns `< n_enter`.
fn run_simplex(
    tab: &mut [Vec<f64>],
    basis: &mut [usize],
    cost: &[f64],
    n_enter: usize,
) -> Result<(), Unbounded> {
    let rhs_col = cost.len() - 1;
    for _ in 0..10_000 {
        // reduced cost c_j - c_B^T B^{-1} A_j
        let entering = (0..n_enter).find(|&j| {
            if basis.contains(&j) {
                return false;
            }
            let mut r = cost[j];
            for (row, &b) in tab.iter().zip(basis.iter()) {
                r -= cost[b] * row[j];
            }
            r < -1e-10
        });
        let Some(j) = entering else {
            return Ok(());
        };
        let mut best: Option<(usize, f64)> = None;
        for (i, row) in tab.iter().enumerate() {
            if row[j] > PIVOT_EPS {
                let ratio = row[rhs_col] / row[j];
                match best {
                    Some((bi, br))
                        if ratio > br + 1e-12 || (ratio > br - 1e-12 && basis[i] > basis[bi]) => {}
                    _ => best = Some((i, ratio)),
                }
            }
        }
        let Some((i, _)) = best else {
            return Err(Unbounded);
        };
        pivot(tab, basis, i, j);
    }
    Ok(())
}

fn pivot(tab: &mut [Vec<f64>], basis: &mut [usize], r: usize, c: usize) {
    let p = tab[r][c];
    for v in tab[r].iter_mut() {
        *v /= p;
    }
    let pivot_row = tab[r].clone();
    for (i, row) in tab.iter_mut().enumerate() {
        if i != r {
            let f = row[c];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
    }
    basis[r] = c;
}

/// Orthonormal basis of the null space of `a` (rows of length `ncols`), via SVD.
pub fn null_space(rows: &[Vec<f64>], ncols: usize, rel_tol: f64) -> Vec<Vec<f64>> {
    if ncols == 0 {
        return Vec::new();
    }
    // Pad to at least square so the SVD returns a complete right basis.
    let nrows = rows.len().max(ncols);
    let mut m = DMatrix::<f64>::zeros(nrows, ncols);
    for (i, r) in rows.iter().enumerate() {
        for (j, &v) in r.iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = rel_tol * smax.max(1.0);
    let mut basis = Vec::new();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s <= tol {
            basis.push(v_t.row(i).iter().cloned().collect());
        }
    }
    basis
}

/// Numerical rank by Gaussian elimination with partial pivoting.
pub fn rank(rows: &[Vec<f64>], tol: f64) -> usize {
    let mut a: Vec<Vec<f64>> = rows.to_vec();
    let ncols = a.first().map_or(0, |r| r.len());
    let mut r = 0;
    for c in 0..ncols {
        if r == a.len() {
            break;
        }
        let (piv, val) = (r..a.len())
            .map(|i| (i, a[i][c].abs()))
            .fold((r, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if val <= tol {
            continue;
        }
        a.swap(r, piv);
        let pr = a[r].clone();
        for row in a.iter_mut().skip(r + 1) {
            let f = row[c] / pr[c];
            if f != 0.0 {
                for (v, p) in row.iter_mut().zip(&pr) {
                    *v -= f * p;
                }
            }
        }
        r += 1;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn optimal(o: LpOutcome) -> (Vec<f64>, f64) {
        match o {
            LpOutcome::Optimal { x, value } => (x, value),
            other => panic!("expected optimum, got {other:?}"),
        }
    }

    #[test]
    fn small_lp() {
        // max x + y s.t. x + 2y <= 4, 3x + y <= 6 -> (1.6, 1.2)
        let mut lp = LinearProgram::minimize(vec![-1.0, -1.0]);
        lp.constrain(vec![1.0, 2.0], Relation::Le, 4.0)
            .constrain(vec![3.0, 1.0], Relation::Le, 6.0);
        let (x, v) = optimal(lp.solve());
        assert!((x[0] - 1.6).abs() < 1e-10 && (x[1] - 1.2).abs() < 1e-10);
        assert!((v + 2.8).abs() < 1e-10);
    }

    #[test]
    fn free_variables_and_equalities() {
        // min |t| style: min t s.t. t >= x, t >= -x, x = -3 with x free
        let mut lp = LinearProgram::minimize(vec![0.0, 1.0]);
        lp.set_free(0)
            .constrain(vec![-1.0, 1.0], Relation::Ge, 0.0)
            .constrain(vec![1.0, 1.0], Relation::Ge, 0.0)
            .constrain(vec![1.0, 0.0], Relation::Eq, -3.0);
        let (x, v) = optimal(lp.solve());
        assert!((x[0] + 3.0).abs() < 1e-10);
        assert!((v - 3.0).abs() < 1e-10);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = LinearProgram::minimize(vec![1.0]);
        lp.constrain(vec![1.0], Relation::Le, -1.0);
        assert_eq!(lp.solve(), LpOutcome::Infeasible);

        let mut lp = LinearProgram::minimize(vec![-1.0]);
        lp.constrain(vec![1.0], Relation::Ge, 1.0);
        assert_eq!(lp.solve(), LpOutcome::Unbounded);
    }

    #[test]
    fn redundant_equalities() {
        let mut lp = LinearProgram::minimize(vec![1.0, 2.0]);
        lp.constrain(vec![1.0, 1.0], Relation::Eq, 1.0)
            .constrain(vec![2.0, 2.0], Relation::Eq, 2.0);
        let (x, v) = optimal(lp.solve());
        assert!((x[0] - 1.0).abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn null_space_and_rank_agree() {
        let rows = vec![
            vec![1.0, 1.0, 0.0, 0.0],
            vec![0.0, 1.0, 1.0, 0.0],
            vec![1.0, 2.0, 1.0, 0.0],
        ];
        let ns = null_space(&rows, 4, 1e-10);
        assert_eq!(rank(&rows, 1e-10), 2);
        assert_eq!(ns.len(), 4 - 2);
        for v in &ns {
            for r in &rows {
                let dot: f64 = r.iter().zip(v).map(|(a, b)| a * b).sum();
                assert!(dot.abs() < 1e-12);
            }
        }
    }
}
