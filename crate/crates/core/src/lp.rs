//! Dense two-phase simplex for small linear programs.
//!
//! Solves `min c^T x` subject to linear rows and `x >= 0`. Pivoting follows
//! Bland's rule, so the method cannot cycle. Problems here have a few dozen
//! variables at most; callers are expected to pass reasonably scaled rows.

use crate::error::{Error, Result};

/// Pivot and feasibility tolerance on row-normalized tableaux.
pub const LP_TOL: f64 = 1e-9;
const MAX_PIVOTS: usize = 50_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone)]
pub struct LinearProgram {
    num_vars: usize,
    objective: Vec<f64>,
    constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn optimal(&self) -> Option<(&[f64], f64)> {
        match self {
            LpOutcome::Optimal { x, value } => Some((x, *value)),
            _ => None,
        }
    }
}

impl LinearProgram {
    /// Minimize `objective^T x` over `x >= 0`.
    pub fn minimize(objective: Vec<f64>) -> Self {
        LinearProgram { num_vars: objective.len(), objective, constraints: Vec::new() }
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    /// Adds `coeffs^T x (rel) rhs`. The row is rescaled so its largest
    /// coefficient has unit magnitude.
    pub fn add(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) -> Result<()> {
        if coeffs.len() != self.num_vars {
            return Err(Error::Dimension(format!(
                "constraint has {} coefficients, program has {} variables",
                coeffs.len(),
                self.num_vars
            )));
        }
        if !rhs.is_finite() || coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("non-finite constraint data".into()));
        }
        let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        if scale == 0.0 {
            // Constant row: either always true or never true.
            let holds = match relation {
                Relation::Le => rhs >= -LP_TOL,
                Relation::Ge => rhs <= LP_TOL,
                Relation::Eq => rhs.abs() <= LP_TOL,
            };
            if holds {
                return Ok(());
            }
            self.constraints.push(Constraint { coeffs, relation, rhs });
            return Ok(());
        }
        self.constraints.push(Constraint {
            coeffs: coeffs.iter().map(|c| c / scale).collect(),
            relation,
            rhs: rhs / scale,
        });
        Ok(())
    }

    pub fn solve(&self) -> Result<LpOutcome> {
        Tableau::build(self).run(&self.objective)
    }

    /// Largest violation of any row at `x`, including the sign constraints.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = x.iter().fold(0.0f64, |m, v| m.max(-v));
        for c in &self.constraints {
            let lhs: f64 = c.coeffs.iter().zip(x).map(|(a, v)| a * v).sum();
            let v = match c.relation {
                Relation::Le => lhs - c.rhs,
                Relation::Ge => c.rhs - lhs,
                Relation::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(v);
        }
        worst
    }
}

struct Tableau {
    /// `rows[i]` holds the constraint coefficients followed by the rhs.
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    num_vars: usize,
    /// Columns at or beyond this index are artificial.
    first_artificial: usize,
    num_cols: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Tableau {
        let n = lp.num_vars;
        let m = lp.constraints.len();
        let mut slack_count = 0;
        let mut art_count = 0;
        // Normalize to nonnegative rhs first so that each row knows its kind.
        let normalized: Vec<(Vec<f64>, Relation, f64)> = lp
            .constraints
            .iter()
            .map(|c| {
                if c.rhs < 0.0 {
                    let rel = match c.relation {
                        Relation::Le => Relation::Ge,
                        Relation::Ge => Relation::Le,
                        Relation::Eq => Relation::Eq,
                    };
                    (c.coeffs.iter().map(|v| -v).collect(), rel, -c.rhs)
                } else {
                    (c.coeffs.clone(), c.relation, c.rhs)
                }
            })
            .collect();
        for (_, rel, _) in &normalized {
            match rel {
                Relation::Le => slack_count += 1,
                Relation::Ge => {
                    slack_count += 1;
                    art_count += 1
                }
                Relation::Eq => art_count += 1,
            }
        }
        let first_artificial = n + slack_count;
        let num_cols = first_artificial + art_count;
        let mut rows = Vec::with_capacity(m);
        let mut basis = Vec::with_capacity(m);
        let (mut next_slack, mut next_art) = (n, first_artificial);
        for (coeffs, rel, rhs) in normalized {
            let mut row = vec![0.0; num_cols + 1];
            row[..n].copy_from_slice(&coeffs);
            row[num_cols] = rhs;
            match rel {
                Relation::Le => {
                    row[next_slack] = 1.0;
                    basis.push(next_slack);
                    next_slack += 1;
                }
                Relation::Ge => {
                    row[next_slack] = -1.0;
                    next_slack += 1;
                    row[next_art] = 1.0;
                    basis.push(next_art);
                    next_art += 1;
                }
                Relation::Eq => {
                    row[next_art] = 1.0;
                    basis.push(next_art);
                    next_art += 1;
                }
            }
            rows.push(row);
        }
        Tableau { rows, basis, num_vars: n, first_artificial, num_cols }
    }

    fn run(mut self, objective: &[f64]) -> Result<LpOutcome> {
        if self.first_artificial < self.num_cols {
            let mut phase1 = vec![0.0; self.num_cols];
            for c in phase1.iter_mut().skip(self.first_artificial) {
                *c = 1.0;
            }
            if self.optimize(&phase1, self.num_cols)? {
                return Err(Error::Numerical("phase one reported unbounded".into()));
            }
            let infeasibility: f64 = self
                .basis
                .iter()
                .zip(&self.rows)
                .filter(|(b, _)| **b >= self.first_artificial)
                .map(|(_, r)| r[self.num_cols])
                .sum();
            if infeasibility > LP_TOL {
                return Ok(LpOutcome::Infeasible);
            }
            self.evict_artificials();
        }
        let mut phase2 = vec![0.0; self.num_cols];
        phase2[..self.num_vars].copy_from_slice(objective);
        if self.optimize(&phase2, self.first_artificial)? {
            return Ok(LpOutcome::Unbounded);
        }
        let mut x = vec![0.0; self.num_vars];
        for (r, &b) in self.basis.iter().enumerate() {
            if b < self.num_vars {
                x[b] = self.rows[r][self.num_cols].max(0.0);
            }
        }
        let value = objective.iter().zip(&x).map(|(c, v)| c * v).sum();
        Ok(LpOutcome::Optimal { x, value })
    }

    /// Primal simplex over columns `< allowed`. Returns `true` when unbounded.
    fn optimize(&mut self, cost: &[f64], allowed: usize) -> Result<bool> {
        for _ in 0..MAX_PIVOTS {
            let reduced = self.reduced_costs(cost);
            let entering = match (0..allowed).find(|&j| reduced[j] < -LP_TOL && !self.basis.contains(&j)) {
                Some(j) => j,
                None => return Ok(false),
            };
            let rhs = self.num_cols;
            let mut leaving: Option<(usize, f64)> = None;
            for (r, row) in self.rows.iter().enumerate() {
                let a = row[entering];
                if a <= LP_TOL {
                    continue;
                }
                let ratio = row[rhs] / a;
                leaving = match leaving {
                    None => Some((r, ratio)),
                    Some((lr, lratio)) => {
                        if ratio < lratio - LP_TOL
                            || (ratio <= lratio + LP_TOL && self.basis[r] < self.basis[lr])
                        {
                            Some((r, ratio))
                        } else {
                            Some((lr, lratio))
                        }
                    }
                };
            }
            match leaving {
                Some((r, _)) => self.pivot(r, entering),
                None => return Ok(true),
            }
        }
        Err(Error::Numerical("simplex pivot limit reached".into()))
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut reduced = cost.to_vec();
        for (row, &b) in self.rows.iter().zip(&self.basis) {
            let cb = cost[b];
            if cb != 0.0 {
                for j in 0..self.num_cols {
                    reduced[j] -= cb * row[j];
                }
            }
        }
        reduced
    }

    fn pivot(&mut self, r: usize, col: usize) {
        let p = self.rows[r][col];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[col];
            if f != 0.0 {
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                row[col] = 0.0;
            }
        }
        self.basis[r] = col;
    }

    /// Pivots zero-level artificials out of the basis; rows that cannot be
    /// pivoted are linearly dependent and dropped.
    fn evict_artificials(&mut self) {
        let mut r = 0;
        while r < self.rows.len() {
            if self.basis[r] < self.first_artificial {
                r += 1;
                continue;
            }
            let col = (0..self.first_artificial).find(|&j| self.rows[r][j].abs() > LP_TOL);
            match col {
                Some(j) => {
                    self.pivot(r, j);
                    r += 1;
                }
                None => {
                    self.rows.remove(r);
                    self.basis.remove(r);
                }
            }
        }
    }
}
