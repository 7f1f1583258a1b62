//! Dense two-phase primal simplex with Bland's anti-cycling rule.
//!
//! Solves `min c·x` subject to linear rows and `x ≥ 0`. Meant for small
//! problems (a few hundred rows); the tableau is stored densely.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

impl Constraint {
    pub fn new(coeffs: Vec<f64>, relation: Relation, rhs: f64) -> Self {
        Self { coeffs, relation, rhs }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexSolution {
    pub status: LpStatus,
    /// Structural variables; empty unless optimal.
    pub x: Vec<f64>,
    pub objective: f64,
    /// Phase-2 reduced costs of the structural variables at the final basis.
    pub reduced_costs: Vec<f64>,
    pub pivots: usize,
}

const MAX_PIVOTS: usize = 50_000;

struct Tableau {
    /// `rows × (cols + 1)`, last column is the right-hand side.
    a: Vec<f64>,
    rows: usize,
    cols: usize,
    basis: Vec<usize>,
    /// Reduced-cost row, last entry is minus the objective value.
    cost: Vec<f64>,
    pivots: usize,
}

impl Tableau {
    fn width(&self) -> usize {
        self.cols + 1
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.a[r * self.width() + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.cols)
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.width();
        let p = self.a[pr * w + pc];
        for c in 0..w {
            self.a[pr * w + c] /= p;
        }
        self.a[pr * w + pc] = 1.0;
        let pivot_row: Vec<f64> = self.a[pr * w..(pr + 1) * w].to_vec();
        for r in 0..self.rows {
            if r == pr {
                continue;
            }
            let f = self.a[r * w + pc];
            if f != 0.0 {
                let row = &mut self.a[r * w..(r + 1) * w];
                for (x, &p) in row.iter_mut().zip(&pivot_row) {
                    *x -= f * p;
                }
                row[pc] = 0.0;
            }
        }
        let f = self.cost[pc];
        if f != 0.0 {
            for (x, &p) in self.cost.iter_mut().zip(&pivot_row) {
                *x -= f * p;
            }
            self.cost[pc] = 0.0;
        }
        self.basis[pr] = pc;
        self.pivots += 1;
    }

    /// Runs Bland-rule pivots on columns `< allowed`. Returns false if unbounded.
    fn optimise(&mut self, allowed: usize, tol: f64) -> Result<bool> {
        loop {
            if self.pivots > MAX_PIVOTS {
                return Err(Error::NoConvergence {
                    what: "simplex",
                    iterations: MAX_PIVOTS,
                });
            }
            let Some(pc) = (0..allowed).find(|&c| self.cost[c] < -tol) else {
                return Ok(true);
            };
            let mut best: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let v = self.at(r, pc);
                if v > tol {
                    let ratio = self.rhs(r) / v;
                    let better = match best {
                        None => true,
                        Some((br, bratio)) => {
                            ratio < bratio - tol * bratio.abs().max(1.0)
                                || (ratio <= bratio + tol * bratio.abs().max(1.0) && self.basis[r] < self.basis[br])
                        }
                    };
                    if better {
                        best = Some((r, ratio));
                    }
                }
            }
            match best {
                Some((pr, _)) => self.pivot(pr, pc),
                None => return Ok(false),
            }
        }
    }
}

impl LinearProgram {
    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn solve(&self, tol: f64) -> Result<SimplexSolution> {
        let n = self.num_vars();
        let m = self.constraints.len();
        for (i, row) in self.constraints.iter().enumerate() {
            if row.coeffs.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: row.coeffs.len(),
                });
            }
            if !row.rhs.is_finite() || row.coeffs.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("constraint row {i}")));
            }
        }

        // Flip rows so every rhs is non-negative.
        let rows: Vec<(Vec<f64>, Relation, f64)> = self
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

        let n_slack = rows.iter().filter(|r| r.1 != Relation::Eq).count();
        let n_art = rows.iter().filter(|r| r.1 != Relation::Le).count();
        let art_start = n + n_slack;
        let cols = art_start + n_art;
        let w = cols + 1;
        let mut t = Tableau {
            a: vec![0.0; m * w],
            rows: m,
            cols,
            basis: vec![0; m],
            cost: vec![0.0; w],
            pivots: 0,
        };
        let (mut s, mut art) = (n, art_start);
        for (r, (coeffs, rel, rhs)) in rows.iter().enumerate() {
            t.a[r * w..r * w + n].copy_from_slice(coeffs);
            t.a[r * w + cols] = *rhs;
            match rel {
                Relation::Le => {
                    t.a[r * w + s] = 1.0;
                    t.basis[r] = s;
                    s += 1;
                }
                Relation::Ge => {
                    t.a[r * w + s] = -1.0;
                    s += 1;
                    t.a[r * w + art] = 1.0;
                    t.basis[r] = art;
                    art += 1;
                }
                Relation::Eq => {
                    t.a[r * w + art] = 1.0;
                    t.basis[r] = art;
                    art += 1;
                }
            }
        }

        // Phase 1: minimise the sum of artificials.
        if n_art > 0 {
            for c in art_start..cols {
                t.cost[c] = 1.0;
            }
            for r in 0..m {
                if t.basis[r] >= art_start {
                    for c in 0..w {
                        t.cost[c] -= t.a[r * w + c];
                    }
                }
            }
            t.optimise(cols, tol)?;
            let infeasibility = -t.cost[cols];
            let scale = rows.iter().map(|r| r.2).fold(1.0, f64::max);
            if infeasibility > tol * scale {
                return Ok(SimplexSolution {
                    status: LpStatus::Infeasible,
                    x: Vec::new(),
                    objective: f64::NAN,
                    reduced_costs: Vec::new(),
                    pivots: t.pivots,
                });
            }
            // Drive degenerate artificials out of the basis where possible.
            for r in 0..m {
                if t.basis[r] >= art_start {
                    if let Some(pc) = (0..art_start).find(|&c| t.at(r, c).abs() > tol) {
                        t.pivot(r, pc);
                    }
                }
            }
        }

        // Phase 2.
        t.cost.iter_mut().for_each(|v| *v = 0.0);
        t.cost[..n].copy_from_slice(&self.objective);
        for r in 0..m {
            let b = t.basis[r];
            let cb = t.cost[b];
            if cb != 0.0 {
                for c in 0..w {
                    t.cost[c] -= cb * t.a[r * w + c];
                }
            }
        }
        // Artificials left in the basis sit on redundant rows at zero; barring
        // their columns from entering keeps them there.
        if !t.optimise(art_start, tol)? {
            return Ok(SimplexSolution {
                status: LpStatus::Unbounded,
                x: Vec::new(),
                objective: f64::NEG_INFINITY,
                reduced_costs: Vec::new(),
                pivots: t.pivots,
            });
        }
        let mut x = vec![0.0; n];
        for r in 0..m {
            if t.basis[r] < n {
                x[t.basis[r]] = t.rhs(r).max(0.0);
            }
        }
        let objective = x.iter().zip(&self.objective).map(|(a, b)| a * b).sum();
        Ok(SimplexSolution {
            status: LpStatus::Optimal,
            x,
            objective,
            reduced_costs: t.cost[..n].to_vec(),
            pivots: t.pivots,
        })
    }
}
