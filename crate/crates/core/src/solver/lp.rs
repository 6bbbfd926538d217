//! Dense two-phase simplex for bounded-variable linear programs.
//!
//! Sized for the instances this crate produces (a few hundred rows and
//! columns), so the tableau is kept explicitly and repriced in full each
//! iteration. All structural variables must carry finite bounds; only row
//! slacks are one-sided.

use crate::error::{Error, Result};

const EPS: f64 = 1e-9;

/// Row relation of a constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rel {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
struct RowSpec {
    coeffs: Vec<(usize, f64)>,
    rel: Rel,
    rhs: f64,
}

/// max c'x subject to row relations and variable bounds.
#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    objective: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    rows: Vec<RowSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub objective: f64,
    pub x: Vec<f64>,
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a variable with objective coefficient `c` and bounds [lo, up].
    pub fn add_var(&mut self, c: f64, lo: f64, up: f64) -> usize {
        debug_assert!(lo.is_finite() && up.is_finite() && lo <= up + EPS);
        self.objective.push(c);
        self.lower.push(lo);
        self.upper.push(up.max(lo));
        self.objective.len() - 1
    }

    pub fn add_row(&mut self, coeffs: impl Into<Vec<(usize, f64)>>, rel: Rel, rhs: f64) {
        self.rows.push(RowSpec {
            coeffs: coeffs.into(),
            rel,
            rhs,
        });
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn bounds(&self, j: usize) -> (f64, f64) {
        (self.lower[j], self.upper[j])
    }

    pub fn set_bounds(&mut self, j: usize, lo: f64, up: f64) {
        self.lower[j] = lo;
        self.upper[j] = up;
    }

    pub fn solve(&self) -> Result<LpSolution> {
        if self
            .lower
            .iter()
            .zip(self.upper.iter())
            .any(|(lo, up)| lo > &(up + 1e-12))
        {
            return Ok(LpSolution {
                status: LpStatus::Infeasible,
                objective: f64::NEG_INFINITY,
                x: vec![0.0; self.num_vars()],
            });
        }
        Tableau::build(self)?.solve(self)
    }
}

struct Tableau {
    m: usize,
    /// structural + slack count; artificial columns follow.
    n_real: usize,
    n_total: usize,
    rows: Vec<Vec<f64>>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// Current value of every column; basic entries mirror `beta`.
    xval: Vec<f64>,
    basis: Vec<usize>,
    /// Values of basic variables by row.
    beta: Vec<f64>,
    in_basis: Vec<bool>,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Result<Tableau> {
        let n = lp.num_vars();
        let m = lp.num_rows();
        let n_real = n + m;
        let n_total = n_real + m;
        let mut lower = Vec::with_capacity(n_total);
        let mut upper = Vec::with_capacity(n_total);
        lower.extend_from_slice(&lp.lower);
        upper.extend_from_slice(&lp.upper);
        for row in &lp.rows {
            let (lo, up) = match row.rel {
                Rel::Le => (0.0, f64::INFINITY),
                Rel::Eq => (0.0, 0.0),
                Rel::Ge => (f64::NEG_INFINITY, 0.0),
            };
            lower.push(lo);
            upper.push(up);
        }
        // artificials
        lower.extend(std::iter::repeat(0.0).take(m));
        upper.extend(std::iter::repeat(f64::INFINITY).take(m));

        let mut xval = vec![0.0; n_total];
        for j in 0..n {
            // nonbasic variables live on a bound; pick the one nearest zero
            xval[j] = if lp.lower[j].abs() <= lp.upper[j].abs() {
                lp.lower[j]
            } else {
                lp.upper[j]
            };
        }
        // slacks and artificials start at 0

        let mut rows = Vec::with_capacity(m);
        let mut basis = Vec::with_capacity(m);
        let mut beta = Vec::with_capacity(m);
        for (r, row) in lp.rows.iter().enumerate() {
            let mut t = vec![0.0; n_total];
            let mut residual = row.rhs;
            for &(j, a) in &row.coeffs {
                debug_assert!(j < n, "coefficient on unknown variable {j}");
                t[j] += a;
                residual -= a * xval[j];
            }
            t[n + r] = 1.0; // slack
            let sign = if residual >= 0.0 { 1.0 } else { -1.0 };
            if sign < 0.0 {
                for v in t.iter_mut() {
                    *v = -*v;
                }
            }
            t[n_real + r] = 1.0; // artificial, identity after the sign fold
            rows.push(t);
            basis.push(n_real + r);
            beta.push(residual.abs());
        }
        let mut in_basis = vec![false; n_total];
        for (r, &b) in basis.iter().enumerate() {
            in_basis[b] = true;
            xval[b] = beta[r];
        }
        Ok(Tableau {
            m,
            n_real,
            n_total,
            rows,
            lower,
            upper,
            xval,
            basis,
            beta,
            in_basis,
        })
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let piv = self.rows[r][j];
        debug_assert!(piv.abs() > EPS);
        let inv = 1.0 / piv;
        for v in self.rows[r].iter_mut() {
            *v *= inv;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let factor = row[j];
            if factor.abs() > 0.0 {
                for (v, p) in row.iter_mut().zip(pivot_row.iter()) {
                    *v -= factor * p;
                }
                row[j] = 0.0;
            }
        }
        self.in_basis[self.basis[r]] = false;
        self.in_basis[j] = true;
        self.basis[r] = j;
    }

    /// One simplex phase maximizing `c` over the current basis.
    fn run_phase(&mut self, c: &[f64], label: &str) -> Result<()> {
        let max_iters = 200 * (self.m + self.n_total) + 2000;
        let bland_after = 20 * (self.m + self.n_total) + 500;
        for iter in 0..max_iters {
            let bland = iter >= bland_after;
            // y = c_B, reduced cost d_j = c_j - y . T_j
            let cb: Vec<f64> = self.basis.iter().map(|&b| c[b]).collect();
            let mut enter: Option<(usize, f64, f64)> = None; // (col, |d|, dir)
            for j in 0..self.n_total {
                if self.in_basis[j] {
                    continue;
                }
                let range = self.upper[j] - self.lower[j];
                if !(range > EPS) {
                    continue;
                }
                let mut d = c[j];
                for (r, row) in self.rows.iter().enumerate() {
                    if cb[r] != 0.0 {
                        d -= cb[r] * row[j];
                    }
                }
                let at_lower = (self.xval[j] - self.lower[j]).abs() <= 1e-7;
                let dir = if at_lower { 1.0 } else { -1.0 };
                let eligible = if at_lower { d > EPS } else { d < -EPS };
                if !eligible {
                    continue;
                }
                if bland {
                    enter = Some((j, d.abs(), dir));
                    break;
                }
                match enter {
                    Some((_, best, _)) if best >= d.abs() => {}
                    _ => enter = Some((j, d.abs(), dir)),
                }
            }
            let Some((j, _, dir)) = enter else {
                return Ok(()); // optimal for this phase
            };

            // ratio test
            let mut theta = self.upper[j] - self.lower[j];
            let mut leave: Option<usize> = None;
            for r in 0..self.m {
                let alpha = dir * self.rows[r][j];
                if alpha.abs() <= EPS {
                    continue;
                }
                let limit = if alpha > 0.0 {
                    (self.beta[r] - self.lower[self.basis[r]]) / alpha
                } else {
                    (self.upper[self.basis[r]] - self.beta[r]) / (-alpha)
                };
                let limit = limit.max(0.0);
                let better = match leave {
                    None => limit < theta - 1e-12,
                    Some(lr) => {
                        limit < theta - 1e-12
                            || (limit < theta + 1e-12
                                && if bland {
                                    self.basis[r] < self.basis[lr]
                                } else {
                                    self.rows[r][j].abs() > self.rows[lr][j].abs()
                                })
                    }
                };
                if better {
                    theta = limit.min(theta);
                    leave = Some(r);
                }
            }
            if !theta.is_finite() {
                return Err(Error::Solver(format!("{label}: unbounded direction")));
            }
            let step = dir * theta;
            match leave {
                None => {
                    // bound flip
                    self.xval[j] += step;
                    for r in 0..self.m {
                        self.beta[r] -= self.rows[r][j] * step;
                        self.xval[self.basis[r]] = self.beta[r];
                    }
                }
                Some(r) => {
                    let entering_value = self.xval[j] + step;
                    for i in 0..self.m {
                        self.beta[i] -= self.rows[i][j] * step;
                    }
                    // leaving variable lands on the bound it hit
                    let lv = self.basis[r];
                    let lv_val = if dir * self.rows[r][j] > 0.0 {
                        self.lower[lv]
                    } else {
                        self.upper[lv]
                    };
                    self.xval[lv] = lv_val;
                    self.pivot(r, j);
                    self.beta[r] = entering_value;
                    self.xval[j] = entering_value;
                    for i in 0..self.m {
                        self.xval[self.basis[i]] = self.beta[i];
                    }
                }
            }
        }
        Err(Error::Solver(format!("{label}: iteration limit exceeded")))
    }

    fn solve(mut self, lp: &LinearProgram) -> Result<LpSolution> {
        let n = lp.num_vars();
        if self.m > 0 {
            let mut c1 = vec![0.0; self.n_total];
            for j in self.n_real..self.n_total {
                c1[j] = -1.0;
            }
            self.run_phase(&c1, "phase 1")?;
            let infeas: f64 = (self.n_real..self.n_total).map(|j| self.xval[j]).sum();
            if infeas > 1e-7 {
                return Ok(LpSolution {
                    status: LpStatus::Infeasible,
                    objective: f64::NEG_INFINITY,
                    x: vec![0.0; n],
                });
            }
            // pin artificials at zero; drive basic ones out where possible
            for r in 0..self.m {
                let b = self.basis[r];
                if b >= self.n_real {
                    if let Some(j) = (0..self.n_real)
                        .find(|&j| !self.in_basis[j] && self.rows[r][j].abs() > 1e-7)
                    {
                        self.xval[b] = 0.0;
                        self.pivot(r, j);
                        self.beta[r] = self.xval[j];
                        // degenerate swap: entering stays at its current value
                    }
                }
            }
            for j in self.n_real..self.n_total {
                self.lower[j] = 0.0;
                self.upper[j] = 0.0;
                if !self.in_basis[j] {
                    self.xval[j] = 0.0;
                }
            }
        }
        let mut c2 = vec![0.0; self.n_total];
        c2[..n].copy_from_slice(&lp.objective);
        self.run_phase(&c2, "phase 2")?;
        let x: Vec<f64> = (0..n)
            .map(|j| self.xval[j].clamp(self.lower[j], self.upper[j]))
            .collect();
        let objective = x.iter().zip(lp.objective.iter()).map(|(a, b)| a * b).sum();
        Ok(LpSolution {
            status: LpStatus::Optimal,
            objective,
            x,
        })
    }
}
