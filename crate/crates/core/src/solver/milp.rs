//! Depth-first branch and bound over a bounded-variable LP relaxation.

use crate::error::Result;
use crate::solver::lp::{LinearProgram, LpStatus};

const INT_TOL: f64 = 1e-6;
/// Safety valve; the intrinsic instances this crate builds stay far below it.
const NODE_LIMIT: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MilpStatus {
    Optimal,
    Infeasible,
    /// Search stopped at the node limit; `x` holds the best integral
    /// point found, if any (objective is -inf otherwise).
    NodeLimit,
}

#[derive(Debug, Clone)]
pub struct MilpSolution {
    pub status: MilpStatus,
    pub objective: f64,
    pub x: Vec<f64>,
}

fn most_fractional(x: &[f64], int_cols: &[usize]) -> Option<(usize, f64)> {
    let mut pick = None;
    let mut best = INT_TOL;
    for &j in int_cols {
        let frac = (x[j] - x[j].round()).abs();
        if frac > best {
            best = frac;
            pick = Some((j, x[j]));
        }
    }
    pick
}

/// Maximizes `lp` with the listed columns required integral.
pub fn solve_milp(lp: &LinearProgram, int_cols: &[usize]) -> Result<MilpSolution> {
    let root = lp.solve()?;
    if root.status == LpStatus::Infeasible {
        return Ok(MilpSolution {
            status: MilpStatus::Infeasible,
            objective: f64::NEG_INFINITY,
            x: root.x,
        });
    }
    if most_fractional(&root.x, int_cols).is_none() {
        return Ok(MilpSolution {
            status: MilpStatus::Optimal,
            objective: root.objective,
            x: root.x,
        });
    }

    // DFS over bound fixings, better-half-first.
    struct Node {
        fixings: Vec<(usize, f64, f64)>,
    }
    let mut stack = vec![Node { fixings: Vec::new() }];
    let mut incumbent: Option<MilpSolution> = None;
    let mut nodes = 0usize;
    while let Some(node) = stack.pop() {
        nodes += 1;
        if nodes > NODE_LIMIT {
            return Ok(match incumbent {
                Some(mut best) => {
                    best.status = MilpStatus::NodeLimit;
                    best
                }
                None => MilpSolution {
                    status: MilpStatus::NodeLimit,
                    objective: f64::NEG_INFINITY,
                    x: vec![0.0; lp.num_vars()],
                },
            });
        }
        let mut sub = lp.clone();
        for &(j, lo, up) in &node.fixings {
            let (cur_lo, cur_up) = sub.bounds(j);
            sub.set_bounds(j, cur_lo.max(lo), cur_up.min(up));
        }
        let rel = sub.solve()?;
        if rel.status == LpStatus::Infeasible {
            continue;
        }
        if let Some(best) = &incumbent {
            if rel.objective <= best.objective + 1e-9 {
                continue;
            }
        }
        match most_fractional(&rel.x, int_cols) {
            None => {
                let better = incumbent
                    .as_ref()
                    .map(|b| rel.objective > b.objective + 1e-9)
                    .unwrap_or(true);
                if better {
                    incumbent = Some(MilpSolution {
                        status: MilpStatus::Optimal,
                        objective: rel.objective,
                        x: rel.x,
                    });
                }
            }
            Some((j, v)) => {
                let floor = v.floor();
                let mut down = node.fixings.clone();
                down.push((j, f64::NEG_INFINITY, floor));
                let mut up = node.fixings.clone();
                up.push((j, floor + 1.0, f64::INFINITY));
                // push the farther half first so the nearer is explored next
                if v - floor > 0.5 {
                    stack.push(Node { fixings: down });
                    stack.push(Node { fixings: up });
                } else {
                    stack.push(Node { fixings: up });
                    stack.push(Node { fixings: down });
                }
            }
        }
    }
    Ok(incumbent.unwrap_or(MilpSolution {
        status: MilpStatus::Infeasible,
        objective: f64::NEG_INFINITY,
        x: vec![0.0; lp.num_vars()],
    }))
}
