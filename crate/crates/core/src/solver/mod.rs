//! Self-contained optimization layer: a bounded-variable simplex and a
//! branch-and-bound wrapper for the handful of binaries the intrinsic
//! problem carries.

pub mod lp;
pub mod milp;

pub use lp::{LinearProgram, LpSolution, LpStatus, Rel};
pub use milp::{solve_milp, MilpSolution, MilpStatus};
