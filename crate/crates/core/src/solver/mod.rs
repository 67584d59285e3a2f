//! Sparse SQP solver with an ADMM QP subsolver.

pub mod qp;
pub mod sparse;
pub mod sqp;

pub use qp::{QpSettings, QpSolution, QpStatus, QpWorkspace};
pub use sqp::{kkt_residuals, solve, solve_warm, KktResiduals, SolveResult, SolveStats, SolveStatus, SolverOptions};
