//! ADMM quadratic-programming solver with per-constraint step-size policies.
//!
//! Solves `min ½xᵀPx + qᵀx  s.t. l ≤ Ax ≤ u` with an ADMM iteration whose
//! step size `ρ` is chosen by a [`policy::RhoPolicy`]: a constant, a
//! residual-balancing heuristic, a per-constraint MLP, or a learned
//! graph-attention + GRU actor trained with DDPG ([`rl`]).

pub mod admm;
pub mod bench;
pub mod format;
pub mod graph;
pub mod linalg;
pub mod nn;
pub mod policy;
pub mod probgen;
pub mod qp;
pub mod rl;

pub use admm::{solve, AdmmSettings, AdmmState, QpSolution, SolveStatus};
pub use qp::{QpProblem, SparseMatrix};
