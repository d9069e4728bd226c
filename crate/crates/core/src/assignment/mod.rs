//! Assignment solvers: 2-D auction and multi-frame dual decomposition.

pub mod auction;
pub mod dual;

pub use auction::{auction_solve, Assignment, AssignmentMatrix, DEFAULT_RESOLUTION};
pub use dual::{
    build_subproblem, polish, recover_primal, relative_gap, sequential_primal, solve,
    solve_subproblem, solve_with_incumbent, subgradient_step, DualState, HypothesisCost,
    IterationRecord, MultiFrameProblem, SolveOutcome, SolverOptions, Subproblem, TrackHypotheses,
    WindowScan,
};
