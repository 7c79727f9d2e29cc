//! Recombining trinomial trees for Ornstein-Uhlenbeck type processes.
//!
//! The tree keeps a standard trinomial center path and attaches every
//! off-center ("spanning") node to exactly one new outer node at the next
//! level. The rest of a spanning node's transition law is reached through
//! one-way sibling branches toward the center, so the node count grows as
//! `(levels + 1)^2` while every node matches the process's one-step mean and
//! variance exactly.
//!
//! * [`process`]: OU specification and conditional moments.
//! * [`lattice`]: tree construction, enumeration and export.
//! * [`simulate`]: path sampling, correlated forests and spline curves.
//! * [`price`]: backward induction for European/American payoffs and
//!   callable bonds.
//! * [`verify`]: invariant checks shared by the CLI and the test suites.

pub mod cli;
pub mod error;
pub mod fmt;
pub mod lattice;
pub mod price;
pub mod process;
pub mod simulate;
pub mod verify;

pub use error::{Error, Result};
pub use lattice::{
    build_center_path, build_lattice, build_lattice_with, one_step_distribution,
    solve_branch_equation, BranchSolve, BuildOptions, CenterBranches, CenterPath, ExportFormat,
    Lattice, LatticeNode, NodeKind, OneStep,
};
pub use price::{
    price_american, price_callable_bond, price_european, AmericanResult, BondSchedule,
    CallableResult, DiscountSpec, PayoffSpec,
};
pub use process::{
    conditional_mean, conditional_variance, make_moment_model, terminal_moments, MomentModel,
    OuSpec,
};
pub use simulate::{
    curve_at, empirical_moments, path_rng, paths_csv, sample_forest, sample_forests, sample_path,
    sample_paths, sample_step, CurveBasis, Forest, PathSample,
};
