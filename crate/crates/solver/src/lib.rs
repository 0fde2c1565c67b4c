//! Convex quadratic and second-order cone programming with dual extraction.
//!
//! Programs are built with [`ProgramBuilder`] from named variable and
//! constraint blocks, solved by a homogeneous self-dual interior-point
//! method ([`solve`]), and their multipliers read back by block name with a
//! per-block sign convention ([`DualSign`]).
//!
//! Sign convention: raw multipliers `z` satisfy `P x + q + Aᵀ z = 0` with
//! `z ≥ 0` on inequality rows. Blocks tagged [`DualSign::Negated`] report
//! `−z`; this is how an equality such as a power balance `Σ p = 0` inside a
//! negated-welfare minimization yields a nonnegative market price.

mod cones;
pub mod dump;
mod equilibrate;
mod ipm;
mod kkt;
pub mod ldl;
mod polish;
mod program;
mod slater;
pub mod sparse;

pub use dump::{dump_program, dump_string, parse_dump};
pub use ipm::{
    kkt_residuals, solve, KktResiduals, Settings, Solution, SolveFailure, SolveStatus, SolverError,
};
pub use program::{
    Cone, ConeKind, ConstraintBlock, ConvexProgram, DualSign, ProgramBuilder, ProgramError,
    VarBlock,
};
pub use slater::{check_slater, SlaterReport, SLATER_TOL};
pub use sparse::CscMatrix;
