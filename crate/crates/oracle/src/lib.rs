//! Reference solutions: the explicit linear BSDE, weighted-moment checks and
//! one-dimensional finite-difference PDE solvers.

pub mod fd;
pub mod linear;

pub use fd::{fd_elliptic, fd_parabolic, Closure, EllipticSpec, FdElliptic, FdParabolic, ParabolicSpec};
pub use linear::{
    linear_bsde_pathwise, sup_growth_diagnostic, weight_condition_check, LinearCoefficients, LinearSolution,
    NestedSettings, SupGrowthRow, WeightConditionReport,
};
