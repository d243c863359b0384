//! In-repo LP/MILP solvers and the builders for the three corrective
//! dispatch formulations.

pub mod builders;
pub mod lp;
pub mod lpfile;
pub mod milp;
pub mod simplex;

pub use builders::{build_convex_lp, build_milp_2d, build_milp_3d, BusCost, BusDelta, BusVars, Costs, DispatchModel, LinearPoint, Margins};
pub use lp::{Constraint, LpModel, Sense, Solution, Status, Variable};
pub use milp::{solve_milp, solve_milp_with, Axis, DEFAULT_NODE_LIMIT, MilpModel, MilpOptions, SegmentRegistry, Sos1Group};
pub use simplex::solve_lp;
