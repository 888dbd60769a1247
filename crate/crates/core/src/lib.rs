//! Batched safety filtering of multi-robot polynomial trajectories.
//!
//! Trajectory proposals (stacked Bernstein coefficients for every robot and
//! axis) are projected onto the set of trajectories that satisfy boundary
//! states, stay inside a spheroidal workspace and keep every robot pair
//! outside a spheroidal safety region. The projection is computed by an
//! alternating-minimization fixed-point iteration over a spherical
//! reformulation of the quadratic constraints.
//!
//! ```no_run
//! use swarmfilter::{basis, proposals, scenarios, solver};
//!
//! let problem = scenarios::demo_four();
//! let basis = basis::build_basis(10, problem.samples(), problem.duration).unwrap();
//! let filter = solver::SafetyFilter::new(problem, basis, Default::default()).unwrap();
//! let batch = proposals::sample_proposals(&filter, 20, 7, 0.2).unwrap();
//! let out = filter.batch_solve(&batch.proposals, None, None).unwrap();
//! println!("{} solved in {:?}", out.results.len(), out.wall_clock);
//! ```

pub mod basis;
pub mod constraints;
pub mod metrics;
pub mod problem;
pub mod projection;
pub mod proposals;
pub mod scenarios;
pub mod solver;

pub(crate) mod serde_vec;

pub use basis::{build_basis, coeffs_to_trajectory, BasisMatrices, CoefficientLayout, Trajectory};
pub use constraints::{check_original_constraints, EqualitySystem, PairwiseOperator, SphericalVars, ViolationReport};
pub use problem::{ProblemFile, SwarmProblem};
pub use projection::{project_to_boundary, BoundaryProjector};
pub use proposals::{ProposalBatch, WarmStart};
pub use solver::{Initialization, SafetyFilter, SolveResult, SolverConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
