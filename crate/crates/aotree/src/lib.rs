//! Adaptive observation topology (AOT) belief-tree planning for finite-horizon
//! POMDPs.
//!
//! The toolkit plans over belief trees in which selected propagated nodes
//! switch from the original observation space to a fully observable
//! alternative (the state space with a Dirac observation model). Exact and
//! sampled upper/lower bounds on the original POMDP's optimal Q-function are
//! computed from the simplified tree; an adaptive refinement loop tightens the
//! bounds until the optimal root action is certified, or the topology becomes
//! equivalent to the original problem.
//!
//! Modules:
//! - [`pomdp`]: model representations, beliefs and belief-update operators
//! - [`topology`]: the per-node original/alternative regime assignment
//! - [`exact`]: exact bound recursions, QMDP, action identification
//! - [`sparse`]: sparse-sampling bound estimator over particle beliefs
//! - [`planner`]: the adaptive refine-until-certified planning loop
//! - [`env`]: benchmark environments (random tabular POMDPs, beacon world)

pub mod env;
pub mod error;
pub mod exact;
pub mod planner;
pub mod pomdp;
pub mod real;
pub mod sparse;
pub mod topology;

pub use error::AotError;
pub use real::Real;

/// Concrete f64 model, the default for planning.
pub type TabularPomdp64 = pomdp::TabularPomdp<f64>;
/// Single-precision tabular model.
pub type TabularPomdp32 = pomdp::TabularPomdp<f32>;
/// Concrete f64 belief.
pub type DiscreteBelief64 = pomdp::DiscreteBelief<f64>;
/// Concrete f64 bound pair.
pub type BoundPair64 = exact::BoundPair<f64>;
