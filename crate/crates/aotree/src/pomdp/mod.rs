//! POMDP model representations, beliefs, and belief-update operators.

mod belief;
mod generative;
mod particle;
mod tabular;

pub use belief::{
    augmented_update, bayes_update_alternative, bayes_update_original, belief_reward, propagate,
    AugObservation, DiscreteBelief,
};
pub use generative::{GenerativePomdp, TabularSampler};
pub use particle::{particle_propagate, particle_reward, particle_reweight, ParticleBelief};
pub use tabular::TabularPomdp;

/// Normalizers at or below this are treated as an impossible branch.
pub const ZERO_LIKELIHOOD_EPS: f64 = 1e-300;

/// Simplex / row-stochasticity validation tolerance.
pub const SIMPLEX_TOL: f64 = 1e-9;
