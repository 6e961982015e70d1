//! Benchmark environments: seeded random tabular POMDPs and the continuous
//! beacon-navigation world.

mod beacon;
mod random;

pub use beacon::{BeaconConfig, BeaconEnv};
pub use random::{gen_random_pomdp, RandomPomdpSpec};
