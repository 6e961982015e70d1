use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AotError, Result};
use crate::pomdp::TabularPomdp;

fn default_reward_range() -> [f64; 2] {
    [0.0, 1.0]
}

/// Dimensions and seed of a random tabular POMDP instance.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RandomPomdpSpec {
    pub num_states: usize,
    pub num_actions: usize,
    pub num_observations: usize,
    pub horizon: usize,
    pub seed: u64,
    #[serde(default = "default_reward_range")]
    pub reward_range: [f64; 2],
}

/// Uniform sample from the probability simplex (normalized unit
/// exponentials).
fn simplex_row(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Generates a dense random instance: transition and observation rows drawn
/// uniformly from the simplex, rewards uniform on `reward_range`, uniform
/// initial belief. Deterministic in the spec.
pub fn gen_random_pomdp(spec: &RandomPomdpSpec) -> Result<TabularPomdp<f64>> {
    let [lo, hi] = spec.reward_range;
    if lo > hi || !lo.is_finite() || !hi.is_finite() {
        return Err(AotError::Validation {
            field: "reward_range".into(),
            row: None,
            detail: format!("expected finite lo <= hi, got [{lo}, {hi}]"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let transition = (0..spec.num_actions)
        .map(|_| {
            (0..spec.num_states)
                .map(|_| simplex_row(&mut rng, spec.num_states))
                .collect()
        })
        .collect();
    let observation = (0..spec.num_states)
        .map(|_| simplex_row(&mut rng, spec.num_observations))
        .collect();
    let reward = (0..spec.num_states)
        .map(|_| {
            (0..spec.num_actions)
                .map(|_| lo + rng.gen::<f64>() * (hi - lo))
                .collect()
        })
        .collect();
    let model = TabularPomdp {
        num_states: spec.num_states,
        num_actions: spec.num_actions,
        num_observations: spec.num_observations,
        transition,
        observation,
        reward,
        r_max: lo.abs().max(hi.abs()),
        initial_belief: vec![1.0 / spec.num_states as f64; spec.num_states],
        horizon: spec.horizon,
    };
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_benchmark_dimensions() {
        // |Z| much larger than |X|: the regime where collapsing observation
        // branches pays off.
        let spec = RandomPomdpSpec {
            num_states: 3,
            num_actions: 2,
            num_observations: 20,
            horizon: 2,
            seed: 1,
            reward_range: [0.0, 1.0],
        };
        let m = gen_random_pomdp(&spec).unwrap();
        assert_eq!(m.initial_belief, vec![1.0 / 3.0; 3]);
        assert!(m
            .reward
            .iter()
            .flatten()
            .all(|&r| (0.0..=1.0).contains(&r)));
        assert_eq!(m.num_states, 3);
        assert_eq!(m.num_observations, 20);
        assert_eq!(m.transition.len(), 2);
        assert_eq!(m.transition[0].len(), 3);
        assert_eq!(m.transition[0][0].len(), 3);
        assert_eq!(m.observation.len(), 3);
        assert_eq!(m.observation[0].len(), 20);
        m.validate().unwrap();
    }

    #[test]
    fn large_instance_generates_and_validates() {
        let spec = RandomPomdpSpec {
            num_states: 1000,
            num_actions: 2,
            num_observations: 2000,
            horizon: 3,
            seed: 7,
            reward_range: [0.0, 1.0],
        };
        let m = gen_random_pomdp(&spec).unwrap();
        assert_eq!(m.num_states, 1000);
        assert_eq!(m.num_observations, 2000);
        m.validate().unwrap();
    }

    #[test]
    fn deterministic_in_seed() {
        let spec = RandomPomdpSpec {
            num_states: 4,
            num_actions: 3,
            num_observations: 5,
            horizon: 2,
            seed: 42,
            reward_range: [-1.0, 2.0],
        };
        let a = gen_random_pomdp(&spec).unwrap();
        let b = gen_random_pomdp(&spec).unwrap();
        assert_eq!(a.transition, b.transition);
        assert_eq!(a.observation, b.observation);
        assert_eq!(a.reward, b.reward);
        assert_eq!(a.initial_belief, b.initial_belief);
        let c = gen_random_pomdp(&RandomPomdpSpec { seed: 43, ..spec }).unwrap();
        assert_ne!(a.transition, c.transition);
        // r_max covers the negative end of the range.
        assert_eq!(a.r_max, 2.0);
    }

    #[test]
    fn inverted_reward_range_rejected() {
        let spec = RandomPomdpSpec {
            num_states: 2,
            num_actions: 1,
            num_observations: 2,
            horizon: 1,
            seed: 0,
            reward_range: [1.0, 0.0],
        };
        let err = gen_random_pomdp(&spec).unwrap_err();
        assert!(err.to_string().contains("reward_range"));
    }
}
