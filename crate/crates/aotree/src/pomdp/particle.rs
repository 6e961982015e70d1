use rand::{Rng, RngCore};

use crate::error::{AotError, Result};

use super::GenerativePomdp;

/// Weighted state samples representing a belief. Weights are stored
/// unnormalized; consumers normalize where needed.
#[derive(Debug, Clone)]
pub struct ParticleBelief<S> {
    pub particles: Vec<S>,
    pub weights: Vec<f64>,
}

impl<S: Clone> ParticleBelief<S> {
    pub fn new(particles: Vec<S>, weights: Vec<f64>) -> Result<Self> {
        assert_eq!(particles.len(), weights.len(), "particle/weight length mismatch");
        let belief = Self { particles, weights };
        if belief.is_degenerate() {
            return Err(AotError::DegenerateWeights);
        }
        Ok(belief)
    }

    pub fn single(state: S) -> Self {
        Self {
            particles: vec![state],
            weights: vec![1.0],
        }
    }

    pub fn uniform(particles: Vec<S>) -> Self {
        let n = particles.len();
        Self {
            particles,
            weights: vec![1.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn is_degenerate(&self) -> bool {
        !self.weights.iter().any(|&w| w > 0.0)
    }

    /// Draws one particle index proportionally to weight.
    pub fn sample_index(&self, rng: &mut dyn RngCore) -> usize {
        let total = self.total_weight();
        let u: f64 = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        for (i, &w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        self.len() - 1
    }

    pub fn sample_state(&self, rng: &mut dyn RngCore) -> S {
        self.particles[self.sample_index(rng)].clone()
    }
}

/// Bootstrap propagation: resample `n` source particles by weight, push each
/// through the transition sampler. Output weights are all 1.
pub fn particle_propagate<M: GenerativePomdp>(
    belief: &ParticleBelief<M::State>,
    action: usize,
    model: &M,
    n: usize,
    rng: &mut dyn RngCore,
) -> Result<ParticleBelief<M::State>> {
    if belief.is_degenerate() {
        return Err(AotError::DegenerateWeights);
    }
    let particles = (0..n)
        .map(|_| {
            let src = belief.sample_state(rng);
            model.sample_transition(&src, action, rng)
        })
        .collect();
    Ok(ParticleBelief::uniform(particles))
}

/// Observation reweighting: w'ᵢ = wᵢ·p(z|xᵢ), computed with a max-log shift
/// so distant observations do not underflow the whole weight set at once.
/// The global scale of unnormalized weights is irrelevant to consumers.
pub fn particle_reweight<M: GenerativePomdp>(
    belief: &ParticleBelief<M::State>,
    obs: &M::Obs,
    model: &M,
) -> Result<ParticleBelief<M::State>> {
    let logliks: Vec<f64> = belief
        .particles
        .iter()
        .map(|x| model.obs_loglik(obs, x))
        .collect();
    let max_ll = logliks
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    if !max_ll.is_finite() {
        return Err(AotError::DegenerateWeights);
    }
    let weights: Vec<f64> = belief
        .weights
        .iter()
        .zip(&logliks)
        .map(|(&w, &ll)| w * (ll - max_ll).exp())
        .collect();
    if !weights.iter().any(|&w| w > 0.0) {
        return Err(AotError::DegenerateWeights);
    }
    Ok(ParticleBelief {
        particles: belief.particles.clone(),
        weights,
    })
}

/// Normalized-weight expectation of a state-dependent function.
pub fn particle_reward<S>(belief: &ParticleBelief<S>, f: impl Fn(&S) -> f64) -> f64 {
    let total: f64 = belief.weights.iter().sum();
    belief
        .particles
        .iter()
        .zip(&belief.weights)
        .map(|(x, &w)| w * f(x))
        .sum::<f64>()
        / total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pomdp::{TabularPomdp, TabularSampler};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_state_model(t_row0: [f64; 2]) -> TabularPomdp<f64> {
        TabularPomdp {
            num_states: 2,
            num_actions: 1,
            num_observations: 2,
            transition: vec![vec![vec![t_row0[0], t_row0[1]], vec![0.0, 1.0]]],
            observation: vec![vec![0.9, 0.1], vec![0.3, 0.7]],
            reward: vec![vec![4.0], vec![0.0]],
            r_max: 4.0,
            initial_belief: vec![1.0, 0.0],
            horizon: 1,
        }
    }

    #[test]
    fn deterministic_transition_clones_particle() {
        let model = two_state_model([0.0, 1.0]);
        let sampler = TabularSampler::new(&model);
        let belief = ParticleBelief::single(0usize);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = particle_propagate(&belief, 0, &sampler, 8, &mut rng).unwrap();
        assert_eq!(out.particles, vec![1usize; 8]);
        assert_eq!(out.weights, vec![1.0; 8]);
    }

    #[test]
    fn identity_transition_bootstrap_resample() {
        let model = TabularPomdp {
            num_states: 3,
            num_actions: 1,
            num_observations: 1,
            transition: vec![vec![
                vec![1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
            ]],
            observation: vec![vec![1.0]; 3],
            reward: vec![vec![0.0]; 3],
            r_max: 0.0,
            initial_belief: vec![1.0, 0.0, 0.0],
            horizon: 1,
        };
        let sampler = TabularSampler::new(&model);
        let belief = ParticleBelief::uniform(vec![0usize, 1, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let out = particle_propagate(&belief, 0, &sampler, 50, &mut rng).unwrap();
        assert!(out.particles.iter().all(|&x| x < 3));
    }

    #[test]
    fn propagate_monte_carlo_frequency() {
        let model = two_state_model([0.5, 0.5]);
        let sampler = TabularSampler::new(&model);
        let belief = ParticleBelief::single(0usize);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let out = particle_propagate(&belief, 0, &sampler, 10_000, &mut rng).unwrap();
        let freq = out.particles.iter().filter(|&&x| x == 1).count() as f64 / 10_000.0;
        assert!((freq - 0.5).abs() < 0.02, "freq {freq}");
    }

    #[test]
    fn degenerate_weights_error() {
        let belief = ParticleBelief {
            particles: vec![0usize, 1],
            weights: vec![0.0, 0.0],
        };
        let model = two_state_model([0.5, 0.5]);
        let sampler = TabularSampler::new(&model);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = particle_propagate(&belief, 0, &sampler, 4, &mut rng).unwrap_err();
        assert!(matches!(err, AotError::DegenerateWeights));
    }

    #[test]
    fn reweight_multiplies_likelihoods() {
        let model = TabularPomdp {
            num_states: 2,
            num_actions: 1,
            num_observations: 2,
            transition: vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]],
            observation: vec![vec![0.2, 0.8], vec![0.8, 0.2]],
            reward: vec![vec![0.0]; 2],
            r_max: 0.0,
            initial_belief: vec![0.5, 0.5],
            horizon: 1,
        };
        let sampler = TabularSampler::new(&model);
        let belief = ParticleBelief::uniform(vec![0usize, 1]);
        let out = particle_reweight(&belief, &0usize, &sampler).unwrap();
        let total = out.total_weight();
        assert_abs_diff_eq!(out.weights[0] / total, 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(out.weights[1] / total, 0.8, epsilon = 1e-12);
        assert_eq!(out.particles, belief.particles);
    }

    #[test]
    fn reweight_zero_likelihood_particle() {
        let model = TabularPomdp {
            num_states: 2,
            num_actions: 1,
            num_observations: 2,
            transition: vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]],
            observation: vec![vec![1.0, 0.0], vec![0.5, 0.5]],
            reward: vec![vec![0.0]; 2],
            r_max: 0.0,
            initial_belief: vec![0.5, 0.5],
            horizon: 1,
        };
        let sampler = TabularSampler::new(&model);
        let belief = ParticleBelief::uniform(vec![0usize, 1]);
        let out = particle_reweight(&belief, &1usize, &sampler).unwrap();
        assert_eq!(out.weights[0], 0.0);
        assert!(out.weights[1] > 0.0);
    }

    #[test]
    fn uniform_likelihood_keeps_relative_weights() {
        let model = two_state_model([0.5, 0.5]);
        let sampler = TabularSampler::new(&model);
        let belief = ParticleBelief {
            particles: vec![0usize, 0],
            weights: vec![1.0, 3.0],
        };
        let out = particle_reweight(&belief, &0usize, &sampler).unwrap();
        assert_abs_diff_eq!(out.weights[1] / out.weights[0], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn particle_reward_weighted_mean() {
        let model = two_state_model([0.5, 0.5]);
        let sampler = TabularSampler::new(&model);
        let belief = ParticleBelief {
            particles: vec![0usize, 1],
            weights: vec![1.0, 3.0],
        };
        // rewards [4, 0] with weights [1, 3] -> 1.
        let r = particle_reward(&belief, |x| sampler.reward(x, 0));
        assert_abs_diff_eq!(r, 1.0, epsilon = 1e-12);
        // Invariant to global weight rescaling.
        let scaled = ParticleBelief {
            particles: belief.particles.clone(),
            weights: belief.weights.iter().map(|w| w * 17.0).collect(),
        };
        assert_abs_diff_eq!(
            particle_reward(&scaled, |x| sampler.reward(x, 0)),
            r,
            epsilon = 1e-12
        );
    }
}
