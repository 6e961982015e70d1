use rand::RngCore;
use rand::Rng;

use super::TabularPomdp;

/// Sampler/likelihood interface for problems where beliefs are represented
/// by particles. Implemented by the tabular wrapper [`TabularSampler`] and by
/// continuous environments such as the beacon world.
pub trait GenerativePomdp: Sync {
    type State: Clone + Send + Sync;
    type Obs: Clone;

    fn num_actions(&self) -> usize;
    /// Number of action layers in the planning problem.
    fn horizon(&self) -> usize;
    fn sample_initial(&self, rng: &mut dyn RngCore) -> Self::State;
    fn sample_transition(&self, state: &Self::State, action: usize, rng: &mut dyn RngCore)
        -> Self::State;
    fn sample_observation(&self, state: &Self::State, rng: &mut dyn RngCore) -> Self::Obs;
    /// Log-density (or log-mass) of `obs` given `state`.
    fn obs_loglik(&self, obs: &Self::Obs, state: &Self::State) -> f64;
    fn reward(&self, state: &Self::State, action: usize) -> f64;
    /// Flattened state components for CSV episode records.
    fn state_features(&self, state: &Self::State) -> Vec<f64>;
    /// Value-range bound used by the concentration calculator, when known.
    fn v_max(&self) -> Option<f64> {
        None
    }
}

/// Tabular model wrapper with precomputed cumulative rows for fast
/// categorical sampling.
pub struct TabularSampler<'a> {
    model: &'a TabularPomdp<f64>,
    /// `transition_cdf[a][x]` — cumulative sums of T[a][x][·].
    transition_cdf: Vec<Vec<Vec<f64>>>,
    /// `observation_cdf[x]` — cumulative sums of O[x][·].
    observation_cdf: Vec<Vec<f64>>,
    initial_cdf: Vec<f64>,
}

fn cumsum(row: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    row.iter()
        .map(|&p| {
            acc += p;
            acc
        })
        .collect()
}

fn sample_cdf(cdf: &[f64], rng: &mut dyn RngCore) -> usize {
    let total = *cdf.last().expect("non-empty cdf");
    let u: f64 = rng.gen::<f64>() * total;
    match cdf.binary_search_by(|v| v.partial_cmp(&u).expect("finite cdf")) {
        Ok(i) | Err(i) => i.min(cdf.len() - 1),
    }
}

impl<'a> TabularSampler<'a> {
    pub fn new(model: &'a TabularPomdp<f64>) -> Self {
        let transition_cdf = model
            .transition
            .iter()
            .map(|slice| slice.iter().map(|row| cumsum(row)).collect())
            .collect();
        let observation_cdf = model.observation.iter().map(|row| cumsum(row)).collect();
        let initial_cdf = cumsum(&model.initial_belief);
        Self {
            model,
            transition_cdf,
            observation_cdf,
            initial_cdf,
        }
    }

    pub fn model(&self) -> &TabularPomdp<f64> {
        self.model
    }
}

impl GenerativePomdp for TabularSampler<'_> {
    type State = usize;
    type Obs = usize;

    fn num_actions(&self) -> usize {
        self.model.num_actions
    }

    fn horizon(&self) -> usize {
        self.model.horizon
    }

    fn sample_initial(&self, rng: &mut dyn RngCore) -> usize {
        sample_cdf(&self.initial_cdf, rng)
    }

    fn sample_transition(&self, state: &usize, action: usize, rng: &mut dyn RngCore) -> usize {
        sample_cdf(&self.transition_cdf[action][*state], rng)
    }

    fn sample_observation(&self, state: &usize, rng: &mut dyn RngCore) -> usize {
        sample_cdf(&self.observation_cdf[*state], rng)
    }

    fn obs_loglik(&self, obs: &usize, state: &usize) -> f64 {
        self.model.observation[*state][*obs].ln()
    }

    fn reward(&self, state: &usize, action: usize) -> f64 {
        self.model.reward[*state][action]
    }

    fn state_features(&self, state: &usize) -> Vec<f64> {
        vec![*state as f64]
    }

    fn v_max(&self) -> Option<f64> {
        Some(self.model.r_max * self.model.horizon as f64)
    }
}
