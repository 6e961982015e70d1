use serde::{Deserialize, Serialize};

use crate::error::{AotError, Result};
use crate::real::Real;

use super::{TabularPomdp, ZERO_LIKELIHOOD_EPS};

/// Probability vector over the states of a tabular model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteBelief<F> {
    pub probs: Vec<F>,
}

impl<F: Real> DiscreteBelief<F> {
    pub fn new(probs: Vec<F>) -> Self {
        Self { probs }
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            probs: vec![F::one() / F::real(n as f64); n],
        }
    }

    pub fn point_mass(n: usize, state: usize) -> Self {
        let mut probs = vec![F::zero(); n];
        probs[state] = F::one();
        Self { probs }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Observation from the augmented space: either an original observation
/// index or a revealed state (the Dirac alternative regime).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugObservation {
    Original(usize),
    Revealed(usize),
}

/// Prediction step: b⁻(x') = Σ_x b(x)·T[a][x][x'].
pub fn propagate<F: Real>(
    belief: &DiscreteBelief<F>,
    action: usize,
    model: &TabularPomdp<F>,
) -> DiscreteBelief<F> {
    let slice = &model.transition[action];
    let mut out = vec![F::zero(); model.num_states];
    for (x, &bx) in belief.probs.iter().enumerate() {
        if bx == F::zero() {
            continue;
        }
        for (xp, &t) in slice[x].iter().enumerate() {
            out[xp] += bx * t;
        }
    }
    DiscreteBelief::new(out)
}

/// Bayes correction in the original observation space:
/// posterior(x) = b⁻(x)·O[x][z] / η_z.
pub fn bayes_update_original<F: Real>(
    propagated: &DiscreteBelief<F>,
    z: usize,
    model: &TabularPomdp<F>,
) -> Result<DiscreteBelief<F>> {
    let mut out = Vec::with_capacity(propagated.len());
    let mut normalizer = F::zero();
    for (x, &p) in propagated.probs.iter().enumerate() {
        let v = p * model.observation[x][z];
        normalizer += v;
        out.push(v);
    }
    if normalizer.as_f64() <= ZERO_LIKELIHOOD_EPS {
        return Err(AotError::ZeroLikelihood {
            normalizer: normalizer.as_f64(),
        });
    }
    for v in &mut out {
        *v = *v / normalizer;
    }
    Ok(DiscreteBelief::new(out))
}

/// Dirac correction in the alternative regime: the revealed state collapses
/// the belief to a point mass, provided it has positive propagated mass.
pub fn bayes_update_alternative<F: Real>(
    propagated: &DiscreteBelief<F>,
    revealed: usize,
) -> Result<DiscreteBelief<F>> {
    let mass = propagated.probs[revealed];
    if mass.as_f64() <= ZERO_LIKELIHOOD_EPS {
        return Err(AotError::ZeroLikelihood {
            normalizer: mass.as_f64(),
        });
    }
    Ok(DiscreteBelief::point_mass(propagated.len(), revealed))
}

/// Full augmented update: predict, then correct in the regime selected by
/// `beta`. The observation variant must match the regime bit.
pub fn augmented_update<F: Real>(
    belief: &DiscreteBelief<F>,
    action: usize,
    obs: AugObservation,
    beta: bool,
    model: &TabularPomdp<F>,
) -> Result<DiscreteBelief<F>> {
    let propagated = propagate(belief, action, model);
    match (beta, obs) {
        (true, AugObservation::Original(z)) => bayes_update_original(&propagated, z, model),
        (false, AugObservation::Revealed(x)) => bayes_update_alternative(&propagated, x),
        _ => Err(AotError::TagMismatch {
            beta: beta as u8,
        }),
    }
}

/// Expected state-dependent reward: Σ_x b(x)·r[x][a].
pub fn belief_reward<F: Real>(
    belief: &DiscreteBelief<F>,
    action: usize,
    model: &TabularPomdp<F>,
) -> F {
    belief
        .probs
        .iter()
        .zip(&model.reward)
        .map(|(&b, row)| b * row[action])
        .sum()
}
