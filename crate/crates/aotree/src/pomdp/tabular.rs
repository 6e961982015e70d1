use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AotError, Result};
use crate::real::Real;

use super::SIMPLEX_TOL;

/// Finite-space POMDP with row-stochastic transition and observation tensors,
/// a bounded state-action reward, an initial belief and a planning horizon
/// (number of action layers).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(
    serialize = "F: Serialize",
    deserialize = "F: serde::de::DeserializeOwned"
))]
pub struct TabularPomdp<F: Real> {
    pub num_states: usize,
    pub num_actions: usize,
    pub num_observations: usize,
    /// `transition[a][x][x']` — probability of moving to `x'` from `x` under `a`.
    pub transition: Vec<Vec<Vec<F>>>,
    /// `observation[x][z]` — probability of observing `z` in state `x`.
    pub observation: Vec<Vec<F>>,
    /// `reward[x][a]`.
    pub reward: Vec<Vec<F>>,
    pub r_max: F,
    pub initial_belief: Vec<F>,
    /// Number of action layers, >= 1.
    pub horizon: usize,
}

impl<F: Real> TabularPomdp<F> {
    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, row: Option<usize>, detail: String| {
            Err(AotError::Validation {
                field: field.into(),
                row,
                detail,
            })
        };
        if self.num_states == 0 {
            return fail("num_states", None, "must be positive".into());
        }
        if self.num_actions == 0 {
            return fail("num_actions", None, "must be positive".into());
        }
        if self.num_observations == 0 {
            return fail("num_observations", None, "must be positive".into());
        }
        if self.horizon == 0 {
            return fail("horizon", None, "must be >= 1".into());
        }
        if self.transition.len() != self.num_actions {
            return fail(
                "transition",
                None,
                format!("expected {} action slices", self.num_actions),
            );
        }
        for (a, slice) in self.transition.iter().enumerate() {
            if slice.len() != self.num_states {
                return fail("transition", Some(a), "wrong number of rows".into());
            }
            for (x, row) in slice.iter().enumerate() {
                check_stochastic_row(row, self.num_states, "transition", a * self.num_states + x)?;
            }
        }
        if self.observation.len() != self.num_states {
            return fail(
                "observation",
                None,
                format!("expected {} rows", self.num_states),
            );
        }
        for (x, row) in self.observation.iter().enumerate() {
            check_stochastic_row(row, self.num_observations, "observation", x)?;
        }
        if self.reward.len() != self.num_states {
            return fail("reward", None, format!("expected {} rows", self.num_states));
        }
        if !self.r_max.is_finite() {
            return fail("r_max", None, "must be finite".into());
        }
        for (x, row) in self.reward.iter().enumerate() {
            if row.len() != self.num_actions {
                return fail("reward", Some(x), "wrong row length".into());
            }
            for &r in row {
                if !r.is_finite() {
                    return fail("reward", Some(x), "non-finite entry".into());
                }
                if r.abs() > self.r_max + F::real(SIMPLEX_TOL) {
                    return fail("reward", Some(x), format!("|{r}| exceeds r_max {}", self.r_max));
                }
            }
        }
        check_stochastic_row(&self.initial_belief, self.num_states, "initial_belief", 0)?;
        Ok(())
    }

    pub fn to_json_file(&self, path: &Path) -> Result<()>
    where
        F: Serialize,
    {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self>
    where
        F: serde::de::DeserializeOwned,
    {
        let text = std::fs::read_to_string(path)?;
        let model: Self = serde_json::from_str(&text)?;
        model.validate()?;
        Ok(model)
    }
}

fn check_stochastic_row<F: Real>(
    row: &[F],
    expected_len: usize,
    field: &str,
    row_index: usize,
) -> Result<()> {
    if row.len() != expected_len {
        return Err(AotError::Validation {
            field: field.into(),
            row: Some(row_index),
            detail: format!("expected length {expected_len}, got {}", row.len()),
        });
    }
    let mut sum = F::zero();
    for &p in row {
        if !p.is_finite() || p < F::zero() {
            return Err(AotError::Validation {
                field: field.into(),
                row: Some(row_index),
                detail: format!("entry {p} is negative or non-finite"),
            });
        }
        sum += p;
    }
    if (sum - F::one()).abs() > F::real(SIMPLEX_TOL) {
        return Err(AotError::Validation {
            field: field.into(),
            row: Some(row_index),
            detail: format!("row sums to {sum}, expected 1"),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub fn tiny_model() -> TabularPomdp<f64> {
        TabularPomdp {
            num_states: 2,
            num_actions: 1,
            num_observations: 2,
            transition: vec![vec![vec![0.3, 0.7], vec![0.6, 0.4]]],
            observation: vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            reward: vec![vec![1.0], vec![-1.0]],
            r_max: 1.0,
            initial_belief: vec![0.5, 0.5],
            horizon: 2,
        }
    }

    #[test]
    fn valid_model_passes() {
        tiny_model().validate().unwrap();
    }

    #[test]
    fn bad_transition_row_named() {
        let mut m = tiny_model();
        m.transition[0][1][0] = 0.9;
        let err = m.validate().unwrap_err();
        match err {
            AotError::Validation { field, row, .. } => {
                assert_eq!(field, "transition");
                assert_eq!(row, Some(1));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn reward_bound_enforced() {
        let mut m = tiny_model();
        m.reward[0][0] = 2.0;
        let err = m.validate().unwrap_err();
        assert!(matches!(err, AotError::Validation { ref field, .. } if field == "reward"));
    }

    #[test]
    fn zero_actions_rejected() {
        let mut m = tiny_model();
        m.num_actions = 0;
        m.transition.clear();
        let err = m.validate().unwrap_err();
        assert!(matches!(err, AotError::Validation { ref field, .. } if field == "num_actions"));
    }

    #[test]
    fn json_round_trip() {
        let m = tiny_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        m.to_json_file(&path).unwrap();
        let loaded = TabularPomdp::<f64>::from_json_file(&path).unwrap();
        assert_eq!(serde_json::to_string(&m).unwrap(), serde_json::to_string(&loaded).unwrap());
    }
}
