use thiserror::Error;

use crate::topology::NodePath;

/// Errors raised across the planning toolkit.
#[derive(Debug, Error)]
pub enum AotError {
    /// The observation normalizer vanished: the observed outcome has zero
    /// probability under the propagated belief. Indicates a model or
    /// sampling bug rather than a recoverable condition.
    #[error("zero observation likelihood (normalizer {normalizer:.3e})")]
    ZeroLikelihood { normalizer: f64 },

    /// The augmented observation variant contradicts the node's regime bit.
    #[error("observation tag does not match regime bit beta={beta}")]
    TagMismatch { beta: u8 },

    /// Every particle weight is zero; the belief carries no information.
    #[error("degenerate particle weights: all weights are zero")]
    DegenerateWeights,

    /// The enumerated tree would exceed the configured node budget.
    #[error("node budget of {budget} exceeded")]
    BudgetExceeded { budget: usize },

    /// A policy evaluation reached a posterior node without an assigned action.
    #[error("no action assigned to posterior node {path}")]
    MissingAssignment { path: NodePath },

    /// Refinement was requested but the reachable tree has no alternative
    /// nodes left to flip.
    #[error("nothing to flip: topology is already tau_Z-equivalent on the reachable tree")]
    NothingToFlip,

    /// A generative model needs an explicit V_max and none was configured.
    #[error("V_max is not configured for this generative model")]
    MissingVmax,

    /// Model validation failure; names the offending field and row.
    #[error("invalid model: field `{field}`{} — {detail}", row.map(|r| format!(" row {r}")).unwrap_or_default())]
    Validation {
        field: String,
        row: Option<usize>,
        detail: String,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, AotError>;
