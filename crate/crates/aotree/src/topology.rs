//! The topology τ: a per-propagated-node choice between the original
//! observation regime (β=1) and the fully observable alternative (β=0),
//! with deterministic lazy assignment for sampled trees and monotone
//! refinement toward the all-original topology.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::IteratorRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{AotError, Result};

/// Structural key of a belief-tree node: the sequence of (action, branch)
/// pairs taken from the root. Branch indices are observation indices at
/// original-regime children and revealed-state indices at alternative ones.
///
/// A *propagated* node (post-action, pre-observation) is keyed by the path of
/// its children with the final branch index normalized to 0; the regime bit
/// never depends on the final branch, so all siblings share one bit.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodePath(pub Vec<(u32, u32)>);

impl NodePath {
    pub fn root() -> Self {
        NodePath(Vec::new())
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn child(&self, action: usize, branch: usize) -> Self {
        let mut steps = self.0.clone();
        steps.push((action as u32, branch as u32));
        NodePath(steps)
    }

    /// Key of the propagated node reached by `action` from this posterior node.
    pub fn propagated(&self, action: usize) -> Self {
        self.child(action, 0)
    }

    /// Canonical propagated key: final branch index zeroed.
    pub fn normalized(&self) -> Self {
        let mut steps = self.0.clone();
        if let Some(last) = steps.last_mut() {
            last.1 = 0;
        }
        NodePath(steps)
    }

    /// Whether this posterior node's value can change when the propagated
    /// node `flipped` (a normalized key) switches regime: true when the node
    /// is an ancestor of the flipped node or lies in its subtree (any branch).
    pub fn affected_by(&self, flipped: &NodePath) -> bool {
        let fl = flipped.0.len();
        debug_assert!(fl >= 1);
        if self.0.len() >= fl {
            self.0[..fl - 1] == flipped.0[..fl - 1] && self.0[fl - 1].0 == flipped.0[fl - 1].0
        } else {
            self.0[..] == flipped.0[..self.0.len()]
        }
    }
}

impl fmt::Display for NodePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, (a, b)) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "({a},{b})")?;
        }
        write!(f, "]")
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Stable hash of a seed, a node path (final branch ignored) and a purpose
/// tag. Used both for lazy β assignment and for per-node sampling streams.
pub fn path_hash(seed: u64, path: &NodePath, tag: u64) -> u64 {
    let mut h = splitmix64(seed ^ splitmix64(tag));
    let steps = &path.0;
    for (i, (a, b)) in steps.iter().enumerate() {
        let branch = if i + 1 == steps.len() { 0 } else { *b };
        h = splitmix64(h ^ ((*a as u64) << 32 | branch as u64));
    }
    h
}

/// Derives an independent stream seed from a base seed and a salt.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    splitmix64(seed ^ splitmix64(salt))
}

/// Stable hash over the full path including the final branch index; used for
/// per-child sampling streams where siblings must differ.
pub fn full_path_hash(seed: u64, path: &NodePath, tag: u64) -> u64 {
    let mut h = splitmix64(seed ^ splitmix64(tag));
    for (a, b) in &path.0 {
        h = splitmix64(h ^ ((*a as u64) << 32 | *b as u64));
    }
    h
}

// JSON object keys must be strings; serialize explicit bit maps as pair lists.
mod path_map {
    use super::NodePath;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<NodePath, bool>,
        ser: S,
    ) -> Result<S::Ok, S::Error> {
        let pairs: Vec<(&NodePath, bool)> = map.iter().map(|(k, v)| (k, *v)).collect();
        pairs.serialize(ser)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        de: D,
    ) -> Result<BTreeMap<NodePath, bool>, D::Error> {
        let pairs: Vec<(NodePath, bool)> = Vec::deserialize(de)?;
        Ok(pairs.into_iter().collect())
    }
}

fn unit_from_hash(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

const BETA_TAG: u64 = 0x62657461; // "beta"

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TopologyMode {
    /// Explicit bit map; unlisted paths default to the alternative regime.
    Explicit {
        #[serde(with = "path_map")]
        bits: BTreeMap<NodePath, bool>,
    },
    /// Deterministic lazy assignment: a path is original with probability
    /// `fraction` under a hash of (seed, path), unless forced by an override.
    Seeded {
        seed: u64,
        fraction: f64,
        overrides: BTreeSet<NodePath>,
    },
}

/// Assignment β of observation regimes to propagated belief-tree nodes.
/// Immutable; refinement returns a new topology.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Topology {
    #[serde(flatten)]
    pub mode: TopologyMode,
    pub label: String,
}

impl Topology {
    /// All-original topology τ_Z (the original POMDP).
    pub fn tau_z() -> Self {
        Topology {
            mode: TopologyMode::Seeded {
                seed: 0,
                fraction: 1.0,
                overrides: BTreeSet::new(),
            },
            label: "tau_Z".into(),
        }
    }

    /// All-alternative topology τ_O (the QMDP tree).
    pub fn tau_o() -> Self {
        Topology {
            mode: TopologyMode::Seeded {
                seed: 0,
                fraction: 0.0,
                overrides: BTreeSet::new(),
            },
            label: "tau_O".into(),
        }
    }

    /// Seeded topology keeping roughly `fraction` of propagated nodes in the
    /// original regime, with no overrides.
    pub fn initial(fraction: f64, seed: u64) -> Self {
        assert!((0.0..=1.0).contains(&fraction), "fraction must be in [0,1]");
        Topology {
            mode: TopologyMode::Seeded {
                seed,
                fraction,
                overrides: BTreeSet::new(),
            },
            label: format!("seeded(f={fraction},s={seed})"),
        }
    }

    pub fn explicit(bits: BTreeMap<NodePath, bool>, label: impl Into<String>) -> Self {
        let bits = bits
            .into_iter()
            .map(|(p, b)| (p.normalized(), b))
            .collect();
        Topology {
            mode: TopologyMode::Explicit { bits },
            label: label.into(),
        }
    }

    /// The node's own regime bit, keyed by `path` with the final branch
    /// index ignored. Deterministic in (mode, path).
    ///
    /// Tree evaluations use [`Topology::effective_beta`]: once a node
    /// switches to the alternative (state-revealing) regime, its whole
    /// subtree stays there until that node itself is flipped back. Without
    /// that closure, a flip would re-key the flipped node's descendants
    /// (observation branches replace state branches) and their regimes would
    /// change arbitrarily, breaking the monotone tightening of the bounds.
    pub fn beta(&self, path: &NodePath) -> bool {
        debug_assert!(path.depth() >= 1, "beta is defined for depths >= 1");
        match &self.mode {
            TopologyMode::Explicit { bits } => {
                bits.get(&path.normalized()).copied().unwrap_or(false)
            }
            TopologyMode::Seeded {
                seed,
                fraction,
                overrides,
            } => {
                if overrides.contains(&path.normalized()) {
                    return true;
                }
                unit_from_hash(path_hash(*seed, path, BETA_TAG)) < *fraction
            }
        }
    }

    /// The regime actually applied when evaluating the tree: a node is in
    /// the original regime only if it *and every propagated ancestor* carry
    /// an original bit. Below the first alternative node on a path the
    /// branches index revealed states rather than observations, so keeping
    /// the subtree in the alternative regime until that node itself flips is
    /// what makes refinement tighten both bounds monotonically: the flipped
    /// node's old subtree was a pure fully-observable evaluation, and any
    /// topology over the new observation children is bracketed by it.
    pub fn effective_beta(&self, path: &NodePath) -> bool {
        debug_assert!(path.depth() >= 1, "beta is defined for depths >= 1");
        (1..=path.depth()).all(|d| self.beta(&NodePath(path.0[..d].to_vec())))
    }

    /// `(effective regime, frontier)` in one query. A node is a *frontier*
    /// alternative node when its own bit is alternative but every propagated
    /// ancestor is original; these are the nodes whose flip changes the
    /// evaluated tree, so refinement summaries collect exactly them.
    pub fn effective_with_frontier(&self, path: &NodePath) -> (bool, bool) {
        debug_assert!(path.depth() >= 1, "beta is defined for depths >= 1");
        let ancestors_original =
            (1..path.depth()).all(|d| self.beta(&NodePath(path.0[..d].to_vec())));
        let own = self.beta(path);
        (ancestors_original && own, ancestors_original && !own)
    }

    /// Flips up to `n` alternative propagated nodes (sampled uniformly from
    /// `reachable_alt`) to the original regime. Returns the refined topology
    /// and exactly the flipped set. Existing original bits are preserved.
    pub fn refine(
        &self,
        reachable_alt: &BTreeSet<NodePath>,
        n: usize,
        rng: &mut dyn RngCore,
    ) -> Result<(Topology, BTreeSet<NodePath>)> {
        if reachable_alt.is_empty() {
            return Err(AotError::NothingToFlip);
        }
        let k = n.min(reachable_alt.len());
        let flipped: BTreeSet<NodePath> = reachable_alt
            .iter()
            .cloned()
            .choose_multiple(&mut rand_adapter(rng), k)
            .into_iter()
            .map(|p| p.normalized())
            .collect();
        let mode = match &self.mode {
            TopologyMode::Explicit { bits } => {
                let mut bits = bits.clone();
                for p in &flipped {
                    bits.insert(p.clone(), true);
                }
                TopologyMode::Explicit { bits }
            }
            TopologyMode::Seeded {
                seed,
                fraction,
                overrides,
            } => {
                let mut overrides = overrides.clone();
                overrides.extend(flipped.iter().cloned());
                TopologyMode::Seeded {
                    seed: *seed,
                    fraction: *fraction,
                    overrides,
                }
            }
        };
        let refined = Topology {
            mode,
            label: format!("{}+{}", self.label, flipped.len()),
        };
        Ok((refined, flipped))
    }

    pub fn to_json_file(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

// rand's IteratorRandom wants a sized Rng; adapt the dynamic one.
fn rand_adapter(rng: &mut dyn RngCore) -> impl rand::Rng + '_ {
    struct Wrap<'a>(&'a mut dyn RngCore);
    impl RngCore for Wrap<'_> {
        fn next_u32(&mut self) -> u32 {
            self.0.next_u32()
        }
        fn next_u64(&mut self) -> u64 {
            self.0.next_u64()
        }
        fn fill_bytes(&mut self, dest: &mut [u8]) {
            self.0.fill_bytes(dest)
        }
        fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
            self.0.try_fill_bytes(dest)
        }
    }
    Wrap(rng)
}

/// Nodes whose cached values stay valid across a refinement: no ancestor and
/// no descendant (prefix relation, flipped action matched on any branch) in
/// the flipped set.
pub fn reusable_nodes(
    flipped: &BTreeSet<NodePath>,
    all_nodes: &BTreeSet<NodePath>,
) -> BTreeSet<NodePath> {
    all_nodes
        .iter()
        .filter(|node| !flipped.iter().any(|f| node.affected_by(f)))
        .cloned()
        .collect()
}

/// How the adaptive loop moves between topologies.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefinementSchedule {
    /// Nodes flipped back to the original regime per iteration.
    pub flips_per_iteration: usize,
    pub max_iterations: usize,
    /// Seed for the uniform node-selection rule.
    pub seed: u64,
}

impl Default for RefinementSchedule {
    fn default() -> Self {
        RefinementSchedule {
            flips_per_iteration: 5,
            max_iterations: usize::MAX,
            seed: 0,
        }
    }
}

impl RefinementSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.flips_per_iteration == 0 {
            return Err(AotError::Validation {
                field: "flips_per_iteration".into(),
                row: None,
                detail: "must be >= 1".into(),
            });
        }
        Ok(())
    }
}
