//! Exact enumeration of AOT trees for tabular POMDPs: optimal values, the
//! topology upper bound (Bellman max over both regimes), the recursive lower
//! bound (max at original-regime children, min at alternative ones), QMDP,
//! and the interval tests that certify or prune root actions.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{AotError, Result};
use crate::pomdp::{
    bayes_update_original, belief_reward, propagate, DiscreteBelief, TabularPomdp,
    ZERO_LIKELIHOOD_EPS,
};
use crate::real::Real;
use crate::topology::{NodePath, Topology};

/// Mass below which a revealed-state branch is not enumerated.
const BRANCH_MASS_EPS: f64 = 1e-15;

/// Per-action lower/upper bound certificate on the original POMDP's
/// optimal Q-function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundPair<F> {
    pub lb: F,
    pub ub: F,
}

/// Deterministic action assignment on posterior tree nodes.
#[derive(Debug, Clone, Default)]
pub struct PolicyAssignment {
    pub actions: BTreeMap<NodePath, usize>,
}

/// Per-node cached bound vectors (indexed by action).
#[derive(Debug, Clone)]
pub struct CachedBounds<F> {
    pub ub: Vec<F>,
    pub lb: Vec<F>,
}

/// Bound cache keyed by posterior node path; entries stay valid across a
/// refinement exactly for the reusable nodes. Ordered by path so that a
/// flipped node's descendants occupy one contiguous key range.
pub type BoundCache<F> = BTreeMap<NodePath, CachedBounds<F>>;

pub struct ExactSolver<'a, F: Real> {
    model: &'a TabularPomdp<F>,
    budget: usize,
}

/// Result of one root-action bound evaluation.
pub struct ActionEval<F> {
    pub bounds: BoundPair<F>,
    /// Alternative-regime propagated nodes discovered in the traversed
    /// (non-cached) region, normalized keys.
    pub reachable_alt: BTreeSet<NodePath>,
    pub expanded_nodes: usize,
}

struct Walk<'c, F: Real> {
    cache: &'c mut BoundCache<F>,
    alt: BTreeSet<NodePath>,
    expanded: usize,
    budget: usize,
}

impl<'a, F: Real> ExactSolver<'a, F> {
    pub fn new(model: &'a TabularPomdp<F>, budget: usize) -> Self {
        Self { model, budget }
    }

    /// Optimal Q-value of the original POMDP, Q*_{τ_Z}(b0, a0), by direct
    /// Bellman recursion over beliefs (no topology machinery involved).
    pub fn q_optimal_full(&self, b0: &DiscreteBelief<F>, a0: usize) -> Result<F> {
        let mut expanded = 0usize;
        self.bellman_q(b0, a0, self.model.horizon, &mut expanded)
    }

    fn bellman_q(
        &self,
        belief: &DiscreteBelief<F>,
        action: usize,
        m: usize,
        expanded: &mut usize,
    ) -> Result<F> {
        *expanded += 1;
        if *expanded > self.budget {
            return Err(AotError::BudgetExceeded { budget: self.budget });
        }
        let r = belief_reward(belief, action, self.model);
        if m == 1 {
            return Ok(r);
        }
        let prop = propagate(belief, action, self.model);
        let mut future = F::zero();
        for z in 0..self.model.num_observations {
            let eta: F = prop
                .probs
                .iter()
                .enumerate()
                .map(|(x, &p)| p * self.model.observation[x][z])
                .sum();
            if eta.as_f64() <= ZERO_LIKELIHOOD_EPS {
                continue;
            }
            let posterior = bayes_update_original(&prop, z, self.model)?;
            let mut best = F::neg_infinity();
            for a in 0..self.model.num_actions {
                let q = self.bellman_q(&posterior, a, m - 1, expanded)?;
                if q > best {
                    best = q;
                }
            }
            future += eta * best;
        }
        Ok(r + future)
    }

    /// Expected cumulative reward of a fixed policy on the AOT tree of
    /// `topology`, starting with `a0` at the root.
    pub fn q_topology(
        &self,
        topology: &Topology,
        policy: &PolicyAssignment,
        b0: &DiscreteBelief<F>,
        a0: usize,
    ) -> Result<F> {
        self.policy_q(topology, policy, b0, &NodePath::root(), a0, self.model.horizon)
    }

    fn policy_q(
        &self,
        topology: &Topology,
        policy: &PolicyAssignment,
        belief: &DiscreteBelief<F>,
        path: &NodePath,
        action: usize,
        m: usize,
    ) -> Result<F> {
        let r = belief_reward(belief, action, self.model);
        if m == 1 {
            return Ok(r);
        }
        let prop = propagate(belief, action, self.model);
        let beta = topology.effective_beta(&path.propagated(action));
        let mut future = F::zero();
        let mut visit = |this: &Self,
                         weight: F,
                         posterior: DiscreteBelief<F>,
                         child: NodePath|
         -> Result<()> {
            let next = *policy
                .actions
                .get(&child)
                .ok_or_else(|| AotError::MissingAssignment { path: child.clone() })?;
            let q = this.policy_q(topology, policy, &posterior, &child, next, m - 1)?;
            future += weight * q;
            Ok(())
        };
        if beta {
            for z in 0..self.model.num_observations {
                let eta: F = prop
                    .probs
                    .iter()
                    .enumerate()
                    .map(|(x, &p)| p * self.model.observation[x][z])
                    .sum();
                if eta.as_f64() <= ZERO_LIKELIHOOD_EPS {
                    continue;
                }
                let posterior = bayes_update_original(&prop, z, self.model)?;
                visit(self, eta, posterior, path.child(action, z))?;
            }
        } else {
            for (x, &mass) in prop.probs.iter().enumerate() {
                if mass.as_f64() <= BRANCH_MASS_EPS {
                    continue;
                }
                let posterior = DiscreteBelief::point_mass(self.model.num_states, x);
                visit(self, mass, posterior, path.child(action, x))?;
            }
        }
        Ok(r + future)
    }

    /// ub(τ, b0, a0): max over the topology's policy space, by Bellman max
    /// recursion over the AOT tree.
    pub fn upper_bound(&self, topology: &Topology, b0: &DiscreteBelief<F>, a0: usize) -> Result<F> {
        let mut cache = BoundCache::new();
        Ok(self.action_bounds(topology, b0, a0, &mut cache)?.bounds.ub)
    }

    /// lb(τ, b0, a0): the recursive lower bound — max over next actions at
    /// original-regime children, min at alternative-regime children.
    pub fn lower_bound(&self, topology: &Topology, b0: &DiscreteBelief<F>, a0: usize) -> Result<F> {
        let mut cache = BoundCache::new();
        Ok(self.action_bounds(topology, b0, a0, &mut cache)?.bounds.lb)
    }

    /// Both bounds for one root action, reusing and extending `cache`.
    pub fn action_bounds(
        &self,
        topology: &Topology,
        b0: &DiscreteBelief<F>,
        a0: usize,
        cache: &mut BoundCache<F>,
    ) -> Result<ActionEval<F>> {
        let mut walk = Walk {
            cache,
            alt: BTreeSet::new(),
            expanded: 0,
            budget: self.budget,
        };
        let root = NodePath::root();
        let (ub, lb) =
            self.bound_q(topology, b0, &root, a0, self.model.horizon, &mut walk)?;
        Ok(ActionEval {
            bounds: BoundPair { lb, ub },
            reachable_alt: walk.alt,
            expanded_nodes: walk.expanded,
        })
    }

    /// (ub, lb) of taking `action` at the posterior node `path`.
    fn bound_q(
        &self,
        topology: &Topology,
        belief: &DiscreteBelief<F>,
        path: &NodePath,
        action: usize,
        m: usize,
        walk: &mut Walk<'_, F>,
    ) -> Result<(F, F)> {
        let r = belief_reward(belief, action, self.model);
        if m == 1 {
            return Ok((r, r));
        }
        let prop = propagate(belief, action, self.model);
        let key = path.propagated(action);
        let (beta, frontier) = topology.effective_with_frontier(&key);
        let mut ub_future = F::zero();
        let mut lb_future = F::zero();
        if beta {
            for z in 0..self.model.num_observations {
                let eta: F = prop
                    .probs
                    .iter()
                    .enumerate()
                    .map(|(x, &p)| p * self.model.observation[x][z])
                    .sum();
                if eta.as_f64() <= ZERO_LIKELIHOOD_EPS {
                    continue;
                }
                let posterior = bayes_update_original(&prop, z, self.model)?;
                let child =
                    self.node_bounds(topology, &posterior, &path.child(action, z), m - 1, walk)?;
                ub_future += eta * vec_max(&child.ub);
                lb_future += eta * vec_max(&child.lb);
            }
        } else {
            if frontier {
                walk.alt.insert(key);
            }
            for (x, &mass) in prop.probs.iter().enumerate() {
                if mass.as_f64() <= BRANCH_MASS_EPS {
                    continue;
                }
                let posterior = DiscreteBelief::point_mass(self.model.num_states, x);
                let child =
                    self.node_bounds(topology, &posterior, &path.child(action, x), m - 1, walk)?;
                ub_future += mass * vec_max(&child.ub);
                lb_future += mass * vec_min(&child.lb);
            }
        }
        Ok((r + ub_future, r + lb_future))
    }

    /// Per-action (ub, lb) vectors at a posterior node, memoized by path.
    fn node_bounds(
        &self,
        topology: &Topology,
        belief: &DiscreteBelief<F>,
        path: &NodePath,
        m: usize,
        walk: &mut Walk<'_, F>,
    ) -> Result<CachedBounds<F>> {
        if let Some(hit) = walk.cache.get(path) {
            return Ok(hit.clone());
        }
        walk.expanded += 1;
        if walk.expanded > walk.budget {
            return Err(AotError::BudgetExceeded { budget: walk.budget });
        }
        let mut ub = Vec::with_capacity(self.model.num_actions);
        let mut lb = Vec::with_capacity(self.model.num_actions);
        for a in 0..self.model.num_actions {
            let (u, l) = self.bound_q(topology, belief, path, a, m, walk)?;
            ub.push(u);
            lb.push(l);
        }
        let entry = CachedBounds { ub, lb };
        walk.cache.insert(path.clone(), entry.clone());
        Ok(entry)
    }
}

fn vec_max<F: Real>(v: &[F]) -> F {
    v.iter().cloned().fold(F::neg_infinity(), F::max)
}

fn vec_min<F: Real>(v: &[F]) -> F {
    v.iter().cloned().fold(F::infinity(), F::min)
}

/// QMDP value: r(b0,a0) + Σ_{x'} b⁻(x')·V*_MDP(x', L−1) with finite-horizon
/// value iteration on the fully observable MDP.
pub fn qmdp_value<F: Real>(model: &TabularPomdp<F>, b0: &DiscreteBelief<F>, a0: usize) -> F {
    let r0 = belief_reward(b0, a0, model);
    if model.horizon == 1 {
        return r0;
    }
    let v = mdp_values(model, model.horizon - 1);
    let prop = propagate(b0, a0, model);
    let tail: F = prop.probs.iter().zip(&v).map(|(&p, &vx)| p * vx).sum();
    r0 + tail
}

/// V*_MDP(x, m): optimal finite-horizon MDP values with `m` action layers.
pub fn mdp_values<F: Real>(model: &TabularPomdp<F>, m: usize) -> Vec<F> {
    let mut v = vec![F::zero(); model.num_states];
    for _ in 0..m {
        let mut next = vec![F::neg_infinity(); model.num_states];
        for x in 0..model.num_states {
            for a in 0..model.num_actions {
                let mut q = model.reward[x][a];
                for (xp, &t) in model.transition[a][x].iter().enumerate() {
                    q += t * v[xp];
                }
                if q > next[x] {
                    next[x] = q;
                }
            }
        }
        v = next;
    }
    v
}

/// Returns the certified optimal action when one action's lower bound
/// strictly exceeds every other action's upper bound by more than `epsilon`.
/// The candidate is the lowest-index action with maximal lb.
pub fn identify_action<F: Real>(bounds: &[BoundPair<F>], epsilon: F) -> Option<usize> {
    let candidate = bounds
        .iter()
        .enumerate()
        .fold(None::<(usize, F)>, |best, (i, b)| match best {
            Some((_, lb)) if lb >= b.lb => best,
            _ => Some((i, b.lb)),
        })?
        .0;
    let separated = bounds
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != candidate)
        .all(|(_, b)| bounds[candidate].lb > b.ub + epsilon);
    separated.then_some(candidate)
}

/// Actions not dominated by any other action's lower bound.
pub fn prune_dominated<F: Real>(bounds: &[BoundPair<F>], epsilon: F) -> Vec<usize> {
    let best_lb = vec_max(&bounds.iter().map(|b| b.lb).collect::<Vec<_>>());
    bounds
        .iter()
        .enumerate()
        .filter(|(_, b)| b.ub + epsilon >= best_lb)
        .map(|(i, _)| i)
        .collect()
}
