//! Monte Carlo tree search planners and the lane-change policies built on
//! them.

mod highway;
mod mcts;
mod policy;
mod pomcpow;
pub mod toy;

pub use highway::{rollout_action, HighwayModel, SpawnModel};
pub use mcts::{mcts_dpw_plan, qmdp_plan, search_rooted};
pub use policy::{make_policy, LaneChangePolicy, PlannerKind, PolicyDeps, UnknownPlanner};
pub use pomcpow::pomcpow_plan;

use std::fmt::Debug;

use crate::rng::SimRng;

/// A generative MDP.
pub trait Mdp {
    type State: Clone + PartialEq;
    type Action: Copy + PartialEq + Debug;

    fn actions(&self, s: &Self::State) -> Vec<Self::Action>;
    /// Samples a successor and the transition reward.
    fn step(&self, s: &Self::State, a: &Self::Action, rng: &mut SimRng) -> (Self::State, f64);
    fn is_terminal(&self, s: &Self::State) -> bool;
    fn discount(&self) -> f64;
    /// Leaf value estimate from `s` with `depth` steps remaining.
    fn rollout(&self, s: &Self::State, depth: usize, rng: &mut SimRng) -> f64;
}

/// A generative POMDP: an MDP that also emits observations.
pub trait Pomdp: Mdp {
    type Obs: Clone + PartialEq;

    fn generate(&self, s: &Self::State, a: &Self::Action, rng: &mut SimRng) -> (Self::State, Self::Obs, f64);
    /// Relative likelihood of observing `o` after the transition `s, a -> s1`.
    fn obs_weight(&self, s: &Self::State, a: &Self::Action, s1: &Self::State, o: &Self::Obs) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerParams {
    pub ucb_c: f64,
    pub dpw_k: f64,
    pub dpw_alpha: f64,
    pub depth: usize,
    pub iterations: usize,
    pub discount: f64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        PlannerParams {
            ucb_c: 8.0,
            dpw_k: 4.5,
            dpw_alpha: 0.1,
            depth: 40,
            iterations: 300,
            discount: 1.0,
        }
    }
}

impl PlannerParams {
    /// Whether a node visited `n` times (this visit included) with `children`
    /// children may add another.
    #[inline]
    pub fn may_widen(&self, children: usize, n: u32) -> bool {
        (children as f64) < self.dpw_k * (n as f64).powf(self.dpw_alpha)
    }

    /// Upper bound on the children of a node visited `n` times.
    pub fn child_cap(&self, n: u32) -> usize {
        (self.dpw_k * (n as f64).powf(self.dpw_alpha)).ceil() as usize
    }
}

/// Root statistics returned by every planner.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult<A> {
    pub action: A,
    pub actions: Vec<A>,
    pub q: Vec<f64>,
    pub visits: Vec<u32>,
    /// Number of nodes whose child count ever exceeded the widening cap.
    pub cap_violations: usize,
    /// Largest child count seen at any widened node.
    pub max_children: usize,
}

impl<A: Copy> SearchResult<A> {
    pub fn value(&self) -> f64 {
        self.q
            .iter()
            .zip(&self.visits)
            .filter(|(_, n)| **n > 0)
            .map(|(q, _)| *q)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// UCB action choice: unvisited actions first in order, then the largest
/// `q + c sqrt(ln n / n_a)`.
pub(crate) fn ucb_select(q: &[f64], na: &[u32], n: u32, c: f64) -> usize {
    if let Some(i) = na.iter().position(|&k| k == 0) {
        return i;
    }
    let ln_n = (n.max(1) as f64).ln();
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for i in 0..q.len() {
        let v = q[i] + c * (ln_n / na[i] as f64).sqrt();
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// Index of the best visited action, lowest index on ties.
pub(crate) fn best_root_action(q: &[f64], na: &[u32]) -> usize {
    let mut best = None;
    for i in 0..q.len() {
        if na[i] == 0 {
            continue;
        }
        match best {
            Some(b) if q[i] <= q[b] => {}
            _ => best = Some(i),
        }
    }
    best.unwrap_or(0)
}

/// Index drawn proportionally to `counts`.
pub(crate) fn pick_by_count(counts: impl Iterator<Item = f64> + Clone, rng: &mut SimRng) -> usize {
    use rand::Rng;
    let total: f64 = counts.clone().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, c) in counts.enumerate() {
        if c > 0.0 {
            if u < c {
                return i;
            }
            u -= c;
            last = i;
        }
    }
    last
}
