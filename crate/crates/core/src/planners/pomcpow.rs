//! POMCPOW: observation widening with weighted particle collections at each
//! observation node.

use super::mcts::single;
use super::{best_root_action, pick_by_count, ucb_select, PlannerParams, Pomdp, SearchResult};
use crate::rng::SimRng;

struct Particle {
    state: usize,
    reward: f64,
    weight: f64,
}

struct ObsChild<O> {
    obs: O,
    count: u32,
    particles: Vec<Particle>,
    node: Option<usize>,
}

struct ActionNode<O> {
    n: u32,
    children: Vec<ObsChild<O>>,
}

struct History<A, O> {
    n: u32,
    actions: Option<Vec<A>>,
    na: Vec<u32>,
    q: Vec<f64>,
    branches: Vec<ActionNode<O>>,
}

impl<A, O> History<A, O> {
    fn empty() -> Self {
        History {
            n: 0,
            actions: None,
            na: Vec::new(),
            q: Vec::new(),
            branches: Vec::new(),
        }
    }

    fn init(&mut self, actions: Vec<A>) {
        let k = actions.len();
        self.na = vec![0; k];
        self.q = vec![0.0; k];
        self.branches = (0..k)
            .map(|_| ActionNode {
                n: 0,
                children: Vec::new(),
            })
            .collect();
        self.actions = Some(actions);
    }
}

struct Tree<'m, M: Pomdp> {
    model: &'m M,
    params: PlannerParams,
    nodes: Vec<History<M::Action, M::Obs>>,
    states: Vec<M::State>,
    cap_violations: usize,
    max_children: usize,
}

impl<M: Pomdp> Tree<'_, M> {
    fn simulate(&mut self, h: usize, state: usize, depth: usize, rng: &mut SimRng) -> f64 {
        if depth == 0 || self.model.is_terminal(&self.states[state]) {
            return 0.0;
        }
        if self.nodes[h].actions.is_none() {
            let acts = self.model.actions(&self.states[state]);
            self.nodes[h].init(acts);
        }
        let nd = &mut self.nodes[h];
        let actions = nd.actions.as_ref().expect("initialized above");
        if actions.is_empty() {
            return 0.0;
        }
        nd.n += 1;
        let ai = ucb_select(&nd.q, &nd.na, nd.n, self.params.ucb_c);
        let action = actions[ai];
        nd.branches[ai].n += 1;

        let (s1, o, r) = self.model.generate(&self.states[state], &action, rng);
        let branch = &self.nodes[h].branches[ai];
        let (oi, fresh) = if self.params.may_widen(branch.children.len(), branch.n) {
            match branch.children.iter().position(|c| c.obs == o) {
                Some(j) => (j, false),
                None => {
                    let branch = &mut self.nodes[h].branches[ai];
                    branch.children.push(ObsChild {
                        obs: o,
                        count: 0,
                        particles: Vec::new(),
                        node: None,
                    });
                    let len = branch.children.len();
                    if len > self.params.child_cap(branch.n) {
                        self.cap_violations += 1;
                    }
                    self.max_children = self.max_children.max(len);
                    (len - 1, true)
                }
            }
        } else {
            (pick_by_count(branch.children.iter().map(|c| c.count as f64), rng), false)
        };

        let w = {
            let child = &self.nodes[h].branches[ai].children[oi];
            self.model.obs_weight(&self.states[state], &action, &s1, &child.obs)
        };
        self.states.push(s1);
        let s1_idx = self.states.len() - 1;
        let child = &mut self.nodes[h].branches[ai].children[oi];
        child.count += 1;
        child.particles.push(Particle {
            state: s1_idx,
            reward: r,
            weight: w,
        });

        let gamma = self.params.discount;
        let total = if fresh {
            r + gamma * self.model.rollout(&self.states[s1_idx], depth - 1, rng)
        } else {
            let (ps, pr) = {
                let parts = &child.particles;
                let any_weight = parts.iter().any(|p| p.weight > 0.0);
                let j = if any_weight {
                    pick_by_count(parts.iter().map(|p| p.weight), rng)
                } else {
                    pick_by_count(parts.iter().map(|_| 1.0), rng)
                };
                (parts[j].state, parts[j].reward)
            };
            let next = match child.node {
                Some(n) => n,
                None => {
                    self.nodes.push(History::empty());
                    let n = self.nodes.len() - 1;
                    self.nodes[h].branches[ai].children[oi].node = Some(n);
                    n
                }
            };
            pr + gamma * self.simulate(next, ps, depth - 1, rng)
        };

        let nd = &mut self.nodes[h];
        nd.na[ai] += 1;
        nd.q[ai] += (total - nd.q[ai]) / nd.na[ai] as f64;
        total
    }
}

/// POMCPOW from a belief represented by `sample_root`, which draws one state
/// per iteration. `root_actions` must be valid for every such state.
pub fn pomcpow_plan<M: Pomdp>(
    model: &M,
    root_actions: Vec<M::Action>,
    sample_root: &mut dyn FnMut() -> M::State,
    params: &PlannerParams,
    rng: &mut SimRng,
) -> SearchResult<M::Action> {
    if root_actions.len() == 1 {
        return single(root_actions[0]);
    }
    let mut root = History::empty();
    root.init(root_actions);
    let mut tree = Tree {
        model,
        params: PlannerParams {
            discount: model.discount(),
            ..*params
        },
        nodes: vec![root],
        states: Vec::new(),
        cap_violations: 0,
        max_children: 0,
    };
    for _ in 0..params.iterations.max(1) {
        let s0 = sample_root();
        tree.states.push(s0);
        let idx = tree.states.len() - 1;
        tree.simulate(0, idx, params.depth, rng);
    }
    let root = &tree.nodes[0];
    let actions = root.actions.clone().expect("root initialized");
    let best = best_root_action(&root.q, &root.na);
    SearchResult {
        action: actions[best],
        actions,
        q: root.q.clone(),
        visits: root.na.clone(),
        cap_violations: tree.cap_violations,
        max_children: tree.max_children,
    }
}
