//! MCTS with double progressive widening on the state branches. All actions
//! of a node are enumerated (there are at most ten), so only state children
//! are widened.

use super::{best_root_action, pick_by_count, ucb_select, Mdp, PlannerParams, SearchResult};
use crate::rng::SimRng;

struct Child {
    state: usize,
    reward: f64,
    count: u32,
    node: Option<usize>,
}

#[derive(Default)]
struct Chance {
    n: u32,
    children: Vec<Child>,
}

struct Decision<A> {
    n: u32,
    actions: Vec<A>,
    na: Vec<u32>,
    q: Vec<f64>,
    chance: Vec<Chance>,
}

impl<A> Decision<A> {
    fn new(actions: Vec<A>) -> Self {
        let k = actions.len();
        Decision {
            n: 0,
            actions,
            na: vec![0; k],
            q: vec![0.0; k],
            chance: (0..k).map(|_| Chance::default()).collect(),
        }
    }
}

struct Tree<'m, M: Mdp> {
    model: &'m M,
    params: PlannerParams,
    nodes: Vec<Decision<M::Action>>,
    states: Vec<M::State>,
    cap_violations: usize,
    max_children: usize,
}

impl<'m, M: Mdp> Tree<'m, M> {
    fn new_node(&mut self, state: usize) -> usize {
        let actions = self.model.actions(&self.states[state]);
        self.nodes.push(Decision::new(actions));
        self.nodes.len() - 1
    }

    /// One simulation from `node`, whose state is `state`. The root passes
    /// its freshly sampled state here.
    fn simulate(&mut self, node: usize, state: usize, depth: usize, rng: &mut SimRng) -> f64 {
        if depth == 0 || self.model.is_terminal(&self.states[state]) {
            return 0.0;
        }
        let nd = &mut self.nodes[node];
        if nd.actions.is_empty() {
            return 0.0;
        }
        nd.n += 1;
        let ai = ucb_select(&nd.q, &nd.na, nd.n, self.params.ucb_c);
        let action = nd.actions[ai];
        let ch = &mut nd.chance[ai];
        ch.n += 1;
        let widen = self.params.may_widen(ch.children.len(), ch.n);

        let (ci, fresh) = if widen {
            let (s1, r) = self.model.step(&self.states[state], &action, rng);
            let ch = &mut self.nodes[node].chance[ai];
            let states = &self.states;
            match ch.children.iter().position(|c| states[c.state] == s1) {
                Some(j) => {
                    ch.children[j].count += 1;
                    (j, false)
                }
                None => {
                    self.states.push(s1);
                    let ch = &mut self.nodes[node].chance[ai];
                    ch.children.push(Child {
                        state: self.states.len() - 1,
                        reward: r,
                        count: 1,
                        node: None,
                    });
                    let len = ch.children.len();
                    if len > self.params.child_cap(ch.n) {
                        self.cap_violations += 1;
                    }
                    self.max_children = self.max_children.max(len);
                    (len - 1, true)
                }
            }
        } else {
            let ch = &mut self.nodes[node].chance[ai];
            let j = pick_by_count(ch.children.iter().map(|c| c.count as f64), rng);
            ch.children[j].count += 1;
            (j, false)
        };

        let child = &self.nodes[node].chance[ai].children[ci];
        let (s1, r) = (child.state, child.reward);
        let gamma = self.params.discount;
        let total = if fresh {
            r + gamma * self.model.rollout(&self.states[s1], depth - 1, rng)
        } else {
            let child_node = match child.node {
                Some(n) => n,
                None => {
                    let n = self.new_node(s1);
                    self.nodes[node].chance[ai].children[ci].node = Some(n);
                    n
                }
            };
            r + gamma * self.simulate(child_node, s1, depth - 1, rng)
        };

        let nd = &mut self.nodes[node];
        nd.na[ai] += 1;
        nd.q[ai] += (total - nd.q[ai]) / nd.na[ai] as f64;
        total
    }
}

/// MCTS-DPW whose root state is redrawn by `sample_root` at every iteration.
/// `root_actions` must be valid for every state `sample_root` can return.
pub fn search_rooted<M: Mdp>(
    model: &M,
    root_actions: Vec<M::Action>,
    sample_root: &mut dyn FnMut() -> M::State,
    params: &PlannerParams,
    rng: &mut SimRng,
) -> SearchResult<M::Action> {
    let mut tree = Tree {
        model,
        params: PlannerParams {
            discount: model.discount(),
            ..*params
        },
        nodes: vec![Decision::new(root_actions)],
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
    let best = best_root_action(&root.q, &root.na);
    SearchResult {
        action: root.actions[best],
        actions: root.actions.clone(),
        q: root.q.clone(),
        visits: root.na.clone(),
        cap_violations: tree.cap_violations,
        max_children: tree.max_children,
    }
}

/// MCTS-DPW from a known state.
pub fn mcts_dpw_plan<M: Mdp>(model: &M, s0: &M::State, params: &PlannerParams, rng: &mut SimRng) -> SearchResult<M::Action> {
    let actions = model.actions(s0);
    if actions.len() == 1 {
        return single(actions[0]);
    }
    search_rooted(model, actions, &mut || s0.clone(), params, rng)
}

/// QMDP by root sampling: each iteration draws a state from the belief via
/// `sample_root` and searches below it as if that state were known.
pub fn qmdp_plan<M: Mdp>(
    model: &M,
    root_actions: Vec<M::Action>,
    sample_root: &mut dyn FnMut() -> M::State,
    params: &PlannerParams,
    rng: &mut SimRng,
) -> SearchResult<M::Action> {
    if root_actions.len() == 1 {
        return single(root_actions[0]);
    }
    search_rooted(model, root_actions, sample_root, params, rng)
}

pub(crate) fn single<A: Copy>(a: A) -> SearchResult<A> {
    SearchResult {
        action: a,
        actions: vec![a],
        q: vec![0.0],
        visits: vec![0],
        cap_violations: 0,
        max_children: 0,
    }
}
