//! Small problems with exact solutions, used to check the planners.

use rand::Rng;

use super::{Mdp, Pomdp};
use crate::rng::SimRng;

/// Random-action rollout shared by the toy problems.
fn random_rollout<M: Mdp>(m: &M, s: &M::State, depth: usize, rng: &mut SimRng) -> f64 {
    let mut s = s.clone();
    let mut total = 0.0;
    let mut disc = 1.0;
    for _ in 0..depth {
        if m.is_terminal(&s) {
            break;
        }
        let acts = m.actions(&s);
        let a = acts[rng.random_range(0..acts.len())];
        let (s1, r) = m.step(&s, &a, rng);
        total += disc * r;
        disc *= m.discount();
        s = s1;
    }
    total
}

/// One-step bandit: arm 0 pays `rewards[0]`, arm 1 pays `rewards[1]`.
#[derive(Debug, Clone, Copy)]
pub struct Bandit {
    pub rewards: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BanditState {
    Start,
    Done,
}

impl Mdp for Bandit {
    type State = BanditState;
    type Action = usize;

    fn actions(&self, _s: &BanditState) -> Vec<usize> {
        vec![0, 1]
    }

    fn step(&self, _s: &BanditState, a: &usize, _rng: &mut SimRng) -> (BanditState, f64) {
        (BanditState::Done, self.rewards[*a])
    }

    fn is_terminal(&self, s: &BanditState) -> bool {
        *s == BanditState::Done
    }

    fn discount(&self) -> f64 {
        1.0
    }

    fn rollout(&self, s: &BanditState, depth: usize, rng: &mut SimRng) -> f64 {
        random_rollout(self, s, depth, rng)
    }
}

/// Three states in a row. `Right` advances with probability 0.9, `Left`
/// pays 0.4 and returns to state 0; every transition into state 2 pays 1.
#[derive(Debug, Clone, Copy, Default)]
pub struct Chain;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainAction {
    Left,
    Right,
}

impl Chain {
    pub const ADVANCE: f64 = 0.9;
    pub const LEFT_REWARD: f64 = 0.4;

    /// Transition distribution as `(probability, next, reward)`.
    pub fn transitions(s: u8, a: ChainAction) -> Vec<(f64, u8, f64)> {
        let pay = |n: u8| if n == 2 { 1.0 } else { 0.0 };
        match a {
            ChainAction::Left => vec![(1.0, 0, Self::LEFT_REWARD)],
            ChainAction::Right => {
                let up = (s + 1).min(2);
                vec![(Self::ADVANCE, up, pay(up)), (1.0 - Self::ADVANCE, s, pay(s))]
            }
        }
    }

    /// Finite-horizon action values by value iteration.
    pub fn q_values(s: u8, depth: usize) -> [f64; 2] {
        let mut v = [0.0f64; 3];
        let mut q = [[0.0f64; 2]; 3];
        for _ in 0..depth {
            for st in 0..3u8 {
                for (k, a) in [ChainAction::Left, ChainAction::Right].into_iter().enumerate() {
                    q[st as usize][k] = Self::transitions(st, a).iter().map(|(p, n, r)| p * (r + v[*n as usize])).sum();
                }
            }
            for st in 0..3 {
                v[st] = q[st][0].max(q[st][1]);
            }
        }
        q[s as usize]
    }
}

impl Mdp for Chain {
    type State = u8;
    type Action = ChainAction;

    fn actions(&self, _s: &u8) -> Vec<ChainAction> {
        vec![ChainAction::Left, ChainAction::Right]
    }

    fn step(&self, s: &u8, a: &ChainAction, rng: &mut SimRng) -> (u8, f64) {
        let t = Self::transitions(*s, *a);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (p, n, r) in &t {
            acc += p;
            if u < acc {
                return (*n, *r);
            }
        }
        let (_, n, r) = t[t.len() - 1];
        (n, r)
    }

    fn is_terminal(&self, _s: &u8) -> bool {
        false
    }

    fn discount(&self) -> f64 {
        1.0
    }

    fn rollout(&self, s: &u8, depth: usize, rng: &mut SimRng) -> f64 {
        random_rollout(self, s, depth, rng)
    }
}

/// The chain with its state observed exactly.
impl Pomdp for Chain {
    type Obs = u8;

    fn generate(&self, s: &u8, a: &ChainAction, rng: &mut SimRng) -> (u8, u8, f64) {
        let (s1, r) = self.step(s, a, rng);
        (s1, s1, r)
    }

    fn obs_weight(&self, _s: &u8, _a: &ChainAction, s1: &u8, o: &u8) -> f64 {
        if s1 == o {
            1.0
        } else {
            0.0
        }
    }
}

/// A prize sits behind the left or the right door. Opening the right door
/// pays 1 and the wrong one -1, both ending the episode; sensing costs 0.1
/// and reveals the prize; waiting does nothing.
#[derive(Debug, Clone, Copy)]
pub struct DoorPomdp {
    pub discount: f64,
    pub sense_cost: f64,
}

impl Default for DoorPomdp {
    fn default() -> Self {
        DoorPomdp {
            discount: 0.5,
            sense_cost: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Door {
    Left,
    Right,
    Opened,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DoorAction {
    OpenLeft,
    OpenRight,
    Sense,
    Wait,
}

pub const DOOR_ACTIONS: [DoorAction; 4] = [DoorAction::OpenLeft, DoorAction::OpenRight, DoorAction::Sense, DoorAction::Wait];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DoorObs {
    Nothing,
    PrizeLeft,
    PrizeRight,
}

impl DoorPomdp {
    fn open_reward(s: Door, a: DoorAction) -> f64 {
        match (s, a) {
            (Door::Left, DoorAction::OpenLeft) | (Door::Right, DoorAction::OpenRight) => 1.0,
            _ => -1.0,
        }
    }

    /// Exact action values at belief `b = P(prize left)` with `depth` steps,
    /// by enumeration over the reachable beliefs.
    pub fn exact_q(&self, b: f64, depth: usize) -> [f64; 4] {
        if depth == 0 {
            return [0.0; 4];
        }
        let v = |b: f64| {
            if depth == 1 {
                0.0
            } else {
                self.exact_q(b, depth - 1).into_iter().fold(f64::NEG_INFINITY, f64::max)
            }
        };
        let g = self.discount;
        [
            2.0 * b - 1.0,
            1.0 - 2.0 * b,
            -self.sense_cost + g * (b * v(1.0) + (1.0 - b) * v(0.0)),
            g * v(b),
        ]
    }

    /// QMDP action values at belief `b`: state-wise MDP values averaged.
    pub fn qmdp_q(&self, b: f64, depth: usize) -> [f64; 4] {
        let l = self.mdp_q(Door::Left, depth);
        let r = self.mdp_q(Door::Right, depth);
        std::array::from_fn(|i| b * l[i] + (1.0 - b) * r[i])
    }

    fn mdp_q(&self, s: Door, depth: usize) -> [f64; 4] {
        if depth == 0 || s == Door::Opened {
            return [0.0; 4];
        }
        let v = if depth == 1 {
            0.0
        } else {
            self.mdp_q(s, depth - 1).into_iter().fold(f64::NEG_INFINITY, f64::max)
        };
        let g = self.discount;
        [
            Self::open_reward(s, DoorAction::OpenLeft),
            Self::open_reward(s, DoorAction::OpenRight),
            -self.sense_cost + g * v,
            g * v,
        ]
    }
}

impl Mdp for DoorPomdp {
    type State = Door;
    type Action = DoorAction;

    fn actions(&self, _s: &Door) -> Vec<DoorAction> {
        DOOR_ACTIONS.to_vec()
    }

    fn step(&self, s: &Door, a: &DoorAction, rng: &mut SimRng) -> (Door, f64) {
        let (s1, _, r) = self.generate(s, a, rng);
        (s1, r)
    }

    fn is_terminal(&self, s: &Door) -> bool {
        *s == Door::Opened
    }

    fn discount(&self) -> f64 {
        self.discount
    }

    fn rollout(&self, s: &Door, depth: usize, rng: &mut SimRng) -> f64 {
        random_rollout(self, s, depth, rng)
    }
}

impl Pomdp for DoorPomdp {
    type Obs = DoorObs;

    fn generate(&self, s: &Door, a: &DoorAction, _rng: &mut SimRng) -> (Door, DoorObs, f64) {
        match a {
            DoorAction::OpenLeft | DoorAction::OpenRight => (Door::Opened, DoorObs::Nothing, Self::open_reward(*s, *a)),
            DoorAction::Sense => {
                let o = match s {
                    Door::Left => DoorObs::PrizeLeft,
                    Door::Right => DoorObs::PrizeRight,
                    Door::Opened => DoorObs::Nothing,
                };
                (*s, o, -self.sense_cost)
            }
            DoorAction::Wait => (*s, DoorObs::Nothing, 0.0),
        }
    }

    fn obs_weight(&self, _s: &Door, a: &DoorAction, s1: &Door, o: &DoorObs) -> f64 {
        let expected = match (a, s1) {
            (DoorAction::Sense, Door::Left) => DoorObs::PrizeLeft,
            (DoorAction::Sense, Door::Right) => DoorObs::PrizeRight,
            _ => DoorObs::Nothing,
        };
        if expected == *o {
            1.0
        } else {
            0.0
        }
    }
}
