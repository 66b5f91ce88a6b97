//! Generative models of the lane-change problem for the planners.

use super::{Mdp, Pomdp};
use crate::behavior_priors::{BehaviorDistribution, DriverSampler};
use crate::belief::{nearest_lane, particle_weight};
use crate::highway_sim::{ego_idm_accel, is_terminal, step_scene_unchecked, SceneState, SimParams};
use crate::lanechange_pomdp::{available_actions, keep_lane_actions, observe, reward, EgoAction, Observation, RewardWeights};
use crate::rng::SimRng;
use crate::traffic_models::DriverParams;

/// Internal states given to cars that enter the simulated section.
#[derive(Debug, Clone, PartialEq)]
pub enum SpawnModel {
    Fixed(DriverParams),
    Distribution(BehaviorDistribution),
}

impl DriverSampler for SpawnModel {
    fn sample_driver(&self, rng: &mut SimRng) -> DriverParams {
        match self {
            SpawnModel::Fixed(p) => *p,
            SpawnModel::Distribution(d) => d.sample(rng),
        }
    }
}

/// The simulator as a planning model.
#[derive(Debug, Clone, PartialEq)]
pub struct HighwayModel {
    pub sim: SimParams,
    pub reward: RewardWeights,
    pub spawn: SpawnModel,
    /// When set, every car's internal state is redrawn from this distribution
    /// before each simulated step.
    pub resample_each_step: Option<BehaviorDistribution>,
    pub discount: f64,
    /// Lane-mismatch factor of the observation weight.
    pub wrong_lane_factor: f64,
}

impl HighwayModel {
    pub fn new(sim: SimParams, reward: RewardWeights, spawn: SpawnModel) -> Self {
        HighwayModel {
            sim,
            reward,
            spawn,
            resample_each_step: None,
            discount: 1.0,
            wrong_lane_factor: 0.05,
        }
    }

    fn transition(&self, s: &SceneState, a: &EgoAction, rng: &mut SimRng) -> (SceneState, f64) {
        let s1 = match &self.resample_each_step {
            Some(d) => {
                let mut s = s.clone();
                for v in &mut s.others {
                    v.behavior = d.sample(rng);
                }
                step_scene_unchecked(&s, a, &self.spawn, &self.sim, rng)
            }
            None => step_scene_unchecked(s, a, &self.spawn, &self.sim, rng),
        };
        let r = reward(s, a, &s1, &self.reward, &self.sim);
        (s1, r)
    }
}

/// Default-policy action: keep the lane, taking the lane-keeping action
/// closest to the normal driver's IDM acceleration.
pub fn rollout_action(s: &SceneState, p: &SimParams) -> EgoAction {
    let target = ego_idm_accel(s, p);
    let acts = keep_lane_actions(s, p);
    let mut best = acts[0];
    for a in &acts[1..] {
        if (a.accel - target).abs() < (best.accel - target).abs() {
            best = *a;
        }
    }
    best
}

impl Mdp for HighwayModel {
    type State = SceneState;
    type Action = EgoAction;

    fn actions(&self, s: &SceneState) -> Vec<EgoAction> {
        available_actions(s, &self.sim)
    }

    fn step(&self, s: &SceneState, a: &EgoAction, rng: &mut SimRng) -> (SceneState, f64) {
        self.transition(s, a, rng)
    }

    fn is_terminal(&self, s: &SceneState) -> bool {
        is_terminal(s, &self.sim).is_terminal()
    }

    fn discount(&self) -> f64 {
        self.discount
    }

    fn rollout(&self, s: &SceneState, depth: usize, rng: &mut SimRng) -> f64 {
        let mut s = s.clone();
        let mut total = 0.0;
        let mut disc = 1.0;
        for _ in 0..depth {
            if self.is_terminal(&s) {
                break;
            }
            let a = rollout_action(&s, &self.sim);
            let (s1, r) = self.transition(&s, &a, rng);
            total += disc * r;
            disc *= self.discount;
            s = s1;
        }
        total
    }
}

impl Pomdp for HighwayModel {
    type Obs = Observation;

    fn generate(&self, s: &SceneState, a: &EgoAction, rng: &mut SimRng) -> (SceneState, Observation, f64) {
        let (s1, r) = self.transition(s, a, rng);
        let o = observe(&s1);
        (s1, o, r)
    }

    /// Product over cars of the particle-filter weight; a car present in only
    /// one of the state and the observation contributes the lane factor.
    fn obs_weight(&self, _s: &SceneState, _a: &EgoAction, s1: &SceneState, o: &Observation) -> f64 {
        let g = self.wrong_lane_factor;
        let mut w = 1.0;
        let mut matched = 0;
        for v in &s1.others {
            match o.vehicle(v.id) {
                Some(q) => {
                    matched += 1;
                    let same_lane = nearest_lane(q.y) == nearest_lane(v.phys.y);
                    w *= particle_weight(v.behavior.idm.max_accel, q.vx, v.phys.vx, same_lane, g);
                    if w == 0.0 {
                        return 0.0;
                    }
                }
                None => w *= g,
            }
        }
        let unmatched_obs = o.others.len() - matched;
        w * g.powi(unmatched_obs as i32)
    }
}
