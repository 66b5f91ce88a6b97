//! The lane-change policies compared in the experiments.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use super::highway::{HighwayModel, SpawnModel};
use super::{mcts_dpw_plan, pomcpow_plan, qmdp_plan, Mdp, PlannerParams, SearchResult};
use crate::behavior_priors::{BehaviorDistribution, CopulaSpec};
use crate::belief::{initialize_belief, update_belief, FilterParams, FilterVariant, ScenePosterior};
use crate::highway_sim::{ego_driver_model, SceneState, SimParams};
use crate::lanechange_pomdp::{observe, EgoAction, Observation, RewardWeights};
use crate::rng::{fork, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PlannerKind {
    AssumeNormal,
    NaiveMdp,
    MeanStateMdp,
    Qmdp,
    Pomcpow,
    Omniscient,
}

impl PlannerKind {
    pub const ALL: [PlannerKind; 6] = [
        PlannerKind::AssumeNormal,
        PlannerKind::NaiveMdp,
        PlannerKind::MeanStateMdp,
        PlannerKind::Qmdp,
        PlannerKind::Pomcpow,
        PlannerKind::Omniscient,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PlannerKind::AssumeNormal => "assume_normal",
            PlannerKind::NaiveMdp => "naive_mdp",
            PlannerKind::MeanStateMdp => "mean_state_mdp",
            PlannerKind::Qmdp => "qmdp",
            PlannerKind::Pomcpow => "pomcpow",
            PlannerKind::Omniscient => "omniscient",
        }
    }

    pub fn uses_filter(self) -> bool {
        matches!(self, PlannerKind::MeanStateMdp | PlannerKind::Qmdp | PlannerKind::Pomcpow)
    }
}

impl fmt::Display for PlannerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown planner `{0}` (expected one of assume_normal, naive_mdp, mean_state_mdp, qmdp, pomcpow, omniscient)")]
pub struct UnknownPlanner(pub String);

impl FromStr for PlannerKind {
    type Err = UnknownPlanner;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        PlannerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .or(match norm.as_str() {
                "normal" => Some(PlannerKind::AssumeNormal),
                "naive" => Some(PlannerKind::NaiveMdp),
                "msm" | "mean_state" => Some(PlannerKind::MeanStateMdp),
                _ => None,
            })
            .ok_or_else(|| UnknownPlanner(s.to_string()))
    }
}

/// Everything a policy needs besides the world.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDeps {
    pub sim: SimParams,
    pub planner: PlannerParams,
    pub reward: RewardWeights,
    pub filter: FilterParams,
    /// Distribution the planner believes internal states come from.
    pub plan_dist: BehaviorDistribution,
}

impl PolicyDeps {
    /// Aggressiveness particles when the planning distribution is fully
    /// correlated, joint particles otherwise.
    pub fn filter_variant(&self) -> FilterVariant {
        match self.plan_dist.copula {
            CopulaSpec::FullyCorrelated => FilterVariant::Aggressiveness,
            _ => FilterVariant::Joint,
        }
    }
}

pub struct LaneChangePolicy {
    pub kind: PlannerKind,
    deps: PolicyDeps,
    model: HighwayModel,
    belief: Option<ScenePosterior>,
    root_rng: Option<SimRng>,
}

pub fn make_policy(kind: PlannerKind, deps: PolicyDeps) -> LaneChangePolicy {
    let spawn = match kind {
        PlannerKind::AssumeNormal => SpawnModel::Fixed(ego_driver_model()),
        _ => SpawnModel::Distribution(deps.plan_dist.clone()),
    };
    let mut model = HighwayModel::new(deps.sim, deps.reward, spawn);
    model.discount = deps.planner.discount;
    model.wrong_lane_factor = deps.filter.wrong_lane_factor;
    if kind == PlannerKind::NaiveMdp {
        model.resample_each_step = Some(deps.plan_dist.clone());
    }
    LaneChangePolicy {
        kind,
        deps,
        model,
        belief: None,
        root_rng: None,
    }
}

/// Scene built from an observation with every car given `theta`.
fn scene_from_observation(o: &Observation, theta: crate::traffic_models::DriverParams) -> SceneState {
    SceneState {
        ego: o.ego,
        others: o
            .others
            .iter()
            .map(|(id, phys)| crate::highway_sim::Vehicle {
                id: *id,
                phys: *phys,
                behavior: theta,
            })
            .collect(),
        odometer: o.odometer,
        next_id: o.next_id,
    }
}

impl LaneChangePolicy {
    pub fn model(&self) -> &HighwayModel {
        &self.model
    }

    pub fn belief(&self) -> Option<&ScenePosterior> {
        self.belief.as_ref()
    }

    /// Starts an episode. Only the omniscient policy reads internal states of
    /// `world`; every other policy sees `observe(world)`.
    pub fn begin(&mut self, world: &SceneState, rng: &mut SimRng) {
        self.root_rng = Some(fork(rng));
        self.belief = if self.kind.uses_filter() {
            Some(initialize_belief(
                &observe(world),
                &self.deps.plan_dist,
                self.deps.filter_variant(),
                &self.deps.filter,
                rng,
            ))
        } else {
            None
        };
    }

    pub fn act(&mut self, world: &SceneState, rng: &mut SimRng) -> SearchResult<EgoAction> {
        let p = &self.deps.planner;
        let m = &self.model;
        match self.kind {
            PlannerKind::Omniscient => mcts_dpw_plan(m, world, p, rng),
            PlannerKind::AssumeNormal | PlannerKind::NaiveMdp => {
                let s = scene_from_observation(&observe(world), ego_driver_model());
                mcts_dpw_plan(m, &s, p, rng)
            }
            PlannerKind::MeanStateMdp => {
                let s = self
                    .belief
                    .as_ref()
                    .expect("begin() initializes the filter")
                    .certainty_equivalent_state();
                mcts_dpw_plan(m, &s, p, rng)
            }
            PlannerKind::Qmdp | PlannerKind::Pomcpow => {
                let b = self.belief.as_ref().expect("begin() initializes the filter");
                let root_rng = self.root_rng.as_mut().expect("begin() seeds the root sampler");
                let actions = m.actions(&b.sample_state(root_rng));
                let mut sampler = || b.sample_state(root_rng);
                if self.kind == PlannerKind::Qmdp {
                    qmdp_plan(m, actions, &mut sampler, p, rng)
                } else {
                    pomcpow_plan(m, actions, &mut sampler, p, rng)
                }
            }
        }
    }

    /// Feeds the step's observation to the filter, if any.
    pub fn update(&mut self, action: &EgoAction, world: &SceneState, rng: &mut SimRng) {
        if let Some(b) = &self.belief {
            self.belief = Some(update_belief(b, action, &observe(world), &self.deps.sim, rng));
        }
    }
}
