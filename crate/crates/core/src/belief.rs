//! Per-vehicle particle filters over driver internal states.
//!
//! Physical states are observed exactly, so the posterior is the observed
//! scene plus one independent weighted particle set per human-driven car.

use rand::Rng;

use crate::behavior_priors::{aggressiveness_of, ArchetypeTable, BehaviorDistribution};
use crate::highway_sim::{
    car_params, collect_phys, ego_driver_model, human_accel, integrate_lateral, integrate_longitudinal, lateral_velocity, mobil_choice,
    PhysicalState, SceneState, SimParams, Traffic, Vehicle, VehicleId,
};
use crate::lanechange_pomdp::{EgoAction, Observation};
use crate::rng::SimRng;
use crate::traffic_models::{DriverParams, PARAM_COUNT};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterVariant {
    /// Particles are full nine-parameter vectors drawn from the prior.
    Joint,
    /// Particles are scalar aggressiveness ranks; parameters follow from the
    /// archetype table.
    Aggressiveness,
}

impl FilterVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            FilterVariant::Joint => "joint",
            FilterVariant::Aggressiveness => "aggressiveness",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterParams {
    pub joint_particles: usize,
    pub aggressiveness_particles: usize,
    /// Weight multiplier when predicted and observed lanes disagree.
    pub wrong_lane_factor: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            joint_particles: 5000,
            aggressiveness_particles: 2000,
            wrong_lane_factor: 0.05,
        }
    }
}

impl FilterParams {
    pub fn particles(&self, v: FilterVariant) -> usize {
        match v {
            FilterVariant::Joint => self.joint_particles,
            FilterVariant::Aggressiveness => self.aggressiveness_particles,
        }
    }
}

/// The prior each particle set is drawn from.
#[derive(Debug, Clone, PartialEq)]
pub enum FilterPrior {
    Joint(BehaviorDistribution),
    Aggressiveness(ArchetypeTable),
}

impl FilterPrior {
    pub fn new(dist: &BehaviorDistribution, variant: FilterVariant) -> Self {
        match variant {
            FilterVariant::Joint => FilterPrior::Joint(dist.clone()),
            FilterVariant::Aggressiveness => FilterPrior::Aggressiveness(dist.table),
        }
    }

    pub fn variant(&self) -> FilterVariant {
        match self {
            FilterPrior::Joint(_) => FilterVariant::Joint,
            FilterPrior::Aggressiveness(_) => FilterVariant::Aggressiveness,
        }
    }

    pub fn table(&self) -> &ArchetypeTable {
        match self {
            FilterPrior::Joint(d) => &d.table,
            FilterPrior::Aggressiveness(t) => t,
        }
    }

    fn draw(&self, m: usize, rng: &mut SimRng) -> ParticleSet {
        let (params, ranks) = match self {
            FilterPrior::Joint(d) => ((0..m).map(|_| d.sample(rng)).collect(), None),
            FilterPrior::Aggressiveness(t) => {
                let r: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
                (r.iter().map(|&x| t.at_aggressiveness(x)).collect(), Some(r))
            }
        };
        ParticleSet::uniform(params, ranks)
    }
}

/// Weighted particles for one car.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub params: Vec<DriverParams>,
    /// Aggressiveness of each particle, aggressiveness variant only.
    pub ranks: Option<Vec<f64>>,
    pub weights: Vec<f64>,
    cumulative: Vec<f64>,
}

impl ParticleSet {
    pub fn uniform(params: Vec<DriverParams>, ranks: Option<Vec<f64>>) -> Self {
        let w = vec![1.0; params.len()];
        Self::weighted(params, ranks, w)
    }

    pub fn weighted(params: Vec<DriverParams>, ranks: Option<Vec<f64>>, weights: Vec<f64>) -> Self {
        assert_eq!(params.len(), weights.len());
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        ParticleSet {
            params,
            ranks,
            weights,
            cumulative,
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    /// Index of the particle whose cumulative-weight interval contains `u`.
    fn locate(&self, u: f64) -> usize {
        self.cumulative.partition_point(|&c| c <= u).min(self.len() - 1)
    }

    /// Draws one particle index proportionally to the weights.
    pub fn sample_index(&self, rng: &mut SimRng) -> usize {
        self.locate(rng.random::<f64>() * self.total_weight())
    }

    /// `m` indices by systematic resampling.
    pub fn resample_indices(&self, m: usize, rng: &mut SimRng) -> Vec<usize> {
        let total = self.total_weight();
        let step = total / m as f64;
        let start = rng.random::<f64>() * step;
        let mut out = Vec::with_capacity(m);
        let mut j = 0;
        for k in 0..m {
            let u = start + k as f64 * step;
            while j + 1 < self.len() && self.cumulative[j] <= u {
                j += 1;
            }
            out.push(j);
        }
        out
    }

    /// Weighted mean of the parameter vectors.
    pub fn mean_params(&self) -> DriverParams {
        let total = self.total_weight();
        let mut acc = [0.0; PARAM_COUNT];
        for (p, w) in self.params.iter().zip(&self.weights) {
            if *w > 0.0 {
                for (a, x) in acc.iter_mut().zip(p.to_array()) {
                    *a += w * x;
                }
            }
        }
        DriverParams::from_array(acc.map(|a| a / total))
    }

    /// Weighted mean aggressiveness: the stored ranks when present, otherwise
    /// the aggressiveness of each parameter vector under `table`.
    pub fn mean_aggressiveness(&self, table: &ArchetypeTable) -> f64 {
        let total = self.total_weight();
        match &self.ranks {
            Some(r) => r.iter().zip(&self.weights).map(|(x, w)| x * w).sum::<f64>() / total,
            None => {
                self.params
                    .iter()
                    .zip(&self.weights)
                    .filter(|(_, w)| **w > 0.0)
                    .map(|(p, w)| w * aggressiveness_of(p, table))
                    .sum::<f64>()
                    / total
            }
        }
    }
}

/// Filter weight of a predicted speed against the observed one, using the
/// particle's own maximum acceleration as the noise scale.
pub fn particle_weight(max_accel: f64, observed_speed: f64, predicted_speed: f64, same_lane: bool, wrong_lane_factor: f64) -> f64 {
    let w = ((max_accel - 2.0 * (observed_speed - predicted_speed).abs()) / max_accel).max(0.0);
    if same_lane {
        w
    } else {
        w * wrong_lane_factor
    }
}

/// Lane whose center is nearest to `y`.
#[inline]
pub fn nearest_lane(y: f64) -> i32 {
    y.round() as i32
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenePosterior {
    pub physical: Observation,
    pub vehicles: Vec<(VehicleId, ParticleSet)>,
    pub prior: FilterPrior,
    pub filter: FilterParams,
}

pub fn initialize_belief(
    o: &Observation,
    dist: &BehaviorDistribution,
    variant: FilterVariant,
    filter: &FilterParams,
    rng: &mut SimRng,
) -> ScenePosterior {
    let prior = FilterPrior::new(dist, variant);
    let m = filter.particles(variant);
    let vehicles = o.others.iter().map(|(id, _)| (*id, prior.draw(m, rng))).collect();
    ScenePosterior {
        physical: o.clone(),
        vehicles,
        prior,
        filter: *filter,
    }
}

impl ScenePosterior {
    pub fn variant(&self) -> FilterVariant {
        self.prior.variant()
    }

    pub fn set(&self, id: VehicleId) -> Option<&ParticleSet> {
        self.vehicles.iter().find(|(i, _)| *i == id).map(|(_, s)| s)
    }

    fn scene_with(&self, mut theta: impl FnMut(usize, &ParticleSet) -> DriverParams) -> SceneState {
        let o = &self.physical;
        let others = o
            .others
            .iter()
            .enumerate()
            .map(|(k, (id, phys))| Vehicle {
                id: *id,
                phys: *phys,
                behavior: theta(k, &self.vehicles[k].1),
            })
            .collect();
        SceneState {
            ego: o.ego,
            others,
            odometer: o.odometer,
            next_id: o.next_id,
        }
    }

    /// Scene with exact physics and one particle per car drawn by weight.
    pub fn sample_state(&self, rng: &mut SimRng) -> SceneState {
        self.scene_with(|_, set| set.params[set.sample_index(rng)])
    }

    /// Scene whose internal states are the certainty-equivalent
    /// aggressiveness of each car's posterior.
    pub fn certainty_equivalent_state(&self) -> SceneState {
        let table = *self.prior.table();
        self.scene_with(|_, set| table.at_aggressiveness(set.mean_aggressiveness(&table)))
    }

    /// Scene with every car set to the weighted-mean parameter vector.
    pub fn mean_state(&self) -> SceneState {
        self.scene_with(|_, set| set.mean_params())
    }
}

/// Weighted mean internal state of every car.
pub fn mean_internal_state(b: &ScenePosterior) -> Vec<(VehicleId, DriverParams)> {
    b.vehicles.iter().map(|(id, s)| (*id, s.mean_params())).collect()
}

pub fn sample_state(b: &ScenePosterior, rng: &mut SimRng) -> SceneState {
    b.sample_state(rng)
}

/// Post-decision occupancy with car `i` taking lateral decision `dir`.
struct PostDecision {
    phys: Vec<PhysicalState>,
    lanes: Vec<(i32, i32)>,
}

/// One filter step for every car: resample, propagate each particle through
/// that car's dynamics and reweight against the observation.
///
/// The prior physical scene is `b.physical`; neighbors are modeled with their
/// posterior-mean parameters and the ego vehicle as a normal driver. Other
/// cars' lane changes are taken from the observation.
pub fn update_belief(b: &ScenePosterior, u: &EgoAction, o: &Observation, p: &SimParams, rng: &mut SimRng) -> ScenePosterior {
    let before = scene_from_posterior_means(b);
    let (phys0, lanes0) = collect_phys(&before);
    let t0 = Traffic {
        phys: &phys0,
        lanes: &lanes0,
    };
    let ego_model = ego_driver_model();
    let neighbor = |c: usize| car_params(&before, &ego_model, c);

    // Lateral velocities after this step's decisions, as observed.
    let mut template = phys0.clone();
    template[0].vy = lateral_velocity(phys0[0].vy, u.lateral.direction(), p);
    for (k, v) in before.others.iter().enumerate() {
        if let Some(q1) = o.vehicle(v.id) {
            if v.phys.vy == 0.0 && q1.vy != 0.0 {
                template[k + 1].vy = lateral_velocity(0.0, Some(q1.vy.signum() as i8), p);
            }
        }
    }

    let m = b.filter.particles(b.variant());
    let gamma = b.filter.wrong_lane_factor;
    let mut vehicles = Vec::with_capacity(o.others.len());
    for (id, q1) in &o.others {
        let Some(k) = before.others.iter().position(|v| v.id == *id) else {
            vehicles.push((*id, b.prior.draw(m, rng)));
            continue;
        };
        let car = k + 1;
        let set = &b.vehicles[k].1;
        let idx = set.resample_indices(m, rng);
        let mut post: [Option<PostDecision>; 3] = [None, None, None];
        let observed_lane = nearest_lane(q1.y);

        let mut params = Vec::with_capacity(m);
        let mut ranks = set.ranks.as_ref().map(|_| Vec::with_capacity(m));
        let mut weights = Vec::with_capacity(m);
        for &j in &idx {
            let theta = set.params[j];
            let dir = mobil_choice(&t0, car, &theta, &neighbor, p);
            let slot = match dir {
                None => 0,
                Some(1) => 1,
                Some(_) => 2,
            };
            let pd = post[slot].get_or_insert_with(|| {
                let mut phys = template.clone();
                phys[car].vy = lateral_velocity(phys0[car].vy, dir, p);
                let lanes = phys.iter().map(|q| q.lanes()).collect();
                PostDecision { phys, lanes }
            });
            let t1 = Traffic {
                phys: &pd.phys,
                lanes: &pd.lanes,
            };
            let a = human_accel(&t1, car, &theta, p, rng);
            let q = &pd.phys[car];
            let (_, v1) = integrate_longitudinal(q.x, q.vx, a, p.dt);
            let (y1, _) = integrate_lateral(q.y, q.vy, p.dt, p);
            let lane_ok = nearest_lane(y1) == observed_lane;
            weights.push(particle_weight(theta.idm.max_accel, q1.vx, v1, lane_ok, gamma));
            params.push(theta);
            if let (Some(out), Some(src)) = (ranks.as_mut(), set.ranks.as_ref()) {
                out.push(src[j]);
            }
        }
        let next = ParticleSet::weighted(params, ranks, weights);
        if next.total_weight() > 0.0 {
            vehicles.push((*id, next));
        } else {
            vehicles.push((*id, b.prior.draw(m, rng)));
        }
    }
    ScenePosterior {
        physical: o.clone(),
        vehicles,
        prior: b.prior.clone(),
        filter: b.filter,
    }
}

/// Prior physical scene with posterior-mean parameters for every car.
fn scene_from_posterior_means(b: &ScenePosterior) -> SceneState {
    b.mean_state()
}
