//! Multi-lane freeway microsimulation around the autonomous vehicle.
//!
//! All vehicles decide from the pre-step scene, then move together. Lane
//! changes run at a constant lateral rate, never reverse and snap to the
//! destination lane center. Only a rolling section of road around the ego
//! vehicle is modeled; cars leaving it are dropped and new cars enter at its
//! boundaries.
//!
//! A vehicle that is moving laterally occupies both its source and destination
//! lanes. Every driver is kept able to stop behind its leaders under a worst
//! case in which each leader brakes at the physical limit, which makes the
//! simulation crash-free.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::behavior_priors::{ArchetypeTable, DriverSampler};
use crate::lanechange_pomdp::{available_actions, EgoAction, LateralCommand};
use crate::rng::SimRng;
use crate::traffic_models::{
    desired_gap, idm_accel, mobil_decision, mobil_incentive, sample_accel_noise, DriverParams, LongitudinalContext, NeighborhoodAccels,
    NoiseConstraint,
};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("action {0:?} is not in the available action set")]
    ActionNotAvailable(EgoAction),
}

/// Physical state of one vehicle. `y` is in lane units, 0 is the rightmost lane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

impl PhysicalState {
    pub fn new(x: f64, y: f64, vx: f64, vy: f64) -> Self {
        PhysicalState { x, y, vx, vy }
    }

    /// Lowest and highest lane this vehicle occupies.
    #[inline]
    pub fn lanes(&self) -> (i32, i32) {
        if self.vy > 0.0 {
            let lo = self.y.floor() as i32;
            (lo, lo + 1)
        } else if self.vy < 0.0 {
            let hi = self.y.ceil() as i32;
            (hi - 1, hi)
        } else {
            let l = self.y.round() as i32;
            (l, l)
        }
    }

    /// Nearest lane center.
    pub fn lane(&self) -> i32 {
        self.y.round() as i32
    }

    pub fn occupies(&self, lane: i32) -> bool {
        let (lo, hi) = self.lanes();
        lo <= lane && lane <= hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VehicleId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vehicle {
    pub id: VehicleId,
    pub phys: PhysicalState,
    pub behavior: DriverParams,
}

/// Full simulation state: the ego vehicle plus the human-driven cars around it.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneState {
    pub ego: PhysicalState,
    pub others: Vec<Vehicle>,
    /// Distance the ego vehicle has covered since the episode started (m).
    pub odometer: f64,
    /// Identifier handed to the next spawned car.
    pub next_id: u32,
}

impl SceneState {
    pub fn ego_only(ego: PhysicalState) -> Self {
        SceneState {
            ego,
            others: Vec::new(),
            odometer: 0.0,
            next_id: 0,
        }
    }

    pub fn vehicle(&self, id: VehicleId) -> Option<&Vehicle> {
        self.others.iter().find(|v| v.id == id)
    }

    /// Physical state by car index: 0 is the ego vehicle, `i` is `others[i - 1]`.
    #[inline]
    pub fn phys(&self, car: usize) -> &PhysicalState {
        if car == 0 {
            &self.ego
        } else {
            &self.others[car - 1].phys
        }
    }

    pub fn car_count(&self) -> usize {
        self.others.len() + 1
    }

    /// Smallest bumper gap between any two vehicles sharing a lane, or
    /// `None` when no two vehicles share a lane.
    pub fn min_same_lane_gap(&self, vehicle_length: f64) -> Option<f64> {
        let n = self.car_count();
        let mut best: Option<f64> = None;
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (self.phys(i), self.phys(j));
                if lanes_overlap(a.lanes(), b.lanes()) {
                    let gap = (a.x - b.x).abs() - vehicle_length;
                    best = Some(best.map_or(gap, |g: f64| g.min(gap)));
                }
            }
        }
        best
    }
}

#[inline]
fn lanes_overlap(a: (i32, i32), b: (i32, i32)) -> bool {
    a.0 <= b.1 && b.0 <= a.1
}

/// Simulation constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimParams {
    pub dt: f64,
    pub max_vehicles: usize,
    /// Lateral speed during a lane change (lanes/s).
    pub lane_change_rate: f64,
    /// Distance limit for reaching the target lane (m).
    pub distance_limit: f64,
    /// Standard deviation of a spawned car's speed around its desired speed (m/s).
    pub spawn_speed_std: f64,
    /// Physical braking limit (m/s²).
    pub max_brake: f64,
    /// Decelerations beyond this are penalized hard brakes (m/s²).
    pub hard_brake: f64,
    /// Speeds below this are penalized (m/s).
    pub slow_speed: f64,
    pub n_lanes: u32,
    pub target_lane: f64,
    pub vehicle_length: f64,
    /// Deceleration of the ego braking action when not overridden (m/s²).
    pub nominal_brake: f64,
    /// Ego speed increment of the discrete actions (m/s²).
    pub accel_increment: f64,
    /// Half-length of the modeled road section (m).
    pub section_half_length: f64,
    /// Required bumper gap once both cars of a worst-case braking pair stop (m).
    pub stop_margin: f64,
    pub warmup_steps: usize,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            dt: 0.75,
            max_vehicles: 10,
            lane_change_rate: 0.67,
            distance_limit: 1000.0,
            spawn_speed_std: 0.5,
            max_brake: 8.0,
            hard_brake: 4.0,
            slow_speed: 15.0,
            n_lanes: 4,
            target_lane: 3.0,
            vehicle_length: 4.0,
            nominal_brake: 2.0,
            accel_increment: 1.0,
            section_half_length: 50.0,
            stop_margin: 0.5,
            warmup_steps: 200,
        }
    }
}

impl SimParams {
    pub fn top_lane(&self) -> i32 {
        self.n_lanes as i32 - 1
    }
}

/// The longitudinal model other drivers attribute to the ego vehicle.
pub fn ego_driver_model() -> DriverParams {
    ArchetypeTable::default().normal()
}

/// Largest acceleration a follower may apply for one step such that, should
/// the leader start braking at `max_brake` right now, the follower can brake
/// at `max_brake` afterwards and still end up `stop_margin` behind it.
///
/// Returns negative infinity when no acceleration achieves this.
pub fn max_safe_accel_behind(follower: &PhysicalState, leader: &PhysicalState, p: &SimParams) -> f64 {
    let b = p.max_brake;
    let dt = p.dt;
    let (xf, vf) = (follower.x, follower.vx);
    let (xl, vl) = (leader.x, leader.vx);
    let offset = p.vehicle_length + p.stop_margin;

    let leader_stop = xl + vl * vl / (2.0 * b);
    let leader_after_step = if vl >= b * dt {
        xl + vl * dt - 0.5 * b * dt * dt
    } else {
        leader_stop
    };

    // Follower's stopping point must stay behind the leader's.
    let room = leader_stop - offset - xf;
    let by_stop = {
        let rem = room - 0.5 * vf * dt;
        if rem >= 0.0 {
            let u = b * (-0.5 * dt + (0.25 * dt * dt + 2.0 * rem / b).sqrt());
            (u - vf) / dt
        } else if room > 0.0 {
            -vf * vf / (2.0 * room)
        } else if vf == 0.0 && room > -offset {
            // Standing still behind a stopped car: staying put is the best available.
            0.0
        } else {
            f64::NEG_INFINITY
        }
    };

    // And it must be behind the leader at the end of this step.
    let room1 = leader_after_step - offset - xf;
    let by_step = {
        let a = 2.0 * (room1 - vf * dt) / (dt * dt);
        if vf + a * dt >= 0.0 {
            a
        } else if room1 > 0.0 {
            -vf * vf / (2.0 * room1)
        } else if vf == 0.0 && room1 > -offset {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    };
    by_stop.min(by_step)
}

/// Constant-acceleration integration over one step. A car that would reverse
/// stops where its speed reaches zero.
#[inline]
pub fn integrate_longitudinal(x: f64, v: f64, a: f64, dt: f64) -> (f64, f64) {
    let v1 = v + a * dt;
    if v1 >= 0.0 {
        (x + v * dt + 0.5 * a * dt * dt, v1)
    } else {
        (x - v * v / (2.0 * a), 0.0)
    }
}

/// Lateral integration with snap-to-center.
#[inline]
pub fn integrate_lateral(y: f64, vy: f64, dt: f64, p: &SimParams) -> (f64, f64) {
    if vy == 0.0 {
        return (y, 0.0);
    }
    let y1 = y + vy * dt;
    let target = if vy > 0.0 { y.floor() + 1.0 } else { y.ceil() - 1.0 };
    let crossed = if vy > 0.0 { y1 >= target } else { y1 <= target };
    if crossed {
        (target.clamp(0.0, p.top_lane() as f64), 0.0)
    } else {
        (y1, vy)
    }
}

/// Read-only view of the cars used by all neighbor queries. Index 0 is ego.
pub(crate) struct Traffic<'a> {
    pub phys: &'a [PhysicalState],
    pub lanes: &'a [(i32, i32)],
}

impl Traffic<'_> {
    /// Nearest car ahead of `i` occupying `lane`, with its bumper gap.
    #[inline]
    pub fn ahead_in_lane(&self, i: usize, lane: i32, len: f64) -> Option<(usize, f64)> {
        let xi = self.phys[i].x;
        let mut best: Option<(usize, f64)> = None;
        for (j, q) in self.phys.iter().enumerate() {
            if j == i {
                continue;
            }
            let (lo, hi) = self.lanes[j];
            if lane < lo || lane > hi {
                continue;
            }
            let dx = q.x - xi;
            if dx > 0.0 || (dx == 0.0 && j > i) {
                let gap = dx - len;
                if best.is_none_or(|(_, g)| gap < g) {
                    best = Some((j, gap));
                }
            }
        }
        best
    }

    /// Nearest car behind `i` occupying `lane`, with its bumper gap.
    #[inline]
    pub fn behind_in_lane(&self, i: usize, lane: i32, len: f64) -> Option<(usize, f64)> {
        let xi = self.phys[i].x;
        let mut best: Option<(usize, f64)> = None;
        for (j, q) in self.phys.iter().enumerate() {
            if j == i {
                continue;
            }
            let (lo, hi) = self.lanes[j];
            if lane < lo || lane > hi {
                continue;
            }
            let dx = xi - q.x;
            if dx > 0.0 || (dx == 0.0 && j < i) {
                let gap = dx - len;
                if best.is_none_or(|(_, g)| gap < g) {
                    best = Some((j, gap));
                }
            }
        }
        best
    }

    /// Nearest leader across every lane `i` occupies.
    pub fn leader(&self, i: usize, len: f64) -> Option<(usize, f64)> {
        let (lo, hi) = self.lanes[i];
        let a = self.ahead_in_lane(i, lo, len);
        if lo == hi {
            return a;
        }
        let b = self.ahead_in_lane(i, hi, len);
        match (a, b) {
            (Some(x), Some(y)) => Some(if y.1 < x.1 { y } else { x }),
            (x, None) => x,
            (None, y) => y,
        }
    }

    fn context(&self, i: usize, leader: Option<(usize, f64)>) -> LongitudinalContext {
        let v = self.phys[i].vx;
        match leader {
            Some((j, gap)) => LongitudinalContext::following(v, gap, v - self.phys[j].vx),
            None => LongitudinalContext::free(v),
        }
    }

    /// Most restrictive worst-case safe acceleration over the leaders in every
    /// occupied lane.
    pub fn safe_accel(&self, i: usize, p: &SimParams) -> f64 {
        let (lo, hi) = self.lanes[i];
        let mut a = f64::INFINITY;
        for lane in lo..=hi {
            if let Some((j, _)) = self.ahead_in_lane(i, lane, p.vehicle_length) {
                a = a.min(max_safe_accel_behind(&self.phys[i], &self.phys[j], p));
            }
        }
        a
    }
}

/// A lane change starting this step. `car` is 0 for ego, `i` for `others[i - 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LaneChange {
    pub car: usize,
    /// +1 to the left, -1 to the right.
    pub direction: i8,
}

impl LaneChange {
    fn destination(&self, phys: &PhysicalState) -> i32 {
        phys.lane() + self.direction as i32
    }
}

fn lane_entry_is_safe(
    t: &Traffic,
    car: usize,
    dest: i32,
    follower_accel_floor: impl Fn(usize) -> f64,
    p: &SimParams,
) -> Option<(Option<(usize, f64)>, Option<(usize, f64)>)> {
    let len = p.vehicle_length;
    let ahead = t.ahead_in_lane(car, dest, len);
    let behind = t.behind_in_lane(car, dest, len);
    if let Some((j, _)) = ahead {
        if max_safe_accel_behind(&t.phys[car], &t.phys[j], p) < -p.max_brake {
            return None;
        }
    }
    if let Some((n, _)) = behind {
        if max_safe_accel_behind(&t.phys[n], &t.phys[car], p) < follower_accel_floor(n) {
            return None;
        }
    }
    Some((ahead, behind))
}

/// MOBIL lane-change choice for a lane-keeping human driver `car` (index ≥ 1).
pub(crate) fn mobil_choice(
    t: &Traffic,
    car: usize,
    driver: &DriverParams,
    neighbor: &dyn Fn(usize) -> DriverParams,
    p: &SimParams,
) -> Option<i8> {
    let len = p.vehicle_length;
    let q = &t.phys[car];
    if q.vy != 0.0 {
        return None;
    }
    let lane = q.lane();
    let cur_leader = t.ahead_in_lane(car, lane, len);
    let old_follower = t.behind_in_lane(car, lane, len);
    let a_c = idm_accel(&driver.idm, &t.context(car, cur_leader));
    let (a_o, a_o_after) = match old_follower {
        Some((o, gap)) => {
            let po = neighbor(o);
            let vo = t.phys[o].vx;
            let before = idm_accel(&po.idm, &LongitudinalContext::following(vo, gap, vo - q.vx));
            let after = match cur_leader {
                Some((l, _)) => {
                    let g = t.phys[l].x - t.phys[o].x - len;
                    idm_accel(&po.idm, &LongitudinalContext::following(vo, g, vo - t.phys[l].vx))
                }
                None => idm_accel(&po.idm, &LongitudinalContext::free(vo)),
            };
            (before, after)
        }
        None => (0.0, 0.0),
    };

    let ego_floor = p.accel_increment;
    let floor = |n: usize| if n == 0 { ego_floor } else { -p.max_brake };
    let mut best: Option<(i8, f64)> = None;
    for dir in [1i8, -1] {
        let dest = lane + dir as i32;
        if dest < 0 || dest > p.top_lane() {
            continue;
        }
        let Some((new_leader, new_follower)) = lane_entry_is_safe(t, car, dest, floor, p) else {
            continue;
        };
        let a_c_after = idm_accel(&driver.idm, &t.context(car, new_leader));
        let (a_n, a_n_after) = match new_follower {
            Some((n, gap)) => {
                let pn = neighbor(n);
                let vn = t.phys[n].vx;
                let before = match new_leader {
                    Some((l, _)) => {
                        let g = t.phys[l].x - t.phys[n].x - len;
                        idm_accel(&pn.idm, &LongitudinalContext::following(vn, g, vn - t.phys[l].vx))
                    }
                    None => idm_accel(&pn.idm, &LongitudinalContext::free(vn)),
                };
                let after = idm_accel(&pn.idm, &LongitudinalContext::following(vn, gap, vn - q.vx));
                (before, after)
            }
            None => (0.0, 0.0),
        };
        let before = NeighborhoodAccels {
            candidate: a_c,
            new_follower: a_n,
            old_follower: a_o,
        };
        let after = NeighborhoodAccels {
            candidate: a_c_after,
            new_follower: a_n_after,
            old_follower: a_o_after,
        };
        if mobil_decision(driver, &before, &after) {
            let gain = mobil_incentive(&driver.mobil, &before, &after);
            if best.is_none_or(|(_, g)| gain > g) {
                best = Some((dir, gain));
            }
        }
    }
    best.map(|(d, _)| d)
}

fn merge_conflict(t: &Traffic, rear: usize, front: usize, rear_params: &DriverParams, p: &SimParams) -> bool {
    let (r, f) = (&t.phys[rear], &t.phys[front]);
    let gap = f.x - r.x - p.vehicle_length;
    gap < desired_gap(&rear_params.idm, r.vx, r.vx - f.vx) || max_safe_accel_behind(r, f, p) < -p.max_brake
}

pub(crate) fn coordinate_merges_in(
    t: &Traffic,
    proposals: &[LaneChange],
    params: &dyn Fn(usize) -> DriverParams,
    p: &SimParams,
) -> Vec<LaneChange> {
    let mut active = vec![true; proposals.len()];
    for a in 0..proposals.len() {
        for b in (a + 1)..proposals.len() {
            if !(active[a] && active[b]) {
                continue;
            }
            let (pa, pb) = (proposals[a], proposals[b]);
            if pa.destination(&t.phys[pa.car]) != pb.destination(&t.phys[pb.car]) {
                continue;
            }
            let (rear, front, rear_slot, front_slot) = if t.phys[pa.car].x <= t.phys[pb.car].x {
                (pa.car, pb.car, a, b)
            } else {
                (pb.car, pa.car, b, a)
            };
            if merge_conflict(t, rear, front, &params(rear), p) {
                // The ego vehicle keeps its maneuver; the human yields instead.
                if rear == 0 {
                    active[front_slot] = false;
                } else {
                    active[rear_slot] = false;
                }
            }
        }
    }
    proposals.iter().zip(active).filter_map(|(c, keep)| keep.then_some(*c)).collect()
}

pub(crate) fn car_params(s: &SceneState, ego_model: &DriverParams, car: usize) -> DriverParams {
    if car == 0 {
        *ego_model
    } else {
        s.others[car - 1].behavior
    }
}

pub(crate) fn collect_phys(s: &SceneState) -> (Vec<PhysicalState>, Vec<(i32, i32)>) {
    let mut phys = Vec::with_capacity(s.car_count());
    phys.push(s.ego);
    phys.extend(s.others.iter().map(|v| v.phys));
    let lanes = phys.iter().map(|q| q.lanes()).collect();
    (phys, lanes)
}

/// Resolves simultaneous lane changes into the same lane: when the front car
/// is within the rear car's desired gap (or cannot be followed safely) the
/// rear car's change is canceled. The ego vehicle never yields to a human.
pub fn coordinate_merges(s: &SceneState, proposals: &[LaneChange], p: &SimParams) -> Vec<LaneChange> {
    let (phys, lanes) = collect_phys(s);
    let t = Traffic {
        phys: &phys,
        lanes: &lanes,
    };
    let ego_model = ego_driver_model();
    coordinate_merges_in(&t, proposals, &|c| car_params(s, &ego_model, c), p)
}

/// Longitudinal acceleration of human driver `car` in the post-decision
/// occupancy, including the constrained noise draw.
pub(crate) fn human_accel(t: &Traffic, car: usize, driver: &DriverParams, p: &SimParams, rng: &mut SimRng) -> f64 {
    let leader = t.leader(car, p.vehicle_length);
    let a_idm = idm_accel(&driver.idm, &t.context(car, leader));
    let a_safe = t.safe_accel(car, p);
    let constraint = NoiseConstraint {
        lower: -p.hard_brake - a_idm,
        upper: a_safe - a_idm,
    };
    let w = sample_accel_noise(&driver.idm, rng, constraint);
    (a_idm + w).min(a_safe).max(-p.max_brake)
}

/// Lateral velocity after a lane-change decision.
#[inline]
pub(crate) fn lateral_velocity(vy: f64, change: Option<i8>, p: &SimParams) -> f64 {
    match change {
        Some(d) if vy == 0.0 => d as f64 * p.lane_change_rate,
        _ => vy,
    }
}

/// The state transition function. `action` must come from
/// [`available_actions`]; use [`step_scene`] to have that checked.
pub fn step_scene_unchecked<S: DriverSampler + ?Sized>(
    s: &SceneState,
    action: &EgoAction,
    spawn: &S,
    p: &SimParams,
    rng: &mut SimRng,
) -> SceneState {
    let ego_model = ego_driver_model();
    let (mut phys, lanes) = collect_phys(s);
    let n = phys.len();

    // Lateral decisions from the current scene.
    let mut proposals: Vec<LaneChange> = Vec::new();
    {
        let t = Traffic {
            phys: &phys,
            lanes: &lanes,
        };
        let params = |c: usize| car_params(s, &ego_model, c);
        if s.ego.vy == 0.0 {
            if let Some(d) = action.lateral.direction() {
                proposals.push(LaneChange { car: 0, direction: d });
            }
        }
        for car in 1..n {
            let driver = &s.others[car - 1].behavior;
            if let Some(d) = mobil_choice(&t, car, driver, &params, p) {
                proposals.push(LaneChange { car, direction: d });
            }
        }
        if proposals.len() > 1 {
            proposals = coordinate_merges_in(&t, &proposals, &params, p);
        }
    }
    for c in &proposals {
        phys[c.car].vy = lateral_velocity(phys[c.car].vy, Some(c.direction), p);
    }
    let lanes: Vec<(i32, i32)> = phys.iter().map(|q| q.lanes()).collect();

    // Longitudinal accelerations in the post-decision occupancy.
    let mut accel = vec![0.0; n];
    accel[0] = action.accel;
    {
        let t = Traffic {
            phys: &phys,
            lanes: &lanes,
        };
        for (car, a) in accel.iter_mut().enumerate().skip(1) {
            *a = human_accel(&t, car, &s.others[car - 1].behavior, p, rng);
        }
    }

    let mut next = SceneState {
        ego: s.ego,
        others: s.others.clone(),
        odometer: s.odometer,
        next_id: s.next_id,
    };
    for (car, q) in phys.iter().enumerate() {
        let (x, vx) = integrate_longitudinal(q.x, q.vx, accel[car], p.dt);
        let (y, vy) = integrate_lateral(q.y, q.vy, p.dt, p);
        let moved = PhysicalState { x, y, vx, vy };
        if car == 0 {
            next.ego = moved;
        } else {
            next.others[car - 1].phys = moved;
        }
    }
    next.odometer += next.ego.x - s.ego.x;

    let ego_x = next.ego.x;
    let half = p.section_half_length;
    next.others.retain(|v| (v.phys.x - ego_x).abs() <= half);
    if next.others.len() < p.max_vehicles {
        spawn_vehicle_in_place(&mut next, spawn, p, rng);
    }
    next
}

/// Checked state transition.
pub fn step_scene<S: DriverSampler + ?Sized>(
    s: &SceneState,
    action: &EgoAction,
    spawn: &S,
    p: &SimParams,
    rng: &mut SimRng,
) -> Result<SceneState, SimError> {
    if !available_actions(s, p).iter().any(|a| a == action) {
        return Err(SimError::ActionNotAvailable(*action));
    }
    Ok(step_scene_unchecked(s, action, spawn, p, rng))
}

/// Tries to add one car at the section boundary.
pub fn spawn_vehicle<S: DriverSampler + ?Sized>(s: &SceneState, spawn: &S, p: &SimParams, rng: &mut SimRng) -> SceneState {
    let mut next = s.clone();
    if next.others.len() < p.max_vehicles {
        spawn_vehicle_in_place(&mut next, spawn, p, rng);
    }
    next
}

fn spawn_vehicle_in_place<S: DriverSampler + ?Sized>(s: &mut SceneState, spawn: &S, p: &SimParams, rng: &mut SimRng) {
    let behavior = spawn.sample_driver(rng);
    let w0: f64 = rng.sample(StandardNormal);
    let speed = (behavior.idm.desired_speed + p.spawn_speed_std * w0).max(0.0);
    let at_back = speed > s.ego.vx;
    let x = if at_back {
        s.ego.x - p.section_half_length
    } else {
        s.ego.x + p.section_half_length
    };
    let ego_model = ego_driver_model();
    let len = p.vehicle_length;

    let mut chosen: Option<(i32, f64)> = None;
    for lane in 0..=p.top_lane() {
        let candidate = PhysicalState::new(x, lane as f64, speed, 0.0);
        let mut nearest: Option<(usize, f64)> = None;
        for car in 0..s.car_count() {
            let q = s.phys(car);
            if !q.occupies(lane) {
                continue;
            }
            let gap = if at_back { q.x - x } else { x - q.x } - len;
            if nearest.is_none_or(|(_, g)| gap < g) {
                nearest = Some((car, gap));
            }
        }
        let clearance = match nearest {
            None => f64::INFINITY,
            Some((car, gap)) => {
                let q = s.phys(car);
                let (required, safe) = if at_back {
                    (
                        desired_gap(&behavior.idm, speed, speed - q.vx),
                        max_safe_accel_behind(&candidate, q, p) >= -p.max_brake,
                    )
                } else {
                    let follower = car_params(s, &ego_model, car);
                    (
                        desired_gap(&follower.idm, q.vx, q.vx - speed),
                        max_safe_accel_behind(q, &candidate, p) >= -p.max_brake,
                    )
                };
                if !(gap > required && safe) {
                    continue;
                }
                gap
            }
        };
        if chosen.is_none_or(|(_, c)| clearance > c) {
            chosen = Some((lane, clearance));
        }
    }
    if let Some((lane, _)) = chosen {
        let id = VehicleId(s.next_id);
        s.next_id += 1;
        s.others.push(Vehicle {
            id,
            phys: PhysicalState::new(x, lane as f64, speed, 0.0),
            behavior,
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationStatus {
    Ongoing,
    Success,
    DistanceExceeded,
}

impl TerminationStatus {
    pub fn is_terminal(self) -> bool {
        self != TerminationStatus::Ongoing
    }
}

pub fn in_target_lane(s: &SceneState, p: &SimParams) -> bool {
    s.ego.y == p.target_lane
}

pub fn is_terminal(s: &SceneState, p: &SimParams) -> TerminationStatus {
    let in_lane = in_target_lane(s, p);
    if in_lane && s.odometer <= p.distance_limit {
        TerminationStatus::Success
    } else if s.odometer >= p.distance_limit && !in_lane {
        TerminationStatus::DistanceExceeded
    } else {
        TerminationStatus::Ongoing
    }
}

/// Ego acceleration that follows the normal IDM but never exceeds the
/// worst-case safe bound.
pub(crate) fn ego_idm_accel(s: &SceneState, p: &SimParams) -> f64 {
    let (phys, lanes) = collect_phys(s);
    let t = Traffic {
        phys: &phys,
        lanes: &lanes,
    };
    let leader = t.leader(0, p.vehicle_length);
    let a = idm_accel(&ego_driver_model().idm, &t.context(0, leader));
    a.min(t.safe_accel(0, p)).max(-p.max_brake)
}

/// Populates the road by driving the ego vehicle alone in the rightmost lane
/// for `warmup_steps` steps; the odometer is reset afterwards.
pub fn generate_initial_scene<S: DriverSampler + ?Sized>(dist: &S, p: &SimParams, rng: &mut SimRng) -> SceneState {
    let ego = PhysicalState::new(0.0, 0.0, ego_driver_model().idm.desired_speed, 0.0);
    let mut s = SceneState::ego_only(ego);
    for _ in 0..p.warmup_steps {
        let action = EgoAction {
            accel: ego_idm_accel(&s, p),
            lateral: LateralCommand::Keep,
        };
        s = step_scene_unchecked(&s, &action, dist, p, rng);
    }
    s.odometer = 0.0;
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::behavior_priors::{BehaviorDistribution, Scenario};
    use crate::rng::rng_from_seed;

    fn normal() -> DriverParams {
        ego_driver_model()
    }

    fn car(id: u32, x: f64, y: f64, vx: f64, vy: f64) -> Vehicle {
        Vehicle {
            id: VehicleId(id),
            phys: PhysicalState::new(x, y, vx, vy),
            behavior: normal(),
        }
    }

    fn no_spawn() -> SimParams {
        SimParams {
            max_vehicles: 0,
            ..SimParams::default()
        }
    }

    fn keep(a: f64) -> EgoAction {
        EgoAction {
            accel: a,
            lateral: LateralCommand::Keep,
        }
    }

    #[test]
    fn constant_velocity_integration() {
        let p = no_spawn();
        let s = SceneState::ego_only(PhysicalState::new(0.0, 0.0, 30.0, 0.0));
        let mut rng = rng_from_seed(0);
        let s1 = step_scene(&s, &keep(0.0), &normal(), &p, &mut rng).unwrap();
        assert!((s1.ego.x - 22.5).abs() < 1e-12);
        assert!((s1.odometer - 22.5).abs() < 1e-12);
    }

    #[test]
    fn lateral_snap_to_center() {
        let p = SimParams::default();
        let (y, vy) = integrate_lateral(0.8, 0.67, 0.75, &p);
        assert_eq!((y, vy), (1.0, 0.0));
        let (y, vy) = integrate_lateral(2.2, -0.67, 0.75, &p);
        assert_eq!((y, vy), (2.0, 0.0));
        let (y, vy) = integrate_lateral(1.0, 0.67, 0.75, &p);
        assert!((y - 1.5025).abs() < 1e-12 && vy == 0.67);
    }

    #[test]
    fn mid_change_vehicle_snaps_in_scene() {
        let p = no_spawn();
        let mut s = SceneState::ego_only(PhysicalState::new(0.0, 0.0, 30.0, 0.0));
        s.others.push(car(0, 30.0, 0.8, 30.0, 0.67));
        let mut rng = rng_from_seed(1);
        let s1 = step_scene_unchecked(&s, &keep(0.0), &normal(), &p, &mut rng);
        assert_eq!(s1.others[0].phys.y, 1.0);
        assert_eq!(s1.others[0].phys.vy, 0.0);
    }

    #[test]
    fn stopping_integration_never_reverses() {
        let (x, v) = integrate_longitudinal(0.0, 3.0, -8.0, 0.75);
        assert_eq!(v, 0.0);
        assert!((x - 9.0 / 16.0).abs() < 1e-12);
    }

    #[test]
    fn merge_conflict_cancels_rear() {
        let p = no_spawn();
        let mut s = SceneState::ego_only(PhysicalState::new(-40.0, 3.0, 30.0, 0.0));
        s.others.push(car(0, 0.0, 0.0, 30.0, 0.0));
        s.others.push(car(1, 20.0, 2.0, 30.0, 0.0));
        let proposals = [LaneChange { car: 1, direction: 1 }, LaneChange { car: 2, direction: -1 }];
        let out = coordinate_merges(&s, &proposals, &p);
        assert_eq!(out, vec![LaneChange { car: 2, direction: -1 }]);
    }

    #[test]
    fn merge_without_conflict_passes() {
        let p = no_spawn();
        let mut s = SceneState::ego_only(PhysicalState::new(-40.0, 3.0, 30.0, 0.0));
        s.others.push(car(0, 0.0, 0.0, 30.0, 0.0));
        s.others.push(car(1, 80.0, 2.0, 30.0, 0.0));
        let proposals = [LaneChange { car: 1, direction: 1 }, LaneChange { car: 2, direction: -1 }];
        // Oracle: gap 76 m exceeds g* = 2 + 1.5 * 30 = 47 m.
        let gstar = desired_gap(&normal().idm, 30.0, 0.0);
        assert!(80.0 - 0.0 - p.vehicle_length > gstar);
        assert_eq!(coordinate_merges(&s, &proposals, &p), proposals.to_vec());
        assert_eq!(coordinate_merges(&s, &proposals[..1], &p), proposals[..1].to_vec());
    }

    #[test]
    fn ego_keeps_priority_in_merge() {
        let p = no_spawn();
        let mut s = SceneState::ego_only(PhysicalState::new(0.0, 0.0, 30.0, 0.0));
        s.others.push(car(0, 10.0, 2.0, 30.0, 0.0));
        let proposals = [LaneChange { car: 0, direction: 1 }, LaneChange { car: 1, direction: -1 }];
        assert_eq!(coordinate_merges(&s, &proposals, &p), vec![proposals[0]]);
    }

    #[test]
    fn simultaneous_merge_in_step_cancels_rear() {
        // Two aggressive drivers both want the empty middle lane.
        let p = no_spawn();
        let agg = ArchetypeTable::default().aggressive();
        let mut s = SceneState::ego_only(PhysicalState::new(0.0, 0.0, 25.0, 0.0));
        // Slow leaders in lanes 1 and 3 give both cars an incentive to enter lane 2.
        for (id, x, y, v) in [
            (0, -20.0, 1.0, 30.0),
            (1, -8.0, 3.0, 30.0),
            (2, 30.0, 1.0, 25.0),
            (3, 42.0, 3.0, 25.0),
        ] {
            s.others.push(Vehicle {
                behavior: agg,
                ..car(id, x, y, v, 0.0)
            });
        }
        let mut rng = rng_from_seed(2);
        let s1 = step_scene_unchecked(&s, &keep(0.0), &normal(), &p, &mut rng);
        let rear = s1.vehicle(VehicleId(0)).unwrap();
        let front = s1.vehicle(VehicleId(1)).unwrap();
        assert!(front.phys.vy < 0.0, "front car changes lane");
        assert_eq!(rear.phys.vy, 0.0, "rear car yields");
        assert_eq!(rear.phys.y, 1.0);
    }

    #[test]
    fn spawn_on_empty_road_uses_lowest_free_lane() {
        let p = SimParams::default();
        let s = SceneState::ego_only(PhysicalState::new(0.0, 0.0, 30.0, 0.0));
        let mut rng = rng_from_seed(3);
        let s1 = spawn_vehicle(&s, &normal(), &p, &mut rng);
        assert_eq!(s1.others.len(), 1);
        let v = &s1.others[0];
        assert_eq!(v.phys.y, 1.0);
        // normal desired speed 33.3 > ego speed 30
        assert_eq!(v.phys.x, -50.0);
    }

    #[test]
    fn fast_spawn_appears_at_back_slow_at_front() {
        let p = SimParams::default();
        let s = SceneState::ego_only(PhysicalState::new(0.0, 0.0, 30.0, 0.0));
        let mut fast = normal();
        fast.idm.desired_speed = 38.0;
        let mut rng = rng_from_seed(4);
        let s1 = spawn_vehicle(&s, &fast, &p, &mut rng);
        assert_eq!(s1.others[0].phys.x, -50.0);
        let mut slow = normal();
        slow.idm.desired_speed = 25.0;
        let s2 = spawn_vehicle(&s, &slow, &p, &mut rng);
        assert_eq!(s2.others[0].phys.x, 50.0);
    }

    #[test]
    fn spawn_blocked_when_no_lane_has_clearance() {
        let p = SimParams::default();
        let mut s = SceneState::ego_only(PhysicalState::new(0.0, 0.0, 30.0, 0.0));
        for lane in 1..4 {
            s.others.push(car(lane, -40.0, lane as f64, 30.0, 0.0));
        }
        // Lane 0 is blocked by the ego itself, 50 m ahead of the spawn point.
        let mut fast = normal();
        fast.idm.desired_speed = 38.0;
        let mut rng = rng_from_seed(5);
        let s1 = spawn_vehicle(&s, &fast, &p, &mut rng);
        assert_eq!(s1, s);
    }

    #[test]
    fn termination_cases() {
        let p = SimParams::default();
        let mut s = SceneState::ego_only(PhysicalState::new(0.0, 3.0, 30.0, 0.0));
        s.odometer = 600.0;
        assert_eq!(is_terminal(&s, &p), TerminationStatus::Success);
        s.ego.y = 1.4;
        s.odometer = 1000.0;
        assert_eq!(is_terminal(&s, &p), TerminationStatus::DistanceExceeded);
        s.ego.y = 0.0;
        s.odometer = 200.0;
        assert_eq!(is_terminal(&s, &p), TerminationStatus::Ongoing);
    }

    #[test]
    fn warmup_without_traffic() {
        let p = no_spawn();
        let mut rng = rng_from_seed(6);
        let s = generate_initial_scene(&normal(), &p, &mut rng);
        assert!(s.others.is_empty());
        assert_eq!(s.odometer, 0.0);
        assert_eq!(s.ego.y, 0.0);
    }

    #[test]
    fn warmup_with_traffic_satisfies_invariants() {
        let p = SimParams::default();
        let dist = BehaviorDistribution::scenario(Scenario::Uncorrelated);
        let mut rng = rng_from_seed(7);
        let s = generate_initial_scene(&dist, &p, &mut rng);
        assert!(!s.others.is_empty() && s.others.len() <= 10);
        for v in &s.others {
            assert!((v.phys.x - s.ego.x).abs() <= 50.0);
            assert!(v.phys.y >= 0.0 && v.phys.y <= 3.0);
        }
        if let Some(g) = s.min_same_lane_gap(p.vehicle_length) {
            assert!(g > 0.0);
        }
    }

    #[test]
    fn safe_accel_oracle_stopped_leader() {
        // Gap equals one step of travel plus the braking distance: no acceleration is safe.
        let p = SimParams::default();
        let v: f64 = 30.0;
        let gap = v * p.dt + v * v / (2.0 * p.max_brake);
        let f = PhysicalState::new(0.0, 0.0, v, 0.0);
        let l = PhysicalState::new(gap + p.vehicle_length, 0.0, 0.0, 0.0);
        assert!(max_safe_accel_behind(&f, &l, &p) <= 0.0);
    }

    #[test]
    fn safe_accel_matches_braking_brute_force() {
        let p = SimParams::default();
        let f = PhysicalState::new(0.0, 0.0, 28.0, 0.0);
        let l = PhysicalState::new(45.0, 0.0, 20.0, 0.0);
        let a = max_safe_accel_behind(&f, &l, &p);
        let final_gap = |a: f64| {
            let (mut xf, mut vf) = integrate_longitudinal(f.x, f.vx, a, p.dt);
            let (mut xl, mut vl) = integrate_longitudinal(l.x, l.vx, -p.max_brake, p.dt);
            let mut min_gap = xl - xf - p.vehicle_length;
            for _ in 0..100 {
                (xf, vf) = integrate_longitudinal(xf, vf, -p.max_brake, p.dt);
                (xl, vl) = integrate_longitudinal(xl, vl, -p.max_brake, p.dt);
                min_gap = min_gap.min(xl - xf - p.vehicle_length);
            }
            min_gap
        };
        assert!((final_gap(a) - p.stop_margin).abs() < 1e-6, "{}", final_gap(a));
        assert!(final_gap(a + 0.01) < p.stop_margin);
    }
}
