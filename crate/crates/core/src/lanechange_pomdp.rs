//! The lane-change decision problem on top of the simulator: the pruned
//! action set, the reward and the observation model.

use crate::highway_sim::{in_target_lane, max_safe_accel_behind, PhysicalState, SceneState, SimParams, VehicleId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LateralCommand {
    Left,
    Keep,
    Right,
}

impl LateralCommand {
    /// Lane direction of a lane-change command.
    pub fn direction(self) -> Option<i8> {
        match self {
            LateralCommand::Left => Some(1),
            LateralCommand::Keep => None,
            LateralCommand::Right => Some(-1),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LateralCommand::Left => "left",
            LateralCommand::Keep => "keep",
            LateralCommand::Right => "right",
        }
    }
}

/// Ego longitudinal acceleration plus lateral command. While a lane change is
/// in progress, `Keep` means continuing it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoAction {
    pub accel: f64,
    pub lateral: LateralCommand,
}

/// What the ego vehicle senses: exact physical states, no internal states.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub ego: PhysicalState,
    pub others: Vec<(VehicleId, PhysicalState)>,
    pub odometer: f64,
    pub next_id: u32,
}

impl Observation {
    pub fn vehicle(&self, id: VehicleId) -> Option<&PhysicalState> {
        self.others.iter().find(|(i, _)| *i == id).map(|(_, q)| q)
    }
}

pub fn observe(s: &SceneState) -> Observation {
    Observation {
        ego: s.ego,
        others: s.others.iter().map(|v| (v.id, v.phys)).collect(),
        odometer: s.odometer,
        next_id: s.next_id,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardWeights {
    pub lambda: f64,
}

/// Upper bound on the ego acceleration from every leader in the lanes it
/// occupies; `f64::INFINITY` when nothing is ahead.
pub fn max_safe_accel(s: &SceneState, p: &SimParams) -> f64 {
    let (lo, hi) = s.ego.lanes();
    (lo..=hi)
        .filter_map(|lane| nearest_in_lane(s, lane, true, p))
        .map(|(car, _)| max_safe_accel_behind(&s.ego, s.phys(car), p))
        .fold(f64::INFINITY, f64::min)
}

/// Nearest car (index ≥ 1) ahead of or behind the ego vehicle in `lane`.
fn nearest_in_lane(s: &SceneState, lane: i32, ahead: bool, p: &SimParams) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (k, v) in s.others.iter().enumerate() {
        if !v.phys.occupies(lane) {
            continue;
        }
        let dx = if ahead { v.phys.x - s.ego.x } else { s.ego.x - v.phys.x };
        if dx >= 0.0 {
            let gap = dx - p.vehicle_length;
            if best.is_none_or(|(_, g)| gap < g) {
                best = Some((k + 1, gap));
            }
        }
    }
    best
}

/// Acceleration of the braking action.
pub fn braking_accel(a_max: f64, p: &SimParams) -> f64 {
    a_max.min(-p.nominal_brake).max(-p.max_brake)
}

/// Acceleration bound for a lane change into `dest`, or `None` if entering it
/// would break crash-freedom.
fn lane_change_bound(s: &SceneState, dest: i32, a_max: f64, p: &SimParams) -> Option<f64> {
    if dest < 0 || dest > p.top_lane() {
        return None;
    }
    let mut bound = a_max;
    if let Some((car, _)) = nearest_in_lane(s, dest, true, p) {
        let a = max_safe_accel_behind(&s.ego, s.phys(car), p);
        if a < -p.max_brake {
            return None;
        }
        bound = bound.min(a);
    }
    if let Some((car, _)) = nearest_in_lane(s, dest, false, p) {
        if max_safe_accel_behind(s.phys(car), &s.ego, p) < -p.max_brake {
            return None;
        }
    }
    Some(bound)
}

const ACCEL_STEPS: [f64; 3] = [-1.0, 0.0, 1.0];
const LATERALS: [LateralCommand; 3] = [LateralCommand::Left, LateralCommand::Keep, LateralCommand::Right];

/// The pruned action set: the 3x3 grid of speed and lane commands followed by
/// the dynamic braking action, which is always present.
pub fn available_actions(s: &SceneState, p: &SimParams) -> Vec<EgoAction> {
    let a_max = max_safe_accel(s, p);
    let changing = s.ego.vy != 0.0;
    let lane = s.ego.lane();
    let mut out = Vec::with_capacity(10);
    for lateral in LATERALS {
        let bound = match lateral.direction() {
            None => Some(a_max),
            Some(_) if changing => None,
            Some(d) => lane_change_bound(s, lane + d as i32, a_max, p),
        };
        let Some(bound) = bound else { continue };
        for k in ACCEL_STEPS {
            let accel = k * p.accel_increment;
            if accel <= bound {
                out.push(EgoAction { accel, lateral });
            }
        }
    }
    out.push(EgoAction {
        accel: braking_accel(a_max, p),
        lateral: LateralCommand::Keep,
    });
    out
}

/// Lane-keeping subset of [`available_actions`], cheaper to build.
pub fn keep_lane_actions(s: &SceneState, p: &SimParams) -> Vec<EgoAction> {
    let a_max = max_safe_accel(s, p);
    let mut out: Vec<EgoAction> = ACCEL_STEPS
        .iter()
        .map(|k| k * p.accel_increment)
        .filter(|&a| a <= a_max)
        .map(|accel| EgoAction {
            accel,
            lateral: LateralCommand::Keep,
        })
        .collect();
    out.push(EgoAction {
        accel: braking_accel(a_max, p),
        lateral: LateralCommand::Keep,
    });
    out
}

pub fn in_goal(s: &SceneState, p: &SimParams) -> bool {
    in_target_lane(s, p) && s.odometer <= p.distance_limit
}

#[inline]
fn is_hard_brake(before: f64, after: f64, p: &SimParams) -> bool {
    after - before < -p.hard_brake * p.dt
}

/// Whether any human-driven car present in both scenes braked hard.
pub fn any_hard_brakes(s: &SceneState, s1: &SceneState, p: &SimParams) -> bool {
    s1.others
        .iter()
        .any(|v| s.vehicle(v.id).is_some_and(|u| is_hard_brake(u.phys.vx, v.phys.vx, p)))
}

pub fn any_too_slow(s1: &SceneState, p: &SimParams) -> bool {
    s1.others.iter().any(|v| v.phys.vx < p.slow_speed)
}

/// Goal indicator minus `λ` times the hard-brake and slow-speed indicators.
pub fn reward(s: &SceneState, _a: &EgoAction, s1: &SceneState, w: &RewardWeights, p: &SimParams) -> f64 {
    let goal = if in_goal(s1, p) { 1.0 } else { 0.0 };
    let hard = any_hard_brakes(s, s1, p) as u8 as f64;
    let slow = any_too_slow(s1, p) as u8 as f64;
    goal - w.lambda * (hard + slow)
}

/// Safety events of one step counted over every vehicle, ego included.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepEvents {
    pub hard_brakes: u32,
    pub slow: bool,
}

impl StepEvents {
    pub fn is_unsafe(&self) -> bool {
        self.hard_brakes > 0 || self.slow
    }
}

pub fn step_events(s: &SceneState, s1: &SceneState, p: &SimParams) -> StepEvents {
    let mut hard = is_hard_brake(s.ego.vx, s1.ego.vx, p) as u32;
    for v in &s1.others {
        if let Some(u) = s.vehicle(v.id) {
            hard += is_hard_brake(u.phys.vx, v.phys.vx, p) as u32;
        }
    }
    let slow = s1.ego.vx < p.slow_speed || s1.others.iter().any(|v| v.phys.vx < p.slow_speed);
    StepEvents { hard_brakes: hard, slow }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::highway_sim::{ego_driver_model, Vehicle};

    fn scene(ego: PhysicalState, cars: &[(f64, f64, f64)]) -> SceneState {
        let mut s = SceneState::ego_only(ego);
        for (k, &(x, y, vx)) in cars.iter().enumerate() {
            s.others.push(Vehicle {
                id: VehicleId(k as u32),
                phys: PhysicalState::new(x, y, vx, 0.0),
                behavior: ego_driver_model(),
            });
            s.next_id = k as u32 + 1;
        }
        s
    }

    #[test]
    fn free_road_has_ten_actions() {
        let p = SimParams::default();
        let s = scene(PhysicalState::new(0.0, 1.0, 30.0, 0.0), &[]);
        let acts = available_actions(&s, &p);
        assert_eq!(acts.len(), 10);
        assert_eq!(acts[9].accel, -p.nominal_brake);
        assert_eq!(max_safe_accel(&s, &p), f64::INFINITY);
    }

    #[test]
    fn road_edge_prunes_lane_changes() {
        let p = SimParams::default();
        let s = scene(PhysicalState::new(0.0, 3.0, 30.0, 0.0), &[]);
        let acts = available_actions(&s, &p);
        assert!(acts.iter().all(|a| a.lateral != LateralCommand::Left));
        assert_eq!(acts.len(), 7);
        let s = scene(PhysicalState::new(0.0, 0.0, 30.0, 0.0), &[]);
        assert!(available_actions(&s, &p).iter().all(|a| a.lateral != LateralCommand::Right));
    }

    #[test]
    fn mid_change_only_continues() {
        let p = SimParams::default();
        let s = scene(PhysicalState::new(0.0, 1.5, 30.0, 0.67), &[]);
        let acts = available_actions(&s, &p);
        assert_eq!(acts.len(), 4);
        assert!(acts.iter().all(|a| a.lateral == LateralCommand::Keep));
    }

    #[test]
    fn far_leader_does_not_bind() {
        let p = SimParams::default();
        let s = scene(PhysicalState::new(0.0, 1.0, 30.0, 0.0), &[(1000.0, 1.0, 30.0)]);
        assert!(max_safe_accel(&s, &p) >= 2.0);
    }

    #[test]
    fn braking_leader_prunes_acceleration() {
        let p = SimParams::default();
        // Leader just ahead and much slower.
        let s = scene(PhysicalState::new(0.0, 1.0, 30.0, 0.0), &[(40.0, 1.0, 10.0)]);
        let a_max = max_safe_accel(&s, &p);
        assert!(a_max < 0.0);
        let acts = available_actions(&s, &p);
        assert!(acts
            .iter()
            .all(|a| a.accel <= a_max.max(-p.max_brake) || a.lateral != LateralCommand::Keep));
        assert!(acts.iter().all(|a| a.accel <= 0.0));
        let brake = acts.last().unwrap();
        assert_eq!(brake.accel, braking_accel(a_max, &p));
        assert_eq!(brake.accel, a_max.min(-p.nominal_brake).max(-p.max_brake));
    }

    #[test]
    fn reward_cases() {
        let p = SimParams::default();
        let w = RewardWeights { lambda: 1.0 };
        let a = EgoAction {
            accel: 0.0,
            lateral: LateralCommand::Keep,
        };
        let s = scene(PhysicalState::new(0.0, 2.5, 30.0, 0.67), &[(20.0, 0.0, 30.0), (-20.0, 1.0, 30.0)]);
        let mut goal = s.clone();
        goal.ego.y = 3.0;
        goal.odometer = 500.0;
        assert_eq!(reward(&s, &a, &goal, &w, &p), 1.0);

        let mut bad = s.clone();
        bad.others[0].phys.vx = 30.0 - 4.0 * 0.75 - 0.1;
        bad.others[1].phys.vx = 14.0;
        assert_eq!(reward(&s, &a, &bad, &w, &p), -2.0);

        assert_eq!(reward(&s, &a, &s, &w, &p), 0.0);
    }

    #[test]
    fn reward_values_exhaustive() {
        let p = SimParams::default();
        let a = EgoAction {
            accel: 0.0,
            lateral: LateralCommand::Keep,
        };
        for lambda in [0.5, 1.0, 2.0, 4.0, 8.0] {
            let w = RewardWeights { lambda };
            for goal in [false, true] {
                for hard in [false, true] {
                    for slow in [false, true] {
                        let s = scene(PhysicalState::new(0.0, 2.0, 30.0, 0.0), &[(20.0, 0.0, 30.0), (-20.0, 1.0, 15.5)]);
                        let mut s1 = s.clone();
                        if goal {
                            s1.ego.y = 3.0;
                        }
                        if hard {
                            s1.others[0].phys.vx = 20.0;
                        }
                        if slow {
                            s1.others[1].phys.vx = 14.9;
                        }
                        let expected = goal as u8 as f64 - lambda * (hard as u8 as f64 + slow as u8 as f64);
                        assert_eq!(reward(&s, &a, &s1, &w, &p), expected);
                    }
                }
            }
        }
    }

    #[test]
    fn observation_hides_internal_state() {
        let s = scene(PhysicalState::new(0.0, 0.0, 30.0, 0.0), &[(20.0, 0.0, 30.0)]);
        let mut t = s.clone();
        t.others[0].behavior.idm.desired_speed = 20.0;
        assert_eq!(observe(&s), observe(&t));
        assert_eq!(observe(&s).others.len(), 1);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn shrinking_gap_never_grows_action_set(v in 5.0..40.0f64, vl in 0.0..40.0f64, gap in 5.0..120.0f64, shrink in 0.0..1.0f64) {
                let p = SimParams::default();
                let far = scene(PhysicalState::new(0.0, 1.0, v, 0.0), &[(gap + 4.0, 1.0, vl)]);
                let near = scene(PhysicalState::new(0.0, 1.0, v, 0.0), &[(gap * (1.0 - shrink) + 4.0, 1.0, vl)]);
                let n_far = available_actions(&far, &p).len();
                let n_near = available_actions(&near, &p).len();
                prop_assert!(n_near <= n_far);
            }
        }
    }
}
