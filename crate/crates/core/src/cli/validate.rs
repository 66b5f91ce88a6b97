//! The `validate` subcommand: closed-form model checks and a crash fuzz.

use std::fmt::Write as _;

use crate::behavior_priors::{ArchetypeTable, BehaviorDistribution, Scenario};
use crate::experiments::{crash_fuzz, FuzzReport};
use crate::highway_sim::{max_safe_accel_behind, PhysicalState, SimParams};
use crate::traffic_models::{desired_gap, idm_accel, LongitudinalContext};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.to_string(),
        passed,
        detail,
    }
}

/// Model identities that hold exactly (up to rounding) for any valid setup.
pub fn model_checks(p: &SimParams) -> Vec<Check> {
    let n = ArchetypeTable::default().normal().idm;
    let mut out = Vec::new();

    let a0 = idm_accel(&n, &LongitudinalContext::free(0.0));
    out.push(check(
        "idm_standstill_free_road",
        (a0 - n.max_accel).abs() < 1e-12,
        format!("a = {a0}, expected {}", n.max_accel),
    ));

    let a = idm_accel(&n, &LongitudinalContext::free(n.desired_speed));
    out.push(check("idm_free_road_at_desired_speed", a.abs() < 1e-12, format!("a = {a}")));

    let v = 20.0;
    let s_star = desired_gap(&n, v, 0.0);
    let expected = n.jam_distance + n.time_gap * v;
    out.push(check(
        "idm_desired_gap_at_zero_approach",
        (s_star - expected).abs() < 1e-12,
        format!("s* = {s_star}, expected {expected}"),
    ));

    // A car following at exactly the desired gap with no speed difference
    // decelerates by a_max (v/v0)^δ.
    let a = idm_accel(&n, &LongitudinalContext::following(v, s_star, 0.0));
    let expected = -n.max_accel * (v / n.desired_speed).powf(n.exponent);
    out.push(check(
        "idm_at_desired_gap",
        (a - expected).abs() < 1e-9,
        format!("a = {a}, expected {expected}"),
    ));

    // Stopped leader exactly one step of travel beyond the stopping distance:
    // no positive acceleration is safe.
    let vf = 25.0;
    let gap = vf * vf / (2.0 * p.max_brake) + vf * p.dt;
    let follower = PhysicalState::new(0.0, 0.0, vf, 0.0);
    let leader = PhysicalState::new(gap + p.vehicle_length + p.stop_margin, 0.0, 0.0, 0.0);
    let a = max_safe_accel_behind(&follower, &leader, p);
    out.push(check("safe_accel_behind_stopped_leader", a <= 1e-9, format!("a_max = {a}")));

    // Two cars at the same speed far apart may use any comfortable acceleration.
    let leader = PhysicalState::new(500.0, 0.0, vf, 0.0);
    let a = max_safe_accel_behind(&follower, &leader, p);
    out.push(check("safe_accel_large_gap", a > 8.0, format!("a_max = {a}")));
    out
}

/// Crash fuzz over the three correlation scenarios.
pub fn fuzz_checks(p: &SimParams, episodes: usize, base_seed: u64, max_steps: usize) -> Vec<(Scenario, FuzzReport)> {
    [Scenario::Uncorrelated, Scenario::PartiallyCorrelated, Scenario::Correlated]
        .into_iter()
        .map(|s| (s, crash_fuzz(&BehaviorDistribution::scenario(s), p, episodes, base_seed, max_steps)))
        .collect()
}

/// Runs every check; returns the report and whether all passed.
pub fn run_validation(p: &SimParams, fuzz_episodes: usize, base_seed: u64, max_steps: usize) -> (String, bool) {
    let mut out = String::new();
    let mut ok = true;
    for c in model_checks(p) {
        ok &= c.passed;
        let _ = writeln!(out, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    for (s, r) in fuzz_checks(p, fuzz_episodes, base_seed, max_steps) {
        ok &= r.is_clean();
        let _ = writeln!(
            out,
            "{} fuzz_{}: episodes {} steps {} overlaps {} empty_action_sets {} window_violations {} min_gap {:.3}",
            if r.is_clean() { "PASS" } else { "FAIL" },
            s.name(),
            r.episodes,
            r.steps,
            r.overlaps,
            r.empty_action_sets,
            r.window_violations,
            r.min_gap
        );
    }
    (out, ok)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_checks_pass_for_defaults() {
        for c in model_checks(&SimParams::default()) {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn small_fuzz_is_clean() {
        let (report, ok) = run_validation(&SimParams::default(), 5, 0, 100);
        assert!(ok, "{report}");
        assert_eq!(report.lines().count(), 9);
    }
}
