//! Human driver models: IDM car following, MOBIL lane changing and the
//! triangular acceleration noise process.

use rand::Rng;

/// Intelligent Driver Model parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdmParams {
    /// Desired free-road speed (m/s).
    pub desired_speed: f64,
    /// Desired time headway (s).
    pub time_gap: f64,
    /// Jam distance, the standstill bumper gap (m).
    pub jam_distance: f64,
    /// Maximum acceleration (m/s²).
    pub max_accel: f64,
    /// Comfortable deceleration (m/s²).
    pub comfort_decel: f64,
    /// Acceleration exponent.
    pub exponent: f64,
}

/// MOBIL lane-change parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilParams {
    pub politeness: f64,
    /// Largest deceleration the new follower may be asked to apply (m/s²).
    pub safe_braking: f64,
    /// Incentive needed to change lanes (m/s²).
    pub accel_threshold: f64,
}

/// The internal state of a human driver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriverParams {
    pub idm: IdmParams,
    pub mobil: MobilParams,
}

/// Number of scalar behavior parameters in a [`DriverParams`].
pub const PARAM_COUNT: usize = 9;

/// Parameter names in vector order.
pub const PARAM_NAMES: [&str; PARAM_COUNT] = [
    "desired_speed",
    "time_gap",
    "jam_distance",
    "max_accel",
    "comfort_decel",
    "politeness",
    "safe_braking",
    "accel_threshold",
    "exponent",
];

impl DriverParams {
    pub fn to_array(&self) -> [f64; PARAM_COUNT] {
        [
            self.idm.desired_speed,
            self.idm.time_gap,
            self.idm.jam_distance,
            self.idm.max_accel,
            self.idm.comfort_decel,
            self.mobil.politeness,
            self.mobil.safe_braking,
            self.mobil.accel_threshold,
            self.idm.exponent,
        ]
    }

    pub fn from_array(v: [f64; PARAM_COUNT]) -> Self {
        DriverParams {
            idm: IdmParams {
                desired_speed: v[0],
                time_gap: v[1],
                jam_distance: v[2],
                max_accel: v[3],
                comfort_decel: v[4],
                exponent: v[8],
            },
            mobil: MobilParams {
                politeness: v[5],
                safe_braking: v[6],
                accel_threshold: v[7],
            },
        }
    }

    /// True when every parameter satisfies its physical constraint.
    pub fn is_valid(&self) -> bool {
        let i = &self.idm;
        let m = &self.mobil;
        i.desired_speed > 0.0
            && i.time_gap >= 0.0
            && i.jam_distance >= 0.0
            && i.max_accel > 0.0
            && i.comfort_decel > 0.0
            && i.exponent > 0.0
            && (0.0..=1.0).contains(&m.politeness)
            && m.safe_braking > 0.0
            && m.accel_threshold >= 0.0
    }
}

/// The vehicle ahead, as seen by a follower.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leader {
    /// Bumper-to-bumper gap (m).
    pub gap: f64,
    /// Own speed minus the leader's speed (m/s), positive when closing.
    pub approach_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LongitudinalContext {
    pub speed: f64,
    pub leader: Option<Leader>,
}

impl LongitudinalContext {
    pub fn free(speed: f64) -> Self {
        LongitudinalContext { speed, leader: None }
    }

    pub fn following(speed: f64, gap: f64, approach_rate: f64) -> Self {
        LongitudinalContext {
            speed,
            leader: Some(Leader { gap, approach_rate }),
        }
    }
}

/// Smallest gap the interaction term divides by. Only reachable when a caller
/// feeds an overlapping configuration.
const MIN_GAP: f64 = 1e-3;

/// IDM desired gap `g0 + T v + v Δv / (2 sqrt(a b))`, floored at `g0`.
pub fn desired_gap(p: &IdmParams, speed: f64, approach_rate: f64) -> f64 {
    let raw = p.jam_distance + p.time_gap * speed + speed * approach_rate / (2.0 * (p.max_accel * p.comfort_decel).sqrt());
    raw.max(p.jam_distance)
}

/// IDM acceleration. Without a leader the interaction term vanishes.
pub fn idm_accel(p: &IdmParams, ctx: &LongitudinalContext) -> f64 {
    let free = 1.0 - speed_ratio_term(p, ctx.speed);
    let interaction = match ctx.leader {
        Some(l) => {
            let s = desired_gap(p, ctx.speed, l.approach_rate) / l.gap.max(MIN_GAP);
            s * s
        }
        None => 0.0,
    };
    p.max_accel * (free - interaction)
}

#[inline]
fn speed_ratio_term(p: &IdmParams, speed: f64) -> f64 {
    let r = speed / p.desired_speed;
    if p.exponent == 4.0 {
        let r2 = r * r;
        r2 * r2
    } else {
        r.powf(p.exponent)
    }
}

/// Admissible range for an acceleration perturbation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConstraint {
    pub lower: f64,
    pub upper: f64,
}

impl NoiseConstraint {
    pub const UNCONSTRAINED: NoiseConstraint = NoiseConstraint {
        lower: f64::NEG_INFINITY,
        upper: f64::INFINITY,
    };

    /// Half-widths `(below, above)` of the noise support for a driver with
    /// maximum acceleration `max_accel`.
    pub fn support(&self, max_accel: f64) -> (f64, f64) {
        let half = 0.5 * max_accel;
        let below = (-self.lower).clamp(0.0, half);
        let above = self.upper.clamp(0.0, half);
        (below, above)
    }
}

/// Draws acceleration noise from the triangle on `[-ā/2, ā/2]` with mode 0.
///
/// When the constraint cuts into a side of the triangle, that side is shrunk
/// linearly to fit while keeping its probability mass of one half.
pub fn sample_accel_noise<R: Rng + ?Sized>(p: &IdmParams, rng: &mut R, constraint: NoiseConstraint) -> f64 {
    let (below, above) = constraint.support(p.max_accel);
    let u: f64 = rng.random();
    // Each half is a right triangle whose distance-from-mode has CDF 1 - (1 - t/h)^2.
    let (side, v) = if u < 0.5 { (-below, 2.0 * u) } else { (above, 2.0 * u - 1.0) };
    side * (1.0 - (1.0 - v).sqrt())
}

/// Triangular density of the unconstrained noise, used as a test oracle and
/// by the particle weights.
pub fn accel_noise_pdf(max_accel: f64, w: f64) -> f64 {
    let half = 0.5 * max_accel;
    if w.abs() >= half {
        0.0
    } else {
        (half - w.abs()) / (half * half)
    }
}

/// IDM accelerations of the three cars MOBIL weighs, in one configuration.
/// Cars that do not exist contribute zero.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NeighborhoodAccels {
    pub candidate: f64,
    pub new_follower: f64,
    pub old_follower: f64,
}

/// MOBIL incentive `Δa_c + p (Δa_n + Δa_o)`.
pub fn mobil_incentive(p: &MobilParams, before: &NeighborhoodAccels, after: &NeighborhoodAccels) -> f64 {
    (after.candidate - before.candidate)
        + p.politeness * ((after.new_follower - before.new_follower) + (after.old_follower - before.old_follower))
}

/// MOBIL safety criterion plus the strict incentive test.
pub fn mobil_decision(driver: &DriverParams, before: &NeighborhoodAccels, after: &NeighborhoodAccels) -> bool {
    let m = &driver.mobil;
    after.new_follower >= -m.safe_braking && mobil_incentive(m, before, after) > m.accel_threshold
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn normal() -> IdmParams {
        IdmParams {
            desired_speed: 33.3,
            time_gap: 1.5,
            jam_distance: 2.0,
            max_accel: 1.4,
            comfort_decel: 2.0,
            exponent: 4.0,
        }
    }

    fn aggressive() -> IdmParams {
        IdmParams {
            desired_speed: 38.9,
            time_gap: 1.0,
            jam_distance: 0.0,
            max_accel: 2.0,
            comfort_decel: 3.0,
            exponent: 4.0,
        }
    }

    #[test]
    fn desired_gap_examples() {
        assert_eq!(desired_gap(&normal(), 0.0, 0.0), 2.0);
        assert!((desired_gap(&normal(), 33.3, 0.0) - 51.95).abs() < 1e-9);
        assert!((desired_gap(&aggressive(), 20.0, 0.0) - 20.0).abs() < 1e-9);
    }

    #[test]
    fn desired_gap_floor() {
        // Opening fast drives the raw formula negative.
        assert_eq!(desired_gap(&normal(), 30.0, -20.0), 2.0);
    }

    #[test]
    fn idm_examples() {
        let p = normal();
        assert_eq!(idm_accel(&p, &LongitudinalContext::free(33.3)), 0.0);
        assert!(idm_accel(&p, &LongitudinalContext::following(0.0, 2.0, 0.0)).abs() < 1e-12);
        let a = idm_accel(&p, &LongitudinalContext::following(33.3, 51.95, 0.0));
        assert!((a + 1.4).abs() < 1e-9, "{a}");
    }

    #[test]
    fn noise_respects_constraint() {
        let p = normal();
        let mut rng = rng_from_seed(3);
        let c = NoiseConstraint {
            lower: f64::NEG_INFINITY,
            upper: 0.35,
        };
        for _ in 0..20_000 {
            let w = sample_accel_noise(&p, &mut rng, c);
            assert!((-0.7..=0.35).contains(&w));
        }
    }

    #[test]
    fn noise_mean_is_zero() {
        let p = normal();
        let mut rng = rng_from_seed(11);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let w = sample_accel_noise(&p, &mut rng, NoiseConstraint::UNCONSTRAINED);
            assert!(w.abs() <= 0.7);
            sum += w;
        }
        assert!((sum / n as f64).abs() < 0.01);
    }

    #[test]
    fn noise_histogram_matches_triangle() {
        let mut p = normal();
        p.max_accel = 2.0;
        let mut rng = rng_from_seed(5);
        let n = 200_000;
        let bins = 20;
        let mut counts = vec![0usize; bins];
        for _ in 0..n {
            let w = sample_accel_noise(&p, &mut rng, NoiseConstraint::UNCONSTRAINED);
            let k = (((w + 1.0) / 2.0) * bins as f64).floor() as usize;
            counts[k.min(bins - 1)] += 1;
        }
        let width = 2.0 / bins as f64;
        for (k, &c) in counts.iter().enumerate() {
            let mid = -1.0 + (k as f64 + 0.5) * width;
            let expected = accel_noise_pdf(2.0, mid);
            let empirical = c as f64 / (n as f64 * width);
            assert!((empirical - expected).abs() < 0.03, "bin {k}: {empirical} vs {expected}");
        }
        // peak density 2/ā
        assert!((accel_noise_pdf(2.0, 0.0) - 1.0).abs() < 1e-12);
    }

    /// CDF of the noise with lower and upper half-widths `b` and `a`.
    fn noise_cdf(b: f64, a: f64, w: f64) -> f64 {
        if w <= -b {
            0.0
        } else if w < 0.0 {
            0.5 * (1.0 + w / b).powi(2)
        } else if w < a {
            1.0 - 0.5 * (1.0 - w / a).powi(2)
        } else {
            1.0
        }
    }

    fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        xs.iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn noise_passes_ks_test() {
        let mut p = normal();
        p.max_accel = 2.0;
        let n = 100_000;
        let critical = 1.628 / (n as f64).sqrt();
        let cases = [
            (NoiseConstraint::UNCONSTRAINED, 1.0, 1.0),
            (NoiseConstraint { lower: -0.25, upper: 0.6 }, 0.25, 0.6),
            (NoiseConstraint { lower: -3.0, upper: 0.1 }, 1.0, 0.1),
        ];
        for (k, (c, b, a)) in cases.into_iter().enumerate() {
            let mut rng = rng_from_seed(40 + k as u64);
            let xs: Vec<f64> = (0..n).map(|_| sample_accel_noise(&p, &mut rng, c)).collect();
            assert!(xs.iter().all(|w| *w >= -b && *w <= a));
            let d = ks_statistic(xs, |w| noise_cdf(b, a, w));
            assert!(d < critical, "case {k}: D = {d} >= {critical}");
        }
    }

    fn driver(p: f64, thr: f64) -> DriverParams {
        DriverParams {
            idm: normal(),
            mobil: MobilParams {
                politeness: p,
                safe_braking: 2.0,
                accel_threshold: thr,
            },
        }
    }

    #[test]
    fn mobil_examples() {
        let before = NeighborhoodAccels::default();
        let unsafe_after = NeighborhoodAccels {
            candidate: 5.0,
            new_follower: -2.1,
            old_follower: 0.0,
        };
        assert!(!mobil_decision(&driver(0.0, 0.0), &before, &unsafe_after));

        let agg = DriverParams {
            mobil: MobilParams {
                politeness: 0.0,
                safe_braking: 3.0,
                accel_threshold: 0.0,
            },
            ..driver(0.0, 0.0)
        };
        let before = NeighborhoodAccels {
            candidate: 0.0,
            new_follower: 2.0,
            old_follower: 2.0,
        };
        let after = NeighborhoodAccels {
            candidate: 0.3,
            new_follower: -3.0,
            old_follower: -3.0,
        };
        assert!(mobil_decision(&agg, &before, &after));

        let timid = DriverParams {
            mobil: MobilParams {
                politeness: 1.0,
                safe_braking: 1.0,
                accel_threshold: 0.2,
            },
            ..driver(1.0, 0.2)
        };
        let before = NeighborhoodAccels::default();
        let after = NeighborhoodAccels {
            candidate: 0.3,
            new_follower: -0.3,
            old_follower: -0.3,
        };
        assert!(!mobil_decision(&timid, &before, &after));
    }

    #[test]
    fn zero_incentive_never_changes_with_positive_threshold() {
        let same = NeighborhoodAccels {
            candidate: 0.4,
            new_follower: -0.2,
            old_follower: 0.1,
        };
        assert!(!mobil_decision(&driver(0.5, 0.1), &same, &same));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn desired_gap_monotone(v in 0.0..40.0f64, dv in -10.0..10.0f64, dv2 in 0.0..5.0f64, w in 0.0..5.0f64) {
                let p = normal();
                prop_assert!(desired_gap(&p, v, dv + dv2) >= desired_gap(&p, v, dv) - 1e-12);
                if dv >= 0.0 {
                    prop_assert!(desired_gap(&p, v + w, dv) >= desired_gap(&p, v, dv) - 1e-12);
                }
            }

            #[test]
            fn idm_bounded_by_max_accel(v in 0.0..45.0f64, g in 0.1..200.0f64, dv in -20.0..20.0f64) {
                let p = normal();
                prop_assert!(idm_accel(&p, &LongitudinalContext::following(v, g, dv)) <= p.max_accel);
                prop_assert!(idm_accel(&p, &LongitudinalContext::free(v)) <= p.max_accel);
            }

            #[test]
            fn mobil_shift_invariant(
                c0 in -3.0..3.0f64, n0 in -3.0..3.0f64, o0 in -3.0..3.0f64,
                c1 in -3.0..3.0f64, n1 in -1.0..3.0f64, o1 in -3.0..3.0f64,
                shift in -0.5..0.5f64, pol in 0.0..1.0f64,
            ) {
                // Shift only the incentive terms; the safety gate is kept clear of the bound.
                let d = DriverParams { mobil: MobilParams { politeness: pol, safe_braking: 2.0, accel_threshold: 0.1 }, ..driver(0.0, 0.0) };
                let before = NeighborhoodAccels { candidate: c0, new_follower: n0, old_follower: o0 };
                let after = NeighborhoodAccels { candidate: c1, new_follower: n1, old_follower: o1 };
                let sb = NeighborhoodAccels { candidate: c0 + shift, new_follower: n0 + shift, old_follower: o0 + shift };
                let sa = NeighborhoodAccels { candidate: c1 + shift, new_follower: n1 + shift, old_follower: o1 + shift };
                let lhs = mobil_incentive(&d.mobil, &before, &after);
                let rhs = mobil_incentive(&d.mobil, &sb, &sa);
                prop_assert!((lhs - rhs).abs() < 1e-9);
            }

            #[test]
            fn noise_within_support(seed in 0u64..1000, lo in -2.0..0.5f64, hi in -0.5..2.0f64) {
                let p = normal();
                let mut rng = rng_from_seed(seed);
                let c = NoiseConstraint { lower: lo, upper: hi };
                let (below, above) = c.support(p.max_accel);
                for _ in 0..50 {
                    let w = sample_accel_noise(&p, &mut rng, c);
                    prop_assert!(w >= -below - 1e-12 && w <= above + 1e-12);
                }
            }
        }
    }
}
