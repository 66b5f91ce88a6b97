//! Population distributions over driver internal states.
//!
//! Marginals are uniform between the timid and aggressive archetypes; their
//! dependence is set by an equicorrelated Gaussian copula. Rank 1 is the
//! aggressive extreme for every parameter.

use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::rng::SimRng;
use crate::traffic_models::{DriverParams, PARAM_COUNT};

#[derive(Debug, Error, PartialEq)]
pub enum PriorError {
    #[error("correlation {0} outside [0, 1]")]
    Correlation(f64),
    #[error("expansion factor {0} must be positive")]
    Expansion(f64),
}

/// One parameter's archetype values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Archetype {
    pub timid: f64,
    pub normal: f64,
    pub aggressive: f64,
}

impl Archetype {
    const fn new(timid: f64, normal: f64, aggressive: f64) -> Self {
        Archetype { timid, normal, aggressive }
    }

    pub fn span(&self) -> f64 {
        self.aggressive - self.timid
    }

    pub fn is_degenerate(&self) -> bool {
        self.span() == 0.0
    }

    /// Piecewise-linear map from rank through timid (0), normal (0.5) and
    /// aggressive (1).
    pub fn value_at(&self, rank: f64) -> f64 {
        piecewise(self.timid, self.normal, self.aggressive, rank)
    }

    /// Inverse of [`Archetype::value_at`].
    pub fn rank_of(&self, x: f64) -> f64 {
        piecewise_inverse(self.timid, self.normal, self.aggressive, x)
    }
}

fn piecewise(v0: f64, vm: f64, v1: f64, rank: f64) -> f64 {
    if rank <= 0.5 {
        v0 + 2.0 * rank * (vm - v0)
    } else {
        vm + (2.0 * rank - 1.0) * (v1 - vm)
    }
}

fn piecewise_inverse(v0: f64, vm: f64, v1: f64, x: f64) -> f64 {
    let lower_half = if v1 >= v0 { x <= vm } else { x >= vm };
    if lower_half {
        if vm == v0 {
            0.5
        } else {
            0.5 * (x - v0) / (vm - v0)
        }
    } else if v1 == vm {
        0.5
    } else {
        0.5 + 0.5 * (x - vm) / (v1 - vm)
    }
}

/// Archetype values for every behavior parameter, in [`DriverParams::to_array`] order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArchetypeTable {
    pub params: [Archetype; PARAM_COUNT],
}

impl Default for ArchetypeTable {
    fn default() -> Self {
        ArchetypeTable {
            params: [
                Archetype::new(27.8, 33.3, 38.9),
                Archetype::new(2.0, 1.5, 1.0),
                Archetype::new(4.0, 2.0, 0.0),
                Archetype::new(0.8, 1.4, 2.0),
                Archetype::new(1.0, 2.0, 3.0),
                Archetype::new(1.0, 0.5, 0.0),
                Archetype::new(1.0, 2.0, 3.0),
                Archetype::new(0.2, 0.1, 0.0),
                // IDM exponent, held fixed.
                Archetype::new(4.0, 4.0, 4.0),
            ],
        }
    }
}

impl ArchetypeTable {
    /// Largest distance between a normal value and the midpoint of its
    /// timid and aggressive values.
    pub fn midpoint_error(&self) -> f64 {
        self.params
            .iter()
            .map(|a| (a.normal - 0.5 * (a.timid + a.aggressive)).abs())
            .fold(0.0, f64::max)
    }

    fn column(&self, pick: impl Fn(&Archetype) -> f64) -> DriverParams {
        let mut v = [0.0; PARAM_COUNT];
        for (out, a) in v.iter_mut().zip(&self.params) {
            *out = pick(a);
        }
        DriverParams::from_array(v)
    }

    pub fn timid(&self) -> DriverParams {
        self.column(|a| a.timid)
    }

    pub fn normal(&self) -> DriverParams {
        self.column(|a| a.normal)
    }

    pub fn aggressive(&self) -> DriverParams {
        self.column(|a| a.aggressive)
    }

    /// Fully correlated driver with aggressiveness `rank`.
    pub fn at_aggressiveness(&self, rank: f64) -> DriverParams {
        self.column(|a| a.value_at(rank))
    }
}

/// Scalar aggressiveness of a parameter vector: the mean rank over the
/// non-degenerate parameters of `table`.
pub fn aggressiveness_of(params: &DriverParams, table: &ArchetypeTable) -> f64 {
    let v = params.to_array();
    let mut sum = 0.0;
    let mut n = 0usize;
    for (x, a) in v.iter().zip(&table.params) {
        if !a.is_degenerate() {
            sum += a.rank_of(*x);
            n += 1;
        }
    }
    if n == 0 {
        0.5
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CopulaSpec {
    Independent,
    FullyCorrelated,
    Gaussian(f64),
}

impl CopulaSpec {
    pub fn from_rho(rho: f64) -> Result<Self, PriorError> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(PriorError::Correlation(rho));
        }
        Ok(if rho == 0.0 {
            CopulaSpec::Independent
        } else if rho == 1.0 {
            CopulaSpec::FullyCorrelated
        } else {
            CopulaSpec::Gaussian(rho)
        })
    }

    pub fn rho(&self) -> f64 {
        match *self {
            CopulaSpec::Independent => 0.0,
            CopulaSpec::FullyCorrelated => 1.0,
            CopulaSpec::Gaussian(r) => r,
        }
    }
}

/// The three correlation scenarios of the study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Uncorrelated,
    Correlated,
    PartiallyCorrelated,
}

impl Scenario {
    pub fn rho(self) -> f64 {
        match self {
            Scenario::Uncorrelated => 0.0,
            Scenario::Correlated => 1.0,
            Scenario::PartiallyCorrelated => 0.75,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Uncorrelated => "uncorrelated",
            Scenario::Correlated => "correlated",
            Scenario::PartiallyCorrelated => "partially_correlated",
        }
    }

    pub fn from_index(i: u8) -> Option<Self> {
        match i {
            1 => Some(Scenario::Uncorrelated),
            2 => Some(Scenario::Correlated),
            3 => Some(Scenario::PartiallyCorrelated),
            _ => None,
        }
    }
}

#[inline]
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn latent_normals<R: Rng + ?Sized>(rho: f64, out: &mut [f64], rng: &mut R) {
    if rho >= 1.0 {
        let z: f64 = rng.sample(StandardNormal);
        out.fill(z);
    } else if rho <= 0.0 {
        for x in out.iter_mut() {
            *x = rng.sample(StandardNormal);
        }
    } else {
        // Equicorrelation: z_i = sqrt(ρ) z_0 + sqrt(1-ρ) ε_i.
        let shared: f64 = rng.sample(StandardNormal);
        let (a, b) = (rho.sqrt(), (1.0 - rho).sqrt());
        for x in out.iter_mut() {
            let e: f64 = rng.sample(StandardNormal);
            *x = a * shared + b * e;
        }
    }
}

/// Latent Gaussian draws with unit variance and pairwise correlation `rho`.
pub fn gaussian_copula_latents<R: Rng + ?Sized>(rho: f64, dim: usize, rng: &mut R) -> Result<Vec<f64>, PriorError> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(PriorError::Correlation(rho));
    }
    let mut z = vec![0.0; dim];
    latent_normals(rho, &mut z, rng);
    Ok(z)
}

/// Uniform ranks from an equicorrelated Gaussian copula.
pub fn gaussian_copula_sample<R: Rng + ?Sized>(rho: f64, dim: usize, rng: &mut R) -> Result<Vec<f64>, PriorError> {
    let mut z = gaussian_copula_latents(rho, dim, rng)?;
    for x in z.iter_mut() {
        *x = std_normal_cdf(*x);
    }
    Ok(z)
}

/// Physical feasibility bounds applied after domain expansion.
pub const PHYSICAL_BOUNDS: [(f64, f64); PARAM_COUNT] = [
    (1e-3, f64::INFINITY),
    (0.0, f64::INFINITY),
    (0.0, f64::INFINITY),
    (1e-3, f64::INFINITY),
    (1e-3, f64::INFINITY),
    (0.0, 1.0),
    (1e-3, f64::INFINITY),
    (0.0, f64::INFINITY),
    (1e-3, f64::INFINITY),
];

/// Marginal range of one parameter after expansion and truncation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalRange {
    /// Value at rank 0 (timid end, possibly expanded).
    pub at_rank0: f64,
    /// Value at rank 0.5.
    pub at_mid: f64,
    /// Value at rank 1 (aggressive end, possibly expanded).
    pub at_rank1: f64,
    /// Feasible ranks `[lo, hi]` after truncation.
    pub rank_lo: f64,
    pub rank_hi: f64,
}

impl MarginalRange {
    fn value(&self, rank: f64) -> f64 {
        piecewise(self.at_rank0, self.at_mid, self.at_rank1, rank)
    }

    /// Truncated value interval `(min, max)`.
    pub fn bounds(&self) -> (f64, f64) {
        let a = self.value(self.rank_lo);
        let b = self.value(self.rank_hi);
        (a.min(b), a.max(b))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorDistribution {
    pub table: ArchetypeTable,
    pub copula: CopulaSpec,
    pub expansion: f64,
    ranges: [MarginalRange; PARAM_COUNT],
}

impl BehaviorDistribution {
    pub fn new(table: ArchetypeTable, copula: CopulaSpec) -> Self {
        let mut d = BehaviorDistribution {
            table,
            copula,
            expansion: 1.0,
            ranges: [MarginalRange {
                at_rank0: 0.0,
                at_mid: 0.0,
                at_rank1: 0.0,
                rank_lo: 0.0,
                rank_hi: 1.0,
            }; PARAM_COUNT],
        };
        d.recompute_ranges();
        d
    }

    pub fn scenario(s: Scenario) -> Self {
        Self::with_rho(s.rho()).expect("scenario correlations are valid")
    }

    pub fn with_rho(rho: f64) -> Result<Self, PriorError> {
        Ok(Self::new(ArchetypeTable::default(), CopulaSpec::from_rho(rho)?))
    }

    pub fn ranges(&self) -> &[MarginalRange; PARAM_COUNT] {
        &self.ranges
    }

    fn recompute_ranges(&mut self) {
        for (i, a) in self.table.params.iter().enumerate() {
            let f = self.expansion;
            let at_rank0 = a.normal - (a.normal - a.timid) * f;
            let at_rank1 = a.normal + (a.aggressive - a.normal) * f;
            let (lo, hi) = PHYSICAL_BOUNDS[i];
            let (rank_lo, rank_hi) = if a.is_degenerate() {
                (0.0, 1.0)
            } else {
                let r1 = piecewise_inverse(at_rank0, a.normal, at_rank1, lo.max(at_rank0.min(at_rank1)));
                let r2 = piecewise_inverse(at_rank0, a.normal, at_rank1, hi.min(at_rank0.max(at_rank1)));
                let (a, b) = if r1 < r2 { (r1, r2) } else { (r2, r1) };
                (a.max(0.0), b.min(1.0))
            };
            self.ranges[i] = MarginalRange {
                at_rank0,
                at_mid: a.normal,
                at_rank1,
                rank_lo,
                rank_hi,
            };
        }
    }

    /// Maps copula ranks to a parameter vector, resampling any rank that
    /// lands in a truncated region uniformly within the feasible ranks.
    pub fn params_from_ranks<R: Rng + ?Sized>(&self, ranks: &[f64; PARAM_COUNT], rng: &mut R) -> DriverParams {
        let mut v = [0.0; PARAM_COUNT];
        for i in 0..PARAM_COUNT {
            let r = &self.ranges[i];
            let mut u = ranks[i];
            if u < r.rank_lo || u > r.rank_hi {
                u = r.rank_lo + rng.random::<f64>() * (r.rank_hi - r.rank_lo);
            }
            v[i] = r.value(u);
        }
        DriverParams::from_array(v)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DriverParams {
        let mut z = [0.0; PARAM_COUNT];
        latent_normals(self.copula.rho(), &mut z, rng);
        let mut ranks = [0.0; PARAM_COUNT];
        for (u, x) in ranks.iter_mut().zip(&z) {
            *u = std_normal_cdf(*x);
        }
        self.params_from_ranks(&ranks, rng)
    }

    /// Scales every half-range about the normal value by `factor`, then
    /// truncates at the physical bounds.
    pub fn expand_domain(&self, factor: f64) -> Result<Self, PriorError> {
        if factor <= 0.0 || !factor.is_finite() {
            return Err(PriorError::Expansion(factor));
        }
        let mut d = self.clone();
        d.expansion = factor;
        d.recompute_ranges();
        Ok(d)
    }
}

/// Anything that can hand out driver parameters for a newly spawned car.
pub trait DriverSampler {
    fn sample_driver(&self, rng: &mut SimRng) -> DriverParams;
}

impl DriverSampler for BehaviorDistribution {
    fn sample_driver(&self, rng: &mut SimRng) -> DriverParams {
        self.sample(rng)
    }
}

/// A point mass: every driver gets these parameters.
impl DriverSampler for DriverParams {
    fn sample_driver(&self, _rng: &mut SimRng) -> DriverParams {
        *self
    }
}

pub fn sample_driver(dist: &BehaviorDistribution, rng: &mut SimRng) -> DriverParams {
    dist.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn table_midpoints() {
        let t = ArchetypeTable::default();
        // Only the desired speed sits off the midpoint, by 0.05 m/s.
        assert!((t.midpoint_error() - 0.05).abs() < 1e-9);
        let mut fixed = t;
        fixed.params[0].normal = 33.35;
        assert!(fixed.midpoint_error() < 1e-9);
    }

    #[test]
    fn rank_half_is_normal_and_one_is_aggressive() {
        let t = ArchetypeTable::default();
        let d = BehaviorDistribution::scenario(Scenario::Correlated);
        let mut rng = rng_from_seed(0);
        let half = d.params_from_ranks(&[0.5; PARAM_COUNT], &mut rng).to_array();
        for (x, a) in half.iter().zip(&t.params) {
            assert!((x - a.normal).abs() < 1e-12);
        }
        let one = d.params_from_ranks(&[1.0; PARAM_COUNT], &mut rng);
        let expected = [38.9, 1.0, 0.0, 2.0, 3.0, 0.0, 3.0, 0.0, 4.0];
        for (x, e) in one.to_array().iter().zip(expected) {
            assert!((x - e).abs() < 1e-12, "{x} vs {e}");
        }
    }

    fn ks_uniform(mut xs: Vec<f64>) -> f64 {
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        xs.iter()
            .enumerate()
            .map(|(i, &x)| (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs()))
            .fold(0.0, f64::max)
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn copula_marginals_are_uniform() {
        let n = 100_000;
        let critical = 1.628 / (n as f64).sqrt();
        for (k, rho) in [0.0, 0.75].into_iter().enumerate() {
            let mut rng = rng_from_seed(60 + k as u64);
            let draws: Vec<Vec<f64>> = (0..n).map(|_| gaussian_copula_sample(rho, 3, &mut rng).unwrap()).collect();
            for dim in 0..3 {
                let d = ks_uniform(draws.iter().map(|u| u[dim]).collect());
                assert!(d < critical, "rho {rho} dim {dim}: D = {d}");
            }
        }
    }

    #[test]
    fn copula_correlations() {
        let n = 100_000;
        for (k, rho) in [0.0, 0.4, 0.75].into_iter().enumerate() {
            let mut rng = rng_from_seed(70 + k as u64);
            let z: Vec<Vec<f64>> = (0..n).map(|_| gaussian_copula_latents(rho, 2, &mut rng).unwrap()).collect();
            let (z0, z1): (Vec<f64>, Vec<f64>) = z.iter().map(|v| (v[0], v[1])).unzip();
            let r = pearson(&z0, &z1);
            assert!((r - rho).abs() < 0.01, "latent rho {rho}: {r}");
            let (u0, u1): (Vec<f64>, Vec<f64>) = z.iter().map(|v| (std_normal_cdf(v[0]), std_normal_cdf(v[1]))).unzip();
            // Rank correlation of a Gaussian copula.
            let expected = 6.0 / std::f64::consts::PI * (rho / 2.0).asin();
            let r = pearson(&u0, &u1);
            assert!((r - expected).abs() < 0.01, "rank rho {rho}: {r} vs {expected}");
        }
    }

    #[test]
    fn copula_extremes() {
        let mut rng = rng_from_seed(1);
        let u = gaussian_copula_sample(1.0, 9, &mut rng).unwrap();
        assert!(u.iter().all(|&x| x == u[0]));
        assert_eq!(gaussian_copula_sample(1.5, 2, &mut rng), Err(PriorError::Correlation(1.5)));
        assert!(gaussian_copula_sample(-0.1, 2, &mut rng).is_err());
    }

    #[test]
    fn expansion_examples() {
        let d = BehaviorDistribution::scenario(Scenario::Uncorrelated);
        let e = d.expand_domain(2.0).unwrap();
        let (lo, hi) = e.ranges()[1].bounds();
        assert!((lo - 0.5).abs() < 1e-12 && (hi - 2.5).abs() < 1e-12);
        let (lo, hi) = e.ranges()[2].bounds();
        assert!((lo - 0.0).abs() < 1e-12 && (hi - 6.0).abs() < 1e-12);
        let (lo, hi) = e.ranges()[5].bounds();
        assert!((lo - 0.0).abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);
        assert_eq!(d.expand_domain(0.0), Err(PriorError::Expansion(0.0)));
        assert!(d.expand_domain(-1.0).is_err());

        let same = d.expand_domain(1.0).unwrap();
        let (mut r1, mut r2) = (rng_from_seed(9), rng_from_seed(9));
        for _ in 0..200 {
            assert_eq!(same.sample(&mut r1), d.sample(&mut r2));
        }
    }

    #[test]
    fn expanded_samples_are_feasible() {
        let d = BehaviorDistribution::scenario(Scenario::PartiallyCorrelated)
            .expand_domain(2.0)
            .unwrap();
        let mut rng = rng_from_seed(2);
        for _ in 0..5000 {
            let p = d.sample(&mut rng);
            assert!(p.is_valid(), "{p:?}");
            assert!(p.idm.jam_distance <= 6.0 + 1e-9);
        }
    }

    #[test]
    fn aggressiveness_examples() {
        let t = ArchetypeTable::default();
        assert!((aggressiveness_of(&t.normal(), &t) - 0.5).abs() < 1e-12);
        assert!((aggressiveness_of(&t.aggressive(), &t) - 1.0).abs() < 1e-12);
        assert!(aggressiveness_of(&t.timid(), &t).abs() < 1e-12);

        // With all nine parameters free: five timid, four aggressive.
        let mut nine = t;
        nine.params[8] = Archetype::new(3.0, 4.0, 5.0);
        let mut v = nine.timid().to_array();
        let a = nine.aggressive().to_array();
        for i in [1, 3, 5, 7] {
            v[i] = a[i];
        }
        let mixed = DriverParams::from_array(v);
        assert!((aggressiveness_of(&mixed, &nine) - 4.0 / 9.0).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn aggressiveness_round_trip(r in 0.0..=1.0f64) {
                let d = BehaviorDistribution::scenario(Scenario::Correlated);
                let mut rng = rng_from_seed(0);
                let p = d.params_from_ranks(&[r; PARAM_COUNT], &mut rng);
                prop_assert!((aggressiveness_of(&p, &d.table) - r).abs() < 1e-12);
            }
        }
    }
}
