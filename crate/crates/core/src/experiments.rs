//! Episodes, metrics and the parameter sweeps.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::behavior_priors::{aggressiveness_of, BehaviorDistribution, PriorError};
use crate::belief::{initialize_belief, update_belief, FilterParams, FilterVariant};
use crate::highway_sim::{
    generate_initial_scene, is_terminal, step_scene, step_scene_unchecked, SceneState, SimParams, TerminationStatus, VehicleId,
};
use crate::lanechange_pomdp::{available_actions, observe, reward, step_events, EgoAction, RewardWeights};
use crate::planners::{make_policy, rollout_action, LaneChangePolicy, PlannerKind, PlannerParams, PolicyDeps};
use crate::rng::{stream_rng, SimRng, Stream};

#[derive(Debug, Error, PartialEq)]
pub enum ExperimentError {
    #[error("confidence must lie strictly between 0 and 1, got {0}")]
    Confidence(f64),
    #[error("sample size must be at least 1")]
    EmptySample,
    #[error(transparent)]
    Prior(#[from] PriorError),
}

/// Two-sided Hoeffding half-width for a mean of `n` values in `[0, 1]`.
pub fn hoeffding_interval(n: usize, confidence: f64) -> Result<f64, ExperimentError> {
    if n == 0 {
        return Err(ExperimentError::EmptySample);
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(ExperimentError::Confidence(confidence));
    }
    Ok(((2.0 / (1.0 - confidence)).ln() / (2.0 * n as f64)).sqrt())
}

/// Something that drives the ego vehicle for a whole episode.
pub trait EpisodePolicy {
    fn begin(&mut self, world: &SceneState, rng: &mut SimRng);
    fn act(&mut self, world: &SceneState, rng: &mut SimRng) -> EgoAction;
    fn update(&mut self, action: &EgoAction, world: &SceneState, rng: &mut SimRng);
}

impl EpisodePolicy for LaneChangePolicy {
    fn begin(&mut self, world: &SceneState, rng: &mut SimRng) {
        LaneChangePolicy::begin(self, world, rng)
    }

    fn act(&mut self, world: &SceneState, rng: &mut SimRng) -> EgoAction {
        LaneChangePolicy::act(self, world, rng).action
    }

    fn update(&mut self, action: &EgoAction, world: &SceneState, rng: &mut SimRng) {
        LaneChangePolicy::update(self, action, world, rng)
    }
}

/// Non-planning agent that always applies the rollout action.
pub struct KeepLanePolicy {
    pub sim: SimParams,
}

impl EpisodePolicy for KeepLanePolicy {
    fn begin(&mut self, _world: &SceneState, _rng: &mut SimRng) {}

    fn act(&mut self, world: &SceneState, _rng: &mut SimRng) -> EgoAction {
        rollout_action(world, &self.sim)
    }

    fn update(&mut self, _action: &EgoAction, _world: &SceneState, _rng: &mut SimRng) {}
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeConfig {
    pub sim: SimParams,
    pub planner: PlannerParams,
    pub reward: RewardWeights,
    pub filter: FilterParams,
    /// Episodes still running after this many steps count as failures.
    pub max_steps: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            sim: SimParams::default(),
            planner: PlannerParams::default(),
            reward: RewardWeights { lambda: 1.0 },
            filter: FilterParams::default(),
            max_steps: 400,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeEnd {
    Success,
    DistanceExceeded,
    StepLimit,
}

impl EpisodeEnd {
    pub fn as_str(self) -> &'static str {
        match self {
            EpisodeEnd::Success => "success",
            EpisodeEnd::DistanceExceeded => "distance_exceeded",
            EpisodeEnd::StepLimit => "step_limit",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub seed: u64,
    pub success: bool,
    /// Any hard brake or slow car, ego included, at any step.
    pub unsafe_event: bool,
    pub hard_brakes: u32,
    pub distance: f64,
    pub steps: usize,
    pub end: EpisodeEnd,
    /// Undiscounted sum of rewards.
    pub total_reward: f64,
}

impl EpisodeResult {
    pub fn safe_and_successful(&self) -> bool {
        self.success && !self.unsafe_event
    }
}

/// One row of an episode trace: the ego vehicle or one other car at a step.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub vehicle: Option<u32>,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub action: Option<EgoAction>,
    pub reward: f64,
    pub hard_brakes: u32,
    pub slow: bool,
}

fn trace_scene(rows: &mut Vec<TraceRow>, step: usize, s: &SceneState, action: Option<EgoAction>, r: f64, hard: u32, slow: bool) {
    rows.push(TraceRow {
        step,
        vehicle: None,
        x: s.ego.x,
        y: s.ego.y,
        vx: s.ego.vx,
        vy: s.ego.vy,
        action,
        reward: r,
        hard_brakes: hard,
        slow,
    });
    for v in &s.others {
        rows.push(TraceRow {
            step,
            vehicle: Some(v.id.0),
            x: v.phys.x,
            y: v.phys.y,
            vx: v.phys.vx,
            vy: v.phys.vy,
            action: None,
            reward: r,
            hard_brakes: hard,
            slow,
        });
    }
}

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from("step,vehicle,x,y,vx,vy,accel_cmd,lateral_cmd,reward,hard_brakes,slow\n");
    for r in rows {
        let veh = r.vehicle.map_or_else(|| "ego".to_string(), |i| i.to_string());
        let (acc, lat) = match r.action {
            Some(a) => (a.accel.to_string(), a.lateral.as_str().to_string()),
            None => (String::new(), String::new()),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.step, veh, r.x, r.y, r.vx, r.vy, acc, lat, r.reward, r.hard_brakes, r.slow as u8
        );
    }
    out
}

/// Runs one episode against a world whose internal states come from
/// `world_dist`. `trace`, when given, receives a row per vehicle per step.
pub fn run_episode_with(
    policy: &mut dyn EpisodePolicy,
    world_dist: &BehaviorDistribution,
    cfg: &EpisodeConfig,
    seed: u64,
    mut trace: Option<&mut Vec<TraceRow>>,
) -> EpisodeResult {
    let p = &cfg.sim;
    let mut init_rng = stream_rng(seed, Stream::InitialScene);
    let mut world_rng = stream_rng(seed, Stream::World);
    let mut planner_rng = stream_rng(seed, Stream::Planner);
    let mut filter_rng = stream_rng(seed, Stream::Filter);

    let mut s = generate_initial_scene(world_dist, p, &mut init_rng);
    policy.begin(&s, &mut filter_rng);
    if let Some(t) = trace.as_deref_mut() {
        trace_scene(t, 0, &s, None, 0.0, 0, false);
    }

    let mut steps = 0;
    let mut hard = 0u32;
    let mut unsafe_event = false;
    let mut total_reward = 0.0;
    let mut status = is_terminal(&s, p);
    while !status.is_terminal() && steps < cfg.max_steps {
        let a = policy.act(&s, &mut planner_rng);
        let s1 = match step_scene(&s, &a, world_dist, p, &mut world_rng) {
            Ok(s1) => s1,
            Err(e) => panic!("planner contract violation at step {steps} of seed {seed}: {e}"),
        };
        let ev = step_events(&s, &s1, p);
        let r = reward(&s, &a, &s1, &cfg.reward, p);
        hard += ev.hard_brakes;
        unsafe_event |= ev.is_unsafe();
        total_reward += r;
        steps += 1;
        if let Some(t) = trace.as_deref_mut() {
            trace_scene(t, steps, &s1, Some(a), r, ev.hard_brakes, ev.slow);
        }
        policy.update(&a, &s1, &mut filter_rng);
        s = s1;
        status = is_terminal(&s, p);
    }
    let end = match status {
        TerminationStatus::Success => EpisodeEnd::Success,
        TerminationStatus::DistanceExceeded => EpisodeEnd::DistanceExceeded,
        TerminationStatus::Ongoing => EpisodeEnd::StepLimit,
    };
    EpisodeResult {
        seed,
        success: end == EpisodeEnd::Success,
        unsafe_event,
        hard_brakes: hard,
        distance: s.odometer,
        steps,
        end,
        total_reward,
    }
}

/// Builds the policy for `kind` and runs one episode. The omniscient planner
/// plans with the world distribution; every other planner with `plan_dist`.
pub fn run_episode(
    kind: PlannerKind,
    plan_dist: &BehaviorDistribution,
    world_dist: &BehaviorDistribution,
    cfg: &EpisodeConfig,
    seed: u64,
) -> EpisodeResult {
    let mut policy = build_policy(kind, plan_dist, world_dist, cfg);
    run_episode_with(&mut policy, world_dist, cfg, seed, None)
}

pub fn build_policy(
    kind: PlannerKind,
    plan_dist: &BehaviorDistribution,
    world_dist: &BehaviorDistribution,
    cfg: &EpisodeConfig,
) -> LaneChangePolicy {
    let dist = if kind == PlannerKind::Omniscient { world_dist } else { plan_dist };
    make_policy(
        kind,
        PolicyDeps {
            sim: cfg.sim,
            planner: cfg.planner,
            reward: cfg.reward,
            filter: cfg.filter,
            plan_dist: dist.clone(),
        },
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsSummary {
    pub n: usize,
    pub successes: usize,
    pub unsafe_episodes: usize,
    pub safe_successes: usize,
    pub hard_brakes: u64,
    pub distance_m: f64,
    pub success_rate: f64,
    pub unsafe_rate: f64,
    pub safe_and_successful: f64,
    pub hard_brakes_per_km: f64,
    pub sem_success: f64,
    pub sem_unsafe: f64,
    pub sem_safe_success: f64,
    pub hoeffding_eps: f64,
    pub confidence: f64,
}

fn sem(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

pub fn summarize(results: &[EpisodeResult], confidence: f64) -> Result<MetricsSummary, ExperimentError> {
    let n = results.len();
    let eps = hoeffding_interval(n, confidence)?;
    let successes = results.iter().filter(|r| r.success).count();
    let unsafe_episodes = results.iter().filter(|r| r.unsafe_event).count();
    let safe_successes = results.iter().filter(|r| r.safe_and_successful()).count();
    let hard_brakes: u64 = results.iter().map(|r| r.hard_brakes as u64).sum();
    let distance_m: f64 = results.iter().map(|r| r.distance).sum();
    let rate = |k: usize| k as f64 / n as f64;
    let (sr, ur, ss) = (rate(successes), rate(unsafe_episodes), rate(safe_successes));
    Ok(MetricsSummary {
        n,
        successes,
        unsafe_episodes,
        safe_successes,
        hard_brakes,
        distance_m,
        success_rate: sr,
        unsafe_rate: ur,
        safe_and_successful: ss,
        hard_brakes_per_km: if distance_m > 0.0 {
            hard_brakes as f64 / (distance_m / 1000.0)
        } else {
            0.0
        },
        sem_success: sem(sr, n),
        sem_unsafe: sem(ur, n),
        sem_safe_success: sem(ss, n),
        hoeffding_eps: eps,
        confidence,
    })
}

/// One sweep cell: a planner against a world under one condition.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSpec {
    pub planner: PlannerKind,
    pub lambda: f64,
    pub plan_dist: BehaviorDistribution,
    pub world_dist: BehaviorDistribution,
    /// Index of the world condition; planners under one condition share
    /// episode seeds.
    pub condition: usize,
    /// Values of the sweep's key columns, in `SweepTable::keys` order.
    pub keys: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub spec: CellSpec,
    pub first_seed: u64,
    pub results: Vec<EpisodeResult>,
    pub summary: MetricsSummary,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub episode: EpisodeConfig,
    pub episodes: usize,
    pub base_seed: u64,
    pub confidence: f64,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            episode: EpisodeConfig::default(),
            episodes: 300,
            base_seed: 0,
            confidence: 0.68,
        }
    }
}

/// Seed of episode `k` under world condition `condition`.
pub fn episode_seed(base: u64, condition: usize, episodes: usize, k: usize) -> u64 {
    base + (condition * episodes + k) as u64
}

/// Runs every cell, distributing episodes over the thread pool. Results do
/// not depend on the number of threads.
pub fn run_cells(cells: &[CellSpec], settings: &SweepSettings) -> Result<Vec<CellResult>, ExperimentError> {
    let n = settings.episodes;
    if n == 0 {
        return Err(ExperimentError::EmptySample);
    }
    hoeffding_interval(n, settings.confidence)?;
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..n).map(move |k| (c, k))).collect();
    let outcomes: Vec<(EpisodeResult, f64)> = jobs
        .par_iter()
        .map(|&(c, k)| {
            let cell = &cells[c];
            let seed = episode_seed(settings.base_seed, cell.condition, n, k);
            let cfg = EpisodeConfig {
                reward: RewardWeights { lambda: cell.lambda },
                ..settings.episode.clone()
            };
            let t = Instant::now();
            let r = run_episode(cell.planner, &cell.plan_dist, &cell.world_dist, &cfg, seed);
            (r, t.elapsed().as_secs_f64())
        })
        .collect();
    let mut out = Vec::with_capacity(cells.len());
    for (c, chunk) in outcomes.chunks(n).enumerate() {
        let results: Vec<EpisodeResult> = chunk.iter().map(|(r, _)| r.clone()).collect();
        let wall = chunk.iter().map(|(_, t)| t).sum();
        out.push(CellResult {
            spec: cells[c].clone(),
            first_seed: episode_seed(settings.base_seed, cells[c].condition, n, 0),
            summary: summarize(&results, settings.confidence)?,
            results,
            wall_time_s: wall,
        });
    }
    Ok(out)
}

/// Output of one sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub name: &'static str,
    pub keys: Vec<&'static str>,
    pub cells: Vec<CellResult>,
}

impl SweepTable {
    pub fn cell(&self, planner: PlannerKind, keys: &[f64]) -> Option<&CellResult> {
        self.cells.iter().find(|c| {
            c.spec.planner == planner && c.spec.keys.len() == keys.len() && c.spec.keys.iter().zip(keys).all(|(a, b)| (a - b).abs() < 1e-12)
        })
    }

    /// CSV with one row per cell. `wall_time` fills the timing column, which
    /// otherwise stays empty so the file depends only on config and seeds.
    pub fn to_csv(&self, wall_time: bool) -> String {
        let mut out = String::from("planner");
        for k in &self.keys {
            out.push(',');
            out.push_str(k);
        }
        out.push_str(
            ",n,success_rate,unsafe_rate,safe_and_successful,hard_brakes_per_km,sem_success,hoeffding_eps,wall_time_s,first_seed\n",
        );
        for c in &self.cells {
            let m = &c.summary;
            out.push_str(c.spec.planner.as_str());
            for v in &c.spec.keys {
                let _ = write!(out, ",{v}");
            }
            let wt = if wall_time {
                format!("{:.3}", c.wall_time_s)
            } else {
                String::new()
            };
            let _ = writeln!(
                out,
                ",{},{},{},{},{},{},{},{},{}",
                m.n,
                m.success_rate,
                m.unsafe_rate,
                m.safe_and_successful,
                m.hard_brakes_per_km,
                m.sem_success,
                m.hoeffding_eps,
                wt,
                c.first_seed
            );
        }
        out
    }

    /// Per-planner `(x, y, y_err)` series for plotting.
    pub fn plot_series(&self) -> Vec<(PlannerKind, String)> {
        let mut planners: Vec<PlannerKind> = self.cells.iter().map(|c| c.spec.planner).collect();
        planners.dedup();
        let mut seen = Vec::new();
        planners.retain(|p| {
            let fresh = !seen.contains(p);
            seen.push(*p);
            fresh
        });
        planners
            .into_iter()
            .map(|p| {
                let mut s = String::from("x,y,y_err\n");
                for c in self.cells.iter().filter(|c| c.spec.planner == p) {
                    let m = &c.summary;
                    let (x, y) = if self.name == "pareto" {
                        (m.unsafe_rate, m.success_rate)
                    } else {
                        (*c.spec.keys.last().unwrap_or(&0.0), m.safe_and_successful)
                    };
                    let _ = writeln!(s, "{x},{y},{}", m.hoeffding_eps);
                }
                (p, s)
            })
            .collect()
    }
}

/// Points of the safety/efficiency trade-off: one cell per planner and λ.
pub fn pareto_sweep(
    planners: &[PlannerKind],
    lambdas: &[f64],
    dist: &BehaviorDistribution,
    settings: &SweepSettings,
) -> Result<SweepTable, ExperimentError> {
    let mut cells = Vec::new();
    for &planner in planners {
        for &lambda in lambdas {
            cells.push(CellSpec {
                planner,
                lambda,
                plan_dist: dist.clone(),
                world_dist: dist.clone(),
                condition: 0,
                keys: vec![lambda],
            });
        }
    }
    Ok(SweepTable {
        name: "pareto",
        keys: vec!["lambda"],
        cells: run_cells(&cells, settings)?,
    })
}

/// Planner and world share a copula with correlation ρ, for each ρ.
pub fn correlation_sweep(
    planners: &[PlannerKind],
    rhos: &[f64],
    lambda: f64,
    settings: &SweepSettings,
) -> Result<SweepTable, ExperimentError> {
    let mut cells = Vec::new();
    for &planner in planners {
        for (ci, &rho) in rhos.iter().enumerate() {
            let d = BehaviorDistribution::with_rho(rho)?;
            cells.push(CellSpec {
                planner,
                lambda,
                plan_dist: d.clone(),
                world_dist: d,
                condition: ci,
                keys: vec![rho],
            });
        }
    }
    Ok(SweepTable {
        name: "correlation",
        keys: vec!["rho"],
        cells: run_cells(&cells, settings)?,
    })
}

/// Planners built with correlation ρ_plan run in worlds with ρ_sim.
pub fn robustness_correlation(
    planners: &[PlannerKind],
    rho_plan: &[f64],
    rho_sim: &[f64],
    lambda: f64,
    settings: &SweepSettings,
) -> Result<SweepTable, ExperimentError> {
    let mut cells = Vec::new();
    for &planner in planners {
        for &rp in rho_plan {
            let plan = BehaviorDistribution::with_rho(rp)?;
            for (ci, &rs) in rho_sim.iter().enumerate() {
                cells.push(CellSpec {
                    planner,
                    lambda,
                    plan_dist: plan.clone(),
                    world_dist: BehaviorDistribution::with_rho(rs)?,
                    condition: ci,
                    keys: vec![rp, rs],
                });
            }
        }
    }
    Ok(SweepTable {
        name: "robustness_correlation",
        keys: vec!["rho_plan", "rho_sim"],
        cells: run_cells(&cells, settings)?,
    })
}

/// Planners with the nominal distribution run in worlds whose parameter
/// ranges are expanded by each factor.
pub fn robustness_domain(
    planners: &[PlannerKind],
    factors: &[f64],
    nominal: &BehaviorDistribution,
    lambda: f64,
    settings: &SweepSettings,
) -> Result<SweepTable, ExperimentError> {
    let mut cells = Vec::new();
    for &planner in planners {
        for (ci, &f) in factors.iter().enumerate() {
            cells.push(CellSpec {
                planner,
                lambda,
                plan_dist: nominal.clone(),
                world_dist: nominal.expand_domain(f)?,
                condition: ci,
                keys: vec![f],
            });
        }
    }
    Ok(SweepTable {
        name: "robustness_domain",
        keys: vec!["factor"],
        cells: run_cells(&cells, settings)?,
    })
}

/// Aggressiveness estimation error of the filter along one lane-keeping
/// episode of the world `dist`. For each checkpoint step `t` the entry is the
/// mean over cars observed since step 0 and still present of
/// |posterior mean aggressiveness - true aggressiveness|, or `None` when no
/// such car remains.
pub fn filter_tracking_error(
    dist: &BehaviorDistribution,
    variant: FilterVariant,
    sim: &SimParams,
    filter: &FilterParams,
    seed: u64,
    checkpoints: &[usize],
) -> Vec<Option<f64>> {
    let mut init = stream_rng(seed, Stream::InitialScene);
    let mut world = stream_rng(seed, Stream::World);
    let mut frng = stream_rng(seed, Stream::Filter);
    let mut s = generate_initial_scene(dist, sim, &mut init);
    let original: Vec<VehicleId> = s.others.iter().map(|v| v.id).collect();
    let mut b = initialize_belief(&observe(&s), dist, variant, filter, &mut frng);
    let table = dist.table;
    let last = checkpoints.iter().copied().max().unwrap_or(0);
    let mut out = vec![None; checkpoints.len()];
    for t in 0..=last {
        for (k, _) in checkpoints.iter().enumerate().filter(|(_, c)| **c == t) {
            let errs: Vec<f64> = original
                .iter()
                .filter_map(|id| Some((s.vehicle(*id)?, b.set(*id)?)))
                .map(|(v, set)| (set.mean_aggressiveness(&table) - aggressiveness_of(&v.behavior, &table)).abs())
                .collect();
            if !errs.is_empty() {
                out[k] = Some(errs.iter().sum::<f64>() / errs.len() as f64);
            }
        }
        if t == last {
            break;
        }
        let a = rollout_action(&s, sim);
        s = step_scene(&s, &a, dist, sim, &mut world).expect("lane keeping respects the safety bound");
        b = update_belief(&b, &a, &observe(&s), sim, &mut frng);
    }
    out
}

/// Outcome of driving with uniformly random pruned actions.
#[derive(Debug, Clone, PartialEq)]
pub struct FuzzReport {
    pub episodes: usize,
    pub steps: usize,
    /// Steps at which two cars sharing a lane overlapped.
    pub overlaps: usize,
    pub empty_action_sets: usize,
    /// Steps at which a car sat outside the simulated section.
    pub window_violations: usize,
    pub min_gap: f64,
}

impl FuzzReport {
    pub fn is_clean(&self) -> bool {
        self.overlaps == 0 && self.empty_action_sets == 0 && self.window_violations == 0
    }
}

/// Crash-freedom fuzz: `episodes` episodes (warmup included) with the ego
/// picking uniformly among the available actions until termination or
/// `max_steps`.
pub fn crash_fuzz(dist: &BehaviorDistribution, p: &SimParams, episodes: usize, base_seed: u64, max_steps: usize) -> FuzzReport {
    use rand::Rng;
    let per: Vec<FuzzReport> = (0..episodes)
        .into_par_iter()
        .map(|k| {
            let seed = base_seed + k as u64;
            let mut init = stream_rng(seed, Stream::InitialScene);
            let mut rng = stream_rng(seed, Stream::Fuzz);
            let mut s = generate_initial_scene(dist, p, &mut init);
            let mut r = FuzzReport {
                episodes: 1,
                steps: 0,
                overlaps: 0,
                empty_action_sets: 0,
                window_violations: 0,
                min_gap: f64::INFINITY,
            };
            let check = |s: &SceneState, r: &mut FuzzReport| {
                if let Some(g) = s.min_same_lane_gap(p.vehicle_length) {
                    r.min_gap = r.min_gap.min(g);
                    if g <= 0.0 {
                        r.overlaps += 1;
                    }
                }
                if s.others.iter().any(|v| (v.phys.x - s.ego.x).abs() > p.section_half_length) {
                    r.window_violations += 1;
                }
            };
            check(&s, &mut r);
            while !is_terminal(&s, p).is_terminal() && r.steps < max_steps {
                let acts = available_actions(&s, p);
                if acts.is_empty() {
                    r.empty_action_sets += 1;
                    break;
                }
                let a = acts[rng.random_range(0..acts.len())];
                s = step_scene_unchecked(&s, &a, dist, p, &mut rng);
                r.steps += 1;
                check(&s, &mut r);
            }
            r
        })
        .collect();
    per.into_iter().fold(
        FuzzReport {
            episodes: 0,
            steps: 0,
            overlaps: 0,
            empty_action_sets: 0,
            window_violations: 0,
            min_gap: f64::INFINITY,
        },
        |a, b| FuzzReport {
            episodes: a.episodes + b.episodes,
            steps: a.steps + b.steps,
            overlaps: a.overlaps + b.overlaps,
            empty_action_sets: a.empty_action_sets + b.empty_action_sets,
            window_violations: a.window_violations + b.window_violations,
            min_gap: a.min_gap.min(b.min_gap),
        },
    )
}
