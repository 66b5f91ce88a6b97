//! Run configuration: a flat TOML document of dotted keys.
//!
//! ```toml
//! sim.dt = 0.75
//! planner.iterations = 300
//! sweep.lambdas = [0.5, 1, 2, 4, 8]
//! ```
//!
//! Omitted keys keep their defaults, unknown keys are rejected and every
//! value is range-checked.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;
use toml::Value;

use crate::behavior_priors::{BehaviorDistribution, PriorError, Scenario};
use crate::belief::FilterParams;
use crate::experiments::{EpisodeConfig, SweepSettings};
use crate::highway_sim::SimParams;
use crate::lanechange_pomdp::RewardWeights;
use crate::planners::{PlannerKind, PlannerParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("`{key}`: {msg}")]
    Invalid { key: String, msg: String },
    #[error("malformed override `{0}` (expected key=value)")]
    Override(String),
}

fn invalid(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub sim: SimParams,
    pub planner: PlannerParams,
    pub filter: FilterParams,
    pub lambda: f64,
    /// Correlation scenario, 1 to 3.
    pub scenario: u8,
    /// Explicit copula correlation; overrides `scenario` when set.
    pub rho: Option<f64>,
    pub lambdas: Vec<f64>,
    pub rhos: Vec<f64>,
    pub rho_plan: Vec<f64>,
    pub rho_sim: Vec<f64>,
    pub factors: Vec<f64>,
    pub planners: Vec<PlannerKind>,
    pub episodes: usize,
    pub base_seed: u64,
    pub confidence: f64,
    pub max_steps: usize,
    pub episode_planner: PlannerKind,
    pub episode_seed: u64,
    pub fuzz_episodes: usize,
    pub output_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            sim: SimParams::default(),
            planner: PlannerParams::default(),
            filter: FilterParams::default(),
            lambda: 1.0,
            scenario: 2,
            rho: None,
            lambdas: vec![0.5, 1.0, 2.0, 4.0, 8.0],
            rhos: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            rho_plan: vec![0.0, 1.0],
            rho_sim: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            factors: vec![0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8, 2.0],
            planners: PlannerKind::ALL.to_vec(),
            episodes: 300,
            base_seed: 0,
            confidence: 0.68,
            max_steps: 400,
            episode_planner: PlannerKind::Pomcpow,
            episode_seed: 0,
            fuzz_episodes: 1000,
            output_dir: "out".to_string(),
        }
    }
}

enum Kind {
    Float,
    Int,
    FloatList,
    Str,
    StrList,
    OptFloat,
}

/// Every accepted key with its type, in echo order.
const KEYS: &[(&str, Kind)] = &[
    ("sim.dt", Kind::Float),
    ("sim.max_vehicles", Kind::Int),
    ("sim.lane_change_rate", Kind::Float),
    ("sim.distance_limit", Kind::Float),
    ("sim.spawn_speed_std", Kind::Float),
    ("sim.max_brake", Kind::Float),
    ("sim.hard_brake", Kind::Float),
    ("sim.slow_speed", Kind::Float),
    ("sim.n_lanes", Kind::Int),
    ("sim.vehicle_length", Kind::Float),
    ("sim.nominal_brake", Kind::Float),
    ("sim.accel_increment", Kind::Float),
    ("sim.section_half_length", Kind::Float),
    ("sim.stop_margin", Kind::Float),
    ("sim.warmup_steps", Kind::Int),
    ("planner.ucb_c", Kind::Float),
    ("planner.dpw_k", Kind::Float),
    ("planner.dpw_alpha", Kind::Float),
    ("planner.depth", Kind::Int),
    ("planner.iterations", Kind::Int),
    ("planner.discount", Kind::Float),
    ("filter.joint_particles", Kind::Int),
    ("filter.aggressiveness_particles", Kind::Int),
    ("filter.wrong_lane_factor", Kind::Float),
    ("reward.lambda", Kind::Float),
    ("behavior.scenario", Kind::Int),
    ("behavior.rho", Kind::OptFloat),
    ("sweep.lambdas", Kind::FloatList),
    ("sweep.rhos", Kind::FloatList),
    ("sweep.rho_plan", Kind::FloatList),
    ("sweep.rho_sim", Kind::FloatList),
    ("sweep.factors", Kind::FloatList),
    ("sweep.planners", Kind::StrList),
    ("sweep.episodes", Kind::Int),
    ("sweep.base_seed", Kind::Int),
    ("sweep.confidence", Kind::Float),
    ("sweep.max_steps", Kind::Int),
    ("episode.planner", Kind::Str),
    ("episode.seed", Kind::Int),
    ("validate.fuzz_episodes", Kind::Int),
    ("output.dir", Kind::Str),
];

fn as_float(key: &str, v: &Value) -> Result<f64, ConfigError> {
    match v {
        Value::Float(x) => Ok(*x),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(invalid(key, "expected a number")),
    }
}

fn as_int(key: &str, v: &Value) -> Result<u64, ConfigError> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        Value::Integer(_) => Err(invalid(key, "must be non-negative")),
        _ => Err(invalid(key, "expected an integer")),
    }
}

fn as_list<'a>(key: &str, v: &'a Value) -> Result<&'a Vec<Value>, ConfigError> {
    match v {
        Value::Array(a) if !a.is_empty() => Ok(a),
        Value::Array(_) => Err(invalid(key, "list must not be empty")),
        _ => Err(invalid(key, "expected a list")),
    }
}

fn as_str<'a>(key: &str, v: &'a Value) -> Result<&'a str, ConfigError> {
    v.as_str().ok_or_else(|| invalid(key, "expected a string"))
}

fn planner(key: &str, s: &str) -> Result<PlannerKind, ConfigError> {
    s.parse().map_err(|e: crate::planners::UnknownPlanner| invalid(key, e.to_string()))
}

fn fmt_float(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{x:.1}")
    } else {
        format!("{x}")
    }
}

impl RunConfig {
    /// Sets one dotted key from a TOML value.
    pub fn set(&mut self, key: &str, v: &Value) -> Result<(), ConfigError> {
        let f = || as_float(key, v);
        let i = || as_int(key, v);
        let fl = || -> Result<Vec<f64>, ConfigError> { as_list(key, v)?.iter().map(|x| as_float(key, x)).collect() };
        match key {
            "sim.dt" => self.sim.dt = f()?,
            "sim.max_vehicles" => self.sim.max_vehicles = i()? as usize,
            "sim.lane_change_rate" => self.sim.lane_change_rate = f()?,
            "sim.distance_limit" => self.sim.distance_limit = f()?,
            "sim.spawn_speed_std" => self.sim.spawn_speed_std = f()?,
            "sim.max_brake" => self.sim.max_brake = f()?,
            "sim.hard_brake" => self.sim.hard_brake = f()?,
            "sim.slow_speed" => self.sim.slow_speed = f()?,
            "sim.n_lanes" => {
                self.sim.n_lanes = i()?.min(64) as u32;
                self.sim.target_lane = self.sim.n_lanes.saturating_sub(1) as f64;
            }
            "sim.vehicle_length" => self.sim.vehicle_length = f()?,
            "sim.nominal_brake" => self.sim.nominal_brake = f()?,
            "sim.accel_increment" => self.sim.accel_increment = f()?,
            "sim.section_half_length" => self.sim.section_half_length = f()?,
            "sim.stop_margin" => self.sim.stop_margin = f()?,
            "sim.warmup_steps" => self.sim.warmup_steps = i()? as usize,
            "planner.ucb_c" => self.planner.ucb_c = f()?,
            "planner.dpw_k" => self.planner.dpw_k = f()?,
            "planner.dpw_alpha" => self.planner.dpw_alpha = f()?,
            "planner.depth" => self.planner.depth = i()? as usize,
            "planner.iterations" => self.planner.iterations = i()? as usize,
            "planner.discount" => self.planner.discount = f()?,
            "filter.joint_particles" => self.filter.joint_particles = i()? as usize,
            "filter.aggressiveness_particles" => self.filter.aggressiveness_particles = i()? as usize,
            "filter.wrong_lane_factor" => self.filter.wrong_lane_factor = f()?,
            "reward.lambda" => self.lambda = f()?,
            "behavior.scenario" => self.scenario = i()?.min(255) as u8,
            "behavior.rho" => {
                self.rho = match v {
                    Value::String(s) if s == "none" => None,
                    _ => Some(f()?),
                }
            }
            "sweep.lambdas" => self.lambdas = fl()?,
            "sweep.rhos" => self.rhos = fl()?,
            "sweep.rho_plan" => self.rho_plan = fl()?,
            "sweep.rho_sim" => self.rho_sim = fl()?,
            "sweep.factors" => self.factors = fl()?,
            "sweep.planners" => {
                self.planners = as_list(key, v)?
                    .iter()
                    .map(|x| planner(key, as_str(key, x)?))
                    .collect::<Result<_, _>>()?
            }
            "sweep.episodes" => self.episodes = i()? as usize,
            "sweep.base_seed" => self.base_seed = i()?,
            "sweep.confidence" => self.confidence = f()?,
            "sweep.max_steps" => self.max_steps = i()? as usize,
            "episode.planner" => self.episode_planner = planner(key, as_str(key, v)?)?,
            "episode.seed" => self.episode_seed = i()?,
            "validate.fuzz_episodes" => self.fuzz_episodes = i()? as usize,
            "output.dir" => self.output_dir = as_str(key, v)?.to_string(),
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let list = |v: &[f64]| format!("[{}]", v.iter().map(|x| fmt_float(*x)).collect::<Vec<_>>().join(", "));
        let p = &self.sim;
        match key {
            "sim.dt" => fmt_float(p.dt),
            "sim.max_vehicles" => p.max_vehicles.to_string(),
            "sim.lane_change_rate" => fmt_float(p.lane_change_rate),
            "sim.distance_limit" => fmt_float(p.distance_limit),
            "sim.spawn_speed_std" => fmt_float(p.spawn_speed_std),
            "sim.max_brake" => fmt_float(p.max_brake),
            "sim.hard_brake" => fmt_float(p.hard_brake),
            "sim.slow_speed" => fmt_float(p.slow_speed),
            "sim.n_lanes" => p.n_lanes.to_string(),
            "sim.vehicle_length" => fmt_float(p.vehicle_length),
            "sim.nominal_brake" => fmt_float(p.nominal_brake),
            "sim.accel_increment" => fmt_float(p.accel_increment),
            "sim.section_half_length" => fmt_float(p.section_half_length),
            "sim.stop_margin" => fmt_float(p.stop_margin),
            "sim.warmup_steps" => p.warmup_steps.to_string(),
            "planner.ucb_c" => fmt_float(self.planner.ucb_c),
            "planner.dpw_k" => fmt_float(self.planner.dpw_k),
            "planner.dpw_alpha" => fmt_float(self.planner.dpw_alpha),
            "planner.depth" => self.planner.depth.to_string(),
            "planner.iterations" => self.planner.iterations.to_string(),
            "planner.discount" => fmt_float(self.planner.discount),
            "filter.joint_particles" => self.filter.joint_particles.to_string(),
            "filter.aggressiveness_particles" => self.filter.aggressiveness_particles.to_string(),
            "filter.wrong_lane_factor" => fmt_float(self.filter.wrong_lane_factor),
            "reward.lambda" => fmt_float(self.lambda),
            "behavior.scenario" => self.scenario.to_string(),
            "behavior.rho" => self.rho.map_or_else(|| "\"none\"".to_string(), fmt_float),
            "sweep.lambdas" => list(&self.lambdas),
            "sweep.rhos" => list(&self.rhos),
            "sweep.rho_plan" => list(&self.rho_plan),
            "sweep.rho_sim" => list(&self.rho_sim),
            "sweep.factors" => list(&self.factors),
            "sweep.planners" => format!(
                "[{}]",
                self.planners.iter().map(|k| format!("\"{k}\"")).collect::<Vec<_>>().join(", ")
            ),
            "sweep.episodes" => self.episodes.to_string(),
            "sweep.base_seed" => self.base_seed.to_string(),
            "sweep.confidence" => fmt_float(self.confidence),
            "sweep.max_steps" => self.max_steps.to_string(),
            "episode.planner" => format!("\"{}\"", self.episode_planner),
            "episode.seed" => self.episode_seed.to_string(),
            "validate.fuzz_episodes" => self.fuzz_episodes.to_string(),
            "output.dir" => format!("{:?}", self.output_dir),
            _ => unreachable!("key list and getter out of sync: {key}"),
        }
    }

    /// The effective configuration as a document `parse_str` reads back to
    /// an equal config.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (k, _) in KEYS {
            let _ = writeln!(out, "{k} = {}", self.get(k));
        }
        out
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let pos = |key: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(invalid(key, format!("must be positive, got {x}")))
            }
        };
        let nonneg = |key: &str, x: f64| {
            if x >= 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(invalid(key, format!("must be non-negative, got {x}")))
            }
        };
        let unit = |key: &str, x: f64| {
            if (0.0..=1.0).contains(&x) {
                Ok(())
            } else {
                Err(invalid(key, format!("must lie in [0, 1], got {x}")))
            }
        };
        let p = &self.sim;
        pos("sim.dt", p.dt)?;
        pos("sim.lane_change_rate", p.lane_change_rate)?;
        pos("sim.distance_limit", p.distance_limit)?;
        nonneg("sim.spawn_speed_std", p.spawn_speed_std)?;
        pos("sim.max_brake", p.max_brake)?;
        pos("sim.hard_brake", p.hard_brake)?;
        if p.hard_brake >= p.max_brake {
            return Err(invalid("sim.hard_brake", "must be below sim.max_brake"));
        }
        pos("sim.slow_speed", p.slow_speed)?;
        if p.n_lanes < 2 {
            return Err(invalid("sim.n_lanes", "need at least two lanes"));
        }
        pos("sim.vehicle_length", p.vehicle_length)?;
        pos("sim.nominal_brake", p.nominal_brake)?;
        if p.nominal_brake > p.max_brake {
            return Err(invalid("sim.nominal_brake", "must not exceed sim.max_brake"));
        }
        pos("sim.accel_increment", p.accel_increment)?;
        pos("sim.section_half_length", p.section_half_length)?;
        pos("sim.stop_margin", p.stop_margin)?;
        pos("planner.ucb_c", self.planner.ucb_c)?;
        pos("planner.dpw_k", self.planner.dpw_k)?;
        pos("planner.dpw_alpha", self.planner.dpw_alpha)?;
        if self.planner.depth == 0 {
            return Err(invalid("planner.depth", "must be at least 1"));
        }
        if self.planner.iterations == 0 {
            return Err(invalid("planner.iterations", "must be at least 1"));
        }
        if !(self.planner.discount > 0.0 && self.planner.discount <= 1.0) {
            return Err(invalid("planner.discount", "must lie in (0, 1]"));
        }
        if self.filter.joint_particles == 0 {
            return Err(invalid("filter.joint_particles", "must be at least 1"));
        }
        if self.filter.aggressiveness_particles == 0 {
            return Err(invalid("filter.aggressiveness_particles", "must be at least 1"));
        }
        unit("filter.wrong_lane_factor", self.filter.wrong_lane_factor)?;
        nonneg("reward.lambda", self.lambda)?;
        if Scenario::from_index(self.scenario).is_none() {
            return Err(invalid("behavior.scenario", "must be 1, 2 or 3"));
        }
        if let Some(r) = self.rho {
            unit("behavior.rho", r)?;
        }
        for x in &self.lambdas {
            nonneg("sweep.lambdas", *x)?;
        }
        for (key, v) in [
            ("sweep.rhos", &self.rhos),
            ("sweep.rho_plan", &self.rho_plan),
            ("sweep.rho_sim", &self.rho_sim),
        ] {
            for x in v {
                unit(key, *x)?;
            }
        }
        for x in &self.factors {
            pos("sweep.factors", *x)?;
        }
        if self.episodes == 0 {
            return Err(invalid("sweep.episodes", "must be at least 1"));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(invalid("sweep.confidence", "must lie in (0, 1)"));
        }
        if self.max_steps == 0 {
            return Err(invalid("sweep.max_steps", "must be at least 1"));
        }
        Ok(())
    }

    /// Behavior distribution of the configured scenario or correlation.
    pub fn distribution(&self) -> Result<BehaviorDistribution, PriorError> {
        match self.rho {
            Some(r) => BehaviorDistribution::with_rho(r),
            None => Ok(BehaviorDistribution::scenario(
                Scenario::from_index(self.scenario).unwrap_or(Scenario::Correlated),
            )),
        }
    }

    pub fn episode_config(&self) -> EpisodeConfig {
        EpisodeConfig {
            sim: self.sim,
            planner: self.planner,
            reward: RewardWeights { lambda: self.lambda },
            filter: self.filter,
            max_steps: self.max_steps,
        }
    }

    pub fn sweep_settings(&self) -> SweepSettings {
        SweepSettings {
            episode: self.episode_config(),
            episodes: self.episodes,
            base_seed: self.base_seed,
            confidence: self.confidence,
        }
    }

    /// Applies `key=value`; the value is read as a TOML literal and taken as
    /// a bare string when it is not one.
    pub fn apply_override(&mut self, spec: &str) -> Result<(), ConfigError> {
        let (k, v) = spec.split_once('=').ok_or_else(|| ConfigError::Override(spec.to_string()))?;
        let (k, v) = (k.trim(), v.trim());
        let value = match toml::from_str::<toml::Table>(&format!("v = {v}")) {
            Ok(mut t) => t.remove("v").expect("key present"),
            Err(_) => Value::String(v.to_string()),
        };
        self.set(k, &value)
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

/// Parses a config document on top of the defaults.
pub fn parse_str(text: &str) -> Result<RunConfig, ConfigError> {
    let table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let mut entries = Vec::new();
    flatten("", &table, &mut entries);
    let mut cfg = RunConfig::default();
    // Dotted keys are applied in the document's key order except that
    // `sim.n_lanes` goes first, since it resets the target lane.
    entries.sort_by_key(|(k, _)| k != "sim.n_lanes");
    for (k, v) in &entries {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Reads an optional config file, then applies `overrides` in order.
pub fn parse_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| ConfigError::Io {
                path: p.display().to_string(),
                source: e,
            })?;
            parse_str(&text)?
        }
        None => RunConfig::default(),
    };
    for o in overrides {
        cfg.apply_override(o)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = parse_str("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.sim.dt, 0.75);
        assert_eq!(c.lambdas, vec![0.5, 1.0, 2.0, 4.0, 8.0]);
        assert_eq!(c.filter.wrong_lane_factor, 0.05);
        assert_eq!(c.filter.joint_particles, 5000);
        assert_eq!(c.filter.aggressiveness_particles, 2000);
    }

    #[test]
    fn range_errors_name_the_key() {
        let e = parse_str("sim.dt = -1").unwrap_err();
        assert!(e.to_string().contains("sim.dt"), "{e}");
        let e = parse_str("sim.bogus = 1").unwrap_err();
        assert!(matches!(e, ConfigError::UnknownKey(ref k) if k == "sim.bogus"));
        let e = parse_str("sweep.planners = [\"greedy\"]").unwrap_err();
        assert!(e.to_string().contains("sweep.planners"));
    }

    #[test]
    fn overrides_change_one_field() {
        let c = parse_config(None, &["planner.iterations=50".to_string()]).unwrap();
        assert_eq!(c.planner.iterations, 50);
        let d = RunConfig {
            planner: PlannerParams {
                iterations: 50,
                ..PlannerParams::default()
            },
            ..RunConfig::default()
        };
        assert_eq!(c, d);
        let c = parse_config(None, &["episode.planner=qmdp".to_string()]).unwrap();
        assert_eq!(c.episode_planner, PlannerKind::Qmdp);
        assert!(parse_config(None, &["noequals".to_string()]).is_err());
    }

    #[test]
    fn echo_round_trips() {
        let mut c = RunConfig::default();
        c.apply_override("sweep.lambdas=[1, 2.5]").unwrap();
        c.apply_override("behavior.rho=0.3").unwrap();
        c.apply_override("sim.n_lanes=5").unwrap();
        let back = parse_str(&c.echo()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.echo(), c.echo());
        assert_eq!(parse_str(&RunConfig::default().echo()).unwrap(), RunConfig::default());
    }

    #[test]
    fn nested_tables_are_flattened() {
        let c = parse_str("[planner]\niterations = 20\n[sim]\ndt = 0.5").unwrap();
        assert_eq!(c.planner.iterations, 20);
        assert_eq!(c.sim.dt, 0.5);
    }
}
