//! Greedy evaluation, CD/LD comparison statistics and validation oracles.

use std::io::{Read, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cycle::CycleTracker;
use crate::data::MarketProfile;
use crate::dqn::{greedy_action, train, QNetwork, TrainConfig, TrainOutcome};
use crate::env::{
    BatteryEnv, BatteryParams, DegradationMode, EnvConfig, Environment, StepRecord, OBS_DIM,
};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rainflow::{linearized_slice, rainflow_slice, CycleRecord, DegradationParams};

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeReport {
    pub profile_id: String,
    pub steps: usize,
    pub energy_cost: f64,
    pub fr_penalty: f64,
    pub degradation_cost: f64,
    /// `−(energy_cost + fr_penalty + degradation_cost)`.
    pub total_reward: f64,
    /// Rainflow cycles of the realized SoC trajectory.
    pub cycles: Vec<CycleRecord>,
    /// Σ|b| over the episode.
    pub throughput: f64,
    pub mean_soc: f64,
    /// Scaled rainflow cost of the realized trajectory.
    pub oracle_degradation: f64,
}

impl EpisodeReport {
    pub const CSV_HEADER: [&'static str; 11] = [
        "profile",
        "steps",
        "h_e",
        "h_f",
        "h_d",
        "total_reward",
        "oracle_h_d",
        "throughput",
        "mean_soc",
        "full_cycles",
        "half_cycles",
    ];

    /// Builds a report from per-step cost totals and the SoC trajectory
    /// (initial value first).
    pub fn from_trajectory(
        profile_id: impl Into<String>,
        totals: [f64; 3],
        soc: &[f64],
        degradation: &DegradationParams,
        degradation_scale: f64,
    ) -> Self {
        let rf = rainflow_slice(soc, degradation);
        let [energy_cost, fr_penalty, degradation_cost] = totals;
        let mean_soc = if soc.is_empty() {
            0.0
        } else {
            soc.iter().sum::<f64>() / soc.len() as f64
        };
        Self {
            profile_id: profile_id.into(),
            steps: soc.len().saturating_sub(1),
            energy_cost,
            fr_penalty,
            degradation_cost,
            total_reward: -(energy_cost + fr_penalty + degradation_cost),
            cycles: rf.cycles,
            throughput: rf.throughput,
            mean_soc,
            oracle_degradation: degradation_scale * rf.total_cost,
        }
    }

    pub fn count(&self, kind: crate::rainflow::CycleKind) -> usize {
        self.cycles.iter().filter(|c| c.kind == kind).count()
    }

    pub fn csv_fields(&self) -> [String; 11] {
        use crate::rainflow::CycleKind;
        [
            self.profile_id.clone(),
            self.steps.to_string(),
            self.energy_cost.to_string(),
            self.fr_penalty.to_string(),
            self.degradation_cost.to_string(),
            self.total_reward.to_string(),
            self.oracle_degradation.to_string(),
            self.throughput.to_string(),
            self.mean_soc.to_string(),
            self.count(CycleKind::Full).to_string(),
            self.count(CycleKind::Half).to_string(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EpisodeReport,
    /// Per-step records when requested.
    pub trace: Vec<StepRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalOptions {
    pub record_traces: bool,
    pub exec: Exec,
}

/// Greedy rollout of `net` over each profile, one independent environment per
/// day. Rewards are always scored with the cycle model; the battery is
/// re-rated to each profile's step length. Output order follows `profiles`.
pub fn evaluate(
    net: &QNetwork,
    profiles: &[Arc<MarketProfile>],
    config: &EnvConfig,
    options: EvalOptions,
) -> Result<Vec<Evaluation>> {
    if net.input_dim() != OBS_DIM || net.output_dim() != config.actions.len() {
        return Err(Error::Shape {
            expected: vec![OBS_DIM, config.actions.len()],
            found: vec![net.input_dim(), net.output_dim()],
        });
    }
    let runs = options.exec.map_slice(profiles, |profile| {
        let mut cfg = config.clone();
        cfg.costs.mode = DegradationMode::Cycle;
        cfg.record_trace = options.record_traces;
        if (cfg.battery.dt_seconds - profile.dt_seconds).abs() > 1e-9 {
            cfg.battery = cfg.battery.with_dt(profile.dt_seconds)?;
        }
        rollout(net, Arc::clone(profile), cfg)
    });
    runs.into_iter().collect()
}

fn rollout(net: &QNetwork, profile: Arc<MarketProfile>, cfg: EnvConfig) -> Result<Evaluation> {
    let degradation = cfg.costs.degradation;
    let scale = cfg.costs.degradation_scale;
    let mut env = BatteryEnv::new(profile, cfg)?;
    let mut totals = [0.0; 3];
    while !env.is_done() {
        let action = greedy_action(net, &env.observe())?;
        let out = env.step(action)?;
        totals[0] += out.reward.energy_cost;
        totals[1] += out.reward.fr_penalty;
        totals[2] += out.reward.degradation_cost;
    }
    let report = EpisodeReport::from_trajectory(
        env.profile().id.clone(),
        totals,
        env.soc_history(),
        &degradation,
        scale,
    );
    Ok(Evaluation {
        report,
        trace: env.trace().to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonStats {
    pub profile_ids: Vec<String>,
    /// CD − LD total reward per day.
    pub differences: Vec<f64>,
    /// LD − CD degradation cost per day (positive when CD degrades less).
    pub degradation_differences: Vec<f64>,
    pub mean: f64,
    pub max: f64,
    pub min: f64,
    /// Mean over days with a positive difference (0 if there are none).
    pub mean_positive: f64,
    /// Mean over days with a negative difference (0 if there are none).
    pub mean_negative: f64,
    pub fraction_cd_ge_ld: f64,
}

impl ComparisonStats {
    pub fn from_differences(
        profile_ids: Vec<String>,
        differences: Vec<f64>,
        degradation_differences: Vec<f64>,
    ) -> Result<Self> {
        if differences.is_empty() {
            return Err(Error::Empty("comparison".into()));
        }
        let n = differences.len() as f64;
        let mean_of = |xs: Vec<f64>| {
            if xs.is_empty() {
                0.0
            } else {
                xs.iter().sum::<f64>() / xs.len() as f64
            }
        };
        Ok(Self {
            mean: differences.iter().sum::<f64>() / n,
            max: differences
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max),
            min: differences.iter().copied().fold(f64::INFINITY, f64::min),
            mean_positive: mean_of(differences.iter().copied().filter(|d| *d > 0.0).collect()),
            mean_negative: mean_of(differences.iter().copied().filter(|d| *d < 0.0).collect()),
            fraction_cd_ge_ld: differences.iter().filter(|d| **d >= 0.0).count() as f64 / n,
            profile_ids,
            differences,
            degradation_differences,
        })
    }
}

pub fn compare_cd_ld(cd: &[EpisodeReport], ld: &[EpisodeReport]) -> Result<ComparisonStats> {
    if cd.len() != ld.len() {
        return Err(Error::Misaligned(format!(
            "{} CD days vs {} LD days",
            cd.len(),
            ld.len()
        )));
    }
    if let Some((a, b)) = cd
        .iter()
        .zip(ld)
        .find(|(a, b)| a.profile_id != b.profile_id)
    {
        return Err(Error::Misaligned(format!(
            "{} vs {}",
            a.profile_id, b.profile_id
        )));
    }
    ComparisonStats::from_differences(
        cd.iter().map(|r| r.profile_id.clone()).collect(),
        cd.iter()
            .zip(ld)
            .map(|(a, b)| a.total_reward - b.total_reward)
            .collect(),
        cd.iter()
            .zip(ld)
            .map(|(a, b)| b.degradation_cost - a.degradation_cost)
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradationFactors {
    /// Σ depth of discharge over cycles, full cycles counted twice.
    pub c_rate_factor: f64,
    /// Time-averaged SoC.
    pub soc_stress: f64,
}

pub fn degradation_factors(report: &EpisodeReport) -> DegradationFactors {
    DegradationFactors {
        c_rate_factor: report
            .cycles
            .iter()
            .map(CycleRecord::depth_of_discharge)
            .sum(),
        soc_stress: report.mean_soc,
    }
}

/// Best arbitrage revenue over `prices` by backward induction on an SoC grid
/// with spacing `grid_step` anchored at `soc_min`.
///
/// Per step the SoC may move by any multiple of the grid spacing up to the
/// largest action's reach, so the value bounds every policy over the discrete
/// action set up to one grid step of rounding, and refining a grid by an
/// integer factor never lowers it. Regulation and degradation costs are not
/// modelled. `initial_soc` is snapped to the nearest grid level; there is no
/// terminal SoC condition.
pub fn dp_arbitrage_oracle(
    prices: &[f64],
    battery: &BatteryParams,
    actions: &[f64],
    grid_step: f64,
    initial_soc: f64,
    exec: Exec,
) -> Result<f64> {
    let reach = battery.rate_fraction_per_step * actions.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    if !(grid_step > 0.0 && grid_step.is_finite()) {
        return Err(Error::domain("grid step must be positive"));
    }
    if grid_step > reach * (1.0 + 1e-12) {
        return Err(Error::domain(format!(
            "grid step {grid_step} is coarser than the per-step reach {reach}"
        )));
    }
    if !(battery.soc_min..=battery.soc_max).contains(&initial_soc) {
        return Err(Error::domain(format!(
            "initial SoC {initial_soc} out of range"
        )));
    }
    let levels = ((battery.soc_max - battery.soc_min) / grid_step + 1e-9).floor() as usize + 1;
    let max_move = (reach / grid_step + 1e-9).floor() as isize;
    let e_mwh = battery.energy_mwh();
    let mut value = vec![0.0; levels];
    let mut next = vec![0.0; levels];
    for &p in prices.iter().rev() {
        std::mem::swap(&mut value, &mut next);
        exec.fill(&mut value, |k| {
            let lo = (k as isize - max_move).max(0);
            let hi = (k as isize + max_move).min(levels as isize - 1);
            (lo..=hi)
                .map(|j| {
                    let b = (j - k as isize) as f64 * grid_step;
                    next[j as usize] - p * b * e_mwh
                })
                .fold(f64::NEG_INFINITY, f64::max)
        });
    }
    let start = ((initial_soc - battery.soc_min) / grid_step).round() as usize;
    Ok(value[start.min(levels - 1)])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FuzzConfig {
    pub walks: usize,
    pub length: usize,
    pub seed: u64,
    /// Largest per-step SoC change.
    pub max_step: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    pub params: DegradationParams,
    pub tolerance: f64,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        Self {
            walks: 1000,
            length: 2000,
            seed: 0,
            max_step: 0.05,
            soc_min: 0.1,
            soc_max: 1.0,
            params: DegradationParams::default(),
            tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FuzzSummary {
    pub walks: usize,
    pub max_relative_deviation: f64,
    pub worst_walk: usize,
    pub passed: bool,
}

/// Bounded random walk `index` of a fuzz run. A tenth of the steps are holds
/// and a quarter are snapped to a coarse grid so ties and plateaus occur.
pub fn fuzz_walk(config: &FuzzConfig, index: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);
    let mut soc = rng.random_range(config.soc_min..=config.soc_max);
    let mut walk = Vec::with_capacity(config.length + 1);
    walk.push(soc);
    for _ in 0..config.length {
        let u: f64 = rng.random();
        let b = if u < 0.1 {
            0.0
        } else if u < 0.35 {
            let q = config.max_step / 4.0;
            (rng.random_range(-config.max_step..=config.max_step) / q).round() * q
        } else {
            rng.random_range(-config.max_step..=config.max_step)
        };
        soc = (soc + b).clamp(config.soc_min, config.soc_max);
        walk.push(soc);
    }
    walk
}

/// Relative gap between the summed per-step increments and the
/// whole-trajectory rainflow cost of one walk.
pub fn walk_deviation(walk: &[f64], params: &DegradationParams) -> Result<f64> {
    let mut tracker = CycleTracker::new(walk[0], *params)?;
    let engine: f64 = walk[1..].iter().map(|&s| tracker.step_to(s)).sum();
    let oracle = rainflow_slice(walk, params).total_cost;
    let gap = (engine - oracle).abs();
    Ok(if gap == 0.0 {
        0.0
    } else {
        gap / oracle.abs().max(f64::MIN_POSITIVE)
    })
}

pub fn verify_degradation(config: &FuzzConfig, exec: Exec) -> Result<FuzzSummary> {
    if config.walks == 0 || config.length == 0 {
        return Err(Error::domain("fuzz needs at least one walk and one step"));
    }
    if !(config.max_step > 0.0 && config.soc_min < config.soc_max) {
        return Err(Error::domain("invalid fuzz bounds"));
    }
    let deviations = exec.map(config.walks, |i| {
        walk_deviation(&fuzz_walk(config, i), &config.params)
    });
    let mut summary = FuzzSummary {
        walks: config.walks,
        max_relative_deviation: 0.0,
        worst_walk: 0,
        passed: true,
    };
    for (i, d) in deviations.into_iter().enumerate() {
        let d = d?;
        if d > summary.max_relative_deviation {
            summary.max_relative_deviation = d;
            summary.worst_walk = i;
        }
    }
    summary.passed = summary.max_relative_deviation < config.tolerance;
    Ok(summary)
}

/// Linear-mode coefficient from a realized SoC history, or `None` when the
/// battery never moved.
pub fn refreshed_coefficient(env: &BatteryEnv) -> Option<f64> {
    linearized_slice(env.soc_history(), &env.config().costs.degradation).ok()
}

/// Initial linear-mode coefficient: the trajectory of a uniformly random
/// policy on `profile`.
pub fn bootstrap_coefficient(
    profile: Arc<MarketProfile>,
    config: &EnvConfig,
    seed: u64,
) -> Result<f64> {
    let mut cfg = config.clone();
    cfg.costs.mode = DegradationMode::Cycle;
    cfg.record_trace = false;
    let mut env = BatteryEnv::new(profile, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while !env.is_done() {
        let a = rng.random_range(0..env.num_actions());
        env.step(a)?;
    }
    linearized_slice(env.soc_history(), &env.config().costs.degradation)
}

/// Trains a policy on battery profiles. In linear mode the coefficient
/// starts from `costs.a_d` when positive (otherwise from a random-policy
/// rollout on the first profile) and is refreshed from each episode's
/// realized trajectory before the next one.
pub fn train_battery(
    profiles: &[Arc<MarketProfile>],
    env_config: &EnvConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let mut cfg = env_config.clone();
    cfg.horizon = Some(config.steps_per_episode);
    cfg.record_trace = false;
    let linear = cfg.costs.mode == DegradationMode::Linear;
    if linear && cfg.costs.a_d <= 0.0 {
        let first = profiles
            .first()
            .ok_or_else(|| Error::Empty("training profiles".into()))?;
        cfg.costs.a_d = bootstrap_coefficient(Arc::clone(first), &cfg, config.seed)?;
    }
    train(
        profiles,
        |profile: &Arc<MarketProfile>, previous: Option<&BatteryEnv>| {
            let mut env = BatteryEnv::new(Arc::clone(profile), cfg.clone())?;
            if linear {
                if let Some(prev) = previous {
                    let a_d = refreshed_coefficient(prev).unwrap_or(prev.config().costs.a_d);
                    env.set_linear_coefficient(a_d);
                }
            }
            Ok(env)
        },
        config,
    )
}

pub fn write_reports_csv<W: Write>(writer: W, reports: &[EpisodeReport]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(EpisodeReport::CSV_HEADER)?;
    for r in reports {
        wtr.write_record(r.csv_fields())?;
    }
    wtr.flush().map_err(|e| Error::io("<reports>", e))?;
    Ok(())
}

/// Rows of an episode report CSV as `(profile, total_reward, h_d)`.
pub fn read_report_rewards<R: Read>(reader: R, source: &str) -> Result<Vec<(String, f64, f64)>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse {
                path: source.into(),
                line: 1,
                message: format!("missing column {name}"),
            })
    };
    let (ip, ir, id) = (col("profile")?, col("total_reward")?, col("h_d")?);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|e| Error::Parse {
                path: source.into(),
                line,
                message: format!("{:?}: {e}", &rec[i]),
            })
        };
        rows.push((rec[ip].to_string(), num(ir)?, num(id)?));
    }
    Ok(rows)
}

/// Compares two report files row by row.
pub fn compare_report_rows(
    cd: &[(String, f64, f64)],
    ld: &[(String, f64, f64)],
) -> Result<ComparisonStats> {
    if cd.len() != ld.len() {
        return Err(Error::Misaligned(format!(
            "{} CD days vs {} LD days",
            cd.len(),
            ld.len()
        )));
    }
    if let Some((a, b)) = cd.iter().zip(ld).find(|(a, b)| a.0 != b.0) {
        return Err(Error::Misaligned(format!("{} vs {}", a.0, b.0)));
    }
    ComparisonStats::from_differences(
        cd.iter().map(|r| r.0.clone()).collect(),
        cd.iter().zip(ld).map(|(a, b)| a.1 - b.1).collect(),
        cd.iter().zip(ld).map(|(a, b)| b.2 - a.2).collect(),
    )
}

/// Per-day rows followed by summary rows keyed `summary:<stat>`.
pub fn write_comparison_csv<W: Write>(writer: W, stats: &ComparisonStats) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["profile", "reward_diff", "degradation_diff"])?;
    for ((id, d), g) in stats
        .profile_ids
        .iter()
        .zip(&stats.differences)
        .zip(&stats.degradation_differences)
    {
        wtr.write_record([id.clone(), d.to_string(), g.to_string()])?;
    }
    for (name, v) in [
        ("mean", stats.mean),
        ("max", stats.max),
        ("min", stats.min),
        ("mean_positive", stats.mean_positive),
        ("mean_negative", stats.mean_negative),
        ("fraction_cd_ge_ld", stats.fraction_cd_ge_ld),
    ] {
        wtr.write_record([format!("summary:{name}"), v.to_string(), String::new()])?;
    }
    wtr.flush().map_err(|e| Error::io("<comparison>", e))?;
    Ok(())
}

pub fn write_trace_csv<W: Write>(writer: W, trace: &[StepRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(StepRecord::CSV_HEADER)?;
    for r in trace {
        wtr.write_record(r.csv_fields())?;
    }
    wtr.flush().map_err(|e| Error::io("<trace>", e))?;
    Ok(())
}
