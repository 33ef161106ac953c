//! Battery control MDP.
//!
//! State is `(p_t, f_t, c_t, c⁽⁰⁾, c⁽¹⁾, c⁽²⁾)`: market price, regulation
//! signal, state of charge and the last three switching points. Each step
//! maps a discrete action to a clamped SoC change `b`, then charges
//!
//! * energy `h^e = p_t · b · E/1000` ($/MWh · MWh),
//! * regulation deviation `h^f = δ · |ρ·f_t − b| · E/1000`,
//! * degradation `h^d`, either the exact rainflow increment (cycle mode) or
//!   `a_d · |b|` (linear mode), both scaled to currency,
//!
//! and returns `r = −h^e − h^f − h^d`.

use std::sync::Arc;

use crate::cycle::CycleTracker;
use crate::data::MarketProfile;
use crate::error::{Error, Result};
use crate::rainflow::DegradationParams;

pub const OBS_DIM: usize = 6;
pub type Observation = [f64; OBS_DIM];

/// Eleven evenly spaced levels from full discharge to full charge.
pub const DEFAULT_ACTIONS: [f64; 11] = [-1.0, -0.8, -0.6, -0.4, -0.2, 0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryParams {
    pub capacity_kwh: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    /// Largest SoC change per step at a full action, ρ.
    pub rate_fraction_per_step: f64,
    pub dt_seconds: f64,
}

impl BatteryParams {
    pub fn new(
        capacity_kwh: f64,
        soc_min: f64,
        soc_max: f64,
        rate_fraction_per_step: f64,
        dt_seconds: f64,
    ) -> Result<Self> {
        if !(capacity_kwh > 0.0 && capacity_kwh.is_finite()) {
            return Err(Error::domain(format!(
                "capacity must be positive, got {capacity_kwh}"
            )));
        }
        if !(0.0 <= soc_min && soc_min < soc_max && soc_max <= 1.0) {
            return Err(Error::domain(format!(
                "need 0 <= soc_min < soc_max <= 1, got [{soc_min}, {soc_max}]"
            )));
        }
        if !(rate_fraction_per_step > 0.0 && rate_fraction_per_step.is_finite()) {
            return Err(Error::domain("rate per step must be positive"));
        }
        if !(dt_seconds > 0.0 && dt_seconds.is_finite()) {
            return Err(Error::domain("dt_seconds must be positive"));
        }
        Ok(Self {
            capacity_kwh,
            soc_min,
            soc_max,
            rate_fraction_per_step,
            dt_seconds,
        })
    }

    /// ρ from a power rating: `power_kw · dt / (3600 · capacity_kwh)`.
    pub fn from_power(
        capacity_kwh: f64,
        power_kw: f64,
        soc_min: f64,
        soc_max: f64,
        dt_seconds: f64,
    ) -> Result<Self> {
        let rho = power_kw * dt_seconds / (3600.0 * capacity_kwh);
        Self::new(capacity_kwh, soc_min, soc_max, rho, dt_seconds)
    }

    /// 200 kWh, 120 kW, 20 kWh floor.
    pub fn reference(dt_seconds: f64) -> Self {
        Self::from_power(200.0, 120.0, 0.1, 1.0, dt_seconds).expect("valid reference battery")
    }

    pub fn power_kw(&self) -> f64 {
        self.rate_fraction_per_step * 3600.0 * self.capacity_kwh / self.dt_seconds
    }

    /// Same battery at a different step length.
    pub fn with_dt(&self, dt_seconds: f64) -> Result<Self> {
        Self::from_power(
            self.capacity_kwh,
            self.power_kw(),
            self.soc_min,
            self.soc_max,
            dt_seconds,
        )
    }

    pub fn energy_mwh(&self) -> f64 {
        self.capacity_kwh / 1000.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegradationMode {
    /// Exact rainflow increments (CD).
    Cycle,
    /// `a_d · |b|` (LD).
    Linear,
}

impl std::str::FromStr for DegradationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cd" | "cycle" => Ok(DegradationMode::Cycle),
            "ld" | "linear" => Ok(DegradationMode::Linear),
            other => Err(Error::Config(format!("unknown degradation mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for DegradationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DegradationMode::Cycle => "cd",
            DegradationMode::Linear => "ld",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostParams {
    /// Regulation deviation penalty, $/MWh.
    pub delta: f64,
    pub degradation: DegradationParams,
    /// Currency per unit of Φ.
    pub degradation_scale: f64,
    pub mode: DegradationMode,
    /// Linear-mode cost per unit SoC throughput (in Φ units).
    pub a_d: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            delta: 140.0,
            degradation: DegradationParams::default(),
            degradation_scale: 1000.0,
            mode: DegradationMode::Cycle,
            a_d: 0.0,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::domain("delta must be >= 0"));
        }
        // zero scale switches degradation off entirely
        if !(self.degradation_scale >= 0.0 && self.degradation_scale.is_finite()) {
            return Err(Error::domain("degradation_scale must be >= 0"));
        }
        if self.mode == DegradationMode::Linear && !(self.a_d >= 0.0 && self.a_d.is_finite()) {
            return Err(Error::domain("a_d must be >= 0 in linear mode"));
        }
        Ok(())
    }
}

pub fn action_to_power(
    action_index: usize,
    soc: f64,
    battery: &BatteryParams,
    actions: &[f64],
) -> Result<f64> {
    let a = *actions.get(action_index).ok_or(Error::InvalidAction {
        index: action_index,
        len: actions.len(),
    })?;
    let b = battery.rate_fraction_per_step * a;
    Ok(b.clamp(battery.soc_min - soc, battery.soc_max - soc))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardBreakdown {
    pub energy_cost: f64,
    pub fr_penalty: f64,
    pub degradation_cost: f64,
    pub reward: f64,
}

impl RewardBreakdown {
    pub fn from_costs(energy_cost: f64, fr_penalty: f64, degradation_cost: f64) -> Self {
        Self {
            energy_cost,
            fr_penalty,
            degradation_cost,
            reward: -(energy_cost + fr_penalty + degradation_cost),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureScale {
    pub price_scale: f64,
}

impl Default for FeatureScale {
    fn default() -> Self {
        Self { price_scale: 100.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub t: usize,
    pub price: f64,
    pub fr: f64,
    pub soc: f64,
    pub tracker: CycleTracker,
}

pub fn observe(state: &EnvState, norm: &FeatureScale) -> Observation {
    let sp = state.tracker.observe_sps();
    [
        state.price / norm.price_scale,
        state.fr,
        state.soc,
        sp.c0,
        sp.c1,
        sp.c2,
    ]
}

/// One row of a rollout trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub price: f64,
    pub fr: f64,
    pub action: usize,
    pub b: f64,
    /// SoC after the step.
    pub soc: f64,
    pub costs: RewardBreakdown,
}

impl StepRecord {
    pub const CSV_HEADER: [&'static str; 10] =
        ["t", "p", "f", "a", "b", "soc", "h_e", "h_f", "h_d", "r"];

    pub fn csv_fields(&self) -> [String; 10] {
        [
            self.t.to_string(),
            self.price.to_string(),
            self.fr.to_string(),
            self.action.to_string(),
            self.b.to_string(),
            self.soc.to_string(),
            self.costs.energy_cost.to_string(),
            self.costs.fr_penalty.to_string(),
            self.costs.degradation_cost.to_string(),
            self.costs.reward.to_string(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub battery: BatteryParams,
    pub costs: CostParams,
    pub actions: Vec<f64>,
    pub scale: FeatureScale,
    pub initial_soc: f64,
    /// Steps per episode; `None` runs to the end of the profile.
    pub horizon: Option<usize>,
    /// Keep a [`StepRecord`] per step.
    pub record_trace: bool,
}

impl EnvConfig {
    pub fn new(battery: BatteryParams, costs: CostParams) -> Self {
        Self {
            battery,
            costs,
            actions: DEFAULT_ACTIONS.to_vec(),
            scale: FeatureScale::default(),
            initial_soc: 0.5,
            horizon: None,
            record_trace: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.costs.validate()?;
        if self.actions.is_empty() {
            return Err(Error::Empty("action set".into()));
        }
        if let Some(a) = self.actions.iter().find(|a| !(-1.0..=1.0).contains(*a)) {
            return Err(Error::domain(format!("action level {a} outside [-1, 1]")));
        }
        if !(self.battery.soc_min..=self.battery.soc_max).contains(&self.initial_soc) {
            return Err(Error::domain(format!(
                "initial SoC {} outside [{}, {}]",
                self.initial_soc, self.battery.soc_min, self.battery.soc_max
            )));
        }
        if !(self.scale.price_scale > 0.0) {
            return Err(Error::domain("price scale must be positive"));
        }
        Ok(())
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: RewardBreakdown,
    pub done: bool,
}

/// Minimal episodic interface the trainer drives.
pub trait Environment {
    fn num_actions(&self) -> usize;
    /// Number of steps in one episode.
    fn horizon(&self) -> usize;
    fn observe(&self) -> Observation;
    fn step(&mut self, action: usize) -> Result<StepOutcome>;
}

#[derive(Debug, Clone)]
pub struct BatteryEnv {
    profile: Arc<MarketProfile>,
    config: EnvConfig,
    state: EnvState,
    horizon: usize,
    soc_history: Vec<f64>,
    trace: Vec<StepRecord>,
}

impl BatteryEnv {
    pub fn new(profile: Arc<MarketProfile>, config: EnvConfig) -> Result<Self> {
        config.validate()?;
        if profile.is_empty() {
            return Err(Error::Empty(format!("profile {}", profile.id)));
        }
        if (profile.dt_seconds - config.battery.dt_seconds).abs() > 1e-9 {
            return Err(Error::domain(format!(
                "profile step {} s does not match battery step {} s",
                profile.dt_seconds, config.battery.dt_seconds
            )));
        }
        let horizon = config.horizon.unwrap_or(profile.len()).min(profile.len());
        let tracker = CycleTracker::new(config.initial_soc, config.costs.degradation)?;
        let state = EnvState {
            t: 0,
            price: profile.price[0],
            fr: profile.fr[0],
            soc: config.initial_soc,
            tracker,
        };
        let mut soc_history = Vec::with_capacity(horizon + 1);
        soc_history.push(config.initial_soc);
        Ok(Self {
            profile,
            config,
            state,
            horizon,
            soc_history,
            trace: Vec::new(),
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn profile(&self) -> &MarketProfile {
        &self.profile
    }

    /// SoC at every step so far, starting with the initial value.
    pub fn soc_history(&self) -> &[f64] {
        &self.soc_history
    }

    pub fn trace(&self) -> &[StepRecord] {
        &self.trace
    }

    pub fn is_done(&self) -> bool {
        self.state.t >= self.horizon
    }

    /// Replaces the linear-mode coefficient (used between episodes).
    pub fn set_linear_coefficient(&mut self, a_d: f64) {
        self.config.costs.a_d = a_d;
    }

    pub fn step_detailed(&mut self, action: usize) -> Result<(StepOutcome, StepRecord)> {
        if self.is_done() {
            return Err(Error::EpisodeFinished(self.state.t));
        }
        let battery = &self.config.battery;
        let costs = &self.config.costs;
        let soc = self.state.soc;
        let b = action_to_power(action, soc, battery, &self.config.actions)?;
        let next_soc = (soc + b).clamp(battery.soc_min, battery.soc_max);

        let e_mwh = battery.energy_mwh();
        let energy_cost = self.state.price * b * e_mwh;
        let fr_penalty =
            costs.delta * (battery.rate_fraction_per_step * self.state.fr - b).abs() * e_mwh;
        let increment = self.state.tracker.step_to(next_soc);
        let degradation_cost = match costs.mode {
            DegradationMode::Cycle => costs.degradation_scale * increment,
            DegradationMode::Linear => costs.degradation_scale * costs.a_d * b.abs(),
        };
        let reward = RewardBreakdown::from_costs(energy_cost, fr_penalty, degradation_cost);

        let record = StepRecord {
            t: self.state.t,
            price: self.state.price,
            fr: self.state.fr,
            action,
            b,
            soc: next_soc,
            costs: reward,
        };
        if self.config.record_trace {
            self.trace.push(record);
        }

        self.state.t += 1;
        self.state.soc = next_soc;
        let k = self.state.t.min(self.profile.len() - 1);
        self.state.price = self.profile.price[k];
        self.state.fr = self.profile.fr[k];
        self.soc_history.push(next_soc);

        let outcome = StepOutcome {
            observation: observe(&self.state, &self.config.scale),
            reward,
            done: self.is_done(),
        };
        Ok((outcome, record))
    }
}

impl Environment for BatteryEnv {
    fn num_actions(&self) -> usize {
        self.config.actions.len()
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn observe(&self) -> Observation {
        observe(&self.state, &self.config.scale)
    }

    fn step(&mut self, action: usize) -> Result<StepOutcome> {
        self.step_detailed(action).map(|(o, _)| o)
    }
}
