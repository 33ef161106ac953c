//! Battery control with exact per-step rainflow degradation.
//!
//! * [`rainflow`]: offline cycle counting and costing of a full trajectory.
//! * [`cycle`]: the online switching-point tracker giving per-step costs.
//! * [`env`]: the battery MDP with energy, regulation and degradation costs.
//! * [`dqn`]: a from-scratch deep Q-network learner.
//! * [`data`]: profiles, synthetic data, weight files and config.
//! * [`report`]: evaluation, CD/LD comparison and validation oracles.

pub mod cycle;
pub mod data;
pub mod dqn;
pub mod env;
pub mod error;
pub mod exec;
pub mod rainflow;
pub mod report;

pub use cycle::{CycleTracker, SpTriple};
pub use data::{MarketProfile, SyntheticSpec};
pub use dqn::{QNetwork, TrainConfig};
pub use env::{BatteryEnv, BatteryParams, CostParams, DegradationMode, EnvConfig, Environment};
pub use error::{Error, Result};
pub use exec::Exec;
pub use rainflow::{cycle_cost, DegradationParams, SocTrajectory};
