use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use rainflow_dqn::data::{self, PriceShape, SyntheticSpec};
use rainflow_dqn::dqn::{ProfileOrder, TrainConfig};
use rainflow_dqn::report::{self, EvalOptions, FuzzConfig};
use rainflow_dqn::{
    BatteryParams, CostParams, DegradationMode, DegradationParams, EnvConfig, Error, Exec,
    MarketProfile,
};

#[derive(Parser)]
#[command(
    name = "rainflow-dqn",
    version,
    about = "Battery control with exact rainflow degradation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic price (5 min) and regulation (2 s) CSVs, one pair per day.
    GenData(Common),
    /// Train a Q-network on one or more days.
    Train(Common),
    /// Greedy evaluation of saved weights, one report row per day.
    Evaluate(Common),
    /// Per-day CD − LD reward differences from two report files.
    Compare {
        cd_reports: PathBuf,
        ld_reports: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Fuzz the per-step degradation against whole-trajectory rainflow.
    VerifyDegradation(Common),
    /// Best arbitrage value for each price day by dynamic programming.
    DpOracle(Common),
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Price CSV (`unix_epoch_seconds,value`); repeat for several days.
    #[arg(long)]
    price: Vec<PathBuf>,
    /// Regulation CSV, paired with `--price` in order.
    #[arg(long)]
    fr: Vec<PathBuf>,
    /// `key=value` file; its values override flags of the same name.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Simulation step in seconds (training 10, evaluation 2, DP 300 by default).
    #[arg(long)]
    dt: Option<u32>,
}

/// Every tunable, after defaults, flags and the config file are merged.
#[derive(Debug, Clone)]
struct Settings {
    mode: DegradationMode,
    seed: u64,
    out_dir: PathBuf,
    episodes: usize,
    dt: u32,
    steps_per_episode: Option<usize>,
    batch_size: usize,
    learning_rate: f64,
    gamma: f64,
    epsilon_init: f64,
    epsilon_floor: f64,
    kappa: Option<f64>,
    target_interval: usize,
    replay_capacity: usize,
    hidden: Vec<usize>,
    profile_order: ProfileOrder,
    alpha_d: f64,
    beta: f64,
    delta: f64,
    degradation_scale: f64,
    a_d: f64,
    capacity_kwh: f64,
    power_kw: f64,
    soc_min: f64,
    soc_max: f64,
    initial_soc: f64,
    price_scale: f64,
    days: usize,
    price_shape: String,
    price_mean: f64,
    price_amplitude: f64,
    price_ar: f64,
    price_noise: f64,
    fr_noise: f64,
    walks: usize,
    length: usize,
    max_step: f64,
    grid_step: f64,
    sequential: bool,
}

impl Default for Settings {
    fn default() -> Self {
        let t = TrainConfig::default();
        let s = SyntheticSpec::default();
        Self {
            mode: DegradationMode::Cycle,
            seed: 0,
            out_dir: PathBuf::from("."),
            episodes: t.episodes,
            dt: 10,
            steps_per_episode: None,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            gamma: t.gamma,
            epsilon_init: t.epsilon_init,
            epsilon_floor: t.epsilon_floor,
            kappa: None,
            target_interval: t.target_interval,
            replay_capacity: t.replay_capacity,
            hidden: t.hidden,
            profile_order: ProfileOrder::RoundRobin,
            alpha_d: 4.5e-3,
            beta: 1.3,
            delta: 140.0,
            degradation_scale: 1000.0,
            a_d: 0.0,
            capacity_kwh: 200.0,
            power_kw: 120.0,
            soc_min: 0.1,
            soc_max: 1.0,
            initial_soc: 0.5,
            price_scale: 100.0,
            days: 7,
            price_shape: "daily".into(),
            price_mean: s.price_mean,
            price_amplitude: s.price_amplitude,
            price_ar: s.price_ar,
            price_noise: s.price_noise,
            fr_noise: s.fr_noise,
            walks: 1000,
            length: 2000,
            max_step: 0.05,
            grid_step: 0.0,
            sequential: false,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, Error>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}={value}: {e}")))
}

impl Settings {
    fn from_common(common: &Common, default_dt: u32) -> Result<Self, Error> {
        let mut s = Settings {
            dt: default_dt,
            ..Settings::default()
        };
        if let Some(m) = &common.mode {
            s.mode = parse("mode", m)?;
        }
        if let Some(v) = common.seed {
            s.seed = v;
        }
        if let Some(v) = &common.out_dir {
            s.out_dir = v.clone();
        }
        if let Some(v) = common.episodes {
            s.episodes = v;
        }
        if let Some(v) = common.dt {
            s.dt = v;
        }
        if let Some(path) = &common.config {
            s.apply(&data::load_config(path)?)?;
        }
        Ok(s)
    }

    fn apply(&mut self, cfg: &BTreeMap<String, String>) -> Result<(), Error> {
        for (k, v) in cfg {
            match k.as_str() {
                "mode" => self.mode = parse(k, v)?,
                "seed" => self.seed = parse(k, v)?,
                "out-dir" => self.out_dir = PathBuf::from(v),
                "episodes" => self.episodes = parse(k, v)?,
                "dt" => self.dt = parse(k, v)?,
                "steps-per-episode" => self.steps_per_episode = Some(parse(k, v)?),
                "batch-size" => self.batch_size = parse(k, v)?,
                "learning-rate" => self.learning_rate = parse(k, v)?,
                "gamma" => self.gamma = parse(k, v)?,
                "epsilon-init" => self.epsilon_init = parse(k, v)?,
                "epsilon-floor" => self.epsilon_floor = parse(k, v)?,
                "kappa" => self.kappa = Some(parse(k, v)?),
                "target-interval" => self.target_interval = parse(k, v)?,
                "replay-capacity" => self.replay_capacity = parse(k, v)?,
                "hidden" => {
                    self.hidden = v
                        .split(',')
                        .map(|x| parse(k, x.trim()))
                        .collect::<Result<_, _>>()?
                }
                "profile-order" => {
                    self.profile_order = match v.as_str() {
                        "round-robin" => ProfileOrder::RoundRobin,
                        "random" => ProfileOrder::Random,
                        _ => {
                            return Err(Error::Config(format!(
                                "{k}={v}: expected round-robin or random"
                            )))
                        }
                    }
                }
                "alpha-d" => self.alpha_d = parse(k, v)?,
                "beta" => self.beta = parse(k, v)?,
                "delta" => self.delta = parse(k, v)?,
                "degradation-scale" => self.degradation_scale = parse(k, v)?,
                "a-d" => self.a_d = parse(k, v)?,
                "capacity-kwh" => self.capacity_kwh = parse(k, v)?,
                "power-kw" => self.power_kw = parse(k, v)?,
                "soc-min" => self.soc_min = parse(k, v)?,
                "soc-max" => self.soc_max = parse(k, v)?,
                "initial-soc" => self.initial_soc = parse(k, v)?,
                "price-scale" => self.price_scale = parse(k, v)?,
                "days" => self.days = parse(k, v)?,
                "price-shape" => self.price_shape = v.clone(),
                "price-mean" => self.price_mean = parse(k, v)?,
                "price-amplitude" => self.price_amplitude = parse(k, v)?,
                "price-ar" => self.price_ar = parse(k, v)?,
                "price-noise" => self.price_noise = parse(k, v)?,
                "fr-noise" => self.fr_noise = parse(k, v)?,
                "walks" => self.walks = parse(k, v)?,
                "length" => self.length = parse(k, v)?,
                "max-step" => self.max_step = parse(k, v)?,
                "grid-step" => self.grid_step = parse(k, v)?,
                "sequential" => self.sequential = parse(k, v)?,
                _ => return Err(Error::Config(format!("unknown key {k}"))),
            }
        }
        Ok(())
    }

    fn exec(&self) -> Exec {
        if self.sequential {
            Exec::Sequential
        } else {
            Exec::default()
        }
    }

    fn battery(&self, dt: f64) -> Result<BatteryParams, Error> {
        BatteryParams::from_power(
            self.capacity_kwh,
            self.power_kw,
            self.soc_min,
            self.soc_max,
            dt,
        )
    }

    fn env_config(&self, dt: f64) -> Result<EnvConfig, Error> {
        let costs = CostParams {
            delta: self.delta,
            degradation: DegradationParams::new(self.alpha_d, self.beta)?,
            degradation_scale: self.degradation_scale,
            mode: self.mode,
            a_d: self.a_d,
        };
        let mut cfg = EnvConfig::new(self.battery(dt)?, costs);
        cfg.initial_soc = self.initial_soc;
        cfg.scale.price_scale = self.price_scale;
        cfg.validate()?;
        Ok(cfg)
    }

    fn train_config(&self, steps_per_episode: usize) -> TrainConfig {
        TrainConfig {
            gamma: self.gamma,
            learning_rate: self.learning_rate,
            epsilon_init: self.epsilon_init,
            epsilon_floor: self.epsilon_floor,
            kappa: self.kappa,
            batch_size: self.batch_size,
            target_interval: self.target_interval,
            episodes: self.episodes,
            steps_per_episode: self.steps_per_episode.unwrap_or(steps_per_episode),
            replay_capacity: self.replay_capacity,
            hidden: self.hidden.clone(),
            profile_order: self.profile_order,
            seed: self.seed,
            exec: self.exec(),
            ..TrainConfig::default()
        }
    }

    fn synthetic(&self, day: usize) -> Result<SyntheticSpec, Error> {
        let shape = match self.price_shape.as_str() {
            "daily" => PriceShape::Daily { peak_hour: 17.0 },
            "two-level" => PriceShape::TwoLevel {
                low: self.price_mean - self.price_amplitude,
                high: self.price_mean + self.price_amplitude,
                from_hour: 12.0,
                until_hour: 24.0,
            },
            other => {
                return Err(Error::Config(format!(
                    "price-shape={other}: expected daily or two-level"
                )))
            }
        };
        Ok(SyntheticSpec {
            seed: self.seed.wrapping_add(day as u64),
            dt_seconds: 2,
            shape,
            price_mean: self.price_mean,
            price_amplitude: self.price_amplitude,
            price_ar: self.price_ar,
            price_noise: self.price_noise,
            fr_noise: self.fr_noise,
            ..SyntheticSpec::default()
        })
    }
}

fn load_profiles(common: &Common, dt: u32) -> Result<Vec<Arc<MarketProfile>>, Error> {
    if common.price.is_empty() {
        return Err(Error::Config(
            "at least one --price/--fr pair is required".into(),
        ));
    }
    if common.price.len() != common.fr.len() {
        return Err(Error::Config(format!(
            "{} --price files but {} --fr files",
            common.price.len(),
            common.fr.len()
        )));
    }
    let mut profiles = common
        .price
        .iter()
        .zip(&common.fr)
        .map(|(p, f)| data::load_profile(p, f, dt).map(Arc::new))
        .collect::<Result<Vec<_>, _>>()?;
    profiles.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(profiles)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Error> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| io_err(&path, e))
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn gen_data(s: &Settings) -> Result<(), Error> {
    const DAY_ZERO: i64 = 1_577_836_800;
    for day in 0..s.days {
        let spec = s.synthetic(day)?;
        let start = DAY_ZERO + day as i64 * data::SECONDS_PER_DAY;
        let (price, fr) = data::synth_raw_series(&spec, start)?;
        let values = |rows: &[(i64, f64)]| rows.iter().map(|r| r.1).collect::<Vec<_>>();
        data::write_series(
            create(&s.out_dir, &format!("day{day:03}_price.csv"))?,
            start,
            data::PRICE_CADENCE_SECONDS,
            &values(&price),
        )?;
        data::write_series(
            create(&s.out_dir, &format!("day{day:03}_fr.csv"))?,
            start,
            data::FR_CADENCE_SECONDS,
            &values(&fr),
        )?;
    }
    println!("wrote {} days to {}", s.days, s.out_dir.display());
    Ok(())
}

fn train_cmd(common: &Common, s: &Settings) -> Result<(), Error> {
    let profiles = load_profiles(common, s.dt)?;
    let env_cfg = s.env_config(f64::from(s.dt))?;
    let horizon = profiles.iter().map(|p| p.len()).min().unwrap_or(0);
    let train_cfg = s.train_config(horizon);
    let outcome = report::train_battery(&profiles, &env_cfg, &train_cfg)?;

    let mut wtr = csv::Writer::from_writer(create(&s.out_dir, "train_trace.csv")?);
    wtr.write_record(rainflow_dqn::dqn::EpisodeTrace::CSV_HEADER)?;
    for row in &outcome.trace {
        wtr.write_record(row.csv_fields())?;
    }
    wtr.flush().map_err(|e| io_err(&s.out_dir, e))?;

    let weights = common
        .weights
        .clone()
        .unwrap_or_else(|| s.out_dir.join("weights.bin"));
    data::save_weights(&outcome.network, &weights)?;
    let last = outcome.trace.last().map_or(f64::NAN, |t| t.total_reward);
    println!(
        "trained {} episodes ({} mode); last episode reward {last:.4}; weights at {}",
        outcome.trace.len(),
        s.mode,
        weights.display()
    );
    Ok(())
}

fn evaluate_cmd(common: &Common, s: &Settings) -> Result<(), Error> {
    let weights = common
        .weights
        .as_ref()
        .ok_or_else(|| Error::Config("--weights is required".into()))?;
    let dt = s.dt;
    let profiles = load_profiles(common, dt)?;
    let env_cfg = s.env_config(f64::from(dt))?;
    let net = data::load_weights(weights, None)?;
    let evals = report::evaluate(
        &net,
        &profiles,
        &env_cfg,
        EvalOptions {
            record_traces: true,
            exec: s.exec(),
        },
    )?;
    let reports: Vec<_> = evals.iter().map(|e| e.report.clone()).collect();
    report::write_reports_csv(create(&s.out_dir, "episode_reports.csv")?, &reports)?;
    for e in &evals {
        let name = format!("soc_trace_{}.csv", e.report.profile_id);
        report::write_trace_csv(create(&s.out_dir, &name)?, &e.trace)?;
    }
    let total: f64 = reports.iter().map(|r| r.total_reward).sum();
    println!("evaluated {} days; total reward {total:.4}", reports.len());
    Ok(())
}

fn compare_cmd(cd: &Path, ld: &Path, s: &Settings) -> Result<(), Error> {
    let read = |p: &Path| -> Result<_, Error> {
        let f = File::open(p).map_err(|e| io_err(p, e))?;
        report::read_report_rewards(f, &p.display().to_string())
    };
    let stats = report::compare_report_rows(&read(cd)?, &read(ld)?)?;
    report::write_comparison_csv(create(&s.out_dir, "comparison.csv")?, &stats)?;
    println!(
        "mean {:.4} max {:.4} min {:.4} mean+ {:.4} mean- {:.4} cd>=ld {:.2}%",
        stats.mean,
        stats.max,
        stats.min,
        stats.mean_positive,
        stats.mean_negative,
        100.0 * stats.fraction_cd_ge_ld
    );
    Ok(())
}

fn verify_cmd(s: &Settings) -> Result<bool, Error> {
    let cfg = FuzzConfig {
        walks: s.walks,
        length: s.length,
        seed: s.seed,
        max_step: s.max_step,
        soc_min: s.soc_min,
        soc_max: s.soc_max,
        params: DegradationParams::new(s.alpha_d, s.beta)?,
        tolerance: 1e-9,
    };
    let summary = report::verify_degradation(&cfg, s.exec())?;
    println!(
        "{}: {} walks x {} steps, max relative deviation {:.3e} (walk {})",
        if summary.passed { "PASS" } else { "FAIL" },
        summary.walks,
        s.length,
        summary.max_relative_deviation,
        summary.worst_walk
    );
    Ok(summary.passed)
}

fn dp_cmd(common: &Common, s: &Settings) -> Result<(), Error> {
    let profiles = load_profiles(common, s.dt)?;
    let battery = s.battery(f64::from(s.dt))?;
    let grid = if s.grid_step > 0.0 {
        s.grid_step
    } else {
        battery.rate_fraction_per_step
    };
    let env_cfg = s.env_config(f64::from(s.dt))?;
    for p in &profiles {
        let v = report::dp_arbitrage_oracle(
            &p.price,
            &battery,
            &env_cfg.actions,
            grid,
            s.initial_soc,
            s.exec(),
        )?;
        println!("{},{v}", p.id);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool, Error> {
    match &cli.command {
        Command::GenData(c) => gen_data(&Settings::from_common(c, 10)?).map(|_| true),
        Command::Train(c) => train_cmd(c, &Settings::from_common(c, 10)?).map(|_| true),
        Command::Evaluate(c) => evaluate_cmd(c, &Settings::from_common(c, 2)?).map(|_| true),
        Command::Compare {
            cd_reports,
            ld_reports,
            common,
        } => compare_cmd(cd_reports, ld_reports, &Settings::from_common(common, 10)?).map(|_| true),
        Command::VerifyDegradation(c) => verify_cmd(&Settings::from_common(c, 10)?),
        Command::DpOracle(c) => dp_cmd(c, &Settings::from_common(c, 300)?).map(|_| true),
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Parse { .. }
        | Error::Cadence { .. }
        | Error::Config(_)
        | Error::Io { .. }
        | Error::Csv(_)
        | Error::WeightsVersion
        | Error::WeightsTruncated
        | Error::WeightsFormat(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
