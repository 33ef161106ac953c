//! Market profiles, synthetic data, weight files and run configuration.
//!
//! Input CSVs use `unix_epoch_seconds,value` with a one-line header and
//! strictly increasing timestamps. Prices are 5-minute interval values and are
//! forward-filled onto the simulation grid; the regulation signal arrives every
//! 2 seconds and is block-averaged down to the simulation step. A trailing
//! partial averaging window is dropped.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dqn::QNetwork;
use crate::error::{Error, Result};

pub const PRICE_CADENCE_SECONDS: i64 = 300;
pub const FR_CADENCE_SECONDS: i64 = 2;
pub const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Debug, Clone, PartialEq)]
pub struct MarketProfile {
    pub id: String,
    pub dt_seconds: f64,
    /// $/MWh per step.
    pub price: Vec<f64>,
    /// Regulation signal in [−1, 1] per step.
    pub fr: Vec<f64>,
}

impl MarketProfile {
    pub fn new(
        id: impl Into<String>,
        dt_seconds: f64,
        price: Vec<f64>,
        fr: Vec<f64>,
    ) -> Result<Self> {
        if price.len() != fr.len() {
            return Err(Error::domain(format!(
                "price has {} steps but fr has {}",
                price.len(),
                fr.len()
            )));
        }
        if !(dt_seconds > 0.0 && dt_seconds.is_finite()) {
            return Err(Error::domain("dt_seconds must be positive"));
        }
        if let Some(p) = price.iter().find(|p| !p.is_finite()) {
            return Err(Error::domain(format!("non-finite price {p}")));
        }
        if let Some(f) = fr.iter().find(|f| !(-1.0..=1.0).contains(*f)) {
            return Err(Error::domain(format!(
                "regulation signal {f} outside [-1, 1]"
            )));
        }
        Ok(Self {
            id: id.into(),
            dt_seconds,
            price,
            fr,
        })
    }

    pub fn len(&self) -> usize {
        self.price.len()
    }

    pub fn is_empty(&self) -> bool {
        self.price.is_empty()
    }
}

/// `(timestamp, value)` rows of a time-series CSV.
pub fn read_series<R: Read>(reader: R, source: &str) -> Result<Vec<(i64, f64)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<(i64, f64)> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Parse {
                path: source.into(),
                line,
                message: e.to_string(),
            }
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let parse_err = |message: String| Error::Parse {
            path: source.into(),
            line,
            message,
        };
        if record.len() != 2 {
            return Err(parse_err(format!(
                "expected 2 columns, found {}",
                record.len()
            )));
        }
        let ts: i64 = record[0]
            .parse()
            .map_err(|e| parse_err(format!("timestamp {:?}: {e}", &record[0])))?;
        let value: f64 = record[1]
            .parse()
            .map_err(|e| parse_err(format!("value {:?}: {e}", &record[1])))?;
        if !value.is_finite() {
            return Err(parse_err(format!("non-finite value {value}")));
        }
        if let Some(&(prev, _)) = rows.last() {
            if ts <= prev {
                return Err(parse_err(format!(
                    "timestamp {ts} does not increase (previous {prev})"
                )));
            }
        }
        rows.push((ts, value));
    }
    Ok(rows)
}

fn read_series_file(path: &Path) -> Result<Vec<(i64, f64)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_series(file, &path.display().to_string())
}

fn check_cadence(rows: &[(i64, f64)], cadence: i64, source: &str) -> Result<()> {
    if let Some(w) = rows.windows(2).find(|w| w[1].0 - w[0].0 != cadence) {
        return Err(Error::Cadence {
            path: source.into(),
            message: format!(
                "expected {cadence} s between rows, found {} s at t={}",
                w[1].0 - w[0].0,
                w[1].0
            ),
        });
    }
    Ok(())
}

/// Block means over `window` samples; a trailing partial window is dropped.
pub fn resample_fr(fr: &[f64], window: usize) -> Result<Vec<f64>> {
    if fr.is_empty() {
        return Err(Error::Empty("regulation signal".into()));
    }
    if window == 0 {
        return Err(Error::domain("resampling window must be positive"));
    }
    if fr.len() < window {
        return Err(Error::Empty(format!(
            "regulation signal shorter than one {window}-sample window"
        )));
    }
    Ok(fr
        .chunks_exact(window)
        .map(|c| (c.iter().sum::<f64>() / window as f64).clamp(-1.0, 1.0))
        .collect())
}

/// Builds a profile on a `target_dt` grid from raw price and FR series.
pub fn profile_from_series(
    id: &str,
    price: &[(i64, f64)],
    fr: &[(i64, f64)],
    target_dt: u32,
    sources: (&str, &str),
) -> Result<MarketProfile> {
    if price.is_empty() {
        return Err(Error::Empty(format!("price series {}", sources.0)));
    }
    if fr.is_empty() {
        return Err(Error::Empty(format!("regulation series {}", sources.1)));
    }
    check_cadence(price, PRICE_CADENCE_SECONDS, sources.0)?;
    check_cadence(fr, FR_CADENCE_SECONDS, sources.1)?;
    let target_dt = i64::from(target_dt);
    if target_dt <= 0 || target_dt % FR_CADENCE_SECONDS != 0 {
        return Err(Error::domain(format!(
            "target step {target_dt} s must be a positive multiple of {FR_CADENCE_SECONDS} s"
        )));
    }
    let window = (target_dt / FR_CADENCE_SECONDS) as usize;
    let values: Vec<f64> = fr.iter().map(|r| r.1).collect();
    if let Some(v) = values.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
        return Err(Error::domain(format!(
            "regulation value {v} outside [-1, 1]"
        )));
    }
    let fr_steps = resample_fr(&values, window)?;

    let start = fr[0].0;
    let price_end = price.last().expect("nonempty").0 + PRICE_CADENCE_SECONDS;
    let mut prices = Vec::with_capacity(fr_steps.len());
    let mut cursor = 0usize;
    for k in 0..fr_steps.len() {
        let t = start + k as i64 * target_dt;
        if t < price[0].0 || t >= price_end {
            return Err(Error::domain(format!(
                "price series {} does not cover t={t}",
                sources.0
            )));
        }
        while cursor + 1 < price.len() && price[cursor + 1].0 <= t {
            cursor += 1;
        }
        prices.push(price[cursor].1);
    }
    MarketProfile::new(id, target_dt as f64, prices, fr_steps)
}

pub fn load_profile(
    price_csv: impl AsRef<Path>,
    fr_csv: impl AsRef<Path>,
    target_dt: u32,
) -> Result<MarketProfile> {
    let (pp, fp) = (price_csv.as_ref(), fr_csv.as_ref());
    let price = read_series_file(pp)?;
    let fr = read_series_file(fp)?;
    let id = pp
        .file_stem()
        .map(|s| s.to_string_lossy().trim_end_matches("_price").to_string())
        .unwrap_or_else(|| "profile".into());
    profile_from_series(
        &id,
        &price,
        &fr,
        target_dt,
        (&pp.display().to_string(), &fp.display().to_string()),
    )
}

pub fn write_series<W: Write>(writer: W, start: i64, cadence: i64, values: &[f64]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["unix_epoch_seconds", "value"])?;
    for (k, v) in values.iter().enumerate() {
        wtr.write_record([(start + k as i64 * cadence).to_string(), v.to_string()])?;
    }
    wtr.flush().map_err(|e| Error::io("<series>", e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PriceShape {
    /// `mean + amplitude·cos(2π(h − peak_hour)/24)`.
    Daily { peak_hour: f64 },
    /// `low` outside `[from_hour, until_hour)`, `high` inside; mean and
    /// amplitude are ignored.
    TwoLevel {
        low: f64,
        high: f64,
        from_hour: f64,
        until_hour: f64,
    },
}

/// Seeded generator for a day of prices and regulation signal.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub dt_seconds: u32,
    pub day_seconds: u32,
    pub shape: PriceShape,
    pub price_mean: f64,
    pub price_amplitude: f64,
    /// AR(1) coefficient of the price deviation per 5-minute interval.
    pub price_ar: f64,
    pub price_noise: f64,
    /// Standard deviation of the regulation draws before clipping.
    pub fr_noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            dt_seconds: 10,
            day_seconds: SECONDS_PER_DAY as u32,
            shape: PriceShape::Daily { peak_hour: 17.0 },
            price_mean: 35.0,
            price_amplitude: 20.0,
            price_ar: 0.8,
            price_noise: 4.0,
            fr_noise: 0.5,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dt_seconds == 0
            || self.day_seconds == 0
            || !self.day_seconds.is_multiple_of(self.dt_seconds)
        {
            return Err(Error::domain(
                "day length must be a positive multiple of the step",
            ));
        }
        if !(0.0..1.0).contains(&self.price_ar) {
            return Err(Error::domain("price AR coefficient must lie in [0, 1)"));
        }
        if !(self.price_noise >= 0.0 && self.fr_noise >= 0.0) {
            return Err(Error::domain("noise scales must be >= 0"));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.day_seconds / self.dt_seconds) as usize
    }

    fn shape_at(&self, seconds: f64) -> f64 {
        let hour = seconds / 3600.0;
        match self.shape {
            PriceShape::Daily { peak_hour } => {
                self.price_mean
                    + self.price_amplitude
                        * (2.0 * std::f64::consts::PI * (hour - peak_hour) / 24.0).cos()
            }
            PriceShape::TwoLevel {
                low,
                high,
                from_hour,
                until_hour,
            } => {
                if (from_hour..until_hour).contains(&hour) {
                    high
                } else {
                    low
                }
            }
        }
    }

    /// One value per 5-minute interval covering the day.
    pub fn interval_prices(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let intervals = (self.day_seconds as u64).div_ceil(PRICE_CADENCE_SECONDS as u64) as usize;
        let noise = Normal::new(0.0, self.price_noise.max(0.0)).expect("valid normal");
        let mut deviation = 0.0;
        (0..intervals)
            .map(|k| {
                if self.price_noise > 0.0 {
                    deviation = self.price_ar * deviation + noise.sample(rng);
                }
                self.shape_at((k as i64 * PRICE_CADENCE_SECONDS) as f64) + deviation
            })
            .collect()
    }

    /// Regulation draws at `cadence_seconds` covering the day.
    pub fn fr_draws(&self, rng: &mut ChaCha8Rng, cadence_seconds: u32) -> Vec<f64> {
        let n = (self.day_seconds / cadence_seconds) as usize;
        if self.fr_noise == 0.0 {
            return vec![0.0; n];
        }
        let noise = Normal::new(0.0, self.fr_noise).expect("valid normal");
        (0..n).map(|_| noise.sample(rng).clamp(-1.0, 1.0)).collect()
    }
}

/// A synthetic day directly on the `spec.dt_seconds` grid.
pub fn synth_profile(spec: &SyntheticSpec) -> Result<MarketProfile> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let intervals = spec.interval_prices(&mut rng);
    let steps = spec.steps();
    let dt = i64::from(spec.dt_seconds);
    let price: Vec<f64> = (0..steps)
        .map(|k| intervals[(k as i64 * dt / PRICE_CADENCE_SECONDS) as usize])
        .collect();
    let fr = spec.fr_draws(&mut rng, spec.dt_seconds);
    MarketProfile::new(
        format!("synth-{}", spec.seed),
        f64::from(spec.dt_seconds),
        price,
        fr,
    )
}

/// Raw series for one synthetic day: 5-minute prices and 2-second FR.
pub fn synth_raw_series(
    spec: &SyntheticSpec,
    day_start: i64,
) -> Result<(Vec<(i64, f64)>, Vec<(i64, f64)>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let prices = spec.interval_prices(&mut rng);
    let fr = spec.fr_draws(&mut rng, FR_CADENCE_SECONDS as u32);
    let price_rows = prices
        .into_iter()
        .enumerate()
        .map(|(k, v)| (day_start + k as i64 * PRICE_CADENCE_SECONDS, v))
        .collect();
    let fr_rows = fr
        .into_iter()
        .enumerate()
        .map(|(k, v)| (day_start + k as i64 * FR_CADENCE_SECONDS, v))
        .collect();
    Ok((price_rows, fr_rows))
}

const WEIGHTS_MAGIC: &[u8; 8] = b"RFQNET\0\0";
const WEIGHTS_VERSION: u32 = 1;

/// Serializes a network: magic, version, layer count, layer sizes (u32 LE),
/// then per layer its row-major weights and biases as f64 LE.
pub fn write_weights<W: Write>(mut writer: W, net: &QNetwork) -> std::io::Result<()> {
    writer.write_all(WEIGHTS_MAGIC)?;
    writer.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
    writer.write_all(&(net.sizes().len() as u32).to_le_bytes())?;
    for &s in net.sizes() {
        writer.write_all(&(s as u32).to_le_bytes())?;
    }
    for p in net.params() {
        writer.write_all(&p.to_le_bytes())?;
    }
    writer.flush()
}

pub fn read_weights(bytes: &[u8], expected_sizes: Option<&[usize]>) -> Result<QNetwork> {
    let mut cursor = bytes;
    let mut take = |n: usize| -> Result<&[u8]> {
        if cursor.len() < n {
            return Err(Error::WeightsTruncated);
        }
        let (head, tail) = cursor.split_at(n);
        cursor = tail;
        Ok(head)
    };
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));

    if take(8)? != WEIGHTS_MAGIC {
        return Err(Error::WeightsVersion);
    }
    if u32_at(take(4)?) != WEIGHTS_VERSION {
        return Err(Error::WeightsVersion);
    }
    let n_sizes = u32_at(take(4)?) as usize;
    if !(2..=64).contains(&n_sizes) {
        return Err(Error::WeightsFormat(format!("{n_sizes} layer sizes")));
    }
    let mut sizes = Vec::with_capacity(n_sizes);
    for _ in 0..n_sizes {
        sizes.push(u32_at(take(4)?) as usize);
    }
    if let Some(expected) = expected_sizes {
        if expected != sizes.as_slice() {
            return Err(Error::Shape {
                expected: expected.to_vec(),
                found: sizes,
            });
        }
    }
    let count = crate::dqn::network::param_count(&sizes);
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        params.push(f64::from_le_bytes(take(8)?.try_into().expect("8 bytes")));
    }
    if !cursor.is_empty() {
        return Err(Error::WeightsFormat(format!(
            "{} trailing bytes",
            cursor.len()
        )));
    }
    QNetwork::from_parts(sizes, params)
}

pub fn save_weights(net: &QNetwork, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_weights(std::io::BufWriter::new(file), net).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>, expected_sizes: Option<&[usize]>) -> Result<QNetwork> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_weights(&bytes, expected_sizes)
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        out.insert(key, value.trim().to_string());
    }
    Ok(out)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<BTreeMap<String, String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}
