//! Offline rainflow cycle counting over a complete SoC trajectory.
//!
//! This is the reference against which the online [`crate::cycle`] engine is
//! checked. Cycles are extracted with the four-point rule on a stack of
//! turning points; whatever remains on the stack afterwards is counted as
//! half cycles, one per residual stroke.
//!
//! Cost convention: each half-stroke of depth `d` costs `Φ(d) − Φ(0)`, and a
//! full cycle is two half-strokes. The `Φ(0)` offset is what a per-step
//! telescoping sum starting from zero produces, so the offline and online
//! totals agree exactly.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradationParams {
    pub alpha_d: f64,
    pub beta: f64,
}

impl Default for DegradationParams {
    fn default() -> Self {
        Self {
            alpha_d: 4.5e-3,
            beta: 1.3,
        }
    }
}

impl DegradationParams {
    pub fn new(alpha_d: f64, beta: f64) -> Result<Self> {
        if !(alpha_d > 0.0 && alpha_d.is_finite()) {
            return Err(Error::domain(format!(
                "alpha_d must be positive, got {alpha_d}"
            )));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::domain(format!("beta must be positive, got {beta}")));
        }
        Ok(Self { alpha_d, beta })
    }

    /// Cost of a cycle of normalized depth `d`, `α_d · e^(β·d)`.
    pub fn cycle_cost(&self, depth: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&depth) {
            return Err(Error::domain(format!("cycle depth {depth} outside [0, 1]")));
        }
        Ok(self.phi(depth))
    }

    /// Unchecked `Φ`; callers guarantee the depth is a valid SoC difference.
    #[inline]
    pub(crate) fn phi(&self, depth: f64) -> f64 {
        self.alpha_d * (self.beta * depth).exp()
    }

    /// Cost of one half-stroke of depth `d` under the offset convention.
    #[inline]
    pub fn half_stroke_cost(&self, depth: f64) -> f64 {
        self.phi(depth) - self.alpha_d
    }
}

pub fn cycle_cost(depth: f64, params: &DegradationParams) -> Result<f64> {
    params.cycle_cost(depth)
}

/// A normalized state-of-charge series sampled every `dt_seconds`.
#[derive(Debug, Clone, PartialEq)]
pub struct SocTrajectory {
    soc: Vec<f64>,
    dt_seconds: f64,
}

impl SocTrajectory {
    pub fn new(soc: Vec<f64>, dt_seconds: f64) -> Result<Self> {
        if soc.is_empty() {
            return Err(Error::Empty("SoC trajectory".into()));
        }
        if !(dt_seconds > 0.0 && dt_seconds.is_finite()) {
            return Err(Error::domain(format!(
                "dt_seconds must be positive, got {dt_seconds}"
            )));
        }
        if let Some((i, v)) = soc
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::domain(format!("SoC[{i}] = {v} outside [0, 1]")));
        }
        Ok(Self { soc, dt_seconds })
    }

    pub fn soc(&self) -> &[f64] {
        &self.soc
    }

    pub fn dt_seconds(&self) -> f64 {
        self.dt_seconds
    }

    pub fn len(&self) -> usize {
        self.soc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.soc.is_empty()
    }

    /// Σ |Δsoc| over consecutive samples.
    pub fn throughput(&self) -> f64 {
        self.soc.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
    }

    /// Reads either one SoC value per line or `t,soc` pairs. A non-numeric
    /// first line is treated as a header.
    pub fn read_csv<R: Read>(reader: R, dt_seconds: f64, source: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut soc = Vec::new();
        for (n, record) in rdr.records().enumerate() {
            let record = record?;
            let line = record.position().map_or(n as u64 + 1, |p| p.line());
            let field = match record.len() {
                1 => &record[0],
                2 => &record[1],
                k => {
                    return Err(Error::Parse {
                        path: source.into(),
                        line,
                        message: format!("expected 1 or 2 columns, found {k}"),
                    })
                }
            };
            if field.is_empty() && record.len() == 1 {
                continue;
            }
            match field.parse::<f64>() {
                Ok(v) if v.is_finite() => soc.push(v),
                Ok(v) => {
                    return Err(Error::Parse {
                        path: source.into(),
                        line,
                        message: format!("non-finite value {v}"),
                    })
                }
                Err(_) if n == 0 => continue,
                Err(e) => {
                    return Err(Error::Parse {
                        path: source.into(),
                        line,
                        message: format!("{field:?}: {e}"),
                    })
                }
            }
        }
        Self::new(soc, dt_seconds)
    }

    pub fn load(path: impl AsRef<Path>, dt_seconds: f64) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file, dt_seconds, &path.display().to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CycleKind {
    Full,
    Half,
}

impl CycleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CycleKind::Full => "full",
            CycleKind::Half => "half",
        }
    }

    /// Number of half-strokes the cycle stands for.
    pub fn half_strokes(self) -> usize {
        match self {
            CycleKind::Full => 2,
            CycleKind::Half => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleRecord {
    pub kind: CycleKind,
    pub depth: f64,
    pub start_index: usize,
    pub end_index: usize,
}

impl CycleRecord {
    /// Depth of discharge counted per half-stroke (2·depth for a full cycle).
    pub fn depth_of_discharge(&self) -> f64 {
        self.kind.half_strokes() as f64 * self.depth
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RainflowResult {
    pub cycles: Vec<CycleRecord>,
    pub total_cost: f64,
    pub throughput: f64,
}

/// Local extrema of the trajectory, including both endpoints. Runs of equal
/// values collapse onto their first index.
pub fn extract_turning_points(traj: &SocTrajectory) -> Vec<(usize, f64)> {
    turning_points(traj.soc())
}

pub(crate) fn turning_points(soc: &[f64]) -> Vec<(usize, f64)> {
    let mut points: Vec<(usize, f64)> = Vec::new();
    let Some(&first) = soc.first() else {
        return points;
    };
    points.push((0, first));
    // +1 rising, -1 falling, 0 not yet moved
    let mut direction = 0i8;
    for (i, &v) in soc.iter().enumerate().skip(1) {
        let last = points.last().expect("nonempty").1;
        if v == last {
            continue;
        }
        let step_dir = if v > last { 1 } else { -1 };
        if direction == 0 || step_dir != direction {
            points.push((i, v));
            direction = step_dir;
        } else {
            // same direction: the running extremum moves forward
            *points.last_mut().expect("nonempty") = (i, v);
        }
    }
    points
}

/// Four-point rainflow extraction over turning points.
///
/// For four consecutive points the inner range `|p2 − p3|` closes a full
/// cycle when it does not exceed either neighbouring range; `p2` and `p3` are
/// then removed. Residual strokes become half cycles.
pub fn count_cycles(points: &[(usize, f64)]) -> Vec<CycleRecord> {
    let mut cycles = Vec::new();
    let mut stack: Vec<(usize, f64)> = Vec::with_capacity(points.len());
    for &p in points {
        stack.push(p);
        while stack.len() >= 4 {
            let n = stack.len();
            let (p1, p2, p3, p4) = (stack[n - 4], stack[n - 3], stack[n - 2], stack[n - 1]);
            let inner = (p2.1 - p3.1).abs();
            if inner <= (p1.1 - p2.1).abs() && inner <= (p3.1 - p4.1).abs() {
                cycles.push(CycleRecord {
                    kind: CycleKind::Full,
                    depth: inner,
                    start_index: p2.0,
                    end_index: p3.0,
                });
                stack.truncate(n - 3);
                stack.push(p4);
            } else {
                break;
            }
        }
    }
    cycles.extend(stack.windows(2).map(|w| CycleRecord {
        kind: CycleKind::Half,
        depth: (w[1].1 - w[0].1).abs(),
        start_index: w[0].0,
        end_index: w[1].0,
    }));
    cycles
}

pub(crate) fn cost_of_cycles(cycles: &[CycleRecord], params: &DegradationParams) -> f64 {
    cycles
        .iter()
        .map(|c| c.kind.half_strokes() as f64 * params.half_stroke_cost(c.depth))
        .sum()
}

pub fn rainflow_decompose(traj: &SocTrajectory, params: &DegradationParams) -> RainflowResult {
    rainflow_slice(traj.soc(), params)
}

pub(crate) fn rainflow_slice(soc: &[f64], params: &DegradationParams) -> RainflowResult {
    let cycles = count_cycles(&turning_points(soc));
    let total_cost = cost_of_cycles(&cycles, params);
    let throughput = soc.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    RainflowResult {
        cycles,
        total_cost,
        throughput,
    }
}

/// Average cost per unit throughput of a sample trajectory, Σ Φ(dᵢ) / Σ|b|.
///
/// The numerator uses `Φ(d)` without the zero-depth offset and counts a full
/// cycle once per half-stroke.
pub fn linearized_coefficient(traj: &SocTrajectory, params: &DegradationParams) -> Result<f64> {
    linearized_slice(traj.soc(), params)
}

pub(crate) fn linearized_slice(soc: &[f64], params: &DegradationParams) -> Result<f64> {
    let result = rainflow_slice(soc, params);
    if result.throughput <= 0.0 {
        return Err(Error::ZeroThroughput);
    }
    let numerator: f64 = result
        .cycles
        .iter()
        .map(|c| c.kind.half_strokes() as f64 * params.phi(c.depth))
        .sum();
    Ok(numerator / result.throughput)
}

/// Writes cycles as `kind,depth,start,end` with a header line.
pub fn write_cycles_csv<W: Write>(writer: W, cycles: &[CycleRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["kind", "depth", "start", "end"])?;
    for c in cycles {
        wtr.write_record([
            c.kind.as_str().to_string(),
            format!("{}", c.depth),
            c.start_index.to_string(),
            c.end_index.to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<cycles>", e))?;
    Ok(())
}
