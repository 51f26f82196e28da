//! Taxel response model, calibration fitting and per-pad normalization.
//!
//! A taxel reports ADC counts that grow roughly linearly in `ln(force)` between
//! `f_min` and `f_sat`, ramp linearly from zero below `f_min`, and stop rising
//! once the applied normal force passes `f_sat`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const GRID_ROWS: usize = 16;
pub const GRID_COLS: usize = 16;
pub const TAXELS_PER_PAD: usize = GRID_ROWS * GRID_COLS;
pub const BLOCK_ROWS: usize = GRID_ROWS / 2;
pub const BLOCK_COLS: usize = GRID_COLS / 2;

/// Full-scale count of the 10-bit readout.
pub const DEFAULT_R_MAX: f64 = 1023.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensorError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("reading {reading} is at or above the saturation reading {limit}; force is not recoverable")]
    Saturated { reading: f64, limit: f64 },
    #[error("insufficient data: {usable} usable samples inside the log-linear region, need at least 2")]
    InsufficientData { usable: usize },
    #[error("degenerate fit: all usable samples share the same force")]
    DegenerateFit,
    #[error("calibration is for pad {calibration} but frame is from pad {frame}")]
    CalibrationMismatch { calibration: u8, frame: u8 },
}

pub type Result<T> = std::result::Result<T, SensorError>;

/// A 16×16 grid of per-taxel values, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaxelGrid(pub [[f64; GRID_COLS]; GRID_ROWS]);

impl Default for TaxelGrid {
    fn default() -> Self {
        Self::filled(0.0)
    }
}

impl TaxelGrid {
    pub fn filled(v: f64) -> Self {
        Self([[v; GRID_COLS]; GRID_ROWS])
    }

    /// Builds a grid from 256 row-major values.
    pub fn from_row_major(values: &[f64]) -> Option<Self> {
        if values.len() != TAXELS_PER_PAD {
            return None;
        }
        let mut g = Self::default();
        for (k, v) in values.iter().enumerate() {
            g.0[k / GRID_COLS][k % GRID_COLS] = *v;
        }
        Some(g)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0[row][col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.0[row][col] = v;
    }

    /// Row-major iteration over all 256 values.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().flat_map(|row| row.iter().copied())
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        self.iter().collect()
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        let mut out = *self;
        for row in out.0.iter_mut() {
            for v in row.iter_mut() {
                *v = f(*v);
            }
        }
        out
    }

    pub fn sum(&self) -> f64 {
        self.iter().sum()
    }
}

/// Force (N) to reading (counts) curve of a single taxel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaxelResponseModel {
    /// Counts per unit of `ln(F / 1 N)`.
    pub a: f64,
    /// Reading at 1 N on the log-linear branch.
    pub b: f64,
    #[serde(default = "default_f_min")]
    pub f_min: f64,
    #[serde(default = "default_f_sat")]
    pub f_sat: f64,
    #[serde(default = "default_r_max")]
    pub r_max: f64,
}

fn default_f_min() -> f64 {
    1.0
}
fn default_f_sat() -> f64 {
    9.0
}
fn default_r_max() -> f64 {
    DEFAULT_R_MAX
}

impl TaxelResponseModel {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        let m = Self {
            a,
            b,
            f_min: default_f_min(),
            f_sat: default_f_sat(),
            r_max: default_r_max(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.a, self.b, self.f_min, self.f_sat, self.r_max]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(SensorError::InvalidInput("non-finite model parameter".into()));
        }
        if self.a <= 0.0 {
            return Err(SensorError::InvalidInput(format!("slope a must be > 0, got {}", self.a)));
        }
        if !(self.f_min > 0.0 && self.f_min < self.f_sat) {
            return Err(SensorError::InvalidInput(format!(
                "need 0 < f_min < f_sat, got f_min={} f_sat={}",
                self.f_min, self.f_sat
            )));
        }
        if self.r_max <= 0.0 {
            return Err(SensorError::InvalidInput(format!("r_max must be > 0, got {}", self.r_max)));
        }
        Ok(())
    }

    fn log_branch(&self, force: f64) -> f64 {
        (self.a * force.ln() + self.b).clamp(0.0, self.r_max)
    }

    /// Reading at the lower edge of the log-linear region.
    pub fn ramp_top(&self) -> f64 {
        self.log_branch(self.f_min)
    }

    /// Plateau reading for every force at or above `f_sat`.
    pub fn saturation_reading(&self) -> f64 {
        self.log_branch(self.f_sat)
    }

    pub fn force_to_reading(&self, force: f64) -> Result<f64> {
        if !force.is_finite() || force < 0.0 {
            return Err(SensorError::InvalidInput(format!(
                "force must be finite and >= 0, got {force}"
            )));
        }
        Ok(if force < self.f_min {
            self.ramp_top() * force / self.f_min
        } else if force < self.f_sat {
            self.log_branch(force)
        } else {
            self.saturation_reading()
        })
    }

    /// Inverse of [`force_to_reading`](Self::force_to_reading) below the plateau.
    pub fn reading_to_force(&self, reading: f64) -> Result<f64> {
        if !reading.is_finite() || reading < 0.0 || reading > self.r_max {
            return Err(SensorError::InvalidInput(format!(
                "reading must lie in [0, {}], got {reading}",
                self.r_max
            )));
        }
        if reading == 0.0 {
            return Ok(0.0);
        }
        let limit = self.saturation_reading();
        if reading >= limit {
            return Err(SensorError::Saturated { reading, limit });
        }
        let ramp_top = self.ramp_top();
        if reading < ramp_top {
            Ok(self.f_min * reading / ramp_top)
        } else {
            Ok(((reading - self.b) / self.a).exp())
        }
    }
}

/// Outcome of a least-squares calibration fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseFit {
    pub model: TaxelResponseModel,
    pub r_squared: f64,
    pub samples_used: usize,
}

/// Fits `reading = a ln(F) + b` over the samples inside `[1 N, 9 N]`.
pub fn fit_response(samples: &[(f64, f64)]) -> Result<ResponseFit> {
    let template = TaxelResponseModel {
        a: 1.0,
        b: 0.0,
        f_min: default_f_min(),
        f_sat: default_f_sat(),
        r_max: default_r_max(),
    };
    fit_response_with(samples, &template)
}

/// Like [`fit_response`] but takes `f_min`, `f_sat` and `r_max` from `template`.
pub fn fit_response_with(
    samples: &[(f64, f64)],
    template: &TaxelResponseModel,
) -> Result<ResponseFit> {
    let usable: Vec<(f64, f64)> = samples
        .iter()
        .filter(|(f, r)| {
            f.is_finite() && r.is_finite() && *f >= template.f_min && *f <= template.f_sat
        })
        .map(|&(f, r)| (f.ln(), r))
        .collect();
    if usable.len() < 2 {
        return Err(SensorError::InsufficientData {
            usable: usable.len(),
        });
    }
    let n = usable.len() as f64;
    let mean_x = usable.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = usable.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in &usable {
        let dx = x - mean_x;
        let dy = y - mean_y;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(SensorError::DegenerateFit);
    }
    let a = sxy / sxx;
    let b = mean_y - a * mean_x;
    let ss_res: f64 = usable
        .iter()
        .map(|&(x, y)| {
            let e = y - (a * x + b);
            e * e
        })
        .sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    let model = TaxelResponseModel { a, b, ..*template };
    model.validate()?;
    Ok(ResponseFit {
        model,
        r_squared,
        samples_used: usable.len(),
    })
}

/// One timestamped reading grid from one pad.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TactileFrame {
    pub pad_id: u8,
    pub timestamp_us: u64,
    pub readings: TaxelGrid,
    #[serde(default)]
    pub normalized: bool,
}

impl TactileFrame {
    pub fn raw(pad_id: u8, timestamp_us: u64, readings: TaxelGrid) -> Self {
        Self {
            pad_id,
            timestamp_us,
            readings,
            normalized: false,
        }
    }

    /// Checks readings against `[0, r_max]` (raw) or `[0, 1]` (normalized).
    pub fn validate(&self, r_max: f64) -> Result<()> {
        let hi = if self.normalized { 1.0 } else { r_max };
        match self.readings.iter().find(|v| !(v.is_finite() && *v >= 0.0 && *v <= hi)) {
            Some(v) => Err(SensorError::InvalidInput(format!(
                "reading {v} outside [0, {hi}] for pad {}",
                self.pad_id
            ))),
            None => Ok(()),
        }
    }
}

/// Per-taxel gain/offset for one pad plus the shared response curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PadCalibration {
    pub pad_id: u8,
    pub gain: TaxelGrid,
    pub offset: TaxelGrid,
    pub model: TaxelResponseModel,
}

impl PadCalibration {
    /// Unit gain, zero offset.
    pub fn identity(pad_id: u8, model: TaxelResponseModel) -> Self {
        Self {
            pad_id,
            gain: TaxelGrid::filled(1.0),
            offset: TaxelGrid::filled(0.0),
            model,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if let Some(g) = self.gain.iter().find(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(SensorError::InvalidInput(format!("gain {g} must be finite and > 0")));
        }
        if self.offset.iter().any(|o| !o.is_finite()) {
            return Err(SensorError::InvalidInput("non-finite offset".into()));
        }
        Ok(())
    }
}

/// Maps raw counts to `clamp(gain * (raw - offset) / r_max, 0, 1)`.
pub fn normalize_frame(calib: &PadCalibration, frame: &TactileFrame) -> Result<TactileFrame> {
    if calib.pad_id != frame.pad_id {
        return Err(SensorError::CalibrationMismatch {
            calibration: calib.pad_id,
            frame: frame.pad_id,
        });
    }
    if frame.normalized {
        return Err(SensorError::InvalidInput("frame is already normalized".into()));
    }
    let r_max = calib.model.r_max;
    let mut out = TaxelGrid::default();
    for r in 0..GRID_ROWS {
        for c in 0..GRID_COLS {
            let raw = frame.readings.get(r, c);
            let n = calib.gain.get(r, c) * (raw - calib.offset.get(r, c)) / r_max;
            out.set(r, c, n.clamp(0.0, 1.0));
        }
    }
    Ok(TactileFrame {
        pad_id: frame.pad_id,
        timestamp_us: frame.timestamp_us,
        readings: out,
        normalized: true,
    })
}

/// Block-level uniformity summary of one pad.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// Sum of each 2×2 taxel block.
    pub block_sums: [[f64; BLOCK_COLS]; BLOCK_ROWS],
    /// Mean of the block sums after outlier removal.
    pub mean: f64,
    /// Population standard deviation after outlier removal.
    pub std: f64,
    /// Blocks further than three standard deviations from the first-pass mean.
    pub outlier_count: usize,
}

impl ConsistencyReport {
    pub fn coefficient_of_variation(&self) -> f64 {
        if self.mean == 0.0 {
            0.0
        } else {
            self.std / self.mean
        }
    }
}

const OUTLIER_SIGMAS: f64 = 3.0;

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn consistency_stats(frame: &TactileFrame) -> ConsistencyReport {
    let mut block_sums = [[0.0; BLOCK_COLS]; BLOCK_ROWS];
    for (i, row) in block_sums.iter_mut().enumerate() {
        for (j, sum) in row.iter_mut().enumerate() {
            let g = &frame.readings;
            *sum = g.get(2 * i, 2 * j)
                + g.get(2 * i, 2 * j + 1)
                + g.get(2 * i + 1, 2 * j)
                + g.get(2 * i + 1, 2 * j + 1);
        }
    }
    let sums: Vec<f64> = block_sums.iter().flatten().copied().collect();
    let (mean0, std0) = mean_std(&sums);
    let kept: Vec<f64> = sums
        .iter()
        .copied()
        .filter(|v| std0 == 0.0 || (v - mean0).abs() <= OUTLIER_SIGMAS * std0)
        .collect();
    let outlier_count = sums.len() - kept.len();
    let (mean, std) = mean_std(&kept);
    ConsistencyReport {
        block_sums,
        mean,
        std,
        outlier_count,
    }
}
