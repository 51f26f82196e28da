//! Nearest-sample alignment of tactile, camera and joint streams onto a fixed
//! tick grid.
//!
//! Ticks sit on integer multiples of the tick period on the shared clock.
//! For every tick each configured stream contributes its nearest sample
//! (earlier sample on ties) if that sample is within tolerance; a tick with
//! any stream missing is dropped and reported, never padded.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::JointState;
use crate::pointcloud::{CloudXYZF, FusedCloud};
use crate::sensor_model::TactileFrame;

pub const DEFAULT_RATE_HZ: f64 = 10.0;
/// Half a tick at the default rate.
pub const DEFAULT_TOLERANCE_US: u64 = 50_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SyncError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("stream {0} has no samples")]
    StreamStarved(StreamId),
}

pub type Result<T> = std::result::Result<T, SyncError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamId {
    Tactile(u8),
    Camera(u8),
    Joints,
}

impl fmt::Display for StreamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StreamId::Tactile(id) => write!(f, "tactile:{id}"),
            StreamId::Camera(id) => write!(f, "camera:{id}"),
            StreamId::Joints => write!(f, "joints"),
        }
    }
}

/// A camera cloud with its capture time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StampedCloud {
    pub cam_id: u8,
    pub timestamp_us: u64,
    pub cloud: CloudXYZF,
}

/// One synchronized observation. Tactile frames and clouds are ordered by
/// pad id and camera id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncedTuple {
    pub tick_time_us: u64,
    pub tactile: Vec<TactileFrame>,
    pub clouds: Vec<StampedCloud>,
    pub joints: JointState,
    /// Filled in by the fusion step.
    #[serde(default)]
    pub fused: Option<FusedCloud>,
}

impl SyncedTuple {
    /// Largest `|member timestamp − tick|` in this tuple.
    pub fn max_skew_us(&self) -> u64 {
        self.member_times().map(|t| t.abs_diff(self.tick_time_us)).max().unwrap_or(0)
    }

    fn member_times(&self) -> impl Iterator<Item = u64> + '_ {
        self.tactile
            .iter()
            .map(|f| f.timestamp_us)
            .chain(self.clouds.iter().map(|c| c.timestamp_us))
            .chain(std::iter::once(self.joints.timestamp_us))
    }
}

/// A tick that had no in-tolerance sample for at least one stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedTick {
    pub tick_time_us: u64,
    pub missing: Vec<StreamId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DropReport {
    pub total_ticks: u64,
    pub dropped: Vec<DroppedTick>,
}

impl DropReport {
    /// Fraction of all ticks on which `stream` had no sample.
    pub fn drop_rate(&self, stream: StreamId) -> f64 {
        if self.total_ticks == 0 {
            return 0.0;
        }
        let n = self.dropped.iter().filter(|d| d.missing.contains(&stream)).count();
        n as f64 / self.total_ticks as f64
    }
}

/// Per-stream sample times to align.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeAlignment {
    /// `(tick, sample index per stream)` for every emitted tick.
    pub ticks: Vec<(u64, Vec<usize>)>,
    pub report: DropReport,
}

fn period_us(rate_hz: f64) -> Result<f64> {
    if !(rate_hz.is_finite() && rate_hz > 0.0) {
        return Err(SyncError::InvalidInput(format!("rate must be > 0, got {rate_hz}")));
    }
    Ok(1e6 / rate_hz)
}

/// Aligns bare timestamp streams; each must be nondecreasing.
pub fn align_times(streams: &[(StreamId, &[u64])], rate_hz: f64, tolerance_us: u64) -> Result<TimeAlignment> {
    let period = period_us(rate_hz)?;
    for (id, ts) in streams {
        if ts.is_empty() {
            return Err(SyncError::StreamStarved(*id));
        }
        if ts.windows(2).any(|w| w[1] < w[0]) {
            return Err(SyncError::InvalidInput(format!("stream {id} is not sorted by timestamp")));
        }
    }
    if streams.is_empty() {
        return Ok(TimeAlignment {
            ticks: Vec::new(),
            report: DropReport::default(),
        });
    }
    let start = streams.iter().map(|(_, ts)| ts[0]).min().expect("nonempty");
    let end = streams.iter().map(|(_, ts)| *ts.last().expect("nonempty")).max().expect("nonempty");
    let k_first = (start as f64 / period).ceil() as u64;
    let k_last = (end as f64 / period).floor() as u64;

    let mut cursors = vec![0usize; streams.len()];
    let mut ticks = Vec::new();
    let mut report = DropReport::default();
    for k in k_first..=k_last {
        let tick = (k as f64 * period).round() as u64;
        if tick < start || tick > end {
            continue;
        }
        report.total_ticks += 1;
        let mut picks = Vec::with_capacity(streams.len());
        let mut missing = Vec::new();
        for ((id, ts), cursor) in streams.iter().zip(cursors.iter_mut()) {
            while *cursor + 1 < ts.len() && ts[*cursor + 1] <= tick {
                *cursor += 1;
            }
            let mut best = *cursor;
            if *cursor + 1 < ts.len() && ts[*cursor + 1].abs_diff(tick) < ts[*cursor].abs_diff(tick) {
                best = *cursor + 1;
            }
            if ts[best].abs_diff(tick) <= tolerance_us {
                picks.push(best);
            } else {
                missing.push(*id);
            }
        }
        if missing.is_empty() {
            ticks.push((tick, picks));
        } else {
            report.dropped.push(DroppedTick {
                tick_time_us: tick,
                missing,
            });
        }
    }
    Ok(TimeAlignment { ticks, report })
}

/// Raw per-stream samples, each stream sorted by time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SyncInputs {
    pub tactile: BTreeMap<u8, Vec<TactileFrame>>,
    pub clouds: BTreeMap<u8, Vec<StampedCloud>>,
    pub joints: Vec<JointState>,
}

impl SyncInputs {
    pub fn stream_ids(&self) -> Vec<StreamId> {
        self.tactile
            .keys()
            .map(|&p| StreamId::Tactile(p))
            .chain(self.clouds.keys().map(|&c| StreamId::Camera(c)))
            .chain(std::iter::once(StreamId::Joints))
            .collect()
    }
}

pub fn align(inputs: &SyncInputs, rate_hz: f64, tolerance_us: u64) -> Result<(Vec<SyncedTuple>, DropReport)> {
    let tactile_ts: Vec<Vec<u64>> = inputs
        .tactile
        .values()
        .map(|s| s.iter().map(|f| f.timestamp_us).collect())
        .collect();
    let cloud_ts: Vec<Vec<u64>> = inputs
        .clouds
        .values()
        .map(|s| s.iter().map(|c| c.timestamp_us).collect())
        .collect();
    let joint_ts: Vec<u64> = inputs.joints.iter().map(|j| j.timestamp_us).collect();
    let ids = inputs.stream_ids();
    let all_ts: Vec<&[u64]> = tactile_ts
        .iter()
        .chain(cloud_ts.iter())
        .map(Vec::as_slice)
        .chain(std::iter::once(joint_ts.as_slice()))
        .collect();
    let streams: Vec<(StreamId, &[u64])> = ids.iter().copied().zip(all_ts).collect();
    let aligned = align_times(&streams, rate_hz, tolerance_us)?;

    let n_tac = inputs.tactile.len();
    let n_cam = inputs.clouds.len();
    let tactile: Vec<&Vec<TactileFrame>> = inputs.tactile.values().collect();
    let clouds: Vec<&Vec<StampedCloud>> = inputs.clouds.values().collect();
    let tuples = aligned
        .ticks
        .into_iter()
        .map(|(tick, picks)| SyncedTuple {
            tick_time_us: tick,
            tactile: (0..n_tac).map(|i| tactile[i][picks[i]]).collect(),
            clouds: (0..n_cam).map(|i| clouds[i][picks[n_tac + i]].clone()).collect(),
            joints: inputs.joints[picks[n_tac + n_cam]].clone(),
            fused: None,
        })
        .collect();
    Ok((tuples, aligned.report))
}
