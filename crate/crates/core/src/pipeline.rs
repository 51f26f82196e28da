//! Whole-episode compositions of the module operations. The command-line
//! tool is a thin layer over these, so anything it prints can be reproduced
//! from library code.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::episode::{Episode, EpisodeMetadata};
use crate::frame_codec::{DecoderStats, StreamDecoder, WireFrame};
use crate::kinematics::{tactile_point_cloud, HandModel, JointState, KinematicsError, TactilePoint};
use crate::pointcloud::{fuse, tactile_cloud, CloudError, VisualPipeline};
use crate::pose::PoseSE3;
use crate::pose_tracker::{ObjectModel, PoseTracker, PriorBox, StepReport, TrackerConfig, TrackerError};
use crate::sensor_model::{fit_response, normalize_frame, PadCalibration, ResponseFit, SensorError, TactileFrame};
use crate::sim::GroundTruth;
use crate::stream_sync::{align, StampedCloud, SyncError, SyncInputs, SyncedTuple};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error(transparent)]
    Sync(#[from] SyncError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// Fits the response curve and wraps it as a unit-gain, zero-offset calibration.
pub fn calibrate(samples: &[(f64, f64)], pad_id: u8) -> Result<(PadCalibration, ResponseFit)> {
    let fit = fit_response(samples)?;
    Ok((PadCalibration::identity(pad_id, fit.model), fit))
}

/// Decodes a whole capture with the resynchronizing stream decoder.
pub fn decode_capture(bytes: &[u8]) -> (Vec<WireFrame>, DecoderStats) {
    let mut decoder = StreamDecoder::new();
    let frames = decoder.feed(bytes);
    (frames, decoder.stats())
}

/// Groups per-source samples into streams and aligns them into an episode.
///
/// Each stream is sorted by timestamp first (stable, so equal stamps keep
/// their input order).
pub fn sync_streams(
    frames: Vec<TactileFrame>,
    clouds: Vec<StampedCloud>,
    mut joints: Vec<JointState>,
    rate_hz: f64,
    tolerance_us: u64,
    calibrations: Vec<PadCalibration>,
) -> Result<Episode> {
    let mut tactile: BTreeMap<u8, Vec<TactileFrame>> = BTreeMap::new();
    for f in frames {
        tactile.entry(f.pad_id).or_default().push(f);
    }
    let mut by_cam: BTreeMap<u8, Vec<StampedCloud>> = BTreeMap::new();
    for c in clouds {
        by_cam.entry(c.cam_id).or_default().push(c);
    }
    tactile.values_mut().for_each(|s| s.sort_by_key(|f| f.timestamp_us));
    by_cam.values_mut().for_each(|s| s.sort_by_key(|c| c.timestamp_us));
    joints.sort_by_key(|j| j.timestamp_us);
    let inputs = SyncInputs {
        tactile,
        clouds: by_cam,
        joints,
    };
    let (tuples, drops) = align(&inputs, rate_hz, tolerance_us)?;
    let metadata = EpisodeMetadata {
        rate_hz,
        tolerance_us,
        tactile_pads: inputs.tactile.keys().copied().collect(),
        cameras: inputs.clouds.keys().copied().collect(),
        calibration_ref: (!calibrations.is_empty()).then(|| "embedded".to_string()),
        calibrations,
        drops,
        extra: serde_json::Value::Null,
    };
    Ok(Episode { metadata, tuples })
}

/// Normalized frames of a tuple; raw frames use the matching calibration.
pub fn normalized_frames(tuple: &SyncedTuple, calibrations: &[PadCalibration]) -> Result<Vec<TactileFrame>> {
    tuple
        .tactile
        .iter()
        .map(|f| {
            if f.normalized {
                return Ok(*f);
            }
            let calib = calibrations
                .iter()
                .find(|c| c.pad_id == f.pad_id)
                .ok_or_else(|| PipelineError::Invalid(format!("no calibration for pad {}", f.pad_id)))?;
            Ok(normalize_frame(calib, f)?)
        })
        .collect()
}

/// Base-frame tactile points of one tuple.
pub fn tuple_tactile_points(
    tuple: &SyncedTuple,
    hand: &HandModel,
    calibrations: &[PadCalibration],
) -> Result<Vec<TactilePoint>> {
    let frames = normalized_frames(tuple, calibrations)?;
    Ok(tactile_point_cloud(&frames, hand, &tuple.joints)?)
}

/// Fills in the fused cloud of every tuple. Every tuple uses the same FPS seed.
pub fn fuse_episode(episode: &Episode, hand: &HandModel, visual: &VisualPipeline, seed: u64) -> Result<Episode> {
    hand.validate()?;
    let mut out = episode.clone();
    for tuple in out.tuples.iter_mut() {
        let clouds: Vec<_> = tuple.clouds.iter().map(|c| c.cloud.clone()).collect();
        let vis = visual.run(&clouds, seed)?;
        let tac = tactile_cloud(&visual.base_frame, &tuple_tactile_points(tuple, hand, &episode.metadata.calibrations)?)?;
        tuple.fused = Some(fuse(&vis, &tac)?);
    }
    Ok(out)
}

/// Tracker configuration plus the initial pose prior.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackSettings {
    #[serde(default)]
    pub filter: TrackerConfig,
    #[serde(default)]
    pub prior: PriorBox,
}

/// Estimate after one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub tick_time_us: u64,
    pub pose: PoseSE3,
    pub translation_cov_trace: f64,
    pub rotation_spread: f64,
    pub step: StepReport,
}

/// Runs the particle filter over every tuple of the episode.
pub fn track_episode(
    episode: &Episode,
    hand: &HandModel,
    object: ObjectModel,
    settings: &TrackSettings,
    seed: u64,
) -> Result<Vec<TrackRecord>> {
    hand.validate()?;
    let mut tracker = PoseTracker::new(settings.filter.clone(), object, &settings.prior, seed)?;
    let mut out = Vec::with_capacity(episode.tuples.len());
    for tuple in &episode.tuples {
        let points = tuple_tactile_points(tuple, hand, &episode.metadata.calibrations)?;
        let step = tracker.step_tactile(&points)?;
        let est = tracker.estimate()?;
        out.push(TrackRecord {
            tick_time_us: tuple.tick_time_us,
            pose: est.pose,
            translation_cov_trace: est.translation_cov_trace,
            rotation_spread: est.rotation_spread,
            step,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Ticks present in both inputs.
    pub ticks: usize,
    pub translation_rmse_m: f64,
    pub rotation_rmse_deg: f64,
    pub rotation_max_deg: f64,
    pub final_translation_error_m: f64,
    pub final_rotation_error_deg: f64,
}

/// Compares estimates with ground truth on the ticks they share.
pub fn evaluate(records: &[TrackRecord], truth: &GroundTruth) -> Result<EvalReport> {
    let truth_by_tick: BTreeMap<u64, &PoseSE3> = truth.ticks.iter().map(|t| (t.tick_time_us, &t.pose)).collect();
    let errors: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| {
            truth_by_tick
                .get(&r.tick_time_us)
                .map(|t| (r.pose.translation_distance_to(t), r.pose.rotation_angle_to(t).to_degrees()))
        })
        .collect();
    let Some(&(final_t, final_r)) = errors.last() else {
        return Err(PipelineError::Invalid("no tick appears in both poses and truth".into()));
    };
    let n = errors.len() as f64;
    Ok(EvalReport {
        ticks: errors.len(),
        translation_rmse_m: (errors.iter().map(|e| e.0 * e.0).sum::<f64>() / n).sqrt(),
        rotation_rmse_deg: (errors.iter().map(|e| e.1 * e.1).sum::<f64>() / n).sqrt(),
        rotation_max_deg: errors.iter().map(|e| e.1).fold(0.0, f64::max),
        final_translation_error_m: final_t,
        final_rotation_error_deg: final_r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::GroundTruthTick;

    fn record(t: u64, pose: PoseSE3) -> TrackRecord {
        TrackRecord {
            tick_time_us: t,
            pose,
            translation_cov_trace: 0.0,
            rotation_spread: 0.0,
            step: StepReport {
                ess: 1.0,
                min_g: 0.0,
                mean_g: 0.0,
                resampled: false,
                contacts: 0,
            },
        }
    }

    fn truth_at(t: u64) -> GroundTruthTick {
        GroundTruthTick {
            tick_time_us: t,
            pose: PoseSE3::identity(),
            joints: vec![],
            forces: vec![],
        }
    }

    #[test]
    fn eval_matches_ticks() {
        let recs = vec![
            record(0, PoseSE3::from_translation([0.003, 0.0, 0.004])),
            record(100_000, PoseSE3::from_axis_angle([0.0, 0.0, 1.0], 0.1, [0.0; 3])),
            record(300_000, PoseSE3::identity()),
        ];
        let truth = GroundTruth {
            ticks: vec![truth_at(0), truth_at(100_000), truth_at(200_000)],
        };
        let r = evaluate(&recs, &truth).unwrap();
        assert_eq!(r.ticks, 2);
        assert!((r.translation_rmse_m - (0.005f64.powi(2) / 2.0).sqrt()).abs() < 1e-15);
        assert!((r.final_rotation_error_deg - 0.1f64.to_degrees()).abs() < 1e-9);
        assert!(evaluate(&recs[2..], &truth).is_err());
    }

    #[test]
    fn sync_groups_and_sorts() {
        let f = |pad, t| TactileFrame::raw(pad, t, crate::sensor_model::TaxelGrid::filled(0.0));
        let j = |t| JointState {
            timestamp_us: t,
            positions: vec![0.0],
        };
        let ep = sync_streams(
            vec![f(1, 100_000), f(0, 100_000), f(1, 0), f(0, 0)],
            vec![],
            vec![j(100_000), j(0)],
            10.0,
            50_000,
            vec![],
        )
        .unwrap();
        assert_eq!(ep.tuples.len(), 2);
        assert_eq!(ep.metadata.tactile_pads, vec![0, 1]);
        assert!(ep.tuples.iter().all(|t| t.tactile[0].pad_id == 0 && t.tactile[1].pad_id == 1));
    }
}
