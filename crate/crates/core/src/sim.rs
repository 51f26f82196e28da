//! Synthetic grasp scenes with known ground truth.
//!
//! Contact is a per-taxel penetration spring: each taxel that lies inside the
//! object pushes back with `F = k·δ`, where `δ` is how far the taxel would have
//! to retreat along the pad normal to leave the object. Forces go through the
//! sensor response curve, get Gaussian count noise, and are rounded and
//! clamped like a real ADC.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::episode::{Episode, EpisodeMetadata};
use crate::kinematics::{parallel_gripper, taxel_points, HandModel, JointState, PadGrid};
use crate::pointcloud::{dist2, CloudXYZF};
use crate::pose::PoseSE3;
use crate::sensor_model::{PadCalibration, TactileFrame, TaxelGrid, TaxelResponseModel, TAXELS_PER_PAD};
use crate::stream_sync::{DropReport, StampedCloud, SyncedTuple};

pub const DEFAULT_STIFFNESS: f64 = 2000.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("failed to load mesh: {0}")]
    Mesh(String),
}

pub type Result<T> = std::result::Result<T, SimError>;

fn invalid(msg: impl Into<String>) -> SimError {
    SimError::InvalidInput(msg.into())
}

/// Object geometry in its own frame, centered on the origin. Cylinders run along z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Primitive {
    Box {
        lx: f64,
        ly: f64,
        lz: f64,
    },
    Cylinder {
        r: f64,
        h: f64,
    },
    Sphere {
        r: f64,
    },
    /// Surface vertices. `path` names a PLY file that fills `points` on load.
    Mesh {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<String>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        points: Vec<[f64; 3]>,
    },
}

impl Primitive {
    pub fn validate(&self) -> Result<()> {
        let dims: Vec<f64> = match self {
            Primitive::Box { lx, ly, lz } => vec![*lx, *ly, *lz],
            Primitive::Cylinder { r, h } => vec![*r, *h],
            Primitive::Sphere { r } => vec![*r],
            Primitive::Mesh { points, .. } => {
                if points.is_empty() {
                    return Err(invalid("mesh has no points (was it loaded?)"));
                }
                if points.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(invalid("mesh has non-finite points"));
                }
                return Ok(());
            }
        };
        if dims.iter().all(|d| d.is_finite() && *d > 0.0) {
            Ok(())
        } else {
            Err(invalid(format!("primitive dimensions must be > 0: {self:?}")))
        }
    }

    /// Reads the mesh file, if any, resolving relative paths against `base_dir`.
    pub fn load(&mut self, base_dir: &Path) -> Result<()> {
        if let Primitive::Mesh { path: Some(p), points } = self {
            if points.is_empty() {
                let full = base_dir.join(p.as_str());
                let file = std::fs::File::open(&full).map_err(|e| SimError::Mesh(format!("{}: {e}", full.display())))?;
                let cloud = crate::pointcloud::read_ply(std::io::BufReader::new(file), "object")
                    .map_err(|e| SimError::Mesh(format!("{}: {e}", full.display())))?;
                *points = cloud.xyz();
            }
        }
        Ok(())
    }

    fn mesh_centroid(points: &[[f64; 3]]) -> [f64; 3] {
        let n = points.len() as f64;
        let mut c = [0.0; 3];
        for p in points {
            for i in 0..3 {
                c[i] += p[i] / n;
            }
        }
        c
    }

    /// How far `q` must travel along `dir` (unit) to leave the object;
    /// zero when `q` is not inside. Object frame.
    pub fn exit_distance(&self, q: [f64; 3], dir: [f64; 3]) -> f64 {
        match self {
            Primitive::Box { lx, ly, lz } => {
                let h = [lx / 2.0, ly / 2.0, lz / 2.0];
                if (0..3).any(|i| q[i].abs() >= h[i]) {
                    return 0.0;
                }
                (0..3)
                    .filter(|&i| dir[i] != 0.0)
                    .map(|i| (h[i].copysign(dir[i]) - q[i]) / dir[i])
                    .fold(f64::INFINITY, f64::min)
            }
            Primitive::Sphere { r } => {
                let qq = dot(q, q);
                if qq >= r * r {
                    return 0.0;
                }
                let qu = dot(q, dir);
                -qu + (qu * qu - (qq - r * r)).sqrt()
            }
            Primitive::Cylinder { r, h } => {
                let half = h / 2.0;
                let rr = q[0] * q[0] + q[1] * q[1];
                if rr >= r * r || q[2].abs() >= half {
                    return 0.0;
                }
                let mut t = f64::INFINITY;
                if dir[2] != 0.0 {
                    t = (half.copysign(dir[2]) - q[2]) / dir[2];
                }
                let a = dir[0] * dir[0] + dir[1] * dir[1];
                if a > 0.0 {
                    let b = q[0] * dir[0] + q[1] * dir[1];
                    let c = rr - r * r;
                    t = t.min((-b + (b * b - a * c).sqrt()) / a);
                }
                t
            }
            Primitive::Mesh { points, .. } => {
                // Star-shaped approximation around the vertex centroid: inside
                // when closer to the centroid than the nearest vertex is.
                let c = Self::mesh_centroid(points);
                let nearest = points
                    .iter()
                    .min_by(|a, b| dist2(*a, &q).total_cmp(&dist2(*b, &q)))
                    .expect("validated mesh is nonempty");
                let depth = dist2(nearest, &c).sqrt() - dist2(&q, &c).sqrt();
                depth.max(0.0)
            }
        }
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn unit_gaussian<R: Rng>(rng: &mut R) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let n = dot(v, v).sqrt();
        if n > 1e-12 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Surface point plus outward normal, object frame.
pub type SurfaceSample = ([f64; 3], [f64; 3]);

/// Area-uniform surface samples with outward normals.
pub fn sample_surface<R: Rng>(primitive: &Primitive, n: usize, rng: &mut R) -> Vec<SurfaceSample> {
    let mut out = Vec::with_capacity(n);
    match primitive {
        Primitive::Box { lx, ly, lz } => {
            let h = [lx / 2.0, ly / 2.0, lz / 2.0];
            // Faces ±x, ±y, ±z; each pair has the area of the other two extents.
            let areas = [ly * lz, ly * lz, lx * lz, lx * lz, lx * ly, lx * ly];
            let total: f64 = areas.iter().sum();
            for _ in 0..n {
                let mut u = rng.random::<f64>() * total;
                let mut face = 5;
                for (i, a) in areas.iter().enumerate() {
                    if u < *a {
                        face = i;
                        break;
                    }
                    u -= a;
                }
                let axis = face / 2;
                let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
                let mut p = [0.0; 3];
                let mut normal = [0.0; 3];
                for i in 0..3 {
                    p[i] = if i == axis { sign * h[i] } else { rng.random_range(-h[i]..=h[i]) };
                }
                normal[axis] = sign;
                out.push((p, normal));
            }
        }
        Primitive::Sphere { r } => {
            for _ in 0..n {
                let d = unit_gaussian(rng);
                out.push(([d[0] * r, d[1] * r, d[2] * r], d));
            }
        }
        Primitive::Cylinder { r, h } => {
            let side = 2.0 * PI * r * h;
            let cap = PI * r * r;
            for _ in 0..n {
                let u = rng.random::<f64>() * (side + 2.0 * cap);
                let theta = rng.random::<f64>() * 2.0 * PI;
                let (s, c) = theta.sin_cos();
                if u < side {
                    let z = rng.random_range(-h / 2.0..=h / 2.0);
                    out.push(([r * c, r * s, z], [c, s, 0.0]));
                } else {
                    let sign = if u < side + cap { 1.0 } else { -1.0 };
                    let rho = r * rng.random::<f64>().sqrt();
                    out.push(([rho * c, rho * s, sign * h / 2.0], [0.0, 0.0, sign]));
                }
            }
        }
        Primitive::Mesh { points, .. } => {
            let c = Primitive::mesh_centroid(points);
            for _ in 0..n {
                let p = points[rng.random_range(0..points.len())];
                let d = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
                let len = dot(d, d).sqrt();
                let normal = if len > 0.0 { [d[0] / len, d[1] / len, d[2] / len] } else { [0.0, 0.0, 1.0] };
                out.push((p, normal));
            }
        }
    }
    out
}

/// `n` surface points, uniformly distributed by area and determined by `seed`.
pub fn sample_object_cloud(primitive: &Primitive, n: usize, seed: u64) -> Result<Vec<[f64; 3]>> {
    primitive.validate()?;
    if n == 0 {
        return Err(invalid("need at least one sample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_surface(primitive, n, &mut rng).into_iter().map(|(p, _)| p).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseKey {
    /// Seconds.
    pub t: f64,
    pub pose: PoseSE3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApertureKey {
    pub t: f64,
    /// Distance between the two pad surfaces (m).
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GripperSpec {
    /// Gripper base in the robot base frame.
    #[serde(default)]
    pub base: PoseSE3,
    #[serde(default)]
    pub grid: PadGrid,
    #[serde(default = "default_pad_ids")]
    pub pad_ids: [u8; 2],
}

fn default_pad_ids() -> [u8; 2] {
    [0, 1]
}

impl Default for GripperSpec {
    fn default() -> Self {
        Self {
            base: PoseSE3::identity(),
            grid: PadGrid::default(),
            pad_ids: default_pad_ids(),
        }
    }
}

impl GripperSpec {
    pub fn hand(&self) -> HandModel {
        parallel_gripper(self.base, self.grid, self.pad_ids)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    #[serde(default)]
    pub cam_id: u8,
    /// Camera pose in the world frame; only its position matters for visibility.
    pub pose: PoseSE3,
    /// Surface samples drawn per tick before back-face culling.
    #[serde(default = "default_camera_samples")]
    pub samples: usize,
    /// Gaussian position noise (m).
    #[serde(default)]
    pub noise: f64,
}

fn default_camera_samples() -> usize {
    2048
}

/// Frame of simulated camera clouds. The simulator places the robot base at
/// the world origin, so it is also the base frame up to naming.
pub const WORLD_FRAME: &str = "world";

fn default_stiffness() -> f64 {
    DEFAULT_STIFFNESS
}

/// Default curve for simulated pads: 50 counts at 1 N, about 710 at saturation.
pub fn default_response() -> TaxelResponseModel {
    TaxelResponseModel::new(300.0, 50.0).expect("valid constants")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub object: Primitive,
    /// Object pose in the base frame over time. A single key holds for all time.
    pub trajectory: Vec<PoseKey>,
    #[serde(default)]
    pub gripper: GripperSpec,
    /// Pad gap over time. A single key holds for all time.
    pub aperture: Vec<ApertureKey>,
    /// Per-taxel spring constant (N/m).
    #[serde(default = "default_stiffness")]
    pub stiffness: f64,
    /// Reading noise standard deviation (counts).
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_response")]
    pub response: TaxelResponseModel,
    #[serde(default)]
    pub cameras: Vec<CameraSpec>,
}

fn check_keys(name: &str, times: impl Iterator<Item = f64>) -> Result<()> {
    let times: Vec<f64> = times.collect();
    if times.is_empty() {
        return Err(invalid(format!("{name} needs at least one key")));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(invalid(format!("{name} has non-finite key times")));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid(format!("{name} key times must be strictly increasing")));
    }
    Ok(())
}

/// Index pair and blend factor for `t` among key times; single keys are constant.
fn bracket(times: &[f64], t: f64, name: &str) -> Result<(usize, usize, f64)> {
    if times.len() == 1 {
        return Ok((0, 0, 0.0));
    }
    let (first, last) = (times[0], times[times.len() - 1]);
    if !(t >= first && t <= last) {
        return Err(invalid(format!("t = {t} s is outside the {name} span [{first}, {last}]")));
    }
    let hi = times.partition_point(|&k| k < t).max(1);
    let lo = hi - 1;
    let s = (t - times[lo]) / (times[hi] - times[lo]);
    Ok((lo, hi, s))
}

impl SceneSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| invalid(format!("scene: {e}")))
    }

    /// Parses a scene file and loads any mesh it references.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let mut scene = Self::from_json(&text)?;
        scene.object.load(path.parent().unwrap_or(Path::new(".")))?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        self.object.validate()?;
        check_keys("trajectory", self.trajectory.iter().map(|k| k.t))?;
        check_keys("aperture", self.aperture.iter().map(|k| k.t))?;
        if self.trajectory.iter().any(|k| !k.pose.is_finite()) {
            return Err(invalid("trajectory has non-finite poses"));
        }
        if self.aperture.iter().any(|k| !(k.gap.is_finite() && k.gap >= 0.0)) {
            return Err(invalid("aperture gaps must be finite and >= 0"));
        }
        if !(self.stiffness.is_finite() && self.stiffness > 0.0) {
            return Err(invalid(format!("stiffness must be > 0, got {}", self.stiffness)));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(invalid(format!("noise must be >= 0, got {}", self.noise)));
        }
        self.response.validate().map_err(|e| invalid(e.to_string()))?;
        self.gripper.grid.validate().map_err(|e| invalid(e.to_string()))?;
        if self.gripper.pad_ids[0] == self.gripper.pad_ids[1] {
            return Err(invalid("the two pads need distinct ids"));
        }
        let mut cam_ids: Vec<u8> = self.cameras.iter().map(|c| c.cam_id).collect();
        cam_ids.sort_unstable();
        if cam_ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("camera ids must be distinct"));
        }
        if self.cameras.iter().any(|c| !(c.noise.is_finite() && c.noise >= 0.0) || !c.pose.is_finite()) {
            return Err(invalid("camera noise must be >= 0 and poses finite"));
        }
        Ok(())
    }

    /// Time range covered by both trajectories; unbounded ends for single keys.
    pub fn span(&self) -> (f64, f64) {
        let lo = |times: Vec<f64>| if times.len() == 1 { f64::NEG_INFINITY } else { times[0] };
        let hi = |times: Vec<f64>| if times.len() == 1 { f64::INFINITY } else { times[times.len() - 1] };
        let tp = || self.trajectory.iter().map(|k| k.t).collect::<Vec<_>>();
        let ta = || self.aperture.iter().map(|k| k.t).collect::<Vec<_>>();
        (lo(tp()).max(lo(ta())), hi(tp()).min(hi(ta())))
    }

    /// Start time of rendering: the first key of either trajectory.
    pub fn start_time(&self) -> f64 {
        let (lo, _) = self.span();
        if lo.is_finite() {
            lo
        } else {
            self.trajectory[0].t.min(self.aperture[0].t)
        }
    }

    pub fn object_pose(&self, t: f64) -> Result<PoseSE3> {
        let times: Vec<f64> = self.trajectory.iter().map(|k| k.t).collect();
        let (lo, hi, s) = bracket(&times, t, "trajectory")?;
        Ok(self.trajectory[lo].pose.interpolate(&self.trajectory[hi].pose, s))
    }

    pub fn gap(&self, t: f64) -> Result<f64> {
        let times: Vec<f64> = self.aperture.iter().map(|k| k.t).collect();
        let (lo, hi, s) = bracket(&times, t, "aperture")?;
        let (a, b) = (self.aperture[lo].gap, self.aperture[hi].gap);
        Ok(a + (b - a) * s)
    }

    pub fn joints(&self, t: f64) -> Result<Vec<f64>> {
        let g = self.gap(t)?;
        Ok(vec![g / 2.0, g / 2.0])
    }

    /// Identity calibration for each simulated pad.
    pub fn calibrations(&self) -> Vec<PadCalibration> {
        self.gripper
            .pad_ids
            .iter()
            .map(|&id| PadCalibration::identity(id, self.response))
            .collect()
    }
}

/// Contact state at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactSnapshot {
    pub object_pose: PoseSE3,
    pub joints: Vec<f64>,
    /// Applied normal force per taxel (N), one grid per pad in mount order.
    pub forces: Vec<TaxelGrid>,
    /// Raw readings, one frame per pad in mount order.
    pub frames: Vec<TactileFrame>,
}

fn time_us(t: f64) -> u64 {
    (t * 1e6).round().max(0.0) as u64
}

/// Forces and raw frames at time `t` (seconds), drawing noise from `rng`.
pub fn simulate_contact_with<R: Rng>(scene: &SceneSpec, t: f64, rng: &mut R) -> Result<ContactSnapshot> {
    let object_pose = scene.object_pose(t)?;
    let joints = scene.joints(t)?;
    let hand = scene.gripper.hand();
    let pad_poses = hand.pad_poses(&joints).map_err(|e| invalid(e.to_string()))?;
    let to_object = object_pose.inverse();
    let noise = Normal::new(0.0, scene.noise).map_err(|e| invalid(e.to_string()))?;
    let timestamp_us = time_us(t);
    let mut forces = Vec::with_capacity(pad_poses.len());
    let mut frames = Vec::with_capacity(pad_poses.len());
    for (mount, pad_pose) in hand.mounts.iter().zip(&pad_poses) {
        // Retreat direction: against the sensing normal, in the object frame.
        let normal = pad_pose.rotate([0.0, 0.0, 1.0]);
        let retreat = to_object.rotate([-normal[0], -normal[1], -normal[2]]);
        let mut f = [0.0; TAXELS_PER_PAD];
        let mut readings = [0.0; TAXELS_PER_PAD];
        for (i, p) in taxel_points(pad_pose, &mount.grid).into_iter().enumerate() {
            let q = to_object.transform_point(p);
            let depth = scene.object.exit_distance(q, retreat);
            f[i] = scene.stiffness * depth.max(0.0);
            let clean = scene.response.force_to_reading(f[i]).map_err(|e| invalid(e.to_string()))?;
            let noisy = if scene.noise > 0.0 { clean + noise.sample(rng) } else { clean };
            readings[i] = noisy.round().clamp(0.0, scene.response.r_max);
        }
        forces.push(TaxelGrid::from_row_major(&f).expect("256 values"));
        frames.push(TactileFrame::raw(
            mount.pad_id,
            timestamp_us,
            TaxelGrid::from_row_major(&readings).expect("256 values"),
        ));
    }
    Ok(ContactSnapshot {
        object_pose,
        joints,
        forces,
        frames,
    })
}

fn tick_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// [`simulate_contact_with`] using the scene seed and a stream derived from `t`.
pub fn simulate_contact(scene: &SceneSpec, t: f64) -> Result<ContactSnapshot> {
    let mut rng = tick_rng(scene.seed, time_us(t));
    simulate_contact_with(scene, t, &mut rng)
}

/// Object surface facing `camera`, in the world frame as a calibrated rig
/// would report it. Occlusion by the fingers is not modelled.
pub fn camera_cloud<R: Rng>(scene: &SceneSpec, camera: &CameraSpec, object_pose: &PoseSE3, rng: &mut R) -> CloudXYZF {
    let eye = camera.pose.translation_array();
    let mut points = Vec::new();
    for (p, n) in sample_surface(&scene.object, camera.samples, rng) {
        let pw = object_pose.transform_point(p);
        let nw = object_pose.rotate(n);
        let view = [eye[0] - pw[0], eye[1] - pw[1], eye[2] - pw[2]];
        if dot(nw, view) <= 0.0 {
            continue;
        }
        let mut pc = pw;
        if camera.noise > 0.0 {
            for v in pc.iter_mut() {
                let e: f64 = StandardNormal.sample(rng);
                *v += camera.noise * e;
            }
        }
        points.push([pc[0], pc[1], pc[2], 0.0]);
    }
    CloudXYZF {
        frame: WORLD_FRAME.to_string(),
        points,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PadForces {
    pub pad_id: u8,
    /// Row-major applied normal force (N).
    pub forces: Vec<f64>,
}

/// Ground truth for one tick; one JSON line per tick on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthTick {
    pub tick_time_us: u64,
    pub pose: PoseSE3,
    pub joints: Vec<f64>,
    pub forces: Vec<PadForces>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub ticks: Vec<GroundTruthTick>,
}

impl GroundTruth {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for t in &self.ticks {
            out.push_str(&serde_json::to_string(t).expect("plain data serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let ticks = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| invalid(format!("truth line {}: {e}", i + 1))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { ticks })
    }
}

/// Renders `duration_s` of the scene at `rate_hz`, starting at the scene start time.
///
/// Every tick gets its own random stream, so ticks render in parallel and the
/// result depends only on the scene (including its seed).
pub fn render_episode(scene: &SceneSpec, rate_hz: f64, duration_s: f64) -> Result<(Episode, GroundTruth)> {
    scene.validate()?;
    if !(rate_hz.is_finite() && rate_hz > 0.0) {
        return Err(invalid(format!("rate must be > 0, got {rate_hz}")));
    }
    if !(duration_s.is_finite() && duration_s >= 0.0) {
        return Err(invalid(format!("duration must be >= 0, got {duration_s}")));
    }
    let start = scene.start_time();
    let count = (duration_s * rate_hz + 1e-9).floor() as u64;
    let hand = scene.gripper.hand();
    let rendered: Vec<(SyncedTuple, GroundTruthTick)> = (0..count)
        .into_par_iter()
        .map(|k| {
            let t = start + k as f64 / rate_hz;
            let mut rng = tick_rng(scene.seed, k);
            let snap = simulate_contact_with(scene, t, &mut rng)?;
            let tick_time_us = time_us(t);
            let mut cameras: Vec<&CameraSpec> = scene.cameras.iter().collect();
            cameras.sort_by_key(|c| c.cam_id);
            let clouds = cameras
                .into_iter()
                .map(|cam| StampedCloud {
                    cam_id: cam.cam_id,
                    timestamp_us: tick_time_us,
                    cloud: camera_cloud(scene, cam, &snap.object_pose, &mut rng),
                })
                .collect();
            let mut tactile = snap.frames.clone();
            tactile.sort_by_key(|f| f.pad_id);
            let truth = GroundTruthTick {
                tick_time_us,
                pose: snap.object_pose,
                joints: snap.joints.clone(),
                forces: hand
                    .mounts
                    .iter()
                    .zip(&snap.forces)
                    .map(|(m, f)| PadForces {
                        pad_id: m.pad_id,
                        forces: f.to_row_major(),
                    })
                    .collect(),
            };
            let tuple = SyncedTuple {
                tick_time_us,
                tactile,
                clouds,
                joints: JointState {
                    timestamp_us: tick_time_us,
                    positions: snap.joints,
                },
                fused: None,
            };
            Ok((tuple, truth))
        })
        .collect::<Result<Vec<_>>>()?;
    let (tuples, ticks): (Vec<_>, Vec<_>) = rendered.into_iter().unzip();

    let mut pads = scene.gripper.pad_ids.to_vec();
    pads.sort_unstable();
    let mut cams: Vec<u8> = scene.cameras.iter().map(|c| c.cam_id).collect();
    cams.sort_unstable();
    let metadata = EpisodeMetadata {
        rate_hz,
        tolerance_us: crate::stream_sync::DEFAULT_TOLERANCE_US,
        tactile_pads: pads,
        cameras: cams,
        calibration_ref: Some("embedded".into()),
        calibrations: scene.calibrations(),
        drops: DropReport {
            total_ticks: count,
            dropped: Vec::new(),
        },
        extra: serde_json::json!({
            "source": "simulator",
            "hand": hand,
        }),
    };
    Ok((Episode { metadata, tuples }, GroundTruth { ticks }))
}

/// A 40×40×80 mm box held between two pads along its long axis.
///
/// `penetration` is how far each pad sinks into its end face; the pad grid is
/// centered on the box axis.
pub fn box_grasp_scene(pitch: f64, penetration: f64, seed: u64) -> SceneSpec {
    let lz = 0.08;
    SceneSpec {
        object: Primitive::Box { lx: 0.04, ly: 0.04, lz },
        trajectory: vec![PoseKey {
            t: 0.0,
            pose: PoseSE3::identity(),
        }],
        gripper: GripperSpec {
            grid: PadGrid::with_pitch(pitch),
            ..GripperSpec::default()
        },
        aperture: vec![ApertureKey {
            t: 0.0,
            gap: lz - 2.0 * penetration,
        }],
        stiffness: DEFAULT_STIFFNESS,
        noise: 0.0,
        seed,
        response: default_response(),
        cameras: Vec::new(),
    }
}
