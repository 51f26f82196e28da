//! Tactile-only 6-DoF object pose tracking with a particle filter.
//!
//! Each particle is a candidate object pose `T`. The known object cloud is
//! moved by `T`, and the particle is scored by the sum over active contact
//! points of the squared distance to the nearest moved model point (`g`).
//! Weights follow `w ∝ exp(-g / τ)`, kept in the log domain.

use nalgebra::{Matrix4, Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kdtree::KdTree;
use crate::kinematics::TactilePoint;
use crate::pointcloud::fps_indices_from;
use crate::pose::PoseSE3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackerError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("every distance is non-finite; weights cannot be formed")]
    DegenerateWeights,
}

pub type Result<T> = std::result::Result<T, TrackerError>;

fn invalid(msg: impl Into<String>) -> TrackerError {
    TrackerError::InvalidInput(msg.into())
}

/// Known object geometry in its own frame, with a search index.
#[derive(Debug, Clone)]
pub struct ObjectModel {
    points: Vec<[f64; 3]>,
    index: KdTree,
}

impl ObjectModel {
    pub fn new(points: Vec<[f64; 3]>) -> Result<Self> {
        if points.len() < 3 {
            return Err(invalid(format!("object model needs at least 3 points, got {}", points.len())));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid("object model has non-finite coordinates"));
        }
        let index = KdTree::new(&points);
        Ok(Self { points, index })
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    /// `g` for the object at `pose`, evaluated in the object frame.
    ///
    /// Rigid motions preserve distances, so mapping the contacts through
    /// `pose⁻¹` gives the same value as [`weight_distance`] on the moved model
    /// (up to rounding) without rebuilding an index per particle.
    pub fn contact_distance(&self, pose: &PoseSE3, contacts: &[[f64; 3]]) -> f64 {
        let inv = pose.inverse();
        contacts
            .iter()
            .map(|c| {
                let local = inv.transform_point(*c);
                self.index.nearest_dist2(&local).expect("model is nonempty")
            })
            .sum()
    }
}

/// Moves the model cloud by `pose`: `R P + t`.
pub fn observe_model(obj: &ObjectModel, pose: &PoseSE3) -> Vec<[f64; 3]> {
    obj.points.iter().map(|p| pose.transform_point(*p)).collect()
}

/// `Σ_contacts min_observed ‖c − o‖²`, in m².
pub fn weight_distance(contacts: &[[f64; 3]], observed: &[[f64; 3]]) -> Result<f64> {
    if observed.is_empty() {
        return Err(invalid("observed point set is empty"));
    }
    let index = KdTree::new(observed);
    Ok(contacts
        .iter()
        .map(|c| index.nearest_dist2(c).expect("index is nonempty"))
        .sum())
}

/// Active contact positions in the base frame.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContactSet {
    pub points: Vec<[f64; 3]>,
}

impl ContactSet {
    /// Keeps tactile points whose normalized value exceeds `threshold`.
    pub fn from_tactile(cloud: &[TactilePoint], threshold: f64) -> Self {
        Self {
            points: cloud
                .iter()
                .filter(|p| p[3] > threshold)
                .map(|p| [p[0], p[1], p[2]])
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Farthest-point subset of at most `max` contacts, starting from the first.
    pub fn thinned(&self, max: usize) -> ContactSet {
        if max == 0 || self.points.len() <= max {
            return self.clone();
        }
        let padded: Vec<[f64; 4]> = self.points.iter().map(|p| [p[0], p[1], p[2], 0.0]).collect();
        let mut idx = fps_indices_from(&padded, max, 0).expect("nonempty, max >= 1");
        idx.sort_unstable();
        ContactSet {
            points: idx.into_iter().map(|i| self.points[i]).collect(),
        }
    }
}

/// `log Σ exp(x)` with max subtraction; `-inf` when every entry is `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn normalize_log(log_w: &mut [f64]) -> Result<()> {
    let lse = log_sum_exp(log_w);
    if !lse.is_finite() {
        return Err(TrackerError::DegenerateWeights);
    }
    for v in log_w.iter_mut() {
        *v -= lse;
    }
    Ok(())
}

fn log_likelihood(g: f64, tau: f64) -> f64 {
    if g.is_finite() {
        -g / tau
    } else {
        f64::NEG_INFINITY
    }
}

/// Normalized weights `w_k ∝ exp(-g_k / τ)`. Non-finite `g` get zero weight.
pub fn scale_weights(g_values: &[f64], tau: f64) -> Result<Vec<f64>> {
    Ok(scale_log_weights(g_values, tau)?.into_iter().map(f64::exp).collect())
}

/// Log-domain form of [`scale_weights`].
pub fn scale_log_weights(g_values: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(invalid(format!("temperature must be > 0, got {tau}")));
    }
    // Shift by the smallest g before dividing so large distances keep their
    // differences instead of being swamped by the division.
    let g_min = g_values.iter().copied().filter(|g| g.is_finite()).fold(f64::INFINITY, f64::min);
    let shift = if g_min.is_finite() { g_min } else { 0.0 };
    let mut log_w: Vec<f64> = g_values.iter().map(|&g| log_likelihood(g - shift, tau)).collect();
    normalize_log(&mut log_w)?;
    Ok(log_w)
}

/// Candidate poses with log weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleSet {
    pub poses: Vec<PoseSE3>,
    pub log_weights: Vec<f64>,
}

impl ParticleSet {
    pub fn uniform(poses: Vec<PoseSE3>) -> Self {
        let lw = -(poses.len() as f64).ln();
        let log_weights = vec![lw; poses.len()];
        Self { poses, log_weights }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|v| v.exp()).collect()
    }

    /// `1 / Σ w²`.
    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights().iter().map(|w| w * w).sum::<f64>()
    }

    pub fn weight_sum_error(&self) -> f64 {
        (self.weights().iter().sum::<f64>() - 1.0).abs()
    }

    fn check(&self) -> Result<()> {
        if self.poses.is_empty() {
            return Err(invalid("particle set is empty"));
        }
        if self.poses.len() != self.log_weights.len() {
            return Err(invalid("pose and weight counts differ"));
        }
        Ok(())
    }

    fn check_normalized(&self) -> Result<()> {
        self.check()?;
        let err = self.weight_sum_error();
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(err <= 1e-9) {
            return Err(invalid(format!("weights are not normalized (|Σw − 1| = {err:e})")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub particle_count: usize,
    /// Per-axis translation diffusion, meters.
    pub translation_noise: f64,
    /// Per-axis rotation diffusion, radians.
    pub rotation_noise: f64,
    /// Temperature τ of the weight exponential, m².
    pub temperature: f64,
    /// Normalized reading above which a taxel counts as a contact.
    pub activation_threshold: f64,
    /// Resample when ESS drops below this fraction of the particle count.
    pub resample_fraction: f64,
    /// Farthest-point cap on contacts scored per update; 0 keeps all.
    pub max_contacts: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            particle_count: 2048,
            translation_noise: 2e-3,
            rotation_noise: 0.02,
            temperature: 1e-4,
            activation_threshold: 0.05,
            resample_fraction: 0.5,
            max_contacts: 0,
        }
    }
}

impl TrackerConfig {
    /// Settings tuned on simulated two-pad grasps with 3 mm taxel pitch: a
    /// colder temperature so millimetre offsets separate particles, enough
    /// rotational diffusion to follow about 1° of motion per update, and a
    /// contact cap that keeps 2048 particles fast on one core.
    pub fn tuned() -> Self {
        Self {
            translation_noise: 1e-3,
            rotation_noise: 0.03,
            temperature: 1e-5,
            max_contacts: 48,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if self.particle_count == 0 {
            return Err(invalid("particle_count must be >= 1"));
        }
        if !nonneg(self.translation_noise) || !nonneg(self.rotation_noise) {
            return Err(invalid("noise levels must be finite and >= 0"));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(invalid("temperature must be > 0"));
        }
        if !(self.activation_threshold.is_finite() && self.activation_threshold >= 0.0) {
            return Err(invalid("activation_threshold must be >= 0"));
        }
        if !(self.resample_fraction > 0.0 && self.resample_fraction <= 1.0) {
            return Err(invalid("resample_fraction must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Uniform prior: translation in a box around `center`, rotation within
/// `rotation_half_angle` of `center`'s orientation about a uniform axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorBox {
    pub center: PoseSE3,
    /// Half extents per axis, meters.
    pub translation_half_extent: [f64; 3],
    /// Radians.
    pub rotation_half_angle: f64,
}

impl Default for PriorBox {
    /// ±30 mm and ±20° around the identity.
    fn default() -> Self {
        Self {
            center: PoseSE3::identity(),
            translation_half_extent: [0.03; 3],
            rotation_half_angle: 20f64.to_radians(),
        }
    }
}

impl PriorBox {
    pub fn validate(&self) -> Result<()> {
        if !self.center.is_finite() {
            return Err(invalid("prior center is not finite"));
        }
        if self.translation_half_extent.iter().any(|h| !(h.is_finite() && *h >= 0.0)) {
            return Err(invalid("prior half extents must be finite and >= 0"));
        }
        if !(self.rotation_half_angle.is_finite() && self.rotation_half_angle >= 0.0) {
            return Err(invalid("prior rotation half angle must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn sample<R: Rng>(&self, count: usize, rng: &mut R) -> ParticleSet {
        let poses = (0..count)
            .map(|_| {
                let t0 = self.center.translation_array();
                let mut t = [0.0; 3];
                for i in 0..3 {
                    let h = self.translation_half_extent[i];
                    t[i] = t0[i] + if h > 0.0 { rng.random_range(-h..=h) } else { 0.0 };
                }
                let axis: [f64; 3] = UnitSphere.sample(rng);
                let angle = if self.rotation_half_angle > 0.0 {
                    rng.random_range(0.0..=self.rotation_half_angle)
                } else {
                    0.0
                };
                let rot = PoseSE3::from_axis_angle(axis, angle, [0.0; 3]);
                let oriented = PoseSE3::new(*self.center.rotation(), Vector3::zeros()).compose(&rot);
                PoseSE3::new(*oriented.rotation(), Vector3::from(t))
            })
            .collect();
        ParticleSet::uniform(poses)
    }
}

/// Random-walk diffusion: translation plus world-axis Gaussian, rotation
/// right-multiplied by the exponential of a Gaussian rotation vector.
pub fn predict<R: Rng>(particles: &ParticleSet, config: &TrackerConfig, rng: &mut R) -> ParticleSet {
    let mut out = particles.clone();
    let t_noise = Normal::new(0.0, config.translation_noise).ok().filter(|_| config.translation_noise > 0.0);
    let r_noise = Normal::new(0.0, config.rotation_noise).ok().filter(|_| config.rotation_noise > 0.0);
    for pose in out.poses.iter_mut() {
        let mut t = *pose.translation();
        if let Some(n) = &t_noise {
            t += Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng));
        }
        let moved = PoseSE3::new(*pose.rotation(), t);
        *pose = match &r_noise {
            Some(n) => {
                let omega = [n.sample(rng), n.sample(rng), n.sample(rng)];
                moved.compose(&PoseSE3::from_rotation_vector(omega, [0.0; 3]))
            }
            None => moved,
        };
    }
    out
}

/// Source index of each of `draws` systematic pointers `(i + u) / draws`.
pub fn systematic_indices(weights: &[f64], draws: usize, u: f64) -> Vec<usize> {
    let mut out = Vec::with_capacity(draws);
    let last = weights.len().saturating_sub(1);
    let mut cumulative = weights.first().copied().unwrap_or(0.0);
    let mut j = 0;
    for i in 0..draws {
        let pointer = (i as f64 + u) / draws as f64;
        while pointer >= cumulative && j < last {
            j += 1;
            cumulative += weights[j];
        }
        out.push(j);
    }
    out
}

/// Copies of each source particle among `draws` systematic pointers.
pub fn copy_counts(weights: &[f64], draws: usize, u: f64) -> Vec<usize> {
    let mut counts = vec![0; weights.len()];
    for j in systematic_indices(weights, draws, u) {
        counts[j] += 1;
    }
    counts
}

/// Systematic resampling: one uniform offset, `K` evenly spaced pointers.
pub fn resample_systematic<R: Rng>(particles: &ParticleSet, rng: &mut R) -> Result<ParticleSet> {
    particles.check_normalized()?;
    let u: f64 = rng.random_range(0.0..1.0);
    let poses = systematic_indices(&particles.weights(), particles.len(), u)
        .into_iter()
        .map(|j| particles.poses[j])
        .collect();
    Ok(ParticleSet::uniform(poses))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub pose: PoseSE3,
    /// Trace of the weighted translation covariance, m².
    pub translation_cov_trace: f64,
    /// Weighted mean geodesic angle from the mean rotation, radians.
    pub rotation_spread: f64,
}

/// Weighted mean translation and chordal-mean rotation.
pub fn estimate(particles: &ParticleSet) -> Result<PoseEstimate> {
    particles.check_normalized()?;
    let w = particles.weights();
    let anchor = particles.poses[0];
    let t0 = *anchor.translation();
    let mut t = t0;
    for (wk, p) in w.iter().zip(&particles.poses) {
        t += (p.translation() - t0) * *wk;
    }
    let q0 = anchor.rotation().quaternion().coords;
    let same_rotation = particles.poses.iter().all(|p| {
        let c = p.rotation().quaternion().coords;
        c == q0 || c == -q0
    });
    let rotation = if same_rotation {
        *anchor.rotation()
    } else {
        let mut m = Matrix4::zeros();
        for (wk, p) in w.iter().zip(&particles.poses) {
            let c = p.rotation().quaternion().coords;
            m += c * c.transpose() * *wk;
        }
        let eig = m.symmetric_eigen();
        let (imax, _) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("4 eigenvalues");
        let mut v = eig.eigenvectors.column(imax).into_owned();
        // Point into the same hemisphere as the heaviest particle.
        let heaviest = w
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        if v.dot(&particles.poses[heaviest].rotation().quaternion().coords) < 0.0 {
            v = -v;
        }
        UnitQuaternion::from_quaternion(Quaternion::from(v))
    };
    let pose = PoseSE3::new(rotation, t);
    let mut cov_trace = 0.0;
    let mut spread = 0.0;
    for (wk, p) in w.iter().zip(&particles.poses) {
        cov_trace += wk * (p.translation() - t).norm_squared();
        spread += wk * p.rotation().angle_to(&rotation);
    }
    Ok(PoseEstimate {
        pose,
        translation_cov_trace: cov_trace,
        rotation_spread: spread,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// Effective sample size after weighting, before any resampling.
    pub ess: f64,
    pub min_g: f64,
    pub mean_g: f64,
    pub resampled: bool,
    pub contacts: usize,
}

/// One filter step: predict, weight against `contacts`, resample when the
/// effective sample size falls below the configured fraction.
///
/// With no contacts there is nothing to weigh, so weights are left as they
/// are and no resampling happens.
pub fn update<R: Rng>(
    particles: &ParticleSet,
    contacts: &ContactSet,
    obj: &ObjectModel,
    config: &TrackerConfig,
    rng: &mut R,
) -> Result<(ParticleSet, StepReport)> {
    config.validate()?;
    particles.check()?;
    let mut next = predict(particles, config, rng);
    if contacts.is_empty() {
        let ess = next.effective_sample_size();
        return Ok((
            next,
            StepReport {
                ess,
                min_g: f64::NAN,
                mean_g: f64::NAN,
                resampled: false,
                contacts: 0,
            },
        ));
    }
    let scored = contacts.thinned(config.max_contacts);
    let g: Vec<f64> = next
        .poses
        .par_iter()
        .map(|pose| obj.contact_distance(pose, &scored.points))
        .collect();
    let g_min = g.iter().copied().filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min);
    let shift = if g_min.is_finite() { g_min } else { 0.0 };
    for (lw, &gk) in next.log_weights.iter_mut().zip(&g) {
        *lw += log_likelihood(gk - shift, config.temperature);
    }
    normalize_log(&mut next.log_weights)?;
    let ess = next.effective_sample_size();
    let finite: Vec<f64> = g.iter().copied().filter(|v| v.is_finite()).collect();
    let min_g = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let mean_g = finite.iter().sum::<f64>() / finite.len().max(1) as f64;
    let resampled = ess < config.resample_fraction * next.len() as f64;
    if resampled {
        next = resample_systematic(&next, rng)?;
    }
    Ok((
        next,
        StepReport {
            ess,
            min_g,
            mean_g,
            resampled,
            contacts: scored.len(),
        },
    ))
}

/// Stateful tracker: owns the particle set and its random stream.
#[derive(Debug, Clone)]
pub struct PoseTracker {
    config: TrackerConfig,
    object: ObjectModel,
    particles: ParticleSet,
    rng: ChaCha8Rng,
}

impl PoseTracker {
    pub fn new(config: TrackerConfig, object: ObjectModel, prior: &PriorBox, seed: u64) -> Result<Self> {
        config.validate()?;
        prior.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let particles = prior.sample(config.particle_count, &mut rng);
        Ok(Self {
            config,
            object,
            particles,
            rng,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn particles(&self) -> &ParticleSet {
        &self.particles
    }

    /// Advances one step using the tactile cloud of the current tick.
    pub fn step_tactile(&mut self, tactile: &[TactilePoint]) -> Result<StepReport> {
        let contacts = ContactSet::from_tactile(tactile, self.config.activation_threshold);
        self.step(&contacts)
    }

    pub fn step(&mut self, contacts: &ContactSet) -> Result<StepReport> {
        let (next, report) = update(&self.particles, contacts, &self.object, &self.config, &mut self.rng)?;
        self.particles = next;
        Ok(report)
    }

    pub fn estimate(&self) -> Result<PoseEstimate> {
        estimate(&self.particles)
    }
}
