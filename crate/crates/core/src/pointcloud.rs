//! Visual point-cloud preprocessing and visuo-tactile fusion.
//!
//! Visual clouds go through merge → crop → farthest-point down-sampling →
//! base-frame transform, and are then stacked with the tactile cloud into a
//! single 6-channel representation `(x, y, z, value, is_visual, is_tactile)`.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::TactilePoint;
use crate::pose::PoseSE3;

/// Default visual point budget after down-sampling.
pub const DEFAULT_N_VIS: usize = 512;

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("frame mismatch: expected '{expected}', found '{found}'")]
    FrameMismatch { expected: String, found: String },
    #[error("ply: {0}")]
    Ply(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CloudError>;

/// `N × 4` points `(x, y, z, f)` expressed in a named frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudXYZF {
    pub frame: String,
    pub points: Vec<[f64; 4]>,
}

impl CloudXYZF {
    pub fn new(frame: impl Into<String>, points: Vec<[f64; 4]>) -> Result<Self> {
        let cloud = Self {
            frame: frame.into(),
            points,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn empty(frame: impl Into<String>) -> Self {
        Self {
            frame: frame.into(),
            points: Vec::new(),
        }
    }

    /// Visual points carry an empty feature channel.
    pub fn from_xyz(frame: impl Into<String>, xyz: &[[f64; 3]]) -> Result<Self> {
        Self::new(frame, xyz.iter().map(|p| [p[0], p[1], p[2], 0.0]).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame.is_empty() {
            return Err(CloudError::InvalidInput("cloud has no frame label".into()));
        }
        if let Some(i) = self
            .points
            .iter()
            .position(|p| !p[..3].iter().all(|v| v.is_finite()))
        {
            return Err(CloudError::InvalidInput(format!("point {i} has a non-finite coordinate")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn xyz(&self) -> Vec<[f64; 3]> {
        self.points.iter().map(|p| [p[0], p[1], p[2]]).collect()
    }
}

fn check_frame(expected: &str, found: &str) -> Result<()> {
    if expected != found {
        return Err(CloudError::FrameMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        });
    }
    Ok(())
}

/// Concatenates clouds in input order. An empty list yields an empty cloud
/// labelled `frame`.
pub fn merge(clouds: &[CloudXYZF], frame: &str) -> Result<CloudXYZF> {
    let mut points = Vec::with_capacity(clouds.iter().map(|c| c.len()).sum());
    for c in clouds {
        check_frame(frame, &c.frame)?;
        points.extend_from_slice(&c.points);
    }
    Ok(CloudXYZF {
        frame: frame.to_string(),
        points,
    })
}

/// Axis-aligned box, boundary inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        let b = Self { min, max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN bounds must fail too
        if (0..3).any(|i| !(self.min[i] <= self.max[i])) {
            return Err(CloudError::InvalidInput(format!(
                "box min {:?} must not exceed max {:?}",
                self.min, self.max
            )));
        }
        Ok(())
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        (0..3).all(|i| self.min[i] <= p[i] && p[i] <= self.max[i])
    }
}

pub fn crop_aabb(cloud: &CloudXYZF, bbox: &Aabb) -> CloudXYZF {
    CloudXYZF {
        frame: cloud.frame.clone(),
        points: cloud
            .points
            .iter()
            .filter(|p| bbox.contains(&p[..]))
            .copied()
            .collect(),
    }
}

#[inline]
pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Greedy farthest-point selection starting from index `start`.
///
/// Each step picks the point whose squared distance to the selected set is
/// largest; ties go to the lowest index. Returns `min(k, N)` indices in
/// selection order.
pub fn fps_indices_from(points: &[[f64; 4]], k: usize, start: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(CloudError::InvalidInput("k must be >= 1".into()));
    }
    if points.is_empty() {
        return Err(CloudError::InvalidInput("cannot sample from an empty cloud".into()));
    }
    if start >= points.len() {
        return Err(CloudError::InvalidInput(format!(
            "start index {start} out of range for {} points",
            points.len()
        )));
    }
    let k = k.min(points.len());
    let mut selected = Vec::with_capacity(k);
    let mut nearest = vec![f64::INFINITY; points.len()];
    let mut taken = vec![false; points.len()];
    let mut current = start;
    selected.push(current);
    taken[current] = true;
    while selected.len() < k {
        let anchor = points[current];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let d = dist2(p, &anchor);
            if d < nearest[i] {
                nearest[i] = d;
            }
            if nearest[i] > best_d {
                best_d = nearest[i];
                best = i;
            }
        }
        current = best;
        taken[current] = true;
        selected.push(current);
    }
    Ok(selected)
}

/// Seeded start index for [`fps_downsample`].
pub fn fps_start_index(n: usize, seed: u64) -> usize {
    ChaCha8Rng::seed_from_u64(seed).random_range(0..n)
}

/// Farthest-point down-sampling with a uniformly drawn, seeded start point.
pub fn fps_indices(cloud: &CloudXYZF, k: usize, seed: u64) -> Result<Vec<usize>> {
    if cloud.is_empty() {
        return Err(CloudError::InvalidInput("cannot sample from an empty cloud".into()));
    }
    fps_indices_from(&cloud.points, k, fps_start_index(cloud.len(), seed))
}

pub fn fps_downsample(cloud: &CloudXYZF, k: usize, seed: u64) -> Result<CloudXYZF> {
    let idx = fps_indices(cloud, k, seed)?;
    Ok(CloudXYZF {
        frame: cloud.frame.clone(),
        points: idx.into_iter().map(|i| cloud.points[i]).collect(),
    })
}

/// Maps every point by `pose`, keeps the feature channel and relabels the frame.
pub fn transform(cloud: &CloudXYZF, pose: &PoseSE3, new_frame: &str) -> CloudXYZF {
    CloudXYZF {
        frame: new_frame.to_string(),
        points: cloud
            .points
            .iter()
            .map(|p| {
                let q = pose.transform_point([p[0], p[1], p[2]]);
                [q[0], q[1], q[2], p[3]]
            })
            .collect(),
    }
}

/// Fused representation: `(x, y, z, value, is_visual, is_tactile)` per point,
/// visual block first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedCloud {
    pub frame: String,
    pub points: Vec<[f64; 6]>,
}

impl FusedCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn visual_count(&self) -> usize {
        self.points.iter().filter(|p| p[4] == 1.0).count()
    }

    pub fn tactile_count(&self) -> usize {
        self.points.iter().filter(|p| p[5] == 1.0).count()
    }
}

pub fn fuse(visual: &CloudXYZF, tactile: &CloudXYZF) -> Result<FusedCloud> {
    check_frame(&visual.frame, &tactile.frame)?;
    let mut points = Vec::with_capacity(visual.len() + tactile.len());
    points.extend(visual.points.iter().map(|p| [p[0], p[1], p[2], 0.0, 1.0, 0.0]));
    points.extend(tactile.points.iter().map(|p| [p[0], p[1], p[2], p[3], 0.0, 1.0]));
    Ok(FusedCloud {
        frame: visual.frame.clone(),
        points,
    })
}

/// Wraps a kinematics tactile cloud as a labelled cloud.
pub fn tactile_cloud(frame: &str, points: &[TactilePoint]) -> Result<CloudXYZF> {
    CloudXYZF::new(frame, points.to_vec())
}

/// Settings for the visual half of the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisualPipeline {
    /// Frame the camera clouds arrive in; the crop box is expressed here.
    pub frame: String,
    pub crop: Aabb,
    /// Maps `frame` into the robot base frame.
    #[serde(default)]
    pub to_base: PoseSE3,
    #[serde(default = "default_base_frame")]
    pub base_frame: String,
    #[serde(default = "default_n_vis")]
    pub n_vis: usize,
}

fn default_base_frame() -> String {
    "base".to_string()
}
fn default_n_vis() -> usize {
    DEFAULT_N_VIS
}

impl VisualPipeline {
    /// Merge, crop, down-sample, transform. A crop that leaves nothing
    /// yields an empty cloud rather than an error.
    pub fn run(&self, clouds: &[CloudXYZF], seed: u64) -> Result<CloudXYZF> {
        self.crop.validate()?;
        let merged = merge(clouds, &self.frame)?;
        let cropped = crop_aabb(&merged, &self.crop);
        let sampled = if cropped.is_empty() {
            cropped
        } else {
            fps_downsample(&cropped, self.n_vis, seed)?
        };
        Ok(transform(&sampled, &self.to_base, &self.base_frame))
    }
}

/// Writes an ASCII PLY with `x y z f` vertex properties.
pub fn write_ply<W: Write>(mut w: W, cloud: &CloudXYZF) -> Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "comment frame {}", cloud.frame)?;
    writeln!(w, "element vertex {}", cloud.len())?;
    for name in ["x", "y", "z", "f"] {
        writeln!(w, "property double {name}")?;
    }
    writeln!(w, "end_header")?;
    for p in &cloud.points {
        // `{:?}` prints the shortest representation that round-trips exactly.
        writeln!(w, "{:?} {:?} {:?} {:?}", p[0], p[1], p[2], p[3])?;
    }
    Ok(())
}

/// Reads an ASCII PLY vertex list. `x`, `y`, `z` are required; `f` defaults to 0.
/// The frame comes from a `comment frame <name>` line, else `default_frame`.
pub fn read_ply<R: BufRead>(r: R, default_frame: &str) -> Result<CloudXYZF> {
    let mut lines = r.lines();
    let mut next = || -> Result<Option<String>> { lines.next().transpose().map_err(CloudError::from) };
    if next()?.as_deref().map(str::trim) != Some("ply") {
        return Err(CloudError::Ply("missing 'ply' magic line".into()));
    }
    let mut frame = default_frame.to_string();
    let mut vertices: Option<usize> = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    loop {
        let line = next()?.ok_or_else(|| CloudError::Ply("unterminated header".into()))?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["format", fmt, ..] if *fmt != "ascii" => {
                return Err(CloudError::Ply(format!("unsupported format '{fmt}'")))
            }
            ["comment", "frame", name] => frame = name.to_string(),
            ["element", "vertex", n] => {
                vertices = Some(n.parse().map_err(|_| CloudError::Ply(format!("bad vertex count '{n}'")))?);
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", _, name] if in_vertex => props.push(name.to_string()),
            _ => {}
        }
    }
    let n = vertices.ok_or_else(|| CloudError::Ply("no vertex element".into()))?;
    let col = |name: &str| props.iter().position(|p| p == name);
    let (ix, iy, iz) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(CloudError::Ply("vertex element needs x, y and z".into())),
    };
    let i_f = col("f");
    let mut points = Vec::with_capacity(n);
    for k in 0..n {
        let line = next()?.ok_or_else(|| CloudError::Ply(format!("expected {n} vertices, got {k}")))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| CloudError::Ply(format!("vertex {k}: bad number '{t}'"))))
            .collect::<Result<_>>()?;
        if vals.len() < props.len() {
            return Err(CloudError::Ply(format!("vertex {k}: expected {} values", props.len())));
        }
        points.push([vals[ix], vals[iy], vals[iz], i_f.map_or(0.0, |i| vals[i])]);
    }
    CloudXYZF::new(frame, points)
}
