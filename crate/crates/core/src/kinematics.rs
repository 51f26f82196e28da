//! Serial-chain forward kinematics and taxel placement on finger links.
//!
//! A [`HandModel`] is a set of independent finger chains (each a simple path
//! rooted at the robot base) plus the pads mounted on their links. Joint
//! vectors for a hand are the per-chain joint vectors concatenated in chain
//! order.

use nalgebra::{Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pose::PoseSE3;
use crate::sensor_model::{TactileFrame, GRID_COLS, GRID_ROWS, TAXELS_PER_PAD};

/// Default taxel spacing: a 1.75 mm cell covers about 3 mm².
pub const DEFAULT_PITCH: f64 = 1.75e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, KinematicsError>;

fn invalid(msg: impl Into<String>) -> KinematicsError {
    KinematicsError::InvalidInput(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Joint {
    Revolute { axis: [f64; 3] },
    Prismatic { axis: [f64; 3] },
    Fixed,
}

impl Joint {
    fn is_actuated(&self) -> bool {
        !matches!(self, Joint::Fixed)
    }

    fn motion(&self, q: f64) -> PoseSE3 {
        match *self {
            Joint::Revolute { axis } => PoseSE3::from_axis_angle(axis, q, [0.0; 3]),
            Joint::Prismatic { axis } => {
                PoseSE3::from_translation([axis[0] * q, axis[1] * q, axis[2] * q])
            }
            Joint::Fixed => PoseSE3::identity(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    /// Joint origin relative to the parent link frame.
    #[serde(default)]
    pub fixed: PoseSE3,
    pub joint: Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicChain {
    pub links: Vec<Link>,
}

impl KinematicChain {
    pub fn new(links: Vec<Link>) -> Result<Self> {
        let chain = Self { links };
        chain.validate()?;
        Ok(chain)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, link) in self.links.iter().enumerate() {
            if !link.fixed.is_finite() {
                return Err(invalid(format!("link {i}: non-finite fixed transform")));
            }
            if let Joint::Revolute { axis } | Joint::Prismatic { axis } = link.joint {
                let n = Vector3::from(axis).norm();
                if !n.is_finite() || (n - 1.0).abs() > 1e-9 {
                    return Err(invalid(format!("link {i}: joint axis must be unit length, |axis| = {n}")));
                }
            }
        }
        Ok(())
    }

    pub fn dof(&self) -> usize {
        self.links.iter().filter(|l| l.joint.is_actuated()).count()
    }

    /// Returns one pose per link plus the base (index 0, always identity), so
    /// `poses[i + 1]` is the frame of `links[i]`.
    pub fn forward_kinematics(&self, joints: &[f64]) -> Result<Vec<PoseSE3>> {
        self.forward_kinematics_from(&PoseSE3::identity(), joints)
    }

    /// Forward kinematics with the chain root placed at `base`.
    pub fn forward_kinematics_from(&self, base: &PoseSE3, joints: &[f64]) -> Result<Vec<PoseSE3>> {
        if joints.len() != self.dof() {
            return Err(invalid(format!(
                "chain has {} actuated joints, got {} positions",
                self.dof(),
                joints.len()
            )));
        }
        let mut poses = Vec::with_capacity(self.links.len() + 1);
        poses.push(*base);
        let mut q = joints.iter();
        let mut current = *base;
        for link in &self.links {
            let motion = if link.joint.is_actuated() {
                link.joint.motion(*q.next().expect("length checked"))
            } else {
                PoseSE3::identity()
            };
            current = current.compose(&link.fixed).compose(&motion);
            poses.push(current);
        }
        Ok(poses)
    }
}

/// Taxel grid geometry; rows × cols must be 256.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PadGrid {
    #[serde(default = "default_rows")]
    pub rows: usize,
    #[serde(default = "default_cols")]
    pub cols: usize,
    #[serde(default = "default_pitch")]
    pub pitch: f64,
}

fn default_rows() -> usize {
    GRID_ROWS
}
fn default_cols() -> usize {
    GRID_COLS
}
fn default_pitch() -> f64 {
    DEFAULT_PITCH
}

impl Default for PadGrid {
    fn default() -> Self {
        Self::with_pitch(DEFAULT_PITCH)
    }
}

impl PadGrid {
    pub fn with_pitch(pitch: f64) -> Self {
        Self {
            rows: GRID_ROWS,
            cols: GRID_COLS,
            pitch,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows != GRID_ROWS || self.cols != GRID_COLS {
            return Err(invalid(format!(
                "pad grid must be {GRID_ROWS}x{GRID_COLS}, got {}x{}",
                self.rows, self.cols
            )));
        }
        if !(self.pitch.is_finite() && self.pitch > 0.0) {
            return Err(invalid(format!("pitch must be > 0, got {}", self.pitch)));
        }
        Ok(())
    }

    /// Pad-frame offset of the grid center.
    pub fn center(&self) -> [f64; 3] {
        [
            (self.cols - 1) as f64 * self.pitch / 2.0,
            (self.rows - 1) as f64 * self.pitch / 2.0,
            0.0,
        ]
    }
}

/// A sensor pad attached to one link of one finger chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PadMount {
    #[serde(default)]
    pub chain: usize,
    /// Index into the chain's link list.
    pub link: usize,
    /// Pad origin (taxel row 0, col 0) in the link frame; +z is the sensing normal.
    pub transform: PoseSE3,
    #[serde(default)]
    pub grid: PadGrid,
    pub pad_id: u8,
}

/// Taxel positions of a pad at `pad_pose`, row-major.
///
/// Taxel `(r, c)` sits at `pad_pose ∘ (c·pitch, r·pitch, 0)`.
pub fn taxel_points(pad_pose: &PoseSE3, grid: &PadGrid) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity(grid.rows * grid.cols);
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            out.push(pad_pose.transform_point([c as f64 * grid.pitch, r as f64 * grid.pitch, 0.0]));
        }
    }
    out
}

/// Finger chains plus pad mounts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandModel {
    /// Root of every chain in the robot base frame.
    #[serde(default)]
    pub base: PoseSE3,
    pub chains: Vec<KinematicChain>,
    pub mounts: Vec<PadMount>,
}

impl HandModel {
    pub fn validate(&self) -> Result<()> {
        for chain in &self.chains {
            chain.validate()?;
        }
        for (i, m) in self.mounts.iter().enumerate() {
            m.grid.validate()?;
            let chain = self
                .chains
                .get(m.chain)
                .ok_or_else(|| invalid(format!("mount {i}: no chain {}", m.chain)))?;
            if m.link >= chain.links.len() {
                return Err(invalid(format!("mount {i}: chain {} has no link {}", m.chain, m.link)));
            }
        }
        Ok(())
    }

    pub fn dof(&self) -> usize {
        self.chains.iter().map(|c| c.dof()).sum()
    }

    /// Link poses of every chain in the base frame.
    pub fn link_poses(&self, joints: &[f64]) -> Result<Vec<Vec<PoseSE3>>> {
        if joints.len() != self.dof() {
            return Err(invalid(format!(
                "hand has {} actuated joints, got {} positions",
                self.dof(),
                joints.len()
            )));
        }
        let mut rest = joints;
        let mut out = Vec::with_capacity(self.chains.len());
        for chain in &self.chains {
            let (mine, tail) = rest.split_at(chain.dof());
            out.push(chain.forward_kinematics_from(&self.base, mine)?);
            rest = tail;
        }
        Ok(out)
    }

    /// Pose of every mounted pad, in mount order.
    pub fn pad_poses(&self, joints: &[f64]) -> Result<Vec<PoseSE3>> {
        let links = self.link_poses(joints)?;
        self.mounts
            .iter()
            .map(|m| {
                let link = links
                    .get(m.chain)
                    .and_then(|poses| poses.get(m.link + 1))
                    .ok_or_else(|| invalid(format!("mount references chain {} link {}", m.chain, m.link)))?;
                Ok(link.compose(&m.transform))
            })
            .collect()
    }
}

/// Joint positions at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub timestamp_us: u64,
    pub positions: Vec<f64>,
}

/// One tactile point: base-frame position plus normalized reading.
pub type TactilePoint = [f64; 4];

/// Expands normalized frames into a `256·N_pads × 4` cloud.
///
/// `frames` are matched to mounts by pad id; pad blocks follow mount order.
pub fn tactile_point_cloud(
    frames: &[TactileFrame],
    hand: &HandModel,
    joints: &JointState,
) -> Result<Vec<TactilePoint>> {
    let pad_poses = hand.pad_poses(&joints.positions)?;
    let mut out = Vec::with_capacity(TAXELS_PER_PAD * hand.mounts.len());
    for (mount, pose) in hand.mounts.iter().zip(&pad_poses) {
        let frame = frames
            .iter()
            .find(|f| f.pad_id == mount.pad_id)
            .ok_or_else(|| invalid(format!("no frame for pad {}", mount.pad_id)))?;
        if !frame.normalized {
            return Err(invalid(format!("frame for pad {} is not normalized", mount.pad_id)));
        }
        for (p, v) in taxel_points(pose, &mount.grid).into_iter().zip(frame.readings.iter()) {
            out.push([p[0], p[1], p[2], v]);
        }
    }
    Ok(out)
}

/// Builds a two-finger parallel-jaw hand whose fingers close along the base z axis.
///
/// Each finger is a single prismatic joint; its joint value is half the gap,
/// so `joints = [gap / 2, gap / 2]` puts the two pad surfaces `gap` apart,
/// facing each other, centered on the base origin.
pub fn parallel_gripper(base: PoseSE3, grid: PadGrid, pad_ids: [u8; 2]) -> HandModel {
    let center = grid.center();
    let finger = |axis: [f64; 3]| KinematicChain {
        links: vec![Link {
            fixed: PoseSE3::identity(),
            joint: Joint::Prismatic { axis },
        }],
    };
    // Finger A sits on +z and looks down -z; flipping about x keeps rows/cols right-handed.
    let flip = UnitQuaternion::from_axis_angle(&Unit::new_normalize(Vector3::x()), std::f64::consts::PI);
    let flip_pose = PoseSE3::new(flip, Vector3::zeros());
    let a_offset = flip_pose.rotate(center);
    let mount_a = PoseSE3::new(flip, Vector3::new(-a_offset[0], -a_offset[1], -a_offset[2]));
    let mount_b = PoseSE3::from_translation([-center[0], -center[1], -center[2]]);
    HandModel {
        base,
        chains: vec![finger([0.0, 0.0, 1.0]), finger([0.0, 0.0, -1.0])],
        mounts: vec![
            PadMount {
                chain: 0,
                link: 0,
                transform: mount_a,
                grid,
                pad_id: pad_ids[0],
            },
            PadMount {
                chain: 1,
                link: 0,
                transform: mount_b,
                grid,
                pad_id: pad_ids[1],
            },
        ],
    }
}
