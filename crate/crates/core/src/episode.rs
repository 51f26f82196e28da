//! Episode container: synchronized tuples plus metadata in one binary file.
//!
//! ```text
//! "VTEP"  u16 version  u32 header_len  header (UTF-8 JSON)  u32 crc32(header)
//! then `tuple_count` records:  u32 len  payload[len]  u32 crc32(payload)
//! ```
//!
//! All integers and floats are little-endian; floats are stored as raw IEEE
//! bits so a read returns exactly what was written.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::JointState;
use crate::pointcloud::{CloudXYZF, FusedCloud};
use crate::sensor_model::{PadCalibration, TactileFrame, TaxelGrid, TAXELS_PER_PAD};
use crate::stream_sync::{DropReport, StampedCloud, StreamId, SyncedTuple};

pub const EPISODE_MAGIC: &[u8; 4] = b"VTEP";
pub const EPISODE_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error("not an episode file (bad magic)")]
    BadMagic,
    #[error("episode version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("episode file is truncated")]
    Truncated,
    #[error("checksum mismatch in {0}")]
    Checksum(String),
    #[error("malformed episode: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(std::io::Error),
}

impl From<std::io::Error> for EpisodeError {
    fn from(e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            EpisodeError::Truncated
        } else {
            EpisodeError::Io(e)
        }
    }
}

pub type Result<T> = std::result::Result<T, EpisodeError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetadata {
    pub rate_hz: f64,
    pub tolerance_us: u64,
    pub tactile_pads: Vec<u8>,
    pub cameras: Vec<u8>,
    /// Path or identifier of the calibration the raw frames belong to.
    #[serde(default)]
    pub calibration_ref: Option<String>,
    /// Embedded calibrations, one per pad, when available.
    #[serde(default)]
    pub calibrations: Vec<PadCalibration>,
    #[serde(default)]
    pub drops: DropReport,
    /// Free-form producer information.
    #[serde(default)]
    pub extra: serde_json::Value,
}

impl Default for EpisodeMetadata {
    fn default() -> Self {
        Self {
            rate_hz: crate::stream_sync::DEFAULT_RATE_HZ,
            tolerance_us: crate::stream_sync::DEFAULT_TOLERANCE_US,
            tactile_pads: Vec::new(),
            cameras: Vec::new(),
            calibration_ref: None,
            calibrations: Vec::new(),
            drops: DropReport::default(),
            extra: serde_json::Value::Null,
        }
    }
}

impl EpisodeMetadata {
    pub fn calibration(&self, pad_id: u8) -> Option<&PadCalibration> {
        self.calibrations.iter().find(|c| c.pad_id == pad_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub metadata: EpisodeMetadata,
    pub tuples: Vec<SyncedTuple>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    tuple_count: u64,
    metadata: EpisodeMetadata,
}

struct Enc(Vec<u8>);

impl Enc {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    fn len16(&mut self, n: usize, what: &str) -> Result<()> {
        let n = u16::try_from(n).map_err(|_| EpisodeError::Malformed(format!("too many {what}")))?;
        self.u16(n);
        Ok(())
    }
    fn len32(&mut self, n: usize, what: &str) -> Result<()> {
        let n = u32::try_from(n).map_err(|_| EpisodeError::Malformed(format!("too many {what}")))?;
        self.u32(n);
        Ok(())
    }
    fn str(&mut self, s: &str) -> Result<()> {
        self.len16(s.len(), "frame label bytes")?;
        self.0.extend_from_slice(s.as_bytes());
        Ok(())
    }
}

struct Dec<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Dec<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| EpisodeError::Malformed("record shorter than its contents".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| EpisodeError::Malformed("frame label is not UTF-8".into()))
    }
}

fn encode_tuple(t: &SyncedTuple) -> Result<Vec<u8>> {
    let mut e = Enc(Vec::new());
    e.u64(t.tick_time_us);
    e.len16(t.tactile.len(), "tactile frames")?;
    for f in &t.tactile {
        e.u8(f.pad_id);
        e.u64(f.timestamp_us);
        e.u8(u8::from(f.normalized));
        for v in f.readings.iter() {
            e.f64(v);
        }
    }
    e.len16(t.clouds.len(), "clouds")?;
    for c in &t.clouds {
        e.u8(c.cam_id);
        e.u64(c.timestamp_us);
        e.str(&c.cloud.frame)?;
        e.len32(c.cloud.points.len(), "cloud points")?;
        for p in &c.cloud.points {
            p.iter().for_each(|&v| e.f64(v));
        }
    }
    e.u64(t.joints.timestamp_us);
    e.len16(t.joints.positions.len(), "joints")?;
    t.joints.positions.iter().for_each(|&v| e.f64(v));
    match &t.fused {
        None => e.u8(0),
        Some(f) => {
            e.u8(1);
            e.str(&f.frame)?;
            e.len32(f.points.len(), "fused points")?;
            for p in &f.points {
                p.iter().for_each(|&v| e.f64(v));
            }
        }
    }
    Ok(e.0)
}

fn decode_tuple(buf: &[u8]) -> Result<SyncedTuple> {
    let mut d = Dec { buf, pos: 0 };
    let tick_time_us = d.u64()?;
    let n_tac = d.u16()?;
    let mut tactile = Vec::with_capacity(n_tac as usize);
    for _ in 0..n_tac {
        let pad_id = d.u8()?;
        let timestamp_us = d.u64()?;
        let normalized = d.u8()? != 0;
        let mut values = [0.0; TAXELS_PER_PAD];
        for v in values.iter_mut() {
            *v = d.f64()?;
        }
        tactile.push(TactileFrame {
            pad_id,
            timestamp_us,
            readings: TaxelGrid::from_row_major(&values).expect("256 values"),
            normalized,
        });
    }
    let n_cam = d.u16()?;
    let mut clouds = Vec::with_capacity(n_cam as usize);
    for _ in 0..n_cam {
        let cam_id = d.u8()?;
        let timestamp_us = d.u64()?;
        let frame = d.str()?;
        let n = d.u32()? as usize;
        let mut points = Vec::with_capacity(n.min(buf.len() / 32));
        for _ in 0..n {
            points.push([d.f64()?, d.f64()?, d.f64()?, d.f64()?]);
        }
        clouds.push(StampedCloud {
            cam_id,
            timestamp_us,
            cloud: CloudXYZF { frame, points },
        });
    }
    let joint_ts = d.u64()?;
    let nj = d.u16()?;
    let positions = (0..nj).map(|_| d.f64()).collect::<Result<Vec<_>>>()?;
    let fused = match d.u8()? {
        0 => None,
        1 => {
            let frame = d.str()?;
            let n = d.u32()? as usize;
            let mut points = Vec::with_capacity(n.min(buf.len() / 48));
            for _ in 0..n {
                points.push([d.f64()?, d.f64()?, d.f64()?, d.f64()?, d.f64()?, d.f64()?]);
            }
            Some(FusedCloud { frame, points })
        }
        other => return Err(EpisodeError::Malformed(format!("bad fused flag {other}"))),
    };
    if d.pos != buf.len() {
        return Err(EpisodeError::Malformed("trailing bytes in record".into()));
    }
    Ok(SyncedTuple {
        tick_time_us,
        tactile,
        clouds,
        joints: JointState {
            timestamp_us: joint_ts,
            positions,
        },
        fused,
    })
}

pub fn write_episode_to<W: Write>(mut w: W, episode: &Episode) -> Result<()> {
    let header = serde_json::to_vec(&Header {
        tuple_count: episode.tuples.len() as u64,
        metadata: episode.metadata.clone(),
    })
    .map_err(|e| EpisodeError::Malformed(e.to_string()))?;
    let header_len = u32::try_from(header.len()).map_err(|_| EpisodeError::Malformed("header too large".into()))?;
    w.write_all(EPISODE_MAGIC)?;
    w.write_all(&EPISODE_VERSION.to_le_bytes())?;
    w.write_all(&header_len.to_le_bytes())?;
    w.write_all(&header)?;
    w.write_all(&crc32fast::hash(&header).to_le_bytes())?;
    for t in &episode.tuples {
        let payload = encode_tuple(t)?;
        let len = u32::try_from(payload.len()).map_err(|_| EpisodeError::Malformed("record too large".into()))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(&payload)?;
        w.write_all(&crc32fast::hash(&payload).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_episode_from<R: Read>(mut r: R) -> Result<Episode> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != EPISODE_MAGIC {
        return Err(EpisodeError::BadMagic);
    }
    let mut v = [0u8; 2];
    r.read_exact(&mut v)?;
    let version = u16::from_le_bytes(v);
    if version != EPISODE_VERSION {
        return Err(EpisodeError::VersionMismatch {
            found: version,
            expected: EPISODE_VERSION,
        });
    }
    let header_len = read_u32(&mut r)? as usize;
    let mut header = Vec::new();
    (&mut r).take(header_len as u64).read_to_end(&mut header)?;
    if header.len() != header_len {
        return Err(EpisodeError::Truncated);
    }
    if read_u32(&mut r)? != crc32fast::hash(&header) {
        return Err(EpisodeError::Checksum("header".into()));
    }
    let header: Header = serde_json::from_slice(&header).map_err(|e| EpisodeError::Malformed(e.to_string()))?;
    let mut tuples = Vec::new();
    for i in 0..header.tuple_count {
        let len = read_u32(&mut r)? as usize;
        let mut payload = Vec::new();
        (&mut r).take(len as u64).read_to_end(&mut payload)?;
        if payload.len() != len {
            return Err(EpisodeError::Truncated);
        }
        if read_u32(&mut r)? != crc32fast::hash(&payload) {
            return Err(EpisodeError::Checksum(format!("record {i}")));
        }
        tuples.push(decode_tuple(&payload)?);
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(EpisodeError::Malformed("trailing bytes after last record".into()));
    }
    Ok(Episode {
        metadata: header.metadata,
        tuples,
    })
}

pub fn write_episode(episode: &Episode, path: &Path) -> Result<()> {
    write_episode_to(BufWriter::new(File::create(path).map_err(EpisodeError::Io)?), episode)
}

pub fn read_episode(path: &Path) -> Result<Episode> {
    read_episode_from(BufReader::new(File::open(path).map_err(EpisodeError::Io)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamDropRate {
    pub stream: StreamId,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub tuples: usize,
    pub duration_us: u64,
    pub total_ticks: u64,
    pub drop_rates: Vec<StreamDropRate>,
    pub max_skew_us: u64,
}

pub fn episode_stats(episode: &Episode) -> EpisodeStats {
    let duration_us = match (episode.tuples.first(), episode.tuples.last()) {
        (Some(a), Some(b)) => b.tick_time_us - a.tick_time_us,
        _ => 0,
    };
    let meta = &episode.metadata;
    let streams = meta
        .tactile_pads
        .iter()
        .map(|&p| StreamId::Tactile(p))
        .chain(meta.cameras.iter().map(|&c| StreamId::Camera(c)))
        .chain(std::iter::once(StreamId::Joints));
    EpisodeStats {
        tuples: episode.tuples.len(),
        duration_us,
        total_ticks: meta.drops.total_ticks.max(episode.tuples.len() as u64),
        drop_rates: streams
            .map(|s| StreamDropRate {
                stream: s,
                rate: meta.drops.drop_rate(s),
            })
            .collect(),
        max_skew_us: episode.tuples.iter().map(SyncedTuple::max_skew_us).max().unwrap_or(0),
    }
}
