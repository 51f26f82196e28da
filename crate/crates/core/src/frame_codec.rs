//! Serial readout framing for one 16×16 pad.
//!
//! Layout (338 bytes, multi-byte integers little-endian):
//!
//! | offset | size | field                                         |
//! |--------|------|-----------------------------------------------|
//! | 0      | 2    | magic `A5 5A`                                 |
//! | 2      | 1    | version (1)                                   |
//! | 3      | 1    | pad id                                        |
//! | 4      | 4    | sequence number                               |
//! | 8      | 8    | timestamp, microseconds                       |
//! | 16     | 320  | 256 readings × 10 bits, packed MSB-first      |
//! | 336    | 2    | CRC-16/CCITT-FALSE over bytes `0..336`        |

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sensor_model::{TactileFrame, TaxelGrid, TAXELS_PER_PAD};

pub const MAGIC: [u8; 2] = [0xA5, 0x5A];
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 16;
pub const PAYLOAD_LEN: usize = (TAXELS_PER_PAD * BITS_PER_READING).div_ceil(8);
pub const FRAME_LEN: usize = HEADER_LEN + PAYLOAD_LEN + 2;
pub const BITS_PER_READING: usize = 10;
pub const MAX_READING: u16 = (1 << BITS_PER_READING) - 1;

/// Decoder buffer bound after each internal compaction step.
pub const MAX_BUFFERED: usize = 2 * FRAME_LEN;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("need {needed} more bytes")]
    NeedMoreData { needed: usize },
    #[error("no frame magic; skipped {skipped} bytes")]
    BadMagicSkipped { skipped: usize },
    #[error("crc mismatch: frame carries {stored:#06x}, computed {computed:#06x}")]
    CrcMismatch { stored: u16, computed: u16 },
    #[error("unsupported frame version {0}")]
    BadVersion(u8),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncodeError {
    #[error("reading {value} at taxel {index} is not an integer in [0, 1023]")]
    ReadingOutOfRange { index: usize, value: f64 },
    #[error("cannot encode a normalized frame")]
    Normalized,
}

const fn crc16_table() -> [u16; 256] {
    let mut table = [0u16; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = (i as u16) << 8;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 0x8000 != 0 {
                (crc << 1) ^ 0x1021
            } else {
                crc << 1
            };
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
}

static CRC16_TABLE: [u16; 256] = crc16_table();

/// CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no final xor.
pub fn crc16_ccitt_false(data: &[u8]) -> u16 {
    data.iter().fold(0xFFFF, |crc, &b| {
        (crc << 8) ^ CRC16_TABLE[((crc >> 8) as u8 ^ b) as usize]
    })
}

/// A validated frame as it appears on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireFrame {
    pub pad_id: u8,
    pub seq: u32,
    pub timestamp_us: u64,
    pub readings: Vec<u16>,
}

impl WireFrame {
    pub fn to_tactile_frame(&self) -> TactileFrame {
        let values: Vec<f64> = self.readings.iter().map(|&r| f64::from(r)).collect();
        let grid = TaxelGrid::from_row_major(&values).expect("wire frames carry 256 readings");
        TactileFrame::raw(self.pad_id, self.timestamp_us, grid)
    }
}

fn pack_readings(readings: &[u16], out: &mut [u8]) {
    let mut acc: u32 = 0;
    let mut nbits = 0;
    let mut pos = 0;
    for &r in readings {
        acc = (acc << BITS_PER_READING) | u32::from(r);
        nbits += BITS_PER_READING;
        while nbits >= 8 {
            nbits -= 8;
            out[pos] = (acc >> nbits) as u8;
            pos += 1;
        }
        acc &= (1 << nbits) - 1;
    }
    if nbits > 0 {
        out[pos] = (acc << (8 - nbits)) as u8;
    }
}

fn unpack_readings(payload: &[u8]) -> Vec<u16> {
    let mut out = Vec::with_capacity(TAXELS_PER_PAD);
    let mut acc: u32 = 0;
    let mut nbits = 0;
    for &b in payload {
        acc = (acc << 8) | u32::from(b);
        nbits += 8;
        if nbits >= BITS_PER_READING {
            nbits -= BITS_PER_READING;
            out.push(((acc >> nbits) as u16) & MAX_READING);
            acc &= (1 << nbits) - 1;
        }
        if out.len() == TAXELS_PER_PAD {
            break;
        }
    }
    out
}

fn encode_parts(pad_id: u8, seq: u32, timestamp_us: u64, readings: &[u16]) -> Vec<u8> {
    let mut buf = vec![0u8; FRAME_LEN];
    buf[0..2].copy_from_slice(&MAGIC);
    buf[2] = VERSION;
    buf[3] = pad_id;
    buf[4..8].copy_from_slice(&seq.to_le_bytes());
    buf[8..16].copy_from_slice(&timestamp_us.to_le_bytes());
    pack_readings(readings, &mut buf[HEADER_LEN..HEADER_LEN + PAYLOAD_LEN]);
    let crc = crc16_ccitt_false(&buf[..FRAME_LEN - 2]);
    buf[FRAME_LEN - 2..].copy_from_slice(&crc.to_le_bytes());
    buf
}

/// Encodes a raw frame. Readings must be integers in `[0, 1023]`.
pub fn encode_frame(frame: &TactileFrame, seq: u32) -> Result<Vec<u8>, EncodeError> {
    if frame.normalized {
        return Err(EncodeError::Normalized);
    }
    let mut readings = Vec::with_capacity(TAXELS_PER_PAD);
    for (index, value) in frame.readings.iter().enumerate() {
        let ok = value.is_finite()
            && value >= 0.0
            && value <= f64::from(MAX_READING)
            && value.fract() == 0.0;
        if !ok {
            return Err(EncodeError::ReadingOutOfRange { index, value });
        }
        readings.push(value as u16);
    }
    Ok(encode_parts(frame.pad_id, seq, frame.timestamp_us, &readings))
}

pub fn encode_wire_frame(frame: &WireFrame) -> Result<Vec<u8>, EncodeError> {
    if frame.readings.len() != TAXELS_PER_PAD {
        return Err(EncodeError::ReadingOutOfRange {
            index: frame.readings.len().min(TAXELS_PER_PAD),
            value: f64::NAN,
        });
    }
    if let Some((index, &r)) = frame.readings.iter().enumerate().find(|(_, &r)| r > MAX_READING) {
        return Err(EncodeError::ReadingOutOfRange {
            index,
            value: f64::from(r),
        });
    }
    Ok(encode_parts(frame.pad_id, frame.seq, frame.timestamp_us, &frame.readings))
}

/// Decodes one candidate frame starting at `bytes[0]`. Extra trailing bytes are ignored.
pub fn decode_frame(bytes: &[u8]) -> Result<WireFrame, DecodeError> {
    if bytes.len() >= 2 && bytes[..2] != MAGIC {
        let skipped = bytes
            .windows(2)
            .position(|w| w == MAGIC)
            .unwrap_or(bytes.len());
        return Err(DecodeError::BadMagicSkipped { skipped });
    }
    if bytes.len() < FRAME_LEN {
        return Err(DecodeError::NeedMoreData {
            needed: FRAME_LEN - bytes.len(),
        });
    }
    let frame = &bytes[..FRAME_LEN];
    if frame[2] != VERSION {
        return Err(DecodeError::BadVersion(frame[2]));
    }
    let stored = u16::from_le_bytes([frame[FRAME_LEN - 2], frame[FRAME_LEN - 1]]);
    let computed = crc16_ccitt_false(&frame[..FRAME_LEN - 2]);
    if stored != computed {
        return Err(DecodeError::CrcMismatch { stored, computed });
    }
    Ok(WireFrame {
        pad_id: frame[3],
        seq: u32::from_le_bytes(frame[4..8].try_into().unwrap()),
        timestamp_us: u64::from_le_bytes(frame[8..16].try_into().unwrap()),
        readings: unpack_readings(&frame[HEADER_LEN..HEADER_LEN + PAYLOAD_LEN]),
    })
}

/// Anomaly counters accumulated by a [`StreamDecoder`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderStats {
    pub frames: u64,
    pub bytes_skipped: u64,
    pub crc_mismatches: u64,
    pub bad_versions: u64,
}

impl DecoderStats {
    /// Number of resynchronization events of any kind.
    pub fn resync_events(&self) -> u64 {
        self.crc_mismatches + self.bad_versions + u64::from(self.bytes_skipped > 0)
    }
}

/// Incremental decoder for an unsynchronized byte stream.
///
/// Owns its unconsumed bytes; feed chunks in arrival order.
#[derive(Debug, Default)]
pub struct StreamDecoder {
    buf: Vec<u8>,
    stats: DecoderStats,
}

impl StreamDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stats(&self) -> DecoderStats {
        self.stats
    }

    pub fn buffered_len(&self) -> usize {
        self.buf.len()
    }

    /// Appends `chunk` and returns every complete, valid frame now available.
    pub fn feed(&mut self, chunk: &[u8]) -> Vec<WireFrame> {
        let mut out = Vec::new();
        // Bounded slices keep the buffer under MAX_BUFFERED whatever the chunk size.
        for piece in chunk.chunks(FRAME_LEN) {
            self.buf.extend_from_slice(piece);
            self.drain(&mut out);
            debug_assert!(self.buf.len() < FRAME_LEN);
        }
        out
    }

    fn drain(&mut self, out: &mut Vec<WireFrame>) {
        let mut start = 0;
        loop {
            let window = &self.buf[start..];
            match decode_frame(window) {
                Ok(frame) => {
                    self.stats.frames += 1;
                    out.push(frame);
                    start += FRAME_LEN;
                }
                Err(DecodeError::NeedMoreData { .. }) => break,
                Err(DecodeError::BadMagicSkipped { skipped }) => {
                    // Keep a trailing 0xA5: it may be the first half of the next magic.
                    let skip = if skipped == window.len() && window.last() == Some(&MAGIC[0]) {
                        skipped - 1
                    } else {
                        skipped
                    };
                    self.stats.bytes_skipped += skip as u64;
                    start += skip;
                    if skip == 0 || start >= self.buf.len() {
                        break;
                    }
                }
                Err(DecodeError::CrcMismatch { .. }) => {
                    self.stats.crc_mismatches += 1;
                    start += MAGIC.len();
                }
                Err(DecodeError::BadVersion(_)) => {
                    self.stats.bad_versions += 1;
                    start += MAGIC.len();
                }
            }
        }
        self.buf.drain(..start);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame_with(value: f64, pad: u8, t: u64) -> TactileFrame {
        TactileFrame::raw(pad, t, TaxelGrid::filled(value))
    }

    #[test]
    fn crc_check_value() {
        assert_eq!(crc16_ccitt_false(b"123456789"), 0x29B1);
    }

    #[test]
    fn layout_constants() {
        assert_eq!(PAYLOAD_LEN, 320);
        assert_eq!(FRAME_LEN, 338);
    }

    #[test]
    fn zero_frame_has_zero_payload() {
        let bytes = encode_frame(&frame_with(0.0, 0, 0), 0).unwrap();
        assert_eq!(bytes.len(), FRAME_LEN);
        assert!(bytes[HEADER_LEN..HEADER_LEN + PAYLOAD_LEN].iter().all(|&b| b == 0));
    }

    #[test]
    fn full_scale_payload_is_all_ones() {
        let bytes = encode_frame(&frame_with(1023.0, 0, 0), 0).unwrap();
        assert!(bytes[HEADER_LEN..HEADER_LEN + PAYLOAD_LEN].iter().all(|&b| b == 0xFF));
    }

    #[test]
    fn msb_first_packing() {
        let mut readings = vec![0u16; TAXELS_PER_PAD];
        readings[0] = 0b10_0000_0001;
        readings[1] = 0b11_1111_1111;
        let mut payload = [0u8; PAYLOAD_LEN];
        pack_readings(&readings, &mut payload);
        assert_eq!(payload[0], 0b1000_0000);
        assert_eq!(payload[1], 0b0111_1111);
        assert_eq!(payload[2], 0b1111_0000);
        assert_eq!(unpack_readings(&payload), readings);
    }

    #[test]
    fn round_trip_fields() {
        let mut g = TaxelGrid::default();
        g.set(3, 4, 777.0);
        g.set(15, 15, 1.0);
        let f = TactileFrame::raw(9, 123_456_789_012, g);
        let w = decode_frame(&encode_frame(&f, 42).unwrap()).unwrap();
        assert_eq!(w.seq, 42);
        assert_eq!(w.pad_id, 9);
        assert_eq!(w.timestamp_us, 123_456_789_012);
        assert_eq!(w.to_tactile_frame(), f);
    }

    #[test]
    fn rejects_out_of_range_readings() {
        assert!(matches!(
            encode_frame(&frame_with(1024.0, 0, 0), 0),
            Err(EncodeError::ReadingOutOfRange { index: 0, .. })
        ));
        assert!(encode_frame(&frame_with(1.5, 0, 0), 0).is_err());
        assert!(encode_frame(&frame_with(-1.0, 0, 0), 0).is_err());
    }

    #[test]
    fn flipped_payload_byte_fails_crc() {
        let mut bytes = encode_frame(&frame_with(300.0, 1, 5), 7).unwrap();
        bytes[100] ^= 0x01;
        assert!(matches!(decode_frame(&bytes), Err(DecodeError::CrcMismatch { .. })));
    }

    #[test]
    fn version_two_is_rejected() {
        let mut bytes = encode_frame(&frame_with(300.0, 1, 5), 7).unwrap();
        bytes[2] = 2;
        let crc = crc16_ccitt_false(&bytes[..FRAME_LEN - 2]);
        bytes[FRAME_LEN - 2..].copy_from_slice(&crc.to_le_bytes());
        assert_eq!(decode_frame(&bytes), Err(DecodeError::BadVersion(2)));
    }

    #[test]
    fn short_input_needs_more() {
        let bytes = encode_frame(&frame_with(1.0, 1, 5), 7).unwrap();
        assert_eq!(
            decode_frame(&bytes[..100]),
            Err(DecodeError::NeedMoreData { needed: FRAME_LEN - 100 })
        );
    }

    fn stream(n: u32) -> Vec<u8> {
        (0..n)
            .flat_map(|i| encode_frame(&frame_with(f64::from(i * 13 % 1024), 2, u64::from(i)), i).unwrap())
            .collect()
    }

    #[test]
    fn small_chunks_recover_all_frames() {
        let bytes = stream(10);
        let mut dec = StreamDecoder::new();
        let frames: Vec<WireFrame> = bytes.chunks(7).flat_map(|c| dec.feed(c)).collect();
        assert_eq!(frames.len(), 10);
        assert!(frames.iter().enumerate().all(|(i, f)| f.seq == i as u32));
    }

    #[test]
    fn leading_garbage_is_skipped() {
        let mut bytes = vec![0x00, 0x13, 0xA5, 0x77, 0xFF];
        bytes.extend(stream(10));
        let mut dec = StreamDecoder::new();
        let frames = dec.feed(&bytes);
        assert_eq!(frames.len(), 10);
        assert_eq!(dec.stats().bytes_skipped, 5);
    }

    #[test]
    fn whole_stream_in_one_chunk_stays_bounded() {
        let bytes = stream(20);
        let mut dec = StreamDecoder::new();
        assert_eq!(dec.feed(&bytes).len(), 20);
        assert!(dec.buffered_len() <= MAX_BUFFERED);
        assert_eq!(dec.buffered_len(), 0);
    }

    #[test]
    fn split_magic_across_chunks() {
        let bytes = stream(2);
        let mut dec = StreamDecoder::new();
        let mut n = dec.feed(&bytes[..FRAME_LEN + 1]).len();
        n += dec.feed(&bytes[FRAME_LEN + 1..]).len();
        assert_eq!(n, 2);
        assert_eq!(dec.stats().bytes_skipped, 0);
    }
}
