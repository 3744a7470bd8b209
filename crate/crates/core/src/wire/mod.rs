//! Binary packet format for streaming glove frames to a host.
//!
//! Layout (little-endian, 447 bytes):
//!
//! | offset | size | field                                       |
//! |--------|------|---------------------------------------------|
//! | 0      | 2    | sync `A5 5A`                                |
//! | 2      | 1    | version (`1`)                               |
//! | 3      | 2    | seq, u16, wrapping                          |
//! | 5      | 8    | timestamp, µs, u64                          |
//! | 13     | 432  | 12 taxel blocks of 36 bytes                 |
//! | 445    | 2    | CRC-16/CCITT-FALSE over bytes 2..445        |
//!
//! A taxel block holds magnetometer 0 x,y,z then magnetometer 1 x,y,z as
//! i32 in 0.01 µT, then accel x,y,z as i16 in 0.001 m/s² and gyro x,y,z as
//! i16 in 0.001 rad/s. IMU values saturate at the i16 range.

mod align;
mod crc;

pub use align::{align_to_clock, timestamp_align, AlignError, AlignedTable, Timed};
pub use crc::crc16_ccitt_false;

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::sensor_sim::{GloveFrame, Vec3, MAGS_PER_TAXEL, TAXEL_COUNT};

pub const SYNC: [u8; 2] = [0xA5, 0x5A];
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 13;
pub const TAXEL_BLOCK_LEN: usize = MAGS_PER_TAXEL * 3 * 4 + 6 * 2;
pub const PAYLOAD_LEN: usize = TAXEL_COUNT * TAXEL_BLOCK_LEN;
pub const PACKET_LEN: usize = HEADER_LEN + PAYLOAD_LEN + 2;

/// Magnetic field quantum, µT per count.
pub const FIELD_LSB_UT: f64 = 0.01;
pub const ACCEL_LSB: f64 = 0.001;
pub const GYRO_LSB: f64 = 0.001;

/// Stream files are raw concatenated packets with this extension.
pub const STREAM_EXTENSION: &str = "osmo";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamStats {
    pub packets_ok: u64,
    /// Packets inferred missing from sequence-number gaps.
    pub packets_dropped: u64,
    /// Times the decoder re-acquired a valid packet after discarding bytes.
    pub resyncs: u64,
    /// Packets that failed the integrity check where a packet was expected.
    pub crc_failures: u64,
}

fn quantize_field(v: f64) -> i32 {
    (v / FIELD_LSB_UT).round() as i32
}

fn quantize_i16(v: f64, lsb: f64) -> i16 {
    (v / lsb).round() as i16
}

/// Serializes a frame. Fixed length; the ambient field is not transmitted.
pub fn encode_packet(frame: &GloveFrame, seq: u16) -> Vec<u8> {
    let mut out = Vec::with_capacity(PACKET_LEN);
    out.extend_from_slice(&SYNC);
    out.push(VERSION);
    out.extend_from_slice(&seq.to_le_bytes());
    out.extend_from_slice(&frame.timestamp_us.to_le_bytes());
    for t in 0..TAXEL_COUNT {
        for m in 0..MAGS_PER_TAXEL {
            for axis in 0..3 {
                out.extend_from_slice(&quantize_field(frame.readings[t][m][axis]).to_le_bytes());
            }
        }
        for (i, &v) in frame.imu[t].iter().enumerate() {
            let lsb = if i < 3 { ACCEL_LSB } else { GYRO_LSB };
            out.extend_from_slice(&quantize_i16(v, lsb).to_le_bytes());
        }
    }
    let crc = crc16_ccitt_false(&out[2..]);
    out.extend_from_slice(&crc.to_le_bytes());
    debug_assert_eq!(out.len(), PACKET_LEN);
    out
}

/// Encodes frames with consecutive sequence numbers starting at `first_seq`.
pub fn encode_stream(frames: &[GloveFrame], first_seq: u16) -> Vec<u8> {
    let mut out = Vec::with_capacity(frames.len() * PACKET_LEN);
    for (i, f) in frames.iter().enumerate() {
        out.extend_from_slice(&encode_packet(f, first_seq.wrapping_add(i as u16)));
    }
    out
}

fn packet_is_valid(packet: &[u8]) -> bool {
    debug_assert_eq!(packet.len(), PACKET_LEN);
    let crc = u16::from_le_bytes([packet[PACKET_LEN - 2], packet[PACKET_LEN - 1]]);
    packet[2] == VERSION && crc16_ccitt_false(&packet[2..PACKET_LEN - 2]) == crc
}

/// Parses a packet that already passed [`packet_is_valid`].
fn parse_packet(packet: &[u8]) -> (u16, GloveFrame) {
    let seq = u16::from_le_bytes([packet[3], packet[4]]);
    let timestamp_us = u64::from_le_bytes(packet[5..13].try_into().unwrap());
    let mut frame = GloveFrame::zeroed(timestamp_us);
    let mut cursor = HEADER_LEN;
    let i32_at = |c: &mut usize| {
        let v = i32::from_le_bytes(packet[*c..*c + 4].try_into().unwrap());
        *c += 4;
        v
    };
    for t in 0..TAXEL_COUNT {
        for m in 0..MAGS_PER_TAXEL {
            let x = i32_at(&mut cursor);
            let y = i32_at(&mut cursor);
            let z = i32_at(&mut cursor);
            frame.readings[t][m] =
                Vec3::new(x as f64, y as f64, z as f64) * FIELD_LSB_UT;
        }
        for i in 0..6 {
            let raw = i16::from_le_bytes([packet[cursor], packet[cursor + 1]]);
            cursor += 2;
            let lsb = if i < 3 { ACCEL_LSB } else { GYRO_LSB };
            frame.imu[t][i] = raw as f64 * lsb;
        }
    }
    (seq, frame)
}

/// Decodes a single packet; `None` if framing or CRC is wrong.
pub fn decode_packet(bytes: &[u8]) -> Option<(u16, GloveFrame)> {
    if bytes.len() != PACKET_LEN || bytes[..2] != SYNC || !packet_is_valid(bytes) {
        return None;
    }
    Some(parse_packet(bytes))
}

/// Incremental decoder for one byte stream.
///
/// Corrupt packets are dropped and the decoder hunts byte by byte for the
/// next sync pattern. Only a packet that fails its check at the position
/// where the previous one ended counts as a CRC failure; false sync
/// patterns found while hunting are skipped silently.
#[derive(Debug, Clone)]
pub struct StreamDecoder {
    stats: StreamStats,
    buffer: Vec<u8>,
    last_seq: Option<u16>,
    locked: bool,
    discarded: bool,
}

impl Default for StreamDecoder {
    fn default() -> Self {
        Self::with_stats(StreamStats::default())
    }
}

impl StreamDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_stats(stats: StreamStats) -> Self {
        Self { stats, buffer: Vec::new(), last_seq: None, locked: true, discarded: false }
    }

    pub fn stats(&self) -> StreamStats {
        self.stats
    }

    /// Bytes held back waiting for the rest of a packet.
    pub fn pending(&self) -> usize {
        self.buffer.len()
    }

    pub fn feed(&mut self, bytes: &[u8]) -> Vec<GloveFrame> {
        self.buffer.extend_from_slice(bytes);
        let mut frames = Vec::new();
        let mut pos = 0;
        let buf = std::mem::take(&mut self.buffer);
        while pos + PACKET_LEN <= buf.len() {
            let candidate = &buf[pos..pos + PACKET_LEN];
            if candidate[..2] == SYNC && packet_is_valid(candidate) {
                let (seq, frame) = parse_packet(candidate);
                if self.discarded {
                    self.stats.resyncs += 1;
                    self.discarded = false;
                }
                if let Some(prev) = self.last_seq {
                    let gap = seq.wrapping_sub(prev).wrapping_sub(1);
                    self.stats.packets_dropped += gap as u64;
                }
                self.last_seq = Some(seq);
                self.stats.packets_ok += 1;
                self.locked = true;
                frames.push(frame);
                pos += PACKET_LEN;
            } else {
                if self.locked && candidate[..2] == SYNC {
                    self.stats.crc_failures += 1;
                }
                self.locked = false;
                self.discarded = true;
                pos += 1;
            }
        }
        self.buffer = buf[pos..].to_vec();
        frames
    }
}

/// Decodes a complete byte stream, continuing from `stats`.
pub fn decode_stream(bytes: &[u8], stats: StreamStats) -> (Vec<GloveFrame>, StreamStats) {
    let mut decoder = StreamDecoder::with_stats(stats);
    let frames = decoder.feed(bytes);
    (frames, decoder.stats())
}

pub fn write_stream_file(path: &Path, frames: &[GloveFrame]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&encode_stream(frames, 0))?;
    f.flush()
}

pub fn read_stream_file(path: &Path) -> std::io::Result<(Vec<GloveFrame>, StreamStats)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    Ok(decode_stream(&bytes, StreamStats::default()))
}
