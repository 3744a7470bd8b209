//! Length-prefixed binary trajectory files. All integers and floats are
//! little-endian.
//!
//! ```text
//! "OSMOREC1"                      8 bytes
//! kind                            u8   1 = demo frames, 2 = robot frames
//! reserved                        u8   0
//! id length, id                   u16, UTF-8 bytes
//! source length, source           u16, UTF-8 bytes
//! rate_hz                         f64
//! frame count                     u32
//! frames                          count x (u32 length, payload)
//!
//! demo payload  (344 bytes): timestamp_us u64, rgb [32], ir_left [32],
//!                            ir_right [32], tactile 30 x f64
//! robot payload (384 bytes): timestamp_us u64, rgb [32], q 13 x f64,
//!                            tactile 30 x f64
//! ```
//!
//! Image references are raw SHA-256 digests. Tactile values are ordered
//! `[axis][magnetometer][finger]`.

use super::{DatasetError, DemoFrame, ImageRef, RobotFrame, TactileArray, Trajectory};
use crate::retarget::JOINT_COUNT;

pub const RECORD_MAGIC: &[u8; 8] = b"OSMOREC1";

pub trait FrameRecord: Sized + Clone + Send + Sync {
    const KIND: u8;
    const PAYLOAD_LEN: usize;
    fn timestamp_us(&self) -> u64;
    fn encode(&self, out: &mut Vec<u8>);
    fn decode(payload: &[u8]) -> Result<Self, DatasetError>;
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DatasetError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(DatasetError::Format(format!("truncated at byte {}", self.pos)));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], DatasetError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u16(&mut self) -> Result<u16, DatasetError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32, DatasetError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, DatasetError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64, DatasetError> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn string(&mut self) -> Result<String, DatasetError> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| DatasetError::Format(e.to_string()))
    }

    fn tactile(&mut self) -> Result<TactileArray, DatasetError> {
        let mut t = [[[0.0; 5]; 2]; 3];
        for axis in t.iter_mut() {
            for mag in axis.iter_mut() {
                for v in mag.iter_mut() {
                    *v = self.f64()?;
                }
            }
        }
        Ok(t)
    }
}

fn put_tactile(out: &mut Vec<u8>, t: &TactileArray) {
    for v in t.iter().flatten().flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl FrameRecord for DemoFrame {
    const KIND: u8 = 1;
    const PAYLOAD_LEN: usize = 8 + 3 * 32 + 30 * 8;

    fn timestamp_us(&self) -> u64 {
        self.timestamp_us
    }

    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.timestamp_us.to_le_bytes());
        out.extend_from_slice(&self.rgb.0);
        out.extend_from_slice(&self.ir_left.0);
        out.extend_from_slice(&self.ir_right.0);
        put_tactile(out, &self.tactile);
    }

    fn decode(payload: &[u8]) -> Result<Self, DatasetError> {
        let mut r = Reader { bytes: payload, pos: 0 };
        Ok(Self {
            timestamp_us: r.u64()?,
            rgb: ImageRef(r.array()?),
            ir_left: ImageRef(r.array()?),
            ir_right: ImageRef(r.array()?),
            tactile: r.tactile()?,
        })
    }
}

impl FrameRecord for RobotFrame {
    const KIND: u8 = 2;
    const PAYLOAD_LEN: usize = 8 + 32 + JOINT_COUNT * 8 + 30 * 8;

    fn timestamp_us(&self) -> u64 {
        self.timestamp_us
    }

    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.timestamp_us.to_le_bytes());
        out.extend_from_slice(&self.rgb.0);
        for q in &self.q {
            out.extend_from_slice(&q.to_le_bytes());
        }
        put_tactile(out, &self.tactile);
    }

    fn decode(payload: &[u8]) -> Result<Self, DatasetError> {
        let mut r = Reader { bytes: payload, pos: 0 };
        let timestamp_us = r.u64()?;
        let rgb = ImageRef(r.array()?);
        let mut q = [0.0; JOINT_COUNT];
        for v in q.iter_mut() {
            *v = r.f64()?;
        }
        Ok(Self { timestamp_us, rgb, q, tactile: r.tactile()? })
    }
}

fn put_string(out: &mut Vec<u8>, s: &str) -> Result<(), DatasetError> {
    let n = u16::try_from(s.len()).map_err(|_| DatasetError::Format(format!("string too long: {} bytes", s.len())))?;
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

pub fn encode_trajectory<F: FrameRecord>(traj: &Trajectory<F>) -> Result<Vec<u8>, DatasetError> {
    let mut out = Vec::with_capacity(64 + traj.frames.len() * (F::PAYLOAD_LEN + 4));
    out.extend_from_slice(RECORD_MAGIC);
    out.push(F::KIND);
    out.push(0);
    put_string(&mut out, &traj.id)?;
    put_string(&mut out, &traj.source)?;
    out.extend_from_slice(&traj.rate_hz.to_le_bytes());
    let count = u32::try_from(traj.frames.len()).map_err(|_| DatasetError::Format("too many frames".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for f in &traj.frames {
        out.extend_from_slice(&(F::PAYLOAD_LEN as u32).to_le_bytes());
        let start = out.len();
        f.encode(&mut out);
        debug_assert_eq!(out.len() - start, F::PAYLOAD_LEN);
    }
    Ok(out)
}

pub fn decode_trajectory<F: FrameRecord>(bytes: &[u8]) -> Result<Trajectory<F>, DatasetError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != RECORD_MAGIC {
        return Err(DatasetError::Format("bad magic".into()));
    }
    let kind = r.array::<2>()?[0];
    if kind != F::KIND {
        return Err(DatasetError::Format(format!("record kind {kind}, expected {}", F::KIND)));
    }
    let id = r.string()?;
    let source = r.string()?;
    let rate_hz = r.f64()?;
    let count = r.u32()? as usize;
    let mut frames = Vec::with_capacity(count.min(1 << 20));
    for i in 0..count {
        let len = r.u32()? as usize;
        if len != F::PAYLOAD_LEN {
            return Err(DatasetError::Format(format!("frame {i}: length {len}, expected {}", F::PAYLOAD_LEN)));
        }
        frames.push(F::decode(r.take(len)?)?);
    }
    if r.pos != bytes.len() {
        return Err(DatasetError::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Trajectory { id, source, rate_hz, frames })
}
