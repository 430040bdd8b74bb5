//! Flat little-endian layout for head outputs, so an external training or
//! inference harness can exchange them with this crate.
//!
//! ```text
//! header:  b"VVRD" | u32 version | u32 n_classes | u32 record_count
//! record:  u32 view | u32 stride | u32 col | u32 row | u32 anchor
//!          f32 zeta_2d[n_classes]
//!          f32 theta_2d[4]                      (du, dv, dw, dh)
//!          n_classes x { f32 theta_3d[8], f32 zeta_3d }
//! ```

use std::io::{Read, Write};

use super::{ClassHead, CodecError, RawDetection, Theta2d, Theta3d};

pub const WIRE_MAGIC: [u8; 4] = *b"VVRD";
pub const WIRE_VERSION: u32 = 1;

/// One anchor's outputs with its location.
#[derive(Debug, Clone, PartialEq)]
pub struct WireRecord {
    pub view: u32,
    pub stride: u32,
    pub col: u32,
    pub row: u32,
    pub anchor: u32,
    pub raw: RawDetection,
}

fn record_floats(n_c: usize) -> usize {
    n_c + 4 + 9 * n_c
}

pub fn write_records<W: Write>(mut w: W, n_classes: u32, records: &[WireRecord]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(16 + records.len() * (20 + 4 * record_floats(n_classes as usize)));
    buf.extend_from_slice(&WIRE_MAGIC);
    for v in [WIRE_VERSION, n_classes, records.len() as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for r in records {
        if r.raw.n_classes() != n_classes as usize || r.raw.heads.len() != n_classes as usize {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidInput,
                "record class count differs from the header",
            ));
        }
        for v in [r.view, r.stride, r.col, r.row, r.anchor] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut put = |x: f64| buf.extend_from_slice(&(x as f32).to_le_bytes());
        r.raw.zeta_2d.iter().for_each(|&z| put(z));
        r.raw.theta_2d.to_array().into_iter().for_each(&mut put);
        for h in &r.raw.heads {
            h.theta.to_array().into_iter().for_each(&mut put);
            put(h.zeta);
        }
    }
    w.write_all(&buf)
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take4(&mut self) -> Result<[u8; 4], CodecError> {
        let end = self.pos + 4;
        let s = self
            .data
            .get(self.pos..end)
            .ok_or_else(|| CodecError::Wire(format!("truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(s.try_into().expect("four bytes"))
    }

    fn u32(&mut self) -> Result<u32, CodecError> {
        self.take4().map(u32::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64, CodecError> {
        self.take4().map(|b| f32::from_le_bytes(b) as f64)
    }
}

/// Reads a stream written by [`write_records`]; returns the class count and
/// the records.
pub fn read_records<R: Read>(mut r: R) -> Result<(u32, Vec<WireRecord>), CodecError> {
    let mut data = Vec::new();
    r.read_to_end(&mut data).map_err(|e| CodecError::Wire(e.to_string()))?;
    let mut c = Cursor { data: &data, pos: 0 };
    if c.take4()? != WIRE_MAGIC {
        return Err(CodecError::Wire("bad magic".into()));
    }
    let version = c.u32()?;
    if version != WIRE_VERSION {
        return Err(CodecError::Wire(format!("unsupported version {version}")));
    }
    let n_c = c.u32()?;
    let count = c.u32()? as usize;
    let need = 20 + 4 * record_floats(n_c as usize);
    if data.len() - c.pos != count.saturating_mul(need) {
        return Err(CodecError::Wire(format!(
            "expected {count} records of {need} bytes, found {} bytes",
            data.len() - c.pos
        )));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (view, stride, col, row, anchor) = (c.u32()?, c.u32()?, c.u32()?, c.u32()?, c.u32()?);
        let zeta_2d = (0..n_c).map(|_| c.f64()).collect::<Result<Vec<_>, _>>()?;
        let theta_2d = Theta2d::from_array([c.f64()?, c.f64()?, c.f64()?, c.f64()?]);
        let mut heads = Vec::with_capacity(n_c as usize);
        for _ in 0..n_c {
            let mut t = [0.0; 8];
            for v in t.iter_mut() {
                *v = c.f64()?;
            }
            heads.push(ClassHead {
                theta: Theta3d::from_array(t),
                zeta: c.f64()?,
            });
        }
        out.push(WireRecord {
            view,
            stride,
            col,
            row,
            anchor,
            raw: RawDetection { zeta_2d, theta_2d, heads },
        });
    }
    Ok((n_c, out))
}
