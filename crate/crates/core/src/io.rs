//! Binary field files.
//!
//! Layout (little-endian): `b"QFLD"`, `u32` version, `u32` n, m, q, then
//! `dims[n]` as `u32`, `origin[n]` and `spacing` as `f64`, then
//! `prod(dims) * q * m` values as `f64` (node-major, sheets in stored
//! order), then the fixed-node mask packed LSB-first, one bit per node.
//! A JSON sidecar with the header fields is written next to the file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::qfield::QField;

const MAGIC: &[u8; 4] = b"QFLD";
const VERSION: u32 = 1;

/// Header fields, also the content of the JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub version: u32,
    pub n: u32,
    pub m: u32,
    pub q: u32,
    pub dims: Vec<u32>,
    pub origin: Vec<f64>,
    pub spacing: f64,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn encode_field(f: &QField) -> Vec<u8> {
    let g = f.grid();
    let mut out = Vec::with_capacity(32 + 8 * f.values().len() + f.node_count() / 8 + 1);
    out.extend_from_slice(MAGIC);
    for v in [VERSION, g.n() as u32, f.m() as u32, f.q() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &d in &g.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &o in &g.origin {
        out.extend_from_slice(&o.to_le_bytes());
    }
    out.extend_from_slice(&g.spacing.to_le_bytes());
    for &v in f.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut bits = vec![0u8; f.node_count().div_ceil(8)];
    for (i, &b) in f.fixed_mask().iter().enumerate() {
        if b {
            bits[i / 8] |= 1 << (i % 8);
        }
    }
    out.extend_from_slice(&bits);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, expected_total: usize) -> Result<&'a [u8]> {
        if self.pos + len > self.buf.len() {
            return Err(Error::SizeMismatch {
                expected: expected_total.max(self.pos + len),
                found: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, 0)?.try_into().expect("4 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8, 0)?.try_into().expect("8 bytes"),
        ))
    }
}

pub fn decode_field(buf: &[u8]) -> Result<QField> {
    if buf.len() < 4 || &buf[..4] != MAGIC {
        return Err(Error::Format("missing QFLD magic".into()));
    }
    let mut r = Reader { buf, pos: 4 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let (n, m, q) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    if !(1..=3).contains(&n) || m == 0 || q == 0 {
        return Err(Error::Format(format!("bad header: n={n}, m={m}, q={q}")));
    }
    let dims: Vec<usize> = (0..n)
        .map(|_| r.u32().map(|d| d as usize))
        .collect::<Result<_>>()?;
    let origin: Vec<f64> = (0..n).map(|_| r.f64()).collect::<Result<_>>()?;
    let spacing = r.f64()?;
    if !(spacing > 0.0) {
        return Err(Error::Validation(format!(
            "spacing must be positive, got {spacing}"
        )));
    }
    let grid = GridSpec::new(origin, spacing, dims)?;
    let nodes = grid.node_count();
    let count = nodes * q * m;
    let expected = r.pos + 8 * count + nodes.div_ceil(8);
    if buf.len() != expected {
        return Err(Error::SizeMismatch {
            expected,
            found: buf.len(),
        });
    }
    let raw = r.take(8 * count, expected)?;
    let values: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Validation(format!(
            "non-finite value at position {i}"
        )));
    }
    let bits = r.take(nodes.div_ceil(8), expected)?;
    let fixed = (0..nodes)
        .map(|i| bits[i / 8] >> (i % 8) & 1 == 1)
        .collect();
    QField::from_values(grid, q, m, values)?.with_fixed_mask(fixed)
}

pub fn header_of(f: &QField) -> FieldHeader {
    let g = f.grid();
    FieldHeader {
        version: VERSION,
        n: g.n() as u32,
        m: f.m() as u32,
        q: f.q() as u32,
        dims: g.dims.iter().map(|&d| d as u32).collect(),
        origin: g.origin.clone(),
        spacing: g.spacing,
    }
}

/// Writes the binary file and its `<path>.json` sidecar.
pub fn save_field(f: &QField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_field(f))?;
    fs::write(
        sidecar_path(path),
        serde_json::to_string_pretty(&header_of(f))? + "\n",
    )?;
    Ok(())
}

pub fn load_field(path: impl AsRef<Path>) -> Result<QField> {
    decode_field(&fs::read(path)?)
}
