//! FFLD binary field dumps and small CSV exports.
//!
//! Layout (little-endian): `b"FFLD"`, `u32` version (1), `u32` dimension,
//! `u32` points per axis, `f64` half extent, `f64` time stamp, then `M^N`
//! `f64` values in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{FrontError, Result};
use crate::grid::{GridSpec, ScalarField};

pub const FFLD_MAGIC: &[u8; 4] = b"FFLD";
pub const FFLD_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 8 + 8;

/// A decoded FFLD record.
#[derive(Debug, Clone, PartialEq)]
pub struct FfldRecord {
    pub dim: usize,
    pub points_per_axis: usize,
    pub half_extent: f64,
    pub time: f64,
    pub values: Vec<f64>,
}

impl FfldRecord {
    /// Attaches the payload to a grid with the same node layout.
    pub fn into_field(self, grid: &GridSpec) -> Result<ScalarField> {
        if grid.dim() != self.dim
            || grid.points_per_axis() != self.points_per_axis
            || (grid.half_extent() - self.half_extent).abs() > 1e-12 * self.half_extent
        {
            return Err(FrontError::GridMismatch(format!(
                "dump is {}D/{} nodes/L={}, grid is {}D/{} nodes/L={}",
                self.dim,
                self.points_per_axis,
                self.half_extent,
                grid.dim(),
                grid.points_per_axis(),
                grid.half_extent()
            )));
        }
        ScalarField::new(*grid, self.values)
    }

    /// Node spacing implied by the header.
    pub fn spacing(&self) -> f64 {
        2.0 * self.half_extent / (self.points_per_axis as f64 - 1.0)
    }
}

pub fn encode_ffld(field: &ScalarField, time: f64) -> Vec<u8> {
    let grid = field.grid();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * field.len());
    out.extend_from_slice(FFLD_MAGIC);
    out.extend_from_slice(&FFLD_VERSION.to_le_bytes());
    out.extend_from_slice(&(grid.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(grid.points_per_axis() as u32).to_le_bytes());
    out.extend_from_slice(&grid.half_extent().to_le_bytes());
    out.extend_from_slice(&time.to_le_bytes());
    for v in field.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_ffld(bytes: &[u8]) -> Result<FfldRecord> {
    if bytes.len() < HEADER_LEN {
        return Err(FrontError::Format(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[0..4] != FFLD_MAGIC {
        return Err(FrontError::Format("bad magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != FFLD_VERSION {
        return Err(FrontError::Format(format!("unsupported version {version}")));
    }
    let dim = u32_at(8) as usize;
    let points_per_axis = u32_at(12) as usize;
    let half_extent = f64_at(16);
    let time = f64_at(24);
    if !(1..=3).contains(&dim) {
        return Err(FrontError::UnsupportedDimension(dim));
    }
    if points_per_axis < 3 || !(half_extent > 0.0) {
        return Err(FrontError::Format("degenerate grid header".into()));
    }
    let count = points_per_axis
        .checked_pow(dim as u32)
        .ok_or_else(|| FrontError::Format("node count overflows".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != 8 * count {
        return Err(FrontError::Format(format!(
            "payload has {} bytes, expected {}",
            payload.len(),
            8 * count
        )));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(FfldRecord { dim, points_per_axis, half_extent, time, values })
}

pub fn write_ffld(path: impl AsRef<Path>, field: &ScalarField, time: f64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode_ffld(field, time))?;
    w.flush()?;
    Ok(())
}

pub fn read_ffld(path: impl AsRef<Path>) -> Result<FfldRecord> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode_ffld(&bytes)
}

/// One row per node: the index tuple followed by the value.
pub fn write_field_csv(path: impl AsRef<Path>, field: &ScalarField) -> Result<()> {
    let grid = field.grid();
    let mut w = BufWriter::new(File::create(path)?);
    let header = ["i", "j", "k"][..grid.dim()].join(",");
    writeln!(w, "{header},value")?;
    for (n, v) in field.values().iter().enumerate() {
        let idx = grid.multi_index(n);
        let cols: Vec<String> = idx[..grid.dim()].iter().map(|i| i.to_string()).collect();
        writeln!(w, "{},{v:e}", cols.join(","))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_fixed() {
        let g = GridSpec::new(2, 0.5, 3, 1.0, 0.1).unwrap();
        let f = ScalarField::from_fn(g, |x| x[0] + 2.0 * x[1]).unwrap();
        let bytes = encode_ffld(&f, 0.25);
        assert_eq!(&bytes[0..4], b"FFLD");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 3);
        assert_eq!(f64::from_le_bytes(bytes[16..24].try_into().unwrap()), 0.5);
        assert_eq!(f64::from_le_bytes(bytes[24..32].try_into().unwrap()), 0.25);
        assert_eq!(bytes.len(), 32 + 9 * 8);
        // row-major: second value is node (0, 1) at x = (-0.5, 0).
        assert_eq!(f64::from_le_bytes(bytes[40..48].try_into().unwrap()), -0.5);
    }

    #[test]
    fn corrupt_dumps_rejected() {
        let g = GridSpec::new(1, 1.0, 4, 1.0, 0.1).unwrap();
        let bytes = encode_ffld(&ScalarField::constant(g, 1.0), 0.0);
        assert!(decode_ffld(&bytes[..10]).is_err());
        assert!(decode_ffld(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_ffld(&bad).is_err());
        let mut bad = bytes;
        bad[4] = 2;
        assert!(decode_ffld(&bad).is_err());
    }

    #[test]
    fn record_checks_grid() {
        let g = GridSpec::new(2, 1.0, 5, 1.0, 0.1).unwrap();
        let rec = decode_ffld(&encode_ffld(&ScalarField::constant(g, 3.0), 1.0)).unwrap();
        let other = GridSpec::new(2, 1.0, 7, 1.0, 0.1).unwrap();
        assert!(rec.clone().into_field(&other).is_err());
        assert_eq!(rec.into_field(&g).unwrap().values()[0], 3.0);
    }

    #[test]
    fn csv_export() {
        let dir = tempfile::tempdir().unwrap();
        let g = GridSpec::new(2, 1.0, 3, 1.0, 0.1).unwrap();
        let path = dir.path().join("f.csv");
        write_field_csv(&path, &ScalarField::constant(g, 0.5)).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "i,j,value");
        assert_eq!(lines.len(), 10);
        assert!(lines[2].starts_with("0,1,"));
    }
}
