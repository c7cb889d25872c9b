//! `KWF1` field files: an ASCII header `KWF1 <n> <n>\n` followed by `n*n`
//! little-endian f64 values in row-major order.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};

const MAGIC: &str = "KWF1";

pub fn encode(field: &ScalarField) -> Vec<u8> {
    let n = field.grid().n();
    let mut out = format!("{MAGIC} {n} {n}\n").into_bytes();
    out.reserve(8 * field.values().len());
    for v in field.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<ScalarField> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("missing KWF1 header line".into()))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::Format("header is not ASCII".into()))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 3 || parts[0] != MAGIC {
        return Err(Error::Format(format!("bad header {header:?}")));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad dimension {s:?}")))
    };
    let (n1, n2) = (parse(parts[1])?, parse(parts[2])?);
    if n1 != n2 {
        return Err(Error::Format(format!("non-square field {n1}x{n2}")));
    }
    let grid = Grid::new(n1)?;
    let body = &bytes[nl + 1..];
    if body.len() != 8 * grid.len() {
        return Err(Error::Format(format!(
            "expected {} data bytes, found {}",
            8 * grid.len(),
            body.len()
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    ScalarField::new(grid, values)
}

pub fn write(path: impl AsRef<Path>, field: &ScalarField) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(field))?;
    Ok(())
}

pub fn read(path: impl AsRef<Path>) -> Result<ScalarField> {
    decode(&fs::read(path)?)
}
