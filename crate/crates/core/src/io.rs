//! BFLD field files: one JSON header line, then little-endian f64 data,
//! row-major per component, (re, im) interleaved for complex fields.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{Grid, GridHeader};
use crate::error::{Error, Result};
use crate::fields::{ScalarField, TwoForm, VectorField};
use crate::C64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldHeader {
    pub name: String,
    pub dimension: usize,
    pub counts: Vec<usize>,
    pub extents: Vec<[f64; 2]>,
    pub components: usize,
    pub complex: bool,
}

/// A field read back from disk.
#[derive(Clone, Debug)]
pub struct FieldData {
    pub header: FieldHeader,
    pub grid: Arc<Grid>,
    pub comps: Vec<Vec<C64>>,
}

impl FieldData {
    pub fn into_scalar(mut self) -> Result<ScalarField> {
        if self.comps.len() != 1 {
            return Err(Error::Format(format!("expected 1 component, found {}", self.comps.len())));
        }
        ScalarField::new(self.grid, self.comps.pop().unwrap())
    }
    pub fn into_vector(self) -> Result<VectorField> {
        VectorField::new(self.grid, self.comps)
    }
    pub fn into_two_form(self) -> Result<TwoForm> {
        let n = self.grid.dim();
        if self.comps.len() != n * (n - 1) / 2 {
            return Err(Error::Format("two-form component count".into()));
        }
        Ok(TwoForm { grid: self.grid, comps: self.comps })
    }
}

/// Write components of one grid; `complex = false` stores real parts only
/// and requires all imaginary parts to be zero.
pub fn write_bfld<W: Write>(out: &mut W, name: &str, grid: &Grid, comps: &[&[C64]], complex: bool) -> Result<()> {
    if !complex && comps.iter().any(|c| c.iter().any(|v| v.im != 0.0)) {
        return Err(Error::Format("real BFLD requested for a field with imaginary parts".into()));
    }
    let gh = grid.header();
    let header = FieldHeader {
        name: name.to_string(),
        dimension: gh.dimension,
        counts: gh.counts,
        extents: gh.extents,
        components: comps.len(),
        complex,
    };
    let line = serde_json::to_string(&header).map_err(|e| Error::Format(e.to_string()))?;
    out.write_all(line.as_bytes())?;
    out.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(comps.iter().map(|c| c.len()).sum::<usize>() * 16);
    for c in comps {
        for v in c.iter() {
            buf.extend_from_slice(&v.re.to_le_bytes());
            if complex {
                buf.extend_from_slice(&v.im.to_le_bytes());
            }
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_bfld<R: Read>(input: R) -> Result<FieldData> {
    let mut r = BufReader::new(input);
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: FieldHeader =
        serde_json::from_str(line.trim_end_matches('\n')).map_err(|e| Error::Format(format!("BFLD header: {e}")))?;
    let grid = Arc::new(Grid::from_header(&GridHeader {
        dimension: header.dimension,
        counts: header.counts.clone(),
        extents: header.extents.clone(),
    })?);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let per = if header.complex { 16 } else { 8 };
    let expect = grid.len() * header.components * per;
    if bytes.len() != expect {
        return Err(Error::Format(format!("BFLD payload has {} bytes, expected {expect}", bytes.len())));
    }
    let f = |k: usize| f64::from_le_bytes(bytes[k..k + 8].try_into().unwrap());
    let comps = (0..header.components)
        .map(|c| {
            (0..grid.len())
                .map(|i| {
                    let o = (c * grid.len() + i) * per;
                    if header.complex {
                        C64::new(f(o), f(o + 8))
                    } else {
                        C64::new(f(o), 0.0)
                    }
                })
                .collect()
        })
        .collect();
    Ok(FieldData { header, grid, comps })
}

pub fn save_scalar(path: &Path, name: &str, f: &ScalarField) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_bfld(&mut file, name, &f.grid, &[&f.values], true)?;
    file.flush()?;
    Ok(())
}

pub fn save_vector(path: &Path, name: &str, f: &VectorField) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let comps: Vec<&[C64]> = f.comps.iter().map(|c| c.as_slice()).collect();
    write_bfld(&mut file, name, &f.grid, &comps, true)?;
    file.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<FieldData> {
    read_bfld(std::fs::File::open(path)?)
}

/// Little-endian (re, im) bytes of a complex slice.
pub(crate) fn complex_bytes(v: &[C64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(v.len() * 16);
    for x in v {
        out.extend_from_slice(&x.re.to_le_bytes());
        out.extend_from_slice(&x.im.to_le_bytes());
    }
    out
}

pub(crate) fn complex_from_bytes(b: &[u8]) -> Result<Vec<C64>> {
    if b.len() % 16 != 0 {
        return Err(Error::Format("complex payload length not a multiple of 16".into()));
    }
    Ok(b.chunks_exact(16)
        .map(|c| {
            C64::new(f64::from_le_bytes(c[..8].try_into().unwrap()), f64::from_le_bytes(c[8..].try_into().unwrap()))
        })
        .collect())
}
