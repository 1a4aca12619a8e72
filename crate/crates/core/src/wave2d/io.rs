//! VAF1 binary fields and CSV seismograms.
//!
//! VAF1: magic `VAF1`, then little-endian `u32 nx, nz, ncomp, nt` and
//! `f64 h, dt` (36 bytes), then `nt * ncomp * nx * nz` little-endian `f64`
//! in the order time, component, x, z (z fastest).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::field::Field5;
use super::grid::Grid2D;
use super::solver::RecordedWavefield;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"VAF1";
pub const HEADER_LEN: usize = 36;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Header {
    pub nx: u32,
    pub nz: u32,
    pub ncomp: u32,
    pub nt: u32,
    pub h: f64,
    pub dt: f64,
}

impl Header {
    fn values(&self) -> usize {
        self.nx as usize * self.nz as usize * self.ncomp as usize * self.nt as usize
    }
}

/// Raw VAF1 contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Vaf {
    pub header: Header,
    pub data: Vec<f64>,
}

pub fn write_vaf(path: impl AsRef<Path>, header: Header, data: &[f64]) -> Result<()> {
    let p = path.as_ref();
    if data.len() != header.values() {
        return Err(Error::DimensionMismatch {
            expected: header.values(),
            found: data.len(),
        });
    }
    let f = File::create(p).map_err(|e| Error::io(p, e))?;
    let mut w = BufWriter::new(f);
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * data.len());
    buf.extend_from_slice(MAGIC);
    for v in [header.nx, header.nz, header.ncomp, header.nt] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&header.h.to_le_bytes());
    buf.extend_from_slice(&header.dt.to_le_bytes());
    for x in data {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf).map_err(|e| Error::io(p, e))?;
    w.flush().map_err(|e| Error::io(p, e))
}

pub fn read_vaf(path: impl AsRef<Path>) -> Result<Vaf> {
    let p = path.as_ref();
    let f = File::open(p).map_err(|e| Error::io(p, e))?;
    let mut bytes = Vec::new();
    BufReader::new(f).read_to_end(&mut bytes).map_err(|e| Error::io(p, e))?;
    parse_vaf(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", p.display())),
        other => other,
    })
}

pub fn parse_vaf(bytes: &[u8]) -> Result<Vaf> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing VAF1 header".into()));
    }
    let u = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap());
    let d = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let header = Header {
        nx: u(0),
        nz: u(1),
        ncomp: u(2),
        nt: u(3),
        h: d(20),
        dt: d(28),
    };
    let body = &bytes[HEADER_LEN..];
    let n = (header.nx as u64) * (header.nz as u64) * (header.ncomp as u64) * (header.nt as u64);
    if body.len() as u64 != 8 * n {
        return Err(Error::Format(format!(
            "header announces {n} values, body holds {} bytes",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Vaf { header, data })
}

/// Five-component cell field with `nt = 1`.
pub fn write_parameters(path: impl AsRef<Path>, f: &Field5, h: f64) -> Result<()> {
    let header = Header {
        nx: f.nx as u32,
        nz: f.nz as u32,
        ncomp: 5,
        nt: 1,
        h,
        dt: 0.0,
    };
    let data: Vec<f64> = f.data.iter().flatten().copied().collect();
    write_vaf(path, header, &data)
}

pub fn read_parameters(path: impl AsRef<Path>) -> Result<Field5> {
    let v = read_vaf(&path)?;
    let hd = v.header;
    if hd.ncomp != 5 || hd.nt != 1 {
        return Err(Error::Format(format!(
            "{}: expected a 5-component static field, found ncomp = {}, nt = {}",
            path.as_ref().display(),
            hd.ncomp,
            hd.nt
        )));
    }
    let nc = hd.nx as usize * hd.nz as usize;
    let mut f = Field5::zeros(hd.nx as usize, hd.nz as usize);
    for k in 0..5 {
        f.data[k].copy_from_slice(&v.data[k * nc..(k + 1) * nc]);
    }
    Ok(f)
}

/// Velocity snapshots on the node grid, every `stride` steps.
pub fn write_wavefield(path: impl AsRef<Path>, grid: &Grid2D, rec: &RecordedWavefield, stride: usize) -> Result<()> {
    let stride = stride.max(1);
    let nn = grid.nodes();
    let steps: Vec<usize> = (0..=rec.nt).step_by(stride).collect();
    let mut data = Vec::with_capacity(steps.len() * 2 * nn);
    for &n in &steps {
        let u = &rec.states[n];
        for c in 0..2 {
            data.extend((0..nn).map(|k| u[2 * k + c]));
        }
    }
    let header = Header {
        nx: (grid.nx + 1) as u32,
        nz: (grid.nz + 1) as u32,
        ncomp: 2,
        nt: steps.len() as u32,
        h: grid.h,
        dt: rec.dt * stride as f64,
    };
    write_vaf(path, header, &data)
}

/// CSV with header `t,comp0,comp1,...` and 17 significant digits.
pub fn write_seismogram_csv(path: impl AsRef<Path>, dt: f64, traces: &[Vec<f64>]) -> Result<()> {
    let p = path.as_ref();
    let f = File::create(p).map_err(|e| Error::io(p, e))?;
    let mut w = BufWriter::new(f);
    let ncomp = traces.first().map_or(0, |r| r.len());
    let mut s = String::from("t");
    for c in 0..ncomp {
        s.push_str(&format!(",comp{c}"));
    }
    s.push('\n');
    for (n, row) in traces.iter().enumerate() {
        s.push_str(&format!("{:.16e}", n as f64 * dt));
        for x in row {
            s.push_str(&format!(",{x:.16e}"));
        }
        s.push('\n');
    }
    w.write_all(s.as_bytes()).map_err(|e| Error::io(p, e))?;
    w.flush().map_err(|e| Error::io(p, e))
}

/// Reads a seismogram CSV back into `(times, rows)`.
pub fn read_seismogram_csv(path: impl AsRef<Path>) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let p = path.as_ref();
    let s = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
    let mut lines = s.lines();
    let head = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty file", p.display())))?;
    if !head.starts_with('t') {
        return Err(Error::Format(format!("{}: header must start with `t`", p.display())));
    }
    let ncol = head.split(',').count();
    let mut times = Vec::new();
    let mut rows = Vec::new();
    for (k, l) in lines.enumerate() {
        if l.trim().is_empty() {
            continue;
        }
        let v: std::result::Result<Vec<f64>, _> = l.split(',').map(|x| x.trim().parse::<f64>()).collect();
        let v = v.map_err(|e| Error::Format(format!("{}: line {}: {e}", p.display(), k + 2)))?;
        if v.len() != ncol {
            return Err(Error::Format(format!(
                "{}: line {} has {} columns, header has {ncol}",
                p.display(),
                k + 2,
                v.len()
            )));
        }
        times.push(v[0]);
        rows.push(v[1..].to_vec());
    }
    Ok((times, rows))
}
