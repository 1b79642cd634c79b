//! Middlebury `.flo` files: `PIEH` magic, little-endian `i32` width and
//! height, then row-major interleaved `f32` `(du, dv)` pairs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::FlowField;
use crate::error::{Error, Result};
use crate::geometry::Grid;

const MAGIC: &[u8; 4] = b"PIEH";
/// Components above this magnitude mark unknown flow.
const UNKNOWN_THRESHOLD: f32 = 1e9;
const UNKNOWN_VALUE: f32 = 1e10;
const MAX_DIM: i32 = 1 << 15;

pub fn read_flo(path: &Path) -> Result<FlowField> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_flo_from(&mut BufReader::new(file), path)
}

pub fn read_flo_from(reader: &mut impl Read, path: &Path) -> Result<FlowField> {
    let mut header = [0u8; 12];
    reader.read_exact(&mut header).map_err(|e| Error::io(path, e))?;
    if &header[0..4] != MAGIC {
        return Err(Error::parse(path, 0, "bad magic, expected PIEH"));
    }
    let width = i32::from_le_bytes(header[4..8].try_into().unwrap());
    let height = i32::from_le_bytes(header[8..12].try_into().unwrap());
    if !(1..=MAX_DIM).contains(&width) || !(1..=MAX_DIM).contains(&height) {
        return Err(Error::parse(path, 0, format!("implausible dimensions {width}x{height}")));
    }
    let (w, h) = (width as u32, height as u32);
    let n = w as usize * h as usize;
    let mut raw = vec![0u8; n * 8];
    reader.read_exact(&mut raw).map_err(|e| Error::io(path, e))?;
    let mut du = Vec::with_capacity(n);
    let mut dv = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for px in raw.chunks_exact(8) {
        let u = f32::from_le_bytes(px[0..4].try_into().unwrap());
        let v = f32::from_le_bytes(px[4..8].try_into().unwrap());
        let ok = u.is_finite() && v.is_finite() && u.abs() < UNKNOWN_THRESHOLD && v.abs() < UNKNOWN_THRESHOLD;
        du.push(if ok { u as f64 } else { 0.0 });
        dv.push(if ok { v as f64 } else { 0.0 });
        valid.push(ok);
    }
    FlowField::new(Grid::from_vec(w, h, du)?, Grid::from_vec(w, h, dv)?, Grid::from_vec(w, h, valid)?)
}

pub fn write_flo(path: &Path, flow: &FlowField) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_flo_to(&mut w, flow).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Invalid pixels are written as the Middlebury unknown marker.
pub fn write_flo_to(w: &mut impl Write, flow: &FlowField) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(flow.width() as i32).to_le_bytes())?;
    w.write_all(&(flow.height() as i32).to_le_bytes())?;
    for ((u, v), ok) in flow.du.iter().zip(flow.dv.iter()).zip(flow.valid.iter()) {
        let (u, v) = if *ok { (*u as f32, *v as f32) } else { (UNKNOWN_VALUE, UNKNOWN_VALUE) };
        w.write_all(&u.to_le_bytes())?;
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}
