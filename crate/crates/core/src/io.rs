//! Binary file formats: `TNSR1` for dense tensors and `MASK1` for
//! observation index sets.
//!
//! `TNSR1`: magic `TNSR`, version byte 0x01, u32 LE order N, N × u64 LE
//! dims, then Π I_n × f64 LE values in generalized column-major order.
//!
//! `MASK1`: magic `MASK`, version 0x01, u32 LE order N, N × u64 LE dims,
//! u64 LE count, then count × u64 LE strictly increasing 1-based linear
//! indices.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, MAX_ORDER};

/// Contents of a MASK1 file: the dims of the target tensor and the index set Ω.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskFile {
    pub dims: Vec<usize>,
    pub indices: Vec<usize>,
}

fn malformed(format: &'static str, reason: impl Into<String>) -> Error {
    Error::MalformedFile {
        format,
        reason: reason.into(),
    }
}

fn read_header<R: Read>(r: &mut R, format: &'static str, magic: &[u8; 4]) -> Result<Vec<usize>> {
    let mut got = [0u8; 4];
    r.read_exact(&mut got)?;
    if &got != magic {
        return Err(malformed(format, format!("bad magic bytes {got:?}")));
    }
    let version = r.read_u8()?;
    if version != 0x01 {
        return Err(malformed(format, format!("unsupported version {version}")));
    }
    let order = r.read_u32::<LittleEndian>()? as usize;
    if order == 0 || order > MAX_ORDER {
        return Err(malformed(
            format,
            format!("order {order} outside [1, {MAX_ORDER}]"),
        ));
    }
    let mut dims = Vec::with_capacity(order);
    for _ in 0..order {
        let d = r.read_u64::<LittleEndian>()?;
        if d == 0 {
            return Err(malformed(format, "zero dimension"));
        }
        dims.push(usize::try_from(d).map_err(|_| malformed(format, "dimension too large"))?);
    }
    Ok(dims)
}

fn checked_total(dims: &[usize], format: &'static str) -> Result<usize> {
    dims.iter().try_fold(1usize, |acc, &d| {
        acc.checked_mul(d)
            .ok_or_else(|| malformed(format, "dimension product overflows"))
    })
}

fn expect_eof<R: Read>(r: &mut R, format: &'static str) -> Result<()> {
    let mut buf = [0u8; 1];
    match r.read(&mut buf)? {
        0 => Ok(()),
        _ => Err(malformed(format, "trailing bytes after payload")),
    }
}

pub fn write_tensor<W: Write>(w: &mut W, t: &DenseTensor) -> Result<()> {
    w.write_all(b"TNSR")?;
    w.write_u8(0x01)?;
    w.write_u32::<LittleEndian>(t.order() as u32)?;
    for &d in t.dims() {
        w.write_u64::<LittleEndian>(d as u64)?;
    }
    for &v in t.values() {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<DenseTensor> {
    let dims = read_header(r, "TNSR1", b"TNSR")?;
    let total = checked_total(&dims, "TNSR1")?;
    let mut values = vec![0.0f64; total];
    r.read_f64_into::<LittleEndian>(&mut values)?;
    expect_eof(r, "TNSR1")?;
    DenseTensor::new(dims, values)
}

pub fn write_mask<W: Write>(w: &mut W, dims: &[usize], indices: &[usize]) -> Result<()> {
    w.write_all(b"MASK")?;
    w.write_u8(0x01)?;
    w.write_u32::<LittleEndian>(dims.len() as u32)?;
    for &d in dims {
        w.write_u64::<LittleEndian>(d as u64)?;
    }
    w.write_u64::<LittleEndian>(indices.len() as u64)?;
    for &idx in indices {
        w.write_u64::<LittleEndian>(idx as u64)?;
    }
    Ok(())
}

pub fn read_mask<R: Read>(r: &mut R) -> Result<MaskFile> {
    let dims = read_header(r, "MASK1", b"MASK")?;
    let total = checked_total(&dims, "MASK1")?;
    let count = r.read_u64::<LittleEndian>()? as usize;
    if count > total {
        return Err(malformed(
            "MASK1",
            format!("{count} indices exceed tensor size {total}"),
        ));
    }
    let mut indices = Vec::with_capacity(count);
    let mut prev = 0u64;
    for _ in 0..count {
        let idx = r.read_u64::<LittleEndian>()?;
        if idx == 0 || idx > total as u64 {
            return Err(malformed(
                "MASK1",
                format!("index {idx} outside [1, {total}]"),
            ));
        }
        if idx <= prev {
            return Err(malformed("MASK1", "indices not strictly increasing"));
        }
        prev = idx;
        indices.push(idx as usize);
    }
    expect_eof(r, "MASK1")?;
    Ok(MaskFile { dims, indices })
}

pub fn save_tensor<P: AsRef<Path>>(path: P, t: &DenseTensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor<P: AsRef<Path>>(path: P) -> Result<DenseTensor> {
    read_tensor(&mut BufReader::new(File::open(path)?))
}

pub fn save_mask<P: AsRef<Path>>(path: P, dims: &[usize], indices: &[usize]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_mask(&mut w, dims, indices)?;
    w.flush()?;
    Ok(())
}

pub fn load_mask<P: AsRef<Path>>(path: P) -> Result<MaskFile> {
    read_mask(&mut BufReader::new(File::open(path)?))
}
