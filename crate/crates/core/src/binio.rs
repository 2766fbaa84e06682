//! Little-endian length-prefixed primitives shared by the corpus and
//! checkpoint files.

use std::io::{Read, Write};

use crate::error::{Error, Result};

fn wr<W: Write>(w: &mut W, bytes: &[u8]) -> Result<()> {
    w.write_all(bytes).map_err(|e| Error::io("write", e))
}

pub fn write_u8<W: Write>(w: &mut W, v: u8) -> Result<()> {
    wr(w, &[v])
}

pub fn write_u16<W: Write>(w: &mut W, v: u16) -> Result<()> {
    wr(w, &v.to_le_bytes())
}

pub fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    wr(w, &v.to_le_bytes())
}

pub fn write_f64s<W: Write>(w: &mut W, vs: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(vs.len() * 8);
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    wr(w, &buf)
}

/// `u32` byte length then UTF-8 bytes.
pub fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    let len = u32::try_from(s.len()).map_err(|_| Error::Format("string too long".into()))?;
    write_u32(w, len)?;
    wr(w, s.as_bytes())
}

pub fn write_bytes<W: Write>(w: &mut W, b: &[u8]) -> Result<()> {
    wr(w, b)
}

fn rd<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format("unexpected end of file".into())
        } else {
            Error::io("read", e)
        }
    })?;
    Ok(buf)
}

pub fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    Ok(rd::<R, 1>(r)?[0])
}

pub fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    Ok(u16::from_le_bytes(rd(r)?))
}

pub fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(rd(r)?))
}

pub fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        out.push(f64::from_le_bytes(rd(r)?));
    }
    Ok(out)
}

pub fn read_exact_vec<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>> {
    // a corrupt length must not allocate before the bytes actually arrive
    let mut buf = Vec::new();
    r.take(n as u64)
        .read_to_end(&mut buf)
        .map_err(|_| Error::Format("unexpected end of file".into()))?;
    if buf.len() != n {
        return Err(Error::Format("unexpected end of file".into()));
    }
    Ok(buf)
}

pub fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let n = read_u32(r)? as usize;
    let bytes = read_exact_vec(r, n)?;
    String::from_utf8(bytes).map_err(|_| Error::Format("invalid UTF-8".into()))
}
