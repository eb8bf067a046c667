//! `SEMF` binary tensor container.
//!
//! Layout: the magic `SEMF`, a version byte, then records until end of
//! file. Each record is a `u32` name length, the UTF-8 name, a `u32` rank,
//! `rank` dimensions as `u64` and the values as `f32`, all little-endian.
//! Values are stored in single precision; callers that need an exact round
//! trip keep their data `f32`-representable.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::heads::Tensor;

pub const MAGIC: &[u8; 4] = b"SEMF";
pub const VERSION: u8 = 1;
const MAX_RANK: usize = 8;
const MAX_NAME: usize = 4096;

pub fn write_tensors<'a>(
    mut w: impl Write,
    tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    let mut buf = Vec::new();
    for (name, t) in tensors {
        if name.len() > MAX_NAME || t.dims.len() > MAX_RANK {
            return Err(Error::invalid(format!(
                "tensor `{name}`: name or rank too large"
            )));
        }
        if t.data.len() != t.dims.iter().product::<usize>() {
            return Err(Error::shape(format!(
                "tensor `{name}`: data does not match dims {:?}",
                t.dims
            )));
        }
        buf.clear();
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
        for &d in &t.dims {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        buf.reserve(t.data.len() * 4);
        for &v in &t.data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::schema(
                what,
                format!("truncated at byte {}", self.pos),
            ));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// All records, in file order.
pub fn read_tensors(mut r: impl Read) -> Result<Vec<(String, Tensor)>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    parse(&bytes)
}

pub fn parse(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::schema("magic", "not a SEMF container"));
    }
    let version = c.take(1, "version")?[0];
    if version != VERSION {
        return Err(Error::schema(
            "version",
            format!("unsupported version {version}"),
        ));
    }
    let mut out = Vec::new();
    while c.pos < bytes.len() {
        let len = c.u32("name length")? as usize;
        if len > MAX_NAME {
            return Err(Error::schema(
                "name length",
                format!("{len} exceeds {MAX_NAME}"),
            ));
        }
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|_| Error::schema("name", "not UTF-8"))?
            .to_string();
        let rank = c.u32(&name)? as usize;
        if rank > MAX_RANK {
            return Err(Error::schema(
                name,
                format!("rank {rank} exceeds {MAX_RANK}"),
            ));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(
                usize::try_from(c.u64(&name)?)
                    .map_err(|_| Error::schema(&name, "dimension overflows"))?,
            );
        }
        let count = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::schema(&name, "element count overflows"))?;
        let raw = c.take(count, &name)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        out.push((name, Tensor { dims, data }));
    }
    Ok(out)
}

pub fn write_file<'a>(
    path: &Path,
    tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<()> {
    let mut buf = Vec::new();
    write_tensors(&mut buf, tensors)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Vec<(String, Tensor)>> {
    parse(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: &[usize], data: &[f64]) -> Tensor {
        Tensor {
            dims: dims.to_vec(),
            data: data.to_vec(),
        }
    }

    #[test]
    fn byte_layout() {
        let a = t(&[2], &[1.0, -0.5]);
        let mut buf = Vec::new();
        write_tensors(&mut buf, [("ab", &a)]).unwrap();
        let mut want = b"SEMF\x01".to_vec();
        want.extend_from_slice(&2u32.to_le_bytes());
        want.extend_from_slice(b"ab");
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&2u64.to_le_bytes());
        want.extend_from_slice(&1.0f32.to_le_bytes());
        want.extend_from_slice(&(-0.5f32).to_le_bytes());
        assert_eq!(buf, want);
    }

    #[test]
    fn round_trip_preserves_order() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 0.25]);
        let b = t(&[], &[7.0]);
        let mut buf = Vec::new();
        write_tensors(&mut buf, [("z", &a), ("a", &b)]).unwrap();
        let back = parse(&buf).unwrap();
        assert_eq!(back, vec![("z".to_string(), a), ("a".to_string(), b)]);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(
            matches!(parse(b"NOPE\x01"), Err(Error::Schema { ref field, .. }) if field == "magic")
        );
        assert!(
            matches!(parse(b"SEMF\x02"), Err(Error::Schema { ref field, .. }) if field == "version")
        );
        let a = t(&[3], &[1.0, 2.0, 3.0]);
        let mut buf = Vec::new();
        write_tensors(&mut buf, [("x", &a)]).unwrap();
        buf.pop();
        assert!(matches!(parse(&buf), Err(Error::Schema { ref field, .. }) if field == "x"));
    }

    #[test]
    fn huge_dims_do_not_allocate() {
        let mut buf = b"SEMF\x01".to_vec();
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(b"x");
        buf.extend_from_slice(&2u32.to_le_bytes());
        buf.extend_from_slice(&u64::MAX.to_le_bytes());
        buf.extend_from_slice(&2u64.to_le_bytes());
        assert!(parse(&buf).is_err());
    }
}
