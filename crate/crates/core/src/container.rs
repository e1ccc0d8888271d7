//! The `BSEC` little-endian binary container.
//!
//! Two layouts share the 4-byte magic `"BSEC"` and a `u32` version (`1`):
//!
//! * **Complex tensors** (channel tensors, codebook dumps): magic, version,
//!   four `u64` dimensions, then `f64` pairs `(re, im)` in row-major index
//!   order. No record tag.
//! * **Tagged records**: magic, version, a `u16` record tag (see
//!   [`RecordTag`]), then a record-specific payload built from the
//!   primitives in [`Writer`] / [`Reader`].

use std::io::{Read, Write};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"BSEC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum RecordTag {
    Dataset = 2,
    Checkpoint = 3,
}

/// Sequential little-endian encoder over any writer.
pub struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    pub fn new(inner: W) -> Self {
        Self { inner }
    }

    pub fn header(&mut self) -> std::io::Result<()> {
        self.inner.write_all(MAGIC)?;
        self.u32(VERSION)
    }

    pub fn tagged_header(&mut self, tag: RecordTag) -> std::io::Result<()> {
        self.header()?;
        self.u16(tag as u16)
    }

    pub fn u8(&mut self, v: u8) -> std::io::Result<()> {
        self.inner.write_all(&[v])
    }

    pub fn u16(&mut self, v: u16) -> std::io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn u32(&mut self, v: u32) -> std::io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn f64(&mut self, v: f64) -> std::io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn f64s(&mut self, vs: &[f64]) -> std::io::Result<()> {
        for &v in vs {
            self.f64(v)?;
        }
        Ok(())
    }

    pub fn u64s(&mut self, vs: impl IntoIterator<Item = u64>) -> std::io::Result<()> {
        for v in vs {
            self.u64(v)?;
        }
        Ok(())
    }

    /// Length-prefixed (`u64`) UTF-8 string.
    pub fn str(&mut self, s: &str) -> std::io::Result<()> {
        self.u64(s.len() as u64)?;
        self.inner.write_all(s.as_bytes())
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

/// Sequential little-endian decoder. Every read failure is reported as a
/// [`Error::Format`] naming `what`.
pub struct Reader<R: Read> {
    inner: R,
    what: &'static str,
}

impl<R: Read> Reader<R> {
    pub fn new(inner: R, what: &'static str) -> Self {
        Self { inner, what }
    }

    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::format(self.what, format!("truncated input: {e}")))?;
        Ok(buf)
    }

    pub fn header(&mut self) -> Result<()> {
        let magic: [u8; 4] = self.bytes()?;
        if &magic != MAGIC {
            return Err(Error::format(self.what, "bad magic, expected \"BSEC\""));
        }
        let version = self.u32()?;
        if version != VERSION {
            return Err(Error::format(
                self.what,
                format!("unsupported version {version}"),
            ));
        }
        Ok(())
    }

    pub fn tagged_header(&mut self, expected: RecordTag) -> Result<()> {
        self.header()?;
        let tag = self.u16()?;
        if tag != expected as u16 {
            return Err(Error::format(
                self.what,
                format!("record tag {tag}, expected {}", expected as u16),
            ));
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes()?))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    /// A `u64` that must fit in memory as a count.
    pub fn count(&mut self, limit: u64) -> Result<usize> {
        let v = self.u64()?;
        if v > limit {
            return Err(Error::format(
                self.what,
                format!("count {v} exceeds limit {limit}"),
            ));
        }
        Ok(v as usize)
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.count(1 << 32)?;
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::format(self.what, format!("truncated string: {e}")))?;
        String::from_utf8(buf).map_err(|e| Error::format(self.what, e.to_string()))
    }

    /// Succeeds only if the input is exhausted.
    pub fn finish(mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe) {
            Ok(0) => Ok(()),
            Ok(_) => Err(Error::format(self.what, "trailing bytes after payload")),
            Err(e) => Err(Error::format(self.what, e.to_string())),
        }
    }
}

/// Writes a complex rank-4 tensor in the untagged tensor layout.
pub fn write_complex_tensor<W: Write>(out: W, dims: [usize; 4], data: &[Complex64]) -> Result<()> {
    let expected: usize = dims.iter().product();
    if expected != data.len() {
        return Err(Error::Dimension(format!(
            "tensor dims {dims:?} hold {expected} entries, got {}",
            data.len()
        )));
    }
    let mut w = Writer::new(out);
    let write = |w: &mut Writer<W>| -> std::io::Result<()> {
        w.header()?;
        for d in dims {
            w.u64(d as u64)?;
        }
        for z in data {
            w.f64(z.re)?;
            w.f64(z.im)?;
        }
        Ok(())
    };
    write(&mut w).map_err(|e| Error::format("complex tensor", e.to_string()))
}

/// Reads a complex rank-4 tensor written by [`write_complex_tensor`].
pub fn read_complex_tensor<R: Read>(input: R) -> Result<([usize; 4], Vec<Complex64>)> {
    let mut r = Reader::new(input, "complex tensor");
    r.header()?;
    let mut dims = [0usize; 4];
    let mut total: u64 = 1;
    for d in dims.iter_mut() {
        let v = r.u64()?;
        total = total
            .checked_mul(v)
            .filter(|&t| t <= 1 << 34)
            .ok_or_else(|| Error::format("complex tensor", "dimensions too large"))?;
        *d = v as usize;
    }
    let mut data = Vec::with_capacity(total as usize);
    for _ in 0..total {
        let re = r.f64()?;
        let im = r.f64()?;
        data.push(Complex64::new(re, im));
    }
    r.finish()?;
    Ok((dims, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_header_layout_is_exact() {
        let mut buf = Vec::new();
        write_complex_tensor(&mut buf, [1, 1, 1, 1], &[Complex64::new(1.5, -2.0)]).unwrap();
        assert_eq!(&buf[0..4], b"BSEC");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        for i in 0..4 {
            let off = 8 + 8 * i;
            assert_eq!(u64::from_le_bytes(buf[off..off + 8].try_into().unwrap()), 1);
        }
        assert_eq!(f64::from_le_bytes(buf[40..48].try_into().unwrap()), 1.5);
        assert_eq!(f64::from_le_bytes(buf[48..56].try_into().unwrap()), -2.0);
        assert_eq!(buf.len(), 56);
    }

    #[test]
    fn tensor_rejects_bad_magic_and_trailing_bytes() {
        let mut buf = Vec::new();
        write_complex_tensor(&mut buf, [1, 1, 1, 2], &[Complex64::new(0.0, 1.0); 2]).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_complex_tensor(&bad[..]).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(read_complex_tensor(&long[..]).is_err());
        assert!(read_complex_tensor(&buf[..buf.len() - 1]).is_err());
        let (dims, data) = read_complex_tensor(&buf[..]).unwrap();
        assert_eq!(dims, [1, 1, 1, 2]);
        assert_eq!(data[1], Complex64::new(0.0, 1.0));
    }

    #[test]
    fn tagged_header_checks_tag() {
        let mut buf = Vec::new();
        Writer::new(&mut buf).tagged_header(RecordTag::Dataset).unwrap();
        assert_eq!(&buf[8..10], &2u16.to_le_bytes());
        let mut r = Reader::new(&buf[..], "dataset");
        assert!(r.tagged_header(RecordTag::Checkpoint).is_err());
    }
}
