//! Little-endian binary encoding with a magic/version header and
//! tagged, length-prefixed sections.

use crate::error::{Error, Result};

pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 4], version: u32) -> Self {
        let mut w = Self { buf: Vec::new() };
        w.buf.extend_from_slice(magic);
        w.u32(version);
        w
    }

    fn raw() -> Self {
        Self { buf: Vec::new() }
    }

    pub fn u8(&mut self, x: u8) {
        self.buf.push(x);
    }

    pub fn u32(&mut self, x: u32) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }

    pub fn u64(&mut self, x: u64) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }

    pub fn len(&mut self, n: usize) {
        self.u64(n as u64);
    }

    pub fn f64(&mut self, x: f64) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }

    pub fn f64s(&mut self, xs: &[f64]) {
        for &x in xs {
            self.f64(x);
        }
    }

    pub fn str(&mut self, s: &str) {
        self.len(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }

    /// Writes `tag`, the payload length, then the payload built by `body`.
    pub fn section(&mut self, tag: &[u8; 4], body: impl FnOnce(&mut Writer)) {
        let mut inner = Writer::raw();
        body(&mut inner);
        self.buf.extend_from_slice(tag);
        self.len(inner.buf.len());
        self.buf.extend_from_slice(&inner.buf);
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    base: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    /// Checks magic and version and returns a reader positioned after them.
    pub fn open(buf: &'a [u8], what: &'static str, magic: &[u8; 4], version: u32) -> Result<Self> {
        let mut r = Self {
            buf,
            pos: 0,
            base: 0,
            what,
        };
        if r.take(4)? != magic {
            return Err(Error::Magic { what });
        }
        let found = r.u32()?;
        if found != version {
            return Err(Error::Version {
                what,
                found,
                expected: version,
            });
        }
        Ok(r)
    }

    pub fn offset(&self) -> usize {
        self.base + self.pos
    }

    pub fn malformed(&self, msg: impl Into<String>) -> Error {
        Error::Malformed {
            what: self.what,
            offset: self.offset(),
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let left = self.buf.len() - self.pos;
        if n > left {
            return Err(Error::Truncated {
                what: self.what,
                offset: self.offset(),
                needed: n - left,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    /// A count that must fit in what is left, at `unit` bytes per item.
    pub fn len(&mut self, unit: usize) -> Result<usize> {
        let at = self.offset();
        let n = self.u64()?;
        let left = (self.buf.len() - self.pos) as u64;
        if n.checked_mul(unit.max(1) as u64).is_none_or(|b| b > left) {
            return Err(Error::Malformed {
                what: self.what,
                offset: at,
                msg: format!("length {n} exceeds the remaining {left} bytes"),
            });
        }
        Ok(n as usize)
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| self.malformed("length overflow"))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.len(1)?;
        let at = self.offset();
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Malformed {
            what: self.what,
            offset: at,
            msg: "invalid UTF-8".into(),
        })
    }

    /// Reads the next section, which must carry `tag`.
    pub fn section(&mut self, tag: &[u8; 4]) -> Result<Reader<'a>> {
        let at = self.offset();
        let found = self.take(4)?;
        if found != tag {
            return Err(Error::Malformed {
                what: self.what,
                offset: at,
                msg: format!(
                    "expected section {}, found {}",
                    String::from_utf8_lossy(tag),
                    String::from_utf8_lossy(found)
                ),
            });
        }
        let n = usize::try_from(self.u64()?).unwrap_or(usize::MAX);
        let base = self.offset();
        let buf = self.take(n)?;
        Ok(Reader {
            buf,
            pos: 0,
            base,
            what: self.what,
        })
    }

    /// Fails if bytes remain.
    pub fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.malformed(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}
