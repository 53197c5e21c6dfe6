//! Binary record container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "LMLP" | u32 version | u32 record count
//! per record: u16 name length | name (UTF-8) | u8 dtype | u8 ndim | u64 shape[ndim] | payload
//! ```
//!
//! dtype 0 is f64 (IEEE-754 bits), 1 is u64 and 2 raw bytes. The payload
//! holds exactly the product of the shape in elements.

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LMLP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Data {
    F64(Vec<f64>),
    U64(Vec<u64>),
    Bytes(Vec<u8>),
}

impl Data {
    fn dtype(&self) -> u8 {
        match self {
            Data::F64(_) => 0,
            Data::U64(_) => 1,
            Data::Bytes(_) => 2,
        }
    }

    fn type_name(&self) -> &'static str {
        ["f64", "u64", "bytes"][self.dtype() as usize]
    }

    fn len(&self) -> usize {
        match self {
            Data::F64(v) => v.len(),
            Data::U64(v) => v.len(),
            Data::Bytes(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<u64>,
    pub data: Data,
}

/// Ordered list of named arrays.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    pub records: Vec<Record>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Container {
    pub fn push(&mut self, name: &str, shape: Vec<u64>, data: Data) -> Result<()> {
        let n: u64 = shape.iter().product();
        if n != data.len() as u64 {
            return Err(Error::Shape(format!("record '{name}': shape {shape:?} holds {n} values, got {}", data.len())));
        }
        if self.records.iter().any(|r| r.name == name) {
            return Err(bad(format!("duplicate record '{name}'")));
        }
        if name.len() > u16::MAX as usize || shape.len() > u8::MAX as usize {
            return Err(bad(format!("record '{name}' has an oversized header")));
        }
        self.records.push(Record { name: name.to_string(), shape, data });
        Ok(())
    }

    pub fn push_f64(&mut self, name: &str, shape: Vec<u64>, v: Vec<f64>) -> Result<()> {
        self.push(name, shape, Data::F64(v))
    }

    pub fn push_u64(&mut self, name: &str, shape: Vec<u64>, v: Vec<u64>) -> Result<()> {
        self.push(name, shape, Data::U64(v))
    }

    pub fn push_bytes(&mut self, name: &str, v: Vec<u8>) -> Result<()> {
        self.push(name, vec![v.len() as u64], Data::Bytes(v))
    }

    pub fn get(&self, name: &str) -> Result<&Record> {
        self.records
            .iter()
            .find(|r| r.name == name)
            .ok_or_else(|| bad(format!("missing record '{name}'")))
    }

    fn typed<'a, T>(&'a self, name: &str, want: &str, pick: impl Fn(&'a Data) -> Option<&'a Vec<T>>) -> Result<(&'a [u64], &'a [T])> {
        let r = self.get(name)?;
        let v = pick(&r.data).ok_or_else(|| bad(format!("record '{name}' is {}, expected {want}", r.data.type_name())))?;
        Ok((&r.shape, v))
    }

    pub fn f64s(&self, name: &str) -> Result<(&[u64], &[f64])> {
        self.typed(name, "f64", |d| match d {
            Data::F64(v) => Some(v),
            _ => None,
        })
    }

    pub fn u64s(&self, name: &str) -> Result<(&[u64], &[u64])> {
        self.typed(name, "u64", |d| match d {
            Data::U64(v) => Some(v),
            _ => None,
        })
    }

    pub fn bytes(&self, name: &str) -> Result<&[u8]> {
        self.typed(name, "bytes", |d| match d {
            Data::Bytes(v) => Some(v),
            _ => None,
        })
        .map(|(_, v)| v)
    }

    /// f64 array whose shape must equal `shape`.
    pub fn f64s_shaped(&self, name: &str, shape: &[u64]) -> Result<&[f64]> {
        let (s, v) = self.f64s(name)?;
        check_shape(name, s, shape)?;
        Ok(v)
    }

    pub fn u64s_shaped(&self, name: &str, shape: &[u64]) -> Result<&[u64]> {
        let (s, v) = self.u64s(name)?;
        check_shape(name, s, shape)?;
        Ok(v)
    }

    pub fn u64_scalar(&self, name: &str) -> Result<u64> {
        Ok(self.u64s_shaped(name, &[1])?[0])
    }

    pub fn f64_scalar(&self, name: &str) -> Result<f64> {
        Ok(self.f64s_shaped(name, &[1])?[0])
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.name.len() as u16).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.push(r.data.dtype());
            out.push(r.shape.len() as u8);
            for d in &r.shape {
                out.extend_from_slice(&d.to_le_bytes());
            }
            match &r.data {
                Data::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_bits().to_le_bytes())),
                Data::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Data::Bytes(v) => out.extend_from_slice(v),
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut rd = Reader { bytes, pos: 0 };
        if rd.take(4, "magic")? != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = rd.u32("version")?;
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version} (expected {VERSION})")));
        }
        let count = rd.u32("record count")?;
        let mut c = Container::default();
        for _ in 0..count {
            let name_len = u16::from_le_bytes(rd.take(2, "name length")?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(rd.take(name_len, "record name")?)
                .map_err(|_| bad("record name is not UTF-8"))?
                .to_string();
            let dtype = rd.take(1, "dtype")?[0];
            let ndim = rd.take(1, "ndim")?[0] as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(rd.u64(&name)?);
            }
            let n = shape
                .iter()
                .try_fold(1u64, |a, &d| a.checked_mul(d))
                .and_then(|n| usize::try_from(n).ok())
                .ok_or_else(|| bad(format!("record '{name}' has an invalid shape")))?;
            let data = match dtype {
                0 | 1 => {
                    let raw = rd.take(n.checked_mul(8).ok_or_else(|| bad("record too large"))?, &name)?;
                    let words = raw.chunks_exact(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()));
                    if dtype == 0 {
                        Data::F64(words.map(f64::from_bits).collect())
                    } else {
                        Data::U64(words.collect())
                    }
                }
                2 => {
                    if ndim != 1 {
                        return Err(bad(format!("byte record '{name}' must be one-dimensional")));
                    }
                    Data::Bytes(rd.take(n, &name)?.to_vec())
                }
                d => return Err(bad(format!("record '{name}' has unknown dtype {d}"))),
            };
            c.push(&name, shape, data)?;
        }
        if rd.pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes after the last record", bytes.len() - rd.pos)));
        }
        Ok(c)
    }
}

fn check_shape(name: &str, got: &[u64], want: &[u64]) -> Result<()> {
    if got != want {
        return Err(Error::Shape(format!("record '{name}' has shape {got:?}, expected {want:?}")));
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(bad(format!("truncated file while reading {what} at byte {}", self.pos))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}
