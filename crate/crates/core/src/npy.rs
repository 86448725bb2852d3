//! Minimal NPY v1.0 reader and writer.
//!
//! Only what the pipeline exchanges: C-order, little-endian `f4`, `f8` and
//! `i8` arrays of any rank. The header layout matches what `numpy.save`
//! emits, padded with spaces so the payload starts on a 64-byte boundary.

use std::io::{self, Read, Write};

use thiserror::Error;

pub const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;

#[derive(Debug, Error)]
pub enum NpyError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not an NPY v1.0 file: {0}")]
    Format(String),
    #[error("data has {len} elements but shape {shape:?} needs {expected}")]
    Shape {
        shape: Vec<usize>,
        len: usize,
        expected: usize,
    },
    #[error("expected dtype {expected}, file holds {found}")]
    Dtype { expected: &'static str, found: String },
}

/// Element types the pipeline reads and writes.
pub trait Element: Copy + Sized {
    const DESCR: &'static str;
    const SIZE: usize;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const DESCR: &'static str = "<f4";
    const SIZE: usize = 4;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(b: &[u8]) -> Self {
        f32::from_le_bytes(b.try_into().unwrap())
    }
}

impl Element for f64 {
    const DESCR: &'static str = "<f8";
    const SIZE: usize = 8;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(b: &[u8]) -> Self {
        f64::from_le_bytes(b.try_into().unwrap())
    }
}

impl Element for i64 {
    const DESCR: &'static str = "<i8";
    const SIZE: usize = 8;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(b: &[u8]) -> Self {
        i64::from_le_bytes(b.try_into().unwrap())
    }
}

/// A dense C-order array.
#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Element> NpyArray<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, NpyError> {
        let expected = shape.iter().product::<usize>();
        if expected != data.len() {
            return Err(NpyError::Shape {
                shape,
                len: data.len(),
                expected,
            });
        }
        Ok(Self { shape, data })
    }

    /// Stacks equal-length rows into a 2-D array.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, NpyError> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(NpyError::Shape {
                shape: vec![rows.len(), cols],
                len: bad.len(),
                expected: cols,
            });
        }
        Ok(Self {
            shape: vec![rows.len(), cols],
            data: rows.iter().flatten().copied().collect(),
        })
    }

    /// Splits a 2-D array back into rows.
    pub fn to_rows(&self) -> Result<Vec<Vec<T>>, NpyError> {
        match self.shape.as_slice() {
            [_, 0] => Ok(vec![Vec::new(); self.shape[0]]),
            [_, cols] => Ok(self.data.chunks(*cols).map(<[T]>::to_vec).collect()),
            _ => Err(NpyError::Format(format!(
                "expected a 2-D array, found shape {:?}",
                self.shape
            ))),
        }
    }
}

fn shape_literal(shape: &[usize]) -> String {
    match shape {
        [] => "()".to_owned(),
        [n] => format!("({n},)"),
        _ => {
            let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
            format!("({})", dims.join(", "))
        }
    }
}

/// Header bytes (magic through the terminating newline) for an array.
pub fn header_bytes(descr: &str, shape: &[usize]) -> Vec<u8> {
    let dict = format!(
        "{{'descr': '{descr}', 'fortran_order': False, 'shape': {}, }}",
        shape_literal(shape)
    );
    // magic (6) + version (2) + header length (2)
    let unpadded = 10 + dict.len() + 1;
    let total = unpadded.div_ceil(ALIGN) * ALIGN;
    let header_len = total - 10;

    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header_len as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out.resize(total - 1, b' ');
    out.push(b'\n');
    out
}

/// Writes `array` and returns the number of bytes written.
pub fn write_npy<T: Element, W: Write>(array: &NpyArray<T>, mut sink: W) -> Result<u64, NpyError> {
    let mut buf = header_bytes(T::DESCR, &array.shape);
    buf.reserve(array.data.len() * T::SIZE);
    for &v in &array.data {
        v.write_le(&mut buf);
    }
    sink.write_all(&buf)?;
    sink.flush()?;
    Ok(buf.len() as u64)
}

/// Parsed header fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub descr: String,
    pub fortran_order: bool,
    pub shape: Vec<usize>,
}

fn dict_value<'a>(dict: &'a str, key: &str) -> Result<&'a str, NpyError> {
    let pat = format!("'{key}':");
    let start = dict
        .find(&pat)
        .ok_or_else(|| NpyError::Format(format!("header has no '{key}' key")))?
        + pat.len();
    let rest = dict[start..].trim_start();
    let end = if rest.starts_with('(') {
        rest.find(')').map(|i| i + 1)
    } else {
        rest.find([',', '}'])
    }
    .ok_or_else(|| NpyError::Format(format!("unterminated value for '{key}'")))?;
    Ok(rest[..end].trim())
}

fn parse_header(text: &str) -> Result<Header, NpyError> {
    let descr = dict_value(text, "descr")?.trim_matches(|c| c == '\'' || c == '"').to_owned();
    let fortran_order = match dict_value(text, "fortran_order")? {
        "False" => false,
        "True" => true,
        other => return Err(NpyError::Format(format!("bad fortran_order {other}"))),
    };
    let shape_text = dict_value(text, "shape")?;
    let inner = shape_text
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| NpyError::Format(format!("bad shape {shape_text}")))?;
    let shape = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| NpyError::Format(format!("bad dimension {s}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Header {
        descr,
        fortran_order,
        shape,
    })
}

/// Splits an NPY file into its header and payload bytes.
pub fn split(bytes: &[u8]) -> Result<(Header, &[u8]), NpyError> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(NpyError::Format("missing magic string".into()));
    }
    let (header_len, start) = match (bytes[6], bytes[7]) {
        (1, 0) => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        (2 | 3, 0) if bytes.len() >= 12 => (
            u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize,
            12,
        ),
        (major, minor) => {
            return Err(NpyError::Format(format!("unsupported version {major}.{minor}")))
        }
    };
    let text = bytes
        .get(start..start + header_len)
        .ok_or_else(|| NpyError::Format("header runs past end of file".into()))?;
    let text = std::str::from_utf8(text).map_err(|_| NpyError::Format("header is not text".into()))?;
    Ok((parse_header(text)?, &bytes[start + header_len..]))
}

pub fn parse_npy<T: Element>(bytes: &[u8]) -> Result<NpyArray<T>, NpyError> {
    let (header, payload) = split(bytes)?;
    if header.descr != T::DESCR {
        return Err(NpyError::Dtype {
            expected: T::DESCR,
            found: header.descr,
        });
    }
    if header.fortran_order {
        return Err(NpyError::Format("Fortran-order arrays are not supported".into()));
    }
    let count = header
        .shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| NpyError::Format("shape overflows".into()))?;
    if payload.len() / T::SIZE != count || payload.len() % T::SIZE != 0 {
        return Err(NpyError::Shape {
            shape: header.shape,
            len: payload.len() / T::SIZE,
            expected: count,
        });
    }
    let data = payload.chunks_exact(T::SIZE).map(T::read_le).collect();
    Ok(NpyArray {
        shape: header.shape,
        data,
    })
}

pub fn read_npy<T: Element, R: Read>(mut source: R) -> Result<NpyArray<T>, NpyError> {
    let mut buf = Vec::new();
    source.read_to_end(&mut buf)?;
    parse_npy(&buf)
}
