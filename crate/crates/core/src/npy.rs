//! Minimal reader/writer for the npy array container.
//!
//! Only what the bundle layout needs is supported: format version 1.0,
//! little-endian, C order, and the element types `<f4`, `<f8` and `<i8`.
//! Anything else is rejected with [`PdaError::Format`].

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{PdaError, Result};

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const HEADER_ALIGN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
    I64,
}

impl Dtype {
    fn descr(self) -> &'static str {
        match self {
            Dtype::F32 => "<f4",
            Dtype::F64 => "<f8",
            Dtype::I64 => "<i8",
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 | Dtype::I64 => 8,
        }
    }

    fn from_descr(descr: &str) -> Result<Self> {
        match descr {
            "<f4" => Ok(Dtype::F32),
            "<f8" => Ok(Dtype::F64),
            "<i8" => Ok(Dtype::I64),
            other => Err(PdaError::Format(format!(
                "unsupported dtype '{other}' (expected <f4, <f8 or <i8)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NpyData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I64(Vec<i64>),
}

impl NpyData {
    pub fn dtype(&self) -> Dtype {
        match self {
            NpyData::F32(_) => Dtype::F32,
            NpyData::F64(_) => Dtype::F64,
            NpyData::I64(_) => Dtype::I64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            NpyData::F32(v) => v.len(),
            NpyData::F64(v) => v.len(),
            NpyData::I64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A decoded array: shape plus row-major data.
#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: NpyData,
}

impl NpyArray {
    pub fn new(shape: Vec<usize>, data: NpyData) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(PdaError::Schema(format!(
                "shape {shape:?} holds {expected} elements but {} were given",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Element values widened to f64. Integer arrays are rejected.
    pub fn to_f64(&self) -> Result<Vec<f64>> {
        match &self.data {
            NpyData::F32(v) => Ok(v.iter().map(|&x| f64::from(x)).collect()),
            NpyData::F64(v) => Ok(v.clone()),
            NpyData::I64(_) => Err(PdaError::Format(
                "expected a floating point array, found <i8".into(),
            )),
        }
    }
}

fn header_dict(dtype: Dtype, shape: &[usize]) -> String {
    let shape_str = match shape {
        [single] => format!("({single},)"),
        dims => format!(
            "({})",
            dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
        ),
    };
    format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        dtype.descr(),
        shape_str
    )
}

pub fn write_to<W: Write>(writer: &mut W, array: &NpyArray) -> std::io::Result<()> {
    let dict = header_dict(array.data.dtype(), &array.shape);
    // magic(6) + version(2) + header_len(2) + dict + padding + '\n'
    let unpadded = MAGIC.len() + 2 + 2 + dict.len() + 1;
    let padding = (HEADER_ALIGN - unpadded % HEADER_ALIGN) % HEADER_ALIGN;
    let header_len = dict.len() + padding + 1;

    writer.write_all(MAGIC)?;
    writer.write_all(&[1, 0])?;
    writer.write_all(&(header_len as u16).to_le_bytes())?;
    writer.write_all(dict.as_bytes())?;
    writer.write_all(&vec![b' '; padding])?;
    writer.write_all(b"\n")?;

    match &array.data {
        NpyData::F32(v) => v.iter().try_for_each(|x| writer.write_all(&x.to_le_bytes())),
        NpyData::F64(v) => v.iter().try_for_each(|x| writer.write_all(&x.to_le_bytes())),
        NpyData::I64(v) => v.iter().try_for_each(|x| writer.write_all(&x.to_le_bytes())),
    }
}

pub fn write_npy(path: &Path, array: &NpyArray) -> Result<()> {
    let file = File::create(path).map_err(|e| PdaError::io(path, e))?;
    let mut writer = BufWriter::new(file);
    write_to(&mut writer, array).map_err(|e| PdaError::io(path, e))?;
    writer.flush().map_err(|e| PdaError::io(path, e))
}

pub fn read_npy(path: &Path) -> Result<NpyArray> {
    let file = File::open(path).map_err(|e| PdaError::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| PdaError::io(path, e))?;
    parse(&bytes).map_err(|e| match e {
        PdaError::Format(msg) => PdaError::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Decodes a complete npy byte buffer.
pub fn parse(bytes: &[u8]) -> Result<NpyArray> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(PdaError::Format("missing npy magic string".into()));
    }
    if bytes[6..8] != [1, 0] {
        return Err(PdaError::Format(format!(
            "unsupported npy version {}.{} (only 1.0 is accepted)",
            bytes[6], bytes[7]
        )));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let data_start = 10 + header_len;
    if bytes.len() < data_start {
        return Err(PdaError::Format("truncated npy header".into()));
    }
    let dict = std::str::from_utf8(&bytes[10..data_start])
        .map_err(|_| PdaError::Format("npy header is not valid text".into()))?;
    let header = HeaderDict::parse(dict)?;
    if header.fortran_order {
        return Err(PdaError::Format("Fortran-order arrays are not supported".into()));
    }

    let count: usize = header.shape.iter().product();
    let body = &bytes[data_start..];
    if body.len() != count * header.dtype.size() {
        return Err(PdaError::Format(format!(
            "npy body has {} bytes, shape {:?} of {} needs {}",
            body.len(),
            header.shape,
            header.dtype.descr(),
            count * header.dtype.size()
        )));
    }

    let data = match header.dtype {
        Dtype::F32 => NpyData::F32(
            body.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        Dtype::F64 => NpyData::F64(
            body.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        Dtype::I64 => NpyData::I64(
            body.chunks_exact(8)
                .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
    };
    NpyArray::new(header.shape, data)
}

#[derive(Debug)]
struct HeaderDict {
    dtype: Dtype,
    fortran_order: bool,
    shape: Vec<usize>,
}

impl HeaderDict {
    /// Parses the python-literal dict, e.g.
    /// `{'descr': '<f8', 'fortran_order': False, 'shape': (4, 3), }`.
    fn parse(text: &str) -> Result<Self> {
        let bad = |what: &str| PdaError::Format(format!("malformed npy header: {what}"));
        let text = text.trim_end_matches(['\n', ' ', '\0']).trim();
        let inner = text
            .strip_prefix('{')
            .and_then(|t| t.strip_suffix('}'))
            .ok_or_else(|| bad("not a dict"))?;

        let mut descr = None;
        let mut fortran = None;
        let mut shape = None;
        let mut rest = inner.trim();
        while !rest.is_empty() {
            let (key, after) = take_quoted(rest).ok_or_else(|| bad("expected quoted key"))?;
            let after = after
                .trim_start()
                .strip_prefix(':')
                .ok_or_else(|| bad("expected ':'"))?
                .trim_start();
            let after = match key {
                "descr" => {
                    let (value, after) =
                        take_quoted(after).ok_or_else(|| bad("descr must be a string"))?;
                    descr = Some(value.to_string());
                    after
                }
                "fortran_order" => {
                    if let Some(after) = after.strip_prefix("False") {
                        fortran = Some(false);
                        after
                    } else if let Some(after) = after.strip_prefix("True") {
                        fortran = Some(true);
                        after
                    } else {
                        return Err(bad("fortran_order must be True or False"));
                    }
                }
                "shape" => {
                    let body = after.strip_prefix('(').ok_or_else(|| bad("shape must be a tuple"))?;
                    let close = body.find(')').ok_or_else(|| bad("unterminated shape"))?;
                    let dims = body[..close]
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| s.parse::<usize>().map_err(|_| bad("non-integer dimension")))
                        .collect::<Result<Vec<_>>>()?;
                    shape = Some(dims);
                    &body[close + 1..]
                }
                other => return Err(bad(&format!("unexpected key '{other}'"))),
            };
            let after = after.trim_start();
            rest = after.strip_prefix(',').unwrap_or(after).trim_start();
        }

        Ok(HeaderDict {
            dtype: Dtype::from_descr(&descr.ok_or_else(|| bad("missing descr"))?)?,
            fortran_order: fortran.ok_or_else(|| bad("missing fortran_order"))?,
            shape: shape.ok_or_else(|| bad("missing shape"))?,
        })
    }
}

fn take_quoted(s: &str) -> Option<(&str, &str)> {
    let quote = s.chars().next().filter(|c| *c == '\'' || *c == '"')?;
    let body = &s[1..];
    let end = body.find(quote)?;
    Some((&body[..end], &body[end + 1..]))
}
