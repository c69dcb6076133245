//! NPY version 1.0 container, restricted to little-endian `<f4` tensors and
//! `<i8` label vectors in C order.
//!
//! Layout: the six magic bytes `\x93NUMPY`, a major/minor version pair
//! `(1, 0)`, a little-endian `u16` header length, then an ASCII Python dict
//! literal such as `{'descr': '<f4', 'fortran_order': False, 'shape': (3, 4), }`
//! padded with spaces and terminated by `\n` so that the payload starts on a
//! 64-byte boundary. The payload follows immediately.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const PREAMBLE_LEN: usize = 10;
const ALIGN: usize = 64;

/// Element type of a container payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    I64,
}

impl Dtype {
    pub fn descr(self) -> &'static str {
        match self {
            Dtype::F32 => "<f4",
            Dtype::I64 => "<i8",
        }
    }

    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::I64 => 8,
        }
    }
}

/// Parsed header of an NPY file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NpyHeader {
    pub descr: String,
    pub fortran_order: bool,
    pub shape: Vec<usize>,
}

/// A float32 tensor as stored on disk: shape plus row-major values.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl TensorFile {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        check_shape(&shape)?;
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("holds {} values", data.len()),
            });
        }
        Ok(TensorFile { shape, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if !matches!(shape.len(), 1 | 2 | 4) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "rank must be 1, 2 or 4".into(),
        });
    }
    if shape.contains(&0) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "every dimension must be at least 1".into(),
        });
    }
    Ok(())
}

fn format_header(dtype: Dtype, shape: &[usize]) -> Vec<u8> {
    let dims = match shape {
        [single] => format!("({single},)"),
        _ => {
            let parts: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
            format!("({})", parts.join(", "))
        }
    };
    let mut dict = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        dtype.descr(),
        dims
    );
    // pad so that preamble + dict + '\n' is a multiple of ALIGN
    let unpadded = PREAMBLE_LEN + dict.len() + 1;
    let pad = (ALIGN - unpadded % ALIGN) % ALIGN;
    dict.extend(std::iter::repeat_n(' ', pad));
    dict.push('\n');

    let mut out = Vec::with_capacity(PREAMBLE_LEN + dict.len());
    out.extend_from_slice(MAGIC);
    out.push(1);
    out.push(0);
    out.extend_from_slice(&(dict.len() as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out
}

/// Serialize a float32 tensor to NPY bytes.
pub fn encode_f32(shape: &[usize], data: &[f32]) -> Result<Vec<u8>> {
    check_shape(shape)?;
    if shape.iter().product::<usize>() != data.len() {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: format!("holds {} values", data.len()),
        });
    }
    if let Some(index) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "tensor to write".into(),
            index,
        });
    }
    let mut out = format_header(Dtype::F32, shape);
    out.reserve(data.len() * 4);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Serialize a label vector to NPY bytes (`<i8`).
pub fn encode_i64(data: &[i64]) -> Result<Vec<u8>> {
    let shape = [data.len()];
    check_shape(&shape)?;
    let mut out = format_header(Dtype::I64, &shape);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Split raw file bytes into a parsed header and the payload slice.
pub fn decode_header(bytes: &[u8]) -> Result<(NpyHeader, &[u8])> {
    if bytes.len() < PREAMBLE_LEN || &bytes[..6] != MAGIC {
        return Err(Error::MalformedHeader {
            field: "magic",
            reason: "missing \\x93NUMPY prefix".into(),
        });
    }
    if bytes[6] != 1 || bytes[7] != 0 {
        return Err(Error::MalformedHeader {
            field: "version",
            reason: format!("unsupported version {}.{}", bytes[6], bytes[7]),
        });
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let end = PREAMBLE_LEN + header_len;
    if bytes.len() < end {
        return Err(Error::MalformedHeader {
            field: "header_len",
            reason: format!("declares {header_len} header bytes past end of file"),
        });
    }
    let text =
        std::str::from_utf8(&bytes[PREAMBLE_LEN..end]).map_err(|_| Error::MalformedHeader {
            field: "header",
            reason: "not ASCII".into(),
        })?;
    let header = parse_dict(text)?;
    Ok((header, &bytes[end..]))
}

fn malformed(field: &'static str, reason: impl Into<String>) -> Error {
    Error::MalformedHeader {
        field,
        reason: reason.into(),
    }
}

/// Minimal parser for the dict literal numpy writes. Accepts the three keys in
/// any order, single or double quotes, and an optional trailing comma.
fn parse_dict(text: &str) -> Result<NpyHeader> {
    let body = text.trim();
    let body = body
        .strip_prefix('{')
        .and_then(|b| b.strip_suffix('}'))
        .ok_or_else(|| malformed("header", "not a dict literal"))?;

    let mut descr = None;
    let mut fortran = None;
    let mut shape = None;

    let mut rest = body.trim_start();
    while !rest.is_empty() {
        let (key, after) =
            take_quoted(rest).ok_or_else(|| malformed("header", "expected quoted key"))?;
        let after = after
            .trim_start()
            .strip_prefix(':')
            .ok_or_else(|| malformed("header", format!("missing ':' after key '{key}'")))?
            .trim_start();
        let after = match key {
            "descr" => {
                let (v, a) = take_quoted(after)
                    .ok_or_else(|| malformed("descr", "expected quoted string"))?;
                descr = Some(v.to_string());
                a
            }
            "fortran_order" => {
                if let Some(a) = after.strip_prefix("False") {
                    fortran = Some(false);
                    a
                } else if let Some(a) = after.strip_prefix("True") {
                    fortran = Some(true);
                    a
                } else {
                    return Err(malformed("fortran_order", "expected True or False"));
                }
            }
            "shape" => {
                let inner_start = after
                    .strip_prefix('(')
                    .ok_or_else(|| malformed("shape", "expected tuple"))?;
                let close = inner_start
                    .find(')')
                    .ok_or_else(|| malformed("shape", "unterminated tuple"))?;
                let mut dims = Vec::new();
                for part in inner_start[..close].split(',') {
                    let part = part.trim();
                    if part.is_empty() {
                        continue;
                    }
                    let d = part
                        .parse::<usize>()
                        .map_err(|_| malformed("shape", format!("bad dimension `{part}`")))?;
                    dims.push(d);
                }
                shape = Some(dims);
                &inner_start[close + 1..]
            }
            other => return Err(malformed("header", format!("unexpected key '{other}'"))),
        };
        let after = after.trim_start();
        rest = after.strip_prefix(',').unwrap_or(after).trim_start();
    }

    Ok(NpyHeader {
        descr: descr.ok_or_else(|| malformed("descr", "missing"))?,
        fortran_order: fortran.ok_or_else(|| malformed("fortran_order", "missing"))?,
        shape: shape.ok_or_else(|| malformed("shape", "missing"))?,
    })
}

fn take_quoted(s: &str) -> Option<(&str, &str)> {
    let quote = s.chars().next().filter(|c| *c == '\'' || *c == '"')?;
    let inner = &s[1..];
    let end = inner.find(quote)?;
    Some((&inner[..end], &inner[end + 1..]))
}

fn validate_header(header: &NpyHeader, dtype: Dtype) -> Result<()> {
    if header.descr != dtype.descr() {
        return Err(Error::DtypeMismatch {
            expected: dtype.descr(),
            found: header.descr.clone(),
        });
    }
    if header.fortran_order {
        return Err(malformed(
            "fortran_order",
            "Fortran-ordered payloads are not supported",
        ));
    }
    check_shape(&header.shape)
}

fn check_payload(header: &NpyHeader, dtype: Dtype, payload: &[u8]) -> Result<usize> {
    let expected: usize = header.shape.iter().product();
    let expected_bytes = expected * dtype.width();
    if payload.len() != expected_bytes {
        return Err(Error::TruncatedPayload {
            expected,
            expected_bytes,
            found_bytes: payload.len(),
        });
    }
    Ok(expected)
}

/// Decode float32 tensor bytes, rejecting non-finite values.
pub fn decode_f32(bytes: &[u8]) -> Result<TensorFile> {
    let (header, payload) = decode_header(bytes)?;
    validate_header(&header, Dtype::F32)?;
    check_payload(&header, Dtype::F32, payload)?;
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if let Some(index) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "tensor payload".into(),
            index,
        });
    }
    Ok(TensorFile {
        shape: header.shape,
        data,
    })
}

/// Decode a rank-1 `<i8` label vector.
pub fn decode_i64(bytes: &[u8]) -> Result<Vec<i64>> {
    let (header, payload) = decode_header(bytes)?;
    validate_header(&header, Dtype::I64)?;
    if header.shape.len() != 1 {
        return Err(Error::InvalidShape {
            shape: header.shape,
            reason: "labels must be rank 1".into(),
        });
    }
    check_payload(&header, Dtype::I64, payload)?;
    Ok(payload
        .chunks_exact(8)
        .map(|c| i64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<TensorFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_f32(&bytes)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<i64>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_i64(&bytes)
}

/// Read only the header of a file; used to cross-check shapes cheaply.
pub fn read_header(path: impl AsRef<Path>) -> Result<NpyHeader> {
    use std::io::Read;
    let path = path.as_ref();
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut pre = [0u8; PREAMBLE_LEN];
    file.read_exact(&mut pre).map_err(|e| Error::io(path, e))?;
    let header_len = u16::from_le_bytes([pre[8], pre[9]]) as usize;
    let mut buf = pre.to_vec();
    buf.resize(PREAMBLE_LEN + header_len, 0);
    file.read_exact(&mut buf[PREAMBLE_LEN..])
        .map_err(|e| Error::io(path, e))?;
    Ok(decode_header(&buf)?.0)
}

pub fn write_tensor(tensor: &TensorFile, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_f32(&tensor.shape, &tensor.data)?;
    write_bytes(path.as_ref(), &bytes)
}

pub fn write_labels(labels: &[i64], path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_i64(labels)?;
    write_bytes(path.as_ref(), &bytes)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(bytes).map_err(|e| Error::io(path, e))
}
