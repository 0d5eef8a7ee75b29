//! Dense float32 tensor files in the `.npy` 1.0 layout.
//!
//! Only the subset needed for point maps `(H, W, 3)` and depth maps
//! `(H, W, 1)` is supported: little-endian `<f4`, C order. Version 2.0
//! headers are accepted on read; writes always emit 1.0.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::IngestError;

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const HEADER_ALIGN: usize = 64;

/// A row-major float32 tensor of rank 3.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Tensor3 {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Self {
        assert_eq!(
            data.len(),
            height * width * channels,
            "tensor payload length"
        );
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    /// Bitwise equality, so NaN payloads compare equal to themselves.
    pub fn bits_eq(&self, other: &Self) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.channels == other.channels
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

pub fn load_tensor(path: &Path) -> Result<Tensor3, IngestError> {
    let bytes = fs::read(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_tensor(&bytes).map_err(|reason| reason.with_path(path))
}

pub fn save_tensor(path: &Path, tensor: &Tensor3) -> Result<(), IngestError> {
    let bytes = encode_tensor(tensor);
    let mut file = fs::File::create(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    file.write_all(&bytes).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn encode_tensor(tensor: &Tensor3) -> Vec<u8> {
    let mut header = format!(
        "{{'descr': '<f4', 'fortran_order': False, 'shape': ({}, {}, {}), }}",
        tensor.height, tensor.width, tensor.channels
    );
    // magic(6) + version(2) + len(2) + header + '\n'
    let unpadded = MAGIC.len() + 4 + header.len() + 1;
    let pad = (HEADER_ALIGN - unpadded % HEADER_ALIGN) % HEADER_ALIGN;
    header.extend(std::iter::repeat_n(' ', pad));
    header.push('\n');

    let mut out = Vec::with_capacity(MAGIC.len() + 4 + header.len() + tensor.data.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in &tensor.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decode failure before a path is attached.
#[derive(Debug)]
pub(crate) enum DecodeError {
    Malformed(String),
    WrongRank(Vec<usize>),
    UnsupportedDtype(String),
}

impl DecodeError {
    fn with_path(self, path: &Path) -> IngestError {
        let path = path.to_path_buf();
        match self {
            DecodeError::Malformed(reason) => IngestError::MalformedHeader { path, reason },
            DecodeError::WrongRank(shape) => IngestError::WrongRank { path, shape },
            DecodeError::UnsupportedDtype(descr) => IngestError::UnsupportedDtype { path, descr },
        }
    }
}

pub(crate) fn decode_tensor(bytes: &[u8]) -> Result<Tensor3, DecodeError> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(DecodeError::Malformed("missing magic string".into()));
    }
    let (header_len, header_start) = match bytes[6] {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 if bytes.len() >= 12 => (
            u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize,
            12,
        ),
        v => {
            return Err(DecodeError::Malformed(format!(
                "unsupported format version {v}"
            )))
        }
    };
    let payload_start = header_start + header_len;
    if bytes.len() < payload_start {
        return Err(DecodeError::Malformed("truncated header".into()));
    }
    let header = std::str::from_utf8(&bytes[header_start..payload_start])
        .map_err(|_| DecodeError::Malformed("header is not valid text".into()))?;

    let descr = dict_value(header, "descr")
        .and_then(quoted)
        .ok_or_else(|| DecodeError::Malformed("missing 'descr'".into()))?;
    if !matches!(descr, "<f4" | "=f4" | "f4") {
        return Err(DecodeError::UnsupportedDtype(descr.to_string()));
    }
    let fortran = dict_value(header, "fortran_order")
        .ok_or_else(|| DecodeError::Malformed("missing 'fortran_order'".into()))?;
    if fortran.starts_with("True") {
        return Err(DecodeError::Malformed(
            "fortran_order tensors are not supported".into(),
        ));
    }
    let shape = dict_value(header, "shape")
        .and_then(parse_shape)
        .ok_or_else(|| DecodeError::Malformed("missing or invalid 'shape'".into()))?;
    if shape.len() != 3 {
        return Err(DecodeError::WrongRank(shape));
    }

    let count: usize = shape.iter().product();
    let payload = &bytes[payload_start..];
    if payload.len() != count * 4 {
        return Err(DecodeError::Malformed(format!(
            "payload holds {} bytes, shape {:?} needs {}",
            payload.len(),
            shape,
            count * 4
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Tensor3::new(shape[0], shape[1], shape[2], data))
}

/// Text following `'key':` up to the end of the header.
fn dict_value<'a>(header: &'a str, key: &str) -> Option<&'a str> {
    let pattern = format!("'{key}'");
    let start = header.find(&pattern)? + pattern.len();
    let rest = header[start..].trim_start();
    Some(rest.strip_prefix(':')?.trim_start())
}

fn quoted(value: &str) -> Option<&str> {
    let quote = value.chars().next().filter(|c| *c == '\'' || *c == '"')?;
    let inner = &value[1..];
    Some(&inner[..inner.find(quote)?])
}

fn parse_shape(value: &str) -> Option<Vec<usize>> {
    let inner = value.strip_prefix('(')?;
    let inner = &inner[..inner.find(')')?];
    inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().ok())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_aligned_and_terminated() {
        let bytes = encode_tensor(&Tensor3::new(2, 2, 3, vec![0.0; 12]));
        let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        assert_eq!((10 + header_len) % HEADER_ALIGN, 0);
        assert_eq!(bytes[10 + header_len - 1], b'\n');
        assert_eq!(bytes.len(), 10 + header_len + 48);
    }

    #[test]
    fn parses_numpy_style_header() {
        // As written by numpy.save for a (4, 5, 1) float32 array.
        let header = "{'descr': '<f4', 'fortran_order': False, 'shape': (4, 5, 1), }";
        assert_eq!(dict_value(header, "descr").and_then(quoted), Some("<f4"));
        assert_eq!(
            dict_value(header, "shape").and_then(parse_shape),
            Some(vec![4, 5, 1])
        );
        assert_eq!(parse_shape("(7,)"), Some(vec![7]));
    }

    #[test]
    fn rejects_float64() {
        let mut bytes = encode_tensor(&Tensor3::new(1, 1, 3, vec![0.0; 3]));
        let pos = bytes.windows(3).position(|w| w == b"<f4").unwrap();
        bytes[pos + 2] = b'8';
        assert!(matches!(
            decode_tensor(&bytes),
            Err(DecodeError::UnsupportedDtype(d)) if d == "<f8"
        ));
    }

    #[test]
    fn rejects_truncated_payload() {
        let mut bytes = encode_tensor(&Tensor3::new(2, 2, 3, vec![1.0; 12]));
        bytes.truncate(bytes.len() - 4);
        assert!(matches!(
            decode_tensor(&bytes),
            Err(DecodeError::Malformed(_))
        ));
    }

    #[test]
    fn rejects_bad_magic() {
        assert!(matches!(
            decode_tensor(b"not a tensor file"),
            Err(DecodeError::Malformed(_))
        ));
    }
}
