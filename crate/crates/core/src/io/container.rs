//! The `ENC1` binary container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! bytes 0..4    b"ENC1"
//! bytes 4..8    u32 header length H
//! bytes 8..8+H  UTF-8 JSON {"dtype": "f32"|"f64", "shape": [..], "order": "row-major"}
//! rest          payload, IEEE-754 little-endian, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, invalid, Error, Result};

pub const MAGIC: &[u8; 4] = b"ENC1";
const ORDER: &str = "row-major";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dtype: String,
    shape: Vec<usize>,
    order: String,
}

/// Parsed header of an `ENC1` file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContainerInfo {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    /// Byte offset at which the payload starts.
    pub payload_offset: u64,
}

impl ContainerInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn payload_bytes(&self) -> u64 {
        (self.len() * self.dtype.width()) as u64
    }
}

/// A dense row-major array with a storage dtype.
///
/// Values are held as `f64` in memory whatever the dtype; `f32` tensors are
/// narrowed on write. Widening `f32 -> f64 -> f32` is lossless, so a read
/// followed by a write reproduces the original bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dtype: Dtype,
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dtype: Dtype, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(invalid!(
                "tensor shape must be non-empty with all dims >= 1, got {shape:?}"
            ));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(dim_err!(
                "shape {shape:?} implies {n} elements but {} were given",
                data.len()
            ));
        }
        Ok(Tensor { dtype, shape, data })
    }

    pub fn from_matrix(dtype: Dtype, m: &DMatrix<f64>) -> Result<Self> {
        let data = (0..m.nrows())
            .flat_map(|i| m.row(i).iter().copied().collect::<Vec<_>>())
            .collect();
        Tensor::new(dtype, vec![m.nrows(), m.ncols()], data)
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Interprets a 2-D tensor as a matrix.
    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        match self.shape.as_slice() {
            &[r, c] => Ok(DMatrix::from_row_slice(r, c, &self.data)),
            s => Err(dim_err!("expected a 2-D tensor, got shape {s:?}")),
        }
    }

    /// Serializes header and payload to a byte vector.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            dtype: match self.dtype {
                Dtype::F32 => "f32".into(),
                Dtype::F64 => "f64".into(),
            },
            shape: self.shape.clone(),
            order: ORDER.into(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(8 + header.len() + self.data.len() * self.dtype.width());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        match self.dtype {
            Dtype::F32 => {
                for &v in &self.data {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
            Dtype::F64 => {
                for &v in &self.data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let info = parse_header(bytes)?;
        let start = info.payload_offset as usize;
        let payload = &bytes[start..];
        check_payload_len(&info, payload.len() as u64)?;
        let data = match info.dtype {
            Dtype::F32 => payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            Dtype::F64 => payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        Ok(Tensor {
            dtype: info.dtype,
            shape: info.shape,
            data,
        })
    }
}

fn check_payload_len(info: &ContainerInfo, found: u64) -> Result<()> {
    let expected = info.payload_bytes();
    if found < expected {
        return Err(Error::Truncated {
            expected: info.payload_offset + expected,
            found: info.payload_offset + found,
        });
    }
    if found > expected {
        return Err(Error::ShapeMismatch {
            shape: info.shape.clone(),
            expected_bytes: expected,
            payload_bytes: found,
        });
    }
    Ok(())
}

/// Parses the fixed prefix and JSON header. `bytes` needs to hold at least
/// the header; the payload is not inspected.
fn parse_header(bytes: &[u8]) -> Result<ContainerInfo> {
    if bytes.len() < 8 {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(Error::BadMagic {
                found: bytes[..4].try_into().unwrap(),
            });
        }
        return Err(Error::Truncated {
            expected: 8,
            found: bytes.len() as u64,
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if &magic != MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as u64;
    if (bytes.len() as u64) < 8 + hlen {
        return Err(Error::Truncated {
            expected: 8 + hlen,
            found: bytes.len() as u64,
        });
    }
    let header: Header = serde_json::from_slice(&bytes[8..8 + hlen as usize])
        .map_err(|e| Error::BadHeader(e.to_string()))?;
    let dtype = match header.dtype.as_str() {
        "f32" => Dtype::F32,
        "f64" => Dtype::F64,
        other => return Err(Error::UnsupportedDtype(other.to_string())),
    };
    if header.order != ORDER {
        return Err(Error::BadHeader(format!(
            "unsupported order {:?}",
            header.order
        )));
    }
    if header.shape.is_empty() || header.shape.contains(&0) {
        return Err(Error::BadHeader(format!(
            "invalid shape {:?}",
            header.shape
        )));
    }
    Ok(ContainerInfo {
        dtype,
        shape: header.shape,
        payload_offset: 8 + hlen,
    })
}

pub fn write_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&t.to_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    Tensor::from_bytes(&bytes)
}

/// Writes a 2-D matrix.
pub fn write_matrix(m: &DMatrix<f64>, dtype: Dtype, path: impl AsRef<Path>) -> Result<()> {
    write_tensor(&Tensor::from_matrix(dtype, m)?, path)
}

/// Reads a 2-D matrix.
pub fn read_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    read_tensor(path)?.to_matrix()
}

/// Reads the header of a container and checks that the file size matches it,
/// without loading the payload.
pub fn inspect(path: impl AsRef<Path>) -> Result<ContainerInfo> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let size = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut prefix = [0u8; 8];
    let got = read_up_to(&mut file, &mut prefix).map_err(|e| Error::io(path, e))?;
    if got < 8 {
        return parse_header(&prefix[..got]);
    }
    let hlen = u32::from_le_bytes(prefix[4..8].try_into().unwrap()) as usize;
    let mut head = prefix.to_vec();
    head.resize(8 + hlen, 0);
    let got = read_up_to(&mut file, &mut head[8..]).map_err(|e| Error::io(path, e))?;
    head.truncate(8 + got);
    let info = parse_header(&head)?;
    check_payload_len(&info, size - info.payload_offset)?;
    Ok(info)
}

fn read_up_to(r: &mut impl Read, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..])? {
            0 => break,
            k => n += k,
        }
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_zero_f64_has_eight_zero_payload_bytes() {
        let t = Tensor::new(Dtype::F64, vec![1, 1], vec![0.0]).unwrap();
        let bytes = t.to_bytes();
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        assert_eq!(&bytes[..4], b"ENC1");
        assert_eq!(&bytes[8 + hlen..], &[0u8; 8]);
    }

    #[test]
    fn f32_two_by_three_payload_is_24_bytes() {
        let t = Tensor::new(Dtype::F32, vec![2, 3], vec![1.0; 6]).unwrap();
        let bytes = t.to_bytes();
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        assert_eq!(bytes.len() - 8 - hlen, 24);
    }

    #[test]
    fn header_fields_are_dtype_shape_order() {
        let t = Tensor::new(Dtype::F64, vec![2, 2], vec![0.0; 4]).unwrap();
        let bytes = t.to_bytes();
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let h = std::str::from_utf8(&bytes[8..8 + hlen]).unwrap();
        assert_eq!(h, r#"{"dtype":"f64","shape":[2,2],"order":"row-major"}"#);
    }

    #[test]
    fn bad_magic_is_distinct_error() {
        let mut bytes = Tensor::new(Dtype::F64, vec![1], vec![1.0])
            .unwrap()
            .to_bytes();
        bytes[3] = b'0';
        assert!(matches!(
            Tensor::from_bytes(&bytes),
            Err(Error::BadMagic { .. })
        ));
    }

    #[test]
    fn short_payload_is_truncation() {
        let mut bytes = Tensor::new(Dtype::F64, vec![3], vec![1.0, 2.0, 3.0])
            .unwrap()
            .to_bytes();
        bytes.truncate(bytes.len() - 1);
        assert!(matches!(
            Tensor::from_bytes(&bytes),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn long_payload_is_shape_mismatch() {
        let mut bytes = Tensor::new(Dtype::F32, vec![2], vec![1.0, 2.0])
            .unwrap()
            .to_bytes();
        bytes.extend_from_slice(&[0u8; 4]);
        assert!(matches!(
            Tensor::from_bytes(&bytes),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn unknown_dtype_rejected() {
        let header = br#"{"dtype":"i32","shape":[1],"order":"row-major"}"#;
        let mut bytes = b"ENC1".to_vec();
        bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
        bytes.extend_from_slice(header);
        bytes.extend_from_slice(&[0u8; 4]);
        assert!(matches!(
            Tensor::from_bytes(&bytes),
            Err(Error::UnsupportedDtype(_))
        ));
    }

    #[test]
    fn zero_dim_rejected_on_construction() {
        assert!(Tensor::new(Dtype::F64, vec![0, 3], vec![]).is_err());
        assert!(Tensor::new(Dtype::F64, vec![], vec![]).is_err());
    }

    #[test]
    fn inspect_matches_full_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.enc");
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        write_matrix(&m, Dtype::F32, &p).unwrap();
        let info = inspect(&p).unwrap();
        assert_eq!(info.shape, vec![2, 3]);
        assert_eq!(info.dtype, Dtype::F32);
        assert_eq!(read_matrix(&p).unwrap(), m);
    }
}
