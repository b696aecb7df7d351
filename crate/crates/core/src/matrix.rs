//! Dense row-major matrices and the RFT1 on-disk tensor format.
//!
//! RFT1 layout (little-endian): magic `RFT1`, one precision-code byte
//! (0 = f32, 1 = f64), three pad bytes, `u64` rows, `u64` cols, then
//! `rows * cols` elements row-major. No compression.

use std::fs;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{Precision, Scalar};

pub const RFT1_MAGIC: [u8; 4] = *b"RFT1";
const RFT1_HEADER_LEN: usize = 24;

/// Row-major 2D tensor of `rows` tokens by `cols` channels. Immutable in
/// spirit: kernels take it by reference and return fresh matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(
                "Matrix::from_vec",
                format!("dimensions must be positive, got {rows}x{cols}"),
            ));
        }
        let expected = rows.checked_mul(cols).ok_or_else(|| {
            Error::invalid("Matrix::from_vec", format!("{rows}x{cols} overflows"))
        })?;
        if data.len() != expected {
            return Err(Error::invalid(
                "Matrix::from_vec",
                format!("{rows}x{cols} needs {expected} elements, got {}", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, value: T) {
        self.data[r * self.cols + c] = value;
    }

    /// Element-wise conversion to another scalar type (through f64).
    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .map(|&v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `m` to `path` in RFT1 format. Inverse of [`load_tensor`].
pub fn save_tensor<T: Scalar>(m: &Matrix<T>, path: &Path) -> Result<()> {
    let elem = T::PRECISION.elem_bytes();
    let mut buf = Vec::with_capacity(RFT1_HEADER_LEN + m.data.len() * elem);
    buf.extend_from_slice(&RFT1_MAGIC);
    buf.push(T::PRECISION.code());
    buf.extend_from_slice(&[0u8; 3]);
    buf.extend_from_slice(&(m.rows as u64).to_le_bytes());
    buf.extend_from_slice(&(m.cols as u64).to_le_bytes());
    for &v in &m.data {
        v.write_le(&mut buf);
    }
    fs::write(path, &buf).map_err(|e| io_err(path, e))
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<(Precision, u64, u64)> {
    if bytes.len() < RFT1_HEADER_LEN {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: RFT1_HEADER_LEN,
            found: bytes.len(),
        });
    }
    if bytes[..4] != RFT1_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: String::from_utf8_lossy(&RFT1_MAGIC).into_owned(),
            found: String::from_utf8_lossy(&bytes[..4]).into_owned(),
        });
    }
    let precision = Precision::from_code(bytes[4]).ok_or(Error::BadPrecisionCode {
        path: path.to_path_buf(),
        code: bytes[4],
    })?;
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    Ok((precision, rows, cols))
}

/// Reads only the RFT1 header: stored precision, rows, cols.
pub fn tensor_header(path: &Path) -> Result<(Precision, u64, u64)> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut header = Vec::with_capacity(RFT1_HEADER_LEN);
    file.take(RFT1_HEADER_LEN as u64)
        .read_to_end(&mut header)
        .map_err(|e| io_err(path, e))?;
    parse_header(path, &header)
}

/// Loads an RFT1 tensor stored at `T`'s precision. Byte-exact inverse of
/// [`save_tensor`].
pub fn load_tensor<T: Scalar>(path: &Path) -> Result<Matrix<T>> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let (precision, rows64, cols64) = parse_header(path, &bytes)?;
    if precision != T::PRECISION {
        return Err(Error::PrecisionMismatch {
            path: path.to_path_buf(),
            expected: T::PRECISION,
            found: precision,
        });
    }
    if rows64 == 0 || cols64 == 0 {
        return Err(Error::BadDims {
            path: path.to_path_buf(),
            rows: rows64,
            cols: cols64,
            why: "zero dimension",
        });
    }
    let overflow = Error::BadDims {
        path: path.to_path_buf(),
        rows: rows64,
        cols: cols64,
        why: "element count overflows",
    };
    let rows = usize::try_from(rows64).map_err(|_| overflow_clone(path, rows64, cols64))?;
    let cols = usize::try_from(cols64).map_err(|_| overflow_clone(path, rows64, cols64))?;
    let count = rows.checked_mul(cols).ok_or(overflow)?;
    let elem = T::PRECISION.elem_bytes();
    let payload = count
        .checked_mul(elem)
        .ok_or_else(|| overflow_clone(path, rows64, cols64))?;
    let body = &bytes[RFT1_HEADER_LEN..];
    if body.len() < payload {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: RFT1_HEADER_LEN + payload,
            found: bytes.len(),
        });
    }
    if body.len() > payload {
        return Err(Error::TrailingData {
            path: path.to_path_buf(),
            extra: body.len() - payload,
        });
    }
    let mut data = Vec::with_capacity(count);
    for (index, chunk) in body.chunks_exact(elem).enumerate() {
        let v = T::read_le(chunk);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                path: path.to_path_buf(),
                index,
            });
        }
        data.push(v);
    }
    Matrix::from_vec(rows, cols, data)
}

fn overflow_clone(path: &Path, rows: u64, cols: u64) -> Error {
    Error::BadDims {
        path: path.to_path_buf(),
        rows,
        cols,
        why: "element count overflows",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("blockattn-matrix-tests");
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn from_vec_validates_shape() {
        assert!(Matrix::from_vec(0, 2, Vec::<f32>::new()).is_err());
        assert!(Matrix::from_vec(2, 0, Vec::<f32>::new()).is_err());
        assert!(Matrix::from_vec(2, 2, vec![0.0f32; 3]).is_err());
        assert!(Matrix::from_vec(2, 2, vec![0.0f32; 4]).is_ok());
    }

    #[test]
    fn save_load_round_trip() {
        let m = Matrix::from_vec(3, 2, (0..6).map(|i| i as f32).collect()).unwrap();
        let path = tmp("round_trip.rft");
        save_tensor(&m, &path).unwrap();
        let back: Matrix<f32> = load_tensor(&path).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn header_peek() {
        let m = Matrix::from_vec(3, 2, vec![0.0f64; 6]).unwrap();
        let path = tmp("header.rft");
        save_tensor(&m, &path).unwrap();
        assert_eq!(tensor_header(&path).unwrap(), (Precision::F64, 3, 2));
    }

    #[test]
    fn bad_magic_is_reported() {
        let path = tmp("bad_magic.rft");
        let mut bytes = b"XXXX".to_vec();
        bytes.extend_from_slice(&[0u8; 20]);
        fs::write(&path, &bytes).unwrap();
        match load_tensor::<f32>(&path) {
            Err(Error::BadMagic { found, .. }) => assert_eq!(found, "XXXX"),
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_reported() {
        let path = tmp("truncated.rft");
        // header declares 2x2 f32 but only 3 elements follow
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&RFT1_MAGIC);
        bytes.push(0);
        bytes.extend_from_slice(&[0u8; 3]);
        bytes.extend_from_slice(&2u64.to_le_bytes());
        bytes.extend_from_slice(&2u64.to_le_bytes());
        for v in [1.0f32, 2.0, 3.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&path, &bytes).unwrap();
        match load_tensor::<f32>(&path) {
            Err(Error::Truncated {
                expected, found, ..
            }) => {
                assert_eq!(expected, 24 + 16);
                assert_eq!(found, 24 + 12);
            }
            other => panic!("expected Truncated, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_is_reported_with_index() {
        let path = tmp("nonfinite.rft");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&RFT1_MAGIC);
        bytes.push(0);
        bytes.extend_from_slice(&[0u8; 3]);
        bytes.extend_from_slice(&1u64.to_le_bytes());
        bytes.extend_from_slice(&3u64.to_le_bytes());
        for v in [1.0f32, f32::NAN, 3.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&path, &bytes).unwrap();
        match load_tensor::<f32>(&path) {
            Err(Error::NonFinite { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn precision_mismatch_is_reported() {
        let m = Matrix::from_vec(1, 1, vec![1.0f32]).unwrap();
        let path = tmp("precision.rft");
        save_tensor(&m, &path).unwrap();
        assert!(matches!(
            load_tensor::<f64>(&path),
            Err(Error::PrecisionMismatch { .. })
        ));
    }
}
