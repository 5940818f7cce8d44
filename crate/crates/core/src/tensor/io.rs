//! Binary matrix format: `"CLCM"`, version `u32`, rows `u64`, cols `u64`,
//! then `rows * cols` little-endian `f64` values in row-major order.

use std::io::{Read, Write};

use super::Matrix;
use crate::error::{Error, Result};

pub const MATRIX_MAGIC: &[u8; 4] = b"CLCM";
pub const MATRIX_VERSION: u32 = 1;

pub fn write_matrix<W: Write>(w: &mut W, m: &Matrix) -> Result<()> {
    w.write_all(MATRIX_MAGIC)?;
    w.write_all(&MATRIX_VERSION.to_le_bytes())?;
    w.write_all(&(m.rows() as u64).to_le_bytes())?;
    w.write_all(&(m.cols() as u64).to_le_bytes())?;
    for v in m.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_matrix<R: Read>(r: &mut R) -> Result<Matrix> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MATRIX_MAGIC {
        return Err(Error::Format(format!("bad matrix magic {magic:?}")));
    }
    let version = read_u32(r)?;
    if version != MATRIX_VERSION {
        return Err(Error::Format(format!("unsupported matrix version {version}")));
    }
    let rows = read_u64(r)? as usize;
    let cols = read_u64(r)? as usize;
    let len = rows
        .checked_mul(cols)
        .filter(|&n| n <= (1 << 32))
        .ok_or_else(|| Error::Format(format!("implausible matrix size {rows}x{cols}")))?;
    let mut data = Vec::with_capacity(len);
    let mut buf = [0u8; 8];
    for _ in 0..len {
        r.read_exact(&mut buf)?;
        data.push(f64::from_le_bytes(buf));
    }
    Matrix::from_vec(rows, cols, data)
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let m = Matrix::from_rows(&[[1.0, -2.5]]).unwrap();
        let mut bytes = Vec::new();
        write_matrix(&mut bytes, &m).unwrap();
        assert_eq!(&bytes[..4], b"CLCM");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..16], &1u64.to_le_bytes());
        assert_eq!(&bytes[16..24], &2u64.to_le_bytes());
        assert_eq!(&bytes[24..32], &1.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 24 + 16);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut bytes = Vec::new();
        write_matrix(&mut bytes, &Matrix::ones(2, 2)).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_matrix(&mut bad.as_slice()), Err(Error::Format(_))));
        bytes.truncate(bytes.len() - 3);
        assert!(read_matrix(&mut bytes.as_slice()).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(rows in 0usize..5, cols in 0usize..5, seed in any::<u64>()) {
            let mut rng = crate::tensor::RngState::new(seed);
            let data: Vec<f64> = (0..rows * cols).map(|_| rng.normal() * 1e3).collect();
            let m = Matrix::from_vec(rows, cols, data).unwrap();
            let mut bytes = Vec::new();
            write_matrix(&mut bytes, &m).unwrap();
            let back = read_matrix(&mut bytes.as_slice()).unwrap();
            prop_assert_eq!(back.shape(), m.shape());
            for (a, b) in back.as_slice().iter().zip(m.as_slice()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
