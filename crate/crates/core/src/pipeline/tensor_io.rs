//! Binary tensor files: `RGLN`, version `u16`, dtype `u8` (0 = f64), rank
//! `u8`, shape as `u64`s, then the values; everything little-endian.

use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"RGLN";
const VERSION: u16 = 1;
const DTYPE_F64: u8 = 0;

pub fn encode_tensor(shape: &[usize], data: &[f64]) -> Result<Vec<u8>> {
    if shape.iter().product::<usize>() != data.len() {
        return Err(Error::ShapeMismatch(format!("shape {shape:?} for {} values", data.len())));
    }
    let rank = u8::try_from(shape.len()).map_err(|_| Error::ShapeMismatch("tensor rank above 255".into()))?;
    let mut out = Vec::with_capacity(8 + 8 * shape.len() + 8 * data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(DTYPE_F64);
    out.push(rank);
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> std::result::Result<(Vec<usize>, Vec<f64>), String> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err("missing RGLN header".into());
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(format!("unsupported tensor version {version}"));
    }
    if bytes[6] != DTYPE_F64 {
        return Err(format!("unsupported dtype code {}", bytes[6]));
    }
    let rank = bytes[7] as usize;
    let header = 8 + 8 * rank;
    if bytes.len() < header {
        return Err("truncated shape".into());
    }
    let shape: Vec<usize> = bytes[8..header]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")) as usize)
        .collect();
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or("shape overflows")?;
    if bytes.len() != header + 8 * count {
        return Err(format!("expected {} data bytes, found {}", 8 * count, bytes.len() - header));
    }
    let data = bytes[header..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((shape, data))
}

pub fn write_tensor(path: &Path, shape: &[usize], data: &[f64]) -> Result<()> {
    std::fs::write(path, encode_tensor(shape, data)?).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes).map_err(|reason| Error::format(path, reason))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_layout() {
        let data = [1.5, -0.0, f64::MIN_POSITIVE, 1e300, 0.1, 7.0];
        let bytes = encode_tensor(&[2, 3], &data).unwrap();
        assert_eq!(&bytes[..8], &[b'R', b'G', b'L', b'N', 1, 0, 0, 2]);
        assert_eq!(bytes.len(), 8 + 16 + 48);
        let (shape, back) = decode_tensor(&bytes).unwrap();
        assert_eq!(shape, vec![2, 3]);
        assert!(back.iter().zip(&data).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn rejects_corruption() {
        let mut bytes = encode_tensor(&[2], &[1.0, 2.0]).unwrap();
        assert!(decode_tensor(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(decode_tensor(&bytes).is_err());
    }
}
