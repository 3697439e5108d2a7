//! Binary `theta` checkpoints.
//!
//! Layout (all little-endian): magic `b"GNTH"`, format version `u32`,
//! `L` as `u32`, time `f64`, then the `L * L` entries in row-major order,
//! each as an `(re, im)` pair of `f64`. Round trips are bit-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use faer::{c64, Mat};

use crate::correlation::CorrelationMatrix;
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"GNTH";
pub const VERSION: u32 = 1;
const HEADER: usize = 4 + 4 + 4 + 8;

pub fn encode(theta: &CorrelationMatrix, time: f64) -> Vec<u8> {
    let l = theta.len();
    let m = theta.as_mat();
    let mut buf = Vec::with_capacity(HEADER + 16 * l * l);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(l as u32).to_le_bytes());
    buf.extend_from_slice(&time.to_le_bytes());
    for i in 0..l {
        for j in 0..l {
            buf.extend_from_slice(&m[(i, j)].re.to_le_bytes());
            buf.extend_from_slice(&m[(i, j)].im.to_le_bytes());
        }
    }
    buf
}

pub fn decode(bytes: &[u8]) -> Result<(CorrelationMatrix, f64)> {
    let bad = |msg: &str| Error::Checkpoint(msg.to_string());
    if bytes.len() < HEADER {
        return Err(bad("truncated header"));
    }
    if bytes[0..4] != MAGIC {
        return Err(bad("bad magic"));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().unwrap());
    let float = |k: usize| f64::from_le_bytes(bytes[k..k + 8].try_into().unwrap());
    let version = word(4);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let l = word(8) as usize;
    let time = float(12);
    if bytes.len() != HEADER + 16 * l * l {
        return Err(Error::Checkpoint(format!(
            "expected {} bytes for L = {l}, found {}",
            HEADER + 16 * l * l,
            bytes.len()
        )));
    }
    let m = Mat::from_fn(l, l, |i, j| {
        let k = HEADER + 16 * (i * l + j);
        c64::new(float(k), float(k + 8))
    });
    Ok((CorrelationMatrix::from_mat(m)?, time))
}

/// Writes via a temporary file and rename, so readers never see a partial file.
pub fn write(path: &Path, theta: &CorrelationMatrix, time: f64) -> Result<()> {
    write_atomic(path, &encode(theta, time))
}

pub fn read(path: &Path) -> Result<(CorrelationMatrix, f64)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::initstate::{random_half_filled_theta, RandomInitSpec};

    #[test]
    fn round_trip_is_bit_exact() {
        let theta = random_half_filled_theta(6, &RandomInitSpec::with_seed(4)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("theta.gnth");
        write(&path, &theta, 960.05).unwrap();
        let (back, t) = read(&path).unwrap();
        assert_eq!(t.to_bits(), 960.05f64.to_bits());
        for i in 0..6 {
            for j in 0..6 {
                let (a, b) = (theta.as_mat()[(i, j)], back.as_mat()[(i, j)]);
                assert_eq!(a.re.to_bits(), b.re.to_bits());
                assert_eq!(a.im.to_bits(), b.im.to_bits());
            }
        }
    }

    #[test]
    fn layout_is_row_major() {
        let mut m = Mat::<c64>::zeros(4, 4);
        m[(0, 1)] = c64::new(2.0, -3.0);
        let bytes = encode(&CorrelationMatrix::from_mat(m).unwrap(), 0.5);
        assert_eq!(&bytes[0..4], b"GNTH");
        assert_eq!(bytes.len(), HEADER + 16 * 16);
        let re = f64::from_le_bytes(bytes[HEADER + 16..HEADER + 24].try_into().unwrap());
        let im = f64::from_le_bytes(bytes[HEADER + 24..HEADER + 32].try_into().unwrap());
        assert_eq!((re, im), (2.0, -3.0));
    }

    #[test]
    fn corrupt_input_rejected() {
        let theta = CorrelationMatrix::scaled_identity(4, 0.5);
        let mut bytes = encode(&theta, 1.0);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(decode(&bytes).is_err());
    }
}
