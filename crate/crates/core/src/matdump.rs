//! Binary matrix dump format.
//!
//! Little-endian header of three u32 words (n_rows, n_cols, dtype tag)
//! followed by the entries as f64: dtype 0 is real data in row-major
//! order, dtype 1 is complex data with interleaved re/im doubles. Used by
//! the CLI `dump`/`beamform`/`simulate` artifacts and by
//! cross-implementation tests.

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, RealMatrix};

pub const DTYPE_REAL: u32 = 0;
pub const DTYPE_COMPLEX: u32 = 1;

fn write_header(w: &mut impl Write, rows: u32, cols: u32, dtype: u32) -> Result<()> {
    w.write_all(&rows.to_le_bytes())?;
    w.write_all(&cols.to_le_bytes())?;
    w.write_all(&dtype.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

pub fn write_real(path: &Path, m: &RealMatrix) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_header(&mut w, m.rows() as u32, m.cols() as u32, DTYPE_REAL)?;
    for v in m.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_complex(path: &Path, m: &ComplexMatrix) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_header(&mut w, m.rows() as u32, m.cols() as u32, DTYPE_COMPLEX)?;
    for z in m.data() {
        w.write_all(&z.re.to_le_bytes())?;
        w.write_all(&z.im.to_le_bytes())?;
    }
    Ok(())
}

/// Either payload kind a dump file can carry.
#[derive(Debug, Clone)]
pub enum MatrixDump {
    Real(RealMatrix),
    Complex(ComplexMatrix),
}

pub fn read_dump(path: &Path) -> Result<MatrixDump> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let rows = read_u32(&mut r)? as usize;
    let cols = read_u32(&mut r)? as usize;
    let dtype = read_u32(&mut r)?;
    match dtype {
        DTYPE_REAL => {
            let mut m = RealMatrix::zeros(rows, cols);
            for i in 0..rows {
                for j in 0..cols {
                    m[(i, j)] = read_f64(&mut r)?;
                }
            }
            Ok(MatrixDump::Real(m))
        }
        DTYPE_COMPLEX => {
            let mut m = ComplexMatrix::zeros(rows, cols);
            for i in 0..rows {
                for j in 0..cols {
                    let re = read_f64(&mut r)?;
                    let im = read_f64(&mut r)?;
                    m[(i, j)] = Complex64::new(re, im);
                }
            }
            Ok(MatrixDump::Complex(m))
        }
        other => Err(Error::InvalidInput(format!(
            "matrix dump {}: unknown dtype tag {other}",
            path.display()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn tmp(name: &str) -> std::path::PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("maskbeam_mat_test_{name}_{}.mat", std::process::id()));
        p
    }

    #[test]
    fn real_round_trip_is_bit_exact() {
        let mut rng = Rng::new(4);
        let m = RealMatrix::from_fn(5, 7, |_, _| rng.normal());
        let path = tmp("real");
        write_real(&path, &m).unwrap();
        match read_dump(&path).unwrap() {
            MatrixDump::Real(back) => assert_eq!(back, m),
            _ => panic!("expected real dump"),
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn complex_round_trip_is_bit_exact() {
        let mut rng = Rng::new(6);
        let m = ComplexMatrix::from_fn(4, 4, |_, _| {
            Complex64::new(rng.normal(), rng.normal())
        });
        let path = tmp("complex");
        write_complex(&path, &m).unwrap();
        match read_dump(&path).unwrap() {
            MatrixDump::Complex(back) => assert_eq!(back.data(), m.data()),
            _ => panic!("expected complex dump"),
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn header_layout_is_fixed() {
        let m = RealMatrix::zeros(2, 3);
        let path = tmp("header");
        write_real(&path, &m).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[0..4], &2u32.to_le_bytes());
        assert_eq!(&bytes[4..8], &3u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &DTYPE_REAL.to_le_bytes());
        assert_eq!(bytes.len(), 12 + 6 * 8);
        std::fs::remove_file(&path).ok();
    }
}
