//! EMB1 on-disk format: magic "EMB1", version u16, dtype u8 (0 = f32),
//! M u32, d u32, then M*d little-endian f32 payload, row-major.
//!
//! Rows are stored in 32 bits but computed on in 64; loading re-normalizes
//! rows whose norm drifted by less than 1e-3 and rejects anything worse.

use std::fmt;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use mmix_core::sphere::EmbeddingBatch;
use mmix_core::Mat;

pub const MAGIC: &[u8; 4] = b"EMB1";
pub const VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 0;

#[derive(Debug)]
pub enum EmbError {
    Io(PathBuf, io::Error),
    BadMagic(PathBuf),
    TruncatedFile(PathBuf),
    UnsupportedDtype(PathBuf, u8),
    NonFiniteValue(PathBuf, usize),
    BadRowNorm(PathBuf, usize, f64),
}

impl fmt::Display for EmbError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EmbError::Io(p, e) => write!(f, "{}: {e}", p.display()),
            EmbError::BadMagic(p) => write!(f, "{}: bad magic (expected EMB1)", p.display()),
            EmbError::TruncatedFile(p) => write!(f, "{}: truncated file", p.display()),
            EmbError::UnsupportedDtype(p, c) => {
                write!(f, "{}: unsupported dtype code {c}", p.display())
            }
            EmbError::NonFiniteValue(p, row) => {
                write!(f, "{}: non-finite value in row {row}", p.display())
            }
            EmbError::BadRowNorm(p, row, n) => write!(
                f,
                "{}: row {row} has norm {n}, deviating from 1 by more than 1e-3",
                p.display()
            ),
        }
    }
}

impl std::error::Error for EmbError {}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> EmbError + '_ {
    move |e| EmbError::Io(path.to_path_buf(), e)
}

/// Raw matrix section: header plus f32 payload, no unit-norm requirement.
pub fn write_mat_section<W: Write>(w: &mut W, mat: &Mat) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[DTYPE_F32])?;
    w.write_all(&(mat.rows() as u32).to_le_bytes())?;
    w.write_all(&(mat.cols() as u32).to_le_bytes())?;
    for &v in mat.as_slice() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Reads one matrix section from a byte stream already known to be EMB1.
pub fn read_mat_section<R: Read>(r: &mut R, path: &Path) -> Result<Mat, EmbError> {
    let mut head = [0u8; 15];
    read_exact_or_truncated(r, &mut head, path)?;
    if &head[0..4] != MAGIC {
        return Err(EmbError::BadMagic(path.to_path_buf()));
    }
    let dtype = head[6];
    if dtype != DTYPE_F32 {
        return Err(EmbError::UnsupportedDtype(path.to_path_buf(), dtype));
    }
    let m = u32::from_le_bytes(head[7..11].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(head[11..15].try_into().unwrap()) as usize;
    let mut payload = vec![0u8; m * d * 4];
    read_exact_or_truncated(r, &mut payload, path)?;
    let mut data = Vec::with_capacity(m * d);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        if !v.is_finite() {
            return Err(EmbError::NonFiniteValue(path.to_path_buf(), i / d.max(1)));
        }
        data.push(v);
    }
    Ok(Mat::from_vec(m, d, data))
}

fn read_exact_or_truncated<R: Read>(
    r: &mut R,
    buf: &mut [u8],
    path: &Path,
) -> Result<(), EmbError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            EmbError::TruncatedFile(path.to_path_buf())
        } else {
            EmbError::Io(path.to_path_buf(), e)
        }
    })
}

pub fn write_emb(path: &Path, batch: &EmbeddingBatch) -> Result<(), EmbError> {
    let mut buf = Vec::with_capacity(15 + batch.len() * batch.dim() * 4);
    write_mat_section(&mut buf, batch.as_mat()).map_err(io_err(path))?;
    fs::write(path, buf).map_err(io_err(path))
}

pub fn read_emb(path: &Path) -> Result<EmbeddingBatch, EmbError> {
    let mut f = fs::File::open(path).map_err(io_err(path))?;
    let mat = read_mat_section(&mut f, path)?;
    // Validate norms at the file tolerance, then re-normalize exactly.
    for i in 0..mat.rows() {
        let norm: f64 = mat.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() >= 1e-3 {
            return Err(EmbError::BadRowNorm(path.to_path_buf(), i, norm));
        }
    }
    EmbeddingBatch::normalize_mat(mat)
        .map_err(|_| EmbError::BadRowNorm(path.to_path_buf(), 0, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use mmix_core::sphere::l2_normalize;

    fn tmp(name: &str) -> PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("mmix-emb-test-{}-{name}", std::process::id()));
        p
    }

    fn sample_batch() -> EmbeddingBatch {
        let rows = [[1.0, 2.0, -0.5, 0.1], [0.0, 1.0, 0.0, 0.0], [-1.0, 3.0, 2.0, -2.0]];
        EmbeddingBatch::from_rows(rows.iter().map(|r| l2_normalize(r).unwrap()).collect())
            .unwrap()
    }

    #[test]
    fn round_trip_within_f32() {
        let b = sample_batch();
        let p = tmp("roundtrip");
        write_emb(&p, &b).unwrap();
        let r = read_emb(&p).unwrap();
        std::fs::remove_file(&p).unwrap();
        assert_eq!(r.len(), 3);
        assert_eq!(r.dim(), 4);
        for (x, y) in b.as_mat().as_slice().iter().zip(r.as_mat().as_slice()) {
            assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let p = tmp("magic");
        std::fs::write(&p, b"XXXX\x01\x00\x00\x01\x00\x00\x00\x01\x00\x00\x00").unwrap();
        let e = read_emb(&p).unwrap_err();
        std::fs::remove_file(&p).unwrap();
        assert!(matches!(e, EmbError::BadMagic(_)));
    }

    #[test]
    fn truncated_payload_rejected() {
        let b = sample_batch();
        let p = tmp("trunc");
        write_emb(&p, &b).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 5]).unwrap();
        let e = read_emb(&p).unwrap_err();
        std::fs::remove_file(&p).unwrap();
        assert!(matches!(e, EmbError::TruncatedFile(_)));
    }

    #[test]
    fn wrong_dtype_rejected() {
        let b = sample_batch();
        let p = tmp("dtype");
        write_emb(&p, &b).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[6] = 7;
        std::fs::write(&p, &bytes).unwrap();
        let e = read_emb(&p).unwrap_err();
        std::fs::remove_file(&p).unwrap();
        assert!(matches!(e, EmbError::UnsupportedDtype(_, 7)));
    }

    #[test]
    fn non_unit_row_rejected() {
        let p = tmp("norm");
        let mut buf = Vec::new();
        let mat = Mat::from_vec(1, 2, vec![3.0, 4.0]);
        write_mat_section(&mut buf, &mat).unwrap();
        std::fs::write(&p, buf).unwrap();
        let e = read_emb(&p).unwrap_err();
        std::fs::remove_file(&p).unwrap();
        assert!(matches!(e, EmbError::BadRowNorm(_, 0, _)));
    }
}
