//! Framed binary files and content hashing.
//!
//! The on-disk layout shared by the item-vector table and the retrieval
//! index: an 8-byte little-endian header length, a JSON header, then raw
//! little-endian blocks described by that header.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::Real;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

pub fn sha256_file_hex(path: impl AsRef<Path>) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

pub struct FramedWriter<W: Write> {
    inner: W,
}

impl<W: Write> FramedWriter<W> {
    pub fn new(mut inner: W, header: &impl Serialize) -> Result<Self> {
        let header_bytes = serde_json::to_vec(header)?;
        inner.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        inner.write_all(&header_bytes)?;
        Ok(Self { inner })
    }

    pub fn write_f64_block(&mut self, values: &[Real]) -> Result<()> {
        for v in values {
            self.inner.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn write_u64_block(&mut self, values: &[u64]) -> Result<()> {
        for v in values {
            self.inner.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

pub struct FramedReader<R: Read> {
    inner: R,
    path: String,
}

impl<R: Read> FramedReader<R> {
    pub fn new<H: DeserializeOwned>(mut inner: R, path: &Path) -> Result<(H, Self)> {
        let path_str = path.display().to_string();
        let mut len_bytes = [0u8; 8];
        inner.read_exact(&mut len_bytes).map_err(|_| Error::CorruptFile {
            path: path_str.clone(),
            reason: "missing header length".into(),
        })?;
        let len = u64::from_le_bytes(len_bytes) as usize;
        let mut header_bytes = vec![0u8; len];
        inner
            .read_exact(&mut header_bytes)
            .map_err(|_| Error::CorruptFile {
                path: path_str.clone(),
                reason: "truncated header".into(),
            })?;
        let header: H = serde_json::from_slice(&header_bytes).map_err(|e| Error::CorruptFile {
            path: path_str.clone(),
            reason: format!("bad header: {e}"),
        })?;
        Ok((
            header,
            Self {
                inner,
                path: path_str,
            },
        ))
    }

    pub fn read_f64_block(&mut self, count: usize) -> Result<Vec<Real>> {
        let mut bytes = vec![0u8; count * 8];
        self.inner.read_exact(&mut bytes).map_err(|_| Error::CorruptFile {
            path: self.path.clone(),
            reason: "truncated float block".into(),
        })?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| Real::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn read_u64_block(&mut self, count: usize) -> Result<Vec<u64>> {
        let mut bytes = vec![0u8; count * 8];
        self.inner.read_exact(&mut bytes).map_err(|_| Error::CorruptFile {
            path: self.path.clone(),
            reason: "truncated id block".into(),
        })?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Header of an item-vector table file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VectorTableHeader {
    pub format: String,
    pub dim: usize,
    pub count: usize,
    pub checkpoint_hash: String,
}

pub const VECTOR_TABLE_FORMAT: &str = "dmtl-item-vectors-v1";

/// Write `count` item ids followed by `count * dim` vector components.
pub fn write_vector_table(
    path: impl AsRef<Path>,
    dim: usize,
    ids: &[u64],
    vectors: &[Real],
    checkpoint_hash: &str,
) -> Result<()> {
    assert_eq!(vectors.len(), ids.len() * dim);
    let header = VectorTableHeader {
        format: VECTOR_TABLE_FORMAT.to_string(),
        dim,
        count: ids.len(),
        checkpoint_hash: checkpoint_hash.to_string(),
    };
    let file = File::create(path.as_ref())?;
    let mut w = FramedWriter::new(BufWriter::new(file), &header)?;
    w.write_u64_block(ids)?;
    w.write_f64_block(vectors)?;
    w.finish()
}

pub fn read_vector_table(path: impl AsRef<Path>) -> Result<(VectorTableHeader, Vec<u64>, Vec<Real>)> {
    let path = path.as_ref();
    let file = File::open(path)?;
    let (header, mut r): (VectorTableHeader, _) = FramedReader::new(BufReader::new(file), path)?;
    if header.format != VECTOR_TABLE_FORMAT {
        return Err(Error::CorruptFile {
            path: path.display().to_string(),
            reason: format!("unexpected format `{}`", header.format),
        });
    }
    let ids = r.read_u64_block(header.count)?;
    let vectors = r.read_f64_block(header.count * header.dim)?;
    Ok((header, ids, vectors))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vector_table_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vecs.bin");
        let ids = vec![3u64, 1, 9];
        let vectors = vec![0.1, -0.2, 3.5e-300, 1.0, f64::MIN_POSITIVE, 2.0];
        write_vector_table(&path, 2, &ids, &vectors, "abc").unwrap();
        let (header, ids2, vecs2) = read_vector_table(&path).unwrap();
        assert_eq!(header.dim, 2);
        assert_eq!(ids2, ids);
        assert_eq!(vecs2, vectors);
    }

    #[test]
    fn truncated_file_is_reported_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vecs.bin");
        write_vector_table(&path, 2, &[1, 2], &[0.0; 4], "h").unwrap();
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() - 5]).unwrap();
        let err = read_vector_table(&path).unwrap_err();
        assert!(matches!(err, Error::CorruptFile { .. }));
    }

    #[test]
    fn sha256_matches_known_vector() {
        // sha256("abc"), a published test vector
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
