//! MIDE embedding blob.
//!
//! ```text
//! magic      4 bytes   "MIDE"
//! version    u32 LE    (currently 1)
//! repeated until end of file:
//!   id_len   u32 LE
//!   id       id_len bytes, UTF-8 backend id
//!   dim      u32 LE
//!   rows     u64 LE
//!   data     rows * dim IEEE-754 f32 LE, row-major
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MIDE";
pub const VERSION: u32 = 1;

pub fn encode(blocks: &[&EmbeddingMatrix<f32>], out: &mut impl Write) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    for block in blocks {
        let id = block.backend().as_str().as_bytes();
        out.write_all(&(id.len() as u32).to_le_bytes())?;
        out.write_all(id)?;
        out.write_all(&(block.dim() as u32).to_le_bytes())?;
        out.write_all(&(block.rows() as u64).to_le_bytes())?;
        for v in block.as_slice() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn write(path: &Path, blocks: &[&EmbeddingMatrix<f32>]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    encode(blocks, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::MalformedBlob {
                path: self.path.to_path_buf(),
                reason: format!("unexpected end of data reading {what} at byte {}", self.pos),
            }),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

/// Decodes a blob held in memory. `path` is only used for error context.
pub fn decode(buf: &[u8], path: &Path) -> Result<Vec<EmbeddingMatrix<f32>>> {
    let mut cur = Cursor { buf, pos: 0, path };
    let magic = cur.take(4, "magic").map_err(|_| Error::BadMagic { path: path.to_path_buf() })?;
    if magic != MAGIC {
        return Err(Error::BadMagic { path: path.to_path_buf() });
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::VersionMismatch { path: path.to_path_buf(), found: version, supported: VERSION });
    }
    let mut blocks = Vec::new();
    while !cur.done() {
        let id_len = cur.u32("backend id length")? as usize;
        let id = std::str::from_utf8(cur.take(id_len, "backend id")?).map_err(|e| Error::MalformedBlob {
            path: path.to_path_buf(),
            reason: format!("backend id is not UTF-8: {e}"),
        })?;
        let dim = cur.u32("dimension")? as usize;
        let rows = cur.u64("row count")?;
        if dim == 0 {
            return Err(Error::MalformedBlob {
                path: path.to_path_buf(),
                reason: format!("backend `{id}` has dimension 0"),
            });
        }
        let n = usize::try_from(rows)
            .ok()
            .and_then(|r| r.checked_mul(dim))
            .and_then(|c| c.checked_mul(4))
            .ok_or_else(|| Error::MalformedBlob {
                path: path.to_path_buf(),
                reason: format!("backend `{id}` declares an impossible size"),
            })?;
        let raw = cur.take(n, "matrix data")?;
        let data: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        if blocks.iter().any(|b: &EmbeddingMatrix<f32>| b.backend().as_str() == id) {
            return Err(Error::MalformedBlob {
                path: path.to_path_buf(),
                reason: format!("backend `{id}` appears twice"),
            });
        }
        blocks.push(EmbeddingMatrix::new(id, dim, data)?);
    }
    Ok(blocks)
}

pub fn read(path: &Path) -> Result<Vec<EmbeddingMatrix<f32>>> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> EmbeddingMatrix<f32> {
        EmbeddingMatrix::new("arcface", 3, vec![1.0, 0.0, 0.0, 0.0, 0.6, 0.8]).unwrap()
    }

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        encode(&[&sample()], &mut buf).unwrap();
        assert_eq!(&buf[..4], b"MIDE");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 7);
        assert_eq!(&buf[12..19], b"arcface");
        assert_eq!(u32::from_le_bytes(buf[19..23].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(buf[23..31].try_into().unwrap()), 2);
        assert_eq!(buf.len(), 31 + 6 * 4);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let p = Path::new("x.mide");
        assert!(matches!(decode(b"NOPE\x01\0\0\0", p), Err(Error::BadMagic { .. })));
        assert!(matches!(decode(b"MI", p), Err(Error::BadMagic { .. })));
        assert!(matches!(decode(b"MIDE\x02\0\0\0", p), Err(Error::VersionMismatch { found: 2, .. })));
    }

    #[test]
    fn rejects_truncation() {
        let mut buf = Vec::new();
        encode(&[&sample()], &mut buf).unwrap();
        buf.pop();
        assert!(matches!(decode(&buf, Path::new("t")), Err(Error::MalformedBlob { .. })));
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(dim in 1usize..6, rows in 0usize..5, seed in any::<u64>()) {
            let data: Vec<f32> = (0..dim * rows)
                .map(|i| f32::from_bits((seed.wrapping_mul(i as u64 + 1) >> 40) as u32 & 0x3fff_ffff))
                .collect();
            let m = EmbeddingMatrix::new("b", dim, data).unwrap();
            let mut buf = Vec::new();
            encode(&[&m], &mut buf).unwrap();
            let back = decode(&buf, Path::new("p")).unwrap();
            prop_assert_eq!(back.len(), 1);
            let mut again = Vec::new();
            encode(&[&back[0]], &mut again).unwrap();
            prop_assert_eq!(buf, again);
        }
    }
}
