use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::table::EmbeddingTable;
use crate::error::{create_file, open_file, Error, Result};
use crate::numeric::read_u32;

const TOKEN_MAGIC: &[u8; 4] = b"RGK1";

/// First 8 bytes of SHA-256 of the external id, little-endian.
pub fn external_id_hash(external: &str) -> u64 {
    let digest = Sha256::digest(external.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenRecord {
    pub id_hash: u64,
    pub vector: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenFile {
    pub head: u8,
    pub dim: usize,
    pub fingerprint: [u8; 32],
    pub records: Vec<TokenRecord>,
}

/// Header (count, d_out, head, fingerprint), then per node an id hash and its vector.
pub fn write_tokens<W: Write>(table: &EmbeddingTable, w: &mut W) -> Result<()> {
    let n = u32::try_from(table.len()).map_err(|_| Error::format("token file", "too many records"))?;
    let d = u32::try_from(table.dim()).map_err(|_| Error::format("token file", "dimension too large"))?;
    w.write_all(TOKEN_MAGIC)?;
    w.write_all(&n.to_le_bytes())?;
    w.write_all(&d.to_le_bytes())?;
    w.write_all(&[table.head()])?;
    w.write_all(&table.fingerprint())?;
    for (i, id) in table.ids().iter().enumerate() {
        w.write_all(&external_id_hash(id).to_le_bytes())?;
        for v in table.row(i as u32) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a token file; with `expected` set, a different fingerprint is rejected.
pub fn read_tokens<R: Read>(r: &mut R, expected: Option<[u8; 32]>) -> Result<TokenFile> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TOKEN_MAGIC {
        return Err(Error::format("token file", format!("bad magic {magic:?}")));
    }
    let n = read_u32(r)? as usize;
    let dim = read_u32(r)? as usize;
    let mut head = [0u8; 1];
    r.read_exact(&mut head)?;
    let mut fingerprint = [0u8; 32];
    r.read_exact(&mut fingerprint)?;
    if let Some(fp) = expected {
        if fp != fingerprint {
            return Err(Error::validation("token file schema fingerprint does not match"));
        }
    }
    let mut records = Vec::with_capacity(n);
    let mut buf = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        let id_hash = u64::from_le_bytes(buf);
        let mut vector = Vec::with_capacity(dim);
        for _ in 0..dim {
            r.read_exact(&mut buf)?;
            vector.push(f64::from_le_bytes(buf));
        }
        records.push(TokenRecord { id_hash, vector });
    }
    Ok(TokenFile {
        head: head[0],
        dim,
        fingerprint,
        records,
    })
}

pub fn export_graph_tokens(table: &EmbeddingTable, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(create_file(path)?);
    write_tokens(table, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_graph_tokens(path: &Path, expected: Option<[u8; 32]>) -> Result<TokenFile> {
    read_tokens(&mut BufReader::new(open_file(path)?), expected)
}
