use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, StandardNormal};

use crate::error::{create_file, open_file, Error, Result};
use crate::graph::HeteroGraph;
use crate::model::{embed_all, FeatureStore, ModelParams};
use crate::numeric::{read_u32, Tensor};
use crate::rng::Rng;

const TABLE_MAGIC: &[u8; 4] = b"RGE1";
const UNIT_TOL: f64 = 1e-12;

/// Unit-norm embeddings of every node of one type under one head.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    node_type: String,
    head: u8,
    fingerprint: [u8; 32],
    matrix: Tensor,
    ids: Vec<String>,
    index: HashMap<String, u32>,
}

impl EmbeddingTable {
    /// Rows must be unit-norm and ordered by local id; `ids[i]` names row `i`.
    pub fn new(node_type: &str, head: u8, fingerprint: [u8; 32], matrix: Tensor, ids: Vec<String>) -> Result<Self> {
        if ids.len() != matrix.rows() {
            return Err(Error::validation(format!(
                "table has {} rows but {} ids",
                matrix.rows(),
                ids.len()
            )));
        }
        for i in 0..matrix.rows() {
            let n = matrix.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            if (n - 1.0).abs() > UNIT_TOL {
                return Err(Error::validation(format!("row {} ({}) has norm {n}", i, ids[i])));
            }
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i as u32).is_some() {
                return Err(Error::validation(format!("duplicate id {id:?} in table")));
            }
        }
        Ok(Self {
            node_type: node_type.to_string(),
            head,
            fingerprint,
            matrix,
            ids,
            index,
        })
    }

    /// Same shape and ids, rows drawn from an isotropic Gaussian and normalized.
    pub fn random_like(other: &EmbeddingTable, rng: &mut Rng) -> Result<Self> {
        let (n, d) = other.matrix.shape();
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            let row: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            data.extend(row.iter().map(|v| v / norm));
        }
        Self::new(
            &other.node_type,
            other.head,
            other.fingerprint,
            Tensor::from_vec(n, d, data)?,
            other.ids.clone(),
        )
    }

    pub fn node_type(&self) -> &str {
        &self.node_type
    }

    pub fn head(&self) -> u8 {
        self.head
    }

    pub fn fingerprint(&self) -> [u8; 32] {
        self.fingerprint
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.matrix.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn external(&self, i: u32) -> &str {
        &self.ids[i as usize]
    }

    pub fn lookup(&self, external: &str) -> Option<u32> {
        self.index.get(external).copied()
    }

    pub fn require(&self, external: &str) -> Result<u32> {
        self.lookup(external)
            .ok_or_else(|| Error::NotFound(format!("{} {external:?} not in embedding table", self.node_type)))
    }

    pub fn row(&self, i: u32) -> &[f64] {
        self.matrix.row(i as usize)
    }

    pub fn cosine(&self, i: u32, j: u32) -> f64 {
        dot(self.row(i), self.row(j))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let n = u32::try_from(self.len()).map_err(|_| Error::format("embedding table", "too many rows"))?;
        let d = u32::try_from(self.dim()).map_err(|_| Error::format("embedding table", "dimension too large"))?;
        w.write_all(TABLE_MAGIC)?;
        w.write_all(&n.to_le_bytes())?;
        w.write_all(&d.to_le_bytes())?;
        w.write_all(&[self.head])?;
        w.write_all(&self.fingerprint)?;
        for v in self.matrix.data() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Companion id map: `type<TAB>external_id<TAB>local_id`.
    pub fn write_ids<W: Write>(&self, w: &mut W) -> Result<()> {
        for (i, id) in self.ids.iter().enumerate() {
            writeln!(w, "{}\t{id}\t{i}", self.node_type)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read, I: BufRead>(r: &mut R, ids: I) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != TABLE_MAGIC {
            return Err(Error::format("embedding table", format!("bad magic {magic:?}")));
        }
        let n = read_u32(r)? as usize;
        let d = read_u32(r)? as usize;
        let mut head = [0u8; 1];
        r.read_exact(&mut head)?;
        let mut fingerprint = [0u8; 32];
        r.read_exact(&mut fingerprint)?;
        let mut data = Vec::with_capacity(n * d);
        let mut buf = [0u8; 8];
        for _ in 0..n * d {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        let matrix = Tensor::from_vec(n, d, data)?;

        let mut node_type = None;
        let mut names = Vec::with_capacity(n);
        for (k, line) in ids.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(Error::parse(Some(k + 1), "id map line needs 3 tab-separated fields"));
            }
            let local: usize = f[2]
                .parse()
                .map_err(|_| Error::parse(Some(k + 1), format!("bad local id {:?}", f[2])))?;
            if local != names.len() {
                return Err(Error::parse(Some(k + 1), "id map local ids must be contiguous from 0"));
            }
            match &node_type {
                None => node_type = Some(f[0].to_string()),
                Some(t) if t != f[0] => return Err(Error::parse(Some(k + 1), "id map mixes node types")),
                _ => {}
            }
            names.push(f[1].to_string());
        }
        Self::new(&node_type.unwrap_or_default(), head[0], fingerprint, matrix, names)
    }

    pub fn ids_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".ids.tsv");
        PathBuf::from(s)
    }

    /// Writes `path` and its `<path>.ids.tsv` companion.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(create_file(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        let mut w = BufWriter::new(create_file(&Self::ids_path(path))?);
        self.write_ids(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(open_file(path)?);
        let ids = BufReader::new(open_file(&Self::ids_path(path))?);
        Self::read_from(&mut r, ids)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Full forward pass, then one table per `(type, head)`.
pub fn export_embeddings(
    params: &ModelParams,
    g: &HeteroGraph,
    features: &FeatureStore,
    node_type: &str,
    head: usize,
) -> Result<EmbeddingTable> {
    Ok(export_all(params, g, features)?
        .into_iter()
        .nth(head)
        .ok_or_else(|| Error::validation(format!("head {head} out of range")))?
        .into_iter()
        .nth(g.schema().require_type(node_type)?)
        .expect("one table per type"))
}

/// Tables for every head and type, `[head][type]`.
pub fn export_all(params: &ModelParams, g: &HeteroGraph, features: &FeatureStore) -> Result<Vec<Vec<EmbeddingTable>>> {
    let heads = params.config().heads;
    if heads > u8::MAX as usize + 1 {
        return Err(Error::validation("at most 256 heads can be exported"));
    }
    let all = embed_all(g, features, params)?;
    let fp = g.fingerprint();
    all.into_iter()
        .enumerate()
        .map(|(h, per_type)| {
            per_type
                .into_iter()
                .enumerate()
                .map(|(t, m)| {
                    let ids = g.ids().externals(t).to_vec();
                    EmbeddingTable::new(&g.schema().node_types[t].name, h as u8, fp, m, ids)
                })
                .collect()
        })
        .collect()
}
