use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ids::IdDictionary;
use super::schema::{GraphSchema, RelationId, RelationKind, RelationSchema, TypeId};
use crate::error::{create_file, open_file, Error, Result};

/// A node addressed by type and dense local id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeRef {
    pub ty: TypeId,
    pub id: u32,
}

impl NodeRef {
    pub fn new(ty: TypeId, id: u32) -> Self {
        Self { ty, id }
    }
}

/// Compressed adjacency rows, neighbors sorted ascending within each row.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Csr {
    offsets: Vec<usize>,
    targets: Vec<u32>,
    weights: Vec<f64>,
}

impl Csr {
    pub(crate) fn from_sorted(n_rows: usize, edges: &[(u32, u32, f64)]) -> Self {
        let mut offsets = vec![0usize; n_rows + 1];
        for &(r, _, _) in edges {
            offsets[r as usize + 1] += 1;
        }
        for i in 0..n_rows {
            offsets[i + 1] += offsets[i];
        }
        Self {
            offsets,
            targets: edges.iter().map(|e| e.1).collect(),
            weights: edges.iter().map(|e| e.2).collect(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.offsets[r], self.offsets[r + 1]);
        (&self.targets[a..b], &self.weights[a..b])
    }

    pub fn degree(&self, r: usize) -> usize {
        self.offsets[r + 1] - self.offsets[r]
    }

    pub fn nnz(&self) -> usize {
        self.targets.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RelationEdges {
    /// rows: source local ids
    out: Csr,
    /// rows: destination local ids
    inc: Csr,
}

/// Finalized heterogeneous graph. Immutable; all reads are `&self`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeteroGraph {
    schema: GraphSchema,
    ids: IdDictionary,
    edges: Vec<RelationEdges>,
}

/// Accumulates edges before finalization. Duplicate `(relation, src, dst)`
/// triples are merged by weight summation.
#[derive(Clone, Debug)]
pub struct GraphBuilder {
    schema: GraphSchema,
    ids: IdDictionary,
    edges: Vec<BTreeMap<(u32, u32), f64>>,
}

impl GraphBuilder {
    pub fn new(schema: GraphSchema) -> Self {
        let ids = IdDictionary::new(schema.node_types.len());
        Self::with_ids(schema, ids)
    }

    /// Starts from an existing dictionary so local ids stay stable across files.
    pub fn with_ids(mut schema: GraphSchema, ids: IdDictionary) -> Self {
        schema.finalize().expect("finalizing a valid schema cannot fail");
        let edges = vec![BTreeMap::new(); schema.relations.len()];
        Self { schema, ids, edges }
    }

    pub fn schema(&self) -> &GraphSchema {
        &self.schema
    }

    pub fn add_node(&mut self, ty: TypeId, external: &str) -> u32 {
        self.ids.get_or_insert(ty, external)
    }

    pub fn add_edge(&mut self, rel: RelationId, src: &str, dst: &str, weight: f64) -> Result<()> {
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(Error::validation(format!("edge weight must be finite and >= 0, got {weight}")));
        }
        let r = &self.schema.relations[rel];
        if r.kind == RelationKind::SelfLoop {
            return Err(Error::validation(format!(
                "self-loop relation {:?} is maintained automatically",
                r.name
            )));
        }
        let (st, dt) = (r.src_type, r.dst_type);
        let s = self.ids.get_or_insert(st, src);
        let d = self.ids.get_or_insert(dt, dst);
        self.add_local_edge(rel, s, d, weight);
        Ok(())
    }

    pub(crate) fn add_local_edge(&mut self, rel: RelationId, src: u32, dst: u32, weight: f64) {
        *self.edges[rel].entry((src, dst)).or_insert(0.0) += weight;
    }

    pub fn finalize(self) -> HeteroGraph {
        let Self {
            schema,
            ids,
            mut edges,
        } = self;
        for t in 0..schema.node_types.len() {
            let sl = schema.self_loop(t).expect("finalized schema has self-loops");
            edges[sl] = (0..ids.len(t) as u32).map(|i| ((i, i), 1.0)).collect();
        }
        let edges = schema
            .relations
            .iter()
            .zip(edges)
            .map(|(r, map)| {
                let fwd: Vec<(u32, u32, f64)> = map.into_iter().map(|((s, d), w)| (s, d, w)).collect();
                let mut rev: Vec<(u32, u32, f64)> = fwd.iter().map(|&(s, d, w)| (d, s, w)).collect();
                rev.sort_by_key(|e| (e.0, e.1));
                RelationEdges {
                    out: Csr::from_sorted(ids.len(r.src_type), &fwd),
                    inc: Csr::from_sorted(ids.len(r.dst_type), &rev),
                }
            })
            .collect();
        HeteroGraph { schema, ids, edges }
    }
}

/// Reads the TSV edge format `relation<TAB>src<TAB>dst<TAB>weight` into a
/// finalized graph. `ids` pre-assigns local ids; unseen ids are appended.
pub fn ingest_reader<R: BufRead>(
    reader: R,
    schema: &GraphSchema,
    ids: Option<IdDictionary>,
) -> Result<HeteroGraph> {
    let ids = ids.unwrap_or_else(|| IdDictionary::new(schema.node_types.len()));
    if ids.n_types() != schema.node_types.len() {
        return Err(Error::validation("id dictionary does not match schema node types"));
    }
    let mut builder = GraphBuilder::with_ids(schema.clone(), ids);
    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [rel, src, dst, weight] = fields[..] else {
            return Err(Error::parse(
                Some(lineno),
                format!("expected 4 tab-separated fields, got {}", fields.len()),
            ));
        };
        let rel_id = builder
            .schema()
            .relation_id(rel)
            .ok_or_else(|| Error::schema(Some(lineno), format!("unknown relation {rel:?}")))?;
        let weight: f64 = weight
            .parse()
            .map_err(|_| Error::parse(Some(lineno), format!("bad weight {weight:?}")))?;
        if !weight.is_finite() {
            return Err(Error::parse(Some(lineno), format!("non-finite weight {weight}")));
        }
        if weight < 0.0 {
            return Err(Error::validation(format!("line {lineno}: negative weight {weight}")));
        }
        if builder.schema().relations[rel_id].kind == RelationKind::SelfLoop {
            return Err(Error::schema(
                Some(lineno),
                format!("self-loop relation {rel:?} cannot be listed explicitly"),
            ));
        }
        if src.is_empty() || dst.is_empty() {
            return Err(Error::parse(Some(lineno), "empty node id"));
        }
        builder.add_edge(rel_id, src, dst, weight)?;
    }
    Ok(builder.finalize())
}

pub fn ingest_edges(path: &Path, schema: &GraphSchema, ids: Option<IdDictionary>) -> Result<HeteroGraph> {
    ingest_reader(BufReader::new(open_file(path)?), schema, ids)
}

impl HeteroGraph {
    pub fn schema(&self) -> &GraphSchema {
        &self.schema
    }

    pub fn ids(&self) -> &IdDictionary {
        &self.ids
    }

    pub fn fingerprint(&self) -> [u8; 32] {
        self.schema.fingerprint()
    }

    pub fn n_types(&self) -> usize {
        self.schema.node_types.len()
    }

    pub fn node_count(&self, t: TypeId) -> usize {
        self.ids.len(t)
    }

    pub fn total_nodes(&self) -> usize {
        (0..self.n_types()).map(|t| self.node_count(t)).sum()
    }

    pub fn relation(&self, r: RelationId) -> &RelationSchema {
        &self.schema.relations[r]
    }

    pub fn relations(&self) -> &[RelationSchema] {
        &self.schema.relations
    }

    pub fn edge_count(&self, r: RelationId) -> usize {
        self.edges[r].out.nnz()
    }

    /// Outgoing adjacency: rows are source ids.
    pub fn out_csr(&self, r: RelationId) -> &Csr {
        &self.edges[r].out
    }

    /// Incoming adjacency: rows are destination ids.
    pub fn in_csr(&self, r: RelationId) -> &Csr {
        &self.edges[r].inc
    }

    fn check_rel(&self, r: RelationId) -> Result<&RelationSchema> {
        self.schema
            .relations
            .get(r)
            .ok_or_else(|| Error::NotFound(format!("relation id {r}")))
    }

    /// Out-neighbors of a source-type node under `r`, ascending by id.
    pub fn neighbors(&self, node: NodeRef, r: RelationId) -> Result<Vec<(u32, f64)>> {
        let rel = self.check_rel(r)?;
        if node.ty != rel.src_type {
            return Err(Error::validation(format!(
                "node type {:?} is not the source type of relation {:?}",
                self.schema.node_types.get(node.ty).map(|t| t.name.as_str()),
                rel.name
            )));
        }
        self.row(&self.edges[r].out, node)
    }

    /// In-neighbors of a destination-type node under `r`, ascending by id.
    pub fn in_neighbors(&self, node: NodeRef, r: RelationId) -> Result<Vec<(u32, f64)>> {
        let rel = self.check_rel(r)?;
        if node.ty != rel.dst_type {
            return Err(Error::validation(format!(
                "node type {:?} is not the destination type of relation {:?}",
                self.schema.node_types.get(node.ty).map(|t| t.name.as_str()),
                rel.name
            )));
        }
        self.row(&self.edges[r].inc, node)
    }

    fn row(&self, csr: &Csr, node: NodeRef) -> Result<Vec<(u32, f64)>> {
        if node.id as usize >= csr.n_rows() {
            return Err(Error::NotFound(format!("node {} of type {}", node.id, node.ty)));
        }
        let (t, w) = csr.row(node.id as usize);
        Ok(t.iter().copied().zip(w.iter().copied()).collect())
    }

    /// All edges of `r` as `(src, dst, weight)`, sorted by `(src, dst)`.
    pub fn edges(&self, r: RelationId) -> Vec<(u32, u32, f64)> {
        let csr = &self.edges[r].out;
        (0..csr.n_rows())
            .flat_map(|s| {
                let (t, w) = csr.row(s);
                t.iter().zip(w).map(move |(&d, &w)| (s as u32, d, w))
            })
            .collect()
    }

    /// Same graph plus one new relation populated from local-id edges.
    pub fn with_relation(
        &self,
        name: &str,
        src: TypeId,
        dst: TypeId,
        kind: RelationKind,
        edges: &[(u32, u32, f64)],
    ) -> Result<HeteroGraph> {
        let mut schema = self.schema.clone();
        let rel = schema.add_relation(name, src, dst, kind)?;
        let mut builder = GraphBuilder {
            schema,
            ids: self.ids.clone(),
            edges: Vec::new(),
        };
        builder.edges = self
            .schema
            .relations
            .iter()
            .map(|r| self.edges(r.relation_id).into_iter().map(|(s, d, w)| ((s, d), w)).collect())
            .collect();
        builder.edges.push(BTreeMap::new());
        for &(s, d, w) in edges {
            if s as usize >= self.node_count(src) || d as usize >= self.node_count(dst) {
                return Err(Error::validation(format!("edge ({s}, {d}) outside node range")));
            }
            builder.add_local_edge(rel, s, d, w);
        }
        Ok(builder.finalize())
    }

    /// Writes the edges of `r` in the TSV ingestion format.
    pub fn write_relation_tsv<W: Write>(&self, r: RelationId, w: &mut W) -> Result<()> {
        let rel = self.relation(r);
        for (s, d, wt) in self.edges(r) {
            writeln!(
                w,
                "{}\t{}\t{}\t{}",
                rel.name,
                self.ids.external(rel.src_type, s),
                self.ids.external(rel.dst_type, d),
                wt
            )?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(create_file(path)?);
        w.write_all(b"RGG1")?;
        bincode::serialize_into(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(open_file(path)?);
        let mut magic = [0u8; 4];
        std::io::Read::read_exact(&mut r, &mut magic)?;
        if &magic != b"RGG1" {
            return Err(Error::format("graph", "bad magic"));
        }
        let g: HeteroGraph = bincode::deserialize_from(r)?;
        g.validate()?;
        Ok(g)
    }

    /// Structural invariants of a finalized graph.
    pub fn validate(&self) -> Result<()> {
        if self.edges.len() != self.schema.relations.len() {
            return Err(Error::validation("relation count mismatch"));
        }
        for rel in &self.schema.relations {
            let e = &self.edges[rel.relation_id];
            if e.out.n_rows() != self.node_count(rel.src_type) || e.inc.n_rows() != self.node_count(rel.dst_type) {
                return Err(Error::validation(format!("relation {:?}: row count mismatch", rel.name)));
            }
            let n_dst = self.node_count(rel.dst_type) as u32;
            for s in 0..e.out.n_rows() {
                let (t, w) = e.out.row(s);
                if t.windows(2).any(|p| p[0] >= p[1]) || t.iter().any(|&d| d >= n_dst) {
                    return Err(Error::validation(format!("relation {:?}: bad adjacency", rel.name)));
                }
                if w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                    return Err(Error::validation(format!("relation {:?}: bad weight", rel.name)));
                }
                if rel.kind == RelationKind::SelfLoop && (t != [s as u32] || w != [1.0]) {
                    return Err(Error::validation(format!("self-loop {:?} broken at {s}", rel.name)));
                }
            }
        }
        Ok(())
    }
}
