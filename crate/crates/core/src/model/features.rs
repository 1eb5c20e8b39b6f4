use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{create_file, open_file, Error, Result};
use crate::graph::{GraphSchema, HeteroGraph, TypeId};
use crate::numeric::Tensor;

/// Per node type, one `N_t × dim_j` matrix per feature block, rows by local id.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStore {
    blocks: Vec<Vec<Tensor>>,
}

impl FeatureStore {
    /// Validates shapes against the graph's schema and node counts.
    pub fn new(g: &HeteroGraph, blocks: Vec<Vec<Tensor>>) -> Result<Self> {
        let schema = g.schema();
        if blocks.len() != schema.node_types.len() {
            return Err(Error::validation("feature store must cover every node type"));
        }
        for (t, tb) in blocks.iter().enumerate() {
            let ty = &schema.node_types[t];
            for (j, block) in ty.blocks.iter().enumerate() {
                let Some(m) = tb.get(j) else {
                    return Err(Error::validation(format!(
                        "missing feature block ({}, {})",
                        ty.name, block.name
                    )));
                };
                if m.shape() != (g.node_count(t), block.dim) {
                    return Err(Error::validation(format!(
                        "feature block ({}, {}) has shape {:?}, expected {:?}",
                        ty.name,
                        block.name,
                        m.shape(),
                        (g.node_count(t), block.dim)
                    )));
                }
            }
            if tb.len() != ty.blocks.len() {
                return Err(Error::validation(format!("too many feature blocks for {}", ty.name)));
            }
        }
        Ok(Self { blocks })
    }

    pub fn block(&self, t: TypeId, j: usize) -> &Tensor {
        &self.blocks[t][j]
    }

    pub fn n_blocks(&self, t: TypeId) -> usize {
        self.blocks[t].len()
    }

    /// TSV: `type_name<TAB>block_name<TAB>external_id<TAB>v1,v2,...`.
    /// Every node of the graph needs a row for every block of its type.
    pub fn read_tsv<R: BufRead>(g: &HeteroGraph, r: R) -> Result<Self> {
        let schema = g.schema();
        let mut rows: Vec<Vec<Vec<Option<Vec<f64>>>>> = schema
            .node_types
            .iter()
            .map(|t| vec![vec![None; g.node_count(t.type_id)]; t.blocks.len()])
            .collect();
        for (lineno, line) in r.lines().enumerate() {
            let lineno = lineno + 1;
            let line = line?;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [tname, bname, ext, values] = fields[..] else {
                return Err(Error::parse(Some(lineno), "expected 4 tab-separated fields"));
            };
            let t = schema
                .type_id(tname)
                .ok_or_else(|| Error::schema(Some(lineno), format!("unknown node type {tname:?}")))?;
            let ty = &schema.node_types[t];
            let j = ty.blocks.iter().position(|b| b.name == bname).ok_or_else(|| {
                Error::schema(Some(lineno), format!("unknown feature block {bname:?} for {tname:?}"))
            })?;
            // rows for nodes absent from the graph are ignored
            let Some(id) = g.ids().get(t, ext) else { continue };
            let vals = values
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|_| Error::parse(Some(lineno), "bad feature value"))?;
            if vals.len() != ty.blocks[j].dim || vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::parse(
                    Some(lineno),
                    format!("expected {} finite values, got {}", ty.blocks[j].dim, vals.len()),
                ));
            }
            rows[t][j][id as usize] = Some(vals);
        }
        let mut blocks = Vec::with_capacity(rows.len());
        for (t, tb) in rows.into_iter().enumerate() {
            let ty = &schema.node_types[t];
            let mut mats = Vec::with_capacity(tb.len());
            for (j, br) in tb.into_iter().enumerate() {
                let mut data = Vec::with_capacity(br.len() * ty.blocks[j].dim);
                for (id, row) in br.into_iter().enumerate() {
                    let row = row.ok_or_else(|| {
                        Error::validation(format!(
                            "missing feature block ({}, {}) for node {:?}",
                            ty.name,
                            ty.blocks[j].name,
                            g.ids().external(t, id as u32)
                        ))
                    })?;
                    data.extend(row);
                }
                mats.push(Tensor::from_vec(g.node_count(t), ty.blocks[j].dim, data)?);
            }
            blocks.push(mats);
        }
        Self::new(g, blocks)
    }

    pub fn load(g: &HeteroGraph, path: &Path) -> Result<Self> {
        Self::read_tsv(g, BufReader::new(open_file(path)?))
    }

    pub fn write_tsv<W: Write>(&self, g: &HeteroGraph, w: &mut W) -> Result<()> {
        write_feature_rows(g.schema(), |t, i| g.ids().external(t, i as u32).to_string(), &self.blocks, w)
    }

    pub fn save(&self, g: &HeteroGraph, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(create_file(path)?);
        self.write_tsv(g, &mut w)?;
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn write_feature_rows<W: Write>(
    schema: &GraphSchema,
    external: impl Fn(TypeId, usize) -> String,
    blocks: &[Vec<Tensor>],
    w: &mut W,
) -> Result<()> {
    for (t, tb) in blocks.iter().enumerate() {
        let ty = &schema.node_types[t];
        for (j, m) in tb.iter().enumerate() {
            for i in 0..m.rows() {
                let vals: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
                writeln!(w, "{}\t{}\t{}\t{}", ty.name, ty.blocks[j].name, external(t, i), vals.join(","))?;
            }
        }
    }
    Ok(())
}
