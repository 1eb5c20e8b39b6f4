use std::io::Write;

use crate::error::{Error, Result};
use crate::graph::{co_engagement, HeteroGraph, RelationId, Side};

/// Homogeneous co-engagement graph over one endpoint type of a relation.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub node_type: String,
    pub via: RelationId,
    pub edges: Vec<(u32, u32, f64)>,
}

/// Same-type edges over `endpoint_type` through shared partners under `via`.
/// The endpoint may be either side of the relation.
pub fn project_subgraph(
    g: &HeteroGraph,
    endpoint_type: &str,
    via: &str,
    top_k: usize,
    min_weight: f64,
) -> Result<Projection> {
    let r = g.schema().require_relation(via)?;
    let t = g.schema().require_type(endpoint_type)?;
    let rel = g.relation(r);
    let side = if rel.src_type == t {
        Side::Source
    } else if rel.dst_type == t {
        Side::Destination
    } else {
        return Err(Error::validation(format!(
            "relation {via:?} does not touch node type {endpoint_type:?}"
        )));
    };
    Ok(Projection {
        node_type: endpoint_type.to_string(),
        via: r,
        edges: co_engagement(g, r, side, top_k, min_weight)?,
    })
}

impl Projection {
    /// Edge-file TSV (`relation<TAB>src<TAB>dst<TAB>weight`) with external ids.
    pub fn write_tsv<W: Write>(&self, g: &HeteroGraph, relation_name: &str, w: &mut W) -> Result<()> {
        let t = g.schema().require_type(&self.node_type)?;
        for &(u, v, wt) in &self.edges {
            writeln!(w, "{relation_name}\t{}\t{}\t{wt}", g.ids().external(t, u), g.ids().external(t, v))?;
        }
        Ok(())
    }
}
