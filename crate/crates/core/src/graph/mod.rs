//! Typed heterogeneous graph: schema, ingestion, co-engagement edges and
//! positive-pair sampling.

mod ids;
mod sampling;
mod schema;
mod semantic;
mod store;

pub use ids::IdDictionary;
pub use sampling::{sample_edge_batch, EdgeBatch, EdgeSampler};
pub use schema::{FeatureBlock, GraphSchema, NodeTypeSchema, RelationId, RelationKind, RelationSchema, TypeId};
pub use semantic::{co_engagement, derive_semantic_edges, projected_type, Side};
pub use store::{ingest_edges, ingest_reader, Csr, GraphBuilder, HeteroGraph, NodeRef};
