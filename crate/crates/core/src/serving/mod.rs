//! Serving artifacts: embedding tables, exact retrieval, clustering,
//! homogeneous projections and token export.

mod cluster;
mod knn;
mod subgraph;
mod table;
mod tokens;

pub use cluster::{cluster, ClusterModel};
pub use knn::{knn, knn_all, knn_external};
pub(crate) use knn::{rank_order, top_k};
pub use subgraph::{project_subgraph, Projection};
pub(crate) use table::dot;
pub use table::{export_all, export_embeddings, EmbeddingTable};
pub use tokens::{
    export_graph_tokens, external_id_hash, load_graph_tokens, read_tokens, write_tokens, TokenFile, TokenRecord,
};
