use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{open_file, Error, Result};

pub type TypeId = usize;
pub type RelationId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    Engagement,
    Semantic,
    SelfLoop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureBlock {
    pub name: String,
    pub dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeTypeSchema {
    pub type_id: TypeId,
    pub name: String,
    pub blocks: Vec<FeatureBlock>,
}

impl NodeTypeSchema {
    pub fn n_features(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_dims(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.dim).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationSchema {
    pub relation_id: RelationId,
    pub name: String,
    pub src_type: TypeId,
    pub dst_type: TypeId,
    pub kind: RelationKind,
}

/// Node and relation schemas. After [`GraphSchema::finalize`] every node
/// type owns exactly one self-loop relation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSchema {
    pub node_types: Vec<NodeTypeSchema>,
    pub relations: Vec<RelationSchema>,
}

#[derive(Deserialize)]
struct SchemaFile {
    node_types: Vec<NodeTypeEntry>,
    #[serde(default)]
    relations: Vec<RelationEntry>,
}

#[derive(Deserialize)]
struct NodeTypeEntry {
    name: String,
    feature_blocks: Vec<FeatureBlock>,
}

#[derive(Deserialize)]
struct RelationEntry {
    name: String,
    src: String,
    dst: String,
    kind: RelationKind,
}

impl GraphSchema {
    /// Parses the JSON schema format:
    /// `{"node_types": [{"name", "feature_blocks": [{"name", "dim"}]}],
    ///   "relations": [{"name", "src", "dst", "kind"}]}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: SchemaFile = serde_json::from_str(text)?;
        let mut schema = GraphSchema {
            node_types: Vec::new(),
            relations: Vec::new(),
        };
        for entry in file.node_types {
            schema.add_node_type(&entry.name, entry.feature_blocks)?;
        }
        for entry in file.relations {
            let src = schema.require_type(&entry.src)?;
            let dst = schema.require_type(&entry.dst)?;
            schema.add_relation(&entry.name, src, dst, entry.kind)?;
        }
        schema.finalize()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut text = String::new();
        std::io::Read::read_to_string(&mut open_file(path)?, &mut text)?;
        Self::from_json(&text)
    }

    /// Serializes back to the JSON schema format, self-loops included.
    pub fn to_json(&self) -> String {
        let types: Vec<_> = self
            .node_types
            .iter()
            .map(|t| serde_json::json!({"name": t.name, "feature_blocks": t.blocks}))
            .collect();
        let rels: Vec<_> = self
            .relations
            .iter()
            .map(|r| {
                serde_json::json!({
                    "name": r.name,
                    "src": self.node_types[r.src_type].name,
                    "dst": self.node_types[r.dst_type].name,
                    "kind": r.kind,
                })
            })
            .collect();
        serde_json::to_string_pretty(&serde_json::json!({"node_types": types, "relations": rels}))
            .expect("schema is always serializable")
    }

    pub fn add_node_type(&mut self, name: &str, blocks: Vec<FeatureBlock>) -> Result<TypeId> {
        if self.type_id(name).is_some() {
            return Err(Error::schema(None, format!("duplicate node type {name:?}")));
        }
        if blocks.is_empty() {
            return Err(Error::schema(None, format!("node type {name:?} has no feature blocks")));
        }
        if let Some(b) = blocks.iter().find(|b| b.dim == 0) {
            return Err(Error::schema(
                None,
                format!("feature block {:?} of {name:?} has dim 0", b.name),
            ));
        }
        let type_id = self.node_types.len();
        self.node_types.push(NodeTypeSchema {
            type_id,
            name: name.to_string(),
            blocks,
        });
        Ok(type_id)
    }

    pub fn add_relation(
        &mut self,
        name: &str,
        src: TypeId,
        dst: TypeId,
        kind: RelationKind,
    ) -> Result<RelationId> {
        if self.relation_id(name).is_some() {
            return Err(Error::schema(None, format!("duplicate relation {name:?}")));
        }
        if src >= self.node_types.len() || dst >= self.node_types.len() {
            return Err(Error::schema(None, format!("relation {name:?} references unknown type")));
        }
        if matches!(kind, RelationKind::Semantic | RelationKind::SelfLoop) && src != dst {
            return Err(Error::schema(
                None,
                format!("{kind:?} relation {name:?} must connect a type to itself"),
            ));
        }
        if kind == RelationKind::SelfLoop && self.self_loop(src).is_some() {
            return Err(Error::schema(
                None,
                format!("node type {:?} already has a self-loop", self.node_types[src].name),
            ));
        }
        let relation_id = self.relations.len();
        self.relations.push(RelationSchema {
            relation_id,
            name: name.to_string(),
            src_type: src,
            dst_type: dst,
            kind,
        });
        Ok(relation_id)
    }

    /// Injects a `self:<type>` relation for every type lacking one.
    pub fn finalize(&mut self) -> Result<()> {
        for t in 0..self.node_types.len() {
            if self.self_loop(t).is_none() {
                let name = format!("self:{}", self.node_types[t].name);
                self.add_relation(&name, t, t, RelationKind::SelfLoop)?;
            }
        }
        let names: HashSet<&str> = self.relations.iter().map(|r| r.name.as_str()).collect();
        debug_assert_eq!(names.len(), self.relations.len());
        Ok(())
    }

    pub fn type_id(&self, name: &str) -> Option<TypeId> {
        self.node_types.iter().position(|t| t.name == name)
    }

    pub fn require_type(&self, name: &str) -> Result<TypeId> {
        self.type_id(name)
            .ok_or_else(|| Error::schema(None, format!("unknown node type {name:?}")))
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relations.iter().position(|r| r.name == name)
    }

    pub fn require_relation(&self, name: &str) -> Result<RelationId> {
        self.relation_id(name)
            .ok_or_else(|| Error::schema(None, format!("unknown relation {name:?}")))
    }

    pub fn self_loop(&self, t: TypeId) -> Option<RelationId> {
        self.relations
            .iter()
            .position(|r| r.kind == RelationKind::SelfLoop && r.src_type == t)
    }

    /// SHA-256 over the canonical serialization of the schema.
    pub fn fingerprint(&self) -> [u8; 32] {
        let bytes = serde_json::to_vec(self).expect("schema is always serializable");
        Sha256::digest(&bytes).into()
    }
}
