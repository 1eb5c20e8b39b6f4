//! Checkpoint container: `RGC1`, u32 header length, JSON header
//! (config, schema fingerprint, tensor manifest), then every tensor in
//! `RGT1` form in manifest order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::{ModelLayout, ModelParams, ParamStore};
use crate::error::{create_file, open_file, Error, Result};
use crate::graph::GraphSchema;
use crate::numeric::{read_u32, Tensor};

const MAGIC: &[u8; 4] = b"RGC1";

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    fingerprint: String,
    manifest: Vec<String>,
}

pub fn write_checkpoint<W: Write>(params: &ModelParams, w: &mut W) -> Result<()> {
    let header = Header {
        config: params.layout.config.clone(),
        fingerprint: hex::encode(params.fingerprint),
        manifest: params.store.names().to_vec(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for t in params.store.tensors() {
        t.write_to(w)?;
    }
    Ok(())
}

pub fn checkpoint_bytes(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::new();
    write_checkpoint(params, &mut out).expect("writing to a Vec cannot fail");
    out
}

/// Reads a checkpoint and checks it against `schema`.
pub fn read_checkpoint<R: Read>(r: &mut R, schema: &GraphSchema) -> Result<ModelParams> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::format("checkpoint", "bad magic"));
    }
    let len = read_u32(r)? as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    let fingerprint: [u8; 32] = hex::decode(&header.fingerprint)
        .ok()
        .and_then(|v| v.try_into().ok())
        .ok_or_else(|| Error::format("checkpoint", "bad fingerprint"))?;
    if fingerprint != schema.fingerprint() {
        return Err(Error::validation("schema fingerprint mismatch between checkpoint and graph"));
    }
    let layout = ModelLayout::new(schema, &header.config)?;
    let specs = layout.tensor_specs();
    if specs.len() != header.manifest.len() || specs.iter().zip(&header.manifest).any(|(s, n)| &s.0 != n) {
        return Err(Error::format("checkpoint", "manifest does not match model layout"));
    }
    let mut tensors = Vec::with_capacity(specs.len());
    for (name, rows, cols, _) in &specs {
        let t = Tensor::read_from(r)?;
        if t.shape() != (*rows, *cols) {
            return Err(Error::format("checkpoint", format!("tensor {name:?} has shape {:?}", t.shape())));
        }
        tensors.push(t);
    }
    Ok(ModelParams {
        layout,
        fingerprint,
        store: ParamStore::from_parts(header.manifest, tensors)?,
    })
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(create_file(path)?);
    write_checkpoint(params, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, schema: &GraphSchema) -> Result<ModelParams> {
    read_checkpoint(&mut std::io::BufReader::new(open_file(path)?), schema)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use crate::rng::stream;

    fn schema(extra: &str) -> GraphSchema {
        GraphSchema::from_json(&format!(
            r#"{{"node_types": [{{"name": "u", "feature_blocks": [{{"name": "a", "dim": 2}}]}}],
               "relations": [{{"name": "r{extra}", "src": "u", "dst": "u", "kind": "engagement"}}]}}"#
        ))
        .unwrap()
    }

    #[test]
    fn round_trip_and_fingerprint_check() {
        let s = schema("");
        let p = init_params(&s, &ModelConfig::default(), &mut stream(1, "init")).unwrap();
        let bytes = checkpoint_bytes(&p);
        let back = read_checkpoint(&mut bytes.as_slice(), &s).unwrap();
        assert_eq!(back, p);
        assert_eq!(checkpoint_bytes(&back), bytes);
        let err = read_checkpoint(&mut bytes.as_slice(), &schema("x")).unwrap_err();
        assert!(err.to_string().contains("fingerprint"), "{err}");
    }
}
