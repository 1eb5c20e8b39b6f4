//! Run manifests: what ran, with which config and seed, over which inputs.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rankgraph::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Serialize)]
struct InputDigest {
    path: PathBuf,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    subcommand: &'a str,
    tool_version: &'a str,
    seed: Option<u64>,
    config: serde_json::Value,
    inputs: Vec<InputDigest>,
    outputs: Vec<PathBuf>,
    created_unix_secs: u64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes `<out>/<subcommand>.manifest.json`; call before any output.
pub fn write_manifest(
    out: &Path,
    subcommand: &str,
    seed: Option<u64>,
    config: &impl Serialize,
    inputs: &[&Path],
    outputs: &[PathBuf],
) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let manifest = RunManifest {
        subcommand,
        tool_version: env!("CARGO_PKG_VERSION"),
        seed,
        config: serde_json::to_value(config)?,
        inputs: inputs
            .iter()
            .map(|p| {
                Ok(InputDigest {
                    path: p.to_path_buf(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<Result<_>>()?,
        outputs: outputs.to_vec(),
        created_unix_secs: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
    };
    let path = out.join(format!("{subcommand}.manifest.json"));
    let mut f = std::fs::File::create(&path).map_err(|source| Error::File { path, source })?;
    writeln!(f, "{}", serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}
