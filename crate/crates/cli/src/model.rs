//! Self-contained model files.
//!
//! The first line is a JSON header carrying the format version and the
//! SHA-256 of everything after it; the rest is the JSON payload.

use std::path::Path;

use covrf::{Dataset, Forest, ForestParams, Tree, TuneResult};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::failure::{Failure, Kind};
use crate::output::write_atomic;

pub const FORMAT: &str = "covrf-model";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    format_version: u32,
    sha256: String,
}

#[derive(Serialize, Deserialize)]
struct Payload {
    params: ForestParams,
    tuning: Option<TuneResult>,
    data: Dataset,
    trees: Vec<Tree>,
}

pub struct Model {
    pub forest: Forest,
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn encode(forest: &Forest, tuning: Option<&TuneResult>) -> Result<Vec<u8>, Failure> {
    let payload = Payload {
        params: forest.params().clone(),
        tuning: tuning.cloned(),
        data: forest.data().clone(),
        trees: forest.trees().to_vec(),
    };
    let body = serde_json::to_vec(&payload)?;
    let header = Header {
        format: FORMAT.into(),
        format_version: FORMAT_VERSION,
        sha256: digest(&body),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    out.extend_from_slice(&body);
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Model, Failure> {
    let bad = |m: String| Failure::new(Kind::Model, m);
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("model file has no header line".into()))?;
    let header: Header = serde_json::from_slice(&bytes[..split])
        .map_err(|e| bad(format!("unreadable model header: {e}")))?;
    if header.format != FORMAT {
        return Err(bad(format!(
            "not a model file (format '{}')",
            header.format
        )));
    }
    if header.format_version != FORMAT_VERSION {
        return Err(bad(format!(
            "unsupported model format version {} (this build reads {FORMAT_VERSION})",
            header.format_version
        )));
    }
    let body = &bytes[split + 1..];
    if digest(body) != header.sha256 {
        return Err(bad("model checksum mismatch; the file is corrupt".into()));
    }
    let p: Payload =
        serde_json::from_slice(body).map_err(|e| bad(format!("unreadable model payload: {e}")))?;
    let forest = Forest::from_parts(p.params, p.trees, p.data)
        .map_err(|e| bad(format!("inconsistent model: {e}")))?;
    Ok(Model { forest })
}

pub fn save(path: &Path, forest: &Forest, tuning: Option<&TuneResult>) -> Result<(), Failure> {
    write_atomic(path, &encode(forest, tuning)?)
}

pub fn load(path: &Path) -> Result<Model, Failure> {
    let bytes = std::fs::read(path)
        .map_err(|e| Failure::new(Kind::Io, format!("{}: {e}", path.display())))?;
    decode(&bytes)
}
