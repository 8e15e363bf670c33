//! Versioned JSON artifacts.
//!
//! Every file is an envelope `{format, version, kind, producer, body}`. Floats
//! are written in shortest round-trip form, so save -> load -> save is
//! byte-identical.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use dexhand_core::factorized::ExternalModel;
use dexhand_core::hand::{HandConfig, Setting};
use dexhand_core::internal::{Dataset, ForwardModel, InverseModel};

use crate::error::{Error, Result};

pub const FORMAT: &str = "dexhand";
pub const FORMAT_VERSION: u32 = 1;

/// Build identifier written into every artifact.
pub fn producer() -> String {
    match option_env!("DEXHAND_BUILD") {
        Some(b) => format!("dexhand {} ({b})", env!("CARGO_PKG_VERSION")),
        None => format!("dexhand {}", env!("CARGO_PKG_VERSION")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Dataset,
    ForwardModel,
    InverseModel,
    ExternalModel,
    Result,
}

#[derive(Serialize)]
struct EnvelopeRef<'a, T> {
    format: &'a str,
    version: u32,
    kind: Kind,
    producer: String,
    body: &'a T,
}

#[derive(Deserialize)]
struct Header {
    format: String,
    version: u32,
    kind: Kind,
}

#[derive(Deserialize)]
struct Envelope<T> {
    body: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub hand: String,
    pub setting: Setting,
    pub seed: u64,
    pub data: Dataset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile<M> {
    pub hand: String,
    pub model: M,
}

pub fn to_json<T: Serialize>(kind: Kind, body: &T) -> Result<String> {
    let env = EnvelopeRef {
        format: FORMAT,
        version: FORMAT_VERSION,
        kind,
        producer: producer(),
        body,
    };
    let mut s = serde_json::to_string_pretty(&env).map_err(|e| Error::Config(format!("unserialisable artifact: {e}")))?;
    s.push('\n');
    Ok(s)
}

pub fn from_json<T: DeserializeOwned>(text: &str, kind: Kind, path: &Path) -> Result<T> {
    let corrupt = |reason: String| Error::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    let header: Header = serde_json::from_str(text).map_err(|e| corrupt(e.to_string()))?;
    if header.format != FORMAT {
        return Err(corrupt(format!("format '{}'", header.format)));
    }
    if header.version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: header.version,
            expected: FORMAT_VERSION,
        });
    }
    if header.kind != kind {
        return Err(corrupt(format!("holds a {:?}, expected a {kind:?}", header.kind)));
    }
    let env: Envelope<T> = serde_json::from_str(text).map_err(|e| corrupt(e.to_string()))?;
    Ok(env.body)
}

/// Writes through a temporary sibling and renames, so readers never see a
/// half-written file.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn save<T: Serialize>(path: &Path, kind: Kind, body: &T) -> Result<()> {
    write_atomic(path, &to_json(kind, body)?)
}

pub fn load<T: DeserializeOwned>(path: &Path, kind: Kind) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text, kind, path)
}

fn dims_match(what: &str, h: usize, k: usize, hand: &HandConfig) -> Result<()> {
    if h == hand.state_dim() && k == hand.action_dim() {
        return Ok(());
    }
    Err(Error::DimensionMismatch {
        artifact: what.into(),
        against: hand.name.clone(),
        found: format!("H = {h}, K = {k}"),
        expected: format!("H = {}, K = {}", hand.state_dim(), hand.action_dim()),
    })
}

pub fn load_forward(path: &Path, hand: &HandConfig) -> Result<ForwardModel> {
    let f: ModelFile<ForwardModel> = load(path, Kind::ForwardModel)?;
    dims_match(&format!("forward model for {}", f.hand), f.model.state_dim(), f.model.action_dim(), hand)?;
    Ok(f.model)
}

pub fn load_inverse(path: &Path, hand: &HandConfig) -> Result<InverseModel> {
    let f: ModelFile<InverseModel> = load(path, Kind::InverseModel)?;
    dims_match(&format!("inverse model for {}", f.hand), f.model.state_dim(), f.model.action_dim(), hand)?;
    Ok(f.model)
}

pub fn load_external(path: &Path, hand: &HandConfig) -> Result<ExternalModel> {
    let f: ModelFile<ExternalModel> = load(path, Kind::ExternalModel)?;
    dims_match(&format!("external model for {}", f.hand), f.model.state_dim(), hand.action_dim(), hand)?;
    Ok(f.model)
}

pub fn load_dataset(path: &Path, hand: &HandConfig) -> Result<DatasetFile> {
    let f: DatasetFile = load(path, Kind::Dataset)?;
    dims_match(&format!("dataset for {}", f.hand), f.data.state_dim, f.data.action_dim, hand)?;
    f.data.check_chaining()?;
    Ok(f)
}
