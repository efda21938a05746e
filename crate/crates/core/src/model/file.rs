use sha2::{Digest, Sha256};

use super::{LevyTripletModel, ModelSpec};
use crate::error::{Error, Result};

/// Parses a TOML model definition.
pub fn parse_model(text: &str) -> Result<ModelSpec> {
    toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

pub fn serialize_model(spec: &ModelSpec) -> String {
    toml::to_string(spec).expect("model spec is always representable in TOML")
}

/// Loads `builtin:<name>` or a TOML model file.
pub fn load_model(source: &str) -> Result<LevyTripletModel> {
    let spec = match source.strip_prefix("builtin:") {
        Some(name) => super::builtin::by_name(name).ok_or_else(|| {
            let known: Vec<String> = super::builtin::all().into_iter().map(|s| s.name).collect();
            Error::Parse(format!("unknown builtin model `{name}` (known: {})", known.join(", ")))
        })?,
        None => parse_model(&std::fs::read_to_string(source)?)?,
    };
    LevyTripletModel::new(spec)
}

/// SHA-256 of the canonical serialization, hex encoded.
pub fn model_hash(model: &LevyTripletModel) -> String {
    let digest = Sha256::digest(serialize_model(model.spec()).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
