use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Family, ModelSpec, TrainedGenerator, TrainingLog, TrainingPolicy};
use crate::error::{Error, Result};
use crate::nn::ParamStore;

const FORMAT_TAG: &str = "pilotgen-model";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct EncodedArray {
    rows: usize,
    cols: usize,
    /// Little-endian f64 bytes, base64.
    data: String,
}

impl EncodedArray {
    fn encode(a: &Array2<f64>) -> Self {
        let bytes: Vec<u8> = a.iter().flat_map(|v| v.to_le_bytes()).collect();
        Self {
            rows: a.nrows(),
            cols: a.ncols(),
            data: STANDARD.encode(bytes),
        }
    }

    fn decode(&self, name: &str) -> Result<Array2<f64>> {
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| Error::Corrupt(format!("array {name:?}: {e}")))?;
        if bytes.len() != self.rows * self.cols * 8 {
            return Err(Error::Corrupt(format!("array {name:?} has the wrong length")));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Array2::from_shape_vec((self.rows, self.cols), values)
            .map_err(|e| Error::Corrupt(format!("array {name:?}: {e}")))
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    family: String,
    spec: ModelSpec,
    policy: TrainingPolicy,
    marker_ids: Vec<String>,
    group_levels: Option<Vec<String>>,
    data_fingerprint: String,
    params: BTreeMap<String, EncodedArray>,
    buffers: BTreeMap<String, EncodedArray>,
    training_log: TrainingLog,
}

/// Writes `g` as a self-describing JSON document. Weights are stored as raw
/// little-endian bytes so a reload reproduces them bit for bit.
pub fn save_generator(g: &TrainedGenerator, path: &Path) -> Result<()> {
    let file = ModelFile {
        format: FORMAT_TAG.into(),
        version: FORMAT_VERSION,
        family: g.family().name().into(),
        spec: g.spec.clone(),
        policy: g.policy,
        marker_ids: g.marker_ids.clone(),
        group_levels: g.group_levels.clone(),
        data_fingerprint: g.data_fingerprint.clone(),
        params: g
            .params
            .params()
            .map(|(k, v)| (k.clone(), EncodedArray::encode(v)))
            .collect(),
        buffers: g
            .params
            .buffers()
            .map(|(k, v)| (k.clone(), EncodedArray::encode(v)))
            .collect(),
        training_log: g.training_log.clone(),
    };
    fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn load_generator(path: &Path) -> Result<TrainedGenerator> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Corrupt(e.to_string()))?;
    if value.get("format").and_then(|v| v.as_str()) != Some(FORMAT_TAG) {
        return Err(Error::Corrupt("not a model file".into()));
    }
    let version = value.get("version").and_then(|v| v.as_u64());
    if version != Some(u64::from(FORMAT_VERSION)) {
        return Err(Error::Version(format!(
            "format version {version:?}, expected {FORMAT_VERSION}"
        )));
    }
    let family_tag = value.get("family").and_then(|v| v.as_str()).unwrap_or("");
    let family: Family = family_tag
        .parse()
        .map_err(|_| Error::Version(format!("unknown model family {family_tag:?}")))?;
    let file: ModelFile =
        serde_json::from_value(value).map_err(|e| Error::Corrupt(e.to_string()))?;
    if file.spec.family() != family {
        return Err(Error::Corrupt(format!(
            "family tag {family} does not match stored settings"
        )));
    }
    let mut params = ParamStore::new();
    for (k, v) in &file.params {
        params.insert(k.clone(), v.decode(k)?);
    }
    for (k, v) in &file.buffers {
        params.insert_buffer(k.clone(), v.decode(k)?);
    }
    Ok(TrainedGenerator {
        spec: file.spec,
        policy: file.policy,
        marker_ids: file.marker_ids,
        group_levels: file.group_levels,
        params,
        training_log: file.training_log,
        data_fingerprint: file.data_fingerprint,
    })
}
