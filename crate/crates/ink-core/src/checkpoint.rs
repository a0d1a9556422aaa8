//! Checkpoint container: 8-byte magic `CVRNNCK1`, an 8-byte little-endian
//! manifest length, a UTF-8 JSON manifest, then the parameter buffers as
//! little-endian binary64 in manifest order. Both model kinds share the
//! container; the manifest's `model_kind` field tells them apart.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::Path;

use crate::error::{Error, Result};
use crate::prep::NormStats;
use crate::tensor::{Array, Real};

pub const MAGIC: &[u8; 8] = b"CVRNNCK1";
pub const GATE_ORDER: &str = "ifgo";

/// Progress counters stored for resumable training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainerState {
    pub epoch: usize,
    pub step: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset of this buffer within the data section.
    pub offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub model_kind: String,
    pub config: Value,
    pub alphabet: String,
    pub norm_stats: NormStats,
    /// Row order of the stacked LSTM gate matrices.
    pub gate_order: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trainer_state: Option<TrainerState>,
    pub params: Vec<ParamEntry>,
}

/// Write a checkpoint atomically.
pub fn save_checkpoint(
    path: &Path,
    model_kind: &str,
    config: Value,
    alphabet: &str,
    norm_stats: &NormStats,
    trainer_state: Option<TrainerState>,
    params: &[(String, &Array)],
) -> Result<()> {
    let mut entries = Vec::with_capacity(params.len());
    let mut offset = 0u64;
    for (name, array) in params {
        entries.push(ParamEntry {
            name: name.clone(),
            shape: array.shape().to_vec(),
            offset,
        });
        offset += (array.numel() * 8) as u64;
    }
    let manifest = Manifest {
        model_kind: model_kind.to_string(),
        config,
        alphabet: alphabet.to_string(),
        norm_stats: norm_stats.clone(),
        gate_order: GATE_ORDER.to_string(),
        trainer_state,
        params: entries,
    };
    let manifest_bytes = serde_json::to_vec(&manifest)?;

    let mut out = Vec::with_capacity(16 + manifest_bytes.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest_bytes);
    for (_, array) in params {
        for &v in array.data() {
            out.extend_from_slice(&(v as f64).to_le_bytes());
        }
    }
    crate::io::write_atomic(path, &out)
}

/// Read a checkpoint back: manifest plus named arrays in manifest order.
pub fn load_checkpoint(path: &Path) -> Result<(Manifest, IndexMap<String, Array>)> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::data(format!("cannot read {}: {e}", path.display())))?;
    if bytes.len() < 16 || &bytes[0..8] != MAGIC {
        return Err(Error::data(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let data_start = 16 + manifest_len;
    if bytes.len() < data_start {
        return Err(Error::data("checkpoint truncated inside manifest"));
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[16..data_start])
        .map_err(|e| Error::data(format!("checkpoint manifest: {e}")))?;
    if manifest.gate_order != GATE_ORDER {
        return Err(Error::data(format!(
            "unsupported gate order {:?}",
            manifest.gate_order
        )));
    }
    let data = &bytes[data_start..];
    let mut params = IndexMap::new();
    for entry in &manifest.params {
        let numel: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start + numel * 8;
        if end > data.len() {
            return Err(Error::data(format!(
                "checkpoint truncated in parameter {:?}",
                entry.name
            )));
        }
        let mut values = Vec::with_capacity(numel);
        for chunk in data[start..end].chunks_exact(8) {
            values.push(f64::from_le_bytes(chunk.try_into().unwrap()) as Real);
        }
        params.insert(entry.name.clone(), Array::new(entry.shape.clone(), values)?);
    }
    Ok((manifest, params))
}

// ── Model-level save and load ───────────────────────────────────────────

use crate::classifier::{ClassifierConfig, ClassifierModel, ClassifierParams};
use crate::cvrnn::{CvrnnConfig, CvrnnModel, CvrnnParams};
use crate::data::Alphabet;

impl CvrnnModel {
    pub fn save(&self, path: &Path, trainer_state: Option<TrainerState>) -> Result<()> {
        let mut named: Vec<(String, &Array)> = Vec::new();
        self.params.visit(|name, array| {
            // Safety: visit borrows outlive the call only via this vec.
            named.push((name.to_string(), unsafe { &*(array as *const Array) }));
        });
        save_checkpoint(
            path,
            "cvrnn",
            serde_json::to_value(&self.cfg)?,
            &self.alphabet.as_string(),
            &self.stats,
            trainer_state,
            &named,
        )
    }

    pub fn load(path: &Path) -> Result<(Self, Option<TrainerState>)> {
        let (manifest, mut arrays) = load_checkpoint(path)?;
        if manifest.model_kind != "cvrnn" {
            return Err(Error::data(format!(
                "expected a cvrnn checkpoint, found {:?}",
                manifest.model_kind
            )));
        }
        let cfg: CvrnnConfig = serde_json::from_value(manifest.config.clone())
            .map_err(|e| Error::data(format!("checkpoint config: {e}")))?;
        let alphabet = Alphabet::new(&manifest.alphabet)?;
        let mut model = CvrnnModel::new(cfg, alphabet, manifest.norm_stats.clone(), 0)?;
        take_params(&mut arrays, |f| model.params.visit_mut(f))?;
        Ok((model, manifest.trainer_state))
    }
}

impl ClassifierModel {
    pub fn save(&self, path: &Path, trainer_state: Option<TrainerState>) -> Result<()> {
        let mut named: Vec<(String, &Array)> = Vec::new();
        self.params.visit(|name, array| {
            named.push((name.to_string(), unsafe { &*(array as *const Array) }));
        });
        save_checkpoint(
            path,
            "classifier",
            serde_json::to_value(&self.cfg)?,
            &self.alphabet.as_string(),
            &self.stats,
            trainer_state,
            &named,
        )
    }

    pub fn load(path: &Path) -> Result<(Self, Option<TrainerState>)> {
        let (manifest, mut arrays) = load_checkpoint(path)?;
        if manifest.model_kind != "classifier" {
            return Err(Error::data(format!(
                "expected a classifier checkpoint, found {:?}",
                manifest.model_kind
            )));
        }
        let cfg: ClassifierConfig = serde_json::from_value(manifest.config.clone())
            .map_err(|e| Error::data(format!("checkpoint config: {e}")))?;
        let alphabet = Alphabet::new(&manifest.alphabet)?;
        let mut model = ClassifierModel::new(cfg.clone(), alphabet, manifest.norm_stats.clone(), 0)?;
        model.params = ClassifierParams::init(&cfg, 0);
        take_params(&mut arrays, |f| model.params.visit_mut(f))?;
        Ok((model, manifest.trainer_state))
    }
}

fn take_params(
    arrays: &mut IndexMap<String, Array>,
    visit_mut: impl FnOnce(&mut dyn FnMut(&str, &mut Array)),
) -> Result<()> {
    let mut missing = Vec::new();
    visit_mut(&mut |name, slot| match arrays.swap_remove(name) {
        Some(array) if array.shape() == slot.shape() => *slot = array,
        Some(array) => missing.push(format!(
            "{name}: shape {:?} in file, {:?} expected",
            array.shape(),
            slot.shape()
        )),
        None => missing.push(format!("{name}: missing")),
    });
    if !missing.is_empty() {
        return Err(Error::data(format!(
            "checkpoint parameters do not match the model: {}",
            missing.join("; ")
        )));
    }
    if let Some(name) = arrays.keys().next() {
        return Err(Error::data(format!("checkpoint has unexpected parameter {name:?}")));
    }
    Ok(())
}
