//! Checkpoint container: a length-prefixed JSON header (format version,
//! model config, tensor index, stage provenance) followed by raw
//! little-endian tensor bytes. Writes are atomic (temp file + rename) and
//! byte-deterministic, so identical models produce identical files.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use desklm_core::adapters::{
    resolve_target_sites, AdaptedModel, FrozenMatrix, LoraAdapter, LoraConfig, QuantizedMatrix,
    NF4_CODEBOOK_ID,
};
use desklm_core::model::{GraphModel, ModelConfig, ModelWeights};
use desklm_core::numerics::Tensor;

use crate::error::{AppError, AppResult};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    block_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    codebook: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceEntry {
    pub stage: String,
    pub dataset_digest: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    model: ModelConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    adapters: Option<LoraConfig>,
    tensors: BTreeMap<String, TensorEntry>,
    provenance: Vec<ProvenanceEntry>,
}

/// A checkpointed model: plain dense weights, or a frozen base with
/// adapters still attached.
#[derive(Debug)]
pub enum LoadedModel {
    Dense(ModelWeights),
    Adapted(AdaptedModel),
}

impl LoadedModel {
    pub fn config(&self) -> &ModelConfig {
        match self {
            LoadedModel::Dense(w) => &w.cfg,
            LoadedModel::Adapted(a) => a.config(),
        }
    }

    /// Dense weights with any adapter deltas folded in.
    pub fn merged(&self) -> AppResult<ModelWeights> {
        match self {
            LoadedModel::Dense(w) => Ok(w.clone()),
            LoadedModel::Adapted(a) => a.merge_lora().map_err(AppError::runtime),
        }
    }
}

#[derive(Debug)]
pub struct Checkpoint {
    pub model: LoadedModel,
    pub provenance: Vec<ProvenanceEntry>,
}

impl Checkpoint {
    pub fn stages(&self) -> Vec<&str> {
        self.provenance.iter().map(|p| p.stage.as_str()).collect()
    }
}

/// Refuse a checkpoint that has not been through `required` yet.
pub fn require_stage(ckpt: &Checkpoint, required: &str, command: &str) -> AppResult<()> {
    if !ckpt.provenance.iter().any(|p| p.stage == required) {
        return Err(AppError::Validation(format!(
            "{command} requires a checkpoint that completed the {required} stage; \
             this one has [{}]",
            ckpt.stages().join(", ")
        )));
    }
    Ok(())
}

fn f32_bytes(t: &Tensor) -> Vec<u8> {
    t.to_le_bytes()
}

struct PayloadBuilder {
    entries: BTreeMap<String, (TensorEntry, Vec<u8>)>,
}

impl PayloadBuilder {
    fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    fn add_f32(&mut self, name: &str, shape: Vec<usize>, bytes: Vec<u8>) {
        self.entries.insert(
            name.to_string(),
            (
                TensorEntry {
                    dtype: "f32".into(),
                    shape,
                    offset: 0,
                    len: bytes.len() as u64,
                    block_size: None,
                    codebook: None,
                },
                bytes,
            ),
        );
    }

    fn add_quantized(&mut self, name: &str, q: &QuantizedMatrix) {
        let mut scale_bytes = Vec::with_capacity(q.scales().len() * 4);
        for s in q.scales() {
            scale_bytes.extend_from_slice(&s.to_le_bytes());
        }
        self.entries.insert(
            format!("{name}.scales"),
            (
                TensorEntry {
                    dtype: "f32".into(),
                    shape: vec![q.scales().len()],
                    offset: 0,
                    len: scale_bytes.len() as u64,
                    block_size: None,
                    codebook: None,
                },
                scale_bytes,
            ),
        );
        self.entries.insert(
            format!("{name}.codes"),
            (
                TensorEntry {
                    dtype: "u4".into(),
                    shape: q.shape().to_vec(),
                    offset: 0,
                    len: q.codes().len() as u64,
                    block_size: Some(q.block_size()),
                    codebook: Some(NF4_CODEBOOK_ID.into()),
                },
                q.codes().to_vec(),
            ),
        );
    }

    /// Assign contiguous offsets in name order and produce header + payload.
    fn finish(self) -> (BTreeMap<String, TensorEntry>, Vec<u8>) {
        let mut tensors = BTreeMap::new();
        let mut payload = Vec::new();
        for (name, (mut entry, bytes)) in self.entries {
            entry.offset = payload.len() as u64;
            payload.extend_from_slice(&bytes);
            tensors.insert(name, entry);
        }
        (tensors, payload)
    }
}

/// Serialize a model with its provenance trail.
pub fn save_checkpoint(
    model: &LoadedModel,
    provenance: &[ProvenanceEntry],
    path: &Path,
) -> AppResult<()> {
    let mut builder = PayloadBuilder::new();
    let (model_cfg, adapters_meta) = match model {
        LoadedModel::Dense(w) => {
            for (name, t) in w.named() {
                builder.add_f32(&name, t.shape().to_vec(), f32_bytes(t));
            }
            (w.cfg.clone(), None)
        }
        LoadedModel::Adapted(a) => {
            let frozen: BTreeMap<&String, &FrozenMatrix> = a.frozen_entries().collect();
            for (name, t) in a.frozen_base().named() {
                match frozen.get(&name) {
                    Some(FrozenMatrix::Quantized(q)) => builder.add_quantized(&name, q),
                    _ => builder.add_f32(&name, t.shape().to_vec(), f32_bytes(t)),
                }
            }
            for (site, ad) in a.adapter_entries() {
                builder.add_f32(
                    &format!("adapter.{site}.a"),
                    ad.a.shape().to_vec(),
                    f32_bytes(&ad.a),
                );
                builder.add_f32(
                    &format!("adapter.{site}.b"),
                    ad.b.shape().to_vec(),
                    f32_bytes(&ad.b),
                );
            }
            (a.config().clone(), Some(a.lora_config().clone()))
        }
    };
    let (tensors, payload) = builder.finish();
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        model: model_cfg,
        adapters: adapters_meta,
        tensors,
        provenance: provenance.to_vec(),
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| AppError::runtime(format!("header: {e}")))?;

    let mut file_bytes =
        Vec::with_capacity(8 + header_bytes.len() + payload.len());
    file_bytes.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    file_bytes.extend_from_slice(&header_bytes);
    file_bytes.extend_from_slice(&payload);

    // Never leave a partial checkpoint at the target path.
    let tmp = path.with_extension("ckpt.tmp");
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| AppError::runtime(format!("{}: {e}", parent.display())))?;
    }
    let mut f = fs::File::create(&tmp)
        .map_err(|e| AppError::runtime(format!("{}: {e}", tmp.display())))?;
    f.write_all(&file_bytes)
        .map_err(|e| AppError::runtime(format!("{}: {e}", tmp.display())))?;
    f.sync_all()
        .map_err(|e| AppError::runtime(format!("{}: {e}", tmp.display())))?;
    drop(f);
    fs::rename(&tmp, path)
        .map_err(|e| AppError::runtime(format!("{}: {e}", path.display())))?;
    Ok(())
}

fn slice_of<'a>(payload: &'a [u8], entry: &TensorEntry, name: &str) -> AppResult<&'a [u8]> {
    let start = entry.offset as usize;
    let end = start + entry.len as usize;
    payload.get(start..end).ok_or_else(|| {
        AppError::Validation(format!(
            "integrity error: tensor {name} spans {start}..{end} beyond payload"
        ))
    })
}

fn f32_tensor(payload: &[u8], entry: &TensorEntry, name: &str) -> AppResult<Tensor> {
    if entry.dtype != "f32" {
        return Err(AppError::Validation(format!(
            "tensor {name} has dtype {}, expected f32",
            entry.dtype
        )));
    }
    let numel: usize = entry.shape.iter().product();
    if entry.len as usize != numel * 4 {
        return Err(AppError::Validation(format!(
            "integrity error: tensor {name} has {} bytes for shape {:?}",
            entry.len, entry.shape
        )));
    }
    Tensor::from_le_bytes(entry.shape.clone(), slice_of(payload, entry, name)?)
        .map_err(AppError::validation)
}

/// Deserialize and structurally validate a checkpoint.
pub fn load_checkpoint(path: &Path) -> AppResult<Checkpoint> {
    let bytes =
        fs::read(path).map_err(|e| AppError::validation(format!("{}: {e}", path.display())))?;
    if bytes.len() < 8 {
        return Err(AppError::Validation(format!(
            "integrity error: {} is shorter than its length prefix",
            path.display()
        )));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + header_len {
        return Err(AppError::Validation(format!(
            "integrity error: {} truncated inside the header",
            path.display()
        )));
    }
    let header: Header = serde_json::from_slice(&bytes[8..8 + header_len])
        .map_err(|e| AppError::validation(format!("checkpoint header: {e}")))?;
    if header.format_version != CHECKPOINT_VERSION {
        return Err(AppError::Validation(format!(
            "format version {} (expected {})",
            header.format_version, CHECKPOINT_VERSION
        )));
    }
    header.model.validate().map_err(AppError::validation)?;
    let payload = &bytes[8 + header_len..];

    // Offsets must tile the payload exactly: contiguous, non-overlapping.
    let mut by_offset: Vec<(&String, &TensorEntry)> = header.tensors.iter().collect();
    by_offset.sort_by_key(|(_, e)| e.offset);
    let mut cursor = 0u64;
    for (name, e) in &by_offset {
        if e.offset != cursor {
            return Err(AppError::Validation(format!(
                "integrity error: tensor {name} at offset {} (expected {cursor})",
                e.offset
            )));
        }
        cursor += e.len;
    }
    if cursor as usize != payload.len() {
        return Err(AppError::Validation(format!(
            "integrity error: payload has {} bytes, index covers {cursor}",
            payload.len()
        )));
    }

    let model = match &header.adapters {
        None => {
            let mut named = Vec::new();
            for (name, entry) in &header.tensors {
                named.push((name.clone(), f32_tensor(payload, entry, name)?));
            }
            LoadedModel::Dense(
                ModelWeights::from_named(&header.model, named).map_err(AppError::validation)?,
            )
        }
        Some(lora) => {
            let sites = resolve_target_sites(&header.model, &lora.targets)
                .map_err(AppError::validation)?;
            let mut frozen: BTreeMap<String, FrozenMatrix> = BTreeMap::new();
            let mut adapters: BTreeMap<String, LoraAdapter> = BTreeMap::new();
            let mut base_named: Vec<(String, Tensor)> = Vec::new();

            for site in &sites {
                let codes_name = format!("{site}.codes");
                if let Some(centry) = header.tensors.get(&codes_name) {
                    if centry.dtype != "u4" {
                        return Err(AppError::Validation(format!(
                            "tensor {codes_name} has dtype {}, expected u4",
                            centry.dtype
                        )));
                    }
                    let sname = format!("{site}.scales");
                    let sentry = header.tensors.get(&sname).ok_or_else(|| {
                        AppError::Validation(format!("missing tensor {sname}"))
                    })?;
                    let scales_t = f32_tensor(payload, sentry, &sname)?;
                    let block_size = centry.block_size.ok_or_else(|| {
                        AppError::Validation(format!("{codes_name}: missing block_size"))
                    })?;
                    match centry.codebook.as_deref() {
                        Some(NF4_CODEBOOK_ID) => {}
                        other => {
                            return Err(AppError::Validation(format!(
                                "{codes_name}: unknown codebook {other:?}"
                            )))
                        }
                    }
                    let q = QuantizedMatrix::from_parts(
                        centry.shape.clone(),
                        block_size,
                        scales_t.data().to_vec(),
                        slice_of(payload, centry, &codes_name)?.to_vec(),
                    )
                    .map_err(AppError::validation)?;
                    // Placeholder; from_parts reconstructs the dense copy.
                    base_named.push((site.clone(), Tensor::zeros(centry.shape.clone())));
                    frozen.insert(site.clone(), FrozenMatrix::Quantized(q));
                } else {
                    let entry = header.tensors.get(site).ok_or_else(|| {
                        AppError::Validation(format!("missing tensor {site}"))
                    })?;
                    let t = f32_tensor(payload, entry, site)?;
                    frozen.insert(site.clone(), FrozenMatrix::Dense(t.clone()));
                    base_named.push((site.clone(), t));
                }
                for suffix in ["a", "b"] {
                    let aname = format!("adapter.{site}.{suffix}");
                    let entry = header.tensors.get(&aname).ok_or_else(|| {
                        AppError::Validation(format!("missing tensor {aname}"))
                    })?;
                    let t = f32_tensor(payload, entry, &aname)?;
                    let ad = adapters.entry(site.clone()).or_insert_with(|| LoraAdapter {
                        a: Tensor::zeros(vec![1, 1]),
                        b: Tensor::zeros(vec![1, 1]),
                    });
                    if suffix == "a" {
                        ad.a = t;
                    } else {
                        ad.b = t;
                    }
                }
            }
            // Every remaining entry must be a plain base tensor; stray
            // adapter or quantized-part names for non-target sites are
            // structural corruption.
            let expected_extra = |name: &String| {
                sites.iter().any(|s| {
                    name == &format!("adapter.{s}.a")
                        || name == &format!("adapter.{s}.b")
                        || name == &format!("{s}.codes")
                        || name == &format!("{s}.scales")
                })
            };
            for (name, entry) in &header.tensors {
                if sites.contains(name) {
                    continue;
                }
                if name.starts_with("adapter.")
                    || name.ends_with(".codes")
                    || name.ends_with(".scales")
                {
                    if !expected_extra(name) {
                        return Err(AppError::Validation(format!(
                            "tensor {name} does not belong to any adapter target"
                        )));
                    }
                    continue;
                }
                base_named.push((name.clone(), f32_tensor(payload, entry, name)?));
            }
            let base = ModelWeights::from_named(&header.model, base_named)
                .map_err(AppError::validation)?;
            LoadedModel::Adapted(
                AdaptedModel::from_parts(lora.clone(), base, frozen, adapters)
                    .map_err(AppError::validation)?,
            )
        }
    };
    Ok(Checkpoint {
        model,
        provenance: header.provenance,
    })
}

/// Hex SHA-256 of a dataset file, recorded into provenance.
pub fn dataset_digest(path: &Path) -> AppResult<String> {
    use sha2::{Digest, Sha256};
    let bytes =
        fs::read(path).map_err(|e| AppError::validation(format!("{}: {e}", path.display())))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}
