//! Checkpoint container: a text manifest (format version, config, adapter
//! identities, lineage, tensor name/shape/offset entries) followed by a
//! little-endian 32-bit float payload in manifest order.
//!
//! Compute happens in f64; the save boundary rounds to f32, so
//! save -> load -> save is byte-identical. Adapter bundles use the same
//! container with tensors filtered by name prefix.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::{Parameter, Tensor};
use crate::corpus::Provenance;
use crate::model::{
    AdapterBundle, AdapterMeta, BundleKind, EncoderConfig, LineageEntry, ModelError, ModelGraph,
    StageKind, LANG_ADAPTER_PREFIX, REG_HEAD_PREFIX, TASK_ADAPTER_PREFIX,
};

const MAGIC: &str = "aadam-checkpoint";
const VERSION: &str = "v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic line `{got}`)")]
    BadMagic { got: String },
    #[error("unsupported checkpoint version `{got}` (expected `{VERSION}`)")]
    VersionMismatch { got: String },
    #[error("malformed manifest at line {line}: {detail}")]
    Malformed { line: usize, detail: String },
    #[error("config hash mismatch: manifest says {manifest}, recomputed {computed}")]
    ConfigHashMismatch { manifest: String, computed: String },
    #[error("payload truncated: expected {expected} bytes, got {got} (first affected tensor `{tensor}` at offset {offset})")]
    PayloadTruncated { expected: usize, got: usize, tensor: String, offset: usize },
    #[error("tensor `{tensor}`: manifest offset {got} does not match running offset {expected}")]
    OffsetInconsistent { tensor: String, expected: usize, got: usize },
    #[error("file is an adapter bundle; use load_adapter_bundle")]
    NotAFullCheckpoint,
    #[error("file is a full checkpoint; use load_checkpoint")]
    NotABundle,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// SHA-256 hex of the canonical config encoding; names run directories.
pub fn config_hash(config: &EncoderConfig) -> String {
    let mut hasher = Sha256::new();
    for (key, value) in config.canonical_fields() {
        hasher.update(key.as_bytes());
        hasher.update(b"=");
        hasher.update(value.as_bytes());
        hasher.update(b"\n");
    }
    hex(&hasher.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn provenance_field(prov: &Option<BTreeMap<Provenance, usize>>) -> String {
    match prov {
        None => "-".to_string(),
        Some(map) => {
            let parts: Vec<String> =
                map.iter().map(|(p, n)| format!("{}:{}", p.as_str(), n)).collect();
            format!("prov={}", parts.join(","))
        }
    }
}

fn parse_provenance_field(
    field: &str,
    line: usize,
) -> Result<Option<BTreeMap<Provenance, usize>>, CheckpointError> {
    if field == "-" {
        return Ok(None);
    }
    let body = field.strip_prefix("prov=").ok_or_else(|| CheckpointError::Malformed {
        line,
        detail: format!("bad provenance field `{field}`"),
    })?;
    let mut map = BTreeMap::new();
    if body.is_empty() {
        return Ok(Some(map));
    }
    for part in body.split(',') {
        let (tag, count) = part.split_once(':').ok_or_else(|| CheckpointError::Malformed {
            line,
            detail: format!("bad provenance entry `{part}`"),
        })?;
        let prov = Provenance::parse(tag).ok_or_else(|| CheckpointError::Malformed {
            line,
            detail: format!("unknown provenance `{tag}`"),
        })?;
        let n: usize = count.parse().map_err(|_| CheckpointError::Malformed {
            line,
            detail: format!("bad provenance count `{count}`"),
        })?;
        map.insert(prov, n);
    }
    Ok(Some(map))
}

fn meta_field(value: &Option<String>) -> &str {
    value.as_deref().unwrap_or("-")
}

fn parse_meta_field(field: &str) -> Option<String> {
    if field == "-" {
        None
    } else {
        Some(field.to_string())
    }
}

fn serialize_container(
    config: &EncoderConfig,
    kind_line: &str,
    adapters: &AdapterMeta,
    lineage: &[LineageEntry],
    tensors: &BTreeMap<String, (Tensor, bool)>,
) -> Vec<u8> {
    let mut manifest = String::new();
    manifest.push_str(&format!("{MAGIC} {VERSION}\n"));
    manifest.push_str(kind_line);
    manifest.push('\n');
    for (key, value) in config.canonical_fields() {
        manifest.push_str(&format!("config {key} {value}\n"));
    }
    manifest.push_str(&format!("config_hash {}\n", config_hash(config)));
    manifest.push_str(&format!(
        "adapters {}\t{}\t{}\n",
        meta_field(&adapters.language_id),
        meta_field(&adapters.task_id),
        meta_field(&adapters.task_trained_on),
    ));
    manifest.push_str(&format!("lineage {}\n", lineage.len()));
    for entry in lineage {
        manifest.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            entry.stage,
            entry.kind.as_str(),
            entry.hash,
            provenance_field(&entry.provenance),
        ));
    }
    manifest.push_str(&format!("tensors {}\n", tensors.len()));
    let mut offset = 0usize;
    let mut payload: Vec<u8> = Vec::new();
    for (name, (tensor, trainable)) in tensors {
        let dims: Vec<String> = tensor.shape().iter().map(|d| d.to_string()).collect();
        manifest.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            name,
            dims.join(","),
            offset,
            u8::from(*trainable),
        ));
        for &value in tensor.data() {
            payload.extend_from_slice(&(value as f32).to_le_bytes());
        }
        offset += tensor.numel() * 4;
    }
    manifest.push_str(&format!("payload {}\n", payload.len()));

    let mut out = manifest.into_bytes();
    out.extend_from_slice(&payload);
    out
}

/// Serialize a full model checkpoint to bytes.
pub fn serialize_model(model: &ModelGraph) -> Vec<u8> {
    let tensors: BTreeMap<String, (Tensor, bool)> = model
        .params()
        .iter()
        .map(|(name, p)| (name.clone(), (p.tensor.clone(), p.trainable)))
        .collect();
    serialize_container(model.config(), "kind full", model.adapters(), model.lineage(), &tensors)
}

pub fn save_checkpoint(model: &ModelGraph, path: &Path) -> Result<(), CheckpointError> {
    std::fs::write(path, serialize_model(model))?;
    Ok(())
}

/// Serialize an adapter bundle (language stack, or task stack plus
/// regression head) using the same container, filtered by name prefix.
pub fn serialize_bundle(model: &ModelGraph, kind: BundleKind) -> Result<Vec<u8>, CheckpointError> {
    let (bundle, kind_line) = match kind {
        BundleKind::Language => {
            let b = model.language_bundle()?;
            let line = format!("kind bundle language {}", b.language);
            (b, line)
        }
        BundleKind::Task => {
            let b = model.task_bundle()?;
            let line = format!("kind bundle task {}", b.language);
            (b, line)
        }
    };
    let tensors: BTreeMap<String, (Tensor, bool)> =
        bundle.tensors.into_iter().map(|(name, t)| (name, (t, true))).collect();
    Ok(serialize_container(
        model.config(),
        &kind_line,
        model.adapters(),
        model.lineage(),
        &tensors,
    ))
}

pub fn save_adapter_bundle(
    model: &ModelGraph,
    kind: BundleKind,
    path: &Path,
) -> Result<(), CheckpointError> {
    std::fs::write(path, serialize_bundle(model, kind)?)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    line: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0, line: 0 }
    }

    fn next_line(&mut self) -> Result<&'a str, CheckpointError> {
        self.line += 1;
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
            self.pos += 1;
        }
        if self.pos >= self.bytes.len() {
            return Err(CheckpointError::Malformed {
                line: self.line,
                detail: "unexpected end of manifest".into(),
            });
        }
        let raw = &self.bytes[start..self.pos];
        self.pos += 1; // consume newline
        std::str::from_utf8(raw).map_err(|_| CheckpointError::Malformed {
            line: self.line,
            detail: "manifest is not UTF-8".into(),
        })
    }

    fn rest(&self) -> &'a [u8] {
        &self.bytes[self.pos..]
    }
}

struct ParsedContainer {
    kind_line: String,
    config: EncoderConfig,
    adapters: AdapterMeta,
    lineage: Vec<LineageEntry>,
    tensors: BTreeMap<String, (Tensor, bool)>,
}

fn parse_container(bytes: &[u8]) -> Result<ParsedContainer, CheckpointError> {
    let mut reader = Reader::new(bytes);
    let magic = reader.next_line()?;
    let mut magic_parts = magic.split(' ');
    if magic_parts.next() != Some(MAGIC) {
        return Err(CheckpointError::BadMagic { got: magic.to_string() });
    }
    let version = magic_parts.next().unwrap_or("");
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch { got: version.to_string() });
    }
    let kind_line = reader.next_line()?.to_string();

    let mut config_map: BTreeMap<String, String> = BTreeMap::new();
    let manifest_hash;
    loop {
        let line = reader.next_line()?;
        if let Some(rest) = line.strip_prefix("config_hash ") {
            manifest_hash = rest.to_string();
            break;
        }
        let rest = line.strip_prefix("config ").ok_or_else(|| CheckpointError::Malformed {
            line: reader.line,
            detail: format!("expected config line, got `{line}`"),
        })?;
        let (key, value) = rest.split_once(' ').ok_or_else(|| CheckpointError::Malformed {
            line: reader.line,
            detail: format!("bad config line `{line}`"),
        })?;
        config_map.insert(key.to_string(), value.to_string());
    }

    let get_usize = |key: &str| -> Result<usize, CheckpointError> {
        config_map
            .get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| CheckpointError::Malformed {
                line: 0,
                detail: format!("missing or bad config key `{key}`"),
            })
    };
    let config = EncoderConfig {
        vocab_size: get_usize("vocab_size")?,
        d_model: get_usize("d_model")?,
        n_layers: get_usize("n_layers")?,
        n_heads: get_usize("n_heads")?,
        d_ff: get_usize("d_ff")?,
        max_len: get_usize("max_len")?,
        adapter_bottleneck: get_usize("adapter_bottleneck")?,
        dropout: config_map
            .get("dropout")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| CheckpointError::Malformed {
                line: 0,
                detail: "missing or bad config key `dropout`".into(),
            })?,
        seed: config_map
            .get("seed")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| CheckpointError::Malformed {
                line: 0,
                detail: "missing or bad config key `seed`".into(),
            })?,
    };
    let computed = config_hash(&config);
    if computed != manifest_hash {
        return Err(CheckpointError::ConfigHashMismatch {
            manifest: manifest_hash,
            computed,
        });
    }

    let adapters_line = reader.next_line()?;
    let rest = adapters_line.strip_prefix("adapters ").ok_or_else(|| {
        CheckpointError::Malformed {
            line: reader.line,
            detail: format!("expected adapters line, got `{adapters_line}`"),
        }
    })?;
    let fields: Vec<&str> = rest.split('\t').collect();
    if fields.len() != 3 {
        return Err(CheckpointError::Malformed {
            line: reader.line,
            detail: "adapters line needs 3 fields".into(),
        });
    }
    let adapters = AdapterMeta {
        language_id: parse_meta_field(fields[0]),
        task_id: parse_meta_field(fields[1]),
        task_trained_on: parse_meta_field(fields[2]),
    };

    let lineage_line = reader.next_line()?;
    let count: usize = lineage_line
        .strip_prefix("lineage ")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| CheckpointError::Malformed {
            line: reader.line,
            detail: format!("expected lineage count, got `{lineage_line}`"),
        })?;
    let mut lineage = Vec::with_capacity(count);
    for _ in 0..count {
        let line = reader.next_line()?;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(CheckpointError::Malformed {
                line: reader.line,
                detail: "lineage entry needs 4 fields".into(),
            });
        }
        let kind = StageKind::parse(fields[1]).ok_or_else(|| CheckpointError::Malformed {
            line: reader.line,
            detail: format!("unknown stage kind `{}`", fields[1]),
        })?;
        lineage.push(LineageEntry {
            stage: fields[0].to_string(),
            kind,
            hash: fields[2].to_string(),
            provenance: parse_provenance_field(fields[3], reader.line)?,
        });
    }

    let tensors_line = reader.next_line()?;
    let n_tensors: usize = tensors_line
        .strip_prefix("tensors ")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| CheckpointError::Malformed {
            line: reader.line,
            detail: format!("expected tensor count, got `{tensors_line}`"),
        })?;
    let mut entries = Vec::with_capacity(n_tensors);
    let mut running = 0usize;
    for _ in 0..n_tensors {
        let line = reader.next_line()?;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(CheckpointError::Malformed {
                line: reader.line,
                detail: "tensor entry needs 4 fields".into(),
            });
        }
        let name = fields[0].to_string();
        let shape: Vec<usize> = if fields[1].is_empty() {
            Vec::new()
        } else {
            fields[1]
                .split(',')
                .map(|d| d.parse())
                .collect::<Result<_, _>>()
                .map_err(|_| CheckpointError::Malformed {
                    line: reader.line,
                    detail: format!("bad shape `{}`", fields[1]),
                })?
        };
        let offset: usize = fields[2].parse().map_err(|_| CheckpointError::Malformed {
            line: reader.line,
            detail: format!("bad offset `{}`", fields[2]),
        })?;
        if offset != running {
            return Err(CheckpointError::OffsetInconsistent {
                tensor: name,
                expected: running,
                got: offset,
            });
        }
        let trainable = fields[3] == "1";
        let numel: usize = shape.iter().product();
        running += numel * 4;
        entries.push((name, shape, offset, trainable));
    }

    let payload_line = reader.next_line()?;
    let payload_len: usize = payload_line
        .strip_prefix("payload ")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| CheckpointError::Malformed {
            line: reader.line,
            detail: format!("expected payload length, got `{payload_line}`"),
        })?;
    if payload_len != running {
        return Err(CheckpointError::Malformed {
            line: reader.line,
            detail: format!("payload length {payload_len} != sum of tensor sizes {running}"),
        });
    }
    let payload = reader.rest();
    if payload.len() != payload_len {
        let (tensor, offset) = entries
            .iter()
            .rev()
            .find(|(_, _, offset, _)| *offset < payload.len().min(payload_len))
            .map(|(name, _, offset, _)| (name.clone(), *offset))
            .unwrap_or_else(|| {
                entries
                    .first()
                    .map(|(name, _, offset, _)| (name.clone(), *offset))
                    .unwrap_or_default()
            });
        return Err(CheckpointError::PayloadTruncated {
            expected: payload_len,
            got: payload.len(),
            tensor,
            offset,
        });
    }

    let mut tensors = BTreeMap::new();
    for (name, shape, offset, trainable) in entries {
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for i in 0..numel {
            let base = offset + i * 4;
            let raw: [u8; 4] = payload[base..base + 4].try_into().expect("length checked");
            data.push(f64::from(f32::from_le_bytes(raw)));
        }
        let tensor = Tensor::new(shape, data).map_err(|e| CheckpointError::Malformed {
            line: 0,
            detail: format!("tensor `{name}`: {e}"),
        })?;
        tensors.insert(name, (tensor, trainable));
    }

    Ok(ParsedContainer { kind_line, config, adapters, lineage, tensors })
}

/// Load a full model checkpoint.
pub fn load_checkpoint(path: &Path) -> Result<ModelGraph, CheckpointError> {
    let bytes = std::fs::read(path)?;
    deserialize_model(&bytes)
}

pub fn deserialize_model(bytes: &[u8]) -> Result<ModelGraph, CheckpointError> {
    let parsed = parse_container(bytes)?;
    if parsed.kind_line != "kind full" {
        return Err(CheckpointError::NotAFullCheckpoint);
    }
    parsed.config.validate()?;
    let params: BTreeMap<String, Parameter> = parsed
        .tensors
        .into_iter()
        .map(|(name, (tensor, trainable))| {
            let mut p = Parameter::new(name.clone(), tensor);
            p.trainable = trainable;
            (name, p)
        })
        .collect();
    Ok(ModelGraph::from_checkpoint_parts(
        parsed.config,
        params,
        parsed.adapters,
        parsed.lineage,
    ))
}

/// A bundle file: the adapter tensors plus the exporting model's config and
/// lineage (kept so transfer can audit the task adapter's history).
#[derive(Debug, Clone)]
pub struct BundleFile {
    pub bundle: AdapterBundle,
    pub config: EncoderConfig,
    pub lineage: Vec<LineageEntry>,
}

pub fn load_adapter_bundle(path: &Path) -> Result<BundleFile, CheckpointError> {
    let bytes = std::fs::read(path)?;
    deserialize_bundle(&bytes)
}

pub fn deserialize_bundle(bytes: &[u8]) -> Result<BundleFile, CheckpointError> {
    let parsed = parse_container(bytes)?;
    let parts: Vec<&str> = parsed.kind_line.split(' ').collect();
    let (kind, language) = match parts.as_slice() {
        ["kind", "bundle", "language", lang] => (BundleKind::Language, lang.to_string()),
        ["kind", "bundle", "task", lang] => (BundleKind::Task, lang.to_string()),
        ["kind", "full"] => return Err(CheckpointError::NotABundle),
        _ => {
            return Err(CheckpointError::Malformed {
                line: 2,
                detail: format!("bad kind line `{}`", parsed.kind_line),
            })
        }
    };
    let expected_prefixes: &[&str] = match kind {
        BundleKind::Language => &[LANG_ADAPTER_PREFIX],
        BundleKind::Task => &[TASK_ADAPTER_PREFIX, REG_HEAD_PREFIX],
    };
    for name in parsed.tensors.keys() {
        if !expected_prefixes.iter().any(|p| name.starts_with(p)) {
            return Err(CheckpointError::Malformed {
                line: 0,
                detail: format!("unexpected tensor `{name}` in bundle"),
            });
        }
    }
    let tensors = parsed.tensors.into_iter().map(|(name, (t, _))| (name, t)).collect();
    Ok(BundleFile {
        bundle: AdapterBundle { kind, language, tensors },
        config: parsed.config,
        lineage: parsed.lineage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TuningMode;

    fn model_with_adapters() -> ModelGraph {
        let config = EncoderConfig {
            vocab_size: 20,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 16,
            max_len: 8,
            adapter_bottleneck: 4,
            dropout: 0.0,
            seed: 13,
        };
        let mut model = ModelGraph::build_encoder(config).unwrap();
        model.attach_adapters("aa", "str").unwrap();
        model.set_trainable(TuningMode::TaskAdapterOnly).unwrap();
        model
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let model = model_with_adapters();
        let first = serialize_model(&model);
        let loaded = deserialize_model(&first).unwrap();
        let second = serialize_model(&loaded);
        assert_eq!(first, second);
    }

    #[test]
    fn load_preserves_lineage_adapters_and_trainability() {
        let model = model_with_adapters();
        let loaded = deserialize_model(&serialize_model(&model)).unwrap();
        assert_eq!(loaded.lineage(), model.lineage());
        assert_eq!(loaded.adapters(), model.adapters());
        assert_eq!(loaded.trainable_names(), model.trainable_names());
        assert_eq!(loaded.config(), model.config());
    }

    #[test]
    fn language_bundle_contains_exactly_prefixed_tensors() {
        let model = model_with_adapters();
        let bytes = serialize_bundle(&model, BundleKind::Language).unwrap();
        let file = deserialize_bundle(&bytes).unwrap();
        assert_eq!(file.bundle.kind, BundleKind::Language);
        assert_eq!(file.bundle.language, "aa");
        let expected: Vec<String> = model
            .params()
            .keys()
            .filter(|n| n.starts_with(LANG_ADAPTER_PREFIX))
            .cloned()
            .collect();
        let got: Vec<String> = file.bundle.tensors.keys().cloned().collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn truncated_payload_reports_offsets() {
        let model = model_with_adapters();
        let mut bytes = serialize_model(&model);
        bytes.pop(); // remove one payload byte
        let err = deserialize_model(&bytes).unwrap_err();
        match err {
            CheckpointError::PayloadTruncated { expected, got, .. } => {
                assert_eq!(got + 1, expected);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn version_mismatch_is_detected() {
        let model = model_with_adapters();
        let bytes = serialize_model(&model);
        let text = String::from_utf8_lossy(&bytes[..40]).to_string();
        assert!(text.starts_with("aadam-checkpoint v1"));
        let mut corrupted = bytes.clone();
        // bump the version digit
        let pos = MAGIC.len() + 2;
        corrupted[pos] = b'9';
        assert!(matches!(
            deserialize_model(&corrupted),
            Err(CheckpointError::VersionMismatch { .. })
        ));
    }

    #[test]
    fn full_checkpoint_is_not_a_bundle() {
        let model = model_with_adapters();
        let bytes = serialize_model(&model);
        assert!(matches!(deserialize_bundle(&bytes), Err(CheckpointError::NotABundle)));
        let bundle_bytes = serialize_bundle(&model, BundleKind::Task).unwrap();
        assert!(matches!(
            deserialize_model(&bundle_bytes),
            Err(CheckpointError::NotAFullCheckpoint)
        ));
    }

    #[test]
    fn loaded_model_reproduces_predictions_within_f32_rounding() {
        let model = model_with_adapters();
        let seq = crate::text::TokenSequence {
            ids: vec![2, 7, 9, 3, 11, 3, 0, 0],
            attention_mask: vec![1, 1, 1, 1, 1, 1, 0, 0],
        };
        let loaded = deserialize_model(&serialize_model(&model)).unwrap();
        let a = model.forward_cross(&seq).unwrap();
        let b = loaded.forward_cross(&seq).unwrap();
        assert!((a - b).abs() < 1e-5, "{a} vs {b}");
    }
}
