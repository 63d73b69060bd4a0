//! Toy transformer encoder with three heads (cross-encoder regression,
//! bi-encoder embedding, MLM) and per-layer language/task adapter stacks
//! with freeze and swap semantics.
//!
//! Adapters are bottleneck modules (down-projection, ReLU, up-projection,
//! residual) applied after the feed-forward sublayer, language stack first,
//! then task stack. Up-projections are zero-initialized, so a freshly
//! attached adapter is an exact identity.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodiff::{AutodiffError, NodeId, Parameter, Tape, Tensor};
use crate::corpus::{Provenance, SentencePair};
use crate::text::{self, TextError, TokenSequence, TokenizeOptions, Vocabulary};

pub const LANG_ADAPTER_PREFIX: &str = "adapter.lang.";
pub const TASK_ADAPTER_PREFIX: &str = "adapter.task.";
pub const REG_HEAD_PREFIX: &str = "head.reg.";
pub const MLM_HEAD_PREFIX: &str = "head.mlm.";

const LN_EPS: f64 = 1e-5;
const KEY_MASK_VALUE: f64 = -1e9;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid encoder config: {0}")]
    Config(String),
    #[error("{stack} adapters are not attached (required for {context})")]
    AdaptersNotAttached { stack: &'static str, context: String },
    #[error("{stack} adapters are already attached")]
    AdaptersAlreadyAttached { stack: &'static str },
    #[error("sequence length {len} exceeds model max_len {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },
    #[error("token id {id} out of range for vocab size {vocab_size}")]
    TokenIdOutOfRange { id: usize, vocab_size: usize },
    #[error("adapter bundle mismatch: {0}")]
    BundleMismatch(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Text(#[from] TextError),
}

/// Dimensions and seed of the toy encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub adapter_bottleneck: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl EncoderConfig {
    pub fn new(vocab_size: usize) -> Self {
        EncoderConfig {
            vocab_size,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 128,
            max_len: 64,
            adapter_bottleneck: 16,
            dropout: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.vocab_size == 0 {
            return Err(ModelError::Config("vocab_size must be positive".into()));
        }
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(ModelError::Config(format!(
                "d_model ({}) must be a positive multiple of n_heads ({})",
                self.d_model, self.n_heads
            )));
        }
        if self.adapter_bottleneck == 0 || self.adapter_bottleneck >= self.d_model {
            return Err(ModelError::Config(format!(
                "adapter_bottleneck ({}) must be in 1..d_model ({})",
                self.adapter_bottleneck, self.d_model
            )));
        }
        if self.n_layers == 0 || self.d_ff == 0 {
            return Err(ModelError::Config("n_layers and d_ff must be positive".into()));
        }
        if self.max_len < 4 {
            return Err(ModelError::Config("max_len must be at least 4".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config("dropout must be in [0,1)".into()));
        }
        Ok(())
    }

    /// Stable key=value encoding used for config hashing and checkpoints.
    pub fn canonical_fields(&self) -> Vec<(&'static str, String)> {
        vec![
            ("vocab_size", self.vocab_size.to_string()),
            ("d_model", self.d_model.to_string()),
            ("n_layers", self.n_layers.to_string()),
            ("n_heads", self.n_heads.to_string()),
            ("d_ff", self.d_ff.to_string()),
            ("max_len", self.max_len.to_string()),
            ("adapter_bottleneck", self.adapter_bottleneck.to_string()),
            ("dropout", self.dropout.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }
}

/// Which parameter groups a training loop may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TuningMode {
    Full,
    TaskAdapterOnly,
    LanguageAdapterOnly,
}

impl TuningMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TuningMode::Full => "full",
            TuningMode::TaskAdapterOnly => "task_adapter_only",
            TuningMode::LanguageAdapterOnly => "language_adapter_only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full" => Some(TuningMode::Full),
            "task_adapter_only" => Some(TuningMode::TaskAdapterOnly),
            "language_adapter_only" => Some(TuningMode::LanguageAdapterOnly),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageKind {
    Build,
    Attach,
    Tapt,
    Supervised,
    Swap,
}

impl StageKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            StageKind::Build => "build",
            StageKind::Attach => "attach",
            StageKind::Tapt => "tapt",
            StageKind::Supervised => "supervised",
            StageKind::Swap => "swap",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "build" => Some(StageKind::Build),
            "attach" => Some(StageKind::Attach),
            "tapt" => Some(StageKind::Tapt),
            "supervised" => Some(StageKind::Supervised),
            "swap" => Some(StageKind::Swap),
            _ => None,
        }
    }
}

/// Append-only training-history record. Supervised stages carry the
/// provenance multiset of their corpus so the leakage guard can audit them.
#[derive(Debug, Clone, PartialEq)]
pub struct LineageEntry {
    pub stage: String,
    pub kind: StageKind,
    pub hash: String,
    pub provenance: Option<BTreeMap<Provenance, usize>>,
}

/// Identity of the attached adapter stacks. `task_trained_on` records the
/// language whose labeled data last trained the task adapter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdapterMeta {
    pub language_id: Option<String>,
    pub task_id: Option<String>,
    pub task_trained_on: Option<String>,
}

/// A standalone set of adapter parameters, shippable between models.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterBundle {
    pub kind: BundleKind,
    pub language: String,
    pub tensors: BTreeMap<String, Tensor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BundleKind {
    /// Language adapter stack (`adapter.lang.*`).
    Language,
    /// Task adapter stack plus the regression head it was trained with
    /// (`adapter.task.*` and `head.reg.*`).
    Task,
}

/// Named parameters of the toy encoder plus adapter metadata and lineage.
#[derive(Debug, Clone)]
pub struct ModelGraph {
    config: EncoderConfig,
    params: BTreeMap<String, Parameter>,
    adapters: AdapterMeta,
    lineage: Vec<LineageEntry>,
}

fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, shape: Vec<usize>) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, limit, shape)
}

// embedding tables use a small fixed scale so position offsets do not swamp
// token identity
const EMBED_INIT_LIMIT: f64 = 0.05;

fn uniform(rng: &mut ChaCha8Rng, limit: f64, shape: Vec<usize>) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| (2.0 * rng.gen::<f64>() - 1.0) * limit).collect();
    Tensor::new(shape, data).expect("finite init")
}

impl ModelGraph {
    /// Deterministic construction under the config seed; no adapters yet.
    pub fn build_encoder(config: EncoderConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d_model;
        let v = config.vocab_size;
        let mut params = BTreeMap::new();
        let mut put = |name: String, tensor: Tensor| {
            params.insert(name.clone(), Parameter::new(name, tensor));
        };

        put("embed.token.weight".into(), uniform(&mut rng, EMBED_INIT_LIMIT, vec![v, d]));
        put("embed.pos.weight".into(), uniform(&mut rng, EMBED_INIT_LIMIT, vec![config.max_len, d]));
        put("embed.ln.gain".into(), Tensor::new(vec![d], vec![1.0; d]).unwrap());
        put("embed.ln.bias".into(), Tensor::zeros(&[d]));

        for layer in 0..config.n_layers {
            // query/key share their initial weights, biasing attention toward
            // token identity from the first step
            let qk = xavier(&mut rng, d, d, vec![d, d]);
            put(format!("layer.{layer}.attn.wq.weight"), qk.clone());
            put(format!("layer.{layer}.attn.wq.bias"), Tensor::zeros(&[d]));
            put(format!("layer.{layer}.attn.wk.weight"), qk);
            put(format!("layer.{layer}.attn.wk.bias"), Tensor::zeros(&[d]));
            for proj in ["wv", "wo"] {
                put(
                    format!("layer.{layer}.attn.{proj}.weight"),
                    xavier(&mut rng, d, d, vec![d, d]),
                );
                put(format!("layer.{layer}.attn.{proj}.bias"), Tensor::zeros(&[d]));
            }
            put(format!("layer.{layer}.attn.ln.gain"), Tensor::new(vec![d], vec![1.0; d]).unwrap());
            put(format!("layer.{layer}.attn.ln.bias"), Tensor::zeros(&[d]));
            put(
                format!("layer.{layer}.ffn.w1.weight"),
                xavier(&mut rng, d, config.d_ff, vec![d, config.d_ff]),
            );
            put(format!("layer.{layer}.ffn.w1.bias"), Tensor::zeros(&[config.d_ff]));
            put(
                format!("layer.{layer}.ffn.w2.weight"),
                xavier(&mut rng, config.d_ff, d, vec![config.d_ff, d]),
            );
            put(format!("layer.{layer}.ffn.w2.bias"), Tensor::zeros(&[d]));
            put(format!("layer.{layer}.ffn.ln.gain"), Tensor::new(vec![d], vec![1.0; d]).unwrap());
            put(format!("layer.{layer}.ffn.ln.bias"), Tensor::zeros(&[d]));
        }

        put("final.ln.gain".into(), Tensor::new(vec![d], vec![1.0; d]).unwrap());
        put("final.ln.bias".into(), Tensor::zeros(&[d]));
        put("head.reg.weight".into(), xavier(&mut rng, d, 1, vec![d, 1]));
        put("head.reg.bias".into(), Tensor::zeros(&[1]));
        put("head.mlm.weight".into(), xavier(&mut rng, d, v, vec![d, v]));
        put("head.mlm.bias".into(), Tensor::zeros(&[v]));

        let mut model = ModelGraph {
            config,
            params,
            adapters: AdapterMeta::default(),
            lineage: Vec::new(),
        };
        let hash = model.content_hash();
        model.lineage.push(LineageEntry {
            stage: "build".into(),
            kind: StageKind::Build,
            hash,
            provenance: None,
        });
        Ok(model)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &BTreeMap<String, Parameter> {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut BTreeMap<String, Parameter> {
        &mut self.params
    }

    pub fn adapters(&self) -> &AdapterMeta {
        &self.adapters
    }

    pub(crate) fn adapters_mut(&mut self) -> &mut AdapterMeta {
        &mut self.adapters
    }

    pub fn lineage(&self) -> &[LineageEntry] {
        &self.lineage
    }

    pub(crate) fn push_lineage(&mut self, entry: LineageEntry) {
        self.lineage.push(entry);
    }

    /// Rebuild from checkpoint data; callers are responsible for consistency.
    pub(crate) fn from_checkpoint_parts(
        config: EncoderConfig,
        params: BTreeMap<String, Parameter>,
        adapters: AdapterMeta,
        lineage: Vec<LineageEntry>,
    ) -> Self {
        ModelGraph { config, params, adapters, lineage }
    }

    pub fn has_language_adapters(&self) -> bool {
        self.adapters.language_id.is_some()
    }

    pub fn has_task_adapters(&self) -> bool {
        self.adapters.task_id.is_some()
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(|p| p.tensor.numel()).sum()
    }

    /// SHA-256 over the config and the 32-bit-rounded parameter payload in
    /// name order. Lineage is excluded so a stage can record the hash of the
    /// exact parameters it produced.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (key, value) in self.config.canonical_fields() {
            hasher.update(key.as_bytes());
            hasher.update(b"=");
            hasher.update(value.as_bytes());
            hasher.update(b"\n");
        }
        for (name, param) in &self.params {
            hasher.update(name.as_bytes());
            hasher.update(b":");
            for dim in param.tensor.shape() {
                hasher.update(dim.to_le_bytes());
            }
            for &value in param.tensor.data() {
                hasher.update((value as f32).to_le_bytes());
            }
        }
        hex_digest(hasher)
    }

    fn attach_stack(&mut self, prefix: &str, salt: u64) {
        let d = self.config.d_model;
        let b = self.config.adapter_bottleneck;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed.wrapping_add(salt));
        for layer in 0..self.config.n_layers {
            let down = xavier(&mut rng, d, b, vec![d, b]);
            let name = format!("{prefix}layer.{layer}.down.weight");
            self.params.insert(name.clone(), Parameter::new(name, down));
            let name = format!("{prefix}layer.{layer}.down.bias");
            self.params.insert(name.clone(), Parameter::new(name, Tensor::zeros(&[b])));
            // zero-init up-projection makes the adapter transparent at init
            let name = format!("{prefix}layer.{layer}.up.weight");
            self.params.insert(name.clone(), Parameter::new(name, Tensor::zeros(&[b, d])));
            let name = format!("{prefix}layer.{layer}.up.bias");
            self.params.insert(name.clone(), Parameter::new(name, Tensor::zeros(&[d])));
        }
    }

    pub fn attach_language_adapters(&mut self, language_id: &str) -> Result<(), ModelError> {
        if self.has_language_adapters() {
            return Err(ModelError::AdaptersAlreadyAttached { stack: "language" });
        }
        self.attach_stack(LANG_ADAPTER_PREFIX, 0x1a5);
        self.adapters.language_id = Some(language_id.to_string());
        let hash = self.content_hash();
        self.lineage.push(LineageEntry {
            stage: format!("attach_language_adapters:{language_id}"),
            kind: StageKind::Attach,
            hash,
            provenance: None,
        });
        Ok(())
    }

    pub fn attach_task_adapters(&mut self, task_id: &str) -> Result<(), ModelError> {
        if self.has_task_adapters() {
            return Err(ModelError::AdaptersAlreadyAttached { stack: "task" });
        }
        self.attach_stack(TASK_ADAPTER_PREFIX, 0x7a5);
        self.adapters.task_id = Some(task_id.to_string());
        let hash = self.content_hash();
        self.lineage.push(LineageEntry {
            stage: format!("attach_task_adapters:{task_id}"),
            kind: StageKind::Attach,
            hash,
            provenance: None,
        });
        Ok(())
    }

    /// Attach both stacks (language first).
    pub fn attach_adapters(&mut self, language_id: &str, task_id: &str) -> Result<(), ModelError> {
        self.attach_language_adapters(language_id)?;
        self.attach_task_adapters(task_id)
    }

    /// Set trainability flags exactly per mode: `Full` trains everything;
    /// `TaskAdapterOnly` trains the task stack plus the regression head;
    /// `LanguageAdapterOnly` trains the language stack plus the MLM head.
    pub fn set_trainable(&mut self, mode: TuningMode) -> Result<(), ModelError> {
        match mode {
            TuningMode::Full => {}
            TuningMode::TaskAdapterOnly if !self.has_task_adapters() => {
                return Err(ModelError::AdaptersNotAttached {
                    stack: "task",
                    context: "task_adapter_only mode".into(),
                });
            }
            TuningMode::LanguageAdapterOnly if !self.has_language_adapters() => {
                return Err(ModelError::AdaptersNotAttached {
                    stack: "language",
                    context: "language_adapter_only mode".into(),
                });
            }
            _ => {}
        }
        for (name, param) in self.params.iter_mut() {
            param.trainable = match mode {
                TuningMode::Full => true,
                TuningMode::TaskAdapterOnly => {
                    name.starts_with(TASK_ADAPTER_PREFIX) || name.starts_with(REG_HEAD_PREFIX)
                }
                TuningMode::LanguageAdapterOnly => {
                    name.starts_with(LANG_ADAPTER_PREFIX) || name.starts_with(MLM_HEAD_PREFIX)
                }
            };
        }
        Ok(())
    }

    pub fn trainable_names(&self) -> BTreeSet<String> {
        self.params
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(name, _)| name.clone())
            .collect()
    }

    /// Extract the language adapter stack as a shippable bundle.
    pub fn language_bundle(&self) -> Result<AdapterBundle, ModelError> {
        let language = self.adapters.language_id.clone().ok_or(
            ModelError::AdaptersNotAttached { stack: "language", context: "bundle export".into() },
        )?;
        Ok(AdapterBundle {
            kind: BundleKind::Language,
            language,
            tensors: self.tensors_with_prefixes(&[LANG_ADAPTER_PREFIX]),
        })
    }

    /// Extract the task adapter stack together with the regression head.
    pub fn task_bundle(&self) -> Result<AdapterBundle, ModelError> {
        let _ = self.adapters.task_id.clone().ok_or(ModelError::AdaptersNotAttached {
            stack: "task",
            context: "bundle export".into(),
        })?;
        let language = self.adapters.task_trained_on.clone().unwrap_or_default();
        Ok(AdapterBundle {
            kind: BundleKind::Task,
            language,
            tensors: self.tensors_with_prefixes(&[TASK_ADAPTER_PREFIX, REG_HEAD_PREFIX]),
        })
    }

    fn tensors_with_prefixes(&self, prefixes: &[&str]) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .filter(|(name, _)| prefixes.iter().any(|p| name.starts_with(p)))
            .map(|(name, param)| (name.clone(), param.tensor.clone()))
            .collect()
    }

    fn replace_tensors(
        &mut self,
        expected_prefixes: &[&str],
        tensors: &BTreeMap<String, Tensor>,
    ) -> Result<(), ModelError> {
        let current: BTreeSet<String> =
            self.tensors_with_prefixes(expected_prefixes).keys().cloned().collect();
        let incoming: BTreeSet<String> = tensors.keys().cloned().collect();
        if current != incoming {
            return Err(ModelError::BundleMismatch(format!(
                "tensor names differ: model has {current:?}, bundle has {incoming:?}"
            )));
        }
        for (name, tensor) in tensors {
            let param = self.params.get_mut(name).expect("name checked above");
            if param.tensor.shape() != tensor.shape() {
                return Err(ModelError::BundleMismatch(format!(
                    "shape mismatch for `{name}`: {:?} vs {:?}",
                    param.tensor.shape(),
                    tensor.shape()
                )));
            }
            param.tensor = tensor.clone();
        }
        Ok(())
    }

    /// Replace only the language adapter tensors; everything else stays
    /// bitwise unchanged. Records the swap in the lineage.
    pub fn swap_language_adapter(&mut self, bundle: &AdapterBundle) -> Result<(), ModelError> {
        if bundle.kind != BundleKind::Language {
            return Err(ModelError::BundleMismatch("expected a language bundle".into()));
        }
        let old = self.adapters.language_id.clone().ok_or(ModelError::AdaptersNotAttached {
            stack: "language",
            context: "swap_language_adapter".into(),
        })?;
        self.replace_tensors(&[LANG_ADAPTER_PREFIX], &bundle.tensors)?;
        self.adapters.language_id = Some(bundle.language.clone());
        let hash = self.content_hash();
        self.lineage.push(LineageEntry {
            stage: format!("swap_language_adapter:{old}->{}", bundle.language),
            kind: StageKind::Swap,
            hash,
            provenance: None,
        });
        Ok(())
    }

    /// Install a source task adapter (plus its regression head), as used by
    /// cross-lingual transfer.
    pub fn install_task_bundle(&mut self, bundle: &AdapterBundle) -> Result<(), ModelError> {
        if bundle.kind != BundleKind::Task {
            return Err(ModelError::BundleMismatch("expected a task bundle".into()));
        }
        if !self.has_task_adapters() {
            return Err(ModelError::AdaptersNotAttached {
                stack: "task",
                context: "install_task_bundle".into(),
            });
        }
        self.replace_tensors(&[TASK_ADAPTER_PREFIX, REG_HEAD_PREFIX], &bundle.tensors)?;
        self.adapters.task_trained_on = Some(bundle.language.clone());
        Ok(())
    }

    /// Insert every parameter as a named leaf; returns name -> node map.
    pub fn add_params_to_tape(&self, tape: &mut Tape) -> HashMap<String, NodeId> {
        self.params
            .iter()
            .map(|(name, param)| (name.clone(), tape.leaf(name, param.tensor.clone())))
            .collect()
    }

    fn leaf(leaves: &HashMap<String, NodeId>, name: &str) -> NodeId {
        *leaves.get(name).unwrap_or_else(|| panic!("parameter `{name}` missing from tape"))
    }

    fn linear(
        tape: &mut Tape,
        leaves: &HashMap<String, NodeId>,
        x: NodeId,
        prefix: &str,
    ) -> Result<NodeId, AutodiffError> {
        let w = Self::leaf(leaves, &format!("{prefix}.weight"));
        let b = Self::leaf(leaves, &format!("{prefix}.bias"));
        let xw = tape.matmul(x, w)?;
        tape.bias_add(xw, b)
    }

    fn adapter_stack(
        &self,
        tape: &mut Tape,
        leaves: &HashMap<String, NodeId>,
        x: NodeId,
        prefix: &str,
        layer: usize,
    ) -> Result<NodeId, AutodiffError> {
        let down = Self::linear(tape, leaves, x, &format!("{prefix}layer.{layer}.down"))?;
        let hidden = tape.relu(down)?;
        let up = Self::linear(tape, leaves, hidden, &format!("{prefix}layer.{layer}.up"))?;
        tape.add(x, up)
    }

    fn validate_sequence(&self, seq: &TokenSequence) -> Result<(), ModelError> {
        if seq.len() > self.config.max_len {
            return Err(ModelError::SequenceTooLong {
                len: seq.len(),
                max_len: self.config.max_len,
            });
        }
        for &id in &seq.ids {
            if id >= self.config.vocab_size {
                return Err(ModelError::TokenIdOutOfRange {
                    id,
                    vocab_size: self.config.vocab_size,
                });
            }
        }
        Ok(())
    }

    /// Final-layer representations (L, d_model) for an encoded sequence.
    /// `dropout_rng` enables the configured dropout rate (training only).
    pub fn encode_on_tape(
        &self,
        tape: &mut Tape,
        leaves: &HashMap<String, NodeId>,
        seq: &TokenSequence,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<NodeId, ModelError> {
        self.validate_sequence(seq)?;
        let len = seq.len();
        let d = self.config.d_model;
        let heads = self.config.n_heads;
        let dh = d / heads;

        let token_table = Self::leaf(leaves, "embed.token.weight");
        let pos_table = Self::leaf(leaves, "embed.pos.weight");
        let token_emb = tape.embedding_lookup(token_table, &seq.ids)?;
        let positions: Vec<usize> = (0..len).collect();
        let pos_emb = tape.embedding_lookup(pos_table, &positions)?;
        let summed = tape.add(token_emb, pos_emb)?;
        let gain = Self::leaf(leaves, "embed.ln.gain");
        let bias = Self::leaf(leaves, "embed.ln.bias");
        let mut x = tape.layer_norm(summed, gain, bias, LN_EPS)?;
        x = self.maybe_dropout(tape, x, &mut dropout_rng)?;

        // additive key mask: 0 on attended positions, -1e9 on PAD
        let mask_values: Vec<f64> = seq
            .attention_mask
            .iter()
            .map(|&m| if m == 1 { 0.0 } else { KEY_MASK_VALUE })
            .collect();
        let key_mask = tape.constant(Tensor::new(vec![len], mask_values)?);

        // pre-LN arrangement: normalize sublayer inputs, keep the residual
        // stream un-normalized until the final layer norm
        for layer in 0..self.config.n_layers {
            let gain = Self::leaf(leaves, &format!("layer.{layer}.attn.ln.gain"));
            let bias = Self::leaf(leaves, &format!("layer.{layer}.attn.ln.bias"));
            let normed = tape.layer_norm(x, gain, bias, LN_EPS)?;
            let q = Self::linear(tape, leaves, normed, &format!("layer.{layer}.attn.wq"))?;
            let k = Self::linear(tape, leaves, normed, &format!("layer.{layer}.attn.wk"))?;
            let v = Self::linear(tape, leaves, normed, &format!("layer.{layer}.attn.wv"))?;
            let mut contexts = Vec::with_capacity(heads);
            for h in 0..heads {
                let qh = tape.col_slice(q, h * dh, dh)?;
                let kh = tape.col_slice(k, h * dh, dh)?;
                let vh = tape.col_slice(v, h * dh, dh)?;
                let kt = tape.transpose(kh)?;
                let scores = tape.matmul(qh, kt)?;
                let scaled = tape.scalar_mul(scores, 1.0 / (dh as f64).sqrt())?;
                let masked = tape.bias_add(scaled, key_mask)?;
                let attn = tape.softmax(masked)?;
                let ctx = tape.matmul(attn, vh)?;
                contexts.push(ctx);
            }
            let merged = tape.concat_cols(&contexts)?;
            let mut proj = Self::linear(tape, leaves, merged, &format!("layer.{layer}.attn.wo"))?;
            proj = self.maybe_dropout(tape, proj, &mut dropout_rng)?;
            x = tape.add(x, proj)?;

            let gain = Self::leaf(leaves, &format!("layer.{layer}.ffn.ln.gain"));
            let bias = Self::leaf(leaves, &format!("layer.{layer}.ffn.ln.bias"));
            let normed = tape.layer_norm(x, gain, bias, LN_EPS)?;
            let hidden = Self::linear(tape, leaves, normed, &format!("layer.{layer}.ffn.w1"))?;
            let activated = tape.gelu(hidden)?;
            let mut ff = Self::linear(tape, leaves, activated, &format!("layer.{layer}.ffn.w2"))?;
            ff = self.maybe_dropout(tape, ff, &mut dropout_rng)?;
            x = tape.add(x, ff)?;

            if self.has_language_adapters() {
                x = self.adapter_stack(tape, leaves, x, LANG_ADAPTER_PREFIX, layer)?;
            }
            if self.has_task_adapters() {
                x = self.adapter_stack(tape, leaves, x, TASK_ADAPTER_PREFIX, layer)?;
            }
        }
        let gain = Self::leaf(leaves, "final.ln.gain");
        let bias = Self::leaf(leaves, "final.ln.bias");
        Ok(tape.layer_norm(x, gain, bias, LN_EPS)?)
    }

    fn maybe_dropout(
        &self,
        tape: &mut Tape,
        x: NodeId,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Result<NodeId, AutodiffError> {
        let rate = self.config.dropout;
        match rng {
            Some(rng) if rate > 0.0 => {
                let scale = 1.0 / (1.0 - rate);
                let keep: Vec<f64> = (0..tape.value(x).numel())
                    .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { scale })
                    .collect();
                tape.dropout(x, &keep)
            }
            _ => Ok(x),
        }
    }

    /// Regression score node: sigmoid(linear(first-token representation)).
    pub fn cross_score_on_tape(
        &self,
        tape: &mut Tape,
        leaves: &HashMap<String, NodeId>,
        seq: &TokenSequence,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<NodeId, ModelError> {
        let reps = self.encode_on_tape(tape, leaves, seq, dropout_rng)?;
        let first = tape.row_slice(reps, 0, 1)?;
        let logit = Self::linear(tape, leaves, first, "head.reg")?;
        Ok(tape.sigmoid(logit)?)
    }

    /// Masked mean-pooled sentence embedding node (d_model,).
    pub fn pooled_on_tape(
        &self,
        tape: &mut Tape,
        leaves: &HashMap<String, NodeId>,
        seq: &TokenSequence,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<NodeId, ModelError> {
        let reps = self.encode_on_tape(tape, leaves, seq, dropout_rng)?;
        Ok(tape.mean_pool_masked(reps, &seq.attention_mask)?)
    }

    /// Per-position vocabulary logits node (L, vocab_size).
    pub fn mlm_logits_on_tape(
        &self,
        tape: &mut Tape,
        leaves: &HashMap<String, NodeId>,
        seq: &TokenSequence,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<NodeId, ModelError> {
        let reps = self.encode_on_tape(tape, leaves, seq, dropout_rng)?;
        Ok(Self::linear(tape, leaves, reps, "head.mlm")?)
    }

    /// Relatedness score in (0,1) for an encoded pair. Pure inference.
    pub fn forward_cross(&self, seq: &TokenSequence) -> Result<f64, ModelError> {
        let mut tape = Tape::new();
        let leaves = self.add_params_to_tape(&mut tape);
        let score = self.cross_score_on_tape(&mut tape, &leaves, seq, None)?;
        Ok(tape.value(score).item()?)
    }

    /// Masked mean-pooled embedding of a single encoded sentence.
    pub fn forward_bi(&self, seq: &TokenSequence) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new();
        let leaves = self.add_params_to_tape(&mut tape);
        let pooled = self.pooled_on_tape(&mut tape, &leaves, seq, None)?;
        Ok(tape.value(pooled).data().to_vec())
    }

    /// MLM logits (L, vocab_size) for an encoded sequence.
    pub fn forward_mlm(&self, seq: &TokenSequence) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let leaves = self.add_params_to_tape(&mut tape);
        let logits = self.mlm_logits_on_tape(&mut tape, &leaves, seq, None)?;
        Ok(tape.value(logits).clone())
    }

    /// Cross-encoder predictions for a batch of labeled pairs.
    pub fn predict_pairs(
        &self,
        vocab: &Vocabulary,
        pairs: &[SentencePair],
        opts: TokenizeOptions,
    ) -> Result<Vec<f64>, ModelError> {
        let mut scores = Vec::with_capacity(pairs.len());
        for pair in pairs {
            let seq = text::encode_pair(
                &pair.sentence1,
                &pair.sentence2,
                vocab,
                self.config.max_len,
                opts,
            )?;
            scores.push(self.forward_cross(&seq)?);
        }
        Ok(scores)
    }
}

fn hex_digest(hasher: Sha256) -> String {
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}
