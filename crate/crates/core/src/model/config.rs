use std::fmt::Write as _;
use std::path::Path;

use crate::compress::MergeMode;
use crate::error::{Error, Result};

/// Architecture, objective and optimizer settings.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub encoder_dim: usize,
    pub speech_encoder_layers: usize,
    pub shared_encoder_layers: usize,
    pub ffn_dim: usize,
    /// Frames stacked per encoder step (4 or 8).
    pub time_reduction: usize,
    /// `None` feeds the speech encoder output uncompressed (baseline).
    pub merge_mode: Option<MergeMode>,
    pub top_n: usize,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub ctc_weight: f64,
    pub use_mt_text: bool,
    /// Sample CTC predictions during training instead of taking the argmax.
    pub sample_predictions: bool,
    /// Discrete merging reuses the text embedding table.
    pub share_discrete_embedding: bool,
    pub pred_embed_dim: usize,
    pub pred_hidden_dim: usize,
    pub joint_dim: usize,
    pub beam_width: usize,
    pub max_symbols_per_frame: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub warmup_steps: usize,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_dim: 16,
            encoder_dim: 64,
            speech_encoder_layers: 2,
            shared_encoder_layers: 2,
            ffn_dim: 128,
            time_reduction: 4,
            merge_mode: Some(MergeMode::Average),
            top_n: 5,
            src_vocab: 16,
            tgt_vocab: 28,
            ctc_weight: 0.1,
            use_mt_text: true,
            sample_predictions: true,
            share_discrete_embedding: true,
            pred_embed_dim: 32,
            pred_hidden_dim: 64,
            joint_dim: 64,
            beam_width: 4,
            max_symbols_per_frame: 10,
            learning_rate: 2e-3,
            beta1: 0.9,
            beta2: 0.98,
            adam_eps: 1e-9,
            warmup_steps: 100,
            clip_norm: 5.0,
            seed: 1,
        }
    }
}

/// Keys that change parameter shapes; a checkpoint must agree on all of them.
const ARCH_KEYS: &[&str] = &[
    "feature_dim",
    "encoder_dim",
    "speech_encoder_layers",
    "shared_encoder_layers",
    "ffn_dim",
    "time_reduction",
    "merge_mode",
    "src_vocab",
    "tgt_vocab",
    "share_discrete_embedding",
    "pred_embed_dim",
    "pred_hidden_dim",
    "joint_dim",
];

pub(crate) fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

pub(crate) fn parse_merge_mode(value: &str) -> Result<Option<MergeMode>> {
    if value == "none" {
        return Ok(None);
    }
    value
        .parse()
        .map(Some)
        .map_err(|_| Error::Config(format!("unknown merge_mode {value:?}")))
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.ctc_weight > 0.0) || !self.ctc_weight.is_finite() {
            return bad(format!("ctc_weight must be > 0, got {}", self.ctc_weight));
        }
        if ![4, 8].contains(&self.time_reduction) {
            return bad(format!("time_reduction must be 4 or 8, got {}", self.time_reduction));
        }
        if self.speech_encoder_layers == 0 || self.shared_encoder_layers == 0 {
            return bad("layer counts must be >= 1".into());
        }
        for (k, v) in [
            ("feature_dim", self.feature_dim),
            ("encoder_dim", self.encoder_dim),
            ("ffn_dim", self.ffn_dim),
            ("src_vocab", self.src_vocab),
            ("tgt_vocab", self.tgt_vocab),
            ("pred_embed_dim", self.pred_embed_dim),
            ("pred_hidden_dim", self.pred_hidden_dim),
            ("joint_dim", self.joint_dim),
            ("beam_width", self.beam_width),
            ("max_symbols_per_frame", self.max_symbols_per_frame),
        ] {
            if v == 0 {
                return bad(format!("{k} must be >= 1"));
            }
        }
        if self.top_n == 0 || self.top_n > self.src_vocab + 1 {
            return bad(format!("top_n must be in 1..={}", self.src_vocab + 1));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("learning_rate must be > 0 and betas in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) || !(self.clip_norm > 0.0) {
            return bad("adam_eps and clip_norm must be > 0".into());
        }
        Ok(())
    }

    /// Sets one field from its text form. Returns `Ok(false)` for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "feature_dim" => self.feature_dim = parse_value(key, value)?,
            "encoder_dim" => self.encoder_dim = parse_value(key, value)?,
            "speech_encoder_layers" => self.speech_encoder_layers = parse_value(key, value)?,
            "shared_encoder_layers" => self.shared_encoder_layers = parse_value(key, value)?,
            "ffn_dim" => self.ffn_dim = parse_value(key, value)?,
            "time_reduction" => self.time_reduction = parse_value(key, value)?,
            "merge_mode" => self.merge_mode = parse_merge_mode(value)?,
            "top_n" => self.top_n = parse_value(key, value)?,
            "src_vocab" => self.src_vocab = parse_value(key, value)?,
            "tgt_vocab" => self.tgt_vocab = parse_value(key, value)?,
            "ctc_weight" => self.ctc_weight = parse_value(key, value)?,
            "use_mt_text" => self.use_mt_text = parse_value(key, value)?,
            "sample_predictions" => self.sample_predictions = parse_value(key, value)?,
            "share_discrete_embedding" => self.share_discrete_embedding = parse_value(key, value)?,
            "pred_embed_dim" => self.pred_embed_dim = parse_value(key, value)?,
            "pred_hidden_dim" => self.pred_hidden_dim = parse_value(key, value)?,
            "joint_dim" => self.joint_dim = parse_value(key, value)?,
            "beam_width" => self.beam_width = parse_value(key, value)?,
            "max_symbols_per_frame" => self.max_symbols_per_frame = parse_value(key, value)?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "beta1" => self.beta1 = parse_value(key, value)?,
            "beta2" => self.beta2 = parse_value(key, value)?,
            "adam_eps" => self.adam_eps = parse_value(key, value)?,
            "warmup_steps" => self.warmup_steps = parse_value(key, value)?,
            "clip_norm" => self.clip_norm = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mode = self.merge_mode.map_or("none", MergeMode::as_str);
        vec![
            ("feature_dim", self.feature_dim.to_string()),
            ("encoder_dim", self.encoder_dim.to_string()),
            ("speech_encoder_layers", self.speech_encoder_layers.to_string()),
            ("shared_encoder_layers", self.shared_encoder_layers.to_string()),
            ("ffn_dim", self.ffn_dim.to_string()),
            ("time_reduction", self.time_reduction.to_string()),
            ("merge_mode", mode.to_string()),
            ("top_n", self.top_n.to_string()),
            ("src_vocab", self.src_vocab.to_string()),
            ("tgt_vocab", self.tgt_vocab.to_string()),
            ("ctc_weight", self.ctc_weight.to_string()),
            ("use_mt_text", self.use_mt_text.to_string()),
            ("sample_predictions", self.sample_predictions.to_string()),
            ("share_discrete_embedding", self.share_discrete_embedding.to_string()),
            ("pred_embed_dim", self.pred_embed_dim.to_string()),
            ("pred_hidden_dim", self.pred_hidden_dim.to_string()),
            ("joint_dim", self.joint_dim.to_string()),
            ("beam_width", self.beam_width.to_string()),
            ("max_symbols_per_frame", self.max_symbols_per_frame.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("warmup_steps", self.warmup_steps.to_string()),
            ("clip_norm", self.clip_norm.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    pub fn from_kv_str(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        for (line, key, value) in parse_key_values(text, origin)? {
            if !cfg.set(&key, &value)? {
                return Err(Error::Parse {
                    path: origin.to_path_buf(),
                    line,
                    msg: format!("unknown key {key:?}"),
                });
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Errors naming the first architecture field that differs.
    pub fn check_compatible(&self, other: &ModelConfig) -> Result<()> {
        let mine = self.entries();
        let theirs = other.entries();
        for ((k, a), (_, b)) in mine.iter().zip(&theirs) {
            if ARCH_KEYS.contains(k) && a != b {
                return Err(Error::Checkpoint(format!("{k} mismatch: config has {a}, checkpoint has {b}")));
            }
        }
        Ok(())
    }
}

/// `key=value` lines; `#` starts a comment, blank lines are skipped.
/// Returns `(line number, key, value)` triples.
pub fn parse_key_values(text: &str, origin: &Path) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            msg: "expected key=value".into(),
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                msg: "empty key".into(),
            });
        }
        out.push((i + 1, k.to_string(), v.to_string()));
    }
    Ok(out)
}
