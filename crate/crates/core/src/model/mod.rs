//! The CTC-GMM network: speech encoder with a CTC branch, compression,
//! text embedding, shared encoder and transducer, plus training.

mod checkpoint;
pub(crate) mod config;
mod encoder;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{parse_key_values, ModelConfig};
pub use encoder::CausalEncoder;
pub use train::{
    attach_features, train, Adam, MetricRecord, TrainOptions, TrainReport, Trainer,
};

use log::warn;

use crate::compress::{discrete_plan, merge_attention_node, merge_average_node, prepare_text_input, segment_runs, CompressedSeq, MergeMode};
use crate::ctc::{ctc_loss_node, ctc_predict_argmax, ctc_predict_sampled, CtcPosteriorSeq, PredictionSeq, Vocab};
use crate::error::{usage, Error, Result};
use crate::numerics::{GradBuffer, Graph, ParamId, ParamStore, Rng, Tensor, Var};
use crate::transducer::{beam_search, greedy_search, init_matrix, init_zeros, rnnt_loss_node, BeamConfig, DecodeStats, Transducer};

/// How per-frame CTC decisions are taken before compression.
#[derive(Debug)]
pub enum Selection<'a> {
    Argmax,
    /// Top-N sampling with the configured `top_n`.
    Sample(&'a mut Rng),
    /// Externally fixed decisions, one per encoder frame.
    Fixed(&'a PredictionSeq),
}

/// One training example.
#[derive(Clone, Copy, Debug)]
pub enum Batch<'a> {
    Speech {
        features: &'a Tensor,
        src_labels: &'a [usize],
        tgt_labels: &'a [usize],
    },
    Text {
        src_tokens: &'a [usize],
        tgt_tokens: &'a [usize],
    },
}

/// Weighted objective terms; `total = ctc_weight·ctc_asr + rnnt_st + rnnt_mt`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub ctc_asr: f64,
    pub rnnt_st: f64,
    pub rnnt_mt: f64,
    pub total: f64,
    /// A term was dropped (infeasible CTC labels or empty compressed input).
    pub skipped: bool,
}

impl LossBreakdown {
    pub fn add(&mut self, other: &LossBreakdown) {
        self.ctc_asr += other.ctc_asr;
        self.rnnt_st += other.rnnt_st;
        self.rnnt_mt += other.rnnt_mt;
        self.total += other.total;
        self.skipped |= other.skipped;
    }
}

/// Graph nodes of the speech path up to the shared-encoder input.
#[derive(Clone, Debug)]
pub struct SpeechNodes {
    pub log_probs: Var,
    pub encoder_out: Var,
    pub predictions: PredictionSeq,
    /// `None` when compression left nothing.
    pub compressed: Option<Var>,
    pub tokens: Vec<usize>,
    pub spans: Vec<(usize, usize)>,
}

/// Result of decoding one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodeOutput {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub stats: DecodeStats,
    /// Encoder frames before compression.
    pub encoder_frames: usize,
    /// Frames seen by the shared encoder and the transducer.
    pub compressed_frames: usize,
    /// Compression removed every frame; nothing was decoded.
    pub empty: bool,
}

#[derive(Clone, Debug)]
pub struct CtcGmmModel {
    config: ModelConfig,
    store: ParamStore,
    src_vocab: Vocab,
    tgt_vocab: Vocab,
    speech_in: ParamId,
    speech_in_bias: ParamId,
    speech_encoder: CausalEncoder,
    ctc_w: ParamId,
    ctc_b: ParamId,
    text_embed: ParamId,
    discrete_embed: Option<ParamId>,
    merge_key: Option<ParamId>,
    merge_value: Option<ParamId>,
    shared_encoder: CausalEncoder,
    transducer: Transducer,
}

impl CtcGmmModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::new(config.seed);
        let mut store = ParamStore::new();
        let d = config.encoder_dim;
        let src_vocab = Vocab::new(config.src_vocab);
        let tgt_vocab = Vocab::new(config.tgt_vocab);
        let stacked = config.feature_dim * config.time_reduction;

        let speech_in = store.add("speech.in_proj", init_matrix(&mut rng, stacked, d));
        let speech_in_bias = store.add("speech.in_bias", init_zeros(d));
        let speech_encoder = CausalEncoder::new(&mut store, &mut rng, "speech", d, config.ffn_dim, config.speech_encoder_layers);
        let ctc_w = store.add("ctc.w", init_matrix(&mut rng, d, src_vocab.width()));
        let ctc_b = store.add("ctc.b", init_zeros(src_vocab.width()));
        let text_embed = store.add("text.embed", unit_normal(&mut rng, src_vocab.width(), d));
        let discrete = config.merge_mode.is_some_and(MergeMode::is_discrete);
        let discrete_embed = (discrete && !config.share_discrete_embedding)
            .then(|| store.add("discrete.embed", unit_normal(&mut rng, src_vocab.width(), d)));
        let (merge_key, merge_value) = if config.merge_mode == Some(MergeMode::Attention) {
            let k = store.add("merge.key_proj", init_matrix(&mut rng, d, d));
            let mut eye = Tensor::zeros(&[d, d]);
            (0..d).for_each(|i| eye.row_mut(i)[i] = 1.0);
            (Some(k), Some(store.add("merge.value_proj", eye)))
        } else {
            (None, None)
        };
        let shared_encoder = CausalEncoder::new(&mut store, &mut rng, "shared", d, config.ffn_dim, config.shared_encoder_layers);
        let transducer = Transducer::new(
            &mut store,
            &mut rng,
            tgt_vocab,
            d,
            config.pred_embed_dim,
            config.pred_hidden_dim,
            config.joint_dim,
        );
        Ok(Self {
            config,
            store,
            src_vocab,
            tgt_vocab,
            speech_in,
            speech_in_bias,
            speech_encoder,
            ctc_w,
            ctc_b,
            text_embed,
            discrete_embed,
            merge_key,
            merge_value,
            shared_encoder,
            transducer,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn transducer(&self) -> &Transducer {
        &self.transducer
    }

    pub fn src_vocab(&self) -> Vocab {
        self.src_vocab
    }

    pub fn tgt_vocab(&self) -> Vocab {
        self.tgt_vocab
    }

    /// Table used for discrete merging.
    pub fn discrete_table(&self) -> ParamId {
        self.discrete_embed.unwrap_or(self.text_embed)
    }

    pub fn text_table(&self) -> ParamId {
        self.text_embed
    }

    /// Encoder frames produced from `frames` input frames.
    pub fn encoder_len(&self, frames: usize) -> usize {
        frames / self.config.time_reduction
    }

    fn stack_frames(&self, features: &Tensor) -> Result<Tensor> {
        if features.shape().len() != 2 || features.cols() != self.config.feature_dim {
            return Err(Error::Shape(format!(
                "features must be frames×{}, got {:?}",
                self.config.feature_dim,
                features.shape()
            )));
        }
        let tr = self.config.time_reduction;
        let len = self.encoder_len(features.rows());
        if len == 0 {
            return Err(usage(format!("{} frames is shorter than time_reduction {tr}", features.rows())));
        }
        let width = tr * self.config.feature_dim;
        Tensor::matrix(len, width, features.data()[..len * width].to_vec())
    }

    /// Speech encoder output (`L × D`).
    pub fn speech_encoder_graph(&self, g: &mut Graph, features: &Tensor) -> Result<Var> {
        let x = g.input(self.stack_frames(features)?);
        let (w, b) = (g.param(self.speech_in), g.param(self.speech_in_bias));
        let x = g.matmul(x, w);
        let x = g.add_row(x, b);
        Ok(self.speech_encoder.forward(g, x))
    }

    /// Speech path through CTC decisions and compression.
    pub fn speech_graph(&self, g: &mut Graph, features: &Tensor, selection: Selection<'_>) -> Result<SpeechNodes> {
        let h = self.speech_encoder_graph(g, features)?;
        let (w, b) = (g.param(self.ctc_w), g.param(self.ctc_b));
        let logits = g.matmul(h, w);
        let logits = g.add_row(logits, b);
        let log_probs = g.log_softmax(logits);
        let len = g.value(h).rows();
        let predictions = match selection {
            Selection::Argmax => ctc_predict_argmax(&CtcPosteriorSeq::new(g.value(log_probs).clone())?),
            Selection::Sample(rng) => {
                let post = CtcPosteriorSeq::new(g.value(log_probs).clone())?;
                ctc_predict_sampled(&post, self.config.top_n, rng)?
            }
            Selection::Fixed(p) => {
                if p.len() != len {
                    return Err(usage(format!("{} fixed predictions for {len} encoder frames", p.len())));
                }
                p.clone()
            }
        };
        let (compressed, tokens, spans) = match self.config.merge_mode {
            None => (Some(h), predictions.tokens.clone(), (0..len).map(|i| (i, i)).collect()),
            Some(mode) => {
                let runs = segment_runs(&predictions)?;
                match mode {
                    MergeMode::Average => {
                        let (v, t, s) = merge_average_node(g, h, &runs)?;
                        (Some(v), t, s)
                    }
                    MergeMode::Attention => {
                        let k = g.param(self.merge_key.expect("attention params"));
                        let v = g.param(self.merge_value.expect("attention params"));
                        merge_attention_node(g, h, &runs, k, v, self.src_vocab)?
                    }
                    MergeMode::DiscreteKeepBlank | MergeMode::DiscreteRemoveBlank => {
                        let plan = discrete_plan(&runs, mode.keeps_blanks(), self.src_vocab);
                        let tokens: Vec<usize> = plan.iter().map(|p| p.0).collect();
                        let spans = plan.iter().map(|p| p.1).collect();
                        if tokens.is_empty() {
                            (None, tokens, spans)
                        } else {
                            let table = self.discrete_table();
                            (Some(self.embed_tokens(g, table, &tokens)?), tokens, spans)
                        }
                    }
                }
            }
        };
        Ok(SpeechNodes {
            log_probs,
            encoder_out: h,
            predictions,
            compressed,
            tokens,
            spans,
        })
    }

    /// Token pattern fed to the text embedding for `src_tokens`.
    pub fn text_input_tokens(&self, src_tokens: &[usize]) -> Result<Vec<usize>> {
        match self.config.merge_mode {
            Some(mode) => prepare_text_input(src_tokens, mode, self.src_vocab),
            None => {
                for &t in src_tokens {
                    self.src_vocab.check_label(t)?;
                }
                Ok(src_tokens.to_vec())
            }
        }
    }

    pub fn text_graph(&self, g: &mut Graph, src_tokens: &[usize]) -> Result<Var> {
        if src_tokens.is_empty() {
            return Err(usage("empty source text"));
        }
        let tokens = self.text_input_tokens(src_tokens)?;
        self.embed_tokens(g, self.text_embed, &tokens)
    }

    fn embed_tokens(&self, g: &mut Graph, table: ParamId, tokens: &[usize]) -> Result<Var> {
        let t = g.param(table);
        g.gather(t, tokens)
    }

    pub fn shared_graph(&self, g: &mut Graph, x: Var) -> Var {
        self.shared_encoder.forward(g, x)
    }

    /// CTC posteriors and the compressed shared-encoder input.
    pub fn forward_speech(&self, features: &Tensor, selection: Selection<'_>) -> Result<(CtcPosteriorSeq, CompressedSeq)> {
        let mut g = Graph::with_params(&self.store);
        let nodes = self.speech_graph(&mut g, features, selection)?;
        let post = CtcPosteriorSeq::new(g.value(nodes.log_probs).clone())?;
        let frames = match nodes.compressed {
            Some(v) => g.value(v).clone(),
            None => Tensor::zeros(&[0, self.config.encoder_dim]),
        };
        Ok((
            post,
            CompressedSeq {
                frames,
                tokens: nodes.tokens,
                spans: nodes.spans,
            },
        ))
    }

    /// Embedded text input (`M × D`).
    pub fn forward_text(&self, src_tokens: &[usize]) -> Result<Tensor> {
        let mut g = Graph::with_params(&self.store);
        let v = self.text_graph(&mut g, src_tokens)?;
        Ok(g.value(v).clone())
    }

    pub fn encode_speech(&self, features: &Tensor) -> Result<Tensor> {
        let mut g = Graph::with_params(&self.store);
        let h = self.speech_encoder_graph(&mut g, features)?;
        Ok(g.value(h).clone())
    }

    pub fn encode_shared(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 2 || x.cols() != self.config.encoder_dim || x.rows() == 0 {
            return Err(Error::Shape(format!("shared encoder input must be M×{}", self.config.encoder_dim)));
        }
        let mut g = Graph::with_params(&self.store);
        let xv = g.input(x.clone());
        let out = self.shared_graph(&mut g, xv);
        Ok(g.value(out).clone())
    }

    /// Builds the objective of one example on `g`; `None` when every term was dropped.
    pub fn loss_graph(&self, g: &mut Graph, batch: &Batch<'_>, selection: Selection<'_>) -> Result<(Option<Var>, LossBreakdown)> {
        let mut parts = LossBreakdown::default();
        match *batch {
            Batch::Speech {
                features,
                src_labels,
                tgt_labels,
            } => {
                if src_labels.is_empty() || tgt_labels.is_empty() {
                    return Err(usage("speech example with empty labels"));
                }
                let nodes = self.speech_graph(g, features, selection)?;
                let mut total = None;
                match ctc_loss_node(g, nodes.log_probs, src_labels)? {
                    Some(c) => {
                        parts.ctc_asr = g.value(c).item();
                        total = Some(g.scale(c, self.config.ctc_weight));
                    }
                    None => {
                        warn!("CTC labels infeasible for {} frames; term skipped", g.value(nodes.log_probs).rows());
                        parts.skipped = true;
                    }
                }
                match nodes.compressed {
                    Some(x) => {
                        let enc = self.shared_graph(g, x);
                        let r = rnnt_loss_node(g, enc, tgt_labels, &self.transducer.predictor, &self.transducer.joint)?;
                        parts.rnnt_st = g.value(r).item();
                        total = Some(match total {
                            Some(t) => g.add(t, r),
                            None => r,
                        });
                    }
                    None => {
                        warn!("compression produced an empty sequence; transducer term skipped");
                        parts.skipped = true;
                    }
                }
                parts.total = self.config.ctc_weight * parts.ctc_asr + parts.rnnt_st;
                Ok((total, parts))
            }
            Batch::Text { src_tokens, tgt_tokens } => {
                if tgt_tokens.is_empty() {
                    return Err(usage("text example with empty target"));
                }
                let x = self.text_graph(g, src_tokens)?;
                let enc = self.shared_graph(g, x);
                let r = rnnt_loss_node(g, enc, tgt_tokens, &self.transducer.predictor, &self.transducer.joint)?;
                parts.rnnt_mt = g.value(r).item();
                parts.total = parts.rnnt_mt;
                Ok((Some(r), parts))
            }
        }
    }

    /// Loss of one example without gradients.
    pub fn compute_loss(&self, batch: &Batch<'_>, selection: Selection<'_>) -> Result<LossBreakdown> {
        let mut g = Graph::with_params(&self.store);
        Ok(self.loss_graph(&mut g, batch, selection)?.1)
    }

    /// Loss of one example and its parameter gradients.
    pub fn loss_and_grads(&self, batch: &Batch<'_>, selection: Selection<'_>) -> Result<(LossBreakdown, GradBuffer)> {
        let mut g = Graph::with_params(&self.store);
        let (root, parts) = self.loss_graph(&mut g, batch, selection)?;
        match root {
            Some(r) => {
                g.backward(r)?;
                Ok((parts, g.param_grads(self.store.len())))
            }
            None => Ok((parts, GradBuffer::new(self.store.len()))),
        }
    }

    /// Shared-encoder output for decoding, with `(L, M)`; `None` when compression is empty.
    pub fn decoder_input(&self, features: &Tensor) -> Result<(Option<Tensor>, usize, usize)> {
        let mut g = Graph::with_params(&self.store);
        let nodes = self.speech_graph(&mut g, features, Selection::Argmax)?;
        let len = g.value(nodes.encoder_out).rows();
        match nodes.compressed {
            Some(x) => {
                let m = g.value(x).rows();
                let out = self.shared_graph(&mut g, x);
                Ok((Some(g.value(out).clone()), len, m))
            }
            None => Ok((None, len, 0)),
        }
    }

    /// Argmax CTC decisions, compression, shared encoder, then beam search of width `beam`.
    pub fn decode(&self, features: &Tensor, beam: usize) -> Result<DecodeOutput> {
        let cfg = BeamConfig {
            width: beam,
            max_symbols_per_frame: self.config.max_symbols_per_frame,
            max_output_len: None,
        };
        self.decode_with(features, |store, enc, t| beam_search(store, enc, cfg, &t.predictor, &t.joint))
    }

    pub fn decode_greedy(&self, features: &Tensor) -> Result<DecodeOutput> {
        let cap = self.config.max_symbols_per_frame;
        self.decode_with(features, |store, enc, t| greedy_search(store, enc, cap, &t.predictor, &t.joint))
    }

    /// Decodes source text through the text embedding and shared encoder.
    pub fn decode_text(&self, src_tokens: &[usize], beam: usize) -> Result<DecodeOutput> {
        let mut g = Graph::with_params(&self.store);
        let x = self.text_graph(&mut g, src_tokens)?;
        let m = g.value(x).rows();
        let out = self.shared_graph(&mut g, x);
        let cfg = BeamConfig {
            width: beam,
            max_symbols_per_frame: self.config.max_symbols_per_frame,
            max_output_len: None,
        };
        let t = &self.transducer;
        let (hyp, stats) = beam_search(&self.store, g.value(out), cfg, &t.predictor, &t.joint)?;
        Ok(DecodeOutput {
            tokens: hyp.tokens,
            log_prob: hyp.log_prob,
            stats,
            encoder_frames: m,
            compressed_frames: m,
            empty: false,
        })
    }

    fn decode_with<F>(&self, features: &Tensor, search: F) -> Result<DecodeOutput>
    where
        F: FnOnce(&ParamStore, &Tensor, &Transducer) -> Result<(crate::transducer::Hypothesis, DecodeStats)>,
    {
        let (enc, len, m) = self.decoder_input(features)?;
        let Some(enc) = enc else {
            return Ok(DecodeOutput {
                tokens: vec![],
                log_prob: 0.0,
                stats: DecodeStats::default(),
                encoder_frames: len,
                compressed_frames: 0,
                empty: true,
            });
        };
        let (hyp, stats) = search(&self.store, &enc, &self.transducer)?;
        Ok(DecodeOutput {
            tokens: hyp.tokens,
            log_prob: hyp.log_prob,
            stats,
            encoder_frames: len,
            compressed_frames: m,
            empty: false,
        })
    }
}

fn unit_normal(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).expect("shape")
}
