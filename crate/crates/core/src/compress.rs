//! Merging consecutive encoder frames that share a predicted token, and the
//! matching text-side token processing.

use std::fmt;
use std::str::FromStr;

use crate::ctc::{PredictionSeq, Vocab};
use crate::error::{usage, Error, Result};
use crate::numerics::{sinusoidal_embedding, Graph, Tensor, Var};

/// Maximal segment of frames with one predicted token, inclusive bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Run {
    pub start: usize,
    pub end: usize,
    pub token: usize,
}

impl Run {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MergeMode {
    Average,
    Attention,
    DiscreteKeepBlank,
    DiscreteRemoveBlank,
}

impl MergeMode {
    pub const ALL: [MergeMode; 4] = [
        MergeMode::Average,
        MergeMode::Attention,
        MergeMode::DiscreteKeepBlank,
        MergeMode::DiscreteRemoveBlank,
    ];

    /// Whether the merged sequence keeps one frame per blank run.
    pub fn keeps_blanks(self) -> bool {
        matches!(self, MergeMode::Average | MergeMode::DiscreteKeepBlank)
    }

    pub fn is_discrete(self) -> bool {
        matches!(
            self,
            MergeMode::DiscreteKeepBlank | MergeMode::DiscreteRemoveBlank
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MergeMode::Average => "average",
            MergeMode::Attention => "attention",
            MergeMode::DiscreteKeepBlank => "discrete",
            MergeMode::DiscreteRemoveBlank => "discrete_remove_blank",
        }
    }
}

impl fmt::Display for MergeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MergeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "average" => MergeMode::Average,
            "attention" => MergeMode::Attention,
            "discrete" | "discrete_keep_blank" => MergeMode::DiscreteKeepBlank,
            "discrete_remove_blank" => MergeMode::DiscreteRemoveBlank,
            other => return Err(Error::Config(format!("unknown merge mode `{other}`"))),
        })
    }
}

/// Merged encoder frames with their tokens and source-frame spans.
#[derive(Clone, Debug)]
pub struct CompressedSeq {
    /// `M × D`; `0 × D` when every frame was dropped.
    pub frames: Tensor,
    pub tokens: Vec<usize>,
    /// Inclusive `(start, end)` input frames each output frame stands for.
    pub spans: Vec<(usize, usize)>,
}

impl CompressedSeq {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Splits predictions into maximal constant-token runs.
pub fn segment_runs(preds: &PredictionSeq) -> Result<Vec<Run>> {
    let tokens = &preds.tokens;
    if tokens.is_empty() {
        return Err(usage("cannot segment an empty prediction sequence"));
    }
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..=tokens.len() {
        if i == tokens.len() || tokens[i] != tokens[start] {
            runs.push(Run {
                start,
                end: i - 1,
                token: tokens[start],
            });
            start = i;
        }
    }
    Ok(runs)
}

/// Output frame layout for a mode: `(token, window)` per merged frame.
///
/// Blank-dropping modes fold a blank run into the non-blank run that follows
/// it and discard trailing blank runs.
pub fn merge_plan(runs: &[Run], mode: MergeMode, vocab: Vocab) -> Vec<(usize, (usize, usize))> {
    if mode.keeps_blanks() {
        return runs.iter().map(|r| (r.token, (r.start, r.end))).collect();
    }
    let mut plan = Vec::new();
    let mut pending_blank: Option<usize> = None;
    for r in runs {
        if vocab.is_blank(r.token) {
            pending_blank = Some(r.start);
        } else {
            let start = pending_blank.take().unwrap_or(r.start);
            plan.push((r.token, (start, r.end)));
        }
    }
    plan
}

fn check_runs(runs: &[Run], frames: usize) -> Result<()> {
    let mut expect = 0;
    for r in runs {
        if r.start != expect || r.end < r.start {
            return Err(usage(format!("runs are not contiguous at frame {expect}")));
        }
        expect = r.end + 1;
    }
    if expect != frames {
        return Err(usage(format!(
            "runs cover {expect} frames but the encoder produced {frames}"
        )));
    }
    Ok(())
}

/// Graph form of average merging over `h` (`L × D`).
pub fn merge_average_node(graph: &mut Graph, h: Var, runs: &[Run]) -> Result<(Var, Vec<usize>, Vec<(usize, usize)>)> {
    check_runs(runs, graph.value(h).rows())?;
    let spans: Vec<(usize, usize)> = runs.iter().map(|r| (r.start, r.end)).collect();
    let out = graph.segment_mean(h, &spans);
    Ok((out, runs.iter().map(|r| r.token).collect(), spans))
}

/// One frame per run: the mean of the run's encoder outputs.
pub fn merge_average(h: &Tensor, runs: &[Run]) -> Result<CompressedSeq> {
    let mut g = Graph::new();
    let hv = g.input(h.clone());
    let (out, tokens, spans) = merge_average_node(&mut g, hv, runs)?;
    Ok(CompressedSeq {
        frames: g.value(out).clone(),
        tokens,
        spans,
    })
}

/// Projections for attention merging, both `D × D` (row-vector convention `h · W`).
#[derive(Clone, Debug)]
pub struct AttentionMergeParams {
    pub key_proj: Tensor,
    pub value_proj: Tensor,
}

impl AttentionMergeParams {
    pub fn new(key_proj: Tensor, value_proj: Tensor) -> Result<Self> {
        let d = key_proj.rows();
        for t in [&key_proj, &value_proj] {
            if t.shape() != [d, d] {
                return Err(Error::Shape(format!(
                    "attention merge projections must be {d}×{d}, got {:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self {
            key_proj,
            value_proj,
        })
    }

    pub fn dim(&self) -> usize {
        self.key_proj.rows()
    }
}

/// Graph form of attention merging. `key_proj`/`value_proj` are `D × D` nodes.
///
/// Output `u` (1-based) attends over its window with the fixed sinusoidal
/// query of position `u`, scaled by `1/sqrt(D)`.
pub fn merge_attention_node(
    graph: &mut Graph,
    h: Var,
    runs: &[Run],
    key_proj: Var,
    value_proj: Var,
    vocab: Vocab,
) -> Result<(Option<Var>, Vec<usize>, Vec<(usize, usize)>)> {
    let (frames, dim) = (graph.value(h).rows(), graph.value(h).cols());
    check_runs(runs, frames)?;
    let plan = merge_plan(runs, MergeMode::Attention, vocab);
    if plan.is_empty() {
        return Ok((None, vec![], vec![]));
    }
    let keys = graph.matmul(h, key_proj);
    let values = graph.matmul(h, value_proj);
    let scale = 1.0 / (dim as f64).sqrt();
    let mut outs = Vec::with_capacity(plan.len());
    for (u, &(_, (s, e))) in plan.iter().enumerate() {
        let q = graph.input(Tensor::row_vector(sinusoidal_embedding(u + 1, dim)));
        let k = graph.slice_rows(keys, s, e + 1);
        let v = graph.slice_rows(values, s, e + 1);
        let scores = graph.matmul_bt(q, k);
        let scores = graph.scale(scores, scale);
        let w = graph.softmax(scores);
        outs.push(graph.matmul(w, v));
    }
    let merged = graph.concat_rows(&outs);
    Ok((
        Some(merged),
        plan.iter().map(|p| p.0).collect(),
        plan.iter().map(|p| p.1).collect(),
    ))
}

/// Single-query attention over each non-blank run plus its preceding blank run.
pub fn merge_attention(
    h: &Tensor,
    runs: &[Run],
    params: &AttentionMergeParams,
    vocab: Vocab,
) -> Result<CompressedSeq> {
    if h.cols() != params.dim() {
        return Err(Error::Shape(format!(
            "encoder width {} does not match merge projections {}",
            h.cols(),
            params.dim()
        )));
    }
    let mut g = Graph::new();
    let hv = g.input(h.clone());
    let kv = g.input(params.key_proj.clone());
    let vv = g.input(params.value_proj.clone());
    let (out, tokens, spans) = merge_attention_node(&mut g, hv, runs, kv, vv, vocab)?;
    let frames = match out {
        Some(o) => g.value(o).clone(),
        None => Tensor::zeros(&[0, h.cols()]),
    };
    Ok(CompressedSeq {
        frames,
        tokens,
        spans,
    })
}

/// Token/span layout for discrete merging.
pub fn discrete_plan(runs: &[Run], keep_blank: bool, vocab: Vocab) -> Vec<(usize, (usize, usize))> {
    let mode = if keep_blank {
        MergeMode::DiscreteKeepBlank
    } else {
        MergeMode::DiscreteRemoveBlank
    };
    merge_plan(runs, mode, vocab)
}

/// Replaces each kept run by the embedding of its token.
pub fn merge_discrete(
    runs: &[Run],
    embedding: &Tensor,
    keep_blank: bool,
    vocab: Vocab,
) -> Result<CompressedSeq> {
    let plan = discrete_plan(runs, keep_blank, vocab);
    let dim = embedding.cols();
    let mut data = Vec::with_capacity(plan.len() * dim);
    for &(tok, _) in &plan {
        if tok >= embedding.rows() {
            return Err(usage(format!(
                "token {tok} outside embedding table of {} rows",
                embedding.rows()
            )));
        }
        data.extend_from_slice(embedding.row(tok));
    }
    Ok(CompressedSeq {
        frames: Tensor::matrix(plan.len(), dim, data)?,
        tokens: plan.iter().map(|p| p.0).collect(),
        spans: plan.iter().map(|p| p.1).collect(),
    })
}

/// Shapes source text to match the speech-side compressed sequence: blank
/// between consecutive tokens for blank-keeping modes, unchanged otherwise.
pub fn prepare_text_input(src_tokens: &[usize], mode: MergeMode, vocab: Vocab) -> Result<Vec<usize>> {
    for &t in src_tokens {
        vocab.check_label(t)?;
    }
    if !mode.keeps_blanks() {
        return Ok(src_tokens.to_vec());
    }
    let mut out = Vec::with_capacity(src_tokens.len() * 2);
    for (i, &t) in src_tokens.iter().enumerate() {
        if i > 0 {
            out.push(vocab.blank_id());
        }
        out.push(t);
    }
    Ok(out)
}

/// Average input time covered by one merged frame; `None` when nothing is left.
pub fn frame_span_ms(compressed: &CompressedSeq, input_frames: usize, base_frame_ms: f64) -> Option<f64> {
    frame_span_for(compressed.len(), input_frames, base_frame_ms)
}

pub fn frame_span_for(merged: usize, input_frames: usize, base_frame_ms: f64) -> Option<f64> {
    (merged > 0).then(|| input_frames as f64 * base_frame_ms / merged as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctc::collapse;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    const V: Vocab = Vocab::new(2);
    const A: usize = 0;
    const B: usize = 1;
    const BL: usize = 2;

    fn preds(t: &[usize]) -> PredictionSeq {
        PredictionSeq::new(t.to_vec())
    }

    fn frames(rows: usize, dim: usize, seed: u64) -> Tensor {
        let mut rng = Rng::new(seed);
        Tensor::matrix(rows, dim, (0..rows * dim).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn runs_examples() {
        let r = segment_runs(&preds(&[A, A, BL, B, B, B])).unwrap();
        assert_eq!(
            r,
            vec![
                Run { start: 0, end: 1, token: A },
                Run { start: 2, end: 2, token: BL },
                Run { start: 3, end: 5, token: B }
            ]
        );
        assert_eq!(segment_runs(&preds(&[A])).unwrap().len(), 1);
        assert_eq!(segment_runs(&preds(&[A, B, A])).unwrap().len(), 3);
        assert!(segment_runs(&preds(&[])).is_err());
    }

    #[test]
    fn average_examples() {
        let h = frames(6, 3, 1);
        let runs = segment_runs(&preds(&[A, A, BL, B, B, B])).unwrap();
        let c = merge_average(&h, &runs).unwrap();
        assert_eq!(c.len(), 3);
        for d in 0..3 {
            let expect = (h.row(0)[d] + h.row(1)[d]) / 2.0;
            assert!((c.frames.row(0)[d] - expect).abs() < 1e-15);
        }

        let runs = segment_runs(&preds(&[B; 6])).unwrap();
        let c = merge_average(&h, &runs).unwrap();
        assert_eq!(c.len(), 1);

        let runs = segment_runs(&preds(&[A, B, A, B, A, B])).unwrap();
        let c = merge_average(&h, &runs).unwrap();
        assert_eq!(c.frames, h);
    }

    #[test]
    fn attention_windows() {
        let h = frames(3, 4, 2);
        let eye = Tensor::matrix(4, 4, (0..16).map(|i| if i % 5 == 0 { 1.0 } else { 0.0 }).collect()).unwrap();
        let params = AttentionMergeParams::new(eye.clone(), eye.clone()).unwrap();
        let runs = segment_runs(&preds(&[BL, A, A])).unwrap();
        let c = merge_attention(&h, &runs, &params, V).unwrap();
        assert_eq!(c.tokens, vec![A]);
        assert_eq!(c.spans, vec![(0, 2)]);

        let runs = segment_runs(&preds(&[A, A, BL, B, B, B])).unwrap();
        let plan = merge_plan(&runs, MergeMode::Attention, V);
        assert_eq!(plan, vec![(A, (0, 1)), (B, (2, 5))]);
    }

    #[test]
    fn attention_zero_keys_is_uniform() {
        let h = frames(2, 4, 3);
        let eye = Tensor::matrix(4, 4, (0..16).map(|i| if i % 5 == 0 { 1.0 } else { 0.0 }).collect()).unwrap();
        let params = AttentionMergeParams::new(Tensor::zeros(&[4, 4]), eye).unwrap();
        let runs = segment_runs(&preds(&[A, B])).unwrap();
        let c = merge_attention(&h, &runs, &params, V).unwrap();
        assert_eq!(c.frames, h);

        // a wider window under zero keys averages values uniformly
        let h = frames(3, 4, 4);
        let runs = segment_runs(&preds(&[BL, BL, A])).unwrap();
        let c = merge_attention(&h, &runs, &params, V).unwrap();
        for d in 0..4 {
            let mean = (h.row(0)[d] + h.row(1)[d] + h.row(2)[d]) / 3.0;
            assert!((c.frames.row(0)[d] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_trailing_and_all_blank() {
        let h = frames(4, 2, 5);
        let eye = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let params = AttentionMergeParams::new(eye.clone(), eye).unwrap();
        let runs = segment_runs(&preds(&[A, BL, BL, BL])).unwrap();
        let c = merge_attention(&h, &runs, &params, V).unwrap();
        assert_eq!(c.spans, vec![(0, 0)]);
        let runs = segment_runs(&preds(&[BL; 4])).unwrap();
        let c = merge_attention(&h, &runs, &params, V).unwrap();
        assert!(c.is_empty());
        assert_eq!(c.frames.shape(), &[0, 2]);
    }

    #[test]
    fn discrete_examples() {
        let emb = frames(3, 2, 6);
        let runs = segment_runs(&preds(&[A, A, BL, B])).unwrap();
        let keep = merge_discrete(&runs, &emb, true, V).unwrap();
        assert_eq!(keep.tokens, vec![A, BL, B]);
        assert_eq!(keep.frames.row(1), emb.row(BL));
        let drop = merge_discrete(&runs, &emb, false, V).unwrap();
        assert_eq!(drop.tokens, vec![A, B]);
        let all_blank = segment_runs(&preds(&[BL, BL])).unwrap();
        assert!(merge_discrete(&all_blank, &emb, false, V).unwrap().is_empty());
        assert_eq!(merge_discrete(&all_blank, &emb, true, V).unwrap().len(), 1);
        let small = frames(2, 2, 7);
        assert!(merge_discrete(&runs, &small, true, V).is_err());
    }

    #[test]
    fn text_input_examples() {
        let (w1, w2) = (0, 1);
        assert_eq!(
            prepare_text_input(&[w1, w2], MergeMode::Average, V).unwrap(),
            vec![w1, BL, w2]
        );
        assert_eq!(
            prepare_text_input(&[w1, w2], MergeMode::Attention, V).unwrap(),
            vec![w1, w2]
        );
        assert_eq!(
            prepare_text_input(&[w1], MergeMode::Average, V).unwrap(),
            vec![w1]
        );
        assert!(prepare_text_input(&[BL], MergeMode::Average, V).is_err());
    }

    #[test]
    fn frame_span_examples() {
        assert_eq!(frame_span_for(100, 100, 40.0), Some(40.0));
        assert_eq!(frame_span_for(20, 100, 40.0), Some(200.0));
        assert_eq!(frame_span_for(0, 100, 40.0), None);
    }

    #[test]
    fn mode_names_round_trip() {
        for m in MergeMode::ALL {
            assert_eq!(m.as_str().parse::<MergeMode>().unwrap(), m);
        }
        assert!("bogus".parse::<MergeMode>().is_err());
    }

    fn pred_strategy() -> impl Strategy<Value = Vec<usize>> {
        prop::collection::vec(0usize..3, 1..24)
    }

    proptest! {
        #[test]
        fn remove_blank_tokens_equal_collapse(t in pred_strategy()) {
            let p = preds(&t);
            let runs = segment_runs(&p).unwrap();
            let emb = Tensor::zeros(&[3, 1]);
            let c = merge_discrete(&runs, &emb, false, V).unwrap();
            prop_assert_eq!(c.tokens, collapse(&p, V));
        }

        #[test]
        fn average_preserves_run_sums(t in pred_strategy(), seed in 0u64..1000) {
            let h = frames(t.len(), 3, seed);
            let runs = segment_runs(&preds(&t)).unwrap();
            let c = merge_average(&h, &runs).unwrap();
            prop_assert_eq!(c.len(), runs.len());
            for (o, r) in runs.iter().enumerate() {
                for d in 0..3 {
                    let sum: f64 = (r.start..=r.end).map(|l| h.row(l)[d]).sum();
                    prop_assert!((c.frames.row(o)[d] * r.len() as f64 - sum).abs() < 1e-10);
                }
            }
        }
    }
}
