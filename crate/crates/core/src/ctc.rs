//! CTC loss over encoder posteriors and per-frame token prediction.

use crate::error::{usage, Error, Result};
use crate::numerics::{argmax, log_add, Graph, Rng, Tensor, Var};

/// Token inventory with a trailing blank: regular ids are `0..size`, blank is `size`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Vocab {
    size: usize,
}

impl Vocab {
    pub const fn new(size: usize) -> Self {
        Self { size }
    }

    /// Number of regular tokens.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn blank_id(&self) -> usize {
        self.size
    }

    /// Regular tokens plus blank.
    pub fn width(&self) -> usize {
        self.size + 1
    }

    pub fn is_blank(&self, token: usize) -> bool {
        token == self.size
    }

    pub fn check_label(&self, token: usize) -> Result<()> {
        if token >= self.size {
            return Err(usage(format!(
                "token {token} outside vocabulary of {} regular tokens",
                self.size
            )));
        }
        Ok(())
    }
}

/// Per-frame log-softmax outputs of the CTC head, `L × (size + 1)`.
#[derive(Clone, Debug)]
pub struct CtcPosteriorSeq {
    log_probs: Tensor,
}

impl CtcPosteriorSeq {
    /// Wraps log-probabilities, checking that each row is a distribution.
    pub fn new(log_probs: Tensor) -> Result<Self> {
        for l in 0..log_probs.rows() {
            let mass: f64 = log_probs.row(l).iter().map(|v| v.exp()).sum();
            if (mass - 1.0).abs() > 1e-6 {
                return Err(usage(format!("posterior row {l} sums to {mass}")));
            }
        }
        Ok(Self { log_probs })
    }

    /// Row-wise log-softmax of raw logits.
    pub fn from_logits(logits: &Tensor) -> Self {
        let mut t = logits.clone();
        for l in 0..t.rows() {
            crate::numerics::log_softmax_in_place(t.row_mut(l));
        }
        Self { log_probs: t }
    }

    pub fn log_probs(&self) -> &Tensor {
        &self.log_probs
    }

    pub fn len(&self) -> usize {
        self.log_probs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.log_probs.cols()
    }
}

/// Per-frame predicted tokens, blank allowed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PredictionSeq {
    pub tokens: Vec<usize>,
}

impl PredictionSeq {
    pub fn new(tokens: Vec<usize>) -> Self {
        Self { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Result of [`ctc_loss`].
#[derive(Clone, Debug)]
pub struct CtcLoss {
    /// `-log P(labels | posteriors)`; `+inf` when infeasible.
    pub loss: f64,
    /// d loss / d log_probs, `L × width`; zero when infeasible.
    pub grad: Tensor,
    pub feasible: bool,
}

/// Minimum number of frames needed to emit `labels` under CTC.
pub fn min_frames(labels: &[usize]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Negative log-likelihood of `labels` summed over all blank-augmented
/// alignments, with its gradient with respect to the log-probabilities.
pub fn ctc_loss(posteriors: &CtcPosteriorSeq, labels: &[usize]) -> Result<CtcLoss> {
    let lp = posteriors.log_probs();
    let frames = lp.rows();
    let width = lp.cols();
    let blank = width - 1;
    if frames == 0 {
        return Err(usage("ctc_loss needs at least one frame"));
    }
    if let Some(&bad) = labels.iter().find(|&&t| t >= blank) {
        return Err(usage(format!("label {bad} is blank or out of range")));
    }
    if frames < min_frames(labels) {
        return Ok(CtcLoss {
            loss: f64::INFINITY,
            grad: Tensor::zeros(lp.shape()),
            feasible: false,
        });
    }

    // Extended label sequence: blank, l1, blank, l2, ..., blank.
    let ext: Vec<usize> = std::iter::once(blank)
        .chain(labels.iter().flat_map(|&t| [t, blank]))
        .collect();
    let s_len = ext.len();
    let can_skip = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];
    let neg = f64::NEG_INFINITY;

    let mut alpha = vec![neg; frames * s_len];
    alpha[0] = lp.row(0)[ext[0]];
    if s_len > 1 {
        alpha[1] = lp.row(0)[ext[1]];
    }
    for l in 1..frames {
        let row = lp.row(l);
        for s in 0..s_len {
            let prev = &alpha[(l - 1) * s_len..l * s_len];
            let mut acc = prev[s];
            if s >= 1 {
                acc = log_add(acc, prev[s - 1]);
            }
            if can_skip(s) {
                acc = log_add(acc, prev[s - 2]);
            }
            alpha[l * s_len + s] = acc + row[ext[s]];
        }
    }

    let mut beta = vec![neg; frames * s_len];
    let last = frames - 1;
    beta[last * s_len + s_len - 1] = lp.row(last)[ext[s_len - 1]];
    if s_len > 1 {
        beta[last * s_len + s_len - 2] = lp.row(last)[ext[s_len - 2]];
    }
    for l in (0..last).rev() {
        let row = lp.row(l);
        for s in 0..s_len {
            let next = &beta[(l + 1) * s_len..(l + 2) * s_len];
            let mut acc = next[s];
            if s + 1 < s_len {
                acc = log_add(acc, next[s + 1]);
            }
            if s + 2 < s_len && ext[s + 2] != blank && ext[s + 2] != ext[s] {
                acc = log_add(acc, next[s + 2]);
            }
            beta[l * s_len + s] = acc + row[ext[s]];
        }
    }

    let mut log_p = alpha[last * s_len + s_len - 1];
    if s_len > 1 {
        log_p = log_add(log_p, alpha[last * s_len + s_len - 2]);
    }

    // d(-log P)/d lp[l,k] = -sum_{s: ext[s]=k} exp(alpha + beta - lp[l,k] - log P)
    let mut grad = Tensor::zeros(lp.shape());
    for l in 0..frames {
        let row = lp.row(l);
        let g = grad.row_mut(l);
        for s in 0..s_len {
            let a = alpha[l * s_len + s];
            let b = beta[l * s_len + s];
            if a == neg || b == neg {
                continue;
            }
            let k = ext[s];
            g[k] -= (a + b - row[k] - log_p).exp();
        }
    }

    Ok(CtcLoss {
        loss: -log_p,
        grad,
        feasible: true,
    })
}

/// Adds the CTC loss of `log_probs` (a graph node) as a differentiable scalar.
///
/// Returns `None` for infeasible labels; the caller skips the term.
pub fn ctc_loss_node(graph: &mut Graph, log_probs: Var, labels: &[usize]) -> Result<Option<Var>> {
    let post = CtcPosteriorSeq {
        log_probs: graph.value(log_probs).clone(),
    };
    let out = ctc_loss(&post, labels)?;
    if !out.feasible {
        return Ok(None);
    }
    Ok(Some(graph.known_grad(
        log_probs,
        out.loss,
        out.grad.into_data(),
    )))
}

/// Highest-probability token per frame, ties to the lowest index.
pub fn ctc_predict_argmax(posteriors: &CtcPosteriorSeq) -> PredictionSeq {
    let lp = posteriors.log_probs();
    PredictionSeq::new((0..lp.rows()).map(|l| argmax(lp.row(l))).collect())
}

/// Per frame, draws among the `top_n` most probable tokens with probability
/// proportional to their posterior mass.
pub fn ctc_predict_sampled(
    posteriors: &CtcPosteriorSeq,
    top_n: usize,
    rng: &mut Rng,
) -> Result<PredictionSeq> {
    let width = posteriors.width();
    if top_n == 0 || top_n > width {
        return Err(Error::Usage(format!(
            "top_n must be in 1..={width}, got {top_n}"
        )));
    }
    let lp = posteriors.log_probs();
    let mut order: Vec<usize> = (0..width).collect();
    let tokens = (0..lp.rows())
        .map(|l| {
            let row = lp.row(l);
            order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            let top = &order[..top_n];
            if top_n == 1 {
                return top[0];
            }
            let mass: Vec<f64> = top.iter().map(|&k| row[k].exp()).collect();
            let total: f64 = mass.iter().sum();
            let mut u = rng.uniform() * total;
            for (i, m) in mass.iter().enumerate() {
                if u < *m {
                    return top[i];
                }
                u -= m;
            }
            top[top_n - 1]
        })
        .collect();
    Ok(PredictionSeq::new(tokens))
}

/// Standard CTC collapse: merge adjacent repeats, then drop blanks.
pub fn collapse(preds: &PredictionSeq, vocab: Vocab) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &t in &preds.tokens {
        if Some(t) != prev && !vocab.is_blank(t) {
            out.push(t);
        }
        prev = Some(t);
    }
    out
}
