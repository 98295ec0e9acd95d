use std::collections::HashMap;

use crate::error::{usage, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BleuOptions {
    /// Replaces zero n-gram match counts by this epsilon.
    pub epsilon_smoothing: Option<f64>,
}

fn ngram_counts(seq: &[usize], n: usize) -> HashMap<&[usize], usize> {
    let mut m = HashMap::new();
    if seq.len() >= n {
        for w in seq.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus BLEU-4 on a 0 to 100 scale.
pub fn bleu(hyps: &[Vec<usize>], refs: &[Vec<usize>], opts: BleuOptions) -> Result<f64> {
    if hyps.is_empty() {
        return Err(usage("empty hypothesis set"));
    }
    if hyps.len() != refs.len() {
        return Err(usage(format!(
            "{} hypotheses but {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hyps.iter().zip(refs) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=4 {
            let rc = ngram_counts(r, n);
            for (g, c) in ngram_counts(h, n) {
                matches[n - 1] += c.min(rc.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    if ref_len == 0 {
        return Err(usage("references are empty"));
    }
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let mut log_p = 0.0;
    for n in 0..4 {
        let m = match (matches[n], opts.epsilon_smoothing) {
            (0, Some(eps)) => eps,
            (0, None) => return Ok(0.0),
            (m, _) => m as f64,
        };
        if totals[n] == 0 {
            return Ok(0.0);
        }
        log_p += (m / totals[n] as f64).ln() / 4.0;
    }
    let bp = if hyp_len > ref_len {
        0.0
    } else {
        1.0 - ref_len as f64 / hyp_len as f64
    };
    Ok(100.0 * (bp + log_p).exp())
}

pub fn edit_distance(a: &[usize], b: &[usize]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut cur = vec![i + 1; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = (prev[j] + usize::from(x != y)).min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

/// One minus the total edit distance over the total reference length, floored at 0.
pub fn token_accuracy(hyps: &[Vec<usize>], refs: &[Vec<usize>]) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(usage("hypothesis and reference counts differ"));
    }
    let total: usize = refs.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(usage("references are empty"));
    }
    let errors: usize = hyps.iter().zip(refs).map(|(h, r)| edit_distance(h, r)).sum();
    Ok((1.0 - errors as f64 / total as f64).max(0.0))
}

fn contains(hay: &[usize], needle: &[usize]) -> bool {
    needle.is_empty() || hay.windows(needle.len()).any(|w| w == needle)
}

/// Fraction of required entity sequences found contiguously in the
/// hypothesis; `None` when nothing is required.
pub fn entity_recall(hyps: &[Vec<usize>], entity_targets: &[Vec<Vec<usize>>]) -> Option<f64> {
    let mut found = 0usize;
    let mut total = 0usize;
    for (h, ents) in hyps.iter().zip(entity_targets) {
        for e in ents {
            total += 1;
            found += usize::from(contains(h, e));
        }
    }
    (total > 0).then(|| found as f64 / total as f64)
}
