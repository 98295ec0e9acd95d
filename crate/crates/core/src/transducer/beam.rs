//! Frame-synchronous transducer beam search with prefix folding.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::time::{Duration, Instant};

use super::{JointNetwork, PredictionNetwork, PredictorState};
use crate::error::{usage, Result};
use crate::numerics::{argmax, log_add, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BeamConfig {
    pub width: usize,
    /// Expansion depth allowed within one frame.
    pub max_symbols_per_frame: usize,
    /// Hypotheses of this length are not extended.
    pub max_output_len: Option<usize>,
}

impl BeamConfig {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            ..Self::default()
        }
    }
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            width: 4,
            max_symbols_per_frame: 10,
            max_output_len: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub pred_state: PredictorState,
}

impl Hypothesis {
    /// `log Pr(y) / max(|y|, 1)`
    pub fn normalized_score(&self) -> f64 {
        normalized(self.log_prob, self.tokens.len())
    }
}

fn normalized(log_prob: f64, len: usize) -> f64 {
    log_prob / len.max(1) as f64
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DecodeStats {
    pub joint_calls: usize,
    pub frames: usize,
    pub wall_time: Duration,
    /// Times a hypothesis was left unextended because of the per-frame cap.
    pub cap_hits: usize,
}

impl DecodeStats {
    pub fn merge(&mut self, other: &DecodeStats) {
        self.joint_calls += other.joint_calls;
        self.frames += other.frames;
        self.wall_time += other.wall_time;
        self.cap_hits += other.cap_hits;
    }
}

/// Higher probability first, then shorter, then lexicographically smaller.
fn rank(a: (f64, &[usize]), b: (f64, &[usize])) -> Ordering {
    b.0.total_cmp(&a.0)
        .then(a.1.len().cmp(&b.1.len()))
        .then(a.1.cmp(b.1))
}

struct Prefix {
    state: PredictorState,
    dec_proj: Vec<f64>,
}

/// Predictor features and per-frame joint outputs, memoized by prefix.
struct Scorer<'a> {
    store: &'a ParamStore,
    predictor: &'a PredictionNetwork,
    joint: &'a JointNetwork,
    enc_proj: Tensor,
    prefixes: HashMap<Vec<usize>, Prefix>,
    frame_cache: HashMap<Vec<usize>, Vec<f64>>,
    frame: usize,
    joint_calls: usize,
}

impl<'a> Scorer<'a> {
    fn new(
        store: &'a ParamStore,
        enc: &Tensor,
        predictor: &'a PredictionNetwork,
        joint: &'a JointNetwork,
    ) -> Result<Self> {
        let enc_proj = joint.project_encoder(store, enc)?;
        let state = predictor.initial_state(store);
        let dec_proj = joint.project_decoder(store, &state.hidden)?;
        let mut prefixes = HashMap::new();
        prefixes.insert(Vec::new(), Prefix { state, dec_proj });
        Ok(Self {
            store,
            predictor,
            joint,
            enc_proj,
            prefixes,
            frame_cache: HashMap::new(),
            frame: 0,
            joint_calls: 0,
        })
    }

    fn set_frame(&mut self, t: usize) {
        self.frame = t;
        self.frame_cache.clear();
    }

    fn ensure_prefix(&mut self, y: &[usize]) -> Result<()> {
        if self.prefixes.contains_key(y) {
            return Ok(());
        }
        let mut known = y.len();
        while !self.prefixes.contains_key(&y[..known]) {
            known -= 1;
        }
        for n in known..y.len() {
            let parent = &self.prefixes[&y[..n]];
            let (state, h_dec) = self.predictor.step(self.store, &parent.state, y[n])?;
            let dec_proj = self.joint.project_decoder(self.store, &h_dec)?;
            self.prefixes.insert(y[..=n].to_vec(), Prefix { state, dec_proj });
        }
        Ok(())
    }

    /// `log Pr(· | y, t)` at the current frame.
    fn log_probs(&mut self, y: &[usize]) -> Result<&[f64]> {
        if !self.frame_cache.contains_key(y) {
            self.ensure_prefix(y)?;
            let dist = self.joint.log_probs_projected(
                self.store,
                self.enc_proj.row(self.frame),
                &self.prefixes[y].dec_proj,
            );
            self.joint_calls += 1;
            self.frame_cache.insert(y.to_vec(), dist);
        }
        Ok(&self.frame_cache[y])
    }

    fn state(&mut self, y: &[usize]) -> Result<PredictorState> {
        self.ensure_prefix(y)?;
        Ok(self.prefixes[y].state.clone())
    }
}

/// Transducer beam search over encoder output `enc` (`T × D`).
///
/// Per frame the surviving set is folded with the probability of reaching
/// each hypothesis from its proper prefixes in the set, then the most
/// probable hypothesis is repeatedly ended with blank (kept for the next
/// frame) and extended with every label, until `width` kept hypotheses beat
/// the best remaining one. Returns the kept hypothesis with the highest
/// `log Pr(y) / max(|y|, 1)`.
pub fn beam_search(
    store: &ParamStore,
    enc: &Tensor,
    cfg: BeamConfig,
    predictor: &PredictionNetwork,
    joint: &JointNetwork,
) -> Result<(Hypothesis, DecodeStats)> {
    let started = Instant::now();
    if enc.rows() == 0 {
        return Err(usage("beam search over an empty encoder sequence"));
    }
    if cfg.width == 0 {
        return Err(usage("beam width must be at least 1"));
    }
    let vocab = joint.vocab();
    let blank = vocab.blank_id();
    let cap = cfg.max_symbols_per_frame;
    let mut scorer = Scorer::new(store, enc, predictor, joint)?;
    let mut cap_hits = 0;

    let mut kept: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 0.0)];
    for t in 0..enc.rows() {
        scorer.set_frame(t);
        let start: HashMap<Vec<usize>, f64> = kept.into_iter().collect();

        // (log prob, expansion depth within this frame)
        let mut open: HashMap<Vec<usize>, (f64, usize)> = HashMap::with_capacity(start.len() * 4);
        for (y, &lp_y) in &start {
            let mut total = lp_y;
            for plen in (0..y.len()).rev() {
                if y.len() - plen > cap {
                    break;
                }
                let Some(&lp_prefix) = start.get(&y[..plen]) else {
                    continue;
                };
                let mut path = lp_prefix;
                for u in plen..y.len() {
                    path += scorer.log_probs(&y[..u])?[y[u]];
                }
                total = log_add(total, path);
            }
            open.insert(y.clone(), (total, 0));
        }

        let mut ended: HashMap<Vec<usize>, f64> = HashMap::new();
        loop {
            let Some(best) = open
                .iter()
                .min_by(|a, b| rank((a.1 .0, a.0), (b.1 .0, b.0)))
                .map(|(y, _)| y.clone())
            else {
                break;
            };
            let best_lp = open[&best].0;
            if ended.values().filter(|&&v| v > best_lp).count() >= cfg.width {
                break;
            }
            let (lp_y, depth) = open.remove(&best).expect("present");
            let dist = scorer.log_probs(&best)?.to_vec();
            let entry = ended.entry(best.clone()).or_insert(f64::NEG_INFINITY);
            *entry = log_add(*entry, lp_y + dist[blank]);

            if cfg.max_output_len.is_some_and(|m| best.len() >= m) {
                continue;
            }
            if depth >= cap {
                cap_hits += 1;
                continue;
            }
            for (k, &lp_k) in dist.iter().enumerate().take(vocab.size()) {
                let mut next = best.clone();
                next.push(k);
                // already folded in from its prefix at the start of the frame
                if start.contains_key(&next) {
                    continue;
                }
                open.insert(next, (lp_y + lp_k, depth + 1));
            }
        }

        let mut ranked: Vec<(Vec<usize>, f64)> = ended.into_iter().collect();
        ranked.sort_by(|a, b| rank((a.1, &a.0), (b.1, &b.0)));
        ranked.truncate(cfg.width);
        kept = ranked;
    }

    if cap_hits > 0 {
        log::debug!("beam search hit the per-frame emission cap {cap_hits} times");
    }
    let (tokens, log_prob) = kept
        .into_iter()
        .min_by(|a, b| {
            normalized(b.1, b.0.len())
                .total_cmp(&normalized(a.1, a.0.len()))
                .then(a.0.len().cmp(&b.0.len()))
                .then(a.0.cmp(&b.0))
        })
        .expect("beam is never empty");
    let pred_state = scorer.state(&tokens)?;
    let stats = DecodeStats {
        joint_calls: scorer.joint_calls,
        frames: enc.rows(),
        wall_time: started.elapsed(),
        cap_hits,
    };
    Ok((
        Hypothesis {
            tokens,
            log_prob,
            pred_state,
        },
        stats,
    ))
}

/// Frame-synchronous greedy decoding: emit the argmax label until blank wins.
pub fn greedy_search(
    store: &ParamStore,
    enc: &Tensor,
    max_symbols_per_frame: usize,
    predictor: &PredictionNetwork,
    joint: &JointNetwork,
) -> Result<(Hypothesis, DecodeStats)> {
    let started = Instant::now();
    if enc.rows() == 0 {
        return Err(usage("greedy search over an empty encoder sequence"));
    }
    let blank = joint.vocab().blank_id();
    let mut scorer = Scorer::new(store, enc, predictor, joint)?;
    let mut tokens = Vec::new();
    let mut log_prob = 0.0;
    let mut cap_hits = 0;
    for t in 0..enc.rows() {
        scorer.set_frame(t);
        let mut emitted = 0;
        loop {
            let dist = scorer.log_probs(&tokens)?;
            let k = argmax(dist);
            if k == blank || emitted == max_symbols_per_frame {
                if k != blank {
                    cap_hits += 1;
                }
                log_prob += dist[blank];
                break;
            }
            log_prob += dist[k];
            tokens.push(k);
            emitted += 1;
        }
    }
    let pred_state = scorer.state(&tokens)?;
    Ok((
        Hypothesis {
            tokens,
            log_prob,
            pred_state,
        },
        DecodeStats {
            joint_calls: scorer.joint_calls,
            frames: enc.rows(),
            wall_time: started.elapsed(),
            cap_hits,
        },
    ))
}
