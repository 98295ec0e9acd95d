use std::fs;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use rayon::prelude::*;

use super::{save_checkpoint, Batch, CtcGmmModel, LossBreakdown, ModelConfig, Selection};
use crate::data::{utterance_features, SyntheticTaskSpec, Utterance};
use crate::error::{usage, Error, Result};
use crate::numerics::{mix, GradBuffer, ParamStore, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub steps: usize,
    /// Examples per step from each corpus.
    pub batch_size: usize,
    pub log_every: usize,
    /// 0 disables periodic checkpoints; a final one is still written when a path is set.
    pub checkpoint_every: usize,
    pub checkpoint_path: Option<PathBuf>,
    pub metric_path: Option<PathBuf>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 8,
            log_every: 50,
            checkpoint_every: 0,
            checkpoint_path: None,
            metric_path: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRecord {
    pub step: usize,
    pub name: String,
    pub value: f64,
}

impl MetricRecord {
    pub fn line(&self) -> String {
        format!("{}\t{}\t{}", self.step, self.name, self.value)
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub metrics: Vec<MetricRecord>,
    pub speech_examples: usize,
    pub text_examples: usize,
    /// Per-example mean of the last step.
    pub last_loss: LossBreakdown,
}

/// Adaptive moment estimation with linear warmup.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u32,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn learning_rate(cfg: &ModelConfig, step: usize) -> f64 {
        let warm = if cfg.warmup_steps == 0 {
            1.0
        } else {
            ((step + 1) as f64 / cfg.warmup_steps as f64).min(1.0)
        };
        cfg.learning_rate * warm
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &GradBuffer, cfg: &ModelConfig, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let p = store.get_mut(id).data_mut();
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                p[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.adam_eps);
            }
        }
    }
}

/// Endless shuffled passes over `0..n`.
struct Epochs {
    order: Vec<usize>,
    pos: usize,
    rng: Rng,
}

impl Epochs {
    fn new(n: usize, rng: Rng) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
            rng,
        }
    }

    fn next(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.rng.shuffle(&mut self.order);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// Fills `features` of every utterance from the task's acoustic generator.
pub fn attach_features(utts: &mut [Utterance], spec: &SyntheticTaskSpec, seed: u64) -> Result<()> {
    for u in utts.iter_mut() {
        u.features = Some(utterance_features(u, spec, seed)?);
    }
    Ok(())
}

struct MetricSink {
    records: Vec<MetricRecord>,
    file: Option<BufWriter<fs::File>>,
}

impl MetricSink {
    fn push(&mut self, step: usize, name: &str, value: f64) -> Result<()> {
        let r = MetricRecord {
            step,
            name: name.to_string(),
            value,
        };
        if let Some(f) = &mut self.file {
            writeln!(f, "{}", r.line())?;
        }
        self.records.push(r);
        Ok(())
    }
}

/// Step-wise training loop over a speech corpus and an optional MT corpus.
///
/// Each step draws `batch_size` speech utterances and, with `use_mt_text`,
/// the same number of MT sentences; the objective is the per-example mean.
/// Example gradients are computed in parallel and summed in example order.
pub struct Trainer<'a> {
    model: &'a mut CtcGmmModel,
    opts: TrainOptions,
    speech: &'a [Utterance],
    features: Vec<&'a crate::numerics::Tensor>,
    mt: &'a [Utterance],
    root: Rng,
    speech_order: Epochs,
    text_order: Epochs,
    adam: Adam,
    sink: MetricSink,
    report: TrainReport,
    step: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(
        model: &'a mut CtcGmmModel,
        opts: &TrainOptions,
        speech: &'a [Utterance],
        mt: &'a [Utterance],
    ) -> Result<Self> {
        let cfg = model.config().clone();
        if speech.is_empty() {
            return Err(usage("speech corpus is empty"));
        }
        if cfg.use_mt_text && mt.is_empty() {
            return Err(usage("use_mt_text is set but the MT corpus is empty"));
        }
        if opts.batch_size == 0 {
            return Err(usage("batch_size must be >= 1"));
        }
        let features = speech
            .iter()
            .map(|u| {
                u.features
                    .as_ref()
                    .ok_or_else(|| usage(format!("utterance {} has no features", u.id)))
            })
            .collect::<Result<_>>()?;
        let root = Rng::new(cfg.seed);
        let file = match &opts.metric_path {
            Some(p) => Some(BufWriter::new(fs::File::create(p)?)),
            None => None,
        };
        Ok(Self {
            speech_order: Epochs::new(speech.len(), root.fork(1)),
            text_order: Epochs::new(mt.len().max(1), root.fork(2)),
            adam: Adam::new(model.store()),
            model,
            opts: opts.clone(),
            speech,
            features,
            mt,
            root,
            sink: MetricSink {
                records: Vec::new(),
                file,
            },
            report: TrainReport::default(),
            step: 0,
        })
    }

    pub fn model(&self) -> &CtcGmmModel {
        self.model
    }

    /// Steps taken so far.
    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// Runs up to `n` more steps, stopping at `opts.steps`.
    pub fn run(&mut self, n: usize) -> Result<()> {
        for _ in 0..n {
            if self.step >= self.opts.steps {
                break;
            }
            self.one_step()?;
        }
        Ok(())
    }

    fn one_step(&mut self) -> Result<()> {
        let cfg = self.model.config().clone();
        let (step, bs) = (self.step, self.opts.batch_size);
        let mut batches = Vec::with_capacity(2 * bs);
        for _ in 0..bs {
            let i = self.speech_order.next();
            batches.push(Batch::Speech {
                features: self.features[i],
                src_labels: &self.speech[i].src_tokens,
                tgt_labels: &self.speech[i].tgt_tokens,
            });
        }
        if cfg.use_mt_text {
            for _ in 0..bs {
                let i = self.text_order.next();
                batches.push(Batch::Text {
                    src_tokens: &self.mt[i].src_tokens,
                    tgt_tokens: &self.mt[i].tgt_tokens,
                });
            }
            self.report.text_examples += bs;
        }
        self.report.speech_examples += bs;

        let step_rng = self.root.fork(mix(3, step as u64));
        let m: &CtcGmmModel = self.model;
        let results: Vec<(LossBreakdown, GradBuffer)> = batches
            .par_iter()
            .enumerate()
            .map(|(k, b)| {
                let mut rng = step_rng.fork(k as u64);
                let sel = if cfg.sample_predictions {
                    Selection::Sample(&mut rng)
                } else {
                    Selection::Argmax
                };
                m.loss_and_grads(b, sel)
            })
            .collect::<Result<_>>()?;

        let mut loss = LossBreakdown::default();
        let mut grads = GradBuffer::new(m.store().len());
        for (l, g) in &results {
            loss.add(l);
            grads.merge(g);
        }
        let inv = 1.0 / bs as f64;
        grads.scale(inv);
        for v in [&mut loss.ctc_asr, &mut loss.rnnt_st, &mut loss.rnnt_mt, &mut loss.total] {
            *v *= inv;
        }
        let norm = grads.norm();
        if !loss.total.is_finite() || !norm.is_finite() {
            return Err(Error::NonFinite {
                step,
                detail: format!(
                    "total {} (ctc {}, st {}, mt {}), gradient norm {norm}",
                    loss.total, loss.ctc_asr, loss.rnnt_st, loss.rnnt_mt
                ),
            });
        }
        if norm > cfg.clip_norm {
            grads.scale(cfg.clip_norm / norm);
        }
        let lr = Adam::learning_rate(&cfg, step);
        self.adam.step(self.model.store_mut(), &grads, &cfg, lr);
        self.report.last_loss = loss;
        self.step += 1;

        let last = self.step == self.opts.steps;
        if (self.opts.log_every > 0 && step % self.opts.log_every == 0) || last {
            let r = &self.report;
            let mut lines = vec![
                ("loss_total", loss.total),
                ("ctc_asr", loss.ctc_asr),
                ("rnnt_st", loss.rnnt_st),
            ];
            if cfg.use_mt_text {
                lines.push(("rnnt_mt", loss.rnnt_mt));
            }
            lines.extend([
                ("grad_norm", norm),
                ("lr", lr),
                ("speech_examples", r.speech_examples as f64),
                ("text_examples", r.text_examples as f64),
            ]);
            for (name, v) in lines {
                self.sink.push(step, name, v)?;
            }
        }
        if let Some(path) = &self.opts.checkpoint_path {
            let every = self.opts.checkpoint_every;
            if last || (every > 0 && self.step % every == 0) {
                save_checkpoint(path, self.model)?;
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<TrainReport> {
        if let Some(f) = &mut self.sink.file {
            f.flush()?;
        }
        self.report.metrics = self.sink.records;
        Ok(self.report)
    }
}

/// Runs all `opts.steps` steps.
pub fn train(
    model: &mut CtcGmmModel,
    opts: &TrainOptions,
    speech: &[Utterance],
    mt: &[Utterance],
) -> Result<TrainReport> {
    let mut t = Trainer::new(model, opts, speech, mt)?;
    t.run(opts.steps)?;
    t.finish()
}
