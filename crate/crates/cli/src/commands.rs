use std::collections::HashMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use ctcgmm::compress::{frame_span_for, MergeMode};
use ctcgmm::data::{
    bleu, entity_recall, generate_corpora, read_corpus, read_entity_sidecar, token_accuracy, utterance_features,
    write_corpus, write_entity_sidecar, BleuOptions, EntityTargets, SyntheticTaskSpec, Utterance,
};
use ctcgmm::model::{load_checkpoint, read_checkpoint, train as run_training, CtcGmmModel, DecodeOutput};
use ctcgmm::transducer::DecodeStats;
use ctcgmm::Tensor;
use rayon::prelude::*;

use crate::config::{load_task, RunConfig};
use crate::error::{usage, CliResult};
use crate::hyps::{read_hypotheses, write_hypotheses};
use crate::{BenchArgs, DecodeArgs, GenDataArgs};

/// Input feature frame duration used for the frame-span figure.
const BASE_FRAME_MS: f64 = 10.0;

pub const BENCH_MODES: [&str; 6] = [
    "baseline-tr4",
    "baseline-tr8",
    "average",
    "attention",
    "discrete-keep-blank",
    "discrete-remove-blank",
];

/// `<path>.entities`
pub fn sidecar_path(corpus: &Path) -> PathBuf {
    let mut name = corpus.file_name().map(OsString::from).unwrap_or_default();
    name.push(".entities");
    corpus.with_file_name(name)
}

fn corpus_stats(name: &str, utts: &[Utterance], entities: &EntityTargets) {
    let n = utts.len().max(1) as f64;
    let src: usize = utts.iter().map(|u| u.src_tokens.len()).sum();
    let tgt: usize = utts.iter().map(|u| u.tgt_tokens.len()).sum();
    println!("{name}\tutterances\t{}", utts.len());
    println!("{name}\tmean_src_len\t{:.3}", src as f64 / n);
    println!("{name}\tmean_tgt_len\t{:.3}", tgt as f64 / n);
    println!("{name}\tentity_sentences\t{}", entities.len());
}

pub fn gen_data(a: &GenDataArgs) -> CliResult<()> {
    let spec = load_task(&a.spec)?;
    let n_test = if a.out_test.is_some() { a.n_test } else { 0 };
    let c = generate_corpora(&spec, a.seed, a.n_speech, a.n_mt, n_test)?;
    write_corpus(&a.out_speech, &c.speech)?;
    write_corpus(&a.out_mt, &c.mt)?;
    write_entity_sidecar(&sidecar_path(&a.out_mt), &c.mt_entities)?;
    corpus_stats("speech", &c.speech, &EntityTargets::new());
    corpus_stats("mt", &c.mt, &c.mt_entities);
    if let Some(p) = &a.out_test {
        write_corpus(p, &c.test)?;
        write_entity_sidecar(&sidecar_path(p), &c.test_entities)?;
        corpus_stats("test", &c.test, &c.test_entities);
    }
    println!("task\tentities\t{}", spec.entities.len());
    println!("task\ttgt_vocab\t{}", spec.tgt_vocab_size());
    Ok(())
}

fn with_features(path: &Path, spec: &SyntheticTaskSpec, seed: u64) -> CliResult<Vec<Utterance>> {
    let mut utts = read_corpus(path)?;
    for u in &mut utts {
        u.features = Some(utterance_features(u, spec, seed)?);
    }
    Ok(utts)
}

pub fn train(config: &Path) -> CliResult<()> {
    let cfg = RunConfig::load(config)?;
    let spec = cfg.task()?;
    let speech = with_features(&cfg.speech_corpus, &spec, cfg.data_seed)?;
    let mt = match (&cfg.mt_corpus, cfg.model.use_mt_text) {
        (Some(p), true) => read_corpus(p)?,
        (None, true) => return Err(usage("use_mt_text=true needs mt_corpus")),
        (_, false) => Vec::new(),
    };
    let mut model = CtcGmmModel::new(cfg.model.clone())?;
    log::info!(
        "{}: {} speech and {} MT utterances, {} steps",
        cfg.experiment,
        speech.len(),
        mt.len(),
        cfg.steps
    );
    let report = run_training(&mut model, &cfg.train_options(), &speech, &mt)?;
    let l = &report.last_loss;
    println!("steps\t{}", cfg.steps);
    println!("speech_examples\t{}", report.speech_examples);
    println!("text_examples\t{}", report.text_examples);
    println!("final_loss_total\t{}", l.total);
    if let Some(p) = &cfg.checkpoint_path {
        println!("checkpoint\t{}", p.display());
    }
    if let Some(p) = &cfg.metric_path {
        println!("metrics\t{}", p.display());
    }
    Ok(())
}

/// Loads a checkpoint, rejecting one whose architecture differs from `cfg`.
fn load_matching(cfg: &RunConfig, path: &Path) -> CliResult<CtcGmmModel> {
    let ckpt = read_checkpoint(path)?;
    cfg.model.check_compatible(&ckpt.config)?;
    Ok(load_checkpoint(path)?)
}

fn decode_all(
    model: &CtcGmmModel,
    utts: &[Utterance],
    run: impl Fn(&CtcGmmModel, &Tensor) -> ctcgmm::Result<DecodeOutput> + Sync,
) -> CliResult<Vec<DecodeOutput>> {
    Ok(utts
        .par_iter()
        .map(|u| run(model, u.features.as_ref().expect("features attached")))
        .collect::<ctcgmm::Result<_>>()?)
}

pub fn decode(a: &DecodeArgs) -> CliResult<()> {
    let cfg = RunConfig::load(&a.config)?;
    let spec = cfg.task()?;
    let model = load_matching(&cfg, &a.checkpoint)?;
    let utts = with_features(&a.input, &spec, cfg.data_seed)?;
    let started = Instant::now();
    let outs = if a.greedy {
        decode_all(&model, &utts, |m, f| m.decode_greedy(f))?
    } else {
        let beam = a.beam.unwrap_or(cfg.model.beam_width);
        if beam == 0 {
            return Err(usage("--beam must be at least 1"));
        }
        decode_all(&model, &utts, |m, f| m.decode(f, beam))?
    };
    let wall = started.elapsed();
    let hyps: Vec<(String, Vec<usize>)> = utts
        .iter()
        .zip(&outs)
        .map(|(u, o)| (u.id.clone(), o.tokens.clone()))
        .collect();
    write_hypotheses(&a.out, &hyps)?;

    let mut stats = DecodeStats::default();
    let (mut l, mut m, mut empty) = (0, 0, 0);
    for o in &outs {
        stats.merge(&o.stats);
        l += o.encoder_frames;
        m += o.compressed_frames;
        empty += usize::from(o.empty);
    }
    println!("utterances\t{}", outs.len());
    println!("joint_calls\t{}", stats.joint_calls);
    println!("encoder_frames\t{l}");
    println!("compressed_frames\t{m}");
    println!("length_ratio\t{:.6}", m as f64 / l.max(1) as f64);
    println!("cap_hits\t{}", stats.cap_hits);
    println!("empty_compressions\t{empty}");
    println!("wall_ms\t{:.3}", wall.as_secs_f64() * 1e3);
    Ok(())
}

pub fn eval(hyp: &Path, reference: &Path, entities: Option<&Path>) -> CliResult<()> {
    let refs = read_corpus(reference)?;
    let hyps: HashMap<String, Vec<usize>> = read_hypotheses(hyp)?.into_iter().collect();
    let mut h = Vec::with_capacity(refs.len());
    for u in &refs {
        let toks = hyps
            .get(&u.id)
            .ok_or_else(|| usage(format!("no hypothesis for {} in {}", u.id, hyp.display())))?;
        h.push(toks.clone());
    }
    let r: Vec<Vec<usize>> = refs.iter().map(|u| u.tgt_tokens.clone()).collect();
    println!("bleu\t{:.4}", bleu(&h, &r, BleuOptions::default())?);
    println!("token_accuracy\t{:.6}", token_accuracy(&h, &r)?);
    if let Some(p) = entities {
        let side: HashMap<String, Vec<Vec<usize>>> = read_entity_sidecar(p)?.into_iter().collect();
        let required: Vec<Vec<Vec<usize>>> = refs
            .iter()
            .map(|u| side.get(&u.id).cloned().unwrap_or_default())
            .collect();
        match entity_recall(&h, &required) {
            Some(v) => println!("entity_recall\t{v:.6}"),
            None => log::warn!("no entities listed for the reference utterances"),
        }
    }
    Ok(())
}

/// Whether a checkpoint's compression settings are the ones a mode name promises.
fn mode_matches(mode: &str, merge: Option<MergeMode>, tr: usize) -> bool {
    match mode {
        "baseline-tr4" => merge.is_none() && tr == 4,
        "baseline-tr8" => merge.is_none() && tr == 8,
        "average" => merge == Some(MergeMode::Average),
        "attention" => merge == Some(MergeMode::Attention),
        "discrete-keep-blank" => merge == Some(MergeMode::DiscreteKeepBlank),
        "discrete-remove-blank" => merge == Some(MergeMode::DiscreteRemoveBlank),
        _ => false,
    }
}

pub fn bench(a: &BenchArgs) -> CliResult<()> {
    let cfg = RunConfig::load(&a.config)?;
    let spec = cfg.task()?;
    let modes: Vec<String> = match &a.modes {
        Some(m) => m.clone(),
        None => BENCH_MODES.iter().map(|s| s.to_string()).collect(),
    };
    for m in &modes {
        if !BENCH_MODES.contains(&m.as_str()) {
            return Err(usage(format!("unknown bench mode {m:?}")));
        }
    }
    if modes.len() > 1 && !a.checkpoint.contains("{mode}") {
        return Err(usage("--checkpoint needs a {mode} placeholder when benching several modes"));
    }
    if a.beam == 0 {
        return Err(usage("--beam must be at least 1"));
    }
    let utts = with_features(&a.input, &spec, cfg.data_seed)?;
    let mut first_wall: Option<Duration> = None;
    let mut benched = 0;
    for mode in &modes {
        let path = PathBuf::from(a.checkpoint.replace("{mode}", mode));
        if !path.exists() {
            log::warn!("skipping {mode}: no checkpoint at {}", path.display());
            continue;
        }
        let model = load_checkpoint(&path)?;
        let mc = model.config();
        if !mode_matches(mode, mc.merge_mode, mc.time_reduction) {
            return Err(usage(format!(
                "{} has merge_mode={} time_reduction={}, not mode {mode}",
                path.display(),
                mc.merge_mode.map_or("none", MergeMode::as_str),
                mc.time_reduction
            )));
        }
        let (mut l, mut m, mut calls, mut span, mut spans) = (0, 0, 0, 0.0, 0);
        let mut wall = Duration::ZERO;
        for u in &utts {
            let f = u.features.as_ref().expect("features attached");
            let started = Instant::now();
            let o = model.decode(f, a.beam)?;
            wall += started.elapsed();
            l += o.encoder_frames;
            m += o.compressed_frames;
            calls += o.stats.joint_calls;
            if let Some(s) = frame_span_for(o.compressed_frames, f.rows(), BASE_FRAME_MS) {
                span += s;
                spans += 1;
            }
        }
        let base = *first_wall.get_or_insert(wall);
        println!("{mode}\tutterances\t{}", utts.len());
        println!("{mode}\tlength_ratio\t{:.6}", m as f64 / l.max(1) as f64);
        println!("{mode}\tframe_span_ms\t{:.3}", span / spans.max(1) as f64);
        println!("{mode}\tjoint_calls\t{calls}");
        println!("{mode}\twall_ms\t{:.3}", wall.as_secs_f64() * 1e3);
        println!(
            "{mode}\twall_ratio\t{:.4}",
            wall.as_secs_f64() / base.as_secs_f64().max(1e-12)
        );
        benched += 1;
    }
    if benched == 0 {
        return Err(usage("no checkpoint found for any requested mode"));
    }
    Ok(())
}
