//! Fixtures shared by the benchmarks.

use ctcgmm::compress::MergeMode;
use ctcgmm::ctc::{CtcPosteriorSeq, PredictionSeq, Vocab};
use ctcgmm::data::{generate_corpora, utterance_features, SyntheticTaskSpec, TaskParams};
use ctcgmm::model::{CtcGmmModel, ModelConfig};
use ctcgmm::numerics::ParamStore;
use ctcgmm::transducer::Transducer;
use ctcgmm::{Rng, Tensor};

pub fn random_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).expect("shape")
}

pub fn random_posteriors(rng: &mut Rng, frames: usize, vocab: Vocab) -> CtcPosteriorSeq {
    CtcPosteriorSeq::from_logits(&random_matrix(rng, frames, vocab.width()))
}

pub fn random_labels(rng: &mut Rng, len: usize, vocab: Vocab) -> Vec<usize> {
    (0..len).map(|_| rng.below(vocab.size())).collect()
}

/// Runs of 2 to 6 frames, a third of them blank.
pub fn random_predictions(rng: &mut Rng, frames: usize, vocab: Vocab) -> PredictionSeq {
    let mut tokens = Vec::with_capacity(frames);
    while tokens.len() < frames {
        let tok = if rng.bernoulli(0.33) { vocab.blank_id() } else { rng.below(vocab.size()) };
        let n = rng.range_inclusive(2, 6);
        tokens.extend(std::iter::repeat(tok).take(n));
    }
    tokens.truncate(frames);
    PredictionSeq::new(tokens)
}

pub fn transducer(seed: u64, vocab: Vocab, enc_dim: usize) -> (ParamStore, Transducer) {
    let mut store = ParamStore::new();
    let mut rng = Rng::new(seed);
    let t = Transducer::new(&mut store, &mut rng, vocab, enc_dim, 32, 64, 64);
    (store, t)
}

/// An untrained model and feature matrices for `n` synthetic utterances.
pub fn model_and_features(mode: Option<MergeMode>, n: usize) -> (CtcGmmModel, Vec<Tensor>) {
    let spec = SyntheticTaskSpec::new(TaskParams {
        num_entities: 0,
        min_entity_count: 0,
        ..TaskParams::default()
    })
    .expect("valid task");
    let cfg = ModelConfig {
        feature_dim: spec.feature_dim(),
        src_vocab: spec.src_vocab_size(),
        tgt_vocab: spec.tgt_vocab_size(),
        merge_mode: mode,
        ..ModelConfig::default()
    };
    let corpora = generate_corpora(&spec, 1, n, 0, 0).expect("corpora");
    let feats = corpora
        .speech
        .iter()
        .map(|u| utterance_features(u, &spec, 1).expect("features"))
        .collect();
    (CtcGmmModel::new(cfg).expect("model"), feats)
}
