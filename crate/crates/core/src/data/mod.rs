//! Synthetic translation task, corpus files and evaluation metrics.

mod corpus;
mod metrics;
mod synth;

pub use corpus::{
    read_corpus, read_entity_sidecar, write_corpus, write_entity_sidecar, EntityTargets, Utterance,
};
pub use metrics::{bleu, edit_distance, entity_recall, token_accuracy, BleuOptions};
pub use synth::{
    apply_swaps, gen_entity_pair, gen_pair, generate_corpora, synth_features, utterance_features,
    Corpora, Entity, SyntheticTaskSpec, TaskParams,
};
