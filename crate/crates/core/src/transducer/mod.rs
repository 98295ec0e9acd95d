//! RNN-T prediction and joint networks, lattice loss and beam search.

mod beam;
mod joint;
mod loss;
mod predictor;

pub use beam::{beam_search, greedy_search, BeamConfig, DecodeStats, Hypothesis};
pub use joint::JointNetwork;
pub use loss::{rnnt_lattice_loss, rnnt_loss, rnnt_loss_node, RnntLoss};
pub use predictor::{PredictionNetwork, PredictorState};

use crate::numerics::{ParamStore, Rng, Tensor};

pub(crate) fn init_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    let scale = 1.0 / (rows as f64).sqrt();
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.normal() * scale).collect())
        .expect("shape")
}

pub(crate) fn init_zeros(cols: usize) -> Tensor {
    Tensor::zeros(&[1, cols])
}

/// Prediction plus joint network sharing one parameter store.
#[derive(Clone, Debug)]
pub struct Transducer {
    pub predictor: PredictionNetwork,
    pub joint: JointNetwork,
}

impl Transducer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut Rng,
        tgt_vocab: crate::ctc::Vocab,
        enc_dim: usize,
        pred_embed: usize,
        pred_hidden: usize,
        joint_dim: usize,
    ) -> Self {
        let predictor = PredictionNetwork::new(store, rng, tgt_vocab, pred_embed, pred_hidden);
        let joint = JointNetwork::new(store, rng, tgt_vocab, enc_dim, pred_hidden, joint_dim);
        Self { predictor, joint }
    }
}
