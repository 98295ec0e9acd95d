use super::{init_matrix, init_zeros};
use crate::ctc::Vocab;
use crate::error::{Error, Result};
use crate::numerics::{log_softmax_in_place, vec_mat, Graph, ParamId, ParamStore, Rng, Tensor, Var};

/// `z = W_out · tanh(W_enc h_enc + W_dec h_dec + b) + b_out`, normalized with log-softmax.
#[derive(Clone, Debug)]
pub struct JointNetwork {
    vocab: Vocab,
    enc_dim: usize,
    dec_dim: usize,
    joint_dim: usize,
    w_enc: ParamId,
    w_dec: ParamId,
    bias: ParamId,
    w_out: ParamId,
    b_out: ParamId,
}

impl JointNetwork {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut Rng,
        vocab: Vocab,
        enc_dim: usize,
        dec_dim: usize,
        joint_dim: usize,
    ) -> Self {
        Self {
            vocab,
            enc_dim,
            dec_dim,
            joint_dim,
            w_enc: store.add("joint.w_enc", init_matrix(rng, enc_dim, joint_dim)),
            w_dec: store.add("joint.w_dec", init_matrix(rng, dec_dim, joint_dim)),
            bias: store.add("joint.bias", init_zeros(joint_dim)),
            w_out: store.add("joint.w_out", init_matrix(rng, joint_dim, vocab.width())),
            b_out: store.add("joint.b_out", init_zeros(vocab.width())),
        }
    }

    pub fn vocab(&self) -> Vocab {
        self.vocab
    }

    pub fn out_proj(&self) -> ParamId {
        self.w_out
    }

    pub fn out_bias(&self) -> ParamId {
        self.b_out
    }

    /// `T × J` encoder-side pre-activations, including the shared bias.
    pub fn project_encoder(&self, store: &ParamStore, enc: &Tensor) -> Result<Tensor> {
        if enc.cols() != self.enc_dim {
            return Err(Error::Usage(format!(
                "encoder width {} != joint input {}",
                enc.cols(),
                self.enc_dim
            )));
        }
        let mut out = Vec::with_capacity(enc.rows() * self.joint_dim);
        for t in 0..enc.rows() {
            out.extend(vec_mat(
                enc.row(t),
                store.get(self.w_enc).data(),
                Some(store.get(self.bias).data()),
                self.joint_dim,
            ));
        }
        Tensor::matrix(enc.rows(), self.joint_dim, out)
    }

    pub fn project_decoder(&self, store: &ParamStore, h_dec: &[f64]) -> Result<Vec<f64>> {
        if h_dec.len() != self.dec_dim {
            return Err(Error::Usage(format!(
                "predictor width {} != joint input {}",
                h_dec.len(),
                self.dec_dim
            )));
        }
        Ok(vec_mat(h_dec, store.get(self.w_dec).data(), None, self.joint_dim))
    }

    /// Log-distribution from already projected encoder and decoder rows.
    pub fn log_probs_projected(&self, store: &ParamStore, enc_row: &[f64], dec_row: &[f64]) -> Vec<f64> {
        let hidden: Vec<f64> = enc_row.iter().zip(dec_row).map(|(a, b)| (a + b).tanh()).collect();
        let mut z = vec_mat(
            &hidden,
            store.get(self.w_out).data(),
            Some(store.get(self.b_out).data()),
            self.vocab.width(),
        );
        log_softmax_in_place(&mut z);
        z
    }

    /// `log Pr(k | y, t)` over target tokens plus blank.
    pub fn log_probs(&self, store: &ParamStore, h_enc: &[f64], h_dec: &[f64]) -> Result<Vec<f64>> {
        if h_enc.len() != self.enc_dim {
            return Err(Error::Usage(format!(
                "encoder width {} != joint input {}",
                h_enc.len(),
                self.enc_dim
            )));
        }
        let e = vec_mat(
            h_enc,
            store.get(self.w_enc).data(),
            Some(store.get(self.bias).data()),
            self.joint_dim,
        );
        let d = self.project_decoder(store, h_dec)?;
        Ok(self.log_probs_projected(store, &e, &d))
    }

    /// `T(U+1) × (V+1)` lattice of log-probabilities; row `t·(U+1) + u`.
    pub fn lattice_graph(&self, g: &mut Graph, enc: Var, dec: Var) -> Var {
        let w_enc = g.param(self.w_enc);
        let bias = g.param(self.bias);
        let w_dec = g.param(self.w_dec);
        let w_out = g.param(self.w_out);
        let b_out = g.param(self.b_out);
        let e = g.matmul(enc, w_enc);
        let e = g.add_row(e, bias);
        let d = g.matmul(dec, w_dec);
        let pair = g.outer_add(e, d);
        let act = g.tanh(pair);
        let z = g.matmul(act, w_out);
        let z = g.add_row(z, b_out);
        g.log_softmax(z)
    }
}
