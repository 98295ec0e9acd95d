use super::{init_matrix, init_zeros};
use crate::ctc::Vocab;
use crate::error::{usage, Result};
use crate::numerics::{sigmoid, vec_mat, Graph, ParamId, ParamStore, Rng, Tensor, Var};

/// Single-layer GRU over previously emitted target tokens.
///
/// Embedding row `vocab.blank_id()` is the start symbol consumed before the
/// first output, so the empty prefix also has a predictor feature.
#[derive(Clone, Debug)]
pub struct PredictionNetwork {
    vocab: Vocab,
    hidden: usize,
    embed: ParamId,
    w: [ParamId; 3],
    u: [ParamId; 3],
    b: [ParamId; 3],
    bhn: ParamId,
}

/// Recurrent state after consuming a token prefix. The hidden vector is
/// also the predictor feature `h_dec` for that prefix.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictorState {
    pub hidden: Vec<f64>,
}

impl PredictionNetwork {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, vocab: Vocab, embed_dim: usize, hidden: usize) -> Self {
        let embed = store.add(
            "pred.embed",
            Tensor::matrix(
                vocab.width(),
                embed_dim,
                (0..vocab.width() * embed_dim).map(|_| rng.normal() * 0.5).collect(),
            )
            .expect("shape"),
        );
        let gates = ["z", "r", "n"];
        let w = gates.map(|g| store.add(format!("pred.w{g}"), init_matrix(rng, embed_dim, hidden)));
        let u = gates.map(|g| store.add(format!("pred.u{g}"), init_matrix(rng, hidden, hidden)));
        let b = gates.map(|g| store.add(format!("pred.b{g}"), init_zeros(hidden)));
        let bhn = store.add("pred.bhn", init_zeros(hidden));
        Self {
            vocab,
            hidden,
            embed,
            w,
            u,
            b,
            bhn,
        }
    }

    pub fn vocab(&self) -> Vocab {
        self.vocab
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    fn step_raw(&self, store: &ParamStore, hidden: &[f64], token: usize) -> Vec<f64> {
        let x = store.get(self.embed).row(token);
        let h = self.hidden;
        let gate = |i: usize| {
            let xw = vec_mat(x, store.get(self.w[i]).data(), Some(store.get(self.b[i]).data()), h);
            let uh_bias = if i == 2 { Some(store.get(self.bhn).data()) } else { None };
            let hu = vec_mat(hidden, store.get(self.u[i]).data(), uh_bias, h);
            (xw, hu)
        };
        let (xz, hz) = gate(0);
        let (xr, hr) = gate(1);
        let (xn, hn) = gate(2);
        (0..h)
            .map(|j| {
                let z = sigmoid(xz[j] + hz[j]);
                let r = sigmoid(xr[j] + hr[j]);
                let n = (xn[j] + r * hn[j]).tanh();
                n + z * (hidden[j] - n)
            })
            .collect()
    }

    /// State for the empty prefix (start symbol consumed from a zero state).
    pub fn initial_state(&self, store: &ParamStore) -> PredictorState {
        PredictorState {
            hidden: self.step_raw(store, &vec![0.0; self.hidden], self.vocab.blank_id()),
        }
    }

    /// Advances the state by one emitted token; returns the new state and its `h_dec`.
    pub fn step(
        &self,
        store: &ParamStore,
        state: &PredictorState,
        token: usize,
    ) -> Result<(PredictorState, Vec<f64>)> {
        if self.vocab.is_blank(token) {
            return Err(usage("the predictor never consumes blank"));
        }
        self.vocab.check_label(token)?;
        let hidden = self.step_raw(store, &state.hidden, token);
        Ok((PredictorState { hidden: hidden.clone() }, hidden))
    }

    /// State after consuming a whole prefix from scratch.
    pub fn state_for(&self, store: &ParamStore, prefix: &[usize]) -> Result<PredictorState> {
        let mut s = self.initial_state(store);
        for &t in prefix {
            s = self.step(store, &s, t)?.0;
        }
        Ok(s)
    }

    /// `(U+1) × H` predictor features for every prefix of `labels`, as graph nodes.
    pub fn forward_graph(&self, g: &mut Graph, labels: &[usize]) -> Result<Var> {
        for &t in labels {
            self.vocab.check_label(t)?;
        }
        let ids: Vec<usize> = std::iter::once(self.vocab.blank_id())
            .chain(labels.iter().copied())
            .collect();
        let embed = g.param(self.embed);
        let x = g.gather(embed, &ids)?;
        let proj: Vec<Var> = (0..3)
            .map(|i| {
                let w = g.param(self.w[i]);
                let b = g.param(self.b[i]);
                let xw = g.matmul(x, w);
                g.add_row(xw, b)
            })
            .collect();
        let u: Vec<Var> = self.u.iter().map(|&p| g.param(p)).collect();
        let bhn = g.param(self.bhn);
        let mut h = g.input(Tensor::zeros(&[1, self.hidden]));
        let mut outs = Vec::with_capacity(ids.len());
        for step in 0..ids.len() {
            let xz = g.slice_rows(proj[0], step, step + 1);
            let xr = g.slice_rows(proj[1], step, step + 1);
            let xn = g.slice_rows(proj[2], step, step + 1);
            let hz = g.matmul(h, u[0]);
            let hr = g.matmul(h, u[1]);
            let hn = g.matmul(h, u[2]);
            let hn = g.add(hn, bhn);
            let z = g.add(xz, hz);
            let z = g.sigmoid(z);
            let r = g.add(xr, hr);
            let r = g.sigmoid(r);
            let rn = g.mul(r, hn);
            let n = g.add(xn, rn);
            let n = g.tanh(n);
            let diff = g.sub(h, n);
            let zd = g.mul(z, diff);
            h = g.add(n, zd);
            outs.push(h);
        }
        Ok(g.concat_rows(&outs))
    }
}
