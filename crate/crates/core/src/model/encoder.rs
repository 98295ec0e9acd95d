use crate::numerics::{sinusoidal_embedding, Graph, ParamId, ParamStore, Rng, Tensor, Var};
use crate::transducer::{init_matrix, init_zeros};

#[derive(Clone, Debug)]
struct Layer {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// Stack of pre-norm blocks: causal single-head self-attention then a ReLU
/// feed-forward, each with a residual connection. Ends with a layer norm.
#[derive(Clone, Debug)]
pub struct CausalEncoder {
    dim: usize,
    layers: Vec<Layer>,
}

impl CausalEncoder {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, prefix: &str, dim: usize, ffn_dim: usize, layers: usize) -> Self {
        let layers = (0..layers)
            .map(|i| {
                let mut add = |name: &str, t: Tensor| store.add(format!("{prefix}.l{i}.{name}"), t);
                Layer {
                    wq: add("wq", init_matrix(rng, dim, dim)),
                    wk: add("wk", init_matrix(rng, dim, dim)),
                    wv: add("wv", init_matrix(rng, dim, dim)),
                    wo: add("wo", init_matrix(rng, dim, dim)),
                    w1: add("w1", init_matrix(rng, dim, ffn_dim)),
                    b1: add("b1", init_zeros(ffn_dim)),
                    w2: add("w2", init_matrix(rng, ffn_dim, dim)),
                    b2: add("b2", init_zeros(dim)),
                }
            })
            .collect();
        Self { dim, layers }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Adds positional encodings to `x` (`T × D`) and runs every layer.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let rows = g.value(x).rows();
        let mut pe = Vec::with_capacity(rows * self.dim);
        for t in 0..rows {
            pe.extend(sinusoidal_embedding(t, self.dim));
        }
        let pe = g.input(Tensor::matrix(rows, self.dim, pe).expect("shape"));
        let mut h = g.add(x, pe);
        let scale = 1.0 / (self.dim as f64).sqrt();
        for l in &self.layers {
            let n = g.layer_norm(h);
            let (wq, wk, wv, wo) = (g.param(l.wq), g.param(l.wk), g.param(l.wv), g.param(l.wo));
            let q = g.matmul(n, wq);
            let k = g.matmul(n, wk);
            let v = g.matmul(n, wv);
            let s = g.matmul_bt(q, k);
            let s = g.scale(s, scale);
            let a = g.causal_softmax(s);
            let ctx = g.matmul(a, v);
            let o = g.matmul(ctx, wo);
            h = g.add(h, o);

            let n = g.layer_norm(h);
            let (w1, b1, w2, b2) = (g.param(l.w1), g.param(l.b1), g.param(l.w2), g.param(l.b2));
            let f = g.matmul(n, w1);
            let f = g.add_row(f, b1);
            let f = g.relu(f);
            let f = g.matmul(f, w2);
            let f = g.add_row(f, b2);
            h = g.add(h, f);
        }
        g.layer_norm(h)
    }
}
