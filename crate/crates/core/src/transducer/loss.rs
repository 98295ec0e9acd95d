use super::{JointNetwork, PredictionNetwork};
use crate::error::{usage, Result};
use crate::numerics::{log_add, GradBuffer, Graph, ParamStore, Tensor, Var};

/// Lattice negative log-likelihood and its gradient.
#[derive(Clone, Debug)]
pub struct RnntLoss {
    pub loss: f64,
    /// Same layout as the lattice passed in.
    pub grad: Tensor,
}

/// Forward-backward over a `T × (U+1)` lattice of log-probabilities laid out
/// as rows `t·(U+1) + u`, each of width `V + 1` with blank last.
///
/// Blank moves `t → t+1`; label `u` moves `u → u+1` within a frame. The
/// final blank at `(T-1, U)` terminates.
pub fn rnnt_lattice_loss(lattice: &Tensor, frames: usize, labels: &[usize]) -> Result<RnntLoss> {
    let u_len = labels.len() + 1;
    if frames == 0 {
        return Err(usage("rnnt loss needs at least one frame"));
    }
    if lattice.rows() != frames * u_len {
        return Err(usage(format!(
            "lattice has {} rows, expected {frames}×{u_len}",
            lattice.rows()
        )));
    }
    let blank = lattice.cols() - 1;
    if let Some(&bad) = labels.iter().find(|&&k| k >= blank) {
        return Err(usage(format!("label {bad} is blank or out of range")));
    }
    let at = |t: usize, u: usize| lattice.row(t * u_len + u);
    let neg = f64::NEG_INFINITY;

    let mut alpha = vec![neg; frames * u_len];
    for t in 0..frames {
        for u in 0..u_len {
            let v = if t == 0 && u == 0 {
                0.0
            } else {
                let from_t = if t > 0 {
                    alpha[(t - 1) * u_len + u] + at(t - 1, u)[blank]
                } else {
                    neg
                };
                let from_u = if u > 0 {
                    alpha[t * u_len + u - 1] + at(t, u - 1)[labels[u - 1]]
                } else {
                    neg
                };
                log_add(from_t, from_u)
            };
            alpha[t * u_len + u] = v;
        }
    }
    let last = frames - 1;
    let log_p = alpha[last * u_len + u_len - 1] + at(last, u_len - 1)[blank];

    let mut beta = vec![neg; frames * u_len];
    for t in (0..frames).rev() {
        for u in (0..u_len).rev() {
            let v = if t == last && u == u_len - 1 {
                at(t, u)[blank]
            } else {
                let via_blank = if t < last {
                    beta[(t + 1) * u_len + u] + at(t, u)[blank]
                } else {
                    neg
                };
                let via_label = if u < u_len - 1 {
                    beta[t * u_len + u + 1] + at(t, u)[labels[u]]
                } else {
                    neg
                };
                log_add(via_blank, via_label)
            };
            beta[t * u_len + u] = v;
        }
    }

    let mut grad = Tensor::zeros(lattice.shape());
    for t in 0..frames {
        for u in 0..u_len {
            let a = alpha[t * u_len + u];
            let row = t * u_len + u;
            let next_blank = if t == last && u == u_len - 1 {
                0.0
            } else if t < last {
                beta[(t + 1) * u_len + u]
            } else {
                neg
            };
            let lp = at(t, u);
            let g = grad.row_mut(row);
            if next_blank > neg {
                g[blank] = -(a + lp[blank] + next_blank - log_p).exp();
            }
            if u < u_len - 1 {
                let k = labels[u];
                g[k] = -(a + lp[k] + beta[t * u_len + u + 1] - log_p).exp();
            }
        }
    }
    Ok(RnntLoss { loss: -log_p, grad })
}

/// Builds predictor, joint lattice and loss on `g` for encoder output `enc` (`T × D`).
pub fn rnnt_loss_node(
    g: &mut Graph,
    enc: Var,
    labels: &[usize],
    predictor: &PredictionNetwork,
    joint: &JointNetwork,
) -> Result<Var> {
    let frames = g.value(enc).rows();
    let dec = predictor.forward_graph(g, labels)?;
    let lattice = joint.lattice_graph(g, enc, dec);
    let out = rnnt_lattice_loss(g.value(lattice), frames, labels)?;
    Ok(g.known_grad(lattice, out.loss, out.grad.into_data()))
}

/// Loss with gradients for the encoder output and every network parameter.
#[derive(Clone, Debug)]
pub struct RnntLossOutput {
    pub loss: f64,
    pub enc_grad: Tensor,
    pub param_grads: GradBuffer,
}

/// `-log Pr(labels | enc)` over all monotonic alignments.
pub fn rnnt_loss(
    store: &ParamStore,
    enc: &Tensor,
    labels: &[usize],
    predictor: &PredictionNetwork,
    joint: &JointNetwork,
) -> Result<RnntLossOutput> {
    let mut g = Graph::with_params(store);
    let ev = g.input(enc.clone());
    let root = rnnt_loss_node(&mut g, ev, labels, predictor, joint)?;
    g.backward(root)?;
    Ok(RnntLossOutput {
        loss: g.value(root).item(),
        enc_grad: Tensor::new(enc.shape().to_vec(), g.grad(ev).expect("grad").to_vec())?,
        param_grads: g.param_grads(store.len()),
    })
}
