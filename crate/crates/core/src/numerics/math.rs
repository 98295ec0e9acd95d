//! Stable log-domain helpers and plain dense kernels shared by the graph
//! operators and the inference paths.

use crate::error::{usage, Result};

/// `log(a + b)` for log-domain inputs.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `log(sum(exp(values)))` with max-shift stabilization.
///
/// Returns `-inf` iff every entry is `-inf`.
pub fn logsumexp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(usage("logsumexp of an empty vector"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(usage("logsumexp input contains NaN"));
    }
    Ok(logsumexp_unchecked(values))
}

pub(crate) fn logsumexp_unchecked(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.iter().any(|v| v.is_nan()) {
        return Err(usage("softmax input contains NaN"));
    }
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

pub(crate) fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x /= sum;
    }
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    log_softmax_in_place(&mut out);
    out
}

pub(crate) fn log_softmax_in_place(xs: &mut [f64]) {
    let lse = logsumexp_unchecked(xs);
    for x in xs.iter_mut() {
        *x -= lse;
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// `c[n×m] += a[n×k] · b[k×m]`
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let crow = &mut c[i * m..(i + 1) * m];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[n×m] += a[n×k] · b[m×k]ᵀ`
pub(crate) fn matmul_bt_acc(a: &[f64], b: &[f64], c: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..m {
            let brow = &b[j * k..(j + 1) * k];
            c[i * m + j] += dot(arow, brow);
        }
    }
}

/// `c[k×m] += a[n×k]ᵀ · b[n×m]`
pub(crate) fn matmul_at_acc(a: &[f64], b: &[f64], c: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * m..(i + 1) * m];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * m..(p + 1) * m];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out[m] = x[k] · w[k×m] + bias[m]`
pub(crate) fn vec_mat(x: &[f64], w: &[f64], bias: Option<&[f64]>, m: usize) -> Vec<f64> {
    let mut out = match bias {
        Some(b) => b.to_vec(),
        None => vec![0.0; m],
    };
    matmul_acc(x, w, &mut out, 1, x.len(), m);
    out
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Standard interleaved sinusoidal embedding: even dims `sin`, odd dims
/// `cos`, wavelength base 10000.
pub fn sinusoidal_embedding(position: usize, dim: usize) -> Vec<f64> {
    let pos = position as f64;
    (0..dim)
        .map(|d| {
            let pair = (d / 2) as f64;
            let angle = pos / 10000f64.powf(2.0 * pair / dim as f64);
            if d % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}
