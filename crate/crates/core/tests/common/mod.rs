//! Straight-line reference implementations used as test oracles. Nothing here
//! touches the tape: every quantity is recomputed with plain loops from the
//! parameter values.
#![allow(dead_code)]

use ddf_core::numerics::ParamSet;

pub type Mat = Vec<Vec<f64>>;

pub fn param(p: &ParamSet, name: &str) -> (Vec<f64>, Vec<usize>) {
    let t = p.get(name).unwrap_or_else(|| panic!("missing parameter {name}"));
    (t.data().to_vec(), t.shape().to_vec())
}

/// `x · W + b` for the layer registered under `name`.
pub fn linear(p: &ParamSet, name: &str, x: &Mat) -> Mat {
    let (w, ws) = param(p, &format!("{name}.weight"));
    let (b, _) = param(p, &format!("{name}.bias"));
    let (rows, cols) = (ws[0], ws[1]);
    x.iter()
        .map(|r| {
            assert_eq!(r.len(), rows, "{name}: input width");
            (0..cols)
                .map(|j| b[j] + (0..rows).map(|i| r[i] * w[i * cols + j]).sum::<f64>())
                .collect()
        })
        .collect()
}

pub fn linear_vec(p: &ParamSet, name: &str, x: &[f64]) -> Vec<f64> {
    linear(p, name, &vec![x.to_vec()]).remove(0)
}

pub fn relu(x: &Mat) -> Mat {
    x.iter().map(|r| r.iter().map(|v| v.max(0.0)).collect()).collect()
}

pub fn relu_vec(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

pub fn transpose(x: &Mat) -> Mat {
    (0..x[0].len()).map(|j| x.iter().map(|r| r[j]).collect()).collect()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .map(|r| {
            (0..b[0].len())
                .map(|j| r.iter().zip(b).map(|(x, brow)| x * brow[j]).sum())
                .collect()
        })
        .collect()
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u + v).collect())
        .collect()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn mean_rows(x: &Mat) -> Vec<f64> {
    let n = x.len() as f64;
    (0..x[0].len()).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect()
}

pub fn outer(a: &[f64], b: &[f64]) -> Mat {
    let mut c = vec![vec![0.0; b.len()]; a.len()];
    for i in 0..a.len() {
        for j in 0..b.len() {
            c[i][j] = a[i] * b[j];
        }
    }
    c
}

/// softmax(QKᵀ/√d)·V; returns (output, weights).
pub fn attend(q: &Mat, k: &Mat, v: &Mat) -> (Mat, Mat) {
    let d = q[0].len() as f64;
    let mut weights = Vec::new();
    for qi in q {
        let logits: Vec<f64> = k
            .iter()
            .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / d.sqrt())
            .collect();
        weights.push(softmax(&logits));
    }
    (matmul(&weights, v), weights)
}

/// Encoder for one sample; `x` holds `steps` consecutive rows of width `d_in`.
pub fn encode(p: &ParamSet, prefix: &str, x: &[f64], steps: usize, n_tokens: usize, d_tok: usize) -> Mat {
    let flat = if steps > 1 || p.get(&format!("{prefix}.t0.weight")).is_some() {
        let d_in = x.len() / steps;
        let seq: Mat = x.chunks(d_in).map(|c| c.to_vec()).collect();
        let h = relu(&linear(p, &format!("{prefix}.t0"), &seq));
        let h = relu(&linear(p, &format!("{prefix}.t1"), &h));
        h.concat()
    } else {
        x.to_vec()
    };
    let z = relu_vec(&linear_vec(p, &format!("{prefix}.tok"), &flat));
    z.chunks(d_tok).take(n_tokens).map(|c| c.to_vec()).collect()
}

/// Self-attention branch for one sample; returns (S, weights).
pub fn self_attention(p: &ParamSet, prefix: &str, z: &Mat) -> (Vec<f64>, Mat) {
    let q = linear(p, &format!("{prefix}.q"), z);
    let k = linear(p, &format!("{prefix}.k"), z);
    let v = linear(p, &format!("{prefix}.v"), z);
    let (att, w) = attend(&q, &k, &v);
    (linear_vec(p, &format!("{prefix}.out"), &mean_rows(&att)), w)
}

/// Token-axis mixing `[n, d] -> [t, d]`.
pub fn mix(p: &ParamSet, name: &str, x: &Mat) -> Mat {
    transpose(&linear(p, name, &transpose(x)))
}

/// Common branch for one sample.
pub fn cross_attention(p: &ParamSet, joint: &Mat, a: &Mat, b: &Mat, t: usize) -> Vec<f64> {
    let c = mix(p, "cross.mix_c", joint);
    let stream = |name: &str, x: &Mat| -> Mat {
        if x.len() == t {
            x.clone()
        } else {
            mix(p, &format!("cross.{name}.mix"), x)
        }
    };
    let (za, zb) = (stream("a", a), stream("b", b));
    let q = linear(p, "cross.q", &c);
    let k = add(
        &add(&linear(p, "cross.c.k", &c), &linear(p, "cross.a.k", &za)),
        &linear(p, "cross.b.k", &zb),
    );
    let v = add(
        &add(&linear(p, "cross.c.v", &c), &linear(p, "cross.a.v", &za)),
        &linear(p, "cross.b.v", &zb),
    );
    let (att, _) = attend(&q, &k, &v);
    linear_vec(p, "cross.out", &mean_rows(&att))
}

/// `g(concat(relu(f_a(s_a)), s_c, relu(f_b(s_b))))`; the skip layers are
/// omitted when `s_a` is `None`.
pub fn head(p: &ParamSet, s_a: Option<&[f64]>, s_b: Option<&[f64]>, s_c: &[f64]) -> Vec<f64> {
    let h = match (s_a, s_b) {
        (Some(a), Some(b)) => {
            let ha = relu_vec(&linear_vec(p, "head.f_a", a));
            let hb = relu_vec(&linear_vec(p, "head.f_b", b));
            [ha, s_c.to_vec(), hb].concat()
        }
        _ => s_c.to_vec(),
    };
    let g0 = relu_vec(&linear_vec(p, "head.g0", &h));
    linear_vec(p, "head.g1", &g0)
}

/// Full disentangled network for one sample.
pub fn disentangled(p: &ParamSet, a: &[f64], b: &[f64], steps: usize, n_tokens: usize, d_tok: usize) -> Vec<f64> {
    let za = encode(p, "enc_a", a, steps, n_tokens, d_tok);
    let zb = encode(p, "enc_b", b, steps, n_tokens, d_tok);
    let joint = outer(&mean_rows(&za), &mean_rows(&zb));
    let (sa, _) = self_attention(p, "self_a", &za);
    let (sb, _) = self_attention(p, "self_b", &zb);
    let sc = cross_attention(p, &joint, &za, &zb, n_tokens);
    head(p, Some(&sa), Some(&sb), &sc)
}

/// Plain dense fusion: pooled encodings, flattened outer product, skip layers.
pub fn dense_fusion(p: &ParamSet, a: &[f64], b: &[f64], n_tokens: usize, d_tok: usize) -> Vec<f64> {
    let pa = mean_rows(&encode(p, "enc_a", a, 1, n_tokens, d_tok));
    let pb = mean_rows(&encode(p, "enc_b", b, 1, n_tokens, d_tok));
    let c = outer(&pa, &pb).concat();
    head(p, Some(&pa), Some(&pb), &c)
}

/// Early fusion: feed-forward net on the concatenated pooled encodings.
pub fn early_fusion(p: &ParamSet, a: &[f64], b: &[f64], n_tokens: usize, d_tok: usize) -> Vec<f64> {
    let pa = mean_rows(&encode(p, "enc_a", a, 1, n_tokens, d_tok));
    let pb = mean_rows(&encode(p, "enc_b", b, 1, n_tokens, d_tok));
    head(p, None, None, &[pa, pb].concat())
}

/// Class-weighted focal loss from logits, hard targets, mean over rows.
pub fn focal_from_logits(logits: &Mat, targets: &[usize], alpha: &[f64], gamma: f64) -> f64 {
    let n = logits.len() as f64;
    logits
        .iter()
        .zip(targets)
        .map(|(row, &t)| {
            let pt = softmax(row)[t].max(1e-12);
            -alpha[t] * (1.0 - pt).powf(gamma) * pt.ln()
        })
        .sum::<f64>()
        / n
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// In-sample R² of least squares of `y` on `x` (plus intercept), via
/// modified Gram-Schmidt on the design columns.
pub fn ols_r2(x: &Mat, y: &[f64]) -> f64 {
    let n = y.len();
    let mut cols: Vec<Vec<f64>> = vec![vec![1.0; n]];
    for j in 0..x[0].len() {
        cols.push(x.iter().map(|r| r[j]).collect());
    }
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for mut c in cols {
        for q in &basis {
            let d: f64 = c.iter().zip(q).map(|(a, b)| a * b).sum();
            for (ci, qi) in c.iter_mut().zip(q) {
                *ci -= d * qi;
            }
        }
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-10 {
            basis.push(c.iter().map(|v| v / norm).collect());
        }
    }
    let mut resid = y.to_vec();
    for q in &basis {
        let d: f64 = resid.iter().zip(q).map(|(a, b)| a * b).sum();
        for (r, qi) in resid.iter_mut().zip(q) {
            *r -= d * qi;
        }
    }
    let mean = y.iter().sum::<f64>() / n as f64;
    let tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    1.0 - resid.iter().map(|r| r * r).sum::<f64>() / tot
}
