//! Forward and backward passes of the network's building blocks.
//!
//! Every `*_backward` takes the forward cache and the gradient of the
//! loss w.r.t. the block's output and returns input gradients; parameter
//! gradients are accumulated into caller-owned tensors.

use crate::error::{Error, Result};
use crate::numcore::ops::{relu_backward, softmax_rows, softmax_rows_backward};
use crate::numcore::{log_softmax, Tensor};

/// Values kept by one graph-convolution layer for its backward pass.
#[derive(Debug, Clone)]
pub struct GcnCache {
    /// `Â · X`
    pub aggregated: Tensor,
    /// `Â · X · W` before the ReLU.
    pub pre: Tensor,
}

/// `ReLU(Â · X · W)` for one channel.
pub fn gcn_layer(x: &Tensor, a_norm: &Tensor, w: &Tensor) -> Result<(Tensor, GcnCache)> {
    let aggregated = a_norm.matmul(x)?;
    let pre = aggregated.matmul(w)?;
    Ok((pre.relu(), GcnCache { aggregated, pre }))
}

/// Accumulates `dL/dW` into `dw` and returns `dL/dX`.
pub fn gcn_layer_backward(
    cache: &GcnCache,
    a_norm: &Tensor,
    w: &Tensor,
    d_out: &Tensor,
    dw: &mut Tensor,
) -> Result<Tensor> {
    let d_pre = relu_backward(&cache.pre, d_out)?;
    dw.add_assign(&cache.aggregated.t_matmul(&d_pre)?)?;
    a_norm.t_matmul(&d_pre.matmul_t(w)?)
}

/// One shared layer: the same weight applied to the speed and flow channels.
pub fn shared_gcn_layer(
    z_speed: &Tensor,
    z_flow: &Tensor,
    a_norm: &Tensor,
    w: &Tensor,
) -> Result<(Tensor, Tensor)> {
    Ok((
        gcn_layer(z_speed, a_norm, w)?.0,
        gcn_layer(z_flow, a_norm, w)?.0,
    ))
}

/// `W_speed ∘ Z_speed + W_flow ∘ Z_flow`.
pub fn channel_fuse(
    z_speed: &Tensor,
    z_flow: &Tensor,
    w_speed: &Tensor,
    w_flow: &Tensor,
) -> Result<Tensor> {
    w_speed.hadamard(z_speed)?.add(&w_flow.hadamard(z_flow)?)
}

/// Self-attention across the feature columns of an `N × d` embedding.
///
/// Columns act as sequence elements with the `N` road values as their
/// features: `out = X · softmax_rows(XᵀX / √N)ᵀ`. Returns the output and
/// the `d × d` attention weights.
pub fn temporal_attention(x: &Tensor) -> Result<(Tensor, Tensor)> {
    let scale = 1.0 / (x.rows() as f64).sqrt();
    let probs = softmax_rows(&x.t_matmul(x)?.scale(scale))?;
    Ok((x.matmul_t(&probs)?, probs))
}

pub fn temporal_attention_backward(x: &Tensor, probs: &Tensor, d_out: &Tensor) -> Result<Tensor> {
    let scale = 1.0 / (x.rows() as f64).sqrt();
    let mut dx = d_out.matmul(probs)?;
    let d_probs = d_out.t_matmul(x)?;
    let d_scores = softmax_rows_backward(probs, &d_probs)?;
    let sym = d_scores.add(&d_scores.transpose()?)?;
    dx.add_assign(&x.matmul(&sym)?.scale(scale))?;
    Ok(dx)
}

/// Projection matrices of the multi-head fusion layer, each `N × N`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionWeights<'a> {
    pub query: &'a Tensor,
    pub key: &'a Tensor,
    pub value: &'a Tensor,
    pub output: &'a Tensor,
}

/// Forward values of the multi-head fusion layer.
#[derive(Debug, Clone)]
pub struct HighDimCache {
    pub heads: usize,
    pub q: Vec<Tensor>,
    pub k: Vec<Tensor>,
    pub v: Vec<Tensor>,
    /// `[heads, T, T, d]`, normalized over the third axis.
    pub attention: Tensor,
    /// Concatenated head outputs per combination, before the output projection.
    pub mixed: Vec<Tensor>,
}

#[inline]
fn att_index(t_count: usize, d: usize, i: usize, t: usize, u: usize, k: usize) -> usize {
    ((i * t_count + t) * t_count + u) * d + k
}

fn check_stack(x: &[Tensor]) -> Result<(usize, usize, usize)> {
    let first = x
        .first()
        .ok_or_else(|| Error::Empty("no combinations to fuse".into()))?;
    let (n, d) = (first.rows(), first.cols());
    if x.iter().any(|t| t.shape() != [n, d]) {
        return Err(Error::shape("combination embeddings differ in shape"));
    }
    Ok((x.len(), n, d))
}

/// Multi-head self-attention over `T` combination embeddings (`N × d` each).
///
/// Queries, keys and values map the road axis with `N × N` matrices and
/// are split into `heads` blocks of `N / heads` roads. For head `i` the
/// score of `(t, t')` at feature `k` is the road-axis dot product of the
/// query and key columns scaled by `1/√(N/heads)`; it is normalized over
/// `t'` separately for each feature.
pub fn highdim_attention(
    x: &[Tensor],
    weights: AttentionWeights<'_>,
    heads: usize,
) -> Result<(Vec<Tensor>, HighDimCache)> {
    let (t_count, n, d) = check_stack(x)?;
    if heads == 0 || n % heads != 0 {
        return Err(Error::invalid(format!(
            "{heads} heads do not divide {n} roads"
        )));
    }
    let m = n / heads;
    let scale = 1.0 / (m as f64).sqrt();
    let project = |w: &Tensor| -> Result<Vec<Tensor>> { x.iter().map(|xt| w.matmul(xt)).collect() };
    let q = project(weights.query)?;
    let k = project(weights.key)?;
    let v = project(weights.value)?;

    let mut attention = vec![0.0; heads * t_count * t_count * d];
    let mut scores = vec![0.0; t_count];
    for i in 0..heads {
        let rows = i * m..(i + 1) * m;
        for t in 0..t_count {
            for f in 0..d {
                let mut max = f64::NEG_INFINITY;
                for (u, s) in scores.iter_mut().enumerate() {
                    let mut dot = 0.0;
                    for r in rows.clone() {
                        dot += q[t].at(r, f) * k[u].at(r, f);
                    }
                    *s = dot * scale;
                    max = max.max(*s);
                }
                if !max.is_finite() {
                    return Err(Error::NonFinite("attention score".into()));
                }
                let mut total = 0.0;
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    total += *s;
                }
                for (u, s) in scores.iter().enumerate() {
                    attention[att_index(t_count, d, i, t, u, f)] = s / total;
                }
            }
        }
    }

    let mut mixed = Vec::with_capacity(t_count);
    let mut out = Vec::with_capacity(t_count);
    for t in 0..t_count {
        let mut h = Tensor::zeros(&[n, d]);
        let hd = h.data_mut();
        for r in 0..n {
            let i = r / m;
            for u in 0..t_count {
                let vrow = v[u].row(r);
                for f in 0..d {
                    hd[r * d + f] += attention[att_index(t_count, d, i, t, u, f)] * vrow[f];
                }
            }
        }
        out.push(weights.output.matmul(&h)?);
        mixed.push(h);
    }
    let attention = Tensor::new(vec![heads, t_count, t_count, d], attention)?;
    Ok((
        out,
        HighDimCache {
            heads,
            q,
            k,
            v,
            attention,
            mixed,
        },
    ))
}

/// Gradients of the fusion layer's projection matrices.
#[derive(Debug, Clone)]
pub struct AttentionGrads {
    pub query: Tensor,
    pub key: Tensor,
    pub value: Tensor,
    pub output: Tensor,
}

impl AttentionGrads {
    pub fn zeros(n: usize) -> Self {
        AttentionGrads {
            query: Tensor::zeros(&[n, n]),
            key: Tensor::zeros(&[n, n]),
            value: Tensor::zeros(&[n, n]),
            output: Tensor::zeros(&[n, n]),
        }
    }
}

/// Accumulates projection gradients into `grads`; returns `dL/dX` per combination.
pub fn highdim_attention_backward(
    x: &[Tensor],
    weights: AttentionWeights<'_>,
    cache: &HighDimCache,
    d_out: &[Tensor],
    grads: &mut AttentionGrads,
) -> Result<Vec<Tensor>> {
    let (t_count, n, d) = check_stack(x)?;
    if d_out.len() != t_count {
        return Err(Error::shape(
            "output gradient count differs from combination count",
        ));
    }
    let heads = cache.heads;
    let m = n / heads;
    let scale = 1.0 / (m as f64).sqrt();
    let a = cache.attention.data();

    let mut d_mixed = Vec::with_capacity(t_count);
    for t in 0..t_count {
        grads
            .output
            .add_assign(&d_out[t].matmul_t(&cache.mixed[t])?)?;
        d_mixed.push(weights.output.t_matmul(&d_out[t])?);
    }

    let mut dq: Vec<Tensor> = (0..t_count).map(|_| Tensor::zeros(&[n, d])).collect();
    let mut dk = dq.clone();
    let mut dv = dq.clone();
    let mut da = vec![0.0; t_count];
    for i in 0..heads {
        let rows = i * m..(i + 1) * m;
        for t in 0..t_count {
            for f in 0..d {
                // dL/da over t', then back through the softmax.
                let mut dot = 0.0;
                for (u, g) in da.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for r in rows.clone() {
                        s += d_mixed[t].at(r, f) * cache.v[u].at(r, f);
                    }
                    *g = s;
                    dot += a[att_index(t_count, d, i, t, u, f)] * s;
                }
                for u in 0..t_count {
                    let w = a[att_index(t_count, d, i, t, u, f)];
                    let ds = w * (da[u] - dot) * scale;
                    let dvd = dv[u].data_mut();
                    for r in rows.clone() {
                        dvd[r * d + f] += w * d_mixed[t].at(r, f);
                    }
                    if ds != 0.0 {
                        let dqd = dq[t].data_mut();
                        for r in rows.clone() {
                            dqd[r * d + f] += ds * cache.k[u].at(r, f);
                        }
                        let dkd = dk[u].data_mut();
                        for r in rows.clone() {
                            dkd[r * d + f] += ds * cache.q[t].at(r, f);
                        }
                    }
                }
            }
        }
    }

    let mut dx = Vec::with_capacity(t_count);
    for t in 0..t_count {
        grads.query.add_assign(&dq[t].matmul_t(&x[t])?)?;
        grads.key.add_assign(&dk[t].matmul_t(&x[t])?)?;
        grads.value.add_assign(&dv[t].matmul_t(&x[t])?)?;
        let mut g = weights.query.t_matmul(&dq[t])?;
        g.add_assign(&weights.key.t_matmul(&dk[t])?)?;
        g.add_assign(&weights.value.t_matmul(&dv[t])?)?;
        dx.push(g);
    }
    Ok(dx)
}

/// Flattened head input and pre-activation logits.
#[derive(Debug, Clone)]
pub struct FcCache {
    /// `N × (T·d)`, road-major.
    pub flat: Tensor,
    pub pre: Tensor,
}

/// Road-major flattening `T × N × d → N × (T·d)`.
pub fn flatten_roads(x: &[Tensor]) -> Result<Tensor> {
    let (t_count, n, d) = check_stack(x)?;
    let mut data = vec![0.0; n * t_count * d];
    for (t, xt) in x.iter().enumerate() {
        for r in 0..n {
            let dst = r * t_count * d + t * d;
            data[dst..dst + d].copy_from_slice(xt.row(r));
        }
    }
    Tensor::matrix(n, t_count * d, data)
}

fn unflatten_roads(flat: &Tensor, t_count: usize, d: usize) -> Result<Vec<Tensor>> {
    let n = flat.rows();
    (0..t_count)
        .map(|t| Tensor::from_fn(n, d, |r, f| flat.at(r, t * d + f)))
        .map(Ok)
        .collect()
}

/// `ReLU(X' · W_fc + B_fc)` with `X'` the road-major flattening of `x_fe`.
pub fn fc_head(x_fe: &[Tensor], w_fc: &Tensor, b_fc: &Tensor) -> Result<(Tensor, FcCache)> {
    let flat = flatten_roads(x_fe)?;
    let pre = flat.matmul(w_fc)?.add(b_fc)?;
    Ok((pre.relu(), FcCache { flat, pre }))
}

/// Accumulates into `dw`/`db`; returns `dL/dX_fe` per combination.
pub fn fc_head_backward(
    cache: &FcCache,
    w_fc: &Tensor,
    d_logits: &Tensor,
    t_count: usize,
    dw: &mut Tensor,
    db: &mut Tensor,
) -> Result<Vec<Tensor>> {
    let d_pre = relu_backward(&cache.pre, d_logits)?;
    dw.add_assign(&cache.flat.t_matmul(&d_pre)?)?;
    db.add_assign(&d_pre)?;
    let d_flat = d_pre.matmul_t(w_fc)?;
    unflatten_roads(&d_flat, t_count, cache.flat.cols() / t_count)
}

/// Mean negative log-likelihood over roads and its gradient w.r.t. the logits.
///
/// `targets` are grades in `1..=Class`.
pub fn nll_loss(logits: &Tensor, targets: &[usize]) -> Result<(f64, Tensor)> {
    let (n, c) = (logits.rows(), logits.cols());
    if targets.len() != n {
        return Err(Error::shape(format!(
            "{} targets for {n} roads",
            targets.len()
        )));
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(n * c);
    for (r, &y) in targets.iter().enumerate() {
        if y == 0 || y > c {
            return Err(Error::invalid(format!("target grade {y} outside 1..={c}")));
        }
        let lp = log_softmax(logits.row(r))?;
        loss -= lp[y - 1];
        grad.extend(lp.iter().enumerate().map(|(j, l)| {
            let onehot = if j == y - 1 { 1.0 } else { 0.0 };
            (l.exp() - onehot) / n as f64
        }));
    }
    Ok((loss / n as f64, Tensor::matrix(n, c, grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{glorot_uniform, grad_check};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn gcn_identity_pass_through() {
        let x = Tensor::matrix(2, 2, vec![1.0, 2.0, 0.0, 3.0]).unwrap();
        let i = Tensor::identity(2);
        let (zs, zf) = shared_gcn_layer(&x, &x, &i, &i).unwrap();
        assert_eq!(zs, x);
        assert_eq!(zf, x);
        let (neg, _) = gcn_layer(&x.scale(-1.0), &i, &i).unwrap();
        assert_eq!(neg, Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn gcn_matches_scalar_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(4, 4, &mut rng);
        let x = random(4, 3, &mut rng);
        let w = random(3, 2, &mut rng);
        let (out, _) = gcn_layer(&x, &a, &w).unwrap();
        for r in 0..4 {
            for c in 0..2 {
                let mut s = 0.0;
                for j in 0..4 {
                    for k in 0..3 {
                        s += a.at(r, j) * x.at(j, k) * w.at(k, c);
                    }
                }
                assert!((out.at(r, c) - s.max(0.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fuse_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let zs = random(3, 2, &mut rng);
        let zf = random(3, 2, &mut rng);
        let ones = Tensor::full(&[3, 2], 1.0);
        let zeros = Tensor::zeros(&[3, 2]);
        assert_eq!(channel_fuse(&zs, &zf, &ones, &zeros).unwrap(), zs);
        let half = Tensor::full(&[3, 2], 0.5);
        assert_eq!(channel_fuse(&zs, &zs, &half, &half).unwrap(), zs);
        let ws = random(3, 2, &mut rng);
        let wf = random(3, 2, &mut rng);
        let out = channel_fuse(&zs, &zf, &ws, &wf).unwrap();
        for i in 0..6 {
            let e = ws.data()[i] * zs.data()[i] + wf.data()[i] * zf.data()[i];
            assert_eq!(out.data()[i], e);
        }
    }

    #[test]
    fn temporal_attention_examples() {
        let x = Tensor::matrix(3, 1, vec![1.0, -2.0, 0.5]).unwrap();
        assert_eq!(temporal_attention(&x).unwrap().0, x);
        // Identical columns give a constant score matrix.
        let x = Tensor::from_fn(4, 3, |r, _| r as f64 * 0.3 - 0.2);
        let (out, probs) = temporal_attention(&x).unwrap();
        assert!(out.sub(&x).unwrap().max_abs() < 1e-12);
        for r in 0..3 {
            assert!((probs.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn temporal_attention_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(5, 3, &mut rng);
        let g = random(5, 3, &mut rng);
        let loss = |x: &Tensor| temporal_attention(x).unwrap().0.hadamard(&g).unwrap().sum();
        let (_, p) = temporal_attention(&x).unwrap();
        let analytic = temporal_attention_backward(&x, &p, &g).unwrap();
        assert!(grad_check(loss, &x, &analytic, 1e-6).unwrap() < 1e-7);
    }

    #[test]
    fn gcn_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random(4, 4, &mut rng);
        let x = random(4, 3, &mut rng);
        let w = random(3, 2, &mut rng);
        let g = random(4, 2, &mut rng);
        let (_, cache) = gcn_layer(&x, &a, &w).unwrap();
        let mut dw = Tensor::zeros(&[3, 2]);
        let dx = gcn_layer_backward(&cache, &a, &w, &g, &mut dw).unwrap();
        let by_w = |w: &Tensor| gcn_layer(&x, &a, w).unwrap().0.hadamard(&g).unwrap().sum();
        let by_x = |x: &Tensor| gcn_layer(x, &a, &w).unwrap().0.hadamard(&g).unwrap().sum();
        assert!(grad_check(by_w, &w, &dw, 1e-6).unwrap() < 1e-7);
        assert!(grad_check(by_x, &x, &dx, 1e-6).unwrap() < 1e-7);
    }

    fn attention_setup(n: usize, d: usize, t: usize, seed: u64) -> (Vec<Tensor>, [Tensor; 4]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = (0..t).map(|_| random(n, d, &mut rng)).collect();
        let w = [
            glorot_uniform(n, n, &mut rng),
            glorot_uniform(n, n, &mut rng),
            glorot_uniform(n, n, &mut rng),
            glorot_uniform(n, n, &mut rng),
        ];
        (x, w)
    }

    fn weights(w: &[Tensor; 4]) -> AttentionWeights<'_> {
        AttentionWeights {
            query: &w[0],
            key: &w[1],
            value: &w[2],
            output: &w[3],
        }
    }

    #[test]
    fn single_combination_passes_values_through() {
        let (x, mut w) = attention_setup(4, 3, 1, 7);
        w[2] = Tensor::identity(4);
        w[3] = Tensor::identity(4);
        let (out, cache) = highdim_attention(&x, weights(&w), 2).unwrap();
        assert_eq!(out[0], x[0]);
        assert!(cache.attention.data().iter().all(|&a| a == 1.0));
    }

    #[test]
    fn attention_is_normalized() {
        let (x, w) = attention_setup(6, 4, 5, 8);
        let (_, cache) = highdim_attention(&x, weights(&w), 3).unwrap();
        assert_eq!(cache.attention.shape(), &[3, 5, 5, 4]);
        for i in 0..3 {
            for t in 0..5 {
                for k in 0..4 {
                    let s: f64 = (0..5)
                        .map(|u| cache.attention.data()[att_index(5, 4, i, t, u, k)])
                        .sum();
                    assert!((s - 1.0).abs() < 1e-12);
                }
            }
        }
        assert!(highdim_attention(&x, weights(&w), 4).is_err());
    }

    #[test]
    fn two_combination_hand_case() {
        // N = 2 roads, one head (m = 2), d = 1, identity projections.
        let x = vec![
            Tensor::matrix(2, 1, vec![1.0, 0.0]).unwrap(),
            Tensor::matrix(2, 1, vec![0.0, 2.0]).unwrap(),
        ];
        let i = Tensor::identity(2);
        let w = AttentionWeights {
            query: &i,
            key: &i,
            value: &i,
            output: &i,
        };
        let (out, cache) = highdim_attention(&x, w, 1).unwrap();
        // scores (÷√2): s00 = 1, s01 = 0, s10 = 0, s11 = 4
        let s = 2f64.sqrt();
        let a00 = 1.0 / (1.0 + (-1.0 / s).exp());
        let a10 = 1.0 / (1.0 + (4.0 / s).exp());
        let a = cache.attention.data();
        assert!((a[0] - a00).abs() < 1e-15);
        assert!((a[2] - a10).abs() < 1e-15);
        // out^0 = a00·[1,0] + (1−a00)·[0,2]
        assert!((out[0].at(0, 0) - a00).abs() < 1e-15);
        assert!((out[0].at(1, 0) - 2.0 * (1.0 - a00)).abs() < 1e-15);
        assert!((out[1].at(0, 0) - a10).abs() < 1e-15);
    }

    #[test]
    fn attention_gradients() {
        let (x, w) = attention_setup(4, 3, 3, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let g: Vec<Tensor> = (0..3).map(|_| random(4, 3, &mut rng)).collect();
        let loss = |x: &[Tensor], w: &[Tensor; 4]| -> f64 {
            let (out, _) = highdim_attention(x, weights(w), 2).unwrap();
            out.iter()
                .zip(&g)
                .map(|(o, g)| o.hadamard(g).unwrap().sum())
                .sum()
        };
        let (_, cache) = highdim_attention(&x, weights(&w), 2).unwrap();
        let mut grads = AttentionGrads::zeros(4);
        let dx = highdim_attention_backward(&x, weights(&w), &cache, &g, &mut grads).unwrap();
        let analytic = [grads.query, grads.key, grads.value, grads.output];
        for p in 0..4 {
            let f = |wp: &Tensor| {
                let mut w2 = w.clone();
                w2[p] = wp.clone();
                loss(&x, &w2)
            };
            assert!(
                grad_check(f, &w[p], &analytic[p], 1e-6).unwrap() < 1e-7,
                "param {p}"
            );
        }
        for t in 0..3 {
            let f = |xt: &Tensor| {
                let mut x2 = x.clone();
                x2[t] = xt.clone();
                loss(&x2, &w)
            };
            assert!(
                grad_check(f, &x[t], &dx[t], 1e-6).unwrap() < 1e-7,
                "input {t}"
            );
        }
    }

    #[test]
    fn fc_head_examples() {
        let x = vec![Tensor::matrix(2, 2, vec![1.0, -2.0, 3.0, 4.0]).unwrap()];
        let (zero, _) = fc_head(&x, &Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap();
        assert_eq!(zero, Tensor::zeros(&[2, 3]));
        // Select input coordinate 1 into class 0.
        let mut w = Tensor::zeros(&[2, 3]);
        w.set(1, 0, 1.0);
        let (l, _) = fc_head(&x, &w, &Tensor::zeros(&[2, 3])).unwrap();
        assert_eq!(l.at(0, 0), 0.0);
        assert_eq!(l.at(1, 0), 4.0);
    }

    #[test]
    fn fc_head_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<Tensor> = (0..3).map(|_| random(4, 2, &mut rng)).collect();
        let w = random(6, 3, &mut rng);
        let b = random(4, 3, &mut rng);
        let (l, _) = fc_head(&x, &w, &b).unwrap();
        for r in 0..4 {
            for c in 0..3 {
                let mut s = b.at(r, c);
                for t in 0..3 {
                    for f in 0..2 {
                        s += x[t].at(r, f) * w.at(t * 2 + f, c);
                    }
                }
                assert!((l.at(r, c) - s.max(0.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fc_head_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x: Vec<Tensor> = (0..2).map(|_| random(3, 2, &mut rng)).collect();
        let w = random(4, 3, &mut rng);
        let b = random(3, 3, &mut rng);
        let g = random(3, 3, &mut rng);
        let (_, cache) = fc_head(&x, &w, &b).unwrap();
        let mut dw = Tensor::zeros(&[4, 3]);
        let mut db = Tensor::zeros(&[3, 3]);
        let dx = fc_head_backward(&cache, &w, &g, 2, &mut dw, &mut db).unwrap();
        let by_w = |w: &Tensor| fc_head(&x, w, &b).unwrap().0.hadamard(&g).unwrap().sum();
        let by_b = |b: &Tensor| fc_head(&x, &w, b).unwrap().0.hadamard(&g).unwrap().sum();
        let by_x0 = |x0: &Tensor| {
            fc_head(&[x0.clone(), x[1].clone()], &w, &b)
                .unwrap()
                .0
                .hadamard(&g)
                .unwrap()
                .sum()
        };
        assert!(grad_check(by_w, &w, &dw, 1e-6).unwrap() < 1e-7);
        assert!(grad_check(by_b, &b, &db, 1e-6).unwrap() < 1e-7);
        assert!(grad_check(by_x0, &x[0], &dx[0], 1e-6).unwrap() < 1e-7);
    }

    #[test]
    fn nll_examples() {
        let (loss, _) = nll_loss(&Tensor::zeros(&[2, 5]), &[1, 4]).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-15);
        let mut confident = Tensor::zeros(&[1, 3]);
        confident.set(0, 2, 50.0);
        assert!(nll_loss(&confident, &[3]).unwrap().0 < 1e-20);
        assert!(nll_loss(&Tensor::zeros(&[1, 3]), &[4]).is_err());
        assert!(nll_loss(&Tensor::zeros(&[1, 3]), &[0]).is_err());
    }

    #[test]
    fn nll_three_road_hand_case() {
        let logits = Tensor::matrix(3, 2, vec![0.0, 1.0, 2.0, 0.0, 1.0, 1.0]).unwrap();
        let (loss, grad) = nll_loss(&logits, &[2, 2, 1]).unwrap();
        let e = 1f64.exp();
        let l0 = -(e / (1.0 + e)).ln();
        let l1 = -(1.0 / (1.0 + e * e)).ln();
        let l2 = 2f64.ln();
        assert!((loss - (l0 + l1 + l2) / 3.0).abs() < 1e-15);
        let f = |l: &Tensor| nll_loss(l, &[2, 2, 1]).unwrap().0;
        assert!(grad_check(f, &logits, &grad, 1e-6).unwrap() < 1e-8);
    }
}
