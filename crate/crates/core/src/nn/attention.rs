use super::loss::softmax_in_place;
use super::{gemm, MatRef, NnError, Parameter, Result, Scalar, Tensor};
use rand::Rng;

/// Intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct AttentionCache<T> {
    x: Tensor<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// Attention weights, `[batch, heads, tokens, tokens]`.
    p: Vec<T>,
    o: Vec<T>,
    tokens: usize,
    heads: usize,
}

impl<T> AttentionCache<T> {
    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn weights(&self) -> &[T] {
        &self.p
    }
}

#[derive(Debug, Clone)]
pub struct AttentionGrads<T> {
    pub dx: Tensor<T>,
    pub dwq: Tensor<T>,
    pub dwk: Tensor<T>,
    pub dwv: Tensor<T>,
    pub dwo: Tensor<T>,
}

fn dims<T: Scalar>(x: &Tensor<T>, w: [&Tensor<T>; 4], heads: usize) -> Result<(usize, usize)> {
    let s = x.shape();
    if s.len() < 2 {
        return Err(NnError::shape("attention", format!("input {s:?}")));
    }
    let (t, d) = (s[s.len() - 2], s[s.len() - 1]);
    if heads == 0 || d % heads != 0 {
        return Err(NnError::shape("attention", format!("width {d} with {heads} heads")));
    }
    if let Some(bad) = w.iter().find(|w| w.shape() != [d, d]) {
        return Err(NnError::shape("attention", format!("projection {:?}", bad.shape())));
    }
    Ok((t, d))
}

fn project<T: Scalar>(x: &[T], rows: usize, w: &Tensor<T>) -> Vec<T> {
    let d = w.shape()[0];
    let mut y = vec![T::zero(); rows * d];
    gemm(T::one(), MatRef::new(x, rows, d), MatRef::new(w.data(), d, d).t(), T::zero(), &mut y, d);
    y
}

/// Multi-head scaled dot-product self-attention over `[.., tokens, d]`
/// without biases: `softmax(Q Kᵀ / sqrt(d/h)) V` per head, then `Wo`.
pub fn multi_head_self_attention<T: Scalar>(
    x: &Tensor<T>,
    wq: &Tensor<T>,
    wk: &Tensor<T>,
    wv: &Tensor<T>,
    wo: &Tensor<T>,
    heads: usize,
) -> Result<(Tensor<T>, AttentionCache<T>)> {
    let (t, d) = dims(x, [wq, wk, wv, wo], heads)?;
    let n = x.rows();
    let batch = if t == 0 { 0 } else { n / t };
    let dh = d / heads;
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let q = project(x.data(), n, wq);
    let k = project(x.data(), n, wk);
    let v = project(x.data(), n, wv);
    let mut p = vec![T::zero(); batch * heads * t * t];
    let mut o = vec![T::zero(); n * d];
    for b in 0..batch {
        for h in 0..heads {
            let base = b * t * d + h * dh;
            let ps = &mut p[(b * heads + h) * t * t..][..t * t];
            gemm(
                scale,
                MatRef::strided(&q[base..], t, dh, d, 1),
                MatRef::strided(&k[base..], t, dh, d, 1).t(),
                T::zero(),
                ps,
                t,
            );
            for row in ps.chunks_exact_mut(t) {
                softmax_in_place(row);
            }
            gemm(
                T::one(),
                MatRef::new(ps, t, t),
                MatRef::strided(&v[base..], t, dh, d, 1),
                T::zero(),
                &mut o[base..],
                d,
            );
        }
    }
    let y = project(&o, n, wo);
    let cache = AttentionCache {
        x: x.clone(),
        q,
        k,
        v,
        p,
        o,
        tokens: t,
        heads,
    };
    Ok((Tensor::new(x.shape().to_vec(), y)?, cache))
}

/// Returns fresh gradients for the input and the four projections.
pub fn multi_head_self_attention_backward<T: Scalar>(
    cache: &AttentionCache<T>,
    wq: &Tensor<T>,
    wk: &Tensor<T>,
    wv: &Tensor<T>,
    wo: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<AttentionGrads<T>> {
    let d = cache.x.last_dim();
    let mut g = AttentionGrads {
        dx: Tensor::zeros(cache.x.shape()),
        dwq: Tensor::zeros(&[d, d]),
        dwk: Tensor::zeros(&[d, d]),
        dwv: Tensor::zeros(&[d, d]),
        dwo: Tensor::zeros(&[d, d]),
    };
    let dx = backward_into(
        cache,
        [wq, wk, wv, wo],
        dy,
        [g.dwq.data_mut(), g.dwk.data_mut(), g.dwv.data_mut(), g.dwo.data_mut()],
    )?;
    g.dx = dx;
    Ok(g)
}

fn backward_into<T: Scalar>(
    c: &AttentionCache<T>,
    w: [&Tensor<T>; 4],
    dy: &Tensor<T>,
    dw: [&mut [T]; 4],
) -> Result<Tensor<T>> {
    let (t, d) = dims(&c.x, w, c.heads)?;
    if dy.shape() != c.x.shape() {
        return Err(NnError::shape("attention", format!("upstream {:?}", dy.shape())));
    }
    let [wq, wk, wv, wo] = w;
    let [dwq, dwk, dwv, dwo] = dw;
    let n = c.x.rows();
    let batch = if t == 0 { 0 } else { n / t };
    let heads = c.heads;
    let dh = d / heads;
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let one = T::one();
    let nd = |buf| MatRef::new(buf, n, d);

    gemm(one, nd(dy.data()).t(), nd(&c.o), one, dwo, d);
    let mut d_o = vec![T::zero(); n * d];
    gemm(one, nd(dy.data()), MatRef::new(wo.data(), d, d), T::zero(), &mut d_o, d);

    let mut dq = vec![T::zero(); n * d];
    let mut dk = vec![T::zero(); n * d];
    let mut dv = vec![T::zero(); n * d];
    let mut dp = vec![T::zero(); t * t];
    for b in 0..batch {
        for h in 0..heads {
            let base = b * t * d + h * dh;
            let p = &c.p[(b * heads + h) * t * t..][..t * t];
            let pm = MatRef::new(p, t, t);
            gemm(one, head(base, t, dh, d, &d_o), head(base, t, dh, d, &c.v).t(), T::zero(), &mut dp, t);
            gemm(one, pm.t(), head(base, t, dh, d, &d_o), T::zero(), &mut dv[base..], d);
            for (dp_row, p_row) in dp.chunks_exact_mut(t).zip(p.chunks_exact(t)) {
                let dot: f64 = dp_row.iter().zip(p_row).map(|(a, b)| a.f64() * b.f64()).sum();
                let dot = T::of(dot);
                for (g, &pv) in dp_row.iter_mut().zip(p_row) {
                    *g = pv * (*g - dot) * scale;
                }
            }
            let ds = MatRef::new(&dp, t, t);
            gemm(one, ds, head(base, t, dh, d, &c.k), T::zero(), &mut dq[base..], d);
            gemm(one, ds.t(), head(base, t, dh, d, &c.q), T::zero(), &mut dk[base..], d);
        }
    }

    let x = c.x.data();
    let mut dx = vec![T::zero(); n * d];
    for ((g, w), dw) in [(&dq, wq), (&dk, wk), (&dv, wv)].into_iter().zip([dwq, dwk, dwv]) {
        gemm(one, nd(g).t(), nd(x), one, dw, d);
        gemm(one, nd(g), MatRef::new(w.data(), d, d), one, &mut dx, d);
    }
    Tensor::new(c.x.shape().to_vec(), dx)
}

fn head<T>(base: usize, t: usize, dh: usize, d: usize, buf: &[T]) -> MatRef<'_, T> {
    MatRef::strided(&buf[base..], t, dh, d, 1)
}

/// Self-attention layer with bias-free query, key, value and output
/// projections, each `[d, d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttention<T> {
    pub wq: Parameter<T>,
    pub wk: Parameter<T>,
    pub wv: Parameter<T>,
    pub wo: Parameter<T>,
    pub heads: usize,
}

impl<T: Scalar> SelfAttention<T> {
    pub fn new<R: Rng>(name: &str, d: usize, heads: usize, rng: &mut R) -> Self {
        let mut w = |s: &str| Parameter::xavier(format!("{name}.{s}"), &[d, d], d, d, rng);
        Self {
            wq: w("wq"),
            wk: w("wk"),
            wv: w("wv"),
            wo: w("wo"),
            heads,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, AttentionCache<T>)> {
        multi_head_self_attention(
            x,
            &self.wq.value,
            &self.wk.value,
            &self.wv.value,
            &self.wo.value,
            self.heads,
        )
    }

    /// Accumulates projection gradients and returns the input gradient.
    pub fn backward(&mut self, cache: &AttentionCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let Self { wq, wk, wv, wo, .. } = self;
        backward_into(
            cache,
            [&wq.value, &wk.value, &wv.value, &wo.value],
            dy,
            [
                wq.grad.data_mut(),
                wk.grad.data_mut(),
                wv.grad.data_mut(),
                wo.grad.data_mut(),
            ],
        )
    }

    pub fn params(&self) -> [&Parameter<T>; 4] {
        [&self.wq, &self.wk, &self.wv, &self.wo]
    }

    pub fn params_mut(&mut self) -> [&mut Parameter<T>; 4] {
        [&mut self.wq, &mut self.wk, &mut self.wv, &mut self.wo]
    }

    /// Multiplications for `batch` sequences of `tokens` tokens.
    pub fn multiply_count(&self, batch: usize, tokens: usize) -> u64 {
        let d = self.wq.shape()[0];
        (4 * batch * tokens * d * d + 2 * batch * tokens * tokens * d) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64, shape: &[usize], d: usize) -> (Tensor<f64>, [Tensor<f64>; 4], Tensor<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = |s: &[usize]| Tensor::<f64>::from_fn(s, |_| rng.random_range(-1.0..1.0));
        let x = r(shape);
        let w = [r(&[d, d]), r(&[d, d]), r(&[d, d]), r(&[d, d])];
        let up = r(shape);
        (x, w, up)
    }

    #[test]
    fn weights_are_row_stochastic() {
        let (x, [q, k, v, o], _) = setup(1, &[3, 9, 8], 8);
        let (y, cache) = multi_head_self_attention(&x, &q, &k, &v, &o, 2).unwrap();
        assert_eq!(y.shape(), &[3, 9, 8]);
        assert_eq!(cache.weights().len(), 3 * 2 * 81);
        for row in cache.weights().chunks(9) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_items_are_independent() {
        let (x, [q, k, v, o], _) = setup(2, &[2, 4, 6], 6);
        let (y, _) = multi_head_self_attention(&x, &q, &k, &v, &o, 3).unwrap();
        let first = Tensor::new(vec![4, 6], x.data()[..24].to_vec()).unwrap();
        let (y1, _) = multi_head_self_attention(&first, &q, &k, &v, &o, 3).unwrap();
        assert_eq!(&y.data()[..24], y1.data());
    }

    #[test]
    fn identical_tokens_give_identical_rows() {
        let (_, [q, k, v, o], _) = setup(7, &[1], 8);
        let x = Tensor::from_fn(&[5, 8], |i| (i % 8) as f64 * 0.3 - 1.0);
        let (y, _) = multi_head_self_attention(&x, &q, &k, &v, &o, 2).unwrap();
        for row in y.data().chunks(8).skip(1) {
            assert_eq!(row, &y.data()[..8]);
        }
    }

    #[test]
    fn single_token_is_value_then_output() {
        let (x, [q, k, v, o], _) = setup(8, &[1, 8], 8);
        let (y, _) = multi_head_self_attention(&x, &q, &k, &v, &o, 2).unwrap();
        let vx = project(x.data(), 1, &v);
        let want = project(&vx, 1, &o);
        for (a, b) in y.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_indivisible_heads() {
        let (x, [q, k, v, o], _) = setup(3, &[4, 6], 6);
        assert!(multi_head_self_attention(&x, &q, &k, &v, &o, 4).is_err());
    }

    #[test]
    fn small_sequence_gradient() {
        let (x, w, up) = setup(6, &[3, 8], 8);
        let (_, cache) = multi_head_self_attention(&x, &w[0], &w[1], &w[2], &w[3], 2).unwrap();
        let g = multi_head_self_attention_backward(&cache, &w[0], &w[1], &w[2], &w[3], &up).unwrap();
        let rep = grad_check(
            |p| {
                let x = Tensor::new(vec![3, 8], p.to_vec()).unwrap();
                let (y, _) = multi_head_self_attention(&x, &w[0], &w[1], &w[2], &w[3], 2).unwrap();
                y.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
            },
            x.data(),
            g.dx.data(),
            1e-3,
            None,
        );
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let shape = [2, 5, 6];
        let (x, w, up) = setup(5, &shape, 6);
        let (_, cache) = multi_head_self_attention(&x, &w[0], &w[1], &w[2], &w[3], 2).unwrap();
        let g = multi_head_self_attention_backward(&cache, &w[0], &w[1], &w[2], &w[3], &up).unwrap();
        let obj = |x: &Tensor<f64>, w: &[Tensor<f64>; 4]| {
            let (y, _) = multi_head_self_attention(x, &w[0], &w[1], &w[2], &w[3], 2).unwrap();
            y.data().iter().zip(up.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let t = |s: &[usize], p: &[f64]| Tensor::new(s.to_vec(), p.to_vec()).unwrap();
        let rep = grad_check(|p| obj(&t(&shape, p), &w), x.data(), g.dx.data(), 1e-4, None);
        assert!(rep.max_rel_error < 1e-4, "dx {rep:?}");
        for (i, dw) in [&g.dwq, &g.dwk, &g.dwv, &g.dwo].into_iter().enumerate() {
            let rep = grad_check(
                |p| {
                    let mut w2 = w.clone();
                    w2[i] = t(&[6, 6], p);
                    obj(&x, &w2)
                },
                w[i].data(),
                dw.data(),
                1e-4,
                None,
            );
            assert!(rep.max_rel_error < 1e-4, "w{i} {rep:?}");
        }
    }
}
