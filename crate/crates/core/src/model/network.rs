use super::{ModelConfig, ModelError, Variant};
use crate::nn::{
    gemm, relu_in_place, AttentionCache, Conv3d, LayerNorm, LayerNormCache, Linear, MatRef,
    Parameter, Scalar, SelfAttention, Tensor,
};
use crate::sampler::{DESCRIPTOR_LEN, GRID_COUNT, GRID_SAMPLES, LOCAL_GRID};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Side of the decoder feature cube.
pub const FEATURE_SIDE: usize = 9;
/// Channels produced by the head before the local grid is appended.
pub const FEATURE_CHANNELS: usize = 8;
pub const HEAD_OUT: usize = FEATURE_SIDE * FEATURE_SIDE * FEATURE_SIDE * FEATURE_CHANNELS;
/// Side of the predicted label block.
pub const OUT_SIDE: usize = 5;
pub const OUT_POSITIONS: usize = OUT_SIDE * OUT_SIDE * OUT_SIDE;

const VOXELS: usize = FEATURE_SIDE * FEATURE_SIDE * FEATURE_SIDE;
const DEC_CHANNELS: usize = FEATURE_CHANNELS + 1;

type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock<T> {
    pub ff1: Linear<T>,
    pub ff2: Linear<T>,
    pub norm: LayerNorm<T>,
}

/// Post-norm encoder layer: attention and feed-forward sub-layers, each
/// followed by a residual add and layer norm.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer<T> {
    pub attn: SelfAttention<T>,
    pub norm1: LayerNorm<T>,
    pub ff1: Linear<T>,
    pub ff2: Linear<T>,
    pub norm2: LayerNorm<T>,
}

/// The descriptor-to-label-block network.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualTransformer<T = f32> {
    config: ModelConfig,
    pub proj: Vec<Linear<T>>,
    pub fusion: Linear<T>,
    pub lifts: Vec<Linear<T>>,
    pub residual: Vec<ResidualBlock<T>>,
    pub encoder: Vec<EncoderLayer<T>>,
    pub mlp: Option<Linear<T>>,
    pub head: Linear<T>,
    pub conv1: Conv3d<T>,
    pub conv2: Conv3d<T>,
}

struct ResCache<T> {
    x: Tensor<T>,
    h: Tensor<T>,
    ln: LayerNormCache<T>,
}

struct EncCache<T> {
    attn: AttentionCache<T>,
    ln1: LayerNormCache<T>,
    y: Tensor<T>,
    h: Tensor<T>,
    ln2: LayerNormCache<T>,
}

/// Per-sample shapes of each stage, in execution order.
pub type Trace = Vec<(&'static str, Vec<usize>)>;

/// Activations saved by [`ResidualTransformer::forward_cached`].
pub struct ForwardCache<T> {
    batch: usize,
    x: Vec<T>,
    pcat: Tensor<T>,
    f: Tensor<T>,
    mlp_h: Option<Tensor<T>>,
    res: Vec<ResCache<T>>,
    enc: Vec<EncCache<T>>,
    flat: Tensor<T>,
    features: Tensor<T>,
    c1: Tensor<T>,
    trace: Trace,
}

impl<T> ForwardCache<T> {
    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

impl<T: Scalar> ForwardCache<T> {
    /// On/off state of every ReLU unit in the pass. Two passes with equal
    /// patterns lie in the same linear piece of the ReLU nonlinearity.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        let mut push = |t: &Tensor<T>| out.extend(t.data().iter().map(|&v| v > T::zero()));
        for r in &self.res {
            push(&r.h);
        }
        for e in &self.enc {
            push(&e.h);
        }
        if let Some(h) = &self.mlp_h {
            push(h);
        }
        push(&self.c1);
        out
    }
}

/// Column sums of a strided `[rows, cols]` view, added into `out`.
fn add_strided_column_sums<T: Scalar>(data: &[T], rows: usize, cols: usize, rs: usize, out: &mut [T]) {
    let mut acc = vec![0.0f64; cols];
    for r in 0..rows {
        for (a, &x) in acc.iter_mut().zip(&data[r * rs..r * rs + cols]) {
            *a += x.f64();
        }
    }
    for (o, a) in out.iter_mut().zip(acc) {
        *o = *o + T::of(a);
    }
}

fn add_into<T: Scalar>(a: &mut Tensor<T>, b: &Tensor<T>) {
    for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
        *x = *x + y;
    }
}

fn mask_by_output<T: Scalar>(y: &Tensor<T>, dy: &mut Tensor<T>) {
    for (g, &v) in dy.data_mut().iter_mut().zip(y.data()) {
        if v <= T::zero() {
            *g = T::zero();
        }
    }
}

impl<T: Scalar> ResidualTransformer<T> {
    /// Seeded initialization; layers are created in a fixed order from one
    /// stream so equal configs give bitwise-equal parameters.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (pw, d, v) = (config.grid_proj_width, config.model_width, config.variant);
        let proj = (0..GRID_COUNT)
            .map(|i| Linear::new(&format!("proj.{i}"), GRID_SAMPLES, pw, &mut rng))
            .collect();
        let fusion = Linear::new("fusion", GRID_COUNT * pw, d, &mut rng);
        let lifts = if v == Variant::MlpOnly {
            Vec::new()
        } else {
            (0..GRID_COUNT)
                .map(|i| Linear::new(&format!("lift.{i}"), pw, d, &mut rng))
                .collect()
        };
        let residual = if v.has_residual() {
            (0..config.n_residual_blocks)
                .map(|j| ResidualBlock {
                    ff1: Linear::new(&format!("res.{j}.ff1"), d, d, &mut rng),
                    ff2: Linear::new(&format!("res.{j}.ff2"), d, d, &mut rng),
                    norm: LayerNorm::new(&format!("res.{j}.norm"), d),
                })
                .collect()
        } else {
            Vec::new()
        };
        let encoder = if v.has_encoder() {
            (0..config.n_encoder_layers)
                .map(|j| EncoderLayer {
                    attn: SelfAttention::new(&format!("enc.{j}.attn"), d, config.heads, &mut rng),
                    norm1: LayerNorm::new(&format!("enc.{j}.norm1"), d),
                    ff1: Linear::new(&format!("enc.{j}.ff1"), d, d, &mut rng),
                    ff2: Linear::new(&format!("enc.{j}.ff2"), d, d, &mut rng),
                    norm2: LayerNorm::new(&format!("enc.{j}.norm2"), d),
                })
                .collect()
        } else {
            Vec::new()
        };
        let mlp = (v == Variant::MlpOnly).then(|| Linear::new("mlp", d, GRID_COUNT * d, &mut rng));
        let head = Linear::new("head", GRID_COUNT * d, HEAD_OUT, &mut rng);
        let conv1 = Conv3d::new("conv1", DEC_CHANNELS, DEC_CHANNELS, 1, 1, &mut rng);
        let conv2 = Conv3d::new("conv2", DEC_CHANNELS, config.class_count, 2, 1, &mut rng);
        Ok(Self {
            config,
            proj,
            fusion,
            lifts,
            residual,
            encoder,
            mlp,
            head,
            conv1,
            conv2,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn class_count(&self) -> usize {
        self.config.class_count
    }

    pub fn params(&self) -> Vec<&Parameter<T>> {
        let mut out: Vec<&Parameter<T>> = Vec::new();
        for l in &self.proj {
            out.extend(l.params());
        }
        out.extend(self.fusion.params());
        for l in &self.lifts {
            out.extend(l.params());
        }
        for b in &self.residual {
            out.extend(b.ff1.params());
            out.extend(b.ff2.params());
            out.extend(b.norm.params());
        }
        for e in &self.encoder {
            out.extend(e.attn.params());
            out.extend(e.norm1.params());
            out.extend(e.ff1.params());
            out.extend(e.ff2.params());
            out.extend(e.norm2.params());
        }
        if let Some(m) = &self.mlp {
            out.extend(m.params());
        }
        out.extend(self.head.params());
        out.extend(self.conv1.params());
        out.extend(self.conv2.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut out: Vec<&mut Parameter<T>> = Vec::new();
        for l in &mut self.proj {
            out.extend(l.params_mut());
        }
        out.extend(self.fusion.params_mut());
        for l in &mut self.lifts {
            out.extend(l.params_mut());
        }
        for b in &mut self.residual {
            out.extend(b.ff1.params_mut());
            out.extend(b.ff2.params_mut());
            out.extend(b.norm.params_mut());
        }
        for e in &mut self.encoder {
            out.extend(e.attn.params_mut());
            out.extend(e.norm1.params_mut());
            out.extend(e.ff1.params_mut());
            out.extend(e.ff2.params_mut());
            out.extend(e.norm2.params_mut());
        }
        if let Some(m) = &mut self.mlp {
            out.extend(m.params_mut());
        }
        out.extend(self.head.params_mut());
        out.extend(self.conv1.params_mut());
        out.extend(self.conv2.params_mut());
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Multiplications in one forward pass over `batch` descriptors.
    pub fn multiply_count(&self, batch: usize) -> u64 {
        let tokens = batch * GRID_COUNT;
        let mut n: u64 = self.proj.iter().map(|l| l.multiply_count(batch)).sum();
        n += self.fusion.multiply_count(batch);
        n += self.lifts.iter().map(|l| l.multiply_count(batch)).sum::<u64>();
        for b in &self.residual {
            n += b.ff1.multiply_count(tokens) + b.ff2.multiply_count(tokens);
        }
        for e in &self.encoder {
            n += e.attn.multiply_count(batch, GRID_COUNT);
            n += e.ff1.multiply_count(tokens) + e.ff2.multiply_count(tokens);
        }
        if let Some(m) = &self.mlp {
            n += m.multiply_count(batch);
        }
        n += self.head.multiply_count(batch);
        n += self.conv1.multiply_count(batch, FEATURE_SIDE);
        n += self.conv2.multiply_count(batch, FEATURE_SIDE);
        n
    }

    pub fn cast<U: Scalar>(&self) -> ResidualTransformer<U> {
        fn lin<T: Scalar, U: Scalar>(l: &Linear<T>) -> Linear<U> {
            Linear {
                weight: l.weight.cast(),
                bias: l.bias.cast(),
            }
        }
        fn ln<T: Scalar, U: Scalar>(l: &LayerNorm<T>) -> LayerNorm<U> {
            LayerNorm {
                gamma: l.gamma.cast(),
                beta: l.beta.cast(),
            }
        }
        fn conv<T: Scalar, U: Scalar>(c: &Conv3d<T>) -> Conv3d<U> {
            Conv3d {
                weight: c.weight.cast(),
                bias: c.bias.cast(),
                stride: c.stride,
                pad: c.pad,
            }
        }
        ResidualTransformer {
            config: self.config,
            proj: self.proj.iter().map(lin).collect(),
            fusion: lin(&self.fusion),
            lifts: self.lifts.iter().map(lin).collect(),
            residual: self
                .residual
                .iter()
                .map(|b| ResidualBlock {
                    ff1: lin(&b.ff1),
                    ff2: lin(&b.ff2),
                    norm: ln(&b.norm),
                })
                .collect(),
            encoder: self
                .encoder
                .iter()
                .map(|e| EncoderLayer {
                    attn: SelfAttention {
                        wq: e.attn.wq.cast(),
                        wk: e.attn.wk.cast(),
                        wv: e.attn.wv.cast(),
                        wo: e.attn.wo.cast(),
                        heads: e.attn.heads,
                    },
                    norm1: ln(&e.norm1),
                    ff1: lin(&e.ff1),
                    ff2: lin(&e.ff2),
                    norm2: ln(&e.norm2),
                })
                .collect(),
            mlp: self.mlp.as_ref().map(lin),
            head: lin(&self.head),
            conv1: conv(&self.conv1),
            conv2: conv(&self.conv2),
        }
    }

    /// Logits `[batch, 5, 5, 5, C]` for `batch` descriptors laid out back to
    /// back in `x`. The local-grid channel is taken from the 2 mm cube block.
    pub fn forward(&self, x: &[T]) -> Result<Tensor<T>> {
        Ok(self.forward_cached(x)?.0)
    }

    /// Forward pass that also returns the activations needed by
    /// [`backward`](Self::backward) and a per-stage shape trace.
    pub fn forward_cached(&self, x: &[T]) -> Result<(Tensor<T>, ForwardCache<T>)> {
        if x.is_empty() || x.len() % DESCRIPTOR_LEN != 0 {
            return Err(ModelError::Layout {
                expected: DESCRIPTOR_LEN,
                found: x.len(),
            });
        }
        let b = x.len() / DESCRIPTOR_LEN;
        let (pw, d) = (self.config.grid_proj_width, self.config.model_width);
        let mut trace: Trace = Vec::new();

        // Per-grid projections written side by side into [b, 9·pw].
        let mut pcat = vec![T::zero(); b * GRID_COUNT * pw];
        for (i, l) in self.proj.iter().enumerate() {
            let out = &mut pcat[i * pw..];
            for r in 0..b {
                out[r * GRID_COUNT * pw..][..pw].copy_from_slice(l.bias.value.data());
            }
            gemm(
                T::one(),
                MatRef::strided(&x[i * GRID_SAMPLES..], b, GRID_SAMPLES, DESCRIPTOR_LEN, 1),
                MatRef::new(l.weight.value.data(), pw, GRID_SAMPLES).t(),
                T::one(),
                out,
                GRID_COUNT * pw,
            );
        }
        let pcat = Tensor::new(vec![b, GRID_COUNT * pw], pcat)?;
        trace.push(("projections", vec![GRID_COUNT, pw]));
        let f = self.fusion.forward(&pcat)?;
        trace.push(("fused", vec![d]));

        let mut res = Vec::new();
        let mut enc = Vec::new();
        let mut mlp_h = None;
        let flat = if let Some(mlp) = &self.mlp {
            let mut h = mlp.forward(&f)?;
            relu_in_place(&mut h);
            trace.push(("mlp", vec![GRID_COUNT * d]));
            mlp_h = Some(h.clone());
            h
        } else {
            let mut tok = vec![T::zero(); b * GRID_COUNT * d];
            for (i, l) in self.lifts.iter().enumerate() {
                let out = &mut tok[i * d..];
                for r in 0..b {
                    let row = &mut out[r * GRID_COUNT * d..][..d];
                    for ((o, &bias), &fv) in row.iter_mut().zip(l.bias.value.data()).zip(&f.data()[r * d..]) {
                        *o = bias + fv;
                    }
                }
                gemm(
                    T::one(),
                    MatRef::strided(&pcat.data()[i * pw..], b, pw, GRID_COUNT * pw, 1),
                    MatRef::new(l.weight.value.data(), d, pw).t(),
                    T::one(),
                    out,
                    GRID_COUNT * d,
                );
            }
            let mut t = Tensor::new(vec![b, GRID_COUNT, d], tok)?;
            trace.push(("tokens", vec![GRID_COUNT, d]));
            for blk in &self.residual {
                let mut h = blk.ff1.forward(&t)?;
                relu_in_place(&mut h);
                let mut s = blk.ff2.forward(&h)?;
                add_into(&mut s, &t);
                let (out, ln) = blk.norm.forward(&s)?;
                res.push(ResCache { x: t, h, ln });
                t = out;
                trace.push(("residual", vec![GRID_COUNT, d]));
            }
            for layer in &self.encoder {
                let (mut s1, attn) = layer.attn.forward(&t)?;
                add_into(&mut s1, &t);
                let (y, ln1) = layer.norm1.forward(&s1)?;
                let mut h = layer.ff1.forward(&y)?;
                relu_in_place(&mut h);
                let mut s2 = layer.ff2.forward(&h)?;
                add_into(&mut s2, &y);
                let (out, ln2) = layer.norm2.forward(&s2)?;
                enc.push(EncCache { attn, ln1, y, h, ln2 });
                t = out;
                trace.push(("encoder", vec![GRID_COUNT, d]));
            }
            t.reshape(&[b, GRID_COUNT * d])?
        };

        let head = self.head.forward(&flat)?;
        trace.push(("head", vec![HEAD_OUT]));
        trace.push(("features", vec![FEATURE_SIDE, FEATURE_SIDE, FEATURE_SIDE, FEATURE_CHANNELS]));
        let mut feat = Vec::with_capacity(b * VOXELS * DEC_CHANNELS);
        for r in 0..b {
            let local = &x[r * DESCRIPTOR_LEN + LOCAL_GRID * GRID_SAMPLES..][..GRID_SAMPLES];
            let h = &head.data()[r * HEAD_OUT..][..HEAD_OUT];
            for (v, &g) in h.chunks_exact(FEATURE_CHANNELS).zip(local) {
                feat.extend_from_slice(v);
                feat.push(g);
            }
        }
        let features = Tensor::new(
            vec![b, FEATURE_SIDE, FEATURE_SIDE, FEATURE_SIDE, DEC_CHANNELS],
            feat,
        )?;
        trace.push(("decoder_input", vec![FEATURE_SIDE, FEATURE_SIDE, FEATURE_SIDE, DEC_CHANNELS]));
        let mut c1 = self.conv1.forward(&features)?;
        relu_in_place(&mut c1);
        trace.push(("conv1", c1.shape()[1..].to_vec()));
        let logits = self.conv2.forward(&c1)?;
        trace.push(("logits", logits.shape()[1..].to_vec()));

        let cache = ForwardCache {
            batch: b,
            x: x.to_vec(),
            pcat,
            f,
            mlp_h,
            res,
            enc,
            flat,
            features,
            c1,
            trace,
        };
        Ok((logits, cache))
    }

    /// Accumulates parameter gradients for upstream `dlogits`.
    pub fn backward(&mut self, cache: &ForwardCache<T>, dlogits: &Tensor<T>) -> Result<()> {
        let b = cache.batch;
        let (pw, d) = (self.config.grid_proj_width, self.config.model_width);
        let mut dc1 = self.conv2.backward(&cache.c1, dlogits)?;
        mask_by_output(&cache.c1, &mut dc1);
        let dfeat = self.conv1.backward(&cache.features, &dc1)?;
        let mut dhead = Vec::with_capacity(b * HEAD_OUT);
        for v in dfeat.data().chunks_exact(DEC_CHANNELS) {
            dhead.extend_from_slice(&v[..FEATURE_CHANNELS]);
        }
        let dhead = Tensor::new(vec![b, HEAD_OUT], dhead)?;
        let dflat = self.head.backward(&cache.flat, &dhead)?;

        let mut dpcat = Tensor::zeros(&[b, GRID_COUNT * pw]);
        let df = if let Some(mlp) = &mut self.mlp {
            let h = cache.mlp_h.as_ref().expect("mlp activations cached");
            let mut dh = dflat;
            mask_by_output(h, &mut dh);
            mlp.backward(&cache.f, &dh)?
        } else {
            let mut dt = dflat.reshape(&[b, GRID_COUNT, d])?;
            for (layer, c) in self.encoder.iter_mut().zip(&cache.enc).rev() {
                let ds2 = layer.norm2.backward(&c.ln2, &dt)?;
                let mut dh = layer.ff2.backward(&c.h, &ds2)?;
                mask_by_output(&c.h, &mut dh);
                let mut dy = layer.ff1.backward(&c.y, &dh)?;
                add_into(&mut dy, &ds2);
                let ds1 = layer.norm1.backward(&c.ln1, &dy)?;
                let mut dx = layer.attn.backward(&c.attn, &ds1)?;
                add_into(&mut dx, &ds1);
                dt = dx;
            }
            for (blk, c) in self.residual.iter_mut().zip(&cache.res).rev() {
                let ds = blk.norm.backward(&c.ln, &dt)?;
                let mut dh = blk.ff2.backward(&c.h, &ds)?;
                mask_by_output(&c.h, &mut dh);
                let mut dx = blk.ff1.backward(&c.x, &dh)?;
                add_into(&mut dx, &ds);
                dt = dx;
            }
            let mut df = vec![0.0f64; b * d];
            let dtd = dt.data();
            for (i, l) in self.lifts.iter_mut().enumerate() {
                let dti = MatRef::strided(&dtd[i * d..], b, d, GRID_COUNT * d, 1);
                let pi = MatRef::strided(&cache.pcat.data()[i * pw..], b, pw, GRID_COUNT * pw, 1);
                gemm(T::one(), dti.t(), pi, T::one(), l.weight.grad.data_mut(), pw);
                add_strided_column_sums(&dtd[i * d..], b, d, GRID_COUNT * d, l.bias.grad.data_mut());
                gemm(
                    T::one(),
                    dti,
                    MatRef::new(l.weight.value.data(), d, pw),
                    T::one(),
                    &mut dpcat.data_mut()[i * pw..],
                    GRID_COUNT * pw,
                );
            }
            for r in 0..b {
                for i in 0..GRID_COUNT {
                    for (a, &g) in df[r * d..][..d].iter_mut().zip(&dtd[(r * GRID_COUNT + i) * d..][..d]) {
                        *a += g.f64();
                    }
                }
            }
            Tensor::new(vec![b, d], df.into_iter().map(T::of).collect())?
        };
        let dp = self.fusion.backward(&cache.pcat, &df)?;
        add_into(&mut dpcat, &dp);
        let dpd = dpcat.data();
        for (i, l) in self.proj.iter_mut().enumerate() {
            let dpi = MatRef::strided(&dpd[i * pw..], b, pw, GRID_COUNT * pw, 1);
            let xi = MatRef::strided(&cache.x[i * GRID_SAMPLES..], b, GRID_SAMPLES, DESCRIPTOR_LEN, 1);
            gemm(T::one(), dpi.t(), xi, T::one(), l.weight.grad.data_mut(), GRID_SAMPLES);
            add_strided_column_sums(&dpd[i * pw..], b, pw, GRID_COUNT * pw, l.bias.grad.data_mut());
        }
        Ok(())
    }
}
