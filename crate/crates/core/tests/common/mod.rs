//! Checks shared by the integration suites and the acceptance run. Each
//! returns what it measured so callers pick their own assertions.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparseg::inference::{self, segment_source, BlockPredictor, SegmentOptions};
use sparseg::metrics::{dice, MeanOver};
use sparseg::model::{CheckpointError, ModelConfig, ResidualTransformer, Variant, FORMAT_VERSION};
use sparseg::nn::{
    conv3d, conv3d_backward, conv3d_output_side, grad_check, layer_norm, layer_norm_backward, linear,
    linear_backward, multi_head_self_attention, multi_head_self_attention_backward, relative_error, relu,
    relu_backward, softmax_cross_entropy, softmax_rows, Adam, Tensor,
};
use sparseg::sampler::{
    build_offset_table, default_layout, sample_descriptor, sample_descriptor_checked, sample_into,
    sample_label_window, CountingVolume, DESCRIPTOR_LEN, WINDOW_LEN,
};
use sparseg::trainer::train_step;
use sparseg::volume::{generate_phantom, normalize_intensity, PhantomConfig, Volume};

/// Parameter count from the layer table, counted by hand.
pub fn table_parameter_count(c: usize, variant: Variant) -> usize {
    let linear = |i: usize, o: usize| i * o + o;
    let norm = |d: usize| 2 * d;
    let conv = |ci: usize, co: usize| co * 27 * ci + co;
    let (pw, d) = (32, 144);
    let mut n = 9 * linear(729, pw) + linear(9 * pw, d);
    if variant == Variant::MlpOnly {
        n += linear(d, 9 * d);
    } else {
        n += 9 * linear(pw, d);
    }
    if variant.has_residual() {
        n += 2 * (2 * linear(d, d) + norm(d));
    }
    if variant.has_encoder() {
        n += 2 * (4 * d * d + 2 * linear(d, d) + 2 * norm(d));
    }
    n + linear(9 * d, 5832) + conv(9, 9) + conv(9, c)
}

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn t(shape: &[usize], p: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), p.to_vec()).unwrap()
}

fn dot(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Worst normwise relative error per layer input, central differences with
/// step `h` in `f64`. Each layer is probed through `<layer(x), r>` for a
/// random `r`.
pub fn layer_gradient_errors(h: f64) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut out = Vec::new();
    let mut push = |name: &str, e: f64| out.push((name.to_string(), e));

    let (x, w, b, r) = (rand_t(&mut rng, &[4, 7]), rand_t(&mut rng, &[5, 7]), rand_t(&mut rng, &[5]), rand_t(&mut rng, &[4, 5]));
    let g = linear_backward(&x, &w, &r).unwrap();
    let f = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| dot(&linear(x, w, b).unwrap(), &r);
    push("linear.x", grad_check(|p| f(&t(&[4, 7], p), &w, &b), x.data(), g.dx.data(), h, None).max_rel_error);
    push("linear.w", grad_check(|p| f(&x, &t(&[5, 7], p), &b), w.data(), g.dw.data(), h, None).max_rel_error);
    push("linear.b", grad_check(|p| f(&x, &w, &t(&[5], p)), b.data(), g.db.data(), h, None).max_rel_error);

    let (x, gm, bt, r) = (rand_t(&mut rng, &[3, 8]), rand_t(&mut rng, &[8]), rand_t(&mut rng, &[8]), rand_t(&mut rng, &[3, 8]));
    let (_, cache) = layer_norm(&x, &gm, &bt).unwrap();
    let (dx, dg, db) = layer_norm_backward(&cache, &gm, &r).unwrap();
    let f = |x: &Tensor<f64>, g: &Tensor<f64>, b: &Tensor<f64>| dot(&layer_norm(x, g, b).unwrap().0, &r);
    push("layer_norm.x", grad_check(|p| f(&t(&[3, 8], p), &gm, &bt), x.data(), dx.data(), h, None).max_rel_error);
    push("layer_norm.gamma", grad_check(|p| f(&x, &t(&[8], p), &bt), gm.data(), dg.data(), h, None).max_rel_error);
    push("layer_norm.beta", grad_check(|p| f(&x, &gm, &t(&[8], p)), bt.data(), db.data(), h, None).max_rel_error);

    let shape = [2, 5, 6];
    let x = rand_t(&mut rng, &shape);
    let ws: [Tensor<f64>; 4] = std::array::from_fn(|_| rand_t(&mut rng, &[6, 6]));
    let r = rand_t(&mut rng, &shape);
    let (_, cache) = multi_head_self_attention(&x, &ws[0], &ws[1], &ws[2], &ws[3], 2).unwrap();
    let g = multi_head_self_attention_backward(&cache, &ws[0], &ws[1], &ws[2], &ws[3], &r).unwrap();
    let f = |x: &Tensor<f64>, w: &[Tensor<f64>; 4]| {
        dot(&multi_head_self_attention(x, &w[0], &w[1], &w[2], &w[3], 2).unwrap().0, &r)
    };
    push("attention.x", grad_check(|p| f(&t(&shape, p), &ws), x.data(), g.dx.data(), h, None).max_rel_error);
    for (i, (name, dw)) in [("attention.wq", &g.dwq), ("attention.wk", &g.dwk), ("attention.wv", &g.dwv), ("attention.wo", &g.dwo)]
        .into_iter()
        .enumerate()
    {
        let e = grad_check(
            |p| {
                let mut w2 = ws.clone();
                w2[i] = t(&[6, 6], p);
                f(&x, &w2)
            },
            ws[i].data(),
            dw.data(),
            h,
            None,
        );
        push(name, e.max_rel_error);
    }

    for stride in [1, 2] {
        let x = rand_t(&mut rng, &[5, 5, 5, 2]);
        let w = rand_t(&mut rng, &[3, 3, 3, 3, 2]);
        let b = rand_t(&mut rng, &[3]);
        let o = conv3d_output_side(5, stride, 1);
        let r = rand_t(&mut rng, &[o, o, o, 3]);
        let g = conv3d_backward(&x, &w, &r, stride, 1).unwrap();
        let f = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| dot(&conv3d(x, w, b, stride, 1).unwrap(), &r);
        let xs = x.shape().to_vec();
        let wsh = w.shape().to_vec();
        push(&format!("conv3d_s{stride}.x"), grad_check(|p| f(&t(&xs, p), &w, &b), x.data(), g.dx.data(), h, None).max_rel_error);
        push(&format!("conv3d_s{stride}.w"), grad_check(|p| f(&x, &t(&wsh, p), &b), w.data(), g.dw.data(), h, None).max_rel_error);
        push(&format!("conv3d_s{stride}.b"), grad_check(|p| f(&x, &w, &t(&[3], p)), b.data(), g.db.data(), h, None).max_rel_error);
    }

    // Kept clear of the kink so `±h` stays on one side.
    let x: Vec<f64> = (0..12).map(|i| if i % 2 == 0 { 0.1 + 0.05 * i as f64 } else { -0.1 - 0.05 * i as f64 }).collect();
    let r = rand_t(&mut rng, &[12]);
    let xt = t(&[12], &x);
    let g = relu_backward(&xt, &r).unwrap();
    push("relu", grad_check(|p| dot(&relu(&t(&[12], p)), &r), &x, g.data(), h, None).max_rel_error);

    let x = Tensor::<f64>::from_fn(&[5, 4], |_| rng.random_range(-2.0..2.0));
    let targets = [0u8, 3, 1, 1, 2];
    let (_, g) = softmax_cross_entropy(&x, &targets).unwrap();
    let e = grad_check(|p| softmax_cross_entropy(&t(&[5, 4], p), &targets).unwrap().0, x.data(), g.data(), h, None);
    push("softmax_cross_entropy", e.max_rel_error);
    out
}

pub struct EndToEnd {
    pub rel_error: f64,
    pub checked: usize,
    /// Coordinates redrawn because `±h` crossed a ReLU kink.
    pub kinked: usize,
}

/// Loss gradient of the default-size network against central differences
/// on `count` random parameters, in `f64`.
pub fn end_to_end_gradient(variant: Variant, seed: u64, h: f64, count: usize) -> EndToEnd {
    let cfg = ModelConfig { variant, seed, ..Default::default() };
    let mut m = ResidualTransformer::<f64>::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let x: Vec<f64> = (0..DESCRIPTOR_LEN).map(|_| rng.random_range(0.0..1.0)).collect();
    let targets: Vec<u8> = (0..125).map(|_| rng.random_range(0..6)).collect();
    let (y, cache) = m.forward_cached(&x).unwrap();
    let base_pattern = cache.activation_pattern();
    let (_, g) = softmax_cross_entropy(&y.reshape(&[125, 6]).unwrap(), &targets).unwrap();
    m.zero_grad();
    m.backward(&cache, &g.reshape(&[1, 5, 5, 5, 6]).unwrap()).unwrap();
    drop(cache);

    let eval = |m: &ResidualTransformer<f64>| {
        let (y, c) = m.forward_cached(&x).unwrap();
        let loss = softmax_cross_entropy(&y.reshape(&[125, 6]).unwrap(), &targets).unwrap().0;
        (loss, c.activation_pattern() == base_pattern)
    };
    let n = m.params().len();
    let (mut seen, mut analytic, mut numeric, mut kinked) = (Vec::new(), Vec::new(), Vec::new(), 0);
    while analytic.len() < count {
        let p = rng.random_range(0..n);
        let i = rng.random_range(0..m.params()[p].len());
        if seen.contains(&(p, i)) {
            continue;
        }
        seen.push((p, i));
        let orig = m.params()[p].value.data()[i];
        m.params_mut()[p].value.data_mut()[i] = orig + h;
        let (plus, same_plus) = eval(&m);
        m.params_mut()[p].value.data_mut()[i] = orig - h;
        let (minus, same_minus) = eval(&m);
        m.params_mut()[p].value.data_mut()[i] = orig;
        if !(same_plus && same_minus) {
            kinked += 1;
            continue;
        }
        analytic.push(m.params()[p].grad.data()[i]);
        numeric.push((plus - minus) / (2.0 * h));
    }
    EndToEnd { rel_error: relative_error(&analytic, &numeric), checked: analytic.len(), kinked }
}

pub struct ShapeCheck {
    pub logits_shape: Vec<usize>,
    pub features_stage: Option<Vec<usize>>,
    /// Largest `|Σ softmax − 1|` over output positions.
    pub softmax_deviation: f64,
}

pub fn shape_check(variant: Variant, batch: usize, seed: u64) -> ShapeCheck {
    let m = ResidualTransformer::new(ModelConfig { variant, seed, ..Default::default() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f32> = (0..batch * DESCRIPTOR_LEN).map(|_| rng.random_range(0.0..1.0)).collect();
    let (y, cache) = m.forward_cached(&x).unwrap();
    let features_stage = cache.trace().iter().find(|(name, _)| *name == "features").map(|(_, s)| s.clone());
    let p = softmax_rows(&y);
    let c = m.class_count();
    let softmax_deviation = p
        .data()
        .chunks(c)
        .map(|row| (row.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    ShapeCheck { logits_shape: y.shape().to_vec(), features_stage, softmax_deviation }
}

/// A 48³ grid with random content confined to `[16, 32)³` and zero
/// elsewhere, at the given spacing.
pub fn embedded_content(spacing: [f64; 3], seed: u64) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 48;
    let mut data = vec![0.0f32; n * n * n];
    for z in 16..32 {
        for y in 16..32 {
            for x in 16..32 {
                data[x + n * (y + n * z)] = rng.random_range(0.01..1.0);
            }
        }
    }
    Volume::new([n; 3], spacing, data).unwrap()
}

/// `side³` crop of `v` starting at `origin`.
pub fn crop(v: &Volume, origin: [usize; 3], side: usize) -> Volume {
    let d = v.dims();
    let mut data = Vec::with_capacity(side * side * side);
    for z in 0..side {
        for y in 0..side {
            for x in 0..side {
                let (a, b, c) = (origin[0] + x, origin[1] + y, origin[2] + z);
                data.push(v.data()[a + d[0] * (b + d[1] * c)]);
            }
        }
    }
    Volume::new([side; 3], v.spacing(), data).unwrap()
}

/// Descriptor at `q` in the crop at `a1` equals the descriptor at the same
/// world point in the crop at `a2`. Content sits inside both crops, so
/// samples padded in one crop read zeros in the other.
pub fn translation_case(spacing: [f64; 3], seed: u64, a1: [usize; 3], a2: [usize; 3], q: [usize; 3]) -> bool {
    const SIDE: usize = 24;
    let big = embedded_content(spacing, seed);
    let (c1, c2) = (crop(&big, a1, SIDE), crop(&big, a2, SIDE));
    let q2: [usize; 3] = std::array::from_fn(|i| q[i] + a1[i] - a2[i]);
    let table = build_offset_table(&default_layout(), [SIDE; 3], spacing);
    let d1 = sample_descriptor(&c1, &table, q).unwrap();
    let d2 = sample_descriptor(&c2, &table, q2).unwrap();
    d1.values == d2.values
}

/// Random instance of [`translation_case`] with crop origins in `[8, 16]`
/// and the query chosen so both crops contain it.
pub fn random_translation_case(rng: &mut ChaCha8Rng) -> bool {
    let spacing = std::array::from_fn(|_| [1.0, 2.0, 3.5, 8.0, 16.0][rng.random_range(0..5)]);
    let a1: [usize; 3] = std::array::from_fn(|_| rng.random_range(8..=16));
    let a2: [usize; 3] = std::array::from_fn(|_| rng.random_range(8..=16));
    let q: [usize; 3] = std::array::from_fn(|i| {
        let lo = a2[i].saturating_sub(a1[i]);
        let hi = (24 + a2[i] - a1[i]).min(24);
        rng.random_range(lo..hi)
    });
    translation_case(spacing, rng.random(), a1, a2, q)
}

/// Reads per interior query on a volume large enough to have interior
/// queries at every grid scale.
pub fn interior_reads(queries: usize) -> Vec<u64> {
    let v = embedded_content([16.0; 3], 1);
    let table = build_offset_table(&default_layout(), v.dims(), v.spacing());
    let counter = CountingVolume::new(&v);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut out = Vec::new();
    let mut buf = vec![0.0; DESCRIPTOR_LEN];
    while out.len() < queries {
        let q: [usize; 3] = std::array::from_fn(|_| rng.random_range(0..48));
        if !table.is_interior(q) {
            continue;
        }
        counter.reset();
        sample_into(&counter, &table, q, &mut buf).unwrap();
        out.push(counter.reads());
    }
    out
}

/// Interior queries on which the fast and bounds-checked gathers differ in
/// any bit.
pub fn fast_checked_mismatches(queries: usize) -> usize {
    let v = embedded_content([16.0, 14.0, 12.0], 3);
    let table = build_offset_table(&default_layout(), v.dims(), v.spacing());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut done, mut bad) = (0, 0);
    while done < queries {
        let q: [usize; 3] = std::array::from_fn(|_| rng.random_range(0..48));
        if !table.is_interior(q) {
            continue;
        }
        done += 1;
        let a = sample_descriptor(&v, &table, q).unwrap();
        let b = sample_descriptor_checked(&v, &table, q).unwrap();
        let bits = |d: &[f32]| d.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        bad += usize::from(bits(&a.values) != bits(&b.values));
    }
    bad
}

/// Labels derived from descriptor content, so any mix-up between queries
/// and blocks shows in the output.
pub struct ContentPredictor(pub usize);

impl BlockPredictor for ContentPredictor {
    fn class_count(&self) -> usize {
        self.0
    }

    fn predict(&self, x: &[f32]) -> inference::Result<Vec<u8>> {
        let mut out = Vec::with_capacity(x.len() / DESCRIPTOR_LEN * WINDOW_LEN);
        for d in x.chunks_exact(DESCRIPTOR_LEN) {
            for k in 0..WINDOW_LEN {
                let v = d[(k * 53 + 7) % DESCRIPTOR_LEN];
                out.push((((v * 1000.0) as usize + k) % self.0) as u8);
            }
        }
        Ok(out)
    }
}

pub struct TilingCheck {
    pub tiled: [usize; 3],
    /// Tiled voxels written other than exactly once.
    pub bad_tiled: usize,
    /// Voxels outside the tiled region written at all.
    pub written_outside: usize,
    pub permutation_invariant: bool,
    pub queries: usize,
}

pub fn tiling_check(threads: usize) -> TilingCheck {
    let (v, _) = generate_phantom(&PhantomConfig { seed: 5, ..Default::default() }).unwrap();
    let norm = normalize_intensity(&v);
    let table = build_offset_table(&default_layout(), v.dims(), v.spacing());
    let p = ContentPredictor(6);
    let opts = SegmentOptions { threads, debug_writes: true, ..Default::default() };
    let (a, _) = segment_source(&p, &norm, &table, v.spacing(), &opts).unwrap();
    let n = inference::make_query_grid(v.dims(), v.spacing()).unwrap().len();
    let mut order: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(6));
    let opts = SegmentOptions { threads, batch: 37, order: Some(order), ..Default::default() };
    let (b, _) = segment_source(&p, &norm, &table, v.spacing(), &opts).unwrap();

    let counts = a.write_counts.as_ref().unwrap();
    let d = a.labels.dims();
    let (mut bad_tiled, mut written_outside) = (0, 0);
    for z in 0..d[2] {
        for y in 0..d[1] {
            for x in 0..d[0] {
                let c = counts[x + d[0] * (y + d[1] * z)];
                if a.in_tiled_region(x, y, z) {
                    bad_tiled += usize::from(c != 1);
                } else {
                    written_outside += usize::from(c != 0);
                }
            }
        }
    }
    TilingCheck { tiled: a.tiled, bad_tiled, written_outside, permutation_invariant: a.labels == b.labels, queries: n }
}

pub struct Overfit {
    pub initial: f64,
    pub best: f64,
    /// First step whose loss fell below 10% of the initial loss.
    pub reached_at: Option<usize>,
    pub log_c: f64,
}

/// Repeats one optimizer step on a frozen batch of phantom windows.
pub fn overfit(batch: usize, steps: usize) -> Overfit {
    let (v, l) = generate_phantom(&PhantomConfig { dims: [48; 3], spacing: [4.0; 3], seed: 8, ..Default::default() }).unwrap();
    let norm = normalize_intensity(&v);
    let table = build_offset_table(&default_layout(), v.dims(), v.spacing());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut x = vec![0.0f32; batch * DESCRIPTOR_LEN];
    let mut targets = Vec::with_capacity(batch * WINDOW_LEN);
    for out in x.chunks_exact_mut(DESCRIPTOR_LEN) {
        let q: [usize; 3] = std::array::from_fn(|_| rng.random_range(8..40));
        sample_into(&norm, &table, q, out).unwrap();
        targets.extend_from_slice(&sample_label_window(&l, q).unwrap());
    }
    let cfg = ModelConfig { seed: 10, ..Default::default() };
    let mut m = ResidualTransformer::new(cfg).unwrap();
    let mut adam = Adam::new(Default::default());
    let initial = sparseg::trainer::batch_loss(&m, &x, &targets).unwrap();
    let (mut best, mut reached_at) = (initial, None);
    for step in 1..=steps {
        train_step(&mut m, &mut adam, &x, &targets).unwrap();
        let loss = sparseg::trainer::batch_loss(&m, &x, &targets).unwrap();
        best = best.min(loss);
        if reached_at.is_none() && loss < 0.1 * initial {
            reached_at = Some(step);
        }
    }
    Overfit { initial, best, reached_at, log_c: (cfg.class_count as f64).ln() }
}

/// Per-class dice by direct counting over boolean masks.
pub fn naive_dice(pred: &[u8], gt: &[u8], c: usize) -> Vec<Option<f64>> {
    (0..c as u8)
        .map(|k| {
            let p: Vec<bool> = pred.iter().map(|&v| v == k).collect();
            let g: Vec<bool> = gt.iter().map(|&v| v == k).collect();
            let inter = p.iter().zip(&g).filter(|(a, b)| **a && **b).count();
            let total = p.iter().filter(|&&a| a).count() + g.iter().filter(|&&b| b).count();
            if total == 0 {
                None
            } else {
                Some(2.0 * inter as f64 / total as f64)
            }
        })
        .collect()
}

/// Random mask pairs where the library dice differs from [`naive_dice`],
/// per class or in the mean over classes present in either mask.
pub fn dice_oracle_mismatches(pairs: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..pairs {
        let c = rng.random_range(2..7);
        let n = rng.random_range(1..200);
        let pred: Vec<u8> = (0..n).map(|_| rng.random_range(0..c as u8)).collect();
        let gt: Vec<u8> = (0..n).map(|_| rng.random_range(0..c as u8)).collect();
        let oracle = naive_dice(&pred, &gt, c);
        let got = dice(&pred, &gt, c, MeanOver::PresentInEither);
        let fg: Vec<f64> = oracle[1..].iter().flatten().copied().collect();
        let mean = (!fg.is_empty()).then(|| fg.iter().sum::<f64>() / fg.len() as f64);
        let close = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(a), Some(b)) => (a - b).abs() < 1e-12,
            (None, None) => true,
            _ => false,
        };
        let ok = got.per_class.len() == c
            && got.per_class.iter().zip(&oracle).all(|(&a, &b)| close(a, b))
            && close(got.mean, mean);
        bad += usize::from(!ok);
    }
    bad
}

fn bits(m: &ResidualTransformer, x: &[f32]) -> Vec<u32> {
    m.forward(x).unwrap().data().iter().map(|v| v.to_bits()).collect()
}

/// Save, load and compare forward bits for every variant, then corrupt the
/// stream in one field at a time. Returns the failures found.
pub fn checkpoint_failures() -> Vec<String> {
    let mut fails = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x: Vec<f32> = (0..2 * DESCRIPTOR_LEN).map(|_| rng.random_range(0.0..1.0)).collect();
    for v in Variant::ALL {
        let m = ResidualTransformer::new(ModelConfig { variant: v, seed: 21, ..Default::default() }).unwrap();
        let mut buf = Vec::new();
        m.save(&mut buf).unwrap();
        let back = ResidualTransformer::load(buf.as_slice()).unwrap();
        if bits(&m, &x) != bits(&back, &x) {
            fails.push(format!("{v}: forward differs after reload"));
        }
    }

    let m = ResidualTransformer::new(ModelConfig { seed: 21, ..Default::default() }).unwrap();
    let mut good = Vec::new();
    m.save(&mut good).unwrap();
    let load = |b: &[u8]| ResidualTransformer::load(b).err();
    let mut check = |what: &str, ok: bool| {
        if !ok {
            fails.push(what.to_string());
        }
    };

    let mut b = good.clone();
    b[0] = b'X';
    check("magic", load(&b) == Some(CheckpointError::BadMagic(*b"XPSG")));
    let mut b = good.clone();
    b[4..8].copy_from_slice(&7u32.to_le_bytes());
    check("version", load(&b) == Some(CheckpointError::VersionMismatch { found: 7, expected: FORMAT_VERSION }));
    let at = 4 + 4 + 7 * 4 + 8;
    let mut b = good.clone();
    let n = u32::from_le_bytes(b[at..at + 4].try_into().unwrap());
    b[at..at + 4].copy_from_slice(&(n + 1).to_le_bytes());
    check("tensor count", matches!(load(&b), Some(CheckpointError::TensorCount { .. })));
    let name_len = u32::from_le_bytes(good[at + 4..at + 8].try_into().unwrap()) as usize;
    let dim0 = at + 8 + name_len + 4;
    let mut b = good.clone();
    b[dim0..dim0 + 4].copy_from_slice(&3u32.to_le_bytes());
    check("shape", matches!(load(&b), Some(CheckpointError::ShapeMismatch { .. })));
    let mut b = good.clone();
    b[at + 8] = b'q';
    check("unknown tensor", matches!(load(&b), Some(CheckpointError::UnknownTensor(_))));
    check("truncated", load(&good[..good.len() - 3]) == Some(CheckpointError::Truncated));
    let mut b = good.clone();
    b[4 + 4 + 6 * 4..][..4].copy_from_slice(&9u32.to_le_bytes());
    check("config", matches!(load(&b), Some(CheckpointError::BadConfig(_))));
    fails
}
