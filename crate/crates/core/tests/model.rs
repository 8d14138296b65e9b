use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparseg::model::{ModelConfig, ResidualTransformer, Variant};
use sparseg::nn::{softmax_rows, Tensor};
use sparseg::sampler::{DESCRIPTOR_LEN, GRID_COUNT, GRID_SAMPLES};

fn descriptor(seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..DESCRIPTOR_LEN).map(|_| rng.random_range(0.0..1.0)).collect()
}

fn model(variant: Variant, seed: u64) -> ResidualTransformer {
    ResidualTransformer::new(ModelConfig { variant, seed, ..Default::default() }).unwrap()
}

/// Parameter count from the layer table, counted by hand.
fn table_parameter_count(c: usize, variant: Variant) -> usize {
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

#[test]
fn parameter_count_matches_layer_table() {
    for v in Variant::ALL {
        assert_eq!(model(v, 0).parameter_count(), table_parameter_count(6, v), "{v}");
    }
    assert_eq!(table_parameter_count(6, Variant::Full), 8_197_044);
}

#[test]
fn same_seed_same_parameters() {
    let (a, b) = (model(Variant::Full, 9), model(Variant::Full, 9));
    for (p, q) in a.params().iter().zip(b.params()) {
        assert_eq!(p.name, q.name);
        assert_eq!(p.value, q.value);
    }
    let c = model(Variant::Full, 10);
    assert_ne!(a.params()[0].value, c.params()[0].value);
}

#[test]
fn parameter_names_are_unique() {
    let m = model(Variant::Full, 0);
    let mut names: Vec<_> = m.params().iter().map(|p| p.name.clone()).collect();
    let n = names.len();
    names.sort();
    names.dedup();
    assert_eq!(names.len(), n);
}

#[test]
fn mlp_only_is_smaller() {
    assert!(model(Variant::MlpOnly, 0).parameter_count() < model(Variant::Full, 0).parameter_count());
}

#[test]
fn multiply_count_ordering() {
    let [full, res, _, mlp] = Variant::ALL.map(|v| model(v, 0).multiply_count(1));
    assert!(mlp < res && res < full, "{mlp} {res} {full}");
    // Per-query oracle for mlp_only: every dense layer plus both convolutions.
    let oracle = 9 * 729 * 32 + 288 * 144 + 144 * 1296 + 1296 * 5832 + 729 * 27 * 9 * 9 + 125 * 27 * 9 * 6;
    assert_eq!(mlp, oracle as u64);
}

#[test]
fn forward_is_pure_and_normalized() {
    let m = model(Variant::Full, 1);
    let x = descriptor(2);
    let y = m.forward(&x).unwrap();
    assert_eq!(y.shape(), &[1, 5, 5, 5, 6]);
    assert_eq!(y, m.forward(&x).unwrap());
    let p = softmax_rows(&y);
    for row in p.data().chunks(6) {
        let s: f64 = row.iter().map(|&v| v as f64).sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
}

#[test]
fn coarsest_grid_changes_logits() {
    for seed in 0..10 {
        let m = model(Variant::Full, seed);
        let x = descriptor(100 + seed);
        let mut x2 = x.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &mut x2[8 * GRID_SAMPLES..] {
            *v = rng.random_range(0.0..1.0);
        }
        let (a, b) = (m.forward(&x).unwrap(), m.forward(&x2).unwrap());
        let diff = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).fold(0.0f32, f32::max);
        assert!(diff > 0.0, "seed {seed}");
    }
}

#[test]
fn not_invariant_to_grid_permutation() {
    let m = model(Variant::Full, 4);
    let x = descriptor(5);
    // Rotate the three planes and swap the two coarsest cubes; the 2 mm cube
    // stays put so the local channel is unchanged.
    let order = [1, 2, 0, 3, 4, 5, 6, 8, 7];
    let mut xp = Vec::with_capacity(DESCRIPTOR_LEN);
    for &g in &order[..GRID_COUNT] {
        xp.extend_from_slice(&x[g * GRID_SAMPLES..][..GRID_SAMPLES]);
    }
    assert_ne!(m.forward(&x).unwrap(), m.forward(&xp).unwrap());
}

#[test]
fn full_differs_from_residual_only() {
    let x = descriptor(6);
    let a = model(Variant::Full, 3).forward(&x).unwrap();
    let b = model(Variant::ResidualOnly, 3).forward(&x).unwrap();
    assert_ne!(a, b);
}

#[test]
fn batched_forward_matches_single() {
    let m = model(Variant::Full, 8);
    let xs: Vec<f32> = (0..3).flat_map(descriptor).collect();
    let y = m.forward(&xs).unwrap();
    let per = 125 * 6;
    for i in 0..3 {
        let yi = m.forward(&xs[i * DESCRIPTOR_LEN..][..DESCRIPTOR_LEN]).unwrap();
        let a = Tensor::new(vec![per], y.data()[i * per..][..per].to_vec()).unwrap();
        let b = yi.reshape(&[per]).unwrap();
        let worst = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).abs()).fold(0.0f32, f32::max);
        assert!(worst < 1e-4, "row {i}: {worst}");
    }
}
