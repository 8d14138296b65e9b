//! The residual-transformer segmentation network.
//!
//! A descriptor is split into its nine grids. Each grid gets its own linear
//! projection to a 32-vector; the nine projections are concatenated and fused
//! into one 144-vector `f`. Nine tokens are formed as `lift_i(p_i) + f`, run
//! through shared residual feed-forward blocks and a post-norm attention
//! encoder, flattened, and mapped by a dense head to a `9×9×9×8` feature
//! cube. The 2 mm grid of the descriptor is appended as a ninth channel and
//! two `3×3×3` convolutions (the second with stride 2) produce `5×5×5×C`
//! logits.

mod checkpoint;
mod config;
mod network;

pub use checkpoint::{CheckpointError, FORMAT_VERSION, MAGIC};
pub use config::{ModelConfig, Variant};
pub use network::{
    EncoderLayer, ForwardCache, ResidualBlock, ResidualTransformer, Trace, FEATURE_CHANNELS,
    FEATURE_SIDE, HEAD_OUT, OUT_POSITIONS, OUT_SIDE,
};

use crate::nn::{NnError, Scalar, Tensor};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("descriptor buffer of length {found} is not a multiple of {expected}")]
    Layout { expected: usize, found: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Argmax over the last axis of `[.., C]` logits; ties go to the lower class.
pub fn argmax_labels<T: Scalar>(logits: &Tensor<T>) -> Vec<u8> {
    let c = logits.last_dim();
    logits
        .data()
        .chunks_exact(c)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best as u8
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::softmax_rows;
    use crate::sampler::{DESCRIPTOR_LEN, GRID_SAMPLES};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small(variant: Variant, seed: u64) -> ModelConfig {
        ModelConfig {
            class_count: 3,
            grid_proj_width: 4,
            model_width: 8,
            heads: 2,
            n_residual_blocks: 1,
            n_encoder_layers: 1,
            variant,
            seed,
        }
    }

    fn descriptors(n: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * DESCRIPTOR_LEN).map(|_| rng.random_range(0.0..1.0)).collect()
    }

    #[test]
    fn argmax_prefers_first_on_ties() {
        let t = Tensor::new(vec![2, 3], vec![1.0f32, 1.0, 0.0, -1.0, 2.0, 2.0]).unwrap();
        assert_eq!(argmax_labels(&t), vec![0, 1]);
    }

    #[test]
    fn config_validation() {
        let mut c = ModelConfig::default();
        assert!(c.validate().is_ok());
        c.heads = 5;
        assert!(c.validate().is_err());
        c = ModelConfig { class_count: 1, ..Default::default() };
        assert!(matches!(ResidualTransformer::<f32>::new(c), Err(ModelError::BadConfig(_))));
        assert_eq!("mlp_only".parse::<Variant>().unwrap(), Variant::MlpOnly);
        assert!("unet".parse::<Variant>().is_err());
    }

    #[test]
    fn every_variant_emits_label_blocks() {
        let x = descriptors(2, 1);
        for v in Variant::ALL {
            let m = ResidualTransformer::<f32>::new(small(v, 3)).unwrap();
            let (y, cache) = m.forward_cached(&x).unwrap();
            assert_eq!(y.shape(), &[2, 5, 5, 5, 3], "{v}");
            assert!(cache.trace().iter().any(|(s, sh)| *s == "features" && sh == &[9, 9, 9, 8]));
            let p = softmax_rows(&y);
            for row in p.data().chunks(3) {
                assert!((row.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rejects_partial_descriptors() {
        let m = ResidualTransformer::<f32>::new(small(Variant::Full, 0)).unwrap();
        assert!(matches!(m.forward(&[0.0; 100]), Err(ModelError::Layout { .. })));
    }

    #[test]
    fn batch_rows_are_independent() {
        let m = ResidualTransformer::<f64>::new(small(Variant::Full, 5)).unwrap();
        let x: Vec<f64> = descriptors(3, 2).into_iter().map(f64::from).collect();
        let y = m.forward(&x).unwrap();
        let y1 = m.forward(&x[DESCRIPTOR_LEN..2 * DESCRIPTOR_LEN]).unwrap();
        let per = 125 * 3;
        for (a, b) in y.data()[per..2 * per].iter().zip(y1.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn local_grid_channel_reaches_logits() {
        let m = ResidualTransformer::<f32>::new(small(Variant::MlpOnly, 6)).unwrap();
        let x = descriptors(1, 3);
        let mut x2 = x.clone();
        x2[3 * GRID_SAMPLES + 364] += 0.5;
        assert_ne!(m.forward(&x).unwrap(), m.forward(&x2).unwrap());
    }

    #[test]
    fn small_model_gradients() {
        for v in Variant::ALL {
            let mut m = ResidualTransformer::<f64>::new(small(v, 11)).unwrap();
            let x: Vec<f64> = descriptors(2, 4).into_iter().map(f64::from).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(12);
            let targets: Vec<u8> = (0..250).map(|_| rng.random_range(0..3)).collect();
            let (y, cache) = m.forward_cached(&x).unwrap();
            let flat = y.reshape(&[250, 3]).unwrap();
            let (_, g) = crate::nn::softmax_cross_entropy(&flat, &targets).unwrap();
            m.zero_grad();
            m.backward(&cache, &g.reshape(&[2, 5, 5, 5, 3]).unwrap()).unwrap();
            let picks: Vec<(usize, usize)> = {
                let params = m.params();
                let mut picks = Vec::new();
                while picks.len() < 30 {
                    let p = rng.random_range(0..params.len());
                    let pick = (p, rng.random_range(0..params[p].len()));
                    if !picks.contains(&pick) {
                        picks.push(pick);
                    }
                }
                picks
            };
            let point: Vec<f64> = picks.iter().map(|&(p, i)| m.params()[p].value.data()[i]).collect();
            let analytic: Vec<f64> = picks.iter().map(|&(p, i)| m.params()[p].grad.data()[i]).collect();
            let rep = crate::nn::grad_check(
                |vals| {
                    {
                        let mut ps = m.params_mut();
                        for (&(p, i), &v) in picks.iter().zip(vals) {
                            ps[p].value.data_mut()[i] = v;
                        }
                    }
                    let y = m.forward(&x).unwrap().reshape(&[250, 3]).unwrap();
                    crate::nn::softmax_cross_entropy(&y, &targets).unwrap().0
                },
                &point,
                &analytic,
                // Small step so perturbations stay clear of ReLU kinks.
                1e-6,
                None,
            );
            assert!(rep.max_rel_error < 1e-4, "{v}: {rep:?}");
        }
    }
}
