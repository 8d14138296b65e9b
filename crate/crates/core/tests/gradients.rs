//! Finite-difference checks of every layer and of the cross-entropy loss
//! through the default-size network, in `f64`.

mod common;

use common::{end_to_end_gradient, layer_gradient_errors};
use sparseg::model::Variant;

#[test]
fn every_layer_matches_central_differences() {
    for (name, e) in layer_gradient_errors(1e-3) {
        assert!(e < 1e-4, "{name}: {e}");
    }
}

#[test]
fn full_model_loss_gradient() {
    for seed in 0..4 {
        let r = end_to_end_gradient(Variant::Full, seed, 1e-3, 20);
        assert!(r.rel_error < 1e-3, "seed {seed}: {} ({} kinked)", r.rel_error, r.kinked);
    }
}

#[test]
fn ablation_variant_gradients() {
    for v in [Variant::ResidualOnly, Variant::TransformerOnly, Variant::MlpOnly] {
        let r = end_to_end_gradient(v, 7, 1e-3, 20);
        assert!(r.rel_error < 1e-3, "{v}: {}", r.rel_error);
    }
}

#[test]
fn tight_agreement_at_small_step() {
    let r = end_to_end_gradient(Variant::Full, 0, 1e-5, 20);
    assert!(r.rel_error < 1e-6, "{}", r.rel_error);
}
