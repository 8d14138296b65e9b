//! Dense tensors and the handful of layers the network needs, each with an
//! explicit backward pass, plus Adam and a finite-difference checker.
//!
//! Layers are generic over [`Scalar`] so that the same code runs in `f32` for
//! training and in `f64` for gradient checking. Matrix products go through
//! `matrixmultiply`; reductions (layer-norm statistics, softmax, loss, bias
//! gradients) accumulate in `f64`.

mod activation;
mod adam;
mod attention;
mod conv3d;
mod conv_direct;
mod gradcheck;
mod layer_norm;
mod linear;
mod loss;
mod param;
mod tensor;

pub use activation::{relu, relu_backward, relu_in_place};
pub use adam::{adam_step, Adam, AdamConfig};
pub use attention::{
    multi_head_self_attention, multi_head_self_attention_backward, AttentionCache,
    AttentionGrads, SelfAttention,
};
pub use conv3d::{conv3d, conv3d_backward, conv3d_output_side, Conv3d, ConvGrads};
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use layer_norm::{layer_norm, layer_norm_backward, LayerNorm, LayerNormCache, LN_EPS};
pub use linear::{linear, linear_backward, Linear, LinearGrads};
pub use loss::{softmax_cross_entropy, softmax_rows};
pub use param::{xavier_bound, Parameter};
pub use tensor::{gemm, MatRef, Scalar, Tensor};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("{op}: shape mismatch ({detail})")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("target {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
}

impl NnError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Self::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;

/// Column sums of a row-major `[rows, cols]` buffer, accumulated in `f64`
/// and added into `out`.
pub(crate) fn add_column_sums<T: Scalar>(data: &[T], cols: usize, out: &mut [T]) {
    let mut acc = vec![0.0f64; cols];
    for row in data.chunks_exact(cols) {
        for (a, &x) in acc.iter_mut().zip(row) {
            *a += x.f64();
        }
    }
    for (o, a) in out.iter_mut().zip(acc) {
        *o = *o + T::of(a);
    }
}
