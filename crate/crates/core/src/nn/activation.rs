use super::{NnError, Result, Scalar, Tensor};

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    relu_in_place(&mut y);
    y
}

pub fn relu_in_place<T: Scalar>(x: &mut Tensor<T>) {
    for v in x.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Passes `dy` where the forward input was strictly positive.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != dy.shape() {
        return Err(NnError::shape("relu", format!("{:?} vs {:?}", x.shape(), dy.shape())));
    }
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}
