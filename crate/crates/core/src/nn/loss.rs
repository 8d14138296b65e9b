use super::{NnError, Result, Scalar, Tensor};

/// Row-wise softmax over the last axis.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    let d = x.last_dim();
    if d > 0 {
        for row in y.data_mut().chunks_exact_mut(d) {
            softmax_in_place(row);
        }
    }
    y
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.f64()));
    let mut sum = 0.0;
    for v in row.iter_mut() {
        let e = (v.f64() - max).exp();
        sum += e;
        *v = T::of(e);
    }
    for v in row.iter_mut() {
        *v = T::of(v.f64() / sum);
    }
}

/// Mean cross-entropy of `logits` (`[.., C]`) against one class index per
/// row, together with the gradient of that mean with respect to the logits.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    targets: &[u8],
) -> Result<(f64, Tensor<T>)> {
    let c = logits.last_dim();
    let rows = logits.rows();
    if targets.len() != rows || c == 0 {
        return Err(NnError::shape(
            "cross_entropy",
            format!("logits {:?} vs {} targets", logits.shape(), targets.len()),
        ));
    }
    if let Some(&t) = targets.iter().find(|&&t| t as usize >= c) {
        return Err(NnError::TargetOutOfRange {
            target: t as usize,
            classes: c,
        });
    }
    let inv = 1.0 / rows as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    let mut p = vec![0.0f64; c];
    for (row, &t) in logits.data().chunks_exact(c).zip(targets) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.f64()));
        let mut sum = 0.0;
        for (p, v) in p.iter_mut().zip(row) {
            *p = (v.f64() - max).exp();
            sum += *p;
        }
        loss += sum.ln() - (row[t as usize].f64() - max);
        for (j, &e) in p.iter().enumerate() {
            let target = if j == t as usize { 1.0 } else { 0.0 };
            grad.push(T::of((e / sum - target) * inv));
        }
    }
    Ok((loss * inv, Tensor::new(logits.shape().to_vec(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits_give_log_c() {
        let logits = Tensor::<f32>::zeros(&[10, 6]);
        let (loss, _) = softmax_cross_entropy(&logits, &[3; 10]).unwrap();
        assert!((loss - 6f64.ln()).abs() < 1e-12);
        assert!((loss - 1.791759).abs() < 1e-6);
    }

    #[test]
    fn confident_target_has_tiny_loss() {
        let logits = Tensor::new(vec![1, 3], vec![0.0f64, 30.0, 0.0]).unwrap();
        let (loss, g) = softmax_cross_entropy(&logits, &[1]).unwrap();
        assert!(loss < 1e-4);
        assert!(g.data().iter().all(|v| v.abs() < 1e-4));
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Tensor::<f64>::from_fn(&[7, 6], |_| rng.random_range(-3.0..3.0));
        let (_, g) = softmax_cross_entropy(&x, &[0, 1, 2, 3, 4, 5, 0]).unwrap();
        for row in g.data().chunks(6) {
            assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::new(vec![2, 3], vec![1000.0f32, 1000.0, 1000.0, -1.0, 0.0, 1.0]).unwrap();
        let y = softmax_rows(&x);
        for r in y.data().chunks(3) {
            assert!((r.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
        assert!((y.data()[0] - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_targets() {
        let logits = Tensor::<f32>::zeros(&[2, 3]);
        assert_eq!(
            softmax_cross_entropy(&logits, &[0, 3]).unwrap_err(),
            NnError::TargetOutOfRange { target: 3, classes: 3 }
        );
        assert!(softmax_cross_entropy(&logits, &[0]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::<f64>::from_fn(&[5, 4], |_| rng.random_range(-2.0..2.0));
        let t = [0u8, 3, 1, 1, 2];
        let (_, g) = softmax_cross_entropy(&x, &t).unwrap();
        let rep = grad_check(
            |p| softmax_cross_entropy(&Tensor::new(vec![5, 4], p.to_vec()).unwrap(), &t).unwrap().0,
            x.data(),
            g.data(),
            1e-3,
            None,
        );
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");
    }

    proptest::proptest! {
        #[test]
        fn softmax_is_a_distribution(v in proptest::collection::vec(-50.0f32..50.0, 1..40)) {
            let n = v.len();
            let y = softmax_rows(&Tensor::new(vec![1, n], v).unwrap());
            proptest::prop_assert!(y.data().iter().all(|&p| p >= 0.0));
            proptest::prop_assert!((y.data().iter().map(|&p| p as f64).sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}
