use super::{add_column_sums, NnError, Parameter, Result, Scalar, Tensor};

pub const LN_EPS: f64 = 1e-5;

/// Saved normalized activations and inverse standard deviations.
#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
    pub width: usize,
}

/// Normalizes each row over the last axis (mean 0, variance 1, eps 1e-5),
/// then applies `gamma * xhat + beta`.
pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<(Tensor<T>, LayerNormCache<T>)> {
    let d = x.last_dim();
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(NnError::shape(
            "layer_norm",
            format!("input {:?}, gamma {:?}, beta {:?}", x.shape(), gamma.shape(), beta.shape()),
        ));
    }
    let rows = x.rows();
    let mut y = Vec::with_capacity(x.len());
    let mut xhat = Vec::with_capacity(x.len());
    let mut rstd = Vec::with_capacity(rows);
    for row in x.data().chunks_exact(d) {
        let mean = row.iter().map(|v| v.f64()).sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd.push(T::of(r));
        for ((&v, &g), &b) in row.iter().zip(gamma.data()).zip(beta.data()) {
            let h = T::of((v.f64() - mean) * r);
            xhat.push(h);
            y.push(g * h + b);
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), y)?,
        LayerNormCache { xhat, rstd, width: d },
    ))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_backward<T: Scalar>(
    cache: &LayerNormCache<T>,
    gamma: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let d = cache.width;
    if dy.len() != cache.xhat.len() || gamma.shape() != [d] {
        return Err(NnError::shape("layer_norm", format!("upstream {:?}", dy.shape())));
    }
    let mut dgamma = Tensor::zeros(&[d]);
    let mut dbeta = Tensor::zeros(&[d]);
    let dx = backward_into(cache, gamma.data(), dy.data(), dgamma.data_mut(), dbeta.data_mut());
    Ok((Tensor::new(dy.shape().to_vec(), dx)?, dgamma, dbeta))
}

fn backward_into<T: Scalar>(
    cache: &LayerNormCache<T>,
    gamma: &[T],
    dy: &[T],
    dgamma: &mut [T],
    dbeta: &mut [T],
) -> Vec<T> {
    let d = cache.width;
    let mut dx = Vec::with_capacity(dy.len());
    let mut dg = vec![0.0f64; d];
    let mut scratch = vec![0.0f64; d];
    for ((g_row, h_row), &r) in dy
        .chunks_exact(d)
        .zip(cache.xhat.chunks_exact(d))
        .zip(&cache.rstd)
    {
        let mut sum = 0.0;
        let mut sum_h = 0.0;
        for j in 0..d {
            let gh = g_row[j].f64() * gamma[j].f64();
            scratch[j] = gh;
            sum += gh;
            sum_h += gh * h_row[j].f64();
            dg[j] += g_row[j].f64() * h_row[j].f64();
        }
        let r = r.f64() / d as f64;
        for j in 0..d {
            dx.push(T::of(r * (d as f64 * scratch[j] - sum - h_row[j].f64() * sum_h)));
        }
    }
    for (o, a) in dgamma.iter_mut().zip(dg) {
        *o = *o + T::of(a);
    }
    add_column_sums(dy, d, dbeta);
    dx
}

/// Layer norm with affine parameters (`gamma` ones, `beta` zeros at init).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gamma: Parameter<T>,
    pub beta: Parameter<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(name: &str, d: usize) -> Self {
        Self {
            gamma: Parameter::ones(format!("{name}.gamma"), &[d]),
            beta: Parameter::zeros(format!("{name}.beta"), &[d]),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, LayerNormCache<T>)> {
        layer_norm(x, &self.gamma.value, &self.beta.value)
    }

    pub fn backward(&mut self, cache: &LayerNormCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        if dy.len() != cache.xhat.len() {
            return Err(NnError::shape("layer_norm", format!("upstream {:?}", dy.shape())));
        }
        let dx = backward_into(
            cache,
            self.gamma.value.data(),
            dy.data(),
            self.gamma.grad.data_mut(),
            self.beta.grad.data_mut(),
        );
        Tensor::new(dy.shape().to_vec(), dx)
    }

    pub fn params(&self) -> [&Parameter<T>; 2] {
        [&self.gamma, &self.beta]
    }

    pub fn params_mut(&mut self) -> [&mut Parameter<T>; 2] {
        [&mut self.gamma, &mut self.beta]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_row_maps_to_zero() {
        let x = Tensor::filled(&[2, 6], 3.5f32);
        let (y, _) = layer_norm(&x, &Tensor::filled(&[6], 1.0), &Tensor::zeros(&[6])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::from_fn(&[3, 144], |_| rng.random_range(-5.0f64..5.0));
        let (_, cache) = layer_norm(&x, &Tensor::filled(&[144], 1.0), &Tensor::zeros(&[144])).unwrap();
        for row in cache.xhat.chunks(144) {
            let mean = row.iter().sum::<f64>() / 144.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 144.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut rand_t = |shape: &[usize]| Tensor::<f64>::from_fn(shape, |_| rng.random_range(-1.0..1.0));
        let (x, gamma, beta, r) = (rand_t(&[3, 8]), rand_t(&[8]), rand_t(&[8]), rand_t(&[3, 8]));
        let (_, cache) = layer_norm(&x, &gamma, &beta).unwrap();
        let (dx, dg, db) = layer_norm_backward(&cache, &gamma, &r).unwrap();
        let obj = |x: &Tensor<f64>, g: &Tensor<f64>, b: &Tensor<f64>| {
            layer_norm(x, g, b).unwrap().0.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>()
        };
        let t = |s: &[usize], p: &[f64]| Tensor::new(s.to_vec(), p.to_vec()).unwrap();
        let reps = [
            grad_check(|p| obj(&t(&[3, 8], p), &gamma, &beta), x.data(), dx.data(), 1e-3, None),
            grad_check(|p| obj(&x, &t(&[8], p), &beta), gamma.data(), dg.data(), 1e-3, None),
            grad_check(|p| obj(&x, &gamma, &t(&[8], p)), beta.data(), db.data(), 1e-3, None),
        ];
        for r in reps {
            assert!(r.max_rel_error < 1e-4, "{r:?}");
        }
    }
}
