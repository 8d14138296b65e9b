use super::{add_column_sums, gemm, MatRef, NnError, Parameter, Result, Scalar, Tensor};
use rand::Rng;

fn check<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>) -> Result<(usize, usize)> {
    let [out, inp] = w.shape() else {
        return Err(NnError::shape("linear", format!("weight {:?}", w.shape())));
    };
    if x.last_dim() != *inp {
        return Err(NnError::shape(
            "linear",
            format!("input {:?} vs weight {:?}", x.shape(), w.shape()),
        ));
    }
    Ok((*out, *inp))
}

fn out_shape(x: &[usize], out: usize) -> Vec<usize> {
    let mut s = x.to_vec();
    *s.last_mut().unwrap() = out;
    s
}

/// `y = x Wᵀ + b` over the last axis of `x`; `W` is `[out, in]`.
pub fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (out, inp) = check(x, w)?;
    if b.shape() != [out] {
        return Err(NnError::shape("linear", format!("bias {:?}", b.shape())));
    }
    let rows = x.rows();
    let mut y = Vec::with_capacity(rows * out);
    for _ in 0..rows {
        y.extend_from_slice(b.data());
    }
    gemm(
        T::one(),
        MatRef::new(x.data(), rows, inp),
        MatRef::new(w.data(), out, inp).t(),
        T::one(),
        &mut y,
        out,
    );
    Tensor::new(out_shape(x.shape(), out), y)
}

#[derive(Debug, Clone)]
pub struct LinearGrads<T> {
    pub dx: Tensor<T>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

pub fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<LinearGrads<T>> {
    let (out, inp) = check(x, w)?;
    if dy.rows() != x.rows() || dy.last_dim() != out {
        return Err(NnError::shape("linear", format!("upstream {:?}", dy.shape())));
    }
    let mut dw = Tensor::zeros(&[out, inp]);
    let mut db = Tensor::zeros(&[out]);
    accumulate_param_grads(x.data(), inp, dy.data(), out, dw.data_mut(), db.data_mut());
    let dx = input_grad(dy.data(), out, w.data(), inp);
    Ok(LinearGrads {
        dx: Tensor::new(x.shape().to_vec(), dx)?,
        dw,
        db,
    })
}

fn accumulate_param_grads<T: Scalar>(
    x: &[T],
    inp: usize,
    dy: &[T],
    out: usize,
    dw: &mut [T],
    db: &mut [T],
) {
    let rows = x.len() / inp;
    gemm(
        T::one(),
        MatRef::new(dy, rows, out).t(),
        MatRef::new(x, rows, inp),
        T::one(),
        dw,
        inp,
    );
    add_column_sums(dy, out, db);
}

fn input_grad<T: Scalar>(dy: &[T], out: usize, w: &[T], inp: usize) -> Vec<T> {
    let rows = dy.len() / out;
    let mut dx = vec![T::zero(); rows * inp];
    gemm(
        T::one(),
        MatRef::new(dy, rows, out),
        MatRef::new(w, out, inp),
        T::zero(),
        &mut dx,
        inp,
    );
    dx
}

/// Fully connected layer owning its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng>(name: &str, inp: usize, out: usize, rng: &mut R) -> Self {
        Self {
            weight: Parameter::xavier(format!("{name}.weight"), &[out, inp], inp, out, rng),
            bias: Parameter::zeros(format!("{name}.bias"), &[out]),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        linear(x, &self.weight.value, &self.bias.value)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        self.backward_params(x, dy)?;
        let dx = input_grad(dy.data(), self.out_features(), self.weight.value.data(), self.in_features());
        Tensor::new(x.shape().to_vec(), dx)
    }

    /// Accumulates parameter gradients only.
    pub fn backward_params(&mut self, x: &Tensor<T>, dy: &Tensor<T>) -> Result<()> {
        let (out, inp) = check(x, &self.weight.value)?;
        if dy.rows() != x.rows() || dy.last_dim() != out {
            return Err(NnError::shape("linear", format!("upstream {:?}", dy.shape())));
        }
        accumulate_param_grads(
            x.data(),
            inp,
            dy.data(),
            out,
            self.weight.grad.data_mut(),
            self.bias.grad.data_mut(),
        );
        Ok(())
    }

    pub fn params(&self) -> [&Parameter<T>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Parameter<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn multiply_count(&self, rows: usize) -> u64 {
        (rows * self.in_features() * self.out_features()) as u64
    }
}
