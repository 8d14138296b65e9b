use super::conv_direct::{self, Dims};
use super::{add_column_sums, gemm, MatRef, NnError, Parameter, Result, Scalar, Tensor};
use rand::Rng;

const K: usize = 3;
const TAPS: usize = K * K * K;

/// Output length along one axis for a size-3 kernel.
pub fn conv3d_output_side(input: usize, stride: usize, pad: usize) -> usize {
    if input + 2 * pad < K || stride == 0 {
        0
    } else {
        (input + 2 * pad - K) / stride + 1
    }
}

#[derive(Debug, Clone, Copy)]
struct Geom {
    batch: usize,
    inp: [usize; 3],
    out: [usize; 3],
    cin: usize,
    cout: usize,
    stride: usize,
    pad: usize,
}

impl Geom {
    fn new<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, pad: usize) -> Result<Self> {
        let s = x.shape();
        let (batch, sp) = match s.len() {
            4 => (1, &s[..3]),
            5 => (s[0], &s[1..4]),
            _ => return Err(NnError::shape("conv3d", format!("input {s:?}"))),
        };
        let cin = s[s.len() - 1];
        let [cout, 3, 3, 3, wc] = *w.shape() else {
            return Err(NnError::shape("conv3d", format!("kernel {:?}", w.shape())));
        };
        if wc != cin {
            return Err(NnError::shape("conv3d", format!("input {s:?} vs kernel {:?}", w.shape())));
        }
        let inp = [sp[0], sp[1], sp[2]];
        let out = inp.map(|n| conv3d_output_side(n, stride, pad));
        if out.contains(&0) {
            return Err(NnError::shape("conv3d", format!("input {s:?} too small")));
        }
        Ok(Self { batch, inp, out, cin, cout, stride, pad })
    }

    fn positions(&self) -> usize {
        self.batch * self.out.iter().product::<usize>()
    }

    fn out_shape(&self, rank: usize) -> Vec<usize> {
        let mut s = Vec::with_capacity(5);
        if rank == 5 {
            s.push(self.batch);
        }
        s.extend_from_slice(&self.out);
        s.push(self.cout);
        s
    }

    fn dims(&self) -> Dims {
        Dims {
            inp: self.inp,
            out: self.out,
            cin: self.cin,
            cout: self.cout,
            stride: self.stride,
            pad: self.pad,
        }
    }

    fn direct(&self) -> bool {
        conv_direct::supported(self.cin, self.cout)
    }

    fn in_len(&self) -> usize {
        self.inp.iter().product::<usize>() * self.cin
    }

    fn out_len(&self) -> usize {
        self.out.iter().product::<usize>() * self.cout
    }

    fn per_item_positions(&self) -> usize {
        self.out.iter().product()
    }

    /// Calls `f(col_offset, input_offset)` for every in-bounds tap of every
    /// output position of one batch item, columns ordered `(kz, ky, kx, c)`.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let [d, h, w] = self.inp;
        let [od, oh, ow] = self.out;
        let row_len = TAPS * self.cin;
        let mut row = 0;
        for z in 0..od {
            for y in 0..oh {
                for x in 0..ow {
                    let base = [z, y, x].map(|o| (o * self.stride) as isize - self.pad as isize);
                    for kz in 0..K {
                        let iz = base[0] + kz as isize;
                        if iz < 0 || iz >= d as isize {
                            continue;
                        }
                        for ky in 0..K {
                            let iy = base[1] + ky as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..K {
                                let ix = base[2] + kx as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let voxel = (iz as usize * h + iy as usize) * w + ix as usize;
                                let tap = (kz * K + ky) * K + kx;
                                f(row * row_len + tap * self.cin, voxel * self.cin);
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Fills `cols` (one item, `[positions, 27·Cin]`); padding taps are zero.
    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        cols.fill(T::zero());
        let c = self.cin;
        self.for_each_tap(|co, xo| cols[co..co + c].copy_from_slice(&x[xo..xo + c]));
    }

    fn col2im<T: Scalar>(&self, cols: &[T], dx: &mut [T]) {
        let c = self.cin;
        self.for_each_tap(|co, xo| {
            for (d, &g) in dx[xo..xo + c].iter_mut().zip(&cols[co..co + c]) {
                *d = *d + g;
            }
        });
    }
}

/// 3-D convolution with a `3×3×3` kernel on channels-last volumes.
///
/// `x` is `[D, H, W, Cin]` or `[B, D, H, W, Cin]`, `w` is
/// `[Cout, 3, 3, 3, Cin]`, `b` is `[Cout]`; padding is with zeros.
pub fn conv3d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = Geom::new(x, w, stride, pad)?;
    if b.shape() != [g.cout] {
        return Err(NnError::shape("conv3d", format!("bias {:?}", b.shape())));
    }
    if g.direct() {
        let mut y = vec![T::zero(); g.positions() * g.cout];
        if let (Some(xf), Some(wf), Some(bf), Some(yf)) = (
            T::as_f32(x.data()),
            T::as_f32(w.data()),
            T::as_f32(b.data()),
            T::as_f32_mut(&mut y),
        ) {
            conv_direct::forward(&g.dims(), wf, bf, xf, yf);
            return Tensor::new(g.out_shape(x.shape().len()), y);
        }
    }
    let n = g.per_item_positions();
    let kdim = TAPS * g.cin;
    let mut y = Vec::with_capacity(g.positions() * g.cout);
    for _ in 0..g.positions() {
        y.extend_from_slice(b.data());
    }
    let mut cols = vec![T::zero(); n * kdim];
    for (xi, yi) in x.data().chunks_exact(g.in_len()).zip(y.chunks_exact_mut(g.out_len())) {
        g.im2col(xi, &mut cols);
        gemm(
            T::one(),
            MatRef::new(&cols, n, kdim),
            MatRef::new(w.data(), g.cout, kdim).t(),
            T::one(),
            yi,
            g.cout,
        );
    }
    Tensor::new(g.out_shape(x.shape().len()), y)
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub dx: Tensor<T>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

pub fn conv3d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<ConvGrads<T>> {
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(&[w.shape()[0]]);
    let dx = backward_into(x, w, dy, stride, pad, dw.data_mut(), db.data_mut())?;
    Ok(ConvGrads { dx, dw, db })
}

fn backward_into<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    pad: usize,
    dw: &mut [T],
    db: &mut [T],
) -> Result<Tensor<T>> {
    let g = Geom::new(x, w, stride, pad)?;
    if dy.shape() != g.out_shape(x.shape().len()).as_slice() {
        return Err(NnError::shape("conv3d", format!("upstream {:?}", dy.shape())));
    }
    let n = g.per_item_positions();
    let kdim = TAPS * g.cin;
    add_column_sums(dy.data(), g.cout, db);
    if g.direct() {
        let mut dx = vec![T::zero(); x.len()];
        if let (Some(xf), Some(wf), Some(gf), Some(dwf), Some(dxf)) = (
            T::as_f32(x.data()),
            T::as_f32(w.data()),
            T::as_f32(dy.data()),
            T::as_f32_mut(dw),
            T::as_f32_mut(&mut dx),
        ) {
            conv_direct::weight_grad(&g.dims(), xf, gf, dwf);
            conv_direct::input_grad(&g.dims(), wf, gf, dxf);
            return Tensor::new(x.shape().to_vec(), dx);
        }
    }
    let mut cols = vec![T::zero(); n * kdim];
    let mut dx = vec![T::zero(); x.len()];
    for ((xi, dyi), dxi) in x
        .data()
        .chunks_exact(g.in_len())
        .zip(dy.data().chunks_exact(g.out_len()))
        .zip(dx.chunks_exact_mut(g.in_len()))
    {
        g.im2col(xi, &mut cols);
        gemm(
            T::one(),
            MatRef::new(dyi, n, g.cout).t(),
            MatRef::new(&cols, n, kdim),
            T::one(),
            dw,
            kdim,
        );
        gemm(
            T::one(),
            MatRef::new(dyi, n, g.cout),
            MatRef::new(w.data(), g.cout, kdim),
            T::zero(),
            &mut cols,
            kdim,
        );
        g.col2im(&cols, dxi);
    }
    Tensor::new(x.shape().to_vec(), dx)
}

/// Convolution layer with bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3d<T> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Scalar> Conv3d<T> {
    /// Xavier init with `fan_in = 27·Cin` and `fan_out = 27·Cout`.
    pub fn new<R: Rng>(name: &str, cin: usize, cout: usize, stride: usize, pad: usize, rng: &mut R) -> Self {
        Self {
            weight: Parameter::xavier(
                format!("{name}.weight"),
                &[cout, K, K, K, cin],
                TAPS * cin,
                TAPS * cout,
                rng,
            ),
            bias: Parameter::zeros(format!("{name}.bias"), &[cout]),
            stride,
            pad,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[4]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv3d(x, &self.weight.value, &self.bias.value, self.stride, self.pad)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
        backward_into(
            x,
            &self.weight.value,
            dy,
            self.stride,
            self.pad,
            self.weight.grad.data_mut(),
            self.bias.grad.data_mut(),
        )
    }

    pub fn params(&self) -> [&Parameter<T>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Parameter<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }

    /// Multiplications for `batch` inputs of side `side`.
    pub fn multiply_count(&self, batch: usize, side: usize) -> u64 {
        let o = conv3d_output_side(side, self.stride, self.pad);
        (batch * o * o * o * TAPS * self.in_channels() * self.out_channels()) as u64
    }
}
