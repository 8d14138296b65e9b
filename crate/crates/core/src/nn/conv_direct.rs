//! Direct `3×3×3` convolution kernels for `f32` with at most 16 channels.
//!
//! Channels are held in fixed-width lane arrays so the inner loops vectorize;
//! on x86-64 with AVX2 and FMA a copy compiled for those features is picked
//! at run time.

const K: usize = 3;
const TAPS: usize = K * K * K;
pub(super) const MAX_CHANNELS: usize = 16;

#[derive(Debug, Clone, Copy)]
pub(super) struct Dims {
    pub inp: [usize; 3],
    pub out: [usize; 3],
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Dims {
    fn in_len(&self) -> usize {
        self.inp.iter().product::<usize>() * self.cin
    }

    fn out_len(&self) -> usize {
        self.out.iter().product::<usize>() * self.cout
    }

    /// In-bounds kernel offsets `lo..hi` along `axis` for output index `o`.
    #[inline(always)]
    fn taps(&self, axis: usize, o: usize) -> (usize, usize, usize) {
        let start = (o * self.stride) as isize - self.pad as isize;
        let lo = (-start).max(0) as usize;
        let hi = (self.inp[axis] as isize - start).clamp(0, K as isize) as usize;
        (lo, hi, (start + lo as isize) as usize)
    }

    /// Calls `f(out_position, tap, input_voxel)` for every in-bounds tap.
    #[inline(always)]
    fn walk(&self, mut f: impl FnMut(usize, usize, usize)) {
        let [_, h, w] = self.inp;
        let [od, oh, ow] = self.out;
        let mut pos = 0;
        for z in 0..od {
            let (z0, z1, iz0) = self.taps(0, z);
            for y in 0..oh {
                let (y0, y1, iy0) = self.taps(1, y);
                for x in 0..ow {
                    let (x0, x1, ix0) = self.taps(2, x);
                    for kz in z0..z1 {
                        let iz = iz0 + kz - z0;
                        for ky in y0..y1 {
                            let iy = iy0 + ky - y0;
                            let row = (iz * h + iy) * w;
                            for kx in x0..x1 {
                                f(pos, (kz * K + ky) * K + kx, row + ix0 + kx - x0);
                            }
                        }
                    }
                    pos += 1;
                }
            }
        }
    }
}

pub(super) fn supported(cin: usize, cout: usize) -> bool {
    cin <= MAX_CHANNELS && cout <= MAX_CHANNELS
}

#[inline(always)]
fn fma<const F: bool>(a: f32, b: f32, c: f32) -> f32 {
    if F {
        a.mul_add(b, c)
    } else {
        a * b + c
    }
}

/// `w[co][tap][ci]` to `[tap][ci]` rows with lanes over `co`.
fn pack_by_input<const L: usize>(w: &[f32], d: &Dims) -> Vec<[f32; L]> {
    let mut p = vec![[0.0; L]; TAPS * d.cin];
    for co in 0..d.cout {
        for tap in 0..TAPS {
            for ci in 0..d.cin {
                p[tap * d.cin + ci][co] = w[(co * TAPS + tap) * d.cin + ci];
            }
        }
    }
    p
}

/// `w[co][tap][ci]` to `[tap][co]` rows with lanes over `ci`.
fn pack_by_output<const L: usize>(w: &[f32], d: &Dims) -> Vec<[f32; L]> {
    let mut p = vec![[0.0; L]; TAPS * d.cout];
    for co in 0..d.cout {
        for tap in 0..TAPS {
            let row = &mut p[tap * d.cout + co];
            row[..d.cin].copy_from_slice(&w[(co * TAPS + tap) * d.cin..][..d.cin]);
        }
    }
    p
}

/// `acc += Σ_j s[j] · w[j]` using four independent accumulator chains to
/// hide FMA latency.
#[inline(always)]
fn dot_rows<const F: bool, const L: usize>(s: &[f32], w: &[[f32; L]], acc: &mut [[f32; L]; 4]) {
    let [a0, a1, a2, a3] = acc;
    let mut sc = s.chunks_exact(4);
    let mut wc = w.chunks_exact(4);
    for (sv, wv) in (&mut sc).zip(&mut wc) {
        for l in 0..L {
            a0[l] = fma::<F>(sv[0], wv[0][l], a0[l]);
            a1[l] = fma::<F>(sv[1], wv[1][l], a1[l]);
            a2[l] = fma::<F>(sv[2], wv[2][l], a2[l]);
            a3[l] = fma::<F>(sv[3], wv[3][l], a3[l]);
        }
    }
    for (&sv, wv) in sc.remainder().iter().zip(wc.remainder()) {
        for l in 0..L {
            a0[l] = fma::<F>(sv, wv[l], a0[l]);
        }
    }
}

#[inline(always)]
fn reduce<const L: usize>(acc: &[[f32; L]; 4], init: &[f32; L]) -> [f32; L] {
    let mut out = *init;
    for l in 0..L {
        out[l] += (acc[0][l] + acc[1][l]) + (acc[2][l] + acc[3][l]);
    }
    out
}

#[inline(always)]
fn forward_body<const F: bool, const L: usize>(d: &Dims, wp: &[[f32; L]], bias: &[f32; L], x: &[f32], y: &mut [f32]) {
    let (cin, cout) = (d.cin, d.cout);
    let [_, h, w] = d.inp;
    let [od, oh, ow] = d.out;
    for (xi, yi) in x.chunks_exact(d.in_len()).zip(y.chunks_exact_mut(d.out_len())) {
        let mut pos = 0;
        for z in 0..od {
            let (z0, z1, iz0) = d.taps(0, z);
            for yy in 0..oh {
                let (y0, y1, iy0) = d.taps(1, yy);
                for xx in 0..ow {
                    let (x0, x1, ix0) = d.taps(2, xx);
                    let mut acc = [[0.0f32; L]; 4];
                    for kz in z0..z1 {
                        for ky in y0..y1 {
                            let row = ((iz0 + kz - z0) * h + iy0 + ky - y0) * w + ix0;
                            // Taps along x are adjacent voxels, so their
                            // channels form one contiguous run.
                            let src = &xi[row * cin..][..(x1 - x0) * cin];
                            let tap0 = (kz * K + ky) * K + x0;
                            dot_rows::<F, L>(src, &wp[tap0 * cin..][..(x1 - x0) * cin], &mut acc);
                        }
                    }
                    let out = reduce(&acc, bias);
                    yi[pos * cout..][..cout].copy_from_slice(&out[..cout]);
                    pos += 1;
                }
            }
        }
    }
}

#[inline(always)]
fn input_grad_body<const F: bool, const L: usize>(d: &Dims, wp: &[[f32; L]], dy: &[f32], dx: &mut [f32]) {
    let (cin, cout) = (d.cin, d.cout);
    let zero = [0.0f32; L];
    for (gi, dxi) in dy.chunks_exact(d.out_len()).zip(dx.chunks_exact_mut(d.in_len())) {
        d.walk(|pos, tap, voxel| {
            let g = &gi[pos * cout..][..cout];
            let rows = &wp[tap * cout..][..cout];
            let mut acc = [[0.0f32; L]; 4];
            dot_rows::<F, L>(g, rows, &mut acc);
            let sum = reduce(&acc, &zero);
            for (o, a) in dxi[voxel * cin..][..cin].iter_mut().zip(sum) {
                *o += a;
            }
        });
    }
}

/// Accumulates `acc[tap·cin4 + ci][co] += Σ_pos x[src(pos, tap)][ci] · dy[pos][co]`,
/// with `x` padded to `cin4` channels and `dy` to `L` lanes per position.
#[inline(always)]
fn weight_grad_body<const F: bool, const L: usize>(d: &Dims, xpad: &[f32], gpad: &[[f32; L]], acc: &mut [[f32; L]]) {
    let cin4 = d.cin.next_multiple_of(4);
    let [_, h, w] = d.inp;
    let [od, oh, ow] = d.out;
    let inside = |o: usize, k: usize, n: usize| {
        let i = (o * d.stride + k) as isize - d.pad as isize;
        (i >= 0 && i < n as isize).then_some(i as usize)
    };
    for tap in 0..TAPS {
        let (kz, ky, kx) = (tap / 9, (tap / 3) % 3, tap % 3);
        for c0 in (0..cin4).step_by(4) {
            let (mut a0, mut a1, mut a2, mut a3) = ([0.0f32; L], [0.0f32; L], [0.0f32; L], [0.0f32; L]);
            for z in 0..od {
                let Some(iz) = inside(z, kz, d.inp[0]) else { continue };
                for y in 0..oh {
                    let Some(iy) = inside(y, ky, h) else { continue };
                    for x in 0..ow {
                        let Some(ix) = inside(x, kx, w) else { continue };
                        let g = &gpad[(z * oh + y) * ow + x];
                        let xs = &xpad[((iz * h + iy) * w + ix) * cin4 + c0..][..4];
                        for l in 0..L {
                            a0[l] = fma::<F>(xs[0], g[l], a0[l]);
                            a1[l] = fma::<F>(xs[1], g[l], a1[l]);
                            a2[l] = fma::<F>(xs[2], g[l], a2[l]);
                            a3[l] = fma::<F>(xs[3], g[l], a3[l]);
                        }
                    }
                }
            }
            for (k, a) in [a0, a1, a2, a3].into_iter().enumerate() {
                let row = &mut acc[tap * cin4 + c0 + k];
                for l in 0..L {
                    row[l] += a[l];
                }
            }
        }
    }
}

macro_rules! dispatch {
    ($name:ident, $body:ident, ($($arg:ident: $ty:ty),*)) => {
        fn $name<const L: usize>($($arg: $ty),*) {
            #[cfg(target_arch = "x86_64")]
            {
                #[target_feature(enable = "avx2,fma")]
                unsafe fn fast<const L: usize>($($arg: $ty),*) {
                    $body::<true, L>($($arg),*)
                }
                if is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma") {
                    // SAFETY: the required CPU features were detected above.
                    return unsafe { fast::<L>($($arg),*) };
                }
            }
            $body::<false, L>($($arg),*)
        }
    };
}

dispatch!(forward_l, forward_body, (d: &Dims, wp: &[[f32; L]], bias: &[f32; L], x: &[f32], y: &mut [f32]));
dispatch!(input_grad_l, input_grad_body, (d: &Dims, wp: &[[f32; L]], dy: &[f32], dx: &mut [f32]));
dispatch!(weight_grad_l, weight_grad_body, (d: &Dims, xpad: &[f32], gpad: &[[f32; L]], acc: &mut [[f32; L]]));


/// Vectors per register block along the flattened position axis.
const PV: usize = 3;
/// Channels per register block.
const CB: usize = 3;

/// Same-size stride-1 geometry in a zero-padded planar layout. Each channel
/// is a flattened `(d+2)×(h+2)×(w+2)` volume; output `(z, y, x)` sits at flat
/// index `z·sz + y·sy + x` and tap `(kz, ky, kx)` reads the input at that
/// index plus `kz·sz + ky·sy + kx`. Flat indices whose `x` or `y` fall in the
/// padding are computed and discarded, which keeps every lane contiguous.
struct Planar {
    dims: [usize; 3],
    sy: usize,
    sz: usize,
    /// Flat output positions per channel, rounded up to whole blocks.
    out_stride: usize,
    in_stride: usize,
    offs: [usize; TAPS],
}

impl Planar {
    fn new(dims: [usize; 3], lanes: usize) -> Self {
        let [d, h, w] = dims;
        let (sy, sz) = (w + 2, (h + 2) * (w + 2));
        let span = (d - 1) * sz + (h - 1) * sy + w;
        let out_stride = span.next_multiple_of(PV * lanes);
        let offs = std::array::from_fn(|t| (t / 9) * sz + ((t / 3) % 3) * sy + t % 3);
        Self { dims, sy, sz, out_stride, in_stride: out_stride + offs[TAPS - 1], offs }
    }

    /// Channels-last item into padded planes (`channels` rounded up to `CB`).
    fn scatter_input(&self, src: &[f32], channels: usize, dst: &mut [f32]) {
        let [d, h, w] = self.dims;
        let mut v = 0;
        for z in 0..d {
            for y in 0..h {
                let row = (z + 1) * self.sz + (y + 1) * self.sy + 1;
                for x in 0..w {
                    for (c, &val) in src[v * channels..][..channels].iter().enumerate() {
                        dst[c * self.in_stride + row + x] = val;
                    }
                    v += 1;
                }
            }
        }
    }

    /// Channels-last item into output planes, zero at discarded positions.
    fn scatter_output(&self, src: &[f32], channels: usize, dst: &mut [f32]) {
        let [d, h, w] = self.dims;
        let mut v = 0;
        for z in 0..d {
            for y in 0..h {
                let row = z * self.sz + y * self.sy;
                for x in 0..w {
                    for (c, &val) in src[v * channels..][..channels].iter().enumerate() {
                        dst[c * self.out_stride + row + x] = val;
                    }
                    v += 1;
                }
            }
        }
    }

    /// Output planes back to channels-last, adding `bias`.
    fn gather_output(&self, src: &[f32], bias: &[f32], dst: &mut [f32]) {
        let [d, h, w] = self.dims;
        let channels = bias.len();
        let mut v = 0;
        for z in 0..d {
            for y in 0..h {
                let row = z * self.sz + y * self.sy;
                for x in 0..w {
                    for (c, (o, &b)) in dst[v * channels..][..channels].iter_mut().zip(bias).enumerate() {
                        *o = src[c * self.out_stride + row + x] + b;
                    }
                    v += 1;
                }
            }
        }
    }
}

/// `yp[co] = Σ_tap Σ_ci w[co][tap][ci] · xp[ci][· + off(tap)]` for one item.
/// `wp` holds `[co / CB][tap][ci][co % CB]`.
fn planar_forward_portable(g: &Planar, cin: usize, wp: &[f32], xp: &[f32], yp: &mut [f32]) {
    const L: usize = PLANAR_LANES;
    let blocks = yp.len() / (CB * g.out_stride);
    for cb in 0..blocks {
        let wb = &wp[cb * TAPS * cin * CB..][..TAPS * cin * CB];
        for p0 in (0..g.out_stride).step_by(PV * L) {
            let mut acc = [[0.0f32; PV * L]; CB];
            for (t, &off) in g.offs.iter().enumerate() {
                for ci in 0..cin {
                    let xs = &xp[ci * g.in_stride + p0 + off..][..PV * L];
                    let ws = &wb[(t * cin + ci) * CB..][..CB];
                    for (a, &w) in acc.iter_mut().zip(ws) {
                        for (o, &v) in a.iter_mut().zip(xs) {
                            *o += v * w;
                        }
                    }
                }
            }
            for (c, a) in acc.iter().enumerate() {
                yp[(cb * CB + c) * g.out_stride + p0..][..PV * L].copy_from_slice(a);
            }
        }
    }
}

/// `dw[co][tap][ci] += Σ_p gp[co][p] · xp[ci][p + off(tap)]` for one item,
/// with `dw` laid out `[co][tap][ci]` over the rounded channel counts.
fn planar_weight_grad_portable(g: &Planar, (cin, cout): (usize, usize), xp: &[f32], gp: &[f32], dw: &mut [f32]) {
    for (t, &off) in g.offs.iter().enumerate() {
        for co in 0..cout {
            let gs = &gp[co * g.out_stride..][..g.out_stride];
            for ci in 0..cin {
                let xs = &xp[ci * g.in_stride + off..][..g.out_stride];
                let dot: f32 = gs.iter().zip(xs).map(|(a, b)| a * b).sum();
                dw[(co * TAPS + t) * cin + ci] += dot;
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
mod avx {
    use super::{Planar, CB, PLANAR_LANES as L, PV, TAPS};
    use std::arch::x86_64::*;

    pub(super) fn available() -> bool {
        is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma")
    }

    /// Same contract as `planar_forward_portable`.
    ///
    /// # Safety
    /// The CPU must support AVX2 and FMA.
    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn planar_forward(g: &Planar, cin: usize, wp: &[f32], xp: &[f32], yp: &mut [f32]) {
        let blocks = yp.len() / (CB * g.out_stride);
        assert!(xp.len() >= cin * g.in_stride && wp.len() >= blocks * TAPS * cin * CB);
        assert_eq!(g.out_stride % (PV * L), 0);
        let (xp, wp, yp) = (xp.as_ptr(), wp.as_ptr(), yp.as_mut_ptr());
        for cb in 0..blocks {
            let wb = wp.add(cb * TAPS * cin * CB);
            for p0 in (0..g.out_stride).step_by(PV * L) {
                let mut acc = [[_mm256_setzero_ps(); PV]; CB];
                for (t, &off) in g.offs.iter().enumerate() {
                    for ci in 0..cin {
                        let xs = xp.add(ci * g.in_stride + p0 + off);
                        let x = [0, 1, 2].map(|v| _mm256_loadu_ps(xs.add(v * L)));
                        let ws = wb.add((t * cin + ci) * CB);
                        for (c, a) in acc.iter_mut().enumerate() {
                            let w = _mm256_broadcast_ss(&*ws.add(c));
                            for v in 0..PV {
                                a[v] = _mm256_fmadd_ps(x[v], w, a[v]);
                            }
                        }
                    }
                }
                for (c, a) in acc.iter().enumerate() {
                    let out = yp.add((cb * CB + c) * g.out_stride + p0);
                    for (v, &r) in a.iter().enumerate() {
                        _mm256_storeu_ps(out.add(v * L), r);
                    }
                }
            }
        }
    }

    /// Same contract as `planar_weight_grad_portable`; channel counts must
    /// be multiples of `CB`.
    ///
    /// # Safety
    /// The CPU must support AVX2 and FMA.
    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn planar_weight_grad(
        g: &Planar,
        (cin, cout): (usize, usize),
        xp: &[f32],
        gp: &[f32],
        dw: &mut [f32],
    ) {
        assert!(cin % CB == 0 && cout % CB == 0 && g.out_stride % L == 0);
        assert!(xp.len() >= cin * g.in_stride && gp.len() >= cout * g.out_stride);
        assert!(dw.len() >= cout * TAPS * cin);
        let (xp, gp) = (xp.as_ptr(), gp.as_ptr());
        for (t, &off) in g.offs.iter().enumerate() {
            for co0 in (0..cout).step_by(CB) {
                let gr = [0, 1, 2].map(|c| gp.add((co0 + c) * g.out_stride));
                for ci0 in (0..cin).step_by(CB) {
                    let xr = [0, 1, 2].map(|c| xp.add((ci0 + c) * g.in_stride + off));
                    let mut acc = [[_mm256_setzero_ps(); CB]; CB];
                    for p in (0..g.out_stride).step_by(L) {
                        let gv = gr.map(|r| _mm256_loadu_ps(r.add(p)));
                        let xv = xr.map(|r| _mm256_loadu_ps(r.add(p)));
                        for a in 0..CB {
                            for b in 0..CB {
                                acc[a][b] = _mm256_fmadd_ps(gv[a], xv[b], acc[a][b]);
                            }
                        }
                    }
                    for (a, row) in acc.iter().enumerate() {
                        for (b, &r) in row.iter().enumerate() {
                            let mut lanes = [0.0f32; L];
                            _mm256_storeu_ps(lanes.as_mut_ptr(), r);
                            dw[((co0 + a) * TAPS + t) * cin + ci0 + b] += lanes.iter().sum::<f32>();
                        }
                    }
                }
            }
        }
    }
}

fn planar_forward_kernel(g: &Planar, cin: usize, wp: &[f32], xp: &[f32], yp: &mut [f32]) {
    #[cfg(target_arch = "x86_64")]
    if avx::available() {
        // SAFETY: AVX2 and FMA were detected.
        return unsafe { avx::planar_forward(g, cin, wp, xp, yp) };
    }
    planar_forward_portable(g, cin, wp, xp, yp)
}

fn planar_weight_grad_kernel(g: &Planar, ch: (usize, usize), xp: &[f32], gp: &[f32], dw: &mut [f32]) {
    #[cfg(target_arch = "x86_64")]
    if avx::available() {
        // SAFETY: AVX2 and FMA were detected.
        return unsafe { avx::planar_weight_grad(g, ch, xp, gp, dw) };
    }
    planar_weight_grad_portable(g, ch, xp, gp, dw)
}

fn same_size(d: &Dims) -> bool {
    d.stride == 1 && d.pad == 1 && d.inp == d.out
}

const PLANAR_LANES: usize = 8;

fn planar_forward(d: &Dims, w: &[f32], b: &[f32], x: &[f32], y: &mut [f32]) {
    let g = Planar::new(d.inp, PLANAR_LANES);
    let (cin, cout) = (d.cin, d.cout);
    let cout_r = cout.next_multiple_of(CB);
    let mut wp = vec![0.0f32; cout_r * TAPS * cin];
    for co in 0..cout {
        for t in 0..TAPS {
            for ci in 0..cin {
                wp[((co / CB * TAPS + t) * cin + ci) * CB + co % CB] = w[(co * TAPS + t) * cin + ci];
            }
        }
    }
    let mut xp = vec![0.0f32; cin * g.in_stride];
    let mut yp = vec![0.0f32; cout_r * g.out_stride];
    for (xi, yi) in x.chunks_exact(d.in_len()).zip(y.chunks_exact_mut(d.out_len())) {
        g.scatter_input(xi, cin, &mut xp);
        planar_forward_kernel(&g, cin, &wp, &xp, &mut yp);
        g.gather_output(&yp, b, yi);
    }
}

fn planar_weight_grad(d: &Dims, x: &[f32], dy: &[f32], dw: &mut [f32]) {
    let g = Planar::new(d.inp, PLANAR_LANES);
    let (cin, cout) = (d.cin, d.cout);
    let (cin_r, cout_r) = (cin.next_multiple_of(CB), cout.next_multiple_of(CB));
    let mut xp = vec![0.0f32; cin_r * g.in_stride];
    let mut gp = vec![0.0f32; cout_r * g.out_stride];
    let mut acc = vec![0.0f32; cout_r * TAPS * cin_r];
    for (xi, gi) in x.chunks_exact(d.in_len()).zip(dy.chunks_exact(d.out_len())) {
        g.scatter_input(xi, cin, &mut xp);
        g.scatter_output(gi, cout, &mut gp);
        planar_weight_grad_kernel(&g, (cin_r, cout_r), &xp, &gp, &mut acc);
    }
    for co in 0..cout {
        for t in 0..TAPS {
            for ci in 0..cin {
                dw[(co * TAPS + t) * cin + ci] += acc[(co * TAPS + t) * cin_r + ci];
            }
        }
    }
}

/// Writes `y` (all items) including the bias.
pub(super) fn forward(d: &Dims, w: &[f32], b: &[f32], x: &[f32], y: &mut [f32]) {
    if same_size(d) {
        return planar_forward(d, w, b, x, y);
    }
    fn run<const L: usize>(d: &Dims, w: &[f32], b: &[f32], x: &[f32], y: &mut [f32]) {
        let wp = pack_by_input::<L>(w, d);
        let mut bias = [0.0; L];
        bias[..d.cout].copy_from_slice(b);
        forward_l::<L>(d, &wp, &bias, x, y);
    }
    if d.cout <= 8 {
        run::<8>(d, w, b, x, y)
    } else {
        run::<16>(d, w, b, x, y)
    }
}

/// Adds the input gradient into `dx`.
pub(super) fn input_grad(d: &Dims, w: &[f32], dy: &[f32], dx: &mut [f32]) {
    if same_size(d) {
        // Same-size stride-1 case: a forward conv of `dy` with the kernel
        // flipped and its channel axes swapped.
        let (cin, cout) = (d.cin, d.cout);
        let mut wt = vec![0.0f32; w.len()];
        for co in 0..cout {
            for tap in 0..TAPS {
                for ci in 0..cin {
                    wt[(ci * TAPS + TAPS - 1 - tap) * cout + co] = w[(co * TAPS + tap) * cin + ci];
                }
            }
        }
        let t = Dims { cin: cout, cout: cin, ..*d };
        let mut tmp = vec![0.0f32; dx.len()];
        forward(&t, &wt, &vec![0.0; cin], dy, &mut tmp);
        for (o, v) in dx.iter_mut().zip(tmp) {
            *o += v;
        }
        return;
    }
    if d.cin <= 8 {
        input_grad_l::<8>(d, &pack_by_output::<8>(w, d), dy, dx)
    } else {
        input_grad_l::<16>(d, &pack_by_output::<16>(w, d), dy, dx)
    }
}

/// Adds the kernel gradient into `dw` (`[cout][tap][cin]`).
pub(super) fn weight_grad(d: &Dims, x: &[f32], dy: &[f32], dw: &mut [f32]) {
    if same_size(d) {
        return planar_weight_grad(d, x, dy, dw);
    }
    fn run<const L: usize>(d: &Dims, x: &[f32], dy: &[f32], dw: &mut [f32]) {
        let (cin, cout) = (d.cin, d.cout);
        let cin4 = cin.next_multiple_of(4);
        let mut acc = vec![[0.0f32; L]; TAPS * cin4];
        let voxels = d.inp.iter().product::<usize>();
        let mut xpad = vec![0.0f32; voxels * cin4];
        let mut gpad = vec![[0.0f32; L]; d.out.iter().product::<usize>()];
        for (xi, gi) in x.chunks_exact(d.in_len()).zip(dy.chunks_exact(d.out_len())) {
            for (dst, src) in xpad.chunks_exact_mut(cin4).zip(xi.chunks_exact(cin)) {
                dst[..cin].copy_from_slice(src);
            }
            for (dst, src) in gpad.iter_mut().zip(gi.chunks_exact(cout)) {
                dst[..cout].copy_from_slice(src);
            }
            weight_grad_l::<L>(d, &xpad, &gpad, &mut acc);
        }
        for co in 0..cout {
            for tap in 0..TAPS {
                for ci in 0..cin {
                    dw[(co * TAPS + tap) * cin + ci] += acc[tap * cin4 + ci][co];
                }
            }
        }
    }
    if d.cout <= 8 {
        run::<8>(d, x, dy, dw)
    } else {
        run::<16>(d, x, dy, dw)
    }
}
