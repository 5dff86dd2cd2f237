use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

// Register tile of the accumulation kernel: ROWS output rows by LANES columns.
const ROWS: usize = 8;
const LANES: usize = 16;

/// `out[i][j] += Σ_k a[i][k] * b[k][j]` with `k` accumulated in ascending
/// order for every element, so results match a naive triple loop bit for bit.
pub(crate) fn matmul_acc<T: Scalar>(out: &mut [T], a: &[T], b: &[T], m: usize, kdim: usize, p: usize) {
    debug_assert_eq!(out.len(), m * p);
    debug_assert_eq!(a.len(), m * kdim);
    debug_assert_eq!(b.len(), kdim * p);
    if m == 0 || p == 0 {
        return;
    }
    // Pack B into LANES-wide column panels, contiguous along k.
    let panels = p.div_ceil(LANES);
    let mut packed = vec![T::zero(); panels * kdim * LANES];
    for k in 0..kdim {
        let row = &b[k * p..(k + 1) * p];
        for (jt, chunk) in row.chunks(LANES).enumerate() {
            let dst = (jt * kdim + k) * LANES;
            packed[dst..dst + chunk.len()].copy_from_slice(chunk);
        }
    }
    for jt in 0..panels {
        let panel = &packed[jt * kdim * LANES..(jt + 1) * kdim * LANES];
        let j = jt * LANES;
        let lanes = LANES.min(p - j);
        let mut i = 0;
        while i < m {
            let rows = ROWS.min(m - i);
            match rows {
                8 => tile::<T, 8>(out, a, panel, i, j, lanes, kdim, p),
                7 => tile::<T, 7>(out, a, panel, i, j, lanes, kdim, p),
                6 => tile::<T, 6>(out, a, panel, i, j, lanes, kdim, p),
                5 => tile::<T, 5>(out, a, panel, i, j, lanes, kdim, p),
                4 => tile::<T, 4>(out, a, panel, i, j, lanes, kdim, p),
                3 => tile::<T, 3>(out, a, panel, i, j, lanes, kdim, p),
                2 => tile::<T, 2>(out, a, panel, i, j, lanes, kdim, p),
                _ => tile::<T, 1>(out, a, panel, i, j, lanes, kdim, p),
            }
            i += rows;
        }
    }
}

#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn tile<T: Scalar, const R: usize>(
    out: &mut [T],
    a: &[T],
    panel: &[T],
    i: usize,
    j: usize,
    lanes: usize,
    kdim: usize,
    p: usize,
) {
    let mut acc = [[T::zero(); LANES]; R];
    for (r, row) in acc.iter_mut().enumerate() {
        row[..lanes].copy_from_slice(&out[(i + r) * p + j..(i + r) * p + j + lanes]);
    }
    let arows: [&[T]; R] = std::array::from_fn(|r| &a[(i + r) * kdim..(i + r + 1) * kdim]);
    for (k, bk) in panel.chunks_exact(LANES).enumerate() {
        let bk: &[T; LANES] = bk.try_into().unwrap();
        for r in 0..R {
            let w = arows[r][k];
            let row = &mut acc[r];
            for q in 0..LANES {
                row[q] += w * bk[q];
            }
        }
    }
    for (r, row) in acc.iter().enumerate() {
        out[(i + r) * p + j..(i + r) * p + j + lanes].copy_from_slice(&row[..lanes]);
    }
}

fn transpose<T: Scalar>(src: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut dst = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            dst[c * rows + r] = src[r * cols + c];
        }
    }
    dst
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new(input: [usize; 4], kernel: [usize; 4], stride: usize, pad: usize) -> Result<Self> {
        let [_, cin, h, w] = input;
        let [_, kcin, kh, kw] = kernel;
        if cin != kcin {
            return Err(Error::shape(format!(
                "conv2d: input has {cin} channels, kernel expects {kcin}"
            )));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d: stride must be >= 1"));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::shape(format!(
                "conv2d: {kh}x{kw} kernel does not fit {h}x{w} input with padding {pad}"
            )));
        }
        Ok(Geometry {
            cin,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
        })
    }

    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn im2col<T: Scalar>(&self, x: &[T], cols: &mut [T]) {
        let p = self.p();
        for ci in 0..self.cin {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (ci * self.kh + ky) * self.kw + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let d = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        if iy < 0 || iy >= self.h as isize {
                            d.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, dv) in d.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            *dv = if ix < 0 || ix >= self.w as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im_add<T: Scalar>(&self, cols: &[T], gx: &mut [T]) {
        let p = self.p();
        for ci in 0..self.cin {
            let plane = &mut gx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (ci * self.kh + ky) * self.kw + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..self.ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += src[oy * self.ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation with zero padding.
///
/// `kernel` is `(Cout, Cin, kh, kw)`, `bias` holds `Cout` values in any
/// 4-D layout. Each output starts at its bias and accumulates products in
/// `(cin, ky, kx)` order.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = Geometry::new(input.dims(), kernel.dims(), stride, padding)?;
    let cout = kernel.n();
    if bias.len() != cout {
        return Err(Error::shape(format!(
            "conv2d: bias has {} values for {cout} outputs",
            bias.len()
        )));
    }
    let (k, p) = (g.k(), g.p());
    let n = input.n();
    let mut out = Tensor::zeros([n, cout, g.oh, g.ow]);
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * p]
    };
    for i in 0..n {
        let o = out.sample_mut(i);
        for (co, &b) in bias.data().iter().enumerate() {
            o[co * p..(co + 1) * p].iter_mut().for_each(|v| *v = b);
        }
        let x = input.sample(i);
        let b = if g.is_pointwise() {
            x
        } else {
            g.im2col(x, &mut cols);
            &cols
        };
        matmul_acc(o, kernel.data(), b, cout, k, p);
    }
    Ok(out)
}

/// Gradients of a conv2d call.
#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Full vector-Jacobian product of [`conv2d`].
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: usize,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let mut weight = Tensor::zeros(kernel.dims());
    let mut bias = Tensor::zeros([1, 1, 1, kernel.n()]);
    accumulate_param_grads(input, kernel.dims(), stride, padding, grad_out, &mut weight, &mut bias)?;
    let input = input_grad(input.dims(), kernel, stride, padding, grad_out)?;
    Ok(ConvGrads {
        input,
        weight,
        bias,
    })
}

fn check_grad_out(g: &Geometry, n: usize, cout: usize, grad_out: &Tensor<impl Scalar>) -> Result<()> {
    grad_out.expect_dims([n, cout, g.oh, g.ow], "conv2d grad_out")
}

fn input_grad<T: Scalar>(
    input_dims: [usize; 4],
    kernel: &Tensor<T>,
    stride: usize,
    padding: usize,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let g = Geometry::new(input_dims, kernel.dims(), stride, padding)?;
    let cout = kernel.n();
    let n = input_dims[0];
    check_grad_out(&g, n, cout, grad_out)?;
    let (k, p) = (g.k(), g.p());
    let wt = transpose(kernel.data(), cout, k);
    let mut gx = Tensor::zeros(input_dims);
    let mut gcols = vec![T::zero(); k * p];
    for i in 0..n {
        gcols.iter_mut().for_each(|v| *v = T::zero());
        matmul_acc(&mut gcols, &wt, grad_out.sample(i), k, cout, p);
        if g.is_pointwise() {
            gx.sample_mut(i).copy_from_slice(&gcols);
        } else {
            g.col2im_add(&gcols, gx.sample_mut(i));
        }
    }
    Ok(gx)
}

fn accumulate_param_grads<T: Scalar>(
    input: &Tensor<T>,
    kernel_dims: [usize; 4],
    stride: usize,
    padding: usize,
    grad_out: &Tensor<T>,
    gw: &mut Tensor<T>,
    gb: &mut Tensor<T>,
) -> Result<()> {
    let g = Geometry::new(input.dims(), kernel_dims, stride, padding)?;
    let cout = kernel_dims[0];
    let n = input.n();
    check_grad_out(&g, n, cout, grad_out)?;
    let (k, p) = (g.k(), g.p());
    let mut cols = vec![T::zero(); k * p];
    for i in 0..n {
        let go = grad_out.sample(i);
        for co in 0..cout {
            gb.data_mut()[co] += go[co * p..(co + 1) * p].iter().copied().sum::<T>();
        }
        let x = input.sample(i);
        let cols_t = if g.is_pointwise() {
            transpose(x, k, p)
        } else {
            g.im2col(x, &mut cols);
            transpose(&cols, k, p)
        };
        matmul_acc(gw.data_mut(), go, &cols_t, cout, p, k);
    }
    Ok(())
}

/// A conv layer with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    /// `(Cout, Cin, kh, kw)`.
    pub weight: Tensor<T>,
    /// `(1, 1, 1, Cout)`.
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn zeros(cin: usize, cout: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Conv2d {
            weight: Tensor::zeros([cout, cin, kernel, kernel]),
            bias: Tensor::zeros([1, 1, 1, cout]),
            stride,
            padding,
        }
    }

    /// Normal weights with `std = gain / sqrt(fan_in)`, zero bias.
    pub fn random<R: Rng + ?Sized>(
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let fan_in = (cin * kernel * kernel) as f64;
        Conv2d {
            weight: Tensor::randn([cout, cin, kernel, kernel], gain / fan_in.sqrt(), rng),
            bias: Tensor::zeros([1, 1, 1, cout]),
            stride,
            padding,
        }
    }

    /// Same structure, all parameters zero.
    pub fn zeros_like(&self) -> Self {
        Conv2d {
            weight: Tensor::zeros(self.weight.dims()),
            bias: Tensor::zeros(self.bias.dims()),
            stride: self.stride,
            padding: self.padding,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.c()
    }

    pub fn out_channels(&self) -> usize {
        self.weight.n()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(x, &self.weight, &self.bias, self.stride, self.padding)
    }

    /// Returns the input gradient and adds parameter gradients into `grads`.
    pub fn backward(&self, x: &Tensor<T>, gy: &Tensor<T>, grads: &mut Conv2d<T>) -> Result<Tensor<T>> {
        accumulate_param_grads(
            x,
            self.weight.dims(),
            self.stride,
            self.padding,
            gy,
            &mut grads.weight,
            &mut grads.bias,
        )?;
        self.backward_input(x.dims(), gy)
    }

    /// Input gradient only, for frozen layers.
    pub fn backward_input(&self, x_dims: [usize; 4], gy: &Tensor<T>) -> Result<Tensor<T>> {
        input_grad(x_dims, &self.weight, self.stride, self.padding, gy)
    }
}
