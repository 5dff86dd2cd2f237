//! Minimal deterministic 4-D tensor math.
//!
//! Everything here is a pure function of its inputs. Layouts are row-major
//! `N -> C -> H -> W`.

mod activation;
pub(crate) mod conv;
pub mod gradcheck;
mod pool;
mod stats;

pub use activation::Activation;
pub use conv::{conv2d, conv2d_backward, Conv2d, ConvGrads};
pub use pool::{max_pool2, max_pool2_backward, upsample2, upsample2_backward};
pub use stats::{channel_stats, channel_stats_backward, ChannelStats};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Variance floor added before every square root of a variance.
pub const VARIANCE_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    dims: [usize; 4],
    data: Vec<T>,
}

impl<T> Tensor<T> {
    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }
}

impl<T: Scalar> Tensor<T> {
    /// Builds a tensor from external data, rejecting NaN/Inf.
    pub fn new(dims: [usize; 4], data: Vec<T>) -> Result<Self> {
        let t = Self::from_raw(dims, data)?;
        if t.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor input".into()));
        }
        Ok(t)
    }

    /// Builds a tensor without the finiteness scan.
    pub fn from_raw(dims: [usize; 4], data: Vec<T>) -> Result<Self> {
        let len: usize = dims.iter().product();
        if len != data.len() {
            return Err(Error::shape(format!(
                "dims {dims:?} need {len} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self::full(dims, T::zero())
    }

    pub fn full(dims: [usize; 4], v: T) -> Self {
        Tensor {
            dims,
            data: vec![v; dims.iter().product()],
        }
    }

    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for n in 0..dims[0] {
            for c in 0..dims[1] {
                for y in 0..dims[2] {
                    for x in 0..dims[3] {
                        data.push(f([n, c, y, x]));
                    }
                }
            }
        }
        Tensor { dims, data }
    }

    /// Standard normal samples scaled by `std`.
    pub fn randn<R: Rng + ?Sized>(dims: [usize; 4], std: f64, rng: &mut R) -> Self {
        let len = dims.iter().product();
        let data = (0..len)
            .map(|_| {
                let v: f64 = StandardNormal.sample(rng);
                T::from_f64_lossy(v * std)
            })
            .collect();
        Tensor { dims, data }
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn rand_uniform<R: Rng + ?Sized>(dims: [usize; 4], lo: f64, hi: f64, rng: &mut R) -> Self {
        let len = dims.iter().product();
        let data = (0..len)
            .map(|_| T::from_f64_lossy(rng.random_range(lo..hi)))
            .collect();
        Tensor { dims, data }
    }

    #[inline]
    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.dims[0]
    }

    #[inline]
    pub fn c(&self) -> usize {
        self.dims[1]
    }

    #[inline]
    pub fn h(&self) -> usize {
        self.dims[2]
    }

    #[inline]
    pub fn w(&self) -> usize {
        self.dims[3]
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }


    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.dims[1] + c) * self.dims[2] + y) * self.dims[3] + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(n, c, y, x)]
    }

    /// Elements of one sample.
    pub fn sample(&self, n: usize) -> &[T] {
        let len = self.dims[1] * self.dims[2] * self.dims[3];
        &self.data[n * len..(n + 1) * len]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [T] {
        let len = self.dims[1] * self.dims[2] * self.dims[3];
        &mut self.data[n * len..(n + 1) * len]
    }

    /// The `H*W` plane of channel `c` in sample `n`.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let hw = self.dims[2] * self.dims[3];
        let start = (n * self.dims[1] + c) * hw;
        &self.data[start..start + hw]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let hw = self.dims[2] * self.dims[3];
        let start = (n * self.dims[1] + c) * hw;
        &mut self.data[start..start + hw]
    }

    /// Copies samples `range` into a new tensor.
    pub fn slice_batch(&self, start: usize, end: usize) -> Tensor<T> {
        let len = self.dims[1] * self.dims[2] * self.dims[3];
        Tensor {
            dims: [end - start, self.dims[1], self.dims[2], self.dims[3]],
            data: self.data[start * len..end * len].to_vec(),
        }
    }

    /// Stacks equally shaped tensors along the batch axis.
    pub fn stack(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("cannot stack zero tensors"))?;
        let [_, c, h, w] = first.dims;
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            if p.dims[1..] != first.dims[1..] {
                return Err(Error::shape(format!(
                    "stack of {:?} with {:?}",
                    first.dims, p.dims
                )));
            }
            n += p.dims[0];
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor {
            dims: [n, c, h, w],
            data,
        })
    }

    pub fn reshape(self, dims: [usize; 4]) -> Result<Tensor<T>> {
        Tensor::from_raw(dims, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        self.expect_dims(other.dims, "zip")?;
        Ok(Tensor {
            dims: self.dims,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: T) -> Tensor<T> {
        self.map(|v| v * s)
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        self.expect_dims(other.dims, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn sum_sq(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    /// Euclidean norm over every element.
    pub fn norm_l2(&self) -> T {
        self.sum_sq().sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Result<T> {
        self.expect_dims(other.dims, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims,
            data: self
                .data
                .iter()
                .map(|&v| U::from_f64_lossy(v.as_f64()))
                .collect(),
        }
    }

    pub fn clamp(&self, lo: T, hi: T) -> Tensor<T> {
        self.map(|v| v.max(lo).min(hi))
    }

    /// Concatenates along channels; batch and spatial dims must agree.
    pub fn concat_channels(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        let [n, ca, h, w] = a.dims;
        let [nb, cb, hb, wb] = b.dims;
        if (n, h, w) != (nb, hb, wb) {
            return Err(Error::shape(format!(
                "concat of {:?} with {:?}",
                a.dims, b.dims
            )));
        }
        let mut data = Vec::with_capacity(a.len() + b.len());
        for i in 0..n {
            data.extend_from_slice(a.sample(i));
            data.extend_from_slice(b.sample(i));
        }
        Ok(Tensor {
            dims: [n, ca + cb, h, w],
            data,
        })
    }

    /// Splits channels into `[0, at)` and `[at, C)`.
    pub fn split_channels(&self, at: usize) -> Result<(Tensor<T>, Tensor<T>)> {
        let [n, c, h, w] = self.dims;
        if at > c {
            return Err(Error::shape(format!("split at {at} of {c} channels")));
        }
        let hw = h * w;
        let mut a = Vec::with_capacity(n * at * hw);
        let mut b = Vec::with_capacity(n * (c - at) * hw);
        for i in 0..n {
            let s = self.sample(i);
            a.extend_from_slice(&s[..at * hw]);
            b.extend_from_slice(&s[at * hw..]);
        }
        Ok((
            Tensor {
                dims: [n, at, h, w],
                data: a,
            },
            Tensor {
                dims: [n, c - at, h, w],
                data: b,
            },
        ))
    }

    pub fn expect_dims(&self, dims: [usize; 4], what: &str) -> Result<()> {
        if self.dims != dims {
            return Err(Error::shape(format!(
                "{what}: expected {dims:?}, got {:?}",
                self.dims
            )));
        }
        Ok(())
    }
}

/// Per-sample Euclidean norms of `a - b`.
pub fn sample_norms<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Vec<T>> {
    a.expect_dims(b.dims(), "sample_norms")?;
    Ok((0..a.n())
        .map(|i| {
            a.sample(i)
                .iter()
                .zip(b.sample(i))
                .map(|(&x, &y)| (x - y) * (x - y))
                .sum::<T>()
                .sqrt()
        })
        .collect())
}

/// Batch mean of per-sample `‖a_i - b_i‖₂`, with its gradient w.r.t. `a`.
///
/// The gradient at a zero difference is taken as zero.
pub fn mean_norm_loss<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    let norms = sample_norms(a, b)?;
    let n = T::from_usize(a.n()).unwrap();
    let mut grad = Tensor::zeros(a.dims());
    for (i, &nrm) in norms.iter().enumerate() {
        if nrm > T::zero() {
            let scale = T::one() / (nrm * n);
            let g = grad.sample_mut(i);
            for ((g, &x), &y) in g.iter_mut().zip(a.sample(i)).zip(b.sample(i)) {
                *g = (x - y) * scale;
            }
        }
    }
    let loss = norms.iter().copied().sum::<T>() / n;
    Ok((loss, grad))
}
