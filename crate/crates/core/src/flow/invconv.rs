use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::params::{join, Parameters};
use crate::scalar::Scalar;
use crate::tensor::conv::matmul_acc;
use crate::tensor::Tensor;

/// Smallest admissible |det M|.
pub const MIN_DET: f64 = 1e-6;

/// Learnable channel mixing `y_ij = M x_ij` at every pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct InvConv<T> {
    /// `(1, 1, C, C)`, row-major.
    pub matrix: Tensor<T>,
}

fn transpose<T: Copy>(m: &[T], c: usize) -> Vec<T> {
    (0..c * c).map(|k| m[(k % c) * c + k / c]).collect()
}

impl<T: Scalar> InvConv<T> {
    pub fn identity(c: usize) -> Self {
        InvConv {
            matrix: Tensor::from_fn([1, 1, c, c], |[_, _, i, j]| if i == j { T::one() } else { T::zero() }),
        }
    }

    /// Uniformly random orthogonal matrix (QR of a Gaussian matrix with the
    /// sign of `R`'s diagonal folded into `Q`).
    pub fn random_orthogonal<R: Rng + ?Sized>(c: usize, rng: &mut R) -> Self {
        let g = DMatrix::<f64>::from_fn(c, c, |_, _| StandardNormal.sample(rng));
        let qr = g.qr();
        let (mut q, r) = (qr.q(), qr.r());
        for j in 0..c {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        InvConv {
            matrix: Tensor::from_fn([1, 1, c, c], |[_, _, i, j]| T::from_f64_lossy(q[(i, j)])),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let c = rows.len();
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::shape("invconv matrix must be square"));
        }
        Ok(InvConv {
            matrix: Tensor::from_fn([1, 1, c, c], |[_, _, i, j]| T::from_f64_lossy(rows[i][j])),
        })
    }

    pub fn channels(&self) -> usize {
        self.matrix.h()
    }

    pub fn zeros_like(&self) -> Self {
        InvConv {
            matrix: Tensor::zeros(self.matrix.dims()),
        }
    }

    fn as_na(&self) -> DMatrix<f64> {
        let c = self.channels();
        DMatrix::from_fn(c, c, |i, j| self.matrix.data()[i * c + j].as_f64())
    }

    pub fn determinant(&self) -> f64 {
        self.as_na().lu().determinant()
    }

    pub fn check_invertible(&self) -> Result<()> {
        let det = self.determinant();
        if !(det.abs() >= MIN_DET) {
            return Err(Error::SingularMatrix {
                det,
                block: None,
                step: None,
            });
        }
        Ok(())
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        if x.c() != self.channels() {
            return Err(Error::shape(format!(
                "invconv: {0}x{0} matrix, input has {1} channels",
                self.channels(),
                x.c()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        let c = self.channels();
        let p = x.h() * x.w();
        let mut y = Tensor::zeros(x.dims());
        for i in 0..x.n() {
            matmul_acc(y.sample_mut(i), self.matrix.data(), x.sample(i), c, c, p);
        }
        Ok(y)
    }

    /// Solves `M x = y` (or `Mᵀ x = y`) per pixel with one LU factorisation.
    fn solve(&self, y: &Tensor<T>, transposed: bool) -> Result<Tensor<T>> {
        self.check(y)?;
        let c = self.channels();
        let p = y.h() * y.w();
        let m = if transposed { self.as_na().transpose() } else { self.as_na() };
        let lu = m.lu();
        let det = lu.determinant();
        if !(det.abs() >= MIN_DET) {
            return Err(Error::SingularMatrix {
                det,
                block: None,
                step: None,
            });
        }
        let mut x = Tensor::zeros(y.dims());
        for i in 0..y.n() {
            let s = y.sample(i);
            let rhs = DMatrix::from_fn(c, p, |r, q| s[r * p + q].as_f64());
            let sol = lu
                .solve(&rhs)
                .ok_or(Error::SingularMatrix {
                    det,
                    block: None,
                    step: None,
                })?;
            let dst = x.sample_mut(i);
            for r in 0..c {
                for q in 0..p {
                    dst[r * p + q] = T::from_f64_lossy(sol[(r, q)]);
                }
            }
        }
        Ok(x)
    }

    /// `x = M⁻¹ y` by LU solve.
    pub fn inverse(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        self.solve(y, false)
    }

    fn accumulate_outer(grads: &mut InvConv<T>, g: &Tensor<T>, x: &Tensor<T>, sign: T) {
        let c = g.c();
        let p = g.h() * g.w();
        let mut acc = vec![T::zero(); c * c];
        for i in 0..g.n() {
            let xs = x.sample(i);
            let xt: Vec<T> = (0..p * c).map(|k| xs[(k % c) * p + k / c]).collect();
            matmul_acc(&mut acc, g.sample(i), &xt, c, p, c);
        }
        for (d, a) in grads.matrix.data_mut().iter_mut().zip(acc) {
            *d += sign * a;
        }
    }

    /// Backward of `forward` given its input.
    pub fn backward(&self, x: &Tensor<T>, gy: &Tensor<T>, grads: &mut InvConv<T>) -> Tensor<T> {
        let c = self.channels();
        let p = x.h() * x.w();
        let mt = transpose(self.matrix.data(), c);
        let mut gx = Tensor::zeros(x.dims());
        for i in 0..x.n() {
            matmul_acc(gx.sample_mut(i), &mt, gy.sample(i), c, c, p);
        }
        Self::accumulate_outer(grads, gy, x, T::one());
        gx
    }

    /// Backward of `inverse` given its output `x`.
    pub fn inverse_backward(&self, x: &Tensor<T>, gx: &Tensor<T>, grads: &mut InvConv<T>) -> Result<Tensor<T>> {
        let gy = self.solve(gx, true)?;
        Self::accumulate_outer(grads, &gy, x, -T::one());
        Ok(gy)
    }
}

impl<T> Parameters<T> for InvConv<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        out.push((join(prefix, "matrix"), &self.matrix));
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        out.push((join(prefix, "matrix"), &mut self.matrix));
    }
}
