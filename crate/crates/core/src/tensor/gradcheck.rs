//! Central-difference verification of analytic gradients.

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Max over coordinates of `|analytic - fd| / max(1, |fd|)`, where `fd` is
/// the central difference `(f(x + h) - f(x - h)) / 2h` evaluated in f64.
///
/// `value` maps the argument list to a scalar; `gradient` returns one
/// gradient tensor per argument.
pub fn grad_check<T, F, G>(value: F, gradient: G, args: &[Tensor<T>], h: f64) -> Result<f64>
where
    T: Scalar,
    F: Fn(&[Tensor<T>]) -> Result<T>,
    G: Fn(&[Tensor<T>]) -> Result<Vec<Tensor<T>>>,
{
    grad_check_strided(value, gradient, args, h, 1)
}

/// Like [`grad_check`] but only probes every `stride`-th coordinate of each
/// argument (always including the first), for large parameter tensors.
pub fn grad_check_strided<T, F, G>(
    value: F,
    gradient: G,
    args: &[Tensor<T>],
    h: f64,
    stride: usize,
) -> Result<f64>
where
    T: Scalar,
    F: Fn(&[Tensor<T>]) -> Result<T>,
    G: Fn(&[Tensor<T>]) -> Result<Vec<Tensor<T>>>,
{
    assert!(h > 0.0, "step must be positive");
    let grads = gradient(args)?;
    if grads.len() != args.len() {
        return Err(Error::shape(format!(
            "gradient returned {} tensors for {} arguments",
            grads.len(),
            args.len()
        )));
    }
    for (g, a) in grads.iter().zip(args) {
        g.expect_dims(a.dims(), "gradient")?;
        if !g.all_finite() {
            return Err(Error::NonFinite("analytic gradient".into()));
        }
    }
    let mut work: Vec<Tensor<T>> = args.to_vec();
    let mut worst = 0.0f64;
    for (ai, grad) in grads.iter().enumerate() {
        for idx in (0..args[ai].len()).step_by(stride.max(1)) {
            let orig = args[ai].data()[idx];
            work[ai].data_mut()[idx] = T::from_f64_lossy(orig.as_f64() + h);
            let plus = value(&work)?.as_f64();
            work[ai].data_mut()[idx] = T::from_f64_lossy(orig.as_f64() - h);
            let minus = value(&work)?.as_f64();
            work[ai].data_mut()[idx] = orig;
            let fd = (plus - minus) / (2.0 * h);
            if !fd.is_finite() {
                return Err(Error::NonFinite("finite difference".into()));
            }
            let err = (grad.data()[idx].as_f64() - fd).abs() / fd.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// Checks a reduced-precision analytic gradient against central
/// differences of an `f64` evaluation of the same function, taken at the
/// arguments widened to `f64`.
pub fn grad_check_mixed<T, F, G>(value64: F, gradient: G, args: &[Tensor<T>], h: f64, stride: usize) -> Result<f64>
where
    T: Scalar,
    F: Fn(&[Tensor<f64>]) -> Result<f64>,
    G: Fn(&[Tensor<T>]) -> Result<Vec<Tensor<T>>>,
{
    let wide: Vec<Tensor<f64>> = args.iter().map(Tensor::cast).collect();
    let grads: Vec<Tensor<T>> = gradient(args)?;
    grad_check_strided(
        value64,
        |_: &[Tensor<f64>]| Ok(grads.iter().map(Tensor::cast).collect()),
        &wide,
        h,
        stride,
    )
}

/// Fixed pseudo-random projection weights for turning a tensor-valued op
/// into a scalar test function `<y, r>`.
pub fn projection<T: Scalar>(dims: [usize; 4], seed: u64) -> Tensor<T> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Tensor::randn(dims, 1.0, &mut rng)
}

pub fn dot<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> T {
    a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::<f64>::full([1, 1, 2, 3], 1.0);
        let err = grad_check(
            |a| Ok(a[0].sum_sq()),
            |a| Ok(vec![a[0].scale(2.0)]),
            &[x],
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn linear_map_is_exact() {
        // f(x) = <r, M x> has gradient M^T r.
        let m = [[1.0, 2.0], [-3.0, 0.5]];
        let r = [0.25, -1.0];
        let x = Tensor::<f64>::new([1, 1, 1, 2], vec![0.3, -0.7]).unwrap();
        let f = |a: &[Tensor<f64>]| {
            let d = a[0].data();
            Ok((0..2).map(|i| r[i] * (m[i][0] * d[0] + m[i][1] * d[1])).sum())
        };
        let g = |_: &[Tensor<f64>]| {
            let gr = (0..2).map(|j| (0..2).map(|i| m[i][j] * r[i]).sum()).collect();
            Ok(vec![Tensor::new([1, 1, 1, 2], gr)?])
        };
        assert!(grad_check(f, g, &[x], 1e-3).unwrap() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_is_error() {
        let x = Tensor::<f64>::full([1, 1, 1, 1], 1.0);
        let r = grad_check(
            |a| Ok(a[0].sum()),
            |_| Ok(vec![Tensor::from_raw([1, 1, 1, 1], vec![f64::NAN]).unwrap()]),
            &[x],
            1e-4,
        );
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
