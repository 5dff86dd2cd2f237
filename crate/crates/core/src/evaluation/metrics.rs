//! Image similarity metrics. All computation happens in f64.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
const DYNAMIC_RANGE: f64 = 1.0;

/// Mean squared error over every element.
pub fn l2_metric<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    a.expect_dims(b.dims(), "l2_metric")?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

/// Largest absolute elementwise difference.
pub fn linf_metric<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    Ok(a.max_abs_diff(b)?.as_f64())
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut g = [0.0; SSIM_WINDOW];
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Separable "valid" filtering of an `h×w` plane.
fn filter_valid(p: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = g.iter().enumerate().map(|(k, &gk)| gk * p[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = g.iter().enumerate().map(|(k, &gk)| gk * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over samples, channels and window positions, with an 11×11
/// Gaussian window (σ = 1.5), K1 = 0.01, K2 = 0.03 and dynamic range 1.
pub fn ssim_metric<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    a.expect_dims(b.dims(), "ssim_metric")?;
    let [n, c, h, w] = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::TooSmall {
            h,
            w,
            window: SSIM_WINDOW,
        });
    }
    let g = gaussian_taps();
    let c1 = (K1 * DYNAMIC_RANGE).powi(2);
    let c2 = (K2 * DYNAMIC_RANGE).powi(2);
    let (mut total, mut count) = (0.0, 0usize);
    for i in 0..n {
        for ch in 0..c {
            let pa: Vec<f64> = a.plane(i, ch).iter().map(|v| v.as_f64()).collect();
            let pb: Vec<f64> = b.plane(i, ch).iter().map(|v| v.as_f64()).collect();
            let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
            let mu_a = filter_valid(&pa, h, w, &g);
            let mu_b = filter_valid(&pb, h, w, &g);
            let aa = filter_valid(&prod(&pa, &pa), h, w, &g);
            let bb = filter_valid(&prod(&pb, &pb), h, w, &g);
            let ab = filter_valid(&prod(&pa, &pb), h, w, &g);
            for k in 0..mu_a.len() {
                let (ma, mb) = (mu_a[k], mu_b[k]);
                let va = aa[k] - ma * ma;
                let vb = bb[k] - mb * mb;
                let cov = ab[k] - ma * mb;
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taps_are_normalized_and_symmetric() {
        let g = gaussian_taps();
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..SSIM_WINDOW {
            assert_eq!(g[i], g[SSIM_WINDOW - 1 - i]);
        }
    }

    #[test]
    fn too_small_is_rejected() {
        let t = Tensor::<f64>::zeros([1, 1, 10, 32]);
        assert!(matches!(ssim_metric(&t, &t), Err(Error::TooSmall { .. })));
    }
}
