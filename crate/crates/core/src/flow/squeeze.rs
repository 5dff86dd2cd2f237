use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Space-to-channel rearrangement: `(N, C, H, W) -> (N, C·f², H/f, W/f)`.
///
/// Output channel `c·f² + dy·f + dx` holds the sub-pixel at offset `(dy, dx)`.
pub fn squeeze<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims();
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::Indivisible { h, w, factor });
    }
    let (oh, ow) = (h / factor, w / factor);
    let ff = factor * factor;
    let mut out = Tensor::zeros([n, c * ff, oh, ow]);
    let dst = out.data_mut();
    let src = x.data();
    for i in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let oc = ch * ff + (y % factor) * factor + xx % factor;
                    dst[((i * c * ff + oc) * oh + y / factor) * ow + xx / factor] =
                        src[((i * c + ch) * h + y) * w + xx];
                }
            }
        }
    }
    Ok(out)
}

/// Exact inverse of [`squeeze`].
pub fn unsqueeze<T: Scalar>(y: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let [n, cy, oh, ow] = y.dims();
    let ff = factor * factor;
    if factor == 0 || cy % ff != 0 {
        return Err(Error::shape(format!(
            "unsqueeze: {cy} channels not divisible by {ff}"
        )));
    }
    let c = cy / ff;
    let (h, w) = (oh * factor, ow * factor);
    let mut out = Tensor::zeros([n, c, h, w]);
    let dst = out.data_mut();
    let src = y.data();
    for i in 0..n {
        for ch in 0..c {
            for yy in 0..h {
                for xx in 0..w {
                    let oc = ch * ff + (yy % factor) * factor + xx % factor;
                    dst[((i * c + ch) * h + yy) * w + xx] =
                        src[((i * cy + oc) * oh + yy / factor) * ow + xx / factor];
                }
            }
        }
    }
    Ok(out)
}
