use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// 2x2 max pooling with stride 2. Returns the pooled tensor and the flat
/// index of each window's winner (first maximum on ties).
pub fn max_pool2<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = x.dims();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Indivisible { h, w, factor: 2 });
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    let src = x.data();
    let dst = out.data_mut();
    let mut o = 0;
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * h * w;
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = base + 2 * y * w + 2 * xx;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * y + dy) * w + 2 * xx + dx;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    dst[o] = src[best];
                    arg.push(best);
                    o += 1;
                }
            }
        }
    }
    Ok((out, arg))
}

pub fn max_pool2_backward<T: Scalar>(input_dims: [usize; 4], argmax: &[usize], gy: &Tensor<T>) -> Tensor<T> {
    let mut gx = Tensor::zeros(input_dims);
    let g = gx.data_mut();
    for (&idx, &v) in argmax.iter().zip(gy.data()) {
        g[idx] += v;
    }
    gx
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.dims();
    Tensor::from_fn([n, c, 2 * h, 2 * w], |[i, ch, y, xx]| x.at(i, ch, y / 2, xx / 2))
}

pub fn upsample2_backward<T: Scalar>(gy: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = gy.dims();
    let mut gx = Tensor::zeros([n, c, h / 2, w / 2]);
    for i in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let idx = gx.index(i, ch, y / 2, xx / 2);
                    gx.data_mut()[idx] += gy.at(i, ch, y, xx);
                }
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_picks_max_and_routes_grad() {
        let x = Tensor::<f64>::new([1, 1, 2, 4], vec![1., 5., 2., 0., 3., 4., 8., 7.]).unwrap();
        let (y, arg) = max_pool2(&x).unwrap();
        assert_eq!(y.data(), &[5., 8.]);
        let g = max_pool2_backward(x.dims(), &arg, &Tensor::new([1, 1, 1, 2], vec![1., 2.]).unwrap());
        assert_eq!(g.data(), &[0., 1., 0., 0., 0., 0., 2., 0.]);
    }

    #[test]
    fn upsample_grad_sums_blocks() {
        let g = Tensor::<f64>::full([1, 1, 4, 4], 1.0);
        assert!(upsample2_backward(&g).data().iter().all(|&v| v == 4.0));
    }
}
