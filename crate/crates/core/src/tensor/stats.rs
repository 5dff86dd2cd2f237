use super::Tensor;
use crate::scalar::Scalar;

/// Per (sample, channel) mean and standard deviation over spatial positions.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats<T> {
    pub n: usize,
    pub c: usize,
    /// Indexed `n * c + channel`.
    pub mean: Vec<T>,
    pub std: Vec<T>,
}

impl<T: Scalar> ChannelStats<T> {
    #[inline]
    pub fn mean_at(&self, n: usize, c: usize) -> T {
        self.mean[n * self.c + c]
    }

    #[inline]
    pub fn std_at(&self, n: usize, c: usize) -> T {
        self.std[n * self.c + c]
    }
}

/// Population statistics, `std = sqrt(var + eps)`.
pub fn channel_stats<T: Scalar>(t: &Tensor<T>, eps: T) -> ChannelStats<T> {
    let [n, c, h, w] = t.dims();
    let hw = T::from_usize(h * w).unwrap();
    let mut mean = Vec::with_capacity(n * c);
    let mut std = Vec::with_capacity(n * c);
    for i in 0..n {
        for ch in 0..c {
            let p = t.plane(i, ch);
            let mu = p.iter().copied().sum::<T>() / hw;
            let var = p.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / hw;
            mean.push(mu);
            std.push((var + eps).sqrt());
        }
    }
    ChannelStats { n, c, mean, std }
}

/// Vector-Jacobian product of [`channel_stats`] w.r.t. its input.
pub fn channel_stats_backward<T: Scalar>(
    t: &Tensor<T>,
    stats: &ChannelStats<T>,
    g_mean: &[T],
    g_std: &[T],
) -> Tensor<T> {
    let [n, c, h, w] = t.dims();
    let hw = T::from_usize(h * w).unwrap();
    let mut g = Tensor::zeros(t.dims());
    for i in 0..n {
        for ch in 0..c {
            let k = i * c + ch;
            let mu = stats.mean[k];
            let a = g_mean[k] / hw;
            let b = g_std[k] / (hw * stats.std[k]);
            let x = t.plane(i, ch);
            for (gv, &xv) in g.plane_mut(i, ch).iter_mut().zip(x) {
                *gv = a + b * (xv - mu);
            }
        }
    }
    g
}
