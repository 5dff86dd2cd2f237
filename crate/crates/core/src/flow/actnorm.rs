use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{join, Parameters};
use crate::scalar::Scalar;
use crate::tensor::{channel_stats, Tensor};

/// Smallest admissible |scale| for an invertible actnorm.
pub const MIN_SCALE: f64 = 1e-8;

/// Per-channel affine map `y = w ⊙ x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct ActNorm<T> {
    /// `(1, 1, 1, C)`
    pub scale: Tensor<T>,
    /// `(1, 1, 1, C)`
    pub bias: Tensor<T>,
    pub initialized: bool,
}

impl<T: Scalar> ActNorm<T> {
    /// Identity parameters, awaiting data-dependent init.
    pub fn new(channels: usize) -> Self {
        ActNorm {
            scale: Tensor::full([1, 1, 1, channels], T::one()),
            bias: Tensor::zeros([1, 1, 1, channels]),
            initialized: false,
        }
    }

    /// Random scales in `[0.5, 1.5)` (random sign) and small biases; for tests.
    pub fn random<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        let scale = Tensor::from_fn([1, 1, 1, channels], |_| {
            let s = rng.random_range(0.5..1.5);
            T::lit(if rng.random_bool(0.5) { s } else { -s })
        });
        ActNorm {
            scale,
            bias: Tensor::randn([1, 1, 1, channels], 0.1, rng),
            initialized: true,
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    pub fn zeros_like(&self) -> Self {
        ActNorm {
            scale: Tensor::zeros(self.scale.dims()),
            bias: Tensor::zeros(self.bias.dims()),
            initialized: self.initialized,
        }
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        if x.c() != self.channels() {
            return Err(Error::shape(format!(
                "actnorm: {} channels, input has {}",
                self.channels(),
                x.c()
            )));
        }
        Ok(())
    }

    /// Sets scale and bias so `x` maps to zero mean and unit std per channel
    /// (statistics pooled over batch and space).
    pub fn init_from(&mut self, x: &Tensor<T>) -> Result<()> {
        self.check(x)?;
        let [n, c, h, w] = x.dims();
        let pooled = Tensor::from_fn([1, c, n * h, w], |[_, ch, y, xx]| x.at(y / h, ch, y % h, xx));
        let stats = channel_stats(&pooled, T::zero());
        for ch in 0..c {
            let inv = T::one() / (stats.std[ch] + T::lit(1e-6));
            self.scale.data_mut()[ch] = inv;
            self.bias.data_mut()[ch] = -stats.mean[ch] * inv;
        }
        self.initialized = true;
        Ok(())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        let mut y = x.clone();
        for i in 0..x.n() {
            for ch in 0..x.c() {
                let (w, b) = (self.scale.data()[ch], self.bias.data()[ch]);
                y.plane_mut(i, ch).iter_mut().for_each(|v| *v = w * *v + b);
            }
        }
        Ok(y)
    }

    pub fn check_invertible(&self) -> Result<()> {
        for (ch, &w) in self.scale.data().iter().enumerate() {
            if !(w.abs().as_f64() >= MIN_SCALE) {
                return Err(Error::SingularScale {
                    channel: ch,
                    value: w.as_f64(),
                });
            }
        }
        Ok(())
    }

    pub fn inverse(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(y)?;
        self.check_invertible()?;
        let mut x = y.clone();
        for i in 0..y.n() {
            for ch in 0..y.c() {
                let (w, b) = (self.scale.data()[ch], self.bias.data()[ch]);
                x.plane_mut(i, ch).iter_mut().for_each(|v| *v = (*v - b) / w);
            }
        }
        Ok(x)
    }

    /// Backward of `forward` given its input `x`.
    pub fn backward(&self, x: &Tensor<T>, gy: &Tensor<T>, grads: &mut ActNorm<T>) -> Tensor<T> {
        let mut gx = gy.clone();
        for i in 0..x.n() {
            for ch in 0..x.c() {
                let w = self.scale.data()[ch];
                let g = gy.plane(i, ch);
                let (gw, gb) = g
                    .iter()
                    .zip(x.plane(i, ch))
                    .fold((T::zero(), T::zero()), |(a, b), (&g, &x)| (a + g * x, b + g));
                grads.scale.data_mut()[ch] += gw;
                grads.bias.data_mut()[ch] += gb;
                gx.plane_mut(i, ch).iter_mut().for_each(|v| *v *= w);
            }
        }
        gx
    }

    /// Backward of `inverse` given its output `x`.
    pub fn inverse_backward(&self, x: &Tensor<T>, gx: &Tensor<T>, grads: &mut ActNorm<T>) -> Tensor<T> {
        let mut gy = gx.clone();
        for i in 0..x.n() {
            for ch in 0..x.c() {
                let w = self.scale.data()[ch];
                let g = gy.plane_mut(i, ch);
                g.iter_mut().for_each(|v| *v /= w);
                let (gw, gb) = g
                    .iter()
                    .zip(x.plane(i, ch))
                    .fold((T::zero(), T::zero()), |(a, b), (&g, &x)| (a + g * x, b + g));
                grads.scale.data_mut()[ch] -= gw;
                grads.bias.data_mut()[ch] -= gb;
            }
        }
        gy
    }
}

impl<T> Parameters<T> for ActNorm<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        out.push((join(prefix, "scale"), &self.scale));
        out.push((join(prefix, "bias"), &self.bias));
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        out.push((join(prefix, "scale"), &mut self.scale));
        out.push((join(prefix, "bias"), &mut self.bias));
    }
}
