use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{ConvStack, StackTape};
use crate::params::Parameters;
use crate::scalar::Scalar;
use crate::tensor::{Activation, Conv2d, Tensor};

/// Additive coupling: `y = concat(x_a, x_b + NN(x_a))` over channel halves.
///
/// `NN` is conv3x3 → ReLU → conv1x1 → ReLU → conv3x3, mapping `C/2`
/// channels to `C/2`. The last layer starts at zero, so a fresh coupling is
/// the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct Coupling<T> {
    pub net: ConvStack<T>,
}

fn check_even(c: usize) -> Result<usize> {
    if !c.is_multiple_of(2) {
        Err(Error::OddChannels(c))
    } else {
        Ok(c / 2)
    }
}

impl<T: Scalar> Coupling<T> {
    pub fn new<R: Rng + ?Sized>(channels: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        let half = check_even(channels)?;
        let net = ConvStack::new(
            vec![
                Conv2d::random(half, hidden, 3, 1, 1, 2f64.sqrt(), rng),
                Conv2d::random(hidden, hidden, 1, 1, 0, 2f64.sqrt(), rng),
                Conv2d::zeros(hidden, half, 3, 1, 1),
            ],
            Activation::Relu,
        );
        Ok(Coupling { net })
    }

    pub fn zeros_like(&self) -> Self {
        Coupling {
            net: self.net.zeros_like(),
        }
    }

    fn halves(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let half = check_even(x.c())?;
        if half != self.net.layers[0].in_channels() {
            return Err(Error::shape(format!(
                "coupling: built for {} channels, input has {}",
                2 * self.net.layers[0].in_channels(),
                x.c()
            )));
        }
        x.split_channels(half)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (xa, xb) = self.halves(x)?;
        let yb = xb.add(&self.net.forward(&xa)?)?;
        Tensor::concat_channels(&xa, &yb)
    }

    pub fn inverse(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        let (ya, yb) = self.halves(y)?;
        let xb = yb.sub(&self.net.forward(&ya)?)?;
        Tensor::concat_channels(&ya, &xb)
    }

    pub fn forward_tape(&self, x: &Tensor<T>) -> Result<(Tensor<T>, StackTape<T>)> {
        let (xa, xb) = self.halves(x)?;
        let (shift, tape) = self.net.forward_tape(&xa)?;
        Ok((Tensor::concat_channels(&xa, &xb.add(&shift)?)?, tape))
    }

    pub fn inverse_tape(&self, y: &Tensor<T>) -> Result<(Tensor<T>, StackTape<T>)> {
        let (ya, yb) = self.halves(y)?;
        let (shift, tape) = self.net.forward_tape(&ya)?;
        Ok((Tensor::concat_channels(&ya, &yb.sub(&shift)?)?, tape))
    }

    pub fn backward(&self, tape: &StackTape<T>, gy: &Tensor<T>, grads: &mut Coupling<T>) -> Result<Tensor<T>> {
        let (ga, gb) = gy.split_channels(gy.c() / 2)?;
        let through = self.net.backward(tape, &gb, &mut grads.net)?;
        Tensor::concat_channels(&ga.add(&through)?, &gb)
    }

    pub fn inverse_backward(&self, tape: &StackTape<T>, gx: &Tensor<T>, grads: &mut Coupling<T>) -> Result<Tensor<T>> {
        let (ga, gb) = gx.split_channels(gx.c() / 2)?;
        let through = self.net.backward(tape, &gb.scale(-T::one()), &mut grads.net)?;
        Tensor::concat_channels(&ga.add(&through)?, &gb)
    }
}

impl<T> Parameters<T> for Coupling<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.net.collect(prefix, out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.net.collect_mut(prefix, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_init_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = Coupling::<f32>::new(4, 8, &mut rng).unwrap();
        let x = Tensor::randn([1, 4, 8, 8], 1.0, &mut rng);
        assert_eq!(c.forward(&x).unwrap(), x);
        assert_eq!(c.inverse(&x).unwrap(), x);
    }

    #[test]
    fn odd_channels_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(Coupling::<f32>::new(3, 8, &mut rng), Err(Error::OddChannels(3))));
        let c = Coupling::<f32>::new(4, 8, &mut rng).unwrap();
        assert!(matches!(c.forward(&Tensor::zeros([1, 5, 2, 2])), Err(Error::OddChannels(5))));
    }
}
