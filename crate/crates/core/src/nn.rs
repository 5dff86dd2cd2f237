//! Plain conv stacks with a hand-written backward pass.

use crate::error::Result;
use crate::params::{join, Parameters};
use crate::scalar::Scalar;
use crate::tensor::{Activation, Conv2d, Tensor};

/// Conv layers with `activation` after every layer but the last.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvStack<T> {
    pub layers: Vec<Conv2d<T>>,
    pub activation: Activation,
}

/// Inputs seen by each layer during a forward pass.
#[derive(Clone, Debug)]
pub struct StackTape<T> {
    inputs: Vec<Tensor<T>>,
}

impl<T> StackTape<T> {
    pub fn input(&self) -> &Tensor<T> {
        &self.inputs[0]
    }
}

impl<T: Scalar> ConvStack<T> {
    pub fn new(layers: Vec<Conv2d<T>>, activation: Activation) -> Self {
        ConvStack { layers, activation }
    }

    pub fn zeros_like(&self) -> Self {
        ConvStack {
            layers: self.layers.iter().map(Conv2d::zeros_like).collect(),
            activation: self.activation,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let last = self.layers.len() - 1;
        let mut h = self.layers[0].forward(x)?;
        for (i, layer) in self.layers.iter().enumerate().skip(1) {
            self.activation.apply_in_place(&mut h);
            h = layer.forward(&h)?;
            debug_assert!(i <= last);
        }
        Ok(h)
    }

    pub fn forward_tape(&self, x: &Tensor<T>) -> Result<(Tensor<T>, StackTape<T>)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = layer.forward(&h)?;
            if i + 1 < self.layers.len() {
                self.activation.apply_in_place(&mut out);
            }
            inputs.push(h);
            h = out;
        }
        Ok((h, StackTape { inputs }))
    }

    /// Returns the input gradient; parameter gradients are added to `grads`.
    pub fn backward(&self, tape: &StackTape<T>, gy: &Tensor<T>, grads: &mut ConvStack<T>) -> Result<Tensor<T>> {
        let mut g = gy.clone();
        for i in (0..self.layers.len()).rev() {
            if i + 1 < self.layers.len() {
                // inputs[i + 1] is this layer's activated output.
                self.activation.backward_in_place(&tape.inputs[i + 1], &mut g);
            }
            g = self.layers[i].backward(&tape.inputs[i], &g, &mut grads.layers[i])?;
        }
        Ok(g)
    }
}

impl<T> Parameters<T> for ConvStack<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.collect(&join(prefix, &format!("conv{i}")), out);
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.collect_mut(&join(prefix, &format!("conv{i}")), out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{dot, grad_check, projection};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn stack(rng: &mut ChaCha8Rng) -> ConvStack<f64> {
        let mut l0 = Conv2d::random(2, 4, 3, 1, 1, 1.0, rng);
        l0.bias = Tensor::randn([1, 1, 1, 4], 0.1, rng);
        let l1 = Conv2d::random(4, 3, 1, 1, 0, 1.0, rng);
        ConvStack::new(vec![l0, l1], Activation::LeakyRelu(0.2))
    }

    #[test]
    fn tape_forward_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = stack(&mut rng);
        let x = Tensor::randn([2, 2, 5, 5], 1.0, &mut rng);
        assert_eq!(s.forward(&x).unwrap(), s.forward_tape(&x).unwrap().0);
    }

    #[test]
    fn stack_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = stack(&mut rng);
        let x = Tensor::randn([1, 2, 4, 4], 1.0, &mut rng);
        let r = projection::<f64>([1, 3, 4, 4], 5);
        let rebuild = |a: &[Tensor<f64>]| {
            let mut s2 = s.clone();
            s2.layers[0].weight = a[1].clone();
            s2.layers[1].weight = a[2].clone();
            s2.layers[0].bias = a[3].clone();
            s2
        };
        let args = vec![
            x,
            s.layers[0].weight.clone(),
            s.layers[1].weight.clone(),
            s.layers[0].bias.clone(),
        ];
        let err = grad_check(
            |a| Ok(dot(&rebuild(a).forward(&a[0])?, &r)),
            |a| {
                let s2 = rebuild(a);
                let (_, tape) = s2.forward_tape(&a[0])?;
                let mut g = s2.zeros_like();
                let gx = s2.backward(&tape, &r, &mut g)?;
                Ok(vec![gx, g.layers[0].weight.clone(), g.layers[1].weight.clone(), g.layers[0].bias.clone()])
            },
            &args,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }
}
