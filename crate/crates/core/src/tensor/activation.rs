use super::Tensor;
use crate::scalar::Scalar;

/// Pointwise nonlinearity used between conv layers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Identity,
}

impl Activation {
    pub fn apply<T: Scalar>(&self, x: &Tensor<T>) -> Tensor<T> {
        match *self {
            Activation::Relu => x.map(|v| v.max(T::zero())),
            Activation::LeakyRelu(slope) => {
                let s = T::lit(slope);
                x.map(|v| if v > T::zero() { v } else { v * s })
            }
            Activation::Identity => x.clone(),
        }
    }

    pub fn apply_in_place<T: Scalar>(&self, x: &mut Tensor<T>) {
        match *self {
            Activation::Relu => x.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero())),
            Activation::LeakyRelu(slope) => {
                let s = T::lit(slope);
                x.data_mut().iter_mut().for_each(|v| {
                    if *v <= T::zero() {
                        *v *= s
                    }
                })
            }
            Activation::Identity => {}
        }
    }

    /// Scales `grad` in place by the derivative, read off the activation's
    /// output (the sign of the output equals the sign of the input for all
    /// variants with a positive slope).
    pub fn backward_in_place<T: Scalar>(&self, output: &Tensor<T>, grad: &mut Tensor<T>) {
        match *self {
            Activation::Relu => {
                for (g, &y) in grad.data_mut().iter_mut().zip(output.data()) {
                    if y <= T::zero() {
                        *g = T::zero();
                    }
                }
            }
            Activation::LeakyRelu(slope) => {
                let s = T::lit(slope);
                for (g, &y) in grad.data_mut().iter_mut().zip(output.data()) {
                    if y <= T::zero() {
                        *g *= s;
                    }
                }
            }
            Activation::Identity => {}
        }
    }
}
