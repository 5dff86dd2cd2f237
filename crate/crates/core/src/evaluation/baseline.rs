//! A small pooling autoencoder that loses spatial detail by construction.
//! It is the leaky reference the flow is compared against.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::params::{join, Parameters};
use crate::pipeline::{Adam, Corpus};
use crate::scalar::Scalar;
use crate::tensor::{max_pool2, max_pool2_backward, upsample2, upsample2_backward, Activation, Conv2d, Tensor};
use crate::transfer::{adain, TransferMode};

pub const BASELINE_WIDTHS: [usize; 2] = [16, 32];

/// Encoder: conv, pool, conv, pool, conv (bottleneck). Decoder: upsample,
/// conv, upsample, conv, conv. ReLU after every conv except the bottleneck
/// and the output.
#[derive(Clone, Debug, PartialEq)]
pub struct LossyBaseline<T> {
    pub enc: [Conv2d<T>; 3],
    pub dec: [Conv2d<T>; 3],
}

struct EncodeTape<T> {
    x: Tensor<T>,
    h0: Tensor<T>,
    a0: Vec<usize>,
    p0: Tensor<T>,
    h1: Tensor<T>,
    a1: Vec<usize>,
    p1: Tensor<T>,
}

struct DecodeTape<T> {
    u0: Tensor<T>,
    h0: Tensor<T>,
    u1: Tensor<T>,
    h1: Tensor<T>,
}

fn relu<T: Scalar>(mut t: Tensor<T>) -> Tensor<T> {
    Activation::Relu.apply_in_place(&mut t);
    t
}

impl<T: Scalar> LossyBaseline<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let [w0, w1] = BASELINE_WIDTHS;
        let g = 2f64.sqrt();
        LossyBaseline {
            enc: [
                Conv2d::random(3, w0, 3, 1, 1, g, rng),
                Conv2d::random(w0, w1, 3, 1, 1, g, rng),
                Conv2d::random(w1, w1, 3, 1, 1, 1.0, rng),
            ],
            dec: [
                Conv2d::random(w1, w1, 3, 1, 1, g, rng),
                Conv2d::random(w1, w0, 3, 1, 1, g, rng),
                Conv2d::random(w0, 3, 3, 1, 1, 1.0, rng),
            ],
        }
    }

    pub fn zeros_like(&self) -> Self {
        LossyBaseline {
            enc: self.enc.each_ref().map(Conv2d::zeros_like),
            dec: self.dec.each_ref().map(Conv2d::zeros_like),
        }
    }

    /// Side lengths must be multiples of this.
    pub fn divisor(&self) -> usize {
        4
    }

    fn encode_tape(&self, x: &Tensor<T>) -> Result<(Tensor<T>, EncodeTape<T>)> {
        let h0 = relu(self.enc[0].forward(x)?);
        let (p0, a0) = max_pool2(&h0)?;
        let h1 = relu(self.enc[1].forward(&p0)?);
        let (p1, a1) = max_pool2(&h1)?;
        let z = self.enc[2].forward(&p1)?;
        Ok((
            z,
            EncodeTape {
                x: x.clone(),
                h0,
                a0,
                p0,
                h1,
                a1,
                p1,
            },
        ))
    }

    fn decode_tape(&self, z: &Tensor<T>) -> Result<(Tensor<T>, DecodeTape<T>)> {
        let u0 = upsample2(z);
        let h0 = relu(self.dec[0].forward(&u0)?);
        let u1 = upsample2(&h0);
        let h1 = relu(self.dec[1].forward(&u1)?);
        let y = self.dec[2].forward(&h1)?;
        Ok((y, DecodeTape { u0, h0, u1, h1 }))
    }

    pub fn encode(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.encode_tape(x)?.0)
    }

    pub fn decode(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.decode_tape(z)?.0)
    }

    pub fn reconstruct(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.decode(&self.encode(x)?)
    }

    /// AdaIN at the bottleneck.
    pub fn stylize(&self, content: &Tensor<T>, style: &Tensor<T>, mode: TransferMode) -> Result<Tensor<T>> {
        let zc = self.encode(content)?;
        let zs = self.encode(style)?;
        self.decode(&adain(&zc, &zs, mode)?)
    }

    /// Mean squared reconstruction error and its parameter gradients.
    pub fn reconstruction_grad(&self, x: &Tensor<T>) -> Result<(f64, LossyBaseline<T>)> {
        let (z, et) = self.encode_tape(x)?;
        let (y, dt) = self.decode_tape(&z)?;
        let scale = T::lit(2.0 / x.len() as f64);
        let gy = y.sub(x)?.scale(scale);
        let loss = y.sub(x)?.sum_sq().as_f64() / x.len() as f64;

        let mut g = self.zeros_like();
        let mut gh = self.dec[2].backward(&dt.h1, &gy, &mut g.dec[2])?;
        Activation::Relu.backward_in_place(&dt.h1, &mut gh);
        let gu1 = self.dec[1].backward(&dt.u1, &gh, &mut g.dec[1])?;
        let mut gh = upsample2_backward(&gu1);
        Activation::Relu.backward_in_place(&dt.h0, &mut gh);
        let gu0 = self.dec[0].backward(&dt.u0, &gh, &mut g.dec[0])?;
        let gz = upsample2_backward(&gu0);

        let gp1 = self.enc[2].backward(&et.p1, &gz, &mut g.enc[2])?;
        let mut gh = max_pool2_backward(et.h1.dims(), &et.a1, &gp1);
        Activation::Relu.backward_in_place(&et.h1, &mut gh);
        let gp0 = self.enc[1].backward(&et.p0, &gh, &mut g.enc[1])?;
        let mut gh = max_pool2_backward(et.h0.dims(), &et.a0, &gp0);
        Activation::Relu.backward_in_place(&et.h0, &mut gh);
        self.enc[0].backward(&et.x, &gh, &mut g.enc[0])?;
        Ok((loss, g))
    }
}

impl<T> Parameters<T> for LossyBaseline<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        for (i, l) in self.enc.iter().enumerate() {
            l.collect(&join(prefix, &format!("enc{i}")), out);
        }
        for (i, l) in self.dec.iter().enumerate() {
            l.collect(&join(prefix, &format!("dec{i}")), out);
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        for (i, l) in self.enc.iter_mut().enumerate() {
            l.collect_mut(&join(prefix, &format!("enc{i}")), out);
        }
        for (i, l) in self.dec.iter_mut().enumerate() {
            l.collect_mut(&join(prefix, &format!("dec{i}")), out);
        }
    }
}

pub const BASELINE_LR: f64 = 1e-3;
pub const BASELINE_BATCH: usize = 4;

/// Trains on reconstruction over every corpus image (content and style).
/// Returns the model and the per-step loss.
pub fn train_baseline<T: Scalar>(corpus: &Corpus<T>, steps: usize, seed: u64) -> Result<(LossyBaseline<T>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = LossyBaseline::new(&mut rng);
    let images: Vec<&Tensor<T>> = corpus.content.iter().chain(&corpus.style).collect();
    let mut opt = Adam::new(BASELINE_LR);
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let batch: Vec<&Tensor<T>> = (0..BASELINE_BATCH.min(images.len()))
            .map(|_| images[rng.random_range(0..images.len())])
            .collect();
        let x = Tensor::stack(&batch)?;
        let (loss, g) = model.reconstruction_grad(&x)?;
        if !loss.is_finite() {
            return Err(crate::Error::Diverged {
                step,
                msg: format!("baseline loss is {loss}"),
            });
        }
        opt.step(&mut model, &g)?;
        losses.push(loss);
    }
    Ok((model, losses))
}
