//! Hiding the content latent inside the stylized image.
//!
//! The encoder sees the cover `I_t` concatenated with the latent laid out on
//! the image grid and predicts a residual, so `I_e = I_t + r`. The decoder
//! recovers the grid from `I_e` alone.

use rand::Rng;

use crate::error::{Error, Result};
use crate::flow::{squeeze, unsqueeze, FlowConfig};
use crate::nn::{ConvStack, StackTape};
use crate::params::{join, Parameters};
use crate::scalar::Scalar;
use crate::tensor::{mean_norm_loss, Activation, Conv2d, Tensor};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const ENCODER_HIDDEN_LAYERS: usize = 3;
pub const DECODER_HIDDEN_LAYERS: usize = 6;

/// `unsqueeze` applied once per flow block: `48×16×16 -> 3×64×64` at the
/// default configuration.
pub fn payload_to_grid<T: Scalar>(z: &Tensor<T>, cfg: &FlowConfig) -> Result<Tensor<T>> {
    let d = cfg.spatial_divisor();
    if z.c() != cfg.in_channels * d * d {
        return Err(Error::shape(format!(
            "payload has {} channels, flow latent has {}",
            z.c(),
            cfg.in_channels * d * d
        )));
    }
    let mut g = z.clone();
    for _ in 0..cfg.n_blocks {
        g = unsqueeze(&g, cfg.squeeze_factor)?;
    }
    Ok(g)
}

/// Exact inverse of [`payload_to_grid`].
pub fn grid_to_payload<T: Scalar>(g: &Tensor<T>, cfg: &FlowConfig) -> Result<Tensor<T>> {
    if g.c() != cfg.in_channels {
        return Err(Error::shape(format!(
            "payload grid has {} channels, expected {}",
            g.c(),
            cfg.in_channels
        )));
    }
    let mut z = g.clone();
    for _ in 0..cfg.n_blocks {
        z = squeeze(&z, cfg.squeeze_factor)?;
    }
    Ok(z)
}

fn hidden_stack<T: Scalar, R: Rng + ?Sized>(
    cin: usize,
    width: usize,
    hidden: usize,
    cout: usize,
    zero_out: bool,
    rng: &mut R,
) -> ConvStack<T> {
    let gain = (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt();
    let mut layers = vec![Conv2d::random(cin, width, 3, 1, 1, gain, rng)];
    for _ in 0..hidden {
        layers.push(Conv2d::random(width, width, 3, 1, 1, gain, rng));
    }
    layers.push(if zero_out {
        Conv2d::zeros(width, cout, 3, 1, 1)
    } else {
        Conv2d::random(width, cout, 3, 1, 1, 1.0, rng)
    });
    ConvStack::new(layers, Activation::LeakyRelu(LEAKY_SLOPE))
}

/// Input layer 6→W, three hidden W→W layers, zero-initialized output W→3.
#[derive(Clone, Debug, PartialEq)]
pub struct StegoEncoder<T> {
    pub net: ConvStack<T>,
}

/// Input layer 3→W, six hidden W→W layers, output W→3.
#[derive(Clone, Debug, PartialEq)]
pub struct StegoDecoder<T> {
    pub net: ConvStack<T>,
}

pub struct EmbedTape<T> {
    net: StackTape<T>,
}

impl<T: Scalar> StegoEncoder<T> {
    pub fn new<R: Rng + ?Sized>(width: usize, rng: &mut R) -> Self {
        StegoEncoder {
            net: hidden_stack(6, width, ENCODER_HIDDEN_LAYERS, 3, true, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        StegoEncoder {
            net: self.net.zeros_like(),
        }
    }

    fn input(&self, it: &Tensor<T>, z: &Tensor<T>, cfg: &FlowConfig) -> Result<Tensor<T>> {
        let grid = payload_to_grid(z, cfg)?;
        if grid.dims() != it.dims() {
            return Err(Error::shape(format!(
                "payload grid {:?} does not match cover {:?}",
                grid.dims(),
                it.dims()
            )));
        }
        Tensor::concat_channels(it, &grid)
    }

    /// `I_e = I_t + enc(concat(I_t, grid(z)))`.
    pub fn embed(&self, it: &Tensor<T>, z: &Tensor<T>, cfg: &FlowConfig) -> Result<Tensor<T>> {
        let r = self.net.forward(&self.input(it, z, cfg)?)?;
        it.add(&r)
    }

    pub fn embed_tape(&self, it: &Tensor<T>, z: &Tensor<T>, cfg: &FlowConfig) -> Result<(Tensor<T>, EmbedTape<T>)> {
        let (r, net) = self.net.forward_tape(&self.input(it, z, cfg)?)?;
        Ok((it.add(&r)?, EmbedTape { net }))
    }

    /// Returns gradients w.r.t. the cover and the latent.
    pub fn backward(
        &self,
        tape: &EmbedTape<T>,
        g_ie: &Tensor<T>,
        cfg: &FlowConfig,
        grads: &mut StegoEncoder<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let g_in = self.net.backward(&tape.net, g_ie, &mut grads.net)?;
        let (g_it, g_grid) = g_in.split_channels(3)?;
        Ok((g_it.add(g_ie)?, grid_to_payload(&g_grid, cfg)?))
    }
}

impl<T: Scalar> StegoDecoder<T> {
    pub fn new<R: Rng + ?Sized>(width: usize, rng: &mut R) -> Self {
        StegoDecoder {
            net: hidden_stack(3, width, DECODER_HIDDEN_LAYERS, 3, false, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        StegoDecoder {
            net: self.net.zeros_like(),
        }
    }

    /// `ẑ = grid_to_payload(dec(I_e))`.
    pub fn extract(&self, ie: &Tensor<T>, cfg: &FlowConfig) -> Result<Tensor<T>> {
        grid_to_payload(&self.net.forward(ie)?, cfg)
    }

    pub fn extract_tape(&self, ie: &Tensor<T>, cfg: &FlowConfig) -> Result<(Tensor<T>, StackTape<T>)> {
        let (g, tape) = self.net.forward_tape(ie)?;
        Ok((grid_to_payload(&g, cfg)?, tape))
    }

    /// Gradient w.r.t. `I_e` from a gradient on the extracted latent.
    pub fn backward(
        &self,
        tape: &StackTape<T>,
        g_z: &Tensor<T>,
        cfg: &FlowConfig,
        grads: &mut StegoDecoder<T>,
    ) -> Result<Tensor<T>> {
        self.net.backward(tape, &payload_to_grid(g_z, cfg)?, &mut grads.net)
    }
}

impl<T> Parameters<T> for StegoEncoder<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.net.collect(prefix, out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.net.collect_mut(prefix, out);
    }
}

impl<T> Parameters<T> for StegoDecoder<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.net.collect(prefix, out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.net.collect_mut(prefix, out);
    }
}

/// Encoder and decoder together, as stored in checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct StegoParams<T> {
    pub encoder: StegoEncoder<T>,
    pub decoder: StegoDecoder<T>,
}

impl<T: Scalar> StegoParams<T> {
    pub fn new<R: Rng + ?Sized>(enc_width: usize, dec_width: usize, rng: &mut R) -> Self {
        StegoParams {
            encoder: StegoEncoder::new(enc_width, rng),
            decoder: StegoDecoder::new(dec_width, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        StegoParams {
            encoder: self.encoder.zeros_like(),
            decoder: self.decoder.zeros_like(),
        }
    }
}

impl<T> Parameters<T> for StegoParams<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.encoder.collect(&join(prefix, "encoder"), out);
        self.decoder.collect(&join(prefix, "decoder"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.encoder.collect_mut(&join(prefix, "encoder"), out);
        self.decoder.collect_mut(&join(prefix, "decoder"), out);
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StegoLossWeights {
    pub image: f64,
    pub message: f64,
}

impl Default for StegoLossWeights {
    fn default() -> Self {
        StegoLossWeights {
            image: 1.0,
            message: 1.0,
        }
    }
}

impl StegoLossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.image >= 0.0 && self.message >= 0.0) || (self.image == 0.0 && self.message == 0.0) {
            return Err(Error::Config(format!(
                "stego loss weights must be non-negative and not both zero, got ({}, {})",
                self.image, self.message
            )));
        }
        Ok(())
    }
}

/// `‖I_e − I_t‖₂`, batch-averaged.
pub fn image_loss<T: Scalar>(ie: &Tensor<T>, it: &Tensor<T>) -> Result<T> {
    Ok(mean_norm_loss(ie, it)?.0)
}

/// `‖ẑ − z‖₂`, batch-averaged. Squared differences are summed in sorted
/// order, so the value is bit-identical for any layout of the two arguments.
pub fn message_loss<T: Scalar>(z_hat: &Tensor<T>, z: &Tensor<T>) -> Result<T> {
    z_hat.expect_dims(z.dims(), "message_loss")?;
    let mut total = T::zero();
    for i in 0..z.n() {
        let mut sq: Vec<T> = z_hat
            .sample(i)
            .iter()
            .zip(z.sample(i))
            .map(|(&a, &b)| (a - b) * (a - b))
            .collect();
        sq.sort_by(|a, b| a.partial_cmp(b).expect("finite tensors"));
        total += sq.into_iter().sum::<T>().sqrt();
    }
    Ok(total / T::from_usize(z.n()).unwrap())
}

pub fn stego_loss<T: Scalar>(image: T, message: T, w: StegoLossWeights) -> T {
    T::lit(w.image) * image + T::lit(w.message) * message
}
