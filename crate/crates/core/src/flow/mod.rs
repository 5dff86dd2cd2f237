//! Invertible flow feature network.
//!
//! Each block squeezes space into channels and then runs a fixed number of
//! steps; a step is additive coupling, then an invertible 1x1 convolution,
//! then actnorm. `forward` maps images to latents, `inverse` maps back.

mod actnorm;
mod coupling;
mod invconv;
mod squeeze;

pub use actnorm::{ActNorm, MIN_SCALE};
pub use coupling::Coupling;
pub use invconv::{InvConv, MIN_DET};
pub use squeeze::{squeeze, unsqueeze};

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::StackTape;
use crate::params::{join, Parameters};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlowConfig {
    pub in_channels: usize,
    pub n_blocks: usize,
    pub steps_per_block: usize,
    pub squeeze_factor: usize,
    pub hidden_width: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            in_channels: 3,
            n_blocks: 2,
            steps_per_block: 8,
            squeeze_factor: 2,
            hidden_width: 64,
        }
    }
}

impl FlowConfig {
    /// Spatial divisor every input side must be a multiple of.
    pub fn spatial_divisor(&self) -> usize {
        self.squeeze_factor.pow(self.n_blocks as u32)
    }

    pub fn channels_at_block(&self, block: usize) -> usize {
        self.in_channels * self.squeeze_factor.pow(2 * (block as u32 + 1))
    }

    pub fn check_image(&self, dims: [usize; 4]) -> Result<()> {
        let [_, c, h, w] = dims;
        if c != self.in_channels {
            return Err(Error::shape(format!(
                "flow expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        let d = self.spatial_divisor();
        if h % d != 0 || w % d != 0 {
            return Err(Error::Indivisible { h, w, factor: d });
        }
        Ok(())
    }

    /// Latent dims for an image of `dims`.
    pub fn latent_dims(&self, dims: [usize; 4]) -> [usize; 4] {
        let d = self.spatial_divisor();
        [dims[0], dims[1] * d * d, dims[2] / d, dims[3] / d]
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 || self.steps_per_block == 0 {
            return Err(Error::Config("flow needs at least one block and one step".into()));
        }
        if self.squeeze_factor < 2 {
            return Err(Error::Config("squeeze factor must be >= 2".into()));
        }
        if !self.channels_at_block(0).is_multiple_of(2) {
            return Err(Error::Config("squeezed channel count must be even".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowStep<T> {
    pub coupling: Coupling<T>,
    pub invconv: InvConv<T>,
    pub actnorm: ActNorm<T>,
}

impl<T: Scalar> FlowStep<T> {
    pub fn zeros_like(&self) -> Self {
        FlowStep {
            coupling: self.coupling.zeros_like(),
            invconv: self.invconv.zeros_like(),
            actnorm: self.actnorm.zeros_like(),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.coupling.forward(x)?;
        let h = self.invconv.forward(&h)?;
        self.actnorm.forward(&h)
    }

    pub fn inverse(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.actnorm.inverse(y)?;
        let h = self.invconv.inverse(&h)?;
        self.coupling.inverse(&h)
    }
}

impl<T> Parameters<T> for FlowStep<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.coupling.collect(&join(prefix, "coupling"), out);
        self.invconv.collect(&join(prefix, "invconv"), out);
        self.actnorm.collect(&join(prefix, "actnorm"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        self.coupling.collect_mut(&join(prefix, "coupling"), out);
        self.invconv.collect_mut(&join(prefix, "invconv"), out);
        self.actnorm.collect_mut(&join(prefix, "actnorm"), out);
    }
}

/// All flow parameters, `blocks[b][s]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowParams<T> {
    pub config: FlowConfig,
    pub blocks: Vec<Vec<FlowStep<T>>>,
}

struct StepTape<T> {
    coupling: StackTape<T>,
    invconv_in: Tensor<T>,
    actnorm_in: Tensor<T>,
}

/// Saved activations of [`FlowParams::forward_tape`].
pub struct ForwardTape<T> {
    image_dims: [usize; 4],
    steps: Vec<Vec<StepTape<T>>>,
}

struct InverseStepTape<T> {
    actnorm_out: Tensor<T>,
    invconv_out: Tensor<T>,
    coupling: StackTape<T>,
}

/// Saved activations of [`FlowParams::inverse_tape`].
pub struct InverseTape<T> {
    latent_dims: [usize; 4],
    steps: Vec<Vec<InverseStepTape<T>>>,
}

impl<T: Scalar> FlowParams<T> {
    /// Training initialisation: random orthogonal mixing, identity couplings,
    /// actnorm awaiting data-dependent init.
    pub fn new<R: Rng + ?Sized>(config: FlowConfig, rng: &mut R) -> Result<Self> {
        Self::build(config, |c, rng| {
            Ok(FlowStep {
                coupling: Coupling::new(c.0, c.1, rng)?,
                invconv: InvConv::random_orthogonal(c.0, rng),
                actnorm: ActNorm::new(c.0),
            })
        }, rng)
    }

    /// Every step is exactly the identity; the network reduces to squeezes.
    pub fn identity(config: FlowConfig) -> Result<Self> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        Self::build(config, |c, rng| {
            Ok(FlowStep {
                coupling: Coupling::new(c.0, c.1, rng)?,
                invconv: InvConv::identity(c.0),
                actnorm: ActNorm::new(c.0),
            })
        }, &mut rng)
    }

    /// Every parameter random, including the couplings' output layers and
    /// actnorm; used by invertibility tests.
    pub fn random_dense<R: Rng + ?Sized>(config: FlowConfig, out_std: f64, rng: &mut R) -> Result<Self> {
        let mut p = Self::new(config, rng)?;
        for step in p.blocks.iter_mut().flatten() {
            // Nonzero hidden biases keep ReLU inputs off the kink at 0.
            let layers = &mut step.coupling.net.layers;
            let last = layers.len() - 1;
            for (i, l) in layers.iter_mut().enumerate() {
                let std = if i == last { out_std } else { 0.1 };
                if i == last {
                    l.weight = Tensor::randn(l.weight.dims(), out_std, rng);
                }
                l.bias = Tensor::randn(l.bias.dims(), std, rng);
            }
            step.actnorm = ActNorm::random(step.actnorm.channels(), rng);
        }
        Ok(p)
    }

    fn build<R: Rng + ?Sized>(
        config: FlowConfig,
        mut make: impl FnMut((usize, usize), &mut R) -> Result<FlowStep<T>>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let mut blocks = Vec::with_capacity(config.n_blocks);
        for b in 0..config.n_blocks {
            let c = config.channels_at_block(b);
            let steps = (0..config.steps_per_block)
                .map(|_| make((c, config.hidden_width), rng))
                .collect::<Result<Vec<_>>>()?;
            blocks.push(steps);
        }
        Ok(FlowParams { config, blocks })
    }

    pub fn zeros_like(&self) -> Self {
        FlowParams {
            config: self.config.clone(),
            blocks: self
                .blocks
                .iter()
                .map(|b| b.iter().map(FlowStep::zeros_like).collect())
                .collect(),
        }
    }

    pub fn actnorm_initialized(&self) -> bool {
        self.blocks.iter().flatten().all(|s| s.actnorm.initialized)
    }

    pub fn mark_initialized(&mut self) {
        self.blocks.iter_mut().flatten().for_each(|s| s.actnorm.initialized = true);
    }

    /// Data-dependent actnorm initialisation: each uninitialised actnorm is
    /// set from the activations reaching it when `x` runs through the flow.
    pub fn init_actnorm(&mut self, x: &Tensor<T>) -> Result<()> {
        self.config.check_image(x.dims())?;
        let f = self.config.squeeze_factor;
        let mut h = x.clone();
        for block in self.blocks.iter_mut() {
            h = squeeze(&h, f)?;
            for step in block.iter_mut() {
                let a = step.invconv.forward(&step.coupling.forward(&h)?)?;
                if !step.actnorm.initialized {
                    step.actnorm.init_from(&a)?;
                }
                h = step.actnorm.forward(&a)?;
            }
        }
        Ok(())
    }

    /// `F`: image to latent.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.config.check_image(x.dims())?;
        let f = self.config.squeeze_factor;
        let mut h = x.clone();
        for block in &self.blocks {
            h = squeeze(&h, f)?;
            for step in block {
                h = step.forward(&h)?;
            }
        }
        Ok(h)
    }

    fn check_latent(&self, z: &Tensor<T>) -> Result<()> {
        let d = self.config.spatial_divisor();
        let c = self.config.in_channels * d * d;
        if z.c() != c {
            return Err(Error::shape(format!(
                "flow latent needs {c} channels, got {}",
                z.c()
            )));
        }
        Ok(())
    }

    /// `G`: latent to image. The raw inverse; no clamping.
    pub fn inverse(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_latent(z)?;
        let f = self.config.squeeze_factor;
        let mut h = z.clone();
        for (b, block) in self.blocks.iter().enumerate().rev() {
            for (s, step) in block.iter().enumerate().rev() {
                h = step.inverse(&h).map_err(|e| e.at_step(b, s))?;
            }
            h = unsqueeze(&h, f)?;
        }
        Ok(h)
    }

    pub fn forward_tape(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ForwardTape<T>)> {
        self.config.check_image(x.dims())?;
        let f = self.config.squeeze_factor;
        let mut h = x.clone();
        let mut steps = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            h = squeeze(&h, f)?;
            let mut tapes = Vec::with_capacity(block.len());
            for step in block {
                let (c_out, coupling) = step.coupling.forward_tape(&h)?;
                let a_in = step.invconv.forward(&c_out)?;
                h = step.actnorm.forward(&a_in)?;
                tapes.push(StepTape {
                    coupling,
                    invconv_in: c_out,
                    actnorm_in: a_in,
                });
            }
            steps.push(tapes);
        }
        Ok((
            h,
            ForwardTape {
                image_dims: x.dims(),
                steps,
            },
        ))
    }

    /// Image gradient of `forward`; parameter gradients are added to `grads`.
    pub fn backward(&self, tape: &ForwardTape<T>, gz: &Tensor<T>, grads: &mut FlowParams<T>) -> Result<Tensor<T>> {
        let f = self.config.squeeze_factor;
        let mut g = gz.clone();
        for b in (0..self.blocks.len()).rev() {
            for s in (0..self.blocks[b].len()).rev() {
                let (step, t, gs) = (&self.blocks[b][s], &tape.steps[b][s], &mut grads.blocks[b][s]);
                g = step.actnorm.backward(&t.actnorm_in, &g, &mut gs.actnorm);
                g = step.invconv.backward(&t.invconv_in, &g, &mut gs.invconv);
                g = step.coupling.backward(&t.coupling, &g, &mut gs.coupling)?;
            }
            g = unsqueeze(&g, f)?;
        }
        g.expect_dims(tape.image_dims, "flow backward")?;
        Ok(g)
    }

    pub fn inverse_tape(&self, z: &Tensor<T>) -> Result<(Tensor<T>, InverseTape<T>)> {
        self.check_latent(z)?;
        let f = self.config.squeeze_factor;
        let mut h = z.clone();
        let mut steps: Vec<Vec<InverseStepTape<T>>> = Vec::with_capacity(self.blocks.len());
        for (b, block) in self.blocks.iter().enumerate().rev() {
            let mut tapes = Vec::with_capacity(block.len());
            for (s, step) in block.iter().enumerate().rev() {
                let at = |e: Error| e.at_step(b, s);
                let a_out = step.actnorm.inverse(&h).map_err(at)?;
                let i_out = step.invconv.inverse(&a_out).map_err(at)?;
                let (c_out, coupling) = step.coupling.inverse_tape(&i_out).map_err(at)?;
                h = c_out;
                tapes.push(InverseStepTape {
                    actnorm_out: a_out,
                    invconv_out: i_out,
                    coupling,
                });
            }
            tapes.reverse();
            steps.push(tapes);
            h = unsqueeze(&h, f)?;
        }
        steps.reverse();
        Ok((
            h,
            InverseTape {
                latent_dims: z.dims(),
                steps,
            },
        ))
    }

    /// Latent gradient of `inverse`; parameter gradients are added to `grads`.
    pub fn inverse_backward(&self, tape: &InverseTape<T>, gx: &Tensor<T>, grads: &mut FlowParams<T>) -> Result<Tensor<T>> {
        let f = self.config.squeeze_factor;
        let mut g = gx.clone();
        for b in 0..self.blocks.len() {
            g = squeeze(&g, f)?;
            for s in 0..self.blocks[b].len() {
                let (step, t, gs) = (&self.blocks[b][s], &tape.steps[b][s], &mut grads.blocks[b][s]);
                g = step.coupling.inverse_backward(&t.coupling, &g, &mut gs.coupling)?;
                g = step.invconv.inverse_backward(&t.invconv_out, &g, &mut gs.invconv)?;
                g = step.actnorm.inverse_backward(&t.actnorm_out, &g, &mut gs.actnorm);
            }
        }
        g.expect_dims(tape.latent_dims, "flow inverse backward")?;
        Ok(g)
    }
}

impl<T: Scalar> Parameters<T> for FlowParams<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        for (b, block) in self.blocks.iter().enumerate() {
            for (s, step) in block.iter().enumerate() {
                step.collect(&join(prefix, &format!("block{b}.step{s}")), out);
            }
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        for (b, block) in self.blocks.iter_mut().enumerate() {
            for (s, step) in block.iter_mut().enumerate() {
                step.collect_mut(&join(prefix, &format!("block{b}.step{s}")), out);
            }
        }
    }

    fn validate(&self) -> Result<()> {
        for (b, block) in self.blocks.iter().enumerate() {
            for (s, step) in block.iter().enumerate() {
                step.invconv.check_invertible().map_err(|e| e.at_step(b, s))?;
                step.actnorm.check_invertible()?;
            }
        }
        Ok(())
    }
}
