//! Fixed random feature extractor and the stage-1 losses built on it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flow::FlowParams;
use crate::scalar::Scalar;
use crate::tensor::{channel_stats, channel_stats_backward, mean_norm_loss, sample_norms, Activation, Conv2d, Tensor, VARIANCE_EPS};

pub const EXTRACTOR_SEED: u64 = 0xC0FFEE;
pub const TAP_WIDTHS: [usize; 4] = [16, 32, 64, 64];

/// Four conv3x3 + ReLU layers; every layer output is a tap. The first layer
/// keeps the resolution, the rest halve it.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor<T> {
    layers: Vec<Conv2d<T>>,
    seed: u64,
}

impl<T: Scalar> Default for FeatureExtractor<T> {
    fn default() -> Self {
        Self::new(3, EXTRACTOR_SEED)
    }
}

impl<T: Scalar> FeatureExtractor<T> {
    pub fn new(in_channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cin = in_channels;
        let mut layers = Vec::with_capacity(TAP_WIDTHS.len());
        for (i, &w) in TAP_WIDTHS.iter().enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            let mut l = Conv2d::random(cin, w, 3, stride, 1, 2f64.sqrt(), &mut rng);
            l.bias = Tensor::randn(l.bias.dims(), 0.1, &mut rng);
            layers.push(l);
            cin = w;
        }
        FeatureExtractor { layers, seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn taps(&self) -> usize {
        self.layers.len()
    }

    /// Side lengths must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << (self.layers.len() - 1)
    }

    /// Tap outputs, shallow to deep.
    pub fn extract(&self, img: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let d = self.divisor();
        if !img.h().is_multiple_of(d) || !img.w().is_multiple_of(d) {
            return Err(Error::Indivisible {
                h: img.h(),
                w: img.w(),
                factor: d,
            });
        }
        let mut taps: Vec<Tensor<T>> = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let mut h = l.forward(taps.last().unwrap_or(img))?;
            Activation::Relu.apply_in_place(&mut h);
            taps.push(h);
        }
        Ok(taps)
    }

    /// Gradient w.r.t. the image given per-tap upstream gradients (`None`
    /// for taps that do not feed the loss).
    pub fn backward(&self, img: &Tensor<T>, taps: &[Tensor<T>], g_taps: &[Option<Tensor<T>>]) -> Result<Tensor<T>> {
        let deepest = match g_taps.iter().rposition(Option::is_some) {
            Some(i) => i,
            None => return Ok(Tensor::zeros(img.dims())),
        };
        let mut g: Option<Tensor<T>> = None;
        for i in (0..=deepest).rev() {
            let mut gi = match (g.take(), &g_taps[i]) {
                (Some(mut a), Some(b)) => {
                    a.add_assign(b)?;
                    a
                }
                (Some(a), None) => a,
                (None, Some(b)) => b.clone(),
                (None, None) => continue,
            };
            Activation::Relu.backward_in_place(&taps[i], &mut gi);
            let input = if i == 0 { img } else { &taps[i - 1] };
            g = Some(self.layers[i].backward_input(input.dims(), &gi)?);
        }
        Ok(g.expect("deepest tap has a gradient"))
    }
}

/// `‖F(stylized) − t‖₂`, batch-averaged. Near zero whenever
/// `stylized = G(t)` on the same parameters.
pub fn content_loss<T: Scalar>(t: &Tensor<T>, stylized: &Tensor<T>, p: &FlowParams<T>) -> Result<T> {
    let z = p.forward(stylized)?;
    let norms = sample_norms(&z, t)?;
    Ok(norms.iter().copied().sum::<T>() / T::from_usize(norms.len()).unwrap())
}

/// `‖φ_L(I_t) − φ_L(I_c)‖₂` on the deepest tap, batch-averaged.
pub fn perceptual_content_loss<T: Scalar>(it: &Tensor<T>, ic: &Tensor<T>, fe: &FeatureExtractor<T>) -> Result<T> {
    it.expect_dims(ic.dims(), "perceptual_content_loss")?;
    let a = fe.extract(it)?;
    let b = fe.extract(ic)?;
    Ok(mean_norm_loss(a.last().unwrap(), b.last().unwrap())?.0)
}

/// [`perceptual_content_loss`] and its gradient w.r.t. `it`.
pub fn perceptual_content_loss_grad<T: Scalar>(
    it: &Tensor<T>,
    ic: &Tensor<T>,
    fe: &FeatureExtractor<T>,
) -> Result<(T, Tensor<T>)> {
    it.expect_dims(ic.dims(), "perceptual_content_loss")?;
    let a = fe.extract(it)?;
    let b = fe.extract(ic)?;
    let (loss, g) = mean_norm_loss(a.last().unwrap(), b.last().unwrap())?;
    let mut g_taps = vec![None; a.len()];
    g_taps[a.len() - 1] = Some(g);
    Ok((loss, fe.backward(it, &a, &g_taps)?))
}

/// Norm of a per-(sample, channel) difference vector for one sample, and
/// the unit direction (zero at zero).
fn stat_diff<T: Scalar>(x: &[T], y: &[T]) -> (T, Vec<T>) {
    let d: Vec<T> = x.iter().zip(y).map(|(&a, &b)| a - b).collect();
    let nrm = d.iter().map(|&v| v * v).sum::<T>().sqrt();
    let dir = if nrm > T::zero() {
        d.iter().map(|&v| v / nrm).collect()
    } else {
        vec![T::zero(); d.len()]
    };
    (nrm, dir)
}

/// `Σ_i ‖μ(φ_i(I_t)) − μ(φ_i(I_s))‖₂ + ‖σ(φ_i(I_t)) − σ(φ_i(I_s))‖₂`,
/// batch-averaged over `I_t`. A style batch of one is broadcast.
pub fn style_loss<T: Scalar>(it: &Tensor<T>, is: &Tensor<T>, fe: &FeatureExtractor<T>) -> Result<T> {
    Ok(style_loss_inner(it, is, fe, false)?.0)
}

/// [`style_loss`] and its gradient w.r.t. `it`.
pub fn style_loss_grad<T: Scalar>(it: &Tensor<T>, is: &Tensor<T>, fe: &FeatureExtractor<T>) -> Result<(T, Tensor<T>)> {
    let (loss, g) = style_loss_inner(it, is, fe, true)?;
    Ok((loss, g.unwrap()))
}

fn style_loss_inner<T: Scalar>(
    it: &Tensor<T>,
    is: &Tensor<T>,
    fe: &FeatureExtractor<T>,
    want_grad: bool,
) -> Result<(T, Option<Tensor<T>>)> {
    if is.n() != 1 && is.n() != it.n() {
        return Err(Error::shape(format!(
            "style_loss: style batch {} must be 1 or match {}",
            is.n(),
            it.n()
        )));
    }
    let eps = T::lit(VARIANCE_EPS);
    let ta = fe.extract(it)?;
    let sa = fe.extract(is)?;
    let n = it.n();
    let inv_n = T::one() / T::from_usize(n).unwrap();
    let mut loss = T::zero();
    let mut g_taps = Vec::with_capacity(ta.len());
    for (ft, fs) in ta.iter().zip(&sa) {
        let c = ft.c();
        let (st, ss) = (channel_stats(ft, eps), channel_stats(fs, eps));
        let mut gm = vec![T::zero(); n * c];
        let mut gs = vec![T::zero(); n * c];
        for i in 0..n {
            let j = if is.n() == 1 { 0 } else { i };
            let (a, b) = (i * c..(i + 1) * c, j * c..(j + 1) * c);
            let (dm, um) = stat_diff(&st.mean[a.clone()], &ss.mean[b.clone()]);
            let (ds, us) = stat_diff(&st.std[a.clone()], &ss.std[b]);
            loss += (dm + ds) * inv_n;
            for (k, (x, y)) in um.iter().zip(&us).enumerate() {
                gm[i * c + k] = *x * inv_n;
                gs[i * c + k] = *y * inv_n;
            }
        }
        if want_grad {
            g_taps.push(Some(channel_stats_backward(ft, &st, &gm, &gs)));
        }
    }
    let grad = if want_grad {
        Some(fe.backward(it, &ta, &g_taps)?)
    } else {
        None
    };
    Ok((loss, grad))
}
