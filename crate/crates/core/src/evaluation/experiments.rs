//! Drift, serial and reverse experiments.

use super::baseline::LossyBaseline;
use super::metrics::{l2_metric, linf_metric, ssim_metric};
use crate::error::{Error, Result};
use crate::flow::FlowParams;
use crate::pipeline::Model;
use crate::scalar::Scalar;
use crate::stego::StegoParams;
use crate::tensor::Tensor;
use crate::transfer::{adain, stylize, TransferMode};

/// What gets iterated in [`drift_experiment`].
#[derive(Clone, Copy, Debug)]
pub enum DriftPipeline<'a, T> {
    Flow(&'a FlowParams<T>),
    Baseline(&'a LossyBaseline<T>),
}

impl<T: Scalar> DriftPipeline<'_, T> {
    pub fn name(&self) -> &'static str {
        match self {
            DriftPipeline::Flow(_) => "flow",
            DriftPipeline::Baseline(_) => "baseline",
        }
    }

    /// One round: encode, AdaIN with itself as style, decode.
    pub fn round(&self, x: &Tensor<T>, mode: TransferMode) -> Result<Tensor<T>> {
        match self {
            DriftPipeline::Flow(p) => Ok(stylize(x, x, p, mode)?.image),
            DriftPipeline::Baseline(b) => b.stylize(x, x, mode),
        }
    }
}

/// Per-round distances to the starting image. Index 0 is the start itself.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DriftCurve {
    pub l2: Vec<f64>,
    pub ssim: Vec<f64>,
    pub linf: Vec<f64>,
}

impl DriftCurve {
    pub fn rounds(&self) -> usize {
        self.l2.len().saturating_sub(1)
    }
}

pub struct DriftRun<T> {
    pub curve: DriftCurve,
    /// The image after each round, round 0 included.
    pub frames: Vec<Tensor<T>>,
}

pub fn drift_experiment<T: Scalar>(
    pipeline: DriftPipeline<'_, T>,
    i0: &Tensor<T>,
    rounds: usize,
    mode: TransferMode,
) -> Result<DriftRun<T>> {
    if rounds == 0 {
        return Err(Error::Config("drift experiment needs at least one round".into()));
    }
    let mut curve = DriftCurve {
        l2: vec![0.0],
        ssim: vec![1.0],
        linf: vec![0.0],
    };
    let mut frames = vec![i0.clone()];
    for _ in 0..rounds {
        let next = pipeline.round(frames.last().unwrap(), mode)?;
        curve.l2.push(l2_metric(&next, i0)?);
        curve.ssim.push(ssim_metric(&next, i0)?);
        curve.linf.push(linf_metric(&next, i0)?);
        frames.push(next);
    }
    Ok(DriftRun { curve, frames })
}

/// Means of consecutive blocks of `block` rounds, starting at round 1.
pub fn block_means(values: &[f64], block: usize) -> Vec<f64> {
    values
        .get(1..)
        .unwrap_or(&[])
        .chunks(block)
        .filter(|c| c.len() == block)
        .map(|c| c.iter().sum::<f64>() / block as f64)
        .collect()
}

pub fn non_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] >= w[0])
}

/// One line of a metric table.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub experiment: &'static str,
    pub method: &'static str,
    /// What was compared, e.g. `final_vs_reference`.
    pub quantity: String,
    pub l2: f64,
    pub ssim: f64,
}

fn row<T: Scalar>(
    experiment: &'static str,
    method: &'static str,
    quantity: &str,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<MetricRow> {
    Ok(MetricRow {
        experiment,
        method,
        quantity: quantity.to_string(),
        l2: l2_metric(a, b)?,
        ssim: ssim_metric(a, b)?,
    })
}

fn stego_of<T>(model: &Model<T>) -> Result<&StegoParams<T>> {
    model
        .stego
        .as_ref()
        .ok_or_else(|| Error::Config("evaluation needs a checkpoint with trained stego networks".into()))
}

pub struct SerialOutput<T> {
    /// Stego image after the last round.
    pub stego_image: Tensor<T>,
    /// `G` of the latent extracted from `stego_image`.
    pub recovered: Tensor<T>,
    /// Stego image after each round.
    pub rounds: Vec<Tensor<T>>,
}

/// Serial transfer with the latent carried inside the image: each round
/// extracts the hidden content latent, applies the next style to it and
/// hides it again. `styles` are single images broadcast over `contents`.
pub fn serial_chain<T: Scalar>(
    model: &Model<T>,
    contents: &Tensor<T>,
    styles: &[Tensor<T>],
    mode: TransferMode,
) -> Result<SerialOutput<T>> {
    if styles.is_empty() {
        return Err(Error::Config("serial transfer needs at least one style".into()));
    }
    let stego = stego_of(model)?;
    let (flow, cfg) = (&model.flow, &model.flow.config);
    let mut z = flow.forward(contents)?;
    let mut rounds: Vec<Tensor<T>> = Vec::with_capacity(styles.len());
    for s in styles {
        if let Some(prev) = rounds.last() {
            z = stego.decoder.extract(prev, cfg)?;
        }
        let it = flow.inverse(&adain(&z, &flow.forward(s)?, mode)?)?;
        rounds.push(stego.encoder.embed(&it, &z, cfg)?);
    }
    let stego_image = rounds.last().unwrap().clone();
    let recovered = flow.inverse(&stego.decoder.extract(&stego_image, cfg)?)?;
    Ok(SerialOutput {
        stego_image,
        recovered,
        rounds,
    })
}

/// Serial transfer through the pooling autoencoder: each round re-stylizes
/// the previous output's pixels.
pub fn baseline_chain<T: Scalar>(
    baseline: &LossyBaseline<T>,
    contents: &Tensor<T>,
    styles: &[Tensor<T>],
    mode: TransferMode,
) -> Result<Tensor<T>> {
    let mut x = contents.clone();
    for s in styles {
        x = baseline.stylize(&x, s, mode)?;
    }
    Ok(x)
}

/// Serial-transfer table. Each method's final output is compared with that
/// method's own direct stylization of the original content with the last
/// style.
pub fn serial_eval<T: Scalar>(
    model: &Model<T>,
    baseline: &LossyBaseline<T>,
    contents: &Tensor<T>,
    styles: &[Tensor<T>],
    mode: TransferMode,
) -> Result<Vec<MetricRow>> {
    let ours = serial_chain(model, contents, styles, mode)?;
    let last = styles.last().unwrap();
    let reference = stylize(contents, last, &model.flow, mode)?.image;
    let chain = baseline_chain(baseline, contents, styles, mode)?;
    let base_ref = baseline.stylize(contents, last, mode)?;
    Ok(vec![
        row("serial", "ours", "final_vs_reference", &ours.stego_image, &reference)?,
        row("serial", "ours", "recovered_vs_content", &ours.recovered, contents)?,
        row("serial", "baseline", "final_vs_reference", &chain, &base_ref)?,
    ])
}

/// De-stylization: `G(D_msg(I_e))` for ours, autoencoder reconstruction of
/// the stylized image for the baseline. `styles[i % len]` goes with content
/// sample `i`.
pub fn reverse_eval<T: Scalar>(
    model: &Model<T>,
    baseline: &LossyBaseline<T>,
    contents: &Tensor<T>,
    styles: &[Tensor<T>],
    mode: TransferMode,
) -> Result<Vec<MetricRow>> {
    let stego = stego_of(model)?;
    let (flow, cfg) = (&model.flow, &model.flow.config);
    let style_batch = paired_styles(contents, styles)?;
    let s = stylize(contents, &style_batch, flow, mode)?;
    let ie = stego.encoder.embed(&s.image, &s.content_latent, cfg)?;
    let recovered = flow.inverse(&stego.decoder.extract(&ie, cfg)?)?;
    let base_stylized = baseline.stylize(contents, &style_batch, mode)?;
    let base_rec = baseline.reconstruct(&base_stylized)?;
    Ok(vec![
        row("reverse", "ours", "recovered_vs_content", &recovered, contents)?,
        row("reverse", "baseline", "recovered_vs_content", &base_rec, contents)?,
    ])
}

/// Reverse protocol with the payload handed over untouched, which isolates
/// the flow's own fidelity from the stego networks.
pub fn reverse_passthrough<T: Scalar>(
    flow: &FlowParams<T>,
    contents: &Tensor<T>,
    styles: &[Tensor<T>],
    mode: TransferMode,
) -> Result<MetricRow> {
    let s = stylize(contents, &paired_styles(contents, styles)?, flow, mode)?;
    row("reverse", "passthrough", "recovered_vs_content", &flow.inverse(&s.content_latent)?, contents)
}

fn paired_styles<T: Scalar>(contents: &Tensor<T>, styles: &[Tensor<T>]) -> Result<Tensor<T>> {
    if styles.is_empty() {
        return Err(Error::Config("reverse transfer needs at least one style".into()));
    }
    let picks: Vec<&Tensor<T>> = (0..contents.n()).map(|i| &styles[i % styles.len()]).collect();
    Tensor::stack(&picks)
}
