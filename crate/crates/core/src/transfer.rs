//! Latent-space AdaIN and the stylization pipeline built on the flow.
//!
//! Features factor as `f = C(f) · S(f)`: the style factor is the per-channel
//! standard deviation (plus the mean in [`TransferMode::MeanStd`]) and the
//! content factor is what remains after normalizing it away. AdaIN keeps the
//! content factor of one input and the style factor of the other.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::flow::{FlowParams, ForwardTape, InverseTape};
use crate::scalar::Scalar;
use crate::tensor::{channel_stats, channel_stats_backward, ChannelStats, Tensor, VARIANCE_EPS};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TransferMode {
    /// `f / σ(f)`, rescaled by the style σ. No mean matching.
    StdOnly,
    /// Standard AdaIN: normalize mean and σ, then apply the style's.
    #[default]
    MeanStd,
}

impl TransferMode {
    fn centered(self) -> bool {
        self == TransferMode::MeanStd
    }
}

impl fmt::Display for TransferMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransferMode::StdOnly => "std_only",
            TransferMode::MeanStd => "mean_std",
        })
    }
}

impl FromStr for TransferMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "std_only" => Ok(TransferMode::StdOnly),
            "mean_std" => Ok(TransferMode::MeanStd),
            other => Err(Error::Config(format!(
                "unknown transfer mode {other:?} (expected std_only or mean_std)"
            ))),
        }
    }
}

fn eps<T: Scalar>() -> T {
    T::lit(VARIANCE_EPS)
}

/// `C(f)`: per-channel `f / σ(f)` or `(f − μ(f)) / σ(f)`.
pub fn content_factor<T: Scalar>(f: &Tensor<T>, mode: TransferMode) -> Tensor<T> {
    let s = channel_stats(f, eps());
    let mut out = f.clone();
    for n in 0..f.n() {
        for c in 0..f.c() {
            let mu = if mode.centered() { s.mean_at(n, c) } else { T::zero() };
            let inv = T::one() / s.std_at(n, c);
            for v in out.plane_mut(n, c) {
                *v = (*v - mu) * inv;
            }
        }
    }
    out
}

/// `S(f)`: the channel statistics, with the mean zeroed in `StdOnly`.
pub fn style_factor<T: Scalar>(f: &Tensor<T>, mode: TransferMode) -> ChannelStats<T> {
    let mut s = channel_stats(f, eps());
    if !mode.centered() {
        s.mean.iter_mut().for_each(|m| *m = T::zero());
    }
    s
}

fn style_index(fc: &Tensor<impl Scalar>, fs: &Tensor<impl Scalar>) -> Result<impl Fn(usize) -> usize> {
    if fc.c() != fs.c() {
        return Err(Error::shape(format!(
            "adain: content has {} channels, style has {}",
            fc.c(),
            fs.c()
        )));
    }
    let broadcast = fs.n() == 1;
    if !broadcast && fs.n() != fc.n() {
        return Err(Error::shape(format!(
            "adain: style batch {} must be 1 or match content batch {}",
            fs.n(),
            fc.n()
        )));
    }
    Ok(move |n| if broadcast { 0 } else { n })
}

/// `f_cs = C(f_c) · S(f_s)`. Style statistics are taken over `f_s`'s own
/// spatial grid, so the two inputs may differ in size. A style batch of one
/// is broadcast over the content batch.
pub fn adain<T: Scalar>(fc: &Tensor<T>, fs: &Tensor<T>, mode: TransferMode) -> Result<Tensor<T>> {
    let si = style_index(fc, fs)?;
    let sc = channel_stats(fc, eps());
    let ss = channel_stats(fs, eps());
    let mut out = fc.clone();
    for n in 0..fc.n() {
        for c in 0..fc.c() {
            let (mc, ms) = if mode.centered() {
                (sc.mean_at(n, c), ss.mean_at(si(n), c))
            } else {
                (T::zero(), T::zero())
            };
            let k = ss.std_at(si(n), c) / sc.std_at(n, c);
            for v in out.plane_mut(n, c) {
                *v = (*v - mc) * k + ms;
            }
        }
    }
    Ok(out)
}

/// Gradients of [`adain`] w.r.t. both inputs.
pub fn adain_backward<T: Scalar>(
    fc: &Tensor<T>,
    fs: &Tensor<T>,
    mode: TransferMode,
    g: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let si = style_index(fc, fs)?;
    g.expect_dims(fc.dims(), "adain gradient")?;
    let sc = channel_stats(fc, eps());
    let ss = channel_stats(fs, eps());
    let mut gfc = Tensor::zeros(fc.dims());
    let (mut gmc, mut gsc) = (vec![T::zero(); sc.mean.len()], vec![T::zero(); sc.std.len()]);
    let (mut gms, mut gss) = (vec![T::zero(); ss.mean.len()], vec![T::zero(); ss.std.len()]);
    for n in 0..fc.n() {
        for c in 0..fc.c() {
            let (kc, ks) = (n * fc.c() + c, si(n) * fs.c() + c);
            let mc = if mode.centered() { sc.mean[kc] } else { T::zero() };
            let (sig_c, sig_s) = (sc.std[kc], ss.std[ks]);
            let k = sig_s / sig_c;
            let (mut sum_g, mut sum_gx) = (T::zero(), T::zero());
            for ((gv, &gy), &x) in gfc.plane_mut(n, c).iter_mut().zip(g.plane(n, c)).zip(fc.plane(n, c)) {
                *gv = gy * k;
                sum_g += gy;
                sum_gx += gy * (x - mc);
            }
            if mode.centered() {
                gmc[kc] = -sum_g * k;
                gms[ks] += sum_g;
            }
            gsc[kc] = -sum_gx * sig_s / (sig_c * sig_c);
            gss[ks] += sum_gx / sig_c;
        }
    }
    gfc.add_assign(&channel_stats_backward(fc, &sc, &gmc, &gsc))?;
    let gfs = channel_stats_backward(fs, &ss, &gms, &gss);
    Ok((gfc, gfs))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnbiasednessReport {
    /// `‖S(f_cs) − S(f_s)‖ / ‖S(f_s)‖`, means included in `MeanStd`.
    pub style_residual: f64,
    /// `‖C(f_cs) − C(f_c)‖ / ‖C(f_c)‖`.
    pub content_residual: f64,
    /// `‖σ(f_cs) − σ(f_s)‖ / ‖σ(f_s)‖`.
    pub sigma_residual: f64,
    pub passed: bool,
}

fn rel_residual(a: impl Iterator<Item = f64>, b: impl Iterator<Item = f64>) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (x, y) in a.zip(b) {
        num += (x - y) * (x - y);
        den += y * y;
    }
    // A zero reference falls back to the absolute residual.
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        num.sqrt()
    }
}

/// Checks that [`adain`] keeps `C(f_c)` and `S(f_s)`.
pub fn verify_unbiased<T: Scalar>(
    fc: &Tensor<T>,
    fs: &Tensor<T>,
    mode: TransferMode,
    tol: f64,
) -> Result<UnbiasednessReport> {
    verify_transfer(fc, fs, mode, tol, |a, b| adain(a, b, mode))
}

/// [`verify_unbiased`] for an arbitrary transfer function. `f_s` must have
/// the same batch size as `f_c`.
pub fn verify_transfer<T: Scalar>(
    fc: &Tensor<T>,
    fs: &Tensor<T>,
    mode: TransferMode,
    tol: f64,
    transfer: impl Fn(&Tensor<T>, &Tensor<T>) -> Result<Tensor<T>>,
) -> Result<UnbiasednessReport> {
    if fs.n() != fc.n() {
        return Err(Error::shape("verify_transfer: batch sizes differ"));
    }
    let fcs = transfer(fc, fs)?;
    let (s_out, s_ref) = (style_factor(&fcs, mode), style_factor(fs, mode));
    let f64s = |v: &[T]| v.iter().map(|x| x.as_f64()).collect::<Vec<_>>();
    let sigma_residual = rel_residual(f64s(&s_out.std).into_iter(), f64s(&s_ref.std).into_iter());
    let style_residual = rel_residual(
        f64s(&s_out.mean).into_iter().chain(f64s(&s_out.std)),
        f64s(&s_ref.mean).into_iter().chain(f64s(&s_ref.std)),
    );
    let (c_out, c_ref) = (content_factor(&fcs, mode), content_factor(fc, mode));
    let content_residual = rel_residual(
        c_out.data().iter().map(|x| x.as_f64()),
        c_ref.data().iter().map(|x| x.as_f64()),
    );
    let passed = [style_residual, content_residual, sigma_residual]
        .iter()
        .all(|&r| r <= tol);
    Ok(UnbiasednessReport {
        style_residual,
        content_residual,
        sigma_residual,
        passed,
    })
}

/// Result of [`stylize`]: the image plus the latents it was built from.
#[derive(Clone, Debug)]
pub struct Stylized<T> {
    pub image: Tensor<T>,
    /// The AdaIN output `t`, with `image = G(t)`.
    pub latent: Tensor<T>,
    pub content_latent: Tensor<T>,
    pub style_latent: Tensor<T>,
}

/// `I_t = G(adain(F(I_c), F(I_s)))`.
pub fn stylize<T: Scalar>(
    content: &Tensor<T>,
    style: &Tensor<T>,
    p: &FlowParams<T>,
    mode: TransferMode,
) -> Result<Stylized<T>> {
    let content_latent = p.forward(content)?;
    let style_latent = p.forward(style)?;
    let latent = adain(&content_latent, &style_latent, mode)?;
    let image = p.inverse(&latent)?;
    Ok(Stylized {
        image,
        latent,
        content_latent,
        style_latent,
    })
}

pub struct StylizeTape<T> {
    mode: TransferMode,
    content: ForwardTape<T>,
    style: ForwardTape<T>,
    decode: InverseTape<T>,
}

pub fn stylize_tape<T: Scalar>(
    content: &Tensor<T>,
    style: &Tensor<T>,
    p: &FlowParams<T>,
    mode: TransferMode,
) -> Result<(Stylized<T>, StylizeTape<T>)> {
    let (content_latent, ct) = p.forward_tape(content)?;
    let (style_latent, st) = p.forward_tape(style)?;
    let latent = adain(&content_latent, &style_latent, mode)?;
    let (image, dt) = p.inverse_tape(&latent)?;
    let out = Stylized {
        image,
        latent,
        content_latent,
        style_latent,
    };
    Ok((
        out,
        StylizeTape {
            mode,
            content: ct,
            style: st,
            decode: dt,
        },
    ))
}

/// Accumulates flow parameter gradients for upstream gradients on the
/// stylized image and (optionally) directly on the content latent.
pub fn stylize_backward<T: Scalar>(
    p: &FlowParams<T>,
    s: &Stylized<T>,
    tape: &StylizeTape<T>,
    g_image: &Tensor<T>,
    g_content_latent: Option<&Tensor<T>>,
    grads: &mut FlowParams<T>,
) -> Result<()> {
    let g_latent = p.inverse_backward(&tape.decode, g_image, grads)?;
    let (mut gzc, gzs) = adain_backward(&s.content_latent, &s.style_latent, tape.mode, &g_latent)?;
    if let Some(extra) = g_content_latent {
        gzc.add_assign(extra)?;
    }
    p.backward(&tape.content, &gzc, grads)?;
    p.backward(&tape.style, &gzs, grads)?;
    Ok(())
}
