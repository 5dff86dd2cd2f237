//! Stage-1 (flow) and stage-2 (steganography) training loops.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Model;
use super::config::{Stage, TrainConfig};
use super::corpus::{pair_styles, Corpus};
use super::optim::Adam;
use crate::error::{Error, Result};
use crate::flow::FlowParams;
use crate::params::Parameters;
use crate::perceptual::{content_loss, perceptual_content_loss_grad, style_loss_grad, FeatureExtractor};
use crate::scalar::Scalar;
use crate::stego::{stego_loss, StegoLossWeights, StegoParams};
use crate::tensor::{mean_norm_loss, sample_norms, Tensor};
use crate::transfer::{stylize, stylize_backward, stylize_tape};

/// Window over which the stage-2 objective is expected not to rise.
pub const MONOTONE_WINDOW: usize = 50;

/// Per-step loss values. Wall-clock times are kept apart from the metric
/// table so the CSV is reproducible byte for byte.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub columns: Vec<&'static str>,
    pub rows: Vec<(usize, Vec<f64>)>,
    pub wall_seconds: Vec<f64>,
    /// 50-step windows whose mean stego loss exceeded the previous window's.
    pub window_violations: Vec<usize>,
}

impl TrainLog {
    fn new(columns: &[&'static str]) -> Self {
        TrainLog {
            columns: columns.to_vec(),
            ..Default::default()
        }
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| *c == name)?;
        Some(self.rows.iter().map(|(_, v)| v[i]).collect())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut header = vec!["step"];
        header.extend(&self.columns);
        w.write_record(&header).map_err(csv_err)?;
        for (step, vals) in &self.rows {
            let mut rec = vec![step.to_string()];
            rec.extend(vals.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_timing(&self, path: &Path) -> Result<()> {
        let mut s = String::from("step wall_seconds\n");
        for ((step, _), t) in self.rows.iter().zip(&self.wall_seconds) {
            s.push_str(&format!("{step} {t:.3}\n"));
        }
        std::fs::write(path, s)?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

fn check_finite(step: usize, what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            step,
            msg: format!("{what} is {v}"),
        })
    }
}

fn stack_images<T: Scalar>(imgs: &[Tensor<T>], idx: impl Iterator<Item = usize>) -> Result<Tensor<T>> {
    let parts: Vec<&Tensor<T>> = idx.map(|i| &imgs[i]).collect();
    Tensor::stack(&parts)
}

fn draw_batch(rng: &mut ChaCha8Rng, pairs: &[(usize, usize)], batch: usize) -> Vec<(usize, usize)> {
    (0..batch).map(|_| pairs[rng.random_range(0..pairs.len())]).collect()
}

/// An optimizer step that skips (with a warning) updates rejected by the
/// invertibility guard and fails on anything else.
fn guarded_step<T: Scalar, P: Parameters<T>>(opt: &mut Adam<T>, params: &mut P, grads: &P, step: usize) -> Result<()> {
    match opt.step(params, grads) {
        Ok(()) => Ok(()),
        Err(e @ Error::SingularMatrix { .. }) => {
            log::warn!("step {step}: update rejected: {e}");
            Ok(())
        }
        Err(Error::NonFinite(m)) => Err(Error::Diverged { step, msg: m }),
        Err(e) => Err(e),
    }
}

/// Stage-1 objective on a stylized batch: `λ_c·content + λ_s·style` and its
/// gradient w.r.t. the stylized images.
pub(crate) fn stage1_objective<T: Scalar>(
    it: &Tensor<T>,
    ic: &Tensor<T>,
    is: &Tensor<T>,
    fe: &FeatureExtractor<T>,
    cfg: &TrainConfig,
) -> Result<(f64, f64, Tensor<T>)> {
    let (lc, gc) = perceptual_content_loss_grad(it, ic, fe)?;
    let (ls, gs) = style_loss_grad(it, is, fe)?;
    let g = gc.scale(T::lit(cfg.lambda_c)).add(&gs.scale(T::lit(cfg.lambda_s)))?;
    Ok((lc.as_f64(), ls.as_f64(), g))
}

/// Trains the flow on the perceptual objective over stylized pairs.
pub fn train_stage1<T: Scalar>(cfg: &TrainConfig, corpus: &Corpus<T>) -> Result<(FlowParams<T>, TrainLog)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut flow = FlowParams::new(cfg.flow.clone(), &mut rng)?;
    let pairs = pair_styles(corpus, cfg.style_k, cfg.seed)?;
    let fe = FeatureExtractor::new(cfg.flow.in_channels, cfg.extractor_seed);
    let init = stack_images(&corpus.content, 0..corpus.content.len().min(16))?;
    flow.init_actnorm(&init)?;

    let mut opt = Adam::new(cfg.lr);
    let mut log = TrainLog::new(&["loss", "content", "style", "latent_roundtrip"]);
    let start = Instant::now();
    for step in 0..cfg.steps {
        opt.lr = cfg.lr_at(step);
        let batch = draw_batch(&mut rng, &pairs, cfg.batch);
        let ic = stack_images(&corpus.content, batch.iter().map(|p| p.0))?;
        let is = stack_images(&corpus.style, batch.iter().map(|p| p.1))?;
        let (s, tape) = stylize_tape(&ic, &is, &flow, cfg.mode)?;
        let (lc, ls, g_it) = stage1_objective(&s.image, &ic, &is, &fe, cfg)?;
        let loss = cfg.lambda_c * lc + cfg.lambda_s * ls;
        check_finite(step, "stage-1 loss", loss)?;
        let roundtrip = content_loss(&s.latent, &s.image, &flow)?.as_f64();
        if roundtrip > 1e-3 {
            log::warn!("step {step}: latent reconstruction diagnostic {roundtrip:e} exceeds 1e-3");
        }
        let mut grads = flow.zeros_like();
        stylize_backward(&flow, &s, &tape, &g_it, None, &mut grads)?;
        guarded_step(&mut opt, &mut flow, &grads, step)?;
        log.rows.push((step, vec![loss, lc, ls, roundtrip]));
        log.wall_seconds.push(start.elapsed().as_secs_f64());
        log::info!("stage1 step {step}: loss {loss:.5} content {lc:.5} style {ls:.5} roundtrip {roundtrip:.2e}");
    }
    Ok((flow, log))
}

/// Trains the steganography networks on covers stylized by `flow`. With
/// [`Stage::Joint`] the flow is updated too, with the stage-1 objective as
/// an anchor; otherwise it is left untouched.
pub fn train_stage2<T: Scalar>(cfg: &TrainConfig, corpus: &Corpus<T>, flow: FlowParams<T>) -> Result<(Model<T>, TrainLog)> {
    cfg.validate()?;
    if !flow.actnorm_initialized() {
        return Err(Error::Config("stage 2 needs a trained stage-1 flow".into()));
    }
    if flow.config != cfg.flow {
        return Err(Error::CheckpointMismatch("stage-1 flow does not match the configured flow".into()));
    }
    let joint = cfg.stage == Stage::Joint;
    let weights = StegoLossWeights {
        image: cfg.lambda_img,
        message: cfg.lambda_msg,
    };
    // Offset the stream so stage 2 does not replay stage 1's batches.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_0002);
    let mut model = Model {
        flow,
        stego: Some(StegoParams::new(cfg.enc_width, cfg.dec_width, &mut rng)),
    };
    let pairs = pair_styles(corpus, cfg.style_k, cfg.seed)?;
    let fe = FeatureExtractor::new(cfg.flow.in_channels, cfg.extractor_seed);

    // With a frozen flow every pair's cover is fixed: compute once.
    let (mut cover_images, mut cover_latents) = (Vec::new(), Vec::new());
    if !joint {
        for &(c, s) in &pairs {
            let out = stylize(&corpus.content[c], &corpus.style[s], &model.flow, cfg.mode)?;
            cover_images.push(out.image);
            cover_latents.push(out.content_latent);
        }
    }

    let mut stego_opt = Adam::new(cfg.lr);
    let mut flow_opt = Adam::new(cfg.lr);
    let mut log = TrainLog::new(&["loss", "image", "message", "rel_error", "anchor"]);
    let start = Instant::now();
    let cfg_flow = cfg.flow.clone();
    for step in 0..cfg.steps {
        stego_opt.lr = cfg.lr_at(step);
        flow_opt.lr = cfg.lr_at(step);
        let picks: Vec<usize> = (0..cfg.batch).map(|_| rng.random_range(0..pairs.len())).collect();
        let ic = stack_images(&corpus.content, picks.iter().map(|&i| pairs[i].0))?;
        let is = stack_images(&corpus.style, picks.iter().map(|&i| pairs[i].1))?;
        let tape_and_s = if joint {
            Some(stylize_tape(&ic, &is, &model.flow, cfg.mode)?)
        } else {
            None
        };
        let (it, zc) = match &tape_and_s {
            Some((s, _)) => (s.image.clone(), s.content_latent.clone()),
            None => (
                stack_images(&cover_images, picks.iter().copied())?,
                stack_images(&cover_latents, picks.iter().copied())?,
            ),
        };

        let stego = model.stego.as_ref().unwrap();
        let (ie, etape) = stego.encoder.embed_tape(&it, &zc, &cfg_flow)?;
        let (zhat, dtape) = stego.decoder.extract_tape(&ie, &cfg_flow)?;
        let (li, g_img) = mean_norm_loss(&ie, &it)?;
        let (lm, g_msg) = mean_norm_loss(&zhat, &zc)?;
        let total = stego_loss(li, lm, weights).as_f64();
        let rel = {
            let err = sample_norms(&zhat, &zc)?;
            let refn = sample_norms(&zc, &Tensor::zeros(zc.dims()))?;
            err.iter().zip(&refn).map(|(e, r)| e.as_f64() / r.as_f64().max(1e-12)).sum::<f64>() / err.len() as f64
        };

        let mut g = stego.zeros_like();
        let g_msg_w = g_msg.scale(T::lit(weights.message));
        let g_img_w = g_img.scale(T::lit(weights.image));
        let mut g_ie = stego.decoder.backward(&dtape, &g_msg_w, &cfg_flow, &mut g.decoder)?;
        g_ie.add_assign(&g_img_w)?;
        let (g_it, g_z) = stego.encoder.backward(&etape, &g_ie, &cfg_flow, &mut g.encoder)?;

        let mut anchor = 0.0;
        if let Some((s, tape)) = &tape_and_s {
            // I_t also enters the image loss directly, z_c the message loss.
            let mut g_cover = g_it.sub(&g_img_w)?;
            let g_latent = g_z.sub(&g_msg_w)?;
            if cfg.lambda_anchor > 0.0 {
                let (lc, ls, ga) = stage1_objective(&s.image, &ic, &is, &fe, cfg)?;
                anchor = cfg.lambda_c * lc + cfg.lambda_s * ls;
                g_cover.add_assign(&ga.scale(T::lit(cfg.lambda_anchor)))?;
            }
            let mut fg = model.flow.zeros_like();
            stylize_backward(&model.flow, s, tape, &g_cover, Some(&g_latent), &mut fg)?;
            guarded_step(&mut flow_opt, &mut model.flow, &fg, step)?;
        }
        let loss = total + cfg.lambda_anchor * anchor;
        check_finite(step, "stage-2 loss", loss)?;
        guarded_step(&mut stego_opt, model.stego.as_mut().unwrap(), &g, step)?;

        log.rows.push((step, vec![loss, li.as_f64(), lm.as_f64(), rel, anchor]));
        log.wall_seconds.push(start.elapsed().as_secs_f64());
        if (step + 1) % MONOTONE_WINDOW == 0 && step + 1 >= 2 * MONOTONE_WINDOW {
            let mean = |a: usize| {
                log.rows[a..a + MONOTONE_WINDOW].iter().map(|(_, v)| v[0]).sum::<f64>() / MONOTONE_WINDOW as f64
            };
            let end = step + 1;
            if mean(end - MONOTONE_WINDOW) > mean(end - 2 * MONOTONE_WINDOW) {
                log::warn!("step {step}: stage-2 loss rose over the last {MONOTONE_WINDOW} steps");
                log.window_violations.push(step);
            }
        }
        log::info!("stage2 step {step}: loss {loss:.5} image {li:.5} message {lm:.5} rel {rel:.4}");
    }
    Ok((model, log))
}
