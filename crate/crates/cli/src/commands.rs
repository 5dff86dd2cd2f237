//! Command implementations. Each returns `Ok(true)` on success, `Ok(false)`
//! when a reported check failed.

use std::path::{Path, PathBuf};

use leakfree::evaluation::{
    block_means, drift_experiment, l2_metric, non_decreasing, reverse_eval, reverse_passthrough, serial_chain,
    serial_eval, ssim_metric, train_baseline, write_drift_table, write_frames, write_metric_table, DriftPipeline,
    Summary,
};
use leakfree::imageio::{load_png, save_png};
use leakfree::pipeline::{
    load_checkpoint, load_checkpoint_for, load_corpus, pair_styles, save_checkpoint, synth_corpus, Checkpoint, Corpus,
    Model, Stage, TrainConfig,
};
use leakfree::stego::StegoParams;
use leakfree::transfer::stylize as stylize_images;
use leakfree::{Error, Result, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{ConfigArgs, Experiment};

pub const BASELINE_STEPS: usize = 300;
pub const CHECKPOINT_FILE: &str = "model.ckpt";
/// Largest per-round L∞ distance the flow drift curve may reach.
pub const FLOW_DRIFT_BOUND: f64 = 1e-2;
pub const PASSTHROUGH_SSIM: f64 = 0.99;

fn resolve_config(base: TrainConfig, args: &ConfigArgs) -> Result<TrainConfig> {
    let mut cfg = base;
    if let Some(path) = &args.config {
        cfg.merge_text(&std::fs::read_to_string(path)?)?;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(s) = args.steps {
        cfg.steps = s;
    }
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare_out(out: &Path, snapshot: &TrainConfig) -> Result<()> {
    std::fs::create_dir_all(out.join("frames"))?;
    std::fs::write(out.join("config.snapshot"), snapshot.to_text())?;
    Ok(())
}

fn corpus_for(cfg: &TrainConfig, dirs: Option<&(PathBuf, PathBuf)>) -> Result<Corpus<f32>> {
    match dirs {
        Some((c, s)) => load_corpus(c, s, cfg.image_size, cfg.seed),
        None => Ok(synth_corpus(cfg.seed, cfg.synth_images, cfg.image_size)),
    }
}

fn load_image_for(path: &Path, ckpt: &Checkpoint) -> Result<Tensor<f32>> {
    let img = load_png::<f32>(path)?;
    ckpt.model.flow.config.check_image(img.dims())?;
    Ok(img)
}

pub fn train(
    stage: &str,
    args: &ConfigArgs,
    dirs: Option<(PathBuf, PathBuf)>,
    stage1: Option<&Path>,
    out: &Path,
) -> Result<bool> {
    let mut base = TrainConfig::default();
    base.stage = stage.parse()?;
    let mut cfg = resolve_config(base, args)?;
    // The flag wins over a `stage` line in the config file.
    cfg.stage = stage.parse()?;
    let flow = match cfg.stage {
        Stage::One => None,
        Stage::Two | Stage::Joint => {
            let path = stage1.ok_or_else(|| Error::Config("stage 2 and joint training need --ckpt".into()))?;
            if !path.exists() {
                return Err(Error::Config(format!("stage-1 checkpoint {} not found", path.display())));
            }
            Some(load_checkpoint_for(path, &cfg.flow)?.model.flow)
        }
    };
    prepare_out(out, &cfg)?;
    let corpus = corpus_for(&cfg, dirs.as_ref())?;
    let (model, log) = match flow {
        None => {
            let (flow, log) = leakfree::pipeline::train_stage1(&cfg, &corpus)?;
            (Model { flow, stego: None }, log)
        }
        Some(flow) => leakfree::pipeline::train_stage2(&cfg, &corpus, flow)?,
    };
    save_checkpoint(&out.join(CHECKPOINT_FILE), &cfg, &model)?;
    log.write_csv(&out.join("metrics.csv"))?;
    log.write_timing(&out.join("timing.txt"))?;

    let (c, s) = pair_styles(&corpus, cfg.style_k, cfg.seed)?[0];
    let sample = stylize_images(&corpus.content[c], &corpus.style[s], &model.flow, cfg.mode)?;
    save_png(&sample.image, &out.join("frames").join("sample_stylized.png"))?;
    if let Some(stego) = &model.stego {
        let ie = stego.encoder.embed(&sample.image, &sample.content_latent, &cfg.flow)?;
        save_png(&ie, &out.join("frames").join("sample_stego.png"))?;
    }

    let mut summary = Summary::new();
    summary.set("stage", cfg.stage);
    summary.set("steps", log.rows.len());
    if let Some((_, last)) = log.rows.last() {
        for (name, v) in log.columns.iter().zip(last) {
            summary.set(&format!("final_{name}"), v);
        }
    }
    if let Some(roundtrip) = log.column("latent_roundtrip") {
        let worst = roundtrip.iter().copied().fold(0.0, f64::max);
        summary.set("latent_roundtrip_max", worst);
        summary.check("latent_roundtrip_within_1e-3", worst <= 1e-3);
    }
    summary.set("monotone_window_violations", log.window_violations.len());
    summary.set("checkpoint", CHECKPOINT_FILE);
    summary.write(&out.join("summary.txt"))?;
    Ok(true)
}

pub fn stylize(content: &Path, style: &Path, ckpt_path: &Path, embed: bool, seed: u64, out: &Path) -> Result<bool> {
    let ckpt = load_checkpoint(ckpt_path)?;
    let ic = load_image_for(content, &ckpt)?;
    let is = load_image_for(style, &ckpt)?;
    let cfg = &ckpt.config;
    prepare_out(out, cfg)?;
    let s = stylize_images(&ic, &is, &ckpt.model.flow, cfg.mode)?;
    save_png(&s.image, &out.join("stylized.png"))?;
    let mut summary = Summary::new();
    summary.set("mode", cfg.mode);
    summary.set("embedded", embed);
    if embed {
        let stego = match &ckpt.model.stego {
            Some(st) => {
                summary.set("stego", "checkpoint");
                st.clone()
            }
            None => {
                log::warn!("checkpoint has no stego networks; embedding with an untrained encoder");
                summary.set("stego", "untrained");
                StegoParams::new(cfg.enc_width, cfg.dec_width, &mut ChaCha8Rng::seed_from_u64(seed))
            }
        };
        let ie = stego.encoder.embed(&s.image, &s.content_latent, &cfg.flow)?;
        summary.set("stego_l2_vs_stylized", l2_metric(&ie, &s.image)?);
        save_png(&ie, &out.join("stego.png"))?;
    }
    summary.write(&out.join("summary.txt"))?;
    Ok(true)
}

fn stego_of(ckpt: &Checkpoint) -> Result<&StegoParams<f32>> {
    ckpt.model
        .stego
        .as_ref()
        .ok_or_else(|| Error::Config("checkpoint has no stego networks; train stage 2 first".into()))
}

pub fn destylize(image: &Path, ckpt_path: &Path, original: Option<&Path>, out: &Path) -> Result<bool> {
    let ckpt = load_checkpoint(ckpt_path)?;
    let stego = stego_of(&ckpt)?;
    let ie = load_image_for(image, &ckpt)?;
    let cfg = &ckpt.config;
    prepare_out(out, cfg)?;
    let z = stego.decoder.extract(&ie, &cfg.flow)?;
    let rec = ckpt.model.flow.inverse(&z)?;
    save_png(&rec, &out.join("destylized.png"))?;
    let mut summary = Summary::new();
    if let Some(path) = original {
        let orig = load_png::<f32>(path)?;
        orig.expect_dims(rec.dims(), "original image")?;
        // Compare what was written, after 8-bit export.
        let written = load_png::<f32>(&out.join("destylized.png"))?;
        summary.set("ssim_vs_original", ssim_metric(&written, &orig)?);
        summary.set("l2_vs_original", l2_metric(&written, &orig)?);
    }
    summary.write(&out.join("summary.txt"))?;
    Ok(true)
}

pub fn serial(image: &Path, styles: &[PathBuf], ckpt_path: &Path, out: &Path) -> Result<bool> {
    let ckpt = load_checkpoint(ckpt_path)?;
    let content = load_image_for(image, &ckpt)?;
    let styles: Vec<Tensor<f32>> = styles.iter().map(|p| load_image_for(p, &ckpt)).collect::<Result<_>>()?;
    let cfg = &ckpt.config;
    prepare_out(out, cfg)?;
    let run = serial_chain(&ckpt.model, &content, &styles, cfg.mode)?;
    write_frames(&out.join("frames"), "round", &run.rounds)?;
    save_png(&run.stego_image, &out.join("final.png"))?;
    save_png(&run.recovered, &out.join("recovered.png"))?;

    let mut rows = Vec::new();
    for (k, (img, s)) in run.rounds.iter().zip(&styles).enumerate() {
        let direct = stylize_images(&content, s, &ckpt.model.flow, cfg.mode)?.image;
        rows.push(leakfree::evaluation::MetricRow {
            experiment: "serial",
            method: "ours",
            quantity: format!("round_{}_vs_direct", k + 1),
            l2: l2_metric(img, &direct)?,
            ssim: ssim_metric(img, &direct)?,
        });
    }
    write_metric_table(&rows, &out.join("metrics.csv"))?;
    let mut summary = Summary::new();
    summary.set("rounds", styles.len());
    let last = rows.last().unwrap();
    summary.set("final_ssim_vs_direct", last.ssim);
    summary.set("final_l2_vs_direct", last.l2);
    summary.set("recovered_ssim_vs_content", ssim_metric(&run.recovered, &content)?);
    summary.write(&out.join("summary.txt"))?;
    Ok(true)
}

pub struct EvalArgs {
    pub experiment: Experiment,
    pub ckpt: PathBuf,
    pub cfg: ConfigArgs,
    pub rounds: usize,
    pub contents: usize,
    pub num_styles: usize,
    pub baseline_steps: usize,
    pub dirs: Option<(PathBuf, PathBuf)>,
    pub out: PathBuf,
}

fn take_cycled(images: &[Tensor<f32>], n: usize, what: &str) -> Result<Vec<Tensor<f32>>> {
    if images.is_empty() || n == 0 {
        return Err(Error::Config(format!("evaluation needs at least one {what} image")));
    }
    Ok((0..n).map(|i| images[i % images.len()].clone()).collect())
}

pub fn eval(a: &EvalArgs) -> Result<bool> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let cfg = resolve_config(ckpt.config.clone(), &a.cfg)?;
    if cfg.flow != ckpt.model.flow.config {
        return Err(Error::Config("flow settings cannot be overridden at evaluation time".into()));
    }
    prepare_out(&a.out, &cfg)?;
    let corpus = corpus_for(&cfg, a.dirs.as_ref())?;
    let contents = take_cycled(&corpus.content, a.contents, "content")?;
    let contents = Tensor::stack(&contents.iter().collect::<Vec<_>>())?;
    let styles = take_cycled(&corpus.style, a.num_styles, "style")?;
    let (baseline, losses) = train_baseline(&corpus, a.baseline_steps, cfg.seed)?;

    let mut summary = Summary::new();
    summary.set("experiment", format!("{:?}", a.experiment).to_lowercase());
    summary.set("l2", "per-pixel mean squared error");
    summary.set("baseline_steps", a.baseline_steps);
    if let (Some(first), Some(last)) = (losses.first(), losses.last()) {
        summary.set("baseline_loss_first", first);
        summary.set("baseline_loss_last", last);
    }
    let frames = a.out.join("frames");
    match a.experiment {
        Experiment::Drift => {
            let flow = drift_experiment(DriftPipeline::Flow(&ckpt.model.flow), &contents, a.rounds, cfg.mode)?;
            let base = drift_experiment(DriftPipeline::Baseline(&baseline), &contents, a.rounds, cfg.mode)?;
            write_drift_table(&[("flow", &flow.curve), ("baseline", &base.curve)], &a.out.join("metrics.csv"))?;
            write_frames(&frames, "flow", &flow.frames)?;
            write_frames(&frames, "baseline", &base.frames)?;
            let flow_max = flow.curve.linf.iter().copied().fold(0.0, f64::max);
            let (fs, bs) = (*flow.curve.ssim.last().unwrap(), *base.curve.ssim.last().unwrap());
            let trend = block_means(&base.curve.l2, 5);
            summary.set("rounds", a.rounds);
            summary.set("flow_linf_max", flow_max);
            summary.set("flow_ssim_final", fs);
            summary.set("baseline_ssim_final", bs);
            summary.set(
                "baseline_l2_trend",
                trend.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" "),
            );
            summary.check("flow_linf_within_bound", flow_max <= FLOW_DRIFT_BOUND);
            summary.check("baseline_ssim_below_flow", bs < fs);
            summary.check("baseline_l2_non_decreasing", non_decreasing(&trend));
        }
        Experiment::Serial => {
            let rows = serial_eval(&ckpt.model, &baseline, &contents, &styles, cfg.mode)?;
            write_metric_table(&rows, &a.out.join("metrics.csv"))?;
            let run = serial_chain(&ckpt.model, &contents, &styles, cfg.mode)?;
            write_frames(&frames, "ours", &run.rounds)?;
            let ours = rows[0].ssim;
            let base = rows[2].ssim;
            summary.set("ours_ssim", ours);
            summary.set("baseline_ssim", base);
            summary.set("ours_recovered_ssim", rows[1].ssim);
            summary.check("ours_above_baseline", ours > base);
        }
        Experiment::Reverse => {
            let mut rows = reverse_eval(&ckpt.model, &baseline, &contents, &styles, cfg.mode)?;
            let pass = reverse_passthrough(&ckpt.model.flow, &contents, &styles, cfg.mode)?;
            rows.push(pass.clone());
            write_metric_table(&rows, &a.out.join("metrics.csv"))?;
            let (ours, base) = (rows[0].ssim, rows[1].ssim);
            summary.set("ours_ssim", ours);
            summary.set("baseline_ssim", base);
            summary.set("passthrough_ssim", pass.ssim);
            summary.check("ours_above_baseline", ours > base);
            summary.check("passthrough_at_least_0.99", pass.ssim >= PASSTHROUGH_SSIM);
        }
    }
    summary.write(&a.out.join("summary.txt"))?;
    for line in summary.to_text().lines() {
        println!("{line}");
    }
    Ok(summary.all_checks_pass())
}
