//! Flat `key = value` training configuration.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::flow::FlowConfig;
use crate::perceptual::EXTRACTOR_SEED;
use crate::transfer::TransferMode;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Stage {
    #[default]
    One,
    Two,
    /// Stego losses also update the flow, anchored by the stage-1 objective.
    Joint,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::One => "1",
            Stage::Two => "2",
            Stage::Joint => "joint",
        })
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" => Ok(Stage::One),
            "2" => Ok(Stage::Two),
            "joint" => Ok(Stage::Joint),
            other => Err(Error::Config(format!("unknown stage {other:?} (expected 1, 2 or joint)"))),
        }
    }
}

/// Learning-rate schedule over `steps`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from `lr` down to zero at the last step.
    Cosine,
}

impl fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LrSchedule::Constant => "constant",
            LrSchedule::Cosine => "cosine",
        })
    }
}

impl FromStr for LrSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(LrSchedule::Constant),
            "cosine" => Ok(LrSchedule::Cosine),
            other => Err(Error::Config(format!(
                "unknown lr_schedule {other:?} (expected constant or cosine)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    pub image_size: usize,
    pub batch: usize,
    pub steps: usize,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub lambda_c: f64,
    pub lambda_s: f64,
    pub lambda_img: f64,
    pub lambda_msg: f64,
    pub lambda_anchor: f64,
    pub mode: TransferMode,
    pub seed: u64,
    pub flow: FlowConfig,
    pub enc_width: usize,
    pub dec_width: usize,
    pub extractor_seed: u64,
    /// Number of style images sampled for pairing.
    pub style_k: usize,
    /// Synthetic corpus size when no image directories are given.
    pub synth_images: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage: Stage::One,
            image_size: 64,
            batch: 4,
            steps: 200,
            lr: 1e-4,
            lr_schedule: LrSchedule::Constant,
            lambda_c: 1.0,
            lambda_s: 10.0,
            lambda_img: 1.0,
            lambda_msg: 1.0,
            lambda_anchor: 1.0,
            mode: TransferMode::MeanStd,
            seed: 0,
            flow: FlowConfig::default(),
            enc_width: 32,
            dec_width: 32,
            extractor_seed: EXTRACTOR_SEED,
            style_k: 10,
            synth_images: 16,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_seed(key: &str, value: &str) -> Result<u64> {
    match value.strip_prefix("0x").or_else(|| value.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16).map_err(|_| Error::Config(format!("{key}: bad hex {value:?}"))),
        None => parse(key, value),
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 23] = [
        "stage",
        "image_size",
        "batch",
        "steps",
        "lr",
        "lr_schedule",
        "lambda_c",
        "lambda_s",
        "lambda_img",
        "lambda_msg",
        "lambda_anchor",
        "mode",
        "seed",
        "in_channels",
        "n_blocks",
        "steps_per_block",
        "squeeze_factor",
        "hidden_width",
        "enc_width",
        "dec_width",
        "extractor_seed",
        "style_k",
        "synth_images",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "stage" => self.stage = v.parse()?,
            "image_size" => self.image_size = parse(key, v)?,
            "batch" => self.batch = parse(key, v)?,
            "steps" => self.steps = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "lr_schedule" => self.lr_schedule = v.parse()?,
            "lambda_c" => self.lambda_c = parse(key, v)?,
            "lambda_s" => self.lambda_s = parse(key, v)?,
            "lambda_img" => self.lambda_img = parse(key, v)?,
            "lambda_msg" => self.lambda_msg = parse(key, v)?,
            "lambda_anchor" => self.lambda_anchor = parse(key, v)?,
            "mode" => self.mode = v.parse()?,
            "seed" => self.seed = parse_seed(key, v)?,
            "in_channels" => self.flow.in_channels = parse(key, v)?,
            "n_blocks" => self.flow.n_blocks = parse(key, v)?,
            "steps_per_block" => self.flow.steps_per_block = parse(key, v)?,
            "squeeze_factor" => self.flow.squeeze_factor = parse(key, v)?,
            "hidden_width" => self.flow.hidden_width = parse(key, v)?,
            "enc_width" => self.enc_width = parse(key, v)?,
            "dec_width" => self.dec_width = parse(key, v)?,
            "extractor_seed" => self.extractor_seed = parse_seed(key, v)?,
            "style_k" => self.style_k = parse(key, v)?,
            "synth_images" => self.synth_images = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "stage" => self.stage.to_string(),
            "image_size" => self.image_size.to_string(),
            "batch" => self.batch.to_string(),
            "steps" => self.steps.to_string(),
            "lr" => self.lr.to_string(),
            "lr_schedule" => self.lr_schedule.to_string(),
            "lambda_c" => self.lambda_c.to_string(),
            "lambda_s" => self.lambda_s.to_string(),
            "lambda_img" => self.lambda_img.to_string(),
            "lambda_msg" => self.lambda_msg.to_string(),
            "lambda_anchor" => self.lambda_anchor.to_string(),
            "mode" => self.mode.to_string(),
            "seed" => self.seed.to_string(),
            "in_channels" => self.flow.in_channels.to_string(),
            "n_blocks" => self.flow.n_blocks.to_string(),
            "steps_per_block" => self.flow.steps_per_block.to_string(),
            "squeeze_factor" => self.flow.squeeze_factor.to_string(),
            "hidden_width" => self.flow.hidden_width.to_string(),
            "enc_width" => self.enc_width.to_string(),
            "dec_width" => self.dec_width.to_string(),
            "extractor_seed" => format!("{:#x}", self.extractor_seed),
            "style_k" => self.style_k.to_string(),
            "synth_images" => self.synth_images.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        c.merge_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// One `key = value` line per field, in [`Self::KEYS`] order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in Self::KEYS {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&self.get(k).expect("every listed key is gettable"));
            out.push('\n');
        }
        out
    }

    /// Learning rate for step `step` (0-based) under the schedule.
    pub fn lr_at(&self, step: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine => {
                let t = step as f64 / self.steps.max(1) as f64;
                0.5 * self.lr * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.flow.validate()?;
        let bad = |m: String| Err(Error::Config(m));
        if self.image_size == 0 {
            return bad("image_size must be positive".into());
        }
        let d = self.flow.spatial_divisor();
        if !self.image_size.is_multiple_of(d) {
            return bad(format!("image_size {} not divisible by flow factor {d}", self.image_size));
        }
        // The feature extractor halves resolution three times.
        if !self.image_size.is_multiple_of(8) {
            return bad(format!("image_size {} not divisible by extractor stride 8", self.image_size));
        }
        if self.batch == 0 {
            return bad("batch must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        for (name, v) in [
            ("lambda_c", self.lambda_c),
            ("lambda_s", self.lambda_s),
            ("lambda_img", self.lambda_img),
            ("lambda_msg", self.lambda_msg),
            ("lambda_anchor", self.lambda_anchor),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        crate::stego::StegoLossWeights {
            image: self.lambda_img,
            message: self.lambda_msg,
        }
        .validate()?;
        if self.enc_width == 0 || self.dec_width == 0 || self.style_k == 0 {
            return bad("enc_width, dec_width and style_k must be positive".into());
        }
        Ok(())
    }
}
