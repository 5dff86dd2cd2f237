//! `leakfree`: training, stylization, de-stylization and experiments.

mod commands;
mod selfcheck;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use leakfree::Error;

/// Exit codes.
pub const EXIT_OK: u8 = 0;
pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DIVERGED: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "leakfree", version, about = "Leak-free arbitrary style transfer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config sources shared by commands that resolve a `TrainConfig`.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// Flat `key = value` file applied over the defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `steps`.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    Drift,
    Serial,
    Reverse,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the flow (stage 1), the stego networks (stage 2), or both (joint).
    Train {
        #[arg(long)]
        stage: String,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Directory of content PNGs; the synthetic corpus is used when omitted.
        #[arg(long, requires = "style_dir")]
        content_dir: Option<PathBuf>,
        #[arg(long, requires = "content_dir")]
        style_dir: Option<PathBuf>,
        /// Stage-1 checkpoint (required for stage 2 and joint).
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stylize one image, optionally hiding its content latent.
    Stylize {
        #[arg(long)]
        content: PathBuf,
        #[arg(long)]
        style: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Also write the stego image with the content latent hidden inside.
        #[arg(long)]
        embed: bool,
        /// Seed for the untrained encoder used when the checkpoint has none.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recover the content image from a stego image.
    Destylize {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Original content, for reporting SSIM and L2 in the summary.
        #[arg(long)]
        original: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply several styles in sequence through the hidden latent.
    Serial {
        #[arg(long)]
        image: PathBuf,
        /// Comma-separated style images, applied in order.
        #[arg(long, value_delimiter = ',', required = true)]
        styles: Vec<PathBuf>,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one of the leakage experiments against the pooling baseline.
    Eval {
        #[arg(long, value_enum)]
        experiment: Experiment,
        #[arg(long)]
        ckpt: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 50)]
        rounds: usize,
        /// Number of content images evaluated.
        #[arg(long, default_value_t = 8)]
        contents: usize,
        /// Number of chained styles (serial) or paired styles (reverse).
        #[arg(long = "num-styles", default_value_t = 3)]
        num_styles: usize,
        #[arg(long, default_value_t = commands::BASELINE_STEPS)]
        baseline_steps: usize,
        #[arg(long, requires = "style_dir")]
        content_dir: Option<PathBuf>,
        #[arg(long, requires = "content_dir")]
        style_dir: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fast invariant checks; exits 1 if any fails.
    Selfcheck {
        /// Multiplies every tolerance; values below 1 tighten the checks.
        #[arg(long, default_value_t = 1.0)]
        tol_scale: f64,
    },
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Diverged { .. } | Error::NonFinite(_) | Error::SingularMatrix { .. } | Error::SingularScale { .. } => {
            EXIT_DIVERGED
        }
        _ => EXIT_USAGE,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            stage,
            cfg,
            content_dir,
            style_dir,
            ckpt,
            out,
        } => commands::train(&stage, &cfg, content_dir.zip(style_dir), ckpt.as_deref(), &out),
        Command::Stylize {
            content,
            style,
            ckpt,
            embed,
            seed,
            out,
        } => commands::stylize(&content, &style, &ckpt, embed, seed, &out),
        Command::Destylize {
            image,
            ckpt,
            original,
            out,
        } => commands::destylize(&image, &ckpt, original.as_deref(), &out),
        Command::Serial {
            image,
            styles,
            ckpt,
            out,
        } => commands::serial(&image, &styles, &ckpt, &out),
        Command::Eval {
            experiment,
            ckpt,
            cfg,
            rounds,
            contents,
            num_styles,
            baseline_steps,
            content_dir,
            style_dir,
            out,
        } => commands::eval(&commands::EvalArgs {
            experiment,
            ckpt,
            cfg,
            rounds,
            contents,
            num_styles,
            baseline_steps,
            dirs: content_dir.zip(style_dir),
            out,
        }),
        Command::Selfcheck { tol_scale } => Ok(selfcheck::run(tol_scale)),
    };
    match result {
        Ok(true) => ExitCode::from(EXIT_OK),
        Ok(false) => ExitCode::from(EXIT_CHECK_FAILED),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
