use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = "image_size = 16
batch = 2
steps = 2
lr = 1e-3
n_blocks = 2
steps_per_block = 2
hidden_width = 8
enc_width = 8
dec_width = 8
synth_images = 8
";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_leakfree"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let f = Fixture {
            dir: tempfile::tempdir().unwrap(),
        };
        std::fs::write(f.path("small.cfg"), SMALL).unwrap();
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, stage: &str, out: &str, extra: &[&str]) -> Output {
        let cfg = self.path("small.cfg");
        let out = self.path(out);
        let mut args = vec!["train", "--stage", stage, "--config", s(&cfg), "--out", s(&out)];
        args.extend_from_slice(extra);
        run(&args)
    }

    fn png(&self, name: &str, size: u32, seed: u32) -> PathBuf {
        let p = self.path(name);
        image::RgbImage::from_fn(size, size, |x, y| {
            image::Rgb([
                (x * 13 + y * 3 + seed) as u8,
                (y * 11 + seed * 7) as u8,
                ((x ^ y) * 9 + seed) as u8,
            ])
        })
        .save(&p)
        .unwrap();
        p
    }

    /// Stage-1 then stage-2 checkpoints.
    fn checkpoints(&self) -> (PathBuf, PathBuf) {
        assert_eq!(code(&self.train("1", "s1", &[])), 0);
        let c1 = self.path("s1/model.ckpt");
        assert_eq!(code(&self.train("2", "s2", &["--ckpt", s(&c1)])), 0);
        (c1, self.path("s2/model.ckpt"))
    }
}

fn read_rgb(p: &Path) -> Vec<u8> {
    image::open(p).unwrap().to_rgb8().into_raw()
}

#[test]
fn selfcheck_passes_and_negative_control_fails() {
    let ok = run(&["selfcheck"]);
    let text = String::from_utf8_lossy(&ok.stdout);
    assert_eq!(code(&ok), 0, "{text}");
    assert!(text.lines().filter(|l| l.starts_with("PASS")).count() >= 10);
    let bad = run(&["selfcheck", "--tol-scale", "0"]);
    assert_eq!(code(&bad), 1);
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL"));
}

#[test]
fn stage1_writes_run_dir_and_is_reproducible() {
    let f = Fixture::new();
    assert_eq!(code(&f.train("1", "a", &[])), 0);
    assert_eq!(code(&f.train("1", "b", &[])), 0);
    for name in ["model.ckpt", "model.ckpt.config", "config.snapshot", "metrics.csv", "summary.txt", "frames"] {
        assert!(f.path("a").join(name).exists(), "{name} missing");
    }
    for name in ["model.ckpt", "metrics.csv", "config.snapshot"] {
        assert_eq!(
            std::fs::read(f.path("a").join(name)).unwrap(),
            std::fs::read(f.path("b").join(name)).unwrap(),
            "{name} differs"
        );
    }
    let snap = std::fs::read_to_string(f.path("a/config.snapshot")).unwrap();
    assert!(snap.contains("image_size = 16"));
    assert!(snap.contains("stage = 1"));
    let summary = std::fs::read_to_string(f.path("a/summary.txt")).unwrap();
    assert!(summary.contains("latent_roundtrip_within_1e-3=pass"), "{summary}");
}

#[test]
fn usage_and_config_errors_exit_2() {
    let f = Fixture::new();
    assert_eq!(code(&f.train("2", "x", &[])), 2);
    assert_eq!(code(&f.train("2", "x", &["--ckpt", "/nonexistent/model.ckpt"])), 2);
    assert_eq!(code(&f.train("3", "x", &[])), 2);
    assert_eq!(code(&f.train("1", "x", &["--set", "no_such_key=1"])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
    let img = f.png("c.png", 16, 1);
    let out = f.path("st");
    assert_eq!(
        code(&run(&["stylize", "--content", s(&img), "--style", s(&img), "--ckpt", "/nonexistent", "--out", s(&out)])),
        2
    );
}

#[test]
fn divergence_exits_3() {
    let f = Fixture::new();
    assert_eq!(code(&f.train("1", "x", &["--set", "lambda_s=1.7e308"])), 3);
}

#[test]
fn stylize_embed_destylize_and_serial() {
    let f = Fixture::new();
    let (c1, c2) = f.checkpoints();
    let content = f.png("content.png", 16, 3);
    let style = f.png("style.png", 16, 40);

    // Self-stylization returns the input.
    let out = f.path("self");
    let o = run(&["stylize", "--content", s(&content), "--style", s(&content), "--ckpt", s(&c1), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let a = leakfree::imageio::load_png::<f32>(&out.join("stylized.png")).unwrap();
    let b = leakfree::imageio::load_png::<f32>(&content).unwrap();
    assert!(leakfree::evaluation::ssim_metric(&a, &b).unwrap() >= 0.95);

    // Untrained encoder: the stego file matches the stylized file pixel for pixel.
    let out = f.path("embed");
    let o = run(&[
        "stylize", "--content", s(&content), "--style", s(&style), "--ckpt", s(&c1), "--embed", "--out", s(&out),
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(read_rgb(&out.join("stylized.png")), read_rgb(&out.join("stego.png")));

    // Trained stego networks, then de-stylization twice.
    let out = f.path("embed2");
    let o = run(&[
        "stylize", "--content", s(&content), "--style", s(&style), "--ckpt", s(&c2), "--embed", "--out", s(&out),
    ]);
    assert_eq!(code(&o), 0);
    let stego_png = out.join("stego.png");
    for d in ["d1", "d2"] {
        let o = run(&[
            "destylize", "--image", s(&stego_png), "--ckpt", s(&c2), "--original", s(&content), "--out",
            s(&f.path(d)),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(
        std::fs::read(f.path("d1/destylized.png")).unwrap(),
        std::fs::read(f.path("d2/destylized.png")).unwrap()
    );
    assert!(std::fs::read_to_string(f.path("d1/summary.txt")).unwrap().contains("ssim_vs_original="));

    // Stego networks are required; sizes must fit the flow.
    let o = run(&["destylize", "--image", s(&stego_png), "--ckpt", s(&c1), "--out", s(&f.path("d3"))]);
    assert_eq!(code(&o), 2);
    let odd = f.png("odd.png", 18, 1);
    let o = run(&["destylize", "--image", s(&odd), "--ckpt", s(&c2), "--out", s(&f.path("d4"))]);
    assert_eq!(code(&o), 2);

    // One style: serial equals stylize with embedding.
    let out = f.path("serial");
    let o = run(&["serial", "--image", s(&content), "--styles", s(&style), "--ckpt", s(&c2), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_rgb(&out.join("final.png")), read_rgb(&stego_png));
    let styles = format!("{},{}", s(&style), s(&content));
    let out = f.path("serial2");
    let o = run(&["serial", "--image", s(&content), "--styles", &styles, "--ckpt", s(&c2), "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    assert!(out.join("frames/round_001.png").exists());
    assert_eq!(std::fs::read_to_string(out.join("metrics.csv")).unwrap().lines().count(), 3);
}

#[test]
fn eval_writes_tables_and_checks() {
    let f = Fixture::new();
    let (c1, c2) = f.checkpoints();
    let cases: [(&str, &Path, &str); 3] = [
        ("drift", &c1, "baseline_ssim_below_flow="),
        ("serial", &c2, "ours_above_baseline="),
        ("reverse", &c2, "passthrough_at_least_0.99="),
    ];
    for (exp, ckpt, key) in cases {
        let out = f.path(&format!("eval_{exp}"));
        let o = run(&[
            "eval", "--experiment", exp, "--ckpt", s(ckpt), "--rounds", "5", "--contents", "2", "--baseline-steps",
            "3", "--out", s(&out),
        ]);
        let c = code(&o);
        assert!(c == 0 || c == 1, "{exp}: {c} {}", String::from_utf8_lossy(&o.stderr));
        let summary = std::fs::read_to_string(out.join("summary.txt")).unwrap();
        assert!(summary.contains(key), "{exp}: {summary}");
        assert_eq!(c == 0, !summary.contains("=fail"));
        assert!(out.join("metrics.csv").exists() && out.join("config.snapshot").exists());
    }
    assert!(f.path("eval_drift/frames/flow_005.png").exists());
    // Serial and reverse need stego networks.
    let o = run(&["eval", "--experiment", "serial", "--ckpt", s(&c1), "--out", s(&f.path("e"))]);
    assert_eq!(code(&o), 2);
}
