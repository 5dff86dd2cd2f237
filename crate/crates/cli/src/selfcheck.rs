//! Fast invariant suite behind `leakfree selfcheck`.

use std::time::Instant;

use leakfree::flow::{squeeze, unsqueeze, FlowConfig, FlowParams};
use leakfree::perceptual::{style_loss, style_loss_grad, FeatureExtractor};
use leakfree::pipeline::{decode_records, encode_records};
use leakfree::stego::{grid_to_payload, payload_to_grid};
use leakfree::tensor::gradcheck::{dot, grad_check_strided, projection};
use leakfree::tensor::{channel_stats, Activation, Conv2d};
use leakfree::transfer::{adain, verify_transfer, verify_unbiased};
use leakfree::{Result, Tensor, TransferMode};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Check {
    name: &'static str,
    value: f64,
    tol: f64,
    /// Negative controls pass when the value exceeds the tolerance.
    expect_above: bool,
}

impl Check {
    fn passed(&self) -> bool {
        if self.expect_above {
            self.value > self.tol
        } else {
            self.value <= self.tol
        }
    }
}

fn small_flow_config() -> FlowConfig {
    FlowConfig {
        n_blocks: 2,
        steps_per_block: 2,
        hidden_width: 16,
        ..FlowConfig::default()
    }
}

fn bits_differ(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).filter(|(x, y)| x.to_bits() != y.to_bits()).count() as f64
}

fn bijectivity64() -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let flow = FlowParams::<f64>::random_dense(small_flow_config(), 0.05, &mut rng)?;
    let mut worst: f64 = 0.0;
    for _ in 0..4 {
        let x = Tensor::<f64>::rand_uniform([1, 3, 32, 32], 0.0, 1.0, &mut rng);
        worst = worst.max(flow.inverse(&flow.forward(&x)?)?.max_abs_diff(&x)?);
    }
    Ok(worst)
}

fn bijectivity32() -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let flow = FlowParams::<f32>::random_dense(small_flow_config(), 0.05, &mut rng)?;
    let mut worst: f64 = 0.0;
    for _ in 0..4 {
        let x = Tensor::<f32>::rand_uniform([1, 3, 32, 32], 0.0, 1.0, &mut rng);
        worst = worst.max(flow.inverse(&flow.forward(&x)?)?.max_abs_diff(&x)? as f64);
    }
    Ok(worst)
}

fn latent_roundtrip() -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = small_flow_config();
    let flow = FlowParams::<f32>::random_dense(cfg.clone(), 0.05, &mut rng)?;
    let mut worst: f64 = 0.0;
    for _ in 0..4 {
        let t = Tensor::<f32>::randn(cfg.latent_dims([1, 3, 32, 32]), 1.0, &mut rng);
        let back = flow.forward(&flow.inverse(&t)?)?;
        worst = worst.max(back.sub(&t)?.norm_l2() as f64);
    }
    Ok(worst)
}

fn unbiased(mode: TransferMode) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let fc = Tensor::<f64>::randn([1, 12, 8, 8], 1.0, &mut rng);
        let fs = Tensor::<f64>::randn([1, 12, 8, 8], 2.0, &mut rng).map(|v| v + 0.5);
        let r = verify_unbiased(&fc, &fs, mode, 1e-3)?;
        worst = worst.max(r.style_residual).max(r.content_residual);
    }
    Ok(worst)
}

/// Largest residual of a transfer that only moves the mean.
fn mean_shift_control() -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let fc = Tensor::<f64>::randn([1, 12, 8, 8], 1.0, &mut rng);
    let fs = Tensor::<f64>::randn([1, 12, 8, 8], 2.0, &mut rng).map(|v| v + 0.5);
    let shift = |a: &Tensor<f64>, b: &Tensor<f64>| {
        let (sa, sb) = (channel_stats(a, 1e-5), channel_stats(b, 1e-5));
        let mut out = a.clone();
        for c in 0..a.c() {
            let d = sb.mean[c] - sa.mean[c];
            out.plane_mut(0, c).iter_mut().for_each(|v| *v += d);
        }
        Ok(out)
    };
    let r = verify_transfer(&fc, &fs, TransferMode::MeanStd, 1e-3, shift)?;
    Ok(r.style_residual.max(r.content_residual).max(r.sigma_residual))
}

fn adain_algebra() -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let f = Tensor::<f32>::randn([2, 8, 8, 8], 1.5, &mut rng);
    let s = Tensor::<f32>::randn([2, 8, 8, 8], 0.7, &mut rng);
    let selfid = adain(&f, &f, TransferMode::MeanStd)?.max_abs_diff(&f)?;
    let once = adain(&f, &s, TransferMode::MeanStd)?;
    let twice = adain(&once, &s, TransferMode::MeanStd)?;
    Ok(selfid.max(twice.max_abs_diff(&once)?) as f64)
}

fn conv_gradient() -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut l = Conv2d::<f64>::random(3, 4, 3, 2, 1, 1.0, &mut rng);
    l.bias = Tensor::randn(l.bias.dims(), 0.1, &mut rng);
    let x = Tensor::<f64>::randn([1, 3, 6, 6], 1.0, &mut rng);
    let r = projection::<f64>([1, 4, 3, 3], 8);
    let with = |a: &[Tensor<f64>]| {
        let mut l2 = l.clone();
        l2.weight = a[1].clone();
        l2.bias = a[2].clone();
        l2
    };
    grad_check_strided(
        |a| {
            let mut y = with(a).forward(&a[0])?;
            Activation::LeakyRelu(0.2).apply_in_place(&mut y);
            Ok(dot(&y, &r))
        },
        |a| {
            let l2 = with(a);
            let mut y = l2.forward(&a[0])?;
            Activation::LeakyRelu(0.2).apply_in_place(&mut y);
            let mut g = r.clone();
            Activation::LeakyRelu(0.2).backward_in_place(&y, &mut g);
            let mut grads = l2.zeros_like();
            let gx = l2.backward(&a[0], &g, &mut grads)?;
            Ok(vec![gx, grads.weight, grads.bias])
        },
        &[x, l.weight.clone(), l.bias.clone()],
        1e-5,
        1,
    )
}

fn flow_gradient() -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cfg = FlowConfig {
        n_blocks: 1,
        steps_per_block: 2,
        hidden_width: 4,
        ..FlowConfig::default()
    };
    let flow = FlowParams::<f64>::random_dense(cfg.clone(), 0.1, &mut rng)?;
    let x = Tensor::<f64>::randn([1, 3, 4, 4], 1.0, &mut rng);
    let r = projection::<f64>(cfg.latent_dims(x.dims()), 10);
    grad_check_strided(
        |a| Ok(dot(&flow.forward(&a[0])?, &r)),
        |a| {
            let (_, tape) = flow.forward_tape(&a[0])?;
            let mut g = flow.zeros_like();
            Ok(vec![flow.backward(&tape, &r, &mut g)?])
        },
        &[x],
        1e-5,
        1,
    )
}

fn style_loss_gradient() -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let fe = FeatureExtractor::<f64>::new(3, 0xC0FFEE);
    let it = Tensor::<f64>::rand_uniform([1, 3, 8, 8], 0.0, 1.0, &mut rng);
    let is = Tensor::<f64>::rand_uniform([1, 3, 8, 8], 0.0, 1.0, &mut rng);
    grad_check_strided(
        |a| style_loss(&a[0], &is, &fe),
        |a| Ok(vec![style_loss_grad(&a[0], &is, &fe)?.1]),
        &[it],
        1e-6,
        5,
    )
}

fn layout_roundtrips() -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = Tensor::<f32>::randn([2, 3, 16, 16], 1.0, &mut rng);
    let sq = unsqueeze(&squeeze(&x, 2)?, 2)?;
    let cfg = FlowConfig::default();
    let z = Tensor::<f32>::randn(cfg.latent_dims([1, 3, 16, 16]), 1.0, &mut rng);
    let pl = grid_to_payload(&payload_to_grid(&z, &cfg)?, &cfg)?;
    Ok(bits_differ(sq.data(), x.data()) + bits_differ(pl.data(), z.data()))
}

fn checkpoint_roundtrip() -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let flow = FlowParams::<f32>::random_dense(small_flow_config(), 0.05, &mut rng)?;
    let named = leakfree::Parameters::named_params(&flow);
    let back = decode_records(&encode_records(&named))?;
    let mut diff = (named.len() as f64 - back.len() as f64).abs();
    for ((n, t), (m, u)) in named.iter().zip(&back) {
        if n != m || t.dims() != u.dims() {
            diff += 1.0;
        } else {
            diff += bits_differ(t.data(), u.data());
        }
    }
    Ok(diff)
}

/// Runs every check, prints one line each, and reports overall success.
pub fn run(tol_scale: f64) -> bool {
    let start = Instant::now();
    type Probe = fn() -> Result<f64>;
    let probes: [(&str, Probe, f64, bool); 12] = [
        ("flow bijectivity (f64)", bijectivity64, 1e-9, false),
        ("flow bijectivity (f32)", bijectivity32, 1e-3, false),
        ("latent roundtrip F(G(t)) = t", latent_roundtrip, 1e-3, false),
        ("unbiased transfer (std_only)", || unbiased(TransferMode::StdOnly), 1e-3, false),
        ("unbiased transfer (mean_std)", || unbiased(TransferMode::MeanStd), 1e-3, false),
        ("mean-shift negative control", mean_shift_control, 1e-3, true),
        ("adain self-identity and idempotence", adain_algebra, 1e-4, false),
        ("conv gradient", conv_gradient, 1e-6, false),
        ("flow gradient", flow_gradient, 1e-6, false),
        ("style loss gradient", style_loss_gradient, 1e-6, false),
        ("squeeze and payload layout bit-exact", layout_roundtrips, 0.0, false),
        ("checkpoint records bit-exact", checkpoint_roundtrip, 0.0, false),
    ];
    let mut all = true;
    for (name, probe, tol, expect_above) in probes {
        let check = match probe() {
            Ok(value) => Check {
                name,
                value,
                tol: tol * tol_scale,
                expect_above,
            },
            Err(e) => {
                println!("FAIL {name}: {e}");
                all = false;
                continue;
            }
        };
        let ok = check.passed();
        all &= ok;
        let rel = if check.expect_above { ">" } else { "<=" };
        println!(
            "{} {}: {:.3e} ({rel} {:.1e})",
            if ok { "PASS" } else { "FAIL" },
            check.name,
            check.value,
            check.tol
        );
    }
    println!("selfcheck {} in {:.1}s", if all { "passed" } else { "failed" }, start.elapsed().as_secs_f64());
    all
}
