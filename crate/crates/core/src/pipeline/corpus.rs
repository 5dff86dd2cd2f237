//! Content/style image sets: loaded from disk or generated procedurally.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imageio::{load_rgb, rgb_to_tensor};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Square `1×3×S×S` images with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus<T> {
    pub content: Vec<Tensor<T>>,
    pub style: Vec<Tensor<T>>,
    pub seed: u64,
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_file() {
            files.push(path);
        }
    }
    // Directory order is filesystem-dependent.
    files.sort();
    Ok(files)
}

fn load_dir<T: Scalar>(dir: &Path, size: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Tensor<T>>> {
    let files = image_files(dir)?;
    if files.is_empty() {
        return Err(Error::Corpus(format!("{} contains no files", dir.display())));
    }
    let target = 2 * size as u32;
    let mut out = Vec::with_capacity(files.len());
    for path in &files {
        let img = match load_rgb(path) {
            Ok(img) => img,
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                continue;
            }
        };
        let (w, h) = img.dimensions();
        let (nw, nh) = if w <= h {
            (target, ((h as f64 * target as f64 / w as f64).round() as u32).max(target))
        } else {
            (((w as f64 * target as f64 / h as f64).round() as u32).max(target), target)
        };
        let resized = imageops::resize(&img, nw, nh, FilterType::Triangle);
        let x0 = rng.random_range(0..=nw - size as u32);
        let y0 = rng.random_range(0..=nh - size as u32);
        let crop = imageops::crop_imm(&resized, x0, y0, size as u32, size as u32).to_image();
        out.push(rgb_to_tensor(&crop));
    }
    if out.is_empty() {
        return Err(Error::Corpus(format!("no decodable images in {}", dir.display())));
    }
    Ok(out)
}

/// Shorter side resized to `2·image_size` (bilinear, aspect kept), then a
/// seeded random `image_size²` crop. Files are visited in name order.
pub fn load_corpus<T: Scalar>(content_dir: &Path, style_dir: &Path, image_size: usize, seed: u64) -> Result<Corpus<T>> {
    if content_dir.canonicalize()? == style_dir.canonicalize()? {
        return Err(Error::Corpus("content and style directories must differ".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let content = load_dir(content_dir, image_size, &mut rng)?;
    let style = load_dir(style_dir, image_size, &mut rng)?;
    Ok(Corpus { content, style, seed })
}

fn random_color<R: Rng>(rng: &mut R) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

fn synth_image<T: Scalar, R: Rng>(kind: usize, size: usize, rng: &mut R) -> Tensor<T> {
    let s = size as f64;
    let (a, b) = (random_color(rng), random_color(rng));
    match kind % 3 {
        0 => {
            let theta = rng.random_range(0.0..2.0 * PI);
            let (dx, dy) = (theta.cos(), theta.sin());
            Tensor::from_fn([1, 3, size, size], |[_, c, y, x]| {
                let u = ((x as f64 / s - 0.5) * dx + (y as f64 / s - 0.5) * dy) / 2f64.sqrt() + 0.5;
                T::lit(a[c] + (b[c] - a[c]) * u.clamp(0.0, 1.0))
            })
        }
        1 => {
            let cell = [4, 8, 16][rng.random_range(0..3)];
            let (ox, oy) = (rng.random_range(0..cell), rng.random_range(0..cell));
            Tensor::from_fn([1, 3, size, size], |[_, c, y, x]| {
                let on = ((x + ox) / cell + (y + oy) / cell) % 2 == 0;
                T::lit(if on { a[c] } else { b[c] })
            })
        }
        _ => {
            // Sum of a few low-frequency plane waves per channel.
            let waves: Vec<[f64; 4]> = (0..12)
                .map(|_| {
                    [
                        rng.random_range(-4.0..4.0),
                        rng.random_range(-4.0..4.0),
                        rng.random_range(0.0..2.0 * PI),
                        rng.random_range(0.3..1.0),
                    ]
                })
                .collect();
            Tensor::from_fn([1, 3, size, size], |[_, c, y, x]| {
                let (u, v) = (x as f64 / s, y as f64 / s);
                let sum: f64 = waves[c * 4..c * 4 + 4]
                    .iter()
                    .map(|w| w[3] * (2.0 * PI * (w[0] * u + w[1] * v) + w[2]).sin())
                    .sum();
                let norm: f64 = waves[c * 4..c * 4 + 4].iter().map(|w| w[3]).sum();
                T::lit(0.5 + 0.5 * sum / norm)
            })
        }
    }
}

/// `n` procedural images (gradients, checkerboards, band-limited noise);
/// the first `n/2` are content, the rest style.
pub fn synth_corpus<T: Scalar>(seed: u64, n: usize, image_size: usize) -> Corpus<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all: Vec<Tensor<T>> = (0..n).map(|i| synth_image(i, image_size, &mut rng)).collect();
    let style = all.split_off(n / 2);
    Corpus {
        content: all,
        style,
        seed,
    }
}

/// Draws `k` styles once, then pairs each content index with one of them
/// uniformly at random. Returns `(content, style)` index pairs.
pub fn pair_styles<T>(corpus: &Corpus<T>, k: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    if corpus.style.is_empty() || corpus.content.is_empty() || k == 0 {
        return Err(Error::Corpus("pairing needs content, style and k > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = sample(&mut rng, corpus.style.len(), k.min(corpus.style.len())).into_vec();
    Ok((0..corpus.content.len())
        .map(|c| (c, chosen[rng.random_range(0..chosen.len())]))
        .collect())
}
