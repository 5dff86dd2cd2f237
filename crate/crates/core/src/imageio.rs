//! 8-bit PNG conversion. Pixels map linearly to `[0, 1]`; clamping happens
//! only on export.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn rgb_to_tensor<T: Scalar>(img: &RgbImage) -> Tensor<T> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let scale = T::lit(1.0 / 255.0);
    Tensor::from_fn([1, 3, h, w], |[_, c, y, x]| {
        T::from_u8(img.get_pixel(x as u32, y as u32)[c]).unwrap() * scale
    })
}

/// Round-half-up quantization of a clamped value.
pub fn quantize<T: Scalar>(v: T) -> u8 {
    let v = v.as_f64().clamp(0.0, 1.0);
    (v * 255.0 + 0.5).floor() as u8
}

/// Sample `n` of a 3-channel tensor as an 8-bit image.
pub fn tensor_to_rgb<T: Scalar>(t: &Tensor<T>, n: usize) -> Result<RgbImage> {
    if t.c() != 3 || n >= t.n() {
        return Err(Error::shape(format!("cannot export sample {n} of {:?} as RGB", t.dims())));
    }
    let (h, w) = (t.h(), t.w());
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = [0, 1, 2].map(|c| quantize(t.at(n, c, y, x)));
            img.put_pixel(x as u32, y as u32, Rgb(px));
        }
    }
    Ok(img)
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(img.to_rgb8())
}

pub fn load_png<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    Ok(rgb_to_tensor(&load_rgb(path)?))
}

pub fn save_png<T: Scalar>(t: &Tensor<T>, path: &Path) -> Result<()> {
    tensor_to_rgb(t, 0)?
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_half_up_and_clamp() {
        assert_eq!(quantize(0.0f64), 0);
        assert_eq!(quantize(1.0f64), 255);
        assert_eq!(quantize(-0.3f64), 0);
        assert_eq!(quantize(1.7f64), 255);
        assert_eq!(quantize(0.5f64 / 255.0), 1);
        assert_eq!(quantize(0.49f64 / 255.0), 0);
    }

    #[test]
    fn byte_values_roundtrip() {
        let mut img = RgbImage::new(4, 2);
        for (i, p) in img.pixels_mut().enumerate() {
            *p = Rgb([(i * 31) as u8, (255 - i * 7) as u8, (i * i) as u8]);
        }
        let t = rgb_to_tensor::<f32>(&img);
        assert_eq!(t.dims(), [1, 3, 2, 4]);
        assert_eq!(tensor_to_rgb(&t, 0).unwrap(), img);
    }
}
