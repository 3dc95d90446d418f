//! Decoded image -> network input tensor.
//!
//! Pipeline: adapt channels (RGB -> gray by the 0.299/0.587/0.114 luma
//! weights, or replicate gray -> RGB), bilinear-resize to the model's input
//! extent, scale to [0, 1]. The resize uses half-pixel centers with edge
//! clamping, so a source image already at the target size passes through
//! untouched and constants stay constant.

use crate::data::PixelImage;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Produce the (input_channels, input_size, input_size) tensor for one
/// sample, values in [0, 1].
pub fn preprocess<T: Scalar>(
    img: &PixelImage,
    input_channels: usize,
    input_size: usize,
) -> Result<Tensor<T>> {
    if img.width == 0 || img.height == 0 {
        return Err(Error::Dataset("zero-dimension image".into()));
    }
    if input_size == 0 {
        return Err(Error::Config("input_size must be positive".into()));
    }

    let plane = img.width * img.height;
    let channels: Vec<Vec<f64>> = match (img.channels, input_channels) {
        (c, want) if c == want => (0..c)
            .map(|ci| {
                img.pixels[ci * plane..(ci + 1) * plane]
                    .iter()
                    .map(|&p| p as f64)
                    .collect()
            })
            .collect(),
        (3, 1) => {
            let mut gray = vec![0.0f64; plane];
            for (i, g) in gray.iter_mut().enumerate() {
                *g = LUMA[0] * img.pixels[i] as f64
                    + LUMA[1] * img.pixels[plane + i] as f64
                    + LUMA[2] * img.pixels[2 * plane + i] as f64;
            }
            vec![gray]
        }
        (1, 3) => {
            let gray: Vec<f64> = img.pixels.iter().map(|&p| p as f64).collect();
            vec![gray.clone(), gray.clone(), gray]
        }
        (c, want) => {
            return Err(Error::Dataset(format!(
                "cannot adapt a {c}-channel image to {want} channels"
            )))
        }
    };

    let mut data = Vec::with_capacity(input_channels * input_size * input_size);
    for ch in &channels {
        if img.width == input_size && img.height == input_size {
            data.extend(ch.iter().map(|&v| T::from_f64(v / 255.0)));
        } else {
            let resized = bilinear(ch, img.width, img.height, input_size, input_size);
            data.extend(resized.iter().map(|&v| T::from_f64(v / 255.0)));
        }
    }
    Tensor::new(vec![input_channels, input_size, input_size], data)
}

fn bilinear(src: &[f64], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f64> {
    let scale_x = sw as f64 / dw as f64;
    let scale_y = sh as f64 / dh as f64;
    let mut out = vec![0.0f64; dw * dh];
    for oy in 0..dh {
        let fy = (oy as f64 + 0.5) * scale_y - 0.5;
        let y0 = fy.floor().clamp(0.0, (sh - 1) as f64) as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let ty = (fy - y0 as f64).clamp(0.0, 1.0);
        for ox in 0..dw {
            let fx = (ox as f64 + 0.5) * scale_x - 0.5;
            let x0 = fx.floor().clamp(0.0, (sw - 1) as f64) as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let tx = (fx - x0 as f64).clamp(0.0, 1.0);
            let top = src[y0 * sw + x0] * (1.0 - tx) + src[y0 * sw + x1] * tx;
            let bot = src[y1 * sw + x0] * (1.0 - tx) + src[y1 * sw + x1] * tx;
            out[oy * dw + ox] = top * (1.0 - ty) + bot * ty;
        }
    }
    out
}
