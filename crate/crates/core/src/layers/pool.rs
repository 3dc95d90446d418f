//! 2x2 max pooling with stride 2. Output extents are floor(input / 2); a
//! trailing odd row or column is dropped. Ties go to the first maximum in
//! row-major scan order so backward routing is deterministic.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub struct MaxPoolCache {
    /// Flat input index of the winning position for every output element.
    argmax: Vec<u32>,
    in_shape: [usize; 4],
    out_shape: [usize; 4],
}

pub fn maxpool_forward<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, MaxPoolCache)> {
    let (n, c, h, w) = x.dims4()?;
    if h < 2 || w < 2 {
        return Err(Error::shape(format!(
            "maxpool needs spatial extents >= 2, got {h}x{w}"
        )));
    }
    if x.len() > u32::MAX as usize {
        return Err(Error::shape("tensor too large for pooling cache"));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(vec![n, c, oh, ow]);
    let mut argmax = vec![0u32; n * c * oh * ow];
    let x_data = x.data();

    out.data_mut()
        .par_chunks_mut(oh * ow)
        .zip(argmax.par_chunks_mut(oh * ow))
        .enumerate()
        .for_each(|(nc, (out_plane, arg_plane))| {
            let base = nc * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let i00 = base + (2 * oy) * w + 2 * ox;
                    // Row-major scan over the 2x2 block; strict > keeps
                    // the first maximum on ties.
                    let mut best = x_data[i00];
                    let mut best_i = i00;
                    for &idx in &[i00 + 1, i00 + w, i00 + w + 1] {
                        if x_data[idx] > best {
                            best = x_data[idx];
                            best_i = idx;
                        }
                    }
                    out_plane[oy * ow + ox] = best;
                    arg_plane[oy * ow + ox] = best_i as u32;
                }
            }
        });

    let cache = MaxPoolCache {
        argmax,
        in_shape: [n, c, h, w],
        out_shape: [n, c, oh, ow],
    };
    Ok((out, cache))
}

/// Routes each upstream value to its cached argmax position; every other
/// input position receives zero.
pub fn maxpool_backward<T: Scalar>(cache: &MaxPoolCache, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.shape() != cache.out_shape {
        return Err(Error::shape(format!(
            "grad_out shape {:?} does not match pooled output {:?}",
            grad_out.shape(),
            cache.out_shape
        )));
    }
    let [n, c, h, w] = cache.in_shape;
    let [_, _, oh, ow] = cache.out_shape;
    let mut grad_x = Tensor::zeros(vec![n, c, h, w]);
    let g = grad_out.data();
    grad_x
        .data_mut()
        .par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(nc, gx_plane)| {
            let base = nc * h * w;
            let out_base = nc * oh * ow;
            for j in 0..oh * ow {
                // Blocks are disjoint, so this is a plain store.
                gx_plane[cache.argmax[out_base + j] as usize - base] += g[out_base + j];
            }
        });
    Ok(grad_x)
}
