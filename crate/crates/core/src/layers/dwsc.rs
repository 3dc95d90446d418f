//! Depthwise-separable convolution: a per-channel 3x3 depthwise stage that
//! never mixes channels, then a 1x1 pointwise stage that only mixes
//! channels, then ReLU. No activation between the stages.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{dot, matmul_acc, transpose};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Dwsc<T: Scalar> {
    /// (C, 1, 3, 3)
    pub dw_weights: Tensor<T>,
    /// (C)
    pub dw_bias: Tensor<T>,
    /// (outC, C, 1, 1)
    pub pw_weights: Tensor<T>,
    /// (outC)
    pub pw_bias: Tensor<T>,
}

pub struct DwscCache<T: Scalar> {
    x: Tensor<T>,
    mid: Tensor<T>,
    relu_mask: Vec<u8>,
    out_shape: [usize; 4],
}

pub struct DwscGrads<T: Scalar> {
    pub x: Tensor<T>,
    pub dw_weights: Tensor<T>,
    pub dw_bias: Tensor<T>,
    pub pw_weights: Tensor<T>,
    pub pw_bias: Tensor<T>,
}

impl<T: Scalar> Dwsc<T> {
    pub fn new(out_c: usize, in_c: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Dwsc {
            dw_weights: Tensor::he_init(vec![in_c, 1, 3, 3], 9, rng)?,
            dw_bias: Tensor::zeros(vec![in_c]),
            pw_weights: Tensor::he_init(vec![out_c, in_c, 1, 1], in_c, rng)?,
            pw_bias: Tensor::zeros(vec![out_c]),
        })
    }

    pub fn in_channels(&self) -> usize {
        self.dw_weights.shape()[0]
    }

    pub fn out_channels(&self) -> usize {
        self.pw_weights.shape()[0]
    }

    pub fn param_count(&self) -> usize {
        self.dw_weights.len() + self.dw_bias.len() + self.pw_weights.len() + self.pw_bias.len()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, DwscCache<T>)> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.in_channels() {
            return Err(Error::shape(format!(
                "dwsc expects {} input channels, got {c}",
                self.in_channels()
            )));
        }
        let out_c = self.out_channels();
        let plane = h * w;

        // Depthwise stage: channel ci of the output depends only on channel
        // ci of the input.
        let mut mid = Tensor::zeros(vec![n, c, h, w]);
        let x_data = x.data();
        mid.data_mut()
            .par_chunks_mut(plane)
            .enumerate()
            .for_each(|(nc, mid_plane)| {
                let ci = nc % c;
                let kernel = &self.dw_weights.data()[ci * 9..(ci + 1) * 9];
                let src = &x_data[nc * plane..(nc + 1) * plane];
                depthwise_plane(mid_plane, src, kernel, h, w, self.dw_bias.data()[ci]);
            });

        // Pointwise stage: one matrix product per sample over channels.
        let mut out = Tensor::zeros(vec![n, out_c, h, w]);
        let pw = self.pw_weights.data();
        let mid_data = mid.data();
        out.data_mut()
            .par_chunks_mut(out_c * plane)
            .enumerate()
            .for_each(|(s, out_s)| {
                for o in 0..out_c {
                    out_s[o * plane..(o + 1) * plane].fill(self.pw_bias.data()[o]);
                }
                matmul_acc(
                    out_s,
                    pw,
                    &mid_data[s * c * plane..(s + 1) * c * plane],
                    out_c,
                    c,
                    plane,
                );
            });

        let mut mask = vec![0u8; out.len()];
        out.data_mut()
            .par_chunks_mut(plane)
            .zip(mask.par_chunks_mut(plane))
            .for_each(|(vals, ms)| {
                for (v, m) in vals.iter_mut().zip(ms) {
                    if *v > T::zero() {
                        *m = 1;
                    } else {
                        *v = T::zero();
                    }
                }
            });

        let cache = DwscCache {
            x: x.clone(),
            mid,
            relu_mask: mask,
            out_shape: [n, out_c, h, w],
        };
        Ok((out, cache))
    }

    pub fn backward(&self, cache: &DwscCache<T>, grad_out: &Tensor<T>) -> Result<DwscGrads<T>> {
        if grad_out.shape() != cache.out_shape {
            return Err(Error::shape(format!(
                "grad_out shape {:?} does not match dwsc output {:?}",
                grad_out.shape(),
                cache.out_shape
            )));
        }
        let (n, c, h, w) = cache.x.dims4()?;
        let out_c = cache.out_shape[1];
        let plane = h * w;

        let g: Vec<T> = grad_out
            .data()
            .par_iter()
            .zip(cache.relu_mask.par_iter())
            .map(|(&gv, &m)| if m == 1 { gv } else { T::zero() })
            .collect();

        // Pointwise gradients.
        let mid = cache.mid.data();
        let mut grad_pw = Tensor::zeros(vec![out_c, c, 1, 1]);
        let mut grad_pwb = Tensor::zeros(vec![out_c]);
        grad_pw
            .data_mut()
            .par_chunks_mut(c)
            .zip(grad_pwb.data_mut().par_iter_mut())
            .enumerate()
            .for_each(|(o, (gpw_row, gpwb))| {
                for s in 0..n {
                    let g_row = &g[(s * out_c + o) * plane..(s * out_c + o + 1) * plane];
                    for ci in 0..c {
                        gpw_row[ci] +=
                            dot(g_row, &mid[(s * c + ci) * plane..(s * c + ci + 1) * plane]);
                    }
                    let mut sum = T::zero();
                    for &v in g_row {
                        sum += v;
                    }
                    *gpwb += sum;
                }
            });

        // Back through the pointwise mix into the depthwise output.
        let pw_t = transpose(self.pw_weights.data(), out_c, c);
        let mut grad_mid = vec![T::zero(); n * c * plane];
        grad_mid
            .par_chunks_mut(c * plane)
            .enumerate()
            .for_each(|(s, gm_s)| {
                matmul_acc(
                    gm_s,
                    &pw_t,
                    &g[s * out_c * plane..(s + 1) * out_c * plane],
                    c,
                    out_c,
                    plane,
                );
            });

        // Depthwise weight/bias gradients per channel.
        let x_data = cache.x.data();
        let mut grad_dw = Tensor::zeros(vec![c, 1, 3, 3]);
        let mut grad_dwb = Tensor::zeros(vec![c]);
        grad_dw
            .data_mut()
            .par_chunks_mut(9)
            .zip(grad_dwb.data_mut().par_iter_mut())
            .enumerate()
            .for_each(|(ci, (gk, gb))| {
                for s in 0..n {
                    let gm = &grad_mid[(s * c + ci) * plane..(s * c + ci + 1) * plane];
                    let src = &x_data[(s * c + ci) * plane..(s * c + ci + 1) * plane];
                    for kh in 0..3usize {
                        for kw in 0..3usize {
                            let mut acc = T::zero();
                            for y in 0..h {
                                let sy = y as isize + kh as isize - 1;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                for xx in 0..w {
                                    let sx = xx as isize + kw as isize - 1;
                                    if sx < 0 || sx >= w as isize {
                                        continue;
                                    }
                                    acc += gm[y * w + xx] * src[sy as usize * w + sx as usize];
                                }
                            }
                            gk[kh * 3 + kw] += acc;
                        }
                    }
                    let mut sum = T::zero();
                    for &v in gm {
                        sum += v;
                    }
                    *gb += sum;
                }
            });

        // Gradient into the input: scatter through the depthwise taps.
        let mut grad_x = Tensor::zeros(vec![n, c, h, w]);
        grad_x
            .data_mut()
            .par_chunks_mut(plane)
            .enumerate()
            .for_each(|(nc, gx_plane)| {
                let ci = nc % c;
                let kernel = &self.dw_weights.data()[ci * 9..(ci + 1) * 9];
                let gm = &grad_mid[nc * plane..(nc + 1) * plane];
                for y in 0..h {
                    for xx in 0..w {
                        let gv = gm[y * w + xx];
                        for kh in 0..3usize {
                            let sy = y as isize + kh as isize - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for kw in 0..3usize {
                                let sx = xx as isize + kw as isize - 1;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                gx_plane[sy as usize * w + sx as usize] +=
                                    gv * kernel[kh * 3 + kw];
                            }
                        }
                    }
                }
            });

        Ok(DwscGrads {
            x: grad_x,
            dw_weights: grad_dw,
            dw_bias: grad_dwb,
            pw_weights: grad_pw,
            pw_bias: grad_pwb,
        })
    }
}

fn depthwise_plane<T: Scalar>(out: &mut [T], src: &[T], kernel: &[T], h: usize, w: usize, bias: T) {
    for y in 0..h {
        for xx in 0..w {
            let mut acc = bias;
            for kh in 0..3usize {
                let sy = y as isize + kh as isize - 1;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kw in 0..3usize {
                    let sx = xx as isize + kw as isize - 1;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    acc += kernel[kh * 3 + kw] * src[sy as usize * w + sx as usize];
                }
            }
            out[y * w + xx] = acc;
        }
    }
}
