//! Standard 2D convolution, stride 1, zero padding "same".
//!
//! The forward pass lowers each sample to a column matrix (im2col) and runs
//! one matrix product per sample; backward reuses the cached columns. Work
//! is split over samples and over filter rows, never over a summation, so
//! outputs are bitwise identical for any thread count.

use rayon::prelude::*;

use super::Activation;
use crate::error::{Error, Result};
use crate::linalg::{matmul_acc, transpose};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Conv2D<T: Scalar> {
    /// (outC, inC, k, k)
    pub weights: Tensor<T>,
    /// (outC)
    pub bias: Tensor<T>,
}

pub struct ConvCache<T: Scalar> {
    /// Per-sample im2col matrices, (inC * k * k) x (H * W).
    cols: Vec<Vec<T>>,
    /// 1 where the pre-activation was positive; present only for ReLU.
    relu_mask: Option<Vec<u8>>,
    in_shape: [usize; 4],
    out_shape: [usize; 4],
}

pub struct ConvGrads<T: Scalar> {
    pub x: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Conv2D<T> {
    /// He-initialized weights (fan_in = inC * k * k), zero bias.
    pub fn new(out_c: usize, in_c: usize, kernel: usize, rng: &mut Rng) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "same padding requires an odd kernel, got {kernel}"
            )));
        }
        Ok(Conv2D {
            weights: Tensor::he_init(
                vec![out_c, in_c, kernel, kernel],
                in_c * kernel * kernel,
                rng,
            )?,
            bias: Tensor::zeros(vec![out_c]),
        })
    }

    pub fn from_parts(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let (out_c, _, kh, kw) = weights.dims4()?;
        if kh != kw || kh % 2 == 0 {
            return Err(Error::Config(format!(
                "expected square odd kernel, got {kh}x{kw}"
            )));
        }
        if bias.shape() != [out_c] {
            return Err(Error::shape(format!(
                "bias shape {:?} does not match {out_c} filters",
                bias.shape()
            )));
        }
        Ok(Conv2D { weights, bias })
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weights.shape()[2]
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn forward(
        &self,
        x: &Tensor<T>,
        activation: Activation,
    ) -> Result<(Tensor<T>, ConvCache<T>)> {
        let (n, in_c, h, w) = x.dims4()?;
        if in_c != self.in_channels() {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {in_c}",
                self.in_channels()
            )));
        }
        let out_c = self.out_channels();
        let k = self.kernel();
        let kdim = in_c * k * k;
        let plane = h * w;

        let x_data = x.data();
        let cols: Vec<Vec<T>> = (0..n)
            .into_par_iter()
            .map(|s| im2col(&x_data[s * in_c * plane..(s + 1) * in_c * plane], in_c, h, w, k))
            .collect();

        let mut out = Tensor::zeros(vec![n, out_c, h, w]);
        let w_flat = self.weights.data();
        let bias = self.bias.data();
        out.data_mut()
            .par_chunks_mut(out_c * plane)
            .enumerate()
            .for_each(|(s, out_s)| {
                for m in 0..out_c {
                    out_s[m * plane..(m + 1) * plane].fill(bias[m]);
                }
                matmul_acc(out_s, w_flat, &cols[s], out_c, kdim, plane);
            });

        let relu_mask = match activation {
            Activation::Relu => {
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
                Some(mask)
            }
            Activation::None => None,
        };

        let cache = ConvCache {
            cols,
            relu_mask,
            in_shape: [n, in_c, h, w],
            out_shape: [n, out_c, h, w],
        };
        Ok((out, cache))
    }

    pub fn backward(&self, cache: &ConvCache<T>, grad_out: &Tensor<T>) -> Result<ConvGrads<T>> {
        let (grad_x, grad_w, grad_b) = self.backward_impl(cache, grad_out, true)?;
        Ok(ConvGrads {
            x: grad_x.expect("requested input gradient"),
            weights: grad_w,
            bias: grad_b,
        })
    }

    /// Backward without the input gradient, for the first layer of a graph.
    pub fn backward_params_only(
        &self,
        cache: &ConvCache<T>,
        grad_out: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let (_, grad_w, grad_b) = self.backward_impl(cache, grad_out, false)?;
        Ok((grad_w, grad_b))
    }

    fn backward_impl(
        &self,
        cache: &ConvCache<T>,
        grad_out: &Tensor<T>,
        need_input_grad: bool,
    ) -> Result<(Option<Tensor<T>>, Tensor<T>, Tensor<T>)> {
        if grad_out.shape() != cache.out_shape {
            return Err(Error::shape(format!(
                "grad_out shape {:?} does not match forward output {:?}",
                grad_out.shape(),
                cache.out_shape
            )));
        }
        let [n, in_c, h, w] = cache.in_shape;
        let out_c = cache.out_shape[1];
        let k = self.kernel();
        let kdim = in_c * k * k;
        let plane = h * w;

        // ReLU first: zero the upstream gradient where the unit was clamped.
        let g: Vec<T> = match &cache.relu_mask {
            Some(mask) => grad_out
                .data()
                .par_iter()
                .zip(mask.par_iter())
                .map(|(&gv, &m)| if m == 1 { gv } else { T::zero() })
                .collect(),
            None => grad_out.data().to_vec(),
        };

        // grad_w = sum_s g_s . cols_s^T, as a row-blocked matrix product
        // against pre-transposed columns.
        let cols_t: Vec<Vec<T>> = cache
            .cols
            .par_iter()
            .map(|col| transpose(col, kdim, plane))
            .collect();
        let mut grad_w = Tensor::zeros(vec![out_c, in_c, k, k]);
        let mut grad_b = Tensor::zeros(vec![out_c]);
        {
            let gb = grad_b.data_mut();
            grad_w
                .data_mut()
                .par_chunks_mut(4 * kdim)
                .zip(gb.par_chunks_mut(4))
                .enumerate()
                .for_each(|(q, (gw_rows, gb_rows))| {
                    let m0 = q * 4;
                    let rows = gb_rows.len();
                    for s in 0..n {
                        let g_rows = &g[(s * out_c + m0) * plane..(s * out_c + m0 + rows) * plane];
                        matmul_acc(gw_rows, g_rows, &cols_t[s], rows, plane, kdim);
                        for (r, gb_m) in gb_rows.iter_mut().enumerate() {
                            let mut sum = T::zero();
                            for &v in &g_rows[r * plane..(r + 1) * plane] {
                                sum += v;
                            }
                            *gb_m += sum;
                        }
                    }
                });
        }

        let grad_x = if need_input_grad {
            let w_t = transpose(self.weights.data(), out_c, kdim);
            let mut grad_x = Tensor::zeros(vec![n, in_c, h, w]);
            grad_x
                .data_mut()
                .par_chunks_mut(in_c * plane)
                .enumerate()
                .for_each(|(s, gx_s)| {
                    let mut colgrad = vec![T::zero(); kdim * plane];
                    let g_s = &g[s * out_c * plane..(s + 1) * out_c * plane];
                    matmul_acc(&mut colgrad, &w_t, g_s, kdim, out_c, plane);
                    col2im_add(gx_s, &colgrad, in_c, h, w, k);
                });
            Some(grad_x)
        } else {
            None
        };

        Ok((grad_x, grad_w, grad_b))
    }
}

/// Lower one sample (C, H, W) to a (C * k * k) x (H * W) column matrix for a
/// stride-1 same-padding convolution. Out-of-bounds taps are zeros.
fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let pad = (k / 2) as isize;
    let plane = h * w;
    let mut col = vec![T::zero(); c * k * k * plane];
    for ci in 0..c {
        let src_plane = &x[ci * plane..(ci + 1) * plane];
        for khi in 0..k {
            let dy = khi as isize - pad;
            for kwi in 0..k {
                let dx = kwi as isize - pad;
                let row = ((ci * k + khi) * k + kwi) * plane;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = ((w as isize - dx).min(w as isize)).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src_off = sy as usize * w;
                    let dst = row + y * w;
                    col[dst + x_lo..dst + x_hi].copy_from_slice(
                        &src_plane[(src_off as isize + x_lo as isize + dx) as usize
                            ..(src_off as isize + x_hi as isize + dx) as usize],
                    );
                }
            }
        }
    }
    col
}

/// Transpose of [`im2col`]: scatter-add a column-matrix gradient back onto
/// the input layout.
fn col2im_add<T: Scalar>(gx: &mut [T], colgrad: &[T], c: usize, h: usize, w: usize, k: usize) {
    let pad = (k / 2) as isize;
    let plane = h * w;
    for ci in 0..c {
        let dst_plane = &mut gx[ci * plane..(ci + 1) * plane];
        for khi in 0..k {
            let dy = khi as isize - pad;
            for kwi in 0..k {
                let dx = kwi as isize - pad;
                let row = ((ci * k + khi) * k + kwi) * plane;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = ((w as isize - dx).min(w as isize)).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = row + y * w;
                    let dst_off = (sy as usize * w) as isize + dx;
                    for xx in x_lo..x_hi {
                        dst_plane[(dst_off + xx as isize) as usize] += colgrad[src + xx];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent quadruple-nested-loop oracle for a stride-1 same-padding
    /// cross-correlation plus bias and optional ReLU.
    pub(crate) fn brute_conv(
        x: &Tensor<f64>,
        weights: &Tensor<f64>,
        bias: &[f64],
        relu: bool,
    ) -> Tensor<f64> {
        let (n, in_c, h, w) = x.dims4().unwrap();
        let (out_c, _, k, _) = weights.dims4().unwrap();
        let pad = (k / 2) as isize;
        let mut out = Tensor::zeros(vec![n, out_c, h, w]);
        for s in 0..n {
            for m in 0..out_c {
                for y in 0..h {
                    for xx in 0..w {
                        let mut acc = bias[m];
                        for ci in 0..in_c {
                            for kh in 0..k {
                                for kw in 0..k {
                                    let sy = y as isize + kh as isize - pad;
                                    let sx = xx as isize + kw as isize - pad;
                                    if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                        acc += x.at4(s, ci, sy as usize, sx as usize)
                                            * weights.at4(m, ci, kh, kw);
                                    }
                                }
                            }
                        }
                        if relu {
                            acc = acc.max(0.0);
                        }
                        let idx = out.idx4(s, m, y, xx);
                        out.data_mut()[idx] = acc;
                    }
                }
            }
        }
        out
    }

    fn identity_3x3(scale: f64) -> Tensor<f64> {
        let mut w = vec![0.0; 9];
        w[4] = scale;
        Tensor::new(vec![1, 1, 3, 3], w).unwrap()
    }

    #[test]
    fn identity_kernel_passes_value_through() {
        let conv = Conv2D::from_parts(identity_3x3(1.0), Tensor::zeros(vec![1])).unwrap();
        let x = Tensor::new(vec![1, 1, 1, 1], vec![2.0]).unwrap();
        let (out, _) = conv.forward(&x, Activation::Relu).unwrap();
        assert_eq!(out.data(), &[2.0]);
    }

    #[test]
    fn relu_clamps_negative_preactivation() {
        let conv = Conv2D::from_parts(identity_3x3(-1.0), Tensor::zeros(vec![1])).unwrap();
        let x = Tensor::new(vec![1, 1, 1, 1], vec![2.0]).unwrap();
        let (out, _) = conv.forward(&x, Activation::Relu).unwrap();
        assert_eq!(out.data(), &[0.0]);
    }

    #[test]
    fn channel_mismatch_is_a_shape_error() {
        let mut rng = Rng::new(1);
        let conv = Conv2D::<f64>::new(2, 3, 3, &mut rng).unwrap();
        let x = Tensor::zeros(vec![1, 2, 4, 4]);
        assert!(matches!(
            conv.forward(&x, Activation::None),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn same_padding_preserves_extent_for_3x3_and_5x5() {
        let mut rng = Rng::new(2);
        for k in [3, 5] {
            let conv = Conv2D::<f64>::new(2, 1, k, &mut rng).unwrap();
            let x = Tensor::zeros(vec![1, 1, 9, 7]);
            let (out, _) = conv.forward(&x, Activation::None).unwrap();
            assert_eq!(out.shape(), &[1, 2, 9, 7]);
        }
    }

    #[test]
    fn forward_matches_brute_force_oracle() {
        let mut rng = Rng::new(7);
        for trial in 0..10 {
            let (in_c, out_c, h, w, k) = match trial % 4 {
                0 => (1, 2, 4, 4, 3),
                1 => (3, 2, 5, 4, 3),
                2 => (2, 3, 6, 6, 5),
                _ => (1, 1, 2, 3, 3),
            };
            let conv = Conv2D::<f64>::new(out_c, in_c, k, &mut rng).unwrap();
            let x = Tensor::he_init(vec![2, in_c, h, w], 1, &mut rng).unwrap();
            for relu in [false, true] {
                let act = if relu { Activation::Relu } else { Activation::None };
                let (out, _) = conv.forward(&x, act).unwrap();
                let expect = brute_conv(&x, &conv.weights, conv.bias.data(), relu);
                for (a, b) in out.data().iter().zip(expect.data()) {
                    assert!((a - b).abs() < 1e-6, "trial {trial} relu {relu}");
                }
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = Rng::new(3);
        let conv = Conv2D::<f64>::new(2, 2, 3, &mut rng).unwrap();
        let x = Tensor::he_init(vec![1, 2, 4, 4], 1, &mut rng).unwrap();
        let (_, cache) = conv.forward(&x, Activation::Relu).unwrap();
        let grads = conv.backward(&cache, &Tensor::zeros(vec![1, 2, 4, 4])).unwrap();
        assert!(grads.x.data().iter().all(|&v| v == 0.0));
        assert!(grads.weights.data().iter().all(|&v| v == 0.0));
        assert!(grads.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_kernel_transports_single_pixel_gradient() {
        let conv = Conv2D::from_parts(identity_3x3(1.0), Tensor::zeros(vec![1])).unwrap();
        let x = Tensor::full(vec![1, 1, 3, 3], 1.0);
        let (_, cache) = conv.forward(&x, Activation::None).unwrap();
        let mut g = Tensor::zeros(vec![1, 1, 3, 3]);
        let idx = g.idx4(0, 0, 1, 2);
        g.data_mut()[idx] = 1.0;
        let grads = conv.backward(&cache, &g).unwrap();
        assert_eq!(grads.x.data(), g.data());
    }

    #[test]
    fn gradients_match_finite_differences() {
        use crate::gradcheck::{fd_check, upstream};
        let mut rng = Rng::new(41);
        let conv = Conv2D::<f64>::new(2, 2, 3, &mut rng).unwrap();
        let x = Tensor::he_init(vec![2, 2, 4, 4], 1, &mut rng).unwrap();
        let up = upstream(&[2, 2, 4, 4], &mut rng);

        let (_, cache) = conv.forward(&x, Activation::None).unwrap();
        let grads = conv.backward(&cache, &up).unwrap();

        let loss_x = |xt: &Tensor<f64>| {
            let (o, _) = conv.forward(xt, Activation::None).unwrap();
            o.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
        };
        assert!(fd_check(&x, &grads.x, loss_x, 1e-6) < 1e-5);

        let loss_w = |wt: &Tensor<f64>| {
            let c = Conv2D::from_parts(wt.clone(), conv.bias.clone()).unwrap();
            let (o, _) = c.forward(&x, Activation::None).unwrap();
            o.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
        };
        assert!(fd_check(&conv.weights, &grads.weights, loss_w, 1e-6) < 1e-5);

        let loss_b = |bt: &Tensor<f64>| {
            let c = Conv2D::from_parts(conv.weights.clone(), bt.clone()).unwrap();
            let (o, _) = c.forward(&x, Activation::None).unwrap();
            o.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
        };
        assert!(fd_check(&conv.bias, &grads.bias, loss_b, 1e-6) < 1e-5);
    }

    #[test]
    fn relu_gradients_match_finite_differences_away_from_kinks() {
        use crate::gradcheck::{fd_check, upstream};
        let mut rng = Rng::new(45);
        let mut conv = Conv2D::<f64>::new(2, 1, 3, &mut rng).unwrap();
        // Push pre-activations away from zero so the central difference
        // never crosses the ReLU kink.
        for b in conv.bias.data_mut() {
            *b = 0.5;
        }
        let x = Tensor::he_init(vec![1, 1, 4, 4], 1, &mut rng).unwrap();
        let up = upstream(&[1, 2, 4, 4], &mut rng);

        let (out, cache) = conv.forward(&x, Activation::Relu).unwrap();
        assert!(
            out.data().iter().all(|&v| v == 0.0 || v.abs() > 1e-3),
            "instance too close to a ReLU kink for finite differences"
        );
        let grads = conv.backward(&cache, &up).unwrap();
        let loss_x = |xt: &Tensor<f64>| {
            let (o, _) = conv.forward(xt, Activation::Relu).unwrap();
            o.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
        };
        assert!(fd_check(&x, &grads.x, loss_x, 1e-6) < 1e-5);
    }
}
