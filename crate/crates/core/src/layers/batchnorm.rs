//! Batch normalization over the channel axis of (N, C, H, W) activations.
//!
//! Training normalizes with per-batch statistics (biased variance) and
//! folds them into the running estimates; inference uses the running
//! estimates only. Statistics accumulate in f64 regardless of the element
//! type. Backward includes the dependence of the batch statistics on the
//! input.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct BatchNorm<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: T,
    pub eps: T,
}

pub struct BnCache<T: Scalar> {
    x_hat: Tensor<T>,
    inv_std: Vec<T>,
}

pub struct BnGrads<T: Scalar> {
    pub x: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

impl<T: Scalar> BatchNorm<T> {
    /// gamma = 1, beta = 0, running stats at the identity (mean 0, var 1).
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Tensor::full(vec![channels], T::one()),
            beta: Tensor::zeros(vec![channels]),
            running_mean: Tensor::zeros(vec![channels]),
            running_var: Tensor::full(vec![channels], T::one()),
            momentum: T::from_f64(0.9),
            eps: T::from_f64(1e-5),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn param_count(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
        let dims = x.dims4()?;
        if dims.1 != self.channels() {
            return Err(Error::shape(format!(
                "batchnorm over {} channels got input with {}",
                self.channels(),
                dims.1
            )));
        }
        Ok(dims)
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, BnCache<T>)> {
        let (n, c, h, w) = self.check_input(x)?;
        let plane = h * w;
        let m = n * plane;
        if m < 2 {
            return Err(Error::shape(
                "batchnorm training needs at least 2 values per channel",
            ));
        }

        let x_data = x.data();
        let stats: Vec<(f64, f64)> = (0..c)
            .into_par_iter()
            .map(|ci| {
                let mut sum = 0.0f64;
                for s in 0..n {
                    let row = &x_data[(s * c + ci) * plane..(s * c + ci + 1) * plane];
                    for &v in row {
                        sum += v.to_f64();
                    }
                }
                let mean = sum / m as f64;
                let mut sq = 0.0f64;
                for s in 0..n {
                    let row = &x_data[(s * c + ci) * plane..(s * c + ci + 1) * plane];
                    for &v in row {
                        let d = v.to_f64() - mean;
                        sq += d * d;
                    }
                }
                (mean, sq / m as f64)
            })
            .collect();

        let mut x_hat = Tensor::zeros(vec![n, c, h, w]);
        let mut out = Tensor::zeros(vec![n, c, h, w]);
        let mut inv_std = vec![T::zero(); c];
        for (ci, inv) in inv_std.iter_mut().enumerate() {
            *inv = T::from_f64(1.0 / (stats[ci].1 + self.eps.to_f64()).sqrt());
        }
        {
            let xh = x_hat.data_mut();
            let o = out.data_mut();
            xh.par_chunks_mut(plane)
                .zip(o.par_chunks_mut(plane))
                .enumerate()
                .for_each(|(nc, (xh_row, o_row))| {
                    let ci = nc % c;
                    let mean = T::from_f64(stats[ci].0);
                    let inv = inv_std[ci];
                    let (g, b) = (self.gamma.data()[ci], self.beta.data()[ci]);
                    let src = &x_data[nc * plane..(nc + 1) * plane];
                    for i in 0..plane {
                        let xhv = (src[i] - mean) * inv;
                        xh_row[i] = xhv;
                        o_row[i] = g * xhv + b;
                    }
                });
        }

        let mom = self.momentum;
        let one_minus = T::one() - mom;
        for ci in 0..c {
            let rm = &mut self.running_mean.data_mut()[ci];
            *rm = mom * *rm + one_minus * T::from_f64(stats[ci].0);
            let rv = &mut self.running_var.data_mut()[ci];
            *rv = mom * *rv + one_minus * T::from_f64(stats[ci].1);
        }

        Ok((out, BnCache { x_hat, inv_std }))
    }

    pub fn forward_infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, c, h, w) = self.check_input(x)?;
        let plane = h * w;
        let mut out = Tensor::zeros(vec![n, c, h, w]);
        let x_data = x.data();
        out.data_mut()
            .par_chunks_mut(plane)
            .enumerate()
            .for_each(|(nc, o_row)| {
                let ci = nc % c;
                let mean = self.running_mean.data()[ci];
                let inv = T::one() / (self.running_var.data()[ci] + self.eps).sqrt();
                let (g, b) = (self.gamma.data()[ci], self.beta.data()[ci]);
                let src = &x_data[nc * plane..(nc + 1) * plane];
                for i in 0..plane {
                    o_row[i] = g * (src[i] - mean) * inv + b;
                }
            });
        Ok(out)
    }

    pub fn backward(&self, cache: &BnCache<T>, grad_out: &Tensor<T>) -> Result<BnGrads<T>> {
        if grad_out.shape() != cache.x_hat.shape() {
            return Err(Error::shape(format!(
                "grad_out shape {:?} does not match batchnorm input {:?}",
                grad_out.shape(),
                cache.x_hat.shape()
            )));
        }
        let (n, c, h, w) = cache.x_hat.dims4()?;
        let plane = h * w;
        let m = n * plane;

        let g = grad_out.data();
        let xh = cache.x_hat.data();
        // Per-channel reductions: sum(dy) and sum(dy * x_hat).
        let sums: Vec<(f64, f64)> = (0..c)
            .into_par_iter()
            .map(|ci| {
                let mut s = 0.0f64;
                let mut sx = 0.0f64;
                for smp in 0..n {
                    let base = (smp * c + ci) * plane;
                    for i in 0..plane {
                        let gv = g[base + i].to_f64();
                        s += gv;
                        sx += gv * xh[base + i].to_f64();
                    }
                }
                (s, sx)
            })
            .collect();

        let mut grad_gamma = Tensor::zeros(vec![c]);
        let mut grad_beta = Tensor::zeros(vec![c]);
        for ci in 0..c {
            grad_beta.data_mut()[ci] = T::from_f64(sums[ci].0);
            grad_gamma.data_mut()[ci] = T::from_f64(sums[ci].1);
        }

        // dx = (gamma * inv_std / m) * (m * dy - sum(dy) - x_hat * sum(dy * x_hat))
        let mut grad_x = Tensor::zeros(vec![n, c, h, w]);
        grad_x
            .data_mut()
            .par_chunks_mut(plane)
            .enumerate()
            .for_each(|(nc, gx_row)| {
                let ci = nc % c;
                let scale = self.gamma.data()[ci] * cache.inv_std[ci] * T::from_f64(1.0 / m as f64);
                let m_t = T::from_f64(m as f64);
                let d_beta = T::from_f64(sums[ci].0);
                let d_gamma = T::from_f64(sums[ci].1);
                let base = nc * plane;
                for i in 0..plane {
                    gx_row[i] = scale * (m_t * g[base + i] - d_beta - xh[base + i] * d_gamma);
                }
            });

        Ok(BnGrads {
            x: grad_x,
            gamma: grad_gamma,
            beta: grad_beta,
        })
    }
}
