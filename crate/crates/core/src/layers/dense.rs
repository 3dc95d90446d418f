//! Fully connected output layer: out = x * W^T + b.

use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Dense<T: Scalar> {
    /// (outDim, inDim)
    pub weights: Tensor<T>,
    /// (outDim)
    pub bias: Tensor<T>,
}

pub struct DenseCache<T: Scalar> {
    x: Tensor<T>,
}

pub struct DenseGrads<T: Scalar> {
    pub x: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(out_dim: usize, in_dim: usize, rng: &mut Rng) -> Result<Self> {
        Ok(Dense {
            weights: Tensor::he_init(vec![out_dim, in_dim], in_dim, rng)?,
            bias: Tensor::zeros(vec![out_dim]),
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weights.shape()[0]
    }

    /// (inDim + 1) * outDim
    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, DenseCache<T>)> {
        let (n, in_dim) = x.dims2()?;
        if in_dim != self.in_dim() {
            return Err(Error::shape(format!(
                "dense expects {} inputs, got {in_dim}",
                self.in_dim()
            )));
        }
        let out_dim = self.out_dim();
        let mut out = Tensor::zeros(vec![n, out_dim]);
        for s in 0..n {
            let x_row = &x.data()[s * in_dim..(s + 1) * in_dim];
            for o in 0..out_dim {
                let w_row = &self.weights.data()[o * in_dim..(o + 1) * in_dim];
                out.data_mut()[s * out_dim + o] = dot(x_row, w_row) + self.bias.data()[o];
            }
        }
        Ok((out, DenseCache { x: x.clone() }))
    }

    pub fn backward(&self, cache: &DenseCache<T>, grad_out: &Tensor<T>) -> Result<DenseGrads<T>> {
        let (n, in_dim) = cache.x.dims2()?;
        let out_dim = self.out_dim();
        if grad_out.shape() != [n, out_dim] {
            return Err(Error::shape(format!(
                "grad_out shape {:?} does not match dense output ({n}, {out_dim})",
                grad_out.shape()
            )));
        }
        let mut grad_w = Tensor::zeros(vec![out_dim, in_dim]);
        let mut grad_b = Tensor::zeros(vec![out_dim]);
        let mut grad_x = Tensor::zeros(vec![n, in_dim]);
        for s in 0..n {
            let g_row = &grad_out.data()[s * out_dim..(s + 1) * out_dim];
            let x_row = &cache.x.data()[s * in_dim..(s + 1) * in_dim];
            for o in 0..out_dim {
                let g = g_row[o];
                grad_b.data_mut()[o] += g;
                let w_row = &self.weights.data()[o * in_dim..(o + 1) * in_dim];
                let gw_row = &mut grad_w.data_mut()[o * in_dim..(o + 1) * in_dim];
                let gx_row = &mut grad_x.data_mut()[s * in_dim..(s + 1) * in_dim];
                for i in 0..in_dim {
                    gw_row[i] += g * x_row[i];
                    gx_row[i] += g * w_row[i];
                }
            }
        }
        Ok(DenseGrads {
            x: grad_x,
            weights: grad_w,
            bias: grad_b,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{fd_check, upstream};

    #[test]
    fn identity_weights_pass_input_through() {
        let mut w = Tensor::zeros(vec![3, 3]);
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        let dense = Dense {
            weights: w,
            bias: Tensor::zeros(vec![3]),
        };
        let x = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let (out, _) = dense.forward(&x).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn param_count_formula() {
        let mut rng = Rng::new(1);
        let dense = Dense::<f32>::new(4, 192, &mut rng).unwrap();
        assert_eq!(dense.param_count(), 772); // (192 + 1) * 4
    }

    #[test]
    fn input_width_mismatch_is_shape_error() {
        let mut rng = Rng::new(2);
        let dense = Dense::<f32>::new(2, 5, &mut rng).unwrap();
        let x = Tensor::zeros(vec![1, 4]);
        assert!(matches!(dense.forward(&x), Err(Error::Shape(_))));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = Rng::new(12);
        let dense = Dense::<f64>::new(3, 5, &mut rng).unwrap();
        let x = Tensor::he_init(vec![4, 5], 1, &mut rng).unwrap();
        let up = upstream(&[4, 3], &mut rng);

        let (_, cache) = dense.forward(&x).unwrap();
        let grads = dense.backward(&cache, &up).unwrap();

        let score = |o: &Tensor<f64>| o.data().iter().zip(up.data()).map(|(a, b)| a * b).sum();
        assert!(fd_check(&x, &grads.x, |t| score(&dense.forward(t).unwrap().0), 1e-6) < 1e-6);
        assert!(
            fd_check(
                &dense.weights,
                &grads.weights,
                |wt| {
                    let d = Dense {
                        weights: wt.clone(),
                        bias: dense.bias.clone(),
                    };
                    score(&d.forward(&x).unwrap().0)
                },
                1e-6
            ) < 1e-6
        );
        assert!(
            fd_check(
                &dense.bias,
                &grads.bias,
                |bt| {
                    let d = Dense {
                        weights: dense.weights.clone(),
                        bias: bt.clone(),
                    };
                    score(&d.forward(&x).unwrap().0)
                },
                1e-6
            ) < 1e-6
        );
    }
}
