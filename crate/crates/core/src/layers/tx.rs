//! Negative-image transformation layer: out = m * (c - in), elementwise.
//! Parameterless and affine, so backward is a constant scale by -m and no
//! cache is needed.

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct TxLayer<T: Scalar> {
    pub m: T,
    /// Offset the input is subtracted from; 255 matches 8-bit image data.
    pub c: T,
}

impl<T: Scalar> TxLayer<T> {
    pub fn new(m: f64, c: f64) -> Self {
        TxLayer {
            m: T::from_f64(m),
            c: T::from_f64(c),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (m, c) = (self.m, self.c);
        x.map(|v| m * (c - v))
    }

    pub fn backward(&self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let m = self.m;
        grad_out.map(|g| -m * g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{fd_check, upstream};
    use crate::rng::Rng;

    #[test]
    fn offset_cancellation_and_hand_value() {
        let tx = TxLayer::<f64>::new(0.8, 255.0);
        let x = Tensor::new(vec![2], vec![255.0, 0.0]).unwrap();
        let out = tx.forward(&x).unwrap();
        assert_eq!(out.data(), &[0.0, 204.0]);
    }

    #[test]
    fn unit_m_is_an_involution() {
        let tx = TxLayer::<f64>::new(1.0, 255.0);
        let x = Tensor::new(vec![4], vec![0.0, 17.0, 200.0, 255.0]).unwrap();
        let twice = tx.forward(&tx.forward(&x).unwrap()).unwrap();
        assert_eq!(twice.data(), x.data());
    }

    #[test]
    fn forward_is_affine() {
        let tx = TxLayer::<f64>::new(0.8, 255.0);
        let mut rng = Rng::new(10);
        let a = Tensor::<f64>::he_init(vec![8], 1, &mut rng).unwrap();
        let b = Tensor::<f64>::he_init(vec![8], 1, &mut rng).unwrap();
        for alpha in [0.0, 0.25, 0.5, 1.0] {
            let mixed = Tensor::new(
                vec![8],
                a.data()
                    .iter()
                    .zip(b.data())
                    .map(|(x, y)| alpha * x + (1.0 - alpha) * y)
                    .collect(),
            )
            .unwrap();
            let lhs = tx.forward(&mixed).unwrap();
            let fa = tx.forward(&a).unwrap();
            let fb = tx.forward(&b).unwrap();
            for i in 0..8 {
                let rhs = alpha * fa.data()[i] + (1.0 - alpha) * fb.data()[i];
                assert!((lhs.data()[i] - rhs).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_is_minus_m_everywhere() {
        let tx = TxLayer::<f64>::new(0.8, 255.0);
        let mut rng = Rng::new(11);
        let x = Tensor::<f64>::he_init(vec![6], 1, &mut rng).unwrap();
        let up = upstream(&[6], &mut rng);
        let analytic = tx.backward(&up).unwrap();
        let worst = fd_check(
            &x,
            &analytic,
            |xt| {
                let o = tx.forward(xt).unwrap();
                o.data().iter().zip(up.data()).map(|(a, b)| a * b).sum()
            },
            1e-6,
        );
        // The 255 offset puts the probe loss at O(100), so the difference
        // quotient carries ~1e-7 of rounding noise.
        assert!(worst < 1e-5, "worst {worst}");
    }
}
