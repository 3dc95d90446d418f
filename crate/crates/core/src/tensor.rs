//! Dense rank-N arrays in row-major order.
//!
//! Activations use the (N, C, H, W) layout throughout; convolution weights
//! use (outC, inC, kH, kW). Tensors are immutable once returned from an
//! operation (mutation happens only through operations that own their
//! output buffer), so sharing them across threads for reads is safe.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} implies {} elements, buffer holds {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn full(shape: Vec<usize>, value: T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn from_f64_slice(shape: Vec<usize>, values: &[f64]) -> Result<Self> {
        Tensor::new(shape, values.iter().map(|&v| T::from_f64(v)).collect())
    }

    /// He-normal initialization: i.i.d. normal(0, sqrt(2 / fan_in)).
    pub fn he_init(shape: Vec<usize>, fan_in: usize, rng: &mut Rng) -> Result<Self> {
        if fan_in == 0 {
            return Err(Error::Config("he_init requires fan_in > 0".into()));
        }
        let std = (2.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::from_f64(std * rng.normal())).collect();
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Same buffer under a new shape with an identical element count.
    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} ({} elements) to {:?}",
                self.shape,
                self.data.len(),
                shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Row-major flat offset of a rank-4 index.
    #[inline(always)]
    pub fn idx4(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        debug_assert_eq!(self.rank(), 4);
        ((n * self.shape[1] + c) * self.shape[2] + h) * self.shape[3] + w
    }

    #[inline(always)]
    pub fn at4(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.idx4(n, c, h, w)]
    }

    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        if self.rank() != 4 {
            return Err(Error::shape(format!(
                "expected rank-4 tensor, got shape {:?}",
                self.shape
            )));
        }
        Ok((self.shape[0], self.shape[1], self.shape[2], self.shape[3]))
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        if self.rank() != 2 {
            return Err(Error::shape(format!(
                "expected rank-2 tensor, got shape {:?}",
                self.shape
            )));
        }
        Ok((self.shape[0], self.shape[1]))
    }

    /// Elementwise map. The result must stay finite; a NaN/Inf output is the
    /// error state, not a value.
    pub fn map(&self, f: impl Fn(T) -> T) -> Result<Self> {
        let data: Vec<T> = self.data.iter().map(|&x| f(x)).collect();
        for (i, v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Numeric(format!(
                    "map produced non-finite value {v} at flat index {i}"
                )));
            }
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn validate_finite(&self, context: &str) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Numeric(format!(
                    "{context}: non-finite value {v} at flat index {i}"
                )));
            }
        }
        Ok(())
    }

    /// Channel slice [lo, hi) of a rank-4 tensor, copied out.
    pub fn slice_channels(&self, lo: usize, hi: usize) -> Result<Self> {
        let (n, c, h, w) = self.dims4()?;
        if lo >= hi || hi > c {
            return Err(Error::shape(format!(
                "channel slice [{lo}, {hi}) out of range for {c} channels"
            )));
        }
        let plane = h * w;
        let out_c = hi - lo;
        let mut data = Vec::with_capacity(n * out_c * plane);
        for b in 0..n {
            let start = (b * c + lo) * plane;
            data.extend_from_slice(&self.data[start..start + out_c * plane]);
        }
        Tensor::new(vec![n, out_c, h, w], data)
    }

    /// Mean over the spatial dims of a rank-4 tensor: (N, C, H, W) -> (N, C).
    pub fn reduce_mean_spatial(&self) -> Result<Self> {
        let (n, c, h, w) = self.dims4()?;
        let plane = h * w;
        if plane == 0 {
            return Err(Error::shape("reduce_mean_spatial over empty spatial dims"));
        }
        let inv = T::from_f64(1.0 / plane as f64);
        let mut data = Vec::with_capacity(n * c);
        for nc in 0..n * c {
            let s = &self.data[nc * plane..(nc + 1) * plane];
            let mut acc = T::zero();
            for &v in s {
                acc += v;
            }
            data.push(acc * inv);
        }
        Tensor::new(vec![n, c], data)
    }
}

/// Concatenate along the channel axis. Inputs must agree on batch and
/// spatial extents; output channels are `a`'s followed by `b`'s.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (an, ac, ah, aw) = a.dims4()?;
    let (bn, bc, bh, bw) = b.dims4()?;
    if an != bn || ah != bh || aw != bw {
        return Err(Error::shape(format!(
            "concat_channels: incompatible shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let plane = ah * aw;
    let mut data = Vec::with_capacity((ac + bc) * an * plane);
    for n in 0..an {
        data.extend_from_slice(&a.data()[n * ac * plane..(n + 1) * ac * plane]);
        data.extend_from_slice(&b.data()[n * bc * plane..(n + 1) * bc * plane]);
    }
    Tensor::new(vec![an, ac + bc, ah, aw], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    #[test]
    fn new_rejects_length_mismatch() {
        assert!(matches!(
            Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn map_identity_and_relu() {
        let t = Tensor::<f32>::new(vec![2], vec![-1.0, 2.0]).unwrap();
        assert_eq!(t.map(|x| x).unwrap().data(), t.data());
        assert_eq!(t.map(|x| x.max(0.0)).unwrap().data(), &[0.0, 2.0]);
    }

    #[test]
    fn map_matches_negative_transform_by_hand() {
        // 0.8 * (255 - 0) = 204
        let t = Tensor::<f64>::new(vec![1], vec![0.0]).unwrap();
        let out = t.map(|x| 0.8 * (255.0 - x)).unwrap();
        assert_eq!(out.data(), &[204.0]);
    }

    #[test]
    fn map_flags_non_finite() {
        let t = Tensor::<f32>::new(vec![1], vec![1.0]).unwrap();
        assert!(matches!(t.map(|x| x / 0.0), Err(Error::Numeric(_))));
    }

    #[test]
    fn concat_shapes_and_slice_recovery() {
        let a = Tensor::<f32>::full(vec![1, 1, 2, 2], 1.0);
        let b = Tensor::<f32>::full(vec![1, 1, 2, 2], 0.0);
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape(), &[1, 2, 2, 2]);
        assert_eq!(c.slice_channels(0, 1).unwrap(), a);
        assert_eq!(c.slice_channels(1, 2).unwrap(), b);
    }

    #[test]
    fn concat_spectral_arithmetic() {
        let a = Tensor::<f32>::zeros(vec![2, 64, 7, 7]);
        let b = Tensor::<f32>::zeros(vec![2, 128, 7, 7]);
        assert_eq!(concat_channels(&a, &b).unwrap().shape(), &[2, 192, 7, 7]);
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = Tensor::<f32>::zeros(vec![1, 3, 4, 4]);
        let b = Tensor::<f32>::zeros(vec![1, 2, 4, 5]);
        assert!(matches!(concat_channels(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn mean_spatial_shape_and_values() {
        let t = Tensor::<f32>::full(vec![1, 192, 7, 7], 3.5);
        let m = t.reduce_mean_spatial().unwrap();
        assert_eq!(m.shape(), &[1, 192]);
        assert!(m.data().iter().all(|&v| v == 3.5));

        let t = Tensor::<f64>::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.reduce_mean_spatial().unwrap().data(), &[2.5]);
    }

    #[test]
    fn mean_spatial_rejects_empty_plane() {
        let t = Tensor::<f32>::zeros(vec![1, 2, 0, 3]);
        assert!(matches!(t.reduce_mean_spatial(), Err(Error::Shape(_))));
    }

    #[test]
    fn he_init_is_seed_deterministic() {
        let mut r1 = Rng::new(5);
        let mut r2 = Rng::new(5);
        let mut r3 = Rng::new(6);
        let a = Tensor::<f32>::he_init(vec![4, 4], 8, &mut r1).unwrap();
        let b = Tensor::<f32>::he_init(vec![4, 4], 8, &mut r2).unwrap();
        let c = Tensor::<f32>::he_init(vec![4, 4], 8, &mut r3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn he_init_std_matches_fan_in() {
        // fan_in = 2 gives std sqrt(2/2) = 1; Monte-Carlo estimate within 5%.
        let mut rng = Rng::new(17);
        let t = Tensor::<f64>::he_init(vec![1_000_000], 2, &mut rng).unwrap();
        let n = t.len() as f64;
        let mean: f64 = t.data().iter().sum::<f64>() / n;
        let var: f64 = t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!((var.sqrt() - 1.0).abs() < 0.05, "std {}", var.sqrt());
    }

    #[test]
    fn mean_is_invariant_under_plane_permutation() {
        let t = Tensor::<f64>::new(vec![1, 1, 2, 2], vec![4.0, 1.0, 3.0, 2.0]).unwrap();
        let p = Tensor::<f64>::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let a = t.reduce_mean_spatial().unwrap();
        let b = p.reduce_mean_spatial().unwrap();
        assert!((a.data()[0] - b.data()[0]).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn row_major_round_trip(
            n in 1usize..4, c in 1usize..5, h in 1usize..6, w in 1usize..6
        ) {
            let t = Tensor::<f32>::zeros(vec![n, c, h, w]);
            let mut seen = vec![false; t.len()];
            for bn in 0..n { for bc in 0..c { for bh in 0..h { for bw in 0..w {
                let flat = t.idx4(bn, bc, bh, bw);
                // unflatten and compare
                let rw = flat % w;
                let rh = (flat / w) % h;
                let rc = (flat / (w * h)) % c;
                let rn = flat / (w * h * c);
                prop_assert_eq!((rn, rc, rh, rw), (bn, bc, bh, bw));
                prop_assert!(!seen[flat]);
                seen[flat] = true;
            }}}}
            prop_assert!(seen.iter().all(|&s| s));
        }

        #[test]
        fn concat_then_slice_recovers_inputs(
            n in 1usize..3, ca in 1usize..4, cb in 1usize..4, h in 1usize..5, w in 1usize..5,
            seed in 0u64..1000
        ) {
            let mut rng = Rng::new(seed);
            let a = Tensor::<f32>::he_init(vec![n, ca, h, w], 1, &mut rng).unwrap();
            let b = Tensor::<f32>::he_init(vec![n, cb, h, w], 1, &mut rng).unwrap();
            let c = concat_channels(&a, &b).unwrap();
            prop_assert_eq!(c.slice_channels(0, ca).unwrap(), a);
            prop_assert_eq!(c.slice_channels(ca, ca + cb).unwrap(), b);
        }
    }
}
