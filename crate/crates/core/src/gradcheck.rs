//! Central finite-difference verification utilities.
//!
//! These run forward passes only, so they stay independent of every
//! hand-derived backward path they are used to check. Run them in double
//! precision: the default step of 1e-6 is meaningless in f32.

use crate::rng::Rng;
use crate::tensor::Tensor;

/// Relative error with the denominator floored at 1e-8 so that near-zero
/// gradient pairs compare absolutely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Absolute slack granted before the relative comparison kicks in. A
/// central difference of an O(100) f64 loss at step 1e-6 carries up to
/// ~1e-8 of rounding noise in the estimated slope, so differences at that
/// scale say nothing about the analytic gradient; 1e-7 leaves a margin
/// while staying far below any gradient of interest.
pub const FD_ATOL: f64 = 1e-7;

/// [`rel_err`] with the [`FD_ATOL`] allowance: slopes closer than the
/// finite-difference noise floor agree by definition.
pub fn rel_err_banded(analytic: f64, numeric: f64) -> f64 {
    if (analytic - numeric).abs() <= FD_ATOL {
        0.0
    } else {
        rel_err(analytic, numeric)
    }
}

/// Central difference slope of `loss` along coordinate `i` of `at`.
pub fn fd_slope(
    at: &Tensor<f64>,
    i: usize,
    step: f64,
    loss: &mut impl FnMut(&Tensor<f64>) -> f64,
) -> f64 {
    let mut probe = at.clone();
    let orig = probe.data()[i];
    probe.data_mut()[i] = orig + step;
    let up = loss(&probe);
    probe.data_mut()[i] = orig - step;
    let down = loss(&probe);
    (up - down) / (2.0 * step)
}

/// Max relative error between `analytic` and central differences of `loss`
/// over the listed coordinates.
pub fn fd_check_coords(
    at: &Tensor<f64>,
    analytic: &Tensor<f64>,
    mut loss: impl FnMut(&Tensor<f64>) -> f64,
    step: f64,
    coords: &[usize],
) -> f64 {
    assert_eq!(at.shape(), analytic.shape());
    let mut worst = 0.0f64;
    for &i in coords {
        let numeric = fd_slope(at, i, step, &mut loss);
        worst = worst.max(rel_err_banded(analytic.data()[i], numeric));
    }
    worst
}

/// [`fd_check_coords`] over every coordinate.
pub fn fd_check(
    at: &Tensor<f64>,
    analytic: &Tensor<f64>,
    loss: impl FnMut(&Tensor<f64>) -> f64,
    step: f64,
) -> f64 {
    let coords: Vec<usize> = (0..at.len()).collect();
    fd_check_coords(at, analytic, loss, step, &coords)
}

/// Random upstream gradient for probing d(sum(out * upstream))/d(input).
pub fn upstream(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    Tensor::he_init(shape.to_vec(), 2, rng).unwrap()
}

/// `count` distinct coordinate indices sampled without replacement.
pub fn sample_coords(len: usize, count: usize, rng: &mut Rng) -> Vec<usize> {
    let mut all: Vec<usize> = (0..len).collect();
    rng.shuffle(&mut all);
    all.truncate(count.min(len));
    all.sort_unstable();
    all
}
