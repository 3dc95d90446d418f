//! Softmax with categorical cross-entropy, optionally class-weighted.
//!
//! Rows are shifted by their maximum before exponentiation. The loss is the
//! batch mean of -w_y * log p_y; its gradient with respect to the logits is
//! w_y * (p - onehot) / N, which is what backpropagation consumes.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub struct LossOutput<T: Scalar> {
    pub loss: T,
    pub probs: Tensor<T>,
    pub grad_logits: Tensor<T>,
}

/// Row-wise softmax of (N, K) logits.
pub fn softmax_probs<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, k) = logits.dims2()?;
    let mut probs = Tensor::zeros(vec![n, k]);
    for s in 0..n {
        let row = &logits.data()[s * k..(s + 1) * k];
        let mut maxv = row[0];
        for &v in row {
            maxv = maxv.max(v);
        }
        let out = &mut probs.data_mut()[s * k..(s + 1) * k];
        let mut sum = T::zero();
        for (o, &v) in out.iter_mut().zip(row) {
            *o = (v - maxv).exp();
            sum += *o;
        }
        for o in out.iter_mut() {
            *o = *o / sum;
        }
    }
    probs.validate_finite("softmax probabilities")?;
    Ok(probs)
}

/// Loss, probabilities, and logit gradient in one pass.
///
/// `class_weights`, when given, must hold one strictly positive weight per
/// class; the plain cross-entropy is the all-ones case.
pub fn softmax_cce<T: Scalar>(
    logits: &Tensor<T>,
    targets: &[usize],
    class_weights: Option<&[T]>,
) -> Result<LossOutput<T>> {
    let (n, k) = logits.dims2()?;
    if k < 2 {
        return Err(Error::Config(format!(
            "classification needs at least 2 classes, got {k}"
        )));
    }
    if targets.len() != n {
        return Err(Error::Label(format!(
            "{} targets for a batch of {n}",
            targets.len()
        )));
    }
    if let Some(w) = class_weights {
        if w.len() != k {
            return Err(Error::Config(format!(
                "{} class weights for {k} classes",
                w.len()
            )));
        }
        if w.iter().any(|v| !(*v > T::zero())) {
            return Err(Error::Config("class weights must be positive".into()));
        }
    }
    for (s, &t) in targets.iter().enumerate() {
        if t >= k {
            return Err(Error::Label(format!(
                "target {t} out of range for {k} classes (sample {s})"
            )));
        }
    }

    let mut probs = Tensor::zeros(vec![n, k]);
    let mut grad = Tensor::zeros(vec![n, k]);
    let inv_n = T::from_f64(1.0 / n as f64);
    let mut loss_acc = 0.0f64;
    for s in 0..n {
        let row = &logits.data()[s * k..(s + 1) * k];
        let mut maxv = row[0];
        for &v in row {
            maxv = maxv.max(v);
        }
        let mut sum = T::zero();
        let p_row = &mut probs.data_mut()[s * k..(s + 1) * k];
        for (p, &v) in p_row.iter_mut().zip(row) {
            *p = (v - maxv).exp();
            sum += *p;
        }
        for p in p_row.iter_mut() {
            *p = *p / sum;
        }
        let y = targets[s];
        let w = class_weights.map_or(T::one(), |cw| cw[y]);
        // log p_y through the shifted form: (logit_y - max) - ln(sum exp)
        let logp = (row[y] - maxv - sum.ln()).to_f64();
        loss_acc -= w.to_f64() * logp;
        let g_row = &mut grad.data_mut()[s * k..(s + 1) * k];
        for (ki, g) in g_row.iter_mut().enumerate() {
            let p = probs.data()[s * k + ki];
            let onehot = if ki == y { T::one() } else { T::zero() };
            *g = w * (p - onehot) * inv_n;
        }
    }
    let loss = T::from_f64(loss_acc / n as f64);
    if !loss.is_finite() {
        return Err(Error::Numeric("non-finite cross-entropy loss".into()));
    }
    probs.validate_finite("softmax probabilities")?;
    Ok(LossOutput {
        loss,
        probs,
        grad_logits: grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{fd_check, rel_err};
    use crate::rng::Rng;

    #[test]
    fn uniform_logits_give_uniform_probs_and_ln_k_loss() {
        let logits = Tensor::<f64>::full(vec![3, 4], 0.7);
        let out = softmax_cce(&logits, &[0, 1, 3], None).unwrap();
        for &p in out.probs.data() {
            assert!((p - 0.25).abs() < 1e-12);
        }
        assert!(rel_err(out.loss, 4.0f64.ln()) < 1e-12);
    }

    #[test]
    fn saturated_correct_logit_drives_loss_to_zero() {
        let mut logits = Tensor::<f64>::zeros(vec![1, 4]);
        logits.data_mut()[2] = 30.0;
        let out = softmax_cce(&logits, &[2], None).unwrap();
        assert!(out.loss < 1e-9, "loss {}", out.loss);
    }

    #[test]
    fn rows_sum_to_one_and_stay_in_unit_interval() {
        let mut rng = Rng::new(31);
        let logits = Tensor::<f64>::he_init(vec![5, 6], 1, &mut rng).unwrap();
        let probs = softmax_probs(&logits).unwrap();
        for s in 0..5 {
            let row = &probs.data()[s * 6..(s + 1) * 6];
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn out_of_range_target_is_a_label_error() {
        let logits = Tensor::<f64>::zeros(vec![1, 3]);
        assert!(matches!(
            softmax_cce(&logits, &[3], None),
            Err(Error::Label(_))
        ));
    }

    #[test]
    fn non_positive_weights_are_rejected() {
        let logits = Tensor::<f64>::zeros(vec![1, 3]);
        assert!(matches!(
            softmax_cce(&logits, &[0], Some(&[1.0, 0.0, 1.0])),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn logit_gradient_matches_finite_differences() {
        let mut rng = Rng::new(32);
        let logits = Tensor::<f64>::he_init(vec![4, 5], 1, &mut rng).unwrap();
        let targets = [0usize, 2, 4, 2];
        for weights in [None, Some(vec![0.5, 1.5, 2.0, 0.8, 1.2])] {
            let out = softmax_cce(&logits, &targets, weights.as_deref()).unwrap();
            let worst = fd_check(
                &logits,
                &out.grad_logits,
                |lt| softmax_cce(lt, &targets, weights.as_deref()).unwrap().loss,
                1e-6,
            );
            assert!(worst < 1e-6, "worst {worst} (weighted: {})", weights.is_some());
        }
    }
}
