//! Adam, the decaying learning-rate schedule, and the epoch loops.
//!
//! Training is sequential over batches; everything the loop touches is
//! deterministic given (seed, config, data), including the shuffle order,
//! which is drawn from a child stream of the run seed per epoch.

use std::time::Instant;

use crate::data::PixelImage;
use crate::error::{Error, Result};
use crate::graph::{ADLiteConfig, ModelGraph};
use crate::layers::softmax_cce;
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_BATCH_SIZE: usize = 64;
pub const DEFAULT_BASE_LR: f64 = 0.00095;

/// First/second-moment estimates per parameter, in graph parameter order.
pub struct AdamState<T: Scalar> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u64,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> AdamState<T> {
    pub fn for_graph(graph: &ModelGraph<T>) -> Self {
        let shapes: Vec<Vec<usize>> = graph
            .named_params()
            .iter()
            .map(|(_, t)| t.shape().to_vec())
            .collect();
        AdamState {
            m: shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
            t: 0,
            beta1: T::from_f64(0.9),
            beta2: T::from_f64(0.999),
            eps: T::from_f64(1e-7),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.m, &self.v)
    }

    /// Restore from checkpointed moments.
    pub fn from_parts(m: Vec<Tensor<T>>, v: Vec<Tensor<T>>, t: u64) -> Self {
        AdamState {
            m,
            v,
            t,
            beta1: T::from_f64(0.9),
            beta2: T::from_f64(0.999),
            eps: T::from_f64(1e-7),
        }
    }

    /// One bias-corrected update:
    /// m <- b1 m + (1 - b1) g;  v <- b2 v + (1 - b2) g^2;
    /// p <- p - lr * m_hat / (sqrt(v_hat) + eps).
    pub fn step(
        &mut self,
        params: &mut [(String, &mut Tensor<T>)],
        grads: &[Tensor<T>],
        lr: f64,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::State(format!(
                "optimizer tracks {} parameters, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if !lr.is_finite() || lr < 0.0 {
            return Err(Error::Config(format!("learning rate {lr} must be >= 0")));
        }
        self.t += 1;
        let b1 = self.beta1;
        let b2 = self.beta2;
        let one = T::one();
        let corr1 = one - b1.powi(self.t as i32);
        let corr2 = one - b2.powi(self.t as i32);
        let lr_t = T::from_f64(lr);
        for (pi, ((name, p), g)) in params.iter_mut().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::shape(format!(
                    "gradient shape {:?} does not match parameter {name} {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let m = self.m[pi].data_mut();
            let v = self.v[pi].data_mut();
            let pd = p.data_mut();
            for i in 0..pd.len() {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let m_hat = m[i] / corr1;
                let v_hat = v[i] / corr2;
                let next = pd[i] - lr_t * m_hat / (v_hat.sqrt() + self.eps);
                if !next.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite update for {name}[{i}] at step {}",
                        self.t
                    )));
                }
                pd[i] = next;
            }
        }
        Ok(())
    }
}

/// How the rate falls once decay has started.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecayStyle {
    /// Multiply by (1 - rate) every epoch past the start epoch.
    #[default]
    PerEpoch,
    /// A single (1 - rate) cut after the start epoch, constant thereafter.
    OneShot,
}

/// Base rate with an optional decay that begins after `decay_start_epoch`.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub decay_start_epoch: Option<u32>,
    pub decay_rate: f64,
    pub style: DecayStyle,
}

impl LrSchedule {
    pub fn constant(base_lr: f64) -> Self {
        LrSchedule {
            base_lr,
            decay_start_epoch: None,
            decay_rate: 0.05,
            style: DecayStyle::PerEpoch,
        }
    }

    pub fn decaying(base_lr: f64, start_epoch: u32, rate: f64) -> Self {
        LrSchedule {
            base_lr,
            decay_start_epoch: Some(start_epoch),
            decay_rate: rate,
            style: DecayStyle::PerEpoch,
        }
    }

    /// `epoch` is 1-based. Epochs up to and including the start epoch run at
    /// the base rate.
    pub fn lr_at_epoch(&self, epoch: u32) -> f64 {
        match self.decay_start_epoch {
            None => self.base_lr,
            Some(start) => {
                let steps = epoch.saturating_sub(start);
                match self.style {
                    DecayStyle::PerEpoch => {
                        self.base_lr * (1.0 - self.decay_rate).powi(steps as i32)
                    }
                    DecayStyle::OneShot => {
                        if steps > 0 {
                            self.base_lr * (1.0 - self.decay_rate)
                        } else {
                            self.base_lr
                        }
                    }
                }
            }
        }
    }
}

/// Cross-entropy configuration; `None` weights is the unweighted loss.
#[derive(Debug, Clone)]
pub struct LossCfg<T: Scalar> {
    pub class_weights: Option<Vec<T>>,
}

impl<T: Scalar> Default for LossCfg<T> {
    fn default() -> Self {
        LossCfg {
            class_weights: None,
        }
    }
}

/// Weights inversely proportional to class frequency, rescaled to mean 1:
/// w_k = total / (K * n_k), then w <- w * K / sum(w).
pub fn inverse_frequency_weights<T: Scalar>(counts: &[usize]) -> Result<Vec<T>> {
    if counts.is_empty() || counts.iter().any(|&c| c == 0) {
        return Err(Error::Config(
            "class weights need a positive count per class".into(),
        ));
    }
    let k = counts.len() as f64;
    let total: usize = counts.iter().sum();
    let raw: Vec<f64> = counts
        .iter()
        .map(|&n| total as f64 / (k * n as f64))
        .collect();
    let sum: f64 = raw.iter().sum();
    Ok(raw.iter().map(|w| T::from_f64(w * k / sum)).collect())
}

/// Samples preprocessed once and reused across epochs.
pub struct PreparedDataset<T: Scalar> {
    pub images: Vec<Tensor<T>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl<T: Scalar> PreparedDataset<T> {
    pub fn from_pixels(
        images: &[PixelImage],
        labels: &[usize],
        num_classes: usize,
        input_channels: usize,
        input_size: usize,
    ) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Dataset(format!(
                "{} images vs {} labels",
                images.len(),
                labels.len()
            )));
        }
        let tensors = images
            .iter()
            .map(|img| crate::data::preprocess::preprocess(img, input_channels, input_size))
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedDataset {
            images: tensors,
            labels: labels.to_vec(),
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    fn batch(&self, positions: &[usize]) -> (Tensor<T>, Vec<usize>) {
        let per = self.images[positions[0]].len();
        let shape = self.images[positions[0]].shape().to_vec();
        let mut data = Vec::with_capacity(positions.len() * per);
        let mut labels = Vec::with_capacity(positions.len());
        for &p in positions {
            data.extend_from_slice(self.images[p].data());
            labels.push(self.labels[p]);
        }
        let mut full = vec![positions.len()];
        full.extend(shape);
        (Tensor::new(full, data).expect("consistent sample shapes"), labels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub loss: f64,
    pub accuracy: f64,
}

/// One pass over the training set: shuffle, then one Adam step per batch
/// (the final partial batch included). Batch norm runs in training mode.
pub fn train_epoch<T: Scalar>(
    graph: &mut ModelGraph<T>,
    adam: &mut AdamState<T>,
    data: &PreparedDataset<T>,
    loss: &LossCfg<T>,
    lr: f64,
    batch_size: usize,
    shuffle_rng: &mut Rng,
) -> Result<EpochStats> {
    if data.is_empty() {
        return Err(Error::Dataset("cannot train on an empty dataset".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    shuffle_rng.shuffle(&mut order);

    let mut loss_sum = 0.0f64;
    let mut correct = 0usize;
    for (batch_idx, chunk) in order.chunks(batch_size).enumerate() {
        let (x, labels) = data.batch(chunk);
        let step = graph.forward_train(&x)?;
        let out = softmax_cce(&step.logits, &labels, loss.class_weights.as_deref())
            .map_err(|e| batch_context(e, batch_idx))?;
        correct += count_correct(&step.probs, &labels);
        loss_sum += out.loss.to_f64() * labels.len() as f64;
        let grads = graph.backward(&step.cache, &out.grad_logits)?;
        let mut params = graph.named_params_mut();
        adam.step(&mut params, &grads.tensors, lr)
            .map_err(|e| batch_context(e, batch_idx))?;
    }
    Ok(EpochStats {
        loss: loss_sum / data.len() as f64,
        accuracy: correct as f64 / data.len() as f64,
    })
}

fn batch_context(e: Error, batch_idx: usize) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!("batch {batch_idx}: {msg}")),
        other => other,
    }
}

fn count_correct<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> usize {
    let (n, k) = probs.dims2().expect("probs are (N, K)");
    let mut correct = 0;
    for s in 0..n {
        if argmax(&probs.data()[s * k..(s + 1) * k]) == labels[s] {
            correct += 1;
        }
    }
    correct
}

/// Ties resolve to the lowest class index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    /// Row-major (n, num_classes) probabilities.
    pub probabilities: Vec<f64>,
}

/// Inference-mode pass over a dataset. Never mutates the graph: batch norm
/// uses running statistics and no optimizer state is touched.
pub fn evaluate<T: Scalar>(
    graph: &ModelGraph<T>,
    data: &PreparedDataset<T>,
    loss: &LossCfg<T>,
    batch_size: usize,
) -> Result<EvalResult> {
    if data.is_empty() {
        return Err(Error::Dataset("cannot evaluate an empty dataset".into()));
    }
    let positions: Vec<usize> = (0..data.len()).collect();
    let mut predictions = Vec::with_capacity(data.len());
    let mut probabilities = Vec::with_capacity(data.len() * data.num_classes);
    let mut loss_sum = 0.0f64;
    let mut correct = 0usize;
    for chunk in positions.chunks(batch_size.max(1)) {
        let (x, labels) = data.batch(chunk);
        let (logits, probs) = graph.forward_infer(&x)?;
        let out = softmax_cce(&logits, &labels, loss.class_weights.as_deref())?;
        loss_sum += out.loss.to_f64() * labels.len() as f64;
        correct += count_correct(&probs, &labels);
        let k = data.num_classes;
        for s in 0..labels.len() {
            let row = &probs.data()[s * k..(s + 1) * k];
            predictions.push(argmax(row));
            probabilities.extend(row.iter().map(|v| v.to_f64()));
        }
    }
    Ok(EvalResult {
        loss: loss_sum / data.len() as f64,
        accuracy: correct as f64 / data.len() as f64,
        predictions,
        probabilities,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: u32,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub wall_seconds: f64,
}

/// The record stream of one training run. The final parameters live in the
/// graph the caller passed in.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub config: ADLiteConfig,
    pub seed: u64,
    pub records: Vec<EpochRecord>,
}

/// Run `epochs` epochs with per-epoch learning rates from the schedule,
/// evaluating the validation set in inference mode after each. No early
/// stopping. The shuffle stream of epoch e is `Rng::new(seed).derive(e)`,
/// so epoch order is reproducible independently of batch counts.
#[allow(clippy::too_many_arguments)]
pub fn fit<T: Scalar>(
    graph: &mut ModelGraph<T>,
    adam: &mut AdamState<T>,
    train: &PreparedDataset<T>,
    val: &PreparedDataset<T>,
    schedule: &LrSchedule,
    epochs: u32,
    batch_size: usize,
    loss: &LossCfg<T>,
    seed: u64,
) -> Result<TrainRun> {
    let root = Rng::new(seed);
    let mut records = Vec::with_capacity(epochs as usize);
    for epoch in 1..=epochs {
        let started = Instant::now();
        let lr = schedule.lr_at_epoch(epoch);
        let mut shuffle_rng = root.derive(epoch as u64);
        let stats = train_epoch(graph, adam, train, loss, lr, batch_size, &mut shuffle_rng)?;
        let val_res = evaluate(graph, val, loss, batch_size)?;
        records.push(EpochRecord {
            epoch,
            lr,
            train_loss: stats.loss,
            train_acc: stats.accuracy,
            val_loss: val_res.loss,
            val_acc: val_res.accuracy,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainRun {
        config: graph.cfg.clone(),
        seed,
        records,
    })
}
