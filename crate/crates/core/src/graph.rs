//! The AD-Lite Net graph.
//!
//! Backbone: five Conv(+ReLU) -> MaxPool -> BatchNorm blocks with filter
//! counts [16, 32, 64, 96, 128] (5x5 kernel first, 3x3 after), then two
//! channel-preserving DWSC(+ReLU) -> BatchNorm blocks at the smallest
//! spatial extent. The parallel concatenation branch taps the output of
//! block 3, applies the negative-image transformation layer, runs two more
//! conv blocks (32 then 64 filters), and rejoins the backbone channel-wise
//! before global average pooling and the dense softmax head. With a 224
//! input the merge happens at 7x7 with 64 + 128 = 192 channels.

use crate::error::{Error, Result};
use crate::layers::{
    maxpool_backward, maxpool_forward, softmax_probs, Activation, BatchNorm, BnCache, Conv2D,
    ConvCache, Dense, DenseCache, Dwsc, DwscCache, MaxPoolCache, TxLayer,
};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{concat_channels, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ADLiteConfig {
    pub input_size: usize,
    pub input_channels: usize,
    pub num_classes: usize,
    pub base_filters: Vec<usize>,
    pub first_kernel: usize,
    pub other_kernels: usize,
    pub dwsc_count: usize,
    pub pcb_enabled: bool,
    /// 1-based index of the backbone block whose output feeds the branch.
    pub pcb_tap_block: usize,
    pub pcb_filters: Vec<usize>,
    pub tx_m: f64,
    pub tx_c: f64,
}

impl Default for ADLiteConfig {
    fn default() -> Self {
        ADLiteConfig {
            input_size: 224,
            input_channels: 1,
            num_classes: 4,
            base_filters: vec![16, 32, 64, 96, 128],
            first_kernel: 5,
            other_kernels: 3,
            dwsc_count: 2,
            pcb_enabled: true,
            pcb_tap_block: 3,
            pcb_filters: vec![32, 64],
            tx_m: 0.8,
            tx_c: 255.0,
        }
    }
}

impl ADLiteConfig {
    pub fn validate(&self) -> Result<()> {
        let nb = self.base_filters.len();
        if nb == 0 {
            return Err(Error::Config("base_filters must be non-empty".into()));
        }
        if self.base_filters.iter().any(|&f| f == 0) || self.pcb_filters.iter().any(|&f| f == 0) {
            return Err(Error::Config("filter counts must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        if !matches!(self.input_channels, 1 | 3) {
            return Err(Error::Config(format!(
                "input_channels must be 1 or 3, got {}",
                self.input_channels
            )));
        }
        if self.first_kernel % 2 == 0 || self.other_kernels % 2 == 0 {
            return Err(Error::Config(
                "same padding requires odd kernel sizes".into(),
            ));
        }
        // Every backbone block pools once; the extent must stay integral all
        // the way down (224 / 2^5 = 7).
        let divisor = 1usize
            .checked_shl(nb as u32)
            .ok_or_else(|| Error::Config("too many backbone blocks".into()))?;
        if self.input_size == 0 || self.input_size % divisor != 0 {
            return Err(Error::Config(format!(
                "input_size {} is not divisible by 2^{nb} = {divisor}",
                self.input_size
            )));
        }
        if self.pcb_enabled {
            if self.pcb_filters.is_empty() {
                return Err(Error::Config(
                    "an enabled branch needs at least one conv block".into(),
                ));
            }
            if self.pcb_tap_block == 0 || self.pcb_tap_block > nb {
                return Err(Error::Config(format!(
                    "pcb_tap_block {} outside [1, {nb}]",
                    self.pcb_tap_block
                )));
            }
            // Both branches must pool down to the same extent before the
            // channel concatenation.
            if self.pcb_filters.len() != nb - self.pcb_tap_block {
                return Err(Error::Config(format!(
                    "branch needs {} conv blocks to match the backbone's remaining pools, got {}",
                    nb - self.pcb_tap_block,
                    self.pcb_filters.len()
                )));
            }
            if !(0.0 < self.tx_m && self.tx_m < 1.0) {
                return Err(Error::Config(format!(
                    "tx_m must lie in (0, 1), got {}",
                    self.tx_m
                )));
            }
        }
        Ok(())
    }

    /// Spatial extent after the whole backbone (one pool per block).
    pub fn final_extent(&self) -> usize {
        self.input_size >> self.base_filters.len()
    }

    /// Channels entering global average pooling.
    pub fn merged_channels(&self) -> usize {
        let base = *self.base_filters.last().expect("non-empty");
        if self.pcb_enabled {
            base + *self.pcb_filters.last().expect("non-empty")
        } else {
            base
        }
    }
}

#[derive(Clone)]
struct ConvBlock<T: Scalar> {
    conv: Conv2D<T>,
    bn: BatchNorm<T>,
}

struct ConvBlockCache<T: Scalar> {
    conv: ConvCache<T>,
    pool: MaxPoolCache,
    bn: BnCache<T>,
}

#[derive(Clone)]
struct DwscBlock<T: Scalar> {
    dwsc: Dwsc<T>,
    bn: BatchNorm<T>,
}

struct DwscBlockCache<T: Scalar> {
    dwsc: DwscCache<T>,
    bn: BnCache<T>,
}

#[derive(Clone)]
struct PcbBranch<T: Scalar> {
    tx: TxLayer<T>,
    blocks: Vec<ConvBlock<T>>,
}

impl<T: Scalar> ConvBlock<T> {
    fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, ConvBlockCache<T>)> {
        let (a, conv_cache) = self.conv.forward(x, Activation::Relu)?;
        let (p, pool_cache) = maxpool_forward(&a)?;
        let (out, bn_cache) = self.bn.forward_train(&p)?;
        Ok((
            out,
            ConvBlockCache {
                conv: conv_cache,
                pool: pool_cache,
                bn: bn_cache,
            },
        ))
    }

    /// Returns the gradient into the block input (unless this is the graph's
    /// first block, whose input gradient nobody consumes) and pushes this
    /// block's parameter gradients in (conv.w, conv.b, bn.gamma, bn.beta)
    /// order.
    fn backward(
        &self,
        cache: &ConvBlockCache<T>,
        grad_out: &Tensor<T>,
        need_input_grad: bool,
        sink: &mut Vec<Tensor<T>>,
    ) -> Result<Option<Tensor<T>>> {
        let bn_grads = self.bn.backward(&cache.bn, grad_out)?;
        let grad_pool = maxpool_backward(&cache.pool, &bn_grads.x)?;
        let (grad_x, grad_w, grad_b) = if need_input_grad {
            let g = self.conv.backward(&cache.conv, &grad_pool)?;
            (Some(g.x), g.weights, g.bias)
        } else {
            let (w, b) = self.conv.backward_params_only(&cache.conv, &grad_pool)?;
            (None, w, b)
        };
        sink.push(grad_w);
        sink.push(grad_b);
        sink.push(bn_grads.gamma);
        sink.push(bn_grads.beta);
        Ok(grad_x)
    }
}

impl<T: Scalar> DwscBlock<T> {
    fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, DwscBlockCache<T>)> {
        let (a, dwsc_cache) = self.dwsc.forward(x)?;
        let (out, bn_cache) = self.bn.forward_train(&a)?;
        Ok((
            out,
            DwscBlockCache {
                dwsc: dwsc_cache,
                bn: bn_cache,
            },
        ))
    }

    fn backward(
        &self,
        cache: &DwscBlockCache<T>,
        grad_out: &Tensor<T>,
        sink: &mut Vec<Tensor<T>>,
    ) -> Result<Tensor<T>> {
        let bn_grads = self.bn.backward(&cache.bn, grad_out)?;
        let g = self.dwsc.backward(&cache.dwsc, &bn_grads.x)?;
        sink.push(g.dw_weights);
        sink.push(g.dw_bias);
        sink.push(g.pw_weights);
        sink.push(g.pw_bias);
        sink.push(bn_grads.gamma);
        sink.push(bn_grads.beta);
        Ok(g.x)
    }
}

#[derive(Clone)]
pub struct ModelGraph<T: Scalar> {
    pub cfg: ADLiteConfig,
    base: Vec<ConvBlock<T>>,
    dwsc_blocks: Vec<DwscBlock<T>>,
    pcb: Option<PcbBranch<T>>,
    dense: Dense<T>,
}

pub struct GraphCache<T: Scalar> {
    base: Vec<ConvBlockCache<T>>,
    dwsc: Vec<DwscBlockCache<T>>,
    pcb: Option<Vec<ConvBlockCache<T>>>,
    dense: DenseCache<T>,
    merged_shape: [usize; 4],
}

/// Gradients for every trainable tensor, in [`ModelGraph::named_params`]
/// order.
pub struct GraphGrads<T: Scalar> {
    pub tensors: Vec<Tensor<T>>,
}

/// Output of a training-mode forward pass.
pub struct TrainStep<T: Scalar> {
    pub logits: Tensor<T>,
    pub probs: Tensor<T>,
    pub cache: GraphCache<T>,
}

/// Assemble a fresh graph. Initialization order is fixed (backbone, DWSC
/// blocks, branch, dense head) so a seed pins every parameter.
pub fn build_adlite<T: Scalar>(cfg: &ADLiteConfig, rng: &mut Rng) -> Result<ModelGraph<T>> {
    cfg.validate()?;
    let mut base = Vec::with_capacity(cfg.base_filters.len());
    let mut in_c = cfg.input_channels;
    for (i, &f) in cfg.base_filters.iter().enumerate() {
        let k = if i == 0 {
            cfg.first_kernel
        } else {
            cfg.other_kernels
        };
        base.push(ConvBlock {
            conv: Conv2D::new(f, in_c, k, rng)?,
            bn: BatchNorm::new(f),
        });
        in_c = f;
    }

    let last = *cfg.base_filters.last().expect("non-empty");
    let mut dwsc_blocks = Vec::with_capacity(cfg.dwsc_count);
    for _ in 0..cfg.dwsc_count {
        dwsc_blocks.push(DwscBlock {
            dwsc: Dwsc::new(last, last, rng)?,
            bn: BatchNorm::new(last),
        });
    }

    let pcb = if cfg.pcb_enabled {
        let mut blocks = Vec::with_capacity(cfg.pcb_filters.len());
        let mut c = cfg.base_filters[cfg.pcb_tap_block - 1];
        for &f in &cfg.pcb_filters {
            blocks.push(ConvBlock {
                conv: Conv2D::new(f, c, cfg.other_kernels, rng)?,
                bn: BatchNorm::new(f),
            });
            c = f;
        }
        Some(PcbBranch {
            tx: TxLayer::new(cfg.tx_m, cfg.tx_c),
            blocks,
        })
    } else {
        None
    };

    let dense = Dense::new(cfg.num_classes, cfg.merged_channels(), rng)?;

    Ok(ModelGraph {
        cfg: cfg.clone(),
        base,
        dwsc_blocks,
        pcb,
        dense,
    })
}

impl<T: Scalar> ModelGraph<T> {
    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        if c != self.cfg.input_channels || h != self.cfg.input_size || w != self.cfg.input_size {
            return Err(Error::shape(format!(
                "expected input (N, {}, {}, {}), got {:?}",
                self.cfg.input_channels,
                self.cfg.input_size,
                self.cfg.input_size,
                x.shape()
            )));
        }
        Ok(())
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<TrainStep<T>> {
        self.check_input(x)?;
        let tap_idx = self.cfg.pcb_tap_block; // 1-based
        let mut cur = x.clone();
        let mut base_caches = Vec::with_capacity(self.base.len());
        let mut tap: Option<Tensor<T>> = None;
        for (i, blk) in self.base.iter_mut().enumerate() {
            let (next, cache) = blk.forward_train(&cur)?;
            base_caches.push(cache);
            cur = next;
            if self.pcb.is_some() && i + 1 == tap_idx {
                tap = Some(cur.clone());
            }
        }
        let mut dwsc_caches = Vec::with_capacity(self.dwsc_blocks.len());
        for blk in self.dwsc_blocks.iter_mut() {
            let (next, cache) = blk.forward_train(&cur)?;
            dwsc_caches.push(cache);
            cur = next;
        }

        let (merged, pcb_caches) = match self.pcb.as_mut() {
            Some(branch) => {
                let mut p = branch.tx.forward(tap.as_ref().expect("tap recorded"))?;
                let mut caches = Vec::with_capacity(branch.blocks.len());
                for blk in branch.blocks.iter_mut() {
                    let (next, cache) = blk.forward_train(&p)?;
                    caches.push(cache);
                    p = next;
                }
                (concat_channels(&p, &cur)?, Some(caches))
            }
            None => (cur, None),
        };

        let merged_shape = {
            let s = merged.shape();
            [s[0], s[1], s[2], s[3]]
        };
        let gap = merged.reduce_mean_spatial()?;
        let (logits, dense_cache) = self.dense.forward(&gap)?;
        let probs = softmax_probs(&logits)?;
        Ok(TrainStep {
            logits,
            probs,
            cache: GraphCache {
                base: base_caches,
                dwsc: dwsc_caches,
                pcb: pcb_caches,
                dense: dense_cache,
                merged_shape,
            },
        })
    }

    pub fn forward_infer(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let (logits, probs, _, _) = self.forward_infer_traced(x)?;
        Ok((logits, probs))
    }

    /// Inference pass that also reports each node's output shape (without
    /// the batch dimension) and the pre-GAP tensor, for audits and probes.
    pub fn forward_infer_traced(
        &self,
        x: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>, Vec<(String, Vec<usize>)>, Tensor<T>)> {
        self.check_input(x)?;
        let mut trace: Vec<(String, Vec<usize>)> = Vec::new();
        let record = |trace: &mut Vec<(String, Vec<usize>)>, name: String, t: &Tensor<T>| {
            trace.push((name, t.shape()[1..].to_vec()));
        };
        record(&mut trace, "input".into(), x);

        let mut cur = x.clone();
        let mut tap: Option<Tensor<T>> = None;
        for (i, blk) in self.base.iter().enumerate() {
            let (a, _) = blk.conv.forward(&cur, Activation::Relu)?;
            record(&mut trace, format!("base{}.conv", i + 1), &a);
            let (p, _) = maxpool_forward(&a)?;
            record(&mut trace, format!("base{}.pool", i + 1), &p);
            cur = blk.bn.forward_infer(&p)?;
            record(&mut trace, format!("base{}.bn", i + 1), &cur);
            if self.pcb.is_some() && i + 1 == self.cfg.pcb_tap_block {
                tap = Some(cur.clone());
            }
        }
        for (i, blk) in self.dwsc_blocks.iter().enumerate() {
            let (a, _) = blk.dwsc.forward(&cur)?;
            record(&mut trace, format!("dwsc{}.dwsc", i + 1), &a);
            cur = blk.bn.forward_infer(&a)?;
            record(&mut trace, format!("dwsc{}.bn", i + 1), &cur);
        }

        let merged = match self.pcb.as_ref() {
            Some(branch) => {
                let mut p = branch.tx.forward(tap.as_ref().expect("tap recorded"))?;
                record(&mut trace, "pcb.tx".into(), &p);
                for (i, blk) in branch.blocks.iter().enumerate() {
                    let (a, _) = blk.conv.forward(&p, Activation::Relu)?;
                    record(&mut trace, format!("pcb{}.conv", i + 1), &a);
                    let (pl, _) = maxpool_forward(&a)?;
                    record(&mut trace, format!("pcb{}.pool", i + 1), &pl);
                    p = blk.bn.forward_infer(&pl)?;
                    record(&mut trace, format!("pcb{}.bn", i + 1), &p);
                }
                let m = concat_channels(&p, &cur)?;
                record(&mut trace, "concat".into(), &m);
                m
            }
            None => cur,
        };

        let pre_gap = merged.clone();
        let gap = merged.reduce_mean_spatial()?;
        record(&mut trace, "gap".into(), &gap);
        let (logits, _) = self.dense.forward(&gap)?;
        record(&mut trace, "dense".into(), &logits);
        let probs = softmax_probs(&logits)?;
        Ok((logits, probs, trace, pre_gap))
    }

    pub fn backward(&self, cache: &GraphCache<T>, grad_logits: &Tensor<T>) -> Result<GraphGrads<T>> {
        if cache.base.len() != self.base.len() || cache.dwsc.len() != self.dwsc_blocks.len() {
            return Err(Error::State(
                "cache does not match the graph that produced it".into(),
            ));
        }
        let dense_grads = self.dense.backward(&cache.dense, grad_logits)?;

        // GAP spreads each channel gradient uniformly over the plane.
        let [n, mc, h, w] = cache.merged_shape;
        let plane = h * w;
        let inv = T::from_f64(1.0 / plane as f64);
        let mut grad_merged = Tensor::zeros(vec![n, mc, h, w]);
        {
            let gm = grad_merged.data_mut();
            let gg = dense_grads.x.data();
            for nc in 0..n * mc {
                let v = gg[nc] * inv;
                for g in &mut gm[nc * plane..(nc + 1) * plane] {
                    *g = v;
                }
            }
        }

        // Split the concatenation: branch channels come first.
        let (grad_pcb_out, grad_base_out) = match (&self.pcb, &cache.pcb) {
            (Some(_), Some(_)) => {
                let pcb_c = *self.cfg.pcb_filters.last().expect("non-empty");
                (
                    Some(grad_merged.slice_channels(0, pcb_c)?),
                    grad_merged.slice_channels(pcb_c, mc)?,
                )
            }
            (None, None) => (None, grad_merged),
            _ => return Err(Error::State("cache branch layout mismatch".into())),
        };

        // Walk each segment in reverse, then assemble the gradient list in
        // canonical parameter order.
        let mut dwsc_sink = Vec::new();
        let mut g = grad_base_out;
        let mut dwsc_parts = Vec::new();
        for (blk, ch) in self.dwsc_blocks.iter().zip(&cache.dwsc).rev() {
            let mut sink = Vec::new();
            g = blk.backward(ch, &g, &mut sink)?;
            dwsc_parts.push(sink);
        }
        dwsc_parts.reverse();
        for part in dwsc_parts {
            dwsc_sink.extend(part);
        }

        let nb = self.base.len();
        // 0-based index of the first block whose gradient also feeds the
        // branch; 0 when there is no branch.
        let tap_idx = if self.pcb.is_some() {
            self.cfg.pcb_tap_block
        } else {
            0
        };

        // Backbone blocks above the tap. After this loop `g_tap` is the
        // gradient at the tap block's output (or None when the chain ran
        // all the way down to the input).
        let mut base_parts_rev: Vec<Vec<Tensor<T>>> = Vec::new();
        let mut g_tap: Option<Tensor<T>> = Some(g);
        for i in (tap_idx..nb).rev() {
            let upstream = g_tap.take().ok_or_else(|| {
                Error::State("gradient chain interrupted before the first block".into())
            })?;
            let mut sink = Vec::new();
            g_tap = self.base[i].backward(&cache.base[i], &upstream, i > 0, &mut sink)?;
            base_parts_rev.push(sink);
        }

        let mut pcb_sink = Vec::new();
        if let (Some(branch), Some(pcb_caches), Some(gp)) = (&self.pcb, &cache.pcb, grad_pcb_out) {
            let mut gb = gp;
            let mut pcb_parts = Vec::new();
            for (blk, ch) in branch.blocks.iter().zip(pcb_caches).rev() {
                let mut sink = Vec::new();
                gb = blk
                    .backward(ch, &gb, true, &mut sink)?
                    .expect("branch blocks always propagate input gradients");
                pcb_parts.push(sink);
            }
            pcb_parts.reverse();
            for part in pcb_parts {
                pcb_sink.extend(part);
            }
            let gb = branch.tx.backward(&gb)?;

            // Fan-out at the tap: the backbone gradient and the branch
            // gradient add.
            let mut summed = g_tap
                .take()
                .ok_or_else(|| Error::State("no backbone gradient at the tap".into()))?;
            if gb.shape() != summed.shape() {
                return Err(Error::State("tap gradient shape mismatch".into()));
            }
            for (dst, src) in summed.data_mut().iter_mut().zip(gb.data()) {
                *dst += *src;
            }

            // Remaining backbone blocks below the tap.
            g_tap = Some(summed);
            for i in (0..tap_idx).rev() {
                let upstream = g_tap.take().ok_or_else(|| {
                    Error::State("gradient chain interrupted before the first block".into())
                })?;
                let mut sink = Vec::new();
                g_tap = self.base[i].backward(&cache.base[i], &upstream, i > 0, &mut sink)?;
                base_parts_rev.push(sink);
            }
        }

        base_parts_rev.reverse();
        let mut tensors = Vec::new();
        for part in base_parts_rev {
            tensors.extend(part);
        }
        tensors.extend(dwsc_sink);
        tensors.extend(pcb_sink);
        tensors.push(dense_grads.weights);
        tensors.push(dense_grads.bias);
        Ok(GraphGrads { tensors })
    }

    /// Trainable tensors in canonical order: backbone blocks, DWSC blocks,
    /// branch blocks, dense head. This order is shared by gradients, the
    /// optimizer state, and checkpoints.
    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, blk) in self.base.iter().enumerate() {
            let p = format!("base{}", i + 1);
            out.push((format!("{p}.conv.w"), &blk.conv.weights));
            out.push((format!("{p}.conv.b"), &blk.conv.bias));
            out.push((format!("{p}.bn.gamma"), &blk.bn.gamma));
            out.push((format!("{p}.bn.beta"), &blk.bn.beta));
        }
        for (i, blk) in self.dwsc_blocks.iter().enumerate() {
            let p = format!("dwsc{}", i + 1);
            out.push((format!("{p}.dw.w"), &blk.dwsc.dw_weights));
            out.push((format!("{p}.dw.b"), &blk.dwsc.dw_bias));
            out.push((format!("{p}.pw.w"), &blk.dwsc.pw_weights));
            out.push((format!("{p}.pw.b"), &blk.dwsc.pw_bias));
            out.push((format!("{p}.bn.gamma"), &blk.bn.gamma));
            out.push((format!("{p}.bn.beta"), &blk.bn.beta));
        }
        if let Some(branch) = &self.pcb {
            for (i, blk) in branch.blocks.iter().enumerate() {
                let p = format!("pcb{}", i + 1);
                out.push((format!("{p}.conv.w"), &blk.conv.weights));
                out.push((format!("{p}.conv.b"), &blk.conv.bias));
                out.push((format!("{p}.bn.gamma"), &blk.bn.gamma));
                out.push((format!("{p}.bn.beta"), &blk.bn.beta));
            }
        }
        out.push(("dense.w".into(), &self.dense.weights));
        out.push(("dense.b".into(), &self.dense.bias));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out: Vec<(String, &mut Tensor<T>)> = Vec::new();
        for (i, blk) in self.base.iter_mut().enumerate() {
            let p = format!("base{}", i + 1);
            out.push((format!("{p}.conv.w"), &mut blk.conv.weights));
            out.push((format!("{p}.conv.b"), &mut blk.conv.bias));
            out.push((format!("{p}.bn.gamma"), &mut blk.bn.gamma));
            out.push((format!("{p}.bn.beta"), &mut blk.bn.beta));
        }
        for (i, blk) in self.dwsc_blocks.iter_mut().enumerate() {
            let p = format!("dwsc{}", i + 1);
            out.push((format!("{p}.dw.w"), &mut blk.dwsc.dw_weights));
            out.push((format!("{p}.dw.b"), &mut blk.dwsc.dw_bias));
            out.push((format!("{p}.pw.w"), &mut blk.dwsc.pw_weights));
            out.push((format!("{p}.pw.b"), &mut blk.dwsc.pw_bias));
            out.push((format!("{p}.bn.gamma"), &mut blk.bn.gamma));
            out.push((format!("{p}.bn.beta"), &mut blk.bn.beta));
        }
        if let Some(branch) = &mut self.pcb {
            for (i, blk) in branch.blocks.iter_mut().enumerate() {
                let p = format!("pcb{}", i + 1);
                out.push((format!("{p}.conv.w"), &mut blk.conv.weights));
                out.push((format!("{p}.conv.b"), &mut blk.conv.bias));
                out.push((format!("{p}.bn.gamma"), &mut blk.bn.gamma));
                out.push((format!("{p}.bn.beta"), &mut blk.bn.beta));
            }
        }
        out.push(("dense.w".into(), &mut self.dense.weights));
        out.push(("dense.b".into(), &mut self.dense.bias));
        out
    }

    /// Non-trainable state: batch-norm running statistics, in block order.
    pub fn named_state(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, blk) in self.base.iter().enumerate() {
            let p = format!("base{}", i + 1);
            out.push((format!("{p}.bn.running_mean"), &blk.bn.running_mean));
            out.push((format!("{p}.bn.running_var"), &blk.bn.running_var));
        }
        for (i, blk) in self.dwsc_blocks.iter().enumerate() {
            let p = format!("dwsc{}", i + 1);
            out.push((format!("{p}.bn.running_mean"), &blk.bn.running_mean));
            out.push((format!("{p}.bn.running_var"), &blk.bn.running_var));
        }
        if let Some(branch) = &self.pcb {
            for (i, blk) in branch.blocks.iter().enumerate() {
                let p = format!("pcb{}", i + 1);
                out.push((format!("{p}.bn.running_mean"), &blk.bn.running_mean));
                out.push((format!("{p}.bn.running_var"), &blk.bn.running_var));
            }
        }
        out
    }

    pub fn named_state_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out: Vec<(String, &mut Tensor<T>)> = Vec::new();
        for (i, blk) in self.base.iter_mut().enumerate() {
            let p = format!("base{}", i + 1);
            out.push((format!("{p}.bn.running_mean"), &mut blk.bn.running_mean));
            out.push((format!("{p}.bn.running_var"), &mut blk.bn.running_var));
        }
        for (i, blk) in self.dwsc_blocks.iter_mut().enumerate() {
            let p = format!("dwsc{}", i + 1);
            out.push((format!("{p}.bn.running_mean"), &mut blk.bn.running_mean));
            out.push((format!("{p}.bn.running_var"), &mut blk.bn.running_var));
        }
        if let Some(branch) = &mut self.pcb {
            for (i, blk) in branch.blocks.iter_mut().enumerate() {
                let p = format!("pcb{}", i + 1);
                out.push((format!("{p}.bn.running_mean"), &mut blk.bn.running_mean));
                out.push((format!("{p}.bn.running_var"), &mut blk.bn.running_var));
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Number of standard convolution layers (backbone plus branch).
    pub fn conv_layer_count(&self) -> usize {
        self.base.len() + self.pcb.as_ref().map_or(0, |p| p.blocks.len())
    }

    pub fn dwsc_layer_count(&self) -> usize {
        self.dwsc_blocks.len()
    }
}

/// One line of the parameter audit.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditEntry {
    pub name: String,
    /// Closed-form count: (k^2 * c_in + 1) * c_out for convolutions, the
    /// depthwise-only 10 * c_in for DWSC layers, zero for batch norms.
    pub formula_count: usize,
    /// Every allocated trainable scalar behind the layer.
    pub actual_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamAudit {
    pub entries: Vec<AuditEntry>,
}

/// Which total a report quotes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuditMode {
    /// Exact allocated-scalar accounting.
    Full,
    /// The headline lightweight figure: convolution closed forms plus the
    /// depthwise-only DWSC count, batch norms excluded.
    Compact,
}

impl ParamAudit {
    pub fn total(&self, mode: AuditMode) -> usize {
        match mode {
            AuditMode::Full => self.entries.iter().map(|e| e.actual_count).sum(),
            AuditMode::Compact => self.entries.iter().map(|e| e.formula_count).sum(),
        }
    }
}

/// Closed-form per-layer parameter counts for a config, without allocating
/// any tensors.
pub fn param_audit(cfg: &ADLiteConfig) -> Result<ParamAudit> {
    cfg.validate()?;
    let mut entries = Vec::new();
    let mut in_c = cfg.input_channels;
    for (i, &f) in cfg.base_filters.iter().enumerate() {
        let k = if i == 0 {
            cfg.first_kernel
        } else {
            cfg.other_kernels
        };
        let conv = (k * k * in_c + 1) * f;
        entries.push(AuditEntry {
            name: format!("base{}.conv", i + 1),
            formula_count: conv,
            actual_count: conv,
        });
        entries.push(AuditEntry {
            name: format!("base{}.bn", i + 1),
            formula_count: 0,
            actual_count: 2 * f,
        });
        in_c = f;
    }
    let last = *cfg.base_filters.last().expect("non-empty");
    for i in 0..cfg.dwsc_count {
        entries.push(AuditEntry {
            name: format!("dwsc{}", i + 1),
            // Depthwise 3x3 weights plus bias only: (3^2 + 1) * c.
            formula_count: 10 * last,
            // Depthwise w+b plus pointwise w+b.
            actual_count: last * 9 + last + last * last + last,
        });
        entries.push(AuditEntry {
            name: format!("dwsc{}.bn", i + 1),
            formula_count: 0,
            actual_count: 2 * last,
        });
    }
    if cfg.pcb_enabled {
        let mut c = cfg.base_filters[cfg.pcb_tap_block - 1];
        for (i, &f) in cfg.pcb_filters.iter().enumerate() {
            let k = cfg.other_kernels;
            let conv = (k * k * c + 1) * f;
            entries.push(AuditEntry {
                name: format!("pcb{}.conv", i + 1),
                formula_count: conv,
                actual_count: conv,
            });
            entries.push(AuditEntry {
                name: format!("pcb{}.bn", i + 1),
                formula_count: 0,
                actual_count: 2 * f,
            });
            c = f;
        }
    }
    let dense = (cfg.merged_channels() + 1) * cfg.num_classes;
    entries.push(AuditEntry {
        name: "dense".into(),
        formula_count: dense,
        actual_count: dense,
    });
    Ok(ParamAudit { entries })
}

/// Symbolic shape propagation: per-node output shapes (without the batch
/// dimension), in the same order and with the same names as
/// [`ModelGraph::forward_infer_traced`].
pub fn shape_audit(cfg: &ADLiteConfig) -> Result<Vec<(String, Vec<usize>)>> {
    cfg.validate()?;
    let mut out = Vec::new();
    let mut side = cfg.input_size;
    out.push(("input".into(), vec![cfg.input_channels, side, side]));
    let mut tap_side = 0;
    for (i, &f) in cfg.base_filters.iter().enumerate() {
        out.push((format!("base{}.conv", i + 1), vec![f, side, side]));
        side /= 2;
        out.push((format!("base{}.pool", i + 1), vec![f, side, side]));
        out.push((format!("base{}.bn", i + 1), vec![f, side, side]));
        if cfg.pcb_enabled && i + 1 == cfg.pcb_tap_block {
            tap_side = side;
        }
    }
    let last = *cfg.base_filters.last().expect("non-empty");
    for i in 0..cfg.dwsc_count {
        out.push((format!("dwsc{}.dwsc", i + 1), vec![last, side, side]));
        out.push((format!("dwsc{}.bn", i + 1), vec![last, side, side]));
    }
    if cfg.pcb_enabled {
        let tap_c = cfg.base_filters[cfg.pcb_tap_block - 1];
        let mut s = tap_side;
        out.push(("pcb.tx".into(), vec![tap_c, s, s]));
        for (i, &f) in cfg.pcb_filters.iter().enumerate() {
            out.push((format!("pcb{}.conv", i + 1), vec![f, s, s]));
            s /= 2;
            out.push((format!("pcb{}.pool", i + 1), vec![f, s, s]));
            out.push((format!("pcb{}.bn", i + 1), vec![f, s, s]));
        }
        debug_assert_eq!(s, side);
        out.push(("concat".into(), vec![cfg.merged_channels(), side, side]));
    }
    out.push(("gap".into(), vec![cfg.merged_channels()]));
    out.push(("dense".into(), vec![cfg.num_classes]));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::softmax_cce;

    fn tiny_cfg() -> ADLiteConfig {
        ADLiteConfig {
            input_size: 32,
            input_channels: 1,
            num_classes: 2,
            base_filters: vec![2, 2, 2, 2, 2],
            first_kernel: 5,
            other_kernels: 3,
            dwsc_count: 2,
            pcb_enabled: true,
            pcb_tap_block: 3,
            pcb_filters: vec![2, 2],
            tx_m: 0.8,
            tx_c: 1.0,
        }
    }

    #[test]
    fn default_config_is_valid_and_counts_layers() {
        let cfg = ADLiteConfig::default();
        cfg.validate().unwrap();
        let mut rng = Rng::new(1);
        let g: ModelGraph<f32> = build_adlite(&cfg, &mut rng).unwrap();
        assert_eq!(g.conv_layer_count(), 7);
        assert_eq!(g.dwsc_layer_count(), 2);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = ADLiteConfig::default();
        cfg.input_size = 100; // not divisible by 2^5
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        let mut cfg = ADLiteConfig::default();
        cfg.pcb_tap_block = 6;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        let mut cfg = ADLiteConfig::default();
        cfg.pcb_filters = vec![32]; // pool counts would disagree at concat
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        let mut cfg = ADLiteConfig::default();
        cfg.num_classes = 1;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn shape_audit_hits_the_published_extents() {
        let audit = shape_audit(&ADLiteConfig::default()).unwrap();
        let concat = audit.iter().find(|(n, _)| n == "concat").unwrap();
        assert_eq!(concat.1, vec![192, 7, 7]);
        let gap = audit.iter().find(|(n, _)| n == "gap").unwrap();
        assert_eq!(gap.1, vec![192]);

        let mut cfg = ADLiteConfig::default();
        cfg.input_size = 64;
        let audit = shape_audit(&cfg).unwrap();
        let concat = audit.iter().find(|(n, _)| n == "concat").unwrap();
        assert_eq!(concat.1, vec![192, 2, 2]);
    }

    #[test]
    fn audit_shapes_equal_live_forward_shapes() {
        let cfg = tiny_cfg();
        let mut rng = Rng::new(2);
        let g: ModelGraph<f32> = build_adlite(&cfg, &mut rng).unwrap();
        let x = Tensor::zeros(vec![2, 1, 32, 32]);
        let (_, _, trace, _) = g.forward_infer_traced(&x).unwrap();
        let audit = shape_audit(&cfg).unwrap();
        assert_eq!(trace, audit);
    }

    #[test]
    fn param_audit_formula_values() {
        let audit = param_audit(&ADLiteConfig::default()).unwrap();
        let by_name = |n: &str| {
            audit
                .entries
                .iter()
                .find(|e| e.name == n)
                .unwrap_or_else(|| panic!("missing {n}"))
                .clone()
        };
        // Block 2: (9 * 16 + 1) * 32
        assert_eq!(by_name("base2.conv").formula_count, 4640);
        // DWSC at 128 channels: 10 * 128
        assert_eq!(by_name("dwsc1").formula_count, 1280);
        assert_eq!(by_name("dense").formula_count, 772);
    }

    #[test]
    fn full_audit_total_matches_allocated_scalars() {
        for pcb in [true, false] {
            let mut cfg = tiny_cfg();
            cfg.pcb_enabled = pcb;
            if !pcb {
                cfg.pcb_filters.clear();
            }
            let audit = param_audit(&cfg).unwrap();
            let mut rng = Rng::new(3);
            let g: ModelGraph<f64> = build_adlite(&cfg, &mut rng).unwrap();
            assert_eq!(audit.total(AuditMode::Full), g.param_count(), "pcb {pcb}");
        }
    }

    #[test]
    fn disabling_the_branch_strictly_removes_parameters() {
        let on = ADLiteConfig::default();
        let mut off = on.clone();
        off.pcb_enabled = false;
        off.pcb_filters.clear();
        let a_on = param_audit(&on).unwrap();
        let a_off = param_audit(&off).unwrap();
        let pcb_own: usize = a_on
            .entries
            .iter()
            .filter(|e| e.name.starts_with("pcb"))
            .map(|e| e.actual_count)
            .sum();
        let dense_delta = (192 + 1) * 4 - (128 + 1) * 4;
        assert_eq!(
            a_on.total(AuditMode::Full) - a_off.total(AuditMode::Full),
            pcb_own + dense_delta
        );
    }

    #[test]
    fn pre_gap_shape_with_and_without_branch() {
        let mut rng = Rng::new(4);
        let mut cfg = ADLiteConfig::default();
        cfg.input_size = 64;
        let g: ModelGraph<f32> = build_adlite(&cfg, &mut rng).unwrap();
        let x = Tensor::zeros(vec![1, 1, 64, 64]);
        let (_, _, _, pre_gap) = g.forward_infer_traced(&x).unwrap();
        assert_eq!(pre_gap.shape(), &[1, 192, 2, 2]);

        cfg.pcb_enabled = false;
        cfg.pcb_filters.clear();
        let g: ModelGraph<f32> = build_adlite(&cfg, &mut rng).unwrap();
        let (_, _, trace, pre_gap) = g.forward_infer_traced(&x).unwrap();
        assert_eq!(pre_gap.shape(), &[1, 128, 2, 2]);
        assert!(trace.iter().all(|(n, _)| !n.starts_with("pcb")));
    }

    #[test]
    fn forward_shapes_and_prob_rows() {
        let cfg = tiny_cfg();
        let mut rng = Rng::new(5);
        let mut g: ModelGraph<f64> = build_adlite(&cfg, &mut rng).unwrap();
        let x = Tensor::he_init(vec![2, 1, 32, 32], 1, &mut rng).unwrap();
        let step = g.forward_train(&x).unwrap();
        assert_eq!(step.logits.shape(), &[2, 2]);
        for s in 0..2 {
            let sum: f64 = step.probs.data()[s * 2..(s + 1) * 2].iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn infer_forward_is_deterministic() {
        let cfg = tiny_cfg();
        let mut rng = Rng::new(6);
        let g: ModelGraph<f32> = build_adlite(&cfg, &mut rng).unwrap();
        let x = Tensor::he_init(vec![2, 1, 32, 32], 1, &mut rng).unwrap();
        let (a, _) = g.forward_infer(&x).unwrap();
        let (b, _) = g.forward_infer(&x).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn zeroing_branch_parameters_leaves_base_slice_bitwise_intact() {
        let cfg = tiny_cfg();
        let mut rng = Rng::new(7);
        let mut g: ModelGraph<f32> = build_adlite(&cfg, &mut rng).unwrap();
        let x = Tensor::he_init(vec![2, 1, 32, 32], 1, &mut rng).unwrap();
        let (_, _, _, pre_gap_before) = g.forward_infer_traced(&x).unwrap();

        for (name, t) in g.named_params_mut() {
            if name.starts_with("pcb") {
                for v in t.data_mut() {
                    *v = 0.0;
                }
            }
        }
        let (_, _, _, pre_gap_after) = g.forward_infer_traced(&x).unwrap();

        let pcb_c = *cfg.pcb_filters.last().unwrap();
        let mc = cfg.merged_channels();
        let base_before = pre_gap_before.slice_channels(pcb_c, mc).unwrap();
        let base_after = pre_gap_after.slice_channels(pcb_c, mc).unwrap();
        assert_eq!(base_before.data(), base_after.data());
        let pcb_before = pre_gap_before.slice_channels(0, pcb_c).unwrap();
        let pcb_after = pre_gap_after.slice_channels(0, pcb_c).unwrap();
        assert_ne!(pcb_before.data(), pcb_after.data());
    }

    #[test]
    fn zero_upstream_gradient_zeroes_every_parameter_gradient() {
        let cfg = tiny_cfg();
        let mut rng = Rng::new(8);
        let mut g: ModelGraph<f64> = build_adlite(&cfg, &mut rng).unwrap();
        let x = Tensor::he_init(vec![2, 1, 32, 32], 1, &mut rng).unwrap();
        let step = g.forward_train(&x).unwrap();
        let grads = g.backward(&step.cache, &Tensor::zeros(vec![2, 2])).unwrap();
        for t in &grads.tensors {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn branchless_graph_matches_single_branch_equivalent_bitwise() {
        // With the branch disabled the backbone must behave exactly like a
        // graph that never had one: same init stream, same forward, same
        // gradients for the shared parameters.
        let mut cfg = tiny_cfg();
        cfg.pcb_enabled = false;
        cfg.pcb_filters.clear();
        let mut r1 = Rng::new(9);
        let mut g1: ModelGraph<f64> = build_adlite(&cfg, &mut r1).unwrap();
        let mut r2 = Rng::new(9);
        let mut g2: ModelGraph<f64> = build_adlite(&cfg, &mut r2).unwrap();

        let mut rng = Rng::new(10);
        let x = Tensor::he_init(vec![2, 1, 32, 32], 1, &mut rng).unwrap();
        let s1 = g1.forward_train(&x).unwrap();
        let s2 = g2.forward_train(&x).unwrap();
        assert_eq!(s1.logits.data(), s2.logits.data());

        let out1 = softmax_cce(&s1.logits, &[0, 1], None).unwrap();
        let ga = g1.backward(&s1.cache, &out1.grad_logits).unwrap();
        let gb = g2.backward(&s2.cache, &out1.grad_logits).unwrap();
        for (a, b) in ga.tensors.iter().zip(&gb.tensors) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn tap_gradient_is_the_sum_of_both_branch_gradients() {
        // Backward is linear in the upstream gradient for a fixed cache, and
        // the dense weights linearly gate which merged channels feed it. So:
        // run one forward, then run backward with the dense columns of one
        // branch zeroed at a time; the tap-block gradients must add up to
        // the unrestricted backward.
        let cfg = tiny_cfg();
        let mut rng = Rng::new(11);
        let mut g: ModelGraph<f64> = build_adlite(&cfg, &mut rng).unwrap();
        let x = Tensor::he_init(vec![2, 1, 32, 32], 1, &mut rng).unwrap();
        let targets = [0usize, 1];

        let tap_w_index = g
            .named_params()
            .iter()
            .position(|(n, _)| n == "base3.conv.w")
            .unwrap();
        let pcb_c = *cfg.pcb_filters.last().unwrap();
        let mc = cfg.merged_channels();

        let step = g.forward_train(&x).unwrap();
        let grad_logits = softmax_cce(&step.logits, &targets, None).unwrap().grad_logits;
        let full_w = g.dense.weights.clone();

        let run = |g: &mut ModelGraph<f64>, keep: (usize, usize)| {
            let (rows, cols) = (full_w.shape()[0], full_w.shape()[1]);
            let mut w = full_w.clone();
            for r in 0..rows {
                for c in 0..cols {
                    if c < keep.0 || c >= keep.1 {
                        w.data_mut()[r * cols + c] = 0.0;
                    }
                }
            }
            g.dense.weights = w;
            let grads = g.backward(&step.cache, &grad_logits).unwrap();
            g.dense.weights = full_w.clone();
            grads.tensors[tap_w_index].clone()
        };

        let g_both = run(&mut g, (0, mc));
        let g_pcb_only = run(&mut g, (0, pcb_c));
        let g_base_only = run(&mut g, (pcb_c, mc));
        for i in 0..g_both.len() {
            let sum = g_pcb_only.data()[i] + g_base_only.data()[i];
            let err = (g_both.data()[i] - sum).abs();
            assert!(err < 1e-9, "coord {i}: {} vs {}", g_both.data()[i], sum);
        }
    }

    #[test]
    fn whole_graph_gradient_matches_finite_differences() {
        use crate::gradcheck::{fd_slope, rel_err_banded, sample_coords};
        use crate::optim::AdamState;
        let cfg = tiny_cfg();
        let mut rng = Rng::new(12);
        let mut g: ModelGraph<f64> = build_adlite(&cfg, &mut rng).unwrap();
        let x = Tensor::he_init(vec![3, 1, 32, 32], 1, &mut rng).unwrap();
        let targets = [0usize, 1, 0];

        // A fresh symmetric init leaves several head gradients near zero;
        // a few optimizer steps move the model to a generic point first.
        let mut adam = AdamState::for_graph(&g);
        for _ in 0..3 {
            let s = g.forward_train(&x).unwrap();
            let out = softmax_cce(&s.logits, &targets, None).unwrap();
            let grads = g.backward(&s.cache, &out.grad_logits).unwrap();
            let mut params = g.named_params_mut();
            adam.step(&mut params, &grads.tensors, 0.01).unwrap();
        }

        let step = g.forward_train(&x).unwrap();
        let loss_out = softmax_cce(&step.logits, &targets, None).unwrap();
        let analytic = g.backward(&step.cache, &loss_out.grad_logits).unwrap();

        // Batch statistics depend on the whole batch, so recompute the
        // forward pass (in train mode) per probe.
        let names: Vec<String> = g.named_params().iter().map(|(n, _)| n.clone()).collect();
        let mut failures = 0usize;
        let mut total = 0usize;
        for (pi, name) in names.iter().enumerate() {
            let len = g.named_params()[pi].1.len();
            let count = 2.min(len);
            let coords = sample_coords(len, count, &mut rng);
            let at = g.named_params()[pi].1.clone();
            for &ci in &coords {
                let mut loss_fn = |probe: &Tensor<f64>| {
                    let mut g2 = g.clone();
                    *g2.named_params_mut()[pi].1 = probe.clone();
                    let s = g2.forward_train(&x).unwrap();
                    softmax_cce(&s.logits, &targets, None).unwrap().loss
                };
                let numeric = fd_slope(&at, ci, 1e-6, &mut loss_fn);
                let e = rel_err_banded(analytic.tensors[pi].data()[ci], numeric);
                total += 1;
                if e > 1e-4 {
                    failures += 1;
                    eprintln!("{name}[{ci}]: rel err {e}");
                }
            }
        }
        assert!(total >= 40);
        let pass_fraction = (total - failures) as f64 / total as f64;
        assert!(
            pass_fraction >= 0.99,
            "{failures}/{total} coordinates failed"
        );
    }
}
