use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{BatchNormLayer, BnCache, DenseLayer};
use super::params::{Layout, ParamKind, ParamVector};
use super::tensor::{affine, affine_backward, Mat, Tensor2};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// One `Dense → BatchNorm → ReLU` stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub dense: DenseLayer,
    pub bn: BatchNormLayer,
}

/// Stack of `Dense → BatchNorm → ReLU` blocks followed by a dense head.
///
/// Parameters flatten in block order as `blockN.dense.weight`,
/// `blockN.dense.bias`, `blockN.bn.gamma`, `blockN.bn.beta`,
/// `blockN.bn.running_mean`, `blockN.bn.running_var`, then `head.weight` and
/// `head.bias`. The BN scale vector `W^γ` concatenates the `gamma` vectors in
/// block order.
#[derive(Debug, Clone)]
pub struct BnMlp {
    blocks: Vec<Block>,
    head: DenseLayer,
    mode: Mode,
    layout: Arc<Layout>,
}

impl PartialEq for BnMlp {
    fn eq(&self, other: &Self) -> bool {
        self.blocks == other.blocks && self.head == other.head && self.mode == other.mode
    }
}

struct ForwardCache {
    /// `acts[0]` is the input; `acts[i + 1]` is the ReLU output of block `i`.
    acts: Vec<Mat>,
    bn: Vec<BnCache>,
}

impl BnMlp {
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        class_count: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 || class_count < 2 || hidden.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "bad architecture {input_dim} -> {hidden:?} -> {class_count}"
            )));
        }
        let mut blocks = Vec::with_capacity(hidden.len());
        let mut fan_in = input_dim;
        for &width in hidden {
            blocks.push(Block {
                dense: DenseLayer::init(fan_in, width, rng),
                bn: BatchNormLayer::new(width),
            });
            fan_in = width;
        }
        let head = DenseLayer::init(fan_in, class_count, rng);
        Self::assemble(blocks, head)
    }

    fn assemble(blocks: Vec<Block>, head: DenseLayer) -> Result<Self> {
        let mut layout = Layout::new();
        for (i, b) in blocks.iter().enumerate() {
            let w = b.dense.out_width();
            layout.push(format!("block{i}.dense.weight"), vec![w, b.dense.in_width()])?;
            layout.push(format!("block{i}.dense.bias"), vec![w])?;
            layout.push(format!("block{i}.bn.gamma"), vec![w])?;
            layout.push(format!("block{i}.bn.beta"), vec![w])?;
            layout.push(format!("block{i}.bn.running_mean"), vec![w])?;
            layout.push(format!("block{i}.bn.running_var"), vec![w])?;
        }
        layout.push("head.weight", vec![head.out_width(), head.in_width()])?;
        layout.push("head.bias", vec![head.out_width()])?;
        Ok(Self {
            blocks,
            head,
            mode: Mode::Train,
            layout: Arc::new(layout),
        })
    }

    /// Rebuilds a model from a flat vector, inferring widths from the layout.
    pub fn from_params(params: &ParamVector) -> Result<Self> {
        let layout = params.layout();
        let mut blocks = Vec::new();
        let mut i = 0;
        while let Some(e) = layout.entry(&format!("block{i}.dense.weight")) {
            let (out, inp) = match e.shape[..] {
                [o, n] => (o, n),
                _ => return Err(Error::Shape(format!("{} must be 2-d", e.name))),
            };
            for suffix in ["dense.bias", "bn.gamma", "bn.beta", "bn.running_mean", "bn.running_var"] {
                let name = format!("block{i}.{suffix}");
                match layout.entry(&name) {
                    Some(e) if e.shape == [out] => {}
                    _ => return Err(Error::Shape(format!("missing or misshapen {name}"))),
                }
            }
            blocks.push(Block {
                dense: DenseLayer {
                    weight: Tensor2::zeros(out, inp),
                    bias: vec![0.0; out],
                },
                bn: BatchNormLayer::new(out),
            });
            i += 1;
        }
        let head = match layout.entry("head.weight").map(|e| &e.shape[..]) {
            Some(&[o, n]) => DenseLayer {
                weight: Tensor2::zeros(o, n),
                bias: vec![0.0; o],
            },
            _ => return Err(Error::Shape("missing head.weight".into())),
        };
        let mut model = Self::assemble(blocks, head)?;
        if *model.layout != **layout {
            return Err(Error::LayoutMismatch);
        }
        model.layout = Arc::clone(layout);
        model.load_params(params)?;
        Ok(model)
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [Block] {
        &mut self.blocks
    }

    pub fn head(&self) -> &DenseLayer {
        &self.head
    }

    pub fn input_dim(&self) -> usize {
        self.blocks
            .first()
            .map_or(self.head.in_width(), |b| b.dense.in_width())
    }

    pub fn class_count(&self) -> usize {
        self.head.out_width()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn set_bn_frozen(&mut self, frozen: bool) {
        for b in &mut self.blocks {
            b.bn.frozen = frozen;
        }
    }

    pub fn bn_frozen(&self) -> bool {
        self.blocks.iter().all(|b| b.bn.frozen)
    }

    fn param_slices(&self) -> Vec<&[f32]> {
        let mut out = Vec::with_capacity(self.blocks.len() * 6 + 2);
        for b in &self.blocks {
            out.push(b.dense.weight.data());
            out.push(&b.dense.bias[..]);
            out.push(&b.bn.gamma[..]);
            out.push(&b.bn.beta[..]);
            out.push(&b.bn.running_mean[..]);
            out.push(&b.bn.running_var[..]);
        }
        out.push(self.head.weight.data());
        out.push(&self.head.bias[..]);
        out
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out = Vec::with_capacity(self.blocks.len() * 6 + 2);
        for b in &mut self.blocks {
            out.push(b.dense.weight.data_mut());
            out.push(&mut b.dense.bias[..]);
            out.push(&mut b.bn.gamma[..]);
            out.push(&mut b.bn.beta[..]);
            out.push(&mut b.bn.running_mean[..]);
            out.push(&mut b.bn.running_var[..]);
        }
        out.push(self.head.weight.data_mut());
        out.push(&mut self.head.bias[..]);
        out
    }

    /// Flattens every parameter and running statistic in layout order.
    pub fn to_params(&self) -> ParamVector {
        let mut values = Vec::with_capacity(self.layout.total_len());
        for s in self.param_slices() {
            values.extend_from_slice(s);
        }
        ParamVector::new(Arc::clone(&self.layout), values).expect("layout built from model")
    }

    pub fn load_params(&mut self, params: &ParamVector) -> Result<()> {
        if !(Arc::ptr_eq(&self.layout, params.layout()) || *self.layout == **params.layout()) {
            return Err(Error::LayoutMismatch);
        }
        let mut offset = 0;
        let values = params.values();
        for s in self.param_slices_mut() {
            let n = s.len();
            s.copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// `params ← params − lr·grads`.
    pub fn sgd_step(&mut self, grads: &ParamVector, lr: f32) -> Result<()> {
        if !(Arc::ptr_eq(&self.layout, grads.layout()) || *self.layout == **grads.layout()) {
            return Err(Error::LayoutMismatch);
        }
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {lr}")));
        }
        let mut offset = 0;
        let g = grads.values();
        for s in self.param_slices_mut() {
            let n = s.len();
            for (p, &d) in s.iter_mut().zip(&g[offset..offset + n]) {
                *p -= lr * d;
            }
            offset += n;
        }
        Ok(())
    }

    /// Concatenated BN scales `W^γ`.
    pub fn gamma_vector(&self) -> Vec<f32> {
        self.blocks
            .iter()
            .flat_map(|b| b.bn.gamma.iter().copied())
            .collect()
    }

    pub fn gamma_len(&self) -> usize {
        self.blocks.iter().map(|b| b.bn.width()).sum()
    }

    pub fn set_gamma_vector(&mut self, w: &[f32]) -> Result<()> {
        if w.len() != self.gamma_len() {
            return Err(Error::Shape(format!(
                "W^γ has {} entries, model has {}",
                w.len(),
                self.gamma_len()
            )));
        }
        let mut offset = 0;
        for b in &mut self.blocks {
            let n = b.bn.width();
            b.bn.gamma.copy_from_slice(&w[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Tensor2) -> Result<()> {
        if batch.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch has {} features, model expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        let needs_stats = self.mode == Mode::Train && self.blocks.iter().any(|b| !b.bn.frozen);
        if needs_stats && batch.rows() < 2 {
            return Err(Error::SingleSampleBatch(batch.rows()));
        }
        Ok(())
    }

    fn forward_cached(&self, batch: &Tensor2, mode: Mode) -> (Mat, ForwardCache) {
        let mut acts = Vec::with_capacity(self.blocks.len() + 1);
        let mut caches = Vec::with_capacity(self.blocks.len());
        acts.push(Mat::from_tensor(batch));
        for b in &self.blocks {
            let pre = affine(acts.last().expect("non-empty"), &b.dense.weight, &b.dense.bias);
            let use_batch = mode == Mode::Train && !b.bn.frozen;
            let (mut out, cache) = b.bn.forward(&pre, use_batch);
            out.data.iter_mut().for_each(|v| *v = v.max(0.0));
            acts.push(out);
            caches.push(cache);
        }
        let logits = affine(acts.last().expect("non-empty"), &self.head.weight, &self.head.bias);
        (logits, ForwardCache { acts, bn: caches })
    }

    fn absorb_batch_stats(&mut self, cache: &ForwardCache) {
        for (b, c) in self.blocks.iter_mut().zip(&cache.bn) {
            if let Some((mean, var)) = &c.batch_stats {
                b.bn.update_running(mean, var);
            }
        }
    }

    /// Forward pass in the current mode. In train mode unfrozen BN layers
    /// normalize with batch statistics and fold them into the running ones.
    pub fn forward(&mut self, batch: &Tensor2) -> Result<Tensor2> {
        self.check_batch(batch)?;
        let (logits, cache) = self.forward_cached(batch, self.mode);
        self.absorb_batch_stats(&cache);
        Ok(logits.to_tensor())
    }

    /// Inference with running statistics; never mutates the model.
    pub fn predict(&self, batch: &Tensor2) -> Result<Tensor2> {
        if batch.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch has {} features, model expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        Ok(self.forward_cached(batch, Mode::Eval).0.to_tensor())
    }

    pub fn accuracy(&self, batch: &Tensor2, labels: &[usize]) -> Result<f32> {
        if labels.is_empty() {
            return Ok(0.0);
        }
        let pred = self.predict(batch)?.argmax_rows();
        let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(hits as f32 / labels.len() as f32)
    }

    fn check_labels(&self, batch: &Tensor2, labels: &[usize]) -> Result<()> {
        if labels.len() != batch.rows() {
            return Err(Error::Shape(format!(
                "{} labels for {} rows",
                labels.len(),
                batch.rows()
            )));
        }
        let classes = self.class_count();
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        Ok(())
    }

    /// Mean softmax cross-entropy in the current mode, without side effects.
    pub fn loss(&self, batch: &Tensor2, labels: &[usize]) -> Result<f32> {
        self.check_batch(batch)?;
        self.check_labels(batch, labels)?;
        let (logits, _) = self.forward_cached(batch, self.mode);
        Ok(softmax_cross_entropy(&logits, labels).0)
    }

    /// Loss and gradient in the current mode, without side effects.
    pub fn loss_and_grad(&self, batch: &Tensor2, labels: &[usize]) -> Result<(f32, ParamVector)> {
        self.check_batch(batch)?;
        self.check_labels(batch, labels)?;
        let (logits, cache) = self.forward_cached(batch, self.mode);
        Ok(self.gradient(&logits, labels, &cache))
    }

    /// Training pass: forward (updating running statistics where batch
    /// statistics are used), loss and gradient.
    pub fn backward(&mut self, batch: &Tensor2, labels: &[usize]) -> Result<(f32, ParamVector)> {
        self.check_batch(batch)?;
        self.check_labels(batch, labels)?;
        let (logits, cache) = self.forward_cached(batch, self.mode);
        let out = self.gradient(&logits, labels, &cache);
        self.absorb_batch_stats(&cache);
        Ok(out)
    }

    fn gradient(&self, logits: &Mat, labels: &[usize], cache: &ForwardCache) -> (f32, ParamVector) {
        let (loss, dlogits) = softmax_cross_entropy(logits, labels);
        let nblocks = self.blocks.len();
        let (dw_head, db_head, mut dx) =
            affine_backward(&cache.acts[nblocks], &self.head.weight, &dlogits, nblocks > 0);

        let mut per_block: Vec<[Vec<f64>; 4]> = Vec::with_capacity(nblocks);
        for i in (0..nblocks).rev() {
            let b = &self.blocks[i];
            let mut dact = dx.take().expect("requested above");
            // ReLU: pass gradient where the output was positive
            for (g, &a) in dact.data.iter_mut().zip(&cache.acts[i + 1].data) {
                if a <= 0.0 {
                    *g = 0.0;
                }
            }
            let (dgamma, dbeta, dpre) = b.bn.backward(&cache.bn[i], &dact);
            let (dw, db, dprev) = affine_backward(&cache.acts[i], &b.dense.weight, &dpre, i > 0);
            dx = dprev;
            per_block.push([dw, db, dgamma, dbeta]);
        }
        per_block.reverse();

        let mut values: Vec<f32> = Vec::with_capacity(self.layout.total_len());
        let narrow = |v: Vec<f64>| v.into_iter().map(|x| x as f32);
        for (b, [dw, db, dgamma, dbeta]) in self.blocks.iter().zip(per_block) {
            values.extend(narrow(dw));
            values.extend(narrow(db));
            values.extend(narrow(dgamma));
            values.extend(narrow(dbeta));
            values.extend(std::iter::repeat_n(0.0, 2 * b.bn.width()));
        }
        values.extend(narrow(dw_head));
        values.extend(narrow(db_head));
        let grads = ParamVector::new(Arc::clone(&self.layout), values).expect("layout order");
        (loss, grads)
    }

    /// Mask of the entries a training step can change under the current
    /// freezing state.
    pub fn trainable_mask(&self) -> Vec<bool> {
        let frozen = self.bn_frozen();
        self.layout.mask(|k| match k {
            ParamKind::DenseWeight | ParamKind::DenseBias => true,
            ParamKind::BnGamma | ParamKind::BnBeta => !frozen,
            ParamKind::BnRunningMean | ParamKind::BnRunningVar => false,
        })
    }
}

/// Mean cross-entropy and its gradient w.r.t. the logits.
fn softmax_cross_entropy(logits: &Mat, labels: &[usize]) -> (f32, Mat) {
    let (n, c) = (logits.rows, logits.cols);
    let mut grad = Mat::zeros(n, c);
    let mut total = 0.0f64;
    for r in 0..n {
        let row = logits.row(r);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[labels[r]];
        let g = grad.row_mut(r);
        for j in 0..c {
            let target = if j == labels[r] { 1.0 } else { 0.0 };
            g[j] = ((row[j] - lse).exp() - target) / n as f64;
        }
    }
    ((total / n as f64) as f32, grad)
}
