//! Convolutional latency predictor with hybrid classification/regression
//! heads, trained from scratch with Adam.
//!
//! Inputs are position-major: one row of 50 slots per instruction column.
//! Every convolution has kernel 2 and stride 2, so it is a dense stage over
//! pairs of adjacent rows and halves the sequence length.

mod network;

pub use network::{Dense, Network, Real, Workspace};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::{ByteReader, ByteWriter};
use crate::dataset::{Dataset, LabelScaling, Normalization, Partition};
use crate::error::{Error, Result};
use crate::trace::{FeatureLayout, LatencyTriple, SLOTS_PER_INSTRUCTION};

pub const REGRESSION_OUTPUTS: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub input_channels: usize,
    pub sequence_length: usize,
    pub conv_channels: Vec<usize>,
    pub fc_hidden: usize,
    /// Classes of the fetch, execution and store heads. The last class of a
    /// head collects every latency it has no dedicated class for.
    pub class_counts: [usize; 3],
}

/// Smallest power of two covering `columns`, and at least `2^conv_layers`.
pub fn padded_length(columns: usize, conv_layers: usize) -> usize {
    columns.next_power_of_two().max(1 << conv_layers)
}

impl CnnConfig {
    /// Three 64-channel convolutions, a 256-wide hidden layer, 10 classes
    /// per head.
    pub fn c3(layout: &FeatureLayout) -> CnnConfig {
        CnnConfig {
            input_channels: SLOTS_PER_INSTRUCTION,
            sequence_length: padded_length(layout.columns(), 3),
            conv_channels: vec![64, 64, 64],
            fc_hidden: 256,
            class_counts: [10, 10, 10],
        }
    }

    pub fn preset(name: &str, layout: &FeatureLayout) -> Result<CnnConfig> {
        match name {
            "c3" => Ok(CnnConfig::c3(layout)),
            other => Err(Error::Config(format!("unknown model preset {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let layers = self.conv_channels.len();
        if self.input_channels == 0 || self.fc_hidden == 0 {
            return Err(Error::Config("channel and hidden widths must be positive".into()));
        }
        if self.conv_channels.contains(&0) {
            return Err(Error::Config("convolution channels must be positive".into()));
        }
        if layers >= usize::BITS as usize - 1
            || self.sequence_length == 0
            || self.sequence_length % (1 << layers) != 0
        {
            return Err(Error::Config(format!(
                "sequence length {} not divisible by 2^{layers}",
                self.sequence_length
            )));
        }
        if self.class_counts.iter().any(|&c| c < 2) {
            return Err(Error::Config("every head needs at least 2 classes".into()));
        }
        Ok(())
    }

    pub fn output_width(&self) -> usize {
        REGRESSION_OUTPUTS + self.class_counts.iter().sum::<usize>()
    }

    pub fn input_width(&self) -> usize {
        self.sequence_length * self.input_channels
    }

    /// `(input, output, rows per sample, relu)` of every stage.
    pub fn stage_shapes(&self) -> Vec<(usize, usize, usize, bool)> {
        let mut shapes = Vec::new();
        let mut channels = self.input_channels;
        let mut length = self.sequence_length;
        for &c in &self.conv_channels {
            length /= 2;
            shapes.push((2 * channels, c, length, true));
            channels = c;
        }
        shapes.push((length * channels, self.fc_hidden, 1, true));
        shapes.push((self.fc_hidden, self.output_width(), 1, false));
        shapes
    }

    pub fn hash(&self) -> u64 {
        let json = serde_json::to_vec(self).expect("config serializes");
        u64::from_le_bytes(Sha256::digest(&json)[..8].try_into().unwrap())
    }

    /// Zero parameters with the shapes of this config.
    pub fn network<T: Real>(&self) -> Result<Network<T>> {
        self.validate()?;
        Ok(Network::new(&self.stage_shapes()))
    }
}

/// Multiplications in one forward pass.
pub fn model_flops(config: &CnnConfig) -> u64 {
    config
        .stage_shapes()
        .iter()
        .map(|&(i, o, rows, _)| (i * o * rows) as u64)
        .sum()
}

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
pub fn init_params<T: Real>(net: &mut Network<T>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = net.layers.clone();
    for l in &layers {
        let bound = 1.0 / (l.input as f64).sqrt();
        for p in &mut net.params[l.w_offset..l.b_offset + l.output] {
            *p = T::from(rng.random_range(-bound..bound)).unwrap();
        }
    }
}

/// Raw network output for one sample. Regression values are in normalized
/// units (divide-by-scale), logits are unnormalized.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionOutput {
    pub regression: [f64; 3],
    pub logits: [Vec<f64>; 3],
}

impl PredictionOutput {
    pub fn from_slice<T: Real>(out: &[T], classes: [usize; 3]) -> PredictionOutput {
        let f = |v: &T| v.to_f64().unwrap();
        let mut start = REGRESSION_OUTPUTS;
        let logits = classes.map(|c| {
            let v = out[start..start + c].iter().map(f).collect();
            start += c;
            v
        });
        PredictionOutput {
            regression: [f(&out[0]), f(&out[1]), f(&out[2])],
            logits,
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.regression.to_vec();
        for l in &self.logits {
            v.extend_from_slice(l);
        }
        v
    }

    /// Argmax per head, lowest index on ties.
    pub fn classes(&self) -> [usize; 3] {
        [0, 1, 2].map(|h| argmax(&self.logits[h]))
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn class_of(latency: u32, classes: usize) -> usize {
    (latency as usize).min(classes - 1)
}

/// Turns an output into latencies: a dedicated class gives its latency,
/// the overflow class falls back to the rounded regression value.
pub fn decode_hybrid(
    out: &PredictionOutput,
    labels: &LabelScaling,
    is_store: bool,
    frontier: u64,
) -> LatencyTriple {
    let v = [0, 1, 2].map(|h| {
        let classes = out.logits[h].len();
        let k = argmax(&out.logits[h]);
        if k + 1 < classes {
            k as u32
        } else {
            let cycles = labels.decode(h, out.regression[h]);
            cycles.max(0.0).round().min(u32::MAX as f64) as u32
        }
    });
    labels.latencies(v, frontier, is_store)
}

/// Hybrid loss of one sample: per head, squared error of the normalized
/// regression plus cross-entropy of the class logits. When `grad` is given,
/// `weight * dloss/dout` is written into it.
pub fn hybrid_loss<T: Real>(
    out: &[T],
    label: &LatencyTriple,
    scaling: &LabelScaling,
    classes: [usize; 3],
    mut grad: Option<(&mut [T], T)>,
) -> T {
    let mut total = T::zero();
    let labels = label.as_array();
    let mut start = REGRESSION_OUTPUTS;
    for h in 0..3 {
        let target = T::from(scaling.encode(h, labels[h])).unwrap();
        let diff = out[h] - target;
        total = total + diff * diff;
        if let Some((g, w)) = grad.as_mut() {
            g[h] = *w * (diff + diff);
        }
        let logits = &out[start..start + classes[h]];
        let k = class_of(labels[h], classes[h]);
        let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = logits.iter().map(|&z| (z - max).exp()).fold(T::zero(), |a, b| a + b);
        let log_z = max + sum.ln();
        total = total + (log_z - logits[k]);
        if let Some((g, w)) = grad.as_mut() {
            for (c, &z) in logits.iter().enumerate() {
                let p = (z - log_z).exp();
                let onehot = if c == k { T::one() } else { T::zero() };
                g[start + c] = *w * (p - onehot);
            }
        }
        start += classes[h];
    }
    total
}

pub fn loss(out: &PredictionOutput, label: &LatencyTriple, scaling: &LabelScaling) -> f64 {
    let classes = [0, 1, 2].map(|h| out.logits[h].len());
    hybrid_loss(&out.to_vec(), label, scaling, classes, None)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

impl Adam {
    pub fn new(params: usize, lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; params],
            v: vec![0.0; params],
        }
    }

    pub fn update(&mut self, params: &mut [f32], grad: &[f32]) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 / (1.0 - self.beta1.powi(t)) as f32;
        let c2 = 1.0 / (1.0 - self.beta2.powi(t)) as f32;
        let lr = self.lr as f32;
        let eps = self.eps as f32;
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let mh = self.m[i] * c1;
            let vh = self.v[i] * c2;
            params[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

/// Decoded latencies plus the winning class of every head.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Prediction {
    pub latency: LatencyTriple,
    pub classes: [usize; 3],
}

/// Trained weights with everything needed to encode inputs and resume.
#[derive(Clone, Debug, PartialEq)]
pub struct CnnModel {
    pub config: CnnConfig,
    pub layout: FeatureLayout,
    pub norm: Normalization,
    pub net: Network<f32>,
    pub adam: Adam,
}

pub const MODEL_MAGIC: [u8; 4] = *b"SNM1";
const MODEL_VERSION: u32 = 1;

impl CnnModel {
    pub fn new(
        config: CnnConfig,
        layout: FeatureLayout,
        norm: Normalization,
        seed: u64,
    ) -> Result<CnnModel> {
        config.validate()?;
        if config.input_channels != SLOTS_PER_INSTRUCTION
            || layout.columns() > config.sequence_length
        {
            return Err(Error::Shape(format!(
                "layout of {} columns x {SLOTS_PER_INSTRUCTION} slots does not fit a {} x {} input",
                layout.columns(),
                config.sequence_length,
                config.input_channels
            )));
        }
        let mut net = config.network::<f32>()?;
        init_params(&mut net, seed);
        let adam = Adam::new(net.params.len(), 0.001);
        Ok(CnnModel {
            config,
            layout,
            norm,
            net,
            adam,
        })
    }

    pub fn input_width(&self) -> usize {
        self.config.input_width()
    }

    /// `frontier` is the commit frontier of the encoded context.
    pub fn decode(&self, out: &[f32], is_store: bool, frontier: u64) -> Prediction {
        let o = PredictionOutput::from_slice(out, self.config.class_counts);
        Prediction {
            latency: decode_hybrid(&o, &self.norm.labels, is_store, frontier),
            classes: o.classes(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::default();
        w.bytes(&MODEL_MAGIC);
        w.u32(MODEL_VERSION);
        w.u64(self.config.hash());
        w.string(&serde_json::to_string(&self.config).expect("config serializes"));
        w.u64(self.layout.max_context as u64);
        self.norm.write(&mut w);
        w.u64(self.net.layers.len() as u64);
        for l in &self.net.layers {
            w.u64(l.input as u64);
            w.u64(l.output as u64);
            w.u64(l.rows_per_sample as u64);
            w.u8(l.relu as u8);
        }
        w.f32s(&self.net.params);
        for x in [self.adam.lr, self.adam.beta1, self.adam.beta2, self.adam.eps] {
            w.u64(x.to_bits());
        }
        w.u64(self.adam.step);
        w.f32s(&self.adam.m);
        w.f32s(&self.adam.v);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<CnnModel> {
        let mut r = ByteReader::new(bytes);
        r.header(MODEL_MAGIC, MODEL_VERSION)?;
        let hash = r.u64()?;
        let config: CnnConfig = serde_json::from_str(&r.string()?)
            .map_err(|e| Error::Format(format!("model config: {e}")))?;
        if config.hash() != hash {
            return Err(Error::Format("model config hash mismatch".into()));
        }
        config.validate()?;
        let layout = FeatureLayout::new(r.u64()? as usize);
        let norm = Normalization::read(&mut r)?;
        let mut net = config.network::<f32>()?;
        let n = r.u64()? as usize;
        if n != net.layers.len() {
            return Err(Error::Shape(format!(
                "model file has {n} stages, config implies {}",
                net.layers.len()
            )));
        }
        for l in &net.layers {
            let shape = (r.u64()? as usize, r.u64()? as usize, r.u64()? as usize, r.u8()? != 0);
            if shape != (l.input, l.output, l.rows_per_sample, l.relu) {
                return Err(Error::Shape(format!("stage shape {shape:?} disagrees with config")));
            }
        }
        let params = r.f32s()?;
        if params.len() != net.params.len() {
            return Err(Error::Shape(format!(
                "{} parameters stored, {} expected",
                params.len(),
                net.params.len()
            )));
        }
        net.params = params;
        let hyper = [r.u64()?, r.u64()?, r.u64()?, r.u64()?].map(f64::from_bits);
        let step = r.u64()?;
        let m = r.f32s()?;
        let v = r.f32s()?;
        if m.len() != net.params.len() || v.len() != net.params.len() {
            return Err(Error::Shape("optimizer moments do not match parameters".into()));
        }
        r.finish()?;
        Ok(CnnModel {
            config,
            layout,
            norm,
            net,
            adam: Adam {
                lr: hyper[0],
                beta1: hyper[1],
                beta2: hyper[2],
                eps: hyper[3],
                step,
                m,
                v,
            },
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<CnnModel> {
        CnnModel::from_bytes(&std::fs::read(path)?)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Optional cap on training samples visited per epoch.
    pub samples_per_epoch: Option<usize>,
    /// Learning rate at the last step relative to `lr`, reached by cosine
    /// decay. 1.0 keeps the rate constant.
    pub final_lr_ratio: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 10,
            batch_size: 128,
            lr: 0.001,
            seed: 0,
            samples_per_epoch: None,
            final_lr_ratio: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: CnnModel,
    pub epochs: Vec<EpochReport>,
    pub best_epoch: usize,
}

/// Fills `x` (one padded input row per sample) from dataset samples.
pub fn encode_batch(ds: &Dataset, samples: &[usize], row: usize, x: &mut Vec<f32>) {
    x.clear();
    x.resize(samples.len() * row, 0.0);
    let w = ds.layout.width();
    for (chunk, &s) in x.chunks_exact_mut(row).zip(samples) {
        ds.encode_into(s, &mut chunk[..w]);
    }
}

/// Mean hybrid loss over `samples`.
pub fn mean_loss(model: &CnnModel, ds: &Dataset, samples: &[usize], batch: usize) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let row = model.input_width();
    let mut x = Vec::new();
    let mut ws = model.net.workspace(batch);
    let width = model.config.output_width();
    let mut total = 0.0;
    for chunk in samples.chunks(batch) {
        encode_batch(ds, chunk, row, &mut x);
        let out = model.net.forward(&x, chunk.len(), &mut ws);
        for (o, &s) in out.chunks_exact(width).zip(chunk) {
            total += hybrid_loss(
                o,
                &model.norm.labels.targets(ds.label(s), ds.frontier(s)),
                &model.norm.labels,
                model.config.class_counts,
                None,
            ) as f64;
        }
    }
    total / samples.len() as f64
}

/// Predicts every listed sample.
pub fn predict_samples(
    model: &CnnModel,
    ds: &Dataset,
    samples: &[usize],
    batch: usize,
) -> Vec<Prediction> {
    let row = model.input_width();
    let width = model.config.output_width();
    let mut x = Vec::new();
    let mut ws = model.net.workspace(batch);
    let mut preds = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch) {
        encode_batch(ds, chunk, row, &mut x);
        let out = model.net.forward(&x, chunk.len(), &mut ws);
        for (o, &s) in out.chunks_exact(width).zip(chunk) {
            preds.push(model.decode(o, ds.target(s).inst.is_store(), ds.frontier(s)));
        }
    }
    preds
}

fn check_layout(model: &CnnModel, ds: &Dataset) -> Result<()> {
    if model.layout != ds.layout {
        return Err(Error::Shape(format!(
            "model expects {} context columns, dataset has {}",
            model.layout.max_context, ds.layout.max_context
        )));
    }
    Ok(())
}

/// Mini-batch Adam on the training partition, keeping the parameters of the
/// epoch with the lowest validation loss.
pub fn train(ds: &Dataset, config: &CnnConfig, opts: &TrainOptions) -> Result<TrainOutcome> {
    let model = CnnModel::new(config.clone(), ds.layout, ds.norm.clone(), opts.seed)?;
    train_from(model, ds, opts)
}

/// Continues training an existing model.
pub fn train_from(mut model: CnnModel, ds: &Dataset, opts: &TrainOptions) -> Result<TrainOutcome> {
    check_layout(&model, ds)?;
    if opts.batch_size == 0 || opts.epochs == 0 {
        return Err(Error::Config("epochs and batch size must be positive".into()));
    }
    if !(0.0..=1.0).contains(&opts.final_lr_ratio) {
        return Err(Error::Config("final_lr_ratio must lie in [0, 1]".into()));
    }
    let mut train_idx = ds.indices(Partition::Train);
    if train_idx.is_empty() {
        return Err(Error::Config("training partition is empty".into()));
    }
    let val_idx = ds.indices(Partition::Validation);
    model.adam.lr = opts.lr;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(1));
    let row = model.input_width();
    let width = model.config.output_width();
    let classes = model.config.class_counts;
    let scale = model.norm.labels;
    let mut ws = model.net.workspace(opts.batch_size);
    let mut x = Vec::new();
    let mut d_out = Vec::new();
    let mut grad = vec![0f32; model.net.params.len()];

    let visit = opts
        .samples_per_epoch
        .map_or(train_idx.len(), |n| n.min(train_idx.len()));
    let total_steps = (opts.epochs * visit.div_ceil(opts.batch_size)).max(1) as f64;
    let mut step = 0usize;
    let mut best: Option<(f64, usize, Network<f32>, Adam)> = None;
    let mut epochs = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        train_idx.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_no, chunk) in train_idx[..visit].chunks(opts.batch_size).enumerate() {
            encode_batch(ds, chunk, row, &mut x);
            let b = chunk.len();
            let out = model.net.forward(&x, b, &mut ws);
            d_out.clear();
            d_out.resize(b * width, 0.0);
            let w = 1.0 / b as f32;
            let mut batch_loss = 0.0f64;
            for ((o, g), &s) in out.chunks_exact(width).zip(d_out.chunks_exact_mut(width)).zip(chunk) {
                let label = scale.targets(ds.label(s), ds.frontier(s));
                batch_loss += hybrid_loss(o, &label, &scale, classes, Some((g, w))) as f64;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_no,
                    loss: batch_loss,
                });
            }
            epoch_loss += batch_loss;
            grad.fill(0.0);
            model.net.backward(&x, &mut ws, &d_out, &mut grad);
            let progress = step as f64 / total_steps;
            let r = opts.final_lr_ratio;
            model.adam.lr = opts.lr * (r + (1.0 - r) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
            step += 1;
            model.adam.update(&mut model.net.params, &grad);
        }
        let train_loss = epoch_loss / visit as f64;
        let validation_loss = if val_idx.is_empty() {
            train_loss
        } else {
            mean_loss(&model, ds, &val_idx, opts.batch_size)
        };
        if !validation_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                batch: 0,
                loss: validation_loss,
            });
        }
        epochs.push(EpochReport {
            epoch,
            train_loss,
            validation_loss,
        });
        if best.as_ref().is_none_or(|b| validation_loss < b.0) {
            best = Some((validation_loss, epoch, model.net.clone(), model.adam.clone()));
        }
    }
    let (_, best_epoch, net, adam) = best.expect("at least one epoch");
    model.net = net;
    model.adam = adam;
    Ok(TrainOutcome {
        model,
        epochs,
        best_epoch,
    })
}

/// Largest relative difference between the analytic gradient and central
/// finite differences (step `1e-4`) over every parameter.
pub fn gradient_check(
    net: &Network<f64>,
    classes: [usize; 3],
    input: &[f64],
    label: &LatencyTriple,
    scaling: &LabelScaling,
) -> f64 {
    let h = 1e-4;
    let mut ws = net.workspace(1);
    let out = net.forward(input, 1, &mut ws).to_vec();
    let mut d_out = vec![0.0; out.len()];
    hybrid_loss(&out, label, scaling, classes, Some((&mut d_out, 1.0)));
    let mut grad = vec![0.0; net.params.len()];
    net.backward(input, &mut ws, &d_out, &mut grad);

    let mut probe = net.clone();
    let mut loss_at = |i: usize, v: f64| {
        probe.params[i] = v;
        let o = probe.forward(input, 1, &mut ws).to_vec();
        hybrid_loss(&o, label, scaling, classes, None)
    };
    let mut worst = 0.0f64;
    for (i, &analytic) in grad.iter().enumerate() {
        let p = net.params[i];
        let numeric = (loss_at(i, p + h) - loss_at(i, p - h)) / (2.0 * h);
        loss_at(i, p);
        let denom = analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic - numeric).abs() / denom);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn out_with(classes: [usize; 3], reg: [f64; 3], winners: [usize; 3]) -> PredictionOutput {
        PredictionOutput {
            regression: reg,
            logits: [0, 1, 2].map(|h| {
                let mut v = vec![0.0; classes[h]];
                v[winners[h]] = 1.0;
                v
            }),
        }
    }

    #[test]
    fn decode_rules() {
        let one = &LabelScaling::identity();
        let o = out_with([10; 3], [0.0; 3], [3, 2, 0]);
        assert_eq!(decode_hybrid(&o, one, false, 0), LatencyTriple::new(3, 2, 0));
        let o = out_with([10; 3], [20.4, 0.0, 0.0], [9, 0, 0]);
        assert_eq!(decode_hybrid(&o, one, false, 0).fetch, 20);
        let mut o = out_with([10; 3], [0.0; 3], [0, 0, 0]);
        o.logits[0][1] = 1.0;
        assert_eq!(decode_hybrid(&o, one, false, 0).fetch, 0);
        assert_eq!(decode_hybrid(&o, one, false, 0).execution, 1);
        let o = out_with([10; 3], [0.0, 0.0, -3.0], [0, 4, 9]);
        assert_eq!(decode_hybrid(&o, one, true, 0).store, 4);
    }

    #[test]
    fn regression_term_is_squared_error() {
        let classes = [2, 2, 2];
        let mut out = vec![0.0f64; 9];
        out[0] = 3.0;
        // Fetch label 1 with scale 1, regression off by 2. Logits uniform.
        let l = hybrid_loss(&out, &LatencyTriple::new(1, 0, 0), &LabelScaling::identity(), classes, None);
        let ce = 3.0 * 2f64.ln();
        assert!((l - (4.0 + ce)).abs() < 1e-12, "{l}");
    }

    #[test]
    fn c3_shapes() {
        let cfg = CnnConfig::c3(&FeatureLayout::default());
        assert_eq!(cfg.sequence_length, 128);
        let net = cfg.network::<f32>().unwrap();
        assert_eq!(net.input_width(), 6400);
        assert_eq!(net.output_width(), 33);
        assert_eq!(net.layers[3].input, 16 * 64);
    }

    #[test]
    fn zero_weights_give_uniform_classes() {
        let cfg = CnnConfig::c3(&FeatureLayout::default());
        let net = cfg.network::<f32>().unwrap();
        let x = vec![0.5f32; net.input_width()];
        let mut ws = net.workspace(1);
        let out = net.forward(&x, 1, &mut ws);
        assert!(out.iter().all(|&v| v == 0.0));
    }
}
