//! Spiking image classifier with a firing-rate voting readout.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::arch::{ArchitectureSpec, LayerDesc};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::layers::{
    mean_over_time, repeat_over_time, AlifLayer, BatchNorm, Conv2d, Dropout, ForwardCtx, GradTape, Layer, Linear, Network, Pool,
};
use crate::neuron::AlifParams;
use crate::numerics::{OptimizerConfig, OptimizerState, Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Mean squared error between rates and one-hot targets.
    #[default]
    Mse,
    /// Softmax cross-entropy with the rates as logits.
    Ce,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierOutput {
    /// `[B, classes]` voting-head firing rates averaged over time.
    pub rates: Tensor,
    pub predictions: Vec<usize>,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub arch: ArchitectureSpec,
    pub input_shape: Vec<usize>,
    pub classes: usize,
    pub time_steps: usize,
    /// Body layers followed by the voting-head average pool.
    pub net: Network,
}

impl Classifier {
    /// Instantiate `arch` for `[C, H, W]` inputs. Every ALIF layer starts
    /// from `alif`; `LIF` layers get the same constants, frozen.
    pub fn build(arch: &ArchitectureSpec, input_shape: &[usize], time_steps: usize, alif: AlifParams, dropout: f64, rng: &mut Rng) -> Result<Self> {
        if time_steps == 0 {
            return Err(Error::InvalidArgument("time steps must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::InvalidArgument(format!("dropout probability {dropout} outside [0, 1)")));
        }
        alif.validate()?;
        let (rows, classes) = arch.shapes(input_shape)?;
        let mut layers = Vec::with_capacity(rows.len() + 1);
        for row in &rows {
            layers.push(match row.layer {
                LayerDesc::Conv { out_channels, kernel, stride } => Layer::Conv2d(Conv2d::new(row.input[0], out_channels, kernel, stride, rng)),
                LayerDesc::Fc(n) => Layer::Linear(Linear::new(row.input.iter().product(), n, rng)),
                LayerDesc::BatchNorm => Layer::BatchNorm(BatchNorm::new(row.input[0])),
                LayerDesc::MaxPool { kernel, stride } => Layer::MaxPool(Pool::new(kernel, stride)),
                LayerDesc::AvgPool { kernel, stride } => Layer::AvgPool(Pool::new(kernel, stride)),
                LayerDesc::Alif => Layer::Alif(AlifLayer::new(alif)),
                LayerDesc::Lif => Layer::Alif(AlifLayer::new(AlifParams {
                    tau_learnable: false,
                    vth_learnable: false,
                    ..alif
                })),
                LayerDesc::Dropout => Layer::Dropout(Dropout { p: dropout }),
            });
        }
        layers.push(Layer::AvgPool(Pool::new(arch.head.0, arch.head.1)));
        Ok(Classifier {
            arch: arch.clone(),
            input_shape: input_shape.to_vec(),
            classes,
            time_steps,
            net: Network::new(layers),
        })
    }

    /// Run `images [B, C, H, W]` for `T` steps with direct input coding.
    pub fn forward(&self, images: &Tensor, ctx: &ForwardCtx) -> Result<(ClassifierOutput, GradTape)> {
        if images.ndim() != 4 || images.shape()[1..] != self.input_shape[..] {
            return Err(Error::InvalidShape {
                shape: images.shape().to_vec(),
                reason: format!("expected [B, {:?}] images", self.input_shape),
            });
        }
        let x = repeat_over_time(images, self.time_steps);
        let (y, tape) = self.net.forward(&x, ctx)?;
        let rates = mean_over_time(&y);
        let predictions = rates.data().chunks(self.classes).map(argmax).collect();
        Ok((ClassifierOutput { rates, predictions }, tape))
    }

    /// Parameter gradients from `dL/d rates`.
    pub fn backward(&self, tape: &mut GradTape, d_rates: &Tensor) -> Result<Vec<Tensor>> {
        let t = self.time_steps;
        let dy = repeat_over_time(&d_rates.scale(1.0 / t as f64), t);
        Ok(self.net.backward(tape, &dy, false)?.1)
    }

    pub fn predict(&self, images: &Tensor) -> Result<ClassifierOutput> {
        Ok(self.forward(images, &ForwardCtx::eval())?.0)
    }

    /// Fraction of correctly classified examples, evaluated in chunks.
    pub fn accuracy(&self, data: &Dataset, chunk: usize) -> Result<f64> {
        if data.is_empty() {
            return Ok(0.0);
        }
        let mut correct = 0usize;
        let idx: Vec<usize> = (0..data.len()).collect();
        for part in idx.chunks(chunk.max(1)) {
            let (x, labels) = data.batch(part);
            let out = self.predict(&x)?;
            correct += out.predictions.iter().zip(&labels).filter(|(p, l)| p == l).count();
        }
        Ok(correct as f64 / data.len() as f64)
    }
}

fn check_labels(rates: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
    let (b, k) = match rates.shape() {
        [b, k] => (*b, *k),
        s => return Err(Error::shape(s, &[labels.len(), 0])),
    };
    if b != labels.len() {
        return Err(Error::shape(rates.shape(), &[labels.len(), k]));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArgument(format!("label {l} outside {k} classes")));
    }
    Ok((b, k))
}

/// Mean over batch and classes of `(rate - onehot)^2`, with its gradient.
pub fn mse_onehot_loss(rates: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (b, k) = check_labels(rates, labels)?;
    let n = (b * k) as f64;
    let mut grad = Tensor::zeros(rates.shape());
    let mut loss = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        for c in 0..k {
            let d = rates.data()[i * k + c] - if c == l { 1.0 } else { 0.0 };
            loss += d * d;
            grad.data_mut()[i * k + c] = 2.0 * d / n;
        }
    }
    Ok((loss / n, grad))
}

/// Mean softmax cross-entropy with rates as logits, with its gradient.
pub fn cross_entropy_loss(rates: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (b, k) = check_labels(rates, labels)?;
    let mut grad = Tensor::zeros(rates.shape());
    let mut loss = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        let row = &rates.data()[i * k..(i + 1) * k];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        loss += z.ln() + m - row[l];
        for c in 0..k {
            let p = (row[c] - m).exp() / z;
            grad.data_mut()[i * k + c] = (p - if c == l { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    Ok((loss / b as f64, grad))
}

pub fn loss(kind: LossKind, rates: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    match kind {
        LossKind::Mse => mse_onehot_loss(rates, labels),
        LossKind::Ce => cross_entropy_loss(rates, labels),
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_acc: f64,
    pub tau: Vec<f64>,
    pub vth: Vec<f64>,
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl fmt::Display for EpochRecord {
    /// `epoch=1 train_loss=0.0731 test_acc=0.9415 tau=[0.25,0.24] vth=[0.2,0.21]`.
    /// Reals use the shortest representation that round-trips exactly.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} train_loss={} test_acc={} tau=[{}] vth=[{}]",
            self.epoch,
            self.train_loss,
            self.test_acc,
            fmt_list(&self.tau),
            fmt_list(&self.vth)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSettings {
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub loss: LossKind,
}

/// Everything that evolves during training; checkpointing this struct at
/// an epoch boundary is enough to resume bit-identically.
#[derive(Debug, Clone)]
pub struct ClassifierTrainer {
    pub model: Classifier,
    pub opt: OptimizerState,
    pub rng: Rng,
    /// Completed epochs.
    pub epoch: usize,
    pub settings: TrainSettings,
}

impl ClassifierTrainer {
    pub fn new(model: Classifier, settings: TrainSettings, rng: Rng) -> Self {
        let opt = OptimizerState::new(settings.optimizer, &model.net.param_shapes());
        ClassifierTrainer {
            model,
            opt,
            rng,
            epoch: 0,
            settings,
        }
    }

    /// Forward, backward and one optimizer update on a batch.
    pub fn step(&mut self, images: &Tensor, labels: &[usize]) -> Result<f64> {
        let ctx = ForwardCtx::train(Rng::new(self.rng.next_u64()));
        let (out, mut tape) = self.model.forward(images, &ctx)?;
        let (l, d_rates) = loss(self.settings.loss, &out.rates, labels)?;
        if !l.is_finite() {
            return Err(Error::Numerical(format!("non-finite training loss at epoch {}", self.epoch + 1)));
        }
        let grads = self.model.backward(&mut tape, &d_rates)?;
        self.model.net.update_running_stats(&tape);
        self.opt.step(&mut self.model.net.params_mut(), &grads)?;
        self.model.net.project();
        Ok(l)
    }

    /// One pass over `train` in a fresh seeded order; returns the mean loss.
    pub fn train_epoch(&mut self, train: &Dataset) -> Result<f64> {
        let mut order: Vec<usize> = (0..train.len()).collect();
        self.rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0;
        for part in order.chunks(self.settings.batch_size.max(1)) {
            let (x, labels) = train.batch(part);
            total += self.step(&x, &labels)?;
            batches += 1;
        }
        self.epoch += 1;
        Ok(if batches == 0 { 0.0 } else { total / batches as f64 })
    }

    pub fn run_epoch(&mut self, train: &Dataset, test: &Dataset) -> Result<EpochRecord> {
        let train_loss = self.train_epoch(train)?;
        let test_acc = self.model.accuracy(test, 200)?;
        let alif = self.model.net.alif_params();
        Ok(EpochRecord {
            epoch: self.epoch,
            train_loss,
            test_acc,
            tau: alif.iter().map(|p| p.tau).collect(),
            vth: alif.iter().map(|p| p.v_th).collect(),
        })
    }
}

/// Train for `epochs` epochs, reporting each record as it is produced.
pub fn train_classifier(
    trainer: &mut ClassifierTrainer,
    train: &Dataset,
    test: &Dataset,
    epochs: usize,
    mut on_epoch: impl FnMut(&EpochRecord, &ClassifierTrainer) -> Result<()>,
) -> Result<Vec<EpochRecord>> {
    let mut log = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let rec = trainer.run_epoch(train, test)?;
        on_epoch(&rec, trainer)?;
        log.push(rec);
    }
    Ok(log)
}
