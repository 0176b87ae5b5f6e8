//! Spiking network layers with explicit forward and reverse passes.
//!
//! Activations flow between layers as `[T, B, features...]` tensors and the
//! network executes layer by layer over the whole time axis. Stateless layers
//! (convolution, linear, pooling, dropout) treat the `T * B` leading rows as
//! a batch, batch normalization pools its statistics over time, batch and
//! space, and only the ALIF layer iterates over time.

mod conv;
mod linear;
mod norm;
mod pool;

pub use conv::Conv2d;
pub use linear::Linear;
pub use norm::{BatchNorm, BatchStats, BN_EPS, BN_MOMENTUM};
pub use pool::{Pool, Upsample};

use crate::error::{Error, Result};
use crate::neuron::{self, AlifParams, AlifStepRecord, BackwardOut, SpikeMode};
use crate::numerics::{sigmoid, ParamMut, Rng, Tensor};

/// Leading `[T, B]` axes carried by every activation.
const LEAD: usize = 2;

/// Uniform init `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`: Kaiming-uniform
/// (fan-in mode) with negative slope `sqrt(5)`.
pub(crate) fn init_uniform(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.uniform(-bound, bound))
}

/// ALIF neurons with per-layer learnable `tau` and `v_th`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlifLayer {
    pub tau: Tensor,
    pub v_th: Tensor,
    pub a: f64,
    pub tau_learnable: bool,
    pub vth_learnable: bool,
}

impl AlifLayer {
    pub fn new(p: AlifParams) -> Self {
        AlifLayer {
            tau: Tensor::scalar(p.tau),
            v_th: Tensor::scalar(p.v_th),
            a: p.a,
            tau_learnable: p.tau_learnable,
            vth_learnable: p.vth_learnable,
        }
    }

    pub fn params(&self) -> AlifParams {
        AlifParams {
            tau: self.tau.data()[0],
            v_th: self.v_th.data()[0],
            a: self.a,
            tau_learnable: self.tau_learnable,
            vth_learnable: self.vth_learnable,
        }
    }

    pub fn project(&mut self) {
        let mut p = self.params();
        p.project();
        self.tau.data_mut()[0] = p.tau;
        self.v_th.data_mut()[0] = p.v_th;
    }
}

/// Spiking dropout: one mask per sample, reused at every time step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub p: f64,
}

impl Dropout {
    /// Mask for sample `b` of the layer at `layer_index`, already scaled by
    /// `1 / (1 - p)`.
    pub fn mask(&self, stream: &Rng, layer_index: usize, sample: usize, features: usize) -> Vec<f64> {
        let mut rng = stream.split(layer_index as u64).split(sample as u64);
        let keep = 1.0 / (1.0 - self.p);
        (0..features)
            .map(|_| if rng.next_f64() >= self.p { keep } else { 0.0 })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d(Conv2d),
    Linear(Linear),
    BatchNorm(BatchNorm),
    MaxPool(Pool),
    AvgPool(Pool),
    Dropout(Dropout),
    Alif(AlifLayer),
    Upsample(Upsample),
    /// Reinterpret the features with a new shape of equal size.
    Reshape(Vec<usize>),
    Relu,
    Sigmoid,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv",
            Layer::Linear(_) => "fc",
            Layer::BatchNorm(_) => "bn",
            Layer::MaxPool(_) => "maxpool",
            Layer::AvgPool(_) => "avgpool",
            Layer::Dropout(_) => "dropout",
            Layer::Alif(_) => "alif",
            Layer::Upsample(_) => "upsample",
            Layer::Reshape(_) => "reshape",
            Layer::Relu => "relu",
            Layer::Sigmoid => "sigmoid",
        }
    }

    /// Output feature shape for a given input feature shape (no `[T, B]`).
    pub fn output_shape(&self, feat: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Conv2d(c) => c.output_shape(feat),
            Layer::Linear(l) => {
                let n: usize = feat.iter().product();
                if n != l.inputs() {
                    return Err(Error::InvalidShape {
                        shape: feat.to_vec(),
                        reason: format!("linear expects {} inputs", l.inputs()),
                    });
                }
                Ok(vec![l.outputs()])
            }
            Layer::BatchNorm(bn) => {
                if feat.first() != Some(&bn.channels()) {
                    return Err(Error::InvalidShape {
                        shape: feat.to_vec(),
                        reason: format!("batchnorm expects {} channels", bn.channels()),
                    });
                }
                Ok(feat.to_vec())
            }
            Layer::MaxPool(p) | Layer::AvgPool(p) => p.output_shape(feat),
            Layer::Upsample(u) => u.output_shape(feat),
            Layer::Reshape(to) => {
                if to.iter().product::<usize>() != feat.iter().product::<usize>() {
                    return Err(Error::shape(feat, to));
                }
                Ok(to.clone())
            }
            Layer::Dropout(_) | Layer::Alif(_) | Layer::Relu | Layer::Sigmoid => Ok(feat.to_vec()),
        }
    }

    fn slots(&self) -> Vec<(&'static str, &Tensor, bool)> {
        match self {
            Layer::Conv2d(c) => vec![("weight", &c.weight, true), ("bias", &c.bias, true)],
            Layer::Linear(l) => vec![("weight", &l.weight, true), ("bias", &l.bias, true)],
            Layer::BatchNorm(b) => vec![("gamma", &b.gamma, true), ("beta", &b.beta, true)],
            Layer::Alif(a) => vec![("tau", &a.tau, a.tau_learnable), ("v_th", &a.v_th, a.vth_learnable)],
            _ => vec![],
        }
    }

    fn slots_mut(&mut self) -> Vec<(&'static str, &mut Tensor, bool)> {
        match self {
            Layer::Conv2d(c) => vec![("weight", &mut c.weight, true), ("bias", &mut c.bias, true)],
            Layer::Linear(l) => vec![("weight", &mut l.weight, true), ("bias", &mut l.bias, true)],
            Layer::BatchNorm(b) => vec![("gamma", &mut b.gamma, true), ("beta", &mut b.beta, true)],
            Layer::Alif(a) => {
                let (tl, vl) = (a.tau_learnable, a.vth_learnable);
                vec![("tau", &mut a.tau, tl), ("v_th", &mut a.v_th, vl)]
            }
            _ => vec![],
        }
    }
}

/// Settings for one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCtx {
    pub mode: SpikeMode,
    /// Batch statistics for BN and active dropout.
    pub train: bool,
    /// Root stream for dropout masks, split by (layer index, sample index).
    pub stream: Rng,
}

impl ForwardCtx {
    pub fn train(stream: Rng) -> Self {
        ForwardCtx {
            mode: SpikeMode::Hard,
            train: true,
            stream,
        }
    }

    pub fn eval() -> Self {
        ForwardCtx {
            mode: SpikeMode::Hard,
            train: false,
            stream: Rng::new(0),
        }
    }

    pub fn relaxed(mut self) -> Self {
        self.mode = SpikeMode::Relaxed;
        self
    }
}

#[derive(Debug, Clone)]
struct AlifTape {
    params: AlifParams,
    mode: SpikeMode,
    /// `[T, step_len]` membrane after update.
    u_pre: Vec<f64>,
    /// `[T, step_len]` emitted spikes (soft in relaxed mode).
    spikes: Vec<f64>,
    step_len: usize,
}

impl AlifTape {
    fn record(&self, t: usize) -> AlifStepRecord {
        let n = self.step_len;
        let prev = |v: &Vec<f64>| {
            if t == 0 {
                Tensor::zeros(&[n])
            } else {
                Tensor::new(vec![n], v[(t - 1) * n..t * n].to_vec()).expect("step slice")
            }
        };
        AlifStepRecord {
            u_pre: Tensor::new(vec![n], self.u_pre[t * n..(t + 1) * n].to_vec()).expect("step slice"),
            u_prev: prev(&self.u_pre),
            o_prev: prev(&self.spikes),
        }
    }
}

#[derive(Debug, Clone)]
enum LayerTape {
    Input(Tensor),
    BatchNorm(norm::BnTape),
    MaxPool { in_shape: Vec<usize>, argmax: Vec<usize> },
    Shape(Vec<usize>),
    Dropout(Option<Vec<f64>>),
    Alif(AlifTape),
    Output(Tensor),
}

/// Everything the reverse pass needs from one forward pass.
///
/// A tape belongs to exactly one forward pass and is consumed by the first
/// call to [`Network::backward`].
#[derive(Debug, Clone)]
pub struct GradTape {
    layers: Vec<LayerTape>,
    /// BN batch statistics; kept apart so they outlive the reverse pass.
    bn_stats: Vec<(usize, BatchStats)>,
    time_steps: usize,
    batch: usize,
    consumed: bool,
}

impl GradTape {
    /// Number of simulated time steps recorded.
    pub fn len(&self) -> usize {
        self.time_steps
    }

    pub fn is_empty(&self) -> bool {
        self.time_steps == 0
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    /// Per-step records of the ALIF layer at `layer`, in time order.
    pub fn alif_records(&self, layer: usize) -> Option<Vec<AlifStepRecord>> {
        match self.layers.get(layer)? {
            LayerTape::Alif(a) => Some((0..self.time_steps).map(|t| a.record(t)).collect()),
            _ => None,
        }
    }

    /// Batch statistics of every BN layer, keyed by layer index.
    pub fn batch_stats(&self) -> &[(usize, BatchStats)] {
        &self.bn_stats
    }

    /// Fingerprint of every non-smooth branch taken in the forward pass:
    /// which side of each surrogate window a membrane fell on and which
    /// element won each max-pool window. Two passes with equal fingerprints
    /// lie in the same smooth piece of the relaxed network.
    pub fn branch_fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for tape in &self.layers {
            match tape {
                LayerTape::Alif(a) => {
                    for &u in &a.u_pre {
                        let d = u - a.params.v_th;
                        let half = 0.5 * a.params.a;
                        feed(if d <= -half { 0 } else if d >= half { 2 } else { 1 });
                    }
                }
                LayerTape::MaxPool { argmax, .. } => argmax.iter().for_each(|&i| feed(i as u64)),
                _ => {}
            }
        }
        h
    }
}

/// Ordered stack of layers executed over `[T, B, ...]` activations.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Network {
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Network { layers }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mut shape = input.to_vec();
        for l in &self.layers {
            shape = l.output_shape(&shape)?;
        }
        Ok(shape)
    }

    pub fn forward(&self, x: &Tensor, ctx: &ForwardCtx) -> Result<(Tensor, GradTape)> {
        if x.ndim() < LEAD + 1 {
            return Err(Error::InvalidShape {
                shape: x.shape().to_vec(),
                reason: "network input must be [T, B, features...]".into(),
            });
        }
        let (time_steps, batch) = (x.shape()[0], x.shape()[1]);
        let mut tapes = Vec::with_capacity(self.layers.len());
        let mut bn_stats = Vec::new();
        let mut cur = x.clone();
        for (li, layer) in self.layers.iter().enumerate() {
            let (next, tape) = forward_layer(layer, li, cur, ctx)?;
            if let LayerTape::BatchNorm(norm::BnTape { stats: Some(s), .. }) = &tape {
                bn_stats.push((li, s.clone()));
            }
            tapes.push(tape);
            cur = next;
        }
        Ok((
            cur,
            GradTape {
                layers: tapes,
                bn_stats,
                time_steps,
                batch,
                consumed: false,
            },
        ))
    }

    /// Reverse pass. Returns the input gradient (when requested) and one
    /// gradient tensor per entry of [`Network::params`], in the same order.
    pub fn backward(&self, tape: &mut GradTape, dy: &Tensor, need_input_grad: bool) -> Result<(Option<Tensor>, Vec<Tensor>)> {
        if tape.consumed {
            return Err(Error::TapeConsumed);
        }
        if tape.layers.len() != self.layers.len() {
            return Err(Error::InvalidArgument("tape does not belong to this network".into()));
        }
        tape.consumed = true;
        let tapes = std::mem::take(&mut tape.layers);
        let mut per_layer: Vec<Vec<Tensor>> = vec![Vec::new(); self.layers.len()];
        let mut g = dy.clone();
        let n = self.layers.len();
        for (li, (layer, lt)) in self.layers.iter().zip(tapes).enumerate().rev() {
            let need_dx = li > 0 || need_input_grad;
            let (dx, grads) = backward_layer(layer, lt, &g, need_dx)?;
            per_layer[li] = grads;
            match dx {
                Some(dx) => g = dx,
                None => {
                    debug_assert!(li == 0 && n > 0);
                    g = Tensor::zeros(&[0]);
                }
            }
        }
        let grads = per_layer.into_iter().flatten().collect();
        Ok((need_input_grad.then_some(g), grads))
    }

    pub fn params(&self) -> Vec<(String, &Tensor, bool)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                l.slots()
                    .into_iter()
                    .map(move |(slot, t, tr)| (format!("{i}.{}.{slot}", l.kind()), t, tr))
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| {
                let kind = l.kind();
                l.slots_mut().into_iter().map(move |(slot, value, trainable)| ParamMut {
                    name: format!("{i}.{kind}.{slot}"),
                    value,
                    trainable,
                })
            })
            .collect()
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.params().iter().map(|(_, t, _)| t.shape().to_vec()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t, _)| t.len()).sum()
    }

    /// Non-trainable state (BN running statistics).
    pub fn buffers(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            if let Layer::BatchNorm(b) = l {
                out.push((format!("{i}.bn.running_mean"), &b.running_mean));
                out.push((format!("{i}.bn.running_var"), &b.running_var));
            }
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            if let Layer::BatchNorm(b) = l {
                out.push((format!("{i}.bn.running_mean"), &mut b.running_mean));
                out.push((format!("{i}.bn.running_var"), &mut b.running_var));
            }
        }
        out
    }

    pub fn update_running_stats(&mut self, tape: &GradTape) {
        for (i, stats) in tape.batch_stats() {
            if let Some(Layer::BatchNorm(bn)) = self.layers.get_mut(*i) {
                bn.update_running(stats);
            }
        }
    }

    /// Clamp every ALIF `tau` / `v_th` back into range.
    pub fn project(&mut self) {
        for l in &mut self.layers {
            if let Layer::Alif(a) = l {
                a.project();
            }
        }
    }

    pub fn alif_params(&self) -> Vec<AlifParams> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Alif(a) => Some(a.params()),
                _ => None,
            })
            .collect()
    }
}

/// Replicate `[B, ...]` into `[T, B, ...]` (direct input coding).
pub fn repeat_over_time(x: &Tensor, time_steps: usize) -> Tensor {
    let mut shape = vec![time_steps];
    shape.extend_from_slice(x.shape());
    let mut data = Vec::with_capacity(x.len() * time_steps);
    for _ in 0..time_steps {
        data.extend_from_slice(x.data());
    }
    Tensor::new(shape, data).expect("replicated shape")
}

/// Mean over the leading time axis: `[T, ...]` to `[...]`.
pub fn mean_over_time(x: &Tensor) -> Tensor {
    let t = x.shape()[0];
    let n = x.len() / t.max(1);
    let mut out = vec![0.0; n];
    for chunk in x.data().chunks(n) {
        for (o, v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    let inv = 1.0 / t as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    Tensor::new(x.shape()[1..].to_vec(), out).expect("time mean shape")
}

fn forward_layer(layer: &Layer, li: usize, x: Tensor, ctx: &ForwardCtx) -> Result<(Tensor, LayerTape)> {
    Ok(match layer {
        Layer::Conv2d(c) => (c.forward(&x, LEAD)?, LayerTape::Input(x)),
        Layer::Linear(l) => (l.forward(&x, LEAD)?, LayerTape::Input(x)),
        Layer::BatchNorm(bn) => {
            let (y, t) = bn.forward(&x, LEAD, ctx.train)?;
            (y, LayerTape::BatchNorm(t))
        }
        Layer::MaxPool(p) => {
            let (y, argmax) = p.max_forward(&x, LEAD)?;
            (
                y,
                LayerTape::MaxPool {
                    in_shape: x.shape().to_vec(),
                    argmax,
                },
            )
        }
        Layer::AvgPool(p) => (p.avg_forward(&x, LEAD)?, LayerTape::Shape(x.shape().to_vec())),
        Layer::Upsample(u) => (u.forward(&x, LEAD)?, LayerTape::Shape(x.shape().to_vec())),
        Layer::Reshape(_) => {
            let in_shape = x.shape().to_vec();
            let mut shape = in_shape[..LEAD].to_vec();
            shape.extend(layer.output_shape(&in_shape[LEAD..])?);
            (x.reshape(&shape)?, LayerTape::Shape(in_shape))
        }
        Layer::Dropout(d) => {
            if !ctx.train || d.p == 0.0 {
                (x, LayerTape::Dropout(None))
            } else {
                let (t, b) = (x.shape()[0], x.shape()[1]);
                let feat = x.len() / (t * b).max(1);
                let mut mask = Vec::with_capacity(b * feat);
                for s in 0..b {
                    mask.extend(d.mask(&ctx.stream, li, s, feat));
                }
                let mut y = x;
                for (i, v) in y.data_mut().iter_mut().enumerate() {
                    *v *= mask[i % (b * feat)];
                }
                (y, LayerTape::Dropout(Some(mask)))
            }
        }
        Layer::Alif(a) => {
            let params = a.params();
            x.check_finite("ALIF input")?;
            let t = x.shape()[0];
            let n = x.len() / t.max(1);
            let mut u_pre = vec![0.0; x.len()];
            let mut spikes = vec![0.0; x.len()];
            let zeros = vec![0.0; n];
            for step in 0..t {
                let (done_u, rest_u) = u_pre.split_at_mut(step * n);
                let (done_o, rest_o) = spikes.split_at_mut(step * n);
                let (u_prev, o_prev) = if step == 0 {
                    (&zeros[..], &zeros[..])
                } else {
                    (&done_u[(step - 1) * n..], &done_o[(step - 1) * n..])
                };
                neuron::step_slices(
                    u_prev,
                    o_prev,
                    &x.data()[step * n..(step + 1) * n],
                    &mut rest_u[..n],
                    &mut rest_o[..n],
                    &params,
                    ctx.mode,
                );
            }
            let out = Tensor::new(x.shape().to_vec(), spikes.clone())?;
            (
                out,
                LayerTape::Alif(AlifTape {
                    params,
                    mode: ctx.mode,
                    u_pre,
                    spikes,
                    step_len: n,
                }),
            )
        }
        Layer::Relu => {
            let y = x.map(|v| v.max(0.0));
            (y.clone(), LayerTape::Output(y))
        }
        Layer::Sigmoid => {
            let y = x.map(sigmoid);
            (y.clone(), LayerTape::Output(y))
        }
    })
}

fn backward_layer(layer: &Layer, tape: LayerTape, dy: &Tensor, need_dx: bool) -> Result<(Option<Tensor>, Vec<Tensor>)> {
    Ok(match (layer, tape) {
        (Layer::Conv2d(c), LayerTape::Input(x)) => {
            let (dx, dw, db) = c.backward(&x, LEAD, dy, need_dx)?;
            (dx, vec![dw, db])
        }
        (Layer::Linear(l), LayerTape::Input(x)) => {
            let (dx, dw, db) = l.backward(&x, LEAD, dy, need_dx)?;
            (dx, vec![dw, db])
        }
        (Layer::BatchNorm(bn), LayerTape::BatchNorm(t)) => {
            let (dx, dg, db) = bn.backward(&t, LEAD, dy)?;
            (Some(dx), vec![dg, db])
        }
        (Layer::MaxPool(_), LayerTape::MaxPool { in_shape, argmax }) => {
            (Some(Pool::max_backward(&in_shape, &argmax, dy)?), vec![])
        }
        (Layer::AvgPool(p), LayerTape::Shape(in_shape)) => (Some(p.avg_backward(&in_shape, LEAD, dy)?), vec![]),
        (Layer::Upsample(u), LayerTape::Shape(in_shape)) => (Some(u.backward(&in_shape, LEAD, dy)?), vec![]),
        (Layer::Reshape(_), LayerTape::Shape(in_shape)) => (Some(dy.clone().reshape(&in_shape)?), vec![]),
        (Layer::Dropout(_), LayerTape::Dropout(mask)) => match mask {
            None => (Some(dy.clone()), vec![]),
            Some(mask) => {
                let m = mask.len();
                let mut dx = dy.clone();
                for (i, v) in dx.data_mut().iter_mut().enumerate() {
                    *v *= mask[i % m];
                }
                (Some(dx), vec![])
            }
        },
        (Layer::Alif(_), LayerTape::Alif(a)) => {
            if dy.len() != a.u_pre.len() {
                return Err(Error::shape(dy.shape(), &[a.u_pre.len()]));
            }
            let n = a.step_len;
            let t_steps = a.u_pre.len() / n.max(1);
            let mut dx = Tensor::zeros(dy.shape());
            let mut du_next = vec![0.0; n];
            let mut carry_do = vec![0.0; n];
            let mut du_prev = vec![0.0; n];
            let mut do_prev = vec![0.0; n];
            let mut dl_do = vec![0.0; n];
            let zeros = vec![0.0; n];
            let (mut dtau, mut dvth) = (0.0, 0.0);
            for t in (0..t_steps).rev() {
                for i in 0..n {
                    dl_do[i] = dy.data()[t * n + i] + carry_do[i];
                }
                let (u_prev, o_prev) = if t == 0 {
                    (&zeros[..], &zeros[..])
                } else {
                    (&a.u_pre[(t - 1) * n..t * n], &a.spikes[(t - 1) * n..t * n])
                };
                let (gt, gv) = neuron::backward_slices(
                    &a.u_pre[t * n..(t + 1) * n],
                    u_prev,
                    o_prev,
                    &dl_do,
                    &du_next,
                    &a.params,
                    a.mode,
                    BackwardOut {
                        dx: &mut dx.data_mut()[t * n..(t + 1) * n],
                        du_prev: &mut du_prev,
                        do_prev: &mut do_prev,
                    },
                );
                dtau += gt;
                dvth += gv;
                std::mem::swap(&mut du_next, &mut du_prev);
                std::mem::swap(&mut carry_do, &mut do_prev);
            }
            (Some(dx), vec![Tensor::scalar(dtau), Tensor::scalar(dvth)])
        }
        (Layer::Relu, LayerTape::Output(y)) => (Some(dy.zip_map(&y, |g, v| if v > 0.0 { g } else { 0.0 })?), vec![]),
        (Layer::Sigmoid, LayerTape::Output(y)) => (Some(dy.zip_map(&y, |g, v| g * v * (1.0 - v))?), vec![]),
        (l, _) => {
            return Err(Error::InvalidArgument(format!("tape entry does not match layer kind {}", l.kind())));
        }
    })
}
