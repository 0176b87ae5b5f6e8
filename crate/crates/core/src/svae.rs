//! Spiking variational autoencoder with a Gaussian latent and a temporal
//! attention decoder at the output.
//!
//! Encoder: two stride-2 `conv-BN-ALIF` stages driven by the image as
//! constant input current; the temporal mean of the last feature map feeds
//! linear `mu` and `logvar` heads. Decoder: `z` is replayed as input current
//! at every step through `FC-BN-ALIF`, then two `upsample-conv` stages; the
//! last stage emits the output spike train that TAID turns into an image.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::layers::{
    mean_over_time, repeat_over_time, AlifLayer, BatchNorm, Conv2d, ForwardCtx, GradTape, Layer, Linear, Network, Upsample,
};
use crate::neuron::AlifParams;
use crate::numerics::{OptimizerConfig, OptimizerState, ParamMut, Rng, Tensor};
use crate::taid::{taid_backward, taid_forward, TaidMode, TaidParams, TaidTape};

pub const LOGVAR_MIN: f64 = -20.0;
pub const LOGVAR_MAX: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvaeConfig {
    /// `[C, H, W]`, with H and W divisible by 4.
    pub image: [usize; 3],
    pub time_steps: usize,
    pub latent: usize,
    /// Channel widths of the two encoder stages (mirrored in the decoder).
    pub channels: [usize; 2],
    pub beta: f64,
    pub alif: AlifParams,
    pub taid_mode: TaidMode,
}

impl SvaeConfig {
    pub fn mnist(latent: usize, time_steps: usize) -> Self {
        SvaeConfig {
            image: [1, 28, 28],
            time_steps,
            latent,
            channels: [16, 32],
            beta: 1.0,
            alif: AlifParams::default(),
            taid_mode: TaidMode::Matrix,
        }
    }

    fn validate(&self) -> Result<()> {
        let [c, h, w] = self.image;
        if c == 0 || h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
            return Err(Error::InvalidArgument(format!("image shape {:?} needs H and W divisible by 4", self.image)));
        }
        if self.time_steps == 0 || self.latent == 0 || self.channels.contains(&0) {
            return Err(Error::InvalidArgument("time steps, latent size and channel widths must be positive".into()));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("beta {} must be finite and non-negative", self.beta)));
        }
        self.alif.validate()
    }
}

/// Diagonal Gaussian posterior, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPosterior {
    /// `[B, D]`
    pub mu: Tensor,
    /// `[B, D]`, clamped to `[-20, 20]`.
    pub logvar: Tensor,
}

/// `z = mu + exp(logvar / 2) * eps`.
pub fn reparameterize(p: &LatentPosterior, eps: &Tensor) -> Result<Tensor> {
    let std = p.logvar.map(|lv| (0.5 * lv).exp());
    p.mu.add(&std.mul(eps)?)
}

/// Standard normal noise of the given shape.
pub fn sample_noise(rng: &mut Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.normal())
}

/// `1/2 sum_d (mu^2 + exp(logvar) - 1 - logvar)` against a standard normal
/// prior, averaged over the rows of the posterior.
pub fn kl_gauss(p: &LatentPosterior) -> f64 {
    let d = p.mu.shape().last().copied().unwrap_or(1).max(1);
    let rows = (p.mu.len() / d).max(1);
    let total: f64 = p
        .mu
        .data()
        .iter()
        .zip(p.logvar.data())
        .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
        .sum();
    0.5 * total / rows as f64
}

/// Loss terms of one forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboTerms {
    /// `recon_loss + beta * kl`
    pub loss: f64,
    pub recon_loss: f64,
    pub kl: f64,
}

/// Mean squared reconstruction error plus `beta` times the KL term.
pub fn elbo_loss(x: &Tensor, recon: &Tensor, posterior: &LatentPosterior, beta: f64) -> Result<ElboTerms> {
    x.expect_shape(recon.shape())?;
    let recon_loss = x.data().iter().zip(recon.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len().max(1) as f64;
    let kl = kl_gauss(posterior);
    Ok(ElboTerms {
        loss: recon_loss + beta * kl,
        recon_loss,
        kl,
    })
}

#[derive(Debug, Clone)]
pub struct VaeOutput {
    /// `[B, C, H, W]` decoded images in `[0, 1]`.
    pub recon: Tensor,
    /// `[T, B, C, H, W]` output spike train.
    pub spikes: Tensor,
    pub posterior: LatentPosterior,
    pub terms: ElboTerms,
}

/// Saved intermediates of [`Svae::forward`].
#[derive(Debug, Clone)]
pub struct VaeTape {
    enc: GradTape,
    /// `[B, F]` temporal mean of encoder features.
    features: Tensor,
    logvar_raw: Tensor,
    eps: Tensor,
    dec: GradTape,
    taid: TaidTape,
    x: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Svae {
    pub cfg: SvaeConfig,
    pub encoder: Network,
    pub mu_head: Linear,
    pub logvar_head: Linear,
    pub decoder: Network,
    pub taid: TaidParams,
}

impl Svae {
    pub fn new(cfg: SvaeConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let [c, h, w] = cfg.image;
        let [c1, c2] = cfg.channels;
        let (h4, w4) = (h / 4, w / 4);
        let feat = c2 * h4 * w4;
        let alif = || Layer::Alif(AlifLayer::new(cfg.alif));
        let encoder = Network::new(vec![
            Layer::Conv2d(Conv2d::new(c, c1, 3, 2, rng)),
            Layer::BatchNorm(BatchNorm::new(c1)),
            alif(),
            Layer::Conv2d(Conv2d::new(c1, c2, 3, 2, rng)),
            Layer::BatchNorm(BatchNorm::new(c2)),
            alif(),
        ]);
        let decoder = Network::new(vec![
            Layer::Linear(Linear::new(cfg.latent, feat, rng)),
            Layer::Reshape(vec![c2, h4, w4]),
            Layer::BatchNorm(BatchNorm::new(c2)),
            alif(),
            Layer::Upsample(Upsample { factor: 2 }),
            Layer::Conv2d(Conv2d::new(c2, c1, 3, 1, rng)),
            Layer::BatchNorm(BatchNorm::new(c1)),
            alif(),
            Layer::Upsample(Upsample { factor: 2 }),
            Layer::Conv2d(Conv2d::new(c1, c, 3, 1, rng)),
            alif(),
        ]);
        Ok(Svae {
            cfg,
            encoder,
            mu_head: Linear::new(feat, cfg.latent, rng),
            logvar_head: Linear::new(feat, cfg.latent, rng),
            decoder,
            taid: TaidParams::new(cfg.time_steps, cfg.taid_mode),
        })
    }

    fn check_images(&self, x: &Tensor) -> Result<()> {
        if x.ndim() != 4 || x.shape()[1..] != self.cfg.image[..] {
            return Err(Error::InvalidShape {
                shape: x.shape().to_vec(),
                reason: format!("expected [B, {:?}] images", self.cfg.image),
            });
        }
        Ok(())
    }

    fn encode_inner(&self, x: &Tensor, ctx: &ForwardCtx) -> Result<(LatentPosterior, GradTape, Tensor, Tensor)> {
        self.check_images(x)?;
        let (h, tape) = self.encoder.forward(&repeat_over_time(x, self.cfg.time_steps), ctx)?;
        let b = x.shape()[0];
        let features = mean_over_time(&h).reshape(&[b, h.len() / (self.cfg.time_steps * b).max(1)])?;
        let mu = self.mu_head.forward(&features, 1)?;
        let raw = self.logvar_head.forward(&features, 1)?;
        let logvar = raw.clamp(LOGVAR_MIN, LOGVAR_MAX);
        Ok((LatentPosterior { mu, logvar }, tape, features, raw))
    }

    /// Posterior for `x [B, C, H, W]`.
    pub fn encode(&self, x: &Tensor, ctx: &ForwardCtx) -> Result<LatentPosterior> {
        Ok(self.encode_inner(x, ctx)?.0)
    }

    /// Output spikes `[T, B, C, H, W]` for latents `z [B, D]`.
    pub fn decode_latent(&self, z: &Tensor, ctx: &ForwardCtx) -> Result<(Tensor, GradTape)> {
        if z.ndim() != 2 || z.shape()[1] != self.cfg.latent {
            return Err(Error::shape(z.shape(), &[z.shape()[0], self.cfg.latent]));
        }
        self.decoder.forward(&repeat_over_time(z, self.cfg.time_steps), ctx)
    }

    /// Full pass with caller-supplied reparameterization noise `eps [B, D]`.
    pub fn forward(&self, x: &Tensor, eps: &Tensor, ctx: &ForwardCtx) -> Result<(VaeOutput, VaeTape)> {
        let (posterior, enc, features, logvar_raw) = self.encode_inner(x, ctx)?;
        eps.expect_shape(posterior.mu.shape())?;
        let z = reparameterize(&posterior, eps)?;
        let (spikes, dec) = self.decode_latent(&z, ctx)?;
        let (recon, taid) = taid_forward(&spikes, &self.taid)?;
        let terms = elbo_loss(x, &recon, &posterior, self.cfg.beta)?;
        let tape = VaeTape {
            enc,
            features,
            logvar_raw,
            eps: eps.clone(),
            dec,
            taid,
            x: x.clone(),
        };
        Ok((
            VaeOutput {
                recon,
                spikes,
                posterior,
                terms,
            },
            tape,
        ))
    }

    /// Gradients of the ELBO loss, ordered like [`Svae::params`].
    pub fn backward(&self, out: &VaeOutput, mut tape: VaeTape) -> Result<Vec<Tensor>> {
        let x = &tape.x;
        let scale = 2.0 / x.len() as f64;
        let d_recon = out.recon.zip_map(x, |r, v| scale * (r - v))?;
        let (d_spikes, d_w) = taid_backward(&out.spikes, &tape.taid, &self.taid, &d_recon)?;
        let (dz_seq, dec_grads) = self.decoder.backward(&mut tape.dec, &d_spikes, true)?;
        let dz_seq = dz_seq.expect("requested");
        let (b, d) = (out.posterior.mu.shape()[0], self.cfg.latent);
        let mut dz = vec![0.0; b * d];
        for chunk in dz_seq.data().chunks(b * d) {
            for (a, v) in dz.iter_mut().zip(chunk) {
                *a += v;
            }
        }
        let beta_b = self.cfg.beta / b as f64;
        let mu = out.posterior.mu.data();
        let lv = out.posterior.logvar.data();
        let mut d_mu = Tensor::zeros(&[b, d]);
        let mut d_lv = Tensor::zeros(&[b, d]);
        for i in 0..b * d {
            d_mu.data_mut()[i] = dz[i] + beta_b * mu[i];
            let raw = tape.logvar_raw.data()[i];
            d_lv.data_mut()[i] = if (LOGVAR_MIN..=LOGVAR_MAX).contains(&raw) {
                dz[i] * tape.eps.data()[i] * 0.5 * (0.5 * lv[i]).exp() + beta_b * 0.5 * (lv[i].exp() - 1.0)
            } else {
                0.0
            };
        }
        let (dh_mu, mu_w, mu_b) = self.mu_head.backward(&tape.features, 1, &d_mu, true)?;
        let (dh_lv, lv_w, lv_b) = self.logvar_head.backward(&tape.features, 1, &d_lv, true)?;
        let dh = dh_mu.expect("requested").add(&dh_lv.expect("requested"))?;
        let t = self.cfg.time_steps;
        let mut enc_out_shape = vec![t, b];
        enc_out_shape.extend(self.encoder.output_shape(&self.cfg.image)?);
        let d_enc = repeat_over_time(&dh.scale(1.0 / t as f64), t).reshape(&enc_out_shape)?;
        let (_, enc_grads) = self.encoder.backward(&mut tape.enc, &d_enc, false)?;
        let mut grads = enc_grads;
        grads.extend([mu_w, mu_b, lv_w, lv_b]);
        grads.extend(dec_grads);
        grads.push(d_w);
        Ok(grads)
    }

    pub fn params(&self) -> Vec<(String, &Tensor, bool)> {
        let mut out: Vec<(String, &Tensor, bool)> = self.encoder.params().into_iter().map(|(n, t, tr)| (format!("enc.{n}"), t, tr)).collect();
        out.push(("mu.weight".into(), &self.mu_head.weight, true));
        out.push(("mu.bias".into(), &self.mu_head.bias, true));
        out.push(("logvar.weight".into(), &self.logvar_head.weight, true));
        out.push(("logvar.bias".into(), &self.logvar_head.bias, true));
        out.extend(self.decoder.params().into_iter().map(|(n, t, tr)| (format!("dec.{n}"), t, tr)));
        out.push(("taid.w".into(), &self.taid.w, self.taid.mode != TaidMode::Off));
        out
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        let mut out: Vec<ParamMut<'_>> = self
            .encoder
            .params_mut()
            .into_iter()
            .map(|p| ParamMut {
                name: format!("enc.{}", p.name),
                ..p
            })
            .collect();
        let trainable = true;
        out.push(ParamMut { name: "mu.weight".into(), value: &mut self.mu_head.weight, trainable });
        out.push(ParamMut { name: "mu.bias".into(), value: &mut self.mu_head.bias, trainable });
        out.push(ParamMut { name: "logvar.weight".into(), value: &mut self.logvar_head.weight, trainable });
        out.push(ParamMut { name: "logvar.bias".into(), value: &mut self.logvar_head.bias, trainable });
        out.extend(self.decoder.params_mut().into_iter().map(|p| ParamMut {
            name: format!("dec.{}", p.name),
            ..p
        }));
        let taid_on = self.taid.mode != TaidMode::Off;
        out.push(ParamMut { name: "taid.w".into(), value: &mut self.taid.w, trainable: taid_on });
        out
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.params().iter().map(|(_, t, _)| t.shape().to_vec()).collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = self.encoder.buffers_mut().into_iter().map(|(n, t)| (format!("enc.{n}"), t)).collect();
        out.extend(self.decoder.buffers_mut().into_iter().map(|(n, t)| (format!("dec.{n}"), t)));
        out
    }

    pub fn buffers(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = self.encoder.buffers().into_iter().map(|(n, t)| (format!("enc.{n}"), t)).collect();
        out.extend(self.decoder.buffers().into_iter().map(|(n, t)| (format!("dec.{n}"), t)));
        out
    }

    fn update_running_stats(&mut self, tape: &VaeTape) {
        self.encoder.update_running_stats(&tape.enc);
        self.decoder.update_running_stats(&tape.dec);
    }

    /// Deterministic reconstruction through the posterior mean (eval mode).
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        let ctx = ForwardCtx::eval();
        let p = self.encode(x, &ctx)?;
        let (spikes, _) = self.decode_latent(&p.mu, &ctx)?;
        Ok(taid_forward(&spikes, &self.taid)?.0)
    }

    /// Decode `n` latents drawn from the standard normal prior.
    pub fn generate(&self, n: usize, rng: &mut Rng) -> Result<Tensor> {
        let [c, h, w] = self.cfg.image;
        if n == 0 {
            return Ok(Tensor::zeros(&[0, c, h, w]));
        }
        let z = sample_noise(rng, &[n, self.cfg.latent]);
        let (spikes, _) = self.decode_latent(&z, &ForwardCtx::eval())?;
        Ok(taid_forward(&spikes, &self.taid)?.0)
    }
}

/// Model, AdamW state and noise stream of a VAE training run.
#[derive(Debug, Clone)]
pub struct VaeTrainer {
    pub model: Svae,
    pub opt: OptimizerState,
    pub rng: Rng,
    pub steps: usize,
}

impl VaeTrainer {
    pub fn new(model: Svae, optimizer: OptimizerConfig, rng: Rng) -> Self {
        let opt = OptimizerState::new(optimizer, &model.param_shapes());
        VaeTrainer { model, opt, rng, steps: 0 }
    }

    /// encode, reparameterize, decode, TAID, loss, backward, one update.
    pub fn train_step(&mut self, x: &Tensor) -> Result<ElboTerms> {
        let b = x.shape().first().copied().unwrap_or(0);
        let eps = sample_noise(&mut self.rng, &[b, self.model.cfg.latent]);
        let ctx = ForwardCtx::train(Rng::new(self.rng.next_u64()));
        let (out, tape) = self.model.forward(x, &eps, &ctx)?;
        let terms = out.terms;
        if !terms.loss.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite ELBO loss at step {} (recon {}, kl {})",
                self.steps + 1,
                terms.recon_loss,
                terms.kl
            )));
        }
        self.model.update_running_stats(&tape);
        let grads = self.model.backward(&out, tape)?;
        self.opt.step(&mut self.model.params_mut(), &grads)?;
        self.model.encoder.project();
        self.model.decoder.project();
        self.steps += 1;
        Ok(terms)
    }

    /// Draw `batch` distinct images (or all of them if fewer) from the
    /// trainer's stream and take one step on them.
    pub fn train_step_on(&mut self, data: &Dataset, batch: usize) -> Result<ElboTerms> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
        }
        let mut idx: Vec<usize> = (0..data.len()).collect();
        let k = batch.clamp(1, data.len());
        for i in 0..k {
            let j = i + self.rng.below(idx.len() - i);
            idx.swap(i, j);
        }
        let (x, _) = data.batch(&idx[..k]);
        self.train_step(&x)
    }
}

/// Run optimizer steps until `trainer.steps == total`, reporting each
/// step's terms.
pub fn train_vae(trainer: &mut VaeTrainer, data: &Dataset, batch: usize, total: usize, mut on_step: impl FnMut(usize, &ElboTerms) -> Result<()>) -> Result<()> {
    while trainer.steps < total {
        let terms = trainer.train_step_on(data, batch)?;
        on_step(trainer.steps, &terms)?;
    }
    Ok(())
}
