use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Batch normalization with one statistic per channel, pooled over every
/// leading axis (time and batch) and every spatial position.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased variance used for normalization.
    pub var: Vec<f64>,
    /// Number of values pooled per channel.
    pub count: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct BnTape {
    pub x_hat: Tensor,
    pub inv_std: Vec<f64>,
    /// `None` in eval mode.
    pub stats: Option<BatchStats>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Tensor::full(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn layout(&self, x: &Tensor, lead: usize) -> Result<(usize, usize)> {
        let feat = &x.shape()[lead..];
        if feat.first() != Some(&self.channels()) {
            return Err(Error::InvalidShape {
                shape: x.shape().to_vec(),
                reason: format!("batchnorm expects {} channels", self.channels()),
            });
        }
        let rows: usize = x.shape()[..lead].iter().product();
        let spatial: usize = feat[1..].iter().product();
        Ok((rows, spatial))
    }

    pub(crate) fn forward(&self, x: &Tensor, lead: usize, train: bool) -> Result<(Tensor, BnTape)> {
        let (rows, spatial) = self.layout(x, lead)?;
        let c = self.channels();
        let data = x.data();
        let at = |r: usize, ch: usize| r * c * spatial + ch * spatial;

        // (shift, offset) per channel: centered = (x - shift) - offset
        let (centering, inv_std, stats) = if train {
            let count = rows * spatial;
            if count == 0 {
                return Err(Error::InvalidShape {
                    shape: x.shape().to_vec(),
                    reason: "batchnorm over an empty batch".into(),
                });
            }
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            let mut centering = vec![(0.0, 0.0); c];
            for ch in 0..c {
                // Shift by the first value so a constant channel has exactly
                // zero mean deviation and zero variance.
                let shift = data[at(0, ch)];
                let mut s = 0.0;
                for r in 0..rows {
                    s += data[at(r, ch)..at(r, ch) + spatial].iter().map(|v| v - shift).sum::<f64>();
                }
                let m = s / count as f64;
                let mut q = 0.0;
                for r in 0..rows {
                    q += data[at(r, ch)..at(r, ch) + spatial]
                        .iter()
                        .map(|v| {
                            let d = (v - shift) - m;
                            d * d
                        })
                        .sum::<f64>();
                }
                centering[ch] = (shift, m);
                mean[ch] = shift + m;
                var[ch] = q / count as f64;
            }
            let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
            (centering, inv, Some(BatchStats { mean, var, count }))
        } else {
            let inv = self.running_var.data().iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
            let centering = self.running_mean.data().iter().map(|&m| (m, 0.0)).collect();
            (centering, inv, None)
        };

        let mut x_hat = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        for r in 0..rows {
            for ch in 0..c {
                let (g, b) = (self.gamma.data()[ch], self.beta.data()[ch]);
                let (shift, offset) = centering[ch];
                let base = at(r, ch);
                for i in base..base + spatial {
                    let xh = ((data[i] - shift) - offset) * inv_std[ch];
                    x_hat.data_mut()[i] = xh;
                    y.data_mut()[i] = g * xh + b;
                }
            }
        }
        Ok((y, BnTape { x_hat, inv_std, stats }))
    }

    pub(crate) fn backward(&self, tape: &BnTape, lead: usize, dy: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        dy.expect_shape(tape.x_hat.shape())?;
        let (rows, spatial) = self.layout(dy, lead)?;
        let c = self.channels();
        let at = |r: usize, ch: usize| r * c * spatial + ch * spatial;
        let xh = tape.x_hat.data();
        let g = dy.data();
        let mut dgamma = Tensor::zeros(&[c]);
        let mut dbeta = Tensor::zeros(&[c]);
        let mut dx = Tensor::zeros(dy.shape());
        for ch in 0..c {
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for r in 0..rows {
                let base = at(r, ch);
                for i in base..base + spatial {
                    sum_g += g[i];
                    sum_gx += g[i] * xh[i];
                }
            }
            dgamma.data_mut()[ch] = sum_gx;
            dbeta.data_mut()[ch] = sum_g;
            let gamma = self.gamma.data()[ch];
            let inv = tape.inv_std[ch];
            match &tape.stats {
                Some(stats) => {
                    let m = stats.count as f64;
                    let mean_g = sum_g / m;
                    let mean_gx = sum_gx / m;
                    for r in 0..rows {
                        let base = at(r, ch);
                        for i in base..base + spatial {
                            dx.data_mut()[i] = gamma * inv * (g[i] - mean_g - xh[i] * mean_gx);
                        }
                    }
                }
                None => {
                    for r in 0..rows {
                        let base = at(r, ch);
                        for i in base..base + spatial {
                            dx.data_mut()[i] = gamma * inv * g[i];
                        }
                    }
                }
            }
        }
        Ok((dx, dgamma, dbeta))
    }

    /// Exponential moving average update with momentum 0.1; the running
    /// variance uses the unbiased estimate.
    pub fn update_running(&mut self, stats: &BatchStats) {
        let n = stats.count as f64;
        let unbias = if stats.count > 1 { n / (n - 1.0) } else { 1.0 };
        for ch in 0..self.channels() {
            let rm = &mut self.running_mean.data_mut()[ch];
            *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * stats.mean[ch];
            let rv = &mut self.running_var.data_mut()[ch];
            *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * stats.var[ch] * unbias;
        }
    }
}
