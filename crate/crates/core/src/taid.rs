//! Temporal attention image decoding.
//!
//! A spike tensor `S[T, C, H, W]` is squeezed to one scalar per time step
//! (`X_t` = mean over channels and pixels), the scalars are fused across time
//! by a learnable `T x T` matrix and a sigmoid (`F = sigmoid(W X)`), and the
//! image is the clamped temporal mean of the reweighted spikes
//! `clamp((1/T) sum_t F_t S_t, 0, 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sigmoid, Tensor};

/// How the fusion weights are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaidMode {
    /// `F = sigmoid(W X)` with a full matrix.
    #[default]
    Matrix,
    /// `F_i = sigmoid(W_ii X_i)`; off-diagonal entries are ignored.
    Elementwise,
    /// `F = 1`: the plain temporal mean decoder.
    Off,
}

impl std::str::FromStr for TaidMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "matrix" => Ok(TaidMode::Matrix),
            "elementwise" => Ok(TaidMode::Elementwise),
            "off" => Ok(TaidMode::Off),
            other => Err(Error::InvalidArgument(format!("unknown taid mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaidParams {
    /// `[T, T]` temporal fusion matrix.
    pub w: Tensor,
    pub mode: TaidMode,
}

impl TaidParams {
    /// Identity init.
    pub fn new(time_steps: usize, mode: TaidMode) -> Self {
        let w = Tensor::from_fn(&[time_steps, time_steps], |i| if i / time_steps == i % time_steps { 1.0 } else { 0.0 });
        TaidParams { w, mode }
    }

    pub fn time_steps(&self) -> usize {
        self.w.shape()[0]
    }

    fn check(&self, t: usize) -> Result<()> {
        if self.w.shape() != [t, t] {
            return Err(Error::shape(self.w.shape(), &[t, t]));
        }
        Ok(())
    }
}

fn check_spikes(s: &Tensor) -> Result<(usize, usize)> {
    let t = s.shape().first().copied().unwrap_or(0);
    if t == 0 || s.ndim() < 2 || s.is_empty() {
        return Err(Error::InvalidShape {
            shape: s.shape().to_vec(),
            reason: "spike tensor needs a time axis and non-empty features".into(),
        });
    }
    Ok((t, s.len() / t))
}

/// `X_t`: mean of every entry of `S[t]`.
pub fn squeeze(s: &Tensor) -> Result<Tensor> {
    let (t, n) = check_spikes(s)?;
    let x = s.data().chunks(n).map(|c| c.iter().sum::<f64>() / n as f64).collect();
    Tensor::new(vec![t], x)
}

/// `F = sigmoid(W X)` (or its elementwise / disabled variants).
pub fn fuse(x: &Tensor, p: &TaidParams) -> Result<Tensor> {
    let t = x.len();
    p.check(t)?;
    let w = p.w.data();
    let f = (0..t)
        .map(|i| match p.mode {
            TaidMode::Matrix => sigmoid((0..t).map(|j| w[i * t + j] * x.data()[j]).sum()),
            TaidMode::Elementwise => sigmoid(w[i * t + i] * x.data()[i]),
            TaidMode::Off => 1.0,
        })
        .collect();
    Tensor::new(vec![t], f)
}

fn weighted_mean(s: &[f64], f: &[f64], n: usize, out: &mut [f64]) {
    out.fill(0.0);
    for (st, &ft) in s.chunks(n).zip(f) {
        for (o, &v) in out.iter_mut().zip(st) {
            *o += ft * v;
        }
    }
    let t = f.len() as f64;
    out.iter_mut().for_each(|v| *v /= t);
}

/// `clamp((1/T) sum_t F_t S_t, 0, 1)` over the non-time shape of `S`.
pub fn decode(s: &Tensor, f: &Tensor) -> Result<Tensor> {
    let (t, n) = check_spikes(s)?;
    f.expect_shape(&[t])?;
    let mut out = vec![0.0; n];
    weighted_mean(s.data(), f.data(), n, &mut out);
    out.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Tensor::new(s.shape()[1..].to_vec(), out)
}

/// Unweighted temporal mean `(1/T) sum_t S_t`.
pub fn temporal_mean(s: &Tensor) -> Result<Tensor> {
    let (t, n) = check_spikes(s)?;
    let mut out = vec![0.0; n];
    for st in s.data().chunks(n) {
        for (o, &v) in out.iter_mut().zip(st) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= t as f64);
    Tensor::new(s.shape()[1..].to_vec(), out)
}

/// Forward intermediates of a batched decode.
#[derive(Debug, Clone)]
pub struct TaidTape {
    /// `[B, T]`
    pub x: Vec<f64>,
    /// `[B, T]`
    pub f: Vec<f64>,
    /// Pre-clamp image, `[B, N]`.
    pre: Vec<f64>,
}

/// Decode a batch `S[T, B, ...]` into images `[B, ...]`.
pub fn taid_forward(s: &Tensor, p: &TaidParams) -> Result<(Tensor, TaidTape)> {
    if s.ndim() < 3 {
        return Err(Error::InvalidShape {
            shape: s.shape().to_vec(),
            reason: "batched spike tensor must be [T, B, ...]".into(),
        });
    }
    let (t, b) = (s.shape()[0], s.shape()[1]);
    p.check(t)?;
    let n = s.len() / (t * b).max(1);
    let mut xs = Vec::with_capacity(b * t);
    let mut fs = Vec::with_capacity(b * t);
    let mut pre = vec![0.0; b * n];
    let mut sample = vec![0.0; t * n];
    for bi in 0..b {
        gather(s.data(), t, b, n, bi, &mut sample);
        let st = Tensor::new(vec![t, n], sample.clone())?;
        let x = squeeze(&st)?;
        let f = fuse(&x, p)?;
        weighted_mean(&sample, f.data(), n, &mut pre[bi * n..(bi + 1) * n]);
        xs.extend_from_slice(x.data());
        fs.extend_from_slice(f.data());
    }
    let img = pre.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Ok((Tensor::new(s.shape()[1..].to_vec(), img)?, TaidTape { x: xs, f: fs, pre }))
}

fn gather(s: &[f64], t: usize, b: usize, n: usize, bi: usize, out: &mut [f64]) {
    for ti in 0..t {
        let src = (ti * b + bi) * n;
        out[ti * n..(ti + 1) * n].copy_from_slice(&s[src..src + n]);
    }
}

/// Reverse of [`taid_forward`]: returns `(dL/dS, dL/dW)`.
///
/// The clamp passes gradient wherever the pre-clamp value lies in `[0, 1]`.
/// For spikes in `[0, 1]` and `F` in `(0, 1]` that is every pixel, including
/// pixels that never fired.
pub fn taid_backward(s: &Tensor, tape: &TaidTape, p: &TaidParams, d_img: &Tensor) -> Result<(Tensor, Tensor)> {
    let (t, b) = (s.shape()[0], s.shape()[1]);
    let n = s.len() / (t * b).max(1);
    if d_img.len() != b * n {
        return Err(Error::shape(d_img.shape(), &s.shape()[1..]));
    }
    let w = p.w.data();
    let inv_t = 1.0 / t as f64;
    let inv_n = 1.0 / n as f64;
    let mut ds = Tensor::zeros(s.shape());
    let mut dw = Tensor::zeros(p.w.shape());
    let mut g = vec![0.0; n];
    let mut dz = vec![0.0; t];
    let mut dx = vec![0.0; t];
    for bi in 0..b {
        for (k, gk) in g.iter_mut().enumerate() {
            let pre = tape.pre[bi * n + k];
            *gk = if (0.0..=1.0).contains(&pre) { d_img.data()[bi * n + k] } else { 0.0 };
        }
        let f = &tape.f[bi * t..(bi + 1) * t];
        let x = &tape.x[bi * t..(bi + 1) * t];
        for ti in 0..t {
            let st = &s.data()[(ti * b + bi) * n..(ti * b + bi + 1) * n];
            let df: f64 = st.iter().zip(&g).map(|(a, c)| a * c).sum::<f64>() * inv_t;
            dz[ti] = df * f[ti] * (1.0 - f[ti]);
        }
        dx.fill(0.0);
        match p.mode {
            TaidMode::Matrix => {
                for i in 0..t {
                    for j in 0..t {
                        dw.data_mut()[i * t + j] += dz[i] * x[j];
                        dx[j] += w[i * t + j] * dz[i];
                    }
                }
            }
            TaidMode::Elementwise => {
                for i in 0..t {
                    dw.data_mut()[i * t + i] += dz[i] * x[i];
                    dx[i] = w[i * t + i] * dz[i];
                }
            }
            TaidMode::Off => {}
        }
        for ti in 0..t {
            let base = (ti * b + bi) * n;
            let direct = f[ti] * inv_t;
            let spread = dx[ti] * inv_n;
            for (k, d) in ds.data_mut()[base..base + n].iter_mut().enumerate() {
                *d = direct * g[k] + spread;
            }
        }
    }
    Ok((ds, dw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn squeeze_examples() {
        let s = t(&[2, 1, 1, 2], &[1.0, 0.0, 1.0, 1.0]);
        assert_eq!(squeeze(&s).unwrap().data(), &[0.5, 1.0]);
        assert_eq!(squeeze(&Tensor::full(&[3, 2, 2, 2], 1.0)).unwrap().data(), &[1.0; 3]);
        assert_eq!(squeeze(&Tensor::zeros(&[3, 1, 2, 2])).unwrap().data(), &[0.0; 3]);
        assert!(squeeze(&Tensor::zeros(&[3, 1, 0, 2])).is_err());
    }

    #[test]
    fn fuse_examples() {
        let x = t(&[3], &[0.1, 0.7, 0.3]);
        let zero = TaidParams { w: Tensor::zeros(&[3, 3]), mode: TaidMode::Matrix };
        assert_eq!(fuse(&x, &zero).unwrap().data(), &[0.5; 3]);
        let id = TaidParams::new(3, TaidMode::Matrix);
        let f = fuse(&Tensor::full(&[3], 3f64.ln()), &id).unwrap();
        assert!(f.data().iter().all(|v| (v - 0.75).abs() < 1e-15));
        assert_eq!(fuse(&Tensor::zeros(&[3]), &id).unwrap().data(), &[0.5; 3]);
        assert!(fuse(&Tensor::zeros(&[2]), &id).is_err());
    }

    #[test]
    fn decode_identities() {
        let mut rng = Rng::new(3);
        let s = Tensor::from_fn(&[5, 2, 3, 3], |_| if rng.next_f64() < 0.4 { 1.0 } else { 0.0 });
        let plain = temporal_mean(&s).unwrap();
        assert_eq!(decode(&s, &Tensor::full(&[5], 1.0)).unwrap(), plain);
        let f = fuse(&squeeze(&s).unwrap(), &TaidParams { w: Tensor::zeros(&[5, 5]), mode: TaidMode::Matrix }).unwrap();
        assert_eq!(decode(&s, &f).unwrap(), plain.scale(0.5));
        let ones = Tensor::full(&[4, 1, 2, 2], 1.0);
        let f = t(&[4], &[0.1, 0.2, 0.3, 0.6]);
        assert!(decode(&ones, &f).unwrap().data().iter().all(|v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn range_holds_for_extreme_weights() {
        let mut rng = Rng::new(5);
        let s = Tensor::from_fn(&[4, 3, 1, 2, 2], |_| (rng.next_f64() < 0.5) as u8 as f64);
        let p = TaidParams {
            w: Tensor::from_fn(&[4, 4], |_| rng.uniform(-50.0, 50.0)),
            mode: TaidMode::Matrix,
        };
        let (img, _) = taid_forward(&s, &p).unwrap();
        assert_eq!(img.shape(), &[3, 1, 2, 2]);
        assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn permutation_equivariance() {
        let mut rng = Rng::new(11);
        let tt = 4;
        let s = Tensor::from_fn(&[tt, 2, 3, 3], |_| (rng.next_f64() < 0.5) as u8 as f64);
        let w = Tensor::from_fn(&[tt, tt], |_| rng.uniform(-2.0, 2.0));
        let perm = [2usize, 0, 3, 1];
        let n = s.len() / tt;
        let mut sp = Tensor::zeros(s.shape());
        for (new, &old) in perm.iter().enumerate() {
            sp.data_mut()[new * n..(new + 1) * n].copy_from_slice(&s.data()[old * n..(old + 1) * n]);
        }
        let wp = Tensor::from_fn(&[tt, tt], |k| w.data()[perm[k / tt] * tt + perm[k % tt]]);
        let p = TaidParams { w, mode: TaidMode::Matrix };
        let pp = TaidParams { w: wp, mode: TaidMode::Matrix };
        let f = fuse(&squeeze(&s).unwrap(), &p).unwrap();
        let fp = fuse(&squeeze(&sp).unwrap(), &pp).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            assert!((fp.data()[new] - f.data()[old]).abs() < 1e-15);
        }
        assert!(decode(&s, &f).unwrap().max_abs_diff(&decode(&sp, &fp).unwrap()) < 1e-15);
    }

    fn batched_loss(s: &Tensor, p: &TaidParams, coef: &Tensor) -> f64 {
        let (img, _) = taid_forward(s, p).unwrap();
        img.data().iter().zip(coef.data()).map(|(a, c)| a * c).sum()
    }

    fn fd_check(mode: TaidMode, w: Tensor, seed: u64) {
        let mut rng = Rng::new(seed);
        let tt = w.shape()[0];
        // interior spike values keep every pre-clamp pixel away from 0 and 1
        let s = Tensor::from_fn(&[tt, 2, 1, 1, 2], |_| rng.uniform(0.1, 0.9));
        let p = TaidParams { w, mode };
        let coef = Tensor::from_fn(&[2, 1, 1, 2], |_| rng.uniform(-1.0, 1.0));
        let (_, tape) = taid_forward(&s, &p).unwrap();
        let (ds, dw) = taid_backward(&s, &tape, &p, &coef).unwrap();
        let h = 1e-5;
        let rel = |a: f64, fd: f64| (a - fd).abs() / fd.abs().max(1e-6);
        for i in 0..p.w.len() {
            let (mut pp, mut pm) = (p.clone(), p.clone());
            pp.w.data_mut()[i] += h;
            pm.w.data_mut()[i] -= h;
            let fd = (batched_loss(&s, &pp, &coef) - batched_loss(&s, &pm, &coef)) / (2.0 * h);
            assert!(rel(dw.data()[i], fd) < 1e-6, "dW[{i}] {} vs {fd}", dw.data()[i]);
        }
        for i in 0..s.len() {
            let (mut sp, mut sm) = (s.clone(), s.clone());
            sp.data_mut()[i] += h;
            sm.data_mut()[i] -= h;
            let fd = (batched_loss(&sp, &p, &coef) - batched_loss(&sm, &p, &coef)) / (2.0 * h);
            assert!(rel(ds.data()[i], fd) < 1e-6, "dS[{i}] {} vs {fd}", ds.data()[i]);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Rng::new(1);
        fd_check(TaidMode::Matrix, Tensor::from_fn(&[2, 2], |_| rng.uniform(-2.0, 2.0)), 2);
        fd_check(TaidMode::Matrix, Tensor::zeros(&[3, 3]), 3);
        fd_check(TaidMode::Elementwise, Tensor::from_fn(&[3, 3], |_| rng.uniform(-2.0, 2.0)), 4);
        fd_check(TaidMode::Off, Tensor::from_fn(&[3, 3], |_| rng.uniform(-2.0, 2.0)), 5);
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let s = Tensor::full(&[2, 1, 1, 2], 1.0);
        let p = TaidParams::new(2, TaidMode::Matrix);
        let (_, tape) = taid_forward(&s, &p).unwrap();
        let (ds, dw) = taid_backward(&s, &tape, &p, &Tensor::zeros(&[1, 1, 2])).unwrap();
        assert!(ds.data().iter().chain(dw.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn zero_w_direct_path_is_half_over_t() {
        // With W = 0 the fusion path still carries dF; the direct path is 0.5/T.
        let s = t(&[2, 1, 1, 2], &[1.0, 0.0, 1.0, 1.0]);
        let p = TaidParams { w: Tensor::zeros(&[2, 2]), mode: TaidMode::Matrix };
        let (_, tape) = taid_forward(&s, &p).unwrap();
        let d_img = t(&[1, 2], &[1.0, -2.0]);
        let (ds, _) = taid_backward(&s, &tape, &p, &d_img).unwrap();
        // dX = W^T dz = 0, so only 0.5/T * d_img remains
        assert_eq!(ds.data(), &[0.25, -0.5, 0.25, -0.5]);
    }
}
