//! Adaptive leaky integrate-and-fire neuron.
//!
//! Discrete dynamics per neuron, with hard reset through the `(1 - o)` gate:
//!
//! ```text
//! u[t+1] = tau * u[t] * (1 - o[t]) + x[t+1]
//! o[t+1] = H(u[t+1] - v_th)            H(0) = 1
//! ```
//!
//! The Heaviside step is differentiated with a rectangular surrogate of
//! width `a`: `do/du = 1/a` when `|u - v_th| < a/2`, else 0. Both `tau` and
//! `v_th` are per-layer scalars that can be learned.
//!
//! The relaxed twin replaces `H` with `clamp((u - v_th)/a + 1/2, 0, 1)`,
//! whose derivative is exactly the surrogate, and feeds that soft value into
//! the reset gate. It exists so finite differences can validate the
//! hand-written reverse pass.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const TAU_MIN: f64 = 0.01;
pub const TAU_MAX: f64 = 1.0;
pub const VTH_MIN: f64 = 0.01;
pub const VTH_MAX: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpikeMode {
    /// Binary spikes; reverse pass follows the surrogate chain rule with the
    /// reset gate treated as a constant.
    #[default]
    Hard,
    /// Clamp-relaxed spikes; reverse pass is the exact derivative,
    /// including the path through the reset gate.
    Relaxed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlifParams {
    pub tau: f64,
    pub v_th: f64,
    /// Surrogate window width, fixed during training.
    pub a: f64,
    pub tau_learnable: bool,
    pub vth_learnable: bool,
}

impl Default for AlifParams {
    fn default() -> Self {
        AlifParams {
            tau: 0.25,
            v_th: 0.2,
            a: 1.0,
            tau_learnable: true,
            vth_learnable: true,
        }
    }
}

impl AlifParams {
    pub fn new(tau: f64, v_th: f64, learnable: bool) -> Self {
        AlifParams {
            tau,
            v_th,
            tau_learnable: learnable,
            vth_learnable: learnable,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(Error::InvalidArgument(format!("surrogate width a = {} must be > 0", self.a)));
        }
        if !(TAU_MIN..=TAU_MAX).contains(&self.tau) {
            return Err(Error::InvalidArgument(format!("tau = {} outside [{TAU_MIN}, {TAU_MAX}]", self.tau)));
        }
        if !(VTH_MIN..=VTH_MAX).contains(&self.v_th) {
            return Err(Error::InvalidArgument(format!("v_th = {} outside [{VTH_MIN}, {VTH_MAX}]", self.v_th)));
        }
        Ok(())
    }

    /// Clamp `tau` and `v_th` back into their admissible ranges.
    pub fn project(&mut self) {
        self.tau = self.tau.clamp(TAU_MIN, TAU_MAX);
        self.v_th = self.v_th.clamp(VTH_MIN, VTH_MAX);
    }

    #[inline]
    pub fn surrogate(&self, u: f64) -> f64 {
        if (u - self.v_th).abs() < 0.5 * self.a {
            1.0 / self.a
        } else {
            0.0
        }
    }

    #[inline]
    pub fn spike(&self, u: f64, mode: SpikeMode) -> f64 {
        match mode {
            SpikeMode::Hard => {
                if u >= self.v_th {
                    1.0
                } else {
                    0.0
                }
            }
            SpikeMode::Relaxed => ((u - self.v_th) / self.a + 0.5).clamp(0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuronState {
    pub u: Tensor,
    pub o: Tensor,
}

impl NeuronState {
    pub fn zeros(shape: &[usize]) -> Self {
        NeuronState {
            u: Tensor::zeros(shape),
            o: Tensor::zeros(shape),
        }
    }
}

/// What the reverse pass needs from one forward step.
#[derive(Debug, Clone, PartialEq)]
pub struct AlifStepRecord {
    /// Membrane after the update, before the spike decision.
    pub u_pre: Tensor,
    pub u_prev: Tensor,
    pub o_prev: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlifStepGrads {
    pub dx: Tensor,
    pub du_prev: Tensor,
    /// Gradient reaching the previous step's spikes through the reset gate;
    /// all zeros in hard mode.
    pub do_prev: Tensor,
    pub dtau: f64,
    pub dvth: f64,
}

/// Binary-spiking forward step.
pub fn alif_step(state: &NeuronState, x: &Tensor, p: &AlifParams) -> Result<(NeuronState, Tensor, AlifStepRecord)> {
    step_with_mode(state, x, p, SpikeMode::Hard)
}

/// Differentiable twin of [`alif_step`]; spikes are soft values in `[0, 1]`.
pub fn relaxed_alif_step(
    state: &NeuronState,
    x: &Tensor,
    p: &AlifParams,
) -> Result<(NeuronState, Tensor, AlifStepRecord)> {
    step_with_mode(state, x, p, SpikeMode::Relaxed)
}

pub fn step_with_mode(
    state: &NeuronState,
    x: &Tensor,
    p: &AlifParams,
    mode: SpikeMode,
) -> Result<(NeuronState, Tensor, AlifStepRecord)> {
    state.u.expect_shape(state.o.shape())?;
    state.u.expect_shape(x.shape())?;
    x.check_finite("neuron input")?;
    let mut u_pre = Tensor::zeros(x.shape());
    let mut spikes = Tensor::zeros(x.shape());
    step_slices(
        state.u.data(),
        state.o.data(),
        x.data(),
        u_pre.data_mut(),
        spikes.data_mut(),
        p,
        mode,
    );
    let record = AlifStepRecord {
        u_pre: u_pre.clone(),
        u_prev: state.u.clone(),
        o_prev: state.o.clone(),
    };
    let next = NeuronState {
        u: u_pre,
        o: spikes.clone(),
    };
    Ok((next, spikes, record))
}

#[inline]
pub(crate) fn step_slices(
    u_prev: &[f64],
    o_prev: &[f64],
    x: &[f64],
    u_out: &mut [f64],
    o_out: &mut [f64],
    p: &AlifParams,
    mode: SpikeMode,
) {
    for i in 0..x.len() {
        let u = p.tau * u_prev[i] * (1.0 - o_prev[i]) + x[i];
        u_out[i] = u;
        o_out[i] = p.spike(u, mode);
    }
}

pub fn surrogate_grad(u_pre: &Tensor, p: &AlifParams) -> Tensor {
    u_pre.map(|u| p.surrogate(u))
}

/// Reverse of one step.
///
/// With `g = dL_do * surrogate(u_pre) + dL_du_next`:
/// `dx = g`, `du_prev = g * tau * (1 - o_prev)`,
/// `dtau = sum(g * u_prev * (1 - o_prev))`, `dvth = -sum(dL_do * surrogate)`.
/// In relaxed mode the reset-gate path `do_prev = -g * tau * u_prev` is also
/// returned; the caller adds it to the previous step's `dL_do`.
pub fn alif_backward_step(
    record: &AlifStepRecord,
    dl_do: &Tensor,
    dl_du_next: &Tensor,
    p: &AlifParams,
    mode: SpikeMode,
) -> Result<AlifStepGrads> {
    let shape = record.u_pre.shape();
    for t in [&record.u_prev, &record.o_prev, dl_do, dl_du_next] {
        t.expect_shape(shape)?;
    }
    let n = record.u_pre.len();
    let mut dx = Tensor::zeros(shape);
    let mut du_prev = Tensor::zeros(shape);
    let mut do_prev = Tensor::zeros(shape);
    let (dtau, dvth) = backward_slices(
        record.u_pre.data(),
        record.u_prev.data(),
        record.o_prev.data(),
        dl_do.data(),
        dl_du_next.data(),
        p,
        mode,
        BackwardOut {
            dx: &mut dx.data_mut()[..n],
            du_prev: du_prev.data_mut(),
            do_prev: do_prev.data_mut(),
        },
    );
    Ok(AlifStepGrads {
        dx,
        du_prev,
        do_prev,
        dtau,
        dvth,
    })
}

pub(crate) struct BackwardOut<'a> {
    pub dx: &'a mut [f64],
    pub du_prev: &'a mut [f64],
    pub do_prev: &'a mut [f64],
}

#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn backward_slices(
    u_pre: &[f64],
    u_prev: &[f64],
    o_prev: &[f64],
    dl_do: &[f64],
    dl_du_next: &[f64],
    p: &AlifParams,
    mode: SpikeMode,
    out: BackwardOut<'_>,
) -> (f64, f64) {
    let mut dtau = 0.0;
    let mut dvth = 0.0;
    let relaxed = mode == SpikeMode::Relaxed;
    for i in 0..u_pre.len() {
        let s = p.surrogate(u_pre[i]);
        let g = dl_do[i] * s + dl_du_next[i];
        let gate = 1.0 - o_prev[i];
        out.dx[i] = g;
        out.du_prev[i] = g * p.tau * gate;
        out.do_prev[i] = if relaxed { -g * p.tau * u_prev[i] } else { 0.0 };
        dtau += g * u_prev[i] * gate;
        dvth -= dl_do[i] * s;
    }
    (dtau, dvth)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t1(v: f64) -> Tensor {
        Tensor::scalar(v)
    }

    fn params(tau: f64, v_th: f64) -> AlifParams {
        AlifParams::new(tau, v_th, true)
    }

    #[test]
    fn step_fires_above_threshold() {
        let st = NeuronState { u: t1(0.4), o: t1(0.0) };
        let (next, spk, _) = alif_step(&st, &t1(0.1), &params(0.5, 0.2)).unwrap();
        assert!((next.u.data()[0] - 0.3).abs() < 1e-15);
        assert_eq!(spk.data()[0], 1.0);
    }

    #[test]
    fn previous_spike_resets_to_input() {
        for &(tau, u) in &[(0.1, 5.0), (0.9, -3.0), (1.0, 0.19)] {
            let st = NeuronState { u: t1(u), o: t1(1.0) };
            let (next, _, _) = alif_step(&st, &t1(0.123), &params(tau, 0.2)).unwrap();
            assert_eq!(next.u.data()[0], 0.123);
        }
    }

    #[test]
    fn fires_at_exact_threshold() {
        let st = NeuronState { u: t1(0.0), o: t1(0.0) };
        let (_, spk, _) = alif_step(&st, &t1(0.2), &params(0.5, 0.2)).unwrap();
        assert_eq!(spk.data()[0], 1.0);
    }

    #[test]
    fn surrogate_window() {
        let p = params(0.5, 0.25);
        // window is open: |u - v_th| == a/2 gets no gradient
        let u = Tensor::new(vec![4], vec![0.25, 0.8, 0.75, -0.25]).unwrap();
        assert_eq!(surrogate_grad(&u, &p).data(), &[1.0, 0.0, 0.0, 0.0]);
        let p2 = AlifParams { a: 0.5, ..p };
        assert_eq!(p2.surrogate(0.25), 2.0);
        assert_eq!(p2.surrogate(0.5), 0.0);
    }

    #[test]
    fn relaxed_step_values() {
        let p = params(0.5, 0.2);
        let st = NeuronState { u: t1(0.0), o: t1(0.0) };
        let (_, soft, _) = relaxed_alif_step(&st, &t1(0.3), &p).unwrap();
        assert!((soft.data()[0] - 0.6).abs() < 1e-15);
        let (_, soft, _) = relaxed_alif_step(&st, &t1(0.7), &p).unwrap();
        assert_eq!(soft.data()[0], 1.0);
        let (_, soft, _) = relaxed_alif_step(&st, &t1(-0.3), &p).unwrap();
        assert_eq!(soft.data()[0], 0.0);
    }

    #[test]
    fn step_rejects_bad_input() {
        let st = NeuronState::zeros(&[2]);
        assert!(alif_step(&st, &Tensor::zeros(&[3]), &params(0.5, 0.2)).is_err());
        let bad = Tensor::new(vec![2], vec![0.0, f64::INFINITY]).unwrap();
        assert!(matches!(alif_step(&st, &bad, &params(0.5, 0.2)), Err(Error::NonFinite(_))));
    }

    #[test]
    fn backward_zero_upstream() {
        let p = params(0.5, 0.2);
        let st = NeuronState { u: t1(0.3), o: t1(0.0) };
        let (_, _, rec) = alif_step(&st, &t1(0.1), &p).unwrap();
        let g = alif_backward_step(&rec, &t1(0.0), &t1(0.0), &p, SpikeMode::Hard).unwrap();
        assert_eq!(g.dx.data()[0], 0.0);
        assert_eq!(g.du_prev.data()[0], 0.0);
        assert_eq!(g.dtau, 0.0);
        assert_eq!(g.dvth, 0.0);
    }

    /// L = u2 for the two-step toy chain, by the recursive reverse pass.
    fn toy_grads(tau: f64, v_th: f64, mode: SpikeMode) -> (f64, f64, f64) {
        let p = params(tau, v_th);
        let s0 = NeuronState::zeros(&[1]);
        let (s1, _, r1) = step_with_mode(&s0, &t1(0.3), &p, mode).unwrap();
        let (s2, _, r2) = step_with_mode(&s1, &t1(0.1), &p, mode).unwrap();
        let g2 = alif_backward_step(&r2, &t1(0.0), &t1(1.0), &p, mode).unwrap();
        let g1 = alif_backward_step(&r1, &g2.do_prev, &g2.du_prev, &p, mode).unwrap();
        (s2.u.data()[0], g1.dtau + g2.dtau, g1.dvth + g2.dvth)
    }

    fn toy_forward(tau: f64, v_th: f64) -> f64 {
        let p = params(tau, v_th);
        let s0 = NeuronState::zeros(&[1]);
        let (s1, _, _) = relaxed_alif_step(&s0, &t1(0.3), &p).unwrap();
        let (s2, _, _) = relaxed_alif_step(&s1, &t1(0.1), &p).unwrap();
        s2.u.data()[0]
    }

    #[test]
    fn toy_chain_matches_finite_differences() {
        let (u2, dtau, dvth) = toy_grads(0.5, 0.2, SpikeMode::Relaxed);
        assert!((u2 - 0.16).abs() < 1e-15);
        let h = 1e-6;
        let fd_tau = (toy_forward(0.5 + h, 0.2) - toy_forward(0.5 - h, 0.2)) / (2.0 * h);
        let fd_vth = (toy_forward(0.5, 0.2 + h) - toy_forward(0.5, 0.2 - h)) / (2.0 * h);
        // u2 = tau*u1*(1 - s1) + x2 with u1 = 0.3, s1 = 0.6 → d/dtau = 0.12,
        // d/dvth = tau*u1 = 0.15.
        assert!((fd_tau - 0.12).abs() < 1e-9);
        assert!((fd_vth - 0.15).abs() < 1e-9);
        assert!((dtau - fd_tau).abs() / fd_tau.abs() < 1e-6);
        assert!((dvth - fd_vth).abs() / fd_vth.abs() < 1e-6);
    }

    #[test]
    fn hard_reset_severs_recurrence() {
        let p = params(0.5, 0.2);
        let s0 = NeuronState::zeros(&[1]);
        let (s1, o1, r1) = alif_step(&s0, &t1(0.3), &p).unwrap();
        assert_eq!(o1.data()[0], 1.0);
        let (s2, _, r2) = alif_step(&s1, &t1(0.1), &p).unwrap();
        assert_eq!(s2.u.data()[0], 0.1);
        let g2 = alif_backward_step(&r2, &t1(0.0), &t1(1.0), &p, SpikeMode::Hard).unwrap();
        assert_eq!(g2.du_prev.data()[0], 0.0);
        let _ = r1;
    }

    #[test]
    fn projection_clamps() {
        let mut p = AlifParams { tau: 1.7, v_th: -0.3, ..Default::default() };
        p.project();
        assert_eq!((p.tau, p.v_th), (TAU_MAX, VTH_MIN));
        p.tau = 0.0;
        p.v_th = 9.0;
        p.project();
        assert_eq!((p.tau, p.v_th), (TAU_MIN, VTH_MAX));
        assert!(p.validate().is_ok());
        assert!(AlifParams { a: 0.0, ..p }.validate().is_err());
    }
}
