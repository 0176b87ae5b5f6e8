use alif_snn::numerics::{Rng, Tensor};
use alif_snn::taid::{squeeze, taid_backward, taid_forward, temporal_mean, TaidMode, TaidParams};

fn main() -> alif_snn::Result<()> {
    let t = 4;
    let mut rng = Rng::new(1);
    // later time steps fire more often
    let s = Tensor::from_fn(&[t, 1, 4, 4], |i| if rng.next_f64() < 0.2 + 0.2 * (i / 16) as f64 { 1.0 } else { 0.0 });
    println!("per-step firing rates X = {:?}", squeeze(&s)?.data());
    let mean = temporal_mean(&s)?;
    for mode in [TaidMode::Off, TaidMode::Elementwise, TaidMode::Matrix] {
        let mut p = TaidParams::new(t, mode);
        p.w = Tensor::from_fn(&[t, t], |i| if i / t == i % t { 2.0 } else { -0.5 });
        let (img, tape) = taid_forward(&s, &p)?;
        let (_, dw) = taid_backward(&s, &tape, &p, &Tensor::full(img.shape(), 1.0))?;
        println!(
            "{mode:?}: mean pixel {:.4} (plain mean {:.4}), dL/dW[0,0] = {:.4}",
            img.mean(),
            mean.mean(),
            dw.data()[0]
        );
    }
    Ok(())
}
