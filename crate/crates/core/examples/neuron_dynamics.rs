use alif_snn::neuron::{alif_step, relaxed_alif_step, AlifParams, NeuronState};
use alif_snn::numerics::Tensor;

// Drive one neuron with a constant current and watch it charge, fire and reset.
fn main() -> alif_snn::Result<()> {
    let p = AlifParams { a: 0.4, ..AlifParams::new(0.5, 0.6, true) };
    let x = Tensor::scalar(0.35);
    let mut hard = NeuronState::zeros(&[1]);
    let mut soft = NeuronState::zeros(&[1]);
    println!("tau = {}, v_th = {}, input = 0.35", p.tau, p.v_th);
    println!("{:>2} {:>8} {:>5} {:>9} {:>8} {:>9}", "t", "u", "spike", "surrogate", "u soft", "soft spk");
    for t in 0..10 {
        let (next, spike, rec) = alif_step(&hard, &x, &p)?;
        let (next_soft, soft_spike, _) = relaxed_alif_step(&soft, &x, &p)?;
        let u = rec.u_pre.data()[0];
        println!(
            "{t:>2} {u:>8.4} {:>5} {:>9.3} {:>8.4} {:>9.4}",
            spike.data()[0],
            p.surrogate(u),
            next_soft.u.data()[0],
            soft_spike.data()[0]
        );
        hard = next;
        soft = next_soft;
    }
    Ok(())
}
