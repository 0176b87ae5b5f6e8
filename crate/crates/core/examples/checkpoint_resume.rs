use alif_snn::checkpoint::{Checkpoint, Trainer};
use alif_snn::config::{RunConfig, Task};
use alif_snn::numerics::{Rng, Tensor};

// Save after one step, reload, and check the next step matches the original.
fn main() -> alif_snn::Result<()> {
    let mut cfg = RunConfig::defaults(Task::Classify);
    cfg.model.arch = "c4k3s2-BN-ALIF-FC20-ALIF-APk2s2".into();
    cfg.model.time_steps = 2;
    let mut rng = Rng::new(5);
    let x = Tensor::from_fn(&[8, 1, 28, 28], |_| rng.next_f64());
    let labels: Vec<usize> = (0..8).collect();

    let mut trainer = cfg.classifier_trainer()?;
    trainer.step(&x, &labels)?;
    let path = std::env::temp_dir().join("alif_snn_example.ckpt");
    Checkpoint::new(cfg.clone(), Trainer::Classifier(trainer.clone())).save(&path)?;
    println!("saved {} ({} bytes)", path.display(), std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0));

    let Trainer::Classifier(mut resumed) = Checkpoint::load(&path)?.trainer else {
        unreachable!("saved a classifier");
    };
    let a = trainer.step(&x, &labels)?;
    let b = resumed.step(&x, &labels)?;
    println!("next-step loss: original {a}, resumed {b}, identical: {}", a.to_bits() == b.to_bits());
    Ok(())
}
