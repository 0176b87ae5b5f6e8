use alif_snn::commands::load_datasets;
use alif_snn::config::{RunConfig, Task};
use alif_snn::data::{data_root, write_image};
use alif_snn::numerics::{Rng, Tensor};
use alif_snn::svae::train_vae;

// A few VAE steps on 200 MNIST images, then prior samples as PGM files.
fn main() -> alif_snn::Result<()> {
    let mut cfg = RunConfig::defaults(Task::Vae);
    cfg.model.time_steps = 4;
    cfg.data.subset_n = Some(200);
    cfg.data.test_n = Some(10);
    let (train, _) = load_datasets(&cfg, &data_root())?;
    let mut trainer = cfg.vae_trainer()?;
    train_vae(&mut trainer, &train, 50, 10, |step, t| {
        println!("step {step}: loss {:.4} (recon {:.4}, kl {:.4})", t.loss, t.recon_loss, t.kl);
        Ok(())
    })?;
    let samples = trainer.model.generate(4, &mut Rng::new(3))?;
    let dir = std::env::temp_dir();
    for i in 0..4 {
        let img = Tensor::new(vec![1, 28, 28], samples.data()[i * 784..(i + 1) * 784].to_vec())?;
        let path = dir.join(format!("alif_snn_sample_{i}.pgm"));
        write_image(&img, &path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
