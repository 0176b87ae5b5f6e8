use alif_snn::commands::load_datasets;
use alif_snn::config::{RunConfig, Task};
use alif_snn::data::data_root;
use alif_snn::metrics::{fad_pipeline, fit_gaussian, frechet_distance, FadConfig};
use alif_snn::numerics::{Rng, Tensor};

fn main() -> alif_snn::Result<()> {
    let mut rng = Rng::new(0);
    let a = Tensor::from_fn(&[2000, 2], |_| rng.normal());
    let b = Tensor::from_fn(&[2000, 2], |i| rng.normal() + if i % 2 == 0 { 1.0 } else { 0.0 });
    let d = frechet_distance(&fit_gaussian(&a)?, &fit_gaussian(&b)?)?;
    println!("N(0, I) vs N((1, 0), I): squared Frechet distance {d:.4} (exact 1)");

    // needs MNIST under $SNN_DATA_DIR
    let mut cfg = RunConfig::defaults(Task::Vae);
    cfg.data.subset_n = Some(10);
    cfg.data.test_n = Some(256);
    let (_, test) = load_datasets(&cfg, &data_root())?;
    let (real, _) = test.batch(&(0..128).collect::<Vec<_>>());
    let (other, _) = test.batch(&(128..256).collect::<Vec<_>>());
    let noise = Tensor::from_fn(real.shape(), |_| rng.next_f64());
    let fc = FadConfig { epochs: 5, ..FadConfig::default() };
    println!("FAD real vs held-out real: {:.3}", fad_pipeline(&real, &other, &fc, &mut Rng::new(1))?);
    println!("FAD real vs uniform noise: {:.3}", fad_pipeline(&real, &noise, &fc, &mut Rng::new(1))?);
    Ok(())
}
