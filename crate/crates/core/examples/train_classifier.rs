use alif_snn::classifier::train_classifier;
use alif_snn::commands::load_datasets;
use alif_snn::config::{RunConfig, Task};
use alif_snn::data::data_root;

// One quick epoch of the desk-scale network on 2k MNIST images.
fn main() -> alif_snn::Result<()> {
    let mut cfg = RunConfig::defaults(Task::Classify);
    cfg.seed = 42;
    cfg.model.time_steps = 4;
    cfg.model.a = 5.0;
    cfg.data.subset_n = Some(2000);
    cfg.data.test_n = Some(500);
    let (train, test) = load_datasets(&cfg, &data_root())?;
    let mut trainer = cfg.classifier_trainer()?;
    println!("{} parameters", trainer.model.net.param_count());
    train_classifier(&mut trainer, &train, &test, 1, |rec, _| {
        println!("{rec}");
        Ok(())
    })?;
    let (x, labels) = test.batch(&[0, 1, 2, 3, 4, 5, 6, 7]);
    let out = trainer.model.predict(&x)?;
    println!("labels      {labels:?}\npredictions {:?}", out.predictions);
    Ok(())
}
