use alif_snn::commands::ablate;
use alif_snn::config::{RunConfig, Task};
use alif_snn::data::data_root;

// The six-row tau / threshold grid at a tiny budget; rows go to ./ablation_example.
fn main() -> alif_snn::Result<()> {
    let mut cfg = RunConfig::defaults(Task::Classify);
    cfg.model.time_steps = 4;
    cfg.model.a = 5.0;
    cfg.train.epochs = 1;
    cfg.data.subset_n = Some(500);
    cfg.data.test_n = Some(200);
    ablate(&cfg, &data_root(), std::path::Path::new("ablation_example"), &mut std::io::stdout())?;
    Ok(())
}
