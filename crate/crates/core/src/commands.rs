//! The operations behind the `snn` binary. Each writes its human-readable
//! output to `out` and returns a summary value.

use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::arch::parse_arch;
use crate::checkpoint::{Checkpoint, Trainer};
use crate::classifier::{ClassifierTrainer, EpochRecord};
use crate::config::{RunConfig, Task};
use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::gradcheck::{run_gradcheck, GradcheckConfig, GradcheckReport};
use crate::layers::ForwardCtx;
use crate::metrics::{FadConfig, FadEmbedder};
use crate::numerics::{Rng, Tensor};
use crate::svae::{elbo_loss, ElboTerms, VaeTrainer};

pub const METRICS_LOG: &str = "metrics.log";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
/// Images compared by the FAD evaluation.
pub const FAD_SAMPLES: usize = 512;

fn emit(out: &mut dyn Write, line: &str) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

pub fn read_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunConfig::parse(&text)
}

/// Train and test splits named by the config, reduced to the configured
/// stratified subsets.
pub fn load_datasets(cfg: &RunConfig, root: &Path) -> Result<(Dataset, Dataset)> {
    let mut train = data::load(cfg.data.dataset, root, true)?;
    let mut test = data::load(cfg.data.dataset, root, false)?;
    if let Some(n) = cfg.data.subset_n {
        train = train.subset(n, cfg.seed)?;
    }
    if let Some(n) = cfg.data.test_n {
        test = test.subset(n, cfg.seed.wrapping_add(1))?;
    }
    Ok((train, test))
}

fn open_log(path: &Path, append: bool) -> Result<fs::File> {
    OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(|e| Error::io(path, e))
}

fn log_line(log: &mut fs::File, path: &Path, line: &str) -> Result<()> {
    writeln!(log, "{line}").map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainSummary {
    Classifier { epochs: usize, last: Option<EpochRecord> },
    Vae { steps: usize, last: Option<ElboTerms> },
}

/// Train from scratch, or continue from `resume`, writing the metrics log
/// and checkpoints into `out_dir`. A resumed run appends to the log.
pub fn train(cfg: &RunConfig, root: &Path, out_dir: &Path, resume: Option<&Path>, out: &mut dyn Write) -> Result<TrainSummary> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let start = match resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            if ck.config != *cfg {
                return Err(Error::InvalidArgument(format!("{} was written with a different config", p.display())));
            }
            Some(ck.trainer)
        }
        None => None,
    };
    let (train_set, test_set) = load_datasets(cfg, root)?;
    let log_path = out_dir.join(METRICS_LOG);
    let mut log = open_log(&log_path, start.is_some())?;
    match cfg.task {
        Task::Classify => {
            let mut trainer = match start {
                Some(Trainer::Classifier(t)) => t,
                Some(_) => return Err(Error::InvalidArgument("checkpoint holds a VAE, config asks for a classifier".into())),
                None => cfg.classifier_trainer()?,
            };
            let mut last = None;
            while trainer.epoch < cfg.train.epochs {
                let rec = trainer.run_epoch(&train_set, &test_set)?;
                let line = rec.to_string();
                log_line(&mut log, &log_path, &line)?;
                emit(out, &line)?;
                if cfg.train.checkpoint_every > 0 && trainer.epoch % cfg.train.checkpoint_every == 0 {
                    save(cfg, Trainer::Classifier(trainer.clone()), &out_dir.join(format!("epoch_{:04}.ckpt", trainer.epoch)))?;
                }
                last = Some(rec);
            }
            let epochs = trainer.epoch;
            save(cfg, Trainer::Classifier(trainer), &out_dir.join(FINAL_CHECKPOINT))?;
            emit(out, &format!("done: {epochs} epochs, checkpoint {}", out_dir.join(FINAL_CHECKPOINT).display()))?;
            Ok(TrainSummary::Classifier { epochs, last })
        }
        Task::Vae => {
            let mut trainer = match start {
                Some(Trainer::Vae(t)) => t,
                Some(_) => return Err(Error::InvalidArgument("checkpoint holds a classifier, config asks for a VAE".into())),
                None => cfg.vae_trainer()?,
            };
            let per_epoch = train_set.len().div_ceil(cfg.train.batch_size).max(1);
            let total = cfg.train.max_steps.unwrap_or(cfg.train.epochs * per_epoch);
            let every = cfg.train.checkpoint_every * per_epoch;
            let mut last = None;
            while trainer.steps < total {
                let terms = trainer.train_step_on(&train_set, cfg.train.batch_size)?;
                let line = format!("step={} loss={} recon={} kl={}", trainer.steps, terms.loss, terms.recon_loss, terms.kl);
                log_line(&mut log, &log_path, &line)?;
                emit(out, &line)?;
                if every > 0 && trainer.steps % every == 0 {
                    save(cfg, Trainer::Vae(trainer.clone()), &out_dir.join(format!("step_{:06}.ckpt", trainer.steps)))?;
                }
                last = Some(terms);
            }
            let steps = trainer.steps;
            save(cfg, Trainer::Vae(trainer), &out_dir.join(FINAL_CHECKPOINT))?;
            emit(out, &format!("done: {steps} steps, checkpoint {}", out_dir.join(FINAL_CHECKPOINT).display()))?;
            Ok(TrainSummary::Vae { steps, last })
        }
    }
}

fn save(cfg: &RunConfig, trainer: Trainer, path: &Path) -> Result<()> {
    Checkpoint::new(cfg.clone(), trainer).save(path)
}

#[derive(Debug, Clone, PartialEq)]
pub enum EvalSummary {
    Classifier { accuracy: f64, n: usize },
    Vae { terms: ElboTerms, fad: f64, n: usize },
}

/// Test accuracy of a classifier, or test ELBO and reconstruction FAD of a
/// VAE (posterior means, embedder trained on the test images).
pub fn eval(checkpoint: &Path, root: &Path, out: &mut dyn Write) -> Result<EvalSummary> {
    let ck = Checkpoint::load(checkpoint)?;
    let (_, test) = load_datasets(&ck.config, root)?;
    match ck.trainer {
        Trainer::Classifier(t) => {
            let accuracy = t.model.accuracy(&test, 200)?;
            emit(out, &format!("test_acc={accuracy} n={}", test.len()))?;
            Ok(EvalSummary::Classifier { accuracy, n: test.len() })
        }
        Trainer::Vae(t) => {
            let n = test.len().min(FAD_SAMPLES);
            let (x, _) = test.batch(&(0..n).collect::<Vec<_>>());
            let (terms, fad) = vae_eval(&t, &x, ck.config.seed)?;
            emit(out, &format!("elbo_loss={} recon={} kl={} fad={fad} n={n}", terms.loss, terms.recon_loss, terms.kl))?;
            Ok(EvalSummary::Vae { terms, fad, n })
        }
    }
}

/// ELBO of posterior-mean reconstructions and their FAD against `x`.
pub fn vae_eval(t: &VaeTrainer, x: &Tensor, seed: u64) -> Result<(ElboTerms, f64)> {
    let posterior = t.model.encode(x, &ForwardCtx::eval())?;
    let recon = t.model.reconstruct(x)?;
    let terms = elbo_loss(x, &recon, &posterior, t.model.cfg.beta)?;
    let embedder = FadEmbedder::train(x, &FadConfig::default(), &mut Rng::new(seed))?;
    Ok((terms, embedder.fad(x, &recon)?))
}

/// Decode `n` prior samples into numbered image files plus `manifest.txt`.
pub fn generate(checkpoint: &Path, n: usize, seed: u64, out_dir: &Path, out: &mut dyn Write) -> Result<Vec<PathBuf>> {
    let ck = Checkpoint::load(checkpoint)?;
    let Trainer::Vae(t) = &ck.trainer else {
        return Err(Error::InvalidArgument(format!("{} is a classifier checkpoint; generate needs a VAE", checkpoint.display())));
    };
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ext = if t.model.cfg.image[0] == 1 { "pgm" } else { "ppm" };
    let width = n.saturating_sub(1).to_string().len().max(4);
    let mut manifest = format!("checkpoint = {}\nseed = {seed}\ncount = {n}\n", checkpoint.display());
    let mut paths = Vec::with_capacity(n);
    if n > 0 {
        let images = t.model.generate(n, &mut Rng::new(seed))?;
        let per: usize = t.model.cfg.image.iter().product();
        for i in 0..n {
            let img = Tensor::new(t.model.cfg.image.to_vec(), images.data()[i * per..(i + 1) * per].to_vec())?;
            let name = format!("sample_{i:0width$}.{ext}");
            let path = out_dir.join(&name);
            data::write_image(&img, &path)?;
            let _ = writeln!(manifest, "file = {name}");
            paths.push(path);
        }
    }
    let _ = write!(manifest, "\n[config]\n{}", ck.config.to_toml());
    let mpath = out_dir.join("manifest.txt");
    fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
    emit(out, &format!("wrote {n} images and {}", mpath.display()))?;
    Ok(paths)
}

/// One row of the learnability / initialization grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationRow {
    pub learnable: bool,
    pub tau: f64,
    pub vth: f64,
}

pub const ABLATION_GRID: [AblationRow; 6] = [
    AblationRow { learnable: false, tau: 0.25, vth: 0.2 },
    AblationRow { learnable: false, tau: 0.5, vth: 0.2 },
    AblationRow { learnable: false, tau: 0.5, vth: 0.5 },
    AblationRow { learnable: true, tau: 0.25, vth: 0.2 },
    AblationRow { learnable: true, tau: 0.5, vth: 0.2 },
    AblationRow { learnable: true, tau: 0.5, vth: 0.5 },
];

#[derive(Debug, Clone, PartialEq)]
pub struct AblationResult {
    pub row: AblationRow,
    pub records: Vec<EpochRecord>,
}

impl AblationResult {
    pub fn accuracy(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.test_acc)
    }
}

fn fmt_list(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", items.join(","))
}

pub fn render_ablation(results: &[AblationResult]) -> String {
    let mut s = format!("{:<9} {:>6} {:>6} {:>9}  {:<36} {}\n", "learnable", "tau0", "vth0", "accuracy", "final tau", "final vth");
    for r in results {
        let last = r.records.last();
        let _ = writeln!(
            s,
            "{:<9} {:>6} {:>6} {:>9.4}  {:<36} {}",
            if r.row.learnable { "yes" } else { "no" },
            r.row.tau,
            r.row.vth,
            r.accuracy(),
            last.map_or("-".into(), |l| fmt_list(&l.tau)),
            last.map_or("-".into(), |l| fmt_list(&l.vth)),
        );
    }
    s
}

/// Train the six grid rows with everything else taken from `cfg`. Each row
/// logs its epochs to `row{k}.log` in `out_dir`; the table goes to
/// `ablation.txt` and `out`.
pub fn ablate(cfg: &RunConfig, root: &Path, out_dir: &Path, out: &mut dyn Write) -> Result<Vec<AblationResult>> {
    if cfg.task != Task::Classify {
        return Err(Error::InvalidArgument("ablate needs a classify config".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let (train_set, test_set) = load_datasets(cfg, root)?;
    let mut results = Vec::with_capacity(ABLATION_GRID.len());
    for (k, row) in ABLATION_GRID.iter().enumerate() {
        let mut c = cfg.clone();
        c.model.tau_init = row.tau;
        c.model.vth_init = row.vth;
        c.model.tau_learnable = row.learnable;
        c.model.vth_learnable = row.learnable;
        let mut trainer: ClassifierTrainer = c.classifier_trainer()?;
        let log_path = out_dir.join(format!("row{}.log", k + 1));
        let mut log = open_log(&log_path, false)?;
        let mut records = Vec::with_capacity(c.train.epochs);
        for _ in 0..c.train.epochs {
            let rec = trainer.run_epoch(&train_set, &test_set)?;
            log_line(&mut log, &log_path, &rec.to_string())?;
            emit(out, &format!("row {}: {rec}", k + 1))?;
            records.push(rec);
        }
        results.push(AblationResult { row: *row, records });
    }
    let table = render_ablation(&results);
    let path = out_dir.join("ablation.txt");
    fs::write(&path, &table).map_err(|e| Error::io(&path, e))?;
    emit(out, table.trim_end())?;
    Ok(results)
}

/// Gradient check on the tiny network, seeded and parameterized from
/// `cfg` when one is given.
pub fn gradcheck(cfg: Option<&RunConfig>, sabotage_tau: bool, out: &mut dyn Write) -> Result<GradcheckReport> {
    let mut g = GradcheckConfig {
        sabotage_tau,
        ..GradcheckConfig::default()
    };
    if let Some(c) = cfg {
        g.seed = c.seed;
        g.alif.a = c.model.a;
        g.alif.tau = c.model.tau_init;
        g.alif.v_th = c.model.vth_init;
        if c.vae.taid_mode != crate::taid::TaidMode::Off {
            g.taid_mode = c.vae.taid_mode;
        }
    }
    let report = run_gradcheck(&g)?;
    emit(out, &report.to_string())?;
    Ok(report)
}

/// Print the expanded layer table of an architecture string.
pub fn parse_arch_table(spec: &str, input: &[usize], out: &mut dyn Write) -> Result<String> {
    let arch = parse_arch(spec)?;
    let table = arch.table(input)?;
    emit(out, table.trim_end())?;
    Ok(table)
}
