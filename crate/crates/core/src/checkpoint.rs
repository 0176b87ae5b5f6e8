//! Binary checkpoints that resume training bit-identically.
//!
//! Layout (little endian): magic `SNN1`, `u32` version, the run config as
//! length-prefixed TOML, `u64` counters (epoch, steps, optimizer step
//! count, rng state), then named tensors: every parameter, every buffer and
//! both optimizer moments (`opt.m.<name>`, `opt.v.<name>`).

use std::path::Path;

use crate::classifier::ClassifierTrainer;
use crate::config::{RunConfig, Task};
use crate::error::{Error, Result};
use crate::numerics::{OptimizerState, Rng, Tensor};
use crate::svae::VaeTrainer;

pub const MAGIC: &[u8; 4] = b"SNN1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub enum Trainer {
    Classifier(ClassifierTrainer),
    Vae(VaeTrainer),
}

impl Trainer {
    pub fn task(&self) -> Task {
        match self {
            Trainer::Classifier(_) => Task::Classify,
            Trainer::Vae(_) => Task::Vae,
        }
    }

    fn counters(&self) -> (u64, u64) {
        match self {
            Trainer::Classifier(t) => (t.epoch as u64, 0),
            Trainer::Vae(t) => (0, t.steps as u64),
        }
    }

    fn rng(&self) -> &Rng {
        match self {
            Trainer::Classifier(t) => &t.rng,
            Trainer::Vae(t) => &t.rng,
        }
    }

    fn opt(&self) -> &OptimizerState {
        match self {
            Trainer::Classifier(t) => &t.opt,
            Trainer::Vae(t) => &t.opt,
        }
    }

    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let (params, buffers): (Vec<(String, &Tensor)>, Vec<(String, &Tensor)>) = match self {
            Trainer::Classifier(t) => (
                t.model.net.params().into_iter().map(|(n, v, _)| (n, v)).collect(),
                t.model.net.buffers(),
            ),
            Trainer::Vae(t) => (t.model.params().into_iter().map(|(n, v, _)| (n, v)).collect(), t.model.buffers()),
        };
        let opt = self.opt();
        let mut out = Vec::new();
        for (i, (name, _)) in params.iter().enumerate() {
            out.push((format!("opt.m.{name}"), &opt.first_moment[i]));
            out.push((format!("opt.v.{name}"), &opt.second_moment[i]));
        }
        out.extend(params);
        out.extend(buffers);
        out
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub trainer: Trainer,
}

impl Checkpoint {
    pub fn new(config: RunConfig, trainer: Trainer) -> Self {
        Checkpoint { config, trainer }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let text = self.config.to_toml();
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        let (epoch, steps) = self.trainer.counters();
        for v in [epoch, steps, self.trainer.opt().step_count, self.trainer.rng().state()] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let tensors = self.trainer.named_tensors();
        out.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
        for (name, t) in tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Decode a checkpoint; `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &str) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        let fail = |offset: u64, reason: &str| format_error(path, offset, reason);
        if r.take(4)? != MAGIC {
            return Err(fail(0, "not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(fail(4, &format!("unsupported checkpoint version {version}")));
        }
        let len = r.u64()? as usize;
        let at = r.pos;
        let text = std::str::from_utf8(r.take(len)?).map_err(|_| fail(at as u64, "config is not UTF-8"))?;
        let config = RunConfig::parse(text).map_err(|e| fail(at as u64, &format!("embedded config: {e}")))?;
        let (epoch, steps, step_count, rng_state) = (r.u64()?, r.u64()?, r.u64()?, r.u64()?);
        let mut trainer = match config.task {
            Task::Classify => Trainer::Classifier(config.classifier_trainer()?),
            Task::Vae => Trainer::Vae(config.vae_trainer()?),
        };
        let count = r.u64()? as usize;
        let mut stored = std::collections::HashMap::with_capacity(count);
        for _ in 0..count {
            let at = r.pos as u64;
            let n = r.u32()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| fail(at, "tensor name is not UTF-8"))?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            if len.checked_mul(8).is_none_or(|b| b > r.bytes.len() - r.pos) {
                return Err(fail(at, &format!("tensor {name} runs past the end of the file")));
            }
            let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            stored.insert(name, (at, Tensor::new(shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(fail(r.pos as u64, "trailing bytes after the last tensor"));
        }
        let end = bytes.len() as u64;
        let mut fill = |name: String, dst: &mut Tensor| -> Result<()> {
            let (at, t) = stored.remove(&name).ok_or_else(|| fail(end, &format!("missing tensor {name}")))?;
            if t.shape() != dst.shape() {
                return Err(fail(at, &format!("tensor {name} has shape {:?}, model expects {:?}", t.shape(), dst.shape())));
            }
            *dst = t;
            Ok(())
        };
        match &mut trainer {
            Trainer::Classifier(t) => {
                t.epoch = epoch as usize;
                t.rng = Rng::from_state(rng_state);
                restore_opt(&mut t.opt, step_count, t.model.net.params().iter().map(|(n, ..)| n.clone()).collect(), &mut fill)?;
                for p in t.model.net.params_mut() {
                    fill(p.name, p.value)?;
                }
                for (n, b) in t.model.net.buffers_mut() {
                    fill(n, b)?;
                }
            }
            Trainer::Vae(t) => {
                t.steps = steps as usize;
                t.rng = Rng::from_state(rng_state);
                restore_opt(&mut t.opt, step_count, t.model.params().iter().map(|(n, ..)| n.clone()).collect(), &mut fill)?;
                for p in t.model.params_mut() {
                    fill(p.name, p.value)?;
                }
                for (n, b) in t.model.buffers_mut() {
                    fill(n, b)?;
                }
            }
        }
        if let Some(name) = stored.keys().min() {
            return Err(fail(stored[name].0, &format!("unexpected tensor {name}")));
        }
        Ok(Checkpoint { config, trainer })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

fn restore_opt(opt: &mut OptimizerState, step_count: u64, names: Vec<String>, fill: &mut impl FnMut(String, &mut Tensor) -> Result<()>) -> Result<()> {
    opt.step_count = step_count;
    for (i, name) in names.into_iter().enumerate() {
        fill(format!("opt.m.{name}"), &mut opt.first_moment[i])?;
        fill(format!("opt.v.{name}"), &mut opt.second_moment[i])?;
    }
    Ok(())
}

fn format_error(path: &str, offset: u64, reason: &str) -> Error {
    Error::Format {
        path: path.to_string(),
        offset,
        reason: reason.to_string(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if n > self.bytes.len() - self.pos {
            return Err(format_error(self.path, self.pos as u64, "unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;

    fn tiny_config(task: Task) -> RunConfig {
        let mut c = RunConfig::defaults(task);
        c.seed = 5;
        c.model.arch = "c4k3s2-BN-ALIF-MPk2s2-DP-FC20-ALIF-APk2s2".into();
        c.model.time_steps = 2;
        c.train.batch_size = 4;
        c.vae.latent_dim = 3;
        c.vae.channels = [2, 3];
        c
    }

    fn tiny_data(n: usize) -> Dataset {
        let mut rng = Rng::new(8);
        let images = Tensor::from_fn(&[n, 1, 28, 28], |_| rng.next_f64());
        Dataset::new(images, (0..n).map(|i| i % 10).collect(), "tiny", 10).unwrap()
    }

    #[test]
    fn classifier_resume_is_bit_identical() {
        let cfg = tiny_config(Task::Classify);
        let data = tiny_data(12);
        let mut a = cfg.classifier_trainer().unwrap();
        a.train_epoch(&data).unwrap();
        let bytes = Checkpoint::new(cfg.clone(), Trainer::Classifier(a.clone())).to_bytes();
        let Trainer::Classifier(mut b) = Checkpoint::from_bytes(&bytes, "mem").unwrap().trainer else { panic!("wrong task") };
        a.train_epoch(&data).unwrap();
        b.train_epoch(&data).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.opt, b.opt);
        assert_eq!(a.rng, b.rng);
        assert_eq!(a.epoch, 2);
    }

    #[test]
    fn vae_resume_is_bit_identical() {
        let cfg = tiny_config(Task::Vae);
        let data = tiny_data(6);
        let mut a = cfg.vae_trainer().unwrap();
        a.train_step_on(&data, 3).unwrap();
        let bytes = Checkpoint::new(cfg, Trainer::Vae(a.clone())).to_bytes();
        let Trainer::Vae(mut b) = Checkpoint::from_bytes(&bytes, "mem").unwrap().trainer else { panic!("wrong task") };
        let ta = a.train_step_on(&data, 3).unwrap();
        let tb = b.train_step_on(&data, 3).unwrap();
        assert_eq!(ta.loss.to_bits(), tb.loss.to_bits());
        assert_eq!(a.model.params().len(), b.model.params().len());
        for ((n, x, _), (_, y, _)) in a.model.params().iter().zip(b.model.params()) {
            assert_eq!(*x, y, "{n}");
        }
    }

    #[test]
    fn corrupt_files_report_offsets() {
        let cfg = tiny_config(Task::Classify);
        let bytes = Checkpoint::new(cfg.clone(), Trainer::Classifier(cfg.classifier_trainer().unwrap())).to_bytes();
        let offset = |b: &[u8]| match Checkpoint::from_bytes(b, "x.ckpt").unwrap_err() {
            Error::Format { offset, .. } => offset,
            e => panic!("expected format error, got {e:?}"),
        };
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(offset(&bad), 0);
        let cut = offset(&bytes[..bytes.len() - 3]);
        assert!(cut > 0 && cut < bytes.len() as u64 - 8);
        let mut long = bytes.clone();
        long.push(0);
        assert_eq!(offset(&long), bytes.len() as u64);
    }
}
