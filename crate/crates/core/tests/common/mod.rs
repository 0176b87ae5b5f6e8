#![allow(dead_code)]

use std::fs;
use std::path::Path;

use alif_snn::config::{RunConfig, Task};
use alif_snn::numerics::Rng;

fn idx_file(magic: u32, dims: &[u32], payload: &[u8]) -> Vec<u8> {
    let mut out = magic.to_be_bytes().to_vec();
    for d in dims {
        out.extend(d.to_be_bytes());
    }
    out.extend_from_slice(payload);
    out
}

/// Class `k` lights a bright bar in row band `k`, plus noise.
fn synthetic_digits(n: usize, rng: &mut Rng) -> (Vec<u8>, Vec<u8>) {
    let mut pixels = Vec::with_capacity(n * 784);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % 10;
        labels.push(k as u8);
        for r in 0..28 {
            for _ in 0..28 {
                let on = r / 2 == k + 2;
                let base = if on { 200.0 } else { 10.0 };
                pixels.push((base + 40.0 * rng.next_f64()) as u8);
            }
        }
    }
    (pixels, labels)
}

/// Write a small MNIST-layout dataset under `root/mnist`.
pub fn write_tiny_mnist(root: &Path, train_n: usize, test_n: usize) {
    let dir = root.join("mnist");
    fs::create_dir_all(&dir).unwrap();
    let mut rng = Rng::new(99);
    for (prefix, n) in [("train", train_n), ("t10k", test_n)] {
        let (px, lb) = synthetic_digits(n, &mut rng);
        fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), idx_file(0x0803, &[n as u32, 28, 28], &px)).unwrap();
        fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), idx_file(0x0801, &[n as u32], &lb)).unwrap();
    }
}

pub fn tiny_classify_config() -> RunConfig {
    let mut cfg = RunConfig::defaults(Task::Classify);
    cfg.seed = 5;
    cfg.model.arch = "c4k3s2-BN-ALIF-DP-FC20-ALIF-APk2s2".into();
    cfg.model.time_steps = 2;
    cfg.model.a = 5.0;
    cfg.train.epochs = 3;
    cfg.train.batch_size = 8;
    cfg
}

pub fn tiny_vae_config() -> RunConfig {
    let mut cfg = RunConfig::defaults(Task::Vae);
    cfg.seed = 5;
    cfg.model.time_steps = 2;
    cfg.train.batch_size = 8;
    cfg.train.epochs = 1;
    cfg.train.max_steps = Some(3);
    cfg.train.checkpoint_every = 0;
    cfg.vae.latent_dim = 4;
    cfg.vae.channels = [2, 4];
    cfg
}

pub fn write_config(path: &Path, cfg: &RunConfig) {
    fs::write(path, cfg.to_toml()).unwrap();
}
