//! Fréchet distance between Gaussian fits of feature sets, the autoencoder
//! embedding used to compute it on images, and simple rate statistics.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::layers::{Conv2d, ForwardCtx, Layer, Linear, Network, Upsample};
use crate::numerics::{OptimizerConfig, OptimizerState, Rng, Tensor};

pub const COV_RIDGE: f64 = 1e-8;
const PSD_TOL: f64 = 1e-10;

/// Mean and (ridge-regularized) covariance of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFit {
    /// `[D]`
    pub mean: Tensor,
    /// `[D, D]`
    pub cov: Tensor,
}

impl GaussianFit {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn cov_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_row_slice(d, d, self.cov.data())
    }
}

/// Sample mean and unbiased covariance of `features [N, D]`, plus `1e-8 I`.
pub fn fit_gaussian(features: &Tensor) -> Result<GaussianFit> {
    let (n, d) = match features.shape() {
        [n, d] => (*n, *d),
        s => {
            return Err(Error::InvalidShape {
                shape: s.to_vec(),
                reason: "features must be [N, D]".into(),
            })
        }
    };
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 feature rows, got {n}")));
    }
    features.check_finite("features")?;
    let x = features.data();
    let mut mean = vec![0.0; d];
    for row in x.chunks(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; d * d];
    let mut centered = vec![0.0; d];
    for row in x.chunks(d) {
        for j in 0..d {
            centered[j] = row[j] - mean[j];
        }
        for i in 0..d {
            for j in i..d {
                cov[i * d + j] += centered[i] * centered[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / (n - 1) as f64 + if i == j { COV_RIDGE } else { 0.0 };
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    Ok(GaussianFit {
        mean: Tensor::new(vec![d], mean)?,
        cov: Tensor::new(vec![d, d], cov)?,
    })
}

/// Eigendecomposition of a symmetric matrix; rejects eigenvalues below
/// `-1e-10` and truncates the remaining negatives to zero.
fn psd_eigen(m: DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let sym = (&m + m.transpose()) * 0.5;
    let mut eig = SymmetricEigen::new(sym);
    if let Some(min) = eig.eigenvalues.iter().cloned().reduce(f64::min) {
        if min < -PSD_TOL * (1.0 + eig.eigenvalues.amax()) {
            return Err(Error::Numerical(format!("{what} is not positive semi-definite (eigenvalue {min})")));
        }
    }
    eig.eigenvalues.iter_mut().for_each(|v| *v = v.max(0.0));
    Ok(eig)
}

/// Squared Fréchet distance
/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)`.
pub fn frechet_distance(a: &GaussianFit, b: &GaussianFit) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape(a.mean.shape(), b.mean.shape()));
    }
    let (sa, sb) = (a.cov_matrix(), b.cov_matrix());
    let ea = psd_eigen(sa.clone(), "first covariance")?;
    psd_eigen(sb.clone(), "second covariance")?;
    let root = DMatrix::from_diagonal(&ea.eigenvalues.map(f64::sqrt));
    let sqrt_a = &ea.eigenvectors * root * ea.eigenvectors.transpose();
    let inner = &sqrt_a * &sb * &sqrt_a;
    let ei = psd_eigen(inner, "covariance product")?;
    let tr_sqrt: f64 = ei.eigenvalues.iter().map(|v| v.sqrt()).sum();
    let dmu: f64 = a.mean.data().iter().zip(b.mean.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((dmu + sa.trace() + sb.trace() - 2.0 * tr_sqrt).max(0.0))
}

/// Mean of a spike tensor.
pub fn firing_rate(spikes: &Tensor) -> f64 {
    spikes.mean()
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    predictions.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64
}

/// Write `features [N, D]` as `'FEAT'`, u32 N, u32 D, then little-endian f64s.
pub fn write_features(path: &Path, features: &Tensor) -> Result<()> {
    let [n, d] = features.shape() else {
        return Err(Error::InvalidShape {
            shape: features.shape().to_vec(),
            reason: "features must be [N, D]".into(),
        });
    };
    let mut out = Vec::with_capacity(12 + 8 * features.len());
    out.extend_from_slice(b"FEAT");
    out.extend((*n as u32).to_le_bytes());
    out.extend((*d as u32).to_le_bytes());
    for v in features.data() {
        out.extend(v.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |offset: usize, reason: String| Error::Format {
        path: path.display().to_string(),
        offset: offset as u64,
        reason,
    };
    if bytes.len() < 12 {
        return Err(bad(bytes.len(), "truncated header".into()));
    }
    if &bytes[..4] != b"FEAT" {
        return Err(bad(0, "missing FEAT magic".into()));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let want = 12 + 8 * n * d;
    if bytes.len() != want {
        return Err(bad(bytes.len().min(want), format!("expected {want} bytes, found {}", bytes.len())));
    }
    let data = bytes[12..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Tensor::new(vec![n, d], data)
}

/// Tiny conventional autoencoder used as the FAD feature extractor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FadConfig {
    pub latent: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for FadConfig {
    fn default() -> Self {
        FadConfig {
            latent: 32,
            epochs: 10,
            batch_size: 32,
            lr: 1e-3,
        }
    }
}

/// Encoder half of the trained autoencoder.
#[derive(Debug, Clone)]
pub struct FadEmbedder {
    pub encoder: Network,
    pub decoder: Network,
}

fn with_unit_time(x: &Tensor) -> Tensor {
    let mut shape = vec![1];
    shape.extend_from_slice(x.shape());
    x.clone().reshape(&shape).expect("same size")
}

fn drop_unit_time(x: Tensor) -> Tensor {
    let shape = x.shape()[1..].to_vec();
    x.reshape(&shape).expect("same size")
}

impl FadEmbedder {
    /// Two stride-2 convolutions down, a linear bottleneck, and a mirrored
    /// upsample + convolution decoder ending in a sigmoid.
    pub fn new(image: &[usize], latent: usize, rng: &mut Rng) -> Result<Self> {
        let [c, h, w] = *image else {
            return Err(Error::InvalidShape {
                shape: image.to_vec(),
                reason: "image must be [C, H, W]".into(),
            });
        };
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::InvalidShape {
                shape: image.to_vec(),
                reason: "autoencoder needs height and width divisible by 4".into(),
            });
        }
        let (h4, w4) = (h / 4, w / 4);
        let encoder = Network::new(vec![
            Layer::Conv2d(Conv2d::new(c, 8, 3, 2, rng)),
            Layer::Relu,
            Layer::Conv2d(Conv2d::new(8, 16, 3, 2, rng)),
            Layer::Relu,
            Layer::Linear(Linear::new(16 * h4 * w4, latent, rng)),
        ]);
        let decoder = Network::new(vec![
            Layer::Linear(Linear::new(latent, 16 * h4 * w4, rng)),
            Layer::Reshape(vec![16, h4, w4]),
            Layer::Relu,
            Layer::Upsample(Upsample { factor: 2 }),
            Layer::Conv2d(Conv2d::new(16, 8, 3, 1, rng)),
            Layer::Relu,
            Layer::Upsample(Upsample { factor: 2 }),
            Layer::Conv2d(Conv2d::new(8, c, 3, 1, rng)),
            Layer::Sigmoid,
        ]);
        Ok(FadEmbedder { encoder, decoder })
    }

    /// Train on `images [N, C, H, W]` with Adam and mean squared error.
    pub fn train(images: &Tensor, cfg: &FadConfig, rng: &mut Rng) -> Result<Self> {
        let mut ae = FadEmbedder::new(&images.shape()[1..], cfg.latent, rng)?;
        let opt_cfg = OptimizerConfig::adam(cfg.lr);
        let mut enc_opt = OptimizerState::new(opt_cfg, &ae.encoder.param_shapes());
        let mut dec_opt = OptimizerState::new(opt_cfg, &ae.decoder.param_shapes());
        let n = images.shape()[0];
        let per: usize = images.shape()[1..].iter().product();
        let ctx = ForwardCtx::eval();
        let mut order: Vec<usize> = (0..n).collect();
        for _ in 0..cfg.epochs {
            rng.shuffle(&mut order);
            for part in order.chunks(cfg.batch_size.max(1)) {
                let mut shape = vec![1, part.len()];
                shape.extend_from_slice(&images.shape()[1..]);
                let mut data = Vec::with_capacity(part.len() * per);
                for &i in part {
                    data.extend_from_slice(&images.data()[i * per..(i + 1) * per]);
                }
                let x = Tensor::new(shape, data)?;
                let (z, mut etape) = ae.encoder.forward(&x, &ctx)?;
                let (y, mut dtape) = ae.decoder.forward(&z, &ctx)?;
                let scale = 2.0 / y.len() as f64;
                let dy = y.zip_map(&x, |a, b| scale * (a - b))?;
                let loss: f64 = y.data().iter().zip(x.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64;
                if !loss.is_finite() {
                    return Err(Error::Numerical("autoencoder loss diverged".into()));
                }
                let (dz, dgrads) = ae.decoder.backward(&mut dtape, &dy, true)?;
                let (_, egrads) = ae.encoder.backward(&mut etape, &dz.expect("requested"), false)?;
                dec_opt.step(&mut ae.decoder.params_mut(), &dgrads)?;
                enc_opt.step(&mut ae.encoder.params_mut(), &egrads)?;
            }
        }
        Ok(ae)
    }

    /// Latent features `[N, latent]` of `images [N, C, H, W]`.
    pub fn embed(&self, images: &Tensor) -> Result<Tensor> {
        let (z, _) = self.encoder.forward(&with_unit_time(images), &ForwardCtx::eval())?;
        Ok(drop_unit_time(z))
    }

    pub fn reconstruct(&self, images: &Tensor) -> Result<Tensor> {
        let ctx = ForwardCtx::eval();
        let (z, _) = self.encoder.forward(&with_unit_time(images), &ctx)?;
        Ok(drop_unit_time(self.decoder.forward(&z, &ctx)?.0))
    }

    /// Squared Fréchet distance between the latent fits of two image sets.
    pub fn fad(&self, real: &Tensor, generated: &Tensor) -> Result<f64> {
        if real.shape()[1..] != generated.shape()[1..] {
            return Err(Error::shape(real.shape(), generated.shape()));
        }
        frechet_distance(&fit_gaussian(&self.embed(real)?)?, &fit_gaussian(&self.embed(generated)?)?)
    }
}

/// Train the embedder on `real`, then compare `real` with `generated`.
pub fn fad_pipeline(real: &Tensor, generated: &Tensor, cfg: &FadConfig, rng: &mut Rng) -> Result<f64> {
    FadEmbedder::train(real, cfg, rng)?.fad(real, generated)
}
