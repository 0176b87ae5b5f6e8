use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Pooling window. Over `[C, H, W]` features it is `k x k`; over flat `[F]`
/// features it slides along the single axis (the voting head).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pool {
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy)]
struct Plan {
    planes: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ho: usize,
    wo: usize,
}

impl Pool {
    pub fn new(kernel: usize, stride: usize) -> Self {
        Pool { kernel, stride }
    }

    fn plan(&self, feat: &[usize]) -> Result<Plan> {
        let (k, s) = (self.kernel, self.stride);
        let (planes, h, w, kh, sh) = match feat {
            [c, h, w] => (*c, *h, *w, k, s),
            [f] => (1, 1, *f, 1, 1),
            _ => {
                return Err(Error::InvalidShape {
                    shape: feat.to_vec(),
                    reason: "pooling expects [C, H, W] or [F] features".into(),
                })
            }
        };
        let (kw, sw) = (k, s);
        let fits = |n: usize, k: usize, s: usize| k >= 1 && s >= 1 && n >= k && (n - k).is_multiple_of(s);
        if !fits(h, kh, sh) || !fits(w, kw, sw) {
            return Err(Error::InvalidShape {
                shape: feat.to_vec(),
                reason: format!("pooling window k{k}s{s} does not tile the input"),
            });
        }
        Ok(Plan {
            planes,
            h,
            w,
            kh,
            kw,
            sh,
            sw,
            ho: (h - kh) / sh + 1,
            wo: (w - kw) / sw + 1,
        })
    }

    pub fn output_shape(&self, feat: &[usize]) -> Result<Vec<usize>> {
        let p = self.plan(feat)?;
        Ok(if feat.len() == 3 { vec![p.planes, p.ho, p.wo] } else { vec![p.wo] })
    }

    fn out_tensor_shape(&self, x: &Tensor, lead: usize) -> Result<Vec<usize>> {
        let mut shape = x.shape()[..lead].to_vec();
        shape.extend(self.output_shape(&x.shape()[lead..])?);
        Ok(shape)
    }

    /// Returns the pooled tensor and, per output element, the flat input
    /// index of the maximum (first occurrence wins ties).
    pub fn max_forward(&self, x: &Tensor, lead: usize) -> Result<(Tensor, Vec<usize>)> {
        let p = self.plan(&x.shape()[lead..])?;
        let shape = self.out_tensor_shape(x, lead)?;
        let rows: usize = x.shape()[..lead].iter().product();
        let total_planes = rows * p.planes;
        let mut out = Vec::with_capacity(total_planes * p.ho * p.wo);
        let mut argmax = Vec::with_capacity(out.capacity());
        let data = x.data();
        for pl in 0..total_planes {
            let base = pl * p.h * p.w;
            for oi in 0..p.ho {
                for oj in 0..p.wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = base + oi * p.sh * p.w + oj * p.sw;
                    for a in 0..p.kh {
                        for b in 0..p.kw {
                            let i = base + (oi * p.sh + a) * p.w + oj * p.sw + b;
                            if data[i] > best {
                                best = data[i];
                                best_i = i;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_i);
                }
            }
        }
        Ok((Tensor::new(shape, out)?, argmax))
    }

    pub fn max_backward(in_shape: &[usize], argmax: &[usize], dy: &Tensor) -> Result<Tensor> {
        if dy.len() != argmax.len() {
            return Err(Error::shape(dy.shape(), &[argmax.len()]));
        }
        let mut dx = Tensor::zeros(in_shape);
        for (&i, &g) in argmax.iter().zip(dy.data()) {
            dx.data_mut()[i] += g;
        }
        Ok(dx)
    }

    pub fn avg_forward(&self, x: &Tensor, lead: usize) -> Result<Tensor> {
        let p = self.plan(&x.shape()[lead..])?;
        let shape = self.out_tensor_shape(x, lead)?;
        let rows: usize = x.shape()[..lead].iter().product();
        let inv = 1.0 / (p.kh * p.kw) as f64;
        let data = x.data();
        let mut out = Vec::with_capacity(rows * p.planes * p.ho * p.wo);
        for pl in 0..rows * p.planes {
            let base = pl * p.h * p.w;
            for oi in 0..p.ho {
                for oj in 0..p.wo {
                    let mut acc = 0.0;
                    for a in 0..p.kh {
                        let row = base + (oi * p.sh + a) * p.w + oj * p.sw;
                        acc += data[row..row + p.kw].iter().sum::<f64>();
                    }
                    out.push(acc * inv);
                }
            }
        }
        Tensor::new(shape, out)
    }

    pub fn avg_backward(&self, in_shape: &[usize], lead: usize, dy: &Tensor) -> Result<Tensor> {
        let p = self.plan(&in_shape[lead..])?;
        let rows: usize = in_shape[..lead].iter().product();
        if dy.len() != rows * p.planes * p.ho * p.wo {
            return Err(Error::shape(dy.shape(), in_shape));
        }
        let inv = 1.0 / (p.kh * p.kw) as f64;
        let mut dx = Tensor::zeros(in_shape);
        let g = dy.data();
        let mut o = 0;
        for pl in 0..rows * p.planes {
            let base = pl * p.h * p.w;
            for oi in 0..p.ho {
                for oj in 0..p.wo {
                    let v = g[o] * inv;
                    o += 1;
                    for a in 0..p.kh {
                        let row = base + (oi * p.sh + a) * p.w + oj * p.sw;
                        for d in &mut dx.data_mut()[row..row + p.kw] {
                            *d += v;
                        }
                    }
                }
            }
        }
        Ok(dx)
    }
}

/// Nearest-neighbour upsampling of `[C, H, W]` features by an integer factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Upsample {
    pub factor: usize,
}

impl Upsample {
    pub fn output_shape(&self, feat: &[usize]) -> Result<Vec<usize>> {
        match feat {
            [c, h, w] if self.factor >= 1 => Ok(vec![*c, h * self.factor, w * self.factor]),
            _ => Err(Error::InvalidShape {
                shape: feat.to_vec(),
                reason: "upsample expects [C, H, W] features".into(),
            }),
        }
    }

    pub fn forward(&self, x: &Tensor, lead: usize) -> Result<Tensor> {
        let out_feat = self.output_shape(&x.shape()[lead..])?;
        let (h, w) = (x.shape()[lead + 1], x.shape()[lead + 2]);
        let f = self.factor;
        let planes = x.len() / (h * w);
        let mut out = Vec::with_capacity(x.len() * f * f);
        for pl in 0..planes {
            let src = &x.data()[pl * h * w..(pl + 1) * h * w];
            for i in 0..h * f {
                let row = &src[(i / f) * w..(i / f + 1) * w];
                for j in 0..w * f {
                    out.push(row[j / f]);
                }
            }
        }
        let mut shape = x.shape()[..lead].to_vec();
        shape.extend(out_feat);
        Tensor::new(shape, out)
    }

    pub fn backward(&self, in_shape: &[usize], lead: usize, dy: &Tensor) -> Result<Tensor> {
        let (h, w) = (in_shape[lead + 1], in_shape[lead + 2]);
        let f = self.factor;
        let mut dx = Tensor::zeros(in_shape);
        if dy.len() != dx.len() * f * f {
            return Err(Error::shape(dy.shape(), in_shape));
        }
        let planes = dx.len() / (h * w);
        for pl in 0..planes {
            let src = &dy.data()[pl * h * w * f * f..(pl + 1) * h * w * f * f];
            let dst = &mut dx.data_mut()[pl * h * w..(pl + 1) * h * w];
            for i in 0..h * f {
                for j in 0..w * f {
                    dst[(i / f) * w + j / f] += src[i * w * f + j];
                }
            }
        }
        Ok(dx)
    }
}
