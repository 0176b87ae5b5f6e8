use crate::error::{Error, Result};
use crate::numerics::{gemm, Rng, Tensor, Transpose};

use super::init_uniform;

/// 2-D cross-correlation with same-style padding `(k - 1) / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `[out_channels, in_channels, k, k]`
    pub weight: Tensor,
    /// `[out_channels]`
    pub bias: Tensor,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Conv2d {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, rng: &mut Rng) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Conv2d {
            weight: init_uniform(&[out_channels, in_channels, kernel, kernel], fan_in, rng),
            bias: init_uniform(&[out_channels], fan_in, rng),
            stride,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn padding(&self) -> usize {
        (self.kernel() - 1) / 2
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let g = self.geometry(input)?;
        Ok(vec![self.out_channels(), g.ho, g.wo])
    }

    fn geometry(&self, feat: &[usize]) -> Result<Geometry> {
        if feat.len() != 3 {
            return Err(Error::InvalidShape {
                shape: feat.to_vec(),
                reason: "conv2d expects [C, H, W] features".into(),
            });
        }
        let (c, h, w) = (feat[0], feat[1], feat[2]);
        if c != self.in_channels() {
            return Err(Error::InvalidShape {
                shape: feat.to_vec(),
                reason: format!("conv2d expects {} input channels, got {c}", self.in_channels()),
            });
        }
        let k = self.kernel();
        let s = self.stride;
        let pad = self.padding();
        if s == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::InvalidShape {
                shape: feat.to_vec(),
                reason: format!("kernel {k} stride {s} does not fit"),
            });
        }
        Ok(Geometry {
            c,
            h,
            w,
            k,
            s,
            pad,
            ho: (h + 2 * pad - k) / s + 1,
            wo: (w + 2 * pad - k) / s + 1,
        })
    }

    /// `x`: `[rows..., C, H, W]` with the leading dims flattened as rows.
    pub fn forward(&self, x: &Tensor, lead: usize) -> Result<Tensor> {
        let g = self.geometry(&x.shape()[lead..])?;
        let rows: usize = x.shape()[..lead].iter().product();
        let cout = self.out_channels();
        let ckk = g.c * g.k * g.k;
        let hw_out = g.ho * g.wo;
        let in_len = g.c * g.h * g.w;
        let mut col = vec![0.0; ckk * hw_out];
        let mut out = vec![0.0; rows * cout * hw_out];
        for r in 0..rows {
            im2col(&x.data()[r * in_len..(r + 1) * in_len], &g, &mut col);
            let y = &mut out[r * cout * hw_out..(r + 1) * cout * hw_out];
            for (oc, chunk) in y.chunks_mut(hw_out).enumerate() {
                chunk.fill(self.bias.data()[oc]);
            }
            gemm(Transpose::No, Transpose::No, cout, hw_out, ckk, 1.0, self.weight.data(), &col, 1.0, y);
        }
        let mut shape = x.shape()[..lead].to_vec();
        shape.extend([cout, g.ho, g.wo]);
        Tensor::new(shape, out)
    }

    /// Returns `(dx, dweight, dbias)`; `dx` is skipped when not needed.
    pub fn backward(&self, x: &Tensor, lead: usize, dy: &Tensor, need_dx: bool) -> Result<(Option<Tensor>, Tensor, Tensor)> {
        let g = self.geometry(&x.shape()[lead..])?;
        let rows: usize = x.shape()[..lead].iter().product();
        let cout = self.out_channels();
        let ckk = g.c * g.k * g.k;
        let hw_out = g.ho * g.wo;
        let in_len = g.c * g.h * g.w;
        if dy.len() != rows * cout * hw_out {
            return Err(Error::shape(dy.shape(), &[rows, cout, g.ho, g.wo]));
        }
        let mut col = vec![0.0; ckk * hw_out];
        let mut dcol = vec![0.0; ckk * hw_out];
        let mut dw = Tensor::zeros(self.weight.shape());
        let mut db = Tensor::zeros(self.bias.shape());
        let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
        for r in 0..rows {
            im2col(&x.data()[r * in_len..(r + 1) * in_len], &g, &mut col);
            let dyr = &dy.data()[r * cout * hw_out..(r + 1) * cout * hw_out];
            gemm(Transpose::No, Transpose::Yes, cout, ckk, hw_out, 1.0, dyr, &col, 1.0, dw.data_mut());
            for (oc, chunk) in dyr.chunks(hw_out).enumerate() {
                db.data_mut()[oc] += chunk.iter().sum::<f64>();
            }
            if let Some(dx) = dx.as_mut() {
                gemm(Transpose::Yes, Transpose::No, ckk, hw_out, cout, 1.0, self.weight.data(), dyr, 0.0, &mut dcol);
                col2im_add(&dcol, &g, &mut dx.data_mut()[r * in_len..(r + 1) * in_len]);
            }
        }
        Ok((dx, dw, db))
    }
}

fn im2col(x: &[f64], g: &Geometry, col: &mut [f64]) {
    let hw_out = g.ho * g.wo;
    for c in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut col[row * hw_out..(row + 1) * hw_out];
                for oi in 0..g.ho {
                    let ii = (oi * g.s + ki) as isize - g.pad as isize;
                    let line = &mut dst[oi * g.wo..(oi + 1) * g.wo];
                    if ii < 0 || ii >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &x[(c * g.h + ii as usize) * g.w..][..g.w];
                    for (oj, v) in line.iter_mut().enumerate() {
                        let jj = (oj * g.s + kj) as isize - g.pad as isize;
                        *v = if jj < 0 || jj >= g.w as isize { 0.0 } else { src[jj as usize] };
                    }
                }
            }
        }
    }
}

fn col2im_add(col: &[f64], g: &Geometry, dx: &mut [f64]) {
    let hw_out = g.ho * g.wo;
    for c in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &col[row * hw_out..(row + 1) * hw_out];
                for oi in 0..g.ho {
                    let ii = (oi * g.s + ki) as isize - g.pad as isize;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    let dst = &mut dx[(c * g.h + ii as usize) * g.w..][..g.w];
                    for oj in 0..g.wo {
                        let jj = (oj * g.s + kj) as isize - g.pad as isize;
                        if jj >= 0 && jj < g.w as isize {
                            dst[jj as usize] += src[oi * g.wo + oj];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution used as an independent reference.
    fn reference(x: &[f64], c: usize, h: usize, w: usize, conv: &Conv2d) -> Vec<f64> {
        let (co, k, s, p) = (conv.out_channels(), conv.kernel(), conv.stride, conv.padding() as isize);
        let ho = (h + 2 * p as usize - k) / s + 1;
        let wo = (w + 2 * p as usize - k) / s + 1;
        let mut out = vec![0.0; co * ho * wo];
        for o in 0..co {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = conv.bias.data()[o];
                    for ci in 0..c {
                        for a in 0..k {
                            for b in 0..k {
                                let ii = (i * s + a) as isize - p;
                                let jj = (j * s + b) as isize - p;
                                if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < w {
                                    acc += conv.weight.data()[((o * c + ci) * k + a) * k + b]
                                        * x[(ci * h + ii as usize) * w + jj as usize];
                                }
                            }
                        }
                    }
                    out[(o * ho + i) * wo + j] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel() {
        let conv = Conv2d {
            weight: Tensor::full(&[1, 1, 1, 1], 1.0),
            bias: Tensor::zeros(&[1]),
            stride: 1,
        };
        let x = Tensor::from_fn(&[1, 1, 3, 4], |i| i as f64 * 0.5);
        assert_eq!(conv.forward(&x, 1).unwrap(), x);
    }

    #[test]
    fn zero_input_gives_bias() {
        let mut rng = Rng::new(3);
        let conv = Conv2d::new(2, 3, 3, 1, &mut rng);
        let y = conv.forward(&Tensor::zeros(&[1, 2, 5, 5]), 1).unwrap();
        for oc in 0..3 {
            assert!(y.data()[oc * 25..(oc + 1) * 25].iter().all(|&v| v == conv.bias.data()[oc]));
        }
    }

    #[test]
    fn ones_kernel_center_and_corner() {
        let conv = Conv2d {
            weight: Tensor::full(&[1, 1, 3, 3], 1.0),
            bias: Tensor::zeros(&[1]),
            stride: 1,
        };
        let x = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv.forward(&x, 1).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn matches_reference_with_stride() {
        let mut rng = Rng::new(11);
        for &(c, co, k, s, h, w) in &[(2, 3, 3, 1, 5, 6), (3, 2, 3, 2, 7, 7), (1, 4, 5, 2, 8, 6), (2, 2, 1, 1, 3, 3)] {
            let conv = Conv2d::new(c, co, k, s, &mut rng);
            let x = Tensor::from_fn(&[2, c, h, w], |_| rng.uniform(-1.0, 1.0));
            let y = conv.forward(&x, 1).unwrap();
            let per = c * h * w;
            let out_per = y.len() / 2;
            for r in 0..2 {
                let want = reference(&x.data()[r * per..(r + 1) * per], c, h, w, &conv);
                let got = &y.data()[r * out_per..(r + 1) * out_per];
                for (a, b) in got.iter().zip(&want) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Rng::new(5);
        let conv = Conv2d::new(2, 3, 3, 2, &mut rng);
        let x = Tensor::from_fn(&[2, 2, 5, 5], |_| rng.uniform(-1.0, 1.0));
        let y = conv.forward(&x, 1).unwrap();
        let coef = Tensor::from_fn(y.shape(), |_| rng.uniform(-1.0, 1.0));
        let loss = |cv: &Conv2d, xx: &Tensor| -> f64 {
            cv.forward(xx, 1).unwrap().data().iter().zip(coef.data()).map(|(a, b)| a * b).sum()
        };
        let (dx, dw, db) = conv.backward(&x, 1, &coef, true).unwrap();
        let dx = dx.unwrap();
        let h = 1e-6;
        for i in (0..conv.weight.len()).step_by(7) {
            let mut p = conv.clone();
            p.weight.data_mut()[i] += h;
            let mut m = conv.clone();
            m.weight.data_mut()[i] -= h;
            let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h);
            assert!((fd - dw.data()[i]).abs() < 1e-7);
        }
        for i in 0..3 {
            let mut p = conv.clone();
            p.bias.data_mut()[i] += h;
            let mut m = conv.clone();
            m.bias.data_mut()[i] -= h;
            let fd = (loss(&p, &x) - loss(&m, &x)) / (2.0 * h);
            assert!((fd - db.data()[i]).abs() < 1e-7);
        }
        for i in (0..x.len()).step_by(5) {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (loss(&conv, &xp) - loss(&conv, &xm)) / (2.0 * h);
            assert!((fd - dx.data()[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn channel_mismatch_rejected() {
        let mut rng = Rng::new(0);
        let conv = Conv2d::new(2, 3, 3, 1, &mut rng);
        assert!(conv.forward(&Tensor::zeros(&[1, 3, 4, 4]), 1).is_err());
    }
}
