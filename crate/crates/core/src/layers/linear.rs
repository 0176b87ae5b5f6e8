use crate::error::{Error, Result};
use crate::numerics::{gemm, Rng, Tensor, Transpose};

use super::init_uniform;

/// Fully connected layer; trailing feature dims are flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `[out, in]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

impl Linear {
    pub fn new(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        Linear {
            weight: init_uniform(&[outputs, inputs], inputs, rng),
            bias: init_uniform(&[outputs], inputs, rng),
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Linear {
            weight: Tensor::zeros(&[outputs, inputs]),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    fn rows(&self, x: &Tensor, lead: usize) -> Result<usize> {
        let feat: usize = x.shape()[lead..].iter().product();
        if feat != self.inputs() {
            return Err(Error::InvalidShape {
                shape: x.shape().to_vec(),
                reason: format!("linear expects {} input features, got {feat}", self.inputs()),
            });
        }
        Ok(x.shape()[..lead].iter().product())
    }

    pub fn forward(&self, x: &Tensor, lead: usize) -> Result<Tensor> {
        let rows = self.rows(x, lead)?;
        let (n_in, n_out) = (self.inputs(), self.outputs());
        let mut out = vec![0.0; rows * n_out];
        for row in out.chunks_mut(n_out) {
            row.copy_from_slice(self.bias.data());
        }
        gemm(Transpose::No, Transpose::Yes, rows, n_out, n_in, 1.0, x.data(), self.weight.data(), 1.0, &mut out);
        let mut shape = x.shape()[..lead].to_vec();
        shape.push(n_out);
        Tensor::new(shape, out)
    }

    pub fn backward(&self, x: &Tensor, lead: usize, dy: &Tensor, need_dx: bool) -> Result<(Option<Tensor>, Tensor, Tensor)> {
        let rows = self.rows(x, lead)?;
        let (n_in, n_out) = (self.inputs(), self.outputs());
        if dy.len() != rows * n_out {
            return Err(Error::shape(dy.shape(), &[rows, n_out]));
        }
        let mut dw = Tensor::zeros(self.weight.shape());
        gemm(Transpose::Yes, Transpose::No, n_out, n_in, rows, 1.0, dy.data(), x.data(), 0.0, dw.data_mut());
        let mut db = Tensor::zeros(self.bias.shape());
        for row in dy.data().chunks(n_out) {
            for (b, g) in db.data_mut().iter_mut().zip(row) {
                *b += g;
            }
        }
        let dx = if need_dx {
            let mut dx = Tensor::zeros(x.shape());
            gemm(Transpose::No, Transpose::No, rows, n_in, n_out, 1.0, dy.data(), self.weight.data(), 0.0, dx.data_mut());
            Some(dx)
        } else {
            None
        };
        Ok((dx, dw, db))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_by_hand() {
        let lin = Linear {
            weight: Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]).unwrap(),
            bias: Tensor::new(vec![2], vec![0.5, -0.5]).unwrap(),
        };
        let x = Tensor::new(vec![1, 3], vec![1.0, 1.0, 2.0]).unwrap();
        assert_eq!(lin.forward(&x, 1).unwrap().data(), &[9.5, 0.5]);
    }

    #[test]
    fn weight_gradient_of_sum_is_input_sum() {
        // L = sum of outputs over 3 rows → dL/dW[o, i] = sum_rows x[row, i].
        let mut rng = Rng::new(2);
        let lin = Linear::new(4, 2, &mut rng);
        let x = Tensor::from_fn(&[3, 4], |_| rng.uniform(-1.0, 1.0));
        let (_, dw, db) = lin.backward(&x, 1, &Tensor::full(&[3, 2], 1.0), false).unwrap();
        for o in 0..2 {
            for i in 0..4 {
                let col: f64 = (0..3).map(|r| x.data()[r * 4 + i]).sum();
                assert!((dw.data()[o * 4 + i] - col).abs() < 1e-14);
            }
        }
        assert_eq!(db.data(), &[3.0, 3.0]);
    }

    #[test]
    fn flattens_trailing_dims() {
        let mut rng = Rng::new(2);
        let lin = Linear::new(12, 5, &mut rng);
        let y = lin.forward(&Tensor::zeros(&[2, 3, 2, 2, 3]), 2).unwrap();
        assert_eq!(y.shape(), &[2, 3, 5]);
        assert!(lin.forward(&Tensor::zeros(&[2, 11]), 1).is_err());
    }
}
