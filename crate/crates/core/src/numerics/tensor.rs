//! Dense row-major `f64` tensors.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Right-hand operand of [`Tensor::elementwise`].
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    Tensor(&'a Tensor),
    Scalar(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElementwiseOp {
    Add,
    Mul,
    /// Ignores the operand.
    Sigmoid,
    /// Ignores the operand.
    Clamp { lo: f64, hi: f64 },
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("expected {n} elements, got {}", data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(&self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.expect_shape(other.shape())?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn elementwise(&self, op: ElementwiseOp, rhs: Operand<'_>) -> Result<Tensor> {
        let f = move |a: f64, b: f64| match op {
            ElementwiseOp::Add => a + b,
            ElementwiseOp::Mul => a * b,
            ElementwiseOp::Sigmoid => sigmoid(a),
            ElementwiseOp::Clamp { lo, hi } => a.clamp(lo, hi),
        };
        match rhs {
            Operand::Scalar(b) => Ok(self.map(|a| f(a, b))),
            Operand::Tensor(b) => self.zip_map(b, f),
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(ElementwiseOp::Add, Operand::Tensor(other))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(ElementwiseOp::Mul, Operand::Tensor(other))
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map(sigmoid)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        self.map(|v| v.clamp(lo, hi))
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.expect_shape(other.shape())?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    /// Mean over the given axes; the reduced axes are dropped from the
    /// output shape. An empty axis set returns a copy.
    pub fn reduce_mean(&self, axes: &[usize]) -> Result<Tensor> {
        if axes.is_empty() {
            return Ok(self.clone());
        }
        let nd = self.shape.len();
        let mut reduce = vec![false; nd];
        for &a in axes {
            if a >= nd {
                return Err(Error::InvalidShape {
                    shape: self.shape.clone(),
                    reason: format!("axis {a} out of range"),
                });
            }
            reduce[a] = true;
        }
        let out_shape: Vec<usize> = (0..nd)
            .filter(|&i| !reduce[i])
            .map(|i| self.shape[i])
            .collect();
        let count: usize = (0..nd).filter(|&i| reduce[i]).map(|i| self.shape[i]).product();
        let out_len: usize = out_shape.iter().product();
        let mut out = vec![0.0; out_len];

        // strides of the kept axes inside the output
        let mut out_strides = vec![0usize; nd];
        let mut s = 1;
        for i in (0..nd).rev() {
            if !reduce[i] {
                out_strides[i] = s;
                s *= self.shape[i];
            }
        }
        let mut idx = vec![0usize; nd];
        for &v in &self.data {
            let o: usize = (0..nd).map(|i| idx[i] * out_strides[i]).sum();
            out[o] += v;
            for i in (0..nd).rev() {
                idx[i] += 1;
                if idx[i] < self.shape[i] {
                    break;
                }
                idx[i] = 0;
            }
        }
        let inv = 1.0 / count as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let out_shape = if out_shape.is_empty() { vec![1] } else { out_shape };
        Tensor::new(out_shape, out)
    }

    pub fn expect_shape(&self, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::shape(&self.shape, shape));
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    /// Largest absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_values() {
        let t = Tensor::new(vec![2], vec![0.0, 3f64.ln()]).unwrap();
        let s = t.elementwise(ElementwiseOp::Sigmoid, Operand::Scalar(0.0)).unwrap();
        assert_eq!(s.data()[0], 0.5);
        assert!((s.data()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn add_and_mismatch() {
        let a = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![2], vec![3.0, 4.0]).unwrap();
        assert_eq!(a.add(&b).unwrap().data(), &[4.0, 6.0]);
        let c = Tensor::zeros(&[3]);
        match a.add(&c) {
            Err(Error::ShapeMismatch { left, right }) => {
                assert_eq!(left, vec![2]);
                assert_eq!(right, vec![3]);
            }
            other => panic!("expected mismatch, got {other:?}"),
        }
    }

    #[test]
    fn clamp_op() {
        let a = Tensor::new(vec![3], vec![-1.0, 0.5, 2.0]).unwrap();
        let op = ElementwiseOp::Clamp { lo: 0.0, hi: 1.0 };
        let c = a.elementwise(op, Operand::Scalar(0.0)).unwrap();
        assert_eq!(c.data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn reduce_mean_cases() {
        let a = Tensor::new(vec![4], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(a.reduce_mean(&[0]).unwrap().data(), &[0.5]);

        let seven = Tensor::new(vec![1], vec![7.0]).unwrap();
        assert_eq!(seven.reduce_mean(&[]).unwrap(), seven);

        let m = Tensor::new(vec![2, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let r = m.reduce_mean(&[0]).unwrap();
        assert_eq!(r.shape(), &[2]);
        assert_eq!(r.data(), &[3.0, 5.0]);
        let r = m.reduce_mean(&[1]).unwrap();
        assert_eq!(r.data(), &[2.0, 6.0]);
        assert!(m.reduce_mean(&[2]).is_err());
    }

    #[test]
    fn reduce_mean_middle_axis() {
        let t = Tensor::from_fn(&[2, 3, 2], |i| i as f64);
        let r = t.reduce_mean(&[1]).unwrap();
        assert_eq!(r.shape(), &[2, 2]);
        assert_eq!(r.data(), &[2.0, 3.0, 8.0, 9.0]);
    }

    #[test]
    fn addition_order_is_reproducible() {
        let a = Tensor::from_fn(&[64], |i| (i as f64 * 0.37).sin());
        let b = Tensor::from_fn(&[64], |i| (i as f64 * 1.3).cos() * 1e-9);
        let c = Tensor::from_fn(&[64], |i| 1e7 + i as f64);
        let r1 = a.add(&b).unwrap().add(&c).unwrap();
        let r2 = a.add(&b).unwrap().add(&c).unwrap();
        assert!(r1.data().iter().zip(r2.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
