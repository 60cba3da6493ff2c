#[allow(unused_imports)]
use num_traits::Float as _;

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Dense row-major array with an optional gradient buffer of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
            grad: None,
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n || shape.contains(&0) {
            return Err(Error::ShapeMismatch {
                context: "tensor buffer",
                expected: shape.to_vec(),
                found: vec![data.len()],
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocated as zeros on first use.
    pub fn grad_mut(&mut self) -> &mut [f64] {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![0.0; n])
    }

    /// Value and gradient buffers at once.
    pub fn data_and_grad_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        let n = self.data.len();
        let grad = self.grad.get_or_insert_with(|| vec![0.0; n]);
        (&mut self.data, grad)
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `[batch, channels, height, width]` of a 4-D tensor.
    pub(crate) fn dims4(&self) -> (usize, usize, usize, usize) {
        debug_assert_eq!(self.shape.len(), 4);
        (self.shape[0], self.shape[1], self.shape[2], self.shape[3])
    }

    /// Contiguous `h x w` plane of sample `b`, channel `c`.
    #[cfg(test)]
    pub(crate) fn plane(&self, b: usize, c: usize) -> &[f64] {
        let (_, ch, h, w) = self.dims4();
        let start = (b * ch + c) * h * w;
        &self.data[start..start + h * w]
    }

    #[cfg(test)]
    pub(crate) fn plane_mut(&mut self, b: usize, c: usize) -> &mut [f64] {
        let (_, ch, h, w) = self.dims4();
        let start = (b * ch + c) * h * w;
        &mut self.data[start..start + h * w]
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Concatenates two 4-D tensors along the channel axis.
    pub(crate) fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
        let (n, ca, h, w) = a.dims4();
        let (_, cb, _, _) = b.dims4();
        let plane = h * w;
        let mut data = Vec::with_capacity(n * (ca + cb) * plane);
        for s in 0..n {
            data.extend_from_slice(&a.data[s * ca * plane..(s + 1) * ca * plane]);
            data.extend_from_slice(&b.data[s * cb * plane..(s + 1) * cb * plane]);
        }
        Tensor {
            shape: vec![n, ca + cb, h, w],
            data,
            grad: None,
        }
    }

    /// Inverse of [`concat_channels`](Self::concat_channels): splits off the
    /// first `ca` channels.
    pub(crate) fn split_channels(&self, ca: usize) -> (Tensor, Tensor) {
        let (n, c, h, w) = self.dims4();
        let cb = c - ca;
        let plane = h * w;
        let mut a = Vec::with_capacity(n * ca * plane);
        let mut b = Vec::with_capacity(n * cb * plane);
        for s in 0..n {
            let base = s * c * plane;
            a.extend_from_slice(&self.data[base..base + ca * plane]);
            b.extend_from_slice(&self.data[base + ca * plane..base + c * plane]);
        }
        (
            Tensor {
                shape: vec![n, ca, h, w],
                data: a,
                grad: None,
            },
            Tensor {
                shape: vec![n, cb, h, w],
                data: b,
                grad: None,
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_split_roundtrip() {
        let a = Tensor::from_vec(&[2, 1, 2, 2], (0..8).map(|v| v as f64).collect()).unwrap();
        let b = Tensor::from_vec(&[2, 2, 2, 2], (100..116).map(|v| v as f64).collect()).unwrap();
        let c = Tensor::concat_channels(&a, &b);
        assert_eq!(c.shape(), &[2, 3, 2, 2]);
        assert_eq!(c.plane(1, 0), a.plane(1, 0));
        assert_eq!(c.plane(1, 2), b.plane(1, 1));
        let (a2, b2) = c.split_channels(1);
        assert_eq!(a2, a);
        assert_eq!(b2, b);
    }

    #[test]
    fn shape_checks() {
        assert!(Tensor::from_vec(&[2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::from_vec(&[0, 2], vec![]).is_err());
        let mut t = Tensor::zeros(&[3]);
        assert!(t.grad().is_none());
        t.grad_mut()[1] = 2.0;
        t.zero_grad();
        assert_eq!(t.grad(), Some(&[0.0, 0.0, 0.0][..]));
    }
}
