//! Dense row-major tensors and the kernels the interpolation network is
//! built from.

mod conv;
pub mod io;
mod ops;

pub use conv::{
    conv2d, conv2d_backward, conv3d, conv3d_backward, conv_transpose3d,
    conv_transpose3d_backward, Conv2dSpec, ConvGrads, ConvSpec,
};
pub use ops::{
    concat, flip, global_avg_pool, global_avg_pool_backward, relu, relu_backward, sigmoid,
    sigmoid_backward, split,
};

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        check_shape(&shape)?;
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidTensor(format!(
                "shape {shape:?} needs {numel} elements, buffer holds {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        check_shape(shape).expect("valid shape");
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        check_shape(shape).expect("valid shape");
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..numel).map(&mut f).collect(),
        }
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        Self::from_fn(shape, |_| T::narrow(rng.gen_range(lo..hi)))
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Row-major strides in elements.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.shape.len()];
        for axis in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[axis] = strides[axis + 1] * self.shape[axis + 1];
        }
        strides
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &extent)| {
                debug_assert!(i < extent);
                acc * extent + i
            })
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let offset = self.offset(index);
        self.data[offset] = value;
    }

    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        self.clone().into_shape(shape)
    }

    pub fn into_shape(self, shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::InvalidTensor(format!(
                "cannot reshape {:?} ({} elements) into {shape:?}",
                self.shape,
                self.data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_same_shape(other, op)?;
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

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, factor: T) -> Self {
        self.map(|x| x * factor)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    /// Inner product accumulated in `f64`.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.expect_same_shape(other, "dot")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a.widen() * b.widen())
            .sum())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|x| x.widen()).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.expect_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a.widen() - b.widen()).abs())
            .fold(0.0, f64::max))
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::narrow(x.widen())).collect(),
        }
    }

    pub(crate) fn widened(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.widen()).collect()
    }

    pub(crate) fn from_wide(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            shape,
            data: data.into_iter().map(T::narrow).collect(),
        }
    }

    pub(crate) fn expect_rank(&self, rank: usize, op: &'static str) -> Result<()> {
        if self.rank() != rank {
            return Err(Error::Rank {
                op,
                expected: rank,
                actual: self.rank(),
            });
        }
        Ok(())
    }

    pub(crate) fn expect_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.rank() != other.rank() {
            return Err(Error::Rank {
                op,
                expected: self.rank(),
                actual: other.rank(),
            });
        }
        for (axis, (&a, &b)) in self.shape.iter().zip(&other.shape).enumerate() {
            if a != b {
                return Err(Error::Shape {
                    op,
                    axis: axis.to_string(),
                    expected: a,
                    actual: b,
                });
            }
        }
        Ok(())
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::InvalidTensor("rank must be at least 1".into()));
    }
    if let Some(axis) = shape.iter().position(|&e| e == 0) {
        return Err(Error::InvalidTensor(format!(
            "extent on axis {axis} is zero in {shape:?}"
        )));
    }
    Ok(())
}

/// A parameter value with its additive gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct GradPair<T> {
    value: Tensor<T>,
    grad: Tensor<T>,
}

impl<T: Scalar> GradPair<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        GradPair { value, grad }
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn grad(&self) -> &Tensor<T> {
        &self.grad
    }

    /// Replaces the value; the shape must stay the same.
    pub fn set_value(&mut self, value: Tensor<T>) -> Result<()> {
        self.value.expect_same_shape(&value, "set_value")?;
        self.value = value;
        Ok(())
    }

    pub fn value_mut(&mut self) -> &mut Tensor<T> {
        &mut self.value
    }

    pub fn accumulate(&mut self, delta: &Tensor<T>) -> Result<()> {
        self.grad.add_assign(delta)
    }

    pub fn reset(&mut self) {
        self.grad.fill(T::zero());
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut Tensor<T>, &Tensor<T>) {
        (&mut self.value, &self.grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_extent_and_bad_length() {
        assert!(Tensor::<f64>::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::<f64>::new(vec![], vec![]).is_err());
        assert!(Tensor::<f64>::new(vec![2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn offset_is_row_major() {
        let t = Tensor::<f64>::from_fn(&[2, 3, 4], |i| i as f64);
        assert_eq!(t.strides(), vec![12, 4, 1]);
        assert_eq!(t.get(&[1, 2, 3]), 23.0);
        assert_eq!(t.offset(&[1, 0, 2]), 14);
    }

    #[test]
    fn reshape_keeps_buffer() {
        let t = Tensor::<f32>::from_fn(&[1, 8, 2, 4, 4], |i| i as f32);
        let r = t.reshape(&[1, 16, 4, 4]).unwrap();
        assert_eq!(r.data(), t.data());
        assert!(t.reshape(&[3, 5]).is_err());
    }

    #[test]
    fn grad_pair_accumulates_and_resets() {
        let mut p = GradPair::new(Tensor::<f64>::full(&[3], 1.0));
        let d = Tensor::full(&[3], 0.5);
        p.accumulate(&d).unwrap();
        p.accumulate(&d).unwrap();
        assert_eq!(p.grad().data(), &[1.0, 1.0, 1.0]);
        p.reset();
        assert_eq!(p.grad().sum(), 0.0);
        assert!(p.accumulate(&Tensor::zeros(&[2])).is_err());
    }
}
