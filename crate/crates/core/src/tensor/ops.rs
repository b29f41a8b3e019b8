use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Masks `grad_out` by `x > 0`; the subgradient at zero is zero.
pub fn relu_backward<T: Scalar>(grad_out: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.zip_map(x, "relu_backward", |g, v| if v > T::zero() { g } else { T::zero() })
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| T::narrow(logistic(v.widen())))
}

/// Gradient through the sigmoid given its output `y`.
pub fn sigmoid_backward<T: Scalar>(grad_out: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.zip_map(y, "sigmoid_backward", |g, s| {
        T::narrow(g.widen() * s.widen() * (1.0 - s.widen()))
    })
}

/// Mean over every axis after the first two: `[B, C, ...] -> [B, C]`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() < 3 {
        return Err(Error::Rank {
            op: "global_avg_pool",
            expected: 5,
            actual: x.rank(),
        });
    }
    let (b, c) = (x.shape()[0], x.shape()[1]);
    let plane: usize = x.shape()[2..].iter().product();
    let data = x
        .data()
        .chunks(plane)
        .map(|chunk| chunk.iter().map(|v| v.widen()).sum::<f64>() / plane as f64)
        .collect();
    Ok(Tensor::from_wide(vec![b, c], data))
}

pub fn global_avg_pool_backward<T: Scalar>(grad_out: &Tensor<T>, input_shape: &[usize]) -> Result<Tensor<T>> {
    let expected = &input_shape[..2];
    if grad_out.shape() != expected {
        return Err(Error::Shape {
            op: "global_avg_pool_backward",
            axis: "channels".into(),
            expected: expected.iter().product(),
            actual: grad_out.numel(),
        });
    }
    let plane: usize = input_shape[2..].iter().product();
    let scale = 1.0 / plane as f64;
    let mut data = Vec::with_capacity(grad_out.numel() * plane);
    for g in grad_out.data() {
        let v = T::narrow(g.widen() * scale);
        data.extend(std::iter::repeat(v).take(plane));
    }
    Tensor::new(input_shape.to_vec(), data)
}

/// Joins tensors along `axis`; all other extents must agree.
pub fn concat<T: Scalar>(xs: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::InvalidTensor("concat of an empty list".into()))?;
    let rank = first.rank();
    if axis >= rank {
        return Err(Error::InvalidTensor(format!("concat axis {axis} out of range for rank {rank}")));
    }
    for x in &xs[1..] {
        if x.rank() != rank {
            return Err(Error::Rank {
                op: "concat",
                expected: rank,
                actual: x.rank(),
            });
        }
        for a in (0..rank).filter(|&a| a != axis) {
            if x.shape()[a] != first.shape()[a] {
                return Err(Error::Shape {
                    op: "concat",
                    axis: a.to_string(),
                    expected: first.shape()[a],
                    actual: x.shape()[a],
                });
            }
        }
    }
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let mut shape = first.shape().to_vec();
    shape[axis] = xs.iter().map(|x| x.shape()[axis]).sum();
    let mut data = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        for x in xs {
            let run = x.shape()[axis] * inner;
            data.extend_from_slice(&x.data()[o * run..(o + 1) * run]);
        }
    }
    Tensor::new(shape, data)
}

/// Inverse of [`concat`]: cuts `x` along `axis` into pieces of the given extents.
pub fn split<T: Scalar>(x: &Tensor<T>, axis: usize, sizes: &[usize]) -> Result<Vec<Tensor<T>>> {
    if axis >= x.rank() {
        return Err(Error::InvalidTensor(format!("split axis {axis} out of range for rank {}", x.rank())));
    }
    let total: usize = sizes.iter().sum();
    if total != x.shape()[axis] {
        return Err(Error::Shape {
            op: "split",
            axis: axis.to_string(),
            expected: total,
            actual: x.shape()[axis],
        });
    }
    let outer: usize = x.shape()[..axis].iter().product();
    let inner: usize = x.shape()[axis + 1..].iter().product();
    let full = x.shape()[axis] * inner;
    let mut start = 0;
    let mut pieces = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let mut shape = x.shape().to_vec();
        shape[axis] = size;
        let mut data = Vec::with_capacity(outer * size * inner);
        for o in 0..outer {
            let base = o * full + start * inner;
            data.extend_from_slice(&x.data()[base..base + size * inner]);
        }
        pieces.push(Tensor::new(shape, data)?);
        start += size;
    }
    Ok(pieces)
}

/// Reverses the order of elements along `axis`.
pub fn flip<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(Error::InvalidTensor(format!("flip axis {axis} out of range for rank {}", x.rank())));
    }
    let extent = x.shape()[axis];
    let inner: usize = x.shape()[axis + 1..].iter().product();
    let mut data = Vec::with_capacity(x.numel());
    for block in x.data().chunks(extent * inner) {
        for i in (0..extent).rev() {
            data.extend_from_slice(&block[i * inner..(i + 1) * inner]);
        }
    }
    Tensor::new(x.shape().to_vec(), data)
}
