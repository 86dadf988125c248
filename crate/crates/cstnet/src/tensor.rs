//! Dense row-major tensor, 1- to 4-D, layout N,C,H,W with the innermost
//! dimension last. This is the universal value/gradient carrier; tensors are
//! written once by the operation that produces them and read-only afterwards.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar> {
    shape: Vec<usize>,
    data: Vec<T>,
}

/// How to fill a freshly allocated tensor.
pub enum Fill<'a, T: Scalar> {
    Zero,
    Constant(T),
    /// Mean-0 normal draws with the given std, taken from the named stream.
    Normal { std: f64, rng: &'a mut RngStream },
}

fn checked_len(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > 4 {
        return Err(Error::Shape(format!(
            "tensor rank must be 1..=4, got {}",
            shape.len()
        )));
    }
    let mut len: usize = 1;
    for &e in shape {
        if e == 0 {
            return Err(Error::Shape(format!("zero extent in shape {shape:?}")));
        }
        len = len
            .checked_mul(e)
            .ok_or_else(|| Error::Shape(format!("shape {shape:?} overflows")))?;
    }
    Ok(len)
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], fill: Fill<'_, T>) -> Result<Self> {
        let len = checked_len(shape)?;
        let data = match fill {
            Fill::Zero => vec![T::ZERO; len],
            Fill::Constant(c) => vec![c; len],
            Fill::Normal { std, rng } => {
                let mut data = vec![T::ZERO; len];
                rng.fill_normal(&mut data, std);
                data
            }
        };
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(shape, Fill::Zero)
    }

    pub fn constant(shape: &[usize], c: T) -> Result<Self> {
        Self::new(shape, Fill::Constant(c))
    }

    pub fn normal(shape: &[usize], std: f64, rng: &mut RngStream) -> Result<Self> {
        Self::new(shape, Fill::Normal { std, rng })
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len = checked_len(shape)?;
        if data.len() != len {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {shape:?} (expected {len})",
                data.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Extent of dimension `d`.
    pub fn dim(&self, d: usize) -> usize {
        self.shape[d]
    }

    /// Same data, new shape; element count must match.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let len = checked_len(shape)?;
        if len != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} ({} elements) to {shape:?} ({len} elements)",
                self.shape,
                self.data.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data: self.data.clone() })
    }

    pub fn at2(&self, i: usize, j: usize) -> T {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    pub fn set2(&mut self, i: usize, j: usize, v: T) {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j] = v;
    }

    pub fn at4(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        debug_assert_eq!(self.rank(), 4);
        let (_, cc, hh, ww) = (self.shape[0], self.shape[1], self.shape[2], self.shape[3]);
        self.data[((n * cc + c) * hh + h) * ww + w]
    }

    pub fn set4(&mut self, n: usize, c: usize, h: usize, w: usize, v: T) {
        debug_assert_eq!(self.rank(), 4);
        let (_, cc, hh, ww) = (self.shape[0], self.shape[1], self.shape[2], self.shape[3]);
        self.data[((n * cc + c) * hh + h) * ww + w] = v;
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape == other.shape
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise accumulate: `self += other`. Shapes must match.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::Shape(format!(
                "add_assign shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
        Ok(())
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// Widen/narrow the element type; used to move between f32 and f64 builds.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

/// 3x3 identity as a rank-2 tensor.
pub fn identity3<T: Scalar>() -> Tensor<T> {
    let mut m = Tensor::zeros(&[3, 3]).expect("static shape");
    m.set2(0, 0, T::ONE);
    m.set2(1, 1, T::ONE);
    m.set2(2, 2, T::ONE);
    m
}
