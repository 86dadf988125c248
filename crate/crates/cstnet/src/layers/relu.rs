use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub struct ReluCache {
    /// Pass-through mask, true where the input was strictly positive.
    mask: Vec<bool>,
}

impl ReluCache {
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }
}

/// Elementwise `max(0, x)`.
pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, ReluCache) {
    let mut y = x.clone();
    let mut mask = vec![false; x.len()];
    for (v, m) in y.data_mut().iter_mut().zip(mask.iter_mut()) {
        if *v > T::ZERO {
            *m = true;
        } else {
            *v = T::ZERO;
        }
    }
    (y, ReluCache { mask })
}

/// Gradient is masked by `x > 0`; exactly zero at the kink.
pub fn relu_backward<T: Scalar>(cache: &ReluCache, dy: &Tensor<T>) -> Result<Tensor<T>> {
    if dy.len() != cache.mask.len() {
        return Err(Error::Shape(format!(
            "relu upstream gradient has {} entries, expected {}",
            dy.len(),
            cache.mask.len()
        )));
    }
    let mut dx = dy.clone();
    for (v, &m) in dx.data_mut().iter_mut().zip(cache.mask.iter()) {
        if !m {
            *v = T::ZERO;
        }
    }
    Ok(dx)
}
