//! Fully connected layer: `y = x W + b` on `N x F` inputs.

use crate::error::{Error, Result};
use crate::ops::{matmul, transpose2};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub struct DenseCache<T: Scalar> {
    x: Tensor<T>,
}

pub fn dense_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(Tensor<T>, DenseCache<T>)> {
    if x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(0) {
        return Err(Error::Shape(format!(
            "dense expects NxF input and FxK weight, got {:?} and {:?}",
            x.shape(),
            weight.shape()
        )));
    }
    let k = weight.dim(1);
    if bias.shape() != [k] {
        return Err(Error::Shape(format!(
            "dense bias {:?} must have {k} entries",
            bias.shape()
        )));
    }
    let mut y = matmul(x, weight)?;
    let bd = bias.data();
    for row in y.data_mut().chunks_exact_mut(k) {
        for (v, &b) in row.iter_mut().zip(bd) {
            *v += b;
        }
    }
    Ok((y, DenseCache { x: x.clone() }))
}

pub fn dense_backward<T: Scalar>(
    cache: &DenseCache<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, k) = (cache.x.dim(0), weight.dim(1));
    if dy.shape() != [n, k] {
        return Err(Error::Shape(format!(
            "dense upstream gradient {:?} does not match output {n}x{k}",
            dy.shape()
        )));
    }
    let dx = matmul(dy, &transpose2(weight)?)?;
    let dweight = matmul(&transpose2(&cache.x)?, dy)?;
    let mut dbias = Tensor::zeros(&[k])?;
    {
        let db = dbias.data_mut();
        for row in dy.data().chunks_exact(k) {
            for (acc, &g) in db.iter_mut().zip(row) {
                *acc += g;
            }
        }
    }
    Ok((dx, dweight, dbias))
}
