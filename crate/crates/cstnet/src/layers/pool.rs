//! Pooling layers: 2x2 stride-2 max pooling for the trunk and square average
//! pooling used by the matrix-predictor head to downsample its input.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub struct MaxPool2Cache {
    in_shape: Vec<usize>,
    /// Flat input index of the winning element per output position.
    argmax: Vec<usize>,
}

impl MaxPool2Cache {
    pub fn argmax_indices(&self) -> &[usize] {
        &self.argmax
    }
}

/// 2x2 window, stride 2. Ties go to the first element in row-major scan.
pub fn maxpool2_forward<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, MaxPool2Cache)> {
    if x.rank() != 4 {
        return Err(Error::Shape(format!(
            "maxpool expects N,C,H,W input, got {:?}",
            x.shape()
        )));
    }
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!(
            "maxpool2 needs even spatial extents, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor::zeros(&[n, c, oh, ow])?;
    let mut argmax = vec![0usize; n * c * oh * ow];
    let xd = x.data();
    let yd = y.data_mut();
    let mut out = 0;
    for nc in 0..n * c {
        let plane = nc * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let base = plane + (2 * i) * w + 2 * j;
                // Row-major scan; strict > keeps the first maximum on ties.
                let mut best_idx = base;
                let mut best = xd[base];
                for &cand in &[base + 1, base + w, base + w + 1] {
                    if xd[cand] > best {
                        best = xd[cand];
                        best_idx = cand;
                    }
                }
                yd[out] = best;
                argmax[out] = best_idx;
                out += 1;
            }
        }
    }
    Ok((
        y,
        MaxPool2Cache {
            in_shape: x.shape().to_vec(),
            argmax,
        },
    ))
}

/// Routes each upstream gradient entirely to its window's argmax position.
pub fn maxpool2_backward<T: Scalar>(cache: &MaxPool2Cache, dy: &Tensor<T>) -> Result<Tensor<T>> {
    if dy.len() != cache.argmax.len() {
        return Err(Error::Shape(format!(
            "maxpool upstream gradient has {} entries, expected {}",
            dy.len(),
            cache.argmax.len()
        )));
    }
    let mut dx = Tensor::zeros(&cache.in_shape)?;
    let dxd = dx.data_mut();
    for (&idx, &g) in cache.argmax.iter().zip(dy.data()) {
        dxd[idx] += g;
    }
    Ok(dx)
}

pub struct AvgPoolCache {
    in_shape: Vec<usize>,
    k: usize,
}

/// Non-overlapping k x k average pooling; spatial extents must divide by `k`.
pub fn avgpool_forward<T: Scalar>(x: &Tensor<T>, k: usize) -> Result<(Tensor<T>, AvgPoolCache)> {
    if x.rank() != 4 {
        return Err(Error::Shape(format!(
            "avgpool expects N,C,H,W input, got {:?}",
            x.shape()
        )));
    }
    let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
    if k == 0 || h % k != 0 || w % k != 0 {
        return Err(Error::Shape(format!(
            "avgpool window {k} must divide spatial extents {h}x{w}"
        )));
    }
    let (oh, ow) = (h / k, w / k);
    let inv = T::ONE / T::from_f64((k * k) as f64);
    let mut y = Tensor::zeros(&[n, c, oh, ow])?;
    let xd = x.data();
    let yd = y.data_mut();
    let mut out = 0;
    for nc in 0..n * c {
        let plane = nc * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = T::ZERO;
                for di in 0..k {
                    let row = plane + (i * k + di) * w + j * k;
                    for dj in 0..k {
                        acc += xd[row + dj];
                    }
                }
                yd[out] = acc * inv;
                out += 1;
            }
        }
    }
    Ok((
        y,
        AvgPoolCache {
            in_shape: x.shape().to_vec(),
            k,
        },
    ))
}

pub fn avgpool_backward<T: Scalar>(cache: &AvgPoolCache, dy: &Tensor<T>) -> Result<Tensor<T>> {
    let k = cache.k;
    let (n, c, h, w) = (
        cache.in_shape[0],
        cache.in_shape[1],
        cache.in_shape[2],
        cache.in_shape[3],
    );
    if dy.shape() != [n, c, h / k, w / k] {
        return Err(Error::Shape(format!(
            "avgpool upstream gradient {:?} does not match pooled shape",
            dy.shape()
        )));
    }
    let inv = T::ONE / T::from_f64((k * k) as f64);
    let mut dx = Tensor::zeros(&cache.in_shape)?;
    let dyd = dy.data();
    let dxd = dx.data_mut();
    let (oh, ow) = (h / k, w / k);
    let mut src = 0;
    for nc in 0..n * c {
        let plane = nc * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let g = dyd[src] * inv;
                src += 1;
                for di in 0..k {
                    let row = plane + (i * k + di) * w + j * k;
                    for dj in 0..k {
                        dxd[row + dj] += g;
                    }
                }
            }
        }
    }
    Ok(dx)
}
