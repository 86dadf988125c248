//! The color-matrix predictor head: a small network that looks at an input
//! image and produces its 3x3 transform. Pixels are downsampled by average
//! pooling, flattened, and passed through two dense layers; the head output
//! is added to a flattened identity, so a zero-initialized final layer makes
//! every predicted matrix start exactly at I3.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::dense::{dense_backward, dense_forward, DenseCache};
use super::pool::{avgpool_backward, avgpool_forward, AvgPoolCache};
use super::relu::{relu_backward, relu_forward, ReluCache};

/// Flattened feature count after 4x4 average pooling of a 3x32x32 image.
pub const PREDICTOR_INPUT: usize = 3 * 8 * 8;
/// Hidden width of the head.
pub const PREDICTOR_HIDDEN: usize = 32;

const POOL_K: usize = 4;
const IMAGE_SIDE: usize = 32;

#[derive(Debug, Clone)]
pub struct PredictorParams<T: Scalar> {
    pub fc1_weight: Tensor<T>,
    pub fc1_bias: Tensor<T>,
    pub fc2_weight: Tensor<T>,
    pub fc2_bias: Tensor<T>,
}

impl<T: Scalar> PredictorParams<T> {
    /// Fresh parameters: small-normal first layer, zero-initialized head so
    /// training starts at the identity transform.
    pub fn init(seed: u64) -> Self {
        let mut w1 = RngStream::new(seed, "predictor.fc1.weight");
        PredictorParams {
            fc1_weight: Tensor::normal(&[PREDICTOR_INPUT, PREDICTOR_HIDDEN], 0.01, &mut w1)
                .expect("static shape"),
            fc1_bias: Tensor::zeros(&[PREDICTOR_HIDDEN]).expect("static shape"),
            fc2_weight: Tensor::zeros(&[PREDICTOR_HIDDEN, 9]).expect("static shape"),
            fc2_bias: Tensor::zeros(&[9]).expect("static shape"),
        }
    }
}

pub struct PredictorCache<T: Scalar> {
    pool: AvgPoolCache,
    fc1: DenseCache<T>,
    relu: ReluCache,
    fc2: DenseCache<T>,
}

impl<T: Scalar> PredictorCache<T> {
    pub fn relu_mask(&self) -> &[bool] {
        self.relu.mask()
    }
}

#[derive(Debug)]
pub struct PredictorGrads<T: Scalar> {
    pub fc1_weight: Tensor<T>,
    pub fc1_bias: Tensor<T>,
    pub fc2_weight: Tensor<T>,
    pub fc2_bias: Tensor<T>,
}

/// Maps a batch of `N x 3 x 32 x 32` images to `N x 3 x 3` matrices.
pub fn predictor_forward<T: Scalar>(
    x: &Tensor<T>,
    params: &PredictorParams<T>,
) -> Result<(Tensor<T>, PredictorCache<T>)> {
    if x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != IMAGE_SIDE || x.dim(3) != IMAGE_SIDE {
        return Err(Error::Shape(format!(
            "predictor expects Nx3x{IMAGE_SIDE}x{IMAGE_SIDE} input, got {:?}",
            x.shape()
        )));
    }
    let n = x.dim(0);
    let (pooled, pool) = avgpool_forward(x, POOL_K)?;
    let flat = pooled.reshape(&[n, PREDICTOR_INPUT])?;
    let (h, fc1) = dense_forward(&flat, &params.fc1_weight, &params.fc1_bias)?;
    let (h, relu) = relu_forward(&h);
    let (out, fc2) = dense_forward(&h, &params.fc2_weight, &params.fc2_bias)?;

    let mut w = out.reshape(&[n, 3, 3])?;
    for m in w.data_mut().chunks_exact_mut(9) {
        m[0] += T::ONE;
        m[4] += T::ONE;
        m[8] += T::ONE;
    }
    Ok((w, PredictorCache { pool, fc1, relu, fc2 }))
}

/// Routes the matrix gradient into the head parameters and, via the chain
/// rule, back to the input image.
pub fn predictor_backward<T: Scalar>(
    cache: &PredictorCache<T>,
    params: &PredictorParams<T>,
    dw: &Tensor<T>,
) -> Result<(Tensor<T>, PredictorGrads<T>)> {
    if dw.rank() != 3 || dw.dim(1) != 3 || dw.dim(2) != 3 {
        return Err(Error::Shape(format!(
            "predictor upstream gradient must be Nx3x3, got {:?}",
            dw.shape()
        )));
    }
    let n = dw.dim(0);
    // The identity offset is additive, so dW passes straight to the head output.
    let dout = dw.reshape(&[n, 9])?;
    let (dh, fc2_weight, fc2_bias) = dense_backward(&cache.fc2, &params.fc2_weight, &dout)?;
    let dh = relu_backward(&cache.relu, &dh)?;
    let (dflat, fc1_weight, fc1_bias) = dense_backward(&cache.fc1, &params.fc1_weight, &dh)?;
    let dpooled = dflat.reshape(&[n, 3, IMAGE_SIDE / POOL_K, IMAGE_SIDE / POOL_K])?;
    let dx = avgpool_backward(&cache.pool, &dpooled)?;
    Ok((
        dx,
        PredictorGrads { fc1_weight, fc1_bias, fc2_weight, fc2_bias },
    ))
}
