//! Network layers, each a pure function pair: `forward(input, params)`
//! returns the output plus an explicit cache, and `backward(cache, params,
//! upstream)` consumes the cache to produce input and parameter gradients.
//! No layer holds hidden mutable state.

mod color;
mod conv;
mod dense;
mod pool;
mod predictor;
mod relu;
mod softmax;

pub use color::{
    color_transform_backward, color_transform_backward_biased, color_transform_forward,
    color_transform_forward_biased, ColorMatrix,
};
pub use conv::{conv2d_backward, conv2d_forward, Conv2dCache};
pub use dense::{dense_backward, dense_forward, DenseCache};
pub use pool::{
    avgpool_backward, avgpool_forward, maxpool2_backward, maxpool2_forward, AvgPoolCache,
    MaxPool2Cache,
};
pub use predictor::{
    predictor_backward, predictor_forward, PredictorCache, PredictorGrads, PredictorParams,
    PREDICTOR_HIDDEN, PREDICTOR_INPUT,
};
pub use relu::{relu_backward, relu_forward, ReluCache};
pub use softmax::softmax_cross_entropy;
