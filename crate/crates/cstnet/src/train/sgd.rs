//! SGD with classical momentum: `v <- momentum*v + grad`,
//! `param <- param - lr*v`.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn sgd_step<T: Scalar>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    velocity: &mut Tensor<T>,
    lr: T,
    momentum: T,
) -> Result<()> {
    if !param.same_shape(grad) || !param.same_shape(velocity) {
        return Err(Error::Shape(format!(
            "sgd_step shapes differ: param {:?}, grad {:?}, velocity {:?}",
            param.shape(),
            grad.shape(),
            velocity.shape()
        )));
    }
    let p = param.data_mut();
    let g = grad.data();
    let v = velocity.data_mut();
    for i in 0..p.len() {
        v[i] = momentum * v[i] + g[i];
        p[i] -= lr * v[i];
    }
    Ok(())
}

/// Optimizer owning one velocity buffer per parameter, keyed by name.
pub struct Sgd<T: Scalar> {
    pub lr: T,
    pub momentum: T,
    velocity: HashMap<&'static str, Tensor<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(lr: T, momentum: T) -> Self {
        Sgd { lr, momentum, velocity: HashMap::new() }
    }

    /// One update over every trainable parameter of the model.
    pub fn step(&mut self, model: &mut Model<T>) -> Result<()> {
        for p in model.params_mut() {
            let v = self
                .velocity
                .entry(p.name)
                .or_insert_with(|| Tensor::zeros(p.value.shape()).expect("param shape"));
            sgd_step(&mut p.value, &p.grad, v, self.lr, self.momentum)?;
        }
        Ok(())
    }
}
