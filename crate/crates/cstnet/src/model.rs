//! Network assembly: the four variants share one conv/pool/dense trunk and
//! differ only in the front transform placed before it.
//!
//! Trunk: conv 32@5x5 pad 2 -> relu -> maxpool2 -> conv 32@5x5 pad 2 -> relu
//! -> maxpool2 -> conv 64@3x3 pad 1 -> relu -> maxpool2 -> dense 1024 -> 10.

use std::fmt;

use crate::error::{Error, Result};
use crate::layers::{
    color_transform_backward_biased, color_transform_forward_biased, conv2d_backward,
    conv2d_forward, dense_backward, dense_forward, maxpool2_backward, maxpool2_forward,
    predictor_backward, predictor_forward, relu_backward, relu_forward, ColorMatrix,
    Conv2dCache, DenseCache, MaxPool2Cache, PredictorCache, PredictorParams, ReluCache,
};
use crate::rng::RngStream;
use crate::scalar::Scalar;
use crate::tensor::{identity3, Tensor};

/// Which network to build. All variants share the same trunk geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Trunk only.
    Baseline,
    /// One learned 3x3 matrix shared across the dataset, initialized to I3.
    CstGlobal,
    /// A small head predicts one 3x3 matrix per input image.
    CstPredictor,
    /// A frozen 3x3 matrix (e.g. fitted KL rotation or whitening).
    CstFixed,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "cst-global" => Ok(Variant::CstGlobal),
            "cst-predictor" => Ok(Variant::CstPredictor),
            "cst-fixed" => Ok(Variant::CstFixed),
            other => Err(Error::Input(format!(
                "unknown variant '{other}' (expected baseline, cst-global, cst-predictor, cst-fixed)"
            ))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Baseline => "baseline",
            Variant::CstGlobal => "cst-global",
            Variant::CstPredictor => "cst-predictor",
            Variant::CstFixed => "cst-fixed",
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvSpec {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub pad: usize,
    pub stride: usize,
}

/// Layer geometry of a variant. The trunk is identical across variants.
#[derive(Debug, Clone, Copy)]
pub struct NetworkSpec {
    pub variant: Variant,
    pub convs: [ConvSpec; 3],
    pub dense_in: usize,
    pub classes: usize,
}

impl NetworkSpec {
    pub fn for_variant(variant: Variant) -> Self {
        NetworkSpec {
            variant,
            convs: [
                ConvSpec { c_in: 3, c_out: 32, k: 5, pad: 2, stride: 1 },
                ConvSpec { c_in: 32, c_out: 32, k: 5, pad: 2, stride: 1 },
                ConvSpec { c_in: 32, c_out: 64, k: 3, pad: 1, stride: 1 },
            ],
            dense_in: 64 * 4 * 4,
            classes: 10,
        }
    }
}

/// A named parameter tensor with its same-shaped gradient buffer.
#[derive(Debug, Clone)]
pub struct Param<T: Scalar> {
    pub name: &'static str,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    fn new(name: &'static str, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape()).expect("valid param shape");
        Param { name, value, grad }
    }
}

enum Front<T: Scalar> {
    None,
    Global { w: Param<T>, bias: Option<Param<T>> },
    Predictor { fc1_w: Param<T>, fc1_b: Param<T>, fc2_w: Param<T>, fc2_b: Param<T> },
    Fixed { w: Tensor<T> },
}

pub struct Model<T: Scalar> {
    spec: NetworkSpec,
    front: Front<T>,
    conv1_w: Param<T>,
    conv1_b: Param<T>,
    conv2_w: Param<T>,
    conv2_b: Param<T>,
    conv3_w: Param<T>,
    conv3_b: Param<T>,
    fc_w: Param<T>,
    fc_b: Param<T>,
}

const CONV_STD: f64 = 0.05;
const DENSE_STD: f64 = 0.01;

impl<T: Scalar> Model<T> {
    /// Builds and initializes a variant. Trunk draws come from streams named
    /// after each parameter, so variants sharing a seed share trunk weights.
    pub fn build(
        variant: Variant,
        seed: u64,
        cst_bias: bool,
        fixed_w: Option<Tensor<T>>,
    ) -> Result<Self> {
        if cst_bias && variant != Variant::CstGlobal {
            return Err(Error::Input(format!(
                "the color transform bias extension only applies to cst-global, not {variant}"
            )));
        }
        let spec = NetworkSpec::for_variant(variant);
        let front = match variant {
            Variant::Baseline => Front::None,
            Variant::CstGlobal => Front::Global {
                w: Param::new("cst.W", identity3()),
                bias: cst_bias.then(|| {
                    Param::new("cst.bias", Tensor::zeros(&[3]).expect("static shape"))
                }),
            },
            Variant::CstPredictor => {
                let p = PredictorParams::<T>::init(seed);
                Front::Predictor {
                    fc1_w: Param::new("predictor.fc1.weight", p.fc1_weight),
                    fc1_b: Param::new("predictor.fc1.bias", p.fc1_bias),
                    fc2_w: Param::new("predictor.fc2.weight", p.fc2_weight),
                    fc2_b: Param::new("predictor.fc2.bias", p.fc2_bias),
                }
            }
            Variant::CstFixed => {
                let w = fixed_w.ok_or_else(|| {
                    Error::Input("cst-fixed requires a fitted 3x3 matrix".into())
                })?;
                if w.shape() != [3, 3] {
                    return Err(Error::Shape(format!(
                        "fixed color matrix must be 3x3, got {:?}",
                        w.shape()
                    )));
                }
                Front::Fixed { w }
            }
        };

        let conv = |name: &'static str, s: &ConvSpec| -> Param<T> {
            let mut rng = RngStream::new(seed, name);
            Param::new(
                name,
                Tensor::normal(&[s.c_out, s.c_in, s.k, s.k], CONV_STD, &mut rng)
                    .expect("static shape"),
            )
        };
        let zeros = |name: &'static str, shape: &[usize]| -> Param<T> {
            Param::new(name, Tensor::zeros(shape).expect("static shape"))
        };
        let mut fc_rng = RngStream::new(seed, "fc.weight");
        Ok(Model {
            spec,
            front,
            conv1_w: conv("conv1.weight", &spec.convs[0]),
            conv1_b: zeros("conv1.bias", &[spec.convs[0].c_out]),
            conv2_w: conv("conv2.weight", &spec.convs[1]),
            conv2_b: zeros("conv2.bias", &[spec.convs[1].c_out]),
            conv3_w: conv("conv3.weight", &spec.convs[2]),
            conv3_b: zeros("conv3.bias", &[spec.convs[2].c_out]),
            fc_w: Param::new(
                "fc.weight",
                Tensor::normal(&[spec.dense_in, spec.classes], DENSE_STD, &mut fc_rng)
                    .expect("static shape"),
            ),
            fc_b: zeros("fc.bias", &[spec.classes]),
        })
    }

    pub fn variant(&self) -> Variant {
        self.spec.variant
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// The front matrix for a batch: the global/fixed `W`, or the per-sample
    /// matrices the predictor computes for these inputs.
    pub fn front_matrices(&self, x: &Tensor<T>) -> Result<Option<ColorMatrix<T>>> {
        match &self.front {
            Front::None => Ok(None),
            Front::Global { w, .. } => Ok(Some(ColorMatrix::Global(w.value.clone()))),
            Front::Fixed { w } => Ok(Some(ColorMatrix::Global(w.clone()))),
            Front::Predictor { .. } => {
                let (w, _) = predictor_forward(x, &self.predictor_params())?;
                Ok(Some(ColorMatrix::PerSample(w)))
            }
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ForwardCache<T>)> {
        let (trunk_in, pred) = match &self.front {
            Front::None => (x.clone(), None),
            Front::Global { w, bias } => {
                let y = color_transform_forward_biased(
                    x,
                    &ColorMatrix::Global(w.value.clone()),
                    bias.as_ref().map(|b| &b.value),
                )?;
                (y, None)
            }
            Front::Fixed { w } => {
                let y =
                    color_transform_forward_biased(x, &ColorMatrix::Global(w.clone()), None)?;
                (y, None)
            }
            Front::Predictor { .. } => {
                let (wm, pcache) = predictor_forward(x, &self.predictor_params())?;
                let y = color_transform_forward_biased(
                    x,
                    &ColorMatrix::PerSample(wm.clone()),
                    None,
                )?;
                (y, Some((wm, pcache)))
            }
        };

        let (y, conv1) = conv2d_forward(
            &trunk_in,
            &self.conv1_w.value,
            &self.conv1_b.value,
            self.spec.convs[0].stride,
            self.spec.convs[0].pad,
        )?;
        let (y, relu1) = relu_forward(&y);
        let (y, pool1) = maxpool2_forward(&y)?;
        let (y, conv2) = conv2d_forward(
            &y,
            &self.conv2_w.value,
            &self.conv2_b.value,
            self.spec.convs[1].stride,
            self.spec.convs[1].pad,
        )?;
        let (y, relu2) = relu_forward(&y);
        let (y, pool2) = maxpool2_forward(&y)?;
        let (y, conv3) = conv2d_forward(
            &y,
            &self.conv3_w.value,
            &self.conv3_b.value,
            self.spec.convs[2].stride,
            self.spec.convs[2].pad,
        )?;
        let (y, relu3) = relu_forward(&y);
        let (y, pool3) = maxpool2_forward(&y)?;

        let n = y.dim(0);
        let feat = y.len() / n;
        if feat != self.spec.dense_in {
            return Err(Error::Shape(format!(
                "trunk produced {feat} features per sample, classifier expects {}",
                self.spec.dense_in
            )));
        }
        let pooled_shape = y.shape().to_vec();
        let flat = y.reshape(&[n, feat])?;
        let (logits, dense) = dense_forward(&flat, &self.fc_w.value, &self.fc_b.value)?;

        Ok((
            logits,
            ForwardCache {
                input: x.clone(),
                pred,
                conv1,
                relu1,
                pool1,
                conv2,
                relu2,
                pool2,
                conv3,
                relu3,
                pool3,
                pooled_shape,
                dense,
            },
        ))
    }

    /// Accumulates parameter gradients from `dlogits` and returns the
    /// gradient w.r.t. the network input.
    pub fn backward(&mut self, cache: &ForwardCache<T>, dlogits: &Tensor<T>) -> Result<Tensor<T>> {
        let (dflat, dfc_w, dfc_b) = dense_backward(&cache.dense, &self.fc_w.value, dlogits)?;
        self.fc_w.grad.add_assign(&dfc_w)?;
        self.fc_b.grad.add_assign(&dfc_b)?;

        let dy = dflat.reshape(&cache.pooled_shape)?;
        let dy = maxpool2_backward(&cache.pool3, &dy)?;
        let dy = relu_backward(&cache.relu3, &dy)?;
        let (dy, dw, db) = conv2d_backward(&cache.conv3, &self.conv3_w.value, &dy)?;
        self.conv3_w.grad.add_assign(&dw)?;
        self.conv3_b.grad.add_assign(&db)?;

        let dy = maxpool2_backward(&cache.pool2, &dy)?;
        let dy = relu_backward(&cache.relu2, &dy)?;
        let (dy, dw, db) = conv2d_backward(&cache.conv2, &self.conv2_w.value, &dy)?;
        self.conv2_w.grad.add_assign(&dw)?;
        self.conv2_b.grad.add_assign(&db)?;

        let dy = maxpool2_backward(&cache.pool1, &dy)?;
        let dy = relu_backward(&cache.relu1, &dy)?;
        let (dy, dw, db) = conv2d_backward(&cache.conv1, &self.conv1_w.value, &dy)?;
        self.conv1_w.grad.add_assign(&dw)?;
        self.conv1_b.grad.add_assign(&db)?;

        // dy is now the gradient at the trunk input, i.e. after the front.
        match &mut self.front {
            Front::None => Ok(dy),
            Front::Global { w, bias } => {
                let (dx, dwm, dbias) = color_transform_backward_biased(
                    &cache.input,
                    &ColorMatrix::Global(w.value.clone()),
                    &dy,
                    bias.is_some(),
                )?;
                match dwm {
                    ColorMatrix::Global(g) => w.grad.add_assign(&g)?,
                    ColorMatrix::PerSample(_) => unreachable!("global mode preserved"),
                }
                if let (Some(b), Some(db)) = (bias.as_mut(), dbias) {
                    b.grad.add_assign(&db)?;
                }
                Ok(dx)
            }
            Front::Fixed { w } => {
                let (dx, _, _) = color_transform_backward_biased(
                    &cache.input,
                    &ColorMatrix::Global(w.clone()),
                    &dy,
                    false,
                )?;
                Ok(dx)
            }
            Front::Predictor { fc1_w, fc1_b, fc2_w, fc2_b } => {
                let (wm, pcache) = cache
                    .pred
                    .as_ref()
                    .ok_or_else(|| Error::Shape("cache missing predictor state".into()))?;
                let (dx_transform, dwm, _) = color_transform_backward_biased(
                    &cache.input,
                    &ColorMatrix::PerSample(wm.clone()),
                    &dy,
                    false,
                )?;
                let dwm = match dwm {
                    ColorMatrix::PerSample(g) => g,
                    ColorMatrix::Global(_) => unreachable!("per-sample mode preserved"),
                };
                let params = PredictorParams {
                    fc1_weight: fc1_w.value.clone(),
                    fc1_bias: fc1_b.value.clone(),
                    fc2_weight: fc2_w.value.clone(),
                    fc2_bias: fc2_b.value.clone(),
                };
                let (dx_pred, grads) = predictor_backward(pcache, &params, &dwm)?;
                fc1_w.grad.add_assign(&grads.fc1_weight)?;
                fc1_b.grad.add_assign(&grads.fc1_bias)?;
                fc2_w.grad.add_assign(&grads.fc2_weight)?;
                fc2_b.grad.add_assign(&grads.fc2_bias)?;
                // The input feeds both the transform and the predictor.
                let mut dx = dx_transform;
                dx.add_assign(&dx_pred)?;
                Ok(dx)
            }
        }
    }

    fn predictor_params(&self) -> PredictorParams<T> {
        match &self.front {
            Front::Predictor { fc1_w, fc1_b, fc2_w, fc2_b } => PredictorParams {
                fc1_weight: fc1_w.value.clone(),
                fc1_bias: fc1_b.value.clone(),
                fc2_weight: fc2_w.value.clone(),
                fc2_bias: fc2_b.value.clone(),
            },
            _ => unreachable!("only called for the predictor variant"),
        }
    }

    /// Trainable parameters in a fixed order.
    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out: Vec<&Param<T>> = Vec::with_capacity(12);
        match &self.front {
            Front::Global { w, bias } => {
                out.push(w);
                if let Some(b) = bias {
                    out.push(b);
                }
            }
            Front::Predictor { fc1_w, fc1_b, fc2_w, fc2_b } => {
                out.extend([fc1_w, fc1_b, fc2_w, fc2_b]);
            }
            Front::None | Front::Fixed { .. } => {}
        }
        out.extend([
            &self.conv1_w, &self.conv1_b, &self.conv2_w, &self.conv2_b, &self.conv3_w,
            &self.conv3_b, &self.fc_w, &self.fc_b,
        ]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out: Vec<&mut Param<T>> = Vec::with_capacity(12);
        match &mut self.front {
            Front::Global { w, bias } => {
                out.push(w);
                if let Some(b) = bias {
                    out.push(b);
                }
            }
            Front::Predictor { fc1_w, fc1_b, fc2_w, fc2_b } => {
                out.extend([fc1_w, fc1_b, fc2_w, fc2_b]);
            }
            Front::None | Front::Fixed { .. } => {}
        }
        out.extend([
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.conv3_w,
            &mut self.conv3_b,
            &mut self.fc_w,
            &mut self.fc_b,
        ]);
        out
    }

    /// Every tensor that belongs in a checkpoint, including a frozen front.
    pub fn state_tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        let mut out: Vec<(&'static str, &Tensor<T>)> =
            self.params().into_iter().map(|p| (p.name, &p.value)).collect();
        if let Front::Fixed { w } = &self.front {
            out.insert(0, ("cst.W", w));
        }
        out
    }

    /// Replaces one state tensor by name; shapes must match.
    pub fn set_state_tensor(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        if let Front::Fixed { w } = &mut self.front {
            if name == "cst.W" {
                if value.shape() != w.shape() {
                    return Err(Error::Format(format!(
                        "tensor 'cst.W' has shape {:?}, expected {:?}",
                        value.shape(),
                        w.shape()
                    )));
                }
                *w = value;
                return Ok(());
            }
        }
        for p in self.params_mut() {
            if p.name == name {
                if value.shape() != p.value.shape() {
                    return Err(Error::Format(format!(
                        "tensor '{name}' has shape {:?}, expected {:?}",
                        value.shape(),
                        p.value.shape()
                    )));
                }
                p.value = value;
                return Ok(());
            }
        }
        Err(Error::Format(format!("unexpected tensor '{name}' for this variant")))
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.grad.fill(T::ZERO);
        }
    }
}

pub struct ForwardCache<T: Scalar> {
    input: Tensor<T>,
    pred: Option<(Tensor<T>, PredictorCache<T>)>,
    conv1: Conv2dCache<T>,
    relu1: ReluCache,
    pool1: MaxPool2Cache,
    conv2: Conv2dCache<T>,
    relu2: ReluCache,
    pool2: MaxPool2Cache,
    conv3: Conv2dCache<T>,
    relu3: ReluCache,
    pool3: MaxPool2Cache,
    pooled_shape: Vec<usize>,
    dense: DenseCache<T>,
}

impl<T: Scalar> ForwardCache<T> {
    /// Per-sample matrices the predictor produced, if any.
    pub fn predicted_matrices(&self) -> Option<&Tensor<T>> {
        self.pred.as_ref().map(|(w, _)| w)
    }

    /// Hash of every discrete branching decision (relu masks, pool argmax
    /// positions). Two forward passes that took identical branches hash
    /// equal; the gradient checker uses this to detect probes that crossed a
    /// non-differentiable point.
    pub fn branch_signature(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |b: u64| {
            h ^= b;
            h = h.wrapping_mul(0x100000001b3);
        };
        for mask in [self.relu1.mask(), self.relu2.mask(), self.relu3.mask()] {
            for &m in mask {
                eat(m as u64);
            }
        }
        if let Some((_, pcache)) = &self.pred {
            for &m in pcache.relu_mask() {
                eat(m as u64);
            }
        }
        for pool in [&self.pool1, &self.pool2, &self.pool3] {
            for &i in pool.argmax_indices() {
                eat(i as u64);
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{PREDICTOR_HIDDEN, PREDICTOR_INPUT};

    #[test]
    fn cst_variants_at_identity_match_baseline_exactly() {
        let mut rng = RngStream::new(77, "model.id");
        let x = Tensor::<f32>::normal(&[2, 3, 32, 32], 0.5, &mut rng).unwrap();
        let baseline = Model::<f32>::build(Variant::Baseline, 5, false, None).unwrap();
        let global = Model::<f32>::build(Variant::CstGlobal, 5, false, None).unwrap();
        let predictor = Model::<f32>::build(Variant::CstPredictor, 5, false, None).unwrap();

        let (l0, _) = baseline.forward(&x).unwrap();
        let (l1, _) = global.forward(&x).unwrap();
        let (l2, _) = predictor.forward(&x).unwrap();
        assert_eq!(l0.data(), l1.data());
        assert_eq!(l0.data(), l2.data());
    }

    #[test]
    fn param_lists_cover_each_variant() {
        let names = |v: Variant| -> Vec<&'static str> {
            Model::<f32>::build(v, 1, false, None)
                .unwrap()
                .params()
                .iter()
                .map(|p| p.name)
                .collect()
        };
        let trunk = [
            "conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias", "conv3.weight",
            "conv3.bias", "fc.weight", "fc.bias",
        ];
        assert_eq!(names(Variant::Baseline), trunk);
        let global = names(Variant::CstGlobal);
        assert_eq!(global[0], "cst.W");
        assert_eq!(&global[1..], trunk);
        let pred = names(Variant::CstPredictor);
        assert_eq!(
            &pred[..4],
            &[
                "predictor.fc1.weight",
                "predictor.fc1.bias",
                "predictor.fc2.weight",
                "predictor.fc2.bias"
            ]
        );
    }

    #[test]
    fn fixed_variant_requires_matrix_and_freezes_it() {
        assert!(Model::<f32>::build(Variant::CstFixed, 1, false, None).is_err());
        let w = identity3::<f32>();
        let m = Model::<f32>::build(Variant::CstFixed, 1, false, Some(w)).unwrap();
        // Frozen matrix is in the checkpoint state but not in the trainable set.
        assert!(m.state_tensors().iter().any(|(n, _)| *n == "cst.W"));
        assert!(m.params().iter().all(|p| p.name != "cst.W"));
    }

    #[test]
    fn backward_accumulates_and_zero_grads_clears() {
        let mut rng = RngStream::new(3, "model.grad");
        let x = Tensor::<f32>::normal(&[2, 3, 32, 32], 0.5, &mut rng).unwrap();
        let mut m = Model::<f32>::build(Variant::CstGlobal, 9, false, None).unwrap();
        let (logits, cache) = m.forward(&x).unwrap();
        let (_, dlogits) = crate::layers::softmax_cross_entropy(&logits, &[0, 1]).unwrap();
        m.backward(&cache, &dlogits).unwrap();
        assert!(m.params().iter().any(|p| p.grad.data().iter().any(|&v| v != 0.0)));
        m.zero_grads();
        assert!(m
            .params()
            .iter()
            .all(|p| p.grad.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn predictor_head_sizes_match_design() {
        assert_eq!(PREDICTOR_INPUT, 192);
        assert_eq!(PREDICTOR_HIDDEN, 32);
    }
}
