//! Central finite-difference gradient checking at f64, for single layers and
//! for whole network variants.
//!
//! Probes pick random parameter/input coordinates. A probe is retried with a
//! fresh coordinate when (a) the two perturbed forward passes took different
//! discrete branches (a relu or pool tie sits within the step), or (b) both
//! the analytic and numeric values are below the finite-difference noise
//! floor and carry no signal at the target precision. Probes that exhaust
//! their retries are skipped and reported.

use crate::data::{fit_kl_transform, ChannelStats, KlMode};
use crate::error::{Error, Result};
use crate::layers::{
    color_transform_backward_biased, color_transform_forward_biased, conv2d_backward,
    conv2d_forward, dense_backward, dense_forward, maxpool2_backward, maxpool2_forward,
    predictor_backward, predictor_forward, relu_backward, relu_forward, softmax_cross_entropy,
    ColorMatrix, PredictorParams, PREDICTOR_HIDDEN, PREDICTOR_INPUT,
};
use crate::model::{Model, Variant};
use crate::rng::RngStream;
use crate::tensor::Tensor;

pub const DEFAULT_PROBES: usize = 50;
pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-6;

/// Coordinates where |analytic| and |numeric| both fall below this are
/// noise-limited at f64 and are re-probed instead of scored.
const NOISE_FLOOR: f64 = 1e-4;
const MAX_ATTEMPTS: usize = 20;

/// `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-12)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    ColorTransform,
    Predictor,
    Conv2d,
    MaxPool2,
    Relu,
    Dense,
    Softmax,
}

impl LayerKind {
    pub const ALL: [LayerKind; 7] = [
        LayerKind::ColorTransform,
        LayerKind::Predictor,
        LayerKind::Conv2d,
        LayerKind::MaxPool2,
        LayerKind::Relu,
        LayerKind::Dense,
        LayerKind::Softmax,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "color_transform" => Ok(LayerKind::ColorTransform),
            "predictor" => Ok(LayerKind::Predictor),
            "conv2d" => Ok(LayerKind::Conv2d),
            "maxpool2" => Ok(LayerKind::MaxPool2),
            "relu" => Ok(LayerKind::Relu),
            "dense" => Ok(LayerKind::Dense),
            "softmax" => Ok(LayerKind::Softmax),
            other => Err(Error::Input(format!(
                "unknown layer '{other}' (expected color_transform, predictor, conv2d, maxpool2, relu, dense, softmax)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::ColorTransform => "color_transform",
            LayerKind::Predictor => "predictor",
            LayerKind::Conv2d => "conv2d",
            LayerKind::MaxPool2 => "maxpool2",
            LayerKind::Relu => "relu",
            LayerKind::Dense => "dense",
            LayerKind::Softmax => "softmax",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum CheckTarget {
    Layer(LayerKind),
    Network(Variant),
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub target: String,
    pub max_rel_error: f64,
    pub probes_run: usize,
    pub skipped: usize,
}

/// Dot product of a tensor with fixed coefficients: a smooth scalar loss
/// whose gradient w.r.t. the tensor is exactly the coefficients.
fn weighted_sum(t: &Tensor<f64>, coeff: &Tensor<f64>) -> f64 {
    t.data().iter().zip(coeff.data()).map(|(a, c)| a * c).sum()
}

fn fnv_bools(h: &mut u64, bits: &[bool]) {
    for &b in bits {
        *h ^= b as u64;
        *h = h.wrapping_mul(0x100000001b3);
    }
}

fn fnv_usizes(h: &mut u64, xs: &[usize]) {
    for &x in xs {
        *h ^= x as u64;
        *h = h.wrapping_mul(0x100000001b3);
    }
}

/// A differentiable instance: named coordinate spaces, a scalar loss, and
/// analytic gradients computed once at the base point.
trait ProbeInstance {
    fn spaces(&self) -> Vec<(String, usize)>;
    fn analytic(&self) -> Result<Vec<Vec<f64>>>;
    fn eval(&mut self, perturb: Option<(usize, usize, f64)>) -> Result<(f64, u64)>;
}

// ---------------------------------------------------------------------------
// Color transform: global W with bias on one input, per-sample W on another.

struct CstInstance {
    x1: Tensor<f64>,
    wg: Tensor<f64>,
    bias: Tensor<f64>,
    coeff1: Tensor<f64>,
    x2: Tensor<f64>,
    wp: Tensor<f64>,
    coeff2: Tensor<f64>,
}

impl CstInstance {
    fn new(seed: u64) -> Self {
        let mut rng = RngStream::new(seed, "gradcheck.color_transform");
        CstInstance {
            x1: Tensor::normal(&[2, 3, 4, 4], 1.0, &mut rng).unwrap(),
            wg: Tensor::normal(&[3, 3], 0.7, &mut rng).unwrap(),
            bias: Tensor::normal(&[3], 0.5, &mut rng).unwrap(),
            coeff1: Tensor::normal(&[2, 3, 4, 4], 1.0, &mut rng).unwrap(),
            x2: Tensor::normal(&[2, 3, 4, 4], 1.0, &mut rng).unwrap(),
            wp: Tensor::normal(&[2, 3, 3], 0.7, &mut rng).unwrap(),
            coeff2: Tensor::normal(&[2, 3, 4, 4], 1.0, &mut rng).unwrap(),
        }
    }

    fn loss(&self) -> Result<f64> {
        let y1 = color_transform_forward_biased(
            &self.x1,
            &ColorMatrix::Global(self.wg.clone()),
            Some(&self.bias),
        )?;
        let y2 = color_transform_forward_biased(
            &self.x2,
            &ColorMatrix::PerSample(self.wp.clone()),
            None,
        )?;
        Ok(weighted_sum(&y1, &self.coeff1) + weighted_sum(&y2, &self.coeff2))
    }
}

impl ProbeInstance for CstInstance {
    fn spaces(&self) -> Vec<(String, usize)> {
        vec![
            ("x(global)".into(), self.x1.len()),
            ("W(global)".into(), 9),
            ("bias".into(), 3),
            ("x(per-sample)".into(), self.x2.len()),
            ("W(per-sample)".into(), self.wp.len()),
        ]
    }

    fn analytic(&self) -> Result<Vec<Vec<f64>>> {
        let (dx1, dwg, db) = color_transform_backward_biased(
            &self.x1,
            &ColorMatrix::Global(self.wg.clone()),
            &self.coeff1,
            true,
        )?;
        let (dx2, dwp, _) = color_transform_backward_biased(
            &self.x2,
            &ColorMatrix::PerSample(self.wp.clone()),
            &self.coeff2,
            false,
        )?;
        let dwg = match dwg {
            ColorMatrix::Global(t) => t,
            _ => unreachable!(),
        };
        let dwp = match dwp {
            ColorMatrix::PerSample(t) => t,
            _ => unreachable!(),
        };
        Ok(vec![
            dx1.data().to_vec(),
            dwg.data().to_vec(),
            db.expect("bias enabled").data().to_vec(),
            dx2.data().to_vec(),
            dwp.data().to_vec(),
        ])
    }

    fn eval(&mut self, perturb: Option<(usize, usize, f64)>) -> Result<(f64, u64)> {
        let (loss, restore) = match perturb {
            None => (self.loss()?, None),
            Some((s, k, d)) => {
                let t = match s {
                    0 => &mut self.x1,
                    1 => &mut self.wg,
                    2 => &mut self.bias,
                    3 => &mut self.x2,
                    _ => &mut self.wp,
                };
                let old = t.data()[k];
                t.data_mut()[k] = old + d;
                let loss = self.loss();
                let t = match s {
                    0 => &mut self.x1,
                    1 => &mut self.wg,
                    2 => &mut self.bias,
                    3 => &mut self.x2,
                    _ => &mut self.wp,
                };
                t.data_mut()[k] = old;
                (loss?, Some(()))
            }
        };
        let _ = restore;
        Ok((loss, 0)) // purely linear: no discrete branches
    }
}

// ---------------------------------------------------------------------------
// Predictor head.

struct PredictorInstance {
    x: Tensor<f64>,
    params: PredictorParams<f64>,
    coeff: Tensor<f64>,
}

impl PredictorInstance {
    fn new(seed: u64) -> Self {
        let mut rng = RngStream::new(seed, "gradcheck.predictor");
        // Mid-training-like scales keep every coordinate informative.
        let params = PredictorParams {
            fc1_weight: Tensor::normal(&[PREDICTOR_INPUT, PREDICTOR_HIDDEN], 0.1, &mut rng)
                .unwrap(),
            fc1_bias: Tensor::normal(&[PREDICTOR_HIDDEN], 0.1, &mut rng).unwrap(),
            fc2_weight: Tensor::normal(&[PREDICTOR_HIDDEN, 9], 0.1, &mut rng).unwrap(),
            fc2_bias: Tensor::normal(&[9], 0.1, &mut rng).unwrap(),
        };
        PredictorInstance {
            x: Tensor::normal(&[2, 3, 32, 32], 0.5, &mut rng).unwrap(),
            params,
            coeff: Tensor::normal(&[2, 3, 3], 1.0, &mut rng).unwrap(),
        }
    }

    fn forward(&self) -> Result<(f64, u64)> {
        let (w, cache) = predictor_forward(&self.x, &self.params)?;
        let mut h: u64 = 0xcbf29ce484222325;
        fnv_bools(&mut h, cache.relu_mask());
        Ok((weighted_sum(&w, &self.coeff), h))
    }

    fn tensor_mut(&mut self, s: usize) -> &mut Tensor<f64> {
        match s {
            0 => &mut self.x,
            1 => &mut self.params.fc1_weight,
            2 => &mut self.params.fc1_bias,
            3 => &mut self.params.fc2_weight,
            _ => &mut self.params.fc2_bias,
        }
    }
}

impl ProbeInstance for PredictorInstance {
    fn spaces(&self) -> Vec<(String, usize)> {
        vec![
            ("x".into(), self.x.len()),
            ("fc1.weight".into(), self.params.fc1_weight.len()),
            ("fc1.bias".into(), self.params.fc1_bias.len()),
            ("fc2.weight".into(), self.params.fc2_weight.len()),
            ("fc2.bias".into(), self.params.fc2_bias.len()),
        ]
    }

    fn analytic(&self) -> Result<Vec<Vec<f64>>> {
        let (_, cache) = predictor_forward(&self.x, &self.params)?;
        let (dx, grads) = predictor_backward(&cache, &self.params, &self.coeff)?;
        Ok(vec![
            dx.data().to_vec(),
            grads.fc1_weight.data().to_vec(),
            grads.fc1_bias.data().to_vec(),
            grads.fc2_weight.data().to_vec(),
            grads.fc2_bias.data().to_vec(),
        ])
    }

    fn eval(&mut self, perturb: Option<(usize, usize, f64)>) -> Result<(f64, u64)> {
        match perturb {
            None => self.forward(),
            Some((s, k, d)) => {
                let t = self.tensor_mut(s);
                let old = t.data()[k];
                t.data_mut()[k] = old + d;
                let r = self.forward();
                self.tensor_mut(s).data_mut()[k] = old;
                r
            }
        }
    }
}

// ---------------------------------------------------------------------------
// One conv layer.

struct ConvInstance {
    x: Tensor<f64>,
    weight: Tensor<f64>,
    bias: Tensor<f64>,
    coeff: Tensor<f64>,
}

impl ConvInstance {
    fn new(seed: u64) -> Self {
        let mut rng = RngStream::new(seed, "gradcheck.conv2d");
        let x = Tensor::normal(&[2, 3, 6, 6], 1.0, &mut rng).unwrap();
        let weight = Tensor::normal(&[4, 3, 3, 3], 0.5, &mut rng).unwrap();
        let bias = Tensor::normal(&[4], 0.5, &mut rng).unwrap();
        let coeff = Tensor::normal(&[2, 4, 6, 6], 1.0, &mut rng).unwrap();
        ConvInstance { x, weight, bias, coeff }
    }

    fn loss(&self) -> Result<f64> {
        let (y, _) = conv2d_forward(&self.x, &self.weight, &self.bias, 1, 1)?;
        Ok(weighted_sum(&y, &self.coeff))
    }

    fn tensor_mut(&mut self, s: usize) -> &mut Tensor<f64> {
        match s {
            0 => &mut self.x,
            1 => &mut self.weight,
            _ => &mut self.bias,
        }
    }
}

impl ProbeInstance for ConvInstance {
    fn spaces(&self) -> Vec<(String, usize)> {
        vec![
            ("x".into(), self.x.len()),
            ("weight".into(), self.weight.len()),
            ("bias".into(), self.bias.len()),
        ]
    }

    fn analytic(&self) -> Result<Vec<Vec<f64>>> {
        let (_, cache) = conv2d_forward(&self.x, &self.weight, &self.bias, 1, 1)?;
        let (dx, dw, db) = conv2d_backward(&cache, &self.weight, &self.coeff)?;
        Ok(vec![dx.data().to_vec(), dw.data().to_vec(), db.data().to_vec()])
    }

    fn eval(&mut self, perturb: Option<(usize, usize, f64)>) -> Result<(f64, u64)> {
        let loss = match perturb {
            None => self.loss()?,
            Some((s, k, d)) => {
                let t = self.tensor_mut(s);
                let old = t.data()[k];
                t.data_mut()[k] = old + d;
                let r = self.loss();
                self.tensor_mut(s).data_mut()[k] = old;
                r?
            }
        };
        Ok((loss, 0))
    }
}

// ---------------------------------------------------------------------------
// Max pooling (input coordinates only).

struct MaxPoolInstance {
    x: Tensor<f64>,
    coeff: Tensor<f64>,
}

impl MaxPoolInstance {
    fn new(seed: u64) -> Self {
        let mut rng = RngStream::new(seed, "gradcheck.maxpool2");
        MaxPoolInstance {
            x: Tensor::normal(&[1, 2, 6, 6], 1.0, &mut rng).unwrap(),
            coeff: Tensor::normal(&[1, 2, 3, 3], 1.0, &mut rng).unwrap(),
        }
    }

    fn forward(&self) -> Result<(f64, u64)> {
        let (y, cache) = maxpool2_forward(&self.x)?;
        let mut h: u64 = 0xcbf29ce484222325;
        fnv_usizes(&mut h, cache.argmax_indices());
        Ok((weighted_sum(&y, &self.coeff), h))
    }
}

impl ProbeInstance for MaxPoolInstance {
    fn spaces(&self) -> Vec<(String, usize)> {
        vec![("x".into(), self.x.len())]
    }

    fn analytic(&self) -> Result<Vec<Vec<f64>>> {
        let (_, cache) = maxpool2_forward(&self.x)?;
        let dx = maxpool2_backward(&cache, &self.coeff)?;
        Ok(vec![dx.data().to_vec()])
    }

    fn eval(&mut self, perturb: Option<(usize, usize, f64)>) -> Result<(f64, u64)> {
        match perturb {
            None => self.forward(),
            Some((_, k, d)) => {
                let old = self.x.data()[k];
                self.x.data_mut()[k] = old + d;
                let r = self.forward();
                self.x.data_mut()[k] = old;
                r
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Relu (probed away from the kink by construction).

struct ReluInstance {
    x: Tensor<f64>,
    coeff: Tensor<f64>,
}

impl ReluInstance {
    fn new(seed: u64) -> Self {
        let mut rng = RngStream::new(seed, "gradcheck.relu");
        // Magnitudes in [0.1, 1.5], random sign: no point sits near the kink.
        let data: Vec<f64> = (0..24)
            .map(|_| {
                let sign = if rng.below(2) == 0 { -1.0 } else { 1.0 };
                sign * rng.uniform(0.1, 1.5)
            })
            .collect();
        ReluInstance {
            x: Tensor::from_vec(&[24], data).unwrap(),
            coeff: Tensor::normal(&[24], 1.0, &mut rng).unwrap(),
        }
    }

    fn forward(&self) -> Result<(f64, u64)> {
        let (y, cache) = relu_forward(&self.x);
        let mut h: u64 = 0xcbf29ce484222325;
        fnv_bools(&mut h, cache.mask());
        Ok((weighted_sum(&y, &self.coeff), h))
    }
}

impl ProbeInstance for ReluInstance {
    fn spaces(&self) -> Vec<(String, usize)> {
        vec![("x".into(), self.x.len())]
    }

    fn analytic(&self) -> Result<Vec<Vec<f64>>> {
        let (_, cache) = relu_forward(&self.x);
        let dx = relu_backward(&cache, &self.coeff)?;
        Ok(vec![dx.data().to_vec()])
    }

    fn eval(&mut self, perturb: Option<(usize, usize, f64)>) -> Result<(f64, u64)> {
        match perturb {
            None => self.forward(),
            Some((_, k, d)) => {
                let old = self.x.data()[k];
                self.x.data_mut()[k] = old + d;
                let r = self.forward();
                self.x.data_mut()[k] = old;
                r
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Dense layer.

struct DenseInstance {
    x: Tensor<f64>,
    weight: Tensor<f64>,
    bias: Tensor<f64>,
    coeff: Tensor<f64>,
}

impl DenseInstance {
    fn new(seed: u64) -> Self {
        let mut rng = RngStream::new(seed, "gradcheck.dense");
        DenseInstance {
            x: Tensor::normal(&[3, 7], 1.0, &mut rng).unwrap(),
            weight: Tensor::normal(&[7, 5], 0.5, &mut rng).unwrap(),
            bias: Tensor::normal(&[5], 0.5, &mut rng).unwrap(),
            coeff: Tensor::normal(&[3, 5], 1.0, &mut rng).unwrap(),
        }
    }

    fn loss(&self) -> Result<f64> {
        let (y, _) = dense_forward(&self.x, &self.weight, &self.bias)?;
        Ok(weighted_sum(&y, &self.coeff))
    }

    fn tensor_mut(&mut self, s: usize) -> &mut Tensor<f64> {
        match s {
            0 => &mut self.x,
            1 => &mut self.weight,
            _ => &mut self.bias,
        }
    }
}

impl ProbeInstance for DenseInstance {
    fn spaces(&self) -> Vec<(String, usize)> {
        vec![
            ("x".into(), self.x.len()),
            ("weight".into(), self.weight.len()),
            ("bias".into(), self.bias.len()),
        ]
    }

    fn analytic(&self) -> Result<Vec<Vec<f64>>> {
        let (_, cache) = dense_forward(&self.x, &self.weight, &self.bias)?;
        let (dx, dw, db) = dense_backward(&cache, &self.weight, &self.coeff)?;
        Ok(vec![dx.data().to_vec(), dw.data().to_vec(), db.data().to_vec()])
    }

    fn eval(&mut self, perturb: Option<(usize, usize, f64)>) -> Result<(f64, u64)> {
        let loss = match perturb {
            None => self.loss()?,
            Some((s, k, d)) => {
                let t = self.tensor_mut(s);
                let old = t.data()[k];
                t.data_mut()[k] = old + d;
                let r = self.loss();
                self.tensor_mut(s).data_mut()[k] = old;
                r?
            }
        };
        Ok((loss, 0))
    }
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy (its own loss is the probe loss).

struct SoftmaxInstance {
    logits: Tensor<f64>,
    labels: Vec<usize>,
}

impl SoftmaxInstance {
    fn new(seed: u64) -> Self {
        let mut rng = RngStream::new(seed, "gradcheck.softmax");
        let logits = Tensor::normal(&[4, 10], 1.5, &mut rng).unwrap();
        let labels = (0..4).map(|_| rng.below(10)).collect();
        SoftmaxInstance { logits, labels }
    }
}

impl ProbeInstance for SoftmaxInstance {
    fn spaces(&self) -> Vec<(String, usize)> {
        vec![("logits".into(), self.logits.len())]
    }

    fn analytic(&self) -> Result<Vec<Vec<f64>>> {
        let (_, dlogits) = softmax_cross_entropy(&self.logits, &self.labels)?;
        Ok(vec![dlogits.data().to_vec()])
    }

    fn eval(&mut self, perturb: Option<(usize, usize, f64)>) -> Result<(f64, u64)> {
        let loss = match perturb {
            None => softmax_cross_entropy(&self.logits, &self.labels)?.0,
            Some((_, k, d)) => {
                let old = self.logits.data()[k];
                self.logits.data_mut()[k] = old + d;
                let r = softmax_cross_entropy(&self.logits, &self.labels);
                self.logits.data_mut()[k] = old;
                r?.0
            }
        };
        Ok((loss, 0))
    }
}

// ---------------------------------------------------------------------------
// Whole network variants under the real training loss.

struct NetworkInstance {
    model: Model<f64>,
    x: Tensor<f64>,
    labels: Vec<usize>,
    param_names: Vec<String>,
}

impl NetworkInstance {
    fn new(variant: Variant, seed: u64) -> Result<Self> {
        let fixed = (variant == Variant::CstFixed).then(|| {
            // A fitted-transform-like matrix from synthetic channel stats.
            let stats = ChannelStats {
                mean: [0.5, 0.5, 0.5],
                cov: [[0.06, 0.03, 0.02], [0.03, 0.05, 0.025], [0.02, 0.025, 0.04]],
            };
            let m = fit_kl_transform(&stats, KlMode::Whitening).expect("well-conditioned");
            Tensor::from_vec(&[3, 3], m.iter().flatten().copied().collect()).unwrap()
        });
        let mut model = Model::<f64>::build(variant, seed, false, fixed)?;
        if variant == Variant::CstPredictor {
            // A zero head leaves the fc1 path structurally dead; probe a
            // mid-training-like state instead so every coordinate is live.
            let mut rng = RngStream::new(seed, "gradcheck.network.head");
            model.set_state_tensor(
                "predictor.fc2.weight",
                Tensor::normal(&[PREDICTOR_HIDDEN, 9], 0.05, &mut rng)?,
            )?;
            model.set_state_tensor(
                "predictor.fc2.bias",
                Tensor::normal(&[9], 0.05, &mut rng)?,
            )?;
        }
        let mut rng = RngStream::new(seed, "gradcheck.network.input");
        let n = 4usize;
        let data: Vec<f64> = (0..n * 3 * 32 * 32).map(|_| rng.uniform(0.0, 1.0)).collect();
        let x = Tensor::from_vec(&[n, 3, 32, 32], data)?;
        let labels = (0..n).map(|_| rng.below(10)).collect();
        let param_names = model.params().iter().map(|p| p.name.to_string()).collect();
        Ok(NetworkInstance { model, x, labels, param_names })
    }

    fn forward(&self) -> Result<(f64, u64)> {
        let (logits, cache) = self.model.forward(&self.x)?;
        let (loss, _) = softmax_cross_entropy(&logits, &self.labels)?;
        Ok((loss, cache.branch_signature()))
    }
}

impl ProbeInstance for NetworkInstance {
    fn spaces(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = self
            .model
            .params()
            .iter()
            .map(|p| (p.name.to_string(), p.value.len()))
            .collect();
        out.push(("input".into(), self.x.len()));
        out
    }

    fn analytic(&self) -> Result<Vec<Vec<f64>>> {
        // Gradients on a scratch copy so the base state stays untouched.
        let mut model = Model::<f64>::build(
            self.model.variant(),
            0, // dummy seed; every tensor is overwritten below
            false,
            matches!(self.model.variant(), Variant::CstFixed)
                .then(|| crate::tensor::identity3()),
        )?;
        for (name, t) in self.model.state_tensors() {
            model.set_state_tensor(name, t.clone())?;
        }
        if self.model.variant() == Variant::CstPredictor {
            // set_state_tensor covered the head overrides already
        }
        model.zero_grads();
        let (logits, cache) = model.forward(&self.x)?;
        let (_, dlogits) = softmax_cross_entropy(&logits, &self.labels)?;
        let dx = model.backward(&cache, &dlogits)?;
        let mut out: Vec<Vec<f64>> = Vec::new();
        for name in &self.param_names {
            let p = model
                .params()
                .into_iter()
                .find(|p| p.name == name)
                .expect("param order is stable");
            out.push(p.grad.data().to_vec());
        }
        out.push(dx.data().to_vec());
        Ok(out)
    }

    fn eval(&mut self, perturb: Option<(usize, usize, f64)>) -> Result<(f64, u64)> {
        match perturb {
            None => self.forward(),
            Some((s, k, d)) => {
                if s < self.param_names.len() {
                    let old = {
                        let mut params = self.model.params_mut();
                        let t = &mut params[s].value;
                        let old = t.data()[k];
                        t.data_mut()[k] = old + d;
                        old
                    };
                    let r = self.forward();
                    self.model.params_mut()[s].value.data_mut()[k] = old;
                    r
                } else {
                    let old = self.x.data()[k];
                    self.x.data_mut()[k] = old + d;
                    let r = self.forward();
                    self.x.data_mut()[k] = old;
                    r
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------

fn run_probes(
    instance: &mut dyn ProbeInstance,
    target: String,
    probes: usize,
    epsilon: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let spaces = instance.spaces();
    let total: usize = spaces.iter().map(|(_, n)| n).sum();
    let analytic = instance.analytic()?;
    let (_, base_sig) = instance.eval(None)?;
    let mut rng = RngStream::new(seed, &format!("gradcheck.probes.{target}"));

    let mut max_err = 0.0f64;
    let mut run = 0usize;
    let mut skipped = 0usize;
    for _ in 0..probes {
        let mut attempts = 0;
        loop {
            attempts += 1;
            if attempts > MAX_ATTEMPTS {
                skipped += 1;
                break;
            }
            let mut flat = rng.below(total);
            let mut space = 0usize;
            while flat >= spaces[space].1 {
                flat -= spaces[space].1;
                space += 1;
            }
            let (loss_p, sig_p) = instance.eval(Some((space, flat, epsilon)))?;
            let (loss_m, sig_m) = instance.eval(Some((space, flat, -epsilon)))?;
            if sig_p != base_sig || sig_m != base_sig {
                // The step crossed a relu/pool tie point; re-probe elsewhere.
                continue;
            }
            let numeric = (loss_p - loss_m) / (2.0 * epsilon);
            let a = analytic[space][flat];
            if a.abs() < NOISE_FLOOR && numeric.abs() < NOISE_FLOOR {
                continue;
            }
            max_err = max_err.max(relative_error(a, numeric));
            run += 1;
            break;
        }
    }
    Ok(GradCheckReport { target, max_rel_error: max_err, probes_run: run, skipped })
}

/// Runs the finite-difference check against a layer or a full variant.
pub fn grad_check(
    target: CheckTarget,
    probes: usize,
    epsilon: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    match target {
        CheckTarget::Layer(kind) => {
            let name = kind.name().to_string();
            let mut instance: Box<dyn ProbeInstance> = match kind {
                LayerKind::ColorTransform => Box::new(CstInstance::new(seed)),
                LayerKind::Predictor => Box::new(PredictorInstance::new(seed)),
                LayerKind::Conv2d => Box::new(ConvInstance::new(seed)),
                LayerKind::MaxPool2 => Box::new(MaxPoolInstance::new(seed)),
                LayerKind::Relu => Box::new(ReluInstance::new(seed)),
                LayerKind::Dense => Box::new(DenseInstance::new(seed)),
                LayerKind::Softmax => Box::new(SoftmaxInstance::new(seed)),
            };
            run_probes(instance.as_mut(), name, probes, epsilon, seed)
        }
        CheckTarget::Network(variant) => {
            let mut instance = NetworkInstance::new(variant, seed)?;
            run_probes(&mut instance, variant.to_string(), probes, epsilon, seed)
        }
    }
}
