//! Training and evaluation loops, and the baseline-vs-transform comparison
//! protocol that writes per-variant metrics plus a summary table.

use std::path::Path;
use std::time::Instant;

use crate::data::{
    channel_stats, load_cifar10_batch, load_color_matrix, make_split, normalize,
    subtract_channel_mean, epoch_order,
};
use crate::error::{Error, Result};
use crate::layers::softmax_cross_entropy;
use crate::model::{Model, Variant};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::config::TrainConfig;
use super::metrics::{write_metrics_csv, EpochMetrics, Split};
use super::sgd::Sgd;

/// Batch loss above this (or any non-finite loss) aborts with a diagnostic.
pub const DIVERGENCE_LOSS_LIMIT: f64 = 50.0;

/// Test-accuracy threshold reported in the comparison summary.
pub const SUMMARY_ACC_THRESHOLD: f64 = 0.45;

const EVAL_CHUNK: usize = 256;
const IMAGE_ELEMS: usize = 3 * 32 * 32;

pub struct TrainOutcome {
    pub metrics: Vec<EpochMetrics>,
    pub model: Model<f32>,
}

impl TrainOutcome {
    pub fn final_test_accuracy(&self) -> Option<f64> {
        self.metrics
            .iter()
            .rev()
            .find(|m| m.split == Split::Test)
            .map(|m| m.accuracy)
    }
}

/// Builds the model a config describes, loading the fixed matrix if needed.
pub fn build_model<T: Scalar>(cfg: &TrainConfig) -> Result<Model<T>> {
    let fixed = match (cfg.variant, &cfg.fixed_w) {
        (Variant::CstFixed, Some(path)) => {
            let m = load_color_matrix(path)?;
            let data: Vec<T> = m.iter().flatten().map(|&v| T::from_f64(v)).collect();
            Some(Tensor::from_vec(&[3, 3], data)?)
        }
        _ => None,
    };
    Model::build(cfg.variant, cfg.seed, cfg.cst_bias, fixed)
}

fn gather_batch(
    images: &Tensor<f32>,
    labels: &[usize],
    indices: &[usize],
) -> (Tensor<f32>, Vec<usize>) {
    let mut data = Vec::with_capacity(indices.len() * IMAGE_ELEMS);
    let mut y = Vec::with_capacity(indices.len());
    let src = images.data();
    for &i in indices {
        data.extend_from_slice(&src[i * IMAGE_ELEMS..(i + 1) * IMAGE_ELEMS]);
        y.push(labels[i]);
    }
    let x = Tensor::from_vec(&[indices.len(), 3, 32, 32], data).expect("batch shape");
    (x, y)
}

/// Forward-only pass over a whole split: mean loss and accuracy, with argmax
/// ties broken toward the lowest class index.
pub fn evaluate(model: &Model<f32>, images: &Tensor<f32>, labels: &[usize]) -> Result<(f64, f64)> {
    let n = images.dim(0);
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for {n} images",
            labels.len()
        )));
    }
    let mut loss_sum = 0.0f64;
    let mut correct = 0usize;
    let src = images.data();
    let mut start = 0usize;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let chunk = end - start;
        let x = Tensor::from_vec(
            &[chunk, 3, 32, 32],
            src[start * IMAGE_ELEMS..end * IMAGE_ELEMS].to_vec(),
        )?;
        let (logits, _) = model.forward(&x)?;
        let y = &labels[start..end];
        let (loss, _) = softmax_cross_entropy(&logits, y)?;
        loss_sum += loss.to_f64() * chunk as f64;
        let k = logits.dim(1);
        for (i, &label) in y.iter().enumerate() {
            let row = &logits.data()[i * k..(i + 1) * k];
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            if best == label {
                correct += 1;
            }
        }
        start = end;
    }
    Ok((loss_sum / n as f64, correct as f64 / n as f64))
}

struct LoadedSplits {
    train_x: Tensor<f32>,
    train_y: Vec<usize>,
    test_x: Option<Tensor<f32>>,
    test_y: Vec<usize>,
}

fn load_splits(cfg: &TrainConfig) -> Result<LoadedSplits> {
    let ds = load_cifar10_batch(cfg.data_batch_path())?;
    let (train_ds, test_ds) = make_split(&ds, cfg.n_train, cfg.n_test, cfg.seed)?;
    let mut train_x = normalize::<f32>(&train_ds)?;
    let mut test_x = if test_ds.is_empty() {
        None
    } else {
        Some(normalize::<f32>(&test_ds)?)
    };
    if cfg.subtract_mean {
        // Mean estimated on the training split only.
        let mean = channel_stats(&train_ds)?.mean;
        subtract_channel_mean(&mut train_x, mean)?;
        if let Some(t) = test_x.as_mut() {
            subtract_channel_mean(t, mean)?;
        }
    }
    Ok(LoadedSplits {
        train_x,
        train_y: train_ds.labels.iter().map(|&l| l as usize).collect(),
        test_x,
        test_y: test_ds.labels.iter().map(|&l| l as usize).collect(),
    })
}

/// Full training run: deterministic given the config, one metrics row per
/// split per epoch.
pub fn train_model(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let splits = load_splits(cfg)?;
    let mut model = build_model::<f32>(cfg)?;
    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum);
    let mut metrics = Vec::with_capacity(cfg.epochs * 2);

    for epoch in 1..=cfg.epochs {
        let train_start = Instant::now();
        let order = epoch_order(cfg.n_train, cfg.seed, epoch);
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = gather_batch(&splits.train_x, &splits.train_y, chunk);
            model.zero_grads();
            let (logits, cache) = model.forward(&x)?;
            let (loss, dlogits) = softmax_cross_entropy(&logits, &y)?;
            let loss = loss as f64;
            if !loss.is_finite() || loss > DIVERGENCE_LOSS_LIMIT {
                return Err(Error::Divergence { epoch, batch: batch_idx, loss });
            }
            model.backward(&cache, &dlogits)?;
            opt.step(&mut model)?;
        }
        let train_seconds = train_start.elapsed().as_secs_f64();

        let eval_start = Instant::now();
        let (loss, accuracy) = evaluate(&model, &splits.train_x, &splits.train_y)?;
        metrics.push(EpochMetrics {
            epoch,
            split: Split::Train,
            loss,
            accuracy,
            seconds: train_seconds + eval_start.elapsed().as_secs_f64(),
        });
        if let Some(test_x) = &splits.test_x {
            let test_start = Instant::now();
            let (loss, accuracy) = evaluate(&model, test_x, &splits.test_y)?;
            metrics.push(EpochMetrics {
                epoch,
                split: Split::Test,
                loss,
                accuracy,
                seconds: test_start.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(TrainOutcome { metrics, model })
}

#[derive(Debug, Clone, Copy)]
pub struct SummaryRow {
    pub variant: Variant,
    pub best_test_acc: f64,
    /// First epoch whose test accuracy reached the summary threshold.
    pub first_epoch_reaching_threshold: Option<usize>,
}

pub struct CompareOutcome {
    pub rows: Vec<SummaryRow>,
    pub outcomes: Vec<TrainOutcome>,
}

pub fn summarize(variant: Variant, metrics: &[EpochMetrics]) -> SummaryRow {
    let mut best = 0.0f64;
    let mut first = None;
    for m in metrics.iter().filter(|m| m.split == Split::Test) {
        if m.accuracy > best {
            best = m.accuracy;
        }
        if first.is_none() && m.accuracy >= SUMMARY_ACC_THRESHOLD {
            first = Some(m.epoch);
        }
    }
    SummaryRow { variant, best_test_acc: best, first_epoch_reaching_threshold: first }
}

pub fn format_summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("variant,best_test_acc,first_epoch_reaching_45pct\n");
    for r in rows {
        let first = r
            .first_epoch_reaching_threshold
            .map_or_else(|| "NA".to_string(), |e| e.to_string());
        out.push_str(&format!("{},{:.6},{}\n", r.variant, r.best_test_acc, first));
    }
    out
}

/// Trains baseline and cst-global with the same seed, writing
/// `<out>/baseline/metrics.csv`, `<out>/cst-global/metrics.csv`, and
/// `<out>/summary.csv`.
pub fn compare_variants(cfg: &TrainConfig, out_dir: &Path) -> Result<CompareOutcome> {
    if cfg.n_test == 0 {
        return Err(Error::Input("compare needs a non-empty test split".into()));
    }
    let mut rows = Vec::new();
    let mut outcomes = Vec::new();
    for variant in [Variant::Baseline, Variant::CstGlobal] {
        let mut vcfg = cfg.clone();
        vcfg.variant = variant;
        let outcome = train_model(&vcfg)?;
        let dir = out_dir.join(variant.to_string());
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_metrics_csv(dir.join("metrics.csv"), &vcfg, &outcome.metrics)?;
        rows.push(summarize(variant, &outcome.metrics));
        outcomes.push(outcome);
    }
    let summary_path = out_dir.join("summary.csv");
    std::fs::write(&summary_path, format_summary_csv(&rows))
        .map_err(|e| Error::io(&summary_path, e))?;
    Ok(CompareOutcome { rows, outcomes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use std::io::Write;

    /// Writes a CIFAR-format batch file of solid-color class-coded images.
    pub(crate) fn write_toy_batch(
        path: &Path,
        per_class: usize,
        colors: &[[u8; 3]],
    ) -> std::io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        // Interleave classes so any prefix split stays balanced.
        for i in 0..per_class {
            for (label, c) in colors.iter().enumerate() {
                let mut rec = Vec::with_capacity(3073);
                rec.push(label as u8);
                for &chan in c {
                    // Mild per-image brightness jitter keeps images distinct.
                    let v = chan.saturating_add((i % 7) as u8 * 3);
                    rec.extend(std::iter::repeat(v).take(1024));
                }
                f.write_all(&rec)?;
            }
        }
        Ok(())
    }

    fn toy_config(dir: &Path) -> TrainConfig {
        let colors = [[200, 30, 30], [30, 200, 30], [30, 30, 200], [200, 200, 30]];
        write_toy_batch(&dir.join("data_batch_1.bin"), 32, &colors).unwrap();
        let mut cfg = TrainConfig::default();
        cfg.data_dir = dir.to_path_buf();
        cfg.n_train = 96;
        cfg.n_test = 32;
        cfg.batch_size = 8;
        cfg.epochs = 3;
        cfg.learning_rate = 0.02;
        cfg.seed = 3;
        cfg
    }

    #[test]
    fn toy_separable_set_reaches_perfect_accuracy_within_three_epochs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = toy_config(dir.path());
        let outcome = train_model(&cfg).unwrap();
        let best = outcome
            .metrics
            .iter()
            .filter(|m| m.split == Split::Test)
            .map(|m| m.accuracy)
            .fold(0.0, f64::max);
        assert_eq!(best, 1.0, "metrics: {:?}", outcome.metrics);

        // Train loss is non-increasing after epoch 1, within noise margin.
        let train_losses: Vec<f64> = outcome
            .metrics
            .iter()
            .filter(|m| m.split == Split::Train)
            .map(|m| m.loss)
            .collect();
        for w in train_losses.windows(2) {
            assert!(w[1] <= w[0] + 0.05, "losses {train_losses:?}");
        }
    }

    #[test]
    fn zero_learning_rate_freezes_cst_global_at_baseline() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = toy_config(dir.path());
        cfg.learning_rate = 0.0;
        cfg.epochs = 2;

        let mut base_cfg = cfg.clone();
        base_cfg.variant = Variant::Baseline;
        let baseline = train_model(&base_cfg).unwrap();

        let mut cst_cfg = cfg.clone();
        cst_cfg.variant = Variant::CstGlobal;
        let cst = train_model(&cst_cfg).unwrap();

        // W never moved from I3...
        let w = cst
            .model
            .state_tensors()
            .into_iter()
            .find(|(n, _)| *n == "cst.W")
            .unwrap()
            .1
            .clone();
        assert_eq!(w.data(), &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        // ...so every metric matches the baseline bitwise.
        for (a, b) in baseline.metrics.iter().zip(cst.metrics.iter()) {
            assert_eq!(a.loss.to_bits(), b.loss.to_bits());
            assert_eq!(a.accuracy.to_bits(), b.accuracy.to_bits());
        }
    }

    #[test]
    fn same_seed_replays_identical_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = toy_config(dir.path());
        let a = train_model(&cfg).unwrap();
        let b = train_model(&cfg).unwrap();
        assert_eq!(a.metrics.len(), b.metrics.len());
        for (x, y) in a.metrics.iter().zip(b.metrics.iter()) {
            assert_eq!(x.loss.to_bits(), y.loss.to_bits());
            assert_eq!(x.accuracy.to_bits(), y.accuracy.to_bits());
        }
    }

    #[test]
    fn missing_dataset_is_an_io_error() {
        let mut cfg = TrainConfig::default();
        cfg.data_dir = "/nonexistent".into();
        assert!(matches!(train_model(&cfg), Err(Error::Io { .. })));
    }

    #[test]
    fn zeroed_classifier_head_predicts_class_zero_everywhere() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = toy_config(dir.path());
        let splits = load_splits(&cfg).unwrap();
        let model = build_model::<f32>(&cfg).unwrap();
        // fc starts with zero bias and small weights; zero the weights too so
        // logits are identically zero and the argmax tie picks class 0.
        let mut model = model;
        model
            .set_state_tensor("fc.weight", Tensor::zeros(&[1024, 10]).unwrap())
            .unwrap();
        let (_, acc) = evaluate(&model, &splits.train_x, &splits.train_y).unwrap();
        let class0 = splits.train_y.iter().filter(|&&y| y == 0).count() as f64
            / splits.train_y.len() as f64;
        assert_eq!(acc, class0);
    }

    #[test]
    fn evaluate_matches_per_sample_recount() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = toy_config(dir.path());
        let splits = load_splits(&cfg).unwrap();
        let model = build_model::<f32>(&cfg).unwrap();
        let (loss, acc) = evaluate(&model, &splits.train_x, &splits.train_y).unwrap();

        // Independent recount, one sample at a time.
        let n = splits.train_x.dim(0);
        let mut correct = 0usize;
        let mut loss_sum = 0.0f64;
        for i in 0..n {
            let x = Tensor::from_vec(
                &[1, 3, 32, 32],
                splits.train_x.data()[i * IMAGE_ELEMS..(i + 1) * IMAGE_ELEMS].to_vec(),
            )
            .unwrap();
            let (logits, _) = model.forward(&x).unwrap();
            let row = logits.data();
            let mut best = 0;
            for j in 1..10 {
                if row[j] > row[best] {
                    best = j;
                }
            }
            if best == splits.train_y[i] {
                correct += 1;
            }
            let (l, _) = softmax_cross_entropy(&logits, &splits.train_y[i..i + 1]).unwrap();
            loss_sum += l as f64;
        }
        assert_eq!(acc, correct as f64 / n as f64);
        assert!((loss - loss_sum / n as f64).abs() < 1e-4);
    }

    #[test]
    fn compare_writes_summary_with_two_rows() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = toy_config(dir.path());
        cfg.epochs = 1;
        let out = dir.path().join("cmp");
        std::fs::create_dir_all(&out).unwrap();
        let outcome = compare_variants(&cfg, &out).unwrap();
        assert_eq!(outcome.rows.len(), 2);
        let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
        let lines: Vec<&str> = summary.lines().collect();
        assert_eq!(lines[0], "variant,best_test_acc,first_epoch_reaching_45pct");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("baseline,"));
        assert!(lines[2].starts_with("cst-global,"));
        assert!(out.join("baseline/metrics.csv").exists());
        assert!(out.join("cst-global/metrics.csv").exists());
    }

    #[test]
    fn divergence_guard_reports_epoch_and_batch() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = toy_config(dir.path());
        // An absurd learning rate blows the loss past the guard quickly.
        cfg.learning_rate = 1e6;
        cfg.epochs = 50;
        match train_model(&cfg) {
            Err(Error::Divergence { loss, .. }) => {
                assert!(!loss.is_finite() || loss > DIVERGENCE_LOSS_LIMIT);
            }
            other => panic!("expected divergence, got {:?}", other.map(|o| o.metrics)),
        }
    }

    #[test]
    fn first_batch_loss_is_identical_across_identity_variants() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = toy_config(dir.path());
        let splits = load_splits(&cfg).unwrap();
        let order = epoch_order(cfg.n_train, cfg.seed, 1);
        let (x, y) = gather_batch(
            &splits.train_x,
            &splits.train_y,
            &order[..cfg.batch_size],
        );
        let mut losses = Vec::new();
        for variant in [Variant::Baseline, Variant::CstGlobal, Variant::CstPredictor] {
            let model = Model::<f32>::build(variant, cfg.seed, false, None).unwrap();
            let (logits, _) = model.forward(&x).unwrap();
            let (loss, _) = softmax_cross_entropy(&logits, &y).unwrap();
            losses.push(loss);
        }
        assert_eq!(losses[0].to_bits(), losses[1].to_bits());
        assert_eq!(losses[0].to_bits(), losses[2].to_bits());
    }

    #[test]
    fn batch_gather_is_deterministic_for_a_seed() {
        let mut rng1 = RngStream::new(1, "epoch.1");
        let mut rng2 = RngStream::new(1, "epoch.1");
        let mut a: Vec<usize> = (0..100).collect();
        let mut b: Vec<usize> = (0..100).collect();
        rng1.shuffle(&mut a);
        rng2.shuffle(&mut b);
        assert_eq!(a, b);
    }
}
