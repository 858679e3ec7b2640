//! Class-weighted training loop and the evaluation metric suite.
//!
//! The objective per batch is
//! `-sum_i (a1 y_i ln p_i + a0 (1-y_i) ln(1-p_i)) + beta sum_k (|w_k|^2 + |b_k|^2) / 2`
//! with `a1` recomputed from each batch's label sum, so the rarer unstable
//! class is never drowned out. Optimization uses Adam-style adaptive moments
//! (plain SGD available), deterministic shuffling under the configured seed,
//! and early stopping on validation accuracy.

use ndarray::{Array3, ArrayD};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

use crate::model::{ModelError, Phase, StabilityModel};
use crate::sampling::{hex32, Dataset};
use crate::tensor::Tape;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// L2 regularization weight.
    pub beta: f64,
    /// Weight of the unstable (negative) class; the stable-class weight is
    /// computed per batch when `class_weighting` is on, else both are 1.
    pub alpha0: f64,
    pub class_weighting: bool,
    pub epochs: usize,
    pub patience: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 256,
            beta: 5e-4,
            alpha0: 1.0,
            class_weighting: true,
            epochs: 100,
            patience: 20,
            optimizer: Optimizer::Adam,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        if !(self.learning_rate >= 0.0) {
            return Err(TrainingError::Config("learning rate must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainingError::Config("batch size must be positive".into()));
        }
        if self.beta < 0.0 {
            return Err(TrainingError::Config("beta must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("loss diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("dataset fingerprint {got} does not match model fingerprint {want}")]
    Fingerprint { got: String, want: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Stable-class weight from the batch label sum: `B/sum(y) - 1`, zero when
/// the batch has no stable samples.
pub fn alpha1_for_batch(labels: &[f64]) -> f64 {
    let sum: f64 = labels.iter().sum();
    if sum == 0.0 {
        0.0
    } else {
        labels.len() as f64 / sum - 1.0
    }
}

/// Dense `[batch, N, T]` feature block for the given samples.
pub fn features_array(dataset: &Dataset, indices: &[usize]) -> Array3<f64> {
    let (n, t) = (dataset.n, dataset.record_len);
    let mut x = Array3::<f64>::zeros((indices.len(), n, t));
    for (row, &idx) in indices.iter().enumerate() {
        let f = &dataset.samples[idx].features;
        for i in 0..n {
            for k in 0..t {
                x[(row, i, k)] = f[i * t + k];
            }
        }
    }
    x
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
}

impl TrainHistory {
    /// CSV rows `epoch, train_loss, train_acc, val_loss, val_acc`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), std::io::Error> {
        let mut f = std::fs::File::create(path)?;
        writeln!(f, "epoch,train_loss,train_acc,val_loss,val_acc")?;
        for e in &self.epochs {
            writeln!(
                f,
                "{},{:.10e},{:.6},{:.10e},{:.6}",
                e.epoch, e.train_loss, e.train_acc, e.val_loss, e.val_acc
            )?;
        }
        Ok(())
    }
}

struct Adam {
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
    t: usize,
}

const ADAM_B1: f64 = 0.9;
const ADAM_B2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(shapes: &[&ArrayD<f64>]) -> Self {
        Adam {
            m: shapes.iter().map(|p| ArrayD::zeros(p.raw_dim())).collect(),
            v: shapes.iter().map(|p| ArrayD::zeros(p.raw_dim())).collect(),
            t: 0,
        }
    }

    fn step(&mut self, params: Vec<&mut ArrayD<f64>>, grads: &[ArrayD<f64>], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_B1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_B2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            ndarray::Zip::from(&mut *m).and(g).for_each(|m, &g| {
                *m = ADAM_B1 * *m + (1.0 - ADAM_B1) * g;
            });
            ndarray::Zip::from(&mut *v).and(g).for_each(|v, &g| {
                *v = ADAM_B2 * *v + (1.0 - ADAM_B2) * g * g;
            });
            ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                *p -= lr * (m / bc1) / ((v / bc2).sqrt() + ADAM_EPS);
            });
        }
    }
}

struct BatchOutcome {
    loss: f64,
    correct: usize,
    grads: Option<Vec<ArrayD<f64>>>,
}

/// One recorded objective evaluation; gradients are collected only when
/// `with_grads` is set.
fn run_batch(
    model: &mut StabilityModel,
    x: &Array3<f64>,
    labels: &[f64],
    cfg: &TrainConfig,
    phase: Phase,
    with_grads: bool,
) -> Result<BatchOutcome, TrainingError> {
    let mut tape = Tape::new();
    let pass = model.forward(&mut tape, x, phase)?;
    let (a0, a1) = if cfg.class_weighting {
        (cfg.alpha0, alpha1_for_batch(labels))
    } else {
        (1.0, 1.0)
    };
    let bce = tape.weighted_bce(pass.probs, labels, a0, a1).map_err(ModelError::from)?;
    let mut terms = vec![(bce, 1.0)];
    if cfg.beta > 0.0 {
        for &pid in &pass.param_ids {
            let sq = tape.squared_norm(pid);
            terms.push((sq, cfg.beta * 0.5));
        }
    }
    let loss_id = tape.scaled_sum(&terms).map_err(ModelError::from)?;
    let loss = tape.scalar(loss_id);
    let correct = tape
        .value(pass.probs)
        .iter()
        .zip(labels)
        .filter(|&(&p, &y)| (p > 0.5) == (y > 0.5))
        .count();
    let grads = if with_grads {
        tape.backward(loss_id);
        Some(
            pass.param_ids
                .iter()
                .map(|&id| {
                    tape.grad(id)
                        .cloned()
                        .unwrap_or_else(|| ArrayD::zeros(tape.value(id).raw_dim()))
                })
                .collect(),
        )
    } else {
        None
    };
    if phase == Phase::Train {
        model.update_running_stats(&pass.batch_stats);
    }
    Ok(BatchOutcome {
        loss,
        correct,
        grads,
    })
}

fn dataset_pass(
    model: &mut StabilityModel,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<(f64, f64), TrainingError> {
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let all: Vec<usize> = (0..dataset.len()).collect();
    for chunk in all.chunks(cfg.batch_size) {
        let x = features_array(dataset, chunk);
        let labels: Vec<f64> = chunk
            .iter()
            .map(|&i| dataset.samples[i].label as f64)
            .collect();
        let out = run_batch(model, &x, &labels, cfg, Phase::Infer, false)?;
        loss_sum += out.loss;
        correct += out.correct;
    }
    Ok((
        loss_sum / dataset.len() as f64,
        correct as f64 / dataset.len() as f64,
    ))
}

fn check_fingerprint(model: &StabilityModel, dataset: &Dataset) -> Result<(), TrainingError> {
    if dataset.fingerprint != model.fingerprint {
        return Err(TrainingError::Fingerprint {
            got: hex32(&dataset.fingerprint),
            want: hex32(&model.fingerprint),
        });
    }
    Ok(())
}

/// Mini-batch training with early stopping; the model is left holding the
/// parameters of the best-validation-accuracy epoch.
pub fn train(
    model: &mut StabilityModel,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainHistory, TrainingError> {
    cfg.validate()?;
    check_fingerprint(model, train_set)?;
    check_fingerprint(model, val_set)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(TrainingError::EmptyDataset);
    }
    let mut optimizer = {
        let params = model.named_parameters();
        let refs: Vec<&ArrayD<f64>> = params.iter().map(|(_, v)| *v).collect();
        Adam::new(&refs)
    };
    let mut history = TrainHistory::default();
    let mut best: Option<(Vec<ArrayD<f64>>, Vec<_>)> = None;
    let mut best_val_acc = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut since_best = 0usize;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let x = features_array(train_set, chunk);
            let labels: Vec<f64> = chunk
                .iter()
                .map(|&i| train_set.samples[i].label as f64)
                .collect();
            let out = run_batch(model, &x, &labels, cfg, Phase::Train, true)?;
            if !out.loss.is_finite() {
                return Err(TrainingError::Diverged {
                    epoch,
                    batch: batch_idx,
                });
            }
            loss_sum += out.loss;
            correct += out.correct;
            match cfg.optimizer {
                Optimizer::Adam => {
                    optimizer.step(
                        model.parameters_mut(),
                        out.grads.as_ref().unwrap(),
                        cfg.learning_rate,
                    );
                }
                Optimizer::Sgd => {
                    for (p, g) in model
                        .parameters_mut()
                        .into_iter()
                        .zip(out.grads.as_ref().unwrap())
                    {
                        ndarray::Zip::from(p).and(g).for_each(|p, &g| {
                            *p -= cfg.learning_rate * g;
                        });
                    }
                }
            }
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let train_acc = correct as f64 / train_set.len() as f64;
        let (val_loss, val_acc) = dataset_pass(model, val_set, cfg)?;
        history.epochs.push(EpochStats {
            epoch,
            train_loss,
            train_acc,
            val_loss,
            val_acc,
        });
        log::info!(
            "epoch {epoch}: train loss {train_loss:.6} acc {train_acc:.4}, val loss {val_loss:.6} acc {val_acc:.4}"
        );
        if val_acc > best_val_acc {
            best_val_acc = val_acc;
            best_epoch = epoch;
            since_best = 0;
            best = Some((
                model
                    .named_parameters()
                    .into_iter()
                    .map(|(_, v)| v.clone())
                    .collect(),
                model.bn_running_stats(),
            ));
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    if let Some((params, stats)) = best {
        for (slot, value) in model.parameters_mut().into_iter().zip(params) {
            *slot = value;
        }
        model.set_bn_running_stats(&stats);
    }
    history.best_epoch = best_epoch;
    history.best_val_acc = best_val_acc;
    Ok(history)
}

/// Confusion counts and derived rates; the positive class is stable (y=1).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub acc: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub tpr: f64,
    /// `None` when the dataset contains only one class.
    pub auc: Option<f64>,
}

/// Metrics at a decision threshold (`p > threshold` predicts stable).
pub fn compute_metrics(probs: &[f64], labels: &[f64], threshold: f64) -> Metrics {
    let (mut tp, mut tn, mut fp, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &y) in probs.iter().zip(labels) {
        let predicted_stable = p > threshold;
        let actually_stable = y > 0.5;
        match (predicted_stable, actually_stable) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
        }
    }
    let total = (tp + tn + fp + fn_) as f64;
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    Metrics {
        tp,
        tn,
        fp,
        fn_,
        acc: (tp + tn) as f64 / total,
        fpr: ratio(fp, fp + tn),
        fnr: ratio(fn_, fn_ + tp),
        tpr: ratio(tp, tp + fn_),
        auc: auc(probs, labels),
    }
}

/// Trapezoidal ROC area over all distinct predicted probabilities; `None`
/// when either class is absent.
pub fn auc(probs: &[f64], labels: &[f64]) -> Option<f64> {
    let pos = labels.iter().filter(|&&y| y > 0.5).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap());
    let mut area = 0.0;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let (mut prev_tpr, mut prev_fpr) = (0.0f64, 0.0f64);
    let mut i = 0usize;
    while i < order.len() {
        let score = probs[order[i]];
        while i < order.len() && probs[order[i]] == score {
            if labels[order[i]] > 0.5 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let tpr = tp as f64 / pos as f64;
        let fpr = fp as f64 / neg as f64;
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    Some(area)
}

/// Full evaluation of a model over a dataset at the 0.5 threshold.
pub fn evaluate(
    model: &StabilityModel,
    dataset: &Dataset,
    threshold: f64,
) -> Result<Metrics, TrainingError> {
    check_fingerprint(model, dataset)?;
    if dataset.is_empty() {
        return Err(TrainingError::EmptyDataset);
    }
    let mut probs = Vec::with_capacity(dataset.len());
    let all: Vec<usize> = (0..dataset.len()).collect();
    for chunk in all.chunks(256) {
        let x = features_array(dataset, chunk);
        probs.extend(model.predict(&x)?);
    }
    let labels = dataset.labels();
    Ok(compute_metrics(&probs, &labels, threshold))
}

pub fn write_metrics_json(metrics: &Metrics, path: impl AsRef<Path>) -> Result<(), std::io::Error> {
    std::fs::write(
        path,
        serde_json::to_string_pretty(metrics).unwrap() + "\n",
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::adjacency::AdjacencyVariant;
    use crate::model::DataFlow;
    use crate::sampling::Sample;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};

    #[test]
    fn alpha1_batch_formula() {
        assert_eq!(alpha1_for_batch(&vec![1.0; 256]), 0.0);
        let half: Vec<f64> = (0..256).map(|i| (i % 2) as f64).collect();
        assert_eq!(alpha1_for_batch(&half), 1.0);
        assert_eq!(alpha1_for_batch(&vec![0.0; 256]), 0.0);
        assert_eq!(alpha1_for_batch(&[1.0, 0.0, 0.0, 0.0]), 3.0);
    }

    #[test]
    fn regularizer_only_loss() {
        // Zero-entropy batch (p = y, clamped) plus one weight of 2 at
        // beta = 5e-4 gives beta * 0.5 * 4 = 1e-3.
        let mut tape = Tape::new();
        let p = tape.leaf(ndarray::arr1(&[1.0, 0.0]).into_dyn(), false);
        let bce = tape.weighted_bce(p, &[1.0, 0.0], 1.0, 1.0).unwrap();
        let w = tape.leaf(ndarray::arr1(&[2.0]).into_dyn(), true);
        let sq = tape.squared_norm(w);
        let loss = tape.scaled_sum(&[(bce, 1.0), (sq, 5e-4 * 0.5)]).unwrap();
        assert!((tape.scalar(loss) - 1e-3).abs() < 1e-4);
    }

    #[test]
    fn unit_weights_reduce_to_plain_bce() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let n = rng.gen_range(1..30);
            let probs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..0.99)).collect();
            let labels: Vec<f64> = (0..n).map(|_| (rng.gen_bool(0.5)) as u8 as f64).collect();
            let mut tape = Tape::new();
            let p = tape.leaf(ndarray::Array1::from(probs.clone()).into_dyn(), false);
            let got = tape.weighted_bce(p, &labels, 1.0, 1.0).unwrap();
            let want: f64 = probs
                .iter()
                .zip(&labels)
                .map(|(&p, &y)| -(y * p.ln() + (1.0 - y) * (1.0 - p).ln()))
                .sum();
            assert!((tape.scalar(got) - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn auc_four_sample_oracle() {
        let probs = [0.9, 0.8, 0.4, 0.3];
        let labels = [1.0, 0.0, 1.0, 0.0];
        assert!((auc(&probs, &labels).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn auc_matches_pairwise_statistic() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
        for case in 0..100 {
            let n = rng.gen_range(2..=20);
            let probs: Vec<f64> = (0..n)
                .map(|_| (rng.gen_range(0..10) as f64) / 10.0)
                .collect();
            let labels: Vec<f64> = (0..n).map(|_| rng.gen_bool(0.5) as u8 as f64).collect();
            let pos: Vec<f64> = probs
                .iter()
                .zip(&labels)
                .filter(|(_, &y)| y > 0.5)
                .map(|(&p, _)| p)
                .collect();
            let negs: Vec<f64> = probs
                .iter()
                .zip(&labels)
                .filter(|(_, &y)| y <= 0.5)
                .map(|(&p, _)| p)
                .collect();
            let got = auc(&probs, &labels);
            if pos.is_empty() || negs.is_empty() {
                assert!(got.is_none());
                continue;
            }
            let mut stat = 0.0;
            for &p in &pos {
                for &q in &negs {
                    stat += if p > q {
                        1.0
                    } else if p == q {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
            stat /= (pos.len() * negs.len()) as f64;
            let got = got.unwrap();
            assert!((got - stat).abs() <= 1e-12, "case {case}: {got} vs {stat}");
        }
    }

    #[test]
    fn metric_edge_cases() {
        let m = compute_metrics(&[0.9, 0.1, 0.8, 0.2], &[1.0, 0.0, 1.0, 0.0], 0.5);
        assert_eq!((m.tp, m.tn, m.fp, m.fn_), (2, 2, 0, 0));
        assert_eq!(m.acc, 1.0);
        assert_eq!(m.fpr, 0.0);
        assert_eq!(m.fnr, 0.0);
        assert_eq!(m.auc, Some(1.0));

        let m = compute_metrics(&[0.9, 0.9, 0.9], &[1.0, 0.0, 1.0], 0.5);
        assert_eq!(m.fpr, 1.0);
        assert_eq!(m.fnr, 0.0);

        let single = compute_metrics(&[0.9, 0.2], &[1.0, 1.0], 0.5);
        assert!(single.auc.is_none());
    }

    #[test]
    fn threshold_monotonicity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let probs: Vec<f64> = (0..200).map(|_| rng.gen_range(0.0..1.0)).collect();
        let labels: Vec<f64> = (0..200).map(|_| rng.gen_bool(0.6) as u8 as f64).collect();
        let mut prev_fpr = f64::INFINITY;
        for step in 0..=20 {
            let m = compute_metrics(&probs, &labels, step as f64 / 20.0);
            assert!(m.fpr <= prev_fpr + 1e-15);
            prev_fpr = m.fpr;
        }
    }

    fn toy_model(seed: u64) -> StabilityModel {
        let cfg = ModelConfig {
            nodes: 1,
            window: 2,
            gc_layers: 2,
            gc_features: 4,
            fc_width: 8,
            tc_blocks: 2,
            kernel: 2,
            filters: 4,
            mlp_hidden: 4,
            variant: AdjacencyVariant::Topology,
            mode: DataFlow::Literal,
        };
        StabilityModel::init(cfg, Array2::from_elem((1, 1), 1.0), [7u8; 32], seed).unwrap()
    }

    fn blob_dataset(per_class: usize, separation: f64, seed: u64) -> Dataset {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut samples = Vec::new();
        for label in [1u8, 0u8] {
            let center = if label == 1 { separation } else { -separation };
            for _ in 0..per_class {
                let features = vec![
                    center + rng.gen_range(-0.2..0.2),
                    center + rng.gen_range(-0.2..0.2),
                ];
                samples.push(Sample {
                    label,
                    kicked: vec![0],
                    stream: 0,
                    features,
                });
            }
        }
        Dataset {
            fingerprint: [7u8; 32],
            n: 1,
            record_len: 2,
            samples,
        }
    }

    fn toy_train_config() -> TrainConfig {
        TrainConfig {
            learning_rate: 1e-2,
            batch_size: 16,
            epochs: 50,
            patience: 50,
            seed: 1,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn separable_blobs_reach_perfect_train_accuracy() {
        let mut model = toy_model(5);
        let train_set = blob_dataset(40, 1.0, 8);
        let val_set = blob_dataset(10, 1.0, 9);
        let cfg = toy_train_config();
        let history = train(&mut model, &train_set, &val_set, &cfg).unwrap();
        assert!(!history.epochs.is_empty());
        let m = evaluate(&model, &train_set, 0.5).unwrap();
        assert_eq!(m.acc, 1.0, "history: {:?}", history.epochs.last());
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let mut model = toy_model(5);
        let before: Vec<ArrayD<f64>> = model
            .named_parameters()
            .into_iter()
            .map(|(_, v)| v.clone())
            .collect();
        let train_set = blob_dataset(10, 1.0, 8);
        let val_set = blob_dataset(4, 1.0, 9);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            ..toy_train_config()
        };
        train(&mut model, &train_set, &val_set, &cfg).unwrap();
        for ((_, after), before) in model.named_parameters().into_iter().zip(&before) {
            assert_eq!(after, before);
        }
    }

    #[test]
    fn training_is_deterministic_under_seed() {
        let run = || {
            let mut model = toy_model(5);
            let train_set = blob_dataset(20, 1.0, 8);
            let val_set = blob_dataset(5, 1.0, 9);
            let cfg = TrainConfig {
                epochs: 5,
                ..toy_train_config()
            };
            train(&mut model, &train_set, &val_set, &cfg)
                .unwrap()
                .epochs
                .iter()
                .map(|e| (e.train_loss, e.val_loss))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn fingerprint_mismatch_rejected() {
        let mut model = toy_model(5);
        let mut train_set = blob_dataset(10, 1.0, 8);
        train_set.fingerprint = [9u8; 32];
        let val_set = blob_dataset(4, 1.0, 9);
        assert!(matches!(
            train(&mut model, &train_set, &val_set, &toy_train_config()),
            Err(TrainingError::Fingerprint { .. })
        ));
        assert!(matches!(
            evaluate(&model, &train_set, 0.5),
            Err(TrainingError::Fingerprint { .. })
        ));
    }

    #[test]
    fn history_csv_layout() {
        let history = TrainHistory {
            epochs: vec![EpochStats {
                epoch: 0,
                train_loss: 0.5,
                train_acc: 0.75,
                val_loss: 0.6,
                val_acc: 0.7,
            }],
            best_epoch: 0,
            best_val_acc: 0.7,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("history.csv");
        history.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "epoch,train_loss,train_acc,val_loss,val_acc"
        );
        assert!(lines.next().unwrap().starts_with("0,"));
    }

    #[test]
    fn metrics_json_round_trip() {
        let m = compute_metrics(&[0.9, 0.1], &[1.0, 0.0], 0.5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.json");
        write_metrics_json(&m, &path).unwrap();
        let back: Metrics =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(back.tp, m.tp);
        assert_eq!(back.auc, m.auc);
    }
}
