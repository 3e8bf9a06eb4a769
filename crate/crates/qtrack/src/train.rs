//! Training loop, optimizer, k-fold cross-validation, and metrics.
//!
//! Training minimizes mean binary cross-entropy over edge scores with Adam,
//! taking one optimizer step per event graph. K-fold cross-validation
//! shuffles the event list once with a seeded generator, splits it into k
//! near-equal folds, and trains k models from the same initial seed, each
//! holding out one fold for validation. Classification metrics are computed
//! at a fixed score threshold; any metric whose denominator is empty is
//! reported as 1 with an explicit flag rather than NaN.

use std::collections::BTreeMap;
use std::path::Path;
use std::rc::Rc;

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::graphs::EventGraph;
use crate::model::{gnn_forward, GnnParams, ModelVariant};

/// Hyperparameters for one training run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: ModelVariant,
    pub learning_rate: f64,
    pub epochs: usize,
    pub k_folds: usize,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: ModelVariant::UpgradedCgnn,
            learning_rate: 0.01,
            epochs: 10,
            k_folds: 5,
            threshold: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.k_folds < 2 {
            return Err(Error::Config(format!(
                "k_folds must be at least 2, got {}",
                self.k_folds
            )));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "threshold must lie in [0, 1], got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Adam moment estimates, keyed like the parameter store.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: BTreeMap<String, Array2<f64>>,
    pub v: BTreeMap<String, Array2<f64>>,
    pub t: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(params: &GnnParams) -> Self {
        let zeros = |v: &Array2<f64>| Array2::zeros(v.dim());
        AdamState {
            m: params.values.iter().map(|(k, v)| (k.clone(), zeros(v))).collect(),
            v: params.values.iter().map(|(k, v)| (k.clone(), zeros(v))).collect(),
            t: 0,
        }
    }

    /// One bias-corrected Adam update applied in place.
    pub fn step(
        &mut self,
        params: &mut GnnParams,
        grads: &BTreeMap<String, Array2<f64>>,
        lr: f64,
    ) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for (key, value) in params.values.iter_mut() {
            let g = grads
                .get(key)
                .ok_or_else(|| Error::Config(format!("missing gradient for {key}")))?;
            if g.dim() != value.dim() {
                return Err(Error::Shape(format!(
                    "gradient shape {:?} does not match parameter {key} {:?}",
                    g.dim(),
                    value.dim()
                )));
            }
            let m = self.m.get_mut(key).expect("state tracks params");
            let v = self.v.get_mut(key).expect("state tracks params");
            for ((p, &gi), (mi, vi)) in value
                .iter_mut()
                .zip(g.iter())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
                *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}

/// Shuffle 0..n once and split into k contiguous folds whose sizes differ
/// by at most one. Every index lands in exactly one fold.
pub fn kfold_split(n: usize, k: usize, rng: &mut impl Rng) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Config(format!("k_folds must be at least 2, got {k}")));
    }
    if n < k {
        return Err(Error::Config(format!(
            "cannot split {n} events into {k} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let len = base + usize::from(i < extra);
        folds.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(folds)
}

/// Threshold classification metrics. A metric with an empty denominator is
/// reported as 1 and flagged in `undefined`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub undefined: bool,
}

pub fn confusion_metrics(scores: &[f64], targets: &[f64], threshold: f64) -> Result<ConfusionMetrics> {
    if scores.len() != targets.len() {
        return Err(Error::Shape(format!(
            "scores ({}) and targets ({}) differ in length",
            scores.len(),
            targets.len()
        )));
    }
    let (mut tp, mut tn, mut fp, mut fnn) = (0u64, 0u64, 0u64, 0u64);
    for (&s, &y) in scores.iter().zip(targets) {
        let pred = s > threshold;
        let truth = y >= 0.5;
        match (pred, truth) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fnn += 1,
        }
    }
    let mut undefined = false;
    let mut ratio = |num: u64, den: u64| -> f64 {
        if den == 0 {
            undefined = true;
            1.0
        } else {
            num as f64 / den as f64
        }
    };
    let accuracy = ratio(tp + tn, tp + tn + fp + fnn);
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fnn);
    let specificity = ratio(tn, tn + fp);
    Ok(ConfusionMetrics {
        accuracy,
        precision,
        recall,
        specificity,
        undefined,
    })
}

/// One row of the per-epoch metrics log.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub fold: usize,
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
}

/// Final state of one trained fold.
pub struct FoldResult {
    pub fold: usize,
    pub params: GnnParams,
    pub val_loss: f64,
    pub val_metrics: ConfusionMetrics,
}

fn targets_of(graph: &EventGraph) -> Rc<Array2<f64>> {
    Rc::new(Array2::from_shape_vec((graph.n_edges(), 1), graph.y.clone()).expect("edge count"))
}

/// Loss and gradients of one event under the current parameters.
fn event_step(
    graph: &EventGraph,
    params: &GnnParams,
) -> Result<(f64, BTreeMap<String, Array2<f64>>)> {
    let mut tape = Tape::new();
    let pass = gnn_forward(&mut tape, graph, params, None)?;
    let loss = tape.bce_mean(pass.scores, targets_of(graph))?;
    tape.backward(loss)?;
    let loss_value = tape.value(loss)[(0, 0)];
    let grads = pass
        .param_vars
        .iter()
        .map(|(k, &v)| (k.clone(), tape.grad(v).to_owned()))
        .collect();
    Ok((loss_value, grads))
}

/// Mean loss and pooled metrics over a set of events. Events with no edges
/// contribute nothing.
pub fn evaluate(
    graphs: &[&EventGraph],
    params: &GnnParams,
    threshold: f64,
) -> Result<(f64, ConfusionMetrics)> {
    let mut losses = Vec::new();
    let mut all_scores = Vec::new();
    let mut all_targets = Vec::new();
    for graph in graphs {
        if graph.n_edges() == 0 {
            continue;
        }
        let mut tape = Tape::new();
        let pass = gnn_forward(&mut tape, graph, params, None)?;
        let loss = tape.bce_mean(pass.scores, targets_of(graph))?;
        losses.push(tape.value(loss)[(0, 0)]);
        all_scores.extend(tape.value(pass.scores).column(0).iter().copied());
        all_targets.extend(graph.y.iter().copied());
    }
    if losses.is_empty() {
        return Err(Error::Config("no edges in any evaluation event".into()));
    }
    let mean_loss = losses.iter().sum::<f64>() / losses.len() as f64;
    let metrics = confusion_metrics(&all_scores, &all_targets, threshold)?;
    Ok((mean_loss, metrics))
}

/// Train one model on `train` and monitor `val`, one Adam step per event.
/// Returns the trained parameters and the per-epoch metrics log.
pub fn train_single(
    train: &[&EventGraph],
    val: &[&EventGraph],
    config: &TrainConfig,
    fold: usize,
) -> Result<(GnnParams, Vec<MetricsRecord>)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let mut params = GnnParams::init(config.variant, config.seed);
    let mut adam = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f0e ^ fold as u64);
    let mut records = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            if train[i].n_edges() == 0 {
                continue;
            }
            let (loss, grads) = event_step(train[i], &params)?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite loss in fold {fold}, epoch {epoch}"
                )));
            }
            adam.step(&mut params, &grads, config.learning_rate)?;
        }
        for (split, set) in [("train", train), ("val", val)] {
            if set.is_empty() {
                continue;
            }
            let (loss, m) = evaluate(set, &params, config.threshold)?;
            records.push(MetricsRecord {
                fold,
                epoch: epoch + 1,
                split: split.to_string(),
                loss,
                accuracy: m.accuracy,
                precision: m.precision,
                recall: m.recall,
                specificity: m.specificity,
            });
        }
    }
    Ok((params, records))
}

/// K-fold cross-validation: k models trained from the same seed, each
/// validated on its held-out fold.
pub fn train_kfold(
    graphs: &[EventGraph],
    config: &TrainConfig,
) -> Result<(Vec<FoldResult>, Vec<MetricsRecord>)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let folds = kfold_split(graphs.len(), config.k_folds, &mut rng)?;
    let mut results = Vec::new();
    let mut records = Vec::new();
    for (fold, held_out) in folds.iter().enumerate() {
        let val: Vec<&EventGraph> = held_out.iter().map(|&i| &graphs[i]).collect();
        let train: Vec<&EventGraph> = (0..graphs.len())
            .filter(|i| !held_out.contains(i))
            .map(|i| &graphs[i])
            .collect();
        let (params, fold_records) = train_single(&train, &val, config, fold)?;
        let (val_loss, val_metrics) = evaluate(&val, &params, config.threshold)?;
        records.extend(fold_records);
        results.push(FoldResult {
            fold,
            params,
            val_loss,
            val_metrics,
        });
    }
    Ok((results, records))
}

/// Cross-fold mean and sample standard deviation of the final validation
/// metrics, shaped for the run summary.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Summary {
    pub variant: String,
    pub k_folds: usize,
    pub mean: BTreeMap<String, f64>,
    pub std: BTreeMap<String, f64>,
}

pub fn summarize(variant: ModelVariant, folds: &[FoldResult]) -> Summary {
    let fields: [(&str, fn(&FoldResult) -> f64); 5] = [
        ("loss", |f| f.val_loss),
        ("accuracy", |f| f.val_metrics.accuracy),
        ("precision", |f| f.val_metrics.precision),
        ("recall", |f| f.val_metrics.recall),
        ("specificity", |f| f.val_metrics.specificity),
    ];
    let mut mean = BTreeMap::new();
    let mut std = BTreeMap::new();
    let n = folds.len() as f64;
    for (name, get) in fields {
        let values: Vec<f64> = folds.iter().map(get).collect();
        let mu = values.iter().sum::<f64>() / n;
        let var = if folds.len() > 1 {
            values.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        mean.insert(name.to_string(), mu);
        std.insert(name.to_string(), var.sqrt());
    }
    Summary {
        variant: variant.name().to_string(),
        k_folds: folds.len(),
        mean,
        std,
    }
}

/// Write the per-epoch log as CSV with a fixed header.
pub fn write_metrics_csv(records: &[MetricsRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))?;
    writer
        .write_record([
            "fold",
            "epoch",
            "split",
            "loss",
            "accuracy",
            "precision",
            "recall",
            "specificity",
        ])
        .and_then(|_| {
            records.iter().try_for_each(|r| {
                writer.write_record([
                    r.fold.to_string(),
                    r.epoch.to_string(),
                    r.split.clone(),
                    format!("{:.8}", r.loss),
                    format!("{:.8}", r.accuracy),
                    format!("{:.8}", r.precision),
                    format!("{:.8}", r.recall),
                    format!("{:.8}", r.specificity),
                ])
            })
        })
        .map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))?;
    writer
        .flush()
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn write_summary_json(summary: &Summary, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let body = serde_json::to_string_pretty(summary)
        .map_err(|e| Error::Numerical(format!("summary encode: {e}")))?;
    std::fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
}
