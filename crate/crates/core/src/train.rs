//! Mini-batch SGD training, evaluation and confusion matrices.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentPolicy;
use crate::autodiff::Tape;
use crate::dataset::{load_batch, BatchAugment, ImageSource};
use crate::error::{Error, Result};
use crate::optim::{clip_grad_norm, Sgd};
use crate::seed::derive_seed;
use crate::vit::ViTModel;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub momentum: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_grad: Option<f64>,
    /// Also augment the validation set when a policy is given.
    pub augment_val: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            lr: 0.03,
            seed: 42,
            momentum: 0.0,
            clip_grad: None,
            augment_val: true,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be >= 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if let Some(c) = self.clip_grad {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochMetrics>,
    /// Epoch with the highest validation accuracy (earliest on ties).
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub steps: usize,
}

impl TrainReport {
    pub fn final_epoch(&self) -> &EpochMetrics {
        self.history.last().expect("at least one epoch")
    }

    pub fn best(&self) -> &EpochMetrics {
        &self.history[self.best_epoch]
    }

    /// `epoch,train_loss,train_acc,val_loss,val_acc` with 6 decimals.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
        for m in &self.history {
            s.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6}\n",
                m.epoch, m.train_loss, m.train_acc, m.val_loss, m.val_acc
            ));
        }
        s
    }
}

pub struct TrainOutcome {
    pub report: TrainReport,
    /// Weights after the best validation epoch.
    pub best: ViTModel,
    /// Weights after the last step.
    pub last: ViTModel,
}

fn check_classes(model: &ViTModel, data: &dyn ImageSource, what: &str) -> Result<()> {
    let (k, n) = (model.config().num_classes, data.num_classes());
    if k != n {
        return Err(Error::Config(format!(
            "model has {k} classes, {what} data has {n}"
        )));
    }
    Ok(())
}

/// Trains for `hp.epochs` passes of `⌈|train| / batch⌉` SGD steps each.
/// Sample order is reshuffled every epoch from `(hp.seed, epoch)`; the
/// augmentation draw index of a sample is its global position in the
/// sample stream.
pub fn train(
    model: &ViTModel,
    train_data: &dyn ImageSource,
    val_data: &dyn ImageSource,
    hp: &HyperParams,
    augment: Option<&AugmentPolicy>,
) -> Result<TrainOutcome> {
    hp.validate()?;
    check_classes(model, train_data, "training")?;
    check_classes(model, val_data, "validation")?;
    if train_data.is_empty() || val_data.is_empty() {
        return Err(Error::Config(format!(
            "training and validation sets must be nonempty, got {} and {} samples",
            train_data.len(),
            val_data.len()
        )));
    }
    if let Some(p) = augment {
        p.validate()?;
    }
    let res = model.config().image_resolution;
    let n = train_data.len();
    let mut current = model.clone();
    let mut best = model.clone();
    let mut opt = Sgd::new(hp.lr, hp.momentum)?;
    let mut history = Vec::with_capacity(hp.epochs);
    let mut best_epoch = 0;
    let mut steps = 0;
    let val_policy = augment.filter(|_| hp.augment_val).map(|p| AugmentPolicy {
        seed: derive_seed(p.seed, "val-augment", 0),
        ..*p
    });

    for epoch in 0..hp.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(hp.seed, "shuffle", epoch as u64)));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, chunk) in order.chunks(hp.batch_size).enumerate() {
            let first_draw = (epoch * n + b * hp.batch_size) as u64;
            let aug = augment.map(|policy| BatchAugment { policy, first_draw });
            let (x, labels) = load_batch(train_data, chunk, res, aug)?;

            let mut tape = Tape::new();
            let bound = current.params().bind(&mut tape);
            let xv = tape.constant(x);
            let out = current.forward_on(&mut tape, &bound, xv, None)?;
            let loss = tape.cross_entropy(out.logits, &labels)?;
            tape.backward(loss)?;

            loss_sum += tape.value(loss).item()? * chunk.len() as f64;
            let preds = tape.value(out.logits).argmax_rows();
            correct += preds.iter().zip(&labels).filter(|(p, l)| p == l).count();

            let params = current.params_mut();
            params.accumulate_grads(&tape, &bound)?;
            if let Some(max) = hp.clip_grad {
                clip_grad_norm(params.as_mut_slice(), max);
            }
            opt.step(params.as_mut_slice())?;
            steps += 1;
        }
        let val_aug = val_policy.as_ref().map(|policy| BatchAugment {
            policy,
            first_draw: (epoch * val_data.len()) as u64,
        });
        let (val_acc, val_loss) = evaluate_with(&current, val_data, hp.batch_size, val_aug)?;
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / n as f64,
            train_acc: correct as f64 / n as f64,
            val_loss,
            val_acc,
        };
        log::info!(
            "epoch {epoch}: train loss {:.4} acc {:.4}, val loss {:.4} acc {:.4}",
            m.train_loss, m.train_acc, m.val_loss, m.val_acc
        );
        if epoch == 0 || val_acc > history.iter().map(|h: &EpochMetrics| h.val_acc).fold(f64::MIN, f64::max) {
            best_epoch = epoch;
            best = current.clone();
        }
        history.push(m);
    }
    let best_val_acc = history[best_epoch].val_acc;
    Ok(TrainOutcome {
        report: TrainReport {
            history,
            best_epoch,
            best_val_acc,
            steps,
        },
        best,
        last: current,
    })
}

/// Per-sample `(predicted, true, loss)` over the whole source.
pub fn predict(
    model: &ViTModel,
    data: &dyn ImageSource,
    batch_size: usize,
    augment: Option<BatchAugment<'_>>,
) -> Result<Vec<(usize, usize, f64)>> {
    if data.is_empty() {
        return Err(Error::Evaluation("cannot evaluate an empty dataset".into()));
    }
    check_classes(model, data, "evaluation")?;
    let batch_size = batch_size.max(1);
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for (b, chunk) in idx.chunks(batch_size).enumerate() {
        let aug = augment.map(|a| BatchAugment {
            first_draw: a.first_draw + (b * batch_size) as u64,
            ..a
        });
        let (x, labels) = load_batch(data, chunk, model.config().image_resolution, aug)?;
        let logits = model.forward(&x)?;
        let k = logits.shape()[1];
        for (r, &label) in labels.iter().enumerate() {
            let row = logits.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            let pred = (0..k).fold(0, |best, j| if row[j] > row[best] { j } else { best });
            out.push((pred, label, lse - row[label]));
        }
    }
    Ok(out)
}

/// `(accuracy, mean cross-entropy)` without augmentation.
pub fn evaluate(model: &ViTModel, data: &dyn ImageSource, batch_size: usize) -> Result<(f64, f64)> {
    evaluate_with(model, data, batch_size, None)
}

pub fn evaluate_with(
    model: &ViTModel,
    data: &dyn ImageSource,
    batch_size: usize,
    augment: Option<BatchAugment<'_>>,
) -> Result<(f64, f64)> {
    let preds = predict(model, data, batch_size, augment)?;
    let correct = preds.iter().filter(|(p, l, _)| p == l).count();
    let loss = preds.iter().map(|(_, _, l)| l).sum::<f64>() / preds.len() as f64;
    Ok((correct as f64 / preds.len() as f64, loss))
}

/// Counts indexed `[true][predicted]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_pairs(labels: Vec<String>, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let k = labels.len();
        let mut counts = vec![vec![0u64; k]; k];
        for (truth, pred) in pairs {
            if truth >= k || pred >= k {
                return Err(Error::Index(format!("class pair ({truth}, {pred}) outside {k} classes")));
            }
            counts[truth][pred] += 1;
        }
        Ok(Self { labels, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    /// Each nonempty row divided by its sum; empty rows stay zero.
    pub fn normalized(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let s: u64 = row.iter().sum();
                row.iter().map(|&c| if s == 0 { 0.0 } else { c as f64 / s as f64 }).collect()
            })
            .collect()
    }

    /// Row-normalized matrix with 6 decimals; labels head the rows and columns.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("true\\predicted");
        for l in &self.labels {
            s.push(',');
            s.push_str(l);
        }
        s.push('\n');
        for (label, row) in self.labels.iter().zip(self.normalized()) {
            s.push_str(label);
            for v in row {
                s.push_str(&format!(",{v:.6}"));
            }
            s.push('\n');
        }
        s
    }
}

pub fn confusion_matrix(model: &ViTModel, data: &dyn ImageSource, batch_size: usize) -> Result<ConfusionMatrix> {
    let preds = predict(model, data, batch_size, None)?;
    ConfusionMatrix::from_pairs(
        data.label_names().to_vec(),
        preds.into_iter().map(|(p, l, _)| (l, p)),
    )
}
