use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{self, BackpropMode, Objective};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::network::Network;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Fraction of samples held out for validation, in `[0, 1)`.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
            validation_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight decay must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Accuracy of the forward passes made while training this epoch.
    pub train_accuracy: f64,
    /// `None` when no samples are held out.
    pub validation_accuracy: Option<f64>,
    /// Mean cross-entropy over this epoch's training samples.
    pub loss: f64,
}

/// Fraction of `indices` the network classifies correctly.
pub fn evaluate<T: Scalar>(net: &Network<T>, data: &LabeledDataset<T>, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let hits = indices
        .par_iter()
        .map(|&i| {
            let (img, label) = data.image(i).expect("index from the dataset");
            autodiff::forward(net, img).map(|r| (r.predicted() == label) as usize)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / indices.len() as f64)
}

/// Minibatch SGD with momentum on cross-entropy.
///
/// Per-sample gradients may be computed in parallel; they are reduced in
/// sample order so results do not depend on the thread count.
pub fn train<T: Scalar>(
    mut net: Network<T>,
    data: &LabeledDataset<T>,
    cfg: &TrainConfig,
) -> Result<(Network<T>, Vec<EpochMetrics>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.classes() > net.classes() {
        return Err(Error::InvalidDataset(format!(
            "dataset has {} classes, network only {}",
            data.classes(),
            net.classes()
        )));
    }
    if let Some(shape) = data.image_shape() {
        if shape != net.input_shape() {
            return Err(Error::ShapeMismatch {
                expected: net.input_shape().to_vec(),
                actual: shape.to_vec(),
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let mut n_val = (cfg.validation_fraction * data.len() as f64).round() as usize;
    if n_val >= data.len() {
        n_val = data.len() - 1;
    }
    let val: Vec<usize> = order[..n_val].to_vec();
    let mut train_idx: Vec<usize> = order[n_val..].to_vec();

    let lr = T::of(cfg.learning_rate);
    let mu = T::of(cfg.momentum);
    let wd = T::of(cfg.weight_decay);
    let mut velocity: Vec<Tensor<T>> = net.parameters().iter().map(|p| Tensor::zeros(p.shape())).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in train_idx.chunks(cfg.batch_size) {
            let per_sample = batch
                .par_iter()
                .map(|&i| {
                    let (img, label) = data.image(i).expect("index from the dataset");
                    let rec = autodiff::forward(&net, img)?;
                    let obj = Objective::CrossEntropy(label);
                    let loss = rec.objective_value(&net, obj).as_f64();
                    let hit = rec.predicted() == label;
                    let grads = autodiff::backward(&net, &rec, obj, BackpropMode::Standard, true, false)?;
                    Ok((loss, hit, grads.into_params().expect("requested")))
                })
                .collect::<Result<Vec<_>>>()?;

            let mut sum: Vec<Tensor<T>> = velocity.iter().map(|v| Tensor::zeros(v.shape())).collect();
            for (loss, hit, grads) in &per_sample {
                loss_sum += loss;
                correct += *hit as usize;
                for (acc, g) in sum.iter_mut().zip(grads) {
                    for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
            }
            if !loss_sum.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            let scale = T::one() / T::of_usize(batch.len());
            for ((p, v), g) in net.parameters_mut().into_iter().zip(&mut velocity).zip(&sum) {
                for ((w, vel), &gr) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                    *vel = mu * *vel + gr * scale + wd * *w;
                    *w -= lr * *vel;
                }
            }
            if !net.parameters_finite() {
                return Err(Error::Diverged { epoch });
            }
        }
        let validation_accuracy = if val.is_empty() {
            None
        } else {
            Some(evaluate(&net, data, &val)?)
        };
        history.push(EpochMetrics {
            epoch,
            train_accuracy: correct as f64 / train_idx.len() as f64,
            validation_accuracy,
            loss: loss_sum / train_idx.len() as f64,
        });
    }
    Ok((net, history))
}

/// Tab-separated `epoch, train_acc, val_acc, loss`, one line per epoch.
pub fn write_metrics_log(history: &[EpochMetrics], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "epoch\ttrain_acc\tval_acc\tloss")?;
    for m in history {
        let val = m
            .validation_accuracy
            .map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"));
        writeln!(out, "{}\t{:.6}\t{}\t{:.6}", m.epoch, m.train_accuracy, val, m.loss)?;
    }
    Ok(())
}
