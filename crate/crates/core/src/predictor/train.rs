use ndarray::Zip;
use rand::seq::SliceRandom;

use super::encode::EncodedGraph;
use super::model::{loss_and_grad, PairLabel, Params, PredictorModel};
use crate::seed;

/// Mini-batch schedule for [`train`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 128,
            seed: 0,
        }
    }
}

/// Summary of one training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    /// Mean objective over the batches of each epoch.
    pub epoch_loss: Vec<f64>,
}

/// Adagrad step: `acc += g²; w -= lr * g / (sqrt(acc) + eps)`.
pub fn adagrad_step(model: &mut PredictorModel, grad: &Params) {
    let lr = model.hyper.lr;
    let eps = model.hyper.eps;
    let params = &mut model.params;
    let acc = &mut model.accumulators;
    for ((w, a), g) in params.gcn.iter_mut().zip(acc.gcn.iter_mut()).zip(&grad.gcn) {
        Zip::from(w).and(a).and(g).for_each(|w, a, &g| {
            *a += g * g;
            *w -= lr * g / (a.sqrt() + eps);
        });
    }
    Zip::from(&mut params.head_w)
        .and(&mut acc.head_w)
        .and(&grad.head_w)
        .for_each(|w, a, &g| {
            *a += g * g;
            *w -= lr * g / (a.sqrt() + eps);
        });
    let g = grad.head_b;
    acc.head_b += g * g;
    params.head_b -= lr * g / (acc.head_b.sqrt() + eps);
}

/// Trains `model` in place on labeled pairs over the graph table `graphs`.
///
/// Pairs are reshuffled every epoch from the `train/shuffle` stream of
/// `cfg.seed`; with zero epochs the model is returned untouched.
pub fn train(
    model: &mut PredictorModel,
    graphs: &[EncodedGraph],
    pairs: &[PairLabel],
    cfg: &TrainConfig,
) -> TrainLog {
    let mut log = TrainLog::default();
    if pairs.is_empty() {
        return log;
    }
    let mut rng = seed::rng(cfg.seed, "train/shuffle");
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let batch_size = cfg.batch_size.max(1);
    let mut batch = Vec::with_capacity(batch_size);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| pairs[i]));
            let (loss, grad) = loss_and_grad(
                &model.config,
                &model.params,
                model.hyper.weight_decay,
                graphs,
                &batch,
            );
            adagrad_step(model, &grad);
            sum += loss;
            batches += 1;
        }
        log.epoch_loss.push(sum / batches as f64);
    }
    log
}
