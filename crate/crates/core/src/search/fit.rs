use serde::Serialize;

use super::{Result, SearchError};
use crate::metrics::{kendall_tau, precision_at_k, RankedList};
use crate::predictor::{
    train, AdjacencyNorm, EncodedGraph, EncoderConfig, Hyper, ModelConfig, PredictorModel,
    TrainConfig,
};
use crate::search_space::ArchSpec;
use crate::seed;
use crate::shapes::{infer_shapes, ShapeNormalizer, TensorShape};
use crate::store::{label_pairs, BenchRecord, DatasetProfile, PairMode};

/// How a predictor is fitted to measured accuracies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub model: ModelConfig,
    pub hyper: Hyper,
    pub epochs: usize,
    pub batch_size: usize,
    /// Cap on labeled pairs per fit; `None` uses every ordered pair.
    pub max_pairs: Option<usize>,
    pub vertex_shapes: bool,
    pub adjacency: AdjacencyNorm,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            hyper: Hyper::default(),
            epochs: 20,
            batch_size: 128,
            max_pairs: Some(4096),
            vertex_shapes: true,
            adjacency: AdjacencyNorm::Symmetric,
        }
    }
}

impl FitConfig {
    pub fn pair_mode(&self) -> PairMode {
        self.max_pairs.map_or(PairMode::Ordered, PairMode::Subsample)
    }

    pub fn encoder(&self, normalizer: ShapeNormalizer) -> EncoderConfig {
        EncoderConfig {
            normalizer,
            vertex_shapes: self.vertex_shapes,
            adjacency: self.adjacency,
        }
    }
}

/// Default maxima raised to cover every spec under every profile.
pub fn covering_normalizer<'a>(
    specs: impl IntoIterator<Item = &'a ArchSpec>,
    profiles: &[DatasetProfile],
) -> Result<ShapeNormalizer> {
    let mut norm = ShapeNormalizer::default();
    for spec in specs {
        for p in profiles {
            norm = norm.covering([&infer_shapes(spec, p.input_shape)?]);
        }
    }
    Ok(norm)
}

pub fn encode_all(
    specs: &[ArchSpec],
    input: TensorShape,
    encoder: &EncoderConfig,
) -> Result<Vec<EncodedGraph>> {
    specs
        .iter()
        .map(|s| encoder.encode_spec(s, input).map_err(SearchError::from))
        .collect()
}

/// Trains a fresh predictor on pairs labeled by `accs` (aligned with `graphs`).
///
/// Initialization, pair subsampling and shuffling use the `fit/init`,
/// `fit/pairs` and `fit/train` streams of `seed`.
pub fn fit_predictor(
    graphs: &[EncodedGraph],
    accs: &[f64],
    encoder: EncoderConfig,
    cfg: &FitConfig,
    seed: u64,
) -> PredictorModel {
    let mut model = PredictorModel::new(cfg.model, cfg.hyper, encoder, seed::derive(seed, "fit/init"));
    let pairs = label_pairs(accs, cfg.pair_mode(), seed::derive(seed, "fit/pairs"));
    let train_cfg = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        seed: seed::derive(seed, "fit/train"),
    };
    train(&mut model, graphs, &pairs, &train_cfg);
    model
}

/// Per-graph ranking utility: larger means predicted better.
///
/// For either head the logit difference against a fixed reference is this
/// utility plus a constant, so sorting by it reproduces the head's order.
pub fn utilities(model: &PredictorModel, graphs: &[&EncodedGraph]) -> Vec<f64> {
    let Some(first) = graphs.first() else {
        return Vec::new();
    };
    model.logits_against_best(graphs, first)
}

/// Fraction of untied pairs whose predicted order matches `accs`.
pub fn pairwise_accuracy(model: &PredictorModel, graphs: &[EncodedGraph], accs: &[f64]) -> f64 {
    let refs: Vec<&EncodedGraph> = graphs.iter().collect();
    let emb = model.embed_all(&refs);
    let mut correct = 0usize;
    let mut counted = 0usize;
    for i in 0..graphs.len() {
        for j in (i + 1)..graphs.len() {
            if accs[i] == accs[j] {
                continue;
            }
            let d = model.logit_difference(emb.row(i), emb.row(j));
            counted += 1;
            if (d > 0.0) == (accs[i] > accs[j]) {
                correct += 1;
            }
        }
    }
    if counted == 0 {
        0.0
    } else {
        correct as f64 / counted as f64
    }
}

/// Frozen-model quality on one dataset's ground truth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferReport {
    pub dataset: String,
    pub architectures: usize,
    pub pairwise_accuracy: f64,
    pub precision_at_10: f64,
    pub kendall_tau: f64,
}

/// Evaluates `model` against `truth` (aligned with `graphs`) without refitting.
pub fn evaluate_ranking(
    model: &PredictorModel,
    dataset: &str,
    graphs: &[EncodedGraph],
    truth: &[f64],
) -> Result<TransferReport> {
    if graphs.len() < 2 || graphs.len() != truth.len() {
        return Err(SearchError::InvalidArgument(format!(
            "need at least two architectures with ground truth, got {} graphs and {} values",
            graphs.len(),
            truth.len()
        )));
    }
    let refs: Vec<&EncodedGraph> = graphs.iter().collect();
    let util = utilities(model, &refs);
    let predicted = RankedList::from_scores(util.iter().copied().enumerate())?;
    let actual = RankedList::from_scores(truth.iter().copied().enumerate())?;
    let k = 10.min(graphs.len());
    Ok(TransferReport {
        dataset: dataset.to_string(),
        architectures: graphs.len(),
        pairwise_accuracy: pairwise_accuracy(model, graphs, truth),
        precision_at_10: precision_at_k(&predicted, &actual, k)?,
        kendall_tau: kendall_tau(&util, truth)?,
    })
}

/// Evaluates a frozen model on the `dataset` logs of `records` at `epoch`
/// (default: each record's last logged epoch), encoding vertex shapes under
/// each log's input shape.
pub fn transfer_predictor(
    model: &PredictorModel,
    dataset: &str,
    records: &[BenchRecord],
    epoch: Option<u32>,
) -> Result<TransferReport> {
    let mut graphs = Vec::new();
    let mut truth = Vec::new();
    for r in records {
        let Some(log) = r.log(dataset) else { continue };
        let acc = match epoch {
            Some(e) => log.accuracy_at(e),
            None => log.epochs.last().map(|e| e.val_acc),
        };
        if let Some(acc) = acc {
            graphs.push(model.encoder.encode_spec(&r.spec, log.input_shape)?);
            truth.push(acc);
        }
    }
    if graphs.is_empty() {
        return Err(SearchError::InvalidArgument(format!(
            "no records carry {dataset} results"
        )));
    }
    evaluate_ranking(model, dataset, &graphs, &truth)
}
