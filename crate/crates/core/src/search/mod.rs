//! Predictor-guided architecture search.
//!
//! The first iteration picks candidates uniformly at random. Every later
//! iteration ranks the remaining pool by the predictor's preference over the
//! best architecture found so far and evaluates the top `per_iter`. After
//! each iteration except the last, a fresh predictor is fitted on all
//! evaluated architectures.

mod fit;

use std::collections::HashSet;

use rand::seq::index;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

pub use fit::{
    covering_normalizer, encode_all, evaluate_ranking, fit_predictor, pairwise_accuracy,
    transfer_predictor, utilities, FitConfig, TransferReport,
};

use crate::metrics::{precision_at_k, MetricsError, RankedList};
use crate::predictor::{EncodedGraph, PredictorError, PredictorModel};
use crate::search_space::{ArchSpec, HashId, SearchSpaceError};
use crate::seed;
use crate::shapes::{infer_shapes, ShapeError, ShapeNormalizer, TensorShape};
use crate::store::{DatasetProfile, OracleCurve, StoreError, DEFAULT_TOTAL_EPOCHS};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no architecture could be evaluated")]
    NothingEvaluated,
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Spec(#[from] SearchSpaceError),
}

pub type Result<T> = std::result::Result<T, SearchError>;

/// Source of validation accuracies.
pub trait Oracle: Sync {
    fn evaluate(&self, spec: &ArchSpec) -> std::result::Result<f64, String>;
}

impl<F> Oracle for F
where
    F: Fn(&ArchSpec) -> std::result::Result<f64, String> + Sync,
{
    fn evaluate(&self, spec: &ArchSpec) -> std::result::Result<f64, String> {
        self(spec)
    }
}

/// Synthetic oracle read at a fixed epoch.
#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    pub profile: DatasetProfile,
    pub epoch: u32,
    pub total_epochs: u32,
}

impl SyntheticOracle {
    pub fn new(profile: DatasetProfile, epoch: u32) -> Self {
        Self {
            profile,
            epoch,
            total_epochs: DEFAULT_TOTAL_EPOCHS.max(epoch),
        }
    }
}

impl Oracle for SyntheticOracle {
    fn evaluate(&self, spec: &ArchSpec) -> std::result::Result<f64, String> {
        OracleCurve::new(spec, &self.profile, self.total_epochs)
            .and_then(|c| c.accuracy(self.epoch))
            .map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchConfig {
    pub iterations: usize,
    pub per_iter: usize,
    pub fit: FitConfig,
    pub seed: u64,
}

/// One row of the search trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationTrace {
    pub iteration: usize,
    pub evaluated_count: usize,
    pub best_acc: f64,
    /// Precision@10 of the selecting predictor over the whole pool; absent
    /// for the random first iteration or without ground truth.
    pub precision_at_10: Option<f64>,
    #[serde(skip)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best: ArchSpec,
    pub best_acc: f64,
    /// Pool indices with their accuracies, in evaluation order.
    pub evaluated: Vec<(usize, f64)>,
    pub trace: Vec<IterationTrace>,
}

/// Mutable search bookkeeping.
#[derive(Debug, Clone)]
pub struct SearchState {
    /// Unevaluated pool indices, ascending.
    pub pool: Vec<usize>,
    pub evaluated: Vec<(usize, f64)>,
    pub best: Option<(usize, f64)>,
    pub iteration: usize,
}

impl SearchState {
    fn new(size: usize) -> Self {
        Self {
            pool: (0..size).collect(),
            evaluated: Vec::new(),
            best: None,
            iteration: 0,
        }
    }

    fn record(&mut self, idx: usize, acc: f64) {
        self.evaluated.push((idx, acc));
        if self.best.is_none_or(|(_, b)| acc > b) {
            self.best = Some((idx, acc));
        }
    }
}

fn top_indices(scores: &[f64], n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(n);
    order
}

/// Runs the search over `pool`, encoding shapes under `input`.
///
/// `truth`, when given, holds the ground-truth accuracy of every pool entry
/// and enables the per-iteration Precision@10 column.
pub fn run_search(
    pool: &[ArchSpec],
    input: TensorShape,
    oracle: &dyn Oracle,
    cfg: &SearchConfig,
    truth: Option<&[f64]>,
) -> Result<SearchOutcome> {
    if truth.is_some_and(|t| t.len() != pool.len()) {
        return Err(SearchError::InvalidArgument("pool and truth differ in length".into()));
    }
    if cfg.iterations == 0 || cfg.per_iter == 0 {
        return Err(SearchError::InvalidArgument("iterations and per_iter must be positive".into()));
    }
    if cfg.iterations * cfg.per_iter > pool.len() {
        return Err(SearchError::InvalidArgument(format!(
            "budget {} x {} exceeds pool of {}",
            cfg.iterations,
            cfg.per_iter,
            pool.len()
        )));
    }
    let truth_list = truth
        .map(|t| RankedList::from_scores(t.iter().copied().enumerate()))
        .transpose()?;
    let mut normalizer = ShapeNormalizer::default();
    for spec in pool {
        normalizer = normalizer.covering([&infer_shapes(spec, input)?]);
    }
    let encoder = cfg.fit.encoder(normalizer);
    let graphs = if cfg.iterations > 1 {
        encode_all(pool, input, &encoder)?
    } else {
        Vec::new()
    };
    let mut state = SearchState::new(pool.len());
    let mut model: Option<PredictorModel> = None;
    let mut failed: HashSet<HashId> = HashSet::new();
    let mut trace = Vec::new();
    for k in 1..=cfg.iterations {
        state.iteration = k;
        let mut warnings = Vec::new();
        if state.pool.is_empty() {
            trace.push(IterationTrace {
                iteration: k,
                evaluated_count: state.evaluated.len(),
                best_acc: state.best.map_or(f64::NAN, |b| b.1),
                precision_at_10: None,
                warnings: vec![format!("pool exhausted before iteration {k}; stopping early")],
            });
            break;
        }
        let n = cfg.per_iter.min(state.pool.len());
        let mut precision = None;
        let chosen: Vec<usize> = match (&model, state.best) {
            (Some(m), Some((best_idx, _))) => {
                let cands: Vec<&EncodedGraph> = state.pool.iter().map(|&i| &graphs[i]).collect();
                let logits = m.logits_against_best(&cands, &graphs[best_idx]);
                if let Some(truth_list) = &truth_list {
                    let all: Vec<&EncodedGraph> = graphs.iter().collect();
                    let util = utilities(m, &all);
                    let predicted = RankedList::from_scores(util.into_iter().enumerate())?;
                    precision = Some(precision_at_k(&predicted, truth_list, 10.min(pool.len()))?);
                }
                top_indices(&logits, n).into_iter().map(|j| state.pool[j]).collect()
            }
            _ => {
                let mut rng = seed::rng(cfg.seed, &format!("search/select/{k}"));
                let mut picks = index::sample(&mut rng, state.pool.len(), n).into_vec();
                picks.sort_unstable();
                picks.into_iter().map(|j| state.pool[j]).collect()
            }
        };
        let chosen_set: HashSet<usize> = chosen.iter().copied().collect();
        state.pool.retain(|i| !chosen_set.contains(i));
        let results: Vec<std::result::Result<f64, String>> =
            chosen.par_iter().map(|&i| oracle.evaluate(&pool[i])).collect();
        for (&i, res) in chosen.iter().zip(results) {
            match res {
                Ok(acc) => state.record(i, acc),
                Err(e) => {
                    let hash = pool[i].hash();
                    warnings.push(format!("evaluation of {hash} failed: {e}; returned to pool"));
                    if failed.insert(hash) {
                        state.pool.push(i);
                    }
                }
            }
        }
        state.pool.sort_unstable();
        if k < cfg.iterations && state.evaluated.len() >= 2 {
            let (idx, accs): (Vec<usize>, Vec<f64>) = state.evaluated.iter().copied().unzip();
            let train_graphs: Vec<EncodedGraph> = idx.iter().map(|&i| graphs[i].clone()).collect();
            model = Some(fit_predictor(
                &train_graphs,
                &accs,
                encoder,
                &cfg.fit,
                seed::derive(cfg.seed, &format!("search/fit/{k}")),
            ));
        }
        trace.push(IterationTrace {
            iteration: k,
            evaluated_count: state.evaluated.len(),
            best_acc: state.best.map_or(f64::NAN, |b| b.1),
            precision_at_10: precision,
            warnings,
        });
    }
    let (best_idx, best_acc) = state.best.ok_or(SearchError::NothingEvaluated)?;
    Ok(SearchOutcome {
        best: pool[best_idx].clone(),
        best_acc,
        evaluated: state.evaluated,
        trace,
    })
}

/// Uniform random search with `budget` evaluations; a one-iteration
/// [`run_search`].
pub fn random_search(
    pool: &[ArchSpec],
    input: TensorShape,
    oracle: &dyn Oracle,
    budget: usize,
    seed: u64,
) -> Result<SearchOutcome> {
    let cfg = SearchConfig {
        iterations: 1,
        per_iter: budget,
        fit: FitConfig::default(),
        seed,
    };
    run_search(pool, input, oracle, &cfg, None)
}

/// Writes the trace as CSV `iteration,evaluated_count,best_acc,precision_at_10`.
pub fn trace_csv(trace: &[IterationTrace]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["iteration", "evaluated_count", "best_acc", "precision_at_10"])
        .expect("in-memory write");
    for row in trace {
        w.write_record([
            row.iteration.to_string(),
            row.evaluated_count.to_string(),
            row.best_acc.to_string(),
            row.precision_at_10.map(|p| p.to_string()).unwrap_or_default(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}
