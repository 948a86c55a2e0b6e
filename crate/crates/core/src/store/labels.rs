use rand::seq::index;

use super::{BenchRecord, Result, StoreError};
use crate::predictor::{PairLabel, RankTarget};
use crate::search_space::HashId;
use crate::seed::{self, mix64};

/// Which pairs [`label_pairs`] emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairMode {
    /// Both orientations of every pair, `n (n - 1)` before ties.
    Ordered,
    /// Every unordered pair once, lower index first.
    Unordered,
    /// At most this many distinct ordered pairs, drawn without replacement.
    Subsample(usize),
}

/// Accuracy of every record at `(dataset, epoch)`, in record order.
pub fn accuracies_at(records: &[BenchRecord], dataset: &str, epoch: u32) -> Result<Vec<f64>> {
    let mut missing = Vec::new();
    let accs: Vec<f64> = records
        .iter()
        .map(|r| {
            r.accuracy(dataset, epoch).unwrap_or_else(|| {
                missing.push(r.hash.to_string());
                f64::NAN
            })
        })
        .collect();
    if missing.is_empty() {
        Ok(accs)
    } else {
        Err(StoreError::MissingEpoch {
            dataset: dataset.to_string(),
            epoch,
            hashes: missing,
        })
    }
}

/// Pair labels over indices into `accs`; tied pairs are dropped.
///
/// Subsampling draws from the `labels/pairs` stream of `seed`.
pub fn label_pairs(accs: &[f64], mode: PairMode, seed: u64) -> Vec<PairLabel> {
    let n = accs.len();
    let label = |i: usize, j: usize| {
        RankTarget::from_scores(accs[i], accs[j]).map(|target| PairLabel {
            first: i,
            second: j,
            target,
        })
    };
    match mode {
        PairMode::Ordered => (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .filter_map(|(i, j)| label(i, j))
            .collect(),
        PairMode::Unordered => (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .filter_map(|(i, j)| label(i, j))
            .collect(),
        PairMode::Subsample(max) => {
            if n < 2 {
                return Vec::new();
            }
            let total = n * (n - 1);
            let mut rng = seed::rng(seed, "labels/pairs");
            let mut picks = index::sample(&mut rng, total, max.min(total)).into_vec();
            picks.sort_unstable();
            picks
                .into_iter()
                .filter_map(|k| {
                    let i = k / (n - 1);
                    let r = k % (n - 1);
                    label(i, if r >= i { r + 1 } else { r })
                })
                .collect()
        }
    }
}

/// Share of architectures [`holdout`] assigns to validation.
pub const HOLDOUT_FRACTION: f64 = 0.2;

/// Hash-based train/validation split; `true` places `hash` in validation.
pub fn holdout(hash: &HashId, seed: u64) -> bool {
    mix64(hash.prefix_u64() ^ mix64(seed)).is_multiple_of(5)
}
