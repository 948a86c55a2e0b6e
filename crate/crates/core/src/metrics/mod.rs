//! Ranking quality measures and ranking-evolution analyses.

mod analysis;

use std::collections::{HashMap, HashSet};
use std::hash::Hash;

use thiserror::Error;

pub use analysis::{
    cross_dataset_matrix, ndcg_vs_final_curve, rank_change_stats, CrossMatrix, RankChangeStats,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(MetricsError::InvalidArgument(msg.into()))
}

/// Default number of relevance grades.
pub const RELEVANCE_LEVELS: u32 = 16;

/// Items sorted by descending score; equal scores are ordered by ascending id.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList<T> {
    items: Vec<(T, f64)>,
}

impl<T: Ord + Clone + Hash> RankedList<T> {
    pub fn from_scores(items: impl IntoIterator<Item = (T, f64)>) -> Result<Self> {
        let mut items: Vec<(T, f64)> = items.into_iter().collect();
        if items.iter().any(|(_, s)| s.is_nan()) {
            return invalid("NaN score");
        }
        let mut seen = HashSet::with_capacity(items.len());
        if !items.iter().all(|(id, _)| seen.insert(id)) {
            return invalid("duplicate id in ranked list");
        }
        items.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(Self { items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[(T, f64)] {
        &self.items
    }

    pub fn ids(&self) -> impl Iterator<Item = &T> {
        self.items.iter().map(|(id, _)| id)
    }

    pub fn top(&self, k: usize) -> impl Iterator<Item = &T> {
        self.ids().take(k)
    }

    fn same_ids(&self, other: &Self) -> bool {
        self.len() == other.len() && {
            let mine: HashSet<&T> = self.ids().collect();
            other.ids().all(|id| mine.contains(id))
        }
    }
}

/// Graded relevance per id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelevanceAssignment<T: Hash + Eq> {
    pub rel: HashMap<T, u32>,
}

impl<T: Hash + Eq> RelevanceAssignment<T> {
    pub fn grade(&self, id: &T) -> u32 {
        self.rel.get(id).copied().unwrap_or(0)
    }
}

/// Quantile grades from the ground-truth order.
///
/// The list is cut into `levels` equal-width rank bins; zero-based rank `r`
/// of `n` items receives `levels - 1 - floor(levels * r / n)`, so the top item
/// always gets the highest grade and grades never increase down the list.
pub fn assign_relevance<T: Ord + Clone + Hash>(
    truth: &RankedList<T>,
    levels: u32,
) -> Result<RelevanceAssignment<T>> {
    if levels < 2 {
        return invalid(format!("need at least 2 relevance levels, got {levels}"));
    }
    let n = truth.len();
    if n == 0 {
        return invalid("empty ranking");
    }
    let rel = truth
        .ids()
        .enumerate()
        .map(|(rank, id)| {
            let bin = (levels as u64 * rank as u64 / n as u64) as u32;
            (id.clone(), levels - 1 - bin.min(levels - 1))
        })
        .collect();
    Ok(RelevanceAssignment { rel })
}

fn gain(grade: u32) -> f64 {
    2f64.powi(grade as i32) - 1.0
}

fn discount(position: usize) -> f64 {
    // position is 1-based
    ((position + 1) as f64).log2()
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return invalid(format!("k = {k} outside 1..={n}"));
    }
    Ok(())
}

/// `sum_{i=1..k} (2^rel_i - 1) / log2(i + 1)` over the predicted order.
pub fn dcg_at_k<T: Ord + Clone + Hash>(
    predicted: &RankedList<T>,
    rel: &RelevanceAssignment<T>,
    k: usize,
) -> Result<f64> {
    check_k(k, predicted.len())?;
    Ok(predicted
        .top(k)
        .enumerate()
        .map(|(i, id)| gain(rel.grade(id)) / discount(i + 1))
        .sum())
}

/// DCG of the predicted order over the DCG of the ideal order, with grades
/// derived from `truth`. Zero when the ideal DCG is zero.
pub fn ndcg_at_k<T: Ord + Clone + Hash>(
    predicted: &RankedList<T>,
    truth: &RankedList<T>,
    k: usize,
) -> Result<f64> {
    ndcg_with_levels(predicted, truth, k, RELEVANCE_LEVELS)
}

pub fn ndcg_with_levels<T: Ord + Clone + Hash>(
    predicted: &RankedList<T>,
    truth: &RankedList<T>,
    k: usize,
    levels: u32,
) -> Result<f64> {
    if !predicted.same_ids(truth) {
        return invalid("predicted and truth rank different id sets");
    }
    let rel = assign_relevance(truth, levels)?;
    let dcg = dcg_at_k(predicted, &rel, k)?;
    let mut grades: Vec<u32> = rel.rel.values().copied().collect();
    grades.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain(g) / discount(i + 1))
        .sum();
    Ok(if idcg == 0.0 { 0.0 } else { dcg / idcg })
}

/// Fraction of the predicted top-k that is in the true top-k.
pub fn precision_at_k<T: Ord + Clone + Hash>(
    predicted: &RankedList<T>,
    truth: &RankedList<T>,
    k: usize,
) -> Result<f64> {
    check_k(k, predicted.len())?;
    check_k(k, truth.len())?;
    let relevant: HashSet<&T> = truth.top(k).collect();
    let hits = predicted.top(k).filter(|id| relevant.contains(id)).count();
    Ok(hits as f64 / k as f64)
}

/// Kendall rank correlation `(concordant - discordant) / counted pairs`.
///
/// Pairs tied in either sequence are skipped and excluded from the
/// denominator. Returns 0 when every pair is tied.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return invalid(format!("length mismatch: {} vs {}", x.len(), y.len()));
    }
    if x.len() < 2 {
        return invalid("need at least two observations");
    }
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    for i in 0..x.len() {
        for j in (i + 1)..x.len() {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 || dy == 0.0 {
                continue;
            }
            if (dx > 0.0) == (dy > 0.0) {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    let counted = concordant + discordant;
    Ok(if counted == 0 {
        0.0
    } else {
        (concordant - discordant) as f64 / counted as f64
    })
}
