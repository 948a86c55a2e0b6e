use std::hash::Hash;

use serde::Serialize;

use super::{assign_relevance, invalid, ndcg_at_k, RankedList, Result, RELEVANCE_LEVELS};

/// Relevance-grade changes between consecutive epochs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankChangeStats<T> {
    /// Architecture ids in ascending order; columns of the series below.
    pub ids: Vec<T>,
    /// `grades[e][i]`: grade of `ids[i]` under the epoch-`e` ranking.
    pub grades: Vec<Vec<u32>>,
    /// `changed[e][i]`: whether the grade differs from epoch `e - 1`.
    pub changed: Vec<Vec<bool>>,
    /// Number of changed architectures per epoch.
    pub per_epoch: Vec<usize>,
    /// `cumulative[e][i]`: changes of `ids[i]` up to and including epoch `e`.
    pub cumulative: Vec<Vec<u32>>,
}

impl<T> RankChangeStats<T> {
    /// Total changes per architecture over the whole series.
    pub fn totals(&self) -> &[u32] {
        self.cumulative.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// `hist[c]` = number of architectures that changed grade exactly `c` times.
    pub fn change_histogram(&self) -> Vec<usize> {
        let totals = self.totals();
        let max = totals.iter().copied().max().unwrap_or(0) as usize;
        let mut hist = vec![0; max + 1];
        for &t in totals {
            hist[t as usize] += 1;
        }
        hist
    }

    /// Mean number of changes grouped by final-epoch grade, highest grade first.
    pub fn changes_by_final_grade(&self) -> Vec<(u32, f64)> {
        let Some(last) = self.grades.last() else {
            return Vec::new();
        };
        let mut groups: std::collections::BTreeMap<u32, (u32, usize)> = Default::default();
        for (&g, &t) in last.iter().zip(self.totals()) {
            let e = groups.entry(g).or_default();
            e.0 += t;
            e.1 += 1;
        }
        groups
            .into_iter()
            .rev()
            .map(|(g, (sum, n))| (g, sum as f64 / n as f64))
            .collect()
    }
}

fn check_same_ids<T: Ord + Clone + Hash>(lists: &[RankedList<T>]) -> Result<()> {
    if let Some(first) = lists.first() {
        if lists.iter().any(|l| !l.same_ids(first)) {
            return invalid("rankings are over different id sets");
        }
    }
    Ok(())
}

pub fn rank_change_stats<T: Ord + Clone + Hash>(
    per_epoch_ranked: &[RankedList<T>],
) -> Result<RankChangeStats<T>> {
    if per_epoch_ranked.is_empty() {
        return invalid("no epochs");
    }
    check_same_ids(per_epoch_ranked)?;
    let mut ids: Vec<T> = per_epoch_ranked[0].ids().cloned().collect();
    ids.sort();
    let grades = per_epoch_ranked
        .iter()
        .map(|l| {
            let rel = assign_relevance(l, RELEVANCE_LEVELS)?;
            Ok(ids.iter().map(|id| rel.grade(id)).collect())
        })
        .collect::<Result<Vec<Vec<u32>>>>()?;
    let mut changed = Vec::with_capacity(grades.len());
    let mut cumulative: Vec<Vec<u32>> = Vec::with_capacity(grades.len());
    for e in 0..grades.len() {
        let flags: Vec<bool> = if e == 0 {
            vec![false; ids.len()]
        } else {
            grades[e].iter().zip(&grades[e - 1]).map(|(a, b)| a != b).collect()
        };
        let prev = cumulative.last().cloned().unwrap_or_else(|| vec![0; ids.len()]);
        cumulative.push(prev.iter().zip(&flags).map(|(&c, &f)| c + f as u32).collect());
        changed.push(flags);
    }
    let per_epoch = changed.iter().map(|f| f.iter().filter(|&&x| x).count()).collect();
    Ok(RankChangeStats {
        ids,
        grades,
        changed,
        per_epoch,
        cumulative,
    })
}

/// `1 - NDCG@k` of every epoch's ranking against the last epoch's ranking.
pub fn ndcg_vs_final_curve<T: Ord + Clone + Hash>(
    per_epoch_ranked: &[RankedList<T>],
    k: usize,
) -> Result<Vec<f64>> {
    if per_epoch_ranked.len() < 2 {
        return invalid("need at least two epochs");
    }
    check_same_ids(per_epoch_ranked)?;
    let last = per_epoch_ranked.last().expect("non-empty");
    per_epoch_ranked
        .iter()
        .map(|l| ndcg_at_k(l, last, k).map(|v| 1.0 - v))
        .collect()
}

/// `values[r][c] = 1 - NDCG@k` of ranking `cols[c]` judged against ranking `rows[r]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossMatrix {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub k: usize,
    pub values: Vec<Vec<f64>>,
}

/// Cross-dataset ranking disagreement; `k = None` uses the full list.
pub fn cross_dataset_matrix<T: Ord + Clone + Hash>(
    rankings: &[(String, RankedList<T>)],
    k: Option<usize>,
) -> Result<CrossMatrix> {
    if rankings.is_empty() {
        return invalid("no rankings");
    }
    let lists: Vec<RankedList<T>> = rankings.iter().map(|(_, l)| l.clone()).collect();
    check_same_ids(&lists)?;
    let k = k.unwrap_or(lists[0].len());
    let values = lists
        .iter()
        .map(|truth| {
            lists
                .iter()
                .map(|pred| ndcg_at_k(pred, truth, k).map(|v| 1.0 - v))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let names: Vec<String> = rankings.iter().map(|(n, _)| n.clone()).collect();
    Ok(CrossMatrix {
        rows: names.clone(),
        cols: names,
        k,
        values,
    })
}
