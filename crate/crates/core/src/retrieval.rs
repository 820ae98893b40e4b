//! Exhaustive cosine retrieval and top-n recall metrics.
//!
//! Ranks are 1-based. Equal similarities are ordered by reference id.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::VectorK;

const UNIT_TOLERANCE: f64 = 1e-6;

/// Reference-side embeddings keyed by unique id.
#[derive(Debug, Clone)]
pub struct EmbeddingIndex {
    ids: Vec<String>,
    rows: Vec<VectorK>,
    /// position of each row in id order, for tie-breaking
    id_order: Vec<usize>,
    lookup: HashMap<String, usize>,
}

impl EmbeddingIndex {
    pub fn new(ids: Vec<String>, rows: Vec<VectorK>) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::Shape(format!("{} ids for {} rows", ids.len(), rows.len())));
        }
        if rows.is_empty() {
            return Err(Error::EmptyBatch("index has no references".into()));
        }
        let dim = rows[0].dim();
        for r in &rows {
            if r.dim() != dim {
                return Err(Error::Shape(format!("row dim {} vs {dim}", r.dim())));
            }
            if (r.norm() - 1.0).abs() > UNIT_TOLERANCE {
                return Err(Error::Normalization("index rows must be unit norm".into()));
            }
        }
        let mut lookup = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if lookup.insert(id.clone(), i).is_some() {
                return Err(Error::Shape(format!("duplicate reference id {id:?}")));
            }
        }
        let mut sorted: Vec<usize> = (0..ids.len()).collect();
        sorted.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
        let mut id_order = vec![0; ids.len()];
        for (pos, &i) in sorted.iter().enumerate() {
            id_order[i] = pos;
        }
        Ok(Self {
            ids,
            rows,
            id_order,
            lookup,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows[0].dim()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.lookup.get(id).copied()
    }

    fn check_query(&self, q: &VectorK) -> Result<()> {
        if q.dim() != self.dim() {
            return Err(Error::Shape(format!(
                "query dim {} does not match index dim {}",
                q.dim(),
                self.dim()
            )));
        }
        if (q.norm() - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::Normalization("queries must be unit norm".into()));
        }
        Ok(())
    }

    fn similarities(&self, q: &VectorK) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| q.dot(r).expect("dims checked"))
            .collect()
    }
}

/// A reference with its similarity to the query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub id: String,
    pub similarity: f64,
}

/// Full ranking of the index for every query, most similar first.
pub fn rank_all(queries: &[VectorK], index: &EmbeddingIndex) -> Result<Vec<Vec<Ranked>>> {
    for q in queries {
        index.check_query(q)?;
    }
    Ok(queries
        .par_iter()
        .map(|q| {
            let sims = index.similarities(q);
            let mut order: Vec<usize> = (0..index.len()).collect();
            // adding 0.0 turns -0.0 into 0.0 so signed zeros tie
            order.sort_by(|&a, &b| {
                (sims[b] + 0.0)
                    .total_cmp(&(sims[a] + 0.0))
                    .then(index.id_order[a].cmp(&index.id_order[b]))
            });
            order
                .into_iter()
                .map(|i| Ranked {
                    id: index.ids[i].clone(),
                    similarity: sims[i],
                })
                .collect()
        })
        .collect())
}

/// Rank of each query's ground-truth reference (same id) without sorting.
pub fn ground_truth_ranks(
    queries: &[VectorK],
    query_ids: &[String],
    index: &EmbeddingIndex,
) -> Result<Vec<usize>> {
    if queries.len() != query_ids.len() {
        return Err(Error::Shape(format!(
            "{} queries with {} ids",
            queries.len(),
            query_ids.len()
        )));
    }
    for q in queries {
        index.check_query(q)?;
    }
    let truth = query_ids
        .iter()
        .map(|id| {
            index
                .position(id)
                .ok_or_else(|| Error::Shape(format!("query id {id:?} has no reference")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(queries
        .par_iter()
        .zip(truth.par_iter())
        .map(|(q, &t)| {
            let sims = index.similarities(q);
            let st = sims[t];
            let ot = index.id_order[t];
            1 + sims
                .iter()
                .enumerate()
                .filter(|&(j, &s)| s > st || (s == st && index.id_order[j] < ot))
                .count()
        })
        .collect())
}

/// `k` for top-1% recall: `ceil(n / 100)`.
pub fn top_one_percent_k(n_refs: usize) -> usize {
    n_refs.div_ceil(100).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub ranks: Vec<usize>,
    pub n_refs: usize,
    /// `(k, recall@k)` for each requested `k`, ascending.
    pub recall: Vec<(usize, f64)>,
    pub top1pct_k: usize,
    pub recall_top1pct: f64,
}

impl RecallReport {
    pub fn at(&self, k: usize) -> f64 {
        fraction_within(&self.ranks, k)
    }

    pub fn top1(&self) -> f64 {
        self.at(1)
    }
}

fn fraction_within(ranks: &[usize], k: usize) -> f64 {
    ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
}

pub fn recall_at(ranks: &[usize], ks: &[usize], n_refs: usize) -> Result<RecallReport> {
    if ranks.is_empty() {
        return Err(Error::EmptyBatch("no ranks to score".into()));
    }
    if let Some(&bad) = ranks.iter().find(|&&r| r == 0 || r > n_refs) {
        return Err(Error::Shape(format!("rank {bad} outside 1..={n_refs}")));
    }
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let top1pct_k = top_one_percent_k(n_refs);
    Ok(RecallReport {
        ranks: ranks.to_vec(),
        n_refs,
        recall: ks.iter().map(|&k| (k, fraction_within(ranks, k))).collect(),
        top1pct_k,
        recall_top1pct: fraction_within(ranks, top1pct_k),
    })
}

/// `(k, recall@k)` for `k = 1..=k_max`, clipped to the reference count.
pub fn recall_curve(report: &RecallReport, k_max: usize) -> Vec<(usize, f64)> {
    let k_max = k_max.min(report.n_refs);
    let mut counts = vec![0usize; k_max + 1];
    for &r in &report.ranks {
        if r <= k_max {
            counts[r] += 1;
        }
    }
    let n = report.ranks.len() as f64;
    let mut acc = 0;
    (1..=k_max)
        .map(|k| {
            acc += counts[k];
            (k, acc as f64 / n)
        })
        .collect()
}
