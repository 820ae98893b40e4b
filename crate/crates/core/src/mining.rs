//! Hard-negative mining.
//!
//! [`MiningPool`] keeps, per view, a FIFO of the most recently computed
//! embeddings. Querying it for an anchor scans the opposite view exactly,
//! keeps the `r` most similar entries (ties broken by smaller pair id) and
//! picks one of them uniformly. The pool decides *which* sample becomes the
//! negative; callers recompute its embedding before taking gradients.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashSet, VecDeque};

use crate::error::{Error, Result};
use crate::model::View;
use crate::numerics::{Rng, VectorK};

const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct PoolEntry {
    pub pair_id: usize,
    pub embedding: VectorK,
    pub step: u64,
}

#[derive(Debug, Clone, Default)]
struct Ring {
    entries: VecDeque<PoolEntry>,
    ids: HashSet<usize>,
}

impl Ring {
    fn push(&mut self, entry: PoolEntry, capacity: usize) {
        if self.ids.contains(&entry.pair_id) {
            let at = self
                .entries
                .iter()
                .position(|e| e.pair_id == entry.pair_id)
                .expect("id set and ring agree");
            self.entries.remove(at);
        } else {
            self.ids.insert(entry.pair_id);
        }
        self.entries.push_back(entry);
        while self.entries.len() > capacity {
            let old = self.entries.pop_front().expect("non-empty");
            self.ids.remove(&old.pair_id);
        }
    }
}

/// Per-view FIFO cache of `(pair id, embedding, step)` snapshots.
#[derive(Debug, Clone)]
pub struct MiningPool {
    capacity: usize,
    /// Number of hardest candidates to sample from.
    pub r: usize,
    /// Steps between trainer refreshes.
    pub update_period: usize,
    street: Ring,
    aerial: Ring,
}

/// One mined negative for one anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeSelection {
    pub anchor_id: usize,
    pub selected_id: usize,
    pub similarity: f64,
    /// Considered candidates, most similar first.
    pub candidate_set: Vec<usize>,
}

/// Embeddings of one batch member, pushed after an optimization step.
#[derive(Debug, Clone)]
pub struct BatchEmbedding {
    pub pair_id: usize,
    pub street: VectorK,
    pub aerial: VectorK,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    sim: f64,
    id: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    /// Greater means harder: higher similarity, then smaller id.
    fn cmp(&self, other: &Self) -> Ordering {
        // adding 0.0 turns -0.0 into 0.0 so signed zeros tie
        (self.sim + 0.0)
            .total_cmp(&(other.sim + 0.0))
            .then_with(|| other.id.cmp(&self.id))
    }
}

/// The `r` hardest candidates, hardest first.
fn top_r(candidates: impl Iterator<Item = Candidate>, r: usize) -> Vec<Candidate> {
    let mut heap: BinaryHeap<Reverse<Candidate>> = BinaryHeap::with_capacity(r + 1);
    for c in candidates {
        if heap.len() < r {
            heap.push(Reverse(c));
        } else if let Some(Reverse(worst)) = heap.peek() {
            if c > *worst {
                heap.pop();
                heap.push(Reverse(c));
            }
        }
    }
    let mut out: Vec<Candidate> = heap.into_iter().map(|Reverse(c)| c).collect();
    out.sort_by(|a, b| b.cmp(a));
    out
}

fn check_unit(v: &VectorK) -> Result<()> {
    let n = v.norm();
    if (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::Normalization(format!(
            "pool embeddings must be unit norm, got {n}"
        )));
    }
    Ok(())
}

impl MiningPool {
    pub fn new(capacity: usize, r: usize, update_period: usize) -> Result<Self> {
        if capacity == 0 || r == 0 || update_period == 0 {
            return Err(Error::Config(
                "pool capacity, r and update period must all be at least 1".into(),
            ));
        }
        Ok(Self {
            capacity,
            r,
            update_period,
            street: Ring::default(),
            aerial: Ring::default(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    fn ring(&self, view: View) -> &Ring {
        match view {
            View::Street => &self.street,
            View::Aerial => &self.aerial,
        }
    }

    pub fn len(&self, view: View) -> usize {
        self.ring(view).entries.len()
    }

    pub fn is_empty(&self, view: View) -> bool {
        self.len(view) == 0
    }

    /// Entries of one view, oldest first.
    pub fn entries(&self, view: View) -> impl Iterator<Item = &PoolEntry> {
        self.ring(view).entries.iter()
    }

    pub fn contains(&self, view: View, pair_id: usize) -> bool {
        self.ring(view).ids.contains(&pair_id)
    }

    /// Appends an entry, evicting the oldest beyond capacity. Re-pushing an
    /// id replaces its entry and moves it to the back.
    pub fn push(&mut self, view: View, pair_id: usize, embedding: VectorK, step: u64) -> Result<()> {
        check_unit(&embedding)?;
        let capacity = self.capacity;
        let ring = match view {
            View::Street => &mut self.street,
            View::Aerial => &mut self.aerial,
        };
        ring.push(
            PoolEntry {
                pair_id,
                embedding,
                step,
            },
            capacity,
        );
        Ok(())
    }

    /// Pushes both views of every batch member.
    pub fn refresh_from_batch(&mut self, batch: &[BatchEmbedding], step: u64) -> Result<()> {
        for b in batch {
            self.push(View::Street, b.pair_id, b.street.clone(), step)?;
            self.push(View::Aerial, b.pair_id, b.aerial.clone(), step)?;
        }
        Ok(())
    }

    /// Exact top-`r` candidates in the view opposite to the anchor,
    /// excluding the anchor's own pair.
    pub fn candidates(
        &self,
        anchor_view: View,
        anchor: &VectorK,
        anchor_pair_id: usize,
        r: usize,
    ) -> Result<Vec<(usize, f64)>> {
        let ring = self.ring(anchor_view.opposite());
        let mut scored = Vec::with_capacity(ring.entries.len());
        for e in ring.entries.iter().filter(|e| e.pair_id != anchor_pair_id) {
            scored.push(Candidate {
                sim: anchor.dot(&e.embedding)?,
                id: e.pair_id,
            });
        }
        if scored.is_empty() {
            return Err(Error::PoolEmpty);
        }
        Ok(top_r(scored.into_iter(), r.max(1))
            .into_iter()
            .map(|c| (c.id, c.sim))
            .collect())
    }

    /// Picks one of the `r` hardest negatives uniformly at random. With
    /// fewer than `r` eligible entries all of them are candidates.
    pub fn hardest_negatives(
        &self,
        anchor_view: View,
        anchor: &VectorK,
        anchor_pair_id: usize,
        r: usize,
        rng: &mut Rng,
    ) -> Result<NegativeSelection> {
        let cands = self.candidates(anchor_view, anchor, anchor_pair_id, r)?;
        let (selected_id, similarity) = cands[rng.below(cands.len())];
        Ok(NegativeSelection {
            anchor_id: anchor_pair_id,
            selected_id,
            similarity,
            candidate_set: cands.into_iter().map(|(id, _)| id).collect(),
        })
    }
}

/// Hardest in-batch negative per anchor; anchor `i`'s positive is
/// candidate `i`, and ids are batch positions.
pub fn batch_hardest(anchors: &[VectorK], candidates: &[VectorK]) -> Result<Vec<NegativeSelection>> {
    if anchors.len() != candidates.len() {
        return Err(Error::Shape(format!(
            "{} anchors vs {} candidates",
            anchors.len(),
            candidates.len()
        )));
    }
    if anchors.len() < 2 {
        return Err(Error::BatchTooSmall(anchors.len()));
    }
    anchors
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let mut scored = Vec::with_capacity(candidates.len() - 1);
            for (j, c) in candidates.iter().enumerate().filter(|(j, _)| *j != i) {
                scored.push(Candidate {
                    sim: a.dot(c)?,
                    id: j,
                });
            }
            let best = top_r(scored.into_iter(), 1)[0];
            Ok(NegativeSelection {
                anchor_id: i,
                selected_id: best.id,
                similarity: best.sim,
                candidate_set: vec![best.id],
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::l2_normalize;

    fn unit(v: &[f64]) -> VectorK {
        l2_normalize(&VectorK::new(v.to_vec()).unwrap()).unwrap()
    }

    fn random_unit(rng: &mut Rng, k: usize) -> VectorK {
        unit(&(0..k).map(|_| rng.normal()).collect::<Vec<_>>())
    }

    fn ids(pool: &MiningPool, view: View) -> Vec<usize> {
        pool.entries(view).map(|e| e.pair_id).collect()
    }

    #[test]
    fn fifo_eviction() {
        let mut pool = MiningPool::new(3, 1, 1).unwrap();
        for (step, id) in [10, 11, 12, 13].into_iter().enumerate() {
            pool.push(View::Aerial, id, unit(&[1.0, 0.0]), step as u64)
                .unwrap();
        }
        assert_eq!(ids(&pool, View::Aerial), vec![11, 12, 13]);
        assert!(pool.is_empty(View::Street));
    }

    #[test]
    fn repush_moves_to_back() {
        let mut pool = MiningPool::new(3, 1, 1).unwrap();
        pool.push(View::Street, 1, unit(&[1.0, 0.0]), 0).unwrap();
        pool.push(View::Street, 2, unit(&[1.0, 0.0]), 1).unwrap();
        pool.push(View::Street, 1, unit(&[0.0, 1.0]), 2).unwrap();
        assert_eq!(ids(&pool, View::Street), vec![2, 1]);
        let back = pool.entries(View::Street).last().unwrap();
        assert_eq!(back.step, 2);
        assert_eq!(back.embedding, unit(&[0.0, 1.0]));
    }

    #[test]
    fn push_rejects_non_unit() {
        let mut pool = MiningPool::new(3, 1, 1).unwrap();
        let v = VectorK::new(vec![2.0, 0.0]).unwrap();
        assert!(matches!(
            pool.push(View::Street, 0, v, 0),
            Err(Error::Normalization(_))
        ));
    }

    fn three_sim_pool() -> (MiningPool, VectorK) {
        // anchor e1; candidates with cosine 0.9, 0.5, 0.1
        let mut pool = MiningPool::new(10, 1, 1).unwrap();
        for (id, s) in [(1usize, 0.9f64), (2, 0.5), (3, 0.1)] {
            pool.push(View::Aerial, id, unit(&[s, (1.0 - s * s).sqrt()]), 0)
                .unwrap();
        }
        (pool, unit(&[1.0, 0.0]))
    }

    #[test]
    fn r1_is_argmax() {
        let (pool, anchor) = three_sim_pool();
        let sel = pool
            .hardest_negatives(View::Street, &anchor, 0, 1, &mut Rng::new(0))
            .unwrap();
        assert_eq!(sel.selected_id, 1);
        assert!((sel.similarity - 0.9).abs() < 1e-12);
    }

    #[test]
    fn r2_samples_uniformly() {
        let (pool, anchor) = three_sim_pool();
        let mut rng = Rng::new(1);
        let n = 10_000;
        let mut hits = [0usize; 4];
        for _ in 0..n {
            let sel = pool
                .hardest_negatives(View::Street, &anchor, 0, 2, &mut rng)
                .unwrap();
            assert_eq!(sel.candidate_set, vec![1, 2]);
            hits[sel.selected_id] += 1;
        }
        for id in [1, 2] {
            let f = hits[id] as f64 / n as f64;
            assert!((f - 0.5).abs() < 0.02, "id {id}: {f}");
        }
    }

    #[test]
    fn excludes_own_pair_and_handles_small_pools() {
        let (pool, anchor) = three_sim_pool();
        let sel = pool
            .hardest_negatives(View::Street, &anchor, 1, 10, &mut Rng::new(0))
            .unwrap();
        assert_eq!(sel.candidate_set, vec![2, 3]);
        let empty = MiningPool::new(4, 1, 1).unwrap();
        assert!(matches!(
            empty.hardest_negatives(View::Street, &anchor, 0, 1, &mut Rng::new(0)),
            Err(Error::PoolEmpty)
        ));
    }

    #[test]
    fn matches_brute_force_top_r() {
        let mut rng = Rng::new(3);
        let mut pool = MiningPool::new(500, 5, 1).unwrap();
        for id in 0..500 {
            pool.push(View::Aerial, id, random_unit(&mut rng, 8), id as u64)
                .unwrap();
        }
        let anchor = random_unit(&mut rng, 8);
        for r in [1, 5, 100] {
            let got = pool.candidates(View::Street, &anchor, 7, r).unwrap();
            let mut all: Vec<(usize, f64)> = pool
                .entries(View::Aerial)
                .filter(|e| e.pair_id != 7)
                .map(|e| (e.pair_id, anchor.dot(&e.embedding).unwrap()))
                .collect();
            all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            all.truncate(r);
            assert_eq!(got, all);
        }
    }

    #[test]
    fn ties_break_by_smaller_id() {
        let mut pool = MiningPool::new(10, 2, 1).unwrap();
        for id in [9, 4, 6] {
            pool.push(View::Street, id, unit(&[1.0, 0.0]), 0).unwrap();
        }
        let got = pool.candidates(View::Aerial, &unit(&[1.0, 0.0]), 100, 2).unwrap();
        assert_eq!(got.iter().map(|c| c.0).collect::<Vec<_>>(), vec![4, 6]);
    }

    #[test]
    fn refresh_pushes_both_views() {
        let mut rng = Rng::new(5);
        let batch: Vec<BatchEmbedding> = (0..12)
            .map(|i| BatchEmbedding {
                pair_id: i,
                street: random_unit(&mut rng, 4),
                aerial: random_unit(&mut rng, 4),
            })
            .collect();
        let mut pool = MiningPool::new(100, 1, 1).unwrap();
        pool.refresh_from_batch(&batch, 0).unwrap();
        assert_eq!(pool.len(View::Street) + pool.len(View::Aerial), 24);
        pool.refresh_from_batch(&[], 1).unwrap();
        assert_eq!(pool.len(View::Street) + pool.len(View::Aerial), 24);
    }

    #[test]
    fn in_batch_hardest() {
        let a = vec![unit(&[1.0, 0.0]), unit(&[0.0, 1.0])];
        let sel = batch_hardest(&a, &a).unwrap();
        assert_eq!(sel[0].selected_id, 1);
        assert_eq!(sel[1].selected_id, 0);
        assert!(matches!(
            batch_hardest(&a[..1], &a[..1]),
            Err(Error::BatchTooSmall(1))
        ));

        let mut rng = Rng::new(8);
        let anchors: Vec<_> = (0..12).map(|_| random_unit(&mut rng, 6)).collect();
        let cands: Vec<_> = (0..12).map(|_| random_unit(&mut rng, 6)).collect();
        for s in batch_hardest(&anchors, &cands).unwrap() {
            assert_ne!(s.selected_id, s.anchor_id);
            let best = (0..12)
                .filter(|&j| j != s.anchor_id)
                .max_by(|&x, &y| {
                    let sx = anchors[s.anchor_id].dot(&cands[x]).unwrap();
                    let sy = anchors[s.anchor_id].dot(&cands[y]).unwrap();
                    sx.total_cmp(&sy).then(y.cmp(&x))
                })
                .unwrap();
            assert_eq!(s.selected_id, best);
        }
    }
}
