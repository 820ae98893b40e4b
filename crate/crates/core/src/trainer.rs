//! Training loop, validation metrics and the alignment-regime protocol.
//!
//! Each step samples a batch of pairs, optionally rotates every aerial input
//! by a random angle, embeds both views, picks one negative aerial sample
//! per street anchor (random in-batch, hardest in-batch, or from the global
//! mining pool), evaluates the active loss, backpropagates through every
//! embedding involved and takes an Adam step. The weighted soft-margin loss
//! is used for the first `warmup_epochs`, the configured loss afterwards.

use std::borrow::Cow;
use std::collections::HashMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{rotate_aerial, rotated_pair, CrossViewPair};
use crate::error::{Error, Result};
use crate::losses::{
    binomial_loss, hard_triplet_loss, pair_similarities, weighted_soft_margin_loss, DistanceKind, LossConfig,
    LossKind, Pairing,
};
use crate::mining::{batch_hardest, BatchEmbedding, MiningPool};
use crate::model::{
    backward_into, forward, init_params, ForwardTrace, ModelDims, ModelParams, ParamGrads, View,
};
use crate::numerics::{Rng, VectorK};
use crate::optim::{Adam, AdamConfig};
use crate::retrieval::{ground_truth_ranks, recall_at, top_one_percent_k, EmbeddingIndex, RecallReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentRegime {
    Aligned,
    #[serde(alias = "rotate")]
    RandomRotate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiningMode {
    /// A random in-batch negative per anchor.
    None,
    /// The hardest in-batch negative per anchor.
    Batch,
    /// One of the `r` hardest negatives from the FIFO pool.
    Global,
}

/// Which losses also see every other in-batch aerial sample as a negative,
/// on top of the one selected per anchor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchNegatives {
    Off,
    /// The distance-based triplet losses only.
    TripletLosses,
    All,
}

impl BatchNegatives {
    fn applies_to(self, kind: LossKind) -> bool {
        match self {
            BatchNegatives::Off => false,
            BatchNegatives::All => true,
            BatchNegatives::TripletLosses => matches!(kind, LossKind::HardTriplet | LossKind::WeightedSoft),
        }
    }
}

/// Stage-1 width, embedding size and coordinate channels; the data channel
/// count comes from the training pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub embed_dim: usize,
    pub coord_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            embed_dim: 64,
            coord_channels: 2,
        }
    }
}

impl ModelConfig {
    pub fn dims(&self, channels: usize) -> ModelDims {
        ModelDims {
            channels,
            hidden: self.hidden,
            embed_dim: self.embed_dim,
            coord_channels: self.coord_channels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub batch_pairs: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub lr: f64,
    /// Multiplicative learning-rate factor applied after every epoch.
    pub lr_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub alignment_regime: AlignmentRegime,
    pub mining: MiningMode,
    /// Pool capacity per view; `None` keeps the whole training set.
    pub pool_capacity: Option<usize>,
    pub mining_r: usize,
    /// Steps between pool refreshes.
    pub pool_update_period: usize,
    pub batch_negatives: BatchNegatives,
    /// Replace `m_p`, `m_n` with the measured similarity means on the
    /// training set when the binomial loss takes over from warmup.
    pub calibrate_margins_at_switch: bool,
    pub loss: LossConfig,
    pub model: ModelConfig,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_pairs: 12,
            epochs: 40,
            warmup_epochs: 30,
            lr: 1e-3,
            lr_decay: 0.95,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            alignment_regime: AlignmentRegime::Aligned,
            mining: MiningMode::None,
            pool_capacity: None,
            mining_r: 5,
            pool_update_period: 1,
            batch_negatives: BatchNegatives::Off,
            calibrate_margins_at_switch: false,
            loss: LossConfig::default(),
            model: ModelConfig::default(),
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_pairs < 2 {
            return bad(format!(
                "batch_pairs must be at least 2, got {}",
                self.batch_pairs
            ));
        }
        if self.warmup_epochs > self.epochs {
            return bad(format!(
                "warmup_epochs ({}) exceeds epochs ({})",
                self.warmup_epochs, self.epochs
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be finite and non-negative, got {}", self.lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay));
        }
        if self.mining_r == 0 || self.pool_update_period == 0 || self.pool_capacity == Some(0) {
            return bad("mining_r, pool_update_period and pool_capacity must be at least 1".into());
        }
        self.adam().validate()?;
        self.loss.validate()?;
        self.model.dims(1).validate()
    }

    /// Loss in force during `epoch` (0-based).
    pub fn loss_for_epoch(&self, epoch: usize) -> LossConfig {
        if epoch < self.warmup_epochs {
            LossConfig {
                kind: LossKind::WeightedSoft,
                ..self.loss.clone()
            }
        } else {
            self.loss.clone()
        }
    }

    pub fn lr_for_epoch(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi(epoch as i32)
    }
}

/// Mean and population variance of positive and negative similarities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityStats {
    pub mean_p: f64,
    pub var_p: f64,
    pub mean_n: f64,
    pub var_n: f64,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub recall: RecallReport,
    pub similarity: SimilarityStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss_kind: LossKind,
    pub lr: f64,
    pub mean_loss: f64,
    pub steps: u64,
    pub recall_at_1: Option<f64>,
    pub recall_top1pct: Option<f64>,
    pub similarity: Option<SimilarityStats>,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// `(m_p, m_n)` measured when the post-warmup loss took over.
    #[serde(default)]
    pub calibrated_margins: Option<(f64, f64)>,
}

impl TrainReport {
    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }
}

/// Unit embeddings of one view for every pair.
pub fn embed_all(params: &ModelParams, pairs: &[CrossViewPair], view: View) -> Result<Vec<VectorK>> {
    pairs
        .par_iter()
        .map(|p| {
            let t = match view {
                View::Street => &p.street,
                View::Aerial => &p.aerial,
            };
            forward(params, view, t).map(|tr| tr.embedding)
        })
        .collect()
}

/// Street-to-aerial retrieval over `pairs` plus similarity statistics: the
/// positives are matching pairs, the negatives every non-matching pair.
pub fn evaluate(params: &ModelParams, pairs: &[CrossViewPair]) -> Result<Evaluation> {
    if pairs.is_empty() {
        return Err(Error::EmptyBatch("nothing to evaluate".into()));
    }
    let streets = embed_all(params, pairs, View::Street)?;
    let aerials = embed_all(params, pairs, View::Aerial)?;
    let ids: Vec<String> = pairs.iter().map(|p| p.id.clone()).collect();
    let index = EmbeddingIndex::new(ids.clone(), aerials.clone())?;
    let ranks = ground_truth_ranks(&streets, &ids, &index)?;
    let n = pairs.len();
    let recall = recall_at(&ranks, &[1, 5, 10, top_one_percent_k(n)], n)?;
    let similarity = similarity_stats(&streets, &aerials)?;
    Ok(Evaluation { recall, similarity })
}

pub fn similarity_stats(streets: &[VectorK], aerials: &[VectorK]) -> Result<SimilarityStats> {
    let mut sp = Vec::with_capacity(streets.len());
    let mut sn = Vec::with_capacity(streets.len() * streets.len());
    for (i, s) in streets.iter().enumerate() {
        for (j, a) in aerials.iter().enumerate() {
            let v = s.dot(a)?;
            if i == j {
                sp.push(v);
            } else {
                sn.push(v);
            }
        }
    }
    let (mean_p, var_p) = mean_var(&sp);
    let (mean_n, var_n) = mean_var(&sn);
    Ok(SimilarityStats {
        mean_p,
        var_p,
        mean_n,
        var_n,
    })
}

/// Each aerial rotated by its own uniform angle, drawn from `(seed, index)`.
pub fn rotate_pairs(pairs: &[CrossViewPair], seed: u64) -> Result<Vec<CrossViewPair>> {
    pairs
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let phi = Rng::derived(seed, i as u64).uniform_range(0.0, 360.0);
            rotated_pair(p, phi)
        })
        .collect()
}

/// Measured means of the negative and positive similarity distributions,
/// returned as `(m_p, m_n)`.
pub fn calibrate_margins(params: &ModelParams, pairs: &[CrossViewPair]) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::EmptyBatch("no pairs to calibrate on".into()));
    }
    let streets = embed_all(params, pairs, View::Street)?;
    let aerials = embed_all(params, pairs, View::Aerial)?;
    let s = similarity_stats(&streets, &aerials)?;
    // a single pair has no negatives; fall back to its positive mean
    let m_p = if s.mean_n.is_nan() { s.mean_p } else { s.mean_n };
    Ok((m_p, s.mean_p))
}

/// One term of the batch loss: `(anchor, candidate, ∂L/∂measure)`.
type Term = (usize, usize, f64);

struct StepOutcome {
    loss: f64,
    grads: ParamGrads,
    staged: Vec<BatchEmbedding>,
}

struct Trainer<'a> {
    cfg: &'a TrainingConfig,
    pairs: &'a [CrossViewPair],
    rng: Rng,
    pool: Option<MiningPool>,
    staged: Vec<BatchEmbedding>,
    step: u64,
}

impl<'a> Trainer<'a> {
    /// Counts a finished optimization step and refreshes the pool when its
    /// period comes round.
    fn commit_step(&mut self, staged: Vec<BatchEmbedding>) -> Result<()> {
        self.step += 1;
        if let Some(pool) = self.pool.as_mut() {
            self.staged.extend(staged);
            if self.step.is_multiple_of(pool.update_period as u64) {
                pool.refresh_from_batch(&self.staged, self.step)?;
                self.staged.clear();
            }
        }
        Ok(())
    }

    fn aerial_input(&mut self, idx: usize) -> Result<Cow<'a, crate::numerics::Tensor3>> {
        let a = &self.pairs[idx].aerial;
        Ok(match self.cfg.alignment_regime {
            AlignmentRegime::Aligned => Cow::Borrowed(a),
            AlignmentRegime::RandomRotate => {
                Cow::Owned(rotate_aerial(a, self.rng.uniform_range(0.0, 360.0))?)
            }
        })
    }

    fn run_step(
        &mut self,
        params: &ModelParams,
        batch: &[usize],
        loss_cfg: &LossConfig,
    ) -> Result<StepOutcome> {
        let n = batch.len();
        let aerial_inputs = batch
            .iter()
            .map(|&i| self.aerial_input(i))
            .collect::<Result<Vec<_>>>()?;
        let street_traces: Vec<ForwardTrace> = batch
            .par_iter()
            .map(|&i| forward(params, View::Street, &self.pairs[i].street))
            .collect::<Result<_>>()?;
        let mut aerial_traces: Vec<ForwardTrace> = aerial_inputs
            .par_iter()
            .map(|a| forward(params, View::Aerial, a))
            .collect::<Result<_>>()?;

        let anchors: Vec<VectorK> = street_traces.iter().map(|t| t.embedding.clone()).collect();
        let batch_cands: Vec<VectorK> = aerial_traces.iter().map(|t| t.embedding.clone()).collect();

        let mut negatives: Vec<(usize, usize)> = Vec::with_capacity(n);
        match self.cfg.mining {
            MiningMode::None => {
                for i in 0..n {
                    negatives.push((i, self.random_other(i, n)));
                }
            }
            MiningMode::Batch => {
                for sel in batch_hardest(&anchors, &batch_cands)? {
                    negatives.push((sel.anchor_id, sel.selected_id));
                }
            }
            MiningMode::Global => {
                let position: HashMap<usize, usize> =
                    batch.iter().enumerate().map(|(p, &i)| (i, p)).collect();
                let mut extra: Vec<usize> = Vec::new();
                let mut chosen = Vec::with_capacity(n);
                for i in 0..n {
                    let pool = self.pool.as_ref().expect("global mining has a pool");
                    let pick = match pool.hardest_negatives(
                        View::Street,
                        &anchors[i],
                        batch[i],
                        self.cfg.mining_r,
                        &mut self.rng,
                    ) {
                        Ok(sel) => Some(sel.selected_id),
                        Err(Error::PoolEmpty) => None,
                        Err(e) => return Err(e),
                    };
                    chosen.push(pick);
                }
                for (i, pick) in chosen.into_iter().enumerate() {
                    let cand = match pick {
                        None => self.random_other(i, n),
                        Some(id) => match position.get(&id) {
                            Some(&p) => p,
                            None => {
                                extra.push(id);
                                n + extra.len() - 1
                            }
                        },
                    };
                    negatives.push((i, cand));
                }
                let extra_inputs = extra
                    .iter()
                    .map(|&id| self.aerial_input(id))
                    .collect::<Result<Vec<_>>>()?;
                let extra_traces: Vec<ForwardTrace> = extra_inputs
                    .par_iter()
                    .map(|a| forward(params, View::Aerial, a))
                    .collect::<Result<_>>()?;
                aerial_traces.extend(extra_traces);
            }
        }
        if self.cfg.batch_negatives.applies_to(loss_cfg.kind) {
            for i in 0..n {
                for j in (0..n).filter(|&j| j != i) {
                    negatives.push((i, j));
                }
            }
        }

        let cands: Vec<VectorK> = aerial_traces.iter().map(|t| t.embedding.clone()).collect();
        let pairing = Pairing {
            positives: (0..n).map(|i| (i, i)).collect(),
            negatives: negatives.clone(),
        };
        let m = pair_similarities(&anchors, &cands, &pairing, loss_cfg.distance)?;
        let (loss, terms_p, terms_n): (f64, Vec<Term>, Vec<Term>) = if loss_cfg.is_similarity_based() {
            let out = binomial_loss(&m.similarities, loss_cfg)?;
            let tp = pairing
                .positives
                .iter()
                .zip(&out.grad_p)
                .map(|(&(a, c), &g)| (a, c, g))
                .collect();
            let tn = negatives
                .iter()
                .zip(&out.grad_n)
                .map(|(&(a, c), &g)| (a, c, g))
                .collect();
            (out.value, tp, tn)
        } else {
            let d_p: Vec<f64> = negatives.iter().map(|&(a, _)| m.d_p[a]).collect();
            let out = match loss_cfg.kind {
                LossKind::HardTriplet => hard_triplet_loss(&d_p, &m.d_n, loss_cfg.margin)?,
                _ => weighted_soft_margin_loss(&d_p, &m.d_n, loss_cfg.alpha)?,
            };
            let tp = negatives
                .iter()
                .zip(&out.grad_p)
                .map(|(&(a, _), &g)| (a, a, g))
                .collect();
            let tn = negatives
                .iter()
                .zip(&out.grad_n)
                .map(|(&(a, c), &g)| (a, c, g))
                .collect();
            (out.value, tp, tn)
        };
        if !loss.is_finite() {
            return Err(Error::Divergence {
                step: self.step,
                message: format!("loss is {loss}"),
            });
        }

        let k = params.dims.embed_dim;
        let mut g_anchor = vec![vec![0.0; k]; n];
        let mut g_cand = vec![vec![0.0; k]; cands.len()];
        for &(a, c, g) in terms_p.iter().chain(&terms_n) {
            if g == 0.0 {
                continue;
            }
            let (x, y) = (anchors[a].as_slice(), cands[c].as_slice());
            if loss_cfg.is_similarity_based() {
                for d in 0..k {
                    g_anchor[a][d] += g * y[d];
                    g_cand[c][d] += g * x[d];
                }
            } else {
                let scale = match loss_cfg.distance {
                    DistanceKind::SquaredEuclidean => 2.0,
                    DistanceKind::Euclidean => {
                        let dist: f64 = x
                            .iter()
                            .zip(y)
                            .map(|(p, q)| (p - q) * (p - q))
                            .sum::<f64>()
                            .sqrt();
                        if dist > 0.0 {
                            1.0 / dist
                        } else {
                            0.0
                        }
                    }
                };
                for d in 0..k {
                    let diff = scale * (x[d] - y[d]);
                    g_anchor[a][d] += g * diff;
                    g_cand[c][d] -= g * diff;
                }
            }
        }

        let jobs: Vec<(&ForwardTrace, &Vec<f64>)> = street_traces
            .iter()
            .zip(&g_anchor)
            .chain(aerial_traces.iter().zip(&g_cand))
            .filter(|(_, g)| g.iter().any(|v| *v != 0.0))
            .collect();
        let partial: Vec<ParamGrads> = jobs
            .par_iter()
            .map(|(t, g)| {
                let mut pg = ParamGrads::zeros(params.dims);
                backward_into(t, g, params, &mut pg)?;
                Ok(pg)
            })
            .collect::<Result<_>>()?;
        let mut grads = ParamGrads::zeros(params.dims);
        for pg in &partial {
            grads.add_assign(pg);
        }
        if !grads.0.is_finite() {
            return Err(Error::Divergence {
                step: self.step,
                message: "non-finite gradient".into(),
            });
        }

        let staged = batch
            .iter()
            .enumerate()
            .map(|(p, &id)| BatchEmbedding {
                pair_id: id,
                street: anchors[p].clone(),
                aerial: batch_cands[p].clone(),
            })
            .collect();
        Ok(StepOutcome { loss, grads, staged })
    }

    fn random_other(&mut self, i: usize, n: usize) -> usize {
        let j = self.rng.below(n - 1);
        if j >= i {
            j + 1
        } else {
            j
        }
    }
}

/// Trains from the given seed; `val` (may be empty) is evaluated after
/// every epoch.
pub fn train(
    train_pairs: &[CrossViewPair],
    val: &[CrossViewPair],
    cfg: &TrainingConfig,
) -> Result<(ModelParams, TrainReport)> {
    train_with(train_pairs, val, cfg, |_, _| {})
}

const CALIBRATION_PAIRS: usize = 1000;

/// As [`train`], calling `on_epoch` after each epoch's statistics are in.
pub fn train_with(
    train_pairs: &[CrossViewPair],
    val: &[CrossViewPair],
    cfg: &TrainingConfig,
    mut on_epoch: impl FnMut(&EpochStats, &ModelParams),
) -> Result<(ModelParams, TrainReport)> {
    cfg.validate()?;
    if train_pairs.len() < 2 {
        return Err(Error::EmptyBatch(format!(
            "training needs at least 2 pairs, got {}",
            train_pairs.len()
        )));
    }
    let channels = train_pairs[0].street.channels();
    let dims = cfg.model.dims(channels);
    let mut params = init_params(dims, cfg.seed)?;
    let sizes: Vec<usize> = params.blocks().iter().map(|b| b.len()).collect();
    let mut adam = Adam::new(cfg.adam(), &sizes);
    let pool = match cfg.mining {
        MiningMode::Global => Some(MiningPool::new(
            cfg.pool_capacity.unwrap_or(train_pairs.len()),
            cfg.mining_r,
            cfg.pool_update_period,
        )?),
        _ => None,
    };
    let mut trainer = Trainer {
        cfg,
        pairs: train_pairs,
        rng: Rng::derived(cfg.seed, u64::MAX),
        pool,
        staged: Vec::new(),
        step: 0,
    };
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..train_pairs.len()).collect();

    let mut margins = None;
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut loss_cfg = cfg.loss_for_epoch(epoch);
        let binomial = matches!(loss_cfg.kind, LossKind::BinomialAsym | LossKind::BinomialSym);
        if cfg.calibrate_margins_at_switch && binomial {
            if margins.is_none() {
                let sample = &train_pairs[..train_pairs.len().min(CALIBRATION_PAIRS)];
                let (m_p, m_n) = calibrate_margins(&params, sample)?;
                report.calibrated_margins = Some((m_p, m_n));
                margins = Some((m_p, m_n));
            }
            if let Some((m_p, m_n)) = margins {
                loss_cfg.m_p = m_p;
                loss_cfg.m_n = m_n;
            }
        }
        let lr = cfg.lr_for_epoch(epoch);
        trainer.rng.shuffle(&mut order);
        let (mut loss_sum, mut steps) = (0.0, 0u64);
        for batch in order.chunks(cfg.batch_pairs).filter(|b| b.len() >= 2) {
            let out = trainer.run_step(&params, batch, &loss_cfg)?;
            let g = &out.grads.0;
            let ModelParams {
                w1_street,
                b1_street,
                w1_aerial,
                b1_aerial,
                w2,
                b2,
                ..
            } = &mut params;
            adam.step(
                &mut [w1_street, b1_street, w1_aerial, b1_aerial, w2, b2],
                &g.blocks(),
                lr,
            )?;
            if !params.is_finite() {
                return Err(Error::Divergence {
                    step: trainer.step,
                    message: "non-finite parameters after update".into(),
                });
            }
            trainer.commit_step(out.staged)?;
            loss_sum += out.loss;
            steps += 1;
        }
        let eval = if val.is_empty() {
            None
        } else {
            Some(evaluate(&params, val)?)
        };
        let stats = EpochStats {
            epoch,
            loss_kind: loss_cfg.kind,
            lr,
            mean_loss: if steps > 0 { loss_sum / steps as f64 } else { 0.0 },
            steps,
            recall_at_1: eval.as_ref().map(|e| e.recall.top1()),
            recall_top1pct: eval.as_ref().map(|e| e.recall.recall_top1pct),
            similarity: eval.as_ref().map(|e| e.similarity),
            wall_clock_secs: started.elapsed().as_secs_f64(),
        };
        on_epoch(&stats, &params);
        report.epochs.push(stats);
    }
    Ok((params, report))
}

/// Top-1 recall of aligned- and rotate-trained models on aligned and
/// rotated validation data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentMatrix {
    pub aligned_train_aligned_val: f64,
    pub aligned_train_rotated_val: f64,
    pub rotate_train_aligned_val: f64,
    pub rotate_train_rotated_val: f64,
}

impl AlignmentMatrix {
    pub fn table(&self) -> String {
        format!(
            "{:<16} {:>10} {:>10}\n{:<16} {:>9.1}% {:>9.1}%\n{:<16} {:>9.1}% {:>9.1}%\n",
            "train \\ val",
            "aligned",
            "rotated",
            "aligned",
            100.0 * self.aligned_train_aligned_val,
            100.0 * self.aligned_train_rotated_val,
            "random rotate",
            100.0 * self.rotate_train_aligned_val,
            100.0 * self.rotate_train_rotated_val,
        )
    }
}

/// Trains one model per regime and evaluates both on `val` as given and on
/// a randomly rotated copy.
pub fn alignment_matrix(
    cfg: &TrainingConfig,
    train_pairs: &[CrossViewPair],
    val: &[CrossViewPair],
) -> Result<AlignmentMatrix> {
    let rotated = rotate_pairs(val, cfg.seed ^ 0x5eed)?;
    let run = |regime| -> Result<(f64, f64)> {
        let c = TrainingConfig {
            alignment_regime: regime,
            ..cfg.clone()
        };
        let (params, _) = train(train_pairs, &[], &c)?;
        Ok((
            evaluate(&params, val)?.recall.top1(),
            evaluate(&params, &rotated)?.recall.top1(),
        ))
    };
    let (aa, ar) = run(AlignmentRegime::Aligned)?;
    let (ra, rr) = run(AlignmentRegime::RandomRotate)?;
    Ok(AlignmentMatrix {
        aligned_train_aligned_val: aa,
        aligned_train_rotated_val: ar,
        rotate_train_aligned_val: ra,
        rotate_train_rotated_val: rr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticConfig};

    fn data(n: usize) -> Vec<CrossViewPair> {
        generate_synthetic(&SyntheticConfig {
            n_pairs: n,
            street_width: 32,
            aerial_size: 12,
            ..SyntheticConfig::default()
        })
        .unwrap()
    }

    fn small_cfg() -> TrainingConfig {
        TrainingConfig {
            batch_pairs: 4,
            epochs: 2,
            warmup_epochs: 1,
            model: ModelConfig {
                hidden: 8,
                embed_dim: 8,
                coord_channels: 2,
            },
            ..TrainingConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        let bad = [
            TrainingConfig {
                warmup_epochs: 3,
                ..small_cfg()
            },
            TrainingConfig {
                batch_pairs: 1,
                ..small_cfg()
            },
            TrainingConfig {
                lr: f64::NAN,
                ..small_cfg()
            },
        ];
        for c in bad {
            assert!(matches!(train(&data(8), &[], &c), Err(Error::Config(_))));
        }
        assert!(small_cfg().validate().is_ok());
    }

    #[test]
    fn pool_holds_every_batch_member_after_each_refresh() {
        let d = data(12);
        for period in [1usize, 3] {
            let cfg = TrainingConfig {
                mining: MiningMode::Global,
                batch_pairs: 4,
                pool_capacity: Some(12),
                pool_update_period: period,
                ..small_cfg()
            };
            let params = init_params(cfg.model.dims(8), 0).unwrap();
            let mut t = Trainer {
                cfg: &cfg,
                pairs: &d,
                rng: Rng::new(0),
                pool: Some(MiningPool::new(12, cfg.mining_r, period).unwrap()),
                staged: Vec::new(),
                step: 0,
            };
            let batches: Vec<Vec<usize>> = (0..3).map(|b| (4 * b..4 * b + 4).collect()).collect();
            let loss_cfg = cfg.loss_for_epoch(0);
            for (k, batch) in batches.iter().enumerate() {
                let out = t.run_step(&params, batch, &loss_cfg).unwrap();
                t.commit_step(out.staged).unwrap();
                let pool = t.pool.as_ref().unwrap();
                if (k + 1) % period == 0 {
                    for b in &batches[..=k] {
                        for &i in b {
                            assert!(pool.contains(View::Street, i) && pool.contains(View::Aerial, i));
                        }
                    }
                } else {
                    assert!(batch.iter().all(|&i| !pool.contains(View::Aerial, i)));
                }
            }
        }
    }

    #[test]
    fn warmup_schedule() {
        let c = TrainingConfig {
            epochs: 40,
            warmup_epochs: 30,
            ..TrainingConfig::default()
        };
        assert_eq!(c.loss_for_epoch(29).kind, LossKind::WeightedSoft);
        assert_eq!(c.loss_for_epoch(30).kind, LossKind::BinomialAsym);
        assert!((c.lr_for_epoch(2) - 1e-3 * 0.95 * 0.95).abs() < 1e-18);
    }

    #[test]
    fn zero_lr_keeps_initial_params() {
        let c = TrainingConfig {
            lr: 0.0,
            ..small_cfg()
        };
        let (p, _) = train(&data(10), &[], &c).unwrap();
        let init = init_params(c.model.dims(8), c.seed).unwrap();
        assert_eq!(p, init);
    }

    #[test]
    fn every_mining_mode_runs_deterministically() {
        let d = data(12);
        for mining in [MiningMode::None, MiningMode::Batch, MiningMode::Global] {
            for regime in [AlignmentRegime::Aligned, AlignmentRegime::RandomRotate] {
                let c = TrainingConfig {
                    mining,
                    alignment_regime: regime,
                    pool_capacity: Some(6),
                    ..small_cfg()
                };
                let (a, ra) = train(&d, &d[..6], &c).unwrap();
                let (b, rb) = train(&d, &d[..6], &c).unwrap();
                assert_eq!(a, b, "{mining:?} {regime:?}");
                // wall-clock times differ; the serialized report must not
                assert_eq!(
                    serde_json::to_string(&ra).unwrap(),
                    serde_json::to_string(&rb).unwrap()
                );
                assert_eq!(ra.epochs.len(), 2);
            }
        }
    }

    #[test]
    fn constant_embedding_calibrates_to_one() {
        let mut p = ModelParams::zeros(ModelDims::new(8, 4, 3));
        p.b2 = vec![1.0, 2.0, 2.0];
        let (mp, mn) = calibrate_margins(&p, &data(5)).unwrap();
        assert!((mp - 1.0).abs() < 1e-12 && (mn - 1.0).abs() < 1e-12);
        assert!(matches!(calibrate_margins(&p, &[]), Err(Error::EmptyBatch(_))));
    }

    #[test]
    fn evaluation_of_constant_model_ties_by_id() {
        let mut p = ModelParams::zeros(ModelDims::new(8, 4, 3));
        p.b2 = vec![1.0, 0.0, 0.0];
        let e = evaluate(&p, &data(10)).unwrap();
        // every aerial embedding is identical, so query i ranks at i + 1
        assert_eq!(e.recall.ranks, (1..=10).collect::<Vec<_>>());
        assert_eq!(e.similarity.var_p, 0.0);
    }
}
