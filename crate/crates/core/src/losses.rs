//! Metric-learning losses on embedding distances and similarities, with
//! analytic gradients.
//!
//! * hinge triplet loss on distances,
//! * weighted soft-margin triplet loss `mean σ(α (d_p − d_n))`,
//! * binomial deviance on cosine similarities, symmetric
//!   `mean σ(−α(s_p − m)) + mean σ(α(s_n − m))` and asymmetric
//!   `Σσ(−α_p(s_p − m_p)) / (α_p N_p) + Σσ(α_n(s_n − m_n)) / (α_n N_n)`,
//!
//! where `σ(x) = ln(1 + eˣ)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::VectorK;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    HardTriplet,
    WeightedSoft,
    BinomialSym,
    BinomialAsym,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    SquaredEuclidean,
    Euclidean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Margin of the hinge triplet loss and of the symmetric binomial loss.
    pub margin: f64,
    /// Steepness of the weighted soft-margin and symmetric binomial losses.
    pub alpha: f64,
    pub alpha_p: f64,
    pub alpha_n: f64,
    pub m_p: f64,
    pub m_n: f64,
    pub distance: DistanceKind,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::BinomialAsym,
            margin: 0.5,
            alpha: 20.0,
            alpha_p: 5.0,
            alpha_n: 20.0,
            m_p: 0.0,
            m_n: 0.7,
            distance: DistanceKind::SquaredEuclidean,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, a) in [
            ("alpha", self.alpha),
            ("alpha_p", self.alpha_p),
            ("alpha_n", self.alpha_n),
        ] {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {a}")));
            }
        }
        for (name, m) in [("margin", self.margin), ("m_p", self.m_p), ("m_n", self.m_n)] {
            if !m.is_finite() {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        Ok(())
    }

    pub fn is_similarity_based(&self) -> bool {
        matches!(self.kind, LossKind::BinomialSym | LossKind::BinomialAsym)
    }
}

/// `ln(1 + eˣ)` without overflow.
pub fn soft_margin(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `1 / (1 + e⁻ˣ)` without overflow.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `σ(α d) / α`.
pub fn normalized_soft_margin(alpha: f64, d: f64) -> f64 {
    soft_margin(alpha * d) / alpha
}

/// `∂/∂d [σ(α d) / α] = 1 / (1 + e^(−α d))`.
pub fn normalized_soft_margin_grad(alpha: f64, d: f64) -> f64 {
    sigmoid(alpha * d)
}

/// Loss value with gradients w.r.t. each positive and negative term.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad_p: Vec<f64>,
    pub grad_n: Vec<f64>,
}

fn check_triplets(d_p: &[f64], d_n: &[f64]) -> Result<()> {
    if d_p.len() != d_n.len() {
        return Err(Error::Shape(format!(
            "{} positive vs {} negative distances",
            d_p.len(),
            d_n.len()
        )));
    }
    if d_p.is_empty() {
        return Err(Error::EmptyBatch("no triplets".into()));
    }
    Ok(())
}

/// `mean max(0, d_p − d_n + m)`; the subgradient at the kink is 0.
pub fn hard_triplet_loss(d_p: &[f64], d_n: &[f64], margin: f64) -> Result<LossOutput> {
    check_triplets(d_p, d_n)?;
    let n = d_p.len() as f64;
    let mut out = LossOutput {
        value: 0.0,
        grad_p: vec![0.0; d_p.len()],
        grad_n: vec![0.0; d_n.len()],
    };
    for i in 0..d_p.len() {
        let h = d_p[i] - d_n[i] + margin;
        if h > 0.0 {
            out.value += h / n;
            out.grad_p[i] = 1.0 / n;
            out.grad_n[i] = -1.0 / n;
        }
    }
    Ok(out)
}

/// `mean σ(α (d_p − d_n))`.
pub fn weighted_soft_margin_loss(d_p: &[f64], d_n: &[f64], alpha: f64) -> Result<LossOutput> {
    check_triplets(d_p, d_n)?;
    let n = d_p.len() as f64;
    let mut out = LossOutput {
        value: 0.0,
        grad_p: vec![0.0; d_p.len()],
        grad_n: vec![0.0; d_n.len()],
    };
    for i in 0..d_p.len() {
        let x = alpha * (d_p[i] - d_n[i]);
        out.value += soft_margin(x) / n;
        let g = alpha * sigmoid(x) / n;
        out.grad_p[i] = g;
        out.grad_n[i] = -g;
    }
    Ok(out)
}

/// Positive and negative cosine similarities of a batch, with the
/// `(anchor, candidate)` index pairs they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSimilarities {
    pub s_p: Vec<f64>,
    pub s_n: Vec<f64>,
    pub pos_index: Vec<(usize, usize)>,
    pub neg_index: Vec<(usize, usize)>,
}

/// Binomial deviance; the asymmetric form uses the α-normalized soft margin.
pub fn binomial_loss(batch: &BatchSimilarities, cfg: &LossConfig) -> Result<LossOutput> {
    if batch.s_p.is_empty() || batch.s_n.is_empty() {
        return Err(Error::EmptyBatch(format!(
            "binomial loss needs positives and negatives, got {} and {}",
            batch.s_p.len(),
            batch.s_n.len()
        )));
    }
    let (ap, an, mp, mn, normalized) = match cfg.kind {
        LossKind::BinomialAsym => (cfg.alpha_p, cfg.alpha_n, cfg.m_p, cfg.m_n, true),
        LossKind::BinomialSym => (cfg.alpha, cfg.alpha, cfg.margin, cfg.margin, false),
        other => {
            return Err(Error::Config(format!("{other:?} is not a binomial loss")));
        }
    };
    let np = batch.s_p.len() as f64;
    let nn = batch.s_n.len() as f64;
    // value divisor and gradient multiplier for each side
    let (vp, gp) = if normalized {
        (ap * np, 1.0 / np)
    } else {
        (np, ap / np)
    };
    let (vn, gn) = if normalized {
        (an * nn, 1.0 / nn)
    } else {
        (nn, an / nn)
    };

    let mut value = 0.0;
    let grad_p = batch
        .s_p
        .iter()
        .map(|&s| {
            let x = -ap * (s - mp);
            value += soft_margin(x) / vp;
            -gp * sigmoid(x)
        })
        .collect();
    let grad_n = batch
        .s_n
        .iter()
        .map(|&s| {
            let x = an * (s - mn);
            value += soft_margin(x) / vn;
            gn * sigmoid(x)
        })
        .collect();
    Ok(LossOutput {
        value,
        grad_p,
        grad_n,
    })
}

/// Index pairs into `(anchors, candidates)` for the positive and negative
/// terms. For triplet losses, entry `i` of both lists forms triplet `i`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Pairing {
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
}

/// Similarities and distances for every indexed pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMeasures {
    pub similarities: BatchSimilarities,
    pub d_p: Vec<f64>,
    pub d_n: Vec<f64>,
}

const UNIT_TOLERANCE: f64 = 1e-6;

fn check_unit(v: &VectorK) -> Result<()> {
    let n = v.norm();
    if (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::Normalization(format!(
            "expected a unit vector, norm is {n}"
        )));
    }
    Ok(())
}

pub fn distance(a: &VectorK, b: &VectorK, kind: DistanceKind) -> f64 {
    let sq: f64 = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    match kind {
        DistanceKind::SquaredEuclidean => sq,
        DistanceKind::Euclidean => sq.sqrt(),
    }
}

pub fn pair_similarities(
    anchors: &[VectorK],
    candidates: &[VectorK],
    pairing: &Pairing,
    kind: DistanceKind,
) -> Result<PairMeasures> {
    for v in anchors.iter().chain(candidates) {
        check_unit(v)?;
    }
    let measure = |list: &[(usize, usize)]| -> Result<(Vec<f64>, Vec<f64>)> {
        let mut sims = Vec::with_capacity(list.len());
        let mut dists = Vec::with_capacity(list.len());
        for &(a, c) in list {
            let (Some(x), Some(y)) = (anchors.get(a), candidates.get(c)) else {
                return Err(Error::Shape(format!("pair ({a}, {c}) out of range")));
            };
            sims.push(x.dot(y)?.clamp(-1.0, 1.0));
            dists.push(distance(x, y, kind));
        }
        Ok((sims, dists))
    };
    let (s_p, d_p) = measure(&pairing.positives)?;
    let (s_n, d_n) = measure(&pairing.negatives)?;
    Ok(PairMeasures {
        similarities: BatchSimilarities {
            s_p,
            s_n,
            pos_index: pairing.positives.clone(),
            neg_index: pairing.negatives.clone(),
        },
        d_p,
        d_n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{l2_normalize, Rng};

    const LN2: f64 = std::f64::consts::LN_2;

    fn central<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], i: usize) -> f64 {
        let h = 1e-5;
        let mut a = x.to_vec();
        let mut b = x.to_vec();
        a[i] += h;
        b[i] -= h;
        (f(&a) - f(&b)) / (2.0 * h)
    }

    // Floor on the denominator: saturated gradients are below the
    // finite-difference roundoff (~1e-9 here) and are compared absolutely.
    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
    }

    #[test]
    fn soft_margin_examples() {
        assert!((soft_margin(0.0) - LN2).abs() < 1e-15);
        assert!((soft_margin(100.0) - 100.0).abs() < 1e-12);
        assert!(soft_margin(-800.0) >= 0.0);
        assert!(soft_margin(1e4).is_finite());
        for a in [0.1, 5.0, 20.0, 300.0] {
            assert_eq!(normalized_soft_margin_grad(a, 0.0), 0.5);
        }
        assert!((normalized_soft_margin(5.0, 0.0) - LN2 / 5.0).abs() < 1e-15);
    }

    #[test]
    fn hard_triplet_examples() {
        assert_eq!(hard_triplet_loss(&[0.7], &[0.7], 0.0).unwrap().value, 0.0);
        assert!((hard_triplet_loss(&[2.0], &[1.0], 0.5).unwrap().value - 1.5).abs() < 1e-15);
        let inactive = hard_triplet_loss(&[0.1], &[1.0], 0.5).unwrap();
        assert_eq!(inactive.grad_p, vec![0.0]);
        assert_eq!(inactive.grad_n, vec![0.0]);
        // kink
        let kink = hard_triplet_loss(&[0.5], &[1.0], 0.5).unwrap();
        assert_eq!(kink.grad_p, vec![0.0]);
        assert!(matches!(
            hard_triplet_loss(&[1.0], &[], 0.1),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn weighted_soft_margin_equal_distances() {
        for alpha in [0.5, 20.0] {
            let out = weighted_soft_margin_loss(&[0.3, 1.2], &[0.3, 1.2], alpha).unwrap();
            assert!((out.value - LN2).abs() < 1e-15);
        }
        assert_eq!(LossConfig::default().alpha, 20.0);
    }

    #[test]
    fn weighted_soft_margin_gradients() {
        let mut rng = Rng::new(4);
        for _ in 0..100 {
            let n = 1 + rng.below(5);
            let dp: Vec<f64> = (0..n).map(|_| rng.uniform_range(0.0, 4.0)).collect();
            let dn: Vec<f64> = (0..n).map(|_| rng.uniform_range(0.0, 4.0)).collect();
            let alpha = rng.uniform_range(0.5, 20.0);
            let out = weighted_soft_margin_loss(&dp, &dn, alpha).unwrap();
            for i in 0..n {
                let fp = central(
                    |x| weighted_soft_margin_loss(x, &dn, alpha).unwrap().value,
                    &dp,
                    i,
                );
                let fn_ = central(
                    |x| weighted_soft_margin_loss(&dp, x, alpha).unwrap().value,
                    &dn,
                    i,
                );
                assert!(rel(out.grad_p[i], fp) < 1e-6, "{} vs {fp}", out.grad_p[i]);
                assert!(rel(out.grad_n[i], fn_) < 1e-6);
            }
        }
    }

    fn batch(s_p: Vec<f64>, s_n: Vec<f64>) -> BatchSimilarities {
        BatchSimilarities {
            pos_index: (0..s_p.len()).map(|i| (i, i)).collect(),
            neg_index: (0..s_n.len()).map(|i| (i, i + 1)).collect(),
            s_p,
            s_n,
        }
    }

    #[test]
    fn binomial_defaults_and_terms() {
        let cfg = LossConfig::default();
        assert_eq!(
            (cfg.alpha_p, cfg.alpha_n, cfg.m_p, cfg.m_n),
            (5.0, 20.0, 0.0, 0.7)
        );
        // s_p = m_p contributes ln2 / α_p; push the negative far away
        let out = binomial_loss(&batch(vec![0.0], vec![-1.0]), &cfg).unwrap();
        let neg = soft_margin(20.0 * (-1.0 - 0.7)) / 20.0;
        assert!((out.value - (LN2 / 5.0 + neg)).abs() < 1e-15);
        // gradient magnitudes
        let np = 4;
        let out = binomial_loss(&batch(vec![0.0; np], vec![0.4; 3]), &cfg).unwrap();
        assert!((out.grad_p[0].abs() - 1.0 / (2.0 * np as f64)).abs() < 1e-15);
        assert!(out.grad_n[0].abs() < 0.0025 / 3.0);
    }

    #[test]
    fn binomial_empty_sides() {
        let cfg = LossConfig::default();
        assert!(matches!(
            binomial_loss(&batch(vec![], vec![0.1]), &cfg),
            Err(Error::EmptyBatch(_))
        ));
        assert!(matches!(
            binomial_loss(&batch(vec![0.1], vec![]), &cfg),
            Err(Error::EmptyBatch(_))
        ));
    }

    #[test]
    fn asymmetric_reduces_to_symmetric() {
        let mut rng = Rng::new(17);
        for _ in 0..50 {
            let alpha = rng.uniform_range(1.0, 30.0);
            let m = rng.uniform_range(-0.5, 0.9);
            let sp: Vec<f64> = (0..3).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
            let sn: Vec<f64> = (0..5).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
            let b = batch(sp, sn);
            let asym = LossConfig {
                kind: LossKind::BinomialAsym,
                alpha_p: alpha,
                alpha_n: alpha,
                m_p: m,
                m_n: m,
                ..LossConfig::default()
            };
            let sym = LossConfig {
                kind: LossKind::BinomialSym,
                alpha,
                margin: m,
                ..LossConfig::default()
            };
            let a = binomial_loss(&b, &asym).unwrap();
            let s = binomial_loss(&b, &sym).unwrap();
            assert!((a.value * alpha - s.value).abs() < 1e-12);
            for (x, y) in a
                .grad_p
                .iter()
                .chain(&a.grad_n)
                .zip(s.grad_p.iter().chain(&s.grad_n))
            {
                assert!((x * alpha - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn binomial_gradient_signs_and_fd() {
        let mut rng = Rng::new(2);
        for kind in [LossKind::BinomialAsym, LossKind::BinomialSym] {
            let cfg = LossConfig {
                kind,
                ..LossConfig::default()
            };
            for _ in 0..100 {
                let sp: Vec<f64> = (0..3).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
                let sn: Vec<f64> = (0..4).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
                let out = binomial_loss(&batch(sp.clone(), sn.clone()), &cfg).unwrap();
                for i in 0..sp.len() {
                    assert!(out.grad_p[i] < 0.0);
                    let f = central(
                        |x| binomial_loss(&batch(x.to_vec(), sn.clone()), &cfg).unwrap().value,
                        &sp,
                        i,
                    );
                    assert!(rel(out.grad_p[i], f) < 1e-6);
                }
                for i in 0..sn.len() {
                    assert!(out.grad_n[i] > 0.0);
                    let f = central(
                        |x| binomial_loss(&batch(sp.clone(), x.to_vec()), &cfg).unwrap().value,
                        &sn,
                        i,
                    );
                    assert!(rel(out.grad_n[i], f) < 1e-6);
                }
            }
        }
    }

    #[test]
    fn losses_stay_finite_for_large_arguments() {
        let cfg = LossConfig {
            alpha_p: 1e4,
            alpha_n: 1e4,
            ..LossConfig::default()
        };
        let out = binomial_loss(&batch(vec![-1.0, 1.0], vec![-1.0, 1.0]), &cfg).unwrap();
        assert!(out.value.is_finite());
        assert!(out.grad_p.iter().chain(&out.grad_n).all(|g| g.is_finite()));
        let out = weighted_soft_margin_loss(&[1.0], &[0.0], 1e4).unwrap();
        assert!(out.value.is_finite() && (out.value - 1e4).abs() < 1e-9);
    }

    fn unit(rng: &mut Rng, k: usize) -> VectorK {
        l2_normalize(&VectorK::new((0..k).map(|_| rng.normal()).collect()).unwrap()).unwrap()
    }

    #[test]
    fn similarity_distance_consistency() {
        let e1 = VectorK::new(vec![1.0, 0.0]).unwrap();
        let e2 = VectorK::new(vec![0.0, 1.0]).unwrap();
        let pairing = Pairing {
            positives: vec![(0, 0)],
            negatives: vec![(0, 1)],
        };
        let m = pair_similarities(
            std::slice::from_ref(&e1),
            &[e1.clone(), e2],
            &pairing,
            DistanceKind::SquaredEuclidean,
        )
        .unwrap();
        assert_eq!(m.similarities.s_p, vec![1.0]);
        assert_eq!(m.d_p, vec![0.0]);
        assert_eq!(m.similarities.s_n, vec![0.0]);
        assert!((m.d_n[0] - 2.0).abs() < 1e-15);

        let mut rng = Rng::new(6);
        let a: Vec<_> = (0..20).map(|_| unit(&mut rng, 16)).collect();
        let b: Vec<_> = (0..20).map(|_| unit(&mut rng, 16)).collect();
        let pairing = Pairing {
            positives: (0..20).map(|i| (i, i)).collect(),
            negatives: (0..20).map(|i| (i, 19 - i)).collect(),
        };
        let m = pair_similarities(&a, &b, &pairing, DistanceKind::SquaredEuclidean).unwrap();
        for (d, s) in m
            .d_p
            .iter()
            .chain(&m.d_n)
            .zip(m.similarities.s_p.iter().chain(&m.similarities.s_n))
        {
            assert!((d + 2.0 * s - 2.0).abs() < 1e-10);
        }
    }

    #[test]
    fn non_unit_inputs_rejected() {
        let v = VectorK::new(vec![1.0, 1.0]).unwrap();
        let pairing = Pairing {
            positives: vec![(0, 0)],
            negatives: vec![],
        };
        assert!(matches!(
            pair_similarities(
                std::slice::from_ref(&v),
                std::slice::from_ref(&v),
                &pairing,
                DistanceKind::Euclidean
            ),
            Err(Error::Normalization(_))
        ));
    }
}
