//! Grad-CAM for cross-view pair scores.
//!
//! The score of a pair is the inner product of the two un-normalized
//! embeddings. Activation maps weight each stage-1 channel of the target
//! view by the spatial mean of the score's gradient w.r.t. that channel,
//! sum over channels and rectify. With average pooling that weight is
//! `(Wᵀ p_other)_k / (H W)`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{in_disk, rotate_aerial};
use crate::error::{Error, Result};
use crate::model::{forward_features, FeatureTrace, ModelParams, View};
use crate::numerics::Tensor3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationMap {
    pub view: View,
    pub height: usize,
    pub width: usize,
    /// Row-major, non-negative.
    pub values: Vec<f64>,
    pub street_id: Option<String>,
    pub aerial_id: Option<String>,
}

impl ActivationMap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Single-channel tensor view, for CVFM export or rotation.
    pub fn to_tensor(&self) -> Tensor3 {
        Tensor3::new(self.height, self.width, 1, self.values.clone()).expect("map values are finite")
    }

    /// Binary 16-bit PGM, scaled so the maximum maps to 65535.
    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let max = self.max();
        let mut out = format!("P5\n{} {}\n65535\n", self.width, self.height).into_bytes();
        for v in &self.values {
            let q = if max > 0.0 {
                (v / max * 65535.0).round() as u16
            } else {
                0
            };
            out.extend_from_slice(&q.to_be_bytes());
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }
}

/// Traces of both views for one scored pair.
#[derive(Debug, Clone)]
pub struct MatchTraces {
    pub street: FeatureTrace,
    pub aerial: FeatureTrace,
}

pub fn matching_score(
    params: &ModelParams,
    street: &Tensor3,
    aerial: &Tensor3,
) -> Result<(f64, MatchTraces)> {
    let s = forward_features(params, View::Street, street)?;
    let a = forward_features(params, View::Aerial, aerial)?;
    let score = s.pre_norm.dot(&a.pre_norm)?;
    Ok((score, MatchTraces { street: s, aerial: a }))
}

/// `∂score / ∂pooled` for the target view: `Wᵀ p_other`.
pub fn pooled_score_gradient(params: &ModelParams, traces: &MatchTraces, target: View) -> Result<Vec<f64>> {
    let d = params.dims;
    for t in [&traces.street, &traces.aerial] {
        if t.pre_norm.dim() != d.embed_dim
            || t.pooled.len() != d.hidden
            || t.stage1_post.channels() != d.hidden
        {
            return Err(Error::Trace("match traces do not fit these parameters".into()));
        }
    }
    if traces.street.view != View::Street || traces.aerial.view != View::Aerial {
        return Err(Error::Trace(
            "match traces are attached to the wrong views".into(),
        ));
    }
    let other = match target {
        View::Street => &traces.aerial,
        View::Aerial => &traces.street,
    };
    let p = other.pre_norm.as_slice();
    Ok((0..d.hidden)
        .map(|j| (0..d.embed_dim).map(|i| params.w2[i * d.hidden + j] * p[i]).sum())
        .collect())
}

/// Grad-CAM map from stage-1 activations and the pooled-vector gradient.
pub fn grad_cam_from_pooled(activations: &Tensor3, grad_pooled: &[f64], view: View) -> Result<ActivationMap> {
    let (h, w, ch) = activations.shape();
    if grad_pooled.len() != ch {
        return Err(Error::Trace(format!(
            "{} channel weights for {ch} activation channels",
            grad_pooled.len()
        )));
    }
    let inv = 1.0 / (h * w) as f64;
    let alpha: Vec<f64> = grad_pooled.iter().map(|g| g * inv).collect();
    let mut values = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let v: f64 = activations
                .pixel(r, c)
                .iter()
                .zip(&alpha)
                .map(|(a, b)| a * b)
                .sum();
            values.push(v.max(0.0));
        }
    }
    Ok(ActivationMap {
        view,
        height: h,
        width: w,
        values,
        street_id: None,
        aerial_id: None,
    })
}

/// Channel weights `α_k` for the target view.
pub fn grad_cam_weights(params: &ModelParams, traces: &MatchTraces, target: View) -> Result<Vec<f64>> {
    let t = match target {
        View::Street => &traces.street,
        View::Aerial => &traces.aerial,
    };
    let inv = 1.0 / t.stage1_post.locations() as f64;
    Ok(pooled_score_gradient(params, traces, target)?
        .into_iter()
        .map(|g| g * inv)
        .collect())
}

pub fn grad_cam(params: &ModelParams, traces: &MatchTraces, target: View) -> Result<ActivationMap> {
    let grad = pooled_score_gradient(params, traces, target)?;
    let t = match target {
        View::Street => &traces.street,
        View::Aerial => &traces.aerial,
    };
    grad_cam_from_pooled(&t.stage1_post, &grad, target)
}

/// Both maps for a pair, tagged with the pair ids.
pub fn pair_maps(
    params: &ModelParams,
    street: &Tensor3,
    aerial: &Tensor3,
    street_id: Option<&str>,
    aerial_id: Option<&str>,
) -> Result<(ActivationMap, ActivationMap)> {
    let (_, traces) = matching_score(params, street, aerial)?;
    let tag = |mut m: ActivationMap| {
        m.street_id = street_id.map(str::to_string);
        m.aerial_id = aerial_id.map(str::to_string);
        m
    };
    Ok((
        tag(grad_cam(params, &traces, View::Street)?),
        tag(grad_cam(params, &traces, View::Aerial)?),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedPixel {
    pub row: usize,
    pub col: usize,
    pub weight: f64,
}

/// Pixels whose min-max normalized value exceeds `tau`, weighted by that
/// normalized value.
pub fn threshold_pixels(map: &ActivationMap, tau: f64) -> Result<Vec<WeightedPixel>> {
    let max = map.max();
    if max <= 0.0 {
        return Err(Error::DegenerateMap("activation map is identically zero".into()));
    }
    let min = map.values.iter().copied().fold(f64::INFINITY, f64::min);
    let span = max - min;
    let mut out = Vec::new();
    for r in 0..map.height {
        for c in 0..map.width {
            let v = map.get(r, c);
            let norm = if span > 0.0 { (v - min) / span } else { 1.0 };
            if norm > tau {
                out.push(WeightedPixel {
                    row: r,
                    col: c,
                    weight: norm,
                });
            }
        }
    }
    Ok(out)
}

/// Mean cosine between `map(rotate(aerial, φ))` and `rotate(map(aerial), φ)`
/// over pairs and angles, inside the aerial disk. 1 means the aerial maps
/// rotate exactly with their input.
pub fn rotation_equivariance(
    params: &ModelParams,
    pairs: &[(&Tensor3, &Tensor3)],
    angles_deg: &[f64],
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for &(street, aerial) in pairs {
        let (_, base) = pair_maps(params, street, aerial, None, None)?;
        let base_t = base.to_tensor();
        for &phi in angles_deg {
            let rotated_input = rotate_aerial(aerial, phi)?;
            let (_, direct) = pair_maps(params, street, &rotated_input, None, None)?;
            let moved = rotate_aerial(&base_t, phi)?;
            let n = aerial.height();
            let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
            for r in 0..n {
                for c in 0..n {
                    if in_disk(r, c, n) {
                        let a = direct.get(r, c);
                        let b = moved.get(r, c, 0);
                        dot += a * b;
                        na += a * a;
                        nb += b * b;
                    }
                }
            }
            if na > 0.0 && nb > 0.0 {
                total += dot / (na.sqrt() * nb.sqrt());
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyBatch("no pairs or angles".into()));
    }
    Ok(total / count as f64)
}
