//! Unsupervised relative orientation from activation maps.
//!
//! Thresholded Grad-CAM pixels of each view are turned into azimuthal mass
//! histograms (street: column azimuth, aerial: polar angle about the image
//! center) and the histograms are circularly correlated,
//! `c(φ) = Σ_θ p_street(θ) p_aerial(θ + φ)`; the highest peak is the
//! estimate. A supervised regression head on the embeddings is provided for
//! comparison.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    aerial_polar_angle, circular_diff_deg, street_column_azimuth, wrap_deg_360, CrossViewPair,
};
use crate::error::{Error, Result};
use crate::explain::{pair_maps, threshold_pixels, WeightedPixel};
use crate::model::{forward_features, ModelParams, View};
use crate::numerics::{dft, idft, ComplexSpectrum, Rng};
use crate::optim::{Adam, AdamConfig};
use crate::plot::{bar_chart, Series};

/// Minimum angular distance between the primary and secondary peak.
pub const SECONDARY_PEAK_MIN_DEG: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngularHistogram {
    mass: Vec<f64>,
}

impl AngularHistogram {
    pub fn zeros(bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(Error::Config(format!(
                "histogram needs at least 2 bins, got {bins}"
            )));
        }
        Ok(Self {
            mass: vec![0.0; bins],
        })
    }

    /// Normalizes raw non-negative masses to sum 1 (left as is if all zero).
    pub fn from_mass(mass: Vec<f64>) -> Result<Self> {
        let mut h = Self::zeros(mass.len())?;
        if mass.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::Shape(
                "histogram mass must be finite and non-negative".into(),
            ));
        }
        h.mass = mass;
        h.normalize();
        Ok(h)
    }

    pub fn bins(&self) -> usize {
        self.mass.len()
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn bin_width_deg(&self) -> f64 {
        360.0 / self.bins() as f64
    }

    /// Bin covering `deg`, snapping values within 1e-9 bins of an upper edge
    /// to the next bin so lattice angles land where they belong.
    pub fn bin_of(&self, deg: f64) -> usize {
        let b = self.bins();
        let x = wrap_deg_360(deg) * b as f64 / 360.0;
        (x + 1e-9).floor() as usize % b
    }

    pub fn add(&mut self, deg: f64, weight: f64) {
        let b = self.bin_of(deg);
        self.mass[b] += weight;
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    fn normalize(&mut self) {
        let t = self.total();
        if t > 0.0 {
            self.mass.iter_mut().for_each(|m| *m /= t);
        }
    }

    /// Circular shift by `k` bins: new\[b] = old\[b − k].
    pub fn shifted(&self, k: isize) -> Self {
        let b = self.bins() as isize;
        let mass = (0..b)
            .map(|i| self.mass[(i - k).rem_euclid(b) as usize])
            .collect();
        Self { mass }
    }

    /// Circular box filter over `width` bins (odd; 0 or 1 is a no-op).
    pub fn smoothed(&self, width: usize) -> Self {
        if width <= 1 {
            return self.clone();
        }
        let b = self.bins() as isize;
        let half = (width / 2) as isize;
        let mass = (0..b)
            .map(|i| {
                (-half..=half)
                    .map(|d| self.mass[(i + d).rem_euclid(b) as usize])
                    .sum::<f64>()
            })
            .collect();
        let mut h = Self { mass };
        h.normalize();
        h
    }
}

pub fn street_histogram(pixels: &[WeightedPixel], width: usize, bins: usize) -> Result<AngularHistogram> {
    let mut h = AngularHistogram::zeros(bins)?;
    for p in pixels {
        if p.col >= width {
            return Err(Error::Shape(format!(
                "street column {} outside width {width}",
                p.col
            )));
        }
        h.add(street_column_azimuth(p.col, width), p.weight);
    }
    if h.total() <= 0.0 {
        return Err(Error::DegenerateMap("no weighted street pixels".into()));
    }
    h.normalize();
    Ok(h)
}

/// The center pixel carries no direction and is skipped.
pub fn aerial_histogram(pixels: &[WeightedPixel], size: usize, bins: usize) -> Result<AngularHistogram> {
    let mut h = AngularHistogram::zeros(bins)?;
    for p in pixels {
        if p.row >= size || p.col >= size {
            return Err(Error::Shape(format!(
                "aerial pixel ({}, {}) outside {size}x{size}",
                p.row, p.col
            )));
        }
        if let Some((deg, _)) = aerial_polar_angle(p.row, p.col, size) {
            h.add(deg, p.weight);
        }
    }
    if h.total() <= 0.0 {
        return Err(Error::DegenerateMap(
            "no weighted aerial pixels off the center".into(),
        ));
    }
    h.normalize();
    Ok(h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrientationEstimate {
    pub phi_deg: f64,
    pub correlation_peak: f64,
    /// `c(φ)` at lags `k · 360 / B`.
    pub correlation: Vec<f64>,
    /// `(angle, value)` of the best lag at least 10° from the primary.
    pub secondary_peak: Option<(f64, f64)>,
}

/// FFT-based `c(φ) = Σ_θ p_street(θ) p_aerial(θ + φ)`: the street histogram
/// is index-reversed, which turns the circular convolution into this
/// correlation.
pub fn correlation_signal(p_street: &AngularHistogram, p_aerial: &AngularHistogram) -> Result<Vec<f64>> {
    let b = p_street.bins();
    if p_aerial.bins() != b {
        return Err(Error::Shape(format!(
            "histograms have {b} and {} bins",
            p_aerial.bins()
        )));
    }
    let reversed: Vec<f64> = (0..b).map(|k| p_street.mass[(b - k) % b]).collect();
    let prod: ComplexSpectrum = dft(&reversed)?.mul(&dft(&p_aerial.mass)?)?;
    idft(&prod)
}

pub fn circular_correlate(
    p_street: &AngularHistogram,
    p_aerial: &AngularHistogram,
) -> Result<OrientationEstimate> {
    let corr = correlation_signal(p_street, p_aerial)?;
    let b = corr.len();
    let lag_deg = |k: usize| k as f64 * 360.0 / b as f64;
    let scale = corr.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    // ties within roundoff go to the smaller lag
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let argmax = |allowed: &dyn Fn(usize) -> bool| -> Option<usize> {
        let mut best: Option<usize> = None;
        for (k, &v) in corr.iter().enumerate() {
            if allowed(k) && best.is_none_or(|i| v > corr[i] + tol) {
                best = Some(k);
            }
        }
        best
    };
    let primary = argmax(&|_| true).expect("at least two bins");
    let far = |k: usize| circular_diff_deg(lag_deg(k), lag_deg(primary)).abs() >= SECONDARY_PEAK_MIN_DEG;
    let secondary = argmax(&far).map(|k| (lag_deg(k), corr[k]));
    Ok(OrientationEstimate {
        phi_deg: lag_deg(primary),
        correlation_peak: corr[primary],
        correlation: corr,
        secondary_peak: secondary,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrientationOptions {
    pub tau: f64,
    pub bins: usize,
    /// Circular box filter width applied to both histograms; 0 disables.
    pub smoothing_bins: usize,
}

impl Default for OrientationOptions {
    fn default() -> Self {
        Self {
            tau: 0.5,
            bins: 360,
            smoothing_bins: 0,
        }
    }
}

impl OrientationOptions {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau must lie in [0, 1], got {}", self.tau)));
        }
        if self.bins < 2 {
            return Err(Error::Config(format!(
                "bins must be at least 2, got {}",
                self.bins
            )));
        }
        if self.smoothing_bins > 1 && self.smoothing_bins.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "smoothing_bins must be odd, got {}",
                self.smoothing_bins
            )));
        }
        Ok(())
    }
}

/// Grad-CAM both views, threshold, histogram, correlate.
pub fn estimate_orientation(
    params: &ModelParams,
    pair: &CrossViewPair,
    opts: &OrientationOptions,
) -> Result<OrientationEstimate> {
    opts.validate()?;
    let (street_map, aerial_map) = pair_maps(params, &pair.street, &pair.aerial, None, None)?;
    let ps = street_histogram(
        &threshold_pixels(&street_map, opts.tau)?,
        street_map.width,
        opts.bins,
    )?;
    let pa = aerial_histogram(
        &threshold_pixels(&aerial_map, opts.tau)?,
        aerial_map.height,
        opts.bins,
    )?;
    circular_correlate(
        &ps.smoothed(opts.smoothing_bins),
        &pa.smoothed(opts.smoothing_bins),
    )
}

pub fn estimate_all(
    params: &ModelParams,
    pairs: &[CrossViewPair],
    opts: &OrientationOptions,
) -> Result<Vec<OrientationEstimate>> {
    pairs
        .par_iter()
        .map(|p| estimate_orientation(params, p, opts))
        .collect()
}

/// `x` wrapped into `(−180, 180]`.
pub fn wrap_deg_180(x: f64) -> f64 {
    circular_diff_deg(x, 0.0)
}

pub const ERROR_HIST_BIN_DEG: f64 = 7.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDistribution {
    /// `estimate − truth`, wrapped into `(−180, 180]`.
    pub errors: Vec<f64>,
    /// `(bin center, fraction)` over 7° bins centered on multiples of 7°;
    /// the outermost bins absorb the remainder up to ±180°.
    pub histogram: Vec<(f64, f64)>,
    pub within_3_5: f64,
    pub near_180_within_5: f64,
}

impl ErrorDistribution {
    pub fn from_errors(errors: Vec<f64>) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::EmptyBatch("no orientation errors".into()));
        }
        let errors: Vec<f64> = errors.into_iter().map(wrap_deg_180).collect();
        let half = (180.0 / ERROR_HIST_BIN_DEG).floor() as i64;
        let mut counts = vec![0usize; (2 * half + 1) as usize];
        for &e in &errors {
            let k = (e / ERROR_HIST_BIN_DEG).round() as i64;
            counts[(k.clamp(-half, half) + half) as usize] += 1;
        }
        let n = errors.len() as f64;
        let histogram = counts
            .iter()
            .enumerate()
            .map(|(i, &c)| ((i as i64 - half) as f64 * ERROR_HIST_BIN_DEG, c as f64 / n))
            .collect();
        let mut d = Self {
            errors,
            histogram,
            within_3_5: 0.0,
            near_180_within_5: 0.0,
        };
        d.within_3_5 = d.fraction_within(3.5);
        d.near_180_within_5 = d.fraction_near(180.0, 5.0);
        Ok(d)
    }

    pub fn fraction_within(&self, tol_deg: f64) -> f64 {
        self.fraction_near(0.0, tol_deg)
    }

    /// Fraction of errors within `tol_deg` of `center_deg`, circularly.
    pub fn fraction_near(&self, center_deg: f64, tol_deg: f64) -> f64 {
        let hits = self
            .errors
            .iter()
            .filter(|&&e| circular_diff_deg(e, center_deg).abs() <= tol_deg + 1e-9)
            .count();
        hits as f64 / self.errors.len() as f64
    }
}

pub fn error_distribution(estimates_deg: &[f64], truth_deg: &[f64]) -> Result<ErrorDistribution> {
    if estimates_deg.len() != truth_deg.len() {
        return Err(Error::Shape(format!(
            "{} estimates for {} ground-truth angles",
            estimates_deg.len(),
            truth_deg.len()
        )));
    }
    ErrorDistribution::from_errors(estimates_deg.iter().zip(truth_deg).map(|(e, t)| e - t).collect())
}

/// Side-by-side error histograms, in percent.
pub fn error_histogram_svg(title: &str, dists: &[(&str, &ErrorDistribution)]) -> String {
    let series: Vec<Series> = dists
        .iter()
        .map(|(name, d)| Series::new(*name, d.histogram.iter().map(|&(x, f)| (x, 100.0 * f)).collect()))
        .collect();
    bar_chart(
        title,
        "error (degrees)",
        "percent",
        ERROR_HIST_BIN_DEG * 0.9,
        &series,
    )
}

/// Ground-truth rotations of a set of pairs.
pub fn rotation_truth(pairs: &[CrossViewPair]) -> Result<Vec<f64>> {
    pairs
        .iter()
        .map(|p| {
            p.rotation_deg
                .ok_or_else(|| Error::Supervision(format!("pair {} has no rotation ground truth", p.id)))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressionConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            epochs: 200,
            batch: 32,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// Two-layer ReLU head mapping `[pre_street; pre_aerial]` to `(cos φ, sin φ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionHead {
    pub inputs: usize,
    pub hidden: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl RegressionHead {
    pub fn zeros(inputs: usize, hidden: usize) -> Self {
        Self {
            inputs,
            hidden,
            w1: vec![0.0; hidden * inputs],
            b1: vec![0.0; hidden],
            w2: vec![0.0; 2 * hidden],
            b2: vec![0.0; 2],
        }
    }

    fn init(inputs: usize, hidden: usize, rng: &mut Rng) -> Self {
        let mut h = Self::zeros(inputs, hidden);
        let s1 = (2.0 / inputs as f64).sqrt();
        let s2 = (1.0 / hidden as f64).sqrt();
        h.w1.iter_mut().for_each(|w| *w = s1 * rng.normal());
        h.w2.iter_mut().for_each(|w| *w = s2 * rng.normal());
        h
    }

    fn hidden_act(&self, x: &[f64]) -> Vec<f64> {
        (0..self.hidden)
            .map(|j| {
                let row = &self.w1[j * self.inputs..(j + 1) * self.inputs];
                (self.b1[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()).max(0.0)
            })
            .collect()
    }

    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let a = self.hidden_act(x);
        let out = |o: usize| {
            self.b2[o]
                + (0..self.hidden)
                    .map(|j| self.w2[o * self.hidden + j] * a[j])
                    .sum::<f64>()
        };
        (out(0), out(1))
    }

    /// Predicted angle in `[0, 360)`.
    pub fn predict_deg(&self, x: &[f64]) -> f64 {
        let (c, s) = self.predict(x);
        wrap_deg_360(s.atan2(c).to_degrees())
    }
}

/// Concatenated un-normalized embeddings of both views.
pub fn pair_features(params: &ModelParams, pair: &CrossViewPair) -> Result<Vec<f64>> {
    let s = forward_features(params, View::Street, &pair.street)?;
    let a = forward_features(params, View::Aerial, &pair.aerial)?;
    let mut x = s.pre_norm.into_vec();
    x.extend(a.pre_norm.into_vec());
    Ok(x)
}

/// Fits a regression head on `train` and reports its errors on `eval`.
pub fn train_regression_baseline(
    params: &ModelParams,
    train: &[CrossViewPair],
    eval: &[CrossViewPair],
    cfg: &RegressionConfig,
) -> Result<(RegressionHead, ErrorDistribution)> {
    if cfg.hidden == 0 || cfg.batch == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Config(format!("invalid regression config {cfg:?}")));
    }
    if train.is_empty() || eval.is_empty() {
        return Err(Error::EmptyBatch(
            "regression baseline needs training and evaluation pairs".into(),
        ));
    }
    let truth = rotation_truth(train)?;
    let eval_truth = rotation_truth(eval)?;
    let xs: Vec<Vec<f64>> = train
        .par_iter()
        .map(|p| pair_features(params, p))
        .collect::<Result<_>>()?;
    let targets: Vec<(f64, f64)> = truth
        .iter()
        .map(|&t| {
            let r = t.to_radians();
            (r.cos(), r.sin())
        })
        .collect();
    let mut rng = Rng::new(cfg.seed);
    let inputs = xs[0].len();
    let mut head = RegressionHead::init(inputs, cfg.hidden, &mut rng);
    let sizes = [head.w1.len(), head.b1.len(), head.w2.len(), head.b2.len()];
    let mut adam = Adam::new(AdamConfig::default(), &sizes);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch) {
            let mut g = RegressionHead::zeros(inputs, cfg.hidden);
            let inv = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let x = &xs[i];
                let a = head.hidden_act(x);
                let (c, s) = head.predict(x);
                let d = [2.0 * (c - targets[i].0) * inv, 2.0 * (s - targets[i].1) * inv];
                for o in 0..2 {
                    g.b2[o] += d[o];
                    for j in 0..cfg.hidden {
                        g.w2[o * cfg.hidden + j] += d[o] * a[j];
                    }
                }
                for j in 0..cfg.hidden {
                    if a[j] <= 0.0 {
                        continue;
                    }
                    let da = d[0] * head.w2[j] + d[1] * head.w2[cfg.hidden + j];
                    g.b1[j] += da;
                    for (w, v) in g.w1[j * inputs..(j + 1) * inputs].iter_mut().zip(x) {
                        *w += da * v;
                    }
                }
            }
            adam.step(
                &mut [&mut head.w1, &mut head.b1, &mut head.w2, &mut head.b2],
                &[&g.w1, &g.b1, &g.w2, &g.b2],
                cfg.lr,
            )?;
        }
    }
    let preds: Vec<f64> = eval
        .par_iter()
        .map(|p| pair_features(params, p).map(|x| head.predict_deg(&x)))
        .collect::<Result<_>>()?;
    let dist = error_distribution(&preds, &eval_truth)?;
    Ok((head, dist))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrientationComparison {
    pub correlation: ErrorDistribution,
    pub regression: ErrorDistribution,
}

impl OrientationComparison {
    pub fn summary(&self) -> String {
        let row = |name: &str, d: &ErrorDistribution| {
            format!(
                "{name:<12} {:>8.1}% {:>8.1}% {:>8.1}%\n",
                100.0 * d.within_3_5,
                100.0 * d.fraction_within(10.0),
                100.0 * d.near_180_within_5
            )
        };
        let mut s = format!(
            "{:<12} {:>9} {:>9} {:>9}\n",
            "method", "|e|<=3.5", "|e|<=10", "~180"
        );
        s += &row("correlation", &self.correlation);
        s += &row("regression", &self.regression);
        s
    }

    pub fn svg(&self) -> String {
        error_histogram_svg(
            "orientation error distribution",
            &[
                ("correlation", &self.correlation),
                ("regression", &self.regression),
            ],
        )
    }
}
