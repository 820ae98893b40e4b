use serde::{Deserialize, Serialize};

use super::View;
use crate::data::{aerial_polar_angle, street_column_azimuth};
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor3, VectorK};

/// Layer sizes. `coord_channels` is 0 or 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    pub channels: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    #[serde(default)]
    pub coord_channels: usize,
}

impl ModelDims {
    pub fn new(channels: usize, hidden: usize, embed_dim: usize) -> Self {
        Self {
            channels,
            hidden,
            embed_dim,
            coord_channels: 0,
        }
    }

    pub fn with_coords(mut self) -> Self {
        self.coord_channels = 2;
        self
    }

    /// Stem input width, data plus coordinate channels.
    pub fn stem_inputs(&self) -> usize {
        self.channels + self.coord_channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.hidden == 0 || self.embed_dim == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.coord_channels != 0 && self.coord_channels != 2 {
            return Err(Error::Config(format!(
                "coord_channels must be 0 or 2, got {}",
                self.coord_channels
            )));
        }
        Ok(())
    }
}

/// All trainable weights. Matrices are row-major `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub w1_street: Vec<f64>,
    pub b1_street: Vec<f64>,
    pub w1_aerial: Vec<f64>,
    pub b1_aerial: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(dims: ModelDims) -> Self {
        let stem = dims.hidden * dims.stem_inputs();
        Self {
            dims,
            w1_street: vec![0.0; stem],
            b1_street: vec![0.0; dims.hidden],
            w1_aerial: vec![0.0; stem],
            b1_aerial: vec![0.0; dims.hidden],
            w2: vec![0.0; dims.embed_dim * dims.hidden],
            b2: vec![0.0; dims.embed_dim],
        }
    }

    /// Blocks in checkpoint order.
    pub fn blocks(&self) -> [&[f64]; 6] {
        [
            &self.w1_street,
            &self.b1_street,
            &self.w1_aerial,
            &self.b1_aerial,
            &self.w2,
            &self.b2,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.w1_street,
            &mut self.b1_street,
            &mut self.w1_aerial,
            &mut self.b1_aerial,
            &mut self.w2,
            &mut self.b2,
        ]
    }

    pub const BLOCK_NAMES: [&'static str; 6] =
        ["w1_street", "b1_street", "w1_aerial", "b1_aerial", "w2", "b2"];

    fn stem(&self, view: View) -> (&[f64], &[f64]) {
        match view {
            View::Street => (&self.w1_street, &self.b1_street),
            View::Aerial => (&self.w1_aerial, &self.b1_aerial),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.blocks()
            .iter()
            .zip(other.blocks())
            .all(|(a, b)| a.len() == b.len())
    }
}

/// Gradients with the same layout as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads(pub ModelParams);

impl ParamGrads {
    pub fn zeros(dims: ModelDims) -> Self {
        Self(ModelParams::zeros(dims))
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.0.blocks_mut().into_iter().zip(other.0.blocks()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for b in self.0.blocks_mut() {
            b.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.0
            .blocks()
            .iter()
            .flat_map(|b| b.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// He-normal weights (`sd = sqrt(2 / fan_in)`), zero biases.
pub fn init_params(dims: ModelDims, seed: u64) -> Result<ModelParams> {
    dims.validate()?;
    let mut p = ModelParams::zeros(dims);
    let mut rng = Rng::new(seed);
    let stem_sd = (2.0 / dims.stem_inputs() as f64).sqrt();
    let head_sd = (2.0 / dims.hidden as f64).sqrt();
    for w in p.w1_street.iter_mut() {
        *w = stem_sd * rng.normal();
    }
    for w in p.w1_aerial.iter_mut() {
        *w = stem_sd * rng.normal();
    }
    for w in p.w2.iter_mut() {
        *w = head_sd * rng.normal();
    }
    Ok(p)
}

/// Activations up to the un-normalized embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTrace {
    pub view: View,
    pub input: Tensor3,
    /// `H × W × C1`, before ReLU.
    pub stage1_pre: Tensor3,
    /// `H × W × C1`, after ReLU.
    pub stage1_post: Tensor3,
    pub pooled: Vec<f64>,
    pub pre_norm: VectorK,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub features: FeatureTrace,
    pub embedding: VectorK,
    pre_norm_len: f64,
}

impl ForwardTrace {
    pub fn view(&self) -> View {
        self.features.view
    }

    pub fn pre_norm(&self) -> &VectorK {
        &self.features.pre_norm
    }
}

fn coords(view: View, row: usize, col: usize, height: usize, width: usize) -> [f64; 2] {
    let deg = match view {
        View::Street => Some(street_column_azimuth(col, width)),
        View::Aerial => aerial_polar_angle(row, col, height.max(width)).map(|(a, _)| a),
    };
    match deg {
        Some(d) => {
            let (s, c) = d.to_radians().sin_cos();
            [c, s]
        }
        None => [0.0, 0.0],
    }
}

/// Writes the stem input (data then coordinates) for one location.
#[inline]
fn stem_input(t: &Tensor3, view: View, dims: &ModelDims, row: usize, col: usize, buf: &mut [f64]) {
    let c = dims.channels;
    buf[..c].copy_from_slice(t.pixel(row, col));
    if dims.coord_channels == 2 {
        let xy = coords(view, row, col, t.height(), t.width());
        buf[c] = xy[0];
        buf[c + 1] = xy[1];
    }
}

pub fn forward_features(params: &ModelParams, view: View, t: &Tensor3) -> Result<FeatureTrace> {
    let dims = params.dims;
    if t.channels() != dims.channels {
        return Err(Error::Shape(format!(
            "{view:?} input has {} channels, model expects {}",
            t.channels(),
            dims.channels
        )));
    }
    if view == View::Aerial && !t.is_square() {
        return Err(Error::Shape("aerial input must be square".into()));
    }
    let (h, w) = (t.height(), t.width());
    let n_in = dims.stem_inputs();
    let hidden = dims.hidden;
    let (w1, b1) = params.stem(view);

    let mut pre = Tensor3::zeros(h, w, hidden);
    let mut post = Tensor3::zeros(h, w, hidden);
    let mut pooled = vec![0.0; hidden];
    let mut x = vec![0.0; n_in];
    for r in 0..h {
        for c in 0..w {
            stem_input(t, view, &dims, r, c, &mut x);
            let pre_px = pre.pixel_mut(r, c);
            for (j, out) in pre_px.iter_mut().enumerate() {
                let row = &w1[j * n_in..(j + 1) * n_in];
                *out = b1[j] + row.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
            }
            let post_px = post.pixel_mut(r, c);
            for ((o, &p), acc) in post_px.iter_mut().zip(pre.pixel(r, c)).zip(pooled.iter_mut()) {
                *o = p.max(0.0);
                *acc += *o;
            }
        }
    }
    let inv = 1.0 / (h * w) as f64;
    pooled.iter_mut().for_each(|v| *v *= inv);

    let k = dims.embed_dim;
    let pre_norm: Vec<f64> = (0..k)
        .map(|i| {
            params.b2[i]
                + params.w2[i * hidden..(i + 1) * hidden]
                    .iter()
                    .zip(&pooled)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
        })
        .collect();
    Ok(FeatureTrace {
        view,
        input: t.clone(),
        stage1_pre: pre,
        stage1_post: post,
        pooled,
        pre_norm: VectorK::new(pre_norm)?,
    })
}

/// Full forward pass; a zero pre-normalization vector is an error.
pub fn forward(params: &ModelParams, view: View, t: &Tensor3) -> Result<ForwardTrace> {
    let features = forward_features(params, view, t)?;
    let len = features.pre_norm.norm();
    if len == 0.0 {
        return Err(Error::EmbeddingDegenerate);
    }
    let embedding = VectorK::new(features.pre_norm.as_slice().iter().map(|v| v / len).collect())?;
    Ok(ForwardTrace {
        features,
        embedding,
        pre_norm_len: len,
    })
}

fn check_trace(params: &ModelParams, trace: &FeatureTrace) -> Result<()> {
    let d = params.dims;
    let (h, w, c1) = trace.stage1_post.shape();
    if trace.input.channels() != d.channels
        || c1 != d.hidden
        || trace.pooled.len() != d.hidden
        || trace.pre_norm.dim() != d.embed_dim
        || trace.stage1_pre.shape() != (h, w, c1)
        || trace.input.height() != h
        || trace.input.width() != w
    {
        return Err(Error::Trace(
            "trace shapes do not match the parameters it is replayed against".into(),
        ));
    }
    Ok(())
}

/// Gradient of a loss w.r.t. the pre-normalization vector, given its
/// gradient w.r.t. the unit embedding: `(I - e eᵀ) g / ‖p‖`.
pub fn normalization_backward(trace: &ForwardTrace, grad_embedding: &[f64]) -> Vec<f64> {
    let e = trace.embedding.as_slice();
    let proj: f64 = e.iter().zip(grad_embedding).map(|(a, b)| a * b).sum();
    e.iter()
        .zip(grad_embedding)
        .map(|(ei, gi)| (gi - ei * proj) / trace.pre_norm_len)
        .collect()
}

/// Accumulates parameter gradients for a given `∂L/∂pre_norm` into
/// `grads`; optionally returns `∂L/∂input`.
pub fn backward_features_into(
    params: &ModelParams,
    trace: &FeatureTrace,
    grad_pre_norm: &[f64],
    grads: &mut ParamGrads,
    want_input_grad: bool,
) -> Result<Option<Tensor3>> {
    check_trace(params, trace)?;
    let d = params.dims;
    if grad_pre_norm.len() != d.embed_dim {
        return Err(Error::Shape(format!(
            "gradient has dim {}, embedding has {}",
            grad_pre_norm.len(),
            d.embed_dim
        )));
    }
    if !grads.0.same_shape(params) {
        return Err(Error::Shape("gradient buffer does not match parameters".into()));
    }
    let hidden = d.hidden;
    let n_in = d.stem_inputs();
    let g = &mut grads.0;

    // head
    for (i, &gp) in grad_pre_norm.iter().enumerate() {
        g.b2[i] += gp;
        for (gw, &a) in g.w2[i * hidden..(i + 1) * hidden].iter_mut().zip(&trace.pooled) {
            *gw += gp * a;
        }
    }
    // ∂L/∂pooled, then the per-location value shared by average pooling
    let (h, w) = (trace.input.height(), trace.input.width());
    let inv = 1.0 / (h * w) as f64;
    let grad_act: Vec<f64> = (0..hidden)
        .map(|j| {
            inv * grad_pre_norm
                .iter()
                .enumerate()
                .map(|(i, gp)| gp * params.w2[i * hidden + j])
                .sum::<f64>()
        })
        .collect();

    let (gw1, gb1) = match trace.view {
        View::Street => (&mut g.w1_street, &mut g.b1_street),
        View::Aerial => (&mut g.w1_aerial, &mut g.b1_aerial),
    };
    let (w1, _) = params.stem(trace.view);
    let mut grad_input = want_input_grad.then(|| Tensor3::zeros(h, w, d.channels));
    let mut x = vec![0.0; n_in];
    for r in 0..h {
        for c in 0..w {
            stem_input(&trace.input, trace.view, &d, r, c, &mut x);
            let pre = trace.stage1_pre.pixel(r, c);
            for j in 0..hidden {
                if pre[j] <= 0.0 {
                    continue;
                }
                let gj = grad_act[j];
                gb1[j] += gj;
                for (gw, &xi) in gw1[j * n_in..(j + 1) * n_in].iter_mut().zip(&x) {
                    *gw += gj * xi;
                }
                if let Some(gi) = grad_input.as_mut() {
                    let row = &w1[j * n_in..j * n_in + d.channels];
                    for (o, wv) in gi.pixel_mut(r, c).iter_mut().zip(row) {
                        *o += gj * wv;
                    }
                }
            }
        }
    }
    Ok(grad_input)
}

/// Parameter and input gradients for a given `∂L/∂pre_norm`.
pub fn backward_features(
    params: &ModelParams,
    trace: &FeatureTrace,
    grad_pre_norm: &[f64],
) -> Result<(ParamGrads, Tensor3)> {
    let mut grads = ParamGrads::zeros(params.dims);
    let gi = backward_features_into(params, trace, grad_pre_norm, &mut grads, true)?;
    Ok((grads, gi.expect("input gradient requested")))
}

/// Parameter and input gradients for a given `∂L/∂embedding`.
pub fn backward(
    trace: &ForwardTrace,
    grad_embedding: &VectorK,
    params: &ModelParams,
) -> Result<(ParamGrads, Tensor3)> {
    if grad_embedding.dim() != trace.embedding.dim() {
        return Err(Error::Trace(format!(
            "gradient dim {} does not match embedding dim {}",
            grad_embedding.dim(),
            trace.embedding.dim()
        )));
    }
    let gp = normalization_backward(trace, grad_embedding.as_slice());
    backward_features(params, &trace.features, &gp)
}

/// Accumulates parameter gradients only (training hot path).
pub fn backward_into(
    trace: &ForwardTrace,
    grad_embedding: &[f64],
    params: &ModelParams,
    grads: &mut ParamGrads,
) -> Result<()> {
    if grad_embedding.len() != trace.embedding.dim() {
        return Err(Error::Trace("gradient/embedding dim mismatch".into()));
    }
    let gp = normalization_backward(trace, grad_embedding);
    backward_features_into(params, &trace.features, &gp, grads, false)?;
    Ok(())
}
