//! Inter-sentence transformer stack and the two sigmoid scoring heads,
//! with hand-written reverse-mode gradients.
//!
//! Layers are pre-norm: `x += MHA(LN₁(x))`, then `x += FFN(LN₂(x))` with a
//! tanh-approximated GELU. Attention is full over the sentences of one
//! document. There is no final layer norm, so with all-zero weights the
//! stack reduces to its residual path.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::params::{LayerParams, ModelParams};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// `PE(pos, 2k) = sin(pos / 10000^(2k/d))`, `PE(pos, 2k+1) = cos(...)`.
pub fn sinusoidal_positions(n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |(pos, j)| {
        let k2 = (j - j % 2) as f64;
        let angle = pos as f64 / 10000f64.powf(k2 / d as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Numerically stable logistic function, kept strictly inside (0, 1).
pub fn sigmoid(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

struct NormOut {
    y: Array2<f64>,
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, gain: &Array1<f64>, bias: &Array1<f64>) -> NormOut {
    let d = x.ncols() as f64;
    let mean = x.mean_axis(Axis(1)).expect("non-empty rows");
    let centered = x - &mean.view().insert_axis(Axis(1));
    let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / d;
    let rstd = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
    let xhat = &centered * &rstd.view().insert_axis(Axis(1));
    let y = &xhat * gain + bias;
    NormOut { y, xhat, rstd }
}

/// Returns `dx` and accumulates gain/bias gradients.
fn layer_norm_backward(
    dy: &Array2<f64>,
    xhat: &Array2<f64>,
    rstd: &Array1<f64>,
    gain: &Array1<f64>,
    d_gain: &mut Array1<f64>,
    d_bias: &mut Array1<f64>,
) -> Array2<f64> {
    *d_gain += &(dy * xhat).sum_axis(Axis(0));
    *d_bias += &dy.sum_axis(Axis(0));
    let dxhat = dy * gain;
    let mean_dxhat = dxhat.mean_axis(Axis(1)).unwrap();
    let mean_dxhat_xhat = (&dxhat * xhat).mean_axis(Axis(1)).unwrap();
    let inner =
        &dxhat - &mean_dxhat.insert_axis(Axis(1)) - &(xhat * &mean_dxhat_xhat.insert_axis(Axis(1)));
    inner * rstd.view().insert_axis(Axis(1))
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

struct LayerCache {
    norm1: NormOut,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    attn_out: Array2<f64>,
    norm2: NormOut,
    pre_act: Array2<f64>,
    act: Array2<f64>,
}

/// Sentence representations `H` plus the activations the backward pass
/// needs.
pub struct EncodedDocument {
    pub h: Array2<f64>,
    cache: Option<Vec<LayerCache>>,
}

impl std::fmt::Debug for EncodedDocument {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EncodedDocument")
            .field("h", &self.h)
            .field("has_cache", &self.cache.is_some())
            .finish()
    }
}

impl EncodedDocument {
    /// Wraps a representation matrix with no retained activations.
    pub fn detached(h: Array2<f64>) -> Self {
        EncodedDocument { h, cache: None }
    }

    pub fn len(&self) -> usize {
        self.h.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.h.nrows() == 0
    }
}

fn layer_forward(x: &Array2<f64>, p: &LayerParams, heads: usize) -> (Array2<f64>, LayerCache) {
    let d = x.ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let norm1 = layer_norm(x, &p.ln1_gain, &p.ln1_bias);
    let a = &norm1.y;
    let q = a.dot(&p.wq) + &p.bq;
    let k = a.dot(&p.wk) + &p.bk;
    let v = a.dot(&p.wv) + &p.bv;
    let mut attn_out = Array2::<f64>::zeros(x.raw_dim());
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        softmax_rows(&mut scores);
        attn_out.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
        probs.push(scores);
    }
    let x_mid = x + &(attn_out.dot(&p.wo) + &p.bo);
    let norm2 = layer_norm(&x_mid, &p.ln2_gain, &p.ln2_bias);
    let pre_act = norm2.y.dot(&p.w1) + &p.b1;
    let act = pre_act.mapv(gelu);
    let out = &x_mid + &(act.dot(&p.w2) + &p.b2);
    let cache = LayerCache {
        norm1,
        q,
        k,
        v,
        probs,
        attn_out,
        norm2,
        pre_act,
        act,
    };
    (out, cache)
}

fn layer_backward(
    d_out: &Array2<f64>,
    c: &LayerCache,
    p: &LayerParams,
    g: &mut LayerParams,
    heads: usize,
) -> Array2<f64> {
    let d = d_out.ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    // Feed-forward block.
    g.b2 += &d_out.sum_axis(Axis(0));
    g.w2 += &c.act.t().dot(d_out);
    let d_act = d_out.dot(&p.w2.t());
    let d_pre = &d_act * &c.pre_act.mapv(gelu_grad);
    g.b1 += &d_pre.sum_axis(Axis(0));
    g.w1 += &c.norm2.y.t().dot(&d_pre);
    let d_norm2 = d_pre.dot(&p.w1.t());
    let d_mid = d_out
        + &layer_norm_backward(
            &d_norm2,
            &c.norm2.xhat,
            &c.norm2.rstd,
            &p.ln2_gain,
            &mut g.ln2_gain,
            &mut g.ln2_bias,
        );

    // Attention block.
    g.bo += &d_mid.sum_axis(Axis(0));
    g.wo += &c.attn_out.t().dot(&d_mid);
    let d_attn = d_mid.dot(&p.wo.t());
    let mut dq = Array2::<f64>::zeros(d_out.raw_dim());
    let mut dk = Array2::<f64>::zeros(d_out.raw_dim());
    let mut dv = Array2::<f64>::zeros(d_out.raw_dim());
    for (h, probs) in c.probs.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let d_o = d_attn.slice(cols);
        let d_probs = d_o.dot(&c.v.slice(cols).t());
        dv.slice_mut(cols).assign(&probs.t().dot(&d_o));
        let row_dot = (&d_probs * probs).sum_axis(Axis(1));
        let d_scores = probs * &(&d_probs - &row_dot.insert_axis(Axis(1))) * scale;
        dq.slice_mut(cols).assign(&d_scores.dot(&c.k.slice(cols)));
        dk.slice_mut(cols)
            .assign(&d_scores.t().dot(&c.q.slice(cols)));
    }
    let a = &c.norm1.y;
    g.wq += &a.t().dot(&dq);
    g.bq += &dq.sum_axis(Axis(0));
    g.wk += &a.t().dot(&dk);
    g.bk += &dk.sum_axis(Axis(0));
    g.wv += &a.t().dot(&dv);
    g.bv += &dv.sum_axis(Axis(0));
    let d_a = dq.dot(&p.wq.t()) + dk.dot(&p.wk.t()) + dv.dot(&p.wv.t());
    d_mid
        + layer_norm_backward(
            &d_a,
            &c.norm1.xhat,
            &c.norm1.rstd,
            &p.ln1_gain,
            &mut g.ln1_gain,
            &mut g.ln1_bias,
        )
}

fn check_finite(m: &Array2<f64>, stage: &str) -> Result<()> {
    if let Some(((i, j), v)) = m.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite value {v} at sentence {i}, component {j} after {stage}"
        )));
    }
    Ok(())
}

/// Adds position embeddings to `features` (N × d) and runs the stack.
pub fn encode_forward(
    features: ArrayView2<'_, f64>,
    params: &ModelParams,
) -> Result<EncodedDocument> {
    let d = params.config.features.dim;
    if features.ncols() != d {
        return Err(Error::LengthMismatch {
            expected: d,
            actual: features.ncols(),
        });
    }
    let heads = params.config.arch.heads;
    let mut x = &features + &sinusoidal_positions(features.nrows(), d);
    let mut caches = Vec::with_capacity(params.layers.len());
    for (i, layer) in params.layers.iter().enumerate() {
        let (out, cache) = layer_forward(&x, layer, heads);
        check_finite(&out, &format!("layer {i}"))?;
        x = out;
        caches.push(cache);
    }
    Ok(EncodedDocument {
        h: x,
        cache: Some(caches),
    })
}

/// Backpropagates `d_h` through the stack; returns the gradient on the input
/// features and accumulates parameter gradients into `grads`.
pub fn encode_backward(
    encoded: &EncodedDocument,
    d_h: ArrayView2<'_, f64>,
    params: &ModelParams,
    grads: &mut ModelParams,
) -> Result<Array2<f64>> {
    let caches = encoded.cache.as_ref().ok_or(Error::NoForwardPass)?;
    let heads = params.config.arch.heads;
    let mut d = d_h.to_owned();
    for ((cache, p), g) in caches
        .iter()
        .zip(&params.layers)
        .zip(grads.layers.iter_mut())
        .rev()
    {
        d = layer_backward(&d, cache, p, g, heads);
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub logit_sum: Array1<f64>,
    pub logit_seg: Array1<f64>,
    pub y_sum: Array1<f64>,
    pub y_seg: Array1<f64>,
}

/// `ŷ_sum = σ(H w_sum + b_sum)`, `ŷ_seg = σ(H w_seg + b_seg)`.
pub fn heads_forward(h: ArrayView2<'_, f64>, params: &ModelParams) -> HeadOutputs {
    let logit_sum = h.dot(&params.w_sum) + params.b_sum;
    let logit_seg = h.dot(&params.w_seg) + params.b_seg;
    HeadOutputs {
        y_sum: logit_sum.mapv(sigmoid),
        y_seg: logit_seg.mapv(sigmoid),
        logit_sum,
        logit_seg,
    }
}

/// Returns `∂/∂H` and accumulates head gradients, given gradients on the
/// pre-sigmoid logits.
pub fn heads_backward(
    h: ArrayView2<'_, f64>,
    d_logit_sum: ArrayView1<'_, f64>,
    d_logit_seg: ArrayView1<'_, f64>,
    params: &ModelParams,
    grads: &mut ModelParams,
) -> Array2<f64> {
    grads.w_sum += &h.t().dot(&d_logit_sum);
    grads.b_sum += d_logit_sum.sum();
    grads.w_seg += &h.t().dot(&d_logit_seg);
    grads.b_seg += d_logit_seg.sum();
    let a = d_logit_sum
        .insert_axis(Axis(1))
        .dot(&params.w_sum.view().insert_axis(Axis(0)));
    let b = d_logit_seg
        .insert_axis(Axis(1))
        .dot(&params.w_seg.view().insert_axis(Axis(0)));
    a + b
}

/// One document through projection, stack and heads.
#[derive(Debug)]
pub struct ForwardPass {
    raw: Array2<f64>,
    pub encoded: EncodedDocument,
    pub heads: HeadOutputs,
}

impl ForwardPass {
    pub fn h(&self) -> &Array2<f64> {
        &self.encoded.h
    }
}

/// Gradients flowing into a [`ForwardPass`].
#[derive(Debug, Clone)]
pub struct Upstream {
    pub d_h: Option<Array2<f64>>,
    pub d_logit_sum: Array1<f64>,
    pub d_logit_seg: Array1<f64>,
}

impl Upstream {
    pub fn zeros(n: usize) -> Self {
        Upstream {
            d_h: None,
            d_logit_sum: Array1::zeros(n),
            d_logit_seg: Array1::zeros(n),
        }
    }

    /// Converts gradients on the head probabilities to logit gradients via
    /// `σ'(z) = ŷ(1 − ŷ)`.
    pub fn from_probabilities(
        d_h: Option<Array2<f64>>,
        d_y_sum: ArrayView1<'_, f64>,
        d_y_seg: ArrayView1<'_, f64>,
        heads: &HeadOutputs,
    ) -> Self {
        let chain = |dy: ArrayView1<'_, f64>, y: &Array1<f64>| {
            Array1::from_iter(dy.iter().zip(y).map(|(g, p)| g * p * (1.0 - p)))
        };
        Upstream {
            d_h,
            d_logit_sum: chain(d_y_sum, &heads.y_sum),
            d_logit_seg: chain(d_y_seg, &heads.y_seg),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: ModelParams,
    /// Gradient on the raw feature matrix.
    pub features: Array2<f64>,
}

/// Full forward pass from raw features.
pub fn forward(raw: ArrayView2<'_, f64>, params: &ModelParams) -> Result<ForwardPass> {
    let width = params.config.features.raw_width();
    if raw.ncols() != width {
        return Err(Error::LengthMismatch {
            expected: width,
            actual: raw.ncols(),
        });
    }
    let x = raw.dot(&params.proj) + &params.proj_bias;
    let encoded = encode_forward(x.view(), params)?;
    let heads = heads_forward(encoded.h.view(), params);
    Ok(ForwardPass {
        raw: raw.to_owned(),
        encoded,
        heads,
    })
}

/// Exact reverse-mode gradients of a [`ForwardPass`].
pub fn backward(
    pass: &ForwardPass,
    upstream: &Upstream,
    params: &ModelParams,
) -> Result<Gradients> {
    let mut grads = params.zeros_like();
    let mut d_h = heads_backward(
        pass.encoded.h.view(),
        upstream.d_logit_sum.view(),
        upstream.d_logit_seg.view(),
        params,
        &mut grads,
    );
    if let Some(extra) = &upstream.d_h {
        d_h += extra;
    }
    let d_x = encode_backward(&pass.encoded, d_h.view(), params, &mut grads)?;
    grads.proj += &pass.raw.t().dot(&d_x);
    grads.proj_bias += &d_x.sum_axis(Axis(0));
    let features = d_x.dot(&params.proj.t());
    Ok(Gradients {
        params: grads,
        features,
    })
}
