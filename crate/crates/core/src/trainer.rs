//! Training objective `L_sum [+ L_seg] [+ β·L_DPP]`, Adam with linear
//! warmup, and finite-difference gradient verification.

use ndarray::{Array1, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusRecord, Document};
use crate::dpp::{dpp_loss_and_grad, Ridge};
use crate::encoder::{backward, featurize, forward, ModelConfig, ModelParams, Upstream};
use crate::error::{Error, Result};
use crate::evalseg::seg_f1;
use crate::inference::{predict, select_top_k};
use crate::oracle::{build_labels, seg_labels, summary_set, SegLabelConvention};
use crate::rouge::rouge_n;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Summary cross-entropy only.
    Base,
    /// Summary and segmentation cross-entropy.
    Joint,
    /// Joint objective plus the DPP regularizer.
    #[default]
    Full,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "base" => Ok(Variant::Base),
            "joint" => Ok(Variant::Joint),
            "full" => Ok(Variant::Full),
            other => Err(Error::InvalidArgument(format!("unknown variant {other:?}"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Base => "base",
            Variant::Joint => "joint",
            Variant::Full => "full",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    pub beta: f64,
    pub learning_rate: f64,
    pub warmup_fraction: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_accumulation: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::Full,
            beta: 0.1,
            learning_rate: 1e-3,
            warmup_fraction: 0.1,
            epochs: 20,
            batch_size: 8,
            grad_accumulation: 1,
            rng_seed: 7,
        }
    }
}

/// β values searched on the validation set.
pub const BETA_GRID: [f64; 4] = [1.0, 0.1, 0.01, 0.001];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return bad(format!("beta must be >= 0, got {}", self.beta));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad(format!(
                "warmup_fraction must lie in [0, 1), got {}",
                self.warmup_fraction
            ));
        }
        if self.batch_size == 0 || self.grad_accumulation == 0 {
            return bad("batch_size and grad_accumulation must be positive".into());
        }
        Ok(())
    }

    /// β actually applied: zero unless the variant is FULL.
    pub fn effective_beta(&self) -> f64 {
        match self.variant {
            Variant::Full => self.beta,
            _ => 0.0,
        }
    }

    pub fn uses_segmentation(&self) -> bool {
        self.variant != Variant::Base
    }
}

const PROB_CLAMP: f64 = 1e-7;

fn bce(y_hat: ArrayView1<'_, f64>, y: &[u8]) -> Result<f64> {
    if y_hat.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: y.len(),
            actual: y_hat.len(),
        });
    }
    if y.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = y_hat
        .iter()
        .zip(y)
        .map(|(&p, &t)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            if t == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / y.len() as f64)
}

/// Mean binary cross-entropy of the summary head.
pub fn loss_sum(y_hat: ArrayView1<'_, f64>, y_sum: &[u8]) -> Result<f64> {
    bce(y_hat, y_sum)
}

/// Mean binary cross-entropy of the segmentation head.
pub fn loss_seg(y_hat: ArrayView1<'_, f64>, y_seg: &[u8]) -> Result<f64> {
    bce(y_hat, y_seg)
}

/// A document with cached raw features and its training labels.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub document: Document,
    pub features: ndarray::Array2<f64>,
    pub y_sum: Vec<u8>,
    pub y_seg: Vec<u8>,
}

impl TrainingExample {
    pub fn new(
        document: Document,
        y_sum: Vec<u8>,
        y_seg: Vec<u8>,
        config: &ModelConfig,
    ) -> Result<Self> {
        for v in [&y_sum, &y_seg] {
            if v.len() != document.len() {
                return Err(Error::LengthMismatch {
                    expected: document.len(),
                    actual: v.len(),
                });
            }
        }
        let features = featurize(&document, &config.features);
        Ok(TrainingExample {
            document,
            features,
            y_sum,
            y_seg,
        })
    }

    /// Summary labels from the record (or the greedy oracle when absent);
    /// segmentation labels are recomputed for `convention`.
    pub fn from_record(
        record: &CorpusRecord,
        convention: SegLabelConvention,
        config: &ModelConfig,
    ) -> Result<Self> {
        let doc = &record.document;
        let y_sum = match &record.labels {
            Some(l) => l.sum.clone(),
            None => build_labels(doc, None, convention)?.y_sum,
        };
        Self::new(doc.clone(), y_sum, seg_labels(doc, convention), config)
    }
}

/// The three objective terms of one document; `dpp` is already scaled by β.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Terms {
    pub sum: f64,
    pub seg: f64,
    pub dpp: f64,
}

impl Terms {
    pub fn total(&self) -> f64 {
        self.sum + self.seg + self.dpp
    }

    fn add_scaled(&mut self, other: &Terms, s: f64) {
        self.sum += s * other.sum;
        self.seg += s * other.seg;
        self.dpp += s * other.dpp;
    }
}

/// Selects which objective terms contribute gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    Sum,
    Seg,
    Dpp,
    Total,
}

#[derive(Debug, Clone)]
pub struct DocLoss {
    pub terms: Terms,
    pub grads: ModelParams,
    /// The FULL variant had no ground-truth summary sentence to score.
    pub dpp_skipped: bool,
}

fn doc_loss_impl(
    ex: &TrainingExample,
    params: &ModelParams,
    config: &TrainConfig,
    ridge: Ridge,
    term: Term,
    want_grads: bool,
) -> Result<DocLoss> {
    let pass = forward(ex.features.view(), params)?;
    let n = ex.document.len() as f64;
    let y_sum = &pass.heads.y_sum;
    let y_seg = &pass.heads.y_seg;
    let beta = config.effective_beta();
    let use_seg = config.uses_segmentation();
    let on = |t: Term| term == Term::Total || term == t;

    let mut terms = Terms {
        sum: loss_sum(y_sum.view(), &ex.y_sum)?,
        ..Terms::default()
    };
    let mut up = Upstream::zeros(ex.document.len());
    if on(Term::Sum) {
        up.d_logit_sum = Array1::from_iter(
            y_sum
                .iter()
                .zip(&ex.y_sum)
                .map(|(p, &t)| (p - f64::from(t)) / n),
        );
    }
    if use_seg {
        terms.seg = loss_seg(y_seg.view(), &ex.y_seg)?;
        if on(Term::Seg) {
            up.d_logit_seg = Array1::from_iter(
                y_seg
                    .iter()
                    .zip(&ex.y_seg)
                    .map(|(p, &t)| (p - f64::from(t)) / n),
            );
        }
    }
    let mut dpp_skipped = false;
    if beta > 0.0 {
        let y_true = summary_set(&ex.y_sum);
        if y_true.is_empty() {
            dpp_skipped = true;
        } else {
            let r = dpp_loss_and_grad(pass.h().view(), y_sum.view(), &y_true, ridge)?;
            terms.dpp = beta * r.loss;
            if on(Term::Dpp) {
                up.d_h = Some(beta * &r.grad_h);
                for i in 0..y_sum.len() {
                    up.d_logit_sum[i] += beta * r.grad_q[i] * y_sum[i] * (1.0 - y_sum[i]);
                }
            }
        }
    }
    if !terms.total().is_finite() {
        return Err(Error::NonFiniteLoss(ex.document.id.clone()));
    }
    let grads = if want_grads {
        backward(&pass, &up, params)?.params
    } else {
        params.zeros_like()
    };
    Ok(DocLoss {
        terms,
        grads,
        dpp_skipped,
    })
}

/// Loss terms and gradient of the full objective for one document.
pub fn doc_loss_and_grad(
    ex: &TrainingExample,
    params: &ModelParams,
    config: &TrainConfig,
) -> Result<DocLoss> {
    doc_loss_impl(ex, params, config, Ridge::TRAINING, Term::Total, true)
}

/// Loss terms without gradients.
pub fn doc_terms(
    ex: &TrainingExample,
    params: &ModelParams,
    config: &TrainConfig,
) -> Result<Terms> {
    Ok(doc_loss_impl(ex, params, config, Ridge::TRAINING, Term::Total, false)?.terms)
}

#[derive(Debug, Clone)]
pub struct BatchLoss {
    /// Per-document objective averaged over the batch.
    pub loss: f64,
    pub terms: Terms,
    pub grads: ModelParams,
    pub dpp_skipped: usize,
}

/// Batch objective: per-document losses and gradients averaged over
/// documents. Documents are processed in parallel and reduced in order, so
/// the result does not depend on the thread count.
pub fn total_loss(
    batch: &[&TrainingExample],
    params: &ModelParams,
    config: &TrainConfig,
) -> Result<BatchLoss> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let per_doc: Vec<DocLoss> = batch
        .par_iter()
        .map(|ex| doc_loss_and_grad(ex, params, config))
        .collect::<Result<_>>()?;
    let scale = 1.0 / batch.len() as f64;
    let mut grads = params.zeros_like();
    let mut terms = Terms::default();
    let mut skipped = 0;
    for d in &per_doc {
        grads.add_scaled(&d.grads, scale);
        terms.add_scaled(&d.terms, scale);
        skipped += usize::from(d.dpp_skipped);
    }
    Ok(BatchLoss {
        loss: terms.total(),
        terms,
        grads,
        dpp_skipped: skipped,
    })
}

/// Learning rate at 1-based `step` of `total_steps`: linear warmup over
/// `ceil(warmup_fraction · T)` steps, then constant.
pub fn learning_rate_at(config: &TrainConfig, step: usize, total_steps: usize) -> f64 {
    let warmup = (config.warmup_fraction * total_steps as f64).ceil() as usize;
    if warmup > 0 && step <= warmup {
        config.learning_rate * step as f64 / warmup as f64
    } else {
        config.learning_rate
    }
}

/// Adam with bias correction (β₁ = 0.9, β₂ = 0.999, ε = 1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(num_params: usize) -> Self {
        Adam {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, lr: f64) {
        self.t += 1;
        let g = grads.to_flat();
        let c1 = 1.0 - Self::BETA1.powi(self.t as i32);
        let c2 = 1.0 - Self::BETA2.powi(self.t as i32);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut offset = 0;
        params.visit_mut(&mut |_, p| {
            for (k, x) in p.iter_mut().enumerate() {
                let i = offset + k;
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * g[i];
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * g[i] * g[i];
                let update = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
                *x -= update;
            }
            offset += p.len();
        });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_rouge1_f: f64,
    pub val_seg_f1: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub params: ModelParams,
    /// Parameters from the epoch with the lowest validation loss.
    pub best_params: ModelParams,
    pub log: Vec<EpochMetrics>,
    pub dpp_skipped: usize,
}

/// Mean objective over a document set.
pub fn mean_terms(
    examples: &[TrainingExample],
    params: &ModelParams,
    config: &TrainConfig,
) -> Result<Terms> {
    let per: Vec<Terms> = examples
        .par_iter()
        .map(|ex| doc_terms(ex, params, config))
        .collect::<Result<_>>()?;
    let mut t = Terms::default();
    for p in &per {
        t.add_scaled(p, 1.0 / per.len().max(1) as f64);
    }
    Ok(t)
}

/// Summary length used for validation scoring: mean number of positive
/// summary labels, rounded, at least 1.
pub fn typical_summary_length(examples: &[TrainingExample]) -> usize {
    if examples.is_empty() {
        return 1;
    }
    let total: usize = examples.iter().map(|e| summary_set(&e.y_sum).len()).sum();
    ((total as f64 / examples.len() as f64).round() as usize).max(1)
}

fn validation_scores(
    examples: &[TrainingExample],
    params: &ModelParams,
    convention: SegLabelConvention,
    k: usize,
) -> Result<(f64, f64)> {
    if examples.is_empty() {
        return Ok((0.0, 0.0));
    }
    let per: Vec<(f64, f64)> = examples
        .par_iter()
        .map(|ex| {
            let pred = predict(&ex.document, &ex.features, params, convention, k, 0.5)?;
            let r1 = match ex.document.reference_tokens() {
                Some(reference) => {
                    let selected = select_top_k(pred.scores_sum.as_slice(), k);
                    rouge_n(&ex.document.tokens_of(&selected), &reference, 1).f1
                }
                None => 0.0,
            };
            let (_, _, f) = seg_f1(
                &pred.boundaries,
                ex.document.section_starts(),
                ex.document.len(),
            );
            Ok((r1, f))
        })
        .collect::<Result<_>>()?;
    let n = per.len() as f64;
    Ok((
        per.iter().map(|p| p.0).sum::<f64>() / n,
        per.iter().map(|p| p.1).sum::<f64>() / n,
    ))
}

/// Trains from `init` for `config.epochs` epochs. Batches are drawn from a
/// per-epoch shuffle seeded by `config.rng_seed`; `grad_accumulation`
/// batches are averaged per optimizer step.
pub fn fit(
    train: &[TrainingExample],
    val: &[TrainingExample],
    init: ModelParams,
    config: &TrainConfig,
    convention: SegLabelConvention,
) -> Result<FitOutput> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let mut params = init;
    let mut best_params = params.clone();
    let mut best_val = f64::INFINITY;
    let mut adam = Adam::new(params.num_params());
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let batches_per_epoch = train.len().div_ceil(config.batch_size);
    let steps_per_epoch = batches_per_epoch.div_ceil(config.grad_accumulation);
    let total_steps = steps_per_epoch * config.epochs;
    let k = typical_summary_length(train);
    let mut step = 0;
    let mut log = Vec::with_capacity(config.epochs);
    let mut dpp_skipped = 0;

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let batches: Vec<&[usize]> = order.chunks(config.batch_size).collect();
        for group in batches.chunks(config.grad_accumulation) {
            let mut acc = params.zeros_like();
            for batch in group {
                let docs: Vec<&TrainingExample> = batch.iter().map(|&i| &train[i]).collect();
                let b = total_loss(&docs, &params, config)?;
                acc.add_scaled(&b.grads, 1.0 / group.len() as f64);
                epoch_loss += b.loss;
                dpp_skipped += b.dpp_skipped;
            }
            step += 1;
            let lr = learning_rate_at(config, step, total_steps);
            adam.step(&mut params, &acc, lr);
            if !params.all_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite parameters after step {step}"
                )));
            }
        }
        let val_loss = if val.is_empty() {
            f64::NAN
        } else {
            mean_terms(val, &params, config)?.total()
        };
        let (val_rouge1_f, val_seg_f1) = validation_scores(val, &params, convention, k)?;
        if val_loss < best_val || best_val.is_infinite() {
            best_val = val_loss;
            best_params = params.clone();
        }
        log.push(EpochMetrics {
            epoch,
            train_loss: epoch_loss / batches_per_epoch as f64,
            val_loss,
            val_rouge1_f,
            val_seg_f1,
        });
    }
    Ok(FitOutput {
        params,
        best_params,
        log,
        dpp_skipped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub term: Term,
    pub block: String,
    pub max_rel_error: f64,
    pub max_abs_analytic: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockReport>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| !b.flagged)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.max_rel_error)
            .fold(0.0, f64::max)
    }

    /// Largest analytic gradient magnitude of one objective term.
    pub fn term_max_abs(&self, term: Term) -> f64 {
        self.blocks
            .iter()
            .filter(|b| b.term == term)
            .map(|b| b.max_abs_analytic)
            .fold(0.0, f64::max)
    }
}

/// Floor on the relative-error denominator. Central differences at step
/// 1e-5 carry absolute noise near 1e-8, so smaller gradients are compared
/// in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERROR_FLOOR)
}

/// Compares `analytic` with central differences of `loss` element by
/// element and summarizes per named tensor.
pub fn compare_gradients(
    params: &ModelParams,
    analytic: &ModelParams,
    term: Term,
    loss: &dyn Fn(&ModelParams) -> Result<f64>,
    step: f64,
    tolerance: f64,
) -> Result<Vec<BlockReport>> {
    let mut blocks: Vec<(String, usize, usize)> = Vec::new();
    let mut offset = 0;
    params.visit(&mut |name, _, v| {
        blocks.push((name.to_string(), offset, v.len()));
        offset += v.len();
    });
    let flat_analytic = analytic.to_flat();
    let perturbed = |idx: usize, delta: f64| -> Result<f64> {
        let mut q = params.clone();
        let mut off = 0;
        q.visit_mut(&mut |_, v| {
            if (off..off + v.len()).contains(&idx) {
                v[idx - off] += delta;
            }
            off += v.len();
        });
        loss(&q)
    };
    let mut out = Vec::with_capacity(blocks.len());
    for (name, start, len) in blocks {
        let mut max_rel: f64 = 0.0;
        let mut max_abs: f64 = 0.0;
        for idx in start..start + len {
            let fd = (perturbed(idx, step)? - perturbed(idx, -step)?) / (2.0 * step);
            let a = flat_analytic[idx];
            max_rel = max_rel.max(rel_error(fd, a));
            max_abs = max_abs.max(a.abs());
        }
        out.push(BlockReport {
            term,
            block: name,
            max_rel_error: max_rel,
            max_abs_analytic: max_abs,
            flagged: !(max_rel < tolerance),
        });
    }
    Ok(out)
}

/// Checks the analytic gradient of each objective term and of the total
/// against central differences with the given step. The training ridge is
/// applied consistently on both sides.
pub fn grad_check(
    params: &ModelParams,
    example: &TrainingExample,
    config: &TrainConfig,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let mut blocks = Vec::new();
    for term in [Term::Sum, Term::Seg, Term::Dpp, Term::Total] {
        let analytic = doc_loss_impl(example, params, config, Ridge::TRAINING, term, true)?.grads;
        let loss = |p: &ModelParams| -> Result<f64> {
            let t = doc_loss_impl(example, p, config, Ridge::TRAINING, term, false)?.terms;
            Ok(match term {
                Term::Sum => t.sum,
                Term::Seg => t.seg,
                Term::Dpp => t.dpp,
                Term::Total => t.total(),
            })
        };
        blocks.extend(compare_gradients(
            params, &analytic, term, &loss, step, tolerance,
        )?);
    }
    Ok(GradCheckReport { blocks, tolerance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SynthConfig};
    use crate::encoder::{ArchConfig, FeatureConfig};
    use ndarray::array;
    use rand::Rng;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            features: FeatureConfig {
                dim: 8,
                hash_buckets: 8,
                ..FeatureConfig::default()
            },
            arch: ArchConfig {
                layers: 2,
                heads: 2,
                ff_dim: 16,
            },
        }
    }

    fn random_example(rng: &mut ChaCha8Rng, n: usize, cfg: &ModelConfig) -> TrainingExample {
        let words = [
            "alpha", "beta", "gamma", "delta", "eps", "zeta", "moving", "on",
        ];
        let sentences: Vec<String> = (0..n)
            .map(|_| {
                (0..rng.gen_range(2..6))
                    .map(|_| words[rng.gen_range(0..words.len())])
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        let mut starts = vec![0];
        if n > 2 {
            starts.push(rng.gen_range(1..n));
        }
        let doc = Document::new("x", sentences, starts, Some("alpha beta".into())).unwrap();
        let mut y_sum: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.4))).collect();
        y_sum[0] = 1;
        let y_seg = seg_labels(&doc, SegLabelConvention::First);
        TrainingExample::new(doc, y_sum, y_seg, cfg).unwrap()
    }

    #[test]
    fn bce_fixtures() {
        let perfect = loss_sum(array![1.0, 0.0, 1.0].view(), &[1, 0, 1]).unwrap();
        assert!(perfect <= 1e-6);
        let half = loss_sum(array![0.5, 0.5].view(), &[1, 0]).unwrap();
        assert!((half - 2f64.ln()).abs() < 1e-15);
        let half = loss_seg(array![0.5, 0.5, 0.5].view(), &[1, 1, 1]).unwrap();
        assert!((half - 2f64.ln()).abs() < 1e-15);
        let v = loss_sum(array![0.9, 0.2].view(), &[1, 0]).unwrap();
        assert!((v - 0.164_252_033_486_018_1).abs() < 1e-12, "{v}");
        let v = loss_seg(array![0.6, 0.3].view(), &[1, 0]).unwrap();
        assert!((v - 0.433_750_283_852_361_6).abs() < 1e-12, "{v}");
        assert!(loss_sum(array![0.5].view(), &[1, 0]).is_err());
    }

    #[test]
    fn variant_forcing() {
        let c = TrainConfig {
            variant: Variant::Base,
            beta: 1.0,
            ..Default::default()
        };
        assert_eq!(c.effective_beta(), 0.0);
        assert!(!c.uses_segmentation());
        let c = TrainConfig {
            variant: Variant::Joint,
            beta: 1.0,
            ..Default::default()
        };
        assert_eq!(c.effective_beta(), 0.0);
        assert!(c.uses_segmentation());
        assert_eq!(TrainConfig::default().beta, 0.1);
        assert!(TrainConfig {
            warmup_fraction: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            beta: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn base_equals_full_without_seg_and_dpp() {
        let cfg = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ModelParams::init(&cfg, 3).unwrap();
        let ex = random_example(&mut rng, 5, &cfg);
        let base = doc_terms(
            &ex,
            &p,
            &TrainConfig {
                variant: Variant::Base,
                ..Default::default()
            },
        )
        .unwrap();
        let full = doc_terms(
            &ex,
            &p,
            &TrainConfig {
                variant: Variant::Full,
                beta: 0.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((base.total() - (full.total() - full.seg)).abs() < 1e-12);
    }

    #[test]
    fn total_is_sum_of_independent_terms() {
        let cfg = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = ModelParams::init(&cfg, 4).unwrap();
        let ex = random_example(&mut rng, 5, &cfg);
        let config = TrainConfig {
            variant: Variant::Full,
            beta: 0.1,
            ..Default::default()
        };
        let d = doc_loss_and_grad(&ex, &p, &config).unwrap();

        let pass = forward(ex.features.view(), &p).unwrap();
        let l_sum = loss_sum(pass.heads.y_sum.view(), &ex.y_sum).unwrap();
        let l_seg = loss_seg(pass.heads.y_seg.view(), &ex.y_seg).unwrap();
        let l_dpp = -crate::dpp::DppKernel::build(
            pass.h().view(),
            pass.heads.y_sum.view(),
            Ridge::TRAINING,
        )
        .unwrap()
        .log_prob(&summary_set(&ex.y_sum))
        .unwrap();
        assert!((d.terms.total() - (l_sum + l_seg + 0.1 * l_dpp)).abs() < 1e-12);
    }

    #[test]
    fn grad_check_passes_and_detects_faults() {
        let cfg = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = ModelParams::init(&cfg, 5).unwrap();
        let ex = random_example(&mut rng, 4, &cfg);
        let config = TrainConfig {
            variant: Variant::Full,
            beta: 0.5,
            ..Default::default()
        };
        let report = grad_check(&p, &ex, &config, 1e-5, 1e-4).unwrap();
        assert!(
            report.passed(),
            "{:#?}",
            report
                .blocks
                .iter()
                .filter(|b| b.flagged)
                .collect::<Vec<_>>()
        );
        assert!(report.term_max_abs(Term::Dpp) > 0.0);

        // Fault injection: zero the head gradient.
        let mut analytic = doc_loss_and_grad(&ex, &p, &config).unwrap().grads;
        analytic.w_sum.fill(0.0);
        let loss = |q: &ModelParams| doc_terms(&ex, q, &config).map(|t| t.total());
        let blocks = compare_gradients(&p, &analytic, Term::Total, &loss, 1e-5, 1e-4).unwrap();
        let flagged: Vec<&str> = blocks
            .iter()
            .filter(|b| b.flagged)
            .map(|b| b.block.as_str())
            .collect();
        assert_eq!(flagged, vec!["w_sum"]);

        let no_dpp = TrainConfig {
            beta: 0.0,
            ..config
        };
        let report = grad_check(&p, &ex, &no_dpp, 1e-5, 1e-4).unwrap();
        assert_eq!(report.term_max_abs(Term::Dpp), 0.0);
        assert!(report.passed());
    }

    #[test]
    fn empty_summary_skips_dpp() {
        let cfg = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = ModelParams::init(&cfg, 5).unwrap();
        let mut ex = random_example(&mut rng, 4, &cfg);
        ex.y_sum = vec![0; 4];
        let b = total_loss(&[&ex], &p, &TrainConfig::default()).unwrap();
        assert_eq!(b.dpp_skipped, 1);
        assert_eq!(b.terms.dpp, 0.0);
    }

    #[test]
    fn warmup_schedule() {
        let c = TrainConfig {
            learning_rate: 1e-3,
            warmup_fraction: 0.1,
            ..Default::default()
        };
        let total = 95;
        let w = 10; // ceil(9.5)
        for t in 1..=total {
            let lr = learning_rate_at(&c, t, total);
            let expected = if t <= w {
                1e-3 * t as f64 / w as f64
            } else {
                1e-3
            };
            assert!((lr - expected).abs() < 1e-18);
        }
        assert_eq!(
            learning_rate_at(&c, w, total),
            learning_rate_at(&c, w + 1, total)
        );
        let flat = TrainConfig {
            warmup_fraction: 0.0,
            ..c
        };
        assert_eq!(learning_rate_at(&flat, 1, total), 1e-3);
    }

    fn synthetic_examples(n: usize, seed: u64, cfg: &ModelConfig) -> Vec<TrainingExample> {
        let records = generate_synthetic(&SynthConfig {
            n_documents: n,
            salience_boundary_bias: 1.0,
            rng_seed: seed,
            ..SynthConfig::default()
        })
        .unwrap();
        records
            .iter()
            .map(|r| TrainingExample::from_record(r, SegLabelConvention::First, cfg).unwrap())
            .collect()
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let cfg = tiny_config();
        let train = synthetic_examples(6, 1, &cfg);
        let init = ModelParams::init(&cfg, 1).unwrap();
        let config = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            batch_size: 2,
            ..Default::default()
        };
        let out = fit(
            &train,
            &train[..2],
            init.clone(),
            &config,
            SegLabelConvention::First,
        )
        .unwrap();
        assert_eq!(out.params, init);
        assert_eq!(out.log.len(), 3);
    }

    #[test]
    fn fit_is_deterministic_and_learns() {
        let cfg = tiny_config();
        let train = synthetic_examples(40, 2, &cfg);
        let val = synthetic_examples(10, 3, &cfg);
        let init = ModelParams::init(&cfg, 2).unwrap();
        let config = TrainConfig {
            variant: Variant::Full,
            epochs: 30,
            learning_rate: 3e-3,
            ..Default::default()
        };
        let a = fit(
            &train,
            &val,
            init.clone(),
            &config,
            SegLabelConvention::First,
        )
        .unwrap();
        let b = fit(
            &train,
            &val,
            init.clone(),
            &config,
            SegLabelConvention::First,
        )
        .unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.log, b.log);
        let before = mean_terms(&val, &init, &config).unwrap().sum;
        let after = mean_terms(&val, &a.params, &config).unwrap().sum;
        assert!(after < before, "val L_sum {before} -> {after}");
    }

    #[test]
    fn config_parses_from_toml() {
        let text = "variant = \"joint\"\nbeta = 0.01\nlearning_rate = 0.002\nwarmup_fraction = 0.1\nepochs = 5\nbatch_size = 4\ngrad_accumulation = 2\nrng_seed = 9\n";
        let c: TrainConfig = toml::from_str(text).unwrap();
        assert_eq!(c.variant, Variant::Joint);
        assert_eq!(c.grad_accumulation, 2);
        assert!(toml::from_str::<TrainConfig>("unknown = 1").is_err());
    }
}
