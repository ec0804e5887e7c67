//! Corpus evaluation: ROUGE, boundary F1, WindowDiff, the boundary
//! proximity histogram, and a paired approximate randomization test.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{section_spans, Document};
use crate::error::{Error, Result};
use crate::inference::{select_top_k, Prediction};
use crate::rouge::{rouge_l, rouge_n, RougeScore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocScores {
    pub id: String,
    pub rouge1: RougeScore,
    pub rouge2: RougeScore,
    #[serde(rename = "rougeL")]
    pub rouge_l: RougeScore,
    pub seg_precision: f64,
    pub seg_recall: f64,
    pub seg_f1: f64,
    /// Absent when the document is too short for the window.
    pub windowdiff: Option<f64>,
    pub summary_words: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rouge1: RougeScore,
    pub rouge2: RougeScore,
    #[serde(rename = "rougeL")]
    pub rouge_l: RougeScore,
    pub seg_precision: f64,
    pub seg_recall: f64,
    pub seg_f1: f64,
    /// Mean over documents long enough for the window; `None` if none are.
    pub windowdiff: Option<f64>,
    pub avg_summary_words: f64,
    pub n_documents: usize,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

fn mean_score(xs: impl Iterator<Item = RougeScore>, n: f64) -> RougeScore {
    let mut acc = RougeScore::default();
    for s in xs {
        acc.precision += s.precision;
        acc.recall += s.recall;
        acc.f1 += s.f1;
    }
    RougeScore {
        precision: acc.precision / n,
        recall: acc.recall / n,
        f1: acc.f1 / n,
    }
}

/// Exact-position boundary matching, ignoring index 0.
pub fn seg_f1(predicted: &[usize], reference: &[usize], n: usize) -> (f64, f64, f64) {
    let clean = |b: &[usize]| {
        let mut v: Vec<usize> = b.iter().copied().filter(|&i| i > 0 && i < n).collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let hyp = clean(predicted);
    let refs = clean(reference);
    if hyp.is_empty() && refs.is_empty() {
        return (1.0, 1.0, 1.0);
    }
    let tp = hyp.iter().filter(|i| refs.binary_search(i).is_ok()).count() as f64;
    let p = if hyp.is_empty() {
        0.0
    } else {
        tp / hyp.len() as f64
    };
    let r = if refs.is_empty() {
        0.0
    } else {
        tp / refs.len() as f64
    };
    let f = if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    };
    (p, r, f)
}

/// Window size: half the mean reference segment length, rounded half-up,
/// at least 1.
pub fn windowdiff_k(reference: &[usize], n: usize) -> usize {
    let segments = reference.iter().filter(|&&i| i > 0 && i < n).count() + 1;
    let k = (n as f64 / (2.0 * segments as f64) + 0.5).floor() as usize;
    k.max(1)
}

/// Fraction of windows `(i, i+k]` whose boundary counts differ.
pub fn windowdiff(predicted: &[usize], reference: &[usize], n: usize) -> Result<f64> {
    let k = windowdiff_k(reference, n);
    if n <= k {
        return Err(Error::DocumentTooShort { n, k });
    }
    let mark = |b: &[usize]| {
        let mut m = vec![0usize; n + 1];
        for &i in b {
            if i > 0 && i < n {
                m[i] = 1;
            }
        }
        // prefix[j] = number of boundaries at positions < j
        let mut prefix = vec![0usize; n + 2];
        for j in 0..=n {
            prefix[j + 1] = prefix[j] + m[j];
        }
        prefix
    };
    let ph = mark(predicted);
    let pr = mark(reference);
    let count = |p: &[usize], i: usize| p[i + k + 1] - p[i + 1];
    let windows = n - k;
    let wrong = (0..windows)
        .filter(|&i| count(&ph, i) != count(&pr, i))
        .count();
    Ok(wrong as f64 / windows as f64)
}

/// Per-document scores of one prediction.
pub fn score_document(pred: &Prediction, doc: &Document) -> Result<DocScores> {
    let reference = doc
        .reference_tokens()
        .ok_or_else(|| Error::MissingReference(doc.id.clone()))?;
    if pred.selected.iter().any(|&i| i >= doc.len()) {
        return Err(Error::InvalidDocument {
            doc_id: doc.id.clone(),
            message: "selected index out of range".into(),
        });
    }
    let system = doc.tokens_of(&pred.selected);
    let n = doc.len();
    let (p, r, f) = seg_f1(&pred.boundaries, doc.section_starts(), n);
    Ok(DocScores {
        id: doc.id.clone(),
        rouge1: rouge_n(&system, &reference, 1),
        rouge2: rouge_n(&system, &reference, 2),
        rouge_l: rouge_l(&system, &reference),
        seg_precision: p,
        seg_recall: r,
        seg_f1: f,
        windowdiff: windowdiff(&pred.boundaries, doc.section_starts(), n).ok(),
        summary_words: system.len(),
    })
}

fn index_documents(docs: &[Document]) -> HashMap<&str, &Document> {
    docs.iter().map(|d| (d.id.as_str(), d)).collect()
}

/// Scores every prediction against its document, in prediction order.
pub fn score_all(predictions: &[Prediction], docs: &[Document]) -> Result<Vec<DocScores>> {
    let by_id = index_documents(docs);
    predictions
        .iter()
        .map(|p| {
            let doc = by_id.get(p.doc_id.as_str()).ok_or_else(|| {
                Error::MissingReference(format!("no document with id {:?}", p.doc_id))
            })?;
            score_document(p, doc)
        })
        .collect()
}

/// Macro average of per-document scores.
pub fn aggregate(scores: &[DocScores]) -> EvalReport {
    let n = scores.len().max(1) as f64;
    let wd: Vec<f64> = scores.iter().filter_map(|s| s.windowdiff).collect();
    EvalReport {
        rouge1: mean_score(scores.iter().map(|s| s.rouge1), n),
        rouge2: mean_score(scores.iter().map(|s| s.rouge2), n),
        rouge_l: mean_score(scores.iter().map(|s| s.rouge_l), n),
        seg_precision: scores.iter().map(|s| s.seg_precision).sum::<f64>() / n,
        seg_recall: scores.iter().map(|s| s.seg_recall).sum::<f64>() / n,
        seg_f1: scores.iter().map(|s| s.seg_f1).sum::<f64>() / n,
        windowdiff: (!wd.is_empty()).then(|| wd.iter().sum::<f64>() / wd.len() as f64),
        avg_summary_words: scores.iter().map(|s| s.summary_words as f64).sum::<f64>() / n,
        n_documents: scores.len(),
    }
}

pub fn evaluate(predictions: &[Prediction], docs: &[Document]) -> Result<EvalReport> {
    Ok(aggregate(&score_all(predictions, docs)?))
}

/// ROUGE fields only; segmentation fields are still filled in.
pub fn evaluate_rouge(predictions: &[Prediction], docs: &[Document]) -> Result<EvalReport> {
    evaluate(predictions, docs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KPoint {
    pub k: usize,
    pub rouge1_f: f64,
    pub rouge2_f: f64,
    pub rouge_l_f: f64,
}

/// Mean ROUGE F when the top `k` scored sentences are extracted, for
/// `k = 1..=k_max`.
pub fn rouge_vs_k(
    predictions: &[Prediction],
    docs: &[Document],
    k_max: usize,
) -> Result<Vec<KPoint>> {
    let by_id = index_documents(docs);
    let mut pairs = Vec::with_capacity(predictions.len());
    for p in predictions {
        let doc = by_id.get(p.doc_id.as_str()).ok_or_else(|| {
            Error::MissingReference(format!("no document with id {:?}", p.doc_id))
        })?;
        let reference = doc
            .reference_tokens()
            .ok_or_else(|| Error::MissingReference(doc.id.clone()))?;
        if p.scores_sum.len() != doc.len() {
            return Err(Error::LengthMismatch {
                expected: doc.len(),
                actual: p.scores_sum.len(),
            });
        }
        pairs.push((p, *doc, reference));
    }
    let n = pairs.len().max(1) as f64;
    Ok((1..=k_max)
        .map(|k| {
            let mut point = KPoint {
                k,
                rouge1_f: 0.0,
                rouge2_f: 0.0,
                rouge_l_f: 0.0,
            };
            for (p, doc, reference) in &pairs {
                let sys = doc.tokens_of(&select_top_k(&p.scores_sum, k));
                point.rouge1_f += rouge_n(&sys, reference, 1).f1;
                point.rouge2_f += rouge_n(&sys, reference, 2).f1;
                point.rouge_l_f += rouge_l(&sys, reference).f1;
            }
            point.rouge1_f /= n;
            point.rouge2_f /= n;
            point.rouge_l_f /= n;
            point
        })
        .collect())
}

pub fn rouge_vs_k_csv(points: &[KPoint]) -> String {
    let mut out = String::from("k,rouge1_f,rouge2_f,rougeL_f\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.k, p.rouge1_f, p.rouge2_f, p.rouge_l_f
        ));
    }
    out
}

/// Offset of a sentence from its section edges: `1` for the first sentence,
/// `-1` for the last; the smaller magnitude wins, ties positive.
pub fn boundary_offset(index: usize, start: usize, end: usize) -> i64 {
    let from_start = (index - start + 1) as i64;
    let from_end = -((end - index) as i64);
    if from_start <= -from_end {
        from_start
    } else {
        from_end
    }
}

pub fn boundary_proximity_histogram(
    summary: &[usize],
    section_starts: &[usize],
    n: usize,
) -> BTreeMap<i64, usize> {
    let spans = section_spans(section_starts, n);
    let mut hist = BTreeMap::new();
    for &i in summary {
        if let Some(&(s, e)) = spans.iter().find(|&&(s, e)| s <= i && i < e) {
            *hist.entry(boundary_offset(i, s, e)).or_insert(0) += 1;
        }
    }
    hist
}

pub fn merge_histograms(into: &mut BTreeMap<i64, usize>, other: &BTreeMap<i64, usize>) {
    for (&k, &v) in other {
        *into.entry(k).or_insert(0) += v;
    }
}

/// JSON object keyed by offset.
pub fn histogram_json(hist: &BTreeMap<i64, usize>) -> String {
    let map: BTreeMap<String, usize> = hist.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    serde_json::to_string_pretty(&map).expect("histogram serialization cannot fail")
}

pub fn histogram_csv(hist: &BTreeMap<i64, usize>) -> String {
    let mut out = String::from("offset,count\n");
    for (k, v) in hist {
        out.push_str(&format!("{k},{v}\n"));
    }
    out
}

/// Two-sided paired approximate randomization test on the mean difference.
/// Each iteration swaps every pair with probability 1/2; the p-value is
/// `(c + 1) / (R + 1)` where `c` counts shuffles at least as extreme.
pub fn approx_randomization_test(
    a: &[f64],
    b: &[f64],
    iterations: usize,
    rng_seed: u64,
) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    if iterations < 100 {
        return Err(Error::InvalidArgument(format!(
            "need at least 100 iterations, got {iterations}"
        )));
    }
    if a.is_empty() {
        return Ok(1.0);
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diffs.len() as f64;
    let observed = (diffs.iter().sum::<f64>() / n).abs();
    let tol = 1e-12 * observed.max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut extreme = 0usize;
    for _ in 0..iterations {
        let s: f64 = diffs
            .iter()
            .map(|&d| if rng.gen::<bool>() { -d } else { d })
            .sum();
        if (s / n).abs() >= observed - tol {
            extreme += 1;
        }
    }
    Ok((extreme + 1) as f64 / (iterations + 1) as f64)
}
