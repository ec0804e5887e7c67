//! Deterministic sentence featurizer standing in for a pretrained token
//! encoder.
//!
//! Each sentence becomes `hash_buckets` hashed bag-of-words counts
//! (L2-normalized) followed by five scalar features: relative position,
//! log token count, TF-IDF cosine to the document centroid, a
//! discourse-cue indicator and lexical cohesion across the gap before the
//! sentence. The trainable projection to the model width
//! lives in [`ModelParams`](super::ModelParams).

// Ordered maps keep floating-point sums independent of hash seeds.
use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, DEFAULT_CUES};
use crate::error::{Error, Result};

/// Number of scalar features appended after the hashed buckets.
pub const EXTRA_FEATURES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Model width `d`.
    pub dim: usize,
    pub hash_buckets: usize,
    pub cue_lexicon: Vec<String>,
    pub use_position_feature: bool,
    pub use_centroid_similarity: bool,
    /// Sentences on each side of a gap compared by the cohesion feature;
    /// 0 disables it.
    pub cohesion_window: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            dim: 32,
            hash_buckets: 128,
            cue_lexicon: DEFAULT_CUES.iter().map(|s| s.to_string()).collect(),
            use_position_feature: true,
            use_centroid_similarity: true,
            cohesion_window: 2,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 4 {
            return Err(Error::InvalidArgument(format!(
                "dim must be >= 4, got {}",
                self.dim
            )));
        }
        if self.hash_buckets < self.dim {
            return Err(Error::InvalidArgument(format!(
                "hash_buckets ({}) must be >= dim ({})",
                self.hash_buckets, self.dim
            )));
        }
        Ok(())
    }

    /// Width of the raw feature rows produced by [`featurize`].
    pub fn raw_width(&self) -> usize {
        self.hash_buckets + EXTRA_FEATURES
    }
}

/// 64-bit FNV-1a; stable across platforms and releases.
fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn contains_phrase(tokens: &[String], phrase: &[String]) -> bool {
    !phrase.is_empty()
        && tokens.len() >= phrase.len()
        && tokens.windows(phrase.len()).any(|w| w == phrase)
}

fn add_into<'a>(acc: &mut BTreeMap<&'a str, f64>, v: &BTreeMap<&'a str, f64>) {
    for (t, w) in v {
        *acc.entry(t).or_insert(0.0) += w;
    }
}

fn cosine_sparse(a: &BTreeMap<&str, f64>, b: &BTreeMap<&str, f64>) -> f64 {
    let dot: f64 = a
        .iter()
        .map(|(k, v)| v * b.get(k).copied().unwrap_or(0.0))
        .sum();
    let na: f64 = a.values().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = b.values().map(|v| v * v).sum::<f64>().sqrt();
    if na > 0.0 && nb > 0.0 {
        dot / (na * nb)
    } else {
        0.0
    }
}

/// Raw `N × (hash_buckets + 5)` feature matrix for a document.
pub fn featurize(doc: &Document, config: &FeatureConfig) -> Array2<f64> {
    let n = doc.len();
    let b = config.hash_buckets;
    let mut x = Array2::<f64>::zeros((n, config.raw_width()));

    // Document frequencies for a smoothed in-document IDF.
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for s in doc.sentences() {
        let mut seen: Vec<&str> = s.tokens.iter().map(String::as_str).collect();
        seen.sort_unstable();
        seen.dedup();
        for t in seen {
            *df.entry(t).or_insert(0) += 1;
        }
    }
    let idf = |t: &str| ((1.0 + n as f64) / (1.0 + df[t] as f64)).ln() + 1.0;
    let tfidf: Vec<BTreeMap<&str, f64>> = doc
        .sentences()
        .iter()
        .map(|s| {
            let mut v: BTreeMap<&str, f64> = BTreeMap::new();
            for t in &s.tokens {
                *v.entry(t.as_str()).or_insert(0.0) += 1.0;
            }
            for (t, w) in v.iter_mut() {
                *w *= idf(t);
            }
            v
        })
        .collect();
    let mut centroid: BTreeMap<&str, f64> = BTreeMap::new();
    for v in &tfidf {
        for (t, w) in v {
            *centroid.entry(t).or_insert(0.0) += w / n as f64;
        }
    }
    let cues: Vec<Vec<String>> = config
        .cue_lexicon
        .iter()
        .map(|c| crate::corpus::tokenize(c))
        .collect();

    for (i, s) in doc.sentences().iter().enumerate() {
        let mut row = x.row_mut(i);
        for t in &s.tokens {
            row[(fnv1a(t) % b as u64) as usize] += 1.0;
        }
        let norm = row
            .slice(ndarray::s![..b])
            .dot(&row.slice(ndarray::s![..b]))
            .sqrt();
        if norm > 0.0 {
            row.slice_mut(ndarray::s![..b]).mapv_inplace(|v| v / norm);
        }
        if config.use_position_feature {
            row[b] = i as f64 / n as f64;
        }
        row[b + 1] = (s.tokens.len() as f64).ln_1p();
        if config.use_centroid_similarity {
            row[b + 2] = cosine_sparse(&tfidf[i], &centroid);
        }
        let w = config.cohesion_window;
        if w > 0 && i > 0 {
            let mut before = BTreeMap::new();
            let mut after = BTreeMap::new();
            for v in &tfidf[i.saturating_sub(w)..i] {
                add_into(&mut before, v);
            }
            for v in &tfidf[i..(i + w).min(n)] {
                add_into(&mut after, v);
            }
            row[b + 4] = cosine_sparse(&before, &after);
        }
        row[b + 3] = if cues.iter().any(|c| contains_phrase(&s.tokens, c)) {
            1.0
        } else {
            0.0
        };
    }
    x
}
