//! ROUGE-1/2 (clipped n-gram overlap) and ROUGE-L (longest common
//! subsequence) over token sequences.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    pub fn from_counts(overlap: usize, system_total: usize, reference_total: usize) -> Self {
        if system_total == 0 || reference_total == 0 {
            return RougeScore::default();
        }
        let precision = overlap as f64 / system_total as f64;
        let recall = overlap as f64 / reference_total as f64;
        RougeScore {
            precision,
            recall,
            f1: harmonic_mean(precision, recall),
        }
    }
}

pub(crate) fn harmonic_mean(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Optional token normalization. Both are off by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RougeOptions {
    /// Strip common English inflectional suffixes.
    pub stem: bool,
    pub remove_stopwords: bool,
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "has", "he", "in", "is", "it",
    "its", "of", "on", "or", "that", "the", "to", "was", "were", "will", "with",
];

fn light_stem(token: &str) -> String {
    for suffix in ["ing", "edly", "ed", "es", "s"] {
        if let Some(stem) = token.strip_suffix(suffix) {
            if stem.chars().count() >= 3 {
                return stem.to_string();
            }
        }
    }
    token.to_string()
}

impl RougeOptions {
    pub fn normalize(&self, tokens: &[String]) -> Vec<String> {
        tokens
            .iter()
            .filter(|t| !self.remove_stopwords || !STOPWORDS.contains(&t.as_str()))
            .map(|t| if self.stem { light_stem(t) } else { t.clone() })
            .collect()
    }
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            let key: Vec<&str> = w.iter().map(AsRef::as_ref).collect();
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap between a system and a reference.
///
/// # Panics
/// If `n` is zero.
pub fn rouge_n<S: AsRef<str>>(system: &[S], reference: &[S], n: usize) -> RougeScore {
    assert!(n >= 1, "ROUGE-N needs n >= 1");
    let sys = ngram_counts(system, n);
    let refc = ngram_counts(reference, n);
    let overlap: usize = sys
        .iter()
        .map(|(g, &c)| c.min(refc.get(g).copied().unwrap_or(0)))
        .sum();
    RougeScore::from_counts(
        overlap,
        system.len().saturating_sub(n - 1),
        reference.len().saturating_sub(n - 1),
    )
}

/// Length of the longest common subsequence, O(|a|·|b|) time, O(|b|) memory.
pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<S: AsRef<str>>(system: &[S], reference: &[S]) -> RougeScore {
    RougeScore::from_counts(lcs_len(system, reference), system.len(), reference.len())
}

/// Mean of ROUGE-1 and ROUGE-2 F-scores, the oracle's objective.
pub fn avg_r1_r2_f<S: AsRef<str>>(system: &[S], reference: &[S]) -> f64 {
    0.5 * (rouge_n(system, reference, 1).f1 + rouge_n(system, reference, 2).f1)
}
