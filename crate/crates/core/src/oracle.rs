//! Ground-truth labels: greedy ROUGE oracle summaries and section-boundary
//! labels.

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Labels};
use crate::error::{Error, Result};
use crate::rouge::avg_r1_r2_f;

/// Which sentence of a section carries the segmentation label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegLabelConvention {
    #[default]
    First,
    Last,
}

impl std::str::FromStr for SegLabelConvention {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "first" => Ok(Self::First),
            "last" => Ok(Self::Last),
            other => Err(Error::InvalidArgument(format!(
                "unknown segmentation label convention {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    pub y_sum: Vec<u8>,
    pub y_seg: Vec<u8>,
    /// Selected indices in the order the oracle picked them.
    pub oracle_order: Vec<usize>,
}

impl LabelSet {
    /// The ground-truth summary set, ascending.
    pub fn summary_set(&self) -> Vec<usize> {
        summary_set(&self.y_sum)
    }

    pub fn to_labels(&self) -> Labels {
        Labels {
            sum: self.y_sum.clone(),
            seg: self.y_seg.clone(),
        }
    }
}

pub fn summary_set(y_sum: &[u8]) -> Vec<usize> {
    y_sum
        .iter()
        .enumerate()
        .filter(|(_, &y)| y == 1)
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSummary {
    pub y_sum: Vec<u8>,
    pub oracle_order: Vec<usize>,
    /// avg(R-1 F, R-2 F) of the partial summary after each pick.
    pub scores: Vec<f64>,
}

/// Greedy oracle: repeatedly add the sentence that most improves the mean of
/// ROUGE-1 and ROUGE-2 F against the reference. Candidates are scored with
/// the selected sentences in document order. Stops when no sentence gives a
/// strictly positive gain or `max_sentences` is reached. Ties go to the
/// lowest index.
pub fn greedy_oracle(doc: &Document, max_sentences: Option<usize>) -> Result<OracleSummary> {
    let reference = doc
        .reference_tokens()
        .ok_or_else(|| Error::MissingReference(doc.id.clone()))?;
    if max_sentences == Some(0) {
        return Err(Error::InvalidArgument(
            "max_sentences must be at least 1".into(),
        ));
    }
    let limit = max_sentences.unwrap_or(usize::MAX).min(doc.len());
    let mut selected = vec![false; doc.len()];
    let mut order = Vec::new();
    let mut scores = Vec::new();
    let mut current = 0.0;
    while order.len() < limit {
        let mut best: Option<(usize, f64)> = None;
        for cand in (0..doc.len()).filter(|&i| !selected[i]) {
            let tokens: Vec<&str> = (0..doc.len())
                .filter(|&i| selected[i] || i == cand)
                .flat_map(|i| doc.sentences()[i].tokens.iter().map(String::as_str))
                .collect();
            let reference: Vec<&str> = reference.iter().map(String::as_str).collect();
            let score = avg_r1_r2_f(&tokens, &reference);
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((cand, score));
            }
        }
        match best {
            Some((i, score)) if score > current => {
                selected[i] = true;
                order.push(i);
                scores.push(score);
                current = score;
            }
            _ => break,
        }
    }
    Ok(OracleSummary {
        y_sum: selected.iter().map(|&s| u8::from(s)).collect(),
        oracle_order: order,
        scores,
    })
}

pub fn seg_labels(doc: &Document, convention: SegLabelConvention) -> Vec<u8> {
    seg_labels_from_starts(doc.section_starts(), doc.len(), convention)
}

pub fn seg_labels_from_starts(
    starts: &[usize],
    n: usize,
    convention: SegLabelConvention,
) -> Vec<u8> {
    let mut y = vec![0u8; n];
    match convention {
        SegLabelConvention::First => {
            for &b in starts {
                y[b] = 1;
            }
        }
        SegLabelConvention::Last => {
            for &b in starts.iter().filter(|&&b| b > 0) {
                y[b - 1] = 1;
            }
            y[n - 1] = 1;
        }
    }
    y
}

/// Oracle summary labels plus segmentation labels for one document.
pub fn build_labels(
    doc: &Document,
    max_sentences: Option<usize>,
    convention: SegLabelConvention,
) -> Result<LabelSet> {
    let oracle = greedy_oracle(doc, max_sentences)?;
    Ok(LabelSet {
        y_sum: oracle.y_sum,
        y_seg: seg_labels(doc, convention),
        oracle_order: oracle.oracle_order,
    })
}
