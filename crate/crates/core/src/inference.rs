//! Extractive summary selection and boundary prediction.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::encoder::{forward, ForwardPass, ModelParams};
use crate::error::{Error, Result};
use crate::oracle::SegLabelConvention;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    #[serde(rename = "id")]
    pub doc_id: String,
    pub selected: Vec<usize>,
    pub boundaries: Vec<usize>,
    pub scores_sum: Vec<f64>,
    pub scores_seg: Vec<f64>,
    pub summary_text: String,
}

impl Prediction {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("prediction serialization cannot fail")
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        serde_json::from_str(line).map_err(|e| Error::MalformedLine {
            line: 0,
            message: e.to_string(),
        })
    }
}

/// Which head's scores are thresholded into section starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundarySource {
    #[default]
    Segmentation,
    /// Null baseline for models without a trained segmentation head.
    Summary,
}

/// Indices of the `k` highest scores, ties to the lower index, returned in
/// ascending order.
pub fn select_top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    order
}

/// Indices scoring at least `threshold`, always including 0.
pub fn predict_boundaries(scores: &[f64], threshold: f64) -> Vec<usize> {
    let mut out = vec![0];
    out.extend((1..scores.len()).filter(|&i| scores[i] >= threshold));
    out
}

/// Section starts from segmentation scores under a labeling convention.
/// Under LAST a predicted section end `i` opens a section at `i + 1`.
pub fn boundaries_for(
    scores: &[f64],
    threshold: f64,
    convention: SegLabelConvention,
) -> Vec<usize> {
    match convention {
        SegLabelConvention::First => predict_boundaries(scores, threshold),
        SegLabelConvention::Last => {
            let n = scores.len();
            let mut out = vec![0];
            out.extend(
                (0..n)
                    .filter(|&i| scores[i] >= threshold && i + 1 < n)
                    .map(|i| i + 1),
            );
            out
        }
    }
}

/// Selected sentences in document order, joined by single spaces.
pub fn render_summary(doc: &Document, selected: &[usize]) -> String {
    let mut idx = selected.to_vec();
    idx.sort_unstable();
    idx.dedup();
    idx.iter()
        .filter_map(|&i| doc.sentences().get(i))
        .map(|s| s.text.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceConfig {
    pub k: usize,
    pub threshold: f64,
    pub convention: SegLabelConvention,
    pub boundary_source: BoundarySource,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            k: 5,
            threshold: DEFAULT_THRESHOLD,
            convention: SegLabelConvention::First,
            boundary_source: BoundarySource::Segmentation,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Builds a prediction from an existing forward pass.
pub fn prediction_from_pass(
    doc: &Document,
    pass: &ForwardPass,
    cfg: &InferenceConfig,
) -> Prediction {
    let scores_sum = pass.heads.y_sum.to_vec();
    let scores_seg = pass.heads.y_seg.to_vec();
    let selected = select_top_k(&scores_sum, cfg.k);
    let boundaries = match cfg.boundary_source {
        BoundarySource::Segmentation => boundaries_for(&scores_seg, cfg.threshold, cfg.convention),
        BoundarySource::Summary => predict_boundaries(&scores_sum, cfg.threshold),
    };
    Prediction {
        doc_id: doc.id.clone(),
        summary_text: render_summary(doc, &selected),
        selected,
        boundaries,
        scores_sum,
        scores_seg,
    }
}

/// Runs the model on precomputed raw features and returns the prediction
/// together with the sentence representations.
pub fn predict_with_representations(
    doc: &Document,
    features: ArrayView2<'_, f64>,
    params: &ModelParams,
    cfg: &InferenceConfig,
) -> Result<(Prediction, Array2<f64>)> {
    cfg.validate()?;
    let pass = forward(features, params)?;
    let pred = prediction_from_pass(doc, &pass, cfg);
    Ok((pred, pass.encoded.h))
}

pub fn predict(
    doc: &Document,
    features: &Array2<f64>,
    params: &ModelParams,
    convention: SegLabelConvention,
    k: usize,
    threshold: f64,
) -> Result<Prediction> {
    let cfg = InferenceConfig {
        k,
        threshold,
        convention,
        boundary_source: BoundarySource::Segmentation,
    };
    Ok(predict_with_representations(doc, features.view(), params, &cfg)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{featurize, ModelConfig};
    use proptest::prelude::*;

    #[test]
    fn top_k_fixtures() {
        assert_eq!(select_top_k(&[0.1, 0.9, 0.5], 2), vec![1, 2]);
        assert_eq!(select_top_k(&[0.3; 5], 3), vec![0, 1, 2]);
        assert_eq!(select_top_k(&[0.3, 0.2], 7), vec![0, 1]);
    }

    #[test]
    fn boundary_fixtures() {
        assert_eq!(predict_boundaries(&[0.9, 0.1, 0.8], 0.5), vec![0, 2]);
        assert_eq!(predict_boundaries(&[0.1, 0.2, 0.3], 0.5), vec![0]);
        assert_eq!(predict_boundaries(&[], 0.5), vec![0]);
        assert_eq!(
            boundaries_for(&[0.1, 0.9, 0.2, 0.7], 0.5, SegLabelConvention::Last),
            vec![0, 2]
        );
    }

    #[test]
    fn render_in_document_order() {
        let doc = Document::new(
            "d",
            vec!["A.".into(), "B.".into(), "C.".into()],
            vec![0],
            None,
        )
        .unwrap();
        assert_eq!(render_summary(&doc, &[2, 0]), "A. C.");
        assert_eq!(render_summary(&doc, &[]), "");
        assert_eq!(render_summary(&doc, &[0, 1, 2]), "A. B. C.");
    }

    #[test]
    fn predict_shapes_and_json() {
        let texts: Vec<String> = (0..6)
            .map(|i| format!("sentence number {i} here"))
            .collect();
        let doc = Document::new("doc", texts, vec![0, 3], None).unwrap();
        let cfg = ModelConfig::default();
        let params = ModelParams::init(&cfg, 1).unwrap();
        let f = featurize(&doc, &cfg.features);
        let p = predict(&doc, &f, &params, SegLabelConvention::First, 5, 0.5).unwrap();
        assert_eq!(p.selected.len(), 5);
        assert_eq!(p.scores_sum.len(), 6);
        assert_eq!(p.boundaries[0], 0);
        let line = p.to_json_line();
        assert!(line.starts_with("{\"id\":\"doc\""));
        assert_eq!(Prediction::from_json_line(&line).unwrap(), p);
        assert!(predict(&doc, &f, &params, SegLabelConvention::First, 0, 0.5).is_err());
        assert!(predict(&doc, &f, &params, SegLabelConvention::First, 1, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn monotone_transform_invariance(scores in prop::collection::vec(0.0f64..1.0, 1..30), k in 1usize..10) {
            let a = select_top_k(&scores, k);
            let t: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 2.0).collect();
            prop_assert_eq!(&a, &select_top_k(&t, k));
            prop_assert_eq!(a.len(), k.min(scores.len()));
            prop_assert!(a.windows(2).all(|w| w[0] < w[1]));
        }

        #[test]
        fn boundaries_sorted_with_zero(scores in prop::collection::vec(0.0f64..1.0, 0..30), th in 0.01f64..0.99, last: bool) {
            let conv = if last { SegLabelConvention::Last } else { SegLabelConvention::First };
            let b = boundaries_for(&scores, th, conv);
            prop_assert_eq!(b[0], 0);
            prop_assert!(b.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(b.iter().all(|&i| i == 0 || i < scores.len()));
        }
    }
}
