//! Document data model, JSON Lines ingestion and synthetic corpora.
//!
//! Documents arrive pre-split into sentences. Sections are stored as the
//! sorted set of sentence indices where a section begins; index 0 is always
//! a section start.

use std::fs;
use std::io::Write;
use std::ops::RangeInclusive;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowercase, split on whitespace and strip surrounding punctuation.
///
/// A word made only of punctuation is kept as-is so that non-empty text
/// always yields at least one token.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|word| {
            let lower = word.to_lowercase();
            let stripped = lower.trim_matches(|c: char| !c.is_alphanumeric());
            if stripped.is_empty() {
                lower
            } else {
                stripped.to_string()
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sentence {
    pub index: usize,
    pub text: String,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    sentences: Vec<Sentence>,
    section_starts: Vec<usize>,
    pub reference_summary: Option<String>,
}

impl Document {
    /// Builds a validated document. `section_starts` may be unsorted but must
    /// contain 0 and stay inside `[0, N)`.
    pub fn new(
        id: impl Into<String>,
        sentences: Vec<String>,
        mut section_starts: Vec<usize>,
        reference_summary: Option<String>,
    ) -> Result<Self> {
        let id = id.into();
        let invalid = |message: String| Error::InvalidDocument {
            doc_id: id.clone(),
            message,
        };
        if sentences.is_empty() {
            return Err(invalid("document has no sentences".into()));
        }
        let n = sentences.len();
        section_starts.sort_unstable();
        section_starts.dedup();
        if let Some(&bad) = section_starts.iter().find(|&&b| b >= n) {
            return Err(invalid(format!(
                "boundary out of range: section start {bad} with {n} sentences"
            )));
        }
        if section_starts.first() != Some(&0) {
            return Err(invalid("section_starts must contain 0".into()));
        }
        let mut built = Vec::with_capacity(n);
        for (index, text) in sentences.into_iter().enumerate() {
            let tokens = tokenize(&text);
            if tokens.is_empty() {
                return Err(invalid(format!("sentence {index} is empty")));
            }
            built.push(Sentence {
                index,
                text,
                tokens,
            });
        }
        Ok(Document {
            id,
            sentences: built,
            section_starts,
            reference_summary,
        })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn section_starts(&self) -> &[usize] {
        &self.section_starts
    }

    /// Half-open `[start, end)` sentence ranges of every section.
    pub fn sections(&self) -> Vec<(usize, usize)> {
        section_spans(&self.section_starts, self.len())
    }

    pub fn reference_tokens(&self) -> Option<Vec<String>> {
        self.reference_summary.as_deref().map(tokenize)
    }

    /// Tokens of the given sentences concatenated in document order.
    pub fn tokens_of(&self, indices: &[usize]) -> Vec<String> {
        let mut sorted = indices.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        sorted
            .iter()
            .flat_map(|&i| self.sentences[i].tokens.iter().cloned())
            .collect()
    }
}

pub(crate) fn section_spans(starts: &[usize], n: usize) -> Vec<(usize, usize)> {
    starts
        .iter()
        .enumerate()
        .map(|(k, &s)| (s, starts.get(k + 1).copied().unwrap_or(n)))
        .collect()
}

/// Per-sentence binary labels as stored in the `labels` field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labels {
    pub sum: Vec<u8>,
    pub seg: Vec<u8>,
}

/// One line of a corpus file: a document plus optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusRecord {
    pub document: Document,
    pub labels: Option<Labels>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    id: String,
    sentences: Vec<String>,
    section_starts: Vec<usize>,
    #[serde(default)]
    reference_summary: Option<String>,
    #[serde(default)]
    labels: Option<Labels>,
}

impl CorpusRecord {
    fn from_raw(raw: RawRecord) -> Result<Self> {
        let n = raw.sentences.len();
        if let Some(labels) = &raw.labels {
            for (name, v) in [("sum", &labels.sum), ("seg", &labels.seg)] {
                if v.len() != n {
                    return Err(Error::InvalidDocument {
                        doc_id: raw.id.clone(),
                        message: format!("labels.{name} has length {}, expected {n}", v.len()),
                    });
                }
                if v.iter().any(|&x| x > 1) {
                    return Err(Error::InvalidDocument {
                        doc_id: raw.id.clone(),
                        message: format!("labels.{name} must be 0/1"),
                    });
                }
            }
        }
        let document = Document::new(
            raw.id,
            raw.sentences,
            raw.section_starts,
            raw.reference_summary,
        )?;
        Ok(CorpusRecord {
            document,
            labels: raw.labels,
        })
    }

    fn to_raw(&self) -> RawRecord {
        let doc = &self.document;
        RawRecord {
            id: doc.id.clone(),
            sentences: doc.sentences.iter().map(|s| s.text.clone()).collect(),
            section_starts: doc.section_starts.clone(),
            reference_summary: doc.reference_summary.clone(),
            labels: self.labels.clone(),
        }
    }

    /// Serializes the record as a single JSON line (no trailing newline).
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&self.to_raw()).expect("record serialization cannot fail")
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| Error::MalformedLine {
            line: 0,
            message: e.to_string(),
        })?;
        Self::from_raw(raw)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParsedCorpus {
    pub records: Vec<CorpusRecord>,
    /// Records dropped in lenient mode, with the reason for each.
    pub skipped: Vec<(usize, String)>,
}

impl ParsedCorpus {
    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.records.iter().map(|r| &r.document)
    }
}

/// Parses a JSON Lines corpus held in memory. Line numbers are 1-based.
pub fn parse_corpus_str(text: &str, strict: bool) -> Result<ParsedCorpus> {
    let mut out = ParsedCorpus::default();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<RawRecord>(line)
            .map_err(|e| Error::MalformedLine {
                line: line_no,
                message: e.to_string(),
            })
            .and_then(CorpusRecord::from_raw);
        match parsed {
            Ok(record) => out.records.push(record),
            Err(e) if strict => {
                return Err(match e {
                    Error::InvalidDocument { doc_id, message } => Error::MalformedLine {
                        line: line_no,
                        message: format!("document {doc_id}: {message}"),
                    },
                    other => other,
                })
            }
            Err(e) => out.skipped.push((line_no, e.to_string())),
        }
    }
    Ok(out)
}

pub fn parse_corpus(path: impl AsRef<Path>, strict: bool) -> Result<ParsedCorpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus_str(&text, strict)
}

pub fn write_corpus(path: impl AsRef<Path>, records: &[CorpusRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for r in records {
        buf.extend_from_slice(r.to_json_line().as_bytes());
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Deterministic train/val/test partition. Validation and test sizes are
/// `floor(n * fraction)`; the remainder goes to train. Each part keeps the
/// input order.
pub fn split_corpus<T: Clone>(
    items: &[T],
    fractions: (f64, f64, f64),
    rng_seed: u64,
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let (ftr, fva, fte) = fractions;
    if [ftr, fva, fte].iter().any(|f| !(*f > 0.0)) || ((ftr + fva + fte) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions must be positive and sum to 1, got ({ftr}, {fva}, {fte})"
        )));
    }
    let n = items.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} documents into three parts"
        )));
    }
    let n_val = (n as f64 * fva).floor() as usize;
    let n_test = (n as f64 * fte).floor() as usize;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    let mut val_idx = order[..n_val].to_vec();
    let mut test_idx = order[n_val..n_val + n_test].to_vec();
    let mut train_idx = order[n_val + n_test..].to_vec();
    for v in [&mut train_idx, &mut val_idx, &mut test_idx] {
        v.sort_unstable();
    }
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<T>>();
    Ok((pick(&train_idx), pick(&val_idx), pick(&test_idx)))
}

/// Discourse cues that open sections in synthetic documents. The default
/// featurizer lexicon uses the same list.
pub const DEFAULT_CUES: &[&str] = &[
    "so next we need to",
    "moving on",
    "in this section",
    "now let us turn to",
    "finally",
    "to begin with",
    "next we consider",
    "turning to",
];

/// Parameters of the planted synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_documents: usize,
    pub sentences_per_section: RangeInclusive<usize>,
    pub sections_per_document: RangeInclusive<usize>,
    pub vocabulary_size: usize,
    /// Probability that a planted salient sentence is first or last in its section.
    pub salience_boundary_bias: f64,
    /// Probability that a section also carries a near-copy of its salient
    /// sentence at a non-boundary position.
    pub duplicate_rate: f64,
    pub rng_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_documents: 100,
            sentences_per_section: 4..=8,
            sections_per_document: 3..=5,
            vocabulary_size: 600,
            salience_boundary_bias: 0.9,
            duplicate_rate: 0.0,
            rng_seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.sentences_per_section.is_empty() || *self.sentences_per_section.start() == 0 {
            return bad("sentences_per_section must be a non-empty range of positive counts");
        }
        if self.sections_per_document.is_empty() || *self.sections_per_document.start() == 0 {
            return bad("sections_per_document must be a non-empty range of positive counts");
        }
        if !(0.0..=1.0).contains(&self.salience_boundary_bias) {
            return bad("salience_boundary_bias must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.duplicate_rate) {
            return bad("duplicate_rate must lie in [0, 1]");
        }
        if self.vocabulary_size < 2 * TOPIC_SIZE {
            return bad("vocabulary_size too small");
        }
        Ok(())
    }
}

const TOPIC_SIZE: usize = 12;
const FILLER_FRACTION: f64 = 0.3;
const CUE_AT_START: f64 = 0.9;
const CUE_ELSEWHERE: f64 = 0.02;

const SYLLABLES: &[&str] = &[
    "ba", "ko", "ri", "tu", "me", "sa", "lo", "ni", "da", "ve", "pi", "gu", "ze", "fo", "ha", "ju",
    "ne", "mo", "ti", "ra",
];

fn pseudo_word(mut index: usize) -> String {
    let base = SYLLABLES.len();
    let mut word = String::new();
    for _ in 0..3 {
        word.push_str(SYLLABLES[index % base]);
        index /= base;
    }
    while index > 0 {
        word.push_str(SYLLABLES[index % base]);
        index /= base;
    }
    word
}

struct Lexicon {
    filler: Vec<String>,
    topics: Vec<Vec<String>>,
}

impl Lexicon {
    fn new(vocabulary_size: usize) -> Self {
        let words: Vec<String> = (0..vocabulary_size).map(pseudo_word).collect();
        let n_filler = ((vocabulary_size as f64) * FILLER_FRACTION) as usize;
        let filler = words[..n_filler].to_vec();
        let topics = words[n_filler..]
            .chunks_exact(TOPIC_SIZE)
            .map(|c| c.to_vec())
            .collect();
        Lexicon { filler, topics }
    }
}

fn sentence_text(tokens: &[String]) -> String {
    let mut text = tokens.join(" ");
    if let Some(first) = text.get(0..1) {
        let upper = first.to_uppercase();
        text.replace_range(0..1, &upper);
    }
    text.push('.');
    text
}

fn draw_sentence(
    rng: &mut ChaCha8Rng,
    lex: &Lexicon,
    topic: &[String],
    len: RangeInclusive<usize>,
    topic_rate: f64,
) -> Vec<String> {
    let n = rng.gen_range(len);
    (0..n)
        .map(|_| {
            if rng.gen_bool(topic_rate) {
                topic.choose(rng).unwrap().clone()
            } else {
                lex.filler.choose(rng).unwrap().clone()
            }
        })
        .collect()
}

/// Generates documents with planted salient sentences. Each section holds
/// one salient sentence, dense in the section's topic words; the reference
/// summary concatenates the salient sentences. Labels mark the planted
/// sentences and the first sentence of every section.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Vec<CorpusRecord>> {
    config.validate()?;
    let lex = Lexicon::new(config.vocabulary_size);
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut out = Vec::with_capacity(config.n_documents);
    for d in 0..config.n_documents {
        let n_sections = rng.gen_range(config.sections_per_document.clone());
        let mut topic_ids: Vec<usize> = (0..lex.topics.len()).collect();
        topic_ids.shuffle(&mut rng);

        let mut sentences = Vec::new();
        let mut starts = Vec::new();
        let mut y_sum = Vec::new();
        let mut salient_texts = Vec::new();
        for s in 0..n_sections {
            let topic = &lex.topics[topic_ids[s % topic_ids.len()]];
            let len = rng.gen_range(config.sentences_per_section.clone());
            let salient_pos = if rng.gen_bool(config.salience_boundary_bias) {
                if rng.gen_bool(0.5) {
                    0
                } else {
                    len - 1
                }
            } else {
                rng.gen_range(0..len)
            };
            let interior: Vec<usize> = (0..len)
                .filter(|&p| p != salient_pos && p != 0 && p + 1 != len)
                .collect();
            let dup_pos = if !interior.is_empty() && rng.gen_bool(config.duplicate_rate) {
                interior.choose(&mut rng).copied()
            } else {
                None
            };

            let salient = draw_sentence(&mut rng, &lex, topic, 10..=16, 0.6);
            starts.push(sentences.len());
            for p in 0..len {
                let mut tokens = if p == salient_pos {
                    salient.clone()
                } else if Some(p) == dup_pos {
                    let mut copy = salient.clone();
                    let j = rng.gen_range(0..copy.len());
                    copy[j] = lex.filler.choose(&mut rng).unwrap().clone();
                    copy
                } else {
                    draw_sentence(&mut rng, &lex, topic, 8..=14, 0.25)
                };
                let cue_rate = if p == 0 { CUE_AT_START } else { CUE_ELSEWHERE };
                if rng.gen_bool(cue_rate) {
                    let cue = DEFAULT_CUES.choose(&mut rng).unwrap();
                    let mut prefixed: Vec<String> = cue.split(' ').map(str::to_string).collect();
                    prefixed.append(&mut tokens);
                    tokens = prefixed;
                }
                let text = sentence_text(&tokens);
                if p == salient_pos {
                    salient_texts.push(text.clone());
                }
                y_sum.push(u8::from(p == salient_pos));
                sentences.push(text);
            }
        }
        let n = sentences.len();
        let mut y_seg = vec![0u8; n];
        for &b in &starts {
            y_seg[b] = 1;
        }
        let document = Document::new(
            format!("synth-{:05}", d),
            sentences,
            starts,
            Some(salient_texts.join(" ")),
        )?;
        out.push(CorpusRecord {
            document,
            labels: Some(Labels {
                sum: y_sum,
                seg: y_seg,
            }),
        });
    }
    Ok(out)
}
