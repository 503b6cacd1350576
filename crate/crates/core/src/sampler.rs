//! Context-window sample construction, class balancing and splitting.
//!
//! A strategy takes `before` sentences ahead of an anchor and `after`
//! sentences behind it, giving windows of `width = before + 1 + after`
//! sentences. Positive samples are windows centered on a sentence with
//! links, clipped at document edges; negative samples are runs of exactly
//! `width` consecutive sentences without links.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{eligible_anchors, Corpus, Document, SentenceLabel};
use crate::error::{Error, Result};
use crate::util::{rng_for, RngStream};
use crate::Class;

pub const DOC_START: &str = "<docstart>";
pub const DOC_END: &str = "<docend>";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SamplingStrategy {
    pub id: u32,
    /// Sentences taken before the anchor.
    pub before: usize,
    /// Sentences taken after the anchor.
    pub after: usize,
}

impl SamplingStrategy {
    pub const fn new(id: u32, before: usize, after: usize) -> Self {
        Self { id, before, after }
    }

    pub fn width(&self) -> usize {
        self.before + 1 + self.after
    }
}

/// The ten-strategy grid, ids 0..=9. Slices such as `[i-4 : i+3]` are read
/// inclusively, so strategy 7 covers eight sentences.
pub fn paper_strategies() -> Vec<SamplingStrategy> {
    const GRID: [(usize, usize); 10] = [
        (0, 0),
        (0, 2),
        (1, 1),
        (1, 2),
        (2, 2),
        (3, 2),
        (3, 3),
        (4, 3),
        (4, 4),
        (5, 4),
    ];
    GRID.iter()
        .enumerate()
        .map(|(id, &(b, a))| SamplingStrategy::new(id as u32, b, a))
        .collect()
}

/// Inclusive sentence range within one document, plus edge marks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub end: usize,
    pub start_mark: bool,
    pub end_mark: bool,
}

impl Window {
    /// Window around `anchor`, clipped to `[0, len-1]`. A clipped side gets
    /// a boundary mark.
    pub fn around(anchor: usize, s: &SamplingStrategy, len: usize) -> Window {
        debug_assert!(anchor < len);
        let start_mark = anchor < s.before;
        let end_mark = anchor + s.after > len - 1;
        Window {
            start: anchor.saturating_sub(s.before),
            end: (anchor + s.after).min(len - 1),
            start_mark,
            end_mark,
        }
    }

    pub fn width(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn contains(&self, i: usize) -> bool {
        self.start <= i && i <= self.end
    }

    /// Tokens of the window's sentences in order, with boundary marks.
    pub fn tokens<'a>(&self, doc: &'a Document) -> Vec<&'a str> {
        let mut out = Vec::new();
        if self.start_mark {
            out.push(DOC_START);
        }
        for s in &doc.sentences[self.start..=self.end] {
            out.extend(s.tokens.iter().map(String::as_str));
        }
        if self.end_mark {
            out.push(DOC_END);
        }
        out
    }

    pub fn word_count(&self, doc: &Document) -> usize {
        doc.sentences[self.start..=self.end]
            .iter()
            .map(|s| s.word_count)
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub strategy_id: u32,
    /// Position of the document in its corpus.
    pub doc: usize,
    pub doc_id: String,
    pub anchor: usize,
    pub label: Class,
    pub window: Window,
}

impl Sample {
    pub fn tokens<'a>(&self, corpus: &'a Corpus) -> Vec<&'a str> {
        self.window.tokens(&corpus.documents[self.doc])
    }

    pub fn word_count(&self, corpus: &Corpus) -> usize {
        self.window.word_count(&corpus.documents[self.doc])
    }
}

/// One sample per eligible anchor that has links.
pub fn positive_samples(
    doc: &Document,
    doc_pos: usize,
    s: &SamplingStrategy,
    anchors: &[usize],
) -> Vec<Sample> {
    anchors
        .iter()
        .filter(|&&i| doc.sentences[i].label == SentenceLabel::WithLinks)
        .map(|&i| Sample {
            strategy_id: s.id,
            doc: doc_pos,
            doc_id: doc.doc_id.clone(),
            anchor: i,
            label: Class::Positive,
            window: Window::around(i, s, doc.len()),
        })
        .collect()
}

pub fn negative_samples(
    doc: &Document,
    doc_pos: usize,
    s: &SamplingStrategy,
    anchors: &[usize],
) -> Vec<Sample> {
    negative_samples_with_stride(doc, doc_pos, s, anchors, 1)
}

/// Sliding windows of `s.width()` sentences over every maximal run of
/// sentences without links. A window is kept only when it contains an
/// eligible anchor; its anchor is the first such sentence.
pub fn negative_samples_with_stride(
    doc: &Document,
    doc_pos: usize,
    s: &SamplingStrategy,
    anchors: &[usize],
    stride: usize,
) -> Vec<Sample> {
    assert!(stride >= 1, "stride must be positive");
    let k = s.width();
    let mut eligible = vec![false; doc.len()];
    for &i in anchors {
        eligible[i] = true;
    }
    let mut out = Vec::new();
    let mut i = 0;
    while i < doc.len() {
        if doc.sentences[i].label.has_links() {
            i += 1;
            continue;
        }
        let run_start = i;
        while i < doc.len() && !doc.sentences[i].label.has_links() {
            i += 1;
        }
        let run_len = i - run_start;
        if run_len < k {
            continue;
        }
        let mut start = run_start;
        while start + k <= run_start + run_len {
            let end = start + k - 1;
            if let Some(anchor) = (start..=end).find(|&j| eligible[j]) {
                out.push(Sample {
                    strategy_id: s.id,
                    doc: doc_pos,
                    doc_id: doc.doc_id.clone(),
                    anchor,
                    label: Class::Negative,
                    window: Window {
                        start,
                        end,
                        start_mark: false,
                        end_mark: false,
                    },
                });
            }
            start += stride;
        }
    }
    out
}

#[derive(Clone, Debug, Default)]
pub struct SampleSet {
    pub positives: Vec<Sample>,
    pub negatives: Vec<Sample>,
}

impl SampleSet {
    pub fn into_vec(self) -> Vec<Sample> {
        let mut v = self.positives;
        v.extend(self.negatives);
        v
    }
}

/// Builds every sample of one strategy across the corpus, documents in order.
pub fn build_samples(
    corpus: &Corpus,
    s: &SamplingStrategy,
    min_words: usize,
    stride: usize,
) -> SampleSet {
    let per_doc: Vec<(Vec<Sample>, Vec<Sample>)> = corpus
        .documents
        .par_iter()
        .enumerate()
        .map(|(pos, doc)| {
            let anchors = eligible_anchors(doc, min_words);
            (
                positive_samples(doc, pos, s, &anchors),
                negative_samples_with_stride(doc, pos, s, &anchors, stride),
            )
        })
        .collect();
    let mut set = SampleSet::default();
    for (p, n) in per_doc {
        set.positives.extend(p);
        set.negatives.extend(n);
    }
    set
}

/// Randomly drops majority-class samples until both classes have the same
/// count. Survivors keep their input order.
pub fn undersample(samples: Vec<Sample>, seed: u64) -> Result<Vec<Sample>> {
    let pos: Vec<usize> = (0..samples.len())
        .filter(|&i| samples[i].label == Class::Positive)
        .collect();
    let neg: Vec<usize> = (0..samples.len())
        .filter(|&i| samples[i].label == Class::Negative)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Data(
            "cannot balance degenerate class distribution".into(),
        ));
    }
    let (mut majority, minority) = if pos.len() > neg.len() {
        (pos, neg)
    } else {
        (neg, pos)
    };
    let mut rng = rng_for(seed, RngStream::Undersample);
    majority.shuffle(&mut rng);
    majority.truncate(minority.len());

    let mut keep = vec![false; samples.len()];
    for &i in majority.iter().chain(&minority) {
        keep[i] = true;
    }
    Ok(samples
        .into_iter()
        .zip(keep)
        .filter_map(|(s, k)| k.then_some(s))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitUnit {
    PerSample,
    PerDocument,
}

impl std::str::FromStr for SplitUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_sample" | "sample" => Ok(SplitUnit::PerSample),
            "per_document" | "document" => Ok(SplitUnit::PerDocument),
            other => Err(Error::Config(format!("unknown split unit `{other}`"))),
        }
    }
}

impl SplitUnit {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitUnit::PerSample => "per_sample",
            SplitUnit::PerDocument => "per_document",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub test_size: f64,
    pub seed: u64,
    pub unit: SplitUnit,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            test_size: 0.33,
            seed: 0,
            unit: SplitUnit::PerSample,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub train_positive: usize,
    pub train_negative: usize,
    pub test_positive: usize,
    pub test_negative: usize,
    /// Overlapping windows can share sentences across the split.
    pub leakage_warning: bool,
}

#[derive(Clone, Debug)]
pub struct Split {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub report: SplitReport,
}

fn class_counts(samples: &[Sample]) -> (usize, usize) {
    let pos = samples.iter().filter(|s| s.label == Class::Positive).count();
    (pos, samples.len() - pos)
}

/// Seeded shuffle-and-cut. The test side receives `round(test_size * N)`
/// samples (or documents, in per-document mode).
pub fn split_train_test(samples: Vec<Sample>, cfg: &SplitConfig) -> Result<Split> {
    if !(cfg.test_size > 0.0 && cfg.test_size < 1.0) {
        return Err(Error::Config(format!(
            "test_size must be in (0, 1), got {}",
            cfg.test_size
        )));
    }
    if samples.len() < 2 {
        return Err(Error::Data("need at least two samples to split".into()));
    }
    let mut rng = rng_for(cfg.seed, RngStream::Split);
    let in_test: Vec<bool> = match cfg.unit {
        SplitUnit::PerSample => {
            let n = samples.len();
            let n_test = (cfg.test_size * n as f64).round() as usize;
            check_sides(n_test, n, "samples")?;
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut flags = vec![false; n];
            for &i in &order[..n_test] {
                flags[i] = true;
            }
            flags
        }
        SplitUnit::PerDocument => {
            let docs: Vec<usize> = samples
                .iter()
                .map(|s| s.doc)
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let n_test = (cfg.test_size * docs.len() as f64).round() as usize;
            check_sides(n_test, docs.len(), "documents")?;
            let mut order = docs;
            order.shuffle(&mut rng);
            let test_docs: BTreeSet<usize> = order[..n_test].iter().copied().collect();
            samples.iter().map(|s| test_docs.contains(&s.doc)).collect()
        }
    };

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (s, t) in samples.into_iter().zip(in_test) {
        if t {
            test.push(s);
        } else {
            train.push(s);
        }
    }
    let (train_positive, train_negative) = class_counts(&train);
    let (test_positive, test_negative) = class_counts(&test);
    let report = SplitReport {
        train_positive,
        train_negative,
        test_positive,
        test_negative,
        leakage_warning: cfg.unit == SplitUnit::PerSample,
    };
    Ok(Split { train, test, report })
}

fn check_sides(n_test: usize, n: usize, what: &str) -> Result<()> {
    if n_test == 0 || n_test >= n {
        return Err(Error::Data(format!(
            "split of {n} {what} leaves an empty side ({n_test} in test)"
        )));
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::corpus::SentenceRecord;

    /// Document with one 31-word sentence per label flag.
    pub(crate) fn toy_doc(id: &str, links: &[bool]) -> Document {
        Document {
            doc_id: id.into(),
            sentences: links
                .iter()
                .enumerate()
                .map(|(i, &l)| SentenceRecord {
                    index: i,
                    raw_text: String::new(),
                    tokens: vec![format!("s{i}")],
                    label: if l {
                        SentenceLabel::WithLinks
                    } else {
                        SentenceLabel::WithoutLinks
                    },
                    citation_count: l as usize,
                    word_count: 31,
                })
                .collect(),
            source_path: "mem".into(),
        }
    }

    fn windows(samples: &[Sample]) -> Vec<(usize, usize)> {
        samples.iter().map(|s| (s.window.start, s.window.end)).collect()
    }

    #[test]
    fn grid_matches_table() {
        let g = paper_strategies();
        assert_eq!(g.len(), 10);
        let widths: Vec<usize> = g.iter().map(|s| s.width()).collect();
        assert_eq!(widths, [1, 3, 3, 4, 5, 6, 7, 8, 9, 10]);
        assert_eq!((g[0].before, g[0].after), (0, 0));
        assert_eq!((g[7].before, g[7].after), (4, 3));
        assert_eq!((g[9].before, g[9].after), (5, 4));
    }

    #[test]
    fn positive_window_interior() {
        let mut links = vec![false; 20];
        links[10] = true;
        let doc = toy_doc("d", &links);
        let s = SamplingStrategy::new(3, 1, 2);
        let out = positive_samples(&doc, 0, &s, &[10]);
        assert_eq!(windows(&out), [(9, 12)]);
        assert!(!out[0].window.start_mark && !out[0].window.end_mark);
    }

    #[test]
    fn positive_window_clipped_at_start() {
        let doc = toy_doc("d", &[true, false, false, false, false]);
        let s = SamplingStrategy::new(0, 2, 1);
        let out = positive_samples(&doc, 0, &s, &[0]);
        assert_eq!(windows(&out), [(0, 1)]);
        let corpus = Corpus { documents: vec![doc] };
        assert_eq!(out[0].tokens(&corpus), [DOC_START, "s0", "s1"]);
    }

    #[test]
    fn positive_windows_hand_enumerated() {
        let doc = toy_doc("d", &[false, true, false, false, true, false]);
        let s = SamplingStrategy::new(2, 1, 1);
        let anchors: Vec<usize> = (0..6).collect();
        let out = positive_samples(&doc, 0, &s, &anchors);
        assert_eq!(windows(&out), [(0, 2), (3, 5)]);
    }

    #[test]
    fn negative_sliding_windows() {
        let doc = toy_doc("d", &[false; 5]);
        let s = SamplingStrategy::new(1, 0, 2);
        let out = negative_samples(&doc, 0, &s, &[0, 1, 2, 3, 4]);
        assert_eq!(windows(&out), [(0, 2), (1, 3), (2, 4)]);

        let doc = toy_doc("d", &[false, false, true]);
        assert!(negative_samples(&doc, 0, &s, &[0, 1]).is_empty());
    }

    #[test]
    fn negative_requires_eligible_member() {
        let doc = toy_doc("d", &[false; 5]);
        let s = SamplingStrategy::new(2, 1, 1);
        let out = negative_samples(&doc, 0, &s, &[3]);
        assert_eq!(windows(&out), [(1, 3), (2, 4)]);
        assert!(out.iter().all(|x| x.anchor == 3));
    }

    #[test]
    fn stride_two() {
        let doc = toy_doc("d", &[false; 7]);
        let s = SamplingStrategy::new(1, 0, 2);
        let all: Vec<usize> = (0..7).collect();
        let out = negative_samples_with_stride(&doc, 0, &s, &all, 2);
        assert_eq!(windows(&out), [(0, 2), (2, 4), (4, 6)]);
    }

    fn labeled(n_pos: usize, n_neg: usize) -> Vec<Sample> {
        (0..n_pos + n_neg)
            .map(|i| Sample {
                strategy_id: 0,
                doc: i / 10,
                doc_id: format!("d{}", i / 10),
                anchor: i,
                label: if i < n_pos { Class::Positive } else { Class::Negative },
                window: Window {
                    start: i,
                    end: i,
                    start_mark: false,
                    end_mark: false,
                },
            })
            .collect()
    }

    #[test]
    fn undersample_balances() {
        let out = undersample(labeled(40, 100), 7).unwrap();
        assert_eq!(class_counts(&out), (40, 40));
        let out = undersample(labeled(10, 10), 7).unwrap();
        assert_eq!(out, labeled(10, 10));
    }

    #[test]
    fn undersample_is_deterministic() {
        let a = undersample(labeled(40, 100), 3).unwrap();
        let b = undersample(labeled(40, 100), 3).unwrap();
        assert_eq!(a, b);
        let c = undersample(labeled(40, 100), 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn undersample_degenerate() {
        let err = undersample(labeled(0, 5), 1).unwrap_err();
        assert!(err.to_string().contains("cannot balance degenerate class distribution"));
    }

    #[test]
    fn split_sizes() {
        let cfg = SplitConfig::default();
        let s = split_train_test(labeled(50, 50), &cfg).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (67, 33));
        assert!(s.report.leakage_warning);
        let s = split_train_test(labeled(2, 1), &cfg).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (2, 1));
    }

    #[test]
    fn split_per_document_partitions() {
        let cfg = SplitConfig {
            test_size: 0.3,
            seed: 11,
            unit: SplitUnit::PerDocument,
        };
        let s = split_train_test(labeled(50, 50), &cfg).unwrap();
        assert_eq!(s.test.len(), 30);
        let train_docs: BTreeSet<usize> = s.train.iter().map(|x| x.doc).collect();
        let test_docs: BTreeSet<usize> = s.test.iter().map(|x| x.doc).collect();
        assert_eq!(test_docs.len(), 3);
        assert!(train_docs.is_disjoint(&test_docs));
        assert!(!s.report.leakage_warning);
    }

    #[test]
    fn split_empty_side_is_error() {
        let cfg = SplitConfig {
            test_size: 0.1,
            ..Default::default()
        };
        assert!(split_train_test(labeled(1, 2), &cfg).is_err());
        let bad = SplitConfig {
            test_size: 1.0,
            ..Default::default()
        };
        assert!(matches!(
            split_train_test(labeled(5, 5), &bad),
            Err(Error::Config(_))
        ));
    }
}
