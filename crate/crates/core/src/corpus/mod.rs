//! Corpus ingestion: jsonlines articles to labeled, tokenized sentences.
//!
//! Each input line is one article holding a list of pre-split sentence
//! strings. Every sentence is cleaned, tokenized, labeled by the presence of
//! the citation marker, stripped of that marker and finally masked.

mod mask;
mod text;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::util::write_atomic;

pub use mask::{
    build_masker, mask_entities, EntityMasker, MaskingMode, MathNormalizer, NoMasking, TokenMap,
    DEFAULT_MATH_PATTERN, MATH_TOKEN,
};
pub use text::{clean_text, is_punctuation, tokenize, word_count};

pub const CITATION_MARKER: &str = "@xcite";
pub const SENTENCE_SCHEMA: &str = "linkgap/sentence-record@1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentenceLabel {
    WithLinks,
    WithoutLinks,
}

impl SentenceLabel {
    pub fn has_links(self) -> bool {
        self == SentenceLabel::WithLinks
    }

    pub fn class(self) -> crate::Class {
        match self {
            SentenceLabel::WithLinks => crate::Class::Positive,
            SentenceLabel::WithoutLinks => crate::Class::Negative,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub index: usize,
    /// Cleaned text, still carrying citation markers.
    pub raw_text: String,
    /// Tokens after marker removal and masking.
    pub tokens: Vec<String>,
    pub label: SentenceLabel,
    pub citation_count: usize,
    pub word_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub sentences: Vec<SentenceRecord>,
    pub source_path: String,
}

impl Document {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub documents: Vec<Document>,
}

impl Corpus {
    pub fn sentence_count(&self) -> usize {
        self.documents.iter().map(Document::len).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub sentence_field: String,
    pub id_field: String,
    pub citation_marker: String,
    pub math_marker_pattern: String,
    /// Anchors need strictly more words than this.
    pub min_words: usize,
    pub masking_mode: MaskingMode,
    pub custom_map: Option<BTreeMap<String, String>>,
    /// Regexes whose matches are removed from sentence text before cleaning.
    pub drop_patterns: Vec<String>,
    /// Drop every sentence at or under `min_words` instead of only refusing
    /// it as an anchor.
    pub filter_all_sentences: bool,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            sentence_field: "article_text".into(),
            id_field: "article_id".into(),
            citation_marker: CITATION_MARKER.into(),
            math_marker_pattern: DEFAULT_MATH_PATTERN.into(),
            min_words: 30,
            masking_mode: MaskingMode::MathNormalize,
            custom_map: None,
            drop_patterns: Vec::new(),
            filter_all_sentences: false,
        }
    }
}

impl IngestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.citation_marker.is_empty() {
            return Err(Error::Config("citation marker must be non-empty".into()));
        }
        if self.sentence_field.is_empty() {
            return Err(Error::Config("sentence field must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub lines_read: usize,
    pub documents: usize,
    pub skipped_lines: usize,
    pub sentences: usize,
    pub with_links_sentences: usize,
    pub eligible_anchors: usize,
    pub positive_anchors: usize,
}

impl IngestReport {
    pub fn positive_anchor_fraction(&self) -> f64 {
        if self.eligible_anchors == 0 {
            0.0
        } else {
            self.positive_anchors as f64 / self.eligible_anchors as f64
        }
    }
}

/// Returns (label, tokens without markers, marker count). A sentence with
/// several markers is still a single record.
pub fn label_and_strip(tokens: Vec<String>, marker: &str) -> (SentenceLabel, Vec<String>, usize) {
    let before = tokens.len();
    let stripped: Vec<String> = tokens.into_iter().filter(|t| t != marker).collect();
    let count = before - stripped.len();
    let label = if count >= 1 {
        SentenceLabel::WithLinks
    } else {
        SentenceLabel::WithoutLinks
    };
    (label, stripped, count)
}

/// Sentence indices with strictly more than `min_words` words.
pub fn eligible_anchors(doc: &Document, min_words: usize) -> Vec<usize> {
    doc.sentences
        .iter()
        .filter(|s| s.word_count > min_words)
        .map(|s| s.index)
        .collect()
}

/// Compiled per-ingest state shared across lines.
pub struct SentenceProcessor {
    marker: String,
    min_words: usize,
    filter_all: bool,
    drops: Vec<Regex>,
    masker: Box<dyn EntityMasker>,
}

impl SentenceProcessor {
    pub fn new(cfg: &IngestConfig) -> Result<Self> {
        cfg.validate()?;
        let drops = cfg
            .drop_patterns
            .iter()
            .map(|p| Regex::new(p).map_err(|e| Error::Config(format!("bad drop pattern: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            marker: cfg.citation_marker.clone(),
            min_words: cfg.min_words,
            filter_all: cfg.filter_all_sentences,
            drops,
            masker: build_masker(
                cfg.masking_mode,
                &cfg.math_marker_pattern,
                cfg.custom_map.as_ref(),
            )?,
        })
    }

    pub fn sentence(&self, index: usize, raw: &str) -> SentenceRecord {
        let mut text = raw.to_string();
        for re in &self.drops {
            text = re.replace_all(&text, " ").into_owned();
        }
        let cleaned = clean_text(&text);
        let (label, stripped, citation_count) = label_and_strip(tokenize(&cleaned), &self.marker);
        let tokens = mask_entities(stripped, self.masker.as_ref());
        let word_count = word_count(&tokens);
        SentenceRecord {
            index,
            raw_text: cleaned,
            tokens,
            label,
            citation_count,
            word_count,
        }
    }

    pub fn document<S: AsRef<str>>(&self, doc_id: String, source_path: String, raw: &[S]) -> Document {
        let mut sentences: Vec<SentenceRecord> = Vec::with_capacity(raw.len());
        for s in raw {
            let rec = self.sentence(sentences.len(), s.as_ref());
            if self.filter_all && rec.word_count <= self.min_words {
                continue;
            }
            sentences.push(rec);
        }
        Document {
            doc_id,
            sentences,
            source_path,
        }
    }
}

enum LineOutcome {
    Blank,
    Skipped(String),
    Parsed(String, Vec<String>),
}

fn parse_line(line_no: usize, bytes: &[u8], cfg: &IngestConfig) -> LineOutcome {
    let text = match std::str::from_utf8(bytes) {
        Ok(t) => t.trim(),
        Err(_) => return LineOutcome::Skipped("invalid UTF-8".into()),
    };
    if text.is_empty() {
        return LineOutcome::Blank;
    }
    let value: Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) => return LineOutcome::Skipped(format!("invalid json: {e}")),
    };
    let Some(obj) = value.as_object() else {
        return LineOutcome::Skipped("not a json object".into());
    };
    let Some(list) = obj.get(&cfg.sentence_field).and_then(Value::as_array) else {
        return LineOutcome::Skipped(format!("missing list field `{}`", cfg.sentence_field));
    };
    let mut sentences = Vec::with_capacity(list.len());
    for item in list {
        match item.as_str() {
            Some(s) => sentences.push(s.to_string()),
            None => {
                return LineOutcome::Skipped(format!(
                    "field `{}` holds a non-string item",
                    cfg.sentence_field
                ))
            }
        }
    }
    let doc_id = match obj.get(&cfg.id_field) {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => format!("line-{line_no}"),
    };
    LineOutcome::Parsed(doc_id, sentences)
}

/// Reads a jsonlines article collection. Malformed lines are skipped and
/// counted; an empty result is an error.
pub fn ingest_jsonlines(path: &Path, cfg: &IngestConfig) -> Result<(Corpus, IngestReport)> {
    let processor = SentenceProcessor::new(cfg)?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);

    let mut lines = Vec::new();
    let mut buf = Vec::new();
    loop {
        buf.clear();
        let n = reader
            .read_until(b'\n', &mut buf)
            .map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        lines.push(buf.clone());
    }

    let source = path.display().to_string();
    let outcomes: Vec<(usize, LineOutcome)> = lines
        .par_iter()
        .enumerate()
        .map(|(i, bytes)| (i + 1, parse_line(i + 1, bytes, cfg)))
        .collect();

    let mut report = IngestReport::default();
    let mut parsed = Vec::new();
    for (line_no, outcome) in outcomes {
        match outcome {
            LineOutcome::Blank => {}
            LineOutcome::Skipped(why) => {
                report.lines_read += 1;
                report.skipped_lines += 1;
                log::warn!("{source}:{line_no}: skipped line: {why}");
            }
            LineOutcome::Parsed(id, sentences) => {
                report.lines_read += 1;
                parsed.push((id, sentences));
            }
        }
    }

    let documents: Vec<Document> = parsed
        .par_iter()
        .map(|(id, sentences)| processor.document(id.clone(), source.clone(), sentences))
        .collect();
    if documents.is_empty() {
        return Err(Error::Data(format!("empty corpus: no valid documents in {source}")));
    }

    let corpus = Corpus { documents };
    fill_stats(&corpus, cfg.min_words, &mut report);
    Ok((corpus, report))
}

pub fn corpus_stats(corpus: &Corpus, min_words: usize) -> IngestReport {
    let mut report = IngestReport {
        lines_read: corpus.documents.len(),
        ..Default::default()
    };
    fill_stats(corpus, min_words, &mut report);
    report
}

fn fill_stats(corpus: &Corpus, min_words: usize, report: &mut IngestReport) {
    report.documents = corpus.documents.len();
    report.sentences = corpus.sentence_count();
    report.with_links_sentences = corpus
        .documents
        .iter()
        .flat_map(|d| &d.sentences)
        .filter(|s| s.label.has_links())
        .count();
    for doc in &corpus.documents {
        for i in eligible_anchors(doc, min_words) {
            report.eligible_anchors += 1;
            if doc.sentences[i].label.has_links() {
                report.positive_anchors += 1;
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SentenceLine<'a> {
    schema: std::borrow::Cow<'a, str>,
    doc_id: std::borrow::Cow<'a, str>,
    source_path: std::borrow::Cow<'a, str>,
    #[serde(flatten)]
    record: std::borrow::Cow<'a, SentenceRecord>,
}

/// Serializes the labeled corpus as one json object per sentence.
pub fn corpus_to_jsonl(corpus: &Corpus) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for doc in &corpus.documents {
        for s in &doc.sentences {
            let line = SentenceLine {
                schema: SENTENCE_SCHEMA.into(),
                doc_id: doc.doc_id.as_str().into(),
                source_path: doc.source_path.as_str().into(),
                record: std::borrow::Cow::Borrowed(s),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.push(b'\n');
        }
    }
    Ok(out)
}

pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    write_atomic(path, &corpus_to_jsonl(corpus)?)
}

/// Reads a corpus written by [`write_corpus`]. Consecutive lines with the
/// same doc id form one document; indices must be contiguous from 0.
pub fn read_corpus(path: &Path) -> Result<Corpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut documents: Vec<Document> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: SentenceLine<'static> = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if parsed.schema != SENTENCE_SCHEMA {
            return Err(Error::Format(format!(
                "{}:{}: unsupported schema `{}`",
                path.display(),
                i + 1,
                parsed.schema
            )));
        }
        let record = parsed.record.into_owned();
        let continues = documents
            .last()
            .map(|d| d.doc_id == parsed.doc_id && record.index == d.len())
            .unwrap_or(false);
        if continues {
            documents.last_mut().unwrap().sentences.push(record);
        } else {
            if record.index != 0 {
                return Err(Error::Format(format!(
                    "{}:{}: sentence index {} does not continue document `{}`",
                    path.display(),
                    i + 1,
                    record.index,
                    parsed.doc_id
                )));
            }
            documents.push(Document {
                doc_id: parsed.doc_id.into_owned(),
                sentences: vec![record],
                source_path: parsed.source_path.into_owned(),
            });
        }
    }
    if documents.is_empty() {
        return Err(Error::Data(format!("empty corpus: {}", path.display())));
    }
    Ok(Corpus { documents })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn toks(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn label_and_strip_cases() {
        assert_eq!(
            label_and_strip(toks(&["see", "@xcite", "."]), "@xcite"),
            (SentenceLabel::WithLinks, toks(&["see", "."]), 1)
        );
        assert_eq!(
            label_and_strip(toks(&["no", "refs", "here"]), "@xcite"),
            (SentenceLabel::WithoutLinks, toks(&["no", "refs", "here"]), 0)
        );
        assert_eq!(
            label_and_strip(toks(&["a", "@xcite", "b", "@xcite"]), "@xcite"),
            (SentenceLabel::WithLinks, toks(&["a", "b"]), 2)
        );
    }

    fn doc_with_counts(counts: &[usize]) -> Document {
        let p = SentenceProcessor::new(&IngestConfig::default()).unwrap();
        let raw: Vec<String> = counts
            .iter()
            .map(|&n| vec!["w"; n].join(" ") + " .")
            .collect();
        p.document("d".into(), "mem".into(), &raw)
    }

    #[test]
    fn eligible_anchors_strict_bound() {
        let doc = doc_with_counts(&[31, 30, 45]);
        assert_eq!(
            doc.sentences.iter().map(|s| s.word_count).collect::<Vec<_>>(),
            [31, 30, 45]
        );
        assert_eq!(eligible_anchors(&doc, 30), [0, 2]);
        let doc = doc_with_counts(&[1, 1]);
        assert_eq!(eligible_anchors(&doc, 0), [0, 1]);
    }

    #[test]
    fn filter_all_drops_and_reindexes() {
        let cfg = IngestConfig {
            filter_all_sentences: true,
            min_words: 2,
            ..Default::default()
        };
        let p = SentenceProcessor::new(&cfg).unwrap();
        let doc = p.document("d".into(), "m".into(), &["a b c", "a", "a b c d"]);
        assert_eq!(doc.len(), 2);
        assert_eq!(doc.sentences[1].index, 1);
        assert_eq!(doc.sentences[1].word_count, 4);
    }

    #[test]
    fn sentence_processing_order() {
        let p = SentenceProcessor::new(&IngestConfig::default()).unwrap();
        let s = p.sentence(0, "As shown\tin @xcite , @xmath3 holds @xcite .");
        assert_eq!(s.label, SentenceLabel::WithLinks);
        assert_eq!(s.citation_count, 2);
        assert_eq!(s.raw_text, "As shown in @xcite , @xmath3 holds @xcite .");
        assert_eq!(s.tokens, toks(&["as", "shown", "in", ",", "@xmath", "holds", "."]));
        assert_eq!(s.word_count, 5);
    }

    #[test]
    fn drop_patterns_apply_before_cleaning() {
        let cfg = IngestConfig {
            drop_patterns: vec![r"ISBN [0-9-]+".into()],
            ..Default::default()
        };
        let p = SentenceProcessor::new(&cfg).unwrap();
        let s = p.sentence(0, "see ISBN 978-3-16 here");
        assert_eq!(s.tokens, toks(&["see", "here"]));
    }

    #[test]
    fn ingest_skips_garbage_lines() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"article_id":"a","article_text":["one @xcite .","two ."]}}"#).unwrap();
        f.write_all(&[0xff, 0xfe, 0x00, b'\n']).unwrap();
        writeln!(f, r#"{{"article_id":"b"}}"#).unwrap();
        writeln!(f).unwrap();
        let (corpus, report) = ingest_jsonlines(f.path(), &IngestConfig::default()).unwrap();
        assert_eq!(corpus.documents.len(), 1);
        assert_eq!(report.skipped_lines, 2);
        assert_eq!(report.sentences, 2);
        assert_eq!(report.with_links_sentences, 1);
    }

    #[test]
    fn ingest_empty_is_error() {
        let f = tempfile::NamedTempFile::new().unwrap();
        let err = ingest_jsonlines(f.path(), &IngestConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn ingest_missing_file_is_io_error() {
        let err = ingest_jsonlines(Path::new("/nonexistent/x.jsonl"), &IngestConfig::default())
            .unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn numeric_and_missing_ids() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"article_id":17,"article_text":["x ."]}}"#).unwrap();
        writeln!(f, r#"{{"article_text":["y ."]}}"#).unwrap();
        let (corpus, _) = ingest_jsonlines(f.path(), &IngestConfig::default()).unwrap();
        assert_eq!(corpus.documents[0].doc_id, "17");
        assert_eq!(corpus.documents[1].doc_id, "line-2");
    }

    #[test]
    fn corpus_roundtrip() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"article_id":"a","article_text":["one @xcite .","two ."]}}"#).unwrap();
        writeln!(f, r#"{{"article_id":"a","article_text":["three ."]}}"#).unwrap();
        let (corpus, _) = ingest_jsonlines(f.path(), &IngestConfig::default()).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_corpus(out.path(), &corpus).unwrap();
        let back = read_corpus(out.path()).unwrap();
        assert_eq!(back, corpus);
    }
}
