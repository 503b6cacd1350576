//! Experiment report tables and their on-disk formats.
//!
//! Files written by [`emit_report`]:
//!
//! - `report.csv`: one row per strategy, then one per (voting mode, size).
//! - `report.json`: the same rows plus warnings, under a schema tag.
//! - `lengths.csv`: sample length histogram (words) per strategy and class.
//! - `voting.csv`: per-anchor strategy probabilities and voting decisions.
//!
//! Real numbers are printed with four decimals.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::sampler::Sample;
use crate::util::{fmt4, write_atomic};
use crate::Class;

pub const REPORT_SCHEMA: &str = "linkgap/report@1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub strategy_id: u32,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    /// Samples built before balancing.
    pub positives: usize,
    pub negatives: usize,
    pub train: usize,
    pub test: usize,
    /// Weighted F1 of this strategy alone on the shared voting anchors.
    pub aligned_f1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VotingRow {
    pub mode: String,
    pub ensemble_size: usize,
    pub strategies: Vec<u32>,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub positives: usize,
    pub negatives: usize,
    /// The decision rule cannot produce a positive vote at this size.
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LengthRow {
    pub strategy_id: u32,
    pub class: Class,
    pub words: usize,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorRow {
    pub doc_id: String,
    pub index: usize,
    pub true_label: Class,
    pub probabilities: BTreeMap<u32, f64>,
    pub decision_soft: Class,
    pub decision_hard: Class,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub strategies: Vec<StrategyRow>,
    pub voting: Vec<VotingRow>,
    pub lengths: Vec<LengthRow>,
    pub anchors: Vec<AnchorRow>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct ReportFiles {
    pub report_csv: PathBuf,
    pub report_json: PathBuf,
    pub lengths_csv: PathBuf,
    pub voting_csv: Option<PathBuf>,
}

/// Histogram of sample lengths in words, keyed by class and length.
pub fn length_histogram(strategy_id: u32, samples: &[Sample], corpus: &Corpus) -> Vec<LengthRow> {
    let mut counts: BTreeMap<(Class, usize), usize> = BTreeMap::new();
    for s in samples {
        *counts.entry((s.label, s.word_count(corpus))).or_insert(0) += 1;
    }
    counts
        .into_iter()
        .map(|((class, words), count)| LengthRow {
            strategy_id,
            class,
            words,
            count,
        })
        .collect()
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

fn csv_bytes(rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(&r)
            .map_err(|e| Error::Format(format!("csv: {e}")))?;
    }
    w.into_inner()
        .map_err(|e| Error::Format(format!("csv: {e}")))
}

pub(crate) fn report_csv(report: &ExperimentReport) -> Result<Vec<u8>> {
    let mut rows = vec![[
        "section",
        "strategy_id",
        "n",
        "m",
        "k",
        "mode",
        "ensemble_size",
        "strategies",
        "f1",
        "precision",
        "recall",
        "positives",
        "negatives",
        "train",
        "test",
        "aligned_f1",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect::<Vec<_>>()];
    for s in &report.strategies {
        rows.push(vec![
            "strategy".into(),
            s.strategy_id.to_string(),
            s.n.to_string(),
            s.m.to_string(),
            s.k.to_string(),
            String::new(),
            String::new(),
            String::new(),
            fmt4(s.f1),
            fmt4(s.precision),
            fmt4(s.recall),
            s.positives.to_string(),
            s.negatives.to_string(),
            s.train.to_string(),
            s.test.to_string(),
            s.aligned_f1.map(fmt4).unwrap_or_default(),
        ]);
    }
    for v in &report.voting {
        rows.push(vec![
            "voting".into(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            v.mode.clone(),
            v.ensemble_size.to_string(),
            join_ids(&v.strategies),
            fmt4(v.f1),
            fmt4(v.precision),
            fmt4(v.recall),
            v.positives.to_string(),
            v.negatives.to_string(),
            String::new(),
            String::new(),
            String::new(),
        ]);
    }
    csv_bytes(rows)
}

fn join_ids(ids: &[u32]) -> String {
    ids.iter().map(u32::to_string).collect::<Vec<_>>().join(";")
}

fn lengths_csv(report: &ExperimentReport) -> Result<Vec<u8>> {
    let mut rows = vec![vec![
        "strategy_id".to_string(),
        "class".into(),
        "words".into(),
        "count".into(),
    ]];
    for r in &report.lengths {
        rows.push(vec![
            r.strategy_id.to_string(),
            r.class.to_string(),
            r.words.to_string(),
            r.count.to_string(),
        ]);
    }
    csv_bytes(rows)
}

fn voting_csv(report: &ExperimentReport) -> Result<Vec<u8>> {
    let ids: Vec<u32> = report
        .anchors
        .first()
        .map(|a| a.probabilities.keys().copied().collect())
        .unwrap_or_default();
    let mut header = vec!["doc_id".to_string(), "index".into(), "true_label".into()];
    header.extend(ids.iter().map(|id| format!("p_{id}")));
    header.push("decision_soft".into());
    header.push("decision_hard".into());
    let mut rows = vec![header];
    for a in &report.anchors {
        let mut row = vec![a.doc_id.clone(), a.index.to_string(), a.true_label.to_string()];
        row.extend(ids.iter().map(|id| fmt4(a.probabilities[id])));
        row.push(a.decision_soft.to_string());
        row.push(a.decision_hard.to_string());
        rows.push(row);
    }
    csv_bytes(rows)
}

#[derive(Serialize)]
struct ReportJson<'a> {
    schema: &'static str,
    strategies: Vec<StrategyRow>,
    voting: Vec<VotingRow>,
    warnings: &'a [String],
}

pub(crate) fn report_json(report: &ExperimentReport) -> Result<Vec<u8>> {
    let strategies = report
        .strategies
        .iter()
        .map(|s| StrategyRow {
            f1: round4(s.f1),
            precision: round4(s.precision),
            recall: round4(s.recall),
            aligned_f1: s.aligned_f1.map(round4),
            ..s.clone()
        })
        .collect();
    let voting = report
        .voting
        .iter()
        .map(|v| VotingRow {
            f1: round4(v.f1),
            precision: round4(v.precision),
            recall: round4(v.recall),
            ..v.clone()
        })
        .collect();
    let mut out = serde_json::to_vec_pretty(&ReportJson {
        schema: REPORT_SCHEMA,
        strategies,
        voting,
        warnings: &report.warnings,
    })?;
    out.push(b'\n');
    Ok(out)
}

/// Writes the report files into `dir`. Needs at least one strategy row.
pub fn emit_report(dir: &Path, report: &ExperimentReport) -> Result<ReportFiles> {
    if report.strategies.is_empty() {
        return Err(Error::Data("report has no strategy rows".into()));
    }
    let files = ReportFiles {
        report_csv: dir.join("report.csv"),
        report_json: dir.join("report.json"),
        lengths_csv: dir.join("lengths.csv"),
        voting_csv: (!report.anchors.is_empty()).then(|| dir.join("voting.csv")),
    };
    write_atomic(&files.report_csv, &report_csv(report)?)?;
    write_atomic(&files.report_json, &report_json(report)?)?;
    write_atomic(&files.lengths_csv, &lengths_csv(report)?)?;
    if let Some(p) = &files.voting_csv {
        write_atomic(p, &voting_csv(report)?)?;
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strategy_row(id: u32) -> StrategyRow {
        StrategyRow {
            strategy_id: id,
            n: id as usize,
            m: 0,
            k: id as usize + 1,
            f1: 0.5 + id as f64 / 100.0,
            precision: 0.5,
            recall: 0.5,
            positives: 10,
            negatives: 20,
            train: 13,
            test: 7,
            aligned_f1: None,
        }
    }

    fn voting_row(mode: &str, size: usize) -> VotingRow {
        VotingRow {
            mode: mode.into(),
            ensemble_size: size,
            strategies: (10 - size as u32..10).collect(),
            f1: 0.912345,
            precision: 0.9,
            recall: 0.9,
            positives: 5,
            negatives: 5,
            degenerate: false,
        }
    }

    #[test]
    fn row_count_matches_sections() {
        let report = ExperimentReport {
            strategies: (0..10).map(strategy_row).collect(),
            voting: (3..=10)
                .flat_map(|s| [voting_row("soft", s), voting_row("hard", s)])
                .collect(),
            ..Default::default()
        };
        let csv = String::from_utf8(report_csv(&report).unwrap()).unwrap();
        assert_eq!(csv.lines().count(), 1 + 26);
        assert!(csv.contains("voting,,,,,soft,3,7;8;9,0.9123,"));
    }

    #[test]
    fn strategies_only_report() {
        let dir = tempfile::tempdir().unwrap();
        let report = ExperimentReport {
            strategies: vec![strategy_row(0)],
            ..Default::default()
        };
        let files = emit_report(dir.path(), &report).unwrap();
        assert!(files.voting_csv.is_none());
        let csv = std::fs::read_to_string(files.report_csv).unwrap();
        assert_eq!(csv.lines().count(), 2);
        assert!(!csv.contains("voting"));
        let json: serde_json::Value =
            serde_json::from_slice(&std::fs::read(files.report_json).unwrap()).unwrap();
        assert_eq!(json["voting"].as_array().unwrap().len(), 0);
        assert_eq!(json["schema"], REPORT_SCHEMA);
    }

    #[test]
    fn empty_report_is_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_report(dir.path(), &ExperimentReport::default()).is_err());
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let report = ExperimentReport {
            strategies: vec![strategy_row(0)],
            ..Default::default()
        };
        let f = tempfile::NamedTempFile::new().unwrap();
        // a regular file cannot act as a directory
        let err = emit_report(&f.path().join("sub"), &report).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
