//! Experiment orchestration, artifact persistence and prediction.
//!
//! Layout of an output directory:
//!
//! ```text
//! corpus.jsonl, ingest.json             (ingest)
//! models/strategy-<id>.model.json
//! vocabs/strategy-<id>.vocab.json
//! report.csv, report.json, lengths.csv, voting.csv
//! manifest.json                         (config, hashes, seeds, timings)
//! cache/<key>/{model,vocab}.json        (reused across runs)
//! ```
//!
//! The manifest doubles as the model bundle read by [`cmd_predict`].

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{train, MlpHyperparams, MlpModel};
use crate::config::RunConfig;
use crate::corpus::{
    corpus_stats, eligible_anchors, ingest_jsonlines, read_corpus, write_corpus, Corpus,
    IngestReport, SENTENCE_SCHEMA,
};
use crate::ensemble::{align_anchor_views, decide_all, vote, EnsembleConfig, StrategyView, VoteMode};
use crate::error::{Error, Result};
use crate::evaluation::{
    emit_report, evaluate, length_histogram, AnchorRow, ExperimentReport, LengthRow, Metrics,
    ReportFiles, StrategyRow, VotingRow,
};
use crate::sampler::{build_samples, split_train_test, undersample, SamplingStrategy, SplitConfig};
use crate::util::{sha256_file, sha256_hex, write_atomic};
use crate::vectorizer::{build_vocabulary, Vocabulary};
use crate::Class;

pub const MANIFEST_SCHEMA: &str = "linkgap/manifest@1";

/// Environment variable that overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "LINKGAP_OUT_DIR";

fn load_custom_map(cfg: &RunConfig) -> Result<RunConfig> {
    let mut cfg = cfg.clone();
    if let Some(p) = &cfg.custom_map {
        let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
        let map: BTreeMap<String, String> = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Config(format!("custom map {}: {e}", p.display())))?;
        cfg.ingest.custom_map = Some(map);
    }
    Ok(cfg)
}

/// True when the first non-blank line is a labeled-corpus record.
fn is_labeled_corpus(path: &Path) -> Result<bool> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    for line in BufReader::new(file).split(b'\n') {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let v: serde_json::Value = match serde_json::from_slice(&line) {
            Ok(v) => v,
            Err(_) => return Ok(false),
        };
        return Ok(v.get("schema").and_then(|s| s.as_str()) == Some(SENTENCE_SCHEMA));
    }
    Ok(false)
}

/// Loads the run input: a labeled corpus from `ingest`, or raw jsonlines
/// articles which are ingested on the fly.
pub fn load_corpus(cfg: &RunConfig) -> Result<(Corpus, IngestReport)> {
    let path = cfg
        .input
        .as_ref()
        .ok_or_else(|| Error::Config("no input path configured".into()))?;
    if is_labeled_corpus(path)? {
        let corpus = read_corpus(path)?;
        let report = corpus_stats(&corpus, cfg.ingest.min_words);
        Ok((corpus, report))
    } else {
        ingest_jsonlines(path, &load_custom_map(cfg)?.ingest)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IngestSummary {
    #[serde(flatten)]
    pub report: IngestReport,
    pub positive_anchor_fraction: f64,
    pub corpus_sha256: String,
}

/// Ingests the configured input into `<out_dir>/corpus.jsonl` and writes
/// `<out_dir>/ingest.json`.
pub fn cmd_ingest(cfg: &RunConfig) -> Result<IngestSummary> {
    cfg.validate()?;
    let path = cfg
        .input
        .as_ref()
        .ok_or_else(|| Error::Config("no input path configured".into()))?;
    let (corpus, report) = ingest_jsonlines(path, &load_custom_map(cfg)?.ingest)?;
    let corpus_path = cfg.out_dir.join("corpus.jsonl");
    write_corpus(&corpus_path, &corpus)?;
    let summary = IngestSummary {
        positive_anchor_fraction: report.positive_anchor_fraction(),
        report,
        corpus_sha256: sha256_file(&corpus_path)?,
    };
    let mut json = serde_json::to_vec_pretty(&summary)?;
    json.push(b'\n');
    write_atomic(&cfg.out_dir.join("ingest.json"), &json)?;
    Ok(summary)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StrategyManifest {
    pub id: u32,
    pub before: usize,
    pub after: usize,
    pub seed: u64,
    pub cache_key: String,
    pub cache_hit: bool,
    pub model: String,
    pub model_sha256: String,
    pub vocab: String,
    pub vocab_sha256: String,
    pub vocab_size: usize,
    pub epochs_run: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    /// Canonical configuration text; replaying it reproduces the run.
    pub config: String,
    pub config_hash: String,
    pub input: String,
    pub input_sha256: String,
    pub master_seed: u64,
    pub strategies: Vec<StrategyManifest>,
    pub voting_anchor_strategy: Option<u32>,
    pub reports: BTreeMap<String, String>,
    pub warnings: Vec<String>,
    pub timings_ms: BTreeMap<String, u64>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest =
            serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        if m.schema != MANIFEST_SCHEMA {
            return Err(Error::Format(format!("unsupported manifest schema `{}`", m.schema)));
        }
        Ok(m)
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        RunConfig::from_kv_text(&self.config)
    }
}

pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub files: ReportFiles,
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
    /// Per-strategy test metrics, by id.
    pub metrics: BTreeMap<u32, Metrics>,
    /// Voting metrics in the order of [`RunConfig::ensembles`].
    pub voting_metrics: Vec<(EnsembleConfig, Metrics)>,
}

struct StrategyRun {
    strategy: SamplingStrategy,
    seed: u64,
    vocab: Vocabulary,
    model: MlpModel,
    metrics: Metrics,
    row: StrategyRow,
    lengths: Vec<LengthRow>,
    test_anchors: Vec<(usize, usize)>,
    cache_key: String,
    cache_hit: bool,
    elapsed_ms: u64,
}

fn cache_key(cfg: &RunConfig, s: &SamplingStrategy, input_sha: &str) -> String {
    const RUN_WIDE: [&str; 7] = [
        "input",
        "strategies",
        "grid",
        "voting_sets",
        "soft_threshold",
        "hard_threshold",
        "hard_rule",
    ];
    let mut text: String = cfg
        .to_kv()
        .lines()
        .filter(|l| !RUN_WIDE.iter().any(|k| l.starts_with(&format!("{k} ="))))
        .map(|l| format!("{l}\n"))
        .collect();
    text.push_str(&format!(
        "strategy = {}:{}:{}\ninput_sha256 = {input_sha}\n",
        s.id, s.before, s.after
    ));
    sha256_hex(text.as_bytes())
}

fn decisions(probs: &[f64]) -> Vec<Class> {
    probs
        .iter()
        .map(|&p| if p > 0.5 { Class::Positive } else { Class::Negative })
        .collect()
}

fn run_strategy(
    corpus: &Corpus,
    cfg: &RunConfig,
    s: &SamplingStrategy,
    input_sha: &str,
) -> Result<StrategyRun> {
    let started = Instant::now();
    let id = s.id;
    let seed = cfg.strategy_seed(id);
    let set = build_samples(corpus, s, cfg.ingest.min_words, cfg.negative_stride);
    let (positives, negatives) = (set.positives.len(), set.negatives.len());
    log::info!("strategy {id}: {positives} positive / {negatives} negative samples");
    let balanced = undersample(set.into_vec(), seed).map_err(|e| e.in_stage("undersample", id))?;
    let lengths = length_histogram(id, &balanced, corpus);
    let split = split_train_test(
        balanced,
        &SplitConfig {
            seed,
            ..cfg.split.clone()
        },
    )
    .map_err(|e| e.in_stage("split", id))?;

    let key = cache_key(cfg, s, input_sha);
    let cache_dir = cfg.out_dir.join("cache").join(&key);
    let cached = cfg.cache
        && cache_dir.join("model.json").is_file()
        && cache_dir.join("vocab.json").is_file();
    let (vocab, model) = if cached {
        log::info!("strategy {id}: reusing cached model {key}");
        (
            Vocabulary::load(&cache_dir.join("vocab.json")).map_err(|e| e.in_stage("cache", id))?,
            MlpModel::load(&cache_dir.join("model.json")).map_err(|e| e.in_stage("cache", id))?,
        )
    } else {
        let train_tokens: Vec<Vec<&str>> = split.train.iter().map(|x| x.tokens(corpus)).collect();
        let vocab = build_vocabulary(&train_tokens, &cfg.vectorizer)
            .map_err(|e| e.in_stage("vectorize", id))?;
        let xs: Vec<_> = train_tokens.iter().map(|t| vocab.vectorize(t)).collect();
        drop(train_tokens);
        let ys: Vec<Class> = split.train.iter().map(|x| x.label).collect();
        let hp = MlpHyperparams {
            seed,
            ..cfg.mlp.clone()
        };
        log::info!("strategy {id}: training on {} samples, {} features", xs.len(), vocab.len());
        let model = train(&xs, &ys, &hp).map_err(|e| e.in_stage("train", id))?;
        (vocab, model)
    };

    let test_xs: Vec<_> = split
        .test
        .iter()
        .map(|x| vocab.vectorize(&x.tokens(corpus)))
        .collect();
    let probs = model
        .predict_positive(&test_xs)
        .map_err(|e| e.in_stage("evaluate", id))?;
    let truth: Vec<Class> = split.test.iter().map(|x| x.label).collect();
    let metrics = evaluate(&truth, &decisions(&probs)).map_err(|e| e.in_stage("evaluate", id))?;

    let row = StrategyRow {
        strategy_id: id,
        n: s.before,
        m: s.after,
        k: s.width(),
        f1: metrics.weighted.f1,
        precision: metrics.weighted.precision,
        recall: metrics.weighted.recall,
        positives,
        negatives,
        train: split.train.len(),
        test: split.test.len(),
        aligned_f1: None,
    };
    let test_anchors = split.test.iter().map(|x| (x.doc, x.anchor)).collect();
    Ok(StrategyRun {
        strategy: *s,
        seed,
        vocab,
        model,
        metrics,
        row,
        lengths,
        test_anchors,
        cache_key: key,
        cache_hit: cached,
        elapsed_ms: started.elapsed().as_millis() as u64,
    })
}

/// Shares an artifact with the cache without a second copy when possible.
fn link_or_copy(from: &Path, to: &Path) -> Result<()> {
    if let Some(parent) = to.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    if to.exists() {
        std::fs::remove_file(to).map_err(|e| Error::io(to, e))?;
    }
    if std::fs::hard_link(from, to).is_err() {
        std::fs::copy(from, to).map_err(|e| Error::io(to, e))?;
    }
    Ok(())
}

fn model_path(id: u32) -> String {
    format!("models/strategy-{id}.model.json")
}

fn vocab_path(id: u32) -> String {
    format!("vocabs/strategy-{id}.vocab.json")
}

/// Runs the full experiment described by `cfg`.
pub fn cmd_experiment(cfg: &RunConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let mut timings = BTreeMap::new();
    let input = cfg
        .input
        .as_ref()
        .ok_or_else(|| Error::Config("no input path configured".into()))?;
    let input_sha = sha256_file(input)?;
    let (corpus, ingest) = load_corpus(cfg)?;
    log::info!(
        "corpus: {} documents, {} sentences, {} eligible anchors",
        ingest.documents,
        ingest.sentences,
        ingest.eligible_anchors
    );
    timings.insert("load".to_string(), started.elapsed().as_millis() as u64);

    let strategies = cfg.selected_strategies()?;
    let runs = strategies
        .par_iter()
        .map(|s| run_strategy(&corpus, cfg, s, &input_sha))
        .collect::<Result<Vec<StrategyRun>>>()?;

    let mut warnings = Vec::new();
    let mut manifest_strategies = Vec::new();
    for r in &runs {
        let id = r.strategy.id;
        let model_json = r.model.to_json()?;
        let vocab_json = r.vocab.to_json()?;
        let model_file = cfg.out_dir.join(model_path(id));
        let vocab_file = cfg.out_dir.join(vocab_path(id));
        write_atomic(&model_file, &model_json)?;
        write_atomic(&vocab_file, &vocab_json)?;
        if cfg.cache && !r.cache_hit {
            let dir = cfg.out_dir.join("cache").join(&r.cache_key);
            link_or_copy(&model_file, &dir.join("model.json"))?;
            link_or_copy(&vocab_file, &dir.join("vocab.json"))?;
        }
        manifest_strategies.push(StrategyManifest {
            id,
            before: r.strategy.before,
            after: r.strategy.after,
            seed: r.seed,
            cache_key: r.cache_key.clone(),
            cache_hit: r.cache_hit,
            model: model_path(id),
            model_sha256: sha256_hex(&model_json),
            vocab: vocab_path(id),
            vocab_sha256: sha256_hex(&vocab_json),
            vocab_size: r.vocab.len(),
            epochs_run: r.model.meta.epochs_run,
        });
        timings.insert(format!("strategy_{id}"), r.elapsed_ms);
        if r.model.meta.epochs_run >= r.model.meta.hyperparams.max_epochs {
            warnings.push(format!(
                "strategy {id}: training stopped at max_epochs={} before converging",
                r.model.meta.hyperparams.max_epochs
            ));
        }
    }

    let mut report = ExperimentReport {
        strategies: runs.iter().map(|r| r.row.clone()).collect(),
        lengths: runs.iter().flat_map(|r| r.lengths.iter().cloned()).collect(),
        ..Default::default()
    };

    let ensembles = cfg.ensembles();
    let mut voting_metrics = Vec::new();
    let mut anchor_strategy = None;
    if !ensembles.is_empty() {
        let vote_started = Instant::now();
        // the narrowest strategy supplies the shared evaluation anchors
        let base = runs
            .iter()
            .min_by_key(|r| (r.strategy.width(), r.strategy.id))
            .expect("at least one strategy");
        anchor_strategy = Some(base.strategy.id);
        let mut anchors = base.test_anchors.clone();
        anchors.sort_unstable();
        anchors.dedup();
        let views: Vec<StrategyView> = runs
            .iter()
            .map(|r| StrategyView {
                strategy: &r.strategy,
                vocab: &r.vocab,
                model: &r.model,
            })
            .collect();
        let preds = align_anchor_views(&corpus, &anchors, &views)?;
        let truth: Vec<Class> = preds.iter().map(|p| p.true_label).collect();

        for (row, r) in report.strategies.iter_mut().zip(&runs) {
            let probs: Vec<f64> = preds.iter().map(|p| p.probabilities[&r.strategy.id]).collect();
            row.aligned_f1 = Some(evaluate(&truth, &decisions(&probs))?.weighted.f1);
        }

        for e in &ensembles {
            if e.is_degenerate() {
                warnings.push(format!(
                    "{} voting over {:?} can never vote positive (threshold {})",
                    e.mode.as_str(),
                    e.strategy_ids,
                    match e.mode {
                        VoteMode::Soft => e.soft_threshold,
                        VoteMode::Hard => e.effective_hard_threshold(),
                    }
                ));
            }
            let (t, d) = decide_all(&preds, e)?;
            let m = evaluate(&t, &d)?;
            report.voting.push(VotingRow {
                mode: e.mode.as_str().into(),
                ensemble_size: e.size(),
                strategies: e.strategy_ids.clone(),
                f1: m.weighted.f1,
                precision: m.weighted.precision,
                recall: m.weighted.recall,
                positives: m.positive.support,
                negatives: m.negative.support,
                degenerate: e.is_degenerate(),
            });
            voting_metrics.push((e.clone(), m));
        }

        let largest = |mode: VoteMode| {
            ensembles
                .iter()
                .filter(|e| e.mode == mode)
                .max_by_key(|e| e.size())
                .expect("both modes present")
        };
        let (soft, hard) = (largest(VoteMode::Soft), largest(VoteMode::Hard));
        for p in &preds {
            report.anchors.push(AnchorRow {
                doc_id: p.doc_id.clone(),
                index: p.index,
                true_label: p.true_label,
                probabilities: p.probabilities.clone(),
                decision_soft: vote(&p.probabilities, soft)?,
                decision_hard: vote(&p.probabilities, hard)?,
            });
        }
        timings.insert("voting".to_string(), vote_started.elapsed().as_millis() as u64);
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    report.warnings = warnings.clone();

    let files = emit_report(&cfg.out_dir, &report)?;
    let mut reports = BTreeMap::new();
    for p in [&files.report_csv, &files.report_json, &files.lengths_csv]
        .into_iter()
        .chain(files.voting_csv.as_ref())
    {
        let name = p.file_name().expect("file path").to_string_lossy().into_owned();
        reports.insert(name, sha256_file(p)?);
    }
    timings.insert("total".to_string(), started.elapsed().as_millis() as u64);

    let manifest = Manifest {
        schema: MANIFEST_SCHEMA.into(),
        config: cfg.to_kv(),
        config_hash: cfg.config_hash(),
        input: input.display().to_string(),
        input_sha256: input_sha,
        master_seed: cfg.seed,
        strategies: manifest_strategies,
        voting_anchor_strategy: anchor_strategy,
        reports,
        warnings,
        timings_ms: timings,
    };
    let manifest_path = cfg.out_dir.join("manifest.json");
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    write_atomic(&manifest_path, &json)?;

    Ok(ExperimentOutcome {
        report,
        files,
        manifest,
        manifest_path,
        metrics: runs.iter().map(|r| (r.strategy.id, r.metrics)).collect(),
        voting_metrics,
    })
}

/// Re-runs the experiment recorded in a manifest into `out_dir`. The input
/// file must still hash to the recorded value.
pub fn replay_manifest(manifest_path: &Path, out_dir: &Path, cache: bool) -> Result<ExperimentOutcome> {
    let manifest = Manifest::load(manifest_path)?;
    let mut cfg = manifest.run_config()?;
    cfg.out_dir = out_dir.to_path_buf();
    cfg.cache = cache;
    let input = cfg
        .input
        .as_ref()
        .ok_or_else(|| Error::Config("manifest has no input path".into()))?;
    let sha = sha256_file(input)?;
    if sha != manifest.input_sha256 {
        return Err(Error::Data(format!(
            "input {} changed since the manifest was written",
            input.display()
        )));
    }
    cmd_experiment(&cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub doc_id: String,
    pub index: usize,
    /// Mean positive probability over the ensemble.
    pub probability: f64,
    pub decision: Class,
    pub has_citation: bool,
    /// No citation marker, but the ensemble votes for one.
    pub missing_link: bool,
    pub probabilities: BTreeMap<u32, f64>,
}

#[derive(Clone, Debug)]
pub struct PredictOptions {
    /// Strategy ids to combine; `None` uses every strategy in the bundle.
    pub strategies: Option<Vec<u32>>,
    pub mode: VoteMode,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self {
            strategies: None,
            mode: VoteMode::Soft,
        }
    }
}

/// Scores every eligible anchor of the documents in `doc_path` (raw
/// jsonlines articles) with the bundle in `bundle_dir`, most probable first.
pub fn cmd_predict(doc_path: &Path, bundle_dir: &Path, opts: &PredictOptions) -> Result<Vec<PredictionRow>> {
    let manifest = Manifest::load(&bundle_dir.join("manifest.json"))?;
    let run_cfg = manifest.run_config()?;
    let available: BTreeMap<u32, &StrategyManifest> =
        manifest.strategies.iter().map(|s| (s.id, s)).collect();
    let ids: Vec<u32> = match &opts.strategies {
        None => available.keys().copied().collect(),
        Some(ids) => ids.clone(),
    };
    let mut ensemble = EnsembleConfig::new(ids.clone(), opts.mode);
    ensemble.soft_threshold = run_cfg.voting.soft_threshold;
    ensemble.hard_threshold = run_cfg.voting.hard_threshold;
    ensemble.hard_rule = run_cfg.voting.hard_rule;
    ensemble.validate()?;
    if ensemble.is_degenerate() {
        log::warn!("{} voting over {ids:?} can never vote positive", opts.mode.as_str());
    }

    let mut parts = Vec::new();
    for id in &ids {
        let entry = available.get(id).ok_or_else(|| {
            Error::Config(format!(
                "strategy {id} requested but the bundle holds {:?}",
                available.keys().collect::<Vec<_>>()
            ))
        })?;
        let model = MlpModel::load(&bundle_dir.join(&entry.model))?;
        let vocab = Vocabulary::load(&bundle_dir.join(&entry.vocab))?;
        parts.push((SamplingStrategy::new(*id, entry.before, entry.after), vocab, model));
    }

    let (corpus, _) = ingest_jsonlines(doc_path, &load_custom_map(&run_cfg)?.ingest)?;
    if let Some(d) = corpus.documents.iter().find(|d| d.is_empty()) {
        return Err(Error::Data(format!("document `{}` has no sentences", d.doc_id)));
    }
    let anchors: Vec<(usize, usize)> = corpus
        .documents
        .iter()
        .enumerate()
        .flat_map(|(d, doc)| {
            eligible_anchors(doc, run_cfg.ingest.min_words)
                .into_iter()
                .map(move |i| (d, i))
        })
        .collect();
    if anchors.is_empty() {
        log::warn!(
            "no sentence has more than {} words; nothing to score",
            run_cfg.ingest.min_words
        );
        return Ok(Vec::new());
    }

    let views: Vec<StrategyView> = parts
        .iter()
        .map(|(s, v, m)| StrategyView {
            strategy: s,
            vocab: v,
            model: m,
        })
        .collect();
    let preds = align_anchor_views(&corpus, &anchors, &views)?;
    let mut rows = preds
        .into_iter()
        .map(|p| {
            let decision = vote(&p.probabilities, &ensemble)?;
            let has_citation = p.true_label == Class::Positive;
            Ok(PredictionRow {
                probability: p.mean_probability(),
                doc_id: p.doc_id,
                index: p.index,
                decision,
                has_citation,
                missing_link: !has_citation && decision == Class::Positive,
                probabilities: p.probabilities,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| {
        b.probability
            .total_cmp(&a.probability)
            .then_with(|| a.doc_id.cmp(&b.doc_id))
            .then(a.index.cmp(&b.index))
    });
    Ok(rows)
}

/// The prediction rows as a json array.
pub fn predictions_json(rows: &[PredictionRow]) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(rows)?;
    out.push(b'\n');
    Ok(out)
}
