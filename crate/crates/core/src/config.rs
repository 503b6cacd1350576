//! Run configuration and its plain-text `key = value` file format.
//!
//! One setting per line; a line starting with `#` is a comment (a `#` later
//! in a line is part of the value); blank lines are ignored.
//! Unknown keys are errors. `drop_pattern` may repeat, each line adding one
//! regex. List values (`strategies`, `grid`, `voting_sets`) are written as
//!
//! ```text
//! strategies = 0,1,2,7
//! grid = 0:0,0:2,1:1
//! voting_sets = 7 8 9; 6 7 8 9
//! ```
//!
//! `strategies = all` selects every grid entry and `voting_sets = growing`
//! builds the growing sets from the selected ids. Strategy `i` of the grid
//! has id `i`. The canonical rendering from [`RunConfig::to_kv`] lists every
//! key in a fixed order and is what gets hashed and stored in manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::classifier::MlpHyperparams;
use crate::corpus::{IngestConfig, MaskingMode};
use crate::ensemble::{build_strategy_sets_from, EnsembleConfig, HardRule, HardThreshold, VoteMode};
use crate::error::{Error, Result};
use crate::sampler::{paper_strategies, SamplingStrategy, SplitConfig, SplitUnit};
use crate::util::sha256_hex;
use crate::vectorizer::VectorizerParams;

pub const DEFAULT_OUT_DIR: &str = "linkgap-out";
pub const DEFAULT_SEED: u64 = 42;

#[derive(Clone, Debug, PartialEq)]
pub enum VotingSets {
    Growing,
    Explicit(Vec<Vec<u32>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct VotingConfig {
    pub sets: VotingSets,
    pub soft_threshold: f64,
    pub hard_threshold: HardThreshold,
    pub hard_rule: HardRule,
}

impl Default for VotingConfig {
    fn default() -> Self {
        Self {
            sets: VotingSets::Growing,
            soft_threshold: 0.5,
            hard_threshold: HardThreshold::default(),
            hard_rule: HardRule::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub grid: Vec<SamplingStrategy>,
    /// Selected strategy ids; `None` means the whole grid.
    pub strategies: Option<Vec<u32>>,
    pub negative_stride: usize,
    pub ingest: IngestConfig,
    pub custom_map: Option<PathBuf>,
    pub split: SplitConfig,
    pub vectorizer: VectorizerParams,
    pub mlp: MlpHyperparams,
    pub voting: VotingConfig,
    pub cache: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            out_dir: PathBuf::from(DEFAULT_OUT_DIR),
            seed: DEFAULT_SEED,
            grid: paper_strategies(),
            strategies: None,
            negative_stride: 1,
            ingest: IngestConfig::default(),
            custom_map: None,
            split: SplitConfig::default(),
            vectorizer: VectorizerParams::default(),
            mlp: MlpHyperparams::default(),
            voting: VotingConfig::default(),
            cache: true,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value for `{key}`: {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean for `{key}`: {value:?}"))),
    }
}

fn parse_ids(key: &str, value: &str, sep: char) -> Result<Vec<u32>> {
    value
        .split(sep)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_grid(value: &str) -> Result<Vec<SamplingStrategy>> {
    value
        .split(',')
        .map(str::trim)
        .enumerate()
        .map(|(id, pair)| {
            let (b, a) = pair
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("grid entry {pair:?} is not n:m")))?;
            Ok(SamplingStrategy::new(
                id as u32,
                parse("grid", b.trim())?,
                parse("grid", a.trim())?,
            ))
        })
        .collect()
}

fn join_ids(ids: &[u32], sep: &str) -> String {
    ids.iter().map(u32::to_string).collect::<Vec<_>>().join(sep)
}

/// Splits config text into `(key, value)` pairs in file order.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            // keep `#` inside regex values written after the key
            Some(i) if raw[..i].trim().is_empty() => "",
            _ => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", no + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut patterns_seen = false;
        for (k, v) in parse_kv(text)? {
            if k == "drop_pattern" && !patterns_seen {
                cfg.ingest.drop_patterns.clear();
                patterns_seen = true;
            }
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv_text(&text)
    }

    /// Applies one setting. Used by the file parser and by CLI overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "input" => self.input = (!value.is_empty()).then(|| PathBuf::from(value)),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "seed" => self.seed = parse(key, value)?,
            "grid" => self.grid = parse_grid(value)?,
            "strategies" => {
                self.strategies = if value == "all" {
                    None
                } else {
                    Some(parse_ids(key, value, ',')?)
                }
            }
            "negative_stride" => self.negative_stride = parse(key, value)?,
            "sentence_field" => self.ingest.sentence_field = value.into(),
            "id_field" => self.ingest.id_field = value.into(),
            "citation_marker" => self.ingest.citation_marker = value.into(),
            "math_marker_pattern" => self.ingest.math_marker_pattern = value.into(),
            "min_words" => self.ingest.min_words = parse(key, value)?,
            "masking_mode" => self.ingest.masking_mode = MaskingMode::from_str(value)?,
            "custom_map" => self.custom_map = (!value.is_empty()).then(|| PathBuf::from(value)),
            "drop_pattern" => {
                if !value.is_empty() {
                    self.ingest.drop_patterns.push(value.into())
                }
            }
            "filter_all_sentences" => self.ingest.filter_all_sentences = parse_bool(key, value)?,
            "test_size" => self.split.test_size = parse(key, value)?,
            "split_unit" => self.split.unit = SplitUnit::from_str(value)?,
            "ngram_low" => self.vectorizer.ngram_low = parse(key, value)?,
            "ngram_high" => self.vectorizer.ngram_high = parse(key, value)?,
            "min_df" => self.vectorizer.min_df = parse(key, value)?,
            "max_df" => self.vectorizer.max_df = parse(key, value)?,
            "hidden_units" => self.mlp.hidden_units = parse(key, value)?,
            "learning_rate" => self.mlp.learning_rate = parse(key, value)?,
            "batch_size" => self.mlp.batch_size = parse(key, value)?,
            "max_epochs" => self.mlp.max_epochs = parse(key, value)?,
            "tol" => self.mlp.tol = parse(key, value)?,
            "patience" => self.mlp.patience = parse(key, value)?,
            "l2" => self.mlp.l2 = parse(key, value)?,
            "voting_sets" => {
                self.voting.sets = if value == "growing" {
                    VotingSets::Growing
                } else {
                    VotingSets::Explicit(
                        value
                            .split(';')
                            .map(|s| parse_ids(key, s, ' '))
                            .filter(|r| !matches!(r, Ok(ids) if ids.is_empty()))
                            .collect::<Result<_>>()?,
                    )
                }
            }
            "soft_threshold" => self.voting.soft_threshold = parse(key, value)?,
            "hard_threshold" => self.voting.hard_threshold = HardThreshold::from_str(value)?,
            "hard_rule" => self.voting.hard_rule = HardRule::from_str(value)?,
            "cache" => self.cache = parse_bool(key, value)?,
            _ => return Err(Error::Config(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.ingest.validate()?;
        self.vectorizer.validate()?;
        self.mlp.validate()?;
        if self.grid.is_empty() {
            return Err(Error::Config("strategy grid is empty".into()));
        }
        if self.negative_stride == 0 {
            return Err(Error::Config("negative_stride must be at least 1".into()));
        }
        if !(self.split.test_size > 0.0 && self.split.test_size < 1.0) {
            return Err(Error::Config(format!(
                "test_size must be in (0, 1), got {}",
                self.split.test_size
            )));
        }
        let selected = self.selected_strategies()?;
        if selected.is_empty() {
            return Err(Error::Config("no strategy selected".into()));
        }
        for e in self.ensembles() {
            e.validate()?;
            if let Some(id) = e.strategy_ids.iter().find(|id| !selected.iter().any(|s| s.id == **id)) {
                return Err(Error::Config(format!(
                    "voting set {:?} uses unselected strategy {id}",
                    e.strategy_ids
                )));
            }
        }
        Ok(())
    }

    /// Selected strategies in id order.
    pub fn selected_strategies(&self) -> Result<Vec<SamplingStrategy>> {
        match &self.strategies {
            None => Ok(self.grid.clone()),
            Some(ids) => {
                let mut ids = ids.clone();
                ids.sort_unstable();
                if ids.windows(2).any(|w| w[0] == w[1]) {
                    return Err(Error::Config("duplicate strategy ids".into()));
                }
                ids.iter()
                    .map(|&id| {
                        self.grid.get(id as usize).copied().ok_or_else(|| {
                            Error::Config(format!("strategy {id} is not in the grid"))
                        })
                    })
                    .collect()
            }
        }
    }

    /// Every voting configuration to evaluate: each set in soft then hard mode.
    pub fn ensembles(&self) -> Vec<EnsembleConfig> {
        let sets = match &self.voting.sets {
            VotingSets::Growing => {
                let ids: Vec<u32> = self
                    .selected_strategies()
                    .map(|v| v.iter().map(|s| s.id).collect())
                    .unwrap_or_default();
                build_strategy_sets_from(&ids)
            }
            VotingSets::Explicit(sets) => sets.clone(),
        };
        sets.into_iter()
            .flat_map(|ids| {
                [VoteMode::Soft, VoteMode::Hard].map(|mode| EnsembleConfig {
                    strategy_ids: ids.clone(),
                    mode,
                    soft_threshold: self.voting.soft_threshold,
                    hard_threshold: self.voting.hard_threshold,
                    hard_rule: self.voting.hard_rule,
                })
            })
            .collect()
    }

    /// Seed of strategy `id`: master seed plus id.
    pub fn strategy_seed(&self, id: u32) -> u64 {
        self.seed.wrapping_add(id as u64)
    }

    /// Canonical rendering of every setting except `out_dir` and `cache`,
    /// which do not affect results.
    pub fn to_kv(&self) -> String {
        let mut entries: BTreeMap<&str, String> = BTreeMap::new();
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        entries.insert("input", path(&self.input));
        entries.insert("seed", self.seed.to_string());
        entries.insert(
            "grid",
            self.grid
                .iter()
                .map(|s| format!("{}:{}", s.before, s.after))
                .collect::<Vec<_>>()
                .join(","),
        );
        entries.insert(
            "strategies",
            match &self.strategies {
                None => "all".into(),
                Some(ids) => {
                    let mut ids = ids.clone();
                    ids.sort_unstable();
                    join_ids(&ids, ",")
                }
            },
        );
        entries.insert("negative_stride", self.negative_stride.to_string());
        entries.insert("sentence_field", self.ingest.sentence_field.clone());
        entries.insert("id_field", self.ingest.id_field.clone());
        entries.insert("citation_marker", self.ingest.citation_marker.clone());
        entries.insert("math_marker_pattern", self.ingest.math_marker_pattern.clone());
        entries.insert("min_words", self.ingest.min_words.to_string());
        entries.insert("masking_mode", self.ingest.masking_mode.as_str().into());
        entries.insert("custom_map", path(&self.custom_map));
        entries.insert("filter_all_sentences", self.ingest.filter_all_sentences.to_string());
        entries.insert("test_size", self.split.test_size.to_string());
        entries.insert("split_unit", self.split.unit.as_str().into());
        entries.insert("ngram_low", self.vectorizer.ngram_low.to_string());
        entries.insert("ngram_high", self.vectorizer.ngram_high.to_string());
        entries.insert("min_df", self.vectorizer.min_df.to_string());
        entries.insert("max_df", self.vectorizer.max_df.to_string());
        entries.insert("hidden_units", self.mlp.hidden_units.to_string());
        entries.insert("learning_rate", self.mlp.learning_rate.to_string());
        entries.insert("batch_size", self.mlp.batch_size.to_string());
        entries.insert("max_epochs", self.mlp.max_epochs.to_string());
        entries.insert("tol", self.mlp.tol.to_string());
        entries.insert("patience", self.mlp.patience.to_string());
        entries.insert("l2", self.mlp.l2.to_string());
        entries.insert(
            "voting_sets",
            match &self.voting.sets {
                VotingSets::Growing => "growing".into(),
                VotingSets::Explicit(sets) => sets
                    .iter()
                    .map(|s| join_ids(s, " "))
                    .collect::<Vec<_>>()
                    .join("; "),
            },
        );
        entries.insert("soft_threshold", self.voting.soft_threshold.to_string());
        entries.insert("hard_threshold", self.voting.hard_threshold.to_string());
        entries.insert("hard_rule", self.voting.hard_rule.as_str().into());

        let mut out = String::new();
        for (k, v) in entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        for p in &self.ingest.drop_patterns {
            let _ = writeln!(out, "drop_pattern = {p}");
        }
        out
    }

    pub fn config_hash(&self) -> String {
        sha256_hex(self.to_kv().as_bytes())
    }
}
