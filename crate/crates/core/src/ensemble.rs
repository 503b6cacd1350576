//! Per-anchor alignment of strategy estimators and threshold voting.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::MlpModel;
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::sampler::{SamplingStrategy, Window};
use crate::vectorizer::Vocabulary;
use crate::Class;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteMode {
    Soft,
    Hard,
}

impl VoteMode {
    pub fn as_str(self) -> &'static str {
        match self {
            VoteMode::Soft => "soft",
            VoteMode::Hard => "hard",
        }
    }
}

impl FromStr for VoteMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(VoteMode::Soft),
            "hard" => Ok(VoteMode::Hard),
            _ => Err(Error::Config(format!("unknown vote mode {s:?} (soft|hard)"))),
        }
    }
}

/// How hard voting turns probabilities into a decision.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HardRule {
    /// Sum of positive probabilities compared with the hard threshold.
    #[default]
    ProbabilitySum,
    /// Count of estimators with p > 0.5 compared with the hard threshold.
    Majority,
}

impl HardRule {
    pub fn as_str(self) -> &'static str {
        match self {
            HardRule::ProbabilitySum => "probability_sum",
            HardRule::Majority => "majority",
        }
    }
}

impl FromStr for HardRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "probability_sum" | "sum" => Ok(HardRule::ProbabilitySum),
            "majority" => Ok(HardRule::Majority),
            _ => Err(Error::Config(format!(
                "unknown hard rule {s:?} (probability_sum|majority)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HardThreshold {
    Fixed(f64),
    /// Half the ensemble size.
    Auto,
}

impl Default for HardThreshold {
    fn default() -> Self {
        HardThreshold::Fixed(3.0)
    }
}

impl FromStr for HardThreshold {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(HardThreshold::Auto);
        }
        s.parse::<f64>()
            .map(HardThreshold::Fixed)
            .map_err(|_| Error::Config(format!("hard threshold {s:?} is neither a number nor \"auto\"")))
    }
}

impl std::fmt::Display for HardThreshold {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HardThreshold::Fixed(t) => write!(f, "{t}"),
            HardThreshold::Auto => f.write_str("auto"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub strategy_ids: Vec<u32>,
    pub mode: VoteMode,
    pub soft_threshold: f64,
    pub hard_threshold: HardThreshold,
    pub hard_rule: HardRule,
}

impl EnsembleConfig {
    pub fn new(strategy_ids: Vec<u32>, mode: VoteMode) -> Self {
        Self {
            strategy_ids,
            mode,
            soft_threshold: 0.5,
            hard_threshold: HardThreshold::default(),
            hard_rule: HardRule::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.strategy_ids.is_empty() {
            return Err(Error::Config("ensemble needs at least one strategy".into()));
        }
        let distinct: BTreeSet<u32> = self.strategy_ids.iter().copied().collect();
        if distinct.len() != self.strategy_ids.len() {
            return Err(Error::Config(format!(
                "duplicate strategy ids in ensemble {:?}",
                self.strategy_ids
            )));
        }
        if !self.soft_threshold.is_finite() {
            return Err(Error::Config("soft threshold must be finite".into()));
        }
        if let HardThreshold::Fixed(t) = self.hard_threshold {
            if !t.is_finite() {
                return Err(Error::Config("hard threshold must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.strategy_ids.len()
    }

    pub fn effective_hard_threshold(&self) -> f64 {
        match self.hard_threshold {
            HardThreshold::Fixed(t) => t,
            HardThreshold::Auto => self.size() as f64 / 2.0,
        }
    }

    /// True when no probability vector can produce a positive decision,
    /// e.g. summing three probabilities against a threshold of 3.
    pub fn is_degenerate(&self) -> bool {
        let e = self.size() as f64;
        match self.mode {
            VoteMode::Soft => self.soft_threshold >= 1.0,
            VoteMode::Hard => e <= self.effective_hard_threshold(),
        }
    }
}

/// Decision for positive-class probabilities listed in any order. Equality
/// with the threshold is Negative.
pub fn vote_values(probabilities: &[f64], cfg: &EnsembleConfig) -> Class {
    let positive = match cfg.mode {
        VoteMode::Soft => {
            let mean = probabilities.iter().sum::<f64>() / probabilities.len() as f64;
            mean > cfg.soft_threshold
        }
        VoteMode::Hard => {
            let score = match cfg.hard_rule {
                HardRule::ProbabilitySum => probabilities.iter().sum::<f64>(),
                HardRule::Majority => probabilities.iter().filter(|&&p| p > 0.5).count() as f64,
            };
            score > cfg.effective_hard_threshold()
        }
    };
    if positive {
        Class::Positive
    } else {
        Class::Negative
    }
}

/// Decision over the configured strategies of a per-strategy map.
pub fn vote(probabilities: &BTreeMap<u32, f64>, cfg: &EnsembleConfig) -> Result<Class> {
    let values = cfg
        .strategy_ids
        .iter()
        .map(|id| {
            probabilities.get(id).copied().ok_or_else(|| {
                Error::Invariant(format!("no probability for strategy {id} in voting input"))
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(vote_values(&values, cfg))
}

/// Growing estimator sets: the three highest ids first, then one more id at
/// a time in decreasing order. For ids 0..=9 this yields
/// `{7,8,9}, {6,..,9}, ..., {0,..,9}`.
pub fn build_strategy_sets_from(ids: &[u32]) -> Vec<Vec<u32>> {
    let mut sorted: Vec<u32> = ids.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() < 3 {
        return Vec::new();
    }
    (3..=sorted.len())
        .map(|size| sorted[sorted.len() - size..].to_vec())
        .collect()
}

pub fn build_strategy_sets() -> Vec<Vec<u32>> {
    build_strategy_sets_from(&(0..10).collect::<Vec<_>>())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorPrediction {
    pub doc_id: String,
    /// Position of the document in its corpus.
    pub doc: usize,
    pub index: usize,
    pub true_label: Class,
    /// Positive-class probability per strategy id.
    pub probabilities: BTreeMap<u32, f64>,
}

impl AnchorPrediction {
    pub fn mean_probability(&self) -> f64 {
        self.probabilities.values().sum::<f64>() / self.probabilities.len() as f64
    }
}

/// One trained strategy: its window recipe, vocabulary and model.
#[derive(Clone, Copy, Debug)]
pub struct StrategyView<'a> {
    pub strategy: &'a SamplingStrategy,
    pub vocab: &'a Vocabulary,
    pub model: &'a MlpModel,
}

/// Scores every anchor `(doc position, sentence index)` with every view.
/// Windows take neighbors as they are, whatever their labels.
pub fn align_anchor_views(
    corpus: &Corpus,
    anchors: &[(usize, usize)],
    views: &[StrategyView<'_>],
) -> Result<Vec<AnchorPrediction>> {
    for v in views {
        if v.vocab.len() != v.model.input_dim() {
            return Err(Error::Invariant(format!(
                "strategy {}: vocabulary has {} entries, model expects {}",
                v.strategy.id,
                v.vocab.len(),
                v.model.input_dim()
            )));
        }
    }
    for &(d, i) in anchors {
        let len = corpus.documents.get(d).map_or(0, |doc| doc.len());
        if i >= len {
            return Err(Error::Invariant(format!("anchor ({d}, {i}) outside corpus")));
        }
    }

    // column-wise: one batched predict per strategy
    let columns = views
        .par_iter()
        .map(|v| {
            let xs: Vec<_> = anchors
                .iter()
                .map(|&(d, i)| {
                    let doc = &corpus.documents[d];
                    let w = Window::around(i, v.strategy, doc.len());
                    v.vocab.vectorize(&w.tokens(doc))
                })
                .collect();
            v.model.predict_positive(&xs)
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;

    Ok(anchors
        .iter()
        .enumerate()
        .map(|(row, &(d, i))| {
            let doc = &corpus.documents[d];
            AnchorPrediction {
                doc_id: doc.doc_id.clone(),
                doc: d,
                index: i,
                true_label: doc.sentences[i].label.class(),
                probabilities: views
                    .iter()
                    .zip(&columns)
                    .map(|(v, col)| (v.strategy.id, col[row]))
                    .collect(),
            }
        })
        .collect())
}

/// True labels and decisions of `cfg` over aligned predictions.
pub fn decide_all(preds: &[AnchorPrediction], cfg: &EnsembleConfig) -> Result<(Vec<Class>, Vec<Class>)> {
    let mut truth = Vec::with_capacity(preds.len());
    let mut decided = Vec::with_capacity(preds.len());
    for p in preds {
        truth.push(p.true_label);
        decided.push(vote(&p.probabilities, cfg)?);
    }
    Ok((truth, decided))
}
