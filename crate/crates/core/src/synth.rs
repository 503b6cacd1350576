//! Seeded synthetic article generator with a closed-form Bayes rate.
//!
//! Sentence labels follow a two-state Markov chain started from its
//! stationary distribution. Every sentence is filler drawn from a Zipf
//! distribution over pronounceable pseudo-words. Two kinds of cue words are
//! planted, one per sentence at most:
//!
//! - an anchor cue, with probability `anchor_cue_pos` in sentences with links
//!   and `anchor_cue_neg` in the others;
//! - a context cue, with probability `context_cue_near` in sentences next to
//!   a sentence with links and `context_cue_far` elsewhere.
//!
//! Sentence lengths do not depend on labels, and cue words replace filler
//! words, so a bag of words over a window carries label information only
//! through the number of sentences with each cue. [`bayes_weighted_f1`]
//! integrates over label configurations to get the balanced-class Bayes
//! decision on those two counts for any window shape, ignoring document
//! edges.

use std::collections::BTreeMap;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::CITATION_MARKER;
use crate::error::{Error, Result};
use crate::util::{rng_for, write_atomic, RngStream};

pub const ANCHOR_CUES: [&str; 6] = [
    "proposed",
    "reported",
    "introduced",
    "studied",
    "developed",
    "established",
];

pub const CONTEXT_CUES: [&str; 6] = [
    "previous",
    "earlier",
    "known",
    "recently",
    "extensively",
    "widely",
];

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub documents: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    /// Words per sentence, inclusive bounds.
    pub min_words: usize,
    pub max_words: usize,
    pub filler_words: usize,
    pub zipf_exponent: f64,
    /// P(next sentence has links | this one has).
    pub p_pos_after_pos: f64,
    /// P(next sentence has links | this one has not).
    pub p_pos_after_neg: f64,
    pub anchor_cue_pos: f64,
    pub anchor_cue_neg: f64,
    pub context_cue_near: f64,
    pub context_cue_far: f64,
    pub math_rate: f64,
    pub comma_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            documents: 400,
            min_sentences: 30,
            max_sentences: 60,
            min_words: 22,
            max_words: 58,
            filler_words: 1500,
            zipf_exponent: 1.0,
            p_pos_after_pos: 0.5,
            p_pos_after_neg: 0.12,
            anchor_cue_pos: 0.65,
            anchor_cue_neg: 0.10,
            context_cue_near: 0.75,
            context_cue_far: 0.08,
            math_rate: 0.03,
            comma_rate: 0.08,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            self.p_pos_after_pos,
            self.p_pos_after_neg,
            self.anchor_cue_pos,
            self.anchor_cue_neg,
            self.context_cue_near,
            self.context_cue_far,
            self.math_rate,
            self.comma_rate,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("synthetic probabilities must lie in [0, 1]".into()));
        }
        if self.p_pos_after_neg == 0.0 || self.p_pos_after_pos == 1.0 {
            return Err(Error::Config("label chain must be able to reach both states".into()));
        }
        if self.documents == 0
            || self.min_sentences == 0
            || self.min_sentences > self.max_sentences
            || self.min_words < 2
            || self.min_words > self.max_words
            || self.filler_words == 0
            || self.filler_words > 100_000
        {
            return Err(Error::Config("bad synthetic corpus dimensions".into()));
        }
        Ok(())
    }

    pub fn markov(&self) -> LabelChain {
        LabelChain {
            p11: self.p_pos_after_pos,
            p01: self.p_pos_after_neg,
        }
    }

    pub fn cues(&self) -> CueRates {
        CueRates {
            anchor_pos: self.anchor_cue_pos,
            anchor_neg: self.anchor_cue_neg,
            context_near: self.context_cue_near,
            context_far: self.context_cue_far,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelChain {
    pub p11: f64,
    pub p01: f64,
}

impl LabelChain {
    /// Stationary probability of a sentence with links.
    pub fn stationary(&self) -> f64 {
        self.p01 / (1.0 - self.p11 + self.p01)
    }

    /// P(next = b | current = a). The chain is reversible, so this is also
    /// the backward transition.
    pub fn step(&self, a: bool, b: bool) -> f64 {
        let p = if a { self.p11 } else { self.p01 };
        if b {
            p
        } else {
            1.0 - p
        }
    }

    pub fn sample_labels(&self, len: usize, rng: &mut impl Rng) -> Vec<bool> {
        let mut labels = Vec::with_capacity(len);
        let mut cur = rng.gen_bool(self.stationary());
        for _ in 0..len {
            labels.push(cur);
            cur = rng.gen_bool(if cur { self.p11 } else { self.p01 });
        }
        labels
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CueRates {
    pub anchor_pos: f64,
    pub anchor_neg: f64,
    pub context_near: f64,
    pub context_far: f64,
}

impl CueRates {
    pub fn anchor(&self, positive: bool) -> f64 {
        if positive {
            self.anchor_pos
        } else {
            self.anchor_neg
        }
    }

    pub fn context(&self, near_positive: bool) -> f64 {
        if near_positive {
            self.context_near
        } else {
            self.context_far
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDocument {
    pub doc_id: String,
    pub sentences: Vec<String>,
    pub labels: Vec<bool>,
}

/// Pseudo-words of two or three consonant-vowel syllables, distinct, in a
/// seeded order. None collides with a cue word since all end in a vowel.
fn filler_lexicon(count: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut words = Vec::with_capacity(count);
    let mut seen = std::collections::HashSet::new();
    while words.len() < count {
        let syllables = rng.gen_range(2..=3);
        let mut w = String::with_capacity(6);
        for _ in 0..syllables {
            w.push(*CONSONANTS.choose(rng).expect("non-empty") as char);
            w.push(*VOWELS.choose(rng).expect("non-empty") as char);
        }
        if seen.insert(w.clone()) {
            words.push(w);
        }
    }
    words
}

pub struct SynthGenerator {
    cfg: SynthConfig,
    lexicon: Vec<String>,
    zipf: WeightedIndex<f64>,
}

impl SynthGenerator {
    pub fn new(cfg: SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng_for(cfg.seed, RngStream::Synth);
        let lexicon = filler_lexicon(cfg.filler_words, &mut rng);
        let weights: Vec<f64> = (1..=cfg.filler_words)
            .map(|r| 1.0 / (r as f64).powf(cfg.zipf_exponent))
            .collect();
        let zipf = WeightedIndex::new(weights)
            .map_err(|e| Error::Config(format!("zipf weights: {e}")))?;
        Ok(Self { cfg, lexicon, zipf })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.cfg
    }

    /// Document `i`; each document draws from its own stream so any one
    /// can be regenerated alone.
    pub fn document(&self, i: usize) -> SynthDocument {
        let mut rng = rng_for(
            self.cfg.seed.wrapping_add(1 + i as u64),
            RngStream::Synth,
        );
        let len = rng.gen_range(self.cfg.min_sentences..=self.cfg.max_sentences);
        let labels = self.cfg.markov().sample_labels(len, &mut rng);
        let sentences = (0..len)
            .map(|j| {
                let near = (j > 0 && labels[j - 1]) || (j + 1 < len && labels[j + 1]);
                self.sentence(labels[j], near, &mut rng)
            })
            .collect();
        SynthDocument {
            doc_id: format!("synth-{i:05}"),
            sentences,
            labels,
        }
    }

    fn sentence(&self, positive: bool, near_positive: bool, rng: &mut ChaCha8Rng) -> String {
        let cues = self.cfg.cues();
        let n = rng.gen_range(self.cfg.min_words..=self.cfg.max_words);
        let mut words: Vec<String> = (0..n)
            .map(|_| {
                if rng.gen_bool(self.cfg.math_rate) {
                    format!("@xmath{}", rng.gen_range(0..1000))
                } else {
                    self.lexicon[self.zipf.sample(rng)].clone()
                }
            })
            .collect();
        // cue words overwrite distinct filler slots, keeping the length
        let mut slots: Vec<usize> = (0..n).collect();
        slots.shuffle(rng);
        let mut slots = slots.into_iter();
        if rng.gen_bool(cues.anchor(positive)) {
            words[slots.next().expect("n >= 2")] = ANCHOR_CUES.choose(rng).expect("non-empty").to_string();
        }
        if rng.gen_bool(cues.context(near_positive)) {
            words[slots.next().expect("n >= 2")] = CONTEXT_CUES.choose(rng).expect("non-empty").to_string();
        }
        if positive {
            let markers = rng.gen_range(1..=2);
            for _ in 0..markers {
                let at = rng.gen_range(1..=words.len());
                words.insert(at, CITATION_MARKER.to_string());
            }
        }
        let mut text = String::new();
        for (k, w) in words.iter().enumerate() {
            if k > 0 {
                text.push(' ');
            }
            text.push_str(w);
            if k + 1 < words.len() && rng.gen_bool(self.cfg.comma_rate) {
                text.push(',');
            }
        }
        text.push('.');
        text
    }

    pub fn documents(&self) -> impl Iterator<Item = SynthDocument> + '_ {
        (0..self.cfg.documents).map(|i| self.document(i))
    }

    /// The corpus as jsonlines in the `article_id`/`article_text` layout.
    pub fn to_jsonl(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for d in self.documents() {
            let line = serde_json::json!({
                "article_id": d.doc_id,
                "article_text": d.sentences,
            });
            serde_json::to_writer(&mut out, &line)?;
            out.push(b'\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_jsonl()?)
    }
}

/// Joint distribution of (sentences with an anchor cue, sentences with a
/// context cue) in a window of `before + 1 + after` sentences.
pub type CueCountDist = BTreeMap<(usize, usize), f64>;

/// Window count distribution for one class, away from document edges.
///
/// Positive windows are centered on a sentence with links. Negative windows
/// are runs of sentences without links; their outer neighbors carry links
/// with probability `p01` each, by reversibility of the chain.
pub fn cue_count_distribution(
    before: usize,
    after: usize,
    chain: &LabelChain,
    cues: &CueRates,
    positive: bool,
) -> CueCountDist {
    let n = before as isize;
    let m = after as isize;
    // offsets -n-1 ..= m+1, anchor at 0
    let span = (before + after + 3) as u32;
    let at = |labels: u32, o: isize| labels >> ((o + n + 1) as u32) & 1 == 1;
    let mut out = CueCountDist::new();
    for labels in 0..(1u32 << span) {
        let weight = if positive {
            if !at(labels, 0) {
                continue;
            }
            let mut w = 1.0;
            for o in 1..=m + 1 {
                w *= chain.step(at(labels, o - 1), at(labels, o));
            }
            for o in (-n - 1..=-1).rev() {
                w *= chain.step(at(labels, o + 1), at(labels, o));
            }
            w
        } else {
            if (-n..=m).any(|o| at(labels, o)) {
                continue;
            }
            chain.step(false, at(labels, m + 1)) * chain.step(false, at(labels, -n - 1))
        };
        if weight == 0.0 {
            continue;
        }
        let mut dist: CueCountDist = [((0, 0), 1.0)].into_iter().collect();
        for o in -n..=m {
            let a = cues.anchor(at(labels, o));
            let c = cues.context(at(labels, o - 1) || at(labels, o + 1));
            let mut next = CueCountDist::new();
            for (&(x, y), &p) in &dist {
                for (dx, px) in [(0, 1.0 - a), (1, a)] {
                    for (dy, py) in [(0, 1.0 - c), (1, c)] {
                        *next.entry((x + dx, y + dy)).or_insert(0.0) += p * px * py;
                    }
                }
            }
            dist = next;
        }
        for (k, p) in dist {
            *out.entry(k).or_insert(0.0) += weight * p;
        }
    }
    let total: f64 = out.values().sum();
    out.values_mut().for_each(|p| *p /= total);
    out
}

/// Weighted F1 of the Bayes decision between balanced classes, given only
/// the window's cue counts. Ties go to the negative class.
pub fn bayes_weighted_f1(before: usize, after: usize, chain: &LabelChain, cues: &CueRates) -> f64 {
    let pos = cue_count_distribution(before, after, chain, cues, true);
    let neg = cue_count_distribution(before, after, chain, cues, false);
    let mut tpr = 0.0;
    let mut fpr = 0.0;
    for (k, &p) in &pos {
        let q = neg.get(k).copied().unwrap_or(0.0);
        if p > q {
            tpr += p;
            fpr += q;
        }
    }
    balanced_weighted_f1(tpr, fpr)
}

/// Weighted F1 on equal class supports from true/false positive rates.
pub fn balanced_weighted_f1(tpr: f64, fpr: f64) -> f64 {
    let (tp, fn_, fp, tn) = (tpr, 1.0 - tpr, fpr, 1.0 - fpr);
    let f = |t: f64, a: f64, b: f64| if t > 0.0 { 2.0 * t / (2.0 * t + a + b) } else { 0.0 };
    0.5 * f(tp, fp, fn_) + 0.5 * f(tn, fn_, fp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{IngestConfig, SentenceProcessor};

    fn small() -> SynthConfig {
        SynthConfig {
            documents: 20,
            ..Default::default()
        }
    }

    #[test]
    fn generator_is_deterministic() {
        let a = SynthGenerator::new(small()).unwrap().to_jsonl().unwrap();
        let b = SynthGenerator::new(small()).unwrap().to_jsonl().unwrap();
        assert_eq!(a, b);
        let c = SynthGenerator::new(SynthConfig { seed: 8, ..small() })
            .unwrap()
            .to_jsonl()
            .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn labels_survive_ingestion() {
        let gen = SynthGenerator::new(small()).unwrap();
        let proc = SentenceProcessor::new(&IngestConfig::default()).unwrap();
        for d in gen.documents() {
            let doc = proc.document(d.doc_id.clone(), "mem".into(), &d.sentences);
            assert_eq!(doc.len(), d.labels.len());
            for (s, &l) in doc.sentences.iter().zip(&d.labels) {
                assert_eq!(s.label.has_links(), l);
                let cfg = gen.config();
                assert!((cfg.min_words..=cfg.max_words).contains(&s.word_count));
                assert!(!s.tokens.iter().any(|t| t == CITATION_MARKER));
            }
        }
    }

    #[test]
    fn lexicon_avoids_cues() {
        let mut rng = rng_for(1, RngStream::Synth);
        let lex = filler_lexicon(1500, &mut rng);
        for cue in ANCHOR_CUES.iter().chain(&CONTEXT_CUES) {
            assert!(!lex.iter().any(|w| w == cue));
        }
    }

    #[test]
    fn distributions_normalize() {
        let cfg = SynthConfig::default();
        for (b, a) in [(0, 0), (1, 1), (3, 2)] {
            for positive in [true, false] {
                let d = cue_count_distribution(b, a, &cfg.markov(), &cfg.cues(), positive);
                assert!((d.values().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(d.keys().all(|&(x, y)| x <= b + a + 1 && y <= b + a + 1));
            }
        }
    }

    #[test]
    fn single_sentence_rate_by_hand() {
        // lone anchor: positive has A w.p. .65, C w.p. P(a neighbor is positive)
        let cfg = SynthConfig::default();
        let chain = cfg.markov();
        let near_pos = 1.0 - (1.0 - chain.p11).powi(2);
        let near_neg = 1.0 - (1.0 - chain.p01).powi(2);
        let c_pos = near_pos * 0.75 + (1.0 - near_pos) * 0.08;
        let c_neg = near_neg * 0.75 + (1.0 - near_neg) * 0.08;
        let pos = cue_count_distribution(0, 0, &chain, &cfg.cues(), true);
        let neg = cue_count_distribution(0, 0, &chain, &cfg.cues(), false);
        assert!((pos[&(1, 1)] - 0.65 * c_pos).abs() < 1e-12);
        assert!((neg[&(0, 1)] - 0.90 * c_neg).abs() < 1e-12);
    }

    #[test]
    fn context_widens_the_bayes_gap() {
        let cfg = SynthConfig::default();
        let f = |b, a| bayes_weighted_f1(b, a, &cfg.markov(), &cfg.cues());
        let lone = f(0, 0);
        let three = f(1, 1);
        assert!((lone - 0.7714).abs() < 5e-4, "{lone}");
        assert!((three - 0.9054).abs() < 5e-4, "{three}");
        assert!(three - lone >= 0.10);
        assert!(f(4, 3) > three);
    }

    #[test]
    fn uninformative_cues_give_chance() {
        let cfg = SynthConfig {
            anchor_cue_pos: 0.3,
            anchor_cue_neg: 0.3,
            context_cue_near: 0.3,
            context_cue_far: 0.3,
            ..Default::default()
        };
        let f = bayes_weighted_f1(1, 1, &cfg.markov(), &cfg.cues());
        // no better than chance
        assert!(f <= 0.5 + 1e-9, "{f}");
    }
}
