//! N-gram count vectorization with document-frequency pruning.
//!
//! Each training sample acts as one "document" when counting frequencies.
//! N-grams are space-joined token runs; since tokens never contain spaces
//! the joined form is unambiguous.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::write_atomic;

pub const VOCABULARY_FORMAT: &str = "linkgap/vocabulary@1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorizerParams {
    pub ngram_low: usize,
    pub ngram_high: usize,
    /// Absolute minimum document frequency.
    pub min_df: usize,
    /// Maximum document frequency as a fraction of training samples.
    pub max_df: f64,
}

impl Default for VectorizerParams {
    fn default() -> Self {
        Self {
            ngram_low: 1,
            ngram_high: 2,
            min_df: 3,
            max_df: 0.7,
        }
    }
}

impl VectorizerParams {
    pub fn validate(&self) -> Result<()> {
        if self.ngram_low == 0 || self.ngram_low > self.ngram_high {
            return Err(Error::Config(format!(
                "invalid n-gram range ({}, {})",
                self.ngram_low, self.ngram_high
            )));
        }
        if !(self.max_df > 0.0 && self.max_df <= 1.0) {
            return Err(Error::Config(format!("max_df must be in (0, 1], got {}", self.max_df)));
        }
        Ok(())
    }
}

fn for_each_ngram<S: AsRef<str>>(
    tokens: &[S],
    low: usize,
    high: usize,
    buf: &mut String,
    mut f: impl FnMut(&str),
) {
    for n in low..=high {
        if n > tokens.len() {
            break;
        }
        for w in tokens.windows(n) {
            buf.clear();
            for (i, t) in w.iter().enumerate() {
                if i > 0 {
                    buf.push(' ');
                }
                buf.push_str(t.as_ref());
            }
            f(buf);
        }
    }
}

/// All n-grams of the given orders, with repetition, unigrams first.
pub fn extract_ngrams<S: AsRef<str>>(tokens: &[S], low: usize, high: usize) -> Vec<String> {
    let mut out = Vec::new();
    let mut buf = String::new();
    for_each_ngram(tokens, low, high, &mut buf, |g| out.push(g.to_string()));
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparseVector {
    pub dim: usize,
    /// (feature index, count), indices strictly increasing.
    pub entries: Vec<(u32, u32)>,
}

impl SparseVector {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    /// Builds from unsorted (index, count) pairs, merging duplicates.
    pub fn from_pairs(dim: usize, pairs: impl IntoIterator<Item = (u32, u32)>) -> Self {
        let mut acc: BTreeMap<u32, u32> = BTreeMap::new();
        for (i, c) in pairs {
            assert!((i as usize) < dim, "index {i} out of dimension {dim}");
            if c > 0 {
                *acc.entry(i).or_insert(0) += c;
            }
        }
        Self {
            dim,
            entries: acc.into_iter().collect(),
        }
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn total(&self) -> u64 {
        self.entries.iter().map(|&(_, c)| c as u64).sum()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for &(i, c) in &self.entries {
            v[i as usize] = c as f64;
        }
        v
    }

    pub fn is_well_formed(&self) -> bool {
        self.entries.windows(2).all(|w| w[0].0 < w[1].0)
            && self
                .entries
                .iter()
                .all(|&(i, c)| (i as usize) < self.dim && c > 0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub ngram: String,
    pub df: usize,
}

/// Retained n-grams; an entry's position in `entries` is its feature index.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    pub params: VectorizerParams,
    pub n_train_samples: usize,
    entries: Vec<VocabEntry>,
    index: HashMap<String, u32>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
            && self.n_train_samples == other.n_train_samples
            && self.entries == other.entries
    }
}

impl Vocabulary {
    fn from_entries(params: VectorizerParams, n_train_samples: usize, entries: Vec<VocabEntry>) -> Self {
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.ngram.clone(), i as u32))
            .collect();
        Self {
            params,
            n_train_samples,
            entries,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn get(&self, ngram: &str) -> Option<usize> {
        self.index.get(ngram).map(|&i| i as usize)
    }

    /// Counts of retained n-grams; out-of-vocabulary grams are ignored.
    pub fn vectorize<S: AsRef<str>>(&self, tokens: &[S]) -> SparseVector {
        let mut counts: HashMap<u32, u32> = HashMap::new();
        let mut buf = String::new();
        for_each_ngram(
            tokens,
            self.params.ngram_low,
            self.params.ngram_high,
            &mut buf,
            |g| {
                if let Some(&i) = self.index.get(g) {
                    *counts.entry(i).or_insert(0) += 1;
                }
            },
        );
        let mut entries: Vec<(u32, u32)> = counts.into_iter().collect();
        entries.sort_unstable_by_key(|&(i, _)| i);
        SparseVector {
            dim: self.len(),
            entries,
        }
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let file = VocabularyFile {
            format: VOCABULARY_FORMAT.into(),
            params: self.params.clone(),
            n_train_samples: self.n_train_samples,
            entries: self
                .entries
                .iter()
                .enumerate()
                .map(|(i, e)| (e.ngram.clone(), i, e.df))
                .collect(),
        };
        Ok(serde_json::to_vec(&file)?)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let file: VocabularyFile = serde_json::from_slice(bytes)
            .map_err(|e| Error::Format(format!("vocabulary: {e}")))?;
        if file.format != VOCABULARY_FORMAT {
            return Err(Error::Format(format!(
                "unsupported vocabulary format `{}`",
                file.format
            )));
        }
        file.params.validate()?;
        let mut entries = Vec::with_capacity(file.entries.len());
        let mut seen = HashSet::new();
        for (pos, (ngram, index, df)) in file.entries.into_iter().enumerate() {
            if index != pos || !seen.insert(ngram.clone()) {
                return Err(Error::Format(format!(
                    "vocabulary index table is not a bijection at `{ngram}`"
                )));
            }
            entries.push(VocabEntry { ngram, df });
        }
        Ok(Self::from_entries(file.params, file.n_train_samples, entries))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_json()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&bytes)
    }
}

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    format: String,
    params: VectorizerParams,
    n_train_samples: usize,
    entries: Vec<(String, usize, usize)>,
}

/// Builds the vocabulary from training samples only. Keeps n-gram `g` iff
/// `df(g) >= min_df` and `df(g) / N <= max_df`; indices follow
/// lexicographic n-gram order.
pub fn build_vocabulary<T, S>(train: &[T], params: &VectorizerParams) -> Result<Vocabulary>
where
    T: AsRef<[S]>,
    S: AsRef<str>,
{
    params.validate()?;
    if train.is_empty() {
        return Err(Error::Data("cannot build a vocabulary from zero samples".into()));
    }
    let n = train.len();
    let mut df: HashMap<String, usize> = HashMap::new();
    let mut seen: HashSet<String> = HashSet::new();
    let mut buf = String::new();
    for sample in train {
        seen.clear();
        for_each_ngram(
            sample.as_ref(),
            params.ngram_low,
            params.ngram_high,
            &mut buf,
            |g| {
                if !seen.contains(g) {
                    seen.insert(g.to_string());
                }
            },
        );
        for g in seen.drain() {
            *df.entry(g).or_insert(0) += 1;
        }
    }
    let mut kept: Vec<VocabEntry> = df
        .into_iter()
        .filter(|&(_, d)| d >= params.min_df && (d as f64) / (n as f64) <= params.max_df)
        .map(|(ngram, df)| VocabEntry { ngram, df })
        .collect();
    if kept.is_empty() {
        return Err(Error::Data(
            "vocabulary pruned to nothing; relax min_df/max_df".into(),
        ));
    }
    kept.sort_unstable_by(|a, b| a.ngram.cmp(&b.ngram));
    Ok(Vocabulary::from_entries(params.clone(), n, kept))
}
