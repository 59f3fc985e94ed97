//! Question/answer store with inverse-document-frequency lexical retrieval.
//!
//! A pair's score for a query is the sum of `1 / df(t)` over the distinct
//! content tokens `t` it shares with the query, where `df(t)` counts the
//! pairs whose question or tags contain `t`. Records that share no token
//! with a query leave every `df` it depends on unchanged, so appending them
//! never reorders that query's results.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::text;

pub const DEFAULT_K: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default)]
    pub id: String,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum KbError {
    #[error("malformed knowledge record on line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("duplicate knowledge id `{0}`")]
    DuplicateId(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scored {
    pub pair: QaPair,
    pub score: f64,
}

#[derive(Clone, Debug, Default)]
pub struct KbIndex {
    pairs: Vec<QaPair>,
    terms: Vec<Vec<String>>,
    df: BTreeMap<String, usize>,
}

impl KbIndex {
    pub fn new(pairs: Vec<QaPair>) -> Result<Self, KbError> {
        let mut seen = BTreeMap::new();
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        let mut terms = Vec::with_capacity(pairs.len());
        for p in &pairs {
            if seen.insert(p.id.clone(), ()).is_some() {
                return Err(KbError::DuplicateId(p.id.clone()));
            }
            let mut set = text::content_token_set(&p.question);
            for tag in &p.tags {
                set.extend(text::content_tokens(tag));
            }
            set.sort();
            set.dedup();
            for t in &set {
                *df.entry(t.clone()).or_default() += 1;
            }
            terms.push(set);
        }
        Ok(Self { pairs, terms, df })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[QaPair] {
        &self.pairs
    }

    /// Top `k` pairs sharing at least one content token with the query,
    /// best first, ties by ascending id.
    pub fn retrieve(&self, query: &str, k: usize) -> Vec<Scored> {
        let q = text::content_token_set(query);
        let mut hits: Vec<Scored> = self
            .terms
            .iter()
            .zip(&self.pairs)
            .filter_map(|(terms, pair)| {
                let score: f64 =
                    q.iter().filter(|t| terms.binary_search(t).is_ok()).map(|t| 1.0 / self.df[t] as f64).sum();
                (score > 0.0).then(|| Scored { pair: pair.clone(), score })
            })
            .collect();
        hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.pair.id.cmp(&b.pair.id)));
        hits.truncate(k);
        hits
    }
}

/// Builds an index from line-delimited `{question, answer, tags, id}`
/// records. A missing id becomes the zero-padded line number.
pub fn index_kb(source: &str) -> Result<KbIndex, KbError> {
    let mut pairs = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let malformed = |message: String| KbError::MalformedRecord { line: i + 1, message };
        let mut pair: QaPair = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        if pair.question.trim().is_empty() || pair.answer.trim().is_empty() {
            return Err(malformed("empty question or answer".into()));
        }
        if pair.id.is_empty() {
            pair.id = alloc::format!("{:05}", i + 1);
        }
        pairs.push(pair);
    }
    KbIndex::new(pairs)
}

pub fn retrieve(index: &KbIndex, query: &str, k: usize) -> Vec<Scored> {
    index.retrieve(query, k)
}
