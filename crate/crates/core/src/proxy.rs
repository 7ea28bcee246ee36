//! Proxy-word detection from attention weights: per-type attention mass of a
//! gender classifier, and per-occupation histograms of one word's attention
//! under the two indicator conditions.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::represent::EmbeddingTable;
use crate::rnn::GruAttentionModel;
use crate::stack::Condition;

/// Default number of histogram bins.
pub const DEFAULT_BINS: usize = 30;
/// Default number of training runs over which candidates must agree.
pub const DEFAULT_RUNS: usize = 3;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WordAttention {
    pub total: f64,
    pub count: usize,
}

impl WordAttention {
    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.total / self.count as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AttentionAggregate {
    /// Records that produced an attention trace. Records with no known
    /// token are skipped.
    pub records: usize,
    pub skipped: usize,
    pub words: BTreeMap<String, WordAttention>,
}

impl AttentionAggregate {
    pub fn get(&self, word: &str) -> WordAttention {
        self.words.get(word).copied().unwrap_or_default()
    }

    pub fn mass(&self) -> f64 {
        self.words.values().map(|w| w.total).sum()
    }
}

/// Sums each word type's attention weight over every occurrence in `docs`.
pub fn aggregate_attention<S: AsRef<str>>(
    model: &GruAttentionModel,
    docs: &[Vec<S>],
    table: &EmbeddingTable,
) -> Result<AttentionAggregate> {
    let mut agg = AttentionAggregate::default();
    for doc in docs {
        let trace = match model.attention_of(doc, table) {
            Ok(t) => t,
            Err(Error::EmptySequence) => {
                agg.skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        agg.records += 1;
        for (tok, &a) in trace.tokens.iter().zip(&trace.weights) {
            let w = agg.words.entry(tok.clone()).or_default();
            w.total += a;
            w.count += 1;
        }
    }
    Ok(agg)
}

/// The `k` types with the largest total attention, ties broken
/// lexicographically. Words in `exclude` are never returned.
pub fn proxy_candidates(agg: &AttentionAggregate, k: usize, exclude: &BTreeSet<String>) -> Vec<(String, f64)> {
    let mut ranked: Vec<(&String, f64)> = agg
        .words
        .iter()
        .filter(|(w, _)| !exclude.contains(*w))
        .map(|(w, a)| (w, a.total))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.into_iter().take(k).map(|(w, t)| (w.clone(), t)).collect()
}

/// Words present in every run's candidate list, in the first run's order.
pub fn stable_candidates(runs: &[Vec<String>]) -> Vec<String> {
    let Some((first, rest)) = runs.split_first() else {
        return Vec::new();
    };
    first
        .iter()
        .filter(|w| rest.iter().all(|r| r.contains(w)))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionHistogram {
    pub word: String,
    pub occupation: String,
    pub condition: Condition,
    /// `bins + 1` ascending edges; the last bin is closed on the right.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Mean of the raw weights, `None` when the word never occurs.
    pub mean: Option<f64>,
}

impl AttentionHistogram {
    /// Bins `values` uniformly on `[0, max value]`, or `[0, 1]` when empty.
    pub fn build(word: &str, occupation: &str, condition: Condition, values: &[f64], bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
        }
        let hi = values.iter().copied().fold(0.0, f64::max);
        let hi = if hi > 0.0 { hi } else { 1.0 };
        let edges = (0..=bins).map(|i| hi * i as f64 / bins as f64).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let b = ((v / hi) * bins as f64) as usize;
            counts[b.min(bins - 1)] += 1;
        }
        let mean = (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64);
        Ok(Self {
            word: word.to_string(),
            occupation: occupation.to_string(),
            condition,
            edges,
            counts,
            mean,
        })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramPair {
    pub occupation: String,
    pub with: AttentionHistogram,
    pub without: AttentionHistogram,
}

/// A tokenized record and its occupation.
pub type LabeledDoc = (Vec<String>, String);

/// A model and the records it is evaluated on.
pub type Pairing<'a> = (&'a GruAttentionModel, &'a [LabeledDoc]);

/// Attention weights of every occurrence of `word`, grouped by occupation.
fn word_weights(
    model: &GruAttentionModel,
    word: &str,
    docs: &[LabeledDoc],
    table: &EmbeddingTable,
) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (tokens, occupation) in docs {
        if !tokens.iter().any(|t| t == word) {
            continue;
        }
        let trace = match model.attention_of(tokens, table) {
            Ok(t) => t,
            Err(Error::EmptySequence) => continue,
            Err(e) => return Err(e),
        };
        let hits = trace
            .tokens
            .iter()
            .zip(&trace.weights)
            .filter(|(t, _)| *t == word)
            .map(|(_, &a)| a);
        out.entry(occupation.clone()).or_default().extend(hits);
    }
    Ok(out)
}

/// Per-occupation histograms of `word`'s attention, one from each
/// (model, split) pairing, listed in `order`. Any pairing is allowed,
/// including a model evaluated on the other condition's text.
pub fn attention_histograms(
    with: Pairing<'_>,
    without: Pairing<'_>,
    word: &str,
    table: &EmbeddingTable,
    order: &[String],
    bins: usize,
) -> Result<Vec<HistogramPair>> {
    let with = word_weights(with.0, word, with.1, table)?;
    let without = word_weights(without.0, word, without.1, table)?;
    let none = Vec::new();
    order
        .iter()
        .map(|occ| {
            Ok(HistogramPair {
                occupation: occ.clone(),
                with: AttentionHistogram::build(word, occ, Condition::With, with.get(occ).unwrap_or(&none), bins)?,
                without: AttentionHistogram::build(
                    word,
                    occ,
                    Condition::Without,
                    without.get(occ).unwrap_or(&none),
                    bins,
                )?,
            })
        })
        .collect()
}

/// Mean attention without indicators minus mean attention with them.
pub fn histogram_shift(with: &AttentionHistogram, without: &AttentionHistogram) -> Result<f64> {
    if with.word != without.word || with.occupation != without.occupation {
        return Err(Error::InvalidArgument(format!(
            "histograms differ: {}/{} vs {}/{}",
            with.word, with.occupation, without.word, without.occupation
        )));
    }
    match (with.mean, without.mean) {
        (Some(a), Some(b)) => Ok(b - a),
        _ => Err(Error::EmptyHistogram),
    }
}

/// Mean attention of `word` over all occurrences in `docs`.
pub fn mean_attention<S: AsRef<str>>(
    model: &GruAttentionModel,
    word: &str,
    docs: &[Vec<S>],
    table: &EmbeddingTable,
) -> Result<Option<f64>> {
    let agg = aggregate_attention(model, docs, table)?;
    Ok(agg.get(word).mean())
}
