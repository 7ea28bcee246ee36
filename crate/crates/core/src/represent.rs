//! Tokenization, vocabularies, and the two fixed-length document encodings:
//! binary bag-of-words and averaged word embeddings.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MIN_FREQ: usize = 5;

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    freqs: Vec<usize>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Keeps every type whose corpus frequency reaches `min_freq`, ordered by
    /// descending frequency and then lexicographically.
    pub fn build<S: AsRef<str>>(docs: &[Vec<S>], min_freq: usize) -> Result<Self> {
        if min_freq == 0 {
            return Err(Error::InvalidArgument("min_freq must be at least 1".into()));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for doc in docs {
            for tok in doc {
                *counts.entry(tok.as_ref()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> =
            counts.into_iter().filter(|&(_, c)| c >= min_freq).collect();
        if kept.is_empty() {
            return Err(Error::EmptyVocabulary(min_freq));
        }
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let tokens = kept.iter().map(|(t, _)| t.to_string()).collect();
        let freqs = kept.iter().map(|&(_, c)| c).collect();
        Ok(Self::from_parts(tokens, freqs))
    }

    fn from_parts(tokens: Vec<String>, freqs: Vec<usize>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            tokens,
            freqs,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn freq(&self, index: usize) -> usize {
        self.freqs[index]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Rebuilds the lookup map after deserialization.
    pub fn reindex(&mut self) {
        *self = Self::from_parts(std::mem::take(&mut self.tokens), std::mem::take(&mut self.freqs));
    }

    /// Writes `token \t index \t freq` rows.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (i, (t, f)) in self.tokens.iter().zip(&self.freqs).enumerate() {
            writeln!(out, "{t}\t{i}\t{f}")?;
        }
        Ok(())
    }
}

/// Binary presence vector over a vocabulary. Values are implicitly 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseVec {
    indices: Vec<usize>,
    dim: usize,
}

impl SparseVec {
    pub fn new(mut indices: Vec<usize>, dim: usize) -> Self {
        indices.sort_unstable();
        indices.dedup();
        debug_assert!(indices.last().is_none_or(|&i| i < dim));
        Self { indices, dim }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for &i in &self.indices {
            v[i] = 1.0;
        }
        v
    }
}

pub fn bow_vector<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary) -> SparseVec {
    let idx = tokens
        .iter()
        .filter_map(|t| vocab.index_of(t.as_ref()))
        .collect();
    SparseVec::new(idx, vocab.len())
}

pub type DenseVec = Vec<f64>;

/// Dense token vectors of a common dimension. Unknown tokens have no vector
/// and are skipped by every consumer.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
    dim: usize,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1, "embedding dimension must be positive");
        Self {
            tokens: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
            dim,
        }
    }

    pub fn insert(&mut self, token: &str, vector: &[f64]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                line: self.tokens.len() + 2,
                expected: self.dim,
                found: vector.len(),
            });
        }
        if self.index.contains_key(token) {
            return Err(Error::DuplicateToken(token.to_string()));
        }
        self.index.insert(token.to_string(), self.tokens.len());
        self.tokens.push(token.to_string());
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn row(&self, id: usize) -> &[f64] {
        &self.data[id * self.dim..(id + 1) * self.dim]
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.id(token).map(|i| self.row(i))
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{} {}", self.len(), self.dim)?;
        for (i, t) in self.tokens.iter().enumerate() {
            write!(out, "{t}")?;
            for v in self.row(i) {
                write!(out, " {v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_text(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    /// Parses the plain-text format: a `V D` header, then `token v1 .. vD` rows.
    pub fn read_text<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = match lines.next() {
            Some(l) => l.map_err(|e| Error::io("<embeddings>", e))?,
            None => return Err(Error::MalformedHeader("empty input".into())),
        };
        let parts: Vec<&str> = header.split_whitespace().collect();
        let (count, dim) = match parts.as_slice() {
            [v, d] => match (v.parse::<usize>(), d.parse::<usize>()) {
                (Ok(v), Ok(d)) if d >= 1 => (v, d),
                _ => return Err(Error::MalformedHeader(header.clone())),
            },
            _ => return Err(Error::MalformedHeader(header.clone())),
        };
        let mut table = Self::new(dim);
        let mut buf = Vec::with_capacity(dim);
        for (n, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io("<embeddings>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let token = fields.next().unwrap_or_default();
            buf.clear();
            for f in fields {
                let v: f64 = f
                    .parse()
                    .map_err(|_| Error::Data(format!("line {}: bad float `{f}`", n + 2)))?;
                buf.push(v);
            }
            if buf.len() != dim {
                return Err(Error::DimensionMismatch {
                    line: n + 2,
                    expected: dim,
                    found: buf.len(),
                });
            }
            table.insert(token, &buf)?;
        }
        if table.len() != count {
            return Err(Error::MalformedHeader(format!(
                "header declares {count} rows, found {}",
                table.len()
            )));
        }
        Ok(table)
    }
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    EmbeddingTable::read_text(BufReader::new(f))
}

/// Random unit-norm vectors for every vocabulary entry, for tests and
/// synthetic runs where no pretrained table is available.
pub fn synth_embeddings(vocab: &[String], dim: usize, seed: u64) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = EmbeddingTable::new(dim);
    let mut v = vec![0.0; dim];
    for tok in vocab {
        loop {
            for x in v.iter_mut() {
                *x = rng.random_range(-1.0..1.0);
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                v.iter_mut().for_each(|x| *x /= norm);
                break;
            }
        }
        // duplicates in `vocab` keep their first vector
        let _ = table.insert(tok, &v);
    }
    table
}

/// How [`we_vector`] weighs repeated tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Each distinct type present counts once.
    #[default]
    Types,
    /// Every token occurrence counts.
    Tokens,
}

/// Mean embedding of the in-table word types present in `tokens`; the zero
/// vector when none are present.
pub fn we_vector<S: AsRef<str>>(tokens: &[S], table: &EmbeddingTable) -> DenseVec {
    we_vector_with(tokens, table, Averaging::Types)
}

pub fn we_vector_with<S: AsRef<str>>(
    tokens: &[S],
    table: &EmbeddingTable,
    mode: Averaging,
) -> DenseVec {
    let mut out = vec![0.0; table.dim()];
    // sorted order keeps the floating-point sum independent of token order
    let mut ids: Vec<usize> = tokens.iter().filter_map(|t| table.id(t.as_ref())).collect();
    ids.sort_unstable();
    if mode == Averaging::Types {
        let set: BTreeSet<usize> = ids.into_iter().collect();
        ids = set.into_iter().collect();
    }
    if ids.is_empty() {
        return out;
    }
    for &id in &ids {
        for (o, v) in out.iter_mut().zip(table.row(id)) {
            *o += v;
        }
    }
    let n = ids.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}
