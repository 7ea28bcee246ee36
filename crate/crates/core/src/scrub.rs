//! Deleting or swapping explicit gender indicators (first name, pronouns,
//! honorifics) in biography text.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::corpus::Biography;
use crate::error::{Error, Result};

/// Indicator words and their other-gender counterparts. Tokens listed
/// without a replacement are scrubbed but left untouched by swapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndicatorConfig {
    scrub: BTreeSet<String>,
    swap: BTreeMap<String, String>,
}

impl Default for IndicatorConfig {
    fn default() -> Self {
        let pairs = [
            ("she", "he"),
            ("her", "his"),
            ("hers", "his"),
            ("herself", "himself"),
            ("mrs", "mr"),
            ("ms", "mr"),
            ("he", "she"),
            ("him", "her"),
            ("his", "her"),
            ("himself", "herself"),
            ("mr", "ms"),
        ];
        let swap: BTreeMap<String, String> = pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Self {
            scrub: swap.keys().cloned().collect(),
            swap,
        }
    }
}

impl IndicatorConfig {
    /// Reads `token \t replacement` rows; an empty replacement marks a
    /// scrub-only token.
    pub fn read_tsv<R: BufRead>(reader: R) -> Result<Self> {
        let mut scrub = BTreeSet::new();
        let mut swap = BTreeMap::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<indicators>", e))?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (tok, rep) = line.split_once('\t').unwrap_or((line.as_str(), ""));
            let tok = tok.trim().to_lowercase();
            let rep = rep.trim().to_lowercase();
            if tok.is_empty() || !scrub.insert(tok.clone()) {
                return Err(Error::Data(format!("indicator line {}: empty or repeated token", n + 1)));
            }
            if !rep.is_empty() {
                swap.insert(tok, rep);
            }
        }
        Ok(Self { scrub, swap })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_tsv(BufReader::new(f))
    }

    pub fn scrub_list(&self) -> &BTreeSet<String> {
        &self.scrub
    }

    pub fn replacement(&self, token: &str) -> Option<&str> {
        self.swap.get(token).map(String::as_str)
    }

    pub fn is_indicator(&self, token: &str) -> bool {
        self.scrub.contains(token)
    }
}

/// Splits a whitespace token into leading punctuation, core, trailing
/// punctuation.
fn split_punct(tok: &str) -> (&str, &str, &str) {
    let start = tok.find(|c: char| c.is_alphanumeric()).unwrap_or(tok.len());
    let end = tok
        .rfind(|c: char| c.is_alphanumeric())
        .map_or(start, |i| i + tok[i..].chars().next().map_or(1, char::len_utf8));
    (&tok[..start], &tok[start..end], &tok[end..])
}

fn match_case(template: &str, word: &str) -> String {
    if template.chars().next().is_some_and(char::is_uppercase) {
        let mut c = word.chars();
        match c.next() {
            Some(f) => f.to_uppercase().chain(c).collect(),
            None => String::new(),
        }
    } else {
        word.to_string()
    }
}

/// Deletes the subject's first name and every scrub-list word. Remaining
/// tokens are rejoined with single spaces.
pub fn scrub_text(text: &str, first_name: &str, cfg: &IndicatorConfig) -> String {
    let first = first_name.to_lowercase();
    text.split_whitespace()
        .filter(|tok| {
            let core = split_punct(tok).1.to_lowercase();
            core != first && !cfg.is_indicator(&core)
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Deletes the subject's first name and replaces each mapped indicator with
/// its counterpart, keeping punctuation and leading capitalization.
pub fn swap_text(text: &str, first_name: &str, cfg: &IndicatorConfig) -> String {
    let first = first_name.to_lowercase();
    let mut out = Vec::new();
    for tok in text.split_whitespace() {
        let (pre, core, post) = split_punct(tok);
        let lower = core.to_lowercase();
        if lower == first {
            continue;
        }
        match cfg.replacement(&lower) {
            Some(rep) => out.push(format!("{pre}{}{post}", match_case(core, rep))),
            None => out.push(tok.to_string()),
        }
    }
    out.join(" ")
}

pub fn scrub(bio: &Biography, cfg: &IndicatorConfig) -> String {
    scrub_text(&bio.feature_text, &bio.first, cfg)
}

pub fn swap_indicators(bio: &Biography, cfg: &IndicatorConfig) -> String {
    swap_text(&bio.feature_text, &bio.first, cfg)
}
