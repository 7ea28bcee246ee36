//! Biography extraction from line-oriented web text, labelling, de-duplication,
//! and stratified / gender-balanced splitting.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::represent::tokenize;

/// The 28 occupations used as the default label set.
pub const DEFAULT_OCCUPATIONS: [&str; 28] = [
    "accountant",
    "architect",
    "attorney",
    "chiropractor",
    "comedian",
    "composer",
    "dentist",
    "dietitian",
    "dj",
    "filmmaker",
    "interior designer",
    "journalist",
    "model",
    "nurse",
    "painter",
    "paralegal",
    "pastor",
    "personal trainer",
    "photographer",
    "physician",
    "poet",
    "professor",
    "psychologist",
    "rapper",
    "software engineer",
    "surgeon",
    "teacher",
    "yoga teacher",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
}

impl Gender {
    pub const BOTH: [Gender; 2] = [Gender::Female, Gender::Male];

    pub fn other(self) -> Gender {
        match self {
            Gender::Female => Gender::Male,
            Gender::Male => Gender::Female,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Gender::Female => 0,
            Gender::Male => 1,
        }
    }

    pub fn from_index(i: usize) -> Gender {
        if i == 0 {
            Gender::Female
        } else {
            Gender::Male
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Female => "female",
            Gender::Male => "male",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "female" | "f" => Ok(Gender::Female),
            "male" | "m" => Ok(Gender::Male),
            _ => Err(Error::Data(format!("unknown gender `{s}`"))),
        }
    }
}

/// Surface occupation titles and the canonical labels they map to.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupationLexicon {
    surface: BTreeMap<String, String>,
    canonical: Vec<String>,
    // surfaces as word lists, longest first
    patterns: Vec<Vec<String>>,
}

impl OccupationLexicon {
    pub fn new<I, S, T>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, T)>,
        S: AsRef<str>,
        T: AsRef<str>,
    {
        let mut surface = BTreeMap::new();
        for (s, c) in entries {
            let s = normalize_title(s.as_ref());
            let c = normalize_title(c.as_ref());
            if s.is_empty() || c.is_empty() {
                return Err(Error::Data("empty lexicon entry".into()));
            }
            if let Some(prev) = surface.insert(s.clone(), c.clone()) {
                if prev != c {
                    return Err(Error::Data(format!(
                        "surface title `{s}` maps to both `{prev}` and `{c}`"
                    )));
                }
            }
        }
        if surface.is_empty() {
            return Err(Error::Data("lexicon is empty".into()));
        }
        let canonical: BTreeSet<String> = surface.values().cloned().collect();
        let mut patterns: Vec<Vec<String>> = surface
            .keys()
            .map(|s| s.split(' ').map(String::from).collect())
            .collect();
        patterns.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        Ok(Self {
            surface,
            canonical: canonical.into_iter().collect(),
            patterns,
        })
    }

    pub fn default_lexicon() -> Self {
        Self::new(DEFAULT_OCCUPATIONS.iter().map(|o| (*o, *o))).expect("built-in lexicon")
    }

    /// Reads `surface_title \t canonical_id` rows.
    pub fn read_tsv<R: BufRead>(reader: R) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<lexicon>", e))?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split('\t');
            match (cols.next(), cols.next(), cols.next()) {
                (Some(s), Some(c), None) => entries.push((s.to_string(), c.to_string())),
                _ => {
                    return Err(Error::Data(format!(
                        "lexicon line {}: expected two tab-separated columns",
                        n + 1
                    )))
                }
            }
        }
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_tsv(BufReader::new(f))
    }

    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (s, c) in &self.surface {
            writeln!(out, "{s}\t{c}")?;
        }
        Ok(())
    }

    pub fn canonical_ids(&self) -> &[String] {
        &self.canonical
    }

    pub fn class_index(&self, occupation: &str) -> Option<usize> {
        self.canonical.binary_search_by(|c| c.as_str().cmp(occupation)).ok()
    }

    pub fn lookup(&self, surface: &str) -> Option<&str> {
        self.surface.get(surface).map(String::as_str)
    }
}

fn normalize_title(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Maps a surface title to its canonical occupation. A title that is not
/// listed is retried with its first word (a modifier such as "economics")
/// removed.
pub fn canonicalize_occupation(surface: &str, lexicon: &OccupationLexicon) -> Result<String> {
    let norm = normalize_title(surface);
    if let Some(c) = lexicon.lookup(&norm) {
        return Ok(c.to_string());
    }
    if let Some((_, rest)) = norm.split_once(' ') {
        if let Some(c) = lexicon.lookup(rest) {
            return Ok(c.to_string());
        }
    }
    Err(Error::UnknownTitle(surface.to_string()))
}

/// Fields recovered from a matching line, before gender inference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    pub first: String,
    pub middle: Option<String>,
    pub last: String,
    pub title: String,
    pub occupation: String,
    pub text: String,
}

fn is_capitalized_word(w: &str) -> bool {
    let mut chars = w.chars();
    match chars.next() {
        Some(c) if c.is_uppercase() => {}
        _ => return false,
    }
    chars.all(|c| c.is_alphabetic() || c == '-' || c == '\'')
}

fn is_initial(w: &str) -> bool {
    let mut chars = w.chars();
    matches!(
        (chars.next(), chars.next(), chars.next()),
        (Some(c), Some('.'), None) if c.is_uppercase()
    )
}

/// Matches `Name [Middle] Last is a(n) [modifier] title` at the start of a
/// line.
pub fn parse_line(line: &str, lexicon: &OccupationLexicon) -> Option<RawRecord> {
    let words: Vec<&str> = line.split_whitespace().take(12).collect();
    let (first, middle, last, rest) = match words.as_slice() {
        [f, l, "is", rest @ ..] if is_capitalized_word(f) && is_capitalized_word(l) => {
            (*f, None, *l, rest)
        }
        [f, m, l, "is", rest @ ..]
            if is_capitalized_word(f)
                && (is_capitalized_word(m) || is_initial(m))
                && is_capitalized_word(l) =>
        {
            (*f, Some(*m), *l, rest)
        }
        _ => return None,
    };
    let rest = match rest {
        ["a" | "an", rest @ ..] => rest,
        _ => return None,
    };
    let (title_words, modifier) = match match_title(rest, lexicon) {
        Some(t) => (t, None),
        None => {
            let (m, tail) = rest.split_first()?;
            if !m.chars().all(|c| c.is_alphanumeric() || c == '-') {
                return None;
            }
            (match_title(tail, lexicon)?, Some(*m))
        }
    };
    let title = title_words.join(" ");
    let surface = match modifier {
        Some(m) => format!("{} {title}", m.to_lowercase()),
        None => title.clone(),
    };
    let occupation = canonicalize_occupation(&surface, lexicon).ok()?;
    Some(RawRecord {
        first: first.to_string(),
        middle: middle.map(String::from),
        last: last.to_string(),
        title: surface,
        occupation,
        text: line.to_string(),
    })
}

fn match_title<'a>(words: &[&str], lexicon: &'a OccupationLexicon) -> Option<&'a [String]> {
    'outer: for pat in &lexicon.patterns {
        if words.len() < pat.len() {
            continue;
        }
        for (i, p) in pat.iter().enumerate() {
            let w = words[i].to_lowercase();
            let ok = if i + 1 == pat.len() {
                let trimmed = w.trim_end_matches(|c: char| !c.is_alphanumeric());
                trimmed == p
            } else {
                w == *p
            };
            if !ok {
                continue 'outer;
            }
        }
        return Some(pat);
    }
    None
}

/// Splits off the first sentence. A terminator is `.`, `!` or `?` followed by
/// whitespace; a period closing a single-capital initial does not end the
/// sentence.
pub fn split_first_sentence(full_text: &str) -> (&str, &str) {
    for (i, c) in full_text.char_indices() {
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        let next = full_text[i + 1..].chars().next();
        if !next.is_some_and(char::is_whitespace) {
            continue;
        }
        if c == '.' {
            let word = full_text[..i].rsplit(char::is_whitespace).next().unwrap_or("");
            let mut wc = word.chars();
            if matches!((wc.next(), wc.next()), (Some(u), None) if u.is_uppercase()) {
                continue;
            }
        }
        let head = &full_text[..=i];
        let rest = full_text[i + 1..].trim_start();
        return (head, rest);
    }
    (full_text, "")
}

const FEMALE_PRONOUNS: [&str; 4] = ["she", "her", "hers", "herself"];
const MALE_PRONOUNS: [&str; 4] = ["he", "him", "his", "himself"];

/// Majority vote of gendered pronouns; `None` on a tie or no pronouns.
pub fn infer_gender(feature_text: &str) -> Option<Gender> {
    let (mut f, mut m) = (0usize, 0usize);
    for tok in tokenize(feature_text) {
        if FEMALE_PRONOUNS.contains(&tok.as_str()) {
            f += 1;
        } else if MALE_PRONOUNS.contains(&tok.as_str()) {
            m += 1;
        }
    }
    match f.cmp(&m) {
        std::cmp::Ordering::Greater => Some(Gender::Female),
        std::cmp::Ordering::Less => Some(Gender::Male),
        std::cmp::Ordering::Equal => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Biography {
    pub first: String,
    pub middle: Option<String>,
    pub last: String,
    pub occupation: String,
    pub gender: Gender,
    pub text: String,
    pub feature_text: String,
}

impl Biography {
    pub fn token_count(&self) -> usize {
        self.text.split_whitespace().count()
    }
}

/// Why a line did not become a biography.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discard {
    NoPattern,
    NoGender,
}

pub fn extract_biography(
    line: &str,
    lexicon: &OccupationLexicon,
) -> std::result::Result<Biography, Discard> {
    let raw = parse_line(line, lexicon).ok_or(Discard::NoPattern)?;
    let (_, feature) = split_first_sentence(&raw.text);
    let gender = infer_gender(feature).ok_or(Discard::NoGender)?;
    let feature_text = feature.to_string();
    Ok(Biography {
        first: raw.first,
        middle: raw.middle,
        last: raw.last,
        occupation: raw.occupation,
        gender,
        feature_text,
        text: raw.text,
    })
}

fn middle_key(m: &str) -> String {
    m.trim_end_matches('.').to_lowercase()
}

fn middles_compatible(a: Option<&str>, b: Option<&str>) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => {
            let (a, b) = (middle_key(a), middle_key(b));
            a.starts_with(&b) || b.starts_with(&a)
        }
        _ => true,
    }
}

/// Collapses records sharing first name, last name and occupation whose
/// middle names are absent or prefix-compatible. The relation is closed
/// transitively; each class keeps its longest text (earliest on ties).
/// Survivors stay in input order.
pub fn dedup(records: Vec<Biography>) -> Vec<Biography> {
    let mut groups: HashMap<(&str, &str, &str), Vec<usize>> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        groups
            .entry((&r.first, &r.last, &r.occupation))
            .or_default()
            .push(i);
    }
    let mut parent: Vec<usize> = (0..records.len()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for members in groups.values() {
        for (a_pos, &a) in members.iter().enumerate() {
            for &b in &members[a_pos + 1..] {
                if middles_compatible(records[a].middle.as_deref(), records[b].middle.as_deref()) {
                    let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                    if ra != rb {
                        parent[ra.max(rb)] = ra.min(rb);
                    }
                }
            }
        }
    }
    let mut best: HashMap<usize, usize> = HashMap::new();
    for i in 0..records.len() {
        let root = find(&mut parent, i);
        let len = records[i].text.chars().count();
        best.entry(root)
            .and_modify(|cur| {
                if len > records[*cur].text.chars().count() {
                    *cur = i;
                }
            })
            .or_insert(i);
    }
    let keep: BTreeSet<usize> = best.into_values().collect();
    records
        .into_iter()
        .enumerate()
        .filter(|(i, _)| keep.contains(i))
        .map(|(_, r)| r)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSet {
    pub train: Vec<Biography>,
    pub validation: Vec<Biography>,
    pub test: Vec<Biography>,
    pub seed: u64,
}

pub const PAPER_SPLIT: [f64; 3] = [0.65, 0.10, 0.25];

/// Largest-remainder apportionment of `n` items over `ratios`; ties in the
/// fractional part go to the earlier slot.
pub fn apportion(n: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let quotas = ratios.map(|r| r * n as f64);
    let mut sizes = quotas.map(|q| q.floor() as usize);
    let assigned: usize = sizes.iter().sum();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &slot in order.iter().take(n.saturating_sub(assigned)) {
        sizes[slot] += 1;
    }
    sizes
}

fn check_ratios(ratios: &[f64; 3]) -> Result<()> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::RatioSum(*ratios));
    }
    Ok(())
}

/// Per-occupation seeded shuffle followed by a largest-remainder partition.
/// Occupations are visited in lexicographic order so the output depends only
/// on the input order and the seed.
pub fn stratified_split(records: &[Biography], ratios: [f64; 3], seed: u64) -> Result<SplitSet> {
    check_ratios(&ratios)?;
    let mut by_occ: BTreeMap<&str, Vec<&Biography>> = BTreeMap::new();
    for r in records {
        by_occ.entry(&r.occupation).or_default().push(r);
    }
    for (occ, rs) in &by_occ {
        if rs.len() < 3 {
            return Err(Error::InsufficientRecords {
                occupation: occ.to_string(),
                count: rs.len(),
                required: 3,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SplitSet {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        seed,
    };
    for (_, mut rs) in by_occ {
        rs.shuffle(&mut rng);
        let [a, b, _] = apportion(rs.len(), &ratios);
        out.train.extend(rs[..a].iter().map(|r| (*r).clone()));
        out.validation.extend(rs[a..a + b].iter().map(|r| (*r).clone()));
        out.test.extend(rs[a + b..].iter().map(|r| (*r).clone()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSplitSet {
    pub train: Vec<Biography>,
    pub validation: Vec<Biography>,
    pub test: Vec<Biography>,
    pub retained_occupations: Vec<String>,
}

fn cells(records: &[Biography]) -> BTreeMap<(&str, Gender), Vec<usize>> {
    let mut m: BTreeMap<(&str, Gender), Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        m.entry((&r.occupation, r.gender)).or_default().push(i);
    }
    m
}

/// Occupation- and gender-balanced subsample for gender-recovery probes.
///
/// Occupations with fewer than `min_per_cell` training records for either
/// gender are dropped. Training cells get `per_cell_train` records each;
/// validation and test cells all get the size of that split's smallest
/// retained cell.
pub fn balanced_subsample(
    split: &SplitSet,
    min_per_cell: usize,
    per_cell_train: usize,
    seed: u64,
) -> Result<ProbeSplitSet> {
    if per_cell_train > min_per_cell {
        return Err(Error::InvalidArgument(format!(
            "per_cell_train ({per_cell_train}) exceeds min_per_cell ({min_per_cell})"
        )));
    }
    let train_cells = cells(&split.train);
    let occupations: BTreeSet<&str> = split.train.iter().map(|r| r.occupation.as_str()).collect();
    let retained: Vec<String> = occupations
        .into_iter()
        .filter(|o| {
            Gender::BOTH.iter().all(|g| {
                train_cells.get(&(*o, *g)).map_or(0, Vec::len) >= min_per_cell
            })
        })
        .map(String::from)
        .collect();
    if retained.is_empty() {
        return Err(Error::EmptySubsample);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample = |records: &[Biography], per_cell: Option<usize>| -> Vec<Biography> {
        let cells = cells(records);
        let sizes = retained
            .iter()
            .flat_map(|o| Gender::BOTH.iter().map(move |g| (o.as_str(), *g)))
            .map(|k| cells.get(&k).map_or(0, Vec::len));
        let n = per_cell.unwrap_or_else(|| sizes.min().unwrap_or(0));
        let mut picked = Vec::new();
        for occ in &retained {
            for g in Gender::BOTH {
                let mut idx = cells.get(&(occ.as_str(), g)).cloned().unwrap_or_default();
                idx.shuffle(&mut rng);
                idx.truncate(n);
                idx.sort_unstable();
                picked.extend(idx);
            }
        }
        picked.into_iter().map(|i| records[i].clone()).collect()
    };
    let train = sample(&split.train, Some(per_cell_train));
    let validation = sample(&split.validation, None);
    let test = sample(&split.test, None);
    Ok(ProbeSplitSet {
        train,
        validation,
        test,
        retained_occupations: retained,
    })
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Biography>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bio: Biography = serde_json::from_str(&line).map_err(|e| {
            Error::Data(format!("{}:{}: {e}", path.display(), n + 1))
        })?;
        out.push(bio);
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, records: &[Biography]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtractionStats {
    pub lines: usize,
    pub malformed_utf8: usize,
    pub discarded: BTreeMap<Discard, usize>,
    pub extracted: usize,
    pub duplicates_removed: usize,
    pub per_occupation: BTreeMap<String, usize>,
}

/// Reads raw paragraphs (one per line), keeps the biographies, and
/// de-duplicates them. Lines that are not valid UTF-8 are counted and skipped.
pub fn extract_from_reader<R: BufRead>(
    reader: R,
    lexicon: &OccupationLexicon,
    stats: &mut ExtractionStats,
    out: &mut Vec<Biography>,
) -> std::io::Result<()> {
    for chunk in reader.split(b'\n') {
        let chunk = chunk?;
        stats.lines += 1;
        let line = match std::str::from_utf8(&chunk) {
            Ok(s) => s.trim_end_matches('\r'),
            Err(_) => {
                stats.malformed_utf8 += 1;
                continue;
            }
        };
        match extract_biography(line, lexicon) {
            Ok(b) => out.push(b),
            Err(d) => *stats.discarded.entry(d).or_default() += 1,
        }
    }
    Ok(())
}

pub fn finalize_extraction(records: Vec<Biography>, stats: &mut ExtractionStats) -> Vec<Biography> {
    let before = records.len();
    let kept = dedup(records);
    stats.extracted = kept.len();
    stats.duplicates_removed = before - kept.len();
    stats.per_occupation.clear();
    for r in &kept {
        *stats.per_occupation.entry(r.occupation.clone()).or_default() += 1;
    }
    kept
}
