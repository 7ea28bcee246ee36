//! Fairness quantities over classifier predictions: per-gender true positive
//! rates and gaps, gap/imbalance correlation, true-positive composition,
//! counterfactual swap statistics, probe accuracy and word/gender
//! correlations.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Biography, Gender};
use crate::error::{Error, Result};
use crate::scrub::{IndicatorConfig, swap_indicators};

/// Per-occupation counts and rates. Index 0 is female, 1 male.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub occupation: String,
    pub support: [usize; 2],
    pub correct: [usize; 2],
}

impl GapRow {
    pub fn tpr(&self, g: Gender) -> Option<f64> {
        let i = g.index();
        (self.support[i] > 0).then(|| self.correct[i] as f64 / self.support[i] as f64)
    }

    /// `TPR_g - TPR_~g`, undefined unless both cells have support.
    pub fn gap(&self, g: Gender) -> Option<f64> {
        Some(self.tpr(g)? - self.tpr(g.other())?)
    }

    /// Share of the occupation's records with gender `g`.
    pub fn pi(&self, g: Gender) -> f64 {
        let total = self.support[0] + self.support[1];
        self.support[g.index()] as f64 / total as f64
    }
}

/// Rows for every occupation with at least one gold record, in class order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapTable {
    pub rows: Vec<GapRow>,
}

impl GapTable {
    pub fn row(&self, occupation: &str) -> Option<&GapRow> {
        self.rows.iter().find(|r| r.occupation == occupation)
    }

    /// `(pi_female, gap_female)` for rows with a defined gap.
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter_map(|r| Some((r.pi(Gender::Female), r.gap(Gender::Female)?)))
            .collect()
    }

    /// `(pi_g, gap_g)` where `g` is each row's minority gender (female on a
    /// tie), for rows with a defined gap.
    pub fn underrepresented_points(&self) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter_map(|r| {
                let g = if r.pi(Gender::Female) <= 0.5 { Gender::Female } else { Gender::Male };
                Some((r.pi(g), r.gap(g)?))
            })
            .collect()
    }

    pub fn mean_abs_gap(&self) -> Option<f64> {
        let pts = self.points();
        (!pts.is_empty()).then(|| pts.iter().map(|p| p.1.abs()).sum::<f64>() / pts.len() as f64)
    }

    /// Occupations with a defined gap, by ascending female gap.
    pub fn occupations_by_gap(&self) -> Vec<String> {
        let mut rows: Vec<(&str, f64)> = self
            .rows
            .iter()
            .filter_map(|r| Some((r.occupation.as_str(), r.gap(Gender::Female)?)))
            .collect();
        rows.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
        rows.into_iter().map(|(o, _)| o.to_string()).collect()
    }
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::Alignment(a, b))
    }
}

pub fn gap_table(
    predicted: &[usize],
    gold: &[usize],
    genders: &[Gender],
    classes: &[String],
) -> Result<GapTable> {
    check_len(predicted.len(), gold.len())?;
    check_len(gold.len(), genders.len())?;
    let mut support = vec![[0usize; 2]; classes.len()];
    let mut correct = vec![[0usize; 2]; classes.len()];
    for ((&p, &y), g) in predicted.iter().zip(gold).zip(genders) {
        if y >= classes.len() {
            return Err(Error::InvalidArgument(format!("gold label {y} out of range")));
        }
        support[y][g.index()] += 1;
        if p == y {
            correct[y][g.index()] += 1;
        }
    }
    let rows = classes
        .iter()
        .enumerate()
        .filter(|(y, _)| support[*y] != [0, 0])
        .map(|(y, name)| GapRow {
            occupation: name.clone(),
            support: support[y],
            correct: correct[y],
        })
        .collect();
    Ok(GapTable { rows })
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_len(xs.len(), ys.len())?;
    if xs.len() < 2 {
        return Err(Error::TooFewPoints {
            required: 2,
            found: xs.len(),
        });
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Error::DegenerateVariance("x values are all equal"));
    }
    if syy == 0.0 {
        return Err(Error::DegenerateVariance("y values are all equal"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson r between `pi_female` and `gap_female`. Undefined rows are skipped.
pub fn gap_imbalance_correlation(table: &GapTable) -> Result<f64> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = table.points().into_iter().unzip();
    pearson(&xs, &ys)
}

/// Share of true positives with gender `g`, `P[G=g | Y=Yhat=y]`.
pub fn tp_composition(pi: f64, tpr_g: f64, tpr_other: f64) -> Result<f64> {
    for (name, v) in [("pi", pi), ("TPR_g", tpr_g), ("TPR_~g", tpr_other)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidArgument(format!("{name}={v} is outside [0, 1]")));
        }
    }
    let num = pi * tpr_g;
    let den = num + (1.0 - pi) * tpr_other;
    if den <= 0.0 {
        return Err(Error::ZeroDenominator);
    }
    Ok(num / den)
}

/// `|S_{g,(y1,y2)}|`: records of gender `g` and occupation `y2` predicted as
/// `y1 != y2` originally and as `y2` after swapping indicators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapCell {
    pub gender: Gender,
    pub from: usize,
    pub to: usize,
    pub count: usize,
    /// `|S_{g,y2}|`: all records of `g` that are correct only after swapping.
    pub denominator: usize,
}

impl SwapCell {
    /// Percentage in `[0, 100]`.
    pub fn percent(&self) -> f64 {
        100.0 * self.count as f64 / self.denominator as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwapReport {
    pub classes: Vec<String>,
    pub records: usize,
    pub changed: usize,
    /// Non-empty cells ordered by gender, then `to`, then `from`.
    pub cells: Vec<SwapCell>,
    /// Records correct both before and after swapping, per (gender, class).
    /// These are not part of any swap set.
    pub unchanged_correct: BTreeMap<(Gender, usize), usize>,
}

impl SwapReport {
    pub fn change_rate(&self) -> f64 {
        if self.records == 0 {
            0.0
        } else {
            self.changed as f64 / self.records as f64
        }
    }

    pub fn denominator(&self, g: Gender, to: usize) -> usize {
        self.cells
            .iter()
            .find(|c| c.gender == g && c.to == to)
            .map_or(0, |c| c.denominator)
    }

    /// The `k` largest cells for gender `g` by percentage, among cells whose
    /// denominator is at least `min_support`. Ties go to the smaller
    /// `(from, to)` class-index pair.
    pub fn top_pairs(&self, g: Gender, k: usize, min_support: usize) -> Vec<&SwapCell> {
        let mut cells: Vec<&SwapCell> = self
            .cells
            .iter()
            .filter(|c| c.gender == g && c.denominator >= min_support)
            .collect();
        cells.sort_by(|a, b| {
            b.percent()
                .total_cmp(&a.percent())
                .then_with(|| (a.from, a.to).cmp(&(b.from, b.to)))
        });
        cells.truncate(k);
        cells
    }
}

/// Default minimum `|S_{g,y2}|` for a pair to be listed.
pub const DEFAULT_MIN_SUPPORT: usize = 10;

pub fn swap_report(
    original: &[usize],
    swapped: &[usize],
    gold: &[usize],
    genders: &[Gender],
    classes: &[String],
) -> Result<SwapReport> {
    check_len(original.len(), swapped.len())?;
    check_len(original.len(), gold.len())?;
    check_len(original.len(), genders.len())?;
    let mut counts: BTreeMap<(Gender, usize, usize), usize> = BTreeMap::new();
    let mut denominators: BTreeMap<(Gender, usize), usize> = BTreeMap::new();
    let mut unchanged_correct = BTreeMap::new();
    let mut changed = 0;
    for i in 0..original.len() {
        let (p, s, y, g) = (original[i], swapped[i], gold[i], genders[i]);
        if p != s {
            changed += 1;
        }
        if s == y {
            if p == y {
                *unchanged_correct.entry((g, y)).or_insert(0) += 1;
            } else {
                *counts.entry((g, p, y)).or_insert(0) += 1;
                *denominators.entry((g, y)).or_insert(0) += 1;
            }
        }
    }
    let mut cells: Vec<SwapCell> = counts
        .into_iter()
        .map(|((gender, from, to), count)| SwapCell {
            gender,
            from,
            to,
            count,
            denominator: denominators[&(gender, to)],
        })
        .collect();
    cells.sort_by_key(|c| (c.gender, c.to, c.from));
    Ok(SwapReport {
        classes: classes.to_vec(),
        records: original.len(),
        changed,
        cells,
        unchanged_correct,
    })
}

/// Runs `predict` on each record's text as written and with gender
/// indicators swapped, then tabulates the swap sets.
pub fn swap_audit<F>(
    records: &[Biography],
    classes: &[String],
    indicators: &IndicatorConfig,
    mut predict: F,
) -> Result<SwapReport>
where
    F: FnMut(&str) -> Result<usize>,
{
    let mut original = Vec::with_capacity(records.len());
    let mut swapped = Vec::with_capacity(records.len());
    let mut gold = Vec::with_capacity(records.len());
    for bio in records {
        let y = classes
            .iter()
            .position(|c| *c == bio.occupation)
            .ok_or_else(|| Error::UnknownTitle(bio.occupation.clone()))?;
        gold.push(y);
        original.push(predict(&bio.feature_text)?);
        swapped.push(predict(&swap_indicators(bio, indicators))?);
    }
    let genders: Vec<Gender> = records.iter().map(|b| b.gender).collect();
    swap_report(&original, &swapped, &gold, &genders, classes)
}

pub fn probe_accuracy(predicted: &[Gender], truth: &[Gender]) -> Result<f64> {
    check_len(predicted.len(), truth.len())?;
    if truth.is_empty() {
        return Err(Error::EmptySplit);
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub word: String,
    /// Occurrences over the whole corpus.
    pub frequency: usize,
    pub log10_frequency: f64,
    /// Documents containing the word, split by gender.
    pub docs_female: usize,
    pub docs_male: usize,
    /// Correlation between presence and `G = female`; 0 when either
    /// variable is constant.
    pub correlation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordGenderScatter {
    pub female_docs: usize,
    pub male_docs: usize,
    /// One point per word type, in lexicographic order.
    pub points: Vec<ScatterPoint>,
}

/// Presence/gender correlation from a 2x2 table of document counts.
pub fn presence_correlation(with_f: usize, with_m: usize, female: usize, male: usize) -> f64 {
    let n = (female + male) as f64;
    let present = (with_f + with_m) as f64;
    let absent = n - present;
    let without_f = (female - with_f) as f64;
    let without_m = (male - with_m) as f64;
    let den = present * absent * female as f64 * male as f64;
    if den == 0.0 {
        return 0.0;
    }
    ((with_f as f64 * without_m - with_m as f64 * without_f) / den.sqrt()).clamp(-1.0, 1.0)
}

pub fn word_gender_scatter<S: AsRef<str>>(docs: &[(Vec<S>, Gender)]) -> WordGenderScatter {
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    let mut presence: BTreeMap<&str, [usize; 2]> = BTreeMap::new();
    let mut totals = [0usize; 2];
    for (tokens, g) in docs {
        totals[g.index()] += 1;
        let mut seen = BTreeSet::new();
        for t in tokens {
            let t = t.as_ref();
            *freq.entry(t).or_insert(0) += 1;
            if seen.insert(t) {
                presence.entry(t).or_insert([0, 0])[g.index()] += 1;
            }
        }
    }
    let points = freq
        .into_iter()
        .map(|(word, frequency)| {
            let [f, m] = presence[word];
            ScatterPoint {
                word: word.to_string(),
                frequency,
                log10_frequency: (frequency as f64).log10(),
                docs_female: f,
                docs_male: m,
                correlation: presence_correlation(f, m, totals[0], totals[1]),
            }
        })
        .collect();
    WordGenderScatter {
        female_docs: totals[0],
        male_docs: totals[1],
        points,
    }
}
