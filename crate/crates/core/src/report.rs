//! Report artifacts. Every CSV starts with one `#` provenance line, every JSON
//! report wraps its payload with the same provenance, and every SVG carries it
//! in a leading comment. All of them are re-read by the loaders here.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::audit::{GapRow, GapTable, ScatterPoint, SwapReport};
use crate::corpus::Gender;
use crate::error::{Error, Result};
use crate::proxy::{AttentionAggregate, AttentionHistogram, HistogramPair, WordAttention};
use crate::simulate::{SimulationTrace, TracePoint};
use crate::stack::Condition;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            config_hash: config_hash.into(),
            seed,
        }
    }

    fn line(&self) -> String {
        format!(
            "schema_version={} config_hash={} seed={}",
            self.schema_version, self.config_hash, self.seed
        )
    }

    fn parse(line: &str) -> Result<Self> {
        let mut fields = BTreeMap::new();
        for kv in line.split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Data(format!("bad provenance field `{kv}`")))?;
            fields.insert(k, v);
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::Data(format!("provenance lacks `{k}`")))
        };
        let bad = |k: &str| Error::Data(format!("bad provenance value for `{k}`"));
        let prov = Self {
            schema_version: get("schema_version")?.parse().map_err(|_| bad("schema_version"))?,
            config_hash: get("config_hash")?.to_string(),
            seed: get("seed")?.parse().map_err(|_| bad("seed"))?,
        };
        prov.check()?;
        Ok(prov)
    }

    fn check(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Data(format!(
                "schema version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        Ok(())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn csv_string<T: Serialize>(prov: &Provenance, rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let body = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    let body = String::from_utf8(body).map_err(|e| Error::Data(e.to_string()))?;
    Ok(format!("# {}\n{body}", prov.line()))
}

pub fn write_csv<T: Serialize>(path: &Path, prov: &Provenance, rows: &[T]) -> Result<()> {
    write_file(path, csv_string(prov, rows)?.as_bytes())
}

pub fn parse_csv<T: DeserializeOwned>(text: &str) -> Result<(Provenance, Vec<T>)> {
    let (first, body) = text.split_once('\n').unwrap_or((text, ""));
    let prov = first
        .strip_prefix('#')
        .ok_or_else(|| Error::Data("missing provenance line".into()))
        .and_then(|l| Provenance::parse(l.trim()))?;
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(body.as_bytes());
    let rows = r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?;
    Ok((prov, rows))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<(Provenance, Vec<T>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text)
}

#[derive(Serialize, Deserialize)]
struct JsonReport<T> {
    provenance: Provenance,
    data: T,
}

pub fn write_json<T: Serialize>(path: &Path, prov: &Provenance, data: &T) -> Result<()> {
    let report = JsonReport {
        provenance: prov.clone(),
        data,
    };
    let mut bytes = serde_json::to_vec_pretty(&report)?;
    bytes.push(b'\n');
    write_file(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<(Provenance, T)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let report: JsonReport<T> = serde_json::from_str(&text)?;
    report.provenance.check()?;
    Ok((report.provenance, report.data))
}

pub fn write_svg(path: &Path, prov: &Provenance, svg: &str) -> Result<()> {
    let body = svg
        .strip_prefix(SVG_OPEN)
        .ok_or_else(|| Error::InvalidArgument("not a generated SVG document".into()))?;
    write_file(path, format!("{SVG_OPEN}<!-- {} -->\n{body}", prov.line()).as_bytes())
}

/// Provenance from the comment that [`write_svg`] places after the root tag.
pub fn read_svg_provenance(path: &Path) -> Result<Provenance> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let start = text.find("<!-- ").ok_or_else(|| Error::Data("SVG has no provenance".into()))?;
    let rest = &text[start + 5..];
    let end = rest.find(" -->").ok_or_else(|| Error::Data("unterminated SVG comment".into()))?;
    Provenance::parse(&rest[..end])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub index: usize,
    pub occupation: String,
    pub gender: Gender,
    pub predicted: String,
}

/// Counts are authoritative; rates are derived and empty when undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapCsvRow {
    pub occupation: String,
    pub support_female: usize,
    pub support_male: usize,
    pub correct_female: usize,
    pub correct_male: usize,
    pub pi_female: f64,
    pub tpr_female: Option<f64>,
    pub tpr_male: Option<f64>,
    pub gap_female: Option<f64>,
}

pub fn gap_rows(table: &GapTable) -> Vec<GapCsvRow> {
    table
        .rows
        .iter()
        .map(|r| GapCsvRow {
            occupation: r.occupation.clone(),
            support_female: r.support[0],
            support_male: r.support[1],
            correct_female: r.correct[0],
            correct_male: r.correct[1],
            pi_female: r.pi(Gender::Female),
            tpr_female: r.tpr(Gender::Female),
            tpr_male: r.tpr(Gender::Male),
            gap_female: r.gap(Gender::Female),
        })
        .collect()
}

pub fn gap_table_from_rows(rows: &[GapCsvRow]) -> GapTable {
    GapTable {
        rows: rows
            .iter()
            .map(|r| GapRow {
                occupation: r.occupation.clone(),
                support: [r.support_female, r.support_male],
                correct: [r.correct_female, r.correct_male],
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapCsvRow {
    pub gender: Gender,
    pub from: String,
    pub to: String,
    pub count: usize,
    pub denominator: usize,
    pub percent: f64,
}

pub fn swap_rows(report: &SwapReport) -> Vec<SwapCsvRow> {
    report
        .cells
        .iter()
        .map(|c| SwapCsvRow {
            gender: c.gender,
            from: report.classes[c.from].clone(),
            to: report.classes[c.to].clone(),
            count: c.count,
            denominator: c.denominator,
            percent: c.percent(),
        })
        .collect()
}

/// Top pairs per gender, as listed in the summary tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapSummary {
    pub records: usize,
    pub changed: usize,
    pub change_rate: f64,
    pub min_support: usize,
    pub top_female: Vec<SwapCsvRow>,
    pub top_male: Vec<SwapCsvRow>,
}

pub fn swap_summary(report: &SwapReport, k: usize, min_support: usize) -> SwapSummary {
    let all = swap_rows(report);
    let top = |g: Gender| {
        report
            .top_pairs(g, k, min_support)
            .into_iter()
            .map(|c| {
                let i = report.cells.iter().position(|x| x == c).expect("cell from report");
                all[i].clone()
            })
            .collect()
    };
    SwapSummary {
        records: report.records,
        changed: report.changed,
        change_rate: report.change_rate(),
        min_support,
        top_female: top(Gender::Female),
        top_male: top(Gender::Male),
    }
}

pub type ScatterCsvRow = ScatterPoint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceCsvRow {
    pub subplot: usize,
    pub pi0: f64,
    pub t: usize,
    pub central: f64,
    pub band_lo: f64,
    pub band_hi: f64,
}

pub fn trace_rows(traces: &[SimulationTrace]) -> Vec<TraceCsvRow> {
    traces
        .iter()
        .enumerate()
        .flat_map(|(i, tr)| {
            tr.points.iter().map(move |p| TraceCsvRow {
                subplot: i,
                pi0: tr.pi0,
                t: p.t,
                central: p.central,
                band_lo: p.band_lo,
                band_hi: p.band_hi,
            })
        })
        .collect()
}

pub fn traces_from_rows(rows: &[TraceCsvRow]) -> Vec<SimulationTrace> {
    let mut out: Vec<SimulationTrace> = Vec::new();
    for r in rows {
        if out.len() <= r.subplot {
            out.resize_with(r.subplot + 1, || SimulationTrace { pi0: r.pi0, points: Vec::new() });
        }
        out[r.subplot].pi0 = r.pi0;
        out[r.subplot].points.push(TracePoint {
            t: r.t,
            central: r.central,
            band_lo: r.band_lo,
            band_hi: r.band_hi,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionCsvRow {
    pub word: String,
    pub total: f64,
    pub count: usize,
    pub mean: Option<f64>,
}

pub fn attention_rows(agg: &AttentionAggregate) -> Vec<AttentionCsvRow> {
    agg.words
        .iter()
        .map(|(w, a)| AttentionCsvRow {
            word: w.clone(),
            total: a.total,
            count: a.count,
            mean: a.mean(),
        })
        .collect()
}

pub fn attention_from_rows(rows: &[AttentionCsvRow], records: usize, skipped: usize) -> AttentionAggregate {
    AttentionAggregate {
        records,
        skipped,
        words: rows
            .iter()
            .map(|r| (r.word.clone(), WordAttention { total: r.total, count: r.count }))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateCsvRow {
    pub run: usize,
    pub seed: u64,
    pub rank: usize,
    pub word: String,
    pub total: f64,
    /// Whether the word is in the top-k of every run.
    pub stable: bool,
}

/// One row per bin; `mean` repeats on every bin of a histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramCsvRow {
    pub word: String,
    pub occupation: String,
    pub condition: Condition,
    pub bin: usize,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean: Option<f64>,
}

pub fn histogram_rows(pairs: &[HistogramPair]) -> Vec<HistogramCsvRow> {
    let mut out = Vec::new();
    for p in pairs {
        for h in [&p.with, &p.without] {
            for (b, &count) in h.counts.iter().enumerate() {
                out.push(HistogramCsvRow {
                    word: h.word.clone(),
                    occupation: h.occupation.clone(),
                    condition: h.condition,
                    bin: b,
                    lo: h.edges[b],
                    hi: h.edges[b + 1],
                    count,
                    mean: h.mean,
                });
            }
        }
    }
    out
}

/// Inverse of [`histogram_rows`]; pairs keep their first-seen order.
pub fn histograms_from_rows(rows: &[HistogramCsvRow]) -> Result<Vec<HistogramPair>> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut hists: BTreeMap<(String, String, Condition), AttentionHistogram> = BTreeMap::new();
    for r in rows {
        let key = (r.word.clone(), r.occupation.clone());
        if !order.contains(&key) {
            order.push(key);
        }
        let h = hists
            .entry((r.word.clone(), r.occupation.clone(), r.condition))
            .or_insert_with(|| AttentionHistogram {
                word: r.word.clone(),
                occupation: r.occupation.clone(),
                condition: r.condition,
                edges: vec![r.lo],
                counts: Vec::new(),
                mean: r.mean,
            });
        if r.bin != h.counts.len() {
            return Err(Error::Data(format!("histogram bins out of order at {}/{}", r.word, r.occupation)));
        }
        h.edges.push(r.hi);
        h.counts.push(r.count);
    }
    order
        .into_iter()
        .map(|(word, occ)| {
            let mut take = |c| {
                hists
                    .remove(&(word.clone(), occ.clone(), c))
                    .ok_or_else(|| Error::Data(format!("{word}/{occ} lacks the `{c}` histogram")))
            };
            Ok(HistogramPair {
                occupation: occ.clone(),
                with: take(Condition::With)?,
                without: take(Condition::Without)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub representation: String,
    pub retained_occupations: Vec<String>,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub accuracy: f64,
}

const SVG_OPEN: &str = "<svg xmlns=\"http://www.w3.org/2000/svg\"";
const FONT: &str = "font-family=\"sans-serif\" font-size=\"11\"";

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Axis-aligned plotting rectangle with data ranges.
struct Frame {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    xr: (f64, f64),
    yr: (f64, f64),
}

impl Frame {
    fn px(&self, v: f64) -> f64 {
        self.x + (v - self.xr.0) / (self.xr.1 - self.xr.0) * self.w
    }

    fn py(&self, v: f64) -> f64 {
        self.y + self.h - (v - self.yr.0) / (self.yr.1 - self.yr.0) * self.h
    }

    fn axes(&self, out: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        let (x0, y0, x1, y1) = (self.x, self.y, self.x + self.w, self.y + self.h);
        let _ = writeln!(
            out,
            "<rect x=\"{x0:.1}\" y=\"{y0:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"#444\"/>",
            self.w, self.h
        );
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = self.xr.0 + f * (self.xr.1 - self.xr.0);
            let yv = self.yr.0 + f * (self.yr.1 - self.yr.0);
            let (tx, ty) = (self.px(xv), self.py(yv));
            let _ = writeln!(
                out,
                "<text x=\"{tx:.1}\" y=\"{:.1}\" text-anchor=\"middle\" {FONT}>{}</text>",
                y1 + 14.0,
                tick(xv)
            );
            let _ = writeln!(
                out,
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" {FONT}>{}</text>",
                x0 - 4.0,
                ty + 4.0,
                tick(yv)
            );
        }
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" {FONT} font-weight=\"bold\">{}</text>",
            (x0 + x1) / 2.0,
            y0 - 8.0,
            esc(title)
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" {FONT}>{}</text>",
            (x0 + x1) / 2.0,
            y1 + 30.0,
            esc(xlabel)
        );
        let (lx, ly) = (x0 - 40.0, (y0 + y1) / 2.0);
        let _ = writeln!(
            out,
            "<text x=\"{lx:.1}\" y=\"{ly:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 {lx:.1} {ly:.1})\" {FONT}>{}</text>",
            esc(ylabel)
        );
    }

    fn hline(&self, out: &mut String, v: f64) {
        if v > self.yr.0 && v < self.yr.1 {
            let y = self.py(v);
            let _ = writeln!(
                out,
                "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#bbb\" stroke-dasharray=\"4 3\"/>",
                self.x,
                self.x + self.w
            );
        }
    }
}

fn tick(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" { "0.00".into() } else { s }
}

/// Data range padded by 5% of its span; a unit span around a constant.
fn range(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .into_iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn document(w: f64, h: f64, body: &str) -> String {
    format!(
        "{SVG_OPEN} width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n"
    )
}

/// Labeled points with an optional `y = slope * x + intercept` line.
pub fn scatter_svg(
    title: &str,
    xlabel: &str,
    ylabel: &str,
    points: &[(f64, f64, String)],
    line: Option<(f64, f64)>,
) -> String {
    let f = Frame {
        x: 70.0,
        y: 30.0,
        w: 460.0,
        h: 320.0,
        xr: range(points.iter().map(|p| p.0)),
        yr: range(points.iter().map(|p| p.1).chain([0.0])),
    };
    let mut out = String::new();
    f.axes(&mut out, title, xlabel, ylabel);
    f.hline(&mut out, 0.0);
    if let Some((slope, intercept)) = line {
        let (a, b) = f.xr;
        let _ = writeln!(
            out,
            "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#c33\"/>",
            f.px(a),
            f.py((slope * a + intercept).clamp(f.yr.0, f.yr.1)),
            f.px(b),
            f.py((slope * b + intercept).clamp(f.yr.0, f.yr.1))
        );
    }
    for (x, y, label) in points {
        let (cx, cy) = (f.px(*x), f.py(*y));
        let _ = writeln!(out, "<circle cx=\"{cx:.1}\" cy=\"{cy:.1}\" r=\"3\" fill=\"#36c\"/>");
        if !label.is_empty() {
            let _ = writeln!(
                out,
                "<text x=\"{:.1}\" y=\"{:.1}\" {FONT} fill=\"#333\">{}</text>",
                cx + 5.0,
                cy - 4.0,
                esc(label)
            );
        }
    }
    document(600.0, 400.0, &out)
}

/// Female gap against female share, one labeled point per occupation.
pub fn gap_scatter_svg(title: &str, table: &GapTable, line: Option<(f64, f64)>) -> String {
    let pts: Vec<(f64, f64, String)> = table
        .rows
        .iter()
        .filter_map(|r| Some((r.pi(Gender::Female), r.gap(Gender::Female)?, r.occupation.clone())))
        .collect();
    scatter_svg(title, "share of women", "TPR gap (female - male)", &pts, line)
}

/// One panel per starting share: band as a filled polygon, centre as a line.
pub fn simulation_svg(traces: &[SimulationTrace]) -> String {
    let cols = traces.len().clamp(1, 4);
    let rows = traces.len().div_ceil(cols).max(1);
    let (pw, ph) = (240.0, 200.0);
    let mut out = String::new();
    for (i, tr) in traces.iter().enumerate() {
        let horizon = tr.points.last().map_or(1, |p| p.t.max(1)) as f64;
        let f = Frame {
            x: 60.0 + (i % cols) as f64 * (pw + 40.0),
            y: 30.0 + (i / cols) as f64 * (ph + 60.0),
            w: pw,
            h: ph,
            xr: (0.0, horizon),
            yr: range(tr.points.iter().flat_map(|p| [p.band_lo, p.band_hi])),
        };
        f.axes(&mut out, &format!("start {:.2}", tr.pi0), "round", "share");
        let upper = tr.points.iter().map(|p| format!("{:.1},{:.1}", f.px(p.t as f64), f.py(p.band_hi)));
        let lower = tr.points.iter().rev().map(|p| format!("{:.1},{:.1}", f.px(p.t as f64), f.py(p.band_lo)));
        let poly: Vec<String> = upper.chain(lower).collect();
        let _ = writeln!(out, "<polygon points=\"{}\" fill=\"#9bd\" fill-opacity=\"0.5\" stroke=\"none\"/>", poly.join(" "));
        let line: Vec<String> = tr
            .points
            .iter()
            .map(|p| format!("{:.1},{:.1}", f.px(p.t as f64), f.py(p.central)))
            .collect();
        let _ = writeln!(out, "<polyline points=\"{}\" fill=\"none\" stroke=\"#135\" stroke-width=\"1.5\"/>", line.join(" "));
    }
    let w = 60.0 + cols as f64 * (pw + 40.0);
    let h = 30.0 + rows as f64 * (ph + 60.0);
    document(w, h, &out)
}

/// One panel per occupation with the two conditions overlaid as bars.
pub fn histogram_svg(word: &str, pairs: &[HistogramPair]) -> String {
    let cols = pairs.len().clamp(1, 3);
    let rows = pairs.len().div_ceil(cols).max(1);
    let (pw, ph) = (260.0, 160.0);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<text x=\"10\" y=\"16\" {FONT} font-weight=\"bold\">attention to \"{}\": with indicators (orange), without (blue)</text>",
        esc(word)
    );
    for (i, p) in pairs.iter().enumerate() {
        let hi = [&p.with, &p.without]
            .iter()
            .filter_map(|h| h.edges.last().copied())
            .fold(0.0, f64::max)
            .max(1e-12);
        let ymax = [&p.with, &p.without]
            .iter()
            .flat_map(|h| h.counts.iter().copied())
            .max()
            .unwrap_or(0)
            .max(1) as f64;
        let f = Frame {
            x: 60.0 + (i % cols) as f64 * (pw + 50.0),
            y: 50.0 + (i / cols) as f64 * (ph + 60.0),
            w: pw,
            h: ph,
            xr: (0.0, hi),
            yr: (0.0, ymax),
        };
        f.axes(&mut out, &p.occupation, "attention", "count");
        for (h, colour) in [(&p.with, "#e80"), (&p.without, "#36c")] {
            for (b, &c) in h.counts.iter().enumerate() {
                if c == 0 {
                    continue;
                }
                let (x0, x1) = (f.px(h.edges[b]), f.px(h.edges[b + 1].min(hi)));
                let y = f.py(c as f64);
                let _ = writeln!(
                    out,
                    "<rect x=\"{x0:.1}\" y=\"{y:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{colour}\" fill-opacity=\"0.5\"/>",
                    (x1 - x0).max(0.5),
                    f.y + f.h - y
                );
            }
        }
    }
    let w = 60.0 + cols as f64 * (pw + 50.0);
    let h = 50.0 + rows as f64 * (ph + 60.0);
    document(w, h, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audit::{gap_table, swap_report};
    use crate::simulate::{default_tpr_grid, run_many, GapRegression};

    fn prov() -> Provenance {
        Provenance::new("abc123", 9)
    }

    #[test]
    fn csv_round_trip_keeps_provenance() {
        let classes = vec!["nurse".to_string(), "surgeon".to_string()];
        let g = [Gender::Female, Gender::Male, Gender::Female, Gender::Male];
        let t = gap_table(&[0, 1, 1, 1], &[0, 1, 0, 0], &g, &classes).unwrap();
        let text = csv_string(&prov(), &gap_rows(&t)).unwrap();
        assert!(text.starts_with("# schema_version=1 config_hash=abc123 seed=9\n"));
        let (p, rows): (_, Vec<GapCsvRow>) = parse_csv(&text).unwrap();
        assert_eq!(p, prov());
        assert_eq!(gap_table_from_rows(&rows), t);
        // surgeon has no female support, so its rates are empty fields.
        assert!(text.lines().any(|l| l.starts_with("surgeon,0,1,0,1,0.0,,1.0,")));
    }

    #[test]
    fn schema_mismatch_is_a_data_error() {
        let e = parse_csv::<GapCsvRow>("# schema_version=2 config_hash=x seed=1\noccupation\n").unwrap_err();
        assert_eq!(e.exit_code(), 3);
        assert!(parse_csv::<GapCsvRow>("occupation\n").is_err());
    }

    #[test]
    fn traces_and_histograms_round_trip() {
        let traces = run_many(&[0.1, 0.3], 4, &GapRegression::new(0.5, -0.2), &default_tpr_grid()).unwrap();
        let (_, rows) = parse_csv::<TraceCsvRow>(&csv_string(&prov(), &trace_rows(&traces)).unwrap()).unwrap();
        assert_eq!(traces_from_rows(&rows), traces);

        let pair = HistogramPair {
            occupation: "nurse".into(),
            with: AttentionHistogram::build("women", "nurse", Condition::With, &[0.1, 0.3], 4).unwrap(),
            without: AttentionHistogram::build("women", "nurse", Condition::Without, &[], 4).unwrap(),
        };
        let text = csv_string(&prov(), &histogram_rows(std::slice::from_ref(&pair))).unwrap();
        let (_, rows) = parse_csv::<HistogramCsvRow>(&text).unwrap();
        assert_eq!(histograms_from_rows(&rows).unwrap(), vec![pair]);
    }

    #[test]
    fn swap_rows_name_classes() {
        let classes = vec!["a".to_string(), "b".to_string()];
        let r = swap_report(&[0, 0, 1], &[1, 1, 1], &[1, 1, 1], &[Gender::Female; 3], &classes).unwrap();
        let rows = swap_rows(&r);
        assert_eq!(rows.len(), 1);
        assert_eq!((rows[0].from.as_str(), rows[0].to.as_str(), rows[0].count), ("a", "b", 2));
        let s = swap_summary(&r, 5, 0);
        assert_eq!(s.top_female, rows);
        assert!(s.top_male.is_empty());
    }

    #[test]
    fn json_and_svg_carry_provenance() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/probe.json");
        let data = ProbeSummary {
            representation: "bow".into(),
            retained_occupations: vec!["nurse".into()],
            train: 100,
            validation: 20,
            test: 40,
            accuracy: 0.625,
        };
        write_json(&path, &prov(), &data).unwrap();
        assert_eq!(read_json::<ProbeSummary>(&path).unwrap(), (prov(), data));

        let svg = scatter_svg("t", "x", "y", &[(0.2, -0.1, "a<b".into()), (0.8, 0.1, String::new())], Some((1.0, -0.5)));
        assert!(svg.contains("a&lt;b"));
        let svg_path = dir.path().join("s.svg");
        write_svg(&svg_path, &prov(), &svg).unwrap();
        assert_eq!(read_svg_provenance(&svg_path).unwrap(), prov());
    }

    #[test]
    fn figures_are_deterministic() {
        let traces = run_many(&[0.2], 3, &GapRegression::new(0.0, 0.0), &default_tpr_grid()).unwrap();
        assert_eq!(simulation_svg(&traces), simulation_svg(&traces));
        let h = AttentionHistogram::build("w", "o", Condition::With, &[0.5], 3).unwrap();
        let pair = HistogramPair { occupation: "o".into(), with: h.clone(), without: h };
        assert!(histogram_svg("w", &[pair]).ends_with("</svg>\n"));
    }
}
