//! Command-line front end. Each subcommand reads its inputs, runs one stage
//! of the pipeline and writes its artifacts under the output directory.
//! Settings come from an optional TOML file; flags override it, and the
//! effective configuration is hashed into every report.

use std::cell::OnceCell;
use std::collections::{BTreeMap, BTreeSet};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::audit::{self, gap_imbalance_correlation, gap_table, word_gender_scatter};
use crate::config::{Input, RunConfig};
use crate::corpus::{
    balanced_subsample, extract_from_reader, finalize_extraction, read_jsonl, stratified_split,
    write_jsonl, Biography, ExtractionStats, Gender, OccupationLexicon, ProbeSplitSet, SplitSet,
};
use crate::error::{Error, Result};
use crate::proxy::{aggregate_attention, attention_histograms, mean_attention, proxy_candidates, stable_candidates};
use crate::report::{self, Provenance};
use crate::represent::{load_embeddings, tokenize, EmbeddingTable};
use crate::rnn::TrainLog;
use crate::scrub::{scrub, swap_indicators, IndicatorConfig};
use crate::simulate::{fit_gap_regression, run_many, tpr_grid, GapRegression};
use crate::stack::{input_text, train_stack_logged, Condition, Representation, Target, TrainRequest, TrainedStack};
use crate::synth::{generate, SynthConfig};

#[derive(Debug, Parser)]
#[command(name = "bioaudit", version, about = "Gender-bias audit of occupation classifiers trained on biographies")]
pub struct Cli {
    /// TOML run configuration; built-in defaults when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Top-level seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct ModelArgs {
    #[arg(long)]
    pub representation: Option<Representation>,
    #[arg(long)]
    pub condition: Option<Condition>,
    #[arg(long)]
    pub target: Option<Target>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic raw corpus, its lexicon and word vectors.
    Synth {
        /// Balanced occupations and no proxy word.
        #[arg(long)]
        no_signal: bool,
        #[arg(long)]
        records_per_occupation: Option<usize>,
    },
    /// Extract biographies from raw text files, one paragraph per line.
    Extract {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
    /// Stratified train/validation/test split of a biography file.
    Split {
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Rewrite records with indicators removed, or swapped with `--swap`.
    Scrub {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        swap: bool,
        #[arg(long)]
        indicators: Option<PathBuf>,
    },
    /// Train one classifier stack on a split directory.
    Train {
        /// Directory holding train.jsonl and validation.jsonl.
        #[arg(long)]
        split: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Predict a record file with a trained model.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Gap table, gap/imbalance correlation and word/gender scatter.
    Audit {
        /// Predictions CSV written by `eval`.
        #[arg(long)]
        predictions: PathBuf,
        /// Records whose words feed the word/gender scatter.
        #[arg(long)]
        records: Option<PathBuf>,
    },
    /// Counterfactual audit: predict again with indicators swapped.
    Swap {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Gender probe on scrubbed text of a gender-balanced subsample.
    Probe {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Iterate the compounding-imbalance model.
    Simulate {
        /// Gap table CSV from `audit`; the regression is fitted to it.
        #[arg(long)]
        gap_table: Option<PathBuf>,
        #[arg(long, allow_hyphen_values = true)]
        slope: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        intercept: Option<f64>,
    },
    /// Proxy-word candidates from attention, and attention histograms.
    Proxy {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        /// Words to histogram; overrides the config.
        #[arg(long, value_delimiter = ',')]
        words: Vec<String>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Re-read CSV reports in a directory and redraw their figures.
    Report {
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

/// Effective settings for one invocation.
struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    prov: Provenance,
    indicators: IndicatorConfig,
    table: OnceCell<Option<EmbeddingTable>>,
}

impl Ctx {
    fn new(cfg: RunConfig, inputs: &[Input]) -> Result<Self> {
        cfg.validate(inputs)?;
        let indicators = match &cfg.paths.indicators {
            Some(p) => IndicatorConfig::load(p)?,
            None => IndicatorConfig::default(),
        };
        Ok(Self {
            out: cfg.paths.output.clone(),
            prov: Provenance::new(cfg.hash(), cfg.seed),
            cfg,
            indicators,
            table: OnceCell::new(),
        })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn corpus(&self) -> Result<Vec<Biography>> {
        let p = self
            .cfg
            .paths
            .corpus
            .as_ref()
            .ok_or_else(|| Error::Config("no corpus given (paths.corpus or --corpus)".into()))?;
        read_jsonl(p)
    }

    /// Word vectors, read on first use.
    fn embeddings(&self) -> Result<Option<&EmbeddingTable>> {
        if self.table.get().is_none() {
            let t = self.cfg.paths.embeddings.as_deref().map(load_embeddings).transpose()?;
            let _ = self.table.set(t);
        }
        Ok(self.table.get().and_then(Option::as_ref))
    }

    fn require_embeddings(&self) -> Result<&EmbeddingTable> {
        self.embeddings()?
            .ok_or_else(|| Error::Config("word vectors required (paths.embeddings or --embeddings)".into()))
    }

    fn split(&self, records: &[Biography]) -> Result<SplitSet> {
        stratified_split(records, self.cfg.split_ratios, self.cfg.seed)
    }

    fn probe_split(&self, split: &SplitSet) -> Result<ProbeSplitSet> {
        let p = &self.cfg.probe;
        balanced_subsample(split, p.min_per_cell, p.per_cell_train, self.cfg.seed)
    }

    fn train(
        &self,
        train: &[Biography],
        validation: &[Biography],
        representation: Representation,
        condition: Condition,
        target: Target,
        seed: u64,
    ) -> Result<(TrainedStack, Option<TrainLog>)> {
        train_stack_logged(&TrainRequest {
            train,
            validation,
            representation,
            condition,
            target,
            indicators: &self.indicators,
            embeddings: self.embeddings()?,
            config: &self.cfg.model.stack,
            seed,
        })
    }

    fn written(&self, path: &Path) {
        println!("wrote {}", path.display());
    }
}

fn apply_model_args(cfg: &mut RunConfig, m: &ModelArgs) {
    if let Some(r) = m.representation {
        cfg.model.representation = r;
    }
    if let Some(c) = m.condition {
        cfg.model.condition = c;
    }
    if let Some(t) = m.target {
        cfg.model.target = t;
    }
    if let Some(e) = &m.embeddings {
        cfg.paths.embeddings = Some(e.clone());
    }
}

/// The configuration with this invocation's flags applied.
fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.paths.output = o.clone();
    }
    match &cli.command {
        Command::Extract { lexicon: Some(l), .. } => cfg.paths.lexicon = Some(l.clone()),
        Command::Split { corpus: Some(c) } => cfg.paths.corpus = Some(c.clone()),
        Command::Scrub { indicators: Some(i), .. } => cfg.paths.indicators = Some(i.clone()),
        Command::Train { model, .. } => apply_model_args(&mut cfg, model),
        Command::Eval { embeddings: Some(e), .. } | Command::Swap { embeddings: Some(e), .. } => {
            cfg.paths.embeddings = Some(e.clone())
        }
        Command::Probe { corpus, model } => {
            if let Some(c) = corpus {
                cfg.paths.corpus = Some(c.clone());
            }
            apply_model_args(&mut cfg, model);
            cfg.model.target = Target::Gender;
            cfg.model.condition = Condition::Without;
        }
        Command::Simulate { slope, intercept, .. } => {
            if slope.is_some() {
                cfg.simulate.slope = *slope;
            }
            if intercept.is_some() {
                cfg.simulate.intercept = *intercept;
            }
        }
        Command::Proxy { corpus, embeddings, words, k } => {
            if let Some(c) = corpus {
                cfg.paths.corpus = Some(c.clone());
            }
            if let Some(e) = embeddings {
                cfg.paths.embeddings = Some(e.clone());
            }
            if !words.is_empty() {
                cfg.proxy.words = words.clone();
            }
            if let Some(k) = k {
                cfg.proxy.k = *k;
            }
            cfg.model.representation = Representation::Dnn;
        }
        _ => {}
    }
    Ok(cfg)
}

/// Inputs a command reads; the indicator list is read by every command.
fn inputs(cmd: &Command) -> &'static [Input] {
    use Input::*;
    match cmd {
        Command::Synth { .. } | Command::Simulate { .. } | Command::Report { .. } => &[Indicators],
        Command::Extract { .. } => &[Lexicon, Indicators],
        Command::Split { .. } => &[Corpus, Indicators],
        Command::Scrub { .. } | Command::Audit { .. } => &[Indicators],
        Command::Train { .. } | Command::Eval { .. } | Command::Swap { .. } => &[Embeddings, Indicators],
        Command::Probe { .. } | Command::Proxy { .. } => &[Corpus, Embeddings, Indicators],
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx::new(effective_config(&cli)?, inputs(&cli.command))?;
    match cli.command {
        Command::Synth { no_signal, records_per_occupation } => {
            cmd_synth(&ctx, no_signal, records_per_occupation)
        }
        Command::Extract { inputs, .. } => cmd_extract(&ctx, &inputs),
        Command::Split { .. } => cmd_split(&ctx),
        Command::Scrub { input, swap, .. } => cmd_scrub(&ctx, &input, swap),
        Command::Train { split, .. } => cmd_train(&ctx, split.as_deref()),
        Command::Eval { model, records, .. } => cmd_eval(&ctx, &model, &records),
        Command::Audit { predictions, records } => cmd_audit(&ctx, &predictions, records.as_deref()),
        Command::Swap { model, records, .. } => cmd_swap(&ctx, &model, &records),
        Command::Probe { .. } => cmd_probe(&ctx),
        Command::Simulate { gap_table, .. } => cmd_simulate(&ctx, gap_table.as_deref()),
        Command::Proxy { .. } => cmd_proxy(&ctx),
        Command::Report { dir } => cmd_report(dir.as_deref().unwrap_or(&ctx.out)),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_synth(ctx: &Ctx, no_signal: bool, records: Option<usize>) -> Result<()> {
    let mut cfg = if no_signal { SynthConfig::no_signal() } else { SynthConfig::planted() };
    cfg.seed = ctx.cfg.seed;
    if let Some(n) = records {
        cfg.records_per_occupation = n;
    }
    let corpus = generate(&cfg);
    let raw = ctx.path("raw.txt");
    write_text(&raw, &corpus.raw_text())?;
    let lex = ctx.path("lexicon.tsv");
    let mut buf = Vec::new();
    corpus.lexicon.write_tsv(&mut buf).map_err(|e| Error::io(&lex, e))?;
    std::fs::write(&lex, buf).map_err(|e| Error::io(&lex, e))?;
    let emb = ctx.path("embeddings.txt");
    corpus.embeddings.save(&emb)?;
    for p in [&raw, &lex, &emb] {
        ctx.written(p);
    }
    Ok(())
}

fn cmd_extract(ctx: &Ctx, inputs: &[PathBuf]) -> Result<()> {
    let lexicon = match &ctx.cfg.paths.lexicon {
        Some(p) => OccupationLexicon::load(p)?,
        None => OccupationLexicon::default_lexicon(),
    };
    let mut stats = ExtractionStats::default();
    let mut records = Vec::new();
    for input in inputs {
        let f = std::fs::File::open(input).map_err(|e| Error::io(input, e))?;
        extract_from_reader(BufReader::new(f), &lexicon, &mut stats, &mut records)
            .map_err(|e| Error::io(input, e))?;
    }
    let records = finalize_extraction(records, &mut stats);
    create_dir(&ctx.out)?;
    let bios = ctx.path("biographies.jsonl");
    write_jsonl(&bios, &records)?;
    let stats_path = ctx.path("extraction_stats.json");
    report::write_json(&stats_path, &ctx.prov, &stats)?;
    if stats.malformed_utf8 > 0 {
        eprintln!("warning: skipped {} lines that are not valid UTF-8", stats.malformed_utf8);
    }
    ctx.written(&bios);
    ctx.written(&stats_path);
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitSummary {
    ratios: [f64; 3],
    seed: u64,
    /// Records per occupation as (train, validation, test).
    per_occupation: BTreeMap<String, [usize; 3]>,
}

fn cmd_split(ctx: &Ctx) -> Result<()> {
    let split = ctx.split(&ctx.corpus()?)?;
    let dir = ctx.path("split");
    create_dir(&dir)?;
    let mut per_occupation: BTreeMap<String, [usize; 3]> = BTreeMap::new();
    let parts = [("train", &split.train), ("validation", &split.validation), ("test", &split.test)];
    for (i, (name, part)) in parts.into_iter().enumerate() {
        for b in part {
            per_occupation.entry(b.occupation.clone()).or_default()[i] += 1;
        }
        let p = dir.join(format!("{name}.jsonl"));
        write_jsonl(&p, part)?;
        ctx.written(&p);
    }
    let summary = SplitSummary {
        ratios: ctx.cfg.split_ratios,
        seed: split.seed,
        per_occupation,
    };
    let p = dir.join("summary.json");
    report::write_json(&p, &ctx.prov, &summary)?;
    ctx.written(&p);
    Ok(())
}

fn cmd_scrub(ctx: &Ctx, input: &Path, swap: bool) -> Result<()> {
    let records: Vec<Biography> = read_jsonl(input)?
        .into_iter()
        .map(|mut b| {
            b.feature_text = if swap { swap_indicators(&b, &ctx.indicators) } else { scrub(&b, &ctx.indicators) };
            b
        })
        .collect();
    create_dir(&ctx.out)?;
    let p = ctx.path(if swap { "swapped.jsonl" } else { "scrubbed.jsonl" });
    write_jsonl(&p, &records)?;
    ctx.written(&p);
    Ok(())
}

fn model_name(r: Representation, t: Target, c: Condition) -> String {
    format!("{r}-{t}-{c}")
}

#[derive(Debug, Serialize, Deserialize)]
struct TrainSummary {
    representation: Representation,
    condition: Condition,
    target: Target,
    classes: Vec<String>,
    train_records: usize,
    validation_records: usize,
    train_accuracy: f64,
    validation_accuracy: f64,
    epochs: Option<TrainLog>,
}

fn cmd_train(ctx: &Ctx, split_dir: Option<&Path>) -> Result<()> {
    let dir = split_dir.map_or_else(|| ctx.path("split"), Path::to_path_buf);
    let train = read_jsonl(&dir.join("train.jsonl"))?;
    let validation = read_jsonl(&dir.join("validation.jsonl"))?;
    let m = &ctx.cfg.model;
    let (stack, log) = ctx.train(&train, &validation, m.representation, m.condition, m.target, ctx.cfg.seed)?;
    let table = ctx.embeddings()?;
    let summary = TrainSummary {
        representation: m.representation,
        condition: m.condition,
        target: m.target,
        classes: stack.classes.clone(),
        train_records: train.len(),
        validation_records: validation.len(),
        train_accuracy: stack.accuracy(&train, &ctx.indicators, table)?,
        validation_accuracy: stack.accuracy(&validation, &ctx.indicators, table)?,
        epochs: log,
    };
    let models = ctx.path("models");
    create_dir(&models)?;
    let name = model_name(m.representation, m.target, m.condition);
    let model_path = models.join(format!("{name}.model"));
    stack.save(&model_path)?;
    let log_path = models.join(format!("{name}.log.json"));
    report::write_json(&log_path, &ctx.prov, &summary)?;
    ctx.written(&model_path);
    ctx.written(&log_path);
    println!(
        "train accuracy {:.4}, validation accuracy {:.4}",
        summary.train_accuracy, summary.validation_accuracy
    );
    Ok(())
}

fn file_stem(p: &Path) -> String {
    p.file_stem().map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned())
}

fn cmd_eval(ctx: &Ctx, model: &Path, records: &Path) -> Result<()> {
    let stack = TrainedStack::load(model)?;
    let recs = read_jsonl(records)?;
    let pred = stack.predict_records(&recs, &ctx.indicators, ctx.embeddings()?)?;
    let rows: Vec<report::PredictionRow> = recs
        .iter()
        .zip(&pred)
        .enumerate()
        .map(|(i, (b, &p))| report::PredictionRow {
            index: i,
            occupation: b.occupation.clone(),
            gender: b.gender,
            predicted: stack.classes[p].clone(),
        })
        .collect();
    let gold = stack.gold(&recs)?;
    let hits = pred.iter().zip(&gold).filter(|(a, b)| a == b).count();
    let p = ctx.path(&format!("predictions_{}.csv", file_stem(model)));
    report::write_csv(&p, &ctx.prov, &rows)?;
    ctx.written(&p);
    if !recs.is_empty() {
        println!("accuracy {:.4} on {} records", hits as f64 / recs.len() as f64, recs.len());
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct AuditSummary {
    records: usize,
    accuracy: f64,
    mean_abs_gap: Option<f64>,
    gap_imbalance_r: Option<f64>,
    /// Fit on each occupation's underrepresented gender.
    regression: Option<GapRegression>,
}

fn cmd_audit(ctx: &Ctx, predictions: &Path, records: Option<&Path>) -> Result<()> {
    let (_, rows): (_, Vec<report::PredictionRow>) = report::read_csv(predictions)?;
    if rows.is_empty() {
        return Err(Error::EmptySplit);
    }
    let classes: Vec<String> = rows
        .iter()
        .flat_map(|r| [r.occupation.clone(), r.predicted.clone()])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index = |name: &str| classes.binary_search_by(|c| c.as_str().cmp(name)).expect("class collected");
    let pred: Vec<usize> = rows.iter().map(|r| index(&r.predicted)).collect();
    let gold: Vec<usize> = rows.iter().map(|r| index(&r.occupation)).collect();
    let genders: Vec<Gender> = rows.iter().map(|r| r.gender).collect();
    let table = gap_table(&pred, &gold, &genders, &classes)?;
    let dir = ctx.path("audit");
    let gap_csv = dir.join("gap_table.csv");
    report::write_csv(&gap_csv, &ctx.prov, &report::gap_rows(&table))?;
    ctx.written(&gap_csv);
    let hits = pred.iter().zip(&gold).filter(|(a, b)| a == b).count();
    let summary = AuditSummary {
        records: rows.len(),
        accuracy: hits as f64 / rows.len() as f64,
        mean_abs_gap: table.mean_abs_gap(),
        gap_imbalance_r: gap_imbalance_correlation(&table).ok(),
        regression: fit_gap_regression(&table.underrepresented_points()).ok(),
    };
    let line = fit_gap_regression(&table.points()).ok().map(|r| (r.slope, r.intercept));
    let svg = dir.join("gap_scatter.svg");
    report::write_svg(&svg, &ctx.prov, &report::gap_scatter_svg(GAP_TITLE, &table, line))?;
    ctx.written(&svg);
    let json = dir.join("summary.json");
    report::write_json(&json, &ctx.prov, &summary)?;
    ctx.written(&json);
    if let Some(records) = records {
        let docs: Vec<(Vec<String>, Gender)> = read_jsonl(records)?
            .iter()
            .map(|b| (tokenize(&b.feature_text), b.gender))
            .collect();
        let scatter = word_gender_scatter(&docs);
        let csv = dir.join("word_gender.csv");
        report::write_csv(&csv, &ctx.prov, &scatter.points)?;
        ctx.written(&csv);
        let svg = dir.join("word_gender.svg");
        report::write_svg(&svg, &ctx.prov, &word_scatter_svg(&scatter.points))?;
        ctx.written(&svg);
    }
    if let Some(r) = summary.gap_imbalance_r {
        println!("gap/imbalance correlation {r:.3}");
    }
    Ok(())
}

const GAP_TITLE: &str = "TPR gap against share of women";

fn word_scatter_svg(points: &[report::ScatterCsvRow]) -> String {
    let pts: Vec<(f64, f64, String)> = points
        .iter()
        .map(|p| (p.log10_frequency, p.correlation, String::new()))
        .collect();
    report::scatter_svg("word presence against gender", "log10 frequency", "correlation with female", &pts, None)
}

fn cmd_swap(ctx: &Ctx, model: &Path, records: &Path) -> Result<()> {
    let stack = TrainedStack::load(model)?;
    if stack.target != Target::Occupation {
        return Err(Error::InvalidArgument("swap needs an occupation model".into()));
    }
    let recs = read_jsonl(records)?;
    let table = ctx.embeddings()?;
    let rep = audit::swap_audit(&recs, &stack.classes, &ctx.indicators, |text| stack.predict_text(text, table))?;
    let dir = ctx.path("swap");
    let csv = dir.join("cells.csv");
    report::write_csv(&csv, &ctx.prov, &report::swap_rows(&rep))?;
    ctx.written(&csv);
    let json = dir.join("summary.json");
    let a = &ctx.cfg.audit;
    report::write_json(&json, &ctx.prov, &report::swap_summary(&rep, a.top_k, a.min_support))?;
    ctx.written(&json);
    println!("{} of {} predictions changed", rep.changed, rep.records);
    Ok(())
}

fn cmd_probe(ctx: &Ctx) -> Result<()> {
    let split = ctx.split(&ctx.corpus()?)?;
    let probe = ctx.probe_split(&split)?;
    let repr = ctx.cfg.model.representation;
    let (stack, _) = ctx.train(&probe.train, &probe.validation, repr, Condition::Without, Target::Gender, ctx.cfg.seed)?;
    let summary = report::ProbeSummary {
        representation: repr.to_string(),
        retained_occupations: probe.retained_occupations.clone(),
        train: probe.train.len(),
        validation: probe.validation.len(),
        test: probe.test.len(),
        accuracy: stack.accuracy(&probe.test, &ctx.indicators, ctx.embeddings()?)?,
    };
    let p = ctx.path("probe/summary.json");
    report::write_json(&p, &ctx.prov, &summary)?;
    ctx.written(&p);
    println!("probe accuracy {:.4} on {} records", summary.accuracy, summary.test);
    Ok(())
}

fn cmd_simulate(ctx: &Ctx, gap_csv: Option<&Path>) -> Result<()> {
    let s = &ctx.cfg.simulate;
    let reg = match (s.slope, s.intercept, gap_csv) {
        (Some(b1), Some(b0), _) => GapRegression::new(b1, b0),
        (None, None, Some(p)) => {
            let (_, rows) = report::read_csv(p)?;
            fit_gap_regression(&report::gap_table_from_rows(&rows).underrepresented_points())?
        }
        (None, None, None) => {
            return Err(Error::Config("simulate needs --gap-table or both --slope and --intercept".into()))
        }
        _ => return Err(Error::Config("give both --slope and --intercept".into())),
    };
    let traces = run_many(&s.pi0, s.horizon, &reg, &tpr_grid(s.tpr_lo, s.tpr_hi, s.tpr_points))?;
    let dir = ctx.path("simulate");
    let csv = dir.join("trace.csv");
    report::write_csv(&csv, &ctx.prov, &report::trace_rows(&traces))?;
    ctx.written(&csv);
    let svg = dir.join("simulation.svg");
    report::write_svg(&svg, &ctx.prov, &report::simulation_svg(&traces))?;
    ctx.written(&svg);
    let json = dir.join("regression.json");
    report::write_json(&json, &ctx.prov, &reg)?;
    ctx.written(&json);
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct ProxySummary {
    runs: usize,
    k: usize,
    /// Candidate words per run, best first.
    candidates: Vec<Vec<String>>,
    stable: Vec<String>,
    /// Mean attention to each histogrammed word over the test split,
    /// as (with indicators, without).
    mean_attention: BTreeMap<String, (Option<f64>, Option<f64>)>,
}

fn cmd_proxy(ctx: &Ctx) -> Result<()> {
    let table = ctx.require_embeddings()?;
    let split = ctx.split(&ctx.corpus()?)?;
    let probe = ctx.probe_split(&split)?;
    let p = &ctx.cfg.proxy;
    let dir = ctx.path("proxy");
    let probe_docs: Vec<Vec<String>> = probe
        .test
        .iter()
        .map(|b| tokenize(&input_text(b, Condition::Without, &ctx.indicators)))
        .collect();
    let exclude = ctx.indicators.scrub_list().clone();
    let mut per_run: Vec<Vec<(String, f64)>> = Vec::new();
    for r in 0..p.runs {
        let seed = ctx.cfg.seed + r as u64;
        let (stack, _) = ctx.train(&probe.train, &probe.validation, Representation::Dnn, Condition::Without, Target::Gender, seed)?;
        let agg = aggregate_attention(stack.dnn().expect("recurrent stack"), &probe_docs, table)?;
        let csv = dir.join(format!("attention_run{r}.csv"));
        report::write_csv(&csv, &ctx.prov, &report::attention_rows(&agg))?;
        ctx.written(&csv);
        per_run.push(proxy_candidates(&agg, p.k, &exclude));
    }
    let words: Vec<Vec<String>> = per_run.iter().map(|c| c.iter().map(|w| w.0.clone()).collect()).collect();
    let stable = stable_candidates(&words);
    let mut rows = Vec::new();
    for (r, cands) in per_run.iter().enumerate() {
        for (rank, (w, total)) in cands.iter().enumerate() {
            rows.push(report::CandidateCsvRow {
                run: r,
                seed: ctx.cfg.seed + r as u64,
                rank: rank + 1,
                word: w.clone(),
                total: *total,
                stable: stable.contains(w),
            });
        }
    }
    let csv = dir.join("candidates.csv");
    report::write_csv(&csv, &ctx.prov, &rows)?;
    ctx.written(&csv);

    let targets = if p.words.is_empty() { stable.clone() } else { p.words.clone() };
    let mut means = BTreeMap::new();
    if !targets.is_empty() {
        let train = |cond| ctx.train(&split.train, &split.validation, Representation::Dnn, cond, Target::Occupation, ctx.cfg.seed);
        let (with, _) = train(Condition::With)?;
        let (without, _) = train(Condition::Without)?;
        let labeled = |cond: Condition| -> Vec<(Vec<String>, String)> {
            split
                .test
                .iter()
                .map(|b| (tokenize(&input_text(b, cond, &ctx.indicators)), b.occupation.clone()))
                .collect()
        };
        let (docs_with, docs_without) = (labeled(Condition::With), labeled(Condition::Without));
        let (mw, mo) = (with.dnn().expect("recurrent stack"), without.dnn().expect("recurrent stack"));
        let tokens = |d: &[(Vec<String>, String)]| d.iter().map(|x| x.0.clone()).collect::<Vec<_>>();
        for word in &targets {
            let pairs = attention_histograms((mw, &docs_with), (mo, &docs_without), word, table, &with.classes, p.bins)?;
            let stem = sanitize(word);
            let csv = dir.join(format!("histograms_{stem}.csv"));
            report::write_csv(&csv, &ctx.prov, &report::histogram_rows(&pairs))?;
            ctx.written(&csv);
            let svg = dir.join(format!("histograms_{stem}.svg"));
            report::write_svg(&svg, &ctx.prov, &report::histogram_svg(word, &pairs))?;
            ctx.written(&svg);
            let a = mean_attention(mw, word, &tokens(&docs_with), table)?;
            let b = mean_attention(mo, word, &tokens(&docs_without), table)?;
            means.insert(word.clone(), (a, b));
        }
    }
    let summary = ProxySummary {
        runs: p.runs,
        k: p.k,
        candidates: words,
        stable,
        mean_attention: means,
    };
    let json = dir.join("summary.json");
    report::write_json(&json, &ctx.prov, &summary)?;
    ctx.written(&json);
    Ok(())
}

/// File-name-safe form of a word.
fn sanitize(word: &str) -> String {
    word.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}

fn cmd_report(dir: &Path) -> Result<()> {
    let mut drawn = 0;
    let gap = dir.join("audit/gap_table.csv");
    if gap.exists() {
        let (prov, rows) = report::read_csv::<report::GapCsvRow>(&gap)?;
        let table = report::gap_table_from_rows(&rows);
        let line = fit_gap_regression(&table.points()).ok().map(|r| (r.slope, r.intercept));
        let svg = report::gap_scatter_svg(GAP_TITLE, &table, line);
        report::write_svg(&dir.join("audit/gap_scatter.svg"), &prov, &svg)?;
        match table.mean_abs_gap() {
            Some(g) => println!("gap table: {} occupations, mean |gap| {g:.4}", rows.len()),
            None => println!("gap table: {} occupations, no defined gap", rows.len()),
        }
        drawn += 1;
    }
    let words = dir.join("audit/word_gender.csv");
    if words.exists() {
        let (prov, rows) = report::read_csv::<report::ScatterCsvRow>(&words)?;
        report::write_svg(&dir.join("audit/word_gender.svg"), &prov, &word_scatter_svg(&rows))?;
        drawn += 1;
    }
    let trace = dir.join("simulate/trace.csv");
    if trace.exists() {
        let (prov, rows) = report::read_csv::<report::TraceCsvRow>(&trace)?;
        let traces = report::traces_from_rows(&rows);
        report::write_svg(&dir.join("simulate/simulation.svg"), &prov, &report::simulation_svg(&traces))?;
        for t in &traces {
            if let Some(last) = t.points.last() {
                println!("simulation: {:.2} -> {:.4} after {} rounds", t.pi0, last.central, last.t);
            }
        }
        drawn += 1;
    }
    let proxy = dir.join("proxy");
    if proxy.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(&proxy)
            .map_err(|e| Error::io(&proxy, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
                name.starts_with("histograms_") && name.ends_with(".csv")
            })
            .collect();
        files.sort();
        for f in files {
            let (prov, rows) = report::read_csv::<report::HistogramCsvRow>(&f)?;
            let pairs = report::histograms_from_rows(&rows)?;
            let word = rows.first().map_or_else(String::new, |r| r.word.clone());
            report::write_svg(&f.with_extension("svg"), &prov, &report::histogram_svg(&word, &pairs))?;
            drawn += 1;
        }
    }
    println!("redrew {drawn} figure(s) under {}", dir.display());
    Ok(())
}
