//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line to stderr
//! (bypassing the test harness capture) and then asserts the same verdict.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bioaudit::audit::{
    gap_imbalance_correlation, gap_table, swap_audit, tp_composition, word_gender_scatter, GapTable,
};
use bioaudit::corpus::{
    apportion, balanced_subsample, dedup, stratified_split, Biography, Gender, ProbeSplitSet, SplitSet, PAPER_SPLIT,
};
use bioaudit::linear::{binary_loss, binary_loss_grad, Features, LinearConfig};
use bioaudit::proxy::{aggregate_attention, proxy_candidates};
use bioaudit::represent::{tokenize, DenseVec, EmbeddingTable, SparseVec};
use bioaudit::rnn::{DnnConfig, Optimizer, Params};
use bioaudit::scrub::{swap_indicators, IndicatorConfig};
use bioaudit::simulate::{default_tpr_grid, fit_gap_regression, run_many, step, GapRegression};
use bioaudit::stack::{input_text, train_stack, Condition, Representation, StackConfig, Target, TrainRequest, TrainedStack};
use bioaudit::synth::{generate, SynthConfig, SynthCorpus};

fn verdict(n: u32, name: &str, pass: bool, detail: &str) -> bool {
    let tag = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n:>2} {tag} {name}: {detail}");
    pass
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

const PROXY: &str = "women";
const SPLIT_SEED: u64 = 7;
const PROBE_SEED: u64 = 11;
const STACK_SEED: u64 = 3;
const RUN_SEEDS: [u64; 3] = [1, 2, 3];

fn stack_config() -> StackConfig {
    StackConfig {
        min_freq: 2,
        linear: LinearConfig {
            lambda: 1e-3,
            ..Default::default()
        },
        dnn: DnnConfig {
            hidden: 12,
            attention: 12,
            optimizer: Optimizer::Adam,
            lr: 0.01,
            epochs: 15,
            batch_size: 32,
            patience: 3,
            lr_decay: 0.5,
            restore_best: true,
            ..Default::default()
        },
        ..Default::default()
    }
}

struct Fixture {
    corpus: SynthCorpus,
    split: SplitSet,
    probe: ProbeSplitSet,
}

fn build_fixture(cfg: &SynthConfig) -> Fixture {
    let corpus = generate(cfg);
    let (bios, _) = corpus.biographies().unwrap();
    let split = stratified_split(&bios, PAPER_SPLIT, SPLIT_SEED).unwrap();
    let probe = balanced_subsample(&split, 50, 50, PROBE_SEED).unwrap();
    Fixture { corpus, split, probe }
}

fn planted() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| build_fixture(&SynthConfig::planted()))
}

struct Evaluated {
    stack: TrainedStack,
    accuracy: f64,
    table: GapTable,
    seconds: f64,
}

/// Occupation stack trained on the planted corpus, shared across tests.
fn occupation_stack(repr: Representation, cond: Condition, seed: u64) -> Arc<Evaluated> {
    type Slot = Arc<OnceLock<Arc<Evaluated>>>;
    type Cache = Mutex<BTreeMap<(Representation, Condition, u64), Slot>>;
    static CACHE: OnceLock<Cache> = OnceLock::new();
    let slot = CACHE
        .get_or_init(Default::default)
        .lock()
        .unwrap()
        .entry((repr, cond, seed))
        .or_default()
        .clone();
    slot.get_or_init(|| {
        let f = planted();
        let ind = IndicatorConfig::default();
        let cfg = stack_config();
        let t = Instant::now();
        let stack = train_stack(&TrainRequest {
            train: &f.split.train,
            validation: &f.split.validation,
            representation: repr,
            condition: cond,
            target: Target::Occupation,
            indicators: &ind,
            embeddings: Some(&f.corpus.embeddings),
            config: &cfg,
            seed,
        })
        .unwrap();
        let seconds = t.elapsed().as_secs_f64();
        let test = &f.split.test;
        let pred = stack.predict_records(test, &ind, Some(&f.corpus.embeddings)).unwrap();
        let gold = stack.gold(test).unwrap();
        let genders: Vec<Gender> = test.iter().map(|b| b.gender).collect();
        let table = gap_table(&pred, &gold, &genders, &stack.classes).unwrap();
        let hits = pred.iter().zip(&gold).filter(|(a, b)| a == b).count();
        Arc::new(Evaluated {
            stack,
            accuracy: hits as f64 / gold.len() as f64,
            table,
            seconds,
        })
    })
    .clone()
}

fn train_gender(f: &Fixture, repr: Representation, seed: u64) -> TrainedStack {
    let ind = IndicatorConfig::default();
    train_stack(&TrainRequest {
        train: &f.probe.train,
        validation: &f.probe.validation,
        representation: repr,
        condition: Condition::Without,
        target: Target::Gender,
        indicators: &ind,
        embeddings: Some(&f.corpus.embeddings),
        config: &stack_config(),
        seed,
    })
    .unwrap()
}

#[test]
fn criterion_01_surgeon_composition() {
    let v = tp_composition(0.146, 0.545, 0.71).unwrap();
    let pass = (v - 0.116).abs() <= 0.0005;
    assert!(verdict(1, "surgeon composition", pass, &format!("{v:.5} (target 0.116 +/- 0.0005)")));
}

#[test]
fn criterion_02_composition_below_share_when_gap_negative() {
    let t = Instant::now();
    let (mut cases, mut held) = (0, 0);
    let mut worst = f64::INFINITY;
    for pi in (1..=9).map(|i| i as f64 * 0.05) {
        for a in (1..=10).map(|i| i as f64 / 10.0) {
            for b in (1..=10).map(|i| i as f64 / 10.0) {
                if a - b >= 0.0 {
                    continue;
                }
                cases += 1;
                let c = tp_composition(pi, a, b).unwrap();
                worst = worst.min(pi - c);
                if c < pi - 1e-12 {
                    held += 1;
                }
            }
        }
    }
    let pass = held == cases && cases > 0 && t.elapsed().as_secs_f64() < 1.0;
    let detail = format!("{held}/{cases} cases, smallest margin {worst:.3e}, {:.3}s", t.elapsed().as_secs_f64());
    assert!(verdict(2, "composition below share", pass, &detail));
}

#[test]
fn criterion_03_gradient_checks() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let eps = 1e-5;

    let mut linear_worst: f64 = 0.0;
    for sparse in [false, true] {
        let (n, d) = (12, 7);
        let feats = if sparse {
            let rows = (0..n)
                .map(|_| SparseVec::new((0..d).filter(|_| rng.random_bool(0.4)).collect(), d))
                .collect();
            Features::sparse(rows, d)
        } else {
            let rows: Vec<DenseVec> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            Features::dense(rows, d)
        };
        let targets: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let w: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = rng.random_range(-0.5..0.5);
        let lambda = 0.1;
        let (_, gw, gb) = binary_loss_grad(&feats, &targets, &w, b, lambda);
        for j in 0..=d {
            let at = |delta: f64| {
                let mut w2 = w.clone();
                let mut b2 = b;
                if j < d {
                    w2[j] += delta;
                } else {
                    b2 += delta;
                }
                binary_loss(&feats, &targets, &w2, b2, lambda)
            };
            let numeric = (at(eps) - at(-eps)) / (2.0 * eps);
            let analytic = if j < d { gw[j] } else { gb };
            linear_worst = linear_worst.max(rel_err(analytic, numeric));
        }
    }

    let mut rnn_worst: f64 = 0.0;
    let mut p = Params::init(3, 3, 2, 2, &mut rng);
    for t in p.tensors_mut() {
        t.iter_mut().for_each(|x| *x += rng.random_range(-0.5..0.5));
    }
    let xs: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let seq: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    for label in 0..2 {
        let mut grad = Params::zeros(3, 3, 2, 2);
        p.loss_grad(&seq, label, &mut grad);
        let analytic: Vec<Vec<f64>> = grad.tensors().iter().map(|(_, _, d)| d.to_vec()).collect();
        let mut probe = p.clone();
        for (ti, a) in analytic.iter().enumerate() {
            for (j, &aj) in a.iter().enumerate() {
                let orig = probe.tensors_mut()[ti][j];
                probe.tensors_mut()[ti][j] = orig + eps;
                let up = probe.loss(&seq, label);
                probe.tensors_mut()[ti][j] = orig - eps;
                let down = probe.loss(&seq, label);
                probe.tensors_mut()[ti][j] = orig;
                rnn_worst = rnn_worst.max(rel_err(aj, (up - down) / (2.0 * eps)));
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = linear_worst < 1e-6 && rnn_worst < 1e-4 && secs < 30.0;
    let detail = format!("linear {linear_worst:.2e} (< 1e-6), recurrent {rnn_worst:.2e} (< 1e-4), {secs:.2}s");
    assert!(verdict(3, "gradient checks", pass, &detail));
}

fn random_bio(rng: &mut impl Rng, classes: &[String], words: &[&str]) -> Biography {
    let gender = if rng.random_bool(0.5) { Gender::Female } else { Gender::Male };
    let len = rng.random_range(1..12);
    let text: Vec<&str> = (0..len).map(|_| words[rng.random_range(0..words.len())]).collect();
    let feature_text = text.join(" ");
    Biography {
        first: "Pat".into(),
        middle: None,
        last: "Doe".into(),
        occupation: classes[rng.random_range(0..classes.len())].clone(),
        gender,
        text: format!("Pat Doe is a worker. {feature_text}"),
        feature_text,
    }
}

#[test]
fn criterion_04_metrics_match_counting_oracles() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let words = ["she", "he", "her", "his", "a", "b", "c", "d", "e", "mr", "ms"];
    let ind = IndicatorConfig::default();
    let mut mismatches = Vec::new();
    for fixture in 0..100 {
        let c = rng.random_range(2..7);
        let classes: Vec<String> = (0..c).map(|i| format!("occ{i}")).collect();
        let n = rng.random_range(1..=200);
        let bios: Vec<Biography> = (0..n).map(|_| random_bio(&mut rng, &classes, &words)).collect();
        let gold: Vec<usize> = bios.iter().map(|b| classes.iter().position(|x| *x == b.occupation).unwrap()).collect();
        let genders: Vec<Gender> = bios.iter().map(|b| b.gender).collect();

        // Gap table.
        let pred: Vec<usize> = (0..n).map(|i| if rng.random_bool(0.6) { gold[i] } else { rng.random_range(0..c) }).collect();
        let table = gap_table(&pred, &gold, &genders, &classes).unwrap();
        let mut expected = Vec::new();
        for (y, name) in classes.iter().enumerate() {
            let mut support = [0; 2];
            let mut correct = [0; 2];
            for (gi, g) in Gender::BOTH.iter().enumerate() {
                support[gi] = (0..n).filter(|&i| gold[i] == y && genders[i] == *g).count();
                correct[gi] = (0..n).filter(|&i| gold[i] == y && genders[i] == *g && pred[i] == y).count();
            }
            if support != [0, 0] {
                expected.push((name.clone(), support, correct));
            }
        }
        let got: Vec<_> = table.rows.iter().map(|r| (r.occupation.clone(), r.support, r.correct)).collect();
        if got != expected {
            mismatches.push(format!("gap table in fixture {fixture}"));
        }

        // Swap audit, with a predictor that depends on the text.
        let predict = |text: &str| -> usize {
            let toks = tokenize(text);
            let score: usize = toks.iter().map(|t| t.bytes().map(usize::from).sum::<usize>()).sum();
            score % c
        };
        let report = swap_audit(&bios, &classes, &ind, |s| Ok(predict(s))).unwrap();
        let orig: Vec<usize> = bios.iter().map(|b| predict(&b.feature_text)).collect();
        let swapped: Vec<usize> = bios.iter().map(|b| predict(&swap_indicators(b, &ind))).collect();
        let mut cells = Vec::new();
        for g in Gender::BOTH {
            for y2 in 0..c {
                let denom = (0..n)
                    .filter(|&i| genders[i] == g && gold[i] == y2 && orig[i] != y2 && swapped[i] == y2)
                    .count();
                for y1 in 0..c {
                    if y1 == y2 {
                        continue;
                    }
                    let k = (0..n)
                        .filter(|&i| genders[i] == g && gold[i] == y2 && orig[i] == y1 && swapped[i] == y2)
                        .count();
                    if k > 0 {
                        cells.push((g, y1, y2, k, denom));
                    }
                }
            }
        }
        cells.sort_by_key(|&(g, y1, y2, ..)| (g, y2, y1));
        let got: Vec<_> = report.cells.iter().map(|x| (x.gender, x.from, x.to, x.count, x.denominator)).collect();
        let changed = (0..n).filter(|&i| orig[i] != swapped[i]).count();
        if got != cells || report.changed != changed || report.records != n {
            mismatches.push(format!("swap counts in fixture {fixture}"));
        }

        // Word/gender scatter.
        let docs: Vec<(Vec<String>, Gender)> = bios.iter().map(|b| (tokenize(&b.feature_text), b.gender)).collect();
        let scatter = word_gender_scatter(&docs);
        let vocab: BTreeSet<&String> = docs.iter().flat_map(|d| d.0.iter()).collect();
        let female: Vec<f64> = docs.iter().map(|d| f64::from(u8::from(d.1 == Gender::Female))).collect();
        let mut ok = scatter.points.len() == vocab.len();
        for (p, w) in scatter.points.iter().zip(&vocab) {
            let freq = docs.iter().map(|d| d.0.iter().filter(|t| t == w).count()).sum::<usize>();
            let present: Vec<f64> = docs.iter().map(|d| f64::from(u8::from(d.0.contains(w)))).collect();
            let df = (0..n).filter(|&i| present[i] == 1.0 && female[i] == 1.0).count();
            let dm = (0..n).filter(|&i| present[i] == 1.0 && female[i] == 0.0).count();
            let r = naive_pearson(&present, &female);
            ok &= p.word == **w && p.frequency == freq && p.docs_female == df && p.docs_male == dm;
            ok &= (p.correlation - r).abs() < 1e-12;
        }
        if !ok {
            mismatches.push(format!("scatter in fixture {fixture}"));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = mismatches.is_empty() && secs < 10.0;
    let detail = format!("100 fixtures, {} mismatches {:?}, {secs:.2}s", mismatches.len(), mismatches.first());
    assert!(verdict(4, "metric oracle equivalence", pass, &detail));
}

/// Pearson correlation by the textbook formula; 0 when either side is
/// constant.
fn naive_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

#[test]
fn criterion_05_compounding_dynamics() {
    let bow = occupation_stack(Representation::Bow, Condition::With, STACK_SEED);
    let t = Instant::now();
    let reg = fit_gap_regression(&bow.table.underrepresented_points()).unwrap();
    let starts = [0.1, 0.2, 0.3, 0.4];
    let negative = starts.iter().all(|&p| reg.gap_at(p) < 0.0);
    let grid = default_tpr_grid();
    let traces = run_many(&starts, 10, &reg, &grid).unwrap();
    let decreasing = traces.iter().all(|tr| tr.points.windows(2).all(|w| w[1].central < w[0].central));

    let fixed = (1..100).all(|i| {
        let pi = i as f64 / 100.0;
        grid.iter().all(|&tpr| step(pi, tpr, 0.0).unwrap() == pi)
    });
    let flat = run_many(&starts, 10, &GapRegression::new(0.0, 0.0), &grid)
        .unwrap()
        .iter()
        .all(|tr| tr.points.iter().all(|p| p.central == tr.pi0 && p.band_lo == tr.pi0 && p.band_hi == tr.pi0));

    let distinct = starts
        .iter()
        .all(|&pi| step(pi, 0.6, -0.2).unwrap() != step(pi, 0.7, -0.2).unwrap());
    let band = run_many(&starts, 10, &GapRegression::new(0.0, -0.2), &grid)
        .unwrap()
        .iter()
        .all(|tr| tr.points[1..].iter().all(|p| p.band_hi > p.band_lo));
    let secs = t.elapsed().as_secs_f64();
    let pass = negative && decreasing && fixed && flat && distinct && band && secs < 1.0;
    let ends: Vec<String> = traces.iter().map(|tr| format!("{:.2}->{:.3}", tr.pi0, tr.points[10].central)).collect();
    let detail = format!(
        "fit gap = {:.3}*pi {:+.3}; negative {negative}, decreasing {decreasing} [{}]; fixed point {fixed}, flat {flat}; \
         0.6/0.8 vs 0.7/0.9 distinct {distinct}, band open {band}; {secs:.3}s",
        reg.slope,
        reg.intercept,
        ends.join(" ")
    );
    assert!(verdict(5, "compounding dynamics", pass, &detail));
}

#[test]
fn criterion_06_synthetic_bias_reproduction() {
    let t = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for repr in Representation::ALL {
        let with = occupation_stack(repr, Condition::With, STACK_SEED);
        let without = occupation_stack(repr, Condition::Without, STACK_SEED);
        let r = gap_imbalance_correlation(&with.table).unwrap();
        let (gw, go) = (with.table.mean_abs_gap().unwrap(), without.table.mean_abs_gap().unwrap());
        let reduction = 1.0 - go / gw;
        let delta = 100.0 * (without.accuracy - with.accuracy);
        let ok = r > 0.5 && reduction >= 0.20 && delta.abs() < 2.0;
        pass &= ok;
        parts.push(format!(
            "{repr}: r {r:.3}, mean|gap| {gw:.4}->{go:.4} ({:.1}% lower), acc {:.2}%->{:.2}% ({delta:+.2} pts), train {:.0}s+{:.0}s",
            100.0 * reduction,
            100.0 * with.accuracy,
            100.0 * without.accuracy,
            with.seconds,
            without.seconds
        ));
    }
    let secs = t.elapsed().as_secs_f64();
    pass &= secs < 600.0;
    let detail = format!("{}; {secs:.0}s", parts.join("; "));
    assert!(verdict(6, "synthetic bias reproduction", pass, &detail));
}

#[test]
fn criterion_07_gender_probe() {
    let t = Instant::now();
    let ind = IndicatorConfig::default();
    let f = planted();
    let stack = train_gender(f, Representation::Bow, STACK_SEED);
    let planted_acc = stack.accuracy(&f.probe.test, &ind, None).unwrap();

    let mut cfg = SynthConfig::no_signal();
    cfg.records_per_occupation = 1600;
    let quiet = build_fixture(&cfg);
    let stack = train_gender(&quiet, Representation::Bow, STACK_SEED);
    let quiet_acc = stack.accuracy(&quiet.probe.test, &ind, None).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let pass = planted_acc > 0.55 && (quiet_acc - 0.5).abs() <= 0.03 && secs < 300.0;
    let detail = format!(
        "planted {:.2}% on {} (> 55%), no signal {:.2}% on {} (50 +/- 3), {secs:.0}s",
        100.0 * planted_acc,
        f.probe.test.len(),
        100.0 * quiet_acc,
        quiet.probe.test.len()
    );
    assert!(verdict(7, "gender probe", pass, &detail));
}

#[test]
fn criterion_08_proxy_detection() {
    let t = Instant::now();
    let f = planted();
    let ind = IndicatorConfig::default();
    let table: &EmbeddingTable = &f.corpus.embeddings;
    let scrubbed: Vec<Vec<String>> = f
        .probe
        .test
        .iter()
        .map(|b| tokenize(&input_text(b, Condition::Without, &ind)))
        .collect();
    let exclude = ind.scrub_list().clone();
    let mut top = Vec::new();
    for seed in RUN_SEEDS {
        let stack = train_gender(f, Representation::Dnn, seed);
        let agg = aggregate_attention(stack.dnn().unwrap(), &scrubbed, table).unwrap();
        top.push(proxy_candidates(&agg, 1, &exclude).first().map(|c| c.0.clone()).unwrap_or_default());
    }
    let ranked_first = top.iter().filter(|w| *w == PROXY).count();

    let mut pooled = BTreeMap::new();
    for cond in [Condition::With, Condition::Without] {
        let docs: Vec<Vec<String>> = f.split.test.iter().map(|b| tokenize(&input_text(b, cond, &ind))).collect();
        let (mut total, mut count) = (0.0, 0);
        for seed in RUN_SEEDS {
            let ev = occupation_stack(Representation::Dnn, cond, seed);
            let w = aggregate_attention(ev.stack.dnn().unwrap(), &docs, table).unwrap().get(PROXY);
            total += w.total;
            count += w.count;
        }
        pooled.insert(cond, total / count as f64);
    }
    let (with, without) = (pooled[&Condition::With], pooled[&Condition::Without]);
    let secs = t.elapsed().as_secs_f64();
    let pass = ranked_first >= 2 && without > with && secs < 600.0;
    let detail = format!(
        "top word per run {top:?} ({ranked_first}/3 are \"{PROXY}\", need 2); mean attention with {with:.5} vs without {without:.5} \
         over runs {RUN_SEEDS:?}; {secs:.0}s"
    );
    assert!(verdict(8, "proxy detection", pass, &detail));
}

fn collect_files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

const PIPELINE_CONFIG: &str = r#"
seed = 5

[paths]
corpus = "out/biographies.jsonl"
embeddings = "out/embeddings.txt"
output = "out"

[model]
min_freq = 2

[model.linear]
lambda = 1e-3

[model.dnn]
hidden = 4
attention = 4
optimizer = "adam"
lr = 0.02
epochs = 2

[probe]
min_per_cell = 5
per_cell_train = 5

[proxy]
k = 3
runs = 2
bins = 10
"#;

fn run_pipeline(dir: &Path) {
    std::fs::write(dir.join("run.toml"), PIPELINE_CONFIG).unwrap();
    let steps: &[&[&str]] = &[
        &["synth", "--records-per-occupation", "120"],
        &["extract", "out/raw.txt", "--lexicon", "out/lexicon.tsv"],
        &["split"],
        &["scrub", "--input", "out/split/test.jsonl"],
        &["scrub", "--input", "out/split/test.jsonl", "--swap"],
        &["train", "--representation", "bow"],
        &["train", "--representation", "we", "--condition", "without"],
        &["train", "--representation", "dnn"],
        &["eval", "--model", "out/models/bow-occupation-with.model", "--records", "out/split/test.jsonl"],
        &["eval", "--model", "out/models/dnn-occupation-with.model", "--records", "out/split/test.jsonl"],
        &["audit", "--predictions", "out/predictions_bow-occupation-with.csv", "--records", "out/split/test.jsonl"],
        &["swap", "--model", "out/models/dnn-occupation-with.model", "--records", "out/split/test.jsonl"],
        &["probe"],
        &["simulate", "--slope", "0.4", "--intercept", "-0.3"],
        &["proxy", "--words", "women"],
        &["report"],
    ];
    for args in steps {
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_bioaudit"))
            .current_dir(dir)
            .arg("--config")
            .arg("run.toml")
            .args(*args)
            .stdout(std::process::Stdio::null())
            .status()
            .unwrap();
        assert!(status.success(), "`{}` failed with {status}", args.join(" "));
    }
}

#[test]
fn criterion_09_determinism() {
    let t = Instant::now();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_pipeline(a.path());
    run_pipeline(b.path());
    let (fa, fb) = (collect_files(a.path()), collect_files(b.path()));
    let differing: Vec<&PathBuf> = fa.keys().filter(|k| fa.get(*k) != fb.get(*k)).collect();
    let pass = fa.len() > 20 && fa.keys().eq(fb.keys()) && differing.is_empty();
    let detail = format!(
        "{} artifacts from 16 commands, {} differ {:?}, {:.0}s",
        fa.len(),
        differing.len(),
        differing.first(),
        t.elapsed().as_secs_f64()
    );
    assert!(verdict(9, "determinism", pass, &detail));
}

fn bio(first: &str, middle: Option<&str>, last: &str, occ: &str, text: &str) -> Biography {
    Biography {
        first: first.into(),
        middle: middle.map(String::from),
        last: last.into(),
        occupation: occ.into(),
        gender: Gender::Male,
        text: text.into(),
        feature_text: String::new(),
    }
}

#[test]
fn criterion_10_corpus_rules() {
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };

    let j = |m: Option<&str>, text: &str| bio("John", m, "Smith", "surgeon", text);
    let kept = dedup(vec![j(None, "short"), j(Some("A."), "a longer text")]);
    check("absent middle name merges", kept.len() == 1 && kept[0].text == "a longer text");
    check("prefix middle name merges", dedup(vec![j(Some("Al"), "x"), j(Some("Albert"), "y")]).len() == 1);
    check("distinct initials stay", dedup(vec![j(Some("A."), "x"), j(Some("B."), "y")]).len() == 2);
    check("closure through absent middle", dedup(vec![j(Some("A."), "x"), j(None, "y"), j(Some("B."), "z")]).len() == 1);
    check("ties keep first seen", dedup(vec![j(None, "aa"), j(Some("A."), "bb")])[0].text == "aa");
    let other = vec![j(None, "x"), bio("John", None, "Smith", "nurse", "y"), bio("Jon", None, "Smith", "surgeon", "z")];
    check("different occupation or name stays", dedup(other).len() == 3);

    let many = |occ: &str, n: usize| -> Vec<Biography> {
        (0..n).map(|i| bio(&format!("P{i}"), None, "Q", occ, &format!("{occ} {i}"))).collect()
    };
    let sizes = |s: &SplitSet| [s.train.len(), s.validation.len(), s.test.len()];
    let s = stratified_split(&many("nurse", 100), PAPER_SPLIT, 1).unwrap();
    check("100 records split 65/10/25", sizes(&s) == [65, 10, 25]);
    check("7 records split 4/1/2", sizes(&stratified_split(&many("nurse", 7), PAPER_SPLIT, 1).unwrap()) == [4, 1, 2]);
    check("(1, 0, 0) keeps all in train", sizes(&stratified_split(&many("nurse", 9), [1.0, 0.0, 0.0], 1).unwrap()) == [9, 0, 0]);

    let mut mixed = many("nurse", 37);
    mixed.extend(many("surgeon", 120));
    mixed.extend(many("dj", 3));
    let s = stratified_split(&mixed, PAPER_SPLIT, 9).unwrap();
    for (occ, n) in [("nurse", 37), ("surgeon", 120), ("dj", 3)] {
        let got: Vec<usize> = [&s.train, &s.validation, &s.test]
            .iter()
            .map(|part| part.iter().filter(|b| b.occupation == occ).count())
            .collect();
        // Largest-remainder quotas, computed independently.
        let quotas: Vec<f64> = PAPER_SPLIT.iter().map(|r| r * n as f64).collect();
        let mut want: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())).then(a.cmp(&b)));
        for &i in order.iter().take(n - want.iter().sum::<usize>()) {
            want[i] += 1;
        }
        check(&format!("{occ} per-occupation sizes"), got == want && got == apportion(n, &PAPER_SPLIT).to_vec());
    }
    let mut all: Vec<String> = [&s.train, &s.validation, &s.test].iter().flat_map(|p| p.iter().map(|b| b.text.clone())).collect();
    let total = all.len();
    all.sort();
    all.dedup();
    check("disjoint and exhaustive", total == mixed.len() && all.len() == mixed.len());
    check("seeded", stratified_split(&mixed, PAPER_SPLIT, 9).unwrap() == s);

    let pass = failures.is_empty();
    let detail = if pass { "dedup 6/6 and split 8/8 fixtures".to_string() } else { format!("failed: {failures:?}") };
    assert!(verdict(10, "corpus rules", pass, &detail));
}
