//! Synthetic biography corpus with controllable gender imbalance, ambiguous
//! content and a planted gender proxy word, plus matching structured
//! embeddings.
//!
//! Occupations come in confusable pairs. A record's content words come from
//! its own occupation's pool, except for an `ambiguous_rate` fraction whose
//! content comes only from the pool shared by the pair. For those records
//! gender is the only usable signal, which is what produces TPR gaps.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{extract_from_reader, finalize_extraction, Biography, ExtractionStats, Gender, OccupationLexicon};
use crate::error::Result;
use crate::represent::EmbeddingTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthOccupation {
    pub name: String,
    pub pi_female: f64,
    /// Occupations with the same pair id share an ambiguous content pool.
    pub pair: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub occupations: Vec<SynthOccupation>,
    pub records_per_occupation: usize,
    pub ambiguous_rate: f64,
    pub proxy_token: String,
    pub proxy_rate_female: f64,
    pub proxy_rate_male: f64,
    /// Fraction of extra lines that are not biographies.
    pub noise_rate: f64,
    pub embedding_dim: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::planted()
    }
}

fn occ(name: &str, pi_female: f64, pair: usize) -> SynthOccupation {
    SynthOccupation {
        name: name.into(),
        pi_female,
        pair,
    }
}

impl SynthConfig {
    /// Three confusable pairs with opposite imbalances and a proxy word
    /// planted in female biographies.
    pub fn planted() -> Self {
        Self {
            occupations: vec![
                occ("surgeon", 0.15, 0),
                occ("nurse", 0.90, 0),
                occ("attorney", 0.35, 1),
                occ("paralegal", 0.80, 1),
                occ("architect", 0.25, 2),
                occ("interior designer", 0.70, 2),
            ],
            records_per_occupation: 1500,
            ambiguous_rate: 0.07,
            proxy_token: "women".into(),
            proxy_rate_female: 0.6,
            proxy_rate_male: 0.0,
            noise_rate: 0.02,
            embedding_dim: 24,
            seed: 20190101,
        }
    }

    /// Balanced occupations and no proxy: after scrubbing, text carries no
    /// information about gender.
    pub fn no_signal() -> Self {
        let mut cfg = Self::planted();
        for o in &mut cfg.occupations {
            o.pi_female = 0.5;
        }
        cfg.proxy_rate_female = 0.0;
        cfg.proxy_rate_male = 0.0;
        cfg
    }
}

const FEMALE_NAMES: &[&str] = &[
    "Nancy", "Mary", "Linda", "Susan", "Karen", "Lisa", "Sarah", "Emily", "Laura", "Anna", "Julia",
    "Rachel", "Megan", "Hannah", "Olivia", "Grace", "Chloe", "Sophie", "Alice", "Helen", "Diana",
    "Irene", "Judith", "Paula", "Rosa", "Tessa", "Vera", "Wendy", "Yvonne", "Zoe",
];
const MALE_NAMES: &[&str] = &[
    "John", "David", "Michael", "James", "Robert", "William", "Thomas", "Daniel", "Mark", "Paul",
    "Steven", "Kevin", "Brian", "George", "Edward", "Frank", "Henry", "Peter", "Victor", "Walter",
    "Oscar", "Hugo", "Ivan", "Felix", "Gordon", "Harold", "Louis", "Martin", "Neil", "Simon",
];
const SURNAME_HEADS: &[&str] = &[
    "Bar", "Cal", "Dun", "Fen", "Gar", "Hal", "Kel", "Lam", "Mor", "Nor", "Pen", "Ras", "Sel",
    "Tor", "Van", "Wes", "Ash", "Bel", "Cor", "Dal",
];
const SURNAME_MIDS: &[&str] = &["", "a", "e", "i", "o", "en", "er", "ing", "ham", "wick"];
const SURNAME_TAILS: &[&str] = &["ton", "ley", "son", "ford", "man", "well", "by", "more", "worth", "dale"];

const FILLER: &[&str] = &[
    "community", "projects", "clients", "teams", "city", "region", "years", "decade", "local",
    "national", "programs", "training", "leadership", "experience", "members", "partners",
    "organization", "group", "students", "mentoring", "volunteers", "events", "workshops",
    "conferences", "publications", "awards", "board", "committee", "association", "network",
    "public", "private", "family", "friends", "travel", "music", "reading", "hiking", "cooking",
    "gardening", "photography", "sports", "art", "history", "languages", "volunteering", "charity",
    "service", "quality", "standards", "research", "innovation", "growth", "development",
    "outreach", "support", "collaboration", "excellence", "practice", "field", "industry",
    "company", "firm", "office", "department", "center", "institute", "university", "college",
    "school", "course", "degree", "certificate", "license", "membership", "fellowship", "award",
    "honor", "recognition", "career", "work", "role", "position", "staff", "colleagues", "peers",
    "newcomers", "youth", "seniors", "veterans", "families", "neighbors", "residents", "citizens",
];
const VERBS: &[&str] = &[
    "handles", "manages", "supports", "leads", "coordinates", "oversees", "delivers", "reviews",
    "develops", "focuses on", "specializes in", "works on", "enjoys", "studies", "teaches",
    "advises on", "contributes to", "organizes",
];
const ADJECTIVES: &[&str] = &[
    "skilled", "dedicated", "experienced", "careful", "thoughtful", "reliable", "creative",
    "patient", "respected", "talented", "diligent", "energetic", "calm", "precise",
];
const NOUNS: &[&str] = &[
    "work", "background", "experience", "portfolio", "schedule", "training", "practice",
    "expertise", "interest", "career",
];

/// Content words per occupation, in the order of [`SynthConfig::planted`].
fn content_pool(name: &str) -> &'static [&'static str] {
    match name {
        "surgeon" => &[
            "surgery", "operating", "incision", "scalpel", "orthopedic", "cardiac", "transplant",
            "laparoscopic", "sutures", "anesthesia", "fracture", "spine", "residency", "trauma",
            "vascular", "implants", "surgical", "resection", "grafts", "arthroscopy",
        ],
        "nurse" => &[
            "nursing", "bedside", "medication", "triage", "wards", "shifts", "vitals", "caregiving",
            "pediatric", "midwifery", "infusion", "charting", "hygiene", "rounds", "wound",
            "immunization", "discharge", "compassionate", "registered", "dressing",
        ],
        "attorney" => &[
            "litigation", "courtroom", "lawsuits", "trial", "counsel", "plaintiffs", "defense",
            "appeals", "verdicts", "arbitration", "prosecution", "jury", "settlements", "bar",
            "injunctions", "testimony", "advocacy", "tort", "antitrust", "clerkship",
        ],
        "paralegal" => &[
            "filings", "docketing", "notarizing", "paperwork", "dockets", "subpoenas", "indexing",
            "transcripts", "affidavits", "exhibits", "scheduling", "correspondence", "binders",
            "summaries", "forms", "deadlines", "clerical", "archives", "citations", "proofreading",
        ],
        "architect" => &[
            "blueprints", "structural", "buildings", "zoning", "facades", "skyscrapers", "urban",
            "masterplans", "towers", "bridges", "cad", "sustainable", "construction", "engineering",
            "foundations", "campuses", "pavilions", "elevations", "civic", "infrastructure",
        ],
        "interior designer" => &[
            "furnishings", "upholstery", "decor", "fabrics", "palettes", "lighting", "textiles",
            "rugs", "wallpaper", "cushions", "staging", "ornaments", "draperies", "tiles",
            "antiques", "boutique", "showrooms", "ambiance", "cabinetry", "accessories",
        ],
        _ => &["tasks", "duties", "assignments", "operations", "services", "products"],
    }
}

/// Content words shared within a pair.
fn shared_pool(pair: usize) -> &'static [&'static str] {
    match pair % 3 {
        0 => &[
            "patients", "hospital", "clinic", "care", "health", "medical", "treatment", "recovery",
            "diagnosis", "emergency", "physicians", "healthcare", "clinical", "procedures",
        ],
        1 => &[
            "legal", "law", "cases", "court", "documents", "contracts", "disputes", "statutes",
            "regulations", "compliance", "matters", "agreements", "briefs", "discovery",
        ],
        _ => &[
            "design", "spaces", "interiors", "renovation", "layouts", "drawings", "residential",
            "commercial", "materials", "floor", "rooms", "aesthetics", "plans", "homes",
        ],
    }
}

const FEMALE_INDICATORS: &[&str] = &["she", "her", "hers", "herself", "ms", "mrs"];
const MALE_INDICATORS: &[&str] = &["he", "his", "him", "himself", "mr"];

struct Pronouns {
    subj: &'static str,
    poss: &'static str,
    obj: &'static str,
    hon: &'static str,
}

fn pronouns(g: Gender, rng: &mut impl Rng) -> Pronouns {
    match g {
        Gender::Female => Pronouns {
            subj: "She",
            poss: "Her",
            obj: "her",
            hon: if rng.random_bool(0.5) { "Ms." } else { "Mrs." },
        },
        Gender::Male => Pronouns {
            subj: "He",
            poss: "His",
            obj: "him",
            hon: "Mr.",
        },
    }
}

fn surname(rng: &mut impl Rng) -> String {
    format!(
        "{}{}{}",
        SURNAME_HEADS.choose(rng).unwrap(),
        SURNAME_MIDS.choose(rng).unwrap(),
        SURNAME_TAILS.choose(rng).unwrap()
    )
}

fn article(word: &str) -> &'static str {
    if word.starts_with(['a', 'e', 'i', 'o', 'u']) {
        "an"
    } else {
        "a"
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub lines: Vec<String>,
    pub embeddings: EmbeddingTable,
    pub lexicon: OccupationLexicon,
}

impl SynthCorpus {
    pub fn raw_text(&self) -> String {
        let mut s = self.lines.join("\n");
        s.push('\n');
        s
    }

    /// Runs the extraction pipeline over the generated lines.
    pub fn biographies(&self) -> Result<(Vec<Biography>, ExtractionStats)> {
        let mut stats = ExtractionStats::default();
        let mut out = Vec::new();
        let text = self.raw_text();
        extract_from_reader(text.as_bytes(), &self.lexicon, &mut stats, &mut out)
            .map_err(|e| crate::error::Error::io("<synthetic>", e))?;
        let bios = finalize_extraction(out, &mut stats);
        Ok((bios, stats))
    }
}

struct Writer<'a> {
    cfg: &'a SynthConfig,
    rng: ChaCha8Rng,
}

impl Writer<'_> {
    fn pick(&mut self, pool: &[&'static str]) -> &'static str {
        pool.choose(&mut self.rng).unwrap()
    }

    fn content(&mut self, own: &'static [&'static str], shared: &'static [&'static str], ambiguous: bool) -> &'static str {
        if ambiguous || self.rng.random_bool(0.4) {
            self.pick(shared)
        } else {
            self.pick(own)
        }
    }

    fn body(&mut self, o: &SynthOccupation, g: Gender, last: &str) -> String {
        let ambiguous = self.rng.random_bool(self.cfg.ambiguous_rate);
        let proxy_rate = match g {
            Gender::Female => self.cfg.proxy_rate_female,
            Gender::Male => self.cfg.proxy_rate_male,
        };
        let own = content_pool(&o.name);
        let shared = shared_pool(o.pair);
        let p = pronouns(g, &mut self.rng);
        let n = self.rng.random_range(4..=6);
        let proxy_at = self
            .rng
            .random_bool(proxy_rate)
            .then(|| self.rng.random_range(0..n));
        let mut sentences = Vec::with_capacity(n);
        for i in 0..n {
            let c1 = self.content(own, shared, ambiguous);
            let c2 = self.content(own, shared, ambiguous);
            let f1 = if proxy_at == Some(i) {
                self.cfg.proxy_token.as_str()
            } else {
                self.pick(FILLER)
            };
            let f2 = self.pick(FILLER);
            let verb = self.pick(VERBS);
            let s = match (i, self.rng.random_range(0..5)) {
                (0, _) | (_, 0) => format!("{} {verb} {c1} and {c2} for {f1}.", p.subj),
                (_, 1) => format!("{} {} includes {c1}, {c2} and {f1}.", p.poss, self.pick(NOUNS)),
                (_, 2) => format!("{} {verb} {f1} with {c1} {f2}.", p.subj),
                (_, 3) => format!(
                    "Colleagues describe {} as {} in {c1} and {f1}.",
                    p.obj,
                    self.pick(ADJECTIVES)
                ),
                _ => format!("{} {last} {verb} {c1} {f1} and {f2}.", p.hon),
            };
            sentences.push(s);
        }
        sentences.join(" ")
    }
}

pub fn generate(cfg: &SynthConfig) -> SynthCorpus {
    let mut w = Writer {
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
    };
    let mut used = BTreeSet::new();
    let mut lines = Vec::new();
    for o in &cfg.occupations {
        let n_female = (o.pi_female * cfg.records_per_occupation as f64).round() as usize;
        for i in 0..cfg.records_per_occupation {
            let g = if i < n_female { Gender::Female } else { Gender::Male };
            let names = match g {
                Gender::Female => FEMALE_NAMES,
                Gender::Male => MALE_NAMES,
            };
            let (first, last) = loop {
                let first = *names.choose(&mut w.rng).unwrap();
                let last = surname(&mut w.rng);
                if used.insert((first, last.clone(), o.name.clone())) {
                    break (first, last);
                }
            };
            let middle = if w.rng.random_bool(0.2) {
                let c = (b'A' + w.rng.random_range(0..26u8)) as char;
                format!("{c}. ")
            } else {
                String::new()
            };
            let body = w.body(o, g, &last);
            lines.push(format!(
                "{first} {middle}{last} is {} {}. {body}",
                article(&o.name),
                o.name
            ));
            if w.rng.random_bool(cfg.noise_rate) {
                let f1 = w.pick(FILLER);
                let f2 = w.pick(FILLER);
                lines.push(format!("Welcome to our {f1} page about {f2} and more."));
            }
        }
    }
    // interleave occupations so the raw file is not grouped by label
    use rand::seq::SliceRandom;
    lines.shuffle(&mut w.rng);
    let lexicon = OccupationLexicon::new(cfg.occupations.iter().map(|o| (o.name.as_str(), o.name.as_str())))
        .expect("synthetic occupations are non-empty");
    SynthCorpus {
        lines,
        embeddings: synth_structured_embeddings(cfg),
        lexicon,
    }
}

fn unit(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn random_unit(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    unit(&mut v);
    v
}

/// Embeddings where words of one group (an occupation pool, a shared pool,
/// female or male indicators with the proxy word joining the female group)
/// lie around a common direction.
pub fn synth_structured_embeddings(cfg: &SynthConfig) -> EmbeddingTable {
    fn add_group<S: AsRef<str>>(words: &[S], centred: bool, rng: &mut ChaCha8Rng, table: &mut EmbeddingTable) {
        let dim = table.dim();
        let centre = random_unit(dim, rng);
        for w in words {
            let noise = random_unit(dim, rng);
            let mut v: Vec<f64> = if centred {
                centre.iter().zip(&noise).map(|(c, n)| c + 0.6 * n).collect()
            } else {
                noise
            };
            unit(&mut v);
            // words already placed by an earlier group keep that vector
            let _ = table.insert(w.as_ref(), &v);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x00E3_B0C4_4298_FC1C);
    let mut table = EmbeddingTable::new(cfg.embedding_dim);
    let lower = |names: &[&str]| -> Vec<String> { names.iter().map(|n| n.to_lowercase()).collect() };
    // The proxy gets an unstructured vector: its link to gender comes only
    // from co-occurrence.
    let mut female: Vec<String> = FEMALE_INDICATORS.iter().map(|s| s.to_string()).collect();
    female.extend(lower(FEMALE_NAMES));
    add_group(&female, true, &mut rng, &mut table);
    let mut male: Vec<String> = MALE_INDICATORS.iter().map(|s| s.to_string()).collect();
    male.extend(lower(MALE_NAMES));
    add_group(&male, true, &mut rng, &mut table);
    let mut pairs = BTreeSet::new();
    for o in &cfg.occupations {
        add_group(content_pool(&o.name), true, &mut rng, &mut table);
        pairs.insert(o.pair % 3);
    }
    for p in pairs {
        add_group(shared_pool(p), true, &mut rng, &mut table);
    }
    let mut plain: Vec<&str> = FILLER.iter().chain(ADJECTIVES).chain(NOUNS).copied().collect();
    for v in VERBS {
        plain.extend(v.split(' '));
    }
    plain.extend([
        "is", "a", "an", "and", "for", "with", "in", "as", "includes", "colleagues", "describe",
    ]);
    plain.push(&cfg.proxy_token);
    for o in &cfg.occupations {
        plain.extend(o.name.split(' '));
    }
    add_group(&plain, false, &mut rng, &mut table);
    table
}
