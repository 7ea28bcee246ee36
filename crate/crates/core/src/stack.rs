//! Classifier stacks: a text representation (bag of words, averaged
//! embeddings, or the recurrent encoder) paired with its classifier, trained
//! on either the raw or the scrubbed feature text.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Biography, Gender};
use crate::error::{Error, Result};
use crate::linear::{train_linear, Features, LinearConfig, LinearModel};
use crate::represent::{
    bow_vector, tokenize, we_vector_with, Averaging, EmbeddingTable, Vocabulary, DEFAULT_MIN_FREQ,
};
use crate::rnn::{encode_tokens, softmax, train_dnn, DnnConfig, Encoded, GruAttentionModel, TrainLog};
use crate::scrub::{scrub, IndicatorConfig};

macro_rules! keyword_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub fn as_str(self) -> &'static str {
                match self {
                    $(Self::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok(Self::$variant),)+
                    _ => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($name), " `{}`"),
                        s
                    ))),
                }
            }
        }
    };
}

keyword_enum!(Representation { Bow => "bow", We => "we", Dnn => "dnn" });
keyword_enum!(Condition { With => "with", Without => "without" });
keyword_enum!(Target { Occupation => "occupation", Gender => "gender" });

impl Representation {
    pub const ALL: [Representation; 3] = [Self::Bow, Self::We, Self::Dnn];

    pub fn needs_embeddings(self) -> bool {
        self != Self::Bow
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StackConfig {
    pub min_freq: usize,
    pub averaging: Averaging,
    pub linear: LinearConfig,
    pub dnn: DnnConfig,
}

impl Default for StackConfig {
    fn default() -> Self {
        Self {
            min_freq: DEFAULT_MIN_FREQ,
            averaging: Averaging::Types,
            linear: LinearConfig::default(),
            dnn: DnnConfig::default(),
        }
    }
}

/// Text a stack sees for a record under a condition.
pub fn input_text(bio: &Biography, condition: Condition, indicators: &IndicatorConfig) -> String {
    match condition {
        Condition::With => bio.feature_text.clone(),
        Condition::Without => scrub(bio, indicators),
    }
}

/// Sorted distinct class labels for a target.
pub fn classes_for(records: &[Biography], target: Target) -> Vec<String> {
    match target {
        Target::Gender => Gender::BOTH.iter().map(|g| g.to_string()).collect(),
        Target::Occupation => {
            let set: std::collections::BTreeSet<&str> =
                records.iter().map(|r| r.occupation.as_str()).collect();
            set.into_iter().map(String::from).collect()
        }
    }
}

fn label_name(bio: &Biography, target: Target) -> &str {
    match target {
        Target::Occupation => &bio.occupation,
        Target::Gender => bio.gender.as_str(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Classifier {
    Bow {
        vocabulary: Vocabulary,
        model: LinearModel,
    },
    We {
        averaging: Averaging,
        model: LinearModel,
    },
    #[serde(skip)]
    Dnn(Box<GruAttentionModel>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedStack {
    pub representation: Representation,
    pub condition: Condition,
    pub target: Target,
    pub classes: Vec<String>,
    pub classifier: Classifier,
}

fn need_table(table: Option<&EmbeddingTable>) -> Result<&EmbeddingTable> {
    table.ok_or_else(|| Error::Config("this representation requires an embedding table".into()))
}

pub struct TrainRequest<'a> {
    pub train: &'a [Biography],
    pub validation: &'a [Biography],
    pub representation: Representation,
    pub condition: Condition,
    pub target: Target,
    pub indicators: &'a IndicatorConfig,
    pub embeddings: Option<&'a EmbeddingTable>,
    pub config: &'a StackConfig,
    pub seed: u64,
}

pub fn train_stack(req: &TrainRequest<'_>) -> Result<TrainedStack> {
    Ok(train_stack_logged(req)?.0)
}

/// Like [`train_stack`], also returning the per-epoch log of a recurrent
/// stack.
pub fn train_stack_logged(req: &TrainRequest<'_>) -> Result<(TrainedStack, Option<TrainLog>)> {
    let classes = classes_for(req.train, req.target);
    let label_of = |b: &Biography| -> Result<usize> {
        let name = label_name(b, req.target);
        classes
            .binary_search_by(|c| c.as_str().cmp(name))
            .map_err(|_| Error::Data(format!("label `{name}` not seen in training data")))
    };
    let tokens = |recs: &[Biography]| -> Vec<Vec<String>> {
        recs.iter()
            .map(|b| tokenize(&input_text(b, req.condition, req.indicators)))
            .collect()
    };
    let train_tokens = tokens(req.train);
    let labels: Vec<usize> = req.train.iter().map(label_of).collect::<Result<_>>()?;
    let mut log = None;
    let classifier = match req.representation {
        Representation::Bow => {
            let vocabulary = Vocabulary::build(&train_tokens, req.config.min_freq)?;
            let rows = train_tokens.iter().map(|t| bow_vector(t, &vocabulary)).collect();
            let feats = Features::sparse(rows, vocabulary.len());
            let model = train_linear(&feats, &labels, &classes, &req.config.linear, req.seed)?;
            Classifier::Bow { vocabulary, model }
        }
        Representation::We => {
            let table = need_table(req.embeddings)?;
            let averaging = req.config.averaging;
            let rows = train_tokens.iter().map(|t| we_vector_with(t, table, averaging)).collect();
            let feats = Features::dense(rows, table.dim());
            let model = train_linear(&feats, &labels, &classes, &req.config.linear, req.seed)?;
            Classifier::We { averaging, model }
        }
        Representation::Dnn => {
            let table = need_table(req.embeddings)?;
            let enc = |toks: &[Vec<String>], recs: &[Biography]| -> Result<Vec<Encoded>> {
                toks.iter()
                    .zip(recs)
                    .map(|(t, b)| {
                        Ok(Encoded {
                            ids: encode_tokens(t, table),
                            label: label_of(b)?,
                        })
                    })
                    .collect()
            };
            let train = enc(&train_tokens, req.train)?;
            let validation = enc(&tokens(req.validation), req.validation)?;
            let (mut model, dnn_log) =
                train_dnn(&train, &validation, table, classes.clone(), &req.config.dnn, req.seed)?;
            model.tags = vec![
                ("representation".into(), "dnn".into()),
                ("condition".into(), req.condition.to_string()),
                ("target".into(), req.target.to_string()),
            ];
            log = Some(dnn_log);
            Classifier::Dnn(Box::new(model))
        }
    };
    let stack = TrainedStack {
        representation: req.representation,
        condition: req.condition,
        target: req.target,
        classes,
        classifier,
    };
    Ok((stack, log))
}

impl TrainedStack {
    /// Predicted class index for a tokenized text. A recurrent stack with no
    /// known token falls back to its output bias.
    pub fn predict_tokens<S: AsRef<str>>(
        &self,
        tokens: &[S],
        table: Option<&EmbeddingTable>,
    ) -> Result<usize> {
        match &self.classifier {
            Classifier::Bow { vocabulary, model } => {
                let x = bow_vector(tokens, vocabulary);
                Ok(model.predict(crate::linear::Row::Sparse(&x))?.0)
            }
            Classifier::We { averaging, model } => {
                let x = we_vector_with(tokens, need_table(table)?, *averaging);
                Ok(model.predict(crate::linear::Row::Dense(&x))?.0)
            }
            Classifier::Dnn(model) => {
                let table = need_table(table)?;
                let ids = encode_tokens(tokens, table);
                let probs = if ids.is_empty() {
                    softmax(&model.params.b_o)
                } else {
                    model.predict_ids(&ids, table)?
                };
                Ok(crate::linear::argmax(&probs))
            }
        }
    }

    pub fn predict_text(&self, text: &str, table: Option<&EmbeddingTable>) -> Result<usize> {
        self.predict_tokens(&tokenize(text), table)
    }

    /// Predictions on records, using the text the stack was trained on.
    pub fn predict_records(
        &self,
        records: &[Biography],
        indicators: &IndicatorConfig,
        table: Option<&EmbeddingTable>,
    ) -> Result<Vec<usize>> {
        records
            .iter()
            .map(|b| self.predict_text(&input_text(b, self.condition, indicators), table))
            .collect()
    }

    /// Gold class indices; labels outside the class list are an error.
    pub fn gold(&self, records: &[Biography]) -> Result<Vec<usize>> {
        records
            .iter()
            .map(|b| {
                let name = label_name(b, self.target);
                self.classes
                    .iter()
                    .position(|c| c == name)
                    .ok_or_else(|| Error::Data(format!("label `{name}` unknown to the model")))
            })
            .collect()
    }

    pub fn accuracy(
        &self,
        records: &[Biography],
        indicators: &IndicatorConfig,
        table: Option<&EmbeddingTable>,
    ) -> Result<f64> {
        if records.is_empty() {
            return Err(Error::EmptySplit);
        }
        let pred = self.predict_records(records, indicators, table)?;
        let gold = self.gold(records)?;
        let hits = pred.iter().zip(&gold).filter(|(a, b)| a == b).count();
        Ok(hits as f64 / records.len() as f64)
    }

    pub fn dnn(&self) -> Option<&GruAttentionModel> {
        match &self.classifier {
            Classifier::Dnn(m) => Some(m),
            _ => None,
        }
    }

    /// Linear stacks are written as JSON, recurrent ones in the binary model
    /// format with the stack settings stored as tags.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        match &self.classifier {
            Classifier::Dnn(m) => Ok(m.to_bytes()),
            _ => Ok(serde_json::to_vec_pretty(self)?),
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.starts_with(b"BGRU") {
            let model = GruAttentionModel::read_from(bytes)?;
            let tag = |k: &str| -> Result<&str> {
                model
                    .tag(k)
                    .ok_or_else(|| Error::Data(format!("model file lacks the `{k}` tag")))
            };
            let condition = tag("condition")?.parse()?;
            let target = tag("target")?.parse()?;
            return Ok(Self {
                representation: Representation::Dnn,
                condition,
                target,
                classes: model.classes.clone(),
                classifier: Classifier::Dnn(Box::new(model)),
            });
        }
        let mut stack: TrainedStack = serde_json::from_slice(bytes)?;
        if let Classifier::Bow { vocabulary, .. } = &mut stack.classifier {
            vocabulary.reindex();
        }
        Ok(stack)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
