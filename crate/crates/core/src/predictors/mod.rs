//! The nine link predictors behind one fit/predict contract.
//!
//! Every model scores a pair at each interval `i = 1..=L` with `ŷ_uv(i) ∈ [0, 1]`.

mod gnn;
mod linear;
mod neural;

use std::path::Path;

use nnkit::Architecture;
use serde::{Deserialize, Serialize};

use crate::error::{IoContext, Result, SlnError};
use crate::features::{column_index, FeatureTable, Standardizer, FEATURE_COLUMNS};

pub use gnn::{GnnModel, GnnParams};
pub use linear::{fit_linda, fit_svm, predict_re, svm_objective, LinearModel};
pub use neural::NnModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Re,
    Linda,
    Svm,
    Bnet,
    Fcnn,
    Cnn,
    Rnn,
    Crnn,
    Gnn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 9] = [
        Self::Re,
        Self::Linda,
        Self::Svm,
        Self::Bnet,
        Self::Fcnn,
        Self::Cnn,
        Self::Rnn,
        Self::Crnn,
        Self::Gnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Re => "re",
            Self::Linda => "linda",
            Self::Svm => "svm",
            Self::Bnet => "bnet",
            Self::Fcnn => "fcnn",
            Self::Cnn => "cnn",
            Self::Rnn => "rnn",
            Self::Crnn => "crnn",
            Self::Gnn => "gnn",
        }
    }

    pub fn default_architecture(self) -> Option<Architecture> {
        match self {
            Self::Bnet => Some(Architecture::bnet()),
            Self::Fcnn => Some(Architecture::fcnn()),
            Self::Cnn => Some(Architecture::cnn()),
            Self::Rnn => Some(Architecture::rnn()),
            Self::Crnn => Some(Architecture::crnn()),
            _ => None,
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = SlnError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase();
        if s == "re_unsup" {
            return Ok(Self::Re);
        }
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| SlnError::InvalidArgument(format!("unknown model `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    /// Each epoch visits every positive training example once, paired with an
    /// equal number of freshly drawn negatives.
    #[default]
    Balanced,
    /// Each epoch visits every training example once.
    Proportional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub sampling: Sampling,
    /// Feature columns consumed, in canonical order.
    pub columns: Vec<String>,
    /// Overrides the kind's default network.
    pub architecture: Option<Architecture>,
    pub svm_c: f64,
    pub svm_iterations: usize,
    pub gnn_dim: usize,
    pub gnn_negatives: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self::new(ModelKind::Cnn)
    }
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            epochs: 300,
            batch: 64,
            lr: 0.001,
            seed: 0,
            sampling: Sampling::Balanced,
            columns: FeatureTable::columns(),
            architecture: None,
            svm_c: 1.0,
            svm_iterations: 500,
            gnn_dim: 32,
            gnn_negatives: 2,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn architecture(&self) -> Option<Architecture> {
        self.architecture.clone().or_else(|| self.kind.default_architecture())
    }

    /// Column indices into the full feature vector, validated and in canonical order.
    pub fn column_indices(&self) -> Result<Vec<usize>> {
        let mut idx = Vec::with_capacity(self.columns.len());
        for c in &self.columns {
            idx.push(column_index(c).ok_or_else(|| SlnError::FeatureOrder {
                expected: FeatureTable::columns(),
                found: self.columns.clone(),
            })?);
        }
        if idx.is_empty() || idx.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SlnError::FeatureOrder {
                expected: FeatureTable::columns(),
                found: self.columns.clone(),
            });
        }
        Ok(idx)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ModelParams {
    Re,
    Linear(LinearModel),
    Nn(NnModel),
    Gnn(GnnModel),
}

/// A fitted predictor plus everything needed to score new data reproducibly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format: String,
    pub version: u32,
    pub spec: ModelSpec,
    /// Full column order of the table the model was trained on.
    pub feature_columns: Vec<String>,
    pub standardizer: Option<Standardizer>,
    /// Epoch-mean training loss.
    pub loss_log: Vec<f64>,
    pub params: ModelParams,
}

pub const CHECKPOINT_FORMAT: &str = "sln-model";

fn both_classes(labels: impl Iterator<Item = u8>) -> Result<()> {
    let (mut pos, mut neg) = (false, false);
    for y in labels {
        if y == 1 {
            pos = true;
        } else {
            neg = true;
        }
    }
    if pos && neg {
        Ok(())
    } else {
        Err(SlnError::SingleClass)
    }
}

/// Trains `spec` on the given pairs (indices into `table.series`).
pub fn fit(spec: &ModelSpec, table: &FeatureTable, train_pairs: &[usize]) -> Result<TrainedModel> {
    if train_pairs.is_empty() {
        return Err(SlnError::InvalidArgument("empty training set".into()));
    }
    let columns = spec.column_indices()?;
    both_classes(train_pairs.iter().flat_map(|&p| table.series[p].labels.iter().copied()))?;
    let mut standardizer = None;
    let mut loss_log = Vec::new();
    let params = match spec.kind {
        ModelKind::Re => ModelParams::Re,
        ModelKind::Linda | ModelKind::Svm => {
            let (x, y, std) = linear::design(table, train_pairs, &columns);
            standardizer = Some(std);
            let model = if spec.kind == ModelKind::Linda {
                fit_linda(&x, &y)?
            } else {
                let (m, log) = fit_svm(&x, &y, spec.svm_c, spec.svm_iterations)?;
                loss_log = log;
                m
            };
            ModelParams::Linear(model)
        }
        ModelKind::Bnet | ModelKind::Fcnn | ModelKind::Cnn | ModelKind::Rnn | ModelKind::Crnn => {
            let (model, std, log) = neural::fit(spec, table, train_pairs, &columns)?;
            standardizer = Some(std);
            loss_log = log;
            ModelParams::Nn(model)
        }
        ModelKind::Gnn => {
            let (model, log) = gnn::fit(spec, table, train_pairs)?;
            loss_log = log;
            ModelParams::Gnn(model)
        }
    };
    Ok(TrainedModel {
        format: CHECKPOINT_FORMAT.into(),
        version: 1,
        spec: spec.clone(),
        feature_columns: FeatureTable::columns(),
        standardizer,
        loss_log,
        params,
    })
}

impl TrainedModel {
    /// `ŷ_uv(i)` for every interval of each pair, `result[k][i - 1]` for `pairs[k]`.
    pub fn predict(&self, table: &FeatureTable, pairs: &[usize]) -> Result<Vec<Vec<f64>>> {
        if self.feature_columns != FEATURE_COLUMNS {
            return Err(SlnError::FeatureOrder {
                expected: self.feature_columns.clone(),
                found: FeatureTable::columns(),
            });
        }
        let columns = self.spec.column_indices()?;
        match &self.params {
            ModelParams::Re => Ok(predict_re(table, pairs)),
            ModelParams::Linear(m) => {
                let std = self.standardizer.as_ref().ok_or_else(|| SlnError::Format("linear model without standardizer".into()))?;
                Ok(m.predict(table, pairs, &columns, std))
            }
            ModelParams::Nn(m) => {
                let std = self.standardizer.as_ref().ok_or_else(|| SlnError::Format("network without standardizer".into()))?;
                m.predict(table, pairs, &columns, std)
            }
            ModelParams::Gnn(m) => m.predict(table, pairs),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let model: Self = serde_json::from_str(&std::fs::read_to_string(path).at(path)?)?;
        if model.format != CHECKPOINT_FORMAT || model.version != 1 {
            return Err(SlnError::Format(format!("expected {CHECKPOINT_FORMAT} v1, found {} v{}", model.format, model.version)));
        }
        Ok(model)
    }

    pub fn network(&self) -> Option<nnkit::Network> {
        match &self.params {
            ModelParams::Nn(m) => m.network().ok(),
            _ => None,
        }
    }
}
