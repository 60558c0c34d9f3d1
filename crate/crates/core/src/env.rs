//! Classification datasets replayed as bandit environments.
//!
//! Each class label becomes an arm. At every step the environment emits the
//! features of one row and pays reward 1 iff the chosen arm is that row's
//! class. Rows are visited in a fresh random order per pass over the data.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{ArmId, Context};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Horizon used by the reference protocol.
pub const DEFAULT_HORIZON: usize = 3000;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LabelColumn {
    Name(String),
    Index(usize),
    #[default]
    Last,
}

impl std::str::FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    /// All-digit strings select by index, `last` the final column, anything
    /// else by header name.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) if s == "last" => LabelColumn::Last,
            Err(_) => LabelColumn::Name(s.to_owned()),
        })
    }
}

impl std::fmt::Display for LabelColumn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LabelColumn::Name(n) => f.write_str(n),
            LabelColumn::Index(i) => write!(f, "{i}"),
            LabelColumn::Last => f.write_str("last"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    /// z-score numeric columns with full-dataset mean and standard deviation.
    pub standardize: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { standardize: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    contexts: Vec<Context>,
    labels: Vec<ArmId>,
    class_count: usize,
    feature_names: Vec<String>,
    label_mapping: Vec<String>,
}

/// Reproducibility record for a loaded dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub d: usize,
    pub feature_names: Vec<String>,
    /// `label_mapping[arm]` is the original label of that arm.
    pub label_mapping: Vec<String>,
}

impl Dataset {
    pub fn from_parts(
        contexts: Vec<Context>,
        labels: Vec<ArmId>,
        feature_names: Vec<String>,
        label_mapping: Vec<String>,
    ) -> Result<Self> {
        let class_count = label_mapping.len();
        if class_count < 2 {
            return Err(Error::Data(format!(
                "need at least 2 classes, found {class_count}"
            )));
        }
        if contexts.is_empty() {
            return Err(Error::Data("dataset has no usable rows".into()));
        }
        if contexts.len() != labels.len() {
            return Err(Error::Data(format!(
                "{} contexts but {} labels",
                contexts.len(),
                labels.len()
            )));
        }
        let d = feature_names.len();
        if let Some(i) = contexts.iter().position(|c| c.dim() != d) {
            return Err(Error::Data(format!(
                "row {i} has {} features, expected {d}",
                contexts[i].dim()
            )));
        }
        if let Some(l) = labels.iter().find(|l| l.0 >= class_count) {
            return Err(Error::Data(format!(
                "label {l} out of range for {class_count} classes"
            )));
        }
        Ok(Dataset {
            contexts,
            labels,
            class_count,
            feature_names,
            label_mapping,
        })
    }

    pub fn len(&self) -> usize {
        self.contexts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contexts.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn contexts(&self) -> &[Context] {
        &self.contexts
    }

    pub fn labels(&self) -> &[ArmId] {
        &self.labels
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn label_mapping(&self) -> &[String] {
        &self.label_mapping
    }

    /// Appends a constant `1.0` feature named `intercept`.
    pub fn with_intercept(mut self) -> Self {
        for c in &mut self.contexts {
            let mut v = std::mem::replace(c, Context::zeros(0)).into_inner();
            v.push(1.0);
            *c = Context::new(v).expect("finite features stay finite");
        }
        self.feature_names.push("intercept".into());
        self
    }

    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            n: self.len(),
            k: self.class_count,
            d: self.dim(),
            feature_names: self.feature_names.clone(),
            label_mapping: self.label_mapping.clone(),
        }
    }
}

fn is_missing(field: &str) -> bool {
    matches!(field, "" | "?" | "NA" | "N/A" | "NaN" | "nan" | "null")
}

/// Loads a headered CSV, one-hot encoding non-numeric feature columns.
pub fn load_dataset(
    path: impl AsRef<Path>,
    label: &LabelColumn,
    opts: LoadOptions,
) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file, label, opts).map_err(|e| match e {
        Error::Csv { source, .. } => Error::csv(path, source),
        other => other,
    })
}

pub fn read_dataset<R: std::io::Read>(
    reader: R,
    label: &LabelColumn,
    opts: LoadOptions,
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::csv("<dataset>", e))?
        .iter()
        .map(str::to_owned)
        .collect();
    let label_idx = match label {
        LabelColumn::Last if !headers.is_empty() => headers.len() - 1,
        LabelColumn::Last => return Err(Error::Data("dataset has no columns".into())),
        LabelColumn::Index(i) if *i < headers.len() => *i,
        LabelColumn::Index(i) => {
            return Err(Error::Data(format!(
                "label column index {i} out of range ({} columns)",
                headers.len()
            )))
        }
        LabelColumn::Name(name) => headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("label column {name:?} not found")))?,
    };

    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut dropped = 0usize;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::csv("<dataset>", e))?;
        if rec.len() != headers.len() || rec.iter().any(is_missing) {
            dropped += 1;
            continue;
        }
        rows.push(rec.iter().map(str::to_owned).collect());
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} rows with missing values");
    }
    if rows.is_empty() {
        return Err(Error::Data("dataset has no usable rows".into()));
    }

    // Labels by first appearance.
    let mut label_ids: HashMap<String, usize> = HashMap::new();
    let mut label_mapping = Vec::new();
    let labels: Vec<ArmId> = rows
        .iter()
        .map(|r| {
            let raw = &r[label_idx];
            let next = label_mapping.len();
            let id = *label_ids.entry(raw.clone()).or_insert_with(|| {
                label_mapping.push(raw.clone());
                next
            });
            ArmId(id)
        })
        .collect();
    if label_mapping.len() < 2 {
        return Err(Error::Data(format!(
            "label column has {} distinct class(es); need at least 2",
            label_mapping.len()
        )));
    }

    enum Column {
        Numeric(Vec<f64>),
        Categorical(Vec<String>),
    }

    let mut feature_names = Vec::new();
    let mut blocks: Vec<Vec<Vec<f64>>> = Vec::new(); // per source column: per row values
    for (j, name) in headers.iter().enumerate() {
        if j == label_idx {
            continue;
        }
        let numeric: Option<Vec<f64>> = rows
            .iter()
            .map(|r| r[j].parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect();
        let column = match numeric {
            Some(v) => Column::Numeric(v),
            None => Column::Categorical(rows.iter().map(|r| r[j].clone()).collect()),
        };
        match column {
            Column::Numeric(mut v) => {
                if opts.standardize {
                    let n = v.len() as f64;
                    let mean = v.iter().sum::<f64>() / n;
                    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
                    let scale = if sd > 0.0 { sd } else { 1.0 };
                    v.iter_mut().for_each(|x| *x = (*x - mean) / scale);
                }
                feature_names.push(name.clone());
                blocks.push(v.into_iter().map(|x| vec![x]).collect());
            }
            Column::Categorical(vals) => {
                let mut cats: Vec<&str> = Vec::new();
                let mut index: HashMap<&str, usize> = HashMap::new();
                for v in &vals {
                    if !index.contains_key(v.as_str()) {
                        index.insert(v, cats.len());
                        cats.push(v);
                    }
                }
                feature_names.extend(cats.iter().map(|c| format!("{name}={c}")));
                blocks.push(
                    vals.iter()
                        .map(|v| {
                            let mut one_hot = vec![0.0; cats.len()];
                            one_hot[index[v.as_str()]] = 1.0;
                            one_hot
                        })
                        .collect(),
                );
            }
        }
    }

    let contexts = (0..rows.len())
        .map(|i| Context::new(blocks.iter().flat_map(|b| b[i].iter().copied()).collect()))
        .collect::<Result<Vec<_>>>()?;
    Dataset::from_parts(contexts, labels, feature_names, label_mapping)
}

/// How rows are drawn once the horizon exceeds the dataset size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sampling {
    /// Fresh permutation per pass over the data.
    #[default]
    Cycle,
    /// Independent uniform row draws.
    WithReplacement,
}

/// One run's view of a dataset.
#[derive(Debug, Clone)]
pub struct EnvState {
    dataset: Arc<Dataset>,
    horizon: usize,
    sampling: Sampling,
    rng: RngStream,
    permutation: Vec<usize>,
    cursor: usize,
    t: usize,
    current: Option<usize>,
    rewarded: bool,
}

impl EnvState {
    /// Shuffles the dataset and positions the environment before step 1.
    pub fn new(
        dataset: Arc<Dataset>,
        horizon: usize,
        sampling: Sampling,
        mut rng: RngStream,
    ) -> Self {
        let permutation = match sampling {
            Sampling::Cycle => rng.permutation(dataset.len()),
            Sampling::WithReplacement => Vec::new(),
        };
        EnvState {
            dataset,
            horizon,
            sampling,
            rng,
            permutation,
            cursor: 0,
            t: 0,
            current: None,
            rewarded: true,
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Steps emitted so far.
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn dim(&self) -> usize {
        self.dataset.dim()
    }

    pub fn arm_count(&self) -> usize {
        self.dataset.class_count()
    }

    /// Row index behind the most recent context.
    pub fn current_row(&self) -> Option<usize> {
        self.current
    }

    pub fn step(&mut self) -> Result<Context> {
        if self.t >= self.horizon {
            return Err(Error::Protocol(format!(
                "step past horizon {}",
                self.horizon
            )));
        }
        if !self.rewarded {
            return Err(Error::Protocol(format!(
                "step {} requested before the previous context was rewarded",
                self.t + 1
            )));
        }
        let row = match self.sampling {
            Sampling::Cycle => {
                if self.cursor == self.permutation.len() {
                    self.permutation = self.rng.permutation(self.dataset.len());
                    self.cursor = 0;
                }
                let row = self.permutation[self.cursor];
                self.cursor += 1;
                row
            }
            Sampling::WithReplacement => self.rng.index(self.dataset.len()),
        };
        self.t += 1;
        self.current = Some(row);
        self.rewarded = false;
        Ok(self.dataset.contexts[row].clone())
    }

    /// 1 iff `arm` is the current row's class. Callable once per step.
    pub fn reward(&mut self, arm: ArmId) -> Result<f64> {
        let row = self
            .current
            .ok_or_else(|| Error::Protocol("reward requested before any step".into()))?;
        if self.rewarded {
            return Err(Error::Protocol(format!(
                "reward already revealed for step {}",
                self.t
            )));
        }
        if arm.0 >= self.dataset.class_count() {
            return Err(Error::Config(format!("arm {arm} out of range")));
        }
        self.rewarded = true;
        Ok(if self.dataset.labels[row] == arm {
            1.0
        } else {
            0.0
        })
    }
}
