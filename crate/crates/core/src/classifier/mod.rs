//! Cosine classification heads.
//!
//! [`StochasticClassifier`] keeps a mean `μ` and a spread `σ` per class and
//! trains against sampled weights `μ̂ = μ + ε ⊙ σ`; [`DeterministicClassifier`]
//! trains its weight rows directly. Both predict with the mean rows.

pub mod deterministic;
pub mod loss;
mod train;

use std::collections::{BTreeMap, HashMap};

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::EmbeddingSet;
use crate::error::{Error, Result};
use crate::numeric::{cosine_similarity, l2_norm, DenseVector, OptimizerConfig};
use crate::ClassId;

pub use train::{train, TrainingData, TrainingTrace};

/// Default per-entry σ for freshly initialized or appended rows.
pub const DEFAULT_SIGMA_INIT: f64 = 0.1;
/// Joint-loss weight used for the speech benchmark.
pub const LAMBDA_SPEECH: f64 = 0.9;
/// Joint-loss weight used for the instrument benchmark.
pub const LAMBDA_INSTRUMENTS: f64 = 0.6;

/// Denominator used by the prototype loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrototypeLossMode {
    /// Each prototype is classified against every class: `Σ_h exp(cos(p_c, μ̂_h))`.
    #[default]
    PerPrototype,
    /// Matched pairs only: `Σ_h exp(cos(p_h, μ̂_h))` over the prototype classes.
    Literal,
}

/// Which half of a base-session episode feeds the classification loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EpisodeLossSource {
    #[default]
    Query,
    SupportAndQuery,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Weight of the prototype term in the joint loss, in `[0, 1]`.
    pub lambda: f64,
    /// Multiplier applied to every cosine logit.
    pub logit_scale: f64,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    /// Draws of ε averaged per optimization step.
    pub mc_samples_per_step: usize,
    pub sigma_init: f64,
    /// When false, σ is left at its initial value.
    pub train_sigma: bool,
    pub prototype_mode: PrototypeLossMode,
    pub loss_source: EpisodeLossSource,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            lambda: LAMBDA_SPEECH,
            logit_scale: 1.0,
            optimizer: OptimizerConfig::default(),
            epochs: 50,
            mc_samples_per_step: 1,
            sigma_init: DEFAULT_SIGMA_INIT,
            train_sigma: true,
            prototype_mode: PrototypeLossMode::PerPrototype,
            loss_source: EpisodeLossSource::Query,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidArgument(format!("lambda must be in [0, 1], got {}", self.lambda)));
        }
        if !(self.logit_scale > 0.0 && self.logit_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "logit_scale must be > 0, got {}",
                self.logit_scale
            )));
        }
        if self.mc_samples_per_step == 0 {
            return Err(Error::InvalidArgument("mc_samples_per_step must be >= 1".into()));
        }
        if !self.sigma_init.is_finite() {
            return Err(Error::InvalidArgument("sigma_init must be finite".into()));
        }
        self.optimizer.validate()
    }
}

/// Class id → stored prototype vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrototypeSet {
    entries: BTreeMap<ClassId, DenseVector>,
}

impl PrototypeSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, class_id: ClassId, vector: DenseVector) -> Result<()> {
        if let Some(first) = self.entries.values().next() {
            if first.dim() != vector.dim() {
                return Err(Error::Shape(format!(
                    "prototype dim {} vs {}",
                    vector.dim(),
                    first.dim()
                )));
            }
        }
        self.entries.insert(class_id, vector);
        Ok(())
    }

    /// One prototype per class, copied from the rows of `means`.
    pub fn from_rows(class_ids: &[ClassId], means: ArrayView2<'_, f64>) -> Result<Self> {
        let mut out = Self::new();
        for (c, row) in class_ids.iter().zip(means.rows()) {
            out.insert(*c, DenseVector::new(row.to_vec())?)?;
        }
        Ok(out)
    }

    pub fn get(&self, class_id: ClassId) -> Option<&DenseVector> {
        self.entries.get(&class_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ClassId, &DenseVector)> {
        self.entries.iter().map(|(c, v)| (*c, v))
    }

    pub fn class_ids(&self) -> Vec<ClassId> {
        self.entries.keys().copied().collect()
    }
}

fn check_rows(class_ids: &[ClassId], rows: &Array2<f64>, what: &str) -> Result<()> {
    if class_ids.len() != rows.nrows() {
        return Err(Error::Shape(format!(
            "{} class ids vs {} {what} rows",
            class_ids.len(),
            rows.nrows()
        )));
    }
    if rows.ncols() == 0 {
        return Err(Error::Shape(format!("{what} has zero columns")));
    }
    let mut seen = std::collections::HashSet::new();
    for c in class_ids {
        if !seen.insert(*c) {
            return Err(Error::InvalidArgument(format!("duplicate class id {c}")));
        }
    }
    if rows.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("{what} has non-finite entries")));
    }
    Ok(())
}

fn check_nonzero_rows(class_ids: &[ClassId], rows: &Array2<f64>) -> Result<()> {
    for (c, row) in class_ids.iter().zip(rows.rows()) {
        if l2_norm(row) == 0.0 {
            return Err(Error::DegenerateInput(format!("class {c} has a zero-norm weight row")));
        }
    }
    Ok(())
}

fn means_matrix(means: &BTreeMap<ClassId, DenseVector>, dim: usize) -> Result<(Vec<ClassId>, Array2<f64>)> {
    let mut rows = Array2::zeros((means.len(), dim));
    for (mut row, v) in rows.rows_mut().into_iter().zip(means.values()) {
        if v.dim() != dim {
            return Err(Error::Shape(format!("class mean dim {} vs {dim}", v.dim())));
        }
        row.assign(&v.view());
    }
    Ok((means.keys().copied().collect(), rows))
}

fn append_rows(
    class_ids: &[ClassId],
    rows: &Array2<f64>,
    new_means: &BTreeMap<ClassId, DenseVector>,
) -> Result<(Vec<ClassId>, Array2<f64>)> {
    for c in new_means.keys() {
        if class_ids.contains(c) {
            return Err(Error::LabelOverlap {
                class_id: *c,
                context: "class already present in the classifier".into(),
            });
        }
    }
    let (new_ids, new_rows) = means_matrix(new_means, rows.ncols())?;
    let mut ids = class_ids.to_vec();
    ids.extend(new_ids);
    let stacked = ndarray::concatenate(ndarray::Axis(0), &[rows.view(), new_rows.view()])
        .map_err(|e| Error::Shape(e.to_string()))?;
    Ok((ids, stacked))
}

/// Class whose row has the largest cosine with `embedding`; ties go to the
/// lowest row index.
pub(crate) fn predict_rows(
    class_ids: &[ClassId],
    rows: ArrayView2<'_, f64>,
    embedding: ArrayView1<'_, f64>,
) -> Result<ClassId> {
    if embedding.len() != rows.ncols() {
        return Err(Error::Shape(format!(
            "embedding dim {} vs classifier dim {}",
            embedding.len(),
            rows.ncols()
        )));
    }
    if l2_norm(embedding) == 0.0 {
        return Err(Error::DegenerateInput("cannot classify a zero-norm embedding".into()));
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, row) in rows.rows().into_iter().enumerate() {
        let s = cosine_similarity(embedding, row)?;
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| class_ids[i])
        .ok_or_else(|| Error::InvalidArgument("classifier has no classes".into()))
}

/// Mean `μ` and spread `σ` per class, rows aligned with `class_ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticClassifier {
    class_ids: Vec<ClassId>,
    mu: Array2<f64>,
    sigma: Array2<f64>,
}

impl StochasticClassifier {
    pub fn from_parts(class_ids: Vec<ClassId>, mu: Array2<f64>, sigma: Array2<f64>) -> Result<Self> {
        if mu.dim() != sigma.dim() {
            return Err(Error::Shape(format!("mu {:?} vs sigma {:?}", mu.dim(), sigma.dim())));
        }
        check_rows(&class_ids, &mu, "mu")?;
        check_rows(&class_ids, &sigma, "sigma")?;
        check_nonzero_rows(&class_ids, &mu)?;
        Ok(Self { class_ids, mu, sigma })
    }

    /// `μ` rows from the given class means (ascending class id), `σ` constant.
    pub fn from_class_means(means: &BTreeMap<ClassId, DenseVector>, sigma_init: f64) -> Result<Self> {
        let dim = means
            .values()
            .next()
            .ok_or_else(|| Error::InvalidArgument("no classes to initialize from".into()))?
            .dim();
        let (ids, mu) = means_matrix(means, dim)?;
        let sigma = Array2::from_elem(mu.dim(), sigma_init);
        Self::from_parts(ids, mu, sigma)
    }

    /// Initializes `μ` with each class's embedding mean.
    pub fn init_mu_from_class_means(embeddings: &EmbeddingSet, sigma_init: f64) -> Result<Self> {
        if embeddings.is_empty() {
            return Err(Error::InvalidArgument("cannot initialize from an empty set".into()));
        }
        Self::from_class_means(&embeddings.class_means()?, sigma_init)
    }

    /// Appends one row per new class; existing rows are left untouched.
    pub fn expand(&self, new_class_means: &BTreeMap<ClassId, DenseVector>, sigma_init: f64) -> Result<Self> {
        if new_class_means.is_empty() {
            return Ok(self.clone());
        }
        let (ids, mu) = append_rows(&self.class_ids, &self.mu, new_class_means)?;
        let new_sigma = Array2::from_elem((new_class_means.len(), self.dim()), sigma_init);
        let sigma = ndarray::concatenate(ndarray::Axis(0), &[self.sigma.view(), new_sigma.view()])
            .map_err(|e| Error::Shape(e.to_string()))?;
        Self::from_parts(ids, mu, sigma)
    }

    pub fn predict(&self, embedding: ArrayView1<'_, f64>) -> Result<ClassId> {
        predict_rows(&self.class_ids, self.mu.view(), embedding)
    }

    pub fn class_ids(&self) -> &[ClassId] {
        &self.class_ids
    }

    pub fn index_of(&self, class_id: ClassId) -> Option<usize> {
        self.class_ids.iter().position(|c| *c == class_id)
    }

    pub fn mu(&self) -> &Array2<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &Array2<f64> {
        &self.sigma
    }

    pub fn dim(&self) -> usize {
        self.mu.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_ids.len()
    }

    pub(crate) fn params_mut(&mut self) -> (&mut Array2<f64>, &mut Array2<f64>) {
        (&mut self.mu, &mut self.sigma)
    }

    pub fn prototypes(&self) -> Result<PrototypeSet> {
        PrototypeSet::from_rows(&self.class_ids, self.mu.view())
    }

    pub fn to_deterministic(&self) -> DeterministicClassifier {
        DeterministicClassifier {
            class_ids: self.class_ids.clone(),
            weights: self.mu.clone(),
        }
    }
}

/// One fixed weight row per class.
#[derive(Debug, Clone, PartialEq)]
pub struct DeterministicClassifier {
    class_ids: Vec<ClassId>,
    weights: Array2<f64>,
}

impl DeterministicClassifier {
    pub fn from_parts(class_ids: Vec<ClassId>, weights: Array2<f64>) -> Result<Self> {
        check_rows(&class_ids, &weights, "weights")?;
        check_nonzero_rows(&class_ids, &weights)?;
        Ok(Self { class_ids, weights })
    }

    pub fn init_from_class_means(embeddings: &EmbeddingSet) -> Result<Self> {
        Ok(StochasticClassifier::init_mu_from_class_means(embeddings, 0.0)?.to_deterministic())
    }

    pub fn expand(&self, new_class_means: &BTreeMap<ClassId, DenseVector>) -> Result<Self> {
        if new_class_means.is_empty() {
            return Ok(self.clone());
        }
        let (ids, weights) = append_rows(&self.class_ids, &self.weights, new_class_means)?;
        Self::from_parts(ids, weights)
    }

    pub fn predict(&self, embedding: ArrayView1<'_, f64>) -> Result<ClassId> {
        predict_rows(&self.class_ids, self.weights.view(), embedding)
    }

    pub fn class_ids(&self) -> &[ClassId] {
        &self.class_ids
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    pub(crate) fn weights_mut(&mut self) -> &mut Array2<f64> {
        &mut self.weights
    }

    pub fn prototypes(&self) -> Result<PrototypeSet> {
        PrototypeSet::from_rows(&self.class_ids, self.weights.view())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    #[default]
    Stochastic,
    Deterministic,
}

impl HeadKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            HeadKind::Stochastic => "stochastic",
            HeadKind::Deterministic => "deterministic",
        }
    }
}

impl std::fmt::Display for HeadKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stochastic" => Ok(HeadKind::Stochastic),
            "deterministic" => Ok(HeadKind::Deterministic),
            other => Err(Error::InvalidArgument(format!("unknown classifier kind {other:?}"))),
        }
    }
}

/// Either head, as driven by the session protocol.
#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    Stochastic(StochasticClassifier),
    Deterministic(DeterministicClassifier),
}

impl Classifier {
    pub fn init(kind: HeadKind, embeddings: &EmbeddingSet, sigma_init: f64) -> Result<Self> {
        Ok(match kind {
            HeadKind::Stochastic => {
                Classifier::Stochastic(StochasticClassifier::init_mu_from_class_means(embeddings, sigma_init)?)
            }
            HeadKind::Deterministic => {
                Classifier::Deterministic(DeterministicClassifier::init_from_class_means(embeddings)?)
            }
        })
    }

    pub fn kind(&self) -> HeadKind {
        match self {
            Classifier::Stochastic(_) => HeadKind::Stochastic,
            Classifier::Deterministic(_) => HeadKind::Deterministic,
        }
    }

    pub fn class_ids(&self) -> &[ClassId] {
        match self {
            Classifier::Stochastic(sc) => sc.class_ids(),
            Classifier::Deterministic(dc) => dc.class_ids(),
        }
    }

    /// `μ` for the stochastic head, the weights for the deterministic one.
    pub fn means(&self) -> &Array2<f64> {
        match self {
            Classifier::Stochastic(sc) => sc.mu(),
            Classifier::Deterministic(dc) => dc.weights(),
        }
    }

    pub fn predict(&self, embedding: ArrayView1<'_, f64>) -> Result<ClassId> {
        match self {
            Classifier::Stochastic(sc) => sc.predict(embedding),
            Classifier::Deterministic(dc) => dc.predict(embedding),
        }
    }

    pub fn expand(&self, new_class_means: &BTreeMap<ClassId, DenseVector>, sigma_init: f64) -> Result<Self> {
        Ok(match self {
            Classifier::Stochastic(sc) => Classifier::Stochastic(sc.expand(new_class_means, sigma_init)?),
            Classifier::Deterministic(dc) => Classifier::Deterministic(dc.expand(new_class_means)?),
        })
    }

    pub fn prototypes(&self) -> Result<PrototypeSet> {
        match self {
            Classifier::Stochastic(sc) => sc.prototypes(),
            Classifier::Deterministic(dc) => dc.prototypes(),
        }
    }
}

/// Row index of each class, for loss assembly.
pub(crate) fn row_index(class_ids: &[ClassId]) -> HashMap<ClassId, usize> {
    class_ids.iter().enumerate().map(|(i, c)| (*c, i)).collect()
}
