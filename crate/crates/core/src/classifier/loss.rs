//! Training objectives of the stochastic head.
//!
//! * base loss: softmax cross-entropy over `s · cos(f(x), μ̂_h)` for every class `h`;
//! * prototype loss: the same cross-entropy with stored prototypes as inputs;
//! * joint loss: `(1 − λ) · base + λ · prototype`.
//!
//! Every `*_with_noise` variant takes the ε draws explicitly so callers can
//! share randomness between evaluations; the plain variants draw
//! `mc_samples_per_step` fresh matrices from the given generator. Losses and
//! gradients are averaged over the draws.

use std::collections::HashMap;

use ndarray::{Array2, ArrayView1, ArrayView2};

use super::{row_index, PrototypeLossMode, PrototypeSet, StochasticClassifier, TrainingConfig};
use crate::data::EmbeddingSet;
use crate::error::{Error, Result};
use crate::numeric::{
    accumulate_cosine_ce, reparameterize, standard_normal_matrix, DenseVector, GradientPair,
    LogitTerm, RngState,
};
use crate::ClassId;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Labeled<'a> {
    pub input: ArrayView1<'a, f64>,
    pub class_id: ClassId,
}

pub(crate) fn labeled(set: &EmbeddingSet) -> Vec<Labeled<'_>> {
    set.iter()
        .map(|r| Labeled {
            input: r.vector.view(),
            class_id: r.class_id,
        })
        .collect()
}

pub(crate) enum Objective<'a> {
    Base(&'a [Labeled<'a>]),
    Prototype(&'a PrototypeSet),
    Joint {
        batch: &'a [Labeled<'a>],
        protos: &'a PrototypeSet,
        lambda: f64,
    },
}

fn lookup(index: &HashMap<ClassId, usize>, class_id: ClassId, what: &str) -> Result<usize> {
    index
        .get(&class_id)
        .copied()
        .ok_or_else(|| Error::InvalidArgument(format!("{what} class {class_id} is not in the classifier")))
}

fn mean_batch_ce(
    weights: ArrayView2<'_, f64>,
    index: &HashMap<ClassId, usize>,
    batch: &[Labeled<'_>],
    scale: f64,
    factor: f64,
    grad: &mut Array2<f64>,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty embedding batch".into()));
    }
    let n = batch.len() as f64;
    let mut total = 0.0;
    for ex in batch {
        let target = lookup(index, ex.class_id, "label")?;
        let terms: Vec<LogitTerm<'_>> = (0..weights.nrows())
            .map(|row| LogitTerm { input: ex.input, row })
            .collect();
        total += accumulate_cosine_ce(&terms, target, weights, scale, factor / n, grad)?;
    }
    Ok(total / n)
}

fn mean_prototype_ce(
    weights: ArrayView2<'_, f64>,
    index: &HashMap<ClassId, usize>,
    protos: &PrototypeSet,
    scale: f64,
    mode: PrototypeLossMode,
    factor: f64,
    grad: &mut Array2<f64>,
) -> Result<f64> {
    if protos.is_empty() {
        return Err(Error::InvalidArgument("empty prototype set".into()));
    }
    let n = protos.len() as f64;
    let mut total = 0.0;
    match mode {
        PrototypeLossMode::PerPrototype => {
            for (c, p) in protos.iter() {
                let target = lookup(index, c, "prototype")?;
                let terms: Vec<LogitTerm<'_>> = (0..weights.nrows())
                    .map(|row| LogitTerm { input: p.view(), row })
                    .collect();
                total += accumulate_cosine_ce(&terms, target, weights, scale, factor / n, grad)?;
            }
        }
        PrototypeLossMode::Literal => {
            let terms = protos
                .iter()
                .map(|(h, p)| {
                    Ok(LogitTerm {
                        input: p.view(),
                        row: lookup(index, h, "prototype")?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            for k in 0..terms.len() {
                total += accumulate_cosine_ce(&terms, k, weights, scale, factor / n, grad)?;
            }
        }
    }
    Ok(total / n)
}

/// Loss and `∂loss/∂weights` for a fixed weight matrix.
pub(crate) fn weight_objective(
    weights: ArrayView2<'_, f64>,
    class_ids: &[ClassId],
    objective: &Objective<'_>,
    scale: f64,
    mode: PrototypeLossMode,
) -> Result<(f64, Array2<f64>)> {
    let index = row_index(class_ids);
    let mut grad = Array2::zeros(weights.dim());
    let loss = match *objective {
        Objective::Base(batch) => mean_batch_ce(weights, &index, batch, scale, 1.0, &mut grad)?,
        Objective::Prototype(protos) => {
            mean_prototype_ce(weights, &index, protos, scale, mode, 1.0, &mut grad)?
        }
        Objective::Joint { batch, protos, lambda } => {
            if !(0.0..=1.0).contains(&lambda) {
                return Err(Error::InvalidArgument(format!("lambda must be in [0, 1], got {lambda}")));
            }
            let base = mean_batch_ce(weights, &index, batch, scale, 1.0 - lambda, &mut grad)?;
            let proto = mean_prototype_ce(weights, &index, protos, scale, mode, lambda, &mut grad)?;
            (1.0 - lambda) * base + lambda * proto
        }
    };
    Ok((loss, grad))
}

/// `cfg.mc_samples_per_step` standard-normal matrices shaped like `μ`.
pub fn draw_noise(sc: &StochasticClassifier, cfg: &TrainingConfig, rng: &mut RngState) -> Vec<Array2<f64>> {
    let (rows, cols) = sc.mu().dim();
    (0..cfg.mc_samples_per_step.max(1))
        .map(|_| standard_normal_matrix(rows, cols, rng))
        .collect()
}

pub(crate) fn stochastic_objective(
    sc: &StochasticClassifier,
    objective: &Objective<'_>,
    cfg: &TrainingConfig,
    noise: &[Array2<f64>],
) -> Result<(f64, GradientPair)> {
    if noise.is_empty() {
        return Err(Error::InvalidArgument("at least one noise draw is required".into()));
    }
    let (rows, cols) = sc.mu().dim();
    let draws = noise.len() as f64;
    let mut loss = 0.0;
    let mut grads = GradientPair::zeros(rows, cols);
    for eps in noise {
        let mu_hat = reparameterize(sc.mu(), sc.sigma(), eps)?;
        let (l, d_w) = weight_objective(
            mu_hat.view(),
            sc.class_ids(),
            objective,
            cfg.logit_scale,
            cfg.prototype_mode,
        )?;
        loss += l / draws;
        grads.d_mu.scaled_add(1.0 / draws, &d_w);
        grads.d_sigma.scaled_add(1.0 / draws, &(&d_w * eps));
    }
    Ok((loss, grads))
}

fn check_embedding(embedding: &DenseVector, sc: &StochasticClassifier) -> Result<()> {
    if embedding.dim() != sc.dim() {
        return Err(Error::Shape(format!(
            "embedding dim {} vs classifier dim {}",
            embedding.dim(),
            sc.dim()
        )));
    }
    Ok(())
}

pub fn base_loss_with_noise(
    embedding: &DenseVector,
    label: ClassId,
    sc: &StochasticClassifier,
    noise: &[Array2<f64>],
    cfg: &TrainingConfig,
) -> Result<(f64, GradientPair)> {
    check_embedding(embedding, sc)?;
    let batch = [Labeled {
        input: embedding.view(),
        class_id: label,
    }];
    stochastic_objective(sc, &Objective::Base(&batch), cfg, noise)
}

/// Cross-entropy of one embedding against sampled weights. Ignores `cfg.lambda`.
pub fn base_loss(
    embedding: &DenseVector,
    label: ClassId,
    sc: &StochasticClassifier,
    rng: &mut RngState,
    cfg: &TrainingConfig,
) -> Result<(f64, GradientPair)> {
    cfg.validate()?;
    let noise = draw_noise(sc, cfg, rng);
    base_loss_with_noise(embedding, label, sc, &noise, cfg)
}

pub fn batch_base_loss_with_noise(
    batch: &EmbeddingSet,
    sc: &StochasticClassifier,
    noise: &[Array2<f64>],
    cfg: &TrainingConfig,
) -> Result<(f64, GradientPair)> {
    let items = labeled(batch);
    stochastic_objective(sc, &Objective::Base(&items), cfg, noise)
}

/// Mean base loss over a batch, all samples sharing each ε draw.
pub fn batch_base_loss(
    batch: &EmbeddingSet,
    sc: &StochasticClassifier,
    rng: &mut RngState,
    cfg: &TrainingConfig,
) -> Result<(f64, GradientPair)> {
    cfg.validate()?;
    let noise = draw_noise(sc, cfg, rng);
    batch_base_loss_with_noise(batch, sc, &noise, cfg)
}

pub fn prototype_loss_with_noise(
    protos: &PrototypeSet,
    sc: &StochasticClassifier,
    noise: &[Array2<f64>],
    cfg: &TrainingConfig,
) -> Result<(f64, GradientPair)> {
    stochastic_objective(sc, &Objective::Prototype(protos), cfg, noise)
}

/// Mean prototype loss; the denominator follows `cfg.prototype_mode`.
pub fn prototype_loss(
    protos: &PrototypeSet,
    sc: &StochasticClassifier,
    rng: &mut RngState,
    cfg: &TrainingConfig,
) -> Result<(f64, GradientPair)> {
    cfg.validate()?;
    let noise = draw_noise(sc, cfg, rng);
    prototype_loss_with_noise(protos, sc, &noise, cfg)
}

pub fn joint_loss_with_noise(
    batch: &EmbeddingSet,
    protos: &PrototypeSet,
    sc: &StochasticClassifier,
    noise: &[Array2<f64>],
    cfg: &TrainingConfig,
) -> Result<(f64, GradientPair)> {
    let items = labeled(batch);
    let objective = Objective::Joint {
        batch: &items,
        protos,
        lambda: cfg.lambda,
    };
    stochastic_objective(sc, &objective, cfg, noise)
}

/// `(1 − λ) · mean base loss + λ · prototype loss`, both terms on the same ε.
pub fn joint_loss(
    batch: &EmbeddingSet,
    protos: &PrototypeSet,
    sc: &StochasticClassifier,
    rng: &mut RngState,
    cfg: &TrainingConfig,
) -> Result<(f64, GradientPair)> {
    cfg.validate()?;
    let noise = draw_noise(sc, cfg, rng);
    joint_loss_with_noise(batch, protos, sc, &noise, cfg)
}
