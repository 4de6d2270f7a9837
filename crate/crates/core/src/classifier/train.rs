use super::deterministic;
use super::loss::{self, draw_noise};
use super::{Classifier, EpisodeLossSource, PrototypeSet, TrainingConfig};
use crate::data::EmbeddingSet;
use crate::episode::epoch_episodes;
use crate::error::{Error, Result};
use crate::numeric::{optimizer_step, OptimizerState, RngState};

/// What a training run consumes.
pub enum TrainingData<'a> {
    /// Base session: fresh N-way K-shot episodes each epoch, classification
    /// loss only. Episodes are drawn from `sampler_rng`.
    Episodic {
        data: &'a EmbeddingSet,
        n_way: usize,
        k_shot: usize,
        sampler_rng: &'a mut RngState,
    },
    /// Incremental session: one joint-loss step per epoch over the whole
    /// support set and the stored prototypes.
    Joint {
        support: &'a EmbeddingSet,
        prototypes: &'a PrototypeSet,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingTrace {
    /// Loss of every optimization step, in order.
    pub losses: Vec<f64>,
    /// Samples skipped per epoch because they could not fill an episode.
    pub unused_per_epoch: Vec<usize>,
}

struct Optimizers {
    primary: OptimizerState,
    sigma: OptimizerState,
}

fn step(
    classifier: &mut Classifier,
    batch: &EmbeddingSet,
    prototypes: Option<&PrototypeSet>,
    cfg: &TrainingConfig,
    rng: &mut RngState,
    opt: &mut Optimizers,
    index: usize,
) -> Result<f64> {
    let diverged = |e: Error| match e {
        Error::Divergence(msg) => Error::Divergence(format!("step {index}: {msg}")),
        other => other,
    };
    match classifier {
        Classifier::Stochastic(sc) => {
            let noise = draw_noise(sc, cfg, rng);
            let (value, grads) = match prototypes {
                None => loss::batch_base_loss_with_noise(batch, sc, &noise, cfg)?,
                Some(p) => loss::joint_loss_with_noise(batch, p, sc, &noise, cfg)?,
            };
            if !value.is_finite() {
                return Err(Error::Divergence(format!("step {index}: loss is {value}")));
            }
            let (mu, sigma) = sc.params_mut();
            optimizer_step(mu, &grads.d_mu, &mut opt.primary, &cfg.optimizer).map_err(diverged)?;
            if cfg.train_sigma {
                optimizer_step(sigma, &grads.d_sigma, &mut opt.sigma, &cfg.optimizer).map_err(diverged)?;
            }
            Ok(value)
        }
        Classifier::Deterministic(dc) => {
            let (value, grads) = match prototypes {
                None => deterministic::batch_base_loss(batch, dc, cfg)?,
                Some(p) => deterministic::joint_loss(batch, p, dc, cfg)?,
            };
            if !value.is_finite() {
                return Err(Error::Divergence(format!("step {index}: loss is {value}")));
            }
            optimizer_step(dc.weights_mut(), &grads, &mut opt.primary, &cfg.optimizer).map_err(diverged)?;
            Ok(value)
        }
    }
}

/// Runs `cfg.epochs` passes of gradient updates on `classifier`.
///
/// `rng` supplies the ε draws of the stochastic head (one fresh set per step).
pub fn train(
    classifier: &mut Classifier,
    data: TrainingData<'_>,
    cfg: &TrainingConfig,
    rng: &mut RngState,
) -> Result<TrainingTrace> {
    cfg.validate()?;
    let mut opt = Optimizers {
        primary: OptimizerState::new(),
        sigma: OptimizerState::new(),
    };
    let mut trace = TrainingTrace::default();
    match data {
        TrainingData::Episodic {
            data,
            n_way,
            k_shot,
            sampler_rng,
        } => {
            for epoch in 0..cfg.epochs {
                let plan = epoch_episodes(data, n_way, k_shot, sampler_rng)?;
                if plan.episodes.is_empty() {
                    return Err(Error::PlanViolation(format!(
                        "epoch {epoch}: no {n_way}-way {k_shot}-shot episode can be formed from {} samples",
                        data.len()
                    )));
                }
                trace.unused_per_epoch.push(plan.unused_samples);
                for ep in &plan.episodes {
                    let batch = match cfg.loss_source {
                        EpisodeLossSource::Query => ep.query.clone(),
                        EpisodeLossSource::SupportAndQuery => {
                            EmbeddingSet::union(data.dim(), [&ep.support, &ep.query])?
                        }
                    };
                    let value = step(classifier, &batch, None, cfg, rng, &mut opt, trace.losses.len())?;
                    trace.losses.push(value);
                }
            }
        }
        TrainingData::Joint { support, prototypes } => {
            for _ in 0..cfg.epochs {
                let value = step(classifier, support, Some(prototypes), cfg, rng, &mut opt, trace.losses.len())?;
                trace.losses.push(value);
            }
        }
    }
    Ok(trace)
}
