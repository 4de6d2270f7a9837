//! Losses of the deterministic head: the stochastic objectives with the
//! weight rows used directly in place of sampled weights.

use ndarray::Array2;

use super::loss::{labeled, weight_objective, Labeled, Objective};
use super::{DeterministicClassifier, PrototypeSet, TrainingConfig};
use crate::data::EmbeddingSet;
use crate::error::{Error, Result};
use crate::numeric::DenseVector;
use crate::ClassId;

fn run(dc: &DeterministicClassifier, objective: &Objective<'_>, cfg: &TrainingConfig) -> Result<(f64, Array2<f64>)> {
    weight_objective(
        dc.weights().view(),
        dc.class_ids(),
        objective,
        cfg.logit_scale,
        cfg.prototype_mode,
    )
}

pub fn base_loss(
    embedding: &DenseVector,
    label: ClassId,
    dc: &DeterministicClassifier,
    cfg: &TrainingConfig,
) -> Result<(f64, Array2<f64>)> {
    if embedding.dim() != dc.dim() {
        return Err(Error::Shape(format!(
            "embedding dim {} vs classifier dim {}",
            embedding.dim(),
            dc.dim()
        )));
    }
    let batch = [Labeled {
        input: embedding.view(),
        class_id: label,
    }];
    run(dc, &Objective::Base(&batch), cfg)
}

pub fn batch_base_loss(
    batch: &EmbeddingSet,
    dc: &DeterministicClassifier,
    cfg: &TrainingConfig,
) -> Result<(f64, Array2<f64>)> {
    let items = labeled(batch);
    run(dc, &Objective::Base(&items), cfg)
}

pub fn prototype_loss(
    protos: &PrototypeSet,
    dc: &DeterministicClassifier,
    cfg: &TrainingConfig,
) -> Result<(f64, Array2<f64>)> {
    run(dc, &Objective::Prototype(protos), cfg)
}

pub fn joint_loss(
    batch: &EmbeddingSet,
    protos: &PrototypeSet,
    dc: &DeterministicClassifier,
    cfg: &TrainingConfig,
) -> Result<(f64, Array2<f64>)> {
    let items = labeled(batch);
    run(
        dc,
        &Objective::Joint {
            batch: &items,
            protos,
            lambda: cfg.lambda,
        },
        cfg,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{loss, StochasticClassifier};
    use crate::numeric::{finite_difference_gradient, standard_normal_matrix, RngState};

    #[test]
    fn matches_stochastic_with_zero_sigma() {
        let mut rng = RngState::new(3);
        let mu = standard_normal_matrix(3, 4, &mut rng);
        let sc = StochasticClassifier::from_parts(vec![0, 1, 2], mu, Array2::zeros((3, 4))).unwrap();
        let dc = sc.to_deterministic();
        let e = DenseVector::new(vec![0.3, -1.0, 0.2, 0.9]).unwrap();
        let cfg = TrainingConfig::default();
        let (ls, gs) = loss::base_loss(&e, 1, &sc, &mut rng, &cfg).unwrap();
        let (ld, gd) = base_loss(&e, 1, &dc, &cfg).unwrap();
        assert!((ls - ld).abs() <= 1e-12);
        assert!(gs.d_mu.iter().zip(gd.iter()).all(|(a, b)| (a - b).abs() <= 1e-12));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = RngState::new(17);
        let w = standard_normal_matrix(4, 3, &mut rng);
        let dc = DeterministicClassifier::from_parts(vec![0, 1, 2, 3], w.clone()).unwrap();
        let e = DenseVector::new(vec![1.0, 0.5, -0.2]).unwrap();
        let cfg = TrainingConfig { logit_scale: 4.0, ..Default::default() };
        let (_, g) = base_loss(&e, 2, &dc, &cfg).unwrap();
        let fd = finite_difference_gradient(
            |w| {
                let head = DeterministicClassifier::from_parts(vec![0, 1, 2, 3], w.clone())?;
                Ok(base_loss(&e, 2, &head, &cfg)?.0)
            },
            &w,
            1e-6,
        )
        .unwrap();
        for (a, n) in g.iter().zip(fd.iter()) {
            assert!((a - n).abs() <= 1e-6 * a.abs().max(1e-2), "{a} vs {n}");
        }
    }
}
