//! Randomized comparison of the analytic loss gradients against finite
//! differences of an independent reference forward pass evaluated in
//! double-double precision.

mod extended;

use extended::Dd;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{deterministic, loss, PrototypeLossMode, PrototypeSet, StochasticClassifier, TrainingConfig};
use crate::data::{EmbeddingRecord, EmbeddingSet};
use crate::error::{Error, Result};
use crate::numeric::{standard_normal_matrix, streams, DenseVector, GradientPair, RngState};
use crate::ClassId;

pub const RELATIVE_TOLERANCE: f64 = 1e-5;
/// Entries whose analytic value is below this are compared absolutely.
pub const ABSOLUTE_FLOOR: f64 = 1e-8;
pub const SIGMA_ZERO_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LossKind {
    Base,
    Prototype,
    Joint { lambda: f64 },
}

impl LossKind {
    pub fn suite() -> Vec<LossKind> {
        let mut v = vec![LossKind::Base, LossKind::Prototype];
        v.extend([0.0, 0.6, 0.9, 1.0].map(|lambda| LossKind::Joint { lambda }));
        v
    }

    pub fn label(&self) -> String {
        match self {
            LossKind::Base => "base".into(),
            LossKind::Prototype => "prototype".into(),
            LossKind::Joint { lambda } => format!("joint(lambda={lambda})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    pub instances: usize,
    pub max_dim: usize,
    pub max_classes: usize,
    pub max_batch: usize,
    pub seed: u64,
    /// Finite-difference step.
    pub step: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            instances: 1000,
            max_dim: 16,
            max_classes: 8,
            max_batch: 8,
            seed: 0,
            step: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCheck {
    pub loss: String,
    pub entries: usize,
    pub failures: usize,
    /// Worst relative error over entries at or above the absolute floor.
    pub worst_relative: f64,
    /// Worst absolute error over entries below the absolute floor.
    pub worst_absolute_small: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub instances: usize,
    pub checks: Vec<LossCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.failures == 0)
    }
}

/// One random problem: a classifier, a labeled batch, prototypes, one ε draw.
#[derive(Debug, Clone)]
pub struct Instance {
    pub sc: StochasticClassifier,
    pub batch: EmbeddingSet,
    pub prototypes: PrototypeSet,
    pub epsilon: Array2<f64>,
    pub logit_scale: f64,
}

fn normal_vec(n: usize, rng: &mut RngState) -> Vec<f64> {
    (0..n).map(|_| rng.standard_normal()).collect()
}

pub fn random_instance(cfg: &GradcheckConfig, rng: &mut RngState) -> Result<Instance> {
    let dim = rng.gen_range(2..=cfg.max_dim.max(2));
    let classes = rng.gen_range(2..=cfg.max_classes.max(2));
    let batch_len = rng.gen_range(1..=cfg.max_batch.max(1));
    let class_ids: Vec<ClassId> = (0..classes as ClassId).map(|c| 3 * c + 1).collect();
    let mu = standard_normal_matrix(classes, dim, rng);
    let sigma = Array2::from_shape_fn((classes, dim), |_| 0.5 * rng.uniform());
    let epsilon = standard_normal_matrix(classes, dim, rng);
    let sc = StochasticClassifier::from_parts(class_ids.clone(), mu, sigma)?;
    let mut batch = EmbeddingSet::new(dim)?;
    for i in 0..batch_len {
        let class_id = class_ids[rng.gen_range(0..classes)];
        batch.push(EmbeddingRecord {
            sample_id: i as u64,
            class_id,
            vector: DenseVector::new(normal_vec(dim, rng))?,
        })?;
    }
    let mut prototypes = PrototypeSet::new();
    let stored = rng.gen_range(1..=classes);
    for &c in &class_ids[..stored] {
        prototypes.insert(c, DenseVector::new(normal_vec(dim, rng))?)?;
    }
    Ok(Instance {
        sc,
        batch,
        prototypes,
        epsilon,
        logit_scale: 1.0 + 9.0 * rng.uniform(),
    })
}

fn training_config(inst: &Instance, kind: LossKind) -> TrainingConfig {
    TrainingConfig {
        lambda: match kind {
            LossKind::Joint { lambda } => lambda,
            _ => 0.0,
        },
        logit_scale: inst.logit_scale,
        prototype_mode: PrototypeLossMode::PerPrototype,
        ..TrainingConfig::default()
    }
}

/// Analytic loss and gradients of the engine.
pub fn analytic(inst: &Instance, kind: LossKind) -> Result<(f64, GradientPair)> {
    let cfg = training_config(inst, kind);
    let noise = std::slice::from_ref(&inst.epsilon);
    match kind {
        LossKind::Base => loss::batch_base_loss_with_noise(&inst.batch, &inst.sc, noise, &cfg),
        LossKind::Prototype => loss::prototype_loss_with_noise(&inst.prototypes, &inst.sc, noise, &cfg),
        LossKind::Joint { .. } => {
            loss::joint_loss_with_noise(&inst.batch, &inst.prototypes, &inst.sc, noise, &cfg)
        }
    }
}

fn dd_dot(a: &[f64], w: &[Dd]) -> Dd {
    a.iter().zip(w).fold(Dd::ZERO, |acc, (x, y)| acc + *y * Dd::from(*x))
}

fn dd_norm(w: &[Dd]) -> Dd {
    w.iter().fold(Dd::ZERO, |acc, x| acc + *x * *x).sqrt()
}

/// One loss component (base or prototype) in double-double precision, with
/// per-input logits cached so a change to a single weight row only
/// recomputes that row.
struct Reference<'a> {
    inputs: Vec<(&'a [f64], usize)>,
    scale: Dd,
    weights: Vec<Vec<Dd>>,
    in_norms: Vec<Dd>,
    logits: Vec<Vec<Dd>>,
    shifts: Vec<Dd>,
    exps: Vec<Vec<Dd>>,
}

impl<'a> Reference<'a> {
    fn new(inst: &'a Instance, prototype: bool, mu: &Array2<f64>, sigma: &Array2<f64>) -> Self {
        let row = |c: ClassId| inst.sc.class_ids().iter().position(|x| *x == c).expect("known class");
        let inputs: Vec<(&[f64], usize)> = if prototype {
            inst.prototypes.iter().map(|(c, p)| (p.as_slice(), row(c))).collect()
        } else {
            inst.batch.iter().map(|r| (r.vector.as_slice(), row(r.class_id))).collect()
        };
        let weights: Vec<Vec<Dd>> = (0..mu.nrows())
            .map(|i| {
                (0..mu.ncols())
                    .map(|j| weight(mu[[i, j]], sigma[[i, j]], inst.epsilon[[i, j]]))
                    .collect()
            })
            .collect();
        let scale = Dd::from(inst.logit_scale);
        let in_norms: Vec<Dd> = inputs
            .iter()
            .map(|(x, _)| x.iter().fold(Dd::ZERO, |acc, v| acc + Dd::product(*v, *v)).sqrt())
            .collect();
        let w_norms: Vec<Dd> = weights.iter().map(|w| dd_norm(w)).collect();
        let logits: Vec<Vec<Dd>> = inputs
            .iter()
            .zip(&in_norms)
            .map(|((x, _), n)| {
                weights
                    .iter()
                    .zip(&w_norms)
                    .map(|(w, wn)| dd_dot(x, w) / (*n * *wn) * scale)
                    .collect()
            })
            .collect();
        let shifts: Vec<Dd> = logits
            .iter()
            .map(|z| z.iter().copied().fold(z[0], |m, v| if v > m { v } else { m }))
            .collect();
        let exps = logits
            .iter()
            .zip(&shifts)
            .map(|(z, m)| z.iter().map(|v| (*v - *m).exp()).collect())
            .collect();
        Self {
            inputs,
            scale,
            weights,
            in_norms,
            logits,
            shifts,
            exps,
        }
    }

    fn loss(&self) -> Dd {
        let total = (0..self.inputs.len()).fold(Dd::ZERO, |acc, k| {
            let sum = self.exps[k].iter().fold(Dd::ZERO, |a, e| a + *e);
            acc + self.shifts[k] + sum.ln() - self.logits[k][self.inputs[k].1]
        });
        total / Dd::from(self.inputs.len() as f64)
    }

    /// The loss with weight row `i` replaced by `row`.
    fn loss_with_row(&self, i: usize, row: &[Dd]) -> Dd {
        let norm = dd_norm(row);
        let total = self.inputs.iter().enumerate().fold(Dd::ZERO, |acc, (k, (x, target))| {
            let z = dd_dot(x, row) / (self.in_norms[k] * norm) * self.scale;
            let sum = self.exps[k]
                .iter()
                .enumerate()
                .fold(Dd::ZERO, |a, (h, e)| a + if h == i { (z - self.shifts[k]).exp() } else { *e });
            let own = if *target == i { z } else { self.logits[k][*target] };
            acc + self.shifts[k] + sum.ln() - own
        });
        total / Dd::from(self.inputs.len() as f64)
    }

    /// Central differences with respect to `μ` (or `σ` when `wrt_sigma`).
    /// The step actually taken is `fl(x + h) − fl(x − h)`, computed exactly.
    fn central_difference(&self, inst: &Instance, wrt_sigma: bool, h: f64) -> Result<Array2<f64>> {
        let (mu, sigma) = (inst.sc.mu(), inst.sc.sigma());
        let mut out = Array2::zeros(mu.dim());
        for ((i, j), slot) in out.indexed_iter_mut() {
            let x = if wrt_sigma { sigma[[i, j]] } else { mu[[i, j]] };
            let (up, down) = (x + h, x - h);
            let mut row = self.weights[i].clone();
            let mut at = |v: f64| {
                row[j] = if wrt_sigma {
                    weight(mu[[i, j]], v, inst.epsilon[[i, j]])
                } else {
                    weight(v, sigma[[i, j]], inst.epsilon[[i, j]])
                };
                self.loss_with_row(i, &row)
            };
            let (plus, minus) = (at(up), at(down));
            let d = ((plus - minus) / Dd::sum(up, -down)).to_f64();
            if !d.is_finite() {
                return Err(Error::Evaluation(format!("non-finite difference at ({i}, {j})")));
            }
            *slot = d;
        }
        Ok(out)
    }
}

fn weight(mu: f64, sigma: f64, eps: f64) -> Dd {
    Dd::product(sigma, eps) + Dd::from(mu)
}

fn combine(kind: LossKind, base: f64, proto: f64) -> f64 {
    match kind {
        LossKind::Base => base,
        LossKind::Prototype => proto,
        LossKind::Joint { lambda } => (1.0 - lambda) * base + lambda * proto,
    }
}

/// The loss recomputed from scratch for explicit `μ` and `σ`.
pub fn reference_loss(inst: &Instance, kind: LossKind, mu: &Array2<f64>, sigma: &Array2<f64>) -> f64 {
    let base = Reference::new(inst, false, mu, sigma).loss().to_f64();
    let proto = Reference::new(inst, true, mu, sigma).loss().to_f64();
    combine(kind, base, proto)
}

/// Numerical `(∂/∂μ, ∂/∂σ)` of the base and prototype reference losses.
fn component_gradients(inst: &Instance, h: f64) -> Result<[GradientPair; 2]> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("step h must be > 0, got {h}")));
    }
    let grads = |prototype: bool| -> Result<GradientPair> {
        let r = Reference::new(inst, prototype, inst.sc.mu(), inst.sc.sigma());
        Ok(GradientPair {
            d_mu: r.central_difference(inst, false, h)?,
            d_sigma: r.central_difference(inst, true, h)?,
        })
    };
    Ok([grads(false)?, grads(true)?])
}

fn combine_gradients(kind: LossKind, parts: &[GradientPair; 2]) -> GradientPair {
    let (b, p) = (&parts[0], &parts[1]);
    let mix = |x: &Array2<f64>, y: &Array2<f64>| ndarray::Zip::from(x).and(y).map_collect(|a, c| combine(kind, *a, *c));
    GradientPair {
        d_mu: mix(&b.d_mu, &p.d_mu),
        d_sigma: mix(&b.d_sigma, &p.d_sigma),
    }
}

/// Numerical `(∂/∂μ, ∂/∂σ)` of the reference loss.
pub fn numeric_gradients(inst: &Instance, kind: LossKind, h: f64) -> Result<GradientPair> {
    Ok(combine_gradients(kind, &component_gradients(inst, h)?))
}

fn compare(analytic: &Array2<f64>, numeric: &Array2<f64>, check: &mut LossCheck) {
    for (a, n) in analytic.iter().zip(numeric) {
        let err = (a - n).abs();
        check.entries += 1;
        if a.abs() < ABSOLUTE_FLOOR {
            check.worst_absolute_small = check.worst_absolute_small.max(err);
            if err > ABSOLUTE_FLOOR {
                check.failures += 1;
            }
        } else {
            let rel = err / a.abs().max(n.abs());
            check.worst_relative = check.worst_relative.max(rel);
            if rel > RELATIVE_TOLERANCE {
                check.failures += 1;
            }
        }
    }
}

pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    if cfg.max_dim == 0 || cfg.max_classes == 0 || cfg.max_batch == 0 {
        return Err(Error::InvalidArgument("gradcheck sizes must be >= 1".into()));
    }
    let kinds = LossKind::suite();
    let mut checks: Vec<LossCheck> = kinds
        .iter()
        .map(|k| LossCheck {
            loss: k.label(),
            entries: 0,
            failures: 0,
            worst_relative: 0.0,
            worst_absolute_small: 0.0,
        })
        .collect();
    let mut rng = RngState::with_stream(cfg.seed, streams::GRADCHECK);
    for _ in 0..cfg.instances {
        let inst = random_instance(cfg, &mut rng)?;
        let parts = component_gradients(&inst, cfg.step)?;
        for (kind, check) in kinds.iter().zip(checks.iter_mut()) {
            let (value, grads) = analytic(&inst, *kind)?;
            let reference = reference_loss(&inst, *kind, inst.sc.mu(), inst.sc.sigma());
            if (value - reference).abs() > 1e-10 * reference.abs().max(1.0) {
                return Err(Error::Contract(format!(
                    "{} loss {value} disagrees with reference {reference}",
                    kind.label()
                )));
            }
            let numeric = combine_gradients(*kind, &parts);
            compare(&grads.d_mu, &numeric.d_mu, check);
            compare(&grads.d_sigma, &numeric.d_sigma, check);
        }
    }
    Ok(GradcheckReport {
        instances: cfg.instances,
        checks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaZeroReport {
    pub configurations: usize,
    pub worst_loss_difference: f64,
    pub worst_gradient_difference: f64,
}

impl SigmaZeroReport {
    pub fn passed(&self) -> bool {
        self.worst_loss_difference <= SIGMA_ZERO_TOLERANCE && self.worst_gradient_difference <= SIGMA_ZERO_TOLERANCE
    }
}

/// With `σ = 0` the stochastic losses must equal the deterministic ones on
/// the same rows, whatever ε is drawn.
pub fn run_sigma_zero(configurations: usize, seed: u64) -> Result<SigmaZeroReport> {
    let cfg = GradcheckConfig::default();
    let mut rng = RngState::with_stream(seed, streams::GRADCHECK);
    let mut report = SigmaZeroReport {
        configurations,
        worst_loss_difference: 0.0,
        worst_gradient_difference: 0.0,
    };
    for _ in 0..configurations {
        let mut inst = random_instance(&cfg, &mut rng)?;
        let (rows, cols) = inst.sc.mu().dim();
        inst.sc = StochasticClassifier::from_parts(
            inst.sc.class_ids().to_vec(),
            inst.sc.mu().clone(),
            Array2::zeros((rows, cols)),
        )?;
        let dc = inst.sc.to_deterministic();
        for kind in LossKind::suite() {
            let tc = training_config(&inst, kind);
            let (ls, gs) = analytic(&inst, kind)?;
            let (ld, gd) = match kind {
                LossKind::Base => deterministic::batch_base_loss(&inst.batch, &dc, &tc)?,
                LossKind::Prototype => deterministic::prototype_loss(&inst.prototypes, &dc, &tc)?,
                LossKind::Joint { .. } => deterministic::joint_loss(&inst.batch, &inst.prototypes, &dc, &tc)?,
            };
            report.worst_loss_difference = report.worst_loss_difference.max((ls - ld).abs());
            let gdiff = (&gs.d_mu - &gd).iter().fold(0.0_f64, |m, x| m.max(x.abs()));
            report.worst_gradient_difference = report.worst_gradient_difference.max(gdiff);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GradcheckConfig {
        GradcheckConfig {
            instances: 20,
            ..GradcheckConfig::default()
        }
    }

    #[test]
    fn small_suite_passes() {
        let report = run_gradcheck(&small()).unwrap();
        assert_eq!(report.checks.len(), 6);
        assert!(report.passed(), "{report:#?}");
        assert!(report.checks.iter().all(|c| c.entries > 0));
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        assert_eq!(run_gradcheck(&small()).unwrap(), run_gradcheck(&small()).unwrap());
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let mut rng = RngState::new(2);
        let inst = random_instance(&small(), &mut rng).unwrap();
        let (_, grads) = analytic(&inst, LossKind::Base).unwrap();
        let numeric = numeric_gradients(&inst, LossKind::Base, 1e-8).unwrap();
        let mut ok = LossCheck {
            loss: "base".into(),
            entries: 0,
            failures: 0,
            worst_relative: 0.0,
            worst_absolute_small: 0.0,
        };
        compare(&grads.d_mu, &numeric.d_mu, &mut ok);
        assert_eq!(ok.failures, 0);
        let mut bad = ok.clone();
        compare(&(grads.d_mu * 1.001), &numeric.d_mu, &mut bad);
        assert!(bad.failures > 0);
    }

    #[test]
    fn cached_row_update_matches_full_recomputation() {
        let mut rng = RngState::new(8);
        let inst = random_instance(&small(), &mut rng).unwrap();
        let r = Reference::new(&inst, false, inst.sc.mu(), inst.sc.sigma());
        let mut mu = inst.sc.mu().clone();
        mu[[1, 0]] += 0.25;
        let full = Reference::new(&inst, false, &mu, inst.sc.sigma()).loss();
        let row: Vec<Dd> = (0..mu.ncols())
            .map(|j| weight(mu[[1, j]], inst.sc.sigma()[[1, j]], inst.epsilon[[1, j]]))
            .collect();
        assert!((r.loss_with_row(1, &row) - full).to_f64().abs() < 1e-28);
        assert!((r.loss_with_row(1, &r.weights[1]) - r.loss()).to_f64().abs() < 1e-28);
    }

    #[test]
    fn sigma_zero_agreement() {
        let r = run_sigma_zero(10, 3).unwrap();
        assert!(r.passed(), "{r:?}");
    }
}
