//! Dense-vector math, stable softmax cross-entropy, seeded Gaussian draws,
//! analytic cosine-softmax gradients and a central-difference oracle.

mod grad;
mod optim;
mod rng;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use grad::{finite_difference_gradient, grad_cosine_ce};
pub(crate) use grad::{accumulate_cosine_ce, LogitTerm};
pub use optim::{optimizer_step, OptimizerConfig, OptimizerState};
pub use rng::{streams, RngState};

/// A finite, non-empty vector of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("vector must have dim >= 1".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite entry {} at index {i}",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn view(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(self.0.as_slice())
    }

    pub fn norm(&self) -> f64 {
        l2_norm(self.view())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for DenseVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<DenseVector> for Vec<f64> {
    fn from(v: DenseVector) -> Self {
        v.0
    }
}

/// ∂loss/∂μ and ∂loss/∂σ of a stochastic head, shaped like μ and σ.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientPair {
    pub d_mu: Array2<f64>,
    pub d_sigma: Array2<f64>,
}

impl GradientPair {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            d_mu: Array2::zeros((rows, cols)),
            d_sigma: Array2::zeros((rows, cols)),
        }
    }

    pub fn scaled_add(&mut self, alpha: f64, other: &GradientPair) {
        self.d_mu.scaled_add(alpha, &other.d_mu);
        self.d_sigma.scaled_add(alpha, &other.d_sigma);
    }
}

pub(crate) fn l2_norm(v: ArrayView1<'_, f64>) -> f64 {
    v.dot(&v).sqrt()
}

/// `dot(a, b) / (‖a‖·‖b‖)`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "cosine of vectors with dims {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateInput(
            "cosine similarity of a zero-norm vector".into(),
        ));
    }
    Ok((a.dot(&b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Negative log-softmax of `logits[target]`, computed with the max shift.
pub fn log_softmax_ce(logits: &[f64], target: usize) -> Result<f64> {
    validate_logits(logits, target)?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
    // (max - z_t) >= 0 and ln(sum) >= 0 since sum >= 1.
    Ok((max - logits[target]) + sum.ln())
}

/// Loss plus softmax probabilities, for callers that need the gradient
/// `p - onehot(target)` with respect to the logits.
pub(crate) fn softmax_ce_with_probs(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    validate_logits(logits, target)?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = (max - logits[target]) + sum.ln();
    Ok((loss, exps.into_iter().map(|e| e / sum).collect()))
}

fn validate_logits(logits: &[f64], target: usize) -> Result<()> {
    if logits.is_empty() {
        return Err(Error::InvalidArgument("empty logit vector".into()));
    }
    if target >= logits.len() {
        return Err(Error::InvalidArgument(format!(
            "target index {target} out of range for {} logits",
            logits.len()
        )));
    }
    if let Some(z) = logits.iter().find(|z| !z.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite logit {z}")));
    }
    Ok(())
}

/// Matrix of i.i.d. standard normals, drawn row-major.
pub fn standard_normal_matrix(rows: usize, cols: usize, rng: &mut RngState) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.standard_normal())
}

/// `mu + eps ⊙ sigma`; entries with `sigma == 0` return `mu` bit-for-bit.
pub fn reparameterize(mu: &Array2<f64>, sigma: &Array2<f64>, eps: &Array2<f64>) -> Result<Array2<f64>> {
    if mu.dim() != sigma.dim() || mu.dim() != eps.dim() {
        return Err(Error::Shape(format!(
            "mu {:?}, sigma {:?}, eps {:?}",
            mu.dim(),
            sigma.dim(),
            eps.dim()
        )));
    }
    let mut out = mu.clone();
    ndarray::Zip::from(&mut out)
        .and(sigma)
        .and(eps)
        .for_each(|m, &s, &e| {
            if s != 0.0 {
                *m += e * s;
            }
        });
    Ok(out)
}

/// Draws `μ̂ = μ + ε ⊙ σ` with fresh standard normals from `rng`.
pub fn sample_stochastic_weights(
    mu: &Array2<f64>,
    sigma: &Array2<f64>,
    rng: &mut RngState,
) -> Result<Array2<f64>> {
    if mu.dim() != sigma.dim() {
        return Err(Error::Shape(format!(
            "mu {:?} vs sigma {:?}",
            mu.dim(),
            sigma.dim()
        )));
    }
    let (rows, cols) = mu.dim();
    let eps = standard_normal_matrix(rows, cols, rng);
    reparameterize(mu, sigma, &eps)
}
