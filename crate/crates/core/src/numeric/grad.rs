use ndarray::{Array2, ArrayView1, ArrayView2};

use super::{cosine_similarity, l2_norm, softmax_ce_with_probs, GradientPair};
use crate::error::{Error, Result};

/// One logit of a cosine softmax: `scale · cos(input, weights[row])`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LogitTerm<'a> {
    pub input: ArrayView1<'a, f64>,
    pub row: usize,
}

/// Cross-entropy over cosine logits built from `terms`, with the true class at
/// position `target`. Adds `factor · ∂loss/∂weights` into `grad` and returns
/// the (unscaled) loss.
///
/// For `z = s·cos(a, w)`, `∂z/∂w = s·(a/(‖a‖‖w‖) − cos(a,w)·w/‖w‖²)`, and
/// `∂loss/∂z_j = p_j − [j == target]`.
pub(crate) fn accumulate_cosine_ce(
    terms: &[LogitTerm<'_>],
    target: usize,
    weights: ArrayView2<'_, f64>,
    scale: f64,
    factor: f64,
    grad: &mut Array2<f64>,
) -> Result<f64> {
    let mut logits = Vec::with_capacity(terms.len());
    for t in terms {
        let w = weights.row(t.row);
        logits.push(scale * cosine_similarity(t.input, w)?);
    }
    let (loss, probs) = softmax_ce_with_probs(&logits, target)?;
    if factor == 0.0 {
        return Ok(loss);
    }
    for (j, t) in terms.iter().enumerate() {
        let dz = probs[j] - if j == target { 1.0 } else { 0.0 };
        if dz == 0.0 {
            continue;
        }
        let w = weights.row(t.row);
        let (na, nw) = (l2_norm(t.input), l2_norm(w));
        let cos = t.input.dot(&w) / (na * nw);
        let coef = factor * dz * scale;
        let mut g = grad.row_mut(t.row);
        g.scaled_add(coef / (na * nw), &t.input);
        g.scaled_add(-coef * cos / (nw * nw), &w);
    }
    Ok(loss)
}

/// Loss and `(∂/∂μ, ∂/∂σ)` of the cosine softmax cross-entropy for one
/// embedding against sampled weights `mu_hat = mu + epsilon ⊙ sigma`.
///
/// `epsilon` must be the noise actually used to build `mu_hat`; the σ
/// gradient is `epsilon ⊙ ∂loss/∂μ̂`.
pub fn grad_cosine_ce(
    embedding: ArrayView1<'_, f64>,
    target_index: usize,
    mu_hat: &Array2<f64>,
    mu: &Array2<f64>,
    sigma: &Array2<f64>,
    epsilon: &Array2<f64>,
    scale: f64,
) -> Result<(f64, GradientPair)> {
    let shape = mu.dim();
    if mu_hat.dim() != shape || sigma.dim() != shape || epsilon.dim() != shape {
        return Err(Error::Shape(format!(
            "mu_hat {:?}, mu {:?}, sigma {:?}, epsilon {:?}",
            mu_hat.dim(),
            shape,
            sigma.dim(),
            epsilon.dim()
        )));
    }
    if embedding.len() != shape.1 {
        return Err(Error::Shape(format!(
            "embedding dim {} vs weight dim {}",
            embedding.len(),
            shape.1
        )));
    }
    for ((idx, &w), (&m, (&s, &e))) in mu_hat
        .indexed_iter()
        .zip(mu.iter().zip(sigma.iter().zip(epsilon.iter())))
    {
        let expected = m + e * s;
        if (w - expected).abs() > 1e-12 * expected.abs().max(1.0) {
            return Err(Error::Contract(format!(
                "mu_hat{idx:?} = {w} but mu + eps*sigma = {expected}"
            )));
        }
    }
    let terms: Vec<LogitTerm<'_>> = (0..shape.0)
        .map(|row| LogitTerm {
            input: embedding,
            row,
        })
        .collect();
    let mut d_mu = Array2::zeros(shape);
    let loss = accumulate_cosine_ce(&terms, target_index, mu_hat.view(), scale, 1.0, &mut d_mu)?;
    let d_sigma = &d_mu * epsilon;
    Ok((loss, GradientPair { d_mu, d_sigma }))
}

/// Central differences `(f(x + h·e_ij) − f(x − h·e_ij)) / 2h` for every entry.
pub fn finite_difference_gradient<F>(mut loss_fn: F, point: &Array2<f64>, h: f64) -> Result<Array2<f64>>
where
    F: FnMut(&Array2<f64>) -> Result<f64>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("step h must be > 0, got {h}")));
    }
    let mut probe = point.clone();
    let mut out = Array2::zeros(point.dim());
    for (idx, &x) in point.indexed_iter() {
        probe[idx] = x + h;
        let plus = loss_fn(&probe)?;
        probe[idx] = x - h;
        let minus = loss_fn(&probe)?;
        probe[idx] = x;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Evaluation(format!(
                "non-finite loss near coordinate {idx:?}"
            )));
        }
        out[idx] = (plus - minus) / (2.0 * h);
    }
    Ok(out)
}
