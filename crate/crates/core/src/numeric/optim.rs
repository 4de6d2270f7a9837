//! First-order update rules for the classifier parameters.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OptimizerConfig {
    /// `p ← p − lr·g`
    Sgd { lr: f64 },
    /// Heavy-ball momentum: `v ← m·v + g`, `p ← p − lr·v`.
    Momentum { lr: f64, momentum: f64 },
    /// Bias-corrected adaptive moments.
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Sgd { lr: 0.01 }
    }
}

impl OptimizerConfig {
    pub fn learning_rate(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { lr }
            | OptimizerConfig::Momentum { lr, .. }
            | OptimizerConfig::Adam { lr, .. } => lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.learning_rate();
        // lr == 0 is allowed and leaves parameters untouched.
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be >= 0, got {lr}")));
        }
        match *self {
            OptimizerConfig::Sgd { .. } => Ok(()),
            OptimizerConfig::Momentum { momentum, .. } => {
                if (0.0..1.0).contains(&momentum) {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument(format!("momentum must be in [0, 1), got {momentum}")))
                }
            }
            OptimizerConfig::Adam { beta1, beta2, eps, .. } => {
                if (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidArgument(format!(
                        "adam needs beta1, beta2 in [0, 1) and eps > 0, got {beta1}, {beta2}, {eps}"
                    )))
                }
            }
        }
    }
}

/// Per-parameter-matrix optimizer memory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerState {
    steps: u64,
    first_moment: Option<Array2<f64>>,
    second_moment: Option<Array2<f64>>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Drops moments whose shape no longer matches (after classifier expansion
    /// the old rows keep their history, new rows start at zero).
    fn fit_shape(&mut self, shape: (usize, usize)) {
        for m in [&mut self.first_moment, &mut self.second_moment] {
            if let Some(old) = m.as_ref() {
                if old.dim() != shape {
                    let mut grown = Array2::zeros(shape);
                    let rows = old.nrows().min(shape.0);
                    if old.ncols() == shape.1 {
                        grown
                            .slice_mut(ndarray::s![..rows, ..])
                            .assign(&old.slice(ndarray::s![..rows, ..]));
                    }
                    *m = Some(grown);
                }
            }
        }
    }
}

pub fn optimizer_step(
    params: &mut Array2<f64>,
    grads: &Array2<f64>,
    state: &mut OptimizerState,
    config: &OptimizerConfig,
) -> Result<()> {
    if params.dim() != grads.dim() {
        return Err(Error::Shape(format!(
            "params {:?} vs grads {:?}",
            params.dim(),
            grads.dim()
        )));
    }
    config.validate()?;
    if let Some((idx, g)) = grads.indexed_iter().find(|(_, g)| !g.is_finite()) {
        return Err(Error::Divergence(format!("gradient entry {idx:?} is {g}")));
    }
    state.fit_shape(params.dim());
    state.steps += 1;
    let lr = config.learning_rate();
    match *config {
        OptimizerConfig::Sgd { .. } => {
            if lr != 0.0 {
                params.scaled_add(-lr, grads);
            }
        }
        OptimizerConfig::Momentum { momentum, .. } => {
            let v = state
                .first_moment
                .get_or_insert_with(|| Array2::zeros(grads.dim()));
            v.mapv_inplace(|x| x * momentum);
            *v += grads;
            if lr != 0.0 {
                params.scaled_add(-lr, v);
            }
        }
        OptimizerConfig::Adam { beta1, beta2, eps, .. } => {
            let m = state
                .first_moment
                .get_or_insert_with(|| Array2::zeros(grads.dim()));
            ndarray::Zip::from(&mut *m)
                .and(grads)
                .for_each(|m, &g| *m = beta1 * *m + (1.0 - beta1) * g);
            let v = state
                .second_moment
                .get_or_insert_with(|| Array2::zeros(grads.dim()));
            ndarray::Zip::from(&mut *v)
                .and(grads)
                .for_each(|v, &g| *v = beta2 * *v + (1.0 - beta2) * g * g);
            if lr != 0.0 {
                let t = state.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let m = state.first_moment.as_ref().expect("set above");
                let v = state.second_moment.as_ref().expect("set above");
                ndarray::Zip::from(params)
                    .and(m)
                    .and(v)
                    .for_each(|p, &m, &v| *p -= lr * (m / c1) / ((v / c2).sqrt() + eps));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn plain_descent() {
        let mut p = array![[1.0]];
        let mut st = OptimizerState::new();
        optimizer_step(&mut p, &array![[2.0]], &mut st, &OptimizerConfig::Sgd { lr: 0.1 }).unwrap();
        assert_abs_diff_eq!(p[[0, 0]], 0.8, epsilon = 1e-15);
    }

    #[test]
    fn zero_gradient_is_noop() {
        for cfg in [
            OptimizerConfig::Sgd { lr: 0.1 },
            OptimizerConfig::Momentum { lr: 0.1, momentum: 0.9 },
        ] {
            let mut p = array![[1.0, -3.0]];
            let before = p.clone();
            let mut st = OptimizerState::new();
            optimizer_step(&mut p, &Array2::zeros((1, 2)), &mut st, &cfg).unwrap();
            assert_eq!(p, before);
        }
    }

    #[test]
    fn momentum_second_update() {
        let (lr, g) = (0.05, 1.7);
        let cfg = OptimizerConfig::Momentum { lr, momentum: 0.9 };
        let mut p = array![[0.0]];
        let mut st = OptimizerState::new();
        optimizer_step(&mut p, &array![[g]], &mut st, &cfg).unwrap();
        let after_first = p[[0, 0]];
        optimizer_step(&mut p, &array![[g]], &mut st, &cfg).unwrap();
        let second = after_first - p[[0, 0]];
        assert_abs_diff_eq!(second, lr * g * (1.0 + 0.9), epsilon = 1e-14);
    }

    #[test]
    fn adam_first_step_is_lr_sign() {
        let cfg = OptimizerConfig::Adam {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-12,
        };
        let mut p = array![[1.0, 1.0]];
        let mut st = OptimizerState::new();
        optimizer_step(&mut p, &array![[3.0, -0.2]], &mut st, &cfg).unwrap();
        assert_abs_diff_eq!(p[[0, 0]], 0.99, epsilon = 1e-9);
        assert_abs_diff_eq!(p[[0, 1]], 1.01, epsilon = 1e-9);
    }

    #[test]
    fn nan_gradient_reports_coordinate() {
        let mut p = array![[1.0, 2.0], [3.0, 4.0]];
        let mut st = OptimizerState::new();
        let err = optimizer_step(
            &mut p,
            &array![[0.0, 0.0], [f64::NAN, 0.0]],
            &mut st,
            &OptimizerConfig::default(),
        )
        .unwrap_err();
        match err {
            Error::Divergence(msg) => assert!(msg.contains("(1, 0)"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn moments_grow_with_params() {
        let cfg = OptimizerConfig::Momentum { lr: 0.1, momentum: 0.5 };
        let mut st = OptimizerState::new();
        let mut p = array![[1.0]];
        optimizer_step(&mut p, &array![[1.0]], &mut st, &cfg).unwrap();
        let mut p2 = array![[p[[0, 0]]], [5.0]];
        optimizer_step(&mut p2, &array![[1.0], [1.0]], &mut st, &cfg).unwrap();
        // old row: v = 0.5 + 1; new row: v = 1
        assert_abs_diff_eq!(p2[[0, 0]], 0.9 - 0.15, epsilon = 1e-14);
        assert_abs_diff_eq!(p2[[1, 0]], 4.9, epsilon = 1e-14);
    }
}
