use serde::{Deserialize, Serialize};

use super::{LabeledPoint, TrainError};
use crate::dataflow::Engine;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    /// `ln(1 + exp(-y w.x))`
    Logistic,
    /// `max(0, 1 - y w.x)`
    Hinge,
}

impl Loss {
    /// Loss and its derivative with respect to the margin `m = y w.x`.
    /// The hinge derivative at the kink `m = 1` is taken as 0.
    pub fn value_and_slope(self, margin: f64) -> (f64, f64) {
        match self {
            Loss::Logistic => {
                // softplus(-m) without overflow
                let loss = (-margin).max(0.0) + (-margin.abs()).exp().ln_1p();
                let slope = if margin > 0.0 {
                    let e = (-margin).exp();
                    -e / (1.0 + e)
                } else {
                    -1.0 / (1.0 + margin.exp())
                };
                (loss, slope)
            }
            Loss::Hinge => {
                if margin < 1.0 {
                    (1.0 - margin, -1.0)
                } else {
                    (0.0, 0.0)
                }
            }
        }
    }
}

/// `f(w) = lambda * 0.5 * |w|^2 + (1/n) * sum_i L(w; x_i, y_i)` over data
/// held as partitions.
///
/// With `intercept`, the parameter vector carries one extra trailing entry,
/// the bias, which is not regularized.
///
/// Per-point terms may be computed in parallel, but they are always summed
/// sequentially in global point order, so the result is bit-identical for
/// any partitioning of the same point sequence.
pub struct Objective<'a> {
    loss: Loss,
    lambda: f64,
    dim: usize,
    intercept: bool,
    partitions: &'a [Vec<LabeledPoint>],
    n: usize,
}

impl<'a> Objective<'a> {
    pub fn new(
        loss: Loss,
        lambda: f64,
        dim: usize,
        intercept: bool,
        partitions: &'a [Vec<LabeledPoint>],
    ) -> Result<Self, TrainError> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(TrainError::InvalidConfig(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        let n = partitions.iter().map(Vec::len).sum();
        if n == 0 {
            return Err(TrainError::EmptyTraining);
        }
        for p in partitions.iter().flatten() {
            if p.features.dim() != dim {
                return Err(TrainError::DimMismatch {
                    expected: dim,
                    found: p.features.dim(),
                });
            }
        }
        Ok(Self {
            loss,
            lambda,
            dim,
            intercept,
            partitions,
            n,
        })
    }

    /// Length of the parameter vector.
    pub fn param_len(&self) -> usize {
        self.dim + usize::from(self.intercept)
    }

    pub fn point_count(&self) -> usize {
        self.n
    }

    /// `(loss, dL/dw coefficient on x)` for every point of one partition.
    fn partial(&self, points: &[LabeledPoint], w: &[f64]) -> Vec<(f64, f64)> {
        let bias = if self.intercept { w[self.dim] } else { 0.0 };
        let weights = &w[..self.dim];
        points
            .iter()
            .map(|p| {
                let y = p.label.sign();
                let margin = y * (p.features.dot(weights) + bias);
                let (loss, slope) = self.loss.value_and_slope(margin);
                (loss, slope * y)
            })
            .collect()
    }

    fn accumulate(&self, w: &[f64], partials: &[Vec<(f64, f64)>]) -> Result<(f64, Vec<f64>), TrainError> {
        let mut loss_sum = 0.0;
        let mut grad = vec![0.0; self.param_len()];
        for (points, terms) in self.partitions.iter().zip(partials) {
            for (p, &(loss, coef)) in points.iter().zip(terms) {
                loss_sum += loss;
                if coef != 0.0 {
                    p.features.axpy_into(coef, &mut grad[..self.dim]);
                    if self.intercept {
                        grad[self.dim] += coef;
                    }
                }
            }
        }
        let inv_n = 1.0 / self.n as f64;
        let mut norm_sq = 0.0;
        for (g, &wi) in grad[..self.dim].iter_mut().zip(&w[..self.dim]) {
            *g = *g * inv_n + self.lambda * wi;
            norm_sq += wi * wi;
        }
        if self.intercept {
            grad[self.dim] *= inv_n;
        }
        let value = 0.5 * self.lambda * norm_sq + loss_sum * inv_n;
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::NonFinite("objective or gradient".into()));
        }
        Ok((value, grad))
    }

    fn check_len(&self, w: &[f64]) -> Result<(), TrainError> {
        if w.len() != self.param_len() {
            return Err(TrainError::DimMismatch {
                expected: self.param_len(),
                found: w.len(),
            });
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(TrainError::NonFinite("weights".into()));
        }
        Ok(())
    }

    /// Value and (sub)gradient at `w`, single-threaded.
    pub fn evaluate(&self, w: &[f64]) -> Result<(f64, Vec<f64>), TrainError> {
        self.check_len(w)?;
        let partials: Vec<_> = self.partitions.iter().map(|p| self.partial(p, w)).collect();
        self.accumulate(w, &partials)
    }

    /// Same as [`Objective::evaluate`], with the per-point pass run as one
    /// engine stage (one task per partition).
    pub fn evaluate_on(&self, engine: &Engine, w: &[f64]) -> Result<(f64, Vec<f64>), TrainError> {
        self.check_len(w)?;
        let inputs: Vec<&[LabeledPoint]> = self.partitions.iter().map(Vec::as_slice).collect();
        let partials = engine.run_stage("objective", inputs, |_, points| Ok(self.partial(points, w)))?;
        self.accumulate(w, &partials)
    }
}

/// Value and gradient of the regularized average loss over `data`.
pub fn objective(
    w: &[f64],
    data: &[LabeledPoint],
    loss: Loss,
    lambda: f64,
) -> Result<(f64, Vec<f64>), TrainError> {
    let parts = [data.to_vec()];
    Objective::new(loss, lambda, w.len(), false, &parts)?.evaluate(w)
}
