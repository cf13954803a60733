use super::TrainError;

#[derive(Debug, Clone)]
pub struct SgdResult {
    pub x: Vec<f64>,
    pub epochs: usize,
    /// Objective value seen at the start of every epoch.
    pub history: Vec<f64>,
}

/// Decaying-step subgradient descent over the full batch: at epoch `t`
/// (1-based) `x <- x - step / sqrt(t) * g(x)`, where `f` returns the
/// objective and a subgradient (regularizer included).
pub fn sgd_minimize<F>(mut f: F, x0: Vec<f64>, step: f64, epochs: usize) -> Result<SgdResult, TrainError>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>), TrainError>,
{
    if !(step >= 0.0 && step.is_finite()) {
        return Err(TrainError::InvalidConfig(format!("step size must be finite and >= 0, got {step}")));
    }
    let mut x = x0;
    let mut history = Vec::with_capacity(epochs);
    for t in 1..=epochs {
        let (value, g) = f(&x)?;
        history.push(value);
        let eta = step / (t as f64).sqrt();
        for (xi, gi) in x.iter_mut().zip(&g) {
            *xi -= eta * gi;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::Diverged { epoch: t });
        }
    }
    Ok(SgdResult { x, epochs, history })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_step_keeps_start() {
        let r = sgd_minimize(|w| Ok((0.0, vec![1.0; w.len()])), vec![0.0; 3], 0.0, 50).unwrap();
        assert_eq!(r.x, vec![0.0; 3]);
    }

    #[test]
    fn converges_on_abs() {
        let r = sgd_minimize(|w| Ok(((w[0] - 2.0).abs(), vec![(w[0] - 2.0).signum()])), vec![0.0], 0.5, 2000).unwrap();
        assert!((r.x[0] - 2.0).abs() < 0.05, "{:?}", r.x);
    }

    #[test]
    fn divergence_is_reported() {
        let r = sgd_minimize(|w| Ok((0.0, vec![w[0] * 1e200 + 1e300])), vec![1.0], 1.0, 10);
        assert!(matches!(r, Err(TrainError::Diverged { .. })));
    }
}
