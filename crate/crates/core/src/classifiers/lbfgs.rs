//! Limited-memory BFGS with a backtracking Armijo line search.

use std::collections::VecDeque;

use super::TrainError;

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iters: usize,
    /// Stop once `|g| <= tol * max(1, |g0|)`.
    pub tol: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iters: 100,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub line_search_failed: bool,
    /// Objective value at the start and after every accepted step.
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

/// `-H g` via the two-loop recursion, with `H0 = gamma I` where
/// `gamma = s.y / y.y` of the newest pair.
fn two_loop(g: &[f64], history: &VecDeque<Pair>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for pair in history.iter().rev() {
        let a = pair.rho * dot(&pair.s, &q);
        for (qi, yi) in q.iter_mut().zip(&pair.y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some(last) = history.back() {
        let gamma = dot(&last.s, &last.y) / dot(&last.y, &last.y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for (pair, a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = pair.rho * dot(&pair.y, &q);
        for (qi, si) in q.iter_mut().zip(&pair.s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|x| *x = -*x);
    q
}

/// Minimizes a smooth function from `x0`. `f` returns value and gradient.
///
/// A line search that cannot find an Armijo step ends the run early with the
/// current iterate (flagged in the result).
pub fn lbfgs_minimize<F>(mut f: F, x0: Vec<f64>, cfg: &LbfgsConfig) -> Result<LbfgsResult, TrainError>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>), TrainError>,
{
    if cfg.memory == 0 || cfg.tol.is_nan() || cfg.tol <= 0.0 {
        return Err(TrainError::InvalidConfig("L-BFGS needs memory >= 1 and tol > 0".into()));
    }
    let mut x = x0;
    let (mut fx, mut g) = f(&x)?;
    let stop = cfg.tol * norm(&g).max(1.0);
    let mut history: VecDeque<Pair> = VecDeque::with_capacity(cfg.memory);
    let mut out = LbfgsResult {
        x: Vec::new(),
        value: fx,
        iterations: 0,
        converged: false,
        line_search_failed: false,
        history: vec![fx],
    };

    while out.iterations < cfg.max_iters {
        let gnorm = norm(&g);
        if gnorm <= stop {
            out.converged = true;
            break;
        }
        let mut d = two_loop(&g, &history);
        let mut slope = dot(&g, &d);
        if slope.is_nan() || slope >= 0.0 {
            history.clear();
            d = g.iter().map(|v| -v).collect();
            slope = -gnorm * gnorm;
        }
        let mut step = if history.is_empty() { (1.0 / gnorm).min(1.0) } else { 1.0 };

        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            match f(&trial) {
                Ok((ft, gt)) if ft <= fx + ARMIJO_C1 * step * slope => {
                    accepted = Some((trial, ft, gt));
                    break;
                }
                Ok(_) | Err(TrainError::NonFinite(_)) => step *= 0.5,
                Err(e) => return Err(e),
            }
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            log::warn!("L-BFGS line search failed at iteration {}; keeping current iterate", out.iterations);
            out.line_search_failed = true;
            break;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > f64::EPSILON * dot(&y, &y) && sy > 0.0 {
            if history.len() == cfg.memory {
                history.pop_front();
            }
            history.push_back(Pair { s, y, rho: 1.0 / sy });
        }
        x = x_new;
        fx = f_new;
        g = g_new;
        out.iterations += 1;
        out.history.push(fx);
    }
    if !out.converged && norm(&g) <= stop {
        out.converged = true;
    }
    out.x = x;
    out.value = fx;
    Ok(out)
}
