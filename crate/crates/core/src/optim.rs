//! Limited-memory BFGS with Armijo backtracking.
//!
//! The objective returns `None` at points outside its domain; the line
//! search treats those like a failed sufficient-decrease test and halves
//! the step.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::scalar::{cast, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop once the largest gradient component is at most this.
    pub grad_tol: f64,
    pub max_backtracks: usize,
    pub armijo: f64,
    /// Also stop when `f_k − f_{k+1} ≤ value_tol · max(|f_k|, 1)` for
    /// `value_patience` consecutive iterations.
    pub value_tol: f64,
    pub value_patience: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            memory: 10,
            max_iter: 500,
            grad_tol: 1e-6,
            max_backtracks: 60,
            armijo: 1e-4,
            value_tol: 1e-12,
            value_patience: 5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradientTolerance,
    ValueTolerance,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Clone, Debug)]
pub struct LbfgsResult<T> {
    pub x: Vec<T>,
    pub value: T,
    pub grad: Vec<T>,
    pub iterations: usize,
    pub evaluations: usize,
    pub stop: StopReason,
}

impl<T: Real> LbfgsResult<T> {
    pub fn converged(&self) -> bool {
        matches!(self.stop, StopReason::GradientTolerance | StopReason::ValueTolerance)
    }

    pub fn grad_norm(&self) -> T {
        inf_norm(&self.grad)
    }
}

fn inf_norm<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

/// Minimize `f` from `x0`. Fails only if `x0` itself is outside the domain.
pub fn minimize<T, F>(x0: Vec<T>, cfg: &LbfgsConfig, mut f: F) -> Result<LbfgsResult<T>>
where
    T: Real,
    F: FnMut(&[T]) -> Option<(T, Vec<T>)>,
{
    let (mut fx, mut g) = f(&x0).ok_or_else(|| {
        Error::Numerical("objective undefined at the starting point".into())
    })?;
    if !fx.is_finite() {
        return Err(Error::Numerical("objective not finite at the starting point".into()));
    }
    let mut x = x0;
    let mut evaluations = 1;
    let mut hist: VecDeque<(Vec<T>, Vec<T>, T)> = VecDeque::with_capacity(cfg.memory);
    let tol = cast::<T>(cfg.grad_tol);
    let c1 = cast::<T>(cfg.armijo);
    let half = cast::<T>(0.5);
    let vtol = cast::<T>(cfg.value_tol);
    let mut stalled = 0;

    for iter in 0..cfg.max_iter {
        if inf_norm(&g) <= tol {
            return Ok(LbfgsResult {
                x,
                value: fx,
                grad: g,
                iterations: iter,
                evaluations,
                stop: StopReason::GradientTolerance,
            });
        }
        let mut accepted = None;
        for attempt in 0..2 {
            let mut d = if attempt == 0 {
                direction(&g, &hist)
            } else {
                hist.clear();
                g.iter().map(|&v| -v).collect()
            };
            let mut slope = dot(&g, &d);
            if !(slope < T::zero()) {
                hist.clear();
                d = g.iter().map(|&v| -v).collect();
                slope = dot(&g, &d);
            }
            let mut step = if hist.is_empty() {
                T::one().min(T::one() / inf_norm(&d))
            } else {
                T::one()
            };
            for _ in 0..cfg.max_backtracks {
                let xn: Vec<T> = x.iter().zip(&d).map(|(&a, &b)| a + step * b).collect();
                evaluations += 1;
                if let Some((fv, gv)) = f(&xn) {
                    if fv.is_finite() && fv <= fx + c1 * step * slope {
                        accepted = Some((xn, fv, gv));
                        break;
                    }
                }
                step *= half;
            }
            if accepted.is_some() || hist.is_empty() {
                break;
            }
        }
        let Some((xn, fv, gv)) = accepted else {
            return Ok(LbfgsResult {
                x,
                value: fx,
                grad: g,
                iterations: iter,
                evaluations,
                stop: StopReason::LineSearchFailed,
            });
        };
        let s: Vec<T> = xn.iter().zip(&x).map(|(&a, &b)| a - b).collect();
        let y: Vec<T> = gv.iter().zip(&g).map(|(&a, &b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > T::epsilon() * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if hist.len() == cfg.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, T::one() / sy));
        }
        if fx - fv <= vtol * fx.abs().max(T::one()) {
            stalled += 1;
        } else {
            stalled = 0;
        }
        x = xn;
        fx = fv;
        g = gv;
        if cfg.value_patience > 0 && stalled >= cfg.value_patience {
            return Ok(LbfgsResult {
                x,
                value: fx,
                grad: g,
                iterations: iter + 1,
                evaluations,
                stop: StopReason::ValueTolerance,
            });
        }
    }
    let stop = if inf_norm(&g) <= tol {
        StopReason::GradientTolerance
    } else {
        StopReason::MaxIterations
    };
    Ok(LbfgsResult {
        x,
        value: fx,
        grad: g,
        iterations: cfg.max_iter,
        evaluations,
        stop,
    })
}

/// Two-loop recursion for `−H g`.
fn direction<T: Real>(g: &[T], hist: &VecDeque<(Vec<T>, Vec<T>, T)>) -> Vec<T> {
    let mut q: Vec<T> = g.to_vec();
    let mut alphas = Vec::with_capacity(hist.len());
    for (s, y, rho) in hist.iter().rev() {
        let a = *rho * dot(s, &q);
        for (qi, &yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = hist.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in &mut q {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in hist.iter().zip(alphas.into_iter().rev()) {
        let b = *rho * dot(y, &q);
        for (qi, &si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.into_iter().map(|v| -v).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let r = minimize(vec![-1.2f64, 1.0], &LbfgsConfig::default(), |x| {
            let (a, b) = (x[0], x[1]);
            let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            Some((f, g))
        })
        .unwrap();
        assert!(r.converged());
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn respects_domain() {
        // −ln x + x on x > 0; minimum at 1.
        let r = minimize(vec![5.0f64], &LbfgsConfig::default(), |x| {
            (x[0] > 0.0).then(|| (-x[0].ln() + x[0], vec![-1.0 / x[0] + 1.0]))
        })
        .unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn monotone_values() {
        let mut seen = Vec::new();
        let _ = minimize(vec![3.0f64, -2.0], &LbfgsConfig::default(), |x| {
            let f = x[0].powi(4) + 3.0 * x[1] * x[1] + x[0] * x[1];
            seen.push(f);
            Some((f, vec![4.0 * x[0].powi(3) + x[1], 6.0 * x[1] + x[0]]))
        })
        .unwrap();
        assert!(seen[seen.len() - 1] <= seen[0]);
    }

    #[test]
    fn undefined_start_is_error() {
        let r = minimize(vec![0.0f64], &LbfgsConfig::default(), |_| None);
        assert!(r.is_err());
    }
}
