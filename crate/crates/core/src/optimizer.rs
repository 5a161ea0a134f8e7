//! BFGS with a strong-Wolfe line search.
//!
//! The inverse Hessian starts at the identity and is rescaled by `sᵀy / yᵀy`
//! before the first update. Updates are skipped when `sᵀy ≤ 1e−10 ‖s‖‖y‖`.
//! Once a step satisfying the Wolfe conditions is found, a secant step on the
//! directional derivative is tried; it is exact on quadratics, which gives
//! finite termination there, and is kept only if it is lower and also
//! satisfies the Wolfe conditions.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimOptions {
    /// Stop when `‖∇f‖₂` falls to this value.
    pub grad_tol: f64,
    pub max_iters: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        OptimOptions {
            grad_tol: 1e-6,
            max_iters: 500,
            c1: 1e-4,
            c2: 0.9,
        }
    }
}

impl OptimOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_tol > 0.0) || !self.grad_tol.is_finite() {
            return Err(Error::Config(format!("gradient tolerance must be positive, got {}", self.grad_tol)));
        }
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(Error::Config(format!(
                "line-search constants must satisfy 0 < c1 < c2 < 1, got c1 = {}, c2 = {}",
                self.c1, self.c2
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective at the initial point and after every accepted step.
    pub history: Vec<f64>,
}

const MAX_TRIALS: usize = 40;
const MAX_STEP: f64 = 1e10;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct Trial {
    alpha: f64,
    value: f64,
    grad: Vec<f64>,
    slope: f64,
}

struct LineSearch<'a, F> {
    f: &'a mut F,
    x: &'a [f64],
    d: &'a [f64],
    f0: f64,
    slope0: f64,
    opts: &'a OptimOptions,
    trials: usize,
}

impl<F> LineSearch<'_, F>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    /// `None` for points where the objective fails or is not finite.
    fn eval(&mut self, alpha: f64) -> Option<Trial> {
        self.trials += 1;
        let point: Vec<f64> = self.x.iter().zip(self.d).map(|(x, d)| x + alpha * d).collect();
        match (self.f)(&point) {
            Ok((value, grad)) if value.is_finite() && grad.iter().all(|g| g.is_finite()) => {
                let slope = dot(&grad, self.d);
                Some(Trial {
                    alpha,
                    value,
                    grad,
                    slope,
                })
            }
            _ => None,
        }
    }

    fn armijo(&self, t: &Trial) -> bool {
        t.value <= self.f0 + self.opts.c1 * t.alpha * self.slope0
    }

    fn curvature(&self, t: &Trial) -> bool {
        t.slope.abs() <= -self.opts.c2 * self.slope0
    }

    fn run(&mut self, alpha0: f64) -> Option<Trial> {
        let mut prev = Trial {
            alpha: 0.0,
            value: self.f0,
            grad: Vec::new(),
            slope: self.slope0,
        };
        let mut alpha = alpha0;
        let mut first = true;
        while self.trials < MAX_TRIALS {
            let Some(t) = self.eval(alpha) else {
                alpha = prev.alpha + 0.5 * (alpha - prev.alpha);
                continue;
            };
            if !self.armijo(&t) || (!first && t.value >= prev.value) {
                return self.zoom(prev, t);
            }
            if self.curvature(&t) {
                return Some(self.refine(t));
            }
            if t.slope >= 0.0 {
                return self.zoom(t, prev);
            }
            first = false;
            alpha = (2.0 * t.alpha).min(MAX_STEP);
            prev = t;
        }
        None
    }

    fn zoom(&mut self, mut lo: Trial, mut hi: Trial) -> Option<Trial> {
        while self.trials < MAX_TRIALS {
            let alpha = interpolate(&lo, &hi);
            let Some(t) = self.eval(alpha) else {
                hi = Trial {
                    alpha,
                    value: f64::INFINITY,
                    grad: Vec::new(),
                    slope: f64::NAN,
                };
                continue;
            };
            if !self.armijo(&t) || t.value >= lo.value {
                hi = t;
            } else {
                if self.curvature(&t) {
                    return Some(self.refine(t));
                }
                if t.slope * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = t;
            }
            if (hi.alpha - lo.alpha).abs() <= 1e-16 * lo.alpha.abs().max(1.0) {
                break;
            }
        }
        None
    }

    /// Secant step on the directional derivative through `0` and `t`.
    fn refine(&mut self, t: Trial) -> Trial {
        let denom = self.slope0 - t.slope;
        if denom == 0.0 || self.trials >= MAX_TRIALS {
            return t;
        }
        let alpha = t.alpha * self.slope0 / denom;
        if !(alpha > 0.0) || !alpha.is_finite() || (alpha - t.alpha).abs() <= 1e-2 * t.alpha {
            return t;
        }
        match self.eval(alpha) {
            Some(s) if s.value < t.value && self.armijo(&s) && self.curvature(&s) => s,
            _ => t,
        }
    }
}

/// Cubic interpolation of the minimizer between two trials, kept at least a
/// tenth of the bracket away from either end. Falls back to bisection when
/// `hi` carries no usable slope.
fn interpolate(lo: &Trial, hi: &Trial) -> f64 {
    let (a, b) = (lo.alpha, hi.alpha);
    let mid = 0.5 * (a + b);
    let lo_bound = a.min(b) + 0.1 * (b - a).abs();
    let hi_bound = a.max(b) - 0.1 * (b - a).abs();
    if !hi.value.is_finite() || !hi.slope.is_finite() {
        return mid;
    }
    let d1 = lo.slope + hi.slope - 3.0 * (lo.value - hi.value) / (a - b);
    let disc = d1 * d1 - lo.slope * hi.slope;
    if disc < 0.0 {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let alpha = b - (b - a) * (hi.slope + d2 - d1) / (hi.slope - lo.slope + 2.0 * d2);
    if alpha.is_finite() {
        alpha.clamp(lo_bound, hi_bound)
    } else {
        mid
    }
}

/// Minimizes `f`, which returns the value and gradient at a point.
pub fn minimize<F>(mut f: F, init: &[f64], opts: &OptimOptions) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    opts.validate()?;
    let n = init.len();
    let mut x = init.to_vec();
    let (mut value, mut grad) = f(&x)?;
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numerical("objective is not finite at the initial point".into()));
    }
    if grad.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: grad.len(),
        });
    }
    let mut history = vec![value];
    let mut h = identity(n);
    let mut scaled = false;
    let mut iterations = 0;
    let mut gnorm = norm(&grad);
    while gnorm > opts.grad_tol && iterations < opts.max_iters {
        let mut step = None;
        for attempt in 0..2 {
            if attempt == 1 {
                if !scaled && is_identity(&h) {
                    break;
                }
                h = identity(n);
                scaled = false;
            }
            let mut d: Vec<f64> = mat_vec(&h, &grad).iter().map(|v| -v).collect();
            let mut slope = dot(&d, &grad);
            if !(slope < 0.0) {
                h = identity(n);
                scaled = false;
                d = grad.iter().map(|g| -g).collect();
                slope = -gnorm * gnorm;
            }
            let alpha0 = if scaled { 1.0 } else { (1.0 / gnorm).min(1.0) };
            let mut ls = LineSearch {
                f: &mut f,
                x: &x,
                d: &d,
                f0: value,
                slope0: slope,
                opts,
                trials: 0,
            };
            if let Some(t) = ls.run(alpha0) {
                step = Some((t, d));
                break;
            }
        }
        let Some((t, d)) = step else {
            break;
        };
        let s: Vec<f64> = d.iter().map(|v| t.alpha * v).collect();
        let y: Vec<f64> = t.grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * norm(&s) * norm(&y) {
            if !scaled {
                let gamma = sy / dot(&y, &y);
                h.iter_mut().for_each(|v| *v *= gamma);
                scaled = true;
            }
            bfgs_update(&mut h, &s, &y, sy);
        }
        for (xi, si) in x.iter_mut().zip(&s) {
            *xi += si;
        }
        value = t.value;
        grad = t.grad;
        gnorm = norm(&grad);
        history.push(value);
        iterations += 1;
    }
    Ok(OptimResult {
        x,
        value,
        grad_norm: gnorm,
        iterations,
        converged: gnorm <= opts.grad_tol,
        history,
    })
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

fn is_identity(h: &[f64]) -> bool {
    let n = (h.len() as f64).sqrt() as usize;
    (0..n).all(|i| (0..n).all(|j| h[i * n + j] == if i == j { 1.0 } else { 0.0 }))
}

fn mat_vec(h: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n).map(|i| dot(&h[i * n..(i + 1) * n], v)).collect()
}

/// `H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ` with `ρ = 1 / sᵀy`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy = mat_vec(h, y);
    let yhy = dot(y, &hy);
    let factor = (1.0 + rho * yhy) * rho;
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += factor * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}
