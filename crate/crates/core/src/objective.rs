//! The empirical KL objective of one map component and its coefficient gradient.
//!
//! For samples `x^1, …, x^n` and `s = R(f)`,
//!
//! ```text
//! L(c) = (1/n) Σ_i [ ½ s(x^i)² − log ∂_k s(x^i) ] + λ ‖c‖².
//! ```
//!
//! A conditional objective is the same expression on a batch whose columns
//! are `(y, x_1:k)`, so it needs no separate code path.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::basis::{fill_univariate, UnivariateFamily};
use crate::data::SampleBatch;
use crate::error::{Error, Result};
use crate::multiindex::MultiIndex;
use crate::quadrature::QuadSettings;
use crate::rectifier::{fill_panel_table, LineIntegrator, MapComponent, PanelTable, Rectifier};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    /// Weight `λ` of the `‖c‖²` penalty.
    pub l2_penalty: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig { l2_penalty: 0.0 }
    }
}

impl ObjectiveConfig {
    pub fn new(l2_penalty: f64) -> Result<Self> {
        let cfg = ObjectiveConfig { l2_penalty };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l2_penalty >= 0.0) || !self.l2_penalty.is_finite() {
            return Err(Error::Config(format!(
                "l2 penalty must be finite and non-negative, got {}",
                self.l2_penalty
            )));
        }
        Ok(())
    }
}

/// `(1/n) Σ [ ½ s_i² − log s'_i ]` for arbitrary values and positive partials.
pub fn raw_objective(values: &[f64], partials: &[f64]) -> Result<f64> {
    if values.len() != partials.len() {
        return Err(Error::Dimension {
            expected: values.len(),
            got: partials.len(),
        });
    }
    if values.is_empty() {
        return Err(Error::Precondition("objective needs at least one sample".into()));
    }
    let mut total = 0.0;
    for (s, p) in values.iter().zip(partials) {
        if !(*p > 0.0) {
            return Err(Error::Domain(format!("partial derivative must be positive, got {p}")));
        }
        total += 0.5 * s * s - p.ln();
    }
    Ok(total / values.len() as f64)
}

pub fn rectified_objective(c: &MapComponent, batch: &SampleBatch, cfg: &ObjectiveConfig) -> Result<f64> {
    let mut engine = ComponentObjective::new(batch, c)?;
    let features = engine.features(c.expansion().set().members())?;
    let (value, _) = engine.eval(&features, c.expansion().coeffs(), cfg.l2_penalty, false)?;
    Ok(value)
}

pub fn rectified_objective_grad(
    c: &MapComponent,
    batch: &SampleBatch,
    cfg: &ObjectiveConfig,
) -> Result<(f64, Vec<f64>)> {
    let mut engine = ComponentObjective::new(batch, c)?;
    let features = engine.features(c.expansion().set().members())?;
    engine.eval(&features, c.expansion().coeffs(), cfg.l2_penalty, true)
}

/// `|∂L/∂c_α|` for each candidate `α`, at the current coefficients with the
/// candidate coefficients set to zero.
pub fn reduced_margin_scores(
    c: &MapComponent,
    batch: &SampleBatch,
    candidates: &BTreeSet<MultiIndex>,
) -> Result<BTreeMap<MultiIndex, f64>> {
    let mut engine = ComponentObjective::new(batch, c)?;
    let active = c.expansion().set().members();
    engine.scores(active, c.expansion().coeffs(), candidates)
}

/// Per-sample prefix weights `Π_{j<k} ψ_{α_j}(x_j)` for a list of indices.
pub(crate) struct FeatureTable {
    last: Vec<usize>,
    /// `n × p`, row-major.
    weights: Vec<f64>,
    q_len: usize,
}

impl FeatureTable {
    pub fn len(&self) -> usize {
        self.last.len()
    }
}

/// Sample-dependent tables shared by every evaluation on one batch.
pub(crate) struct ComponentObjective<'a> {
    batch: &'a SampleBatch,
    family: UnivariateFamily,
    rectifier: Rectifier,
    quad: QuadSettings,
    cap: usize,
    /// `n × (k−1) × cap`
    prefix: Vec<f64>,
    at_zero: Vec<f64>,
    /// `n × cap`
    last_derivs: Vec<f64>,
    /// `n × 15 × cap`
    panels: Vec<f64>,
}

const BLOCK: usize = 64;

impl<'a> ComponentObjective<'a> {
    pub fn new(batch: &'a SampleBatch, template: &MapComponent) -> Result<Self> {
        ComponentObjective::with_parts(batch, template.expansion().family(), template.rectifier(), *template.quad())
            .and_then(|e| {
                if batch.dim() != template.dim() {
                    return Err(Error::Dimension {
                        expected: template.dim(),
                        got: batch.dim(),
                    });
                }
                Ok(e)
            })
    }

    pub fn with_parts(
        batch: &'a SampleBatch,
        family: UnivariateFamily,
        rectifier: Rectifier,
        quad: QuadSettings,
    ) -> Result<Self> {
        if batch.is_empty() {
            return Err(Error::Precondition("objective needs at least one sample".into()));
        }
        if batch.dim() == 0 {
            return Err(Error::Config("map components need at least one input".into()));
        }
        let mut engine = ComponentObjective {
            batch,
            family,
            rectifier,
            quad,
            cap: 0,
            prefix: Vec::new(),
            at_zero: Vec::new(),
            last_derivs: Vec::new(),
            panels: Vec::new(),
        };
        engine.reserve(2);
        Ok(engine)
    }

    fn k(&self) -> usize {
        self.batch.dim()
    }

    /// Makes degrees `0..len` available.
    pub fn reserve(&mut self, len: usize) {
        if len <= self.cap {
            return;
        }
        let cap = len.max(2 * self.cap);
        let family = self.family;
        let k = self.k();
        let n = self.batch.len();
        let batch = self.batch;
        let mut prefix = vec![0.0; n * (k - 1) * cap];
        let mut last_derivs = vec![0.0; n * cap];
        let mut panels = vec![0.0; n * 15 * cap];
        if k > 1 {
            prefix.par_chunks_mut((k - 1) * cap).enumerate().for_each(|(i, pre)| {
                let x = batch.row(i);
                for j in 0..k - 1 {
                    fill_univariate(family, x[j], &mut pre[j * cap..(j + 1) * cap], None);
                }
            });
        }
        last_derivs
            .par_chunks_mut(cap)
            .zip(panels.par_chunks_mut(15 * cap))
            .enumerate()
            .for_each(|(i, (ld, pan))| {
                let xk = batch.get(i, k - 1);
                let mut vals = vec![0.0; cap];
                fill_univariate(family, xk, &mut vals, Some(ld));
                fill_panel_table(family, xk, cap, pan);
            });
        let mut at_zero = vec![0.0; cap];
        fill_univariate(family, 0.0, &mut at_zero, None);
        self.cap = cap;
        self.prefix = prefix;
        self.at_zero = at_zero;
        self.last_derivs = last_derivs;
        self.panels = panels;
    }

    fn check_indices<'m>(&self, indices: impl IntoIterator<Item = &'m MultiIndex>) -> Result<usize> {
        let mut max = 0;
        for alpha in indices {
            if alpha.dim() != self.k() {
                return Err(Error::Dimension {
                    expected: self.k(),
                    got: alpha.dim(),
                });
            }
            if let Some(m) = self.family.max_degree() {
                if alpha.max_degree() > m {
                    return Err(Error::Domain(format!(
                        "degree {} is not available in the {} family",
                        alpha.max_degree(),
                        self.family
                    )));
                }
            }
            max = max.max(alpha.max_degree() as usize);
        }
        Ok(max + 1)
    }

    /// Tabulates prefix weights for `indices` (in the given order).
    pub fn features<'m, I>(&mut self, indices: I) -> Result<FeatureTable>
    where
        I: IntoIterator<Item = &'m MultiIndex>,
        I::IntoIter: Clone,
    {
        let iter = indices.into_iter();
        let q_len = self.check_indices(iter.clone())?;
        self.reserve(q_len);
        let alphas: Vec<&MultiIndex> = iter.collect();
        let p = alphas.len();
        let k = self.k();
        let cap = self.cap;
        let mut weights = vec![0.0; self.batch.len() * p];
        if p > 0 {
            weights.par_chunks_mut(p).enumerate().for_each(|(i, row)| {
                let pre = &self.prefix[i * (k - 1) * cap..(i + 1) * (k - 1) * cap];
                for (w, alpha) in row.iter_mut().zip(&alphas) {
                    let degs = alpha.degrees();
                    let mut v = 1.0;
                    for j in 0..k - 1 {
                        v *= pre[j * cap + degs[j] as usize];
                    }
                    *w = v;
                }
            });
        }
        Ok(FeatureTable {
            last: alphas.iter().map(|a| a.last() as usize).collect(),
            weights,
            q_len,
        })
    }

    /// Objective value and, if requested, its gradient over the table's features.
    pub fn eval(&self, table: &FeatureTable, coeffs: &[f64], l2: f64, want_grad: bool) -> Result<(f64, Vec<f64>)> {
        let p = table.len();
        if coeffs.len() != p {
            return Err(Error::Dimension {
                expected: p,
                got: coeffs.len(),
            });
        }
        let n = self.batch.len();
        let blocks: Vec<(f64, Vec<f64>)> = (0..n.div_ceil(BLOCK))
            .into_par_iter()
            .map(|b| self.eval_block(table, coeffs, b * BLOCK..((b + 1) * BLOCK).min(n), want_grad))
            .collect::<Result<_>>()?;
        let mut value = 0.0;
        let mut grad = vec![0.0; if want_grad { p } else { 0 }];
        for (v, g) in blocks {
            value += v;
            for (acc, x) in grad.iter_mut().zip(&g) {
                *acc += x;
            }
        }
        let nf = n as f64;
        value = value / nf + l2 * coeffs.iter().map(|c| c * c).sum::<f64>();
        for (g, c) in grad.iter_mut().zip(coeffs) {
            *g = *g / nf + 2.0 * l2 * c;
        }
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical("objective is not finite".into()));
        }
        Ok((value, grad))
    }

    fn eval_block(
        &self,
        table: &FeatureTable,
        coeffs: &[f64],
        rows: std::ops::Range<usize>,
        want_grad: bool,
    ) -> Result<(f64, Vec<f64>)> {
        let p = table.len();
        let q_len = table.q_len;
        let cap = self.cap;
        let k = self.k();
        let integrator = LineIntegrator {
            family: self.family,
            rectifier: self.rectifier,
            quad: &self.quad,
        };
        let mut value = 0.0;
        let mut grad = vec![0.0; if want_grad { p } else { 0 }];
        let mut a = vec![0.0; q_len];
        let mut j = vec![0.0; q_len];
        for i in rows {
            let w = &table.weights[i * p..(i + 1) * p];
            a.iter_mut().for_each(|v| *v = 0.0);
            for ((c, wi), &q) in coeffs.iter().zip(w).zip(&table.last) {
                a[q] += c * wi;
            }
            let xk = self.batch.get(i, k - 1);
            let panel = PanelTable {
                derivs: &self.panels[i * 15 * cap..(i + 1) * 15 * cap],
                stride: cap,
            };
            let ld = &self.last_derivs[i * cap..i * cap + q_len];
            let integral = integrator.integrate(&a, xk, want_grad.then_some(&mut j[..]), Some(panel))?;
            let s: f64 = a.iter().zip(&self.at_zero).map(|(x, y)| x * y).sum::<f64>() + integral;
            let xi: f64 = a.iter().zip(ld).map(|(x, y)| x * y).sum();
            value += 0.5 * s * s - self.rectifier.log_eval(xi);
            if want_grad {
                let r = self.rectifier.log_deriv(xi);
                for ((g, wi), &q) in grad.iter_mut().zip(w).zip(&table.last) {
                    *g += wi * (s * (self.at_zero[q] + j[q]) - r * ld[q]);
                }
            }
        }
        Ok((value, grad))
    }

    /// Gradient magnitudes of the enlarged objective at the candidates.
    pub fn scores(
        &mut self,
        active: &BTreeSet<MultiIndex>,
        coeffs: &[f64],
        candidates: &BTreeSet<MultiIndex>,
    ) -> Result<BTreeMap<MultiIndex, f64>> {
        if let Some(dup) = candidates.iter().find(|a| active.contains(*a)) {
            return Err(Error::Precondition(format!("candidate {dup} is already active")));
        }
        if candidates.is_empty() {
            return Ok(BTreeMap::new());
        }
        let table = self.features(active.iter().chain(candidates.iter()))?;
        let mut full = coeffs.to_vec();
        full.resize(table.len(), 0.0);
        let (_, grad) = self.eval(&table, &full, 0.0, true)?;
        Ok(candidates
            .iter()
            .cloned()
            .zip(grad[active.len()..].iter().map(|g| g.abs()))
            .collect())
    }
}
