//! Greedy adaptive feature selection, cross-validation of the feature count,
//! and assembly of triangular maps.
//!
//! Each component `S^k` is fitted independently on the first `k` standardized
//! columns. Starting from the empty set, every iteration scores the reduced
//! margin by the magnitude of the objective gradient, inserts the best index,
//! and re-optimizes all coefficients from a warm start. The number of
//! features is chosen by K-fold cross-validation over one greedy path per fold.

use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::basis::{FeatureExpansion, UnivariateFamily};
use crate::data::{kfold, SampleBatch, Standardization};
use crate::density::solve_monotone;
use crate::error::{Error, Result};
use crate::multiindex::{DownwardClosedSet, MultiIndex};
use crate::objective::{ComponentObjective, ObjectiveConfig};
use crate::optimizer::{minimize, OptimOptions};
use crate::quadrature::QuadSettings;
use crate::rectifier::{MapComponent, Rectifier};

/// Scores below this are treated as zero.
const FLAT_SCORE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct AtmConfig {
    /// Largest feature count considered; `⌈√n⌉` when unset.
    pub max_features: Option<usize>,
    pub folds: usize,
    pub family: UnivariateFamily,
    pub rectifier: Rectifier,
    pub objective: ObjectiveConfig,
    pub optim: OptimOptions,
    pub quad: QuadSettings,
    /// Seed of the fold shuffle.
    pub seed: u64,
    /// Stop the cross-validation sweep once the mean validation objective
    /// has not improved for this many iterations. `None` runs to the cap.
    pub patience: Option<usize>,
}

impl Default for AtmConfig {
    fn default() -> Self {
        AtmConfig {
            max_features: None,
            folds: 5,
            family: UnivariateFamily::HermiteFunction,
            rectifier: Rectifier::Softplus,
            objective: ObjectiveConfig::default(),
            optim: OptimOptions::default(),
            quad: QuadSettings::default(),
            seed: 0,
            patience: None,
        }
    }
}

impl AtmConfig {
    /// `⌈√n⌉` unless overridden.
    pub fn max_features_for(&self, n: usize) -> usize {
        self.max_features
            .unwrap_or_else(|| ((n as f64).sqrt().ceil() as usize).max(1))
    }

    fn check_common(&self) -> Result<()> {
        self.objective.validate()?;
        self.optim.validate()?;
        if !(self.quad.rel_tol > 0.0) || !self.quad.rel_tol.is_finite() {
            return Err(Error::Config(format!(
                "quadrature tolerance must be positive, got {}",
                self.quad.rel_tol
            )));
        }
        Ok(())
    }

    /// Checks settings for adaptive fitting on `n` samples.
    pub fn validate(&self, n: usize) -> Result<()> {
        self.check_common()?;
        if self.max_features == Some(0) {
            return Err(Error::Config("the feature budget must be at least 1".into()));
        }
        if self.folds < 2 || self.folds > n {
            return Err(Error::Config(format!(
                "fold count must satisfy 2 <= K <= n (K = {}, n = {n})",
                self.folds
            )));
        }
        if self.patience == Some(0) {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.rectifier == Rectifier::Square {
            return Err(Error::Config(
                "adaptive fitting needs the soft-plus rectifier; the square rectifier vanishes at f = 0".into(),
            ));
        }
        Ok(())
    }
}

/// One greedy insertion.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub index: MultiIndex,
    /// Gradient magnitude that selected the index.
    pub score: f64,
    /// Objective after re-optimization.
    pub train_objective: f64,
    pub optimizer_converged: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitTrace {
    /// Component index `k` (1-based, counting conditioning columns).
    pub component: usize,
    /// Insertions of the final fit on all training data.
    pub iterations: Vec<IterationRecord>,
    /// `validation[fold][m − 1]`: held-out objective after `m` insertions.
    pub validation: Vec<Vec<f64>>,
    /// Fold mean of `validation` for each `m`.
    pub mean_validation: Vec<f64>,
    pub chosen_m: usize,
    /// True when a greedy path ran out of useful candidates before its budget.
    pub stopped_early: bool,
}

/// Incremental state of one greedy path.
struct GreedyPath<'a> {
    train: ComponentObjective<'a>,
    valid: Option<ComponentObjective<'a>>,
    family: UnivariateFamily,
    rectifier: Rectifier,
    quad: QuadSettings,
    l2: f64,
    optim: OptimOptions,
    set: DownwardClosedSet,
    coeffs: Vec<f64>,
    records: Vec<IterationRecord>,
    stopped: bool,
    validation: Vec<f64>,
}

impl<'a> GreedyPath<'a> {
    fn new(train: &'a SampleBatch, valid: Option<&'a SampleBatch>, cfg: &AtmConfig) -> Result<Self> {
        let engine = |b| ComponentObjective::with_parts(b, cfg.family, cfg.rectifier, cfg.quad);
        Ok(GreedyPath {
            train: engine(train)?,
            valid: valid.map(engine).transpose()?,
            family: cfg.family,
            rectifier: cfg.rectifier,
            quad: cfg.quad,
            l2: cfg.objective.l2_penalty,
            optim: cfg.optim,
            set: DownwardClosedSet::empty(train.dim()),
            coeffs: Vec::new(),
            records: Vec::new(),
            stopped: false,
            validation: Vec::new(),
        })
    }

    fn candidates(&self) -> BTreeSet<MultiIndex> {
        self.set
            .reduced_margin()
            .iter()
            .filter(|a| self.family.admits(a))
            .cloned()
            .collect()
    }

    /// Performs one insertion and re-optimization; a no-op once stopped.
    fn step(&mut self) -> Result<()> {
        if self.stopped {
            return Ok(());
        }
        let candidates = self.candidates();
        let scores = self.train.scores(self.set.members(), &self.coeffs, &candidates)?;
        let mut best: Option<(&MultiIndex, f64)> = None;
        for (alpha, &s) in &scores {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((alpha, s));
            }
        }
        let (alpha, score) = match best {
            // Start-up: the zero index is the only candidate and is always taken.
            Some((a, s)) if self.set.is_empty() || s >= FLAT_SCORE => (a.clone(), s),
            _ => {
                self.stopped = true;
                return Ok(());
            }
        };
        self.set = self.set.insert(&alpha)?;
        let pos = self.set.position(&alpha).expect("inserted index is a member");
        self.coeffs.insert(pos, 0.0);
        let table = self.train.features(self.set.members())?;
        let train = &self.train;
        let l2 = self.l2;
        let result = minimize(|c| train.eval(&table, c, l2, true), &self.coeffs, &self.optim)?;
        self.coeffs = result.x;
        self.records.push(IterationRecord {
            index: alpha,
            score,
            train_objective: result.value,
            optimizer_converged: result.converged,
        });
        if let Some(valid) = self.valid.as_mut() {
            let table = valid.features(self.set.members())?;
            let (v, _) = valid.eval(&table, &self.coeffs, 0.0, false)?;
            self.validation.push(v);
        }
        Ok(())
    }

    fn last_validation(&self) -> f64 {
        *self.validation.last().unwrap_or(&f64::INFINITY)
    }

    fn component(&self) -> Result<MapComponent> {
        let f = FeatureExpansion::new(self.set.clone(), self.coeffs.clone(), self.family)?;
        MapComponent::new(f, self.rectifier, self.quad)
    }
}

/// Runs `m` greedy insertions on `batch` (columns `x_1..x_k`).
pub fn fit_component(batch: &SampleBatch, m: usize, cfg: &AtmConfig) -> Result<(MapComponent, FitTrace)> {
    if m == 0 {
        return Err(Error::Config("the feature count must be at least 1".into()));
    }
    if batch.len() < 2 {
        return Err(Error::Precondition("fitting needs at least two samples".into()));
    }
    cfg.check_common()?;
    if cfg.rectifier == Rectifier::Square {
        return Err(Error::Config(
            "adaptive fitting needs the soft-plus rectifier; the square rectifier vanishes at f = 0".into(),
        ));
    }
    let mut path = GreedyPath::new(batch, None, cfg)?;
    for _ in 0..m {
        path.step()?;
        if path.stopped {
            break;
        }
    }
    let trace = FitTrace {
        component: batch.dim(),
        iterations: path.records.clone(),
        chosen_m: path.records.len(),
        stopped_early: path.stopped,
        ..Default::default()
    };
    Ok((path.component()?, trace))
}

/// Result of the cross-validation sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub chosen_m: usize,
    pub mean_validation: Vec<f64>,
    pub validation: Vec<Vec<f64>>,
    pub stopped_early: bool,
}

/// Picks the feature count minimizing the mean held-out objective over K folds.
pub fn cross_validate_m(batch: &SampleBatch, cfg: &AtmConfig) -> Result<CvOutcome> {
    let n = batch.len();
    cfg.validate(n)?;
    let m_max = cfg.max_features_for(n);
    let plan = kfold(n, cfg.folds, cfg.seed)?;
    let splits: Vec<(SampleBatch, SampleBatch)> = (0..plan.k())
        .map(|f| {
            (
                batch.select_rows(&plan.training_rows(f)),
                batch.select_rows(plan.validation_rows(f)),
            )
        })
        .collect();
    if splits.iter().any(|(t, _)| t.len() < 2) {
        return Err(Error::Config("a training fold has fewer than two samples".into()));
    }
    let mut paths: Vec<GreedyPath<'_>> = splits
        .iter()
        .map(|(t, v)| GreedyPath::new(t, Some(v), cfg))
        .collect::<Result<_>>()?;
    let mut means = Vec::new();
    let mut best = (f64::INFINITY, 0usize);
    for m in 1..=m_max {
        paths.par_iter_mut().map(GreedyPath::step).collect::<Result<Vec<()>>>()?;
        let mean = paths.iter().map(GreedyPath::last_validation).sum::<f64>() / paths.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Numerical("validation objective is not finite".into()));
        }
        means.push(mean);
        if mean < best.0 {
            best = (mean, m);
        }
        if paths.iter().all(|p| p.stopped) {
            break;
        }
        if cfg.patience.is_some_and(|p| m - best.1 >= p) {
            break;
        }
    }
    let validation = paths
        .iter()
        .map(|p| {
            let mut v = p.validation.clone();
            // A stopped path keeps its last model.
            v.resize(means.len(), p.last_validation());
            v
        })
        .collect();
    Ok(CvOutcome {
        chosen_m: best.1,
        mean_validation: means,
        validation,
        stopped_early: paths.iter().any(|p| p.stopped),
    })
}

/// Cross-validates the feature count and refits on the whole batch.
pub fn fit_component_cv(batch: &SampleBatch, cfg: &AtmConfig) -> Result<(MapComponent, FitTrace)> {
    let cv = cross_validate_m(batch, cfg)?;
    let (component, mut trace) = fit_component(batch, cv.chosen_m, cfg)?;
    trace.validation = cv.validation;
    trace.mean_validation = cv.mean_validation;
    trace.stopped_early |= cv.stopped_early;
    Ok((component, trace))
}

/// A map whose density can be evaluated and inverted.
pub trait TransportModel: Send + Sync {
    /// Number of input columns, conditioning columns included.
    fn dim(&self) -> usize;
    /// Number of leading conditioning columns `m_y` (0 for joint maps).
    fn conditional_split(&self) -> usize;
    /// `S(x)` for the non-conditioning block and `log det ∇_x S` with respect
    /// to the original (unstandardized) variables.
    fn push_forward(&self, input: &[f64]) -> Result<(Vec<f64>, f64)>;
    /// Solves `S(y, x) = z` for `x`.
    fn invert_given(&self, y: &[f64], z: &[f64]) -> Result<Vec<f64>>;
    /// `Σ log std` over the non-conditioning columns (zero when unstandardized).
    fn log_scale(&self) -> f64;
}

/// A lower-triangular map on standardized variables.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangularMap {
    dim: usize,
    split: usize,
    components: Vec<MapComponent>,
    standardization: Standardization,
}

impl TriangularMap {
    /// Component `i` must read the first `split + i + 1` variables.
    pub fn new(
        dim: usize,
        split: usize,
        components: Vec<MapComponent>,
        standardization: Standardization,
    ) -> Result<Self> {
        if split >= dim {
            return Err(Error::Config(format!(
                "conditional split {split} leaves no variables out of {dim}"
            )));
        }
        if components.len() != dim - split {
            return Err(Error::Dimension {
                expected: dim - split,
                got: components.len(),
            });
        }
        for (i, c) in components.iter().enumerate() {
            if c.dim() != split + i + 1 {
                return Err(Error::Dimension {
                    expected: split + i + 1,
                    got: c.dim(),
                });
            }
        }
        if standardization.dim() != dim {
            return Err(Error::Dimension {
                expected: dim,
                got: standardization.dim(),
            });
        }
        Ok(TriangularMap {
            dim,
            split,
            components,
            standardization,
        })
    }

    /// `S(x) = x` without standardization.
    pub fn identity(dim: usize) -> Result<Self> {
        let components = (1..=dim)
            .map(|k| MapComponent::identity(k, UnivariateFamily::HermiteFunction))
            .collect();
        TriangularMap::new(dim, 0, components, Standardization::identity(dim))
    }

    pub fn components(&self) -> &[MapComponent] {
        &self.components
    }

    pub fn standardization(&self) -> &Standardization {
        &self.standardization
    }

    /// Components over standardized inputs: values and `Σ log ∂_k S^k`.
    pub fn eval_standardized(&self, z: &[f64]) -> Result<(Vec<f64>, f64)> {
        let mut out = Vec::with_capacity(self.components.len());
        let mut log_det = 0.0;
        for c in &self.components {
            let k = c.dim();
            let line = c.restrict(&z[..k - 1])?;
            out.push(line.eval(z[k - 1])?);
            log_det += line.log_partial(z[k - 1]);
        }
        Ok((out, log_det))
    }

    /// Largest degree of each variable among the selected features, one row per component.
    pub fn degree_table(&self) -> Vec<Vec<u32>> {
        self.components
            .iter()
            .map(|c| {
                let mut row = vec![0; self.dim];
                for alpha in c.expansion().set().iter() {
                    for (r, &a) in row.iter_mut().zip(alpha.degrees()) {
                        *r = (*r).max(a);
                    }
                }
                row
            })
            .collect()
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: input.len(),
            });
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("non-finite input"));
        }
        Ok(())
    }
}

impl TransportModel for TriangularMap {
    fn dim(&self) -> usize {
        self.dim
    }

    fn conditional_split(&self) -> usize {
        self.split
    }

    fn push_forward(&self, input: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_input(input)?;
        let z = self.standardization.forward_point(input);
        let (out, log_det) = self.eval_standardized(&z)?;
        Ok((out, log_det - self.log_scale()))
    }

    fn invert_given(&self, y: &[f64], target: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.split {
            return Err(Error::Dimension {
                expected: self.split,
                got: y.len(),
            });
        }
        if target.len() != self.dim - self.split {
            return Err(Error::Dimension {
                expected: self.dim - self.split,
                got: target.len(),
            });
        }
        if y.iter().chain(target).any(|v| !v.is_finite()) {
            return Err(Error::input("non-finite input"));
        }
        let stats = &self.standardization;
        let mut z: Vec<f64> = y
            .iter()
            .enumerate()
            .map(|(j, v)| (v - stats.mean[j]) / stats.std[j])
            .collect();
        for (c, &t) in self.components.iter().zip(target) {
            let line = c.restrict(&z)?;
            z.push(solve_monotone(&line, t)?);
        }
        Ok((self.split..self.dim)
            .map(|j| z[j] * stats.std[j] + stats.mean[j])
            .collect())
    }

    fn log_scale(&self) -> f64 {
        self.standardization.log_scale(self.split..self.dim)
    }
}

/// Maps applied in sequence; each stage sees the conditioning columns and the
/// previous stage's output.
#[derive(Debug, Clone, PartialEq)]
pub struct ComposedMap {
    pub stages: Vec<TriangularMap>,
}

impl ComposedMap {
    pub fn new(stages: Vec<TriangularMap>) -> Result<Self> {
        let first = stages
            .first()
            .ok_or_else(|| Error::Config("a composed map needs at least one stage".into()))?;
        for s in &stages[1..] {
            if s.dim != first.dim || s.split != first.split {
                return Err(Error::Dimension {
                    expected: first.dim,
                    got: s.dim,
                });
            }
        }
        Ok(ComposedMap { stages })
    }
}

impl TransportModel for ComposedMap {
    fn dim(&self) -> usize {
        self.stages[0].dim
    }

    fn conditional_split(&self) -> usize {
        self.stages[0].split
    }

    fn push_forward(&self, input: &[f64]) -> Result<(Vec<f64>, f64)> {
        let split = self.conditional_split();
        let mut current = input.to_vec();
        let mut log_det = 0.0;
        for stage in &self.stages {
            let (out, ld) = stage.push_forward(&current)?;
            log_det += ld;
            current.truncate(split);
            current.extend(out);
        }
        Ok((current[split..].to_vec(), log_det))
    }

    fn invert_given(&self, y: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        let mut current = z.to_vec();
        for stage in self.stages.iter().rev() {
            current = stage.invert_given(y, &current)?;
        }
        Ok(current)
    }

    fn log_scale(&self) -> f64 {
        self.stages.iter().map(TriangularMap::log_scale).sum()
    }
}

fn check_batch(batch: &SampleBatch, split: usize) -> Result<()> {
    if batch.dim() == 0 || split >= batch.dim() {
        return Err(Error::Config(format!(
            "conditional split {split} leaves no variables out of {}",
            batch.dim()
        )));
    }
    Ok(())
}

fn fit_blocks<F>(z: &SampleBatch, split: usize, fit: F) -> Result<(Vec<MapComponent>, Vec<FitTrace>)>
where
    F: Fn(&SampleBatch) -> Result<(MapComponent, FitTrace)> + Sync,
{
    let fitted: Vec<(MapComponent, FitTrace)> = (split + 1..=z.dim())
        .into_par_iter()
        .map(|k| fit(&z.leading_columns(k)?))
        .collect::<Result<_>>()?;
    Ok(fitted.into_iter().unzip())
}

/// Fits `S^k` for `k > split` on standardized data; the leading `split`
/// columns are conditioning variables.
pub fn fit_conditional(batch: &SampleBatch, split: usize, cfg: &AtmConfig) -> Result<(TriangularMap, Vec<FitTrace>)> {
    check_batch(batch, split)?;
    cfg.validate(batch.len())?;
    let stats = Standardization::fit(batch)?;
    let z = stats.apply(batch)?;
    let (components, traces) = fit_blocks(&z, split, |b| fit_component_cv(b, cfg))?;
    Ok((TriangularMap::new(batch.dim(), split, components, stats)?, traces))
}

/// Fits a joint map.
pub fn fit_map(batch: &SampleBatch, cfg: &AtmConfig) -> Result<(TriangularMap, Vec<FitTrace>)> {
    fit_conditional(batch, 0, cfg)
}

/// One optimization per component over all indices of total degree at most `p`.
pub fn fit_fixed_total_degree(
    batch: &SampleBatch,
    p: u32,
    split: usize,
    cfg: &AtmConfig,
) -> Result<(TriangularMap, Vec<FitTrace>)> {
    check_batch(batch, split)?;
    cfg.check_common()?;
    if cfg.rectifier == Rectifier::Square && p == 0 {
        return Err(Error::Config("the square rectifier needs degree at least 1".into()));
    }
    let stats = Standardization::fit(batch)?;
    let z = stats.apply(batch)?;
    let (components, traces) = fit_blocks(&z, split, |b| {
        let set = DownwardClosedSet::total_degree(b.dim(), p);
        let set = match cfg.family.max_degree() {
            Some(max) => DownwardClosedSet::from_members(
                b.dim(),
                set.iter().filter(|a| a.max_degree() <= max && cfg.family.admits(a)).cloned(),
            )?,
            None => set,
        };
        let mut init = vec![0.0; set.len()];
        if cfg.rectifier == Rectifier::Square {
            // f = x_k-direction degree one so that ∂_k f is not identically zero.
            let e = MultiIndex::unit(b.dim(), b.dim() - 1);
            if let Some(pos) = set.position(&e) {
                init[pos] = 1.0;
            }
        }
        let (component, result) = fit_fixed_set(b, &set, &init, cfg)?;
        let trace = FitTrace {
            component: b.dim(),
            iterations: vec![IterationRecord {
                index: set.iter().last().cloned().unwrap_or_else(|| MultiIndex::zero(b.dim())),
                score: 0.0,
                train_objective: result.value,
                optimizer_converged: result.converged,
            }],
            chosen_m: set.len(),
            ..Default::default()
        };
        Ok((component, trace))
    })?;
    Ok((TriangularMap::new(batch.dim(), split, components, stats)?, traces))
}

/// Minimizes the objective over a fixed index set from `init` (data used as given).
pub fn fit_fixed_set(
    batch: &SampleBatch,
    set: &DownwardClosedSet,
    init: &[f64],
    cfg: &AtmConfig,
) -> Result<(MapComponent, crate::optimizer::OptimResult)> {
    if set.dim() != batch.dim() {
        return Err(Error::Dimension {
            expected: batch.dim(),
            got: set.dim(),
        });
    }
    if init.len() != set.len() {
        return Err(Error::Dimension {
            expected: set.len(),
            got: init.len(),
        });
    }
    let mut engine = ComponentObjective::with_parts(batch, cfg.family, cfg.rectifier, cfg.quad)?;
    let table = engine.features(set.members())?;
    let l2 = cfg.objective.l2_penalty;
    let result = minimize(|c| engine.eval(&table, c, l2, true), init, &cfg.optim)?;
    let f = FeatureExpansion::new(set.clone(), result.x.clone(), cfg.family)?;
    Ok((MapComponent::new(f, cfg.rectifier, cfg.quad)?, result))
}

/// Traces of both stages of [`fit_linear_then_atm`].
#[derive(Debug, Clone, PartialEq)]
pub struct StagedTraces {
    pub linear: Vec<FitTrace>,
    pub adaptive: Vec<FitTrace>,
}

/// Fits an adaptive map with the linear family, then an adaptive Hermite map
/// on the pushforward of the training samples.
pub fn fit_linear_then_atm(
    batch: &SampleBatch,
    split: usize,
    cfg: &AtmConfig,
) -> Result<(ComposedMap, StagedTraces)> {
    let linear_cfg = AtmConfig {
        family: UnivariateFamily::Linear,
        ..cfg.clone()
    };
    let (first, linear) = fit_conditional(batch, split, &linear_cfg)?;
    let pushed = batch.map_rows(batch.dim(), |row| {
        let (out, _) = first.push_forward(row)?;
        let mut r = row[..split].to_vec();
        r.extend(out);
        Ok(r)
    })?;
    // The conditioning columns keep their original scale; the pushed block is
    // used as is.
    let y_stats = Standardization::fit(&pushed)?;
    let mut mean = y_stats.mean.clone();
    let mut std = y_stats.std.clone();
    for j in split..batch.dim() {
        mean[j] = 0.0;
        std[j] = 1.0;
    }
    let stats = Standardization::from_parts(mean, std)?;
    let hermite_cfg = AtmConfig {
        family: UnivariateFamily::HermiteFunction,
        ..cfg.clone()
    };
    hermite_cfg.validate(batch.len())?;
    let z = stats.apply(&pushed)?;
    let (components, adaptive) = fit_blocks(&z, split, |b| fit_component_cv(b, &hermite_cfg))?;
    let second = TriangularMap::new(batch.dim(), split, components, stats)?;
    Ok((ComposedMap::new(vec![first, second])?, StagedTraces { linear, adaptive }))
}
