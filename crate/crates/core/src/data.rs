//! Sample matrices, CSV ingestion, standardization, folds and synthetic targets.
//!
//! All randomness goes through ChaCha8 streams seeded with `seed_from_u64`,
//! so every generator is a pure function of its parameters and seed.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Row-major `n × k` matrix of finite samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl SampleBatch {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Dimension {
                expected: rows * cols,
                got: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input {
                row: Some(pos / cols.max(1)),
                column: Some(pos % cols.max(1)),
                message: "non-finite sample".into(),
            });
        }
        Ok(SampleBatch { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Input {
                    row: Some(i),
                    column: None,
                    message: format!("expected {cols} columns, found {}", r.len()),
                });
            }
            values.extend_from_slice(r);
        }
        SampleBatch::new(rows.len(), cols, values)
    }

    /// An `n × 0` batch.
    pub fn empty(cols: usize) -> Self {
        SampleBatch {
            rows: 0,
            cols,
            values: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn dim(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// The first `k` columns.
    pub fn leading_columns(&self, k: usize) -> Result<SampleBatch> {
        if k > self.cols {
            return Err(Error::Dimension {
                expected: self.cols,
                got: k,
            });
        }
        let mut values = Vec::with_capacity(self.rows * k);
        for r in self.rows() {
            values.extend_from_slice(&r[..k]);
        }
        Ok(SampleBatch {
            rows: self.rows,
            cols: k,
            values,
        })
    }

    pub fn select_rows(&self, idx: &[usize]) -> SampleBatch {
        let mut values = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        SampleBatch {
            rows: idx.len(),
            cols: self.cols,
            values,
        }
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hstack(&self, other: &SampleBatch) -> Result<SampleBatch> {
        if self.rows != other.rows {
            return Err(Error::Dimension {
                expected: self.rows,
                got: other.rows,
            });
        }
        let mut values = Vec::with_capacity(self.rows * (self.cols + other.cols));
        for i in 0..self.rows {
            values.extend_from_slice(self.row(i));
            values.extend_from_slice(other.row(i));
        }
        Ok(SampleBatch {
            rows: self.rows,
            cols: self.cols + other.cols,
            values,
        })
    }

    pub fn map_rows<F>(&self, out_cols: usize, f: F) -> Result<SampleBatch>
    where
        F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
    {
        let rows: Vec<Vec<f64>> = (0..self.rows)
            .into_par_iter()
            .map(|i| f(self.row(i)))
            .collect::<Result<_>>()?;
        let mut values = Vec::with_capacity(self.rows * out_cols);
        for r in rows {
            if r.len() != out_cols {
                return Err(Error::Dimension {
                    expected: out_cols,
                    got: r.len(),
                });
            }
            values.extend(r);
        }
        SampleBatch::new(self.rows, out_cols, values)
    }
}

/// A sample matrix with optional column names.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: SampleBatch,
    pub names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(samples: SampleBatch) -> Self {
        Dataset {
            samples,
            names: None,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.dim()
    }
}

/// Reads a numeric CSV file.
pub fn load_csv(path: impl AsRef<Path>, has_header: bool, log_transform: bool) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref()).map_err(|e| {
        Error::input(format!("cannot open {}: {e}", path.as_ref().display()))
    })?;
    read_csv(file, has_header, log_transform)
}

pub fn read_csv<R: Read>(reader: R, has_header: bool, log_transform: bool) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let names = if has_header {
        let h = rdr
            .headers()
            .map_err(|e| Error::input(format!("cannot read header: {e}")))?;
        Some(h.iter().map(str::to_string).collect::<Vec<_>>())
    } else {
        None
    };
    let mut cols: Option<usize> = names.as_ref().map(Vec::len);
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Input {
            row: Some(i),
            column: None,
            message: e.to_string(),
        })?;
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        match cols {
            None => cols = Some(rec.len()),
            Some(c) if c != rec.len() => {
                return Err(Error::Input {
                    row: Some(i),
                    column: None,
                    message: format!("expected {c} columns, found {}", rec.len()),
                })
            }
            _ => {}
        }
        for (j, cell) in rec.iter().enumerate() {
            let mut v: f64 = cell.parse().map_err(|_| Error::Input {
                row: Some(i),
                column: Some(j),
                message: format!("'{cell}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Input {
                    row: Some(i),
                    column: Some(j),
                    message: "non-finite value".into(),
                });
            }
            if log_transform {
                if v <= 0.0 {
                    return Err(Error::Input {
                        row: Some(i),
                        column: Some(j),
                        message: format!("cannot take the log of {v}"),
                    });
                }
                v = v.ln();
            }
            values.push(v);
        }
        rows += 1;
    }
    let cols = cols.unwrap_or(0);
    Ok(Dataset {
        samples: SampleBatch::new(rows, cols, values)?,
        names,
    })
}

/// Writes samples as CSV with a header line and 17 significant digits.
pub fn write_csv<W: Write>(writer: W, names: &[String], batch: &SampleBatch) -> Result<()> {
    let mut w = std::io::BufWriter::new(writer);
    let io = |e: std::io::Error| Error::input(format!("write failed: {e}"));
    writeln!(w, "{}", names.join(",")).map_err(io)?;
    for r in batch.rows() {
        let line: Vec<String> = r.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(w, "{}", line.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Default column names `x1, …, xd`.
pub fn default_names(d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("x{j}")).collect()
}

/// Per-column affine standardization `(x − mean) / std`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    pub fn identity(d: usize) -> Self {
        Standardization {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    /// Column means and standard deviations (`n − 1` denominator).
    pub fn fit(batch: &SampleBatch) -> Result<Self> {
        let n = batch.len();
        if n < 2 {
            return Err(Error::input("standardization needs at least two rows"));
        }
        let d = batch.dim();
        let mut mean = vec![0.0; d];
        for r in batch.rows() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for r in batch.rows() {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std: Vec<f64> = var.iter().map(|s| (s / (n - 1) as f64).sqrt()).collect();
        if let Some(j) = std.iter().position(|&s| !(s > 0.0)) {
            return Err(Error::Input {
                row: None,
                column: Some(j),
                message: "constant column cannot be standardized".into(),
            });
        }
        Ok(Standardization { mean, std })
    }

    pub fn from_parts(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::Dimension {
                expected: mean.len(),
                got: std.len(),
            });
        }
        if std.iter().any(|s| !(*s > 0.0) || !s.is_finite()) || mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::input("standardization needs finite means and positive deviations"));
        }
        Ok(Standardization { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_identity(&self) -> bool {
        self.mean.iter().all(|&m| m == 0.0) && self.std.iter().all(|&s| s == 1.0)
    }

    pub fn forward_point(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn inverse_point(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    pub fn apply(&self, batch: &SampleBatch) -> Result<SampleBatch> {
        self.check(batch.dim())?;
        let mut values = Vec::with_capacity(batch.values.len());
        for r in batch.rows() {
            values.extend(self.forward_point(r));
        }
        SampleBatch::new(batch.len(), batch.dim(), values)
    }

    pub fn invert(&self, batch: &SampleBatch) -> Result<SampleBatch> {
        self.check(batch.dim())?;
        let mut values = Vec::with_capacity(batch.values.len());
        for r in batch.rows() {
            values.extend(self.inverse_point(r));
        }
        SampleBatch::new(batch.len(), batch.dim(), values)
    }

    /// `Σ_{j ∈ cols} log std_j`.
    pub fn log_scale(&self, cols: std::ops::Range<usize>) -> f64 {
        self.std[cols].iter().map(|s| s.ln()).sum()
    }

    fn check(&self, d: usize) -> Result<()> {
        if d != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: d,
            });
        }
        Ok(())
    }
}

/// Fits statistics on `train` and returns the standardized copy.
pub fn standardize(train: &SampleBatch) -> Result<(SampleBatch, Standardization)> {
    let stats = Standardization::fit(train)?;
    Ok((stats.apply(train)?, stats))
}

/// Applies training statistics to another batch.
pub fn apply_statistics(stats: &Standardization, other: &SampleBatch) -> Result<SampleBatch> {
    stats.apply(other)
}

/// A shuffled partition of `0..n` into `K` folds whose sizes differ by at most one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub seed: u64,
    pub folds: Vec<Vec<usize>>,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    pub fn validation_rows(&self, fold: usize) -> &[usize] {
        &self.folds[fold]
    }

    /// All rows outside `fold`, in ascending order.
    pub fn training_rows(&self, fold: usize) -> Vec<usize> {
        let mut rows: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != fold)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        rows.sort_unstable();
        rows
    }
}

pub fn kfold(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 || k > n {
        return Err(Error::Config(format!(
            "fold count must satisfy 2 <= K <= n (K = {k}, n = {n})"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut fold = idx[start..start + size].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += size;
    }
    Ok(FoldPlan { seed, folds })
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Mixture of unit-covariance Gaussians at the 8 vertices of `[−4, 4]³`.
///
/// Vertex `v` has coordinate `j` equal to `+4` when bit `j` of `v` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct Mog3 {
    pub weights: [f64; 8],
}

impl Mog3 {
    /// Weights are uniform draws normalized to sum to one.
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = [0.0; 8];
        for w in weights.iter_mut() {
            *w = rng.random::<f64>();
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Mog3 { weights }
    }

    pub fn vertex(v: usize) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (j, o) in out.iter_mut().enumerate() {
            *o = if v >> j & 1 == 1 { 4.0 } else { -4.0 };
        }
        out
    }

    /// Samples and their component labels.
    pub fn sample_labeled(&self, n: usize, seed: u64) -> (SampleBatch, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let mut values = Vec::with_capacity(3 * n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut comp = 7;
            for (v, w) in self.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    comp = v;
                    break;
                }
            }
            let center = Mog3::vertex(comp);
            for c in center {
                values.push(c + normal(&mut rng));
            }
            labels.push(comp);
        }
        (SampleBatch { rows: n, cols: 3, values }, labels)
    }

    pub fn sample(&self, n: usize, seed: u64) -> SampleBatch {
        self.sample_labeled(n, seed).0
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let norm = -1.5 * (2.0 * std::f64::consts::PI).ln();
        let terms: Vec<f64> = (0..8)
            .map(|v| {
                let c = Mog3::vertex(v);
                let r2: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                self.weights[v].ln() + norm - 0.5 * r2
            })
            .collect();
        let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
    }
}

/// The 3-d Gaussian mixture with weights and samples both drawn from `seed`.
pub fn gen_mog3(n: usize, seed: u64) -> Dataset {
    Dataset::new(Mog3::from_seed(seed).sample(n, seed))
}

/// Equal-weight mixture of `N(−2, 0.5)` and `N(2, 2)` (variances).
pub fn gen_fig1_mixture(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..n)
        .map(|_| {
            let left = rng.random::<bool>();
            let z = normal(&mut rng);
            if left {
                -2.0 + 0.5f64.sqrt() * z
            } else {
                2.0 + 2f64.sqrt() * z
            }
        })
        .collect();
    Dataset::new(SampleBatch {
        rows: n,
        cols: 1,
        values,
    })
}

/// Gaussian samples with mean zero and covariance `cov` (must be positive definite).
pub fn gen_gaussian(n: usize, cov: &[Vec<f64>], seed: u64) -> Result<Dataset> {
    let d = cov.len();
    let chol = cholesky(cov)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n * d);
    let mut z = vec![0.0; d];
    for _ in 0..n {
        z.iter_mut().for_each(|v| *v = normal(&mut rng));
        for i in 0..d {
            values.push((0..=i).map(|j| chol[i][j] * z[j]).sum());
        }
    }
    Ok(Dataset::new(SampleBatch { rows: n, cols: d, values }))
}

/// Lower Cholesky factor.
pub fn cholesky(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let d = a.len();
    let mut l = vec![vec![0.0; d]; d];
    for i in 0..d {
        if a[i].len() != d {
            return Err(Error::Dimension {
                expected: d,
                got: a[i].len(),
            });
        }
        for j in 0..=i {
            let s: f64 = a[i][j] - (0..j).map(|p| l[i][p] * l[j][p]).sum::<f64>();
            if i == j {
                if !(s > 0.0) {
                    return Err(Error::input("covariance is not positive definite"));
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Ok(l)
}

/// Lorenz-96 on a periodic lattice of `d ≥ 4` sites.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lorenz96 {
    pub forcing: f64,
    pub dt: f64,
}

impl Lorenz96 {
    /// `dX_j/dt = (X_{j+1} − X_{j−2}) X_{j−1} − X_j + F` with periodic indices.
    pub fn rhs(&self, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        for j in 0..d {
            let xp1 = x[(j + 1) % d];
            let xm1 = x[(j + d - 1) % d];
            let xm2 = x[(j + d - 2) % d];
            out[j] = (xp1 - xm2) * xm1 - x[j] + self.forcing;
        }
    }

    /// One classical fourth-order Runge–Kutta step.
    pub fn step(&self, x: &mut [f64]) {
        let d = x.len();
        let h = self.dt;
        let mut k1 = vec![0.0; d];
        let mut k2 = vec![0.0; d];
        let mut k3 = vec![0.0; d];
        let mut k4 = vec![0.0; d];
        let mut tmp = vec![0.0; d];
        self.rhs(x, &mut k1);
        for j in 0..d {
            tmp[j] = x[j] + 0.5 * h * k1[j];
        }
        self.rhs(&tmp, &mut k2);
        for j in 0..d {
            tmp[j] = x[j] + 0.5 * h * k2[j];
        }
        self.rhs(&tmp, &mut k3);
        for j in 0..d {
            tmp[j] = x[j] + h * k3[j];
        }
        self.rhs(&tmp, &mut k4);
        for j in 0..d {
            x[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }

    pub fn integrate(&self, x: &mut [f64], steps: usize) {
        for _ in 0..steps {
            self.step(x);
        }
    }
}

/// Final states of `n` trajectories started from independent standard normal
/// initial conditions. Trajectory `i` draws from ChaCha8 stream `i` of `seed`.
pub fn gen_lorenz96(n: usize, d: usize, forcing: f64, dt: f64, steps: usize, seed: u64) -> Result<Dataset> {
    if d < 4 {
        return Err(Error::Config(format!("Lorenz-96 needs at least 4 sites, got {d}")));
    }
    if steps < 1 {
        return Err(Error::Config("Lorenz-96 needs at least one step".into()));
    }
    let model = Lorenz96 { forcing, dt };
    let states: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut x: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
            model.integrate(&mut x, steps);
            if x.iter().all(|v| v.is_finite()) {
                Ok(x)
            } else {
                Err(Error::Numerical(format!("Lorenz-96 trajectory {i} blew up")))
            }
        })
        .collect::<Result<_>>()?;
    Ok(Dataset::new(SampleBatch::from_rows(&states)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn csv_parsing() {
        let d = read_csv("1,2\n3,4\n".as_bytes(), false, false).unwrap();
        assert_eq!(d.samples, SampleBatch::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let e = std::f64::consts::E;
        let d = read_csv(format!("1\n{e}\n").as_bytes(), false, true).unwrap();
        assert!(d.samples.get(0, 0).abs() < 1e-9);
        assert!((d.samples.get(1, 0) - 1.0).abs() < 1e-9);
        let h = read_csv("a,b\n1,2\n".as_bytes(), true, false).unwrap();
        assert_eq!(h.names, Some(vec!["a".to_string(), "b".to_string()]));
    }

    #[test]
    fn csv_errors_carry_location() {
        match read_csv("1\n0\n".as_bytes(), false, true) {
            Err(Error::Input { row: Some(1), column: Some(0), .. }) => {}
            other => panic!("{other:?}"),
        }
        match read_csv("1,2\n3,x\n".as_bytes(), false, false) {
            Err(Error::Input { row: Some(1), column: Some(1), .. }) => {}
            other => panic!("{other:?}"),
        }
        match read_csv("1,2\n3\n".as_bytes(), false, false) {
            Err(Error::Input { row: Some(1), .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(read_csv("nan\n".as_bytes(), false, false).is_err());
    }

    #[test]
    fn standardization_examples() {
        let b = SampleBatch::from_rows(&[vec![0.0], vec![2.0]]).unwrap();
        let (s, stats) = standardize(&b).unwrap();
        assert_eq!(stats.mean, vec![1.0]);
        assert_relative_eq!(stats.std[0], 2f64.sqrt());
        assert_relative_eq!(s.get(0, 0), -1.0 / 2f64.sqrt());
        assert_eq!(apply_statistics(&stats, &b).unwrap(), s);
        assert!(standardize(&SampleBatch::from_rows(&[vec![1.0]]).unwrap()).is_err());
        assert!(standardize(&SampleBatch::from_rows(&[vec![1.0, 2.0], vec![1.0, 3.0]]).unwrap()).is_err());
    }

    #[test]
    fn standardized_moments_and_roundtrip() {
        let raw = gen_gaussian(500, &[vec![4.0, 1.0], vec![1.0, 2.0]], 3).unwrap().samples;
        let shifted = raw.map_rows(2, |r| Ok(vec![r[0] * 3.0 + 10.0, r[1] - 7.0])).unwrap();
        let (s, stats) = standardize(&shifted).unwrap();
        let again = Standardization::fit(&s).unwrap();
        for j in 0..2 {
            assert!(again.mean[j].abs() < 1e-10);
            assert!((again.std[j] - 1.0).abs() < 1e-10);
        }
        let back = stats.invert(&s).unwrap();
        for (a, b) in back.values().iter().zip(shifted.values()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn fold_plans() {
        let p = kfold(10, 5, 1).unwrap();
        assert!(p.folds.iter().all(|f| f.len() == 2));
        let mut all: Vec<usize> = p.folds.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(p, kfold(10, 5, 1).unwrap());
        assert_ne!(p, kfold(10, 5, 2).unwrap());
        let q = kfold(11, 3, 0).unwrap();
        let sizes: Vec<usize> = q.folds.iter().map(Vec::len).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert_eq!(q.training_rows(0).len() + q.validation_rows(0).len(), 11);
        assert!(kfold(10, 1, 0).is_err());
        assert!(kfold(3, 4, 0).is_err());
        assert!(kfold(4, 4, 0).is_ok());
    }

    #[test]
    fn mog3_properties() {
        let n = 100_000;
        let mix = Mog3::from_seed(4);
        let (b, labels) = mix.sample_labeled(n, 4);
        assert!(b.values().iter().all(|v| v.abs() < 12.0));
        let mut counts = [0usize; 8];
        for l in labels {
            counts[l] += 1;
        }
        for v in 0..8 {
            let freq = counts[v] as f64 / n as f64;
            assert!((freq - mix.weights[v]).abs() < 3.0 / (n as f64).sqrt(), "vertex {v}");
        }
        assert_eq!(gen_mog3(50, 9), gen_mog3(50, 9));
        assert_ne!(gen_mog3(50, 9), gen_mog3(50, 10));
    }

    #[test]
    fn fig1_mixture_properties() {
        let n = 20_000;
        let d = gen_fig1_mixture(n, 2);
        let x = d.samples.column(0);
        let mean = x.iter().sum::<f64>() / n as f64;
        let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!(mean.abs() < 3.0 * sd / (n as f64).sqrt());
        assert_eq!(gen_fig1_mixture(50, 1).len(), 50);
        assert_eq!(gen_fig1_mixture(50, 1), gen_fig1_mixture(50, 1));
    }

    #[test]
    fn lorenz_fixed_points() {
        let zero = Lorenz96 { forcing: 0.0, dt: 0.01 };
        let mut x = vec![0.0; 8];
        zero.integrate(&mut x, 100);
        assert!(x.iter().all(|&v| v == 0.0));
        let f = 8.0;
        let model = Lorenz96 { forcing: f, dt: 0.01 };
        let mut x = vec![f; 8];
        model.integrate(&mut x, 100);
        assert!(x.iter().all(|&v| v == f));
    }

    #[test]
    fn lorenz_bounded_and_deterministic() {
        let d = gen_lorenz96(20, 20, 8.0, 0.01, 2000, 5).unwrap();
        assert!(d.samples.values().iter().all(|v| v.abs() < 25.0));
        assert_eq!(d, gen_lorenz96(20, 20, 8.0, 0.01, 2000, 5).unwrap());
        assert!(matches!(gen_lorenz96(5, 3, 8.0, 0.01, 10, 0), Err(Error::Config(_))));
    }

    #[test]
    fn lorenz_halved_step_agrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x0: Vec<f64> = (0..20).map(|_| normal(&mut rng)).collect();
        let coarse = Lorenz96 { forcing: 8.0, dt: 0.01 };
        let fine = Lorenz96 { forcing: 8.0, dt: 0.005 };
        let mut a = x0.clone();
        let mut b = x0;
        coarse.integrate(&mut a, 100);
        fine.integrate(&mut b, 200);
        let diff = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-3, "diff={diff}");
    }

    #[test]
    fn lorenz_rk4_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..5 {
            let x0: Vec<f64> = (0..10).map(|_| 8.0 + normal(&mut rng)).collect();
            let run = |dt: f64| {
                let mut x = x0.clone();
                Lorenz96 { forcing: 8.0, dt }.integrate(&mut x, (1.0 / dt).round() as usize);
                x
            };
            let reference = run(0.0025 / 4.0);
            let err = |x: Vec<f64>| x.iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let ratio = err(run(0.02)) / err(run(0.01));
            assert!((12.0..=20.0).contains(&ratio), "ratio={ratio}");
        }
    }

    #[test]
    fn lorenz_rotation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x0: Vec<f64> = (0..12).map(|_| normal(&mut rng)).collect();
        let model = Lorenz96 { forcing: 8.0, dt: 0.01 };
        let mut a = x0.clone();
        model.integrate(&mut a, 100);
        let mut b: Vec<f64> = (0..12).map(|j| x0[(j + 11) % 12]).collect();
        model.integrate(&mut b, 100);
        for j in 0..12 {
            assert!((b[j] - a[(j + 11) % 12]).abs() < 1e-10);
        }
    }

    #[test]
    fn csv_writer_uses_full_precision() {
        let b = SampleBatch::from_rows(&[vec![0.1, -2.0 / 3.0]]).unwrap();
        let mut out = Vec::new();
        write_csv(&mut out, &default_names(2), &b).unwrap();
        let text = String::from_utf8(out).unwrap();
        let back = read_csv(text.as_bytes(), true, false).unwrap();
        assert_eq!(back.samples, b);
        let mut out = Vec::new();
        write_csv(&mut out, &default_names(2), &SampleBatch::empty(2)).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "x1,x2\n");
    }
}
