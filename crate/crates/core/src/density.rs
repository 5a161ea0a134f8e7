//! Pullback densities, likelihood scoring, inversion and sampling.
//!
//! For a map `S` pushing the data onto the standard normal `η`,
//!
//! ```text
//! log π(x) = log η(S(x)) + Σ_k log ∂_k S^k(x_1:k).
//! ```
//!
//! Maps standardize their inputs internally, so reported densities refer to
//! the original variables and carry the `−Σ log std` Jacobian term.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::atm::TransportModel;
use crate::data::SampleBatch;
use crate::error::{Error, Result};
use crate::rectifier::LineRestriction;

const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

/// `log η(z)` for the standard normal in `z.len()` dimensions.
pub fn log_standard_normal(z: &[f64]) -> f64 {
    -0.5 * z.iter().map(|v| v * v).sum::<f64>() - HALF_LOG_2PI * z.len() as f64
}

fn require_joint<M: TransportModel + ?Sized>(map: &M) -> Result<()> {
    if map.conditional_split() != 0 {
        return Err(Error::Precondition(
            "this operation needs a joint map; use the conditional form".into(),
        ));
    }
    Ok(())
}

/// `log π(x)` for a joint map.
pub fn pullback_log_density<M: TransportModel + ?Sized>(map: &M, x: &[f64]) -> Result<f64> {
    require_joint(map)?;
    let (z, log_det) = map.push_forward(x)?;
    Ok(log_standard_normal(&z) + log_det)
}

/// `log π(x | y)`; only the `x` block contributes Jacobian terms.
pub fn conditional_log_density<M: TransportModel + ?Sized>(map: &M, y: &[f64], x: &[f64]) -> Result<f64> {
    if y.len() != map.conditional_split() {
        return Err(Error::Dimension {
            expected: map.conditional_split(),
            got: y.len(),
        });
    }
    let mut input = y.to_vec();
    input.extend_from_slice(x);
    let (z, log_det) = map.push_forward(&input)?;
    Ok(log_standard_normal(&z) + log_det)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogDensityReport {
    /// Per-sample log densities in standardized coordinates.
    pub values: Vec<f64>,
    pub mean_nll: f64,
    /// Whether `Σ log std` was added to refer the score to the original variables.
    pub std_adjusted: bool,
    /// `Σ log std` over the modelled columns.
    pub log_scale: f64,
}

/// Mean negative log-likelihood of the rows of `batch` (conditioning columns first).
pub fn negative_log_likelihood<M: TransportModel + ?Sized>(
    map: &M,
    batch: &SampleBatch,
    std_adjust: bool,
) -> Result<LogDensityReport> {
    if batch.dim() != map.dim() {
        return Err(Error::Dimension {
            expected: map.dim(),
            got: batch.dim(),
        });
    }
    if batch.is_empty() {
        return Err(Error::input("cannot score an empty batch"));
    }
    let log_scale = map.log_scale();
    let values: Vec<f64> = (0..batch.len())
        .into_par_iter()
        .map(|i| {
            let (z, log_det) = map.push_forward(batch.row(i))?;
            Ok(log_standard_normal(&z) + log_det + log_scale)
        })
        .collect::<Result<_>>()?;
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let mean_nll = -mean + if std_adjust { log_scale } else { 0.0 };
    Ok(LogDensityReport {
        values,
        mean_nll,
        std_adjusted: std_adjust,
        log_scale,
    })
}

/// `S⁻¹(z)` for a joint map.
pub fn invert<M: TransportModel + ?Sized>(map: &M, z: &[f64]) -> Result<Vec<f64>> {
    require_joint(map)?;
    map.invert_given(&[], z)
}

/// `count` draws `S⁻¹(z)` with `z ~ η`, from a ChaCha8 stream seeded by `seed`.
pub fn sample<M: TransportModel + ?Sized>(map: &M, count: usize, seed: u64) -> Result<SampleBatch> {
    require_joint(map)?;
    sample_conditional(map, &[], count, seed)
}

/// Draws from `π(x | y)`.
pub fn sample_conditional<M: TransportModel + ?Sized>(
    map: &M,
    y: &[f64],
    count: usize,
    seed: u64,
) -> Result<SampleBatch> {
    let d = map.dim() - map.conditional_split();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zs: Vec<f64> = (0..count * d).map(|_| StandardNormal.sample(&mut rng)).collect();
    if count == 0 {
        return Ok(SampleBatch::empty(d));
    }
    let z = SampleBatch::new(count, d, zs)?;
    z.map_rows(d, |row| map.invert_given(y, row))
}

const VALUE_TOL: f64 = 1e-10;
const BRACKET_LIMIT: f64 = 1e6;

/// Solves `line(t) = target` for the increasing function `line`.
///
/// The bracket starts at `[−1, 1]` and doubles outward until it straddles
/// the target; Newton steps are used when they stay inside the bracket and
/// bisection otherwise.
pub(crate) fn solve_monotone(line: &LineRestriction<'_>, target: f64) -> Result<f64> {
    let f = |t: f64| line.eval(t).map(|v| v - target);
    let (mut lo, mut hi) = (-1.0, 1.0);
    let mut f_lo = f(lo)?;
    while f_lo > 0.0 {
        hi = lo;
        lo *= 2.0;
        if lo < -BRACKET_LIMIT {
            return Err(Error::Inversion(format!("no bracket for target {target} below -1e6")));
        }
        f_lo = f(lo)?;
    }
    let mut f_hi = f(hi)?;
    while f_hi < 0.0 {
        lo = hi;
        f_lo = f_hi;
        hi *= 2.0;
        if hi > BRACKET_LIMIT {
            return Err(Error::Inversion(format!("no bracket for target {target} above 1e6")));
        }
        f_hi = f(hi)?;
    }
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    let (mut t, mut ft) = if -f_lo < f_hi { (lo, f_lo) } else { (hi, f_hi) };
    let mut last_width = hi - lo;
    for _ in 0..400 {
        if ft.abs() <= VALUE_TOL {
            return Ok(t);
        }
        let newton = t - ft / line.partial(t);
        // Bisect when Newton leaves the bracket or the bracket stops shrinking.
        let width = hi - lo;
        let next = if newton > lo && newton < hi && width <= 0.5 * last_width + f64::EPSILON * hi.abs().max(1.0) {
            newton
        } else {
            0.5 * (lo + hi)
        };
        last_width = width.max(f64::MIN_POSITIVE);
        if next <= lo || next >= hi {
            break;
        }
        ft = f(next)?;
        t = next;
        if ft < 0.0 {
            lo = t;
            f_lo = ft;
        } else {
            hi = t;
            f_hi = ft;
        }
    }
    // The bracket has collapsed to adjacent floats; return the closer end.
    let best = if -f_lo <= f_hi { lo } else { hi };
    let residual = f_lo.abs().min(f_hi.abs());
    if residual <= 1e3 * VALUE_TOL {
        Ok(best)
    } else {
        Err(Error::Inversion(format!(
            "map value jumps across target {target} (residual {residual:e})"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atm::{fit_map, AtmConfig, TriangularMap};
    use crate::basis::{FeatureExpansion, UnivariateFamily};
    use crate::data::{gen_fig1_mixture, Standardization};
    use crate::multiindex::DownwardClosedSet;
    use crate::quadrature::{integrate, QuadSettings};
    use crate::rectifier::{g_inv, MapComponent, Rectifier};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn doubling_map() -> TriangularMap {
        // S(x) = 2x through a linear feature with g(a) = 2.
        let a = g_inv(Rectifier::Softplus, 2.0).unwrap();
        let f = FeatureExpansion::new(DownwardClosedSet::total_degree(1, 1), vec![0.0, a], UnivariateFamily::Linear).unwrap();
        let c = MapComponent::new(f, Rectifier::Softplus, QuadSettings::default()).unwrap();
        TriangularMap::new(1, 0, vec![c], Standardization::identity(1)).unwrap()
    }

    #[test]
    fn pullback_examples() {
        let id1 = TriangularMap::identity(1).unwrap();
        assert_relative_eq!(pullback_log_density(&id1, &[0.0]).unwrap(), -0.918939, epsilon = 1e-6);
        assert_relative_eq!(pullback_log_density(&doubling_map(), &[0.0]).unwrap(), -0.225791, epsilon = 1e-6);
        let id2 = TriangularMap::identity(2).unwrap();
        assert_relative_eq!(pullback_log_density(&id2, &[0.0, 0.0]).unwrap(), -1.837877, epsilon = 1e-6);
        assert!(pullback_log_density(&id1, &[f64::NAN]).is_err());
        assert!(matches!(pullback_log_density(&id1, &[0.0, 1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn nll_examples() {
        let id = TriangularMap::identity(1).unwrap();
        let r = negative_log_likelihood(&id, &SampleBatch::from_rows(&[vec![0.0]]).unwrap(), true).unwrap();
        assert_relative_eq!(r.mean_nll, 0.918939, epsilon = 1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let v = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let big = SampleBatch::new(n, 1, v).unwrap();
        let r = negative_log_likelihood(&id, &big, true).unwrap();
        assert!((r.mean_nll - 1.418939).abs() < 0.02);
        assert!(negative_log_likelihood(&id, &SampleBatch::empty(1), true).is_err());
    }

    #[test]
    fn adjustment_differs_by_log_scale() {
        let data = gen_fig1_mixture(200, 3).samples;
        let cfg = AtmConfig {
            max_features: Some(4),
            ..Default::default()
        };
        let (map, _) = fit_map(&data, &cfg).unwrap();
        let on = negative_log_likelihood(&map, &data, true).unwrap();
        let off = negative_log_likelihood(&map, &data, false).unwrap();
        let log_std = map.standardization().std[0].ln();
        assert_relative_eq!(on.mean_nll - off.mean_nll, log_std, max_relative = 1e-12);
        assert_relative_eq!(on.mean_nll, -on.values.iter().sum::<f64>() / 200.0 + log_std, max_relative = 1e-12);
        let direct = -data.rows().map(|r| pullback_log_density(&map, r).unwrap()).sum::<f64>() / 200.0;
        assert_relative_eq!(on.mean_nll, direct, max_relative = 1e-12);
    }

    #[test]
    fn inversion_examples() {
        let id = TriangularMap::identity(2).unwrap();
        assert_eq!(invert(&id, &[0.3, -1.7]).unwrap(), vec![0.3, -1.7]);
        let x = invert(&doubling_map(), &[1.0]).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn fitted_density_normalizes_and_inverts() {
        let data = gen_fig1_mixture(300, 4).samples;
        let (map, _) = fit_map(&data, &AtmConfig::default()).unwrap();
        let total = integrate(
            |x| pullback_log_density(&map, &[x]).unwrap().exp(),
            -12.0,
            12.0,
            &QuadSettings::with_rel_tol(1e-8),
        )
        .unwrap();
        assert!((total.value - 1.0).abs() < 2e-3, "mass {}", total.value);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let z = [rng.random_range(-3.0..3.0)];
            let x = invert(&map, &z).unwrap();
            let (back, _) = map.push_forward(&x).unwrap();
            assert!((back[0] - z[0]).abs() < 1e-8);
            let x0 = [rng.random_range(-5.0..5.0)];
            let (s, _) = map.push_forward(&x0).unwrap();
            assert!((invert(&map, &s).unwrap()[0] - x0[0]).abs() < 1e-6);
        }
    }

    #[test]
    fn sampling() {
        let id = TriangularMap::identity(2).unwrap();
        let s = sample(&id, 4000, 9).unwrap();
        for j in 0..2 {
            let mean = s.column(j).iter().sum::<f64>() / 4000.0;
            assert!(mean.abs() < 4.0 / 4000f64.sqrt());
        }
        assert_eq!(s, sample(&id, 4000, 9).unwrap());
        assert_eq!(sample(&id, 0, 9).unwrap().len(), 0);
    }

    #[test]
    fn conditional_density_ignores_unused_y() {
        // S^X(y, x) = x: identity component over (y, x).
        let c = MapComponent::identity(2, UnivariateFamily::HermiteFunction);
        let map = TriangularMap::new(2, 1, vec![c], Standardization::identity(2)).unwrap();
        let a = conditional_log_density(&map, &[-3.0], &[0.4]).unwrap();
        let b = conditional_log_density(&map, &[2.5], &[0.4]).unwrap();
        assert_eq!(a, b);
        assert_relative_eq!(a, log_standard_normal(&[0.4]), max_relative = 1e-15);
        assert!(matches!(pullback_log_density(&map, &[0.0, 0.4]), Err(Error::Precondition(_))));
        let s = sample_conditional(&map, &[1.0], 10, 1).unwrap();
        assert_eq!(s.dim(), 1);
    }
}
