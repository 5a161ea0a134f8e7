//! Univariate feature families and tensorized expansions.
//!
//! Hermite features are `ψ_0 = 1` and `ψ_n(x) = P_n(x) exp(−x²/4)` for
//! `n ≥ 1`, where `P_n = He_n / √(n!)` are the probabilists' Hermite
//! polynomials normalized under the standard normal density. Degree 0 is the
//! appended constant rather than the Gaussian-weighted `P_0`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::multiindex::{DownwardClosedSet, MultiIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnivariateFamily {
    /// Constant plus Hermite functions.
    HermiteFunction,
    /// `1` and `x`.
    Linear,
    /// Only the constant `1`.
    ConstantOnly,
}

impl UnivariateFamily {
    /// Largest admissible univariate degree, if bounded.
    pub fn max_degree(self) -> Option<u32> {
        match self {
            UnivariateFamily::HermiteFunction => None,
            UnivariateFamily::Linear => Some(1),
            UnivariateFamily::ConstantOnly => Some(0),
        }
    }

    /// Whether `alpha` is a candidate for greedy selection. The linear family
    /// is restricted to total degree one so that fitted maps stay affine.
    pub fn admits(self, alpha: &MultiIndex) -> bool {
        match self {
            UnivariateFamily::HermiteFunction => true,
            UnivariateFamily::Linear => alpha.total_degree() <= 1,
            UnivariateFamily::ConstantOnly => alpha.is_zero(),
        }
    }

    fn check_degree(self, degree: u32) -> Result<()> {
        match self.max_degree() {
            Some(max) if degree > max => Err(Error::Domain(format!(
                "degree {degree} is not available in the {self} family"
            ))),
            _ => Ok(()),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            UnivariateFamily::HermiteFunction => "hermite",
            UnivariateFamily::Linear => "linear",
            UnivariateFamily::ConstantOnly => "constant",
        }
    }
}

impl fmt::Display for UnivariateFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for UnivariateFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hermite" | "hermite_function" => Ok(UnivariateFamily::HermiteFunction),
            "linear" => Ok(UnivariateFamily::Linear),
            "constant" | "constant_only" => Ok(UnivariateFamily::ConstantOnly),
            other => Err(Error::Config(format!("unknown feature family '{other}'"))),
        }
    }
}

/// Evaluates `ψ_0(x), …, ψ_max(x)` into `values` (length `max + 1`) and, if
/// given, their derivatives into `derivs`. Degrees beyond the family's range
/// are not checked here.
pub fn fill_univariate(
    family: UnivariateFamily,
    x: f64,
    values: &mut [f64],
    derivs: Option<&mut [f64]>,
) {
    let len = values.len();
    match family {
        UnivariateFamily::HermiteFunction => {
            let weight = (-0.25 * x * x).exp();
            // Normalized recurrence: P_{n+1} = (x P_n − √n P_{n−1}) / √(n+1).
            let mut p_prev = 0.0;
            let mut p_cur = 1.0;
            let mut derivs = derivs;
            if len > 0 {
                values[0] = 1.0;
                if let Some(d) = derivs.as_deref_mut() {
                    d[0] = 0.0;
                }
            }
            for n in 1..len {
                let nf = n as f64;
                let p_next = (x * p_cur - (nf - 1.0).sqrt() * p_prev) / nf.sqrt();
                p_prev = p_cur;
                p_cur = p_next;
                values[n] = p_cur * weight;
                if let Some(d) = derivs.as_deref_mut() {
                    // P_n' = √n P_{n−1}
                    d[n] = (nf.sqrt() * p_prev - 0.5 * x * p_cur) * weight;
                }
            }
        }
        UnivariateFamily::Linear | UnivariateFamily::ConstantOnly => {
            for (n, v) in values.iter_mut().enumerate() {
                *v = match n {
                    0 => 1.0,
                    1 => x,
                    _ => 0.0,
                };
            }
            if let Some(d) = derivs {
                for (n, v) in d.iter_mut().enumerate() {
                    *v = if n == 1 { 1.0 } else { 0.0 };
                }
            }
        }
    }
}

pub fn eval_univariate(family: UnivariateFamily, degree: u32, x: f64) -> Result<f64> {
    family.check_degree(degree)?;
    let mut values = vec![0.0; degree as usize + 1];
    fill_univariate(family, x, &mut values, None);
    Ok(values[degree as usize])
}

pub fn eval_univariate_deriv(family: UnivariateFamily, degree: u32, x: f64) -> Result<f64> {
    family.check_degree(degree)?;
    let mut values = vec![0.0; degree as usize + 1];
    let mut derivs = vec![0.0; degree as usize + 1];
    fill_univariate(family, x, &mut values, Some(&mut derivs));
    Ok(derivs[degree as usize])
}

/// `f(x) = Σ_α c_α ψ_α(x)` over a downward-closed index set.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExpansion {
    set: DownwardClosedSet,
    coeffs: Vec<f64>,
    family: UnivariateFamily,
}

impl FeatureExpansion {
    /// Coefficients are matched to the set's members in lexicographic order.
    pub fn new(set: DownwardClosedSet, coeffs: Vec<f64>, family: UnivariateFamily) -> Result<Self> {
        if coeffs.len() != set.len() {
            return Err(Error::Dimension {
                expected: set.len(),
                got: coeffs.len(),
            });
        }
        for alpha in set.iter() {
            for &a in alpha.degrees() {
                family.check_degree(a)?;
            }
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::input("non-finite expansion coefficient"));
        }
        Ok(FeatureExpansion { set, coeffs, family })
    }

    /// The zero function with no features.
    pub fn zero(dim: usize, family: UnivariateFamily) -> Self {
        FeatureExpansion {
            set: DownwardClosedSet::empty(dim),
            coeffs: Vec::new(),
            family,
        }
    }

    pub fn dim(&self) -> usize {
        self.set.dim()
    }

    pub fn set(&self) -> &DownwardClosedSet {
        &self.set
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn family(&self) -> UnivariateFamily {
        self.family
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Members paired with their coefficients, in lexicographic order.
    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, f64)> {
        self.set.iter().zip(self.coeffs.iter().copied())
    }

    /// Same features, new coefficients.
    pub fn with_coeffs(&self, coeffs: Vec<f64>) -> Result<Self> {
        FeatureExpansion::new(self.set.clone(), coeffs, self.family)
    }

    /// Largest univariate degree used by any feature.
    pub fn max_degree(&self) -> u32 {
        self.set.iter().map(MultiIndex::max_degree).max().unwrap_or(0)
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let (rows, _) = feature_rows(&self.set, self.family, x)?;
        Ok(dot(&rows, &self.coeffs))
    }

    pub fn eval_partial_k(&self, x: &[f64]) -> Result<f64> {
        let (_, partials) = feature_rows(&self.set, self.family, x)?;
        Ok(dot(&partials, &self.coeffs))
    }

    /// Collapses the expansion at fixed `x_<k` into weights over the last
    /// degree: `f(x_<k, t) = Σ_q a_q ψ_q(t)`. Entry `q` of the result is `a_q`.
    pub fn last_degree_weights(&self, prefix: &[f64]) -> Result<Vec<f64>> {
        if prefix.len() + 1 != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: prefix.len() + 1,
            });
        }
        let tables = univariate_tables(self.family, prefix, self.max_degree() as usize);
        let mut weights = vec![0.0; self.max_degree() as usize + 1];
        for (alpha, c) in self.terms() {
            weights[alpha.last() as usize] += c * prefix_weight(alpha, &tables);
        }
        Ok(weights)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-coordinate value tables `ψ_0..=max` for each entry of `xs`.
pub(crate) fn univariate_tables(family: UnivariateFamily, xs: &[f64], max: usize) -> Vec<Vec<f64>> {
    xs.iter()
        .map(|&x| {
            let mut v = vec![0.0; max + 1];
            fill_univariate(family, x, &mut v, None);
            v
        })
        .collect()
}

/// `Π_{j<k} ψ_{α_j}(x_j)` from precomputed tables of the leading coordinates.
pub(crate) fn prefix_weight(alpha: &MultiIndex, tables: &[Vec<f64>]) -> f64 {
    let degs = alpha.degrees();
    let mut w = 1.0;
    for (j, table) in tables.iter().enumerate() {
        w *= table[degs[j] as usize];
    }
    w
}

/// Feature values `ψ_α(x)` and last-variable partials `∂_k ψ_α(x)`, one
/// entry per member of `set` in lexicographic order.
pub fn feature_rows(
    set: &DownwardClosedSet,
    family: UnivariateFamily,
    x: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = set.dim();
    if x.len() != k {
        return Err(Error::Dimension {
            expected: k,
            got: x.len(),
        });
    }
    let max = set.iter().map(MultiIndex::max_degree).max().unwrap_or(0) as usize;
    for alpha in set.iter() {
        for &a in alpha.degrees() {
            family.check_degree(a)?;
        }
    }
    if k == 0 {
        return Ok((vec![1.0; set.len()], vec![0.0; set.len()]));
    }
    let tables = univariate_tables(family, &x[..k - 1], max);
    let mut last_vals = vec![0.0; max + 1];
    let mut last_derivs = vec![0.0; max + 1];
    fill_univariate(family, x[k - 1], &mut last_vals, Some(&mut last_derivs));
    let mut rows = Vec::with_capacity(set.len());
    let mut partials = Vec::with_capacity(set.len());
    for alpha in set.iter() {
        let w = prefix_weight(alpha, &tables);
        rows.push(w * last_vals[alpha.last() as usize]);
        partials.push(w * last_derivs[alpha.last() as usize]);
    }
    Ok((rows, partials))
}

impl FeatureExpansion {
    pub(crate) fn check(&self, x: &[f64]) -> Result<()> {
        self.check_point(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const H: UnivariateFamily = UnivariateFamily::HermiteFunction;

    fn mi(v: &[u32]) -> MultiIndex {
        MultiIndex::new(v.to_vec())
    }

    /// Golub–Welsch-free Gauss–Hermite rule for weight exp(−x²/2): nodes are
    /// roots of He_n found by Newton from the asymptotic guesses, refined by
    /// bisection on sign changes of He_n over a fine grid.
    fn gauss_hermite_prob(n: usize) -> (Vec<f64>, Vec<f64>) {
        // Unnormalized He_n and He_{n-1} by recurrence.
        let he = |x: f64| {
            let (mut a, mut b) = (1.0, x);
            if n == 0 {
                return (1.0, 0.0);
            }
            for j in 1..n {
                let c = x * b - j as f64 * a;
                a = b;
                b = c;
            }
            (b, a)
        };
        let mut nodes = Vec::new();
        let lim = 2.0 * (n as f64).sqrt() + 2.0;
        let steps = 200_000;
        let mut prev_x = -lim;
        let mut prev = he(prev_x).0;
        for i in 1..=steps {
            let x = -lim + 2.0 * lim * i as f64 / steps as f64;
            let v = he(x).0;
            if prev == 0.0 || prev.signum() != v.signum() {
                let (mut lo, mut hi) = (prev_x, x);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if he(lo).0.signum() == he(mid).0.signum() {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                nodes.push(0.5 * (lo + hi));
            }
            prev_x = x;
            prev = v;
        }
        assert_eq!(nodes.len(), n);
        // w_i = n! / (n He_{n-1}(x_i))² for the probability measure.
        let mut log_fact = 0.0;
        for j in 1..=n {
            log_fact += (j as f64).ln();
        }
        let weights = nodes
            .iter()
            .map(|&x| {
                let hm1 = he(x).1;
                (log_fact - 2.0 * (n as f64).ln() - 2.0 * hm1.abs().ln()).exp()
            })
            .collect();
        (nodes, weights)
    }

    fn poly(n: usize, x: f64) -> f64 {
        // P_n without the exp(−x²/4) factor, independent of the module's recurrence.
        let (mut a, mut b) = (1.0, x);
        if n == 0 {
            return 1.0;
        }
        for j in 1..n {
            let c = x * b - j as f64 * a;
            a = b;
            b = c;
        }
        let fact: f64 = (1..=n).map(|j| j as f64).product();
        b / fact.sqrt()
    }

    #[test]
    fn univariate_examples() {
        assert_eq!(eval_univariate(H, 0, 3.7).unwrap(), 1.0);
        assert_relative_eq!(eval_univariate(H, 1, 2.0).unwrap(), 2.0 * (-1.0f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(eval_univariate(H, 2, 0.0).unwrap(), -1.0 / 2f64.sqrt(), epsilon = 1e-15);
        assert_eq!(eval_univariate_deriv(H, 0, 1.3).unwrap(), 0.0);
        assert_eq!(eval_univariate_deriv(UnivariateFamily::Linear, 1, 5.0).unwrap(), 1.0);
        assert_relative_eq!(eval_univariate_deriv(H, 1, 0.0).unwrap(), 1.0, epsilon = 1e-15);
        assert!(matches!(
            eval_univariate(UnivariateFamily::Linear, 2, 1.0),
            Err(Error::Domain(_))
        ));
        assert!(eval_univariate(UnivariateFamily::ConstantOnly, 1, 1.0).is_err());
    }

    #[test]
    fn orthonormal_under_standard_normal() {
        let (nodes, weights) = gauss_hermite_prob(48);
        let total: f64 = weights.iter().sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);
        for a in 1..=8u32 {
            for b in 1..=8u32 {
                let integral: f64 = nodes
                    .iter()
                    .zip(&weights)
                    .map(|(&x, &w)| {
                        // ψ_n(x) e^{x²/4} recovers P_n(x).
                        let e = (0.25 * x * x).exp();
                        let pa = eval_univariate(H, a, x).unwrap() * e;
                        let pb = eval_univariate(H, b, x).unwrap() * e;
                        w * pa * pb
                    })
                    .sum();
                let expected = if a == b { 1.0 } else { 0.0 };
                assert!((integral - expected).abs() < 1e-10, "a={a} b={b} got {integral}");
            }
        }
    }

    #[test]
    fn recurrence_matches_unnormalized_hermite() {
        for n in 0..=12 {
            for &x in &[-3.1, -0.4, 0.0, 0.9, 2.5] {
                let expected = if n == 0 { 1.0 } else { poly(n, x) * (-0.25 * x * x).exp() };
                assert_relative_eq!(eval_univariate(H, n as u32, x).unwrap(), expected, max_relative = 1e-12, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-5;
        for deg in 0..=8u32 {
            for i in 0..=40 {
                let x = -5.0 + 0.25 * i as f64;
                let fd = (eval_univariate(H, deg, x + h).unwrap() - eval_univariate(H, deg, x - h).unwrap()) / (2.0 * h);
                let an = eval_univariate_deriv(H, deg, x).unwrap();
                let scale = an.abs().max(1e-3);
                assert!((fd - an).abs() / scale < 1e-6, "deg={deg} x={x} fd={fd} an={an}");
            }
        }
    }

    #[test]
    fn decay_and_finite_range() {
        for deg in 1..=8u32 {
            assert!(eval_univariate(H, deg, 20.0).unwrap().abs() < 1e-20);
            assert!(eval_univariate(H, deg, -20.0).unwrap().abs() < 1e-20);
        }
        for deg in 0..=30u32 {
            for &x in &[-40.0, -17.3, 0.0, 25.0, 40.0] {
                assert!(eval_univariate(H, deg, x).unwrap().is_finite());
                assert!(eval_univariate_deriv(H, deg, x).unwrap().is_finite());
            }
        }
    }

    #[test]
    fn expansion_examples() {
        let set = DownwardClosedSet::total_degree(2, 2);
        let zero = FeatureExpansion::new(set.clone(), vec![0.0; set.len()], H).unwrap();
        assert_eq!(zero.eval(&[0.3, -1.2]).unwrap(), 0.0);

        let one = DownwardClosedSet::from_members(1, [mi(&[0])]).unwrap();
        let c = FeatureExpansion::new(one, vec![2.0], H).unwrap();
        assert_eq!(c.eval(&[-7.0]).unwrap(), 2.0);
        assert_eq!(c.eval_partial_k(&[-7.0]).unwrap(), 0.0);

        // Λ = {(0,0),(1,0),(0,1),(1,1)} with only c_(1,1) = 1; ψ_1(0) = 0 in the second factor.
        let sq = DownwardClosedSet::from_members(2, [mi(&[0, 0]), mi(&[1, 0]), mi(&[0, 1]), mi(&[1, 1])]).unwrap();
        let pos = sq.position(&mi(&[1, 1])).unwrap();
        let mut coeffs = vec![0.0; 4];
        coeffs[pos] = 1.0;
        let f = FeatureExpansion::new(sq, coeffs, H).unwrap();
        assert_eq!(f.eval(&[2.0, 0.0]).unwrap(), 0.0);

        let lin = DownwardClosedSet::from_members(1, [mi(&[0]), mi(&[1])]).unwrap();
        let g = FeatureExpansion::new(lin, vec![0.0, 1.0], H).unwrap();
        assert_relative_eq!(g.eval_partial_k(&[0.0]).unwrap(), 1.0, epsilon = 1e-15);

        assert!(matches!(f.eval(&[1.0]), Err(Error::Dimension { .. })));
        assert!(FeatureExpansion::new(DownwardClosedSet::total_degree(1, 2), vec![0.0; 3], UnivariateFamily::Linear).is_err());
    }

    #[test]
    fn rows_consistent_with_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let set = DownwardClosedSet::total_degree(3, 3);
        let coeffs: Vec<f64> = (0..set.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = FeatureExpansion::new(set.clone(), coeffs.clone(), H).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let (rows, partials) = feature_rows(&set, H, &x).unwrap();
            assert_eq!(dot(&rows, &coeffs), f.eval(&x).unwrap());
            assert_eq!(dot(&partials, &coeffs), f.eval_partial_k(&x).unwrap());
            // Tensorization against direct univariate products.
            for (alpha, r) in set.iter().zip(&rows) {
                let direct: f64 = alpha
                    .degrees()
                    .iter()
                    .zip(&x)
                    .map(|(&a, &xi)| eval_univariate(H, a, xi).unwrap())
                    .product();
                assert_relative_eq!(*r, direct, max_relative = 1e-13, epsilon = 1e-15);
            }
            // Features constant in the last variable have zero partials.
            for (alpha, p) in set.iter().zip(&partials) {
                if alpha.last() == 0 {
                    assert_eq!(*p, 0.0);
                }
            }
        }
        let (row, _) = feature_rows(&DownwardClosedSet::total_degree(2, 0), H, &[0.4, 0.1]).unwrap();
        assert_eq!(row, vec![1.0]);
    }

    #[test]
    fn partial_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let set = DownwardClosedSet::total_degree(2, 3);
        let c1: Vec<f64> = (0..set.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c2: Vec<f64> = (0..set.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sum: Vec<f64> = c1.iter().zip(&c2).map(|(a, b)| a + b).collect();
        let f1 = FeatureExpansion::new(set.clone(), c1, H).unwrap();
        let f2 = FeatureExpansion::new(set.clone(), c2, H).unwrap();
        let f12 = FeatureExpansion::new(set, sum, H).unwrap();
        for _ in 0..50 {
            let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let lhs = f12.eval_partial_k(&x).unwrap();
            let rhs = f1.eval_partial_k(&x).unwrap() + f2.eval_partial_k(&x).unwrap();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
