//! The rectifier and monotone map components.
//!
//! A component is `S = R(f)` with
//!
//! ```text
//! R(f)(x) = f(x_<k, 0) + ∫_0^{x_k} g(∂_k f(x_<k, t)) dt
//! ```
//!
//! so that `∂_k S = g(∂_k f) > 0` for any coefficients when `g` is the
//! soft-plus. The line integral is evaluated by adaptive Gauss–Kronrod
//! quadrature; coefficient gradients are integrated on the same partition.

use std::f64::consts::LN_2;
use std::fmt;
use std::str::FromStr;

use crate::basis::{fill_univariate, FeatureExpansion, UnivariateFamily};
use crate::error::{Error, Result};
use crate::quadrature::{self, integrate, integrate_with, QuadSettings, GAUSS_WEIGHTS, KRONROD_WEIGHTS};

/// The positive function `g` applied to `∂_k f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rectifier {
    /// `g(ξ) = log(2^ξ + 1) / log 2`.
    Softplus,
    /// `g(ξ) = ξ²`. Not invertible and zero at `ξ = 0`.
    Square,
}

impl Rectifier {
    pub fn eval(self, xi: f64) -> f64 {
        match self {
            Rectifier::Softplus => softplus(xi),
            Rectifier::Square => xi * xi,
        }
    }

    pub fn deriv(self, xi: f64) -> f64 {
        match self {
            // logistic(ξ ln 2)
            Rectifier::Softplus => 1.0 / (1.0 + (-xi).exp2()),
            Rectifier::Square => 2.0 * xi,
        }
    }

    /// `g⁻¹(y)`, soft-plus only.
    pub fn inverse(self, y: f64) -> Result<f64> {
        match self {
            Rectifier::Square => Err(Error::Unsupported(
                "the square rectifier is not invertible".into(),
            )),
            Rectifier::Softplus => {
                if !(y > 0.0) {
                    return Err(Error::Domain(format!(
                        "soft-plus inverse needs a positive argument, got {y}"
                    )));
                }
                Ok(softplus_inverse(y))
            }
        }
    }

    /// `log g(ξ)`, accurate where `g` itself would underflow.
    pub fn log_eval(self, xi: f64) -> f64 {
        match self {
            Rectifier::Softplus => {
                if xi < -60.0 {
                    // log(ln(1 + u)/ln 2) with u = 2^ξ ≈ ln u − ln ln 2 − u/2
                    xi * LN_2 - LN_2.ln() - 0.5 * xi.exp2()
                } else {
                    softplus(xi).ln()
                }
            }
            Rectifier::Square => 2.0 * xi.abs().ln(),
        }
    }

    /// `g'(ξ) / g(ξ)`.
    pub fn log_deriv(self, xi: f64) -> f64 {
        match self {
            Rectifier::Softplus => {
                if xi < -60.0 {
                    LN_2 * (1.0 + 0.5 * xi.exp2())
                } else {
                    self.deriv(xi) / softplus(xi)
                }
            }
            Rectifier::Square => 2.0 / xi,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Rectifier::Softplus => "softplus",
            Rectifier::Square => "square",
        }
    }
}

impl fmt::Display for Rectifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Rectifier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softplus" => Ok(Rectifier::Softplus),
            "square" => Ok(Rectifier::Square),
            other => Err(Error::Config(format!("unknown rectifier '{other}'"))),
        }
    }
}

fn softplus(xi: f64) -> f64 {
    if xi == 0.0 {
        return 1.0;
    }
    if xi > 0.0 {
        xi + (-xi).exp2().ln_1p() / LN_2
    } else {
        xi.exp2().ln_1p() / LN_2
    }
}

fn softplus_inverse(y: f64) -> f64 {
    // log2(2^y − 1)
    if y > 1.0 {
        y + (-(-y).exp2()).ln_1p() / LN_2
    } else {
        (y * LN_2).exp_m1().log2()
    }
}

/// Free-function forms of the rectifier.
pub fn g_eval(rect: Rectifier, xi: f64) -> f64 {
    rect.eval(xi)
}

pub fn g_inv(rect: Rectifier, y: f64) -> Result<f64> {
    rect.inverse(y)
}

pub fn g_deriv(rect: Rectifier, xi: f64) -> f64 {
    rect.deriv(xi)
}

/// Evaluates `∫_0^{x_k} g(Σ_q a_q ψ_q'(t)) dt` for weights `a` over the last
/// degree, and optionally `J_q = ∫_0^{x_k} g'(·) ψ_q'(t) dt` for
/// `q < grad.len()`.
pub(crate) struct LineIntegrator<'a> {
    pub family: UnivariateFamily,
    pub rectifier: Rectifier,
    pub quad: &'a QuadSettings,
}

/// Basis derivatives at the 15 nodes of the single panel between 0 and `x_k`,
/// row-major with the given stride.
pub(crate) struct PanelTable<'a> {
    pub derivs: &'a [f64],
    pub stride: usize,
}

impl LineIntegrator<'_> {
    pub fn integrate(
        &self,
        weights: &[f64],
        xk: f64,
        grad: Option<&mut [f64]>,
        cache: Option<PanelTable<'_>>,
    ) -> Result<f64> {
        let n_grad = grad.as_ref().map_or(0, |g| g.len());
        let structurally_flat = weights.iter().skip(1).all(|&a| a == 0.0);
        if structurally_flat && n_grad <= 1 {
            // ∂_k f ≡ 0: the integrand is the constant g(0).
            if let Some(g) = grad {
                if n_grad == 1 {
                    g[0] = 0.0;
                }
            }
            return Ok(self.rectifier.eval(0.0) * xk);
        }
        if xk == 0.0 {
            if let Some(g) = grad {
                g.iter_mut().for_each(|v| *v = 0.0);
            }
            return Ok(0.0);
        }
        let q_len = weights.len().max(n_grad);
        let mut grad = grad;
        if let Some(table) = cache {
            debug_assert!(table.stride >= q_len);
            if let Some(v) = self.cached_panel(weights, xk, grad.as_deref_mut(), &table)? {
                return Ok(v);
            }
            // One panel missed the tolerance; fall through to the adaptive rule.
        }
        self.adaptive(weights, xk, grad, q_len)
    }

    fn cached_panel(
        &self,
        weights: &[f64],
        xk: f64,
        grad: Option<&mut [f64]>,
        table: &PanelTable<'_>,
    ) -> Result<Option<f64>> {
        let (lo, hi, sign) = if xk > 0.0 { (0.0, xk, 1.0) } else { (xk, 0.0, -1.0) };
        let h = 0.5 * (hi - lo);
        let mut xis = [0.0; 15];
        let mut kron = 0.0;
        let mut gauss = 0.0;
        for i in 0..15 {
            let row = &table.derivs[i * table.stride..i * table.stride + weights.len()];
            let xi: f64 = weights.iter().zip(row).map(|(a, d)| a * d).sum();
            xis[i] = xi;
            let v = self.rectifier.eval(xi);
            kron += KRONROD_WEIGHTS[i] * v;
            gauss += GAUSS_WEIGHTS[i] * v;
        }
        let value = kron * h;
        let error = ((kron - gauss) * h).abs();
        if !value.is_finite() {
            return Err(Error::Numerical("non-finite integrand".into()));
        }
        if error > self.quad.tolerance(value) {
            return Ok(None);
        }
        if let Some(g) = grad {
            g.iter_mut().for_each(|v| *v = 0.0);
            for i in 0..15 {
                let w = KRONROD_WEIGHTS[i] * self.rectifier.deriv(xis[i]);
                let row = &table.derivs[i * table.stride..i * table.stride + g.len()];
                for (acc, d) in g.iter_mut().zip(row) {
                    *acc += w * d;
                }
            }
            for v in g.iter_mut() {
                *v *= sign * h;
            }
        }
        Ok(Some(sign * value))
    }

    fn adaptive(&self, weights: &[f64], xk: f64, grad: Option<&mut [f64]>, q_len: usize) -> Result<f64> {
        let family = self.family;
        let rect = self.rectifier;
        let mut vals = vec![0.0; q_len];
        let mut derivs = vec![0.0; q_len];
        match grad {
            None => {
                let r = integrate(
                    |t| {
                        fill_univariate(family, t, &mut vals, Some(&mut derivs));
                        let xi: f64 = weights.iter().zip(&derivs).map(|(a, d)| a * d).sum();
                        rect.eval(xi)
                    },
                    0.0,
                    xk,
                    self.quad,
                )?;
                Ok(r.value)
            }
            Some(g) => {
                let n = g.len();
                let (r, aux) = integrate_with(
                    |t, out: &mut [f64]| {
                        fill_univariate(family, t, &mut vals, Some(&mut derivs));
                        let xi: f64 = weights.iter().zip(&derivs).map(|(a, d)| a * d).sum();
                        let gp = rect.deriv(xi);
                        for (o, d) in out.iter_mut().zip(&derivs) {
                            *o = gp * d;
                        }
                        rect.eval(xi)
                    },
                    n,
                    0.0,
                    xk,
                    self.quad,
                )?;
                g.copy_from_slice(&aux);
                Ok(r.value)
            }
        }
    }
}

/// Fills the panel table used by [`LineIntegrator`] for a sample with last
/// coordinate `xk`: `stride` basis derivatives at each of the 15 nodes.
pub(crate) fn fill_panel_table(family: UnivariateFamily, xk: f64, stride: usize, out: &mut [f64]) {
    let (lo, hi) = if xk > 0.0 { (0.0, xk) } else { (xk, 0.0) };
    let nodes = quadrature::panel_nodes(lo, hi);
    let mut vals = vec![0.0; stride];
    for (i, &t) in nodes.iter().enumerate() {
        fill_univariate(family, t, &mut vals, Some(&mut out[i * stride..(i + 1) * stride]));
    }
}

/// One monotone map component `S^k = R_k(f)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MapComponent {
    f: FeatureExpansion,
    rectifier: Rectifier,
    quad: QuadSettings,
}

/// Value, partial and their coefficient gradients at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentGradient {
    pub value: f64,
    pub grad: Vec<f64>,
    pub partial: f64,
    pub partial_grad: Vec<f64>,
}

/// `S` restricted to the line `t ↦ S(x_<k, t)`.
#[derive(Debug, Clone)]
pub struct LineRestriction<'a> {
    component: &'a MapComponent,
    weights: Vec<f64>,
    offset: f64,
}

impl LineRestriction<'_> {
    pub fn eval(&self, t: f64) -> Result<f64> {
        let integ = self.component.integrator();
        Ok(self.offset + integ.integrate(&self.weights, t, None, None)?)
    }

    pub fn partial(&self, t: f64) -> f64 {
        let len = self.weights.len();
        let mut vals = vec![0.0; len];
        let mut derivs = vec![0.0; len];
        fill_univariate(self.component.f.family(), t, &mut vals, Some(&mut derivs));
        let xi: f64 = self.weights.iter().zip(&derivs).map(|(a, d)| a * d).sum();
        self.component.rectifier.eval(xi)
    }

    /// `log ∂_k S(x_<k, t)`.
    pub fn log_partial(&self, t: f64) -> f64 {
        let len = self.weights.len();
        let mut vals = vec![0.0; len];
        let mut derivs = vec![0.0; len];
        fill_univariate(self.component.f.family(), t, &mut vals, Some(&mut derivs));
        let xi: f64 = self.weights.iter().zip(&derivs).map(|(a, d)| a * d).sum();
        self.component.rectifier.log_eval(xi)
    }
}

impl MapComponent {
    pub fn new(f: FeatureExpansion, rectifier: Rectifier, quad: QuadSettings) -> Result<Self> {
        if f.dim() == 0 {
            return Err(Error::Config("map components need at least one input".into()));
        }
        if !(quad.rel_tol > 0.0) || !quad.rel_tol.is_finite() {
            return Err(Error::Config(format!(
                "quadrature tolerance must be positive, got {}",
                quad.rel_tol
            )));
        }
        Ok(MapComponent { f, rectifier, quad })
    }

    /// The component `S(x) = x_k`.
    pub fn identity(dim: usize, family: UnivariateFamily) -> Self {
        MapComponent {
            f: FeatureExpansion::zero(dim, family),
            rectifier: Rectifier::Softplus,
            quad: QuadSettings::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.f.dim()
    }

    pub fn expansion(&self) -> &FeatureExpansion {
        &self.f
    }

    pub fn rectifier(&self) -> Rectifier {
        self.rectifier
    }

    pub fn quad(&self) -> &QuadSettings {
        &self.quad
    }

    pub fn with_expansion(&self, f: FeatureExpansion) -> Result<Self> {
        MapComponent::new(f, self.rectifier, self.quad)
    }

    pub(crate) fn integrator(&self) -> LineIntegrator<'_> {
        LineIntegrator {
            family: self.f.family(),
            rectifier: self.rectifier,
            quad: &self.quad,
        }
    }

    /// Restricts the component to the last variable at fixed `x_<k`.
    pub fn restrict(&self, prefix: &[f64]) -> Result<LineRestriction<'_>> {
        let weights = self.f.last_degree_weights(prefix)?;
        let mut vals = vec![0.0; weights.len()];
        fill_univariate(self.f.family(), 0.0, &mut vals, None);
        let offset = weights.iter().zip(&vals).map(|(a, v)| a * v).sum();
        Ok(LineRestriction {
            component: self,
            weights,
            offset,
        })
    }

    fn split<'x>(&self, x: &'x [f64]) -> Result<(&'x [f64], f64)> {
        self.f.check(x)?;
        Ok((&x[..x.len() - 1], x[x.len() - 1]))
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let (prefix, xk) = self.split(x)?;
        self.restrict(prefix)?.eval(xk)
    }

    pub fn eval_partial_k(&self, x: &[f64]) -> Result<f64> {
        let (prefix, xk) = self.split(x)?;
        Ok(self.restrict(prefix)?.partial(xk))
    }

    pub fn eval_with_coeff_grad(&self, x: &[f64]) -> Result<ComponentGradient> {
        let (prefix, xk) = self.split(x)?;
        let family = self.f.family();
        let q_len = self.f.max_degree() as usize + 1;
        let tables = crate::basis::univariate_tables(family, prefix, q_len - 1);
        let mut weights = vec![0.0; q_len];
        let mut prefix_w = Vec::with_capacity(self.f.len());
        for (alpha, c) in self.f.terms() {
            let w = crate::basis::prefix_weight(alpha, &tables);
            prefix_w.push(w);
            weights[alpha.last() as usize] += c * w;
        }
        let mut at_zero = vec![0.0; q_len];
        fill_univariate(family, 0.0, &mut at_zero, None);
        let mut at_x = vec![0.0; q_len];
        let mut d_at_x = vec![0.0; q_len];
        fill_univariate(family, xk, &mut at_x, Some(&mut d_at_x));

        let mut j = vec![0.0; q_len];
        let integral = self.integrator().integrate(&weights, xk, Some(&mut j), None)?;
        let offset: f64 = weights.iter().zip(&at_zero).map(|(a, v)| a * v).sum();
        let xi: f64 = weights.iter().zip(&d_at_x).map(|(a, d)| a * d).sum();
        let gp = self.rectifier.deriv(xi);

        let mut grad = Vec::with_capacity(self.f.len());
        let mut partial_grad = Vec::with_capacity(self.f.len());
        for (alpha, w) in self.f.set().iter().zip(&prefix_w) {
            let q = alpha.last() as usize;
            grad.push(w * (at_zero[q] + j[q]));
            partial_grad.push(gp * w * d_at_x[q]);
        }
        Ok(ComponentGradient {
            value: offset + integral,
            grad,
            partial: self.rectifier.eval(xi),
            partial_grad,
        })
    }

    /// `R⁻¹(S)` for this component `S`; soft-plus only.
    pub fn inverse_rectify(&self) -> Result<InverseRectified<'_>> {
        if self.rectifier != Rectifier::Softplus {
            return Err(Error::Unsupported(
                "inverse rectification requires the soft-plus rectifier".into(),
            ));
        }
        Ok(InverseRectified { component: self })
    }
}

/// `h(x) = S(x_<k, 0) + ∫_0^{x_k} g⁻¹(∂_k S(x_<k, t)) dt`, evaluated by quadrature.
#[derive(Debug, Clone)]
pub struct InverseRectified<'a> {
    component: &'a MapComponent,
}

impl InverseRectified<'_> {
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let (prefix, xk) = self.component.split(x)?;
        let line = self.component.restrict(prefix)?;
        let base = line.eval(0.0)?;
        let mut failure = None;
        let r = integrate(
            |t| match self.component.rectifier.inverse(line.partial(t)) {
                Ok(v) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            },
            0.0,
            xk,
            &self.component.quad,
        )?;
        if let Some(e) = failure {
            return Err(e);
        }
        Ok(base + r.value)
    }
}
