//! Adaptive Gauss–Kronrod (7/15) quadrature.
//!
//! The integrand may carry auxiliary outputs that are integrated on the same
//! partition as the primary value; the error control only looks at the
//! primary value. This is how coefficient gradients of a line integral are
//! obtained without differentiating the adaptive partition itself.

use crate::error::{Error, Result};

/// Kronrod nodes on [−1, 1] in ascending order.
pub const NODES: [f64; 15] = [
    -0.991_455_371_120_812_6,
    -0.949_107_912_342_758_5,
    -0.864_864_423_359_769_1,
    -0.741_531_185_599_394_4,
    -0.586_087_235_467_691_1,
    -0.405_845_151_377_397_2,
    -0.207_784_955_007_898_47,
    0.0,
    0.207_784_955_007_898_47,
    0.405_845_151_377_397_2,
    0.586_087_235_467_691_1,
    0.741_531_185_599_394_4,
    0.864_864_423_359_769_1,
    0.949_107_912_342_758_5,
    0.991_455_371_120_812_6,
];

/// 15-point Kronrod weights matching [`NODES`].
pub const KRONROD_WEIGHTS: [f64; 15] = [
    0.022_935_322_010_529_225,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
    0.204_432_940_075_298_9,
    0.190_350_578_064_785_4,
    0.169_004_726_639_267_9,
    0.140_653_259_715_525_92,
    0.104_790_010_322_250_18,
    0.063_092_092_629_978_55,
    0.022_935_322_010_529_225,
];

/// 7-point Gauss weights on the odd Kronrod nodes (zero elsewhere).
pub const GAUSS_WEIGHTS: [f64; 15] = [
    0.0,
    0.129_484_966_168_869_7,
    0.0,
    0.279_705_391_489_276_7,
    0.0,
    0.381_830_050_505_118_9,
    0.0,
    0.417_959_183_673_469_4,
    0.0,
    0.381_830_050_505_118_9,
    0.0,
    0.279_705_391_489_276_7,
    0.0,
    0.129_484_966_168_869_7,
    0.0,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadSettings {
    /// Relative tolerance on the primary value.
    pub rel_tol: f64,
    /// Absolute floor on the tolerance.
    pub abs_tol: f64,
    /// Subdivision budget.
    pub max_intervals: usize,
}

impl Default for QuadSettings {
    fn default() -> Self {
        QuadSettings {
            rel_tol: 1e-3,
            abs_tol: 1e-10,
            max_intervals: 1 << 12,
        }
    }
}

impl QuadSettings {
    pub fn with_rel_tol(rel_tol: f64) -> Self {
        QuadSettings {
            rel_tol,
            ..Default::default()
        }
    }

    pub fn tolerance(&self, value: f64) -> f64 {
        (self.rel_tol * value.abs()).max(self.abs_tol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
    pub intervals: usize,
}

/// Maps the reference nodes onto `[a, b]`.
pub fn panel_nodes(a: f64, b: f64) -> [f64; 15] {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut out = [0.0; 15];
    for (o, x) in out.iter_mut().zip(NODES.iter()) {
        *o = c + h * x;
    }
    out
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
    aux: Vec<f64>,
}

fn eval_panel<F>(f: &mut F, a: f64, b: f64, n_aux: usize, scratch: &mut [f64]) -> Panel
where
    F: FnMut(f64, &mut [f64]) -> f64,
{
    let h = 0.5 * (b - a);
    let nodes = panel_nodes(a, b);
    let mut kron = 0.0;
    let mut gauss = 0.0;
    let mut aux = vec![0.0; n_aux];
    for i in 0..15 {
        let v = f(nodes[i], scratch);
        kron += KRONROD_WEIGHTS[i] * v;
        gauss += GAUSS_WEIGHTS[i] * v;
        for (acc, s) in aux.iter_mut().zip(scratch.iter()) {
            *acc += KRONROD_WEIGHTS[i] * s;
        }
    }
    for acc in aux.iter_mut() {
        *acc *= h;
    }
    Panel {
        a,
        b,
        value: kron * h,
        error: ((kron - gauss) * h).abs(),
        aux,
    }
}

/// Integrates `f` over `[a, b]` (either orientation).
pub fn integrate<F>(mut f: F, a: f64, b: f64, settings: &QuadSettings) -> Result<Integral>
where
    F: FnMut(f64) -> f64,
{
    integrate_with(|t, _aux: &mut [f64]| f(t), 0, a, b, settings).map(|(i, _)| i)
}

/// Integrates `f` over `[a, b]`, where `f(t, aux)` returns the primary value and
/// writes `n_aux` auxiliary values into `aux`. Returns the primary integral and
/// the auxiliary integrals on the final partition.
pub fn integrate_with<F>(
    mut f: F,
    n_aux: usize,
    a: f64,
    b: f64,
    settings: &QuadSettings,
) -> Result<(Integral, Vec<f64>)>
where
    F: FnMut(f64, &mut [f64]) -> f64,
{
    if a == b {
        return Ok((
            Integral {
                value: 0.0,
                error: 0.0,
                intervals: 0,
            },
            vec![0.0; n_aux],
        ));
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let mut scratch = vec![0.0; n_aux];
    let mut panels = vec![eval_panel(&mut f, lo, hi, n_aux, &mut scratch)];
    loop {
        let value: f64 = panels.iter().map(|p| p.value).sum();
        let error: f64 = panels.iter().map(|p| p.error).sum();
        if !value.is_finite() || !error.is_finite() {
            return Err(Error::Numerical("non-finite integrand".into()));
        }
        if error <= settings.tolerance(value) {
            let mut aux = vec![0.0; n_aux];
            for p in &panels {
                for (acc, v) in aux.iter_mut().zip(&p.aux) {
                    *acc += v;
                }
            }
            for v in aux.iter_mut() {
                *v *= sign;
            }
            return Ok((
                Integral {
                    value: sign * value,
                    error,
                    intervals: panels.len(),
                },
                aux,
            ));
        }
        let worst = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let p = panels.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        if panels.len() + 2 > settings.max_intervals || mid <= p.a || mid >= p.b {
            return Err(Error::Quadrature {
                estimate: error,
                intervals: panels.len() + 1,
            });
        }
        panels.push(eval_panel(&mut f, p.a, mid, n_aux, &mut scratch));
        panels.push(eval_panel(&mut f, mid, p.b, n_aux, &mut scratch));
    }
}
