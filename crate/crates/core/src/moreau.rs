//! Lower and upper Moreau envelopes of scalar functions, and the proximal map.
//!
//! `M_γ f(x) = inf_y f(y) + (y − x)²/2γ` and `M^γ f(x) = sup_y f(y) − (y − x)²/2γ`
//! are computed by a dense grid scan over `x ± R` followed by refinement of
//! every grid-local optimum. The window doubles while the best grid point sits
//! on an open edge; if it still does after the allowed expansions the objective
//! is declared unbounded.

use crate::error::{Error, Result};
use std::fmt;
use std::sync::Arc;

pub type RealMap = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

const GOLDEN: f64 = 0.381_966_011_250_105_1;

/// A real function of one variable with an optional derivative and a domain.
#[derive(Clone)]
pub struct ScalarFunction {
    eval: RealMap,
    grad: Option<RealMap>,
    domain: (f64, f64),
}

impl fmt::Debug for ScalarFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarFunction")
            .field("has_grad", &self.grad.is_some())
            .field("domain", &self.domain)
            .finish()
    }
}

impl ScalarFunction {
    pub fn new(eval: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { eval: Arc::new(eval), grad: None, domain: (f64::NEG_INFINITY, f64::INFINITY) }
    }

    pub fn with_grad(mut self, grad: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.grad = Some(Arc::new(grad));
        self
    }

    pub fn with_domain(mut self, lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::InvalidParameter(format!("empty domain [{lo}, {hi}]")));
        }
        self.domain = (lo, hi);
        Ok(self)
    }

    pub fn eval(&self, y: f64) -> f64 {
        (self.eval)(y)
    }

    pub fn grad(&self, y: f64) -> Option<f64> {
        self.grad.as_ref().map(|g| g(y))
    }

    pub fn has_grad(&self) -> bool {
        self.grad.is_some()
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    /// Largest relative disagreement between `grad` and central differences of
    /// `eval` over `points`; `None` when no derivative is attached.
    pub fn grad_check(&self, points: &[f64], h: f64) -> Option<f64> {
        let g = self.grad.as_ref()?;
        let worst = points
            .iter()
            .map(|&y| {
                let fd = (self.eval(y + h) - self.eval(y - h)) / (2.0 * h);
                (g(y) - fd).abs() / fd.abs().max(1e-12)
            })
            .fold(0.0, f64::max);
        Some(worst)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeOptions {
    pub grid_points: usize,
    /// Half-width of the initial search window; `None` means `20·max(1, √γ)`.
    pub radius: Option<f64>,
    pub max_expansions: usize,
    /// Optima whose values lie within this (relative to `max(1, |value|)`) of
    /// the best are reported as ties.
    pub tie_tol: f64,
    /// Relative width at which golden-section refinement stops.
    pub xtol: f64,
}

impl Default for EnvelopeOptions {
    fn default() -> Self {
        Self { grid_points: 2001, radius: None, max_expansions: 6, tie_tol: 1e-9, xtol: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeResult {
    pub value: f64,
    pub argopt: f64,
    pub converged: bool,
    /// All optimizers tied with `argopt`, ascending; length 1 when unique.
    pub ties: Vec<f64>,
}

#[derive(Clone, Copy, PartialEq)]
enum Sense {
    Lower,
    Upper,
}

struct Objective<'a> {
    f: &'a ScalarFunction,
    gamma: f64,
    x: f64,
    sign: f64,
}

impl Objective<'_> {
    fn value(&self, y: f64) -> f64 {
        let v = self.sign * self.f.eval(y) + (y - self.x).powi(2) / (2.0 * self.gamma);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }

    fn slope(&self, y: f64) -> Option<f64> {
        self.f.grad(y).map(|g| self.sign * g + (y - self.x) / self.gamma)
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("envelope parameter must be > 0, got {gamma}")))
    }
}

pub fn lower_envelope(f: &ScalarFunction, gamma: f64, x: f64, opts: &EnvelopeOptions) -> Result<EnvelopeResult> {
    optimize(f, gamma, x, Sense::Lower, &[], opts)
}

pub fn upper_envelope(f: &ScalarFunction, gamma: f64, x: f64, opts: &EnvelopeOptions) -> Result<EnvelopeResult> {
    optimize(f, gamma, x, Sense::Upper, &[], opts)
}

/// Upper envelope with extra refinement started from each of `seeds`
/// (typically a known stationary point of the objective).
pub fn upper_envelope_seeded(
    f: &ScalarFunction,
    gamma: f64,
    x: f64,
    seeds: &[f64],
    opts: &EnvelopeOptions,
) -> Result<EnvelopeResult> {
    optimize(f, gamma, x, Sense::Upper, seeds, opts)
}

/// Smallest minimizer of `f(y) + (y − x)²/2γ`.
pub fn prox(f: &ScalarFunction, gamma: f64, x: f64, opts: &EnvelopeOptions) -> Result<f64> {
    Ok(lower_envelope(f, gamma, x, opts)?.argopt)
}

/// `∇M_γ f(x) = (x − prox_γf(x))/γ`, defined only where the prox is single-valued.
pub fn envelope_gradient(f: &ScalarFunction, gamma: f64, x: f64, opts: &EnvelopeOptions) -> Result<f64> {
    let env = lower_envelope(f, gamma, x, opts)?;
    if env.ties.len() > 1 {
        return Err(Error::MultiValuedProx { x, minimizers: env.ties });
    }
    Ok((x - env.argopt) / gamma)
}

fn optimize(
    f: &ScalarFunction,
    gamma: f64,
    x: f64,
    sense: Sense,
    seeds: &[f64],
    opts: &EnvelopeOptions,
) -> Result<EnvelopeResult> {
    check_gamma(gamma)?;
    if !x.is_finite() {
        return Err(Error::NonFinite(format!("envelope evaluated at {x}")));
    }
    if opts.grid_points < 3 {
        return Err(Error::InvalidParameter(format!("envelope grid needs at least 3 points, got {}", opts.grid_points)));
    }
    let sign = if sense == Sense::Lower { 1.0 } else { -1.0 };
    let obj = Objective { f, gamma, x, sign };
    let (lo, hi) = f.domain;
    let mut radius = opts.radius.unwrap_or(20.0 * gamma.sqrt().max(1.0));

    let mut expansions = 0;
    let (grid, values) = loop {
        let a = (x - radius).max(lo);
        let b = (x + radius).min(hi);
        let n = opts.grid_points;
        let grid: Vec<f64> = (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect();
        let values: Vec<f64> = grid.iter().map(|&y| obj.value(y)).collect();
        let best = argmin(&values);
        if values[best] == f64::INFINITY {
            return Err(Error::NonFinite(format!("objective is non-finite on the whole window around x = {x}")));
        }
        let open_edge = (best == 0 && a > lo) || (best == n - 1 && b < hi);
        if !open_edge {
            break (grid, values);
        }
        if values[best] == f64::NEG_INFINITY || expansions == opts.max_expansions {
            return Err(Error::Unbounded { x, radius });
        }
        expansions += 1;
        radius *= 2.0;
    };

    let n = grid.len();
    let spacing = grid[1] - grid[0];
    let mut found: Vec<(f64, f64, bool)> = Vec::new();
    for i in 0..n {
        let left = if i > 0 { values[i - 1] } else { f64::INFINITY };
        let right = if i + 1 < n { values[i + 1] } else { f64::INFINITY };
        // strict on the left so a flat stretch yields one candidate
        if values[i] < left && values[i] <= right {
            let a = grid[i.saturating_sub(1)];
            let b = grid[(i + 1).min(n - 1)];
            found.push(refine(&obj, a, b, grid[i], opts.xtol));
        }
    }
    for &s in seeds.iter().filter(|s| s.is_finite() && **s >= grid[0] && **s <= grid[n - 1]) {
        let a = (s - spacing).max(grid[0]);
        let b = (s + spacing).min(grid[n - 1]);
        found.push(refine(&obj, a, b, s, opts.xtol));
    }
    if found.is_empty() {
        let i = argmin(&values);
        found.push((grid[i], values[i], true));
    }

    let best = found.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let threshold = best + opts.tie_tol * best.abs().max(1.0);
    let mut tied: Vec<(f64, bool)> = found.iter().filter(|c| c.1 <= threshold).map(|c| (c.0, c.2)).collect();
    tied.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut ties: Vec<f64> = Vec::new();
    let mut converged = true;
    for (y, ok) in tied {
        if ties.last().map_or(true, |&t| (y - t).abs() > 1e-6 * y.abs().max(1.0)) {
            ties.push(y);
        }
        converged &= ok;
    }
    let argopt = ties[0];
    // the minimized objective is sign·f + q, so the envelope is sign times it
    let value = sign * obj.value(argopt);
    Ok(EnvelopeResult { value, argopt, converged, ties })
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// Minimizes the objective on `[a, b]` starting from `start`; returns
/// `(argmin, value, converged)`.
fn refine(obj: &Objective<'_>, a: f64, b: f64, start: f64, xtol: f64) -> (f64, f64, bool) {
    if let (Some(sa), Some(sb)) = (obj.slope(a), obj.slope(b)) {
        if sa < 0.0 && sb > 0.0 {
            return bisect_slope(obj, a, b);
        }
    }
    let (y, v, ok) = golden(obj, a, b, start, xtol);
    match polish(obj, y, a, b) {
        Some(p) if obj.value(p) <= v + 64.0 * f64::EPSILON * v.abs().max(1.0) => (p, obj.value(p), ok),
        _ => (y, v, ok),
    }
}

/// Objective slope from a five-point central difference.
fn difference_slope(obj: &Objective<'_>, y: f64, h: f64) -> Option<f64> {
    let v = [obj.value(y - 2.0 * h), obj.value(y - h), obj.value(y + h), obj.value(y + 2.0 * h)];
    v.iter().all(|t| t.is_finite()).then(|| (v[0] - 8.0 * v[1] + 8.0 * v[2] - v[3]) / (12.0 * h))
}

/// Golden section only locates a smooth minimum to about `√ε`; this finds the
/// sign change of the difference slope next to `y` instead. `None` when no
/// sign change brackets `y` inside `[a, b]` or the stencil leaves the domain.
fn polish(obj: &Objective<'_>, y: f64, a: f64, b: f64) -> Option<f64> {
    let scale = y.abs().max(1.0);
    let h = 1e-3 * scale;
    let w = 1e-6 * scale;
    let (mut lo, mut hi) = (y - w, y + w);
    if lo < a || hi > b {
        return None;
    }
    let (mut slo, mut shi) = (difference_slope(obj, lo, h)?, difference_slope(obj, hi, h)?);
    if !(slo < 0.0 && shi > 0.0) {
        return None;
    }
    // Illinois variant of regula falsi
    let mut side = 0;
    for _ in 0..100 {
        if hi - lo <= 4.0 * f64::EPSILON * scale {
            break;
        }
        let m = (lo * shi - hi * slo) / (shi - slo);
        let m = if m > lo && m < hi { m } else { 0.5 * (lo + hi) };
        let sm = difference_slope(obj, m, h)?;
        if sm == 0.0 {
            return Some(m);
        }
        if sm < 0.0 {
            lo = m;
            slo = sm;
            if side == -1 {
                shi *= 0.5;
            }
            side = -1;
        } else {
            hi = m;
            shi = sm;
            if side == 1 {
                slo *= 0.5;
            }
            side = 1;
        }
    }
    Some(if slo.abs() < shi.abs() { lo } else { hi })
}

fn bisect_slope(obj: &Objective<'_>, mut a: f64, mut b: f64) -> (f64, f64, bool) {
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if !(a < m && m < b) {
            break;
        }
        match obj.slope(m) {
            Some(s) if s < 0.0 => a = m,
            Some(s) if s > 0.0 => b = m,
            _ => {
                a = m;
                b = m;
                break;
            }
        }
    }
    let (va, vb) = (obj.value(a), obj.value(b));
    if va <= vb {
        (a, va, true)
    } else {
        (b, vb, true)
    }
}

fn golden(obj: &Objective<'_>, mut a: f64, mut b: f64, start: f64, xtol: f64) -> (f64, f64, bool) {
    let (orig_a, orig_b) = (a, b);
    let mut best = (start, obj.value(start));
    let mut c = a + GOLDEN * (b - a);
    let mut d = b - GOLDEN * (b - a);
    let mut fc = obj.value(c);
    let mut fd = obj.value(d);
    for _ in 0..200 {
        if b - a <= xtol * (0.5 * (a + b)).abs().max(1.0) {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = a + GOLDEN * (b - a);
            fc = obj.value(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = b - GOLDEN * (b - a);
            fd = obj.value(d);
        }
        for (y, v) in [(c, fc), (d, fd)] {
            if v < best.1 {
                best = (y, v);
            }
        }
    }
    let width = orig_b - orig_a;
    let interior = best.0 - orig_a > 1e-3 * width && orig_b - best.0 > 1e-3 * width;
    (best.0, best.1, interior)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn opts() -> EnvelopeOptions {
        EnvelopeOptions::default()
    }

    fn half_square() -> ScalarFunction {
        ScalarFunction::new(|y| 0.5 * y * y).with_grad(|y| y)
    }

    fn abs() -> ScalarFunction {
        ScalarFunction::new(f64::abs)
    }

    #[test]
    fn lower_envelope_examples() {
        let r = lower_envelope(&half_square(), 1.0, 2.0, &opts()).unwrap();
        assert_relative_eq!(r.value, 1.0, max_relative = 1e-12);
        assert_relative_eq!(r.argopt, 1.0, max_relative = 1e-10);
        let r = lower_envelope(&abs(), 1.0, 0.4, &opts()).unwrap();
        assert_relative_eq!(r.value, 0.08, max_relative = 1e-12);
        assert!(r.argopt.abs() < 1e-8);
        let r = lower_envelope(&abs(), 1.0, 3.0, &opts()).unwrap();
        assert_relative_eq!(r.value, 2.5, max_relative = 1e-12);
        assert_relative_eq!(r.argopt, 2.0, max_relative = 1e-8);
    }

    #[test]
    fn upper_envelope_of_quadratic() {
        let r = upper_envelope(&half_square(), 0.5, 1.0, &opts()).unwrap();
        assert_relative_eq!(r.value, 1.0, max_relative = 1e-12);
        assert_relative_eq!(r.argopt, 2.0, max_relative = 1e-10);
    }

    #[test]
    fn prox_examples() {
        assert!(prox(&abs(), 1.0, -0.3, &opts()).unwrap().abs() < 1e-8);
        assert_relative_eq!(prox(&half_square(), 2.0, 3.0, &opts()).unwrap(), 1.0, max_relative = 1e-10);
    }

    #[test]
    fn envelope_gradient_examples() {
        assert_relative_eq!(envelope_gradient(&half_square(), 1.0, 2.0, &opts()).unwrap(), 1.0, max_relative = 1e-10);
        assert_relative_eq!(envelope_gradient(&abs(), 1.0, 0.4, &opts()).unwrap(), 0.4, max_relative = 1e-7);
    }

    #[test]
    fn symmetric_double_well_has_two_minimizers() {
        let f = ScalarFunction::new(|y: f64| (y * y - 1.0).powi(2));
        let err = envelope_gradient(&f, 1.0, 0.0, &opts()).unwrap_err();
        match err {
            Error::MultiValuedProx { minimizers, .. } => {
                assert_eq!(minimizers.len(), 2);
                assert!(minimizers[0] < 0.0 && minimizers[1] > 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
        // ties resolve toward the smaller point
        assert!(prox(&f, 1.0, 0.0, &opts()).unwrap() < 0.0);
    }

    #[test]
    fn unbounded_upper_envelope_is_an_error() {
        // f grows faster than the quadratic penalty with γ = 1
        let f = ScalarFunction::new(|y| y * y);
        assert!(matches!(upper_envelope(&f, 1.0, 0.0, &opts()), Err(Error::Unbounded { .. })));
    }

    #[test]
    fn bounded_domain_is_respected() {
        let f = ScalarFunction::new(|y| -y).with_domain(-1.0, 1.0).unwrap();
        let r = lower_envelope(&f, 1.0, 0.0, &opts()).unwrap();
        assert_relative_eq!(r.argopt, 1.0, max_relative = 1e-12);
        assert_relative_eq!(r.value, -0.5, max_relative = 1e-12);
    }

    #[test]
    fn rejects_nonpositive_gamma() {
        assert!(matches!(lower_envelope(&abs(), 0.0, 1.0, &opts()), Err(Error::InvalidParameter(_))));
        assert!(matches!(upper_envelope(&abs(), -1.0, 1.0, &opts()), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn grad_check_flags_wrong_derivative() {
        let pts = [-1.0, 0.3, 2.0];
        assert!(half_square().grad_check(&pts, 1e-5).unwrap() < 1e-8);
        let wrong = ScalarFunction::new(|y| 0.5 * y * y).with_grad(|y| 2.0 * y);
        assert!(wrong.grad_check(&pts, 1e-5).unwrap() > 0.5);
        assert!(abs().grad_check(&pts, 1e-5).is_none());
    }
}
