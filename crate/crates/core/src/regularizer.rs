//! The implicit regularizer `φ` whose proximal map is the MMSE denoiser.
//!
//! Two independent evaluation routes are provided:
//!
//! * explicit: `φ(x) = σ²f_Z(y) − ½(y − x)²` with `y = ψ⁻¹(x)`, and `+∞` off the image;
//! * envelope: `φ(x) = σ²·M^{σ²}f_Z(x) − σ²C`, an upper Moreau envelope of `f_Z`
//!   that never inverts the denoiser except to seed the search.
//!
//! `C` is the anchor constant `f_Z(x₀) − M₁φ(x₀)/σ²`. The two routes agree on
//! the image of `ψ`, and `C` does not depend on `x₀`.

use crate::denoiser::{Denoiser, DEFAULT_INVERSION_TOL};
use crate::error::{Error, Result};
use crate::format::fmt17;
use crate::marginal::MarginalModel;
use crate::moreau::{upper_envelope_seeded, EnvelopeOptions, ScalarFunction};
use std::fmt::Write as _;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Explicit,
    Envelope,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiValue {
    pub value: f64,
    pub route: Route,
    pub in_image: bool,
}

/// Outcome of the discrete weak-convexity test on `φ + ½x²`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexityReport {
    pub min_second_difference: f64,
    /// Location of the smallest second difference.
    pub worst_x: f64,
    pub points_used: usize,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub x: f64,
    pub f_x: f64,
    pub f_z: f64,
    pub phi_explicit: f64,
    pub phi_envelope: f64,
    pub in_image: bool,
}

pub struct Regularizer<M> {
    denoiser: Arc<Denoiser<M>>,
    anchor: f64,
    c_anchor: f64,
    envelope: EnvelopeOptions,
    inversion_tol: f64,
}

impl<M: MarginalModel + 'static> Regularizer<M> {
    /// Builds the regularizer with the per-coordinate anchor `x₀`.
    pub fn new(denoiser: Denoiser<M>, anchor: f64) -> Result<Self> {
        Self::with_options(denoiser, anchor, EnvelopeOptions::default())
    }

    pub fn with_options(denoiser: Denoiser<M>, anchor: f64, envelope: EnvelopeOptions) -> Result<Self> {
        let mut r = Self {
            denoiser: Arc::new(denoiser),
            anchor,
            c_anchor: 0.0,
            envelope,
            inversion_tol: DEFAULT_INVERSION_TOL,
        };
        r.c_anchor = r.c_constant_at(anchor)?;
        if !r.c_anchor.is_finite() {
            return Err(Error::Inversion(format!("anchor constant at x0 = {anchor} is {}", r.c_anchor)));
        }
        Ok(r)
    }

    pub fn denoiser(&self) -> &Denoiser<M> {
        &self.denoiser
    }

    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    pub fn envelope_options(&self) -> &EnvelopeOptions {
        &self.envelope
    }

    /// The cached anchor constant.
    pub fn c_constant(&self) -> f64 {
        self.c_anchor
    }

    /// `C = f_Z(x₀) − M₁φ(x₀)/σ²`, with `M₁φ(x₀) = φ(ψ(x₀)) + ½(ψ(x₀) − x₀)²`
    /// because `ψ(x₀)` is the prox point of `φ` at `x₀`.
    pub fn c_constant_at(&self, x0: f64) -> Result<f64> {
        let s2 = self.denoiser.sigma2();
        let p = self.denoiser.scalar_apply(x0);
        let (phi, in_image) = self.scalar_phi_explicit(p)?;
        if !in_image {
            return Err(Error::Inversion(format!("ψ(x0) = {p} for x0 = {x0} could not be inverted")));
        }
        let moreau = phi + 0.5 * (p - x0).powi(2);
        Ok(self.denoiser.model().scalar_f_z(x0) - moreau / s2)
    }

    /// `f_Z` as a function with derivative, for the envelope machinery.
    pub fn f_z_function(&self) -> ScalarFunction {
        let (d1, d2) = (Arc::clone(&self.denoiser), Arc::clone(&self.denoiser));
        ScalarFunction::new(move |y| d1.model().scalar_f_z(y))
            .with_grad(move |y| d2.model().scalar_derivatives(y).grad)
    }

    /// Explicit route at one coordinate; `(+∞, false)` off the image.
    pub fn scalar_phi_explicit(&self, x: f64) -> Result<(f64, bool)> {
        let inv = self.denoiser.scalar_invert(x, self.inversion_tol)?;
        if !inv.in_image {
            return Ok((f64::INFINITY, false));
        }
        let y = inv.preimage;
        let s2 = self.denoiser.sigma2();
        Ok((s2 * self.denoiser.model().scalar_f_z(y) - 0.5 * (y - x).powi(2), true))
    }

    /// Envelope route at one coordinate.
    ///
    /// Where the envelope objective is unbounded and `x` is off the image the
    /// envelope is `+∞`, matching the explicit route; unboundedness on the
    /// image is reported as an error.
    pub fn scalar_phi_envelope(&self, x: f64) -> Result<(f64, bool)> {
        let s2 = self.denoiser.sigma2();
        let inv = self.denoiser.scalar_invert(x, self.inversion_tol)?;
        let seeds: &[f64] = if inv.in_image { &[inv.preimage] } else { &[] };
        match upper_envelope_seeded(&self.f_z_function(), s2, x, seeds, &self.envelope) {
            Ok(env) => Ok((s2 * env.value - s2 * self.c_anchor, inv.in_image)),
            Err(Error::Unbounded { .. }) if !inv.in_image => Ok((f64::INFINITY, false)),
            Err(e) => Err(e),
        }
    }

    /// Envelope objective `σ²f_Z(y) − ½(y − x)² − σ²C` at a point `y` with
    /// `ψ(y) = x`.
    ///
    /// Since `f_Z'' ≤ 1/σ²`, the objective is concave in `y` and any stationary
    /// point is the global maximizer, so this is the envelope route evaluated
    /// at a known optimum. The solver uses it for iterates it produced itself.
    pub fn scalar_phi_envelope_at(&self, x: f64, preimage: f64) -> f64 {
        let s2 = self.denoiser.sigma2();
        s2 * self.denoiser.model().scalar_f_z(preimage) - 0.5 * (preimage - x).powi(2) - s2 * self.c_anchor
    }

    pub fn phi_explicit(&self, x: &[f64]) -> Result<PhiValue> {
        self.denoiser.model().check_input(x)?;
        let mut total = 0.0;
        let mut in_image = true;
        for &xi in x {
            let (v, ok) = self.scalar_phi_explicit(xi)?;
            total += v;
            in_image &= ok;
        }
        Ok(PhiValue { value: total, route: Route::Explicit, in_image })
    }

    pub fn phi_envelope(&self, x: &[f64]) -> Result<PhiValue> {
        self.denoiser.model().check_input(x)?;
        let mut total = 0.0;
        let mut in_image = true;
        for &xi in x {
            let (v, ok) = self.scalar_phi_envelope(xi)?;
            total += v;
            in_image &= ok;
        }
        Ok(PhiValue { value: total, route: Route::Envelope, in_image })
    }

    /// `φ` along one coordinate as a [`ScalarFunction`] carrying values only,
    /// so envelope searches over it never see the inverse denoiser through a
    /// derivative. Off the image the explicit route gives `+∞`.
    pub fn phi_function(&self, route: Route) -> ScalarFunction {
        let this = self.clone_shallow();
        ScalarFunction::new(move |x: f64| {
            let r = match route {
                Route::Explicit => this.scalar_phi_explicit(x),
                Route::Envelope => this.scalar_phi_envelope(x),
            };
            r.map(|(v, _)| v).unwrap_or(f64::NAN)
        })
    }

    /// As [`Self::phi_function`], with the derivative `φ'(x) = ψ⁻¹(x) − x`
    /// (NaN off the image).
    pub fn phi_function_with_grad(&self, route: Route) -> ScalarFunction {
        let this = self.clone_shallow();
        self.phi_function(route).with_grad(move |x: f64| {
            match this.denoiser.scalar_invert(x, this.inversion_tol) {
                Ok(inv) if inv.in_image => inv.preimage - x,
                _ => f64::NAN,
            }
        })
    }

    /// The same regularizer with different envelope search settings; the
    /// anchor constant is reused.
    pub fn with_envelope_options(&self, envelope: EnvelopeOptions) -> Self {
        Self { envelope, ..self.clone_shallow() }
    }

    fn clone_shallow(&self) -> Self {
        Self {
            denoiser: Arc::clone(&self.denoiser),
            anchor: self.anchor,
            c_anchor: self.c_anchor,
            envelope: self.envelope.clone(),
            inversion_tol: self.inversion_tol,
        }
    }

    /// Default certificate grid: `points` uniform points over the central
    /// `±scales` combined standard deviations of `Z`.
    pub fn default_grid(&self, scales: f64, points: usize) -> Vec<f64> {
        let (c, s) = self.denoiser.model().center_and_scale();
        uniform_grid(c - scales * s, c + scales * s, points)
    }

    /// Discrete check that `φ + ½x²` is convex on the in-image part of `grid`.
    pub fn weak_convexity_certificate(&self, grid: &[f64], tol: f64) -> Result<ConvexityReport> {
        if grid.len() < 100 {
            return Err(Error::InvalidParameter(format!("certificate grid needs at least 100 points, got {}", grid.len())));
        }
        let mut values = Vec::with_capacity(grid.len());
        for &x in grid {
            let (v, in_image) = self.scalar_phi_envelope(x)?;
            values.push(if in_image { v + 0.5 * x * x } else { f64::NAN });
        }
        second_difference_certificate(grid, &values, tol)
    }

    /// Rows of the regularizer-recovery curve over `grid`.
    pub fn curve(&self, grid: &[f64]) -> Result<Vec<CurveRow>> {
        let model = self.denoiser.model();
        grid.iter()
            .map(|&x| {
                let (phi_explicit, in_image) = self.scalar_phi_explicit(x)?;
                let (phi_envelope, _) = self.scalar_phi_envelope(x)?;
                Ok(CurveRow {
                    x,
                    f_x: model.scalar_f_x(x),
                    f_z: model.scalar_f_z(x),
                    phi_explicit,
                    phi_envelope,
                    in_image,
                })
            })
            .collect()
    }
}

pub fn uniform_grid(a: f64, b: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.5 * (a + b)],
        n => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Minimum second central difference of `values` over a uniform `grid`;
/// NaN entries are treated as unusable and skipped together with their
/// neighbours' stencils. PASS iff the minimum is at least `−tol`.
pub fn second_difference_certificate(grid: &[f64], values: &[f64], tol: f64) -> Result<ConvexityReport> {
    if grid.len() != values.len() {
        return Err(Error::DimensionMismatch { expected: grid.len(), actual: values.len() });
    }
    let usable = values.iter().filter(|v| v.is_finite()).count();
    if usable < 3 || grid.len() < 3 {
        return Err(Error::InvalidParameter(format!("only {usable} usable grid points; need at least 3")));
    }
    let h = grid[1] - grid[0];
    let uniform = grid.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.abs().max(1.0));
    if !(h > 0.0) || !uniform {
        return Err(Error::InvalidParameter("certificate grid must be increasing and uniformly spaced".into()));
    }
    let mut min = f64::INFINITY;
    let mut worst_x = f64::NAN;
    for i in 1..grid.len() - 1 {
        let (a, b, c) = (values[i - 1], values[i], values[i + 1]);
        if !(a.is_finite() && b.is_finite() && c.is_finite()) {
            continue;
        }
        let d2 = (a - 2.0 * b + c) / (h * h);
        if d2 < min {
            min = d2;
            worst_x = grid[i];
        }
    }
    if min == f64::INFINITY {
        return Err(Error::InvalidParameter("no complete three-point stencil on the grid".into()));
    }
    Ok(ConvexityReport { min_second_difference: min, worst_x, points_used: usable, tol, pass: min >= -tol })
}

/// CSV text of the regularizer-recovery curve.
pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from("x,f_x,f_z,phi_explicit,phi_envelope,in_image\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt17(r.x),
            fmt17(r.f_x),
            fmt17(r.f_z),
            fmt17(r.phi_explicit),
            fmt17(r.phi_envelope),
            r.in_image
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marginal::{Marginal, NoiseModel, TwoPointMarginal};
    use crate::moreau::prox;
    use crate::prior::{MixtureComponent, MixturePrior};
    use approx::assert_relative_eq;

    const HALF_LN_4PI: f64 = 1.2655121234846454;

    fn gaussian() -> Regularizer<Marginal> {
        let prior = MixturePrior::single_gaussian(0.0, 1.0).unwrap();
        let d = Denoiser::new(Marginal::exact(prior, NoiseModel::new(1.0).unwrap()).unwrap());
        Regularizer::new(d, 0.0).unwrap()
    }

    fn g2() -> Regularizer<Marginal> {
        let prior = MixturePrior::scalar(vec![
            MixtureComponent::gaussian(-2.0, 0.5, 0.5).unwrap(),
            MixtureComponent::gaussian(2.0, 0.5, 0.5).unwrap(),
        ])
        .unwrap();
        let d = Denoiser::new(Marginal::exact(prior, NoiseModel::new(1.0).unwrap()).unwrap());
        Regularizer::new(d, 0.0).unwrap()
    }

    fn two_point() -> Regularizer<TwoPointMarginal> {
        let m = TwoPointMarginal::new(1.0, NoiseModel::new(1.0).unwrap()).unwrap();
        Regularizer::new(Denoiser::new(m), 0.0).unwrap()
    }

    #[test]
    fn gaussian_closed_forms() {
        let r = gaussian();
        assert!(r.c_constant().abs() < 1e-12);
        assert!(r.c_constant_at(1.0).unwrap().abs() < 1e-12);
        let e = r.phi_explicit(&[1.0]).unwrap();
        assert!(e.in_image);
        assert_relative_eq!(e.value, 0.5 + HALF_LN_4PI, max_relative = 1e-12);
        let v = r.phi_envelope(&[1.0]).unwrap();
        assert_relative_eq!(v.value, 0.5 + HALF_LN_4PI, max_relative = 1e-12);
    }

    #[test]
    fn two_point_is_infinite_off_image() {
        let r = two_point();
        let e = r.phi_explicit(&[1.5]).unwrap();
        assert!(!e.in_image && e.value == f64::INFINITY);
        let v = r.phi_envelope(&[1.5]).unwrap();
        assert!(!v.in_image && v.value == f64::INFINITY);
        let c0 = r.c_constant();
        assert!((c0 - r.c_constant_at(0.5).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn g2_frozen_value_and_route_agreement() {
        let r = g2();
        let e = r.phi_explicit(&[0.8]).unwrap();
        assert_relative_eq!(e.value, 2.4306309813816510, max_relative = 1e-10);
        for x in uniform_grid(-6.0, 6.0, 61) {
            let (a, _) = r.scalar_phi_explicit(x).unwrap();
            let (b, _) = r.scalar_phi_envelope(x).unwrap();
            assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0), "x = {x}: {a} vs {b}");
        }
    }

    #[test]
    fn envelope_is_symmetric_for_symmetric_prior() {
        let r = g2();
        for x in [0.3, 1.7, 4.0] {
            let (a, _) = r.scalar_phi_envelope(x).unwrap();
            let (b, _) = r.scalar_phi_envelope(-x).unwrap();
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn certificates() {
        let r = gaussian();
        let grid = r.default_grid(6.0, 401);
        let rep = r.weak_convexity_certificate(&grid, 1e-5).unwrap();
        assert!(rep.pass);
        assert!((rep.min_second_difference - 2.0).abs() < 1e-5);

        let grid = uniform_grid(-3.0, 3.0, 200);
        let control: Vec<f64> = grid.iter().map(|x| -x * x + 0.5 * x * x).collect();
        let rep = second_difference_certificate(&grid, &control, 1e-5).unwrap();
        assert!(!rep.pass);

        assert!(r.weak_convexity_certificate(&grid[..50], 1e-5).is_err());
    }

    #[test]
    fn prox_of_phi_is_the_denoiser() {
        let r = gaussian();
        let phi = r.phi_function(Route::Explicit);
        let p = prox(&phi, 1.0, 2.0, r.envelope_options()).unwrap();
        assert_relative_eq!(p, 1.0, max_relative = 1e-9);
    }

    #[test]
    fn curve_csv_has_header_and_rows() {
        let r = two_point();
        let rows = r.curve(&[-0.5, 1.5]).unwrap();
        let csv = curve_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "x,f_x,f_z,phi_explicit,phi_envelope,in_image");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].ends_with(",inf,inf,false"));
    }
}
