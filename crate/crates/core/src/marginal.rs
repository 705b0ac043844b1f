//! The noisy marginal `p_Z = p_X ∗ N(0, σ²)` and its negative log-density
//! `f_Z = −ln p_Z` with first and second derivatives.
//!
//! Everything the denoiser, envelope and regularizer code needs from a prior
//! goes through [`MarginalModel`], which works one coordinate at a time; vector
//! operations sum or map over coordinates of a separable model.

use crate::error::{Error, Result};
use crate::prior::{ComponentKind, DimensionMode, MixtureComponent, MixturePrior};
use crate::quadrature::{adaptive_gauss_kronrod, CompositeLegendre, HermiteRule};
use crate::special::{erfc, erfcx, log_add_exp, log_normal_pdf, log_sum_exp, LN_SQRT_2PI};
use std::f64::consts::SQRT_2;

/// Gaussian corruption `Z = X + ε`, `ε ~ N(0, σ²I)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    sigma2: f64,
}

impl NoiseModel {
    pub fn new(sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise variance must be finite and > 0, got {sigma2}")));
        }
        Ok(Self { sigma2 })
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }
}

/// `f_Z`, `f_Z'` and `f_Z''` at one scalar point, from a single evaluation pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FzDerivatives {
    pub value: f64,
    pub grad: f64,
    pub hess: f64,
}

/// A scalar noisy-marginal model, applied per coordinate in separable mode.
pub trait MarginalModel: Send + Sync {
    fn sigma2(&self) -> f64;

    fn mode(&self) -> DimensionMode;

    fn scalar_derivatives(&self, z: f64) -> FzDerivatives;

    fn scalar_f_z(&self, z: f64) -> f64 {
        self.scalar_derivatives(z).value
    }

    /// `E[X | Z = z]` evaluated directly from the prior, without the score.
    fn scalar_posterior_mean(&self, z: f64) -> Result<f64>;

    /// Center and spread of `Z` per coordinate, used to lay out grids and brackets.
    fn center_and_scale(&self) -> (f64, f64);

    /// `f_X = −ln p_X` of one coordinate; `+∞` off the support of atomic priors.
    fn scalar_f_x(&self, x: f64) -> f64;

    fn dim(&self) -> usize {
        self.mode().len()
    }

    fn check_input(&self, z: &[f64]) -> Result<()> {
        self.mode().check(z.len())?;
        match z.iter().find(|v| !v.is_finite()) {
            Some(v) => Err(Error::NonFinite(format!("marginal argument contains {v}"))),
            None => Ok(()),
        }
    }

    fn f_z(&self, z: &[f64]) -> Result<f64> {
        self.check_input(z)?;
        Ok(z.iter().map(|&zi| self.scalar_f_z(zi)).sum())
    }

    fn grad_f_z(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_input(z)?;
        Ok(z.iter().map(|&zi| self.scalar_derivatives(zi).grad).collect())
    }

    /// Diagonal of the Hessian (the Hessian is diagonal for separable models).
    fn hess_f_z(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_input(z)?;
        Ok(z.iter().map(|&zi| self.scalar_derivatives(zi).hess).collect())
    }
}

impl<T: MarginalModel + ?Sized> MarginalModel for std::sync::Arc<T> {
    fn sigma2(&self) -> f64 {
        (**self).sigma2()
    }
    fn mode(&self) -> DimensionMode {
        (**self).mode()
    }
    fn scalar_derivatives(&self, z: f64) -> FzDerivatives {
        (**self).scalar_derivatives(z)
    }
    fn scalar_posterior_mean(&self, z: f64) -> Result<f64> {
        (**self).scalar_posterior_mean(z)
    }
    fn center_and_scale(&self) -> (f64, f64) {
        (**self).center_and_scale()
    }
    fn scalar_f_x(&self, x: f64) -> f64 {
        (**self).scalar_f_x(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    /// Closed-form convolution of every component with the noise kernel.
    Exact,
    /// Gauss–Hermite quadrature of `∫ p_X(z − σu) φ(u) du` with the given order.
    GaussHermite(usize),
}

pub const DEFAULT_HERMITE_ORDER: usize = 200;
const MIN_HERMITE_ORDER: usize = 64;
/// Beyond this many combined scales from every component the quadrature
/// backend switches to the per-component closed form.
const FAR_TAIL_SCALES: f64 = 12.0;

/// Log-density of one component convolved with `N(0, σ²)`, plus the first two
/// derivatives of that log-density.
fn component_log_marginal(c: &MixtureComponent, z: f64, sigma2: f64) -> (f64, f64, f64) {
    let d = z - c.location;
    match c.kind {
        ComponentKind::Gaussian => {
            let v = c.scale * c.scale + sigma2;
            (log_normal_pdf(z, c.location, v), -d / v, -1.0 / v)
        }
        ComponentKind::Laplace => {
            // p(z) = (T₋ + T₊)/4b with
            //   T∓ = exp(σ²/2b² ∓ d/b) · erfc((σ²/b ∓ d)/(σ√2))
            let b = c.scale;
            let sigma = sigma2.sqrt();
            let log_t = |sign: f64| {
                let a = (sigma2 / b + sign * d) / (sigma * SQRT_2);
                if a >= 0.0 {
                    -0.5 * d * d / sigma2 + erfcx(a).ln()
                } else {
                    0.5 * sigma2 / (b * b) + sign * d / b + erfc(a).ln()
                }
            };
            let (lm, lp) = (log_t(-1.0), log_t(1.0));
            let log_sum = log_add_exp(lm, lp);
            let value = log_sum - (4.0 * b).ln();
            let grad = (0.5 * (lp - lm)).tanh() / b;
            let log_phi = -0.5 * d * d / sigma2 - sigma.ln() - LN_SQRT_2PI;
            let curvature = 1.0 / (b * b) - 4.0 / b * (log_phi - log_sum).exp();
            (value, grad, curvature - grad * grad)
        }
    }
}

/// The marginal of a [`MixturePrior`] under Gaussian noise.
#[derive(Debug, Clone)]
pub struct Marginal {
    prior: MixturePrior,
    noise: NoiseModel,
    backend: Backend,
    rule: Option<HermiteRule>,
}

impl Marginal {
    pub fn new(prior: MixturePrior, noise: NoiseModel, backend: Backend) -> Result<Self> {
        let rule = match backend {
            Backend::Exact => None,
            Backend::GaussHermite(order) => {
                if order < MIN_HERMITE_ORDER {
                    return Err(Error::Backend(format!(
                        "Gauss-Hermite order must be at least {MIN_HERMITE_ORDER}, got {order}"
                    )));
                }
                Some(HermiteRule::new(order)?)
            }
        };
        Ok(Self { prior, noise, backend, rule })
    }

    pub fn exact(prior: MixturePrior, noise: NoiseModel) -> Result<Self> {
        Self::new(prior, noise, Backend::Exact)
    }

    pub fn prior(&self) -> &MixturePrior {
        &self.prior
    }

    pub fn noise(&self) -> NoiseModel {
        self.noise
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    fn exact_derivatives(&self, z: f64) -> FzDerivatives {
        let sigma2 = self.noise.sigma2;
        let parts: Vec<(f64, f64, f64)> = self
            .prior
            .components()
            .iter()
            .map(|c| {
                let (l, g, h) = component_log_marginal(c, z, sigma2);
                (c.weight.ln() + l, g, h)
            })
            .collect();
        combine_log_terms(&parts)
    }

    fn hermite_derivatives(&self, z: f64, rule: &HermiteRule) -> FzDerivatives {
        let sigma2 = self.noise.sigma2;
        let far = self.prior.components().iter().all(|c| {
            (z - c.location).abs() > FAR_TAIL_SCALES * (c.variance() + sigma2).sqrt()
        });
        if far {
            return self.exact_derivatives(z);
        }
        let sigma = self.noise.sigma();
        // Each component's integral is taken with nodes centered on that
        // component's Gaussian-approximate posterior for u:
        //   u = m + τv,  m = σ(z − μ)/(v_k + σ²),  τ² = v_k/(v_k + σ²).
        let mut nodes = Vec::with_capacity(rule.order() * self.prior.components().len());
        let mut terms = Vec::with_capacity(nodes.capacity());
        for c in self.prior.components() {
            let vk = c.variance();
            let m = sigma * (z - c.location) / (vk + sigma2);
            let tau = (vk / (vk + sigma2)).sqrt();
            for (&v, &lw) in rule.nodes.iter().zip(&rule.log_weights) {
                let u = m + tau * v;
                nodes.push(u);
                terms.push(
                    c.weight.ln() + tau.ln() + lw + c.log_pdf(z - sigma * u) - 0.5 * u * u + 0.5 * v * v,
                );
            }
        }
        let log_p = log_sum_exp(&terms);
        // Differentiating through the Gaussian kernel instead of the prior:
        //   f' = E_r[u]/σ,  f'' = (1 − Var_r[u])/σ²,
        // with r the normalized quadrature responsibilities.
        let mut mean = 0.0;
        for (&t, &u) in terms.iter().zip(&nodes) {
            mean += (t - log_p).exp() * u;
        }
        let mut var = 0.0;
        for (&t, &u) in terms.iter().zip(&nodes) {
            var += (t - log_p).exp() * (u - mean) * (u - mean);
        }
        FzDerivatives {
            value: -log_p,
            grad: mean / sigma,
            hess: (1.0 - var) / sigma2,
        }
    }

    /// Breakpoints for the oracle integrals over the clean variable `x`: kinks,
    /// the observation, and a window wide enough that the cut tails are negligible.
    fn oracle_breakpoints(&self, z: f64) -> Vec<f64> {
        let sigma = self.noise.sigma();
        let widest = self
            .prior
            .components()
            .iter()
            .map(|c| c.scale)
            .fold(sigma, f64::max);
        let mut pts = vec![];
        for j in -8..=8 {
            pts.push(z + j as f64 * sigma);
        }
        for c in self.prior.components() {
            for j in -8..=8 {
                pts.push(c.location + j as f64 * c.scale);
            }
        }
        let lo = pts.iter().copied().fold(f64::INFINITY, f64::min) - 50.0 * widest;
        let hi = pts.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 50.0 * widest;
        pts.push(lo);
        pts.push(hi);
        pts.sort_by(f64::total_cmp);
        pts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        pts
    }

    /// Log of the unnormalized posterior `p_X(x) φ_σ(z − x)`, shifted so its
    /// maximum over the breakpoints is zero.
    fn oracle_log_integrand<'a>(&'a self, z: f64, pts: &[f64]) -> impl Fn(f64) -> f64 + 'a {
        let sigma2 = self.noise.sigma2;
        let raw = move |x: f64| self.prior.log_pdf_scalar(x) - 0.5 * (z - x) * (z - x) / sigma2;
        let shift = pts.iter().map(|&x| raw(x)).fold(f64::NEG_INFINITY, f64::max);
        move |x| raw(x) - shift
    }

    fn gaussian_posterior_mean(&self, z: f64) -> f64 {
        let sigma2 = self.noise.sigma2;
        let logs: Vec<f64> = self
            .prior
            .components()
            .iter()
            .map(|c| c.weight.ln() + log_normal_pdf(z, c.location, c.scale * c.scale + sigma2))
            .collect();
        let norm = log_sum_exp(&logs);
        self.prior
            .components()
            .iter()
            .zip(&logs)
            .map(|(c, &l)| {
                let s2 = c.scale * c.scale;
                (l - norm).exp() * (sigma2 * c.location + s2 * z) / (s2 + sigma2)
            })
            .sum()
    }

    /// Posterior mean by adaptive Gauss–Kronrod quadrature of
    /// `∫ x p(z|x) p_X(x) dx / ∫ p(z|x) p_X(x) dx`.
    pub fn posterior_mean_kronrod(&self, z: f64) -> Result<f64> {
        let pts = self.oracle_breakpoints(z);
        let log_w = self.oracle_log_integrand(z, &pts);
        let quad = |f: &dyn Fn(f64) -> f64, what: &str| {
            adaptive_gauss_kronrod(f, &pts, 1e-300, 1e-13, 20_000)
                .map(|o| o.value)
                .map_err(|e| Error::Quadrature(format!("posterior {what} at z = {z}: {e}")))
        };
        let mass = quad(&|x| log_w(x).exp(), "mass")?;
        let first = quad(&|x| x * log_w(x).exp(), "first moment")?;
        Ok(first / mass)
    }

    /// Same ratio with a fixed composite Gauss–Legendre rule (different node placement).
    pub fn posterior_mean_legendre(&self, z: f64) -> Result<f64> {
        let pts = self.oracle_breakpoints(z);
        let log_w = self.oracle_log_integrand(z, &pts);
        let rule = CompositeLegendre::new(20, 8)?;
        let mass = rule.integrate(|x| log_w(x).exp(), &pts);
        let first = rule.integrate(|x| x * log_w(x).exp(), &pts);
        Ok(first / mass)
    }
}

/// Combines per-component `(ln wₖpₖ, (ln pₖ)', (ln pₖ)'')` into `f_Z` derivatives.
fn combine_log_terms(parts: &[(f64, f64, f64)]) -> FzDerivatives {
    let logs: Vec<f64> = parts.iter().map(|p| p.0).collect();
    let log_p = log_sum_exp(&logs);
    let mut g = 0.0;
    let mut h = 0.0;
    for &(l, gk, hk) in parts {
        let r = (l - log_p).exp();
        g += r * gk;
        h += r * hk;
    }
    let mut spread = 0.0;
    for &(l, gk, _) in parts {
        spread += (l - log_p).exp() * (gk - g) * (gk - g);
    }
    // (ln p)'' = E_r[ℓ''] + Var_r[ℓ']
    FzDerivatives { value: -log_p, grad: -g, hess: -(h + spread) }
}

impl MarginalModel for Marginal {
    fn sigma2(&self) -> f64 {
        self.noise.sigma2
    }

    fn mode(&self) -> DimensionMode {
        self.prior.mode()
    }

    fn scalar_derivatives(&self, z: f64) -> FzDerivatives {
        match &self.rule {
            None => self.exact_derivatives(z),
            Some(rule) => self.hermite_derivatives(z, rule),
        }
    }

    fn scalar_posterior_mean(&self, z: f64) -> Result<f64> {
        if self.prior.all_gaussian() {
            Ok(self.gaussian_posterior_mean(z))
        } else {
            self.posterior_mean_kronrod(z)
        }
    }

    fn center_and_scale(&self) -> (f64, f64) {
        (self.prior.mean(), (self.prior.variance() + self.noise.sigma2).sqrt())
    }

    fn scalar_f_x(&self, x: f64) -> f64 {
        -self.prior.log_pdf_scalar(x)
    }
}

/// Symmetric two-atom prior `½δ₋ₐ + ½δₐ` under noise `σ²`, in closed form:
/// `f_Z(z) = (z² + a²)/2σ² − ln cosh(az/σ²) + ½ln(2πσ²)` and `ψ(z) = a·tanh(az/σ²)`.
///
/// The denoiser's image is the open interval `(−a, a)`, which makes this the
/// reference model for off-image behaviour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPointMarginal {
    atom: f64,
    noise: NoiseModel,
}

impl TwoPointMarginal {
    pub fn new(atom: f64, noise: NoiseModel) -> Result<Self> {
        if !(atom > 0.0 && atom.is_finite()) {
            return Err(Error::InvalidParameter(format!("atom location must be > 0, got {atom}")));
        }
        Ok(Self { atom, noise })
    }

    pub fn atom(&self) -> f64 {
        self.atom
    }
}

impl MarginalModel for TwoPointMarginal {
    fn sigma2(&self) -> f64 {
        self.noise.sigma2
    }

    fn mode(&self) -> DimensionMode {
        DimensionMode::Scalar
    }

    fn scalar_derivatives(&self, z: f64) -> FzDerivatives {
        let s2 = self.noise.sigma2;
        let a = self.atom;
        let t = a * z / s2;
        let th = t.tanh();
        let sech2 = 1.0 - th * th;
        FzDerivatives {
            value: 0.5 * (z * z + a * a) / s2 - crate::special::ln_cosh(t) + 0.5 * s2.ln() + LN_SQRT_2PI,
            grad: z / s2 - a / s2 * th,
            hess: 1.0 / s2 - (a / s2).powi(2) * sech2,
        }
    }

    fn scalar_posterior_mean(&self, z: f64) -> Result<f64> {
        // responsibilities of the two atoms: e^{±az/σ²} / (e^{az/σ²} + e^{−az/σ²})
        let t = self.atom * z / self.noise.sigma2;
        let log_plus = t;
        let log_minus = -t;
        let norm = log_add_exp(log_plus, log_minus);
        Ok(self.atom * ((log_plus - norm).exp() - (log_minus - norm).exp()))
    }

    fn center_and_scale(&self) -> (f64, f64) {
        (0.0, (self.atom * self.atom + self.noise.sigma2).sqrt())
    }

    fn scalar_f_x(&self, x: f64) -> f64 {
        if x.abs() == self.atom {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        }
    }
}
