//! The MMSE denoiser `ψ(z) = E[X | Z = z] = z − σ²∇f_Z(z)`, its Jacobian and
//! its inverse on the image.

use crate::error::{Error, Result};
use crate::marginal::MarginalModel;

pub const DEFAULT_INVERSION_TOL: f64 = 1e-10;
const MAX_NEWTON_ITERS: usize = 100;
const INITIAL_BRACKET_SIGMAS: f64 = 10.0;
const BRACKET_HORIZON_SIGMAS: f64 = 1e6;

/// Result of solving `ψ(y) = x`.
#[derive(Debug, Clone, PartialEq)]
pub struct InversionResult {
    pub preimage: Vec<f64>,
    /// Euclidean norm of `ψ(preimage) − x`.
    pub residual: f64,
    /// Every coordinate was bracketed and solved to tolerance.
    pub in_image: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarInversion {
    pub preimage: f64,
    pub residual: f64,
    pub in_image: bool,
}

#[derive(Debug, Clone)]
pub struct Denoiser<M> {
    model: M,
}

impl<M: MarginalModel> Denoiser<M> {
    pub fn new(model: M) -> Self {
        Self { model }
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn sigma2(&self) -> f64 {
        self.model.sigma2()
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn scalar_apply(&self, z: f64) -> f64 {
        z - self.model.sigma2() * self.model.scalar_derivatives(z).grad
    }

    /// `ψ'(z) = 1 − σ²f_Z''(z)`, the posterior variance over `σ²`.
    pub fn scalar_jacobian(&self, z: f64) -> f64 {
        1.0 - self.model.sigma2() * self.model.scalar_derivatives(z).hess
    }

    pub fn apply(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.model.check_input(z)?;
        Ok(z.iter().map(|&zi| self.scalar_apply(zi)).collect())
    }

    /// Posterior mean computed from the prior directly; an oracle for [`Self::apply`].
    pub fn posterior_mean(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.model.check_input(z)?;
        z.iter().map(|&zi| self.model.scalar_posterior_mean(zi)).collect()
    }

    /// Diagonal of the Jacobian.
    pub fn jacobian(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.model.check_input(z)?;
        Ok(z.iter().map(|&zi| self.scalar_jacobian(zi)).collect())
    }

    pub fn invert(&self, x: &[f64], tol: f64) -> Result<InversionResult> {
        self.model.check_input(x)?;
        let mut preimage = Vec::with_capacity(x.len());
        let mut sq = 0.0;
        let mut in_image = true;
        for &xi in x {
            let s = self.scalar_invert(xi, tol)?;
            preimage.push(s.preimage);
            sq += s.residual * s.residual;
            in_image &= s.in_image;
        }
        Ok(InversionResult { preimage, residual: sq.sqrt(), in_image })
    }

    /// Solves `ψ(y) = x` by Newton's method safeguarded with bisection on a
    /// bracket found by geometric expansion around `x`.
    pub fn scalar_invert(&self, x: f64, tol: f64) -> Result<ScalarInversion> {
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(Error::InvalidParameter(format!("inversion tolerance must be > 0, got {tol}")));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite(format!("inversion target {x}")));
        }
        let sigma = self.model.sigma2().sqrt();
        let g = |y: f64| self.scalar_apply(y) - x;

        let mut width = INITIAL_BRACKET_SIGMAS * sigma;
        let horizon = BRACKET_HORIZON_SIGMAS * sigma;
        let (mut lo, mut g_lo) = (x - width, g(x - width));
        while g_lo > 0.0 {
            width *= 2.0;
            if width > horizon {
                return Ok(ScalarInversion { preimage: lo, residual: g_lo.abs(), in_image: false });
            }
            lo = x - width;
            g_lo = g(lo);
        }
        width = INITIAL_BRACKET_SIGMAS * sigma;
        let (mut hi, mut g_hi) = (x + width, g(x + width));
        while g_hi < 0.0 {
            width *= 2.0;
            if width > horizon {
                return Ok(ScalarInversion { preimage: hi, residual: g_hi.abs(), in_image: false });
            }
            hi = x + width;
            g_hi = g(hi);
        }

        let mut y = x.clamp(lo, hi);
        let mut best = (f64::INFINITY, y);
        for _ in 0..MAX_NEWTON_ITERS {
            let d = self.model.scalar_derivatives(y);
            let s2 = self.model.sigma2();
            let gy = y - s2 * d.grad - x;
            if gy.abs() < best.0 {
                best = (gy.abs(), y);
            }
            if gy == 0.0 {
                break;
            }
            if gy < 0.0 {
                lo = y;
            } else {
                hi = y;
            }
            let slope = 1.0 - s2 * d.hess;
            let newton = y - gy / slope;
            let next = if slope > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            // polish well past the tolerance; stop once steps hit rounding level
            if (next - y).abs() <= 4.0 * f64::EPSILON * y.abs().max(1.0) || !(lo < hi) {
                break;
            }
            if gy.abs() <= 1e-3 * tol && (next - y).abs() <= 1e-12 * y.abs().max(1.0) {
                break;
            }
            y = next;
        }
        let (residual, preimage) = best;
        Ok(ScalarInversion { preimage, residual, in_image: residual <= tol })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marginal::{Backend, Marginal, NoiseModel, TwoPointMarginal};
    use crate::prior::{MixtureComponent, MixturePrior};
    use approx::assert_relative_eq;

    fn gaussian(s2: f64) -> Denoiser<Marginal> {
        let prior = MixturePrior::single_gaussian(0.0, 1.0).unwrap();
        Denoiser::new(Marginal::exact(prior, NoiseModel::new(s2).unwrap()).unwrap())
    }

    fn two_point() -> Denoiser<TwoPointMarginal> {
        Denoiser::new(TwoPointMarginal::new(1.0, NoiseModel::new(1.0).unwrap()).unwrap())
    }

    fn g2(s2: f64) -> Denoiser<Marginal> {
        let prior = MixturePrior::scalar(vec![
            MixtureComponent::gaussian(-2.0, 0.5, 0.5).unwrap(),
            MixtureComponent::gaussian(2.0, 0.5, 0.5).unwrap(),
        ])
        .unwrap();
        Denoiser::new(Marginal::exact(prior, NoiseModel::new(s2).unwrap()).unwrap())
    }

    #[test]
    fn gaussian_prior_halves_input() {
        let d = gaussian(1.0);
        assert_relative_eq!(d.apply(&[2.0]).unwrap()[0], 1.0, max_relative = 1e-15);
        assert_relative_eq!(d.posterior_mean(&[-4.0]).unwrap()[0], -2.0, max_relative = 1e-15);
        assert_relative_eq!(d.jacobian(&[0.3]).unwrap()[0], 0.5, max_relative = 1e-15);
        let inv = d.invert(&[1.0], DEFAULT_INVERSION_TOL).unwrap();
        assert!(inv.in_image);
        assert_relative_eq!(inv.preimage[0], 2.0, max_relative = 1e-12);
    }

    #[test]
    fn two_point_is_tanh() {
        let d = two_point();
        assert_relative_eq!(d.scalar_apply(2.0), 2f64.tanh(), max_relative = 1e-15);
        assert_relative_eq!(d.scalar_jacobian(0.0), 1.0, max_relative = 1e-15);
        let inv = d.scalar_invert(0.9640275800758169, DEFAULT_INVERSION_TOL).unwrap();
        assert!(inv.in_image);
        assert_relative_eq!(inv.preimage, 2.0, max_relative = 1e-9);
        let out = d.scalar_invert(1.5, DEFAULT_INVERSION_TOL).unwrap();
        assert!(!out.in_image);
    }

    #[test]
    fn g2_matches_frozen_posterior_mean() {
        let d = g2(1.0);
        assert_relative_eq!(d.scalar_apply(1.0), 1.6746696870503541, max_relative = 1e-12);
    }

    #[test]
    fn rejects_bad_tolerance_and_dimension() {
        let d = gaussian(1.0);
        assert!(matches!(d.invert(&[0.0], 0.0), Err(Error::InvalidParameter(_))));
        assert!(matches!(d.apply(&[0.0, 1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(d.apply(&[f64::NAN]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let d = g2(0.25);
        let h = 1e-5;
        for i in 0..20 {
            let z = -5.0 + 0.5 * i as f64 + 0.123;
            let fd = (d.scalar_apply(z + h) - d.scalar_apply(z - h)) / (2.0 * h);
            assert_relative_eq!(d.scalar_jacobian(z), fd, max_relative = 1e-6);
        }
    }

    #[test]
    fn inversion_round_trips() {
        let laplace = MixturePrior::single_laplace(0.0, 1.0).unwrap();
        let noise = NoiseModel::new(0.25).unwrap();
        let dl = Denoiser::new(Marginal::new(laplace, noise, Backend::Exact).unwrap());
        let dg = g2(0.25);
        for i in 0..400 {
            let z = -8.0 + 16.0 * i as f64 / 399.0;
            for (psi, inv) in [
                (dg.scalar_apply(z), dg.scalar_invert(dg.scalar_apply(z), DEFAULT_INVERSION_TOL).unwrap()),
                (dl.scalar_apply(z), dl.scalar_invert(dl.scalar_apply(z), DEFAULT_INVERSION_TOL).unwrap()),
            ] {
                assert!(inv.in_image, "z = {z}, ψ = {psi}");
                assert!((inv.preimage - z).abs() < 1e-8, "z = {z}: got {}", inv.preimage);
            }
        }
    }

    #[test]
    fn separable_invert_reports_worst_coordinate() {
        let prior = MixturePrior::single_gaussian(0.0, 1.0).unwrap().separable(3).unwrap();
        let d = Denoiser::new(Marginal::exact(prior, NoiseModel::new(1.0).unwrap()).unwrap());
        let inv = d.invert(&[0.5, -1.0, 3.0], DEFAULT_INVERSION_TOL).unwrap();
        assert!(inv.in_image);
        for (y, want) in inv.preimage.iter().zip([1.0, -2.0, 6.0]) {
            assert_relative_eq!(*y, want, max_relative = 1e-12);
        }
    }
}
