//! Finite Gaussian/Laplace mixture priors.
//!
//! Scales follow one convention throughout: a Gaussian component's `scale` is its
//! standard deviation, a Laplace component's `scale` is its diversity `b`
//! (density `exp(-|x - μ|/b) / 2b`). Neither is a variance.

use crate::error::{Error, Result};
use crate::special::{log_laplace_pdf, log_normal_pdf, log_sum_exp, normal_cdf};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComponentKind {
    Gaussian,
    Laplace,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureComponent {
    pub kind: ComponentKind,
    pub location: f64,
    pub scale: f64,
    pub weight: f64,
}

impl MixtureComponent {
    pub fn new(kind: ComponentKind, location: f64, scale: f64, weight: f64) -> Result<Self> {
        if !location.is_finite() {
            return Err(Error::InvalidParameter(format!("component location {location} is not finite")));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("component scale must be > 0, got {scale}")));
        }
        if !(weight > 0.0 && weight <= 1.0) {
            return Err(Error::InvalidParameter(format!("component weight must lie in (0, 1], got {weight}")));
        }
        Ok(Self { kind, location, scale, weight })
    }

    pub fn gaussian(location: f64, std_dev: f64, weight: f64) -> Result<Self> {
        Self::new(ComponentKind::Gaussian, location, std_dev, weight)
    }

    pub fn laplace(location: f64, diversity: f64, weight: f64) -> Result<Self> {
        Self::new(ComponentKind::Laplace, location, diversity, weight)
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        match self.kind {
            ComponentKind::Gaussian => log_normal_pdf(x, self.location, self.scale * self.scale),
            ComponentKind::Laplace => log_laplace_pdf(x, self.location, self.scale),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let d = x - self.location;
        match self.kind {
            ComponentKind::Gaussian => normal_cdf(d / self.scale),
            ComponentKind::Laplace => {
                if d < 0.0 {
                    0.5 * (d / self.scale).exp()
                } else {
                    1.0 - 0.5 * (-d / self.scale).exp()
                }
            }
        }
    }

    pub fn variance(&self) -> f64 {
        match self.kind {
            ComponentKind::Gaussian => self.scale * self.scale,
            ComponentKind::Laplace => 2.0 * self.scale * self.scale,
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind {
            ComponentKind::Gaussian => {
                let n: f64 = StandardNormal.sample(rng);
                self.location + self.scale * n
            }
            ComponentKind::Laplace => {
                let e: f64 = Exp1.sample(rng);
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                self.location + sign * self.scale * e
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DimensionMode {
    Scalar,
    /// The scalar mixture applied independently to each of `n` coordinates.
    Separable(usize),
}

impl DimensionMode {
    pub fn len(&self) -> usize {
        match *self {
            DimensionMode::Scalar => 1,
            DimensionMode::Separable(n) => n,
        }
    }

    pub fn check(&self, actual: usize) -> Result<()> {
        let expected = self.len();
        if expected == actual {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected, actual })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixturePrior {
    components: Vec<MixtureComponent>,
    mode: DimensionMode,
}

impl MixturePrior {
    pub fn new(components: Vec<MixtureComponent>, mode: DimensionMode) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidParameter("a mixture needs at least one component".into()));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("mixture weights sum to {total}, expected 1")));
        }
        if let DimensionMode::Separable(0) = mode {
            return Err(Error::InvalidParameter("separable dimension must be positive".into()));
        }
        Ok(Self { components, mode })
    }

    pub fn scalar(components: Vec<MixtureComponent>) -> Result<Self> {
        Self::new(components, DimensionMode::Scalar)
    }

    pub fn single_gaussian(mean: f64, std_dev: f64) -> Result<Self> {
        Self::scalar(vec![MixtureComponent::gaussian(mean, std_dev, 1.0)?])
    }

    pub fn single_laplace(location: f64, diversity: f64) -> Result<Self> {
        Self::scalar(vec![MixtureComponent::laplace(location, diversity, 1.0)?])
    }

    /// Same mixture, applied per coordinate in `n` dimensions.
    pub fn separable(&self, n: usize) -> Result<Self> {
        Self::new(self.components.clone(), DimensionMode::Separable(n))
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn mode(&self) -> DimensionMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.mode.len()
    }

    pub fn all_gaussian(&self) -> bool {
        self.components.iter().all(|c| c.kind == ComponentKind::Gaussian)
    }

    /// Per-coordinate mean.
    pub fn mean(&self) -> f64 {
        self.components.iter().map(|c| c.weight * c.location).sum()
    }

    /// Per-coordinate variance.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.components
            .iter()
            .map(|c| c.weight * (c.variance() + (c.location - m).powi(2)))
            .sum()
    }

    /// `ln p_X(x)` for a single coordinate.
    pub fn log_pdf_scalar(&self, x: f64) -> f64 {
        let terms: Vec<f64> = self
            .components
            .iter()
            .map(|c| c.weight.ln() + c.log_pdf(x))
            .collect();
        log_sum_exp(&terms)
    }

    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        self.mode.check(x.len())?;
        if let Some(v) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("log_pdf argument contains {v}")));
        }
        Ok(x.iter().map(|&xi| self.log_pdf_scalar(xi)).sum())
    }

    pub fn cdf_scalar(&self, x: f64) -> f64 {
        self.components.iter().map(|c| c.weight * c.cdf(x)).sum()
    }

    /// `n_samples` i.i.d. draws, each a vector of the prior's dimension.
    pub fn sample(&self, n_samples: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        if n_samples == 0 {
            return Err(Error::InvalidParameter("n_samples must be at least 1".into()));
        }
        let mut sampler = Sampler::new(self, seed);
        let dim = self.dim();
        Ok((0..n_samples)
            .map(|_| (0..dim).map(|_| sampler.draw()).collect())
            .collect())
    }
}

/// Stateful scalar sampler; owns its RNG, one per thread.
pub struct Sampler<'a> {
    prior: &'a MixturePrior,
    index: WeightedIndex<f64>,
    rng: ChaCha8Rng,
}

impl<'a> Sampler<'a> {
    pub fn new(prior: &'a MixturePrior, seed: u64) -> Self {
        let index = WeightedIndex::new(prior.components.iter().map(|c| c.weight))
            .expect("validated mixture weights are positive");
        Self { prior, index, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn draw(&mut self) -> f64 {
        let k = self.index.sample(&mut self.rng);
        self.prior.components[k].draw(&mut self.rng)
    }
}
