//! Reference priors used by the tests, the certificate suite and the examples.

use crate::error::Result;
use crate::marginal::{Backend, Marginal, MarginalModel, NoiseModel, TwoPointMarginal};
use crate::prior::{MixtureComponent, MixturePrior};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fixture {
    /// `N(0, 1)`.
    Gaussian,
    /// `0.5·N(−2, 0.5²) + 0.5·N(2, 0.5²)`.
    G2,
    /// Laplace with location 0 and diversity 1.
    Laplace,
    /// `½δ₋₁ + ½δ₁`, whose denoiser has the bounded image `(−1, 1)`.
    TwoPoint,
}

impl Fixture {
    pub const ALL: [Fixture; 4] = [Fixture::Gaussian, Fixture::G2, Fixture::Laplace, Fixture::TwoPoint];

    pub fn name(self) -> &'static str {
        match self {
            Fixture::Gaussian => "gaussian",
            Fixture::G2 => "g2",
            Fixture::Laplace => "laplace",
            Fixture::TwoPoint => "two_point",
        }
    }

    /// The mixture prior, or `None` for the atomic two-point fixture.
    pub fn prior(self) -> Option<MixturePrior> {
        match self {
            Fixture::Gaussian => Some(MixturePrior::single_gaussian(0.0, 1.0).expect("valid fixture")),
            Fixture::G2 => Some(g2_prior()),
            Fixture::Laplace => Some(MixturePrior::single_laplace(0.0, 1.0).expect("valid fixture")),
            Fixture::TwoPoint => None,
        }
    }

    /// The image of the denoiser when it is a bounded interval.
    pub fn bounded_image(self) -> Option<(f64, f64)> {
        match self {
            Fixture::TwoPoint => Some((-1.0, 1.0)),
            _ => None,
        }
    }

    pub fn marginal(self, sigma2: f64) -> Result<Arc<dyn MarginalModel>> {
        let noise = NoiseModel::new(sigma2)?;
        Ok(match self.prior() {
            Some(p) => Arc::new(Marginal::new(p, noise, Backend::Exact)?),
            None => Arc::new(TwoPointMarginal::new(1.0, noise)?),
        })
    }
}

pub fn g2_prior() -> MixturePrior {
    MixturePrior::scalar(vec![
        MixtureComponent::gaussian(-2.0, 0.5, 0.5).expect("valid fixture"),
        MixtureComponent::gaussian(2.0, 0.5, 0.5).expect("valid fixture"),
    ])
    .expect("valid fixture")
}
