//! Synthetic deblurring problems: a signal drawn from a separable prior,
//! observed through a linear operator with additive Gaussian noise, and the
//! matching denoiser, regularizer and fidelity term.

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::marginal::{Backend, Marginal, NoiseModel};
use crate::moreau::EnvelopeOptions;
use crate::operators::{Fidelity, LinearOperator, OperatorKind};
use crate::pnp::psnr;
use crate::prior::{DimensionMode, MixturePrior};
use crate::regularizer::Regularizer;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lambda {
    /// `λ = 0.99/‖A‖²`.
    Auto,
    Fixed(f64),
}

/// How the ground-truth signal is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruthModel {
    /// Every pixel independently from the prior.
    Iid,
    /// Piecewise constant on `size × size` blocks, one prior draw per block, so
    /// each pixel still has the prior as its marginal.
    Blocks(usize),
}

#[derive(Debug, Clone)]
pub struct DeblurSpec {
    /// Scalar mixture applied independently to every pixel.
    pub prior: MixturePrior,
    pub op: LinearOperator,
    pub measurement_sigma2: f64,
    pub denoiser_sigma2: f64,
    pub backend: Backend,
    pub lambda: Lambda,
    pub truth: TruthModel,
    pub seed: u64,
    pub envelope: EnvelopeOptions,
}

pub struct DeblurProblem {
    pub truth: Vec<f64>,
    pub observation: Vec<f64>,
    pub fidelity: Fidelity,
    pub regularizer: Regularizer<Marginal>,
}

impl DeblurProblem {
    /// Draws the ground truth from `prior` with `seed` and the measurement
    /// noise from an independent stream of the same seed.
    pub fn generate(spec: &DeblurSpec) -> Result<Self> {
        if spec.prior.mode() != DimensionMode::Scalar {
            return Err(Error::InvalidParameter("deblurring expects a scalar prior applied per pixel".into()));
        }
        let n = spec.op.input_len();
        let noise = NoiseModel::new(spec.measurement_sigma2)?;
        let truth = draw_truth(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(1);
        let normal = Normal::new(0.0, noise.sigma()).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let mut observation = spec.op.apply(&truth)?;
        observation.iter_mut().for_each(|v| *v += normal.sample(&mut rng));

        let fidelity = match spec.lambda {
            Lambda::Auto => Fidelity::auto_normalized(spec.op.clone(), observation.clone())?,
            Lambda::Fixed(l) => Fidelity::new(spec.op.clone(), observation.clone(), l)?,
        };
        let marginal = Marginal::new(
            spec.prior.separable(n)?,
            NoiseModel::new(spec.denoiser_sigma2)?,
            spec.backend,
        )?;
        let regularizer = Regularizer::with_options(Denoiser::new(marginal), 0.0, spec.envelope.clone())?;
        Ok(Self { truth, observation, fidelity, regularizer })
    }

    /// PSNR of the raw observation; only meaningful when `A` is square.
    pub fn observation_psnr(&self) -> Result<f64> {
        psnr(&self.observation, &self.truth)
    }
}

/// Image shape implied by the operator: `h × w` for 2-D convolutions, a
/// single row otherwise.
pub fn image_shape(op: &LinearOperator) -> (usize, usize) {
    match op.kind() {
        OperatorKind::Conv2D { h, w, .. } => (*h, *w),
        _ => (1, op.input_len()),
    }
}

fn draw_truth(spec: &DeblurSpec) -> Result<Vec<f64>> {
    let n = spec.op.input_len();
    match spec.truth {
        TruthModel::Iid => Ok(spec.prior.sample(n, spec.seed)?.into_iter().map(|v| v[0]).collect()),
        TruthModel::Blocks(0) => Err(Error::InvalidParameter("truth block size must be positive".into())),
        TruthModel::Blocks(b) => {
            let (h, w) = image_shape(&spec.op);
            let (bh, bw) = (h.div_ceil(b), w.div_ceil(b));
            let coarse = spec.prior.sample(bh * bw, spec.seed)?;
            Ok((0..n).map(|i| coarse[(i / w / b) * bw + (i % w) / b][0]).collect())
        }
    }
}
