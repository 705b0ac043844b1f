//! The invariant suites behind the `certificate-suite` command.
//!
//! Every suite runs on fixed fixtures and fixed search settings so that the
//! rendered report depends on the seed alone.

use crate::deblur::{DeblurProblem, DeblurSpec, Lambda, TruthModel};
use crate::denoiser::{Denoiser, DEFAULT_INVERSION_TOL};
use crate::error::Result;
use crate::fixtures::{g2_prior, Fixture};
use crate::format::fmt17;
use crate::marginal::{Backend, MarginalModel};
use crate::moreau::{envelope_gradient, lower_envelope, prox, upper_envelope, EnvelopeOptions, ScalarFunction};
use crate::operators::{gaussian_kernel_2d, LinearOperator};
use crate::pnp::{descent_check, rate_certificate, run, SolverConfig};
use crate::regularizer::{second_difference_certificate, uniform_grid, Regularizer, Route};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::sync::Arc;

pub const CERTIFICATE_TOL: f64 = 1e-5;
pub const DEBLUR_HORIZON: usize = 500;
pub const DEBLUR_FSTAR_ITERS: usize = 4 * DEBLUR_HORIZON;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOutcome {
    pub name: &'static str,
    pub pass: bool,
    /// `(key, value)` pairs in a fixed order.
    pub metrics: Vec<(String, String)>,
}

impl SuiteOutcome {
    fn new(name: &'static str) -> Self {
        Self { name, pass: true, metrics: Vec::new() }
    }

    fn metric(&mut self, key: impl Into<String>, value: f64) {
        self.metrics.push((key.into(), fmt17(value)));
    }

    fn note(&mut self, key: impl Into<String>, value: impl ToString) {
        self.metrics.push((key.into(), value.to_string()));
    }

    fn require(&mut self, key: impl Into<String>, ok: bool) {
        self.pass &= ok;
        self.note(key, if ok { "PASS" } else { "FAIL" });
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateReport {
    pub seed: u64,
    pub suites: Vec<SuiteOutcome>,
}

impl CertificateReport {
    pub fn pass(&self) -> bool {
        self.suites.iter().all(|s| s.pass)
    }

    /// `key = value` lines; byte-identical for a given seed.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "seed = {}", self.seed);
        for s in &self.suites {
            let _ = writeln!(out, "suite.{}.status = {}", s.name, if s.pass { "PASS" } else { "FAIL" });
            for (k, v) in &s.metrics {
                let _ = writeln!(out, "suite.{}.{k} = {v}", s.name);
            }
        }
        let _ = writeln!(out, "overall = {}", if self.pass() { "PASS" } else { "FAIL" });
        out
    }
}

type Suite = fn(u64) -> Result<SuiteOutcome>;

pub const SUITES: [(&str, Suite); 8] = [
    ("tweedie_oracle", tweedie_oracle),
    ("route_agreement", route_agreement),
    ("weak_convexity", weak_convexity),
    ("sandwich", sandwich),
    ("envelope_gradient", envelope_gradient_identity),
    ("moreau_identity", moreau_identity),
    ("convergence", convergence),
    ("prox_consistency", prox_consistency),
];

/// Runs every suite on its own thread; the report keeps the fixed suite order.
/// A suite that errors is reported as FAIL with the message.
pub fn run_all(seed: u64) -> CertificateReport {
    let suites = std::thread::scope(|scope| {
        let handles: Vec<_> = SUITES.iter().map(|(name, suite)| (*name, scope.spawn(move || suite(seed)))).collect();
        handles
            .into_iter()
            .map(|(name, h)| {
                let result = h.join().unwrap_or_else(|_| Err(crate::Error::Trace(format!("suite {name} panicked"))));
                result.unwrap_or_else(|e| {
                    let mut s = SuiteOutcome::new(name);
                    s.pass = false;
                    s.note("error", e.to_string().replace('\n', " "));
                    s
                })
            })
            .collect()
    });
    CertificateReport { seed, suites }
}

fn regularizer(fixture: Fixture, sigma2: f64) -> Result<Regularizer<Arc<dyn MarginalModel>>> {
    Regularizer::new(Denoiser::new(fixture.marginal(sigma2)?), 0.0)
}

/// Certificate grid: 401 points over `±6` combined scales, or inside
/// `(−0.99, 0.99)` for the bounded-image fixture.
pub fn certificate_grid(fixture: Fixture, reg: &Regularizer<Arc<dyn MarginalModel>>) -> Vec<f64> {
    match fixture.bounded_image() {
        Some((a, b)) => uniform_grid(0.99 * a, 0.99 * b, 401),
        None => reg.default_grid(6.0, 401),
    }
}

fn key(x: f64) -> String {
    format!("{x}").replace('.', "_")
}

/// `ψ` from Tweedie's formula against the direct posterior mean.
pub fn tweedie_oracle(_seed: u64) -> Result<SuiteOutcome> {
    let mut s = SuiteOutcome::new("tweedie_oracle");
    for fixture in [Fixture::Gaussian, Fixture::G2, Fixture::Laplace] {
        let tol = if fixture == Fixture::Laplace { 1e-6 } else { 1e-8 };
        for sigma2 in [0.25, 1.0] {
            let d = Denoiser::new(fixture.marginal(sigma2)?);
            let (c, sc) = d.model().center_and_scale();
            let mut worst: f64 = 0.0;
            for z in uniform_grid(c - 8.0 * sc, c + 8.0 * sc, 400) {
                worst = worst.max((d.scalar_apply(z) - d.model().scalar_posterior_mean(z)?).abs());
            }
            let k = format!("{}.sigma2_{}", fixture.name(), key(sigma2));
            s.metric(format!("{k}.max_abs_err"), worst);
            s.require(k, worst <= tol);
        }
    }
    Ok(s)
}

/// Explicit and envelope routes of `φ` on the image.
pub fn route_agreement(_seed: u64) -> Result<SuiteOutcome> {
    let mut s = SuiteOutcome::new("route_agreement");
    for fixture in Fixture::ALL {
        let reg = regularizer(fixture, 1.0)?;
        let mut worst: f64 = 0.0;
        let mut used = 0;
        for x in reg.default_grid(6.0, 401) {
            let (a, in_image) = reg.scalar_phi_explicit(x)?;
            if !in_image {
                continue;
            }
            let (b, _) = reg.scalar_phi_envelope(x)?;
            worst = worst.max((a - b).abs() / a.abs().max(1.0));
            used += 1;
        }
        s.note(format!("{}.in_image_points", fixture.name()), used);
        s.metric(format!("{}.max_rel_diff", fixture.name()), worst);
        s.require(fixture.name(), used > 0 && worst <= 1e-6);
    }
    Ok(s)
}

/// Second differences of `φ + ½x²`, plus a control that must fail.
pub fn weak_convexity(_seed: u64) -> Result<SuiteOutcome> {
    let mut s = SuiteOutcome::new("weak_convexity");
    for fixture in Fixture::ALL {
        let reg = regularizer(fixture, 1.0)?;
        let rep = reg.weak_convexity_certificate(&certificate_grid(fixture, &reg), CERTIFICATE_TOL)?;
        s.metric(format!("{}.min_second_difference", fixture.name()), rep.min_second_difference);
        s.require(fixture.name(), rep.pass);
    }
    let grid = uniform_grid(-3.0, 3.0, 401);
    let control: Vec<f64> = grid.iter().map(|x| -x * x + 0.5 * x * x).collect();
    let rep = second_difference_certificate(&grid, &control, CERTIFICATE_TOL)?;
    s.metric("control_neg_square.min_second_difference", rep.min_second_difference);
    s.require("control_neg_square_fails", !rep.pass);
    Ok(s)
}

fn test_functions() -> [(&'static str, ScalarFunction); 3] {
    [
        ("half_square", ScalarFunction::new(|y| 0.5 * y * y)),
        ("abs", ScalarFunction::new(f64::abs)),
        ("cos3", ScalarFunction::new(|y: f64| (3.0 * y).cos())),
    ]
}

fn sandwich_options() -> EnvelopeOptions {
    EnvelopeOptions { grid_points: 801, radius: Some(10.0), ..EnvelopeOptions::default() }
}

/// `M¹M₁f ≤ f`, with equality exactly for 1-weakly convex `f`.
pub fn sandwich(_seed: u64) -> Result<SuiteOutcome> {
    let mut s = SuiteOutcome::new("sandwich");
    let opts = sandwich_options();
    for (name, f) in test_functions() {
        let inner = {
            let (f, opts) = (f.clone(), opts.clone());
            ScalarFunction::new(move |y| lower_envelope(&f, 1.0, y, &opts).map(|r| r.value).unwrap_or(f64::NAN))
        };
        let mut max_excess = f64::NEG_INFINITY;
        let mut max_gap: f64 = 0.0;
        for x in uniform_grid(-3.0, 3.0, 61) {
            let outer = upper_envelope(&inner, 1.0, x, &opts)?.value;
            let diff = outer - f.eval(x);
            max_excess = max_excess.max(diff);
            max_gap = max_gap.max(-diff);
        }
        s.metric(format!("{name}.max_excess"), max_excess);
        s.metric(format!("{name}.max_gap"), max_gap);
        s.require(format!("{name}.below"), max_excess <= 1e-7);
        match name {
            "half_square" => s.require("half_square.equal", max_gap <= 1e-7),
            "cos3" => s.require("cos3.strict_gap", max_gap > 0.1),
            _ => {}
        }
    }
    Ok(s)
}

/// `∇M₁f(x) = x − prox_f(x)` against central differences of the envelope.
pub fn envelope_gradient_identity(seed: u64) -> Result<SuiteOutcome> {
    let mut s = SuiteOutcome::new("envelope_gradient");
    let mut cases: Vec<(String, ScalarFunction)> =
        test_functions().into_iter().map(|(n, f)| (n.to_string(), f)).collect();
    for fixture in Fixture::ALL {
        let reg = regularizer(fixture, 1.0)?;
        let mut phi = reg.phi_function(Route::Explicit);
        if let Some((a, b)) = fixture.bounded_image() {
            phi = phi.with_domain(a, b)?;
        }
        cases.push((format!("phi_{}", fixture.name()), phi));
    }
    let opts = EnvelopeOptions::default();
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (name, f) in cases {
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let x: f64 = rng.gen_range(-3.0..3.0);
            let g = envelope_gradient(&f, 1.0, x, &opts)?;
            let fd = (lower_envelope(&f, 1.0, x + h, &opts)?.value - lower_envelope(&f, 1.0, x - h, &opts)?.value)
                / (2.0 * h);
            worst = worst.max((g - fd).abs() / fd.abs().max(f64::MIN_POSITIVE));
        }
        s.metric(format!("{name}.max_rel_err"), worst);
        s.require(name, worst <= 1e-5);
    }
    Ok(s)
}

/// `f_Z = M₁φ/σ² + C` on the certificate grid, and anchor independence of `C`.
pub fn moreau_identity(_seed: u64) -> Result<SuiteOutcome> {
    let mut s = SuiteOutcome::new("moreau_identity");
    let opts = EnvelopeOptions { grid_points: 801, ..EnvelopeOptions::default() };
    for fixture in Fixture::ALL {
        let reg = regularizer(fixture, 1.0)?;
        let s2 = reg.denoiser().sigma2();
        let c = reg.c_constant();
        let mut phi = reg.phi_function(Route::Explicit);
        if let Some((a, b)) = fixture.bounded_image() {
            phi = phi.with_domain(a, b)?;
        }
        let mut worst: f64 = 0.0;
        for x in certificate_grid(fixture, &reg) {
            let m = lower_envelope(&phi, 1.0, x, &opts)?.value;
            worst = worst.max((m / s2 + c - reg.denoiser().model().scalar_f_z(x)).abs());
        }
        let (_, sc) = reg.denoiser().model().center_and_scale();
        let anchors = match fixture.bounded_image() {
            Some(_) => [0.0, 0.5, -0.7],
            None => [0.0, 0.5 * sc, -1.3 * sc],
        };
        let cs: Vec<f64> = anchors.iter().map(|&a| reg.c_constant_at(a)).collect::<Result<_>>()?;
        let spread = cs.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v)) - cs.iter().fold(f64::INFINITY, |m, v| m.min(*v));
        let name = fixture.name();
        s.metric(format!("{name}.max_abs_err"), worst);
        s.metric(format!("{name}.c_anchor"), c);
        s.metric(format!("{name}.c_spread"), spread);
        s.require(format!("{name}.identity"), worst <= 1e-6);
        s.require(format!("{name}.anchor_independence"), spread <= 1e-6);
    }
    Ok(s)
}

/// The reference deblurring problem: separable G₂ prior, 32×32 piecewise
/// constant truth on 2×2 blocks, 3×3 unit-mass Gaussian blur of variance 1,
/// measurement and denoiser noise variance 0.04, automatic `λ`.
pub fn reference_deblur(seed: u64) -> Result<DeblurProblem> {
    DeblurProblem::generate(&DeblurSpec {
        prior: g2_prior(),
        op: LinearOperator::conv2d(gaussian_kernel_2d(3, 1.0)?, 3, 3, 32, 32)?,
        measurement_sigma2: 0.04,
        denoiser_sigma2: 0.04,
        backend: Backend::Exact,
        lambda: Lambda::Auto,
        truth: TruthModel::Blocks(2),
        seed,
        envelope: EnvelopeOptions::default(),
    })
}

/// Descent, rate bound, PSNR gain and residual decrease of PnP-PGD on the
/// reference deblurring problem.
pub fn convergence(seed: u64) -> Result<SuiteOutcome> {
    let mut s = SuiteOutcome::new("convergence");
    let p = reference_deblur(seed)?;
    let cfg = SolverConfig { max_iters: DEBLUR_FSTAR_ITERS, seed, ..SolverConfig::default() };
    let trace = run(&p.regularizer, &p.fidelity, &cfg, Some(&p.truth))?;
    let rows = &trace.records[..DEBLUR_HORIZON];
    let slacks = descent_check(&trace)?;
    let worst_slack = rows
        .iter()
        .zip(&slacks)
        .map(|(r, sl)| sl / r.objective.abs().max(1.0))
        .fold(f64::INFINITY, f64::min);
    let cert = rate_certificate(&trace, DEBLUR_HORIZON)?;
    let obs = p.observation_psnr()?;
    let rec = trace.records[DEBLUR_HORIZON].psnr.unwrap_or(f64::NAN);
    let drop = rows[0].best_residual / rows[DEBLUR_HORIZON - 1].best_residual;

    let contained = p
        .regularizer
        .denoiser()
        .invert(&trace.final_iterate, DEFAULT_INVERSION_TOL)?
        .in_image;

    s.note("iterations", DEBLUR_FSTAR_ITERS);
    s.note("horizon", DEBLUR_HORIZON);
    s.metric("lipschitz", trace.lipschitz);
    s.metric("rate_constant", cert.c);
    s.metric("f1", cert.f1);
    s.metric("fstar_estimate", cert.fstar_estimate);
    s.metric("min_relative_slack", worst_slack);
    s.note("rate_violations", cert.violations.len());
    s.metric("observation_psnr", obs);
    s.metric("reconstruction_psnr", rec);
    s.metric("best_residual_first", rows[0].best_residual);
    s.metric("best_residual_last", rows[DEBLUR_HORIZON - 1].best_residual);
    s.require("descent", worst_slack >= -1e-9);
    s.require("rate_bound", cert.violations.is_empty());
    s.require("psnr_gain", rec - obs >= 2.0);
    s.require("residual_drop", drop >= 10.0);
    s.require("image_containment", contained);
    Ok(s)
}

/// `prox_φ = ψ` with `φ` evaluated through the envelope route.
pub fn prox_consistency(seed: u64) -> Result<SuiteOutcome> {
    let mut s = SuiteOutcome::new("prox_consistency");
    let inner = EnvelopeOptions { grid_points: 401, ..EnvelopeOptions::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    for fixture in Fixture::ALL {
        let reg = regularizer(fixture, 1.0)?.with_envelope_options(inner.clone());
        let (c, sc) = reg.denoiser().model().center_and_scale();
        let mut phi = reg.phi_function(Route::Envelope);
        if let Some((a, b)) = fixture.bounded_image() {
            phi = phi.with_domain(a, b)?;
        }
        let outer = EnvelopeOptions { grid_points: 401, radius: Some(4.0 * sc.max(1.0)), ..EnvelopeOptions::default() };
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let z = c + sc * rng.gen_range(-3.0..3.0);
            worst = worst.max((prox(&phi, 1.0, z, &outer)? - reg.denoiser().scalar_apply(z)).abs());
        }
        s.metric(format!("{}.max_abs_err", fixture.name()), worst);
        s.require(fixture.name(), worst <= 1e-6);
    }
    Ok(s)
}
