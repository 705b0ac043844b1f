//! Experiment configuration files.
//!
//! Configs are TOML with one table per block. Unknown keys, duplicate keys and
//! type mismatches are errors; the TOML parser reports them with line and
//! column. A minimal deblurring config:
//!
//! ```toml
//! experiment = "deblur"
//! seed = 7
//!
//! [prior]
//! kind = ["gaussian", "gaussian"]
//! weights = [0.5, 0.5]
//! locations = [-2.0, 2.0]
//! scales = [0.5, 0.5]          # std dev for gaussian, diversity b for laplace
//!
//! [noise]
//! sigma2 = 0.04                # variance of the denoiser's Gaussian noise
//!
//! [operator]
//! kind = "conv2d"
//! height = 32
//! width = 32
//! kernel_size = 3
//! kernel_variance = 1.0
//! measurement_sigma2 = 0.04
//! ```

use crate::deblur::{Lambda, TruthModel};
use crate::error::{Error, Result};
use crate::marginal::{Backend, DEFAULT_HERMITE_ORDER};
use crate::operators::{gaussian_kernel_2d, LinearOperator};
use crate::pnp::{Init, SolverConfig};
use crate::prior::{ComponentKind, MixtureComponent, MixturePrior};
use serde::Deserialize;
use std::path::{Path, PathBuf};

pub const DEFAULT_GRID_POINTS: usize = 401;
pub const DEFAULT_GRID_SCALES: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    RegularizerRecovery,
    DenoiserCheck,
    Deblur,
    CertificateSuite,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::RegularizerRecovery => "regularizer-recovery",
            Experiment::DenoiserCheck => "denoiser-check",
            Experiment::Deblur => "deblur",
            Experiment::CertificateSuite => "certificate-suite",
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: Option<Experiment>,
    seed: Option<u64>,
    output: Option<String>,
    prior: Option<RawPrior>,
    noise: Option<RawNoise>,
    operator: Option<RawOperator>,
    solver: Option<RawSolver>,
    grid: Option<RawGrid>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPrior {
    kind: Vec<String>,
    weights: Vec<f64>,
    locations: Vec<f64>,
    scales: Vec<f64>,
    backend: Option<String>,
    hermite_order: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNoise {
    sigma2: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOperator {
    kind: String,
    n: Option<usize>,
    height: Option<usize>,
    width: Option<usize>,
    kernel: Option<Vec<f64>>,
    kernel_rows: Option<Vec<Vec<f64>>>,
    kernel_size: Option<usize>,
    kernel_variance: Option<f64>,
    matrix_file: Option<String>,
    measurement_sigma2: f64,
    truth: Option<String>,
    truth_block: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum RawLambda {
    Value(f64),
    Word(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    max_iters: Option<usize>,
    init: Option<String>,
    lambda: Option<RawLambda>,
    record_objective: Option<bool>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    range: Option<[f64; 2]>,
    points: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct PriorConfig {
    pub prior: MixturePrior,
    pub backend: Backend,
}

#[derive(Debug, Clone)]
pub struct OperatorConfig {
    pub op: LinearOperator,
    pub measurement_sigma2: f64,
    pub truth: TruthModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    /// `None` means `±6` combined scales around the marginal's center.
    pub range: Option<(f64, f64)>,
    pub points: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { range: None, points: DEFAULT_GRID_POINTS }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub prior: Option<PriorConfig>,
    /// Denoiser noise variance.
    pub sigma2: Option<f64>,
    pub operator: Option<OperatorConfig>,
    pub solver: SolverConfig,
    pub lambda: Lambda,
    pub grid: GridConfig,
}

impl ExperimentConfig {
    /// The config used by `certificate-suite` when no file is given.
    pub fn bare(experiment: Experiment) -> Self {
        Self {
            experiment,
            seed: 0,
            output: None,
            prior: None,
            sigma2: None,
            operator: None,
            solver: SolverConfig::default(),
            lambda: Lambda::Auto,
            grid: GridConfig::default(),
        }
    }
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{field}: {msg}"))
}

fn missing(section: &str, experiment: Experiment) -> Error {
    Error::Config(format!("missing [{section}] section, required by {}", experiment.name()))
}

/// Parses and validates `text` for `experiment`. Relative file paths inside the
/// config resolve against `base_dir`.
pub fn parse_config(text: &str, experiment: Experiment, base_dir: &Path) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
    if let Some(declared) = raw.experiment {
        if declared != experiment {
            return Err(invalid(
                "experiment",
                format!("config declares {:?} but the {} command was run", declared.name(), experiment.name()),
            ));
        }
    }
    let needs_prior = experiment != Experiment::CertificateSuite;
    let prior = match (raw.prior, needs_prior) {
        (Some(p), _) => Some(prior_config(p)?),
        (None, true) => return Err(missing("prior", experiment)),
        (None, false) => None,
    };
    let sigma2 = match (raw.noise, needs_prior) {
        (Some(n), _) => {
            if !(n.sigma2 > 0.0 && n.sigma2.is_finite()) {
                return Err(invalid("noise.sigma2", format!("must be positive and finite, got {}", n.sigma2)));
            }
            Some(n.sigma2)
        }
        (None, true) => return Err(missing("noise", experiment)),
        (None, false) => None,
    };
    let operator = match (raw.operator, experiment == Experiment::Deblur) {
        (Some(o), _) => Some(operator_config(o, base_dir)?),
        (None, true) => return Err(missing("operator", experiment)),
        (None, false) => None,
    };
    let (solver, lambda) = solver_config(raw.solver, raw.seed.unwrap_or(0))?;
    let grid = grid_config(raw.grid)?;
    Ok(ExperimentConfig {
        experiment,
        seed: raw.seed.unwrap_or(0),
        output: raw.output.map(PathBuf::from),
        prior,
        sigma2,
        operator,
        solver,
        lambda,
        grid,
    })
}

fn prior_config(p: RawPrior) -> Result<PriorConfig> {
    let n = p.kind.len();
    if n == 0 {
        return Err(invalid("prior.kind", "at least one component is required"));
    }
    for (field, len) in [("prior.weights", p.weights.len()), ("prior.locations", p.locations.len()), ("prior.scales", p.scales.len())] {
        if len != n {
            return Err(invalid(field, format!("has {len} entries but prior.kind has {n}")));
        }
    }
    let mut components = Vec::with_capacity(n);
    for i in 0..n {
        let kind = match p.kind[i].as_str() {
            "gaussian" => ComponentKind::Gaussian,
            "laplace" => ComponentKind::Laplace,
            other => return Err(invalid("prior.kind", format!("unknown component kind {other:?} (expected \"gaussian\" or \"laplace\")"))),
        };
        let c = MixtureComponent::new(kind, p.locations[i], p.scales[i], p.weights[i])
            .map_err(|e| invalid(&format!("prior component {i}"), e))?;
        components.push(c);
    }
    let prior = MixturePrior::scalar(components).map_err(|e| invalid("prior.weights", e))?;
    let backend = match p.backend.as_deref() {
        None | Some("exact") => {
            if p.hermite_order.is_some() {
                return Err(invalid("prior.hermite_order", "only valid with backend = \"gauss-hermite\""));
            }
            Backend::Exact
        }
        Some("gauss-hermite") => Backend::GaussHermite(p.hermite_order.unwrap_or(DEFAULT_HERMITE_ORDER)),
        Some(other) => return Err(invalid("prior.backend", format!("unknown backend {other:?} (expected \"exact\" or \"gauss-hermite\")"))),
    };
    Ok(PriorConfig { prior, backend })
}

fn operator_config(o: RawOperator, base_dir: &Path) -> Result<OperatorConfig> {
    let need = |v: Option<usize>, field: &str| v.ok_or_else(|| invalid(field, format!("required for operator.kind = {:?}", o.kind)));
    let op = match o.kind.as_str() {
        "identity" => LinearOperator::identity(need(o.n, "operator.n")?),
        "conv1d" => {
            let kernel = o.kernel.clone().ok_or_else(|| invalid("operator.kernel", "required for operator.kind = \"conv1d\""))?;
            LinearOperator::conv1d(kernel, need(o.n, "operator.n")?)
        }
        "conv2d" => {
            let (h, w) = (need(o.height, "operator.height")?, need(o.width, "operator.width")?);
            match (&o.kernel_rows, o.kernel_size, o.kernel_variance) {
                (Some(rows), None, None) => {
                    let kw = rows.first().map_or(0, Vec::len);
                    if rows.iter().any(|r| r.len() != kw) {
                        return Err(invalid("operator.kernel_rows", "rows must have equal length"));
                    }
                    LinearOperator::conv2d(rows.concat(), rows.len(), kw, h, w)
                }
                (None, Some(size), Some(var)) => gaussian_kernel_2d(size, var)
                    .and_then(|k| LinearOperator::conv2d(k, size, size, h, w)),
                _ => {
                    return Err(invalid(
                        "operator.kernel_rows",
                        "conv2d needs either kernel_rows or both kernel_size and kernel_variance",
                    ))
                }
            }
        }
        "dense" => {
            let file = o.matrix_file.as_ref().ok_or_else(|| invalid("operator.matrix_file", "required for operator.kind = \"dense\""))?;
            LinearOperator::dense_from_file(&base_dir.join(file))
        }
        other => {
            return Err(invalid(
                "operator.kind",
                format!("unknown operator {other:?} (expected identity, conv1d, conv2d or dense)"),
            ))
        }
    }
    .map_err(|e| invalid("operator", e))?;
    if !(o.measurement_sigma2 >= 0.0 && o.measurement_sigma2.is_finite()) {
        return Err(invalid("operator.measurement_sigma2", format!("must be non-negative and finite, got {}", o.measurement_sigma2)));
    }
    let truth = match (o.truth.as_deref(), o.truth_block) {
        (None | Some("iid"), None) => TruthModel::Iid,
        (Some("iid"), Some(_)) => return Err(invalid("operator.truth_block", "only valid with truth = \"blocks\"")),
        (Some("blocks"), b) => {
            let b = b.unwrap_or(2);
            if b == 0 {
                return Err(invalid("operator.truth_block", "must be positive"));
            }
            TruthModel::Blocks(b)
        }
        (None, Some(_)) => return Err(invalid("operator.truth_block", "only valid with truth = \"blocks\"")),
        (Some(other), _) => return Err(invalid("operator.truth", format!("unknown truth model {other:?} (expected \"iid\" or \"blocks\")"))),
    };
    Ok(OperatorConfig { op, measurement_sigma2: o.measurement_sigma2, truth })
}

fn solver_config(s: Option<RawSolver>, seed: u64) -> Result<(SolverConfig, Lambda)> {
    let mut cfg = SolverConfig { seed, ..SolverConfig::default() };
    let Some(s) = s else { return Ok((cfg, Lambda::Auto)) };
    if let Some(m) = s.max_iters {
        if m == 0 {
            return Err(invalid("solver.max_iters", "must be positive"));
        }
        cfg.max_iters = m;
    }
    if let Some(init) = s.init {
        cfg.init = match init.as_str() {
            "zeros" => Init::Zeros,
            "observation" => Init::Observation,
            "adjoint" => Init::AdjointObservation,
            other => return Err(invalid("solver.init", format!("unknown init {other:?} (expected zeros, observation or adjoint)"))),
        };
    }
    if let Some(r) = s.record_objective {
        cfg.record_objective = r;
    }
    let lambda = match s.lambda {
        None => Lambda::Auto,
        Some(RawLambda::Word(w)) if w == "auto" => Lambda::Auto,
        Some(RawLambda::Word(w)) => return Err(invalid("solver.lambda", format!("expected \"auto\" or a number, got {w:?}"))),
        Some(RawLambda::Value(v)) if v > 0.0 && v.is_finite() => Lambda::Fixed(v),
        Some(RawLambda::Value(v)) => return Err(invalid("solver.lambda", format!("must be positive and finite, got {v}"))),
    };
    Ok((cfg, lambda))
}

fn grid_config(g: Option<RawGrid>) -> Result<GridConfig> {
    let Some(g) = g else { return Ok(GridConfig::default()) };
    let points = g.points.unwrap_or(DEFAULT_GRID_POINTS);
    if points < 3 {
        return Err(invalid("grid.points", format!("need at least 3, got {points}")));
    }
    let range = match g.range {
        Some([a, b]) if a < b && a.is_finite() && b.is_finite() => Some((a, b)),
        Some([a, b]) => return Err(invalid("grid.range", format!("need finite lo < hi, got [{a}, {b}]"))),
        None => None,
    };
    Ok(GridConfig { range, points })
}
