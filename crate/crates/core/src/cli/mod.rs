//! Config-driven experiments behind the `mmse-pnp` binary.

pub mod config;

use crate::certificates::run_all;
use crate::deblur::{image_shape, DeblurProblem, DeblurSpec};
use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::format::fmt17;
use crate::marginal::{Marginal, MarginalModel, NoiseModel};
use crate::moreau::EnvelopeOptions;
use crate::pnp::{run, trace_csv};
use crate::regularizer::{curve_csv, uniform_grid, Regularizer};
use config::{ExperimentConfig, GridConfig, PriorConfig};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub use config::{parse_config, Experiment};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

/// What an experiment wrote and whether its checks passed.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub files: Vec<PathBuf>,
    pub pass: bool,
    /// One-line human summary for stdout.
    pub message: String,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        if self.pass {
            EXIT_OK
        } else {
            EXIT_FAILURE
        }
    }
}

pub fn exit_code_for(err: &Error) -> i32 {
    if err.is_validation() {
        EXIT_VALIDATION
    } else {
        EXIT_FAILURE
    }
}

/// `<prefix>_<suffix>`.
pub fn output_path(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = OsString::from(prefix.as_os_str());
    s.push("_");
    s.push(suffix);
    PathBuf::from(s)
}

fn write(files: &mut Vec<PathBuf>, prefix: &Path, suffix: &str, contents: &str) -> Result<()> {
    let path = output_path(prefix, suffix);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(&path, contents)?;
    files.push(path);
    Ok(())
}

pub fn run_experiment(cfg: &ExperimentConfig, prefix: &Path) -> Result<RunSummary> {
    match cfg.experiment {
        Experiment::RegularizerRecovery => regularizer_recovery(cfg, prefix),
        Experiment::DenoiserCheck => denoiser_check(cfg, prefix),
        Experiment::Deblur => deblur(cfg, prefix),
        Experiment::CertificateSuite => certificate_suite(cfg, prefix),
    }
}

fn scalar_marginal(cfg: &ExperimentConfig) -> Result<Marginal> {
    let PriorConfig { prior, backend } = cfg.prior.clone().ok_or_else(|| Error::Config("missing [prior] section".into()))?;
    let sigma2 = cfg.sigma2.ok_or_else(|| Error::Config("missing [noise] section".into()))?;
    Marginal::new(prior, NoiseModel::new(sigma2)?, backend)
}

fn grid_for(grid: &GridConfig, model: &impl MarginalModel) -> Vec<f64> {
    match grid.range {
        Some((a, b)) => uniform_grid(a, b, grid.points),
        None => {
            let (c, s) = model.center_and_scale();
            uniform_grid(c - config::DEFAULT_GRID_SCALES * s, c + config::DEFAULT_GRID_SCALES * s, grid.points)
        }
    }
}

fn regularizer_recovery(cfg: &ExperimentConfig, prefix: &Path) -> Result<RunSummary> {
    let reg = Regularizer::new(Denoiser::new(scalar_marginal(cfg)?), 0.0)?;
    let grid = grid_for(&cfg.grid, reg.denoiser().model());
    let rows = reg.curve(&grid)?;
    let worst = rows
        .iter()
        .filter(|r| r.in_image)
        .map(|r| (r.phi_explicit - r.phi_envelope).abs() / r.phi_explicit.abs().max(1.0))
        .fold(0.0, f64::max);
    let in_image = rows.iter().filter(|r| r.in_image).count();
    let mut files = Vec::new();
    write(&mut files, prefix, "curve.csv", &curve_csv(&rows))?;
    Ok(RunSummary {
        files,
        pass: true,
        message: format!("{in_image}/{} grid points in the image; max relative route difference {worst:e}", rows.len()),
    })
}

fn denoiser_check(cfg: &ExperimentConfig, prefix: &Path) -> Result<RunSummary> {
    let d = Denoiser::new(scalar_marginal(cfg)?);
    let grid = grid_for(&cfg.grid, d.model());
    let mut csv = String::from("z,psi_tweedie,psi_oracle,abs_err\n");
    let mut worst: f64 = 0.0;
    for z in grid {
        let t = d.scalar_apply(z);
        let o = d.model().scalar_posterior_mean(z)?;
        let err = (t - o).abs();
        worst = worst.max(err);
        let _ = writeln!(csv, "{},{},{},{}", fmt17(z), fmt17(t), fmt17(o), fmt17(err));
    }
    let mut files = Vec::new();
    write(&mut files, prefix, "denoiser.csv", &csv)?;
    Ok(RunSummary { files, pass: true, message: format!("max |psi_tweedie - psi_oracle| = {worst:e}") })
}

fn grid_csv(values: &[f64], h: usize, w: usize) -> String {
    let mut out = String::new();
    for r in 0..h {
        let row: Vec<String> = values[r * w..(r + 1) * w].iter().map(|&v| fmt17(v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn deblur(cfg: &ExperimentConfig, prefix: &Path) -> Result<RunSummary> {
    let PriorConfig { prior, backend } = cfg.prior.clone().ok_or_else(|| Error::Config("missing [prior] section".into()))?;
    let op_cfg = cfg.operator.clone().ok_or_else(|| Error::Config("missing [operator] section".into()))?;
    let (h, w) = image_shape(&op_cfg.op);
    let out_len = op_cfg.op.output_len();
    let p = DeblurProblem::generate(&DeblurSpec {
        prior,
        op: op_cfg.op,
        measurement_sigma2: op_cfg.measurement_sigma2,
        denoiser_sigma2: cfg.sigma2.ok_or_else(|| Error::Config("missing [noise] section".into()))?,
        backend,
        lambda: cfg.lambda,
        truth: op_cfg.truth,
        seed: cfg.seed,
        envelope: EnvelopeOptions::default(),
    })?;
    let solver = crate::pnp::SolverConfig { seed: cfg.seed, ..cfg.solver.clone() };
    let trace = run(&p.regularizer, &p.fidelity, &solver, Some(&p.truth))?;

    let mut files = Vec::new();
    write(&mut files, prefix, "trace.csv", &trace_csv(&trace))?;
    write(&mut files, prefix, "truth.csv", &grid_csv(&p.truth, h, w))?;
    let (oh, ow) = if out_len == h * w { (h, w) } else { (1, out_len) };
    write(&mut files, prefix, "observation.csv", &grid_csv(&p.observation, oh, ow))?;
    write(&mut files, prefix, "reconstruction.csv", &grid_csv(&trace.final_iterate, h, w))?;

    let last = trace.records.last().expect("max_iters is positive");
    let mut message = format!(
        "{} iterations, L = {}, best residual {:e}",
        trace.records.len(),
        trace.lipschitz,
        last.best_residual
    );
    if let (Some(fp), Ok(obs)) = (trace.final_psnr, p.observation_psnr()) {
        let _ = write!(message, ", PSNR {obs:.2} dB -> {fp:.2} dB");
    }
    Ok(RunSummary { files, pass: true, message })
}

fn certificate_suite(cfg: &ExperimentConfig, prefix: &Path) -> Result<RunSummary> {
    let report = run_all(cfg.seed);
    let mut files = Vec::new();
    write(&mut files, prefix, "certificates.txt", &report.render())?;
    let failed: Vec<&str> = report.suites.iter().filter(|s| !s.pass).map(|s| s.name).collect();
    let message = if failed.is_empty() {
        format!("all {} suites PASS", report.suites.len())
    } else {
        format!("FAIL: {}", failed.join(", "))
    };
    Ok(RunSummary { files, pass: report.pass(), message })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_path_appends_suffix() {
        assert_eq!(output_path(Path::new("out/run"), "trace.csv"), PathBuf::from("out/run_trace.csv"));
    }

    #[test]
    fn gaussian_denoiser_check_is_exact() {
        let text = "[prior]\nkind = [\"gaussian\"]\nweights = [1.0]\nlocations = [0.0]\nscales = [1.0]\n[noise]\nsigma2 = 1.0\n";
        let cfg = parse_config(text, Experiment::DenoiserCheck, Path::new(".")).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("g");
        run_experiment(&cfg, &prefix).unwrap();
        let csv = std::fs::read_to_string(output_path(&prefix, "denoiser.csv")).unwrap();
        let worst = csv
            .lines()
            .skip(1)
            .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-10, "{worst}");
    }
}
