use clap::{Args, Parser, Subcommand};
use mmse_pnp::cli::config::ExperimentConfig;
use mmse_pnp::cli::{exit_code_for, parse_config, run_experiment, Experiment, EXIT_OK, EXIT_VALIDATION};
use mmse_pnp::{Error, Result};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// MMSE denoisers as proximal operators: regularizer recovery, denoiser
/// checks, PnP deblurring and the invariant certificate suite.
#[derive(Debug, Parser)]
#[command(name = "mmse-pnp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Emit x, f_X, f_Z and both routes of the implicit regularizer as CSV.
    RegularizerRecovery(RunArgs),
    /// Compare Tweedie's formula with the direct posterior mean as CSV.
    DenoiserCheck(RunArgs),
    /// Run PnP proximal gradient descent on a synthetic deblurring problem.
    Deblur(RunArgs),
    /// Run every invariant suite and write a key = value report.
    CertificateSuite(RunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML experiment config. Optional for certificate-suite.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output path prefix; files are written as <prefix>_<name>.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn load(experiment: Experiment, args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            let base = path.parent().unwrap_or(Path::new("."));
            parse_config(&text, experiment, base)?
        }
        None if experiment == Experiment::CertificateSuite => ExperimentConfig::bare(experiment),
        None => return Err(Error::Config(format!("{} requires --config", experiment.name()))),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
        cfg.solver.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output = Some(out.clone());
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_VALIDATION as u8 } else { EXIT_OK as u8 });
        }
    };
    let (experiment, args) = match &cli.command {
        Command::RegularizerRecovery(a) => (Experiment::RegularizerRecovery, a),
        Command::DenoiserCheck(a) => (Experiment::DenoiserCheck, a),
        Command::Deblur(a) => (Experiment::Deblur, a),
        Command::CertificateSuite(a) => (Experiment::CertificateSuite, a),
    };
    let result = load(experiment, args).and_then(|cfg| {
        let prefix = cfg.output.clone().unwrap_or_else(|| PathBuf::from(experiment.name()));
        run_experiment(&cfg, &prefix)
    });
    match result {
        Ok(summary) => {
            for f in &summary.files {
                println!("wrote {}", f.display());
            }
            println!("{}", summary.message);
            ExitCode::from(summary.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e) as u8)
        }
    }
}
