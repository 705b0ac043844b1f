//! Plug-and-play proximal gradient descent `x_{k+1} = ψ(x_k − ∇f(x_k))` with
//! the implicit step size 1, and the diagnostics that accompany its
//! convergence analysis.
//!
//! Trace row `k` (starting at 1) describes iterate `x_k` and the transition to
//! `x_{k+1}`: `F` and `psnr` are evaluated at `x_k`; `step_norm`,
//! `descent_slack` and `residual` belong to the step, the residual bounding
//! the distance from 0 to the Fréchet subdifferential of `F` at `x_{k+1}`.

use crate::error::{Error, Result};
use crate::format::fmt17;
use crate::marginal::MarginalModel;
use crate::operators::Fidelity;
use crate::regularizer::Regularizer;
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Zeros,
    Observation,
    AdjointObservation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub init: Init,
    pub record_objective: bool,
    /// Carried into reports; the iteration itself is deterministic.
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { max_iters: 50, init: Init::Observation, record_objective: true, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    pub k: usize,
    pub objective: f64,
    pub residual: f64,
    pub best_residual: f64,
    pub descent_slack: f64,
    pub step_norm: f64,
    pub psnr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverTrace {
    pub records: Vec<IterRecord>,
    /// `x_{K+1}`, the iterate after the last recorded step.
    pub final_iterate: Vec<f64>,
    /// Objective at `x_{K+1}`, when objectives are recorded.
    pub final_objective: Option<f64>,
    pub final_psnr: Option<f64>,
    pub lipschitz: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateCertificate {
    pub c: f64,
    pub f1: f64,
    pub fstar_estimate: f64,
    pub horizon: usize,
    /// Rows `k` where the running best residual exceeds the bound.
    pub violations: Vec<usize>,
}

/// `C = (1 + L)/√((1 − L)/2)` for step size 1 and weak-convexity modulus 1.
pub fn rate_constant(lipschitz: f64) -> f64 {
    (1.0 + lipschitz) / ((1.0 - lipschitz) / 2.0).sqrt()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `10 log₁₀(peak²/MSE)` with `peak = max(truth)`.
pub fn psnr(x: &[f64], truth: &[f64]) -> Result<f64> {
    if x.len() != truth.len() || x.is_empty() {
        return Err(Error::DimensionMismatch { expected: truth.len(), actual: x.len() });
    }
    let peak = truth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mse = x.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64;
    Ok(10.0 * (peak * peak / mse).log10())
}

/// `‖(x_prev − x_next) + ∇f(x_next) − ∇f(x_prev)‖`.
pub fn residual(fid: &Fidelity, x_prev: &[f64], x_next: &[f64]) -> Result<f64> {
    let g_prev = fid.grad(x_prev)?;
    let g_next = fid.grad(x_next)?;
    Ok(residual_from_grads(x_prev, x_next, &g_prev, &g_next))
}

fn residual_from_grads(x_prev: &[f64], x_next: &[f64], g_prev: &[f64], g_next: &[f64]) -> f64 {
    x_prev
        .iter()
        .zip(x_next)
        .zip(g_prev.iter().zip(g_next))
        .map(|((p, n), (gp, gn))| (p - n + gn - gp).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn check_config(cfg: &SolverConfig, fid: &Fidelity) -> Result<()> {
    if cfg.max_iters == 0 {
        return Err(Error::SolverConfig("max_iters must be at least 1".into()));
    }
    let l = fid.lipschitz();
    if !(l < 1.0) {
        return Err(Error::SolverConfig(format!(
            "fidelity gradient is {l}-Lipschitz; the implicit unit step needs L < 1 (lower lambda = {})",
            fid.lambda()
        )));
    }
    Ok(())
}

/// Runs `cfg.max_iters` steps from the configured starting point.
pub fn run<M: MarginalModel + 'static>(
    reg: &Regularizer<M>,
    fid: &Fidelity,
    cfg: &SolverConfig,
    truth: Option<&[f64]>,
) -> Result<SolverTrace> {
    check_config(cfg, fid)?;
    let d = reg.denoiser();
    let n = d.dim();
    if fid.op().input_len() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: fid.op().input_len() });
    }
    let x1 = match cfg.init {
        Init::Zeros => vec![0.0; n],
        Init::Observation => {
            if fid.observation().len() != n {
                return Err(Error::SolverConfig(format!(
                    "observation has {} entries but the unknown has {n}; use the adjoint initialization",
                    fid.observation().len()
                )));
            }
            fid.observation().to_vec()
        }
        Init::AdjointObservation => fid.op().adjoint(fid.observation())?,
    };
    run_from(reg, fid, cfg, x1, truth)
}

/// Runs from an explicit starting point `x₁`.
pub fn run_from<M: MarginalModel + 'static>(
    reg: &Regularizer<M>,
    fid: &Fidelity,
    cfg: &SolverConfig,
    x1: Vec<f64>,
    truth: Option<&[f64]>,
) -> Result<SolverTrace> {
    check_config(cfg, fid)?;
    let d = reg.denoiser();
    d.model().check_input(&x1)?;
    if let Some(t) = truth {
        if t.len() != x1.len() {
            return Err(Error::DimensionMismatch { expected: x1.len(), actual: t.len() });
        }
    }
    let quality = |x: &[f64]| truth.map(|t| psnr(x, t)).transpose();

    let mut x = x1;
    let mut grad = fid.grad(&x)?;
    let mut objective = if cfg.record_objective {
        fid.value(&x)? + reg.phi_envelope(&x)?.value
    } else {
        f64::NAN
    };
    let mut records = Vec::with_capacity(cfg.max_iters);
    let mut best = f64::INFINITY;
    for k in 1..=cfg.max_iters {
        let z: Vec<f64> = x.iter().zip(&grad).map(|(a, g)| a - g).collect();
        let next: Vec<f64> = z.iter().map(|&zi| d.scalar_apply(zi)).collect();
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { iteration: k });
        }
        let next_grad = fid.grad(&next)?;
        let next_objective = if cfg.record_objective {
            // x_{k+1} = ψ(z_k), so z_k maximizes the envelope objective at x_{k+1}
            let phi: f64 = next.iter().zip(&z).map(|(&xi, &zi)| reg.scalar_phi_envelope_at(xi, zi)).sum();
            fid.value(&next)? + phi
        } else {
            f64::NAN
        };
        let step: Vec<f64> = x.iter().zip(&next).map(|(a, b)| a - b).collect();
        let step_norm = norm(&step);
        let res = residual_from_grads(&x, &next, &grad, &next_grad);
        best = best.min(res);
        let slack = objective - next_objective - 0.5 * (1.0 - fid.lipschitz()) * step_norm * step_norm;
        records.push(IterRecord {
            k,
            objective,
            residual: res,
            best_residual: best,
            descent_slack: slack,
            step_norm,
            psnr: quality(&x)?,
        });
        x = next;
        grad = next_grad;
        objective = next_objective;
    }
    let final_psnr = quality(&x)?;
    Ok(SolverTrace {
        records,
        final_objective: cfg.record_objective.then_some(objective),
        final_psnr,
        final_iterate: x,
        lipschitz: fid.lipschitz(),
    })
}

/// Descent slacks `F(x_k) − F(x_{k+1}) − ((1 − L)/2)‖x_k − x_{k+1}‖²`.
pub fn descent_check(trace: &SolverTrace) -> Result<Vec<f64>> {
    if trace.final_objective.is_none() || trace.records.iter().any(|r| r.objective.is_nan()) {
        return Err(Error::Trace("objective values were not recorded".into()));
    }
    Ok(trace.records.iter().map(|r| r.descent_slack).collect())
}

/// Checks `min_{j≤k} residual_j ≤ k^{−1/2}·C·√(F(x₁) − F*)` for `k = 1..=horizon`.
///
/// `F*` is estimated by the smallest objective anywhere in the trace, so a
/// trace longer than the horizon gives a tighter (smaller) bound.
pub fn rate_certificate(trace: &SolverTrace, horizon: usize) -> Result<RateCertificate> {
    descent_check(trace)?;
    if horizon < 10 || trace.records.len() < horizon {
        return Err(Error::Trace(format!(
            "rate certificate needs a horizon of at least 10 within the trace (horizon {horizon}, trace {})",
            trace.records.len()
        )));
    }
    let c = rate_constant(trace.lipschitz);
    let f1 = trace.records[0].objective;
    let fstar = trace
        .records
        .iter()
        .map(|r| r.objective)
        .chain(trace.final_objective)
        .fold(f64::INFINITY, f64::min);
    let gap = (f1 - fstar).max(0.0).sqrt();
    let violations = trace.records[..horizon]
        .iter()
        .filter(|r| r.best_residual > c * gap / (r.k as f64).sqrt() + 1e-9)
        .map(|r| r.k)
        .collect();
    Ok(RateCertificate { c, f1, fstar_estimate: fstar, horizon, violations })
}

/// Trace CSV with columns `k,F,residual,best_residual,descent_slack,step_norm,psnr`.
pub fn trace_csv(trace: &SolverTrace) -> String {
    let mut out = String::from("k,F,residual,best_residual,descent_slack,step_norm,psnr\n");
    for r in &trace.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.k,
            fmt17(r.objective),
            fmt17(r.residual),
            fmt17(r.best_residual),
            fmt17(r.descent_slack),
            fmt17(r.step_norm),
            r.psnr.map(fmt17).unwrap_or_default()
        );
    }
    out
}
