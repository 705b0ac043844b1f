//! Forward operators `A` and the scaled data-fidelity term `(λ/2)‖Ax − y‖²`.
//!
//! Convolutions use circular boundary conditions with the kernel centred at
//! index `len/2`, so the adjoint is correlation with the same kernel and the
//! operator norm is the largest modulus of the kernel's DFT.

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::path::Path;

pub const DEFAULT_NORM_TOL: f64 = 1e-8;
const MAX_POWER_ITERS: usize = 10_000;
const POWER_SEED: u64 = 0x5eed;
/// Auto-normalized fidelity scaling: `λ‖A‖² = 0.99`.
pub const AUTO_LIPSCHITZ: f64 = 0.99;

#[derive(Debug, Clone, PartialEq)]
pub enum OperatorKind {
    Identity(usize),
    Conv1D { kernel: Vec<f64>, n: usize },
    /// `kernel` is `kh × kw`, row-major; images are `h × w`, row-major.
    Conv2D { kernel: Vec<f64>, kh: usize, kw: usize, h: usize, w: usize },
    Dense { rows: usize, cols: usize, data: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearOperator {
    kind: OperatorKind,
    cached_norm: Option<f64>,
}

fn check_finite(what: &str, v: &[f64]) -> Result<()> {
    match v.iter().find(|x| !x.is_finite()) {
        Some(x) => Err(Error::InvalidParameter(format!("{what} contains non-finite entry {x}"))),
        None => Ok(()),
    }
}

impl LinearOperator {
    pub fn identity(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("identity dimension must be positive".into()));
        }
        Ok(Self { kind: OperatorKind::Identity(n), cached_norm: Some(1.0) })
    }

    pub fn conv1d(kernel: Vec<f64>, n: usize) -> Result<Self> {
        if kernel.is_empty() || n == 0 || kernel.len() > n {
            return Err(Error::InvalidParameter(format!(
                "1-D kernel of length {} does not fit a signal of length {n}",
                kernel.len()
            )));
        }
        check_finite("kernel", &kernel)?;
        let norm = (0..n)
            .map(|f| {
                let (mut re, mut im) = (0.0, 0.0);
                for (j, k) in kernel.iter().enumerate() {
                    let t = -2.0 * PI * (f * j) as f64 / n as f64;
                    re += k * t.cos();
                    im += k * t.sin();
                }
                re.hypot(im)
            })
            .fold(0.0, f64::max);
        Ok(Self { kind: OperatorKind::Conv1D { kernel, n }, cached_norm: Some(norm) })
    }

    pub fn conv2d(kernel: Vec<f64>, kh: usize, kw: usize, h: usize, w: usize) -> Result<Self> {
        if kernel.is_empty() || kernel.len() != kh * kw || kh > h || kw > w || h == 0 || w == 0 {
            return Err(Error::InvalidParameter(format!(
                "2-D kernel {kh}×{kw} ({} entries) does not fit an image of {h}×{w}",
                kernel.len()
            )));
        }
        check_finite("kernel", &kernel)?;
        let mut norm: f64 = 0.0;
        for fu in 0..h {
            for fv in 0..w {
                let (mut re, mut im) = (0.0, 0.0);
                for a in 0..kh {
                    for b in 0..kw {
                        let t = -2.0 * PI * ((fu * a) as f64 / h as f64 + (fv * b) as f64 / w as f64);
                        let k = kernel[a * kw + b];
                        re += k * t.cos();
                        im += k * t.sin();
                    }
                }
                norm = norm.max(re.hypot(im));
            }
        }
        Ok(Self { kind: OperatorKind::Conv2D { kernel, kh, kw, h, w }, cached_norm: Some(norm) })
    }

    pub fn dense(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::InvalidParameter(format!(
                "dense matrix {rows}×{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        check_finite("matrix", &data)?;
        Ok(Self { kind: OperatorKind::Dense { rows, cols, data }, cached_norm: None })
    }

    /// Parses rows of whitespace-separated reals.
    pub fn dense_from_str(text: &str) -> Result<Self> {
        let mut rows = 0;
        let mut cols = None;
        let mut data = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidParameter(format!("matrix line {}: {e}", lineno + 1)))?;
            match cols {
                None => cols = Some(row.len()),
                Some(c) if c != row.len() => {
                    return Err(Error::InvalidParameter(format!(
                        "matrix line {} has {} entries, expected {c}",
                        lineno + 1,
                        row.len()
                    )))
                }
                _ => {}
            }
            data.extend(row);
            rows += 1;
        }
        Self::dense(rows, cols.unwrap_or(0), data)
    }

    pub fn dense_from_file(path: &Path) -> Result<Self> {
        Self::dense_from_str(&std::fs::read_to_string(path)?)
    }

    pub fn kind(&self) -> &OperatorKind {
        &self.kind
    }

    pub fn cached_norm(&self) -> Option<f64> {
        self.cached_norm
    }

    pub fn input_len(&self) -> usize {
        match &self.kind {
            OperatorKind::Identity(n) | OperatorKind::Conv1D { n, .. } => *n,
            OperatorKind::Conv2D { h, w, .. } => h * w,
            OperatorKind::Dense { cols, .. } => *cols,
        }
    }

    pub fn output_len(&self) -> usize {
        match &self.kind {
            OperatorKind::Dense { rows, .. } => *rows,
            _ => self.input_len(),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_len() {
            return Err(Error::DimensionMismatch { expected: self.input_len(), actual: x.len() });
        }
        Ok(self.act(x, false))
    }

    pub fn adjoint(&self, r: &[f64]) -> Result<Vec<f64>> {
        if r.len() != self.output_len() {
            return Err(Error::DimensionMismatch { expected: self.output_len(), actual: r.len() });
        }
        Ok(self.act(r, true))
    }

    fn act(&self, x: &[f64], transpose: bool) -> Vec<f64> {
        match &self.kind {
            OperatorKind::Identity(_) => x.to_vec(),
            OperatorKind::Conv1D { kernel, n } => {
                let n = *n;
                let c = kernel.len() / 2;
                let mut out = vec![0.0; n];
                for (i, o) in out.iter_mut().enumerate() {
                    for (j, k) in kernel.iter().enumerate() {
                        let idx = if transpose { (i + n + c - j) % n } else { (i + j + n - c) % n };
                        *o += k * x[idx];
                    }
                }
                out
            }
            OperatorKind::Conv2D { kernel, kh, kw, h, w } => {
                let (kh, kw, h, w) = (*kh, *kw, *h, *w);
                let (ch, cw) = (kh / 2, kw / 2);
                let mut out = vec![0.0; h * w];
                for r in 0..h {
                    for c in 0..w {
                        let mut acc = 0.0;
                        for a in 0..kh {
                            let rr = if transpose { (r + h + ch - a) % h } else { (r + a + h - ch) % h };
                            for b in 0..kw {
                                let cc = if transpose { (c + w + cw - b) % w } else { (c + b + w - cw) % w };
                                acc += kernel[a * kw + b] * x[rr * w + cc];
                            }
                        }
                        out[r * w + c] = acc;
                    }
                }
                out
            }
            OperatorKind::Dense { rows, cols, data } => {
                if transpose {
                    let mut out = vec![0.0; *cols];
                    for (i, xi) in x.iter().enumerate() {
                        for (o, a) in out.iter_mut().zip(&data[i * cols..(i + 1) * cols]) {
                            *o += a * xi;
                        }
                    }
                    out
                } else {
                    (0..*rows).map(|i| data[i * cols..(i + 1) * cols].iter().zip(x).map(|(a, b)| a * b).sum()).collect()
                }
            }
        }
    }

    /// `‖A‖` by power iteration on `AᵀA`, started from a fixed pseudo-random vector.
    pub fn operator_norm(&self, tol: f64) -> Result<f64> {
        if !(tol > 0.0) {
            return Err(Error::InvalidParameter(format!("power iteration tolerance must be > 0, got {tol}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(POWER_SEED);
        let mut v: Vec<f64> = (0..self.input_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        normalize(&mut v);
        let mut estimate = 0.0;
        let mut change = f64::INFINITY;
        for _ in 0..MAX_POWER_ITERS {
            let mut next = self.act(&self.act(&v, false), true);
            let lambda: f64 = next.iter().zip(&v).map(|(a, b)| a * b).sum();
            let norm = normalize(&mut next);
            if norm == 0.0 {
                return Ok(0.0);
            }
            change = (lambda - estimate).abs() / lambda.abs().max(f64::MIN_POSITIVE);
            estimate = lambda;
            v = next;
            if change < tol {
                return Ok(estimate.max(0.0).sqrt());
            }
        }
        Err(Error::PowerIteration { iterations: MAX_POWER_ITERS, estimate: estimate.max(0.0).sqrt(), change })
    }

    /// The cached exact norm when available, otherwise power iteration.
    pub fn norm(&self) -> Result<f64> {
        match self.cached_norm {
            Some(n) => Ok(n),
            None => self.operator_norm(DEFAULT_NORM_TOL),
        }
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Sampled Gaussian `size × size` kernel with the given variance, normalized to unit mass.
pub fn gaussian_kernel_2d(size: usize, variance: f64) -> Result<Vec<f64>> {
    if size == 0 || !(variance > 0.0) {
        return Err(Error::InvalidParameter(format!("Gaussian kernel needs size > 0 and variance > 0, got {size}, {variance}")));
    }
    let c = (size / 2) as f64;
    let mut k = Vec::with_capacity(size * size);
    for a in 0..size {
        for b in 0..size {
            let (dy, dx) = (a as f64 - c, b as f64 - c);
            k.push((-(dx * dx + dy * dy) / (2.0 * variance)).exp());
        }
    }
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    Ok(k)
}

/// `(λ/2)‖Ax − y‖²`.
#[derive(Debug, Clone)]
pub struct Fidelity {
    op: LinearOperator,
    y: Vec<f64>,
    lambda: f64,
    op_norm: f64,
}

impl Fidelity {
    pub fn new(op: LinearOperator, y: Vec<f64>, lambda: f64) -> Result<Self> {
        if y.len() != op.output_len() {
            return Err(Error::DimensionMismatch { expected: op.output_len(), actual: y.len() });
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("fidelity scaling must be > 0, got {lambda}")));
        }
        check_finite("observation", &y)?;
        let op_norm = op.norm()?;
        Ok(Self { op, y, lambda, op_norm })
    }

    /// `λ = 0.99/‖A‖²`, so the gradient is 0.99-Lipschitz.
    pub fn auto_normalized(op: LinearOperator, y: Vec<f64>) -> Result<Self> {
        let norm = op.norm()?;
        if !(norm > 0.0) {
            return Err(Error::InvalidParameter("operator norm is zero".into()));
        }
        Self::new(op, y, AUTO_LIPSCHITZ / (norm * norm))
    }

    pub fn op(&self) -> &LinearOperator {
        &self.op
    }

    pub fn observation(&self) -> &[f64] {
        &self.y
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn lipschitz(&self) -> f64 {
        self.lambda * self.op_norm * self.op_norm
    }

    fn residual(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut r = self.op.apply(x)?;
        r.iter_mut().zip(&self.y).for_each(|(a, b)| *a -= b);
        Ok(r)
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(0.5 * self.lambda * self.residual(x)?.iter().map(|r| r * r).sum::<f64>())
    }

    pub fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut g = self.op.adjoint(&self.residual(x)?)?;
        g.iter_mut().for_each(|v| *v *= self.lambda);
        Ok(g)
    }
}
