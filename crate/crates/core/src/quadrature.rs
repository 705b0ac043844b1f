//! One-dimensional quadrature: Gauss–Hermite rules for Gaussian expectations,
//! and two independent schemes on finite intervals (adaptive Gauss–Kronrod and
//! composite Gauss–Legendre) used by the posterior-mean oracle.

use crate::error::{Error, Result};
use gauss_quad::{GaussHermite, GaussLegendre};
use std::collections::BinaryHeap;

/// Gauss–Hermite rule rewritten for the standard normal weight:
/// `E[g(U)] ≈ Σ exp(log_weights[i]) g(nodes[i])`, `U ~ N(0, 1)`.
#[derive(Debug, Clone)]
pub struct HermiteRule {
    pub nodes: Vec<f64>,
    pub log_weights: Vec<f64>,
}

impl HermiteRule {
    pub fn new(order: usize) -> Result<Self> {
        let rule = GaussHermite::new(order)
            .map_err(|e| Error::InvalidParameter(format!("Gauss-Hermite order {order}: {e}")))?;
        // The library's tail weights lose all relative accuracy at high order, so
        // nodes are Newton-polished and weights rebuilt from the Christoffel sum.
        let mut nodes = Vec::with_capacity(order);
        let mut log_weights = Vec::with_capacity(order);
        for &(x, _) in rule.as_node_weight_pairs().iter() {
            let mut v = std::f64::consts::SQRT_2 * x;
            for _ in 0..3 {
                let (pn, pn1, _) = orthonormal_hermite(order, v);
                let step = pn / ((order as f64).sqrt() * pn1);
                if !step.is_finite() {
                    break;
                }
                v -= step;
            }
            let (_, _, log_sum_sq) = orthonormal_hermite(order, v);
            nodes.push(v);
            log_weights.push(-log_sum_sq);
        }
        Ok(Self { nodes, log_weights })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }
}

/// Orthonormal probabilists' Hermite polynomials at `x`, rescaled on the fly:
/// returns `(p_n, p_{n-1})` sharing an arbitrary positive scale, together with
/// `ln Σ_{k<n} p_k(x)²` in absolute terms.
fn orthonormal_hermite(n: usize, x: f64) -> (f64, f64, f64) {
    let mut prev = 0.0;
    let mut cur = 1.0;
    let mut log_scale = 0.0;
    let mut sum_sq = 0.0;
    for k in 0..n {
        sum_sq += cur * cur;
        let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
        prev = cur;
        cur = next;
        let m = cur.abs().max(prev.abs());
        if m > 1e100 {
            cur /= m;
            prev /= m;
            sum_sq /= m * m;
            log_scale += m.ln();
        }
    }
    (cur, prev, sum_sq.ln() + 2.0 * log_scale)
}

// 15-point Kronrod extension of the 7-point Gauss rule (QUADPACK qk15).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

fn gauss_kronrod_15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

#[derive(Debug, Clone, Copy)]
pub struct QuadOutcome {
    pub value: f64,
    pub error_estimate: f64,
    pub intervals: usize,
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Globally adaptive Gauss–Kronrod integration over the consecutive intervals
/// delimited by `breakpoints` (sorted, at least two entries).
///
/// Stops once the summed error estimate is below `max(abs_tol, rel_tol·|I|)`.
pub fn adaptive_gauss_kronrod<F: FnMut(f64) -> f64>(
    mut f: F,
    breakpoints: &[f64],
    abs_tol: f64,
    rel_tol: f64,
    max_intervals: usize,
) -> Result<QuadOutcome> {
    if breakpoints.len() < 2 || breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidParameter(
            "quadrature breakpoints must be strictly increasing with at least two entries".into(),
        ));
    }
    let mut heap = BinaryHeap::new();
    for w in breakpoints.windows(2) {
        let (value, error) = gauss_kronrod_15(&mut f, w[0], w[1]);
        heap.push(Panel { a: w[0], b: w[1], value, error });
    }
    loop {
        let total: f64 = heap.iter().map(|p| p.value).sum();
        let err: f64 = heap.iter().map(|p| p.error).sum();
        if !total.is_finite() {
            return Err(Error::Quadrature(format!(
                "integrand produced a non-finite partial sum over [{}, {}]",
                breakpoints[0],
                breakpoints[breakpoints.len() - 1]
            )));
        }
        if err <= abs_tol.max(rel_tol * total.abs()) {
            return Ok(QuadOutcome { value: total, error_estimate: err, intervals: heap.len() });
        }
        if heap.len() >= max_intervals {
            return Err(Error::Quadrature(format!(
                "{} panels used, estimate {total:e} with error {err:e} above tolerance (abs {abs_tol:e}, rel {rel_tol:e})",
                heap.len()
            )));
        }
        let worst = heap.pop().expect("heap is nonempty");
        let mid = 0.5 * (worst.a + worst.b);
        if !(worst.a < mid && mid < worst.b) {
            return Err(Error::Quadrature(format!(
                "panel [{}, {}] cannot be bisected further (error {:e})",
                worst.a, worst.b, worst.error
            )));
        }
        for (a, b) in [(worst.a, mid), (mid, worst.b)] {
            let (value, error) = gauss_kronrod_15(&mut f, a, b);
            heap.push(Panel { a, b, value, error });
        }
    }
}

/// Fixed composite Gauss–Legendre rule: each interval between breakpoints is
/// cut into `panels` equal pieces integrated with an `order`-point rule.
#[derive(Debug, Clone)]
pub struct CompositeLegendre {
    rule: GaussLegendre,
    panels: usize,
}

impl CompositeLegendre {
    pub fn new(order: usize, panels: usize) -> Result<Self> {
        let rule = GaussLegendre::new(order)
            .map_err(|e| Error::InvalidParameter(format!("Gauss-Legendre order {order}: {e}")))?;
        if panels == 0 {
            return Err(Error::InvalidParameter("panel count must be positive".into()));
        }
        Ok(Self { rule, panels })
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F, breakpoints: &[f64]) -> f64 {
        let mut total = 0.0;
        for w in breakpoints.windows(2) {
            let width = (w[1] - w[0]) / self.panels as f64;
            for p in 0..self.panels {
                let a = w[0] + p as f64 * width;
                total += self.rule.integrate(a, a + width, &mut f);
            }
        }
        total
    }
}
