//! Even interaction kernels `K` with their first two derivatives, certified
//! sup-norm constants, and evaluation of pairwise sums on the torus.
//!
//! Conventions:
//! - `K'(0) := 0` (odd extension; self-interaction is never evaluated).
//! - On the torus a difference is evaluated at its canonical representative in
//!   `[-L/2, L/2)`. At the antipode `|w| = L/2` the torus derivative is taken
//!   as `0`, the mean of its two one-sided values.

use rayon::prelude::*;

use crate::domain::TorusDomain;
use crate::error::{Error, Result};
use crate::quad;
use crate::validation::{ValidationReport, Witness};

/// Number of grid points used for sup-norm maximization.
const NORM_GRID: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    /// `K(z) = -beta^2 exp(-beta |z|) + exp(-|z|)`.
    DoubleYukawa { beta: f64 },
    /// `K(z) = -attr_amp exp(-|z|/attr_range) + rep_amp exp(-|z|/rep_range)`.
    Morse { attr_amp: f64, attr_range: f64, rep_amp: f64, rep_range: f64 },
    Zero,
    /// Values on sorted nodes, interpolated by a C1 cubic Hermite spline and
    /// extended by constants outside the node range.
    Tabulated { nodes: Vec<f64>, values: Vec<f64> },
}

impl KernelSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            KernelSpec::DoubleYukawa { .. } => "double_yukawa",
            KernelSpec::Morse { .. } => "morse",
            KernelSpec::Zero => "zero",
            KernelSpec::Tabulated { .. } => "tabulated",
        }
    }
}

/// `‖K‖∞`, `‖K'‖∞`, `‖K''‖_{L∞(R\{0})}`, `‖K'‖_{L1}`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KernelNorms {
    pub sup_k: f64,
    pub sup_k1: f64,
    pub sup_k2: f64,
    pub l1_k1: f64,
}

/// One term `amp * exp(-rate |z|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpTerm {
    pub amp: f64,
    pub rate: f64,
}

#[derive(Debug, Clone)]
struct HermiteTable {
    nodes: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl HermiteTable {
    fn new(nodes: Vec<f64>, values: Vec<f64>) -> Self {
        let n = nodes.len();
        let mut slopes = vec![0.0; n];
        for i in 1..n - 1 {
            slopes[i] = (values[i + 1] - values[i - 1]) / (nodes[i + 1] - nodes[i - 1]);
        }
        Self { nodes, values, slopes }
    }

    fn locate(&self, z: f64) -> Option<usize> {
        let n = self.nodes.len();
        if z < self.nodes[0] || z > self.nodes[n - 1] {
            return None;
        }
        let i = self.nodes.partition_point(|&v| v <= z);
        Some(i.clamp(1, n - 1) - 1)
    }

    /// Value and first two derivatives at `z`.
    fn eval_all(&self, z: f64) -> (f64, f64, f64) {
        let n = self.nodes.len();
        let Some(i) = self.locate(z) else {
            let v = if z < self.nodes[0] { self.values[0] } else { self.values[n - 1] };
            return (v, 0.0, 0.0);
        };
        let h = self.nodes[i + 1] - self.nodes[i];
        let t = (z - self.nodes[i]) / h;
        let (p0, p1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.slopes[i] * h, self.slopes[i + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        let v = (2.0 * t3 - 3.0 * t2 + 1.0) * p0
            + (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * p1
            + (t3 - t2) * m1;
        let d1 = ((6.0 * t2 - 6.0 * t) * p0 + (3.0 * t2 - 4.0 * t + 1.0) * m0 + (-6.0 * t2 + 6.0 * t) * p1
            + (3.0 * t2 - 2.0 * t) * m1)
            / h;
        let d2 = ((12.0 * t - 6.0) * p0 + (6.0 * t - 4.0) * m0 + (-12.0 * t + 6.0) * p1 + (6.0 * t - 2.0) * m1)
            / (h * h);
        (v, d1, d2)
    }
}

#[derive(Debug, Clone)]
enum Shape {
    Zero,
    ExpSum(Vec<ExpTerm>),
    Table(HermiteTable),
}

#[derive(Debug, Clone)]
pub struct Kernel {
    spec: KernelSpec,
    shape: Shape,
    norms: KernelNorms,
}

fn positive(param: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::InvalidKernel { param, reason: format!("must be a positive number, got {v}") })
    }
}

fn nonnegative(param: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(Error::InvalidKernel { param, reason: format!("must be a nonnegative number, got {v}") })
    }
}

/// Builds a kernel from its spec and certifies its norm constants.
pub fn build_kernel(spec: KernelSpec) -> Result<Kernel> {
    let shape = match &spec {
        KernelSpec::Zero => Shape::Zero,
        KernelSpec::DoubleYukawa { beta } => {
            let beta = positive("beta", *beta)?;
            Shape::ExpSum(vec![ExpTerm { amp: -beta * beta, rate: beta }, ExpTerm { amp: 1.0, rate: 1.0 }])
        }
        KernelSpec::Morse { attr_amp, attr_range, rep_amp, rep_range } => {
            let ca = nonnegative("attr_amp", *attr_amp)?;
            let la = positive("attr_range", *attr_range)?;
            let cr = nonnegative("rep_amp", *rep_amp)?;
            let lr = positive("rep_range", *rep_range)?;
            Shape::ExpSum(vec![ExpTerm { amp: -ca, rate: 1.0 / la }, ExpTerm { amp: cr, rate: 1.0 / lr }])
        }
        KernelSpec::Tabulated { nodes, values } => {
            if nodes.len() < 3 || nodes.len() != values.len() {
                return Err(Error::InvalidKernel {
                    param: "nodes",
                    reason: format!("need >= 3 nodes with matching values ({} nodes, {} values)", nodes.len(), values.len()),
                });
            }
            if nodes.iter().chain(values).any(|v| !v.is_finite()) {
                return Err(Error::InvalidKernel { param: "values", reason: "non-finite entry".into() });
            }
            if nodes.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::InvalidKernel { param: "nodes", reason: "must be strictly increasing".into() });
            }
            Shape::Table(HermiteTable::new(nodes.clone(), values.clone()))
        }
    };
    let mut kernel = Kernel { spec, shape, norms: KernelNorms::default() };
    kernel.norms = kernel.certify_norms();
    Ok(kernel)
}

impl Kernel {
    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn norms(&self) -> &KernelNorms {
        &self.norms
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.shape, Shape::Zero)
    }

    /// Exponential terms, if the kernel is a sum of exponentials.
    pub fn exp_terms(&self) -> Option<&[ExpTerm]> {
        match &self.shape {
            Shape::ExpSum(t) => Some(t),
            _ => None,
        }
    }

    /// Smallest decay rate; `None` for compactly tabulated or zero kernels.
    pub fn decay_rate(&self) -> Option<f64> {
        self.exp_terms().map(|t| t.iter().map(|e| e.rate).fold(f64::INFINITY, f64::min))
    }

    /// Truncation point for norm estimation.
    pub fn cutoff(&self) -> f64 {
        match &self.shape {
            Shape::Zero => 1.0,
            Shape::ExpSum(_) => f64::max(50.0, 20.0 / self.decay_rate().unwrap()),
            Shape::Table(t) => f64::max(t.nodes[0].abs(), t.nodes[t.nodes.len() - 1].abs()),
        }
    }

    #[inline]
    pub fn eval(&self, z: f64) -> f64 {
        match &self.shape {
            Shape::Zero => 0.0,
            Shape::ExpSum(terms) => {
                let a = z.abs();
                terms.iter().map(|t| t.amp * (-t.rate * a).exp()).sum()
            }
            Shape::Table(t) => t.eval_all(z).0,
        }
    }

    /// `K'(z)`, with `K'(0) = 0`.
    #[inline]
    pub fn eval_d1(&self, z: f64) -> f64 {
        if z == 0.0 {
            return 0.0;
        }
        match &self.shape {
            Shape::Zero => 0.0,
            Shape::ExpSum(_) => z.signum() * self.d1_right(z.abs()),
            Shape::Table(t) => t.eval_all(z).1,
        }
    }

    /// `K''(z)` away from the origin; at `z = 0` the right limit.
    #[inline]
    pub fn eval_d2(&self, z: f64) -> f64 {
        match &self.shape {
            Shape::Zero => 0.0,
            Shape::ExpSum(_) => self.d2_right(z.abs()),
            Shape::Table(t) => {
                if z == 0.0 {
                    t.eval_all(f64::MIN_POSITIVE).2
                } else {
                    t.eval_all(z).2
                }
            }
        }
    }

    /// `K'` on `z >= 0`, using the right limit at `0`.
    fn d1_right(&self, z: f64) -> f64 {
        match &self.shape {
            Shape::Zero => 0.0,
            Shape::ExpSum(terms) => terms.iter().map(|t| -t.amp * t.rate * (-t.rate * z).exp()).sum(),
            Shape::Table(t) => {
                if z == 0.0 {
                    // right derivative of the spline at the origin
                    t.eval_all(f64::MIN_POSITIVE).1
                } else {
                    t.eval_all(z).1
                }
            }
        }
    }

    fn d2_right(&self, z: f64) -> f64 {
        match &self.shape {
            Shape::Zero => 0.0,
            Shape::ExpSum(terms) => terms.iter().map(|t| t.amp * t.rate * t.rate * (-t.rate * z).exp()).sum(),
            Shape::Table(_) => self.eval_d2(if z == 0.0 { f64::MIN_POSITIVE } else { z }),
        }
    }

    /// One-sided limit `K'(0+)`.
    pub fn d1_at_zero_right(&self) -> f64 {
        self.d1_right(0.0)
    }

    /// `K'` on the torus at a canonical difference `w`.
    #[inline]
    pub fn torus_d1(&self, w: f64, domain: &TorusDomain) -> f64 {
        if w.abs() >= antipode_threshold(domain) {
            0.0
        } else {
            self.eval_d1(w)
        }
    }

    /// `K` on the torus at a canonical difference `w`.
    #[inline]
    pub fn torus_eval(&self, w: f64) -> f64 {
        self.eval(w)
    }

    fn certify_norms(&self) -> KernelNorms {
        match &self.shape {
            Shape::Zero => KernelNorms::default(),
            Shape::ExpSum(terms) => {
                let zc = self.cutoff();
                let tail = |p: i32| terms.iter().map(|t| t.amp.abs() * t.rate.powi(p) * (-t.rate * zc).exp()).sum::<f64>();
                let sup_k = grid_sup(|z| self.eval(z).abs(), 0.0, zc).max(tail(0));
                let sup_k1 = grid_sup(|z| self.d1_right(z).abs(), 0.0, zc).max(tail(1));
                let sup_k2 = grid_sup(|z| self.d2_right(z).abs(), 0.0, zc).max(tail(2));
                let body = l1_abs(|z| self.d1_right(z), 0.0, zc);
                // ∫_{zc}^∞ |K'| <= Σ |a| e^{-b zc}
                let l1_k1 = 2.0 * (body + tail(0));
                KernelNorms { sup_k: pad(sup_k), sup_k1: pad(sup_k1), sup_k2: pad(sup_k2), l1_k1: pad(l1_k1) }
            }
            Shape::Table(t) => {
                let (a, b) = (t.nodes[0], t.nodes[t.nodes.len() - 1]);
                let sup_k = t.values.iter().fold(grid_sup(|z| self.eval(z).abs(), a, b), |m, v| m.max(v.abs()));
                let sup_k1 = grid_sup(|z| t.eval_all(z).1.abs(), a, b);
                let sup_k2 = grid_sup(|z| t.eval_all(z).2.abs(), a, b);
                let l1_k1: f64 = t
                    .nodes
                    .windows(2)
                    .map(|w| l1_abs(|z| t.eval_all(z).1, w[0], w[1]))
                    .sum();
                KernelNorms { sup_k: pad(sup_k), sup_k1: pad(sup_k1), sup_k2: pad(sup_k2), l1_k1: pad(l1_k1) }
            }
        }
    }

    /// Checks symmetry, continuity at 0, boundedness and integrability of `K'`.
    pub fn validate(&self, n_samples: usize, tol: f64) -> ValidationReport {
        validate_kernel(self, n_samples, tol)
    }
}

fn pad(v: f64) -> f64 {
    v * (1.0 + 1e-12)
}

/// Differences with `|w|` at or above this are treated as antipodal.
#[inline]
fn antipode_threshold(domain: &TorusDomain) -> f64 {
    domain.half() - 16.0 * f64::EPSILON * domain.length()
}

/// Dense-grid maximum of a nonnegative function with golden-section refinement.
fn grid_sup(f: impl Fn(f64) -> f64 + Sync, a: f64, b: f64) -> f64 {
    let h = (b - a) / NORM_GRID as f64;
    let (imax, vmax) = (0..=NORM_GRID)
        .into_par_iter()
        .map(|i| (i, f(a + h * i as f64)))
        .reduce(|| (0, f64::NEG_INFINITY), |x, y| if y.1 > x.1 || (y.1 == x.1 && y.0 < x.0) { y } else { x });
    let lo = (a + h * imax as f64 - h).max(a);
    let hi = (a + h * imax as f64 + h).min(b);
    let (_, refined) = quad::golden_max(&f, lo, hi, 100);
    vmax.max(refined)
}

/// `∫_a^b |f|` by adaptive quadrature.
fn l1_abs(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    // split into panels so that sign changes are resolved
    let panels = 512;
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|i| {
            let lo = a + h * i as f64;
            let hi = if i + 1 == panels { b } else { lo + h };
            quad::adaptive_simpson(|z| f(z).abs(), lo, hi, 1e-15)
        })
        .sum()
}

/// Numerically checks the structural kernel assumptions.
pub fn validate_kernel(k: &Kernel, n_samples: usize, tol: f64) -> ValidationReport {
    let mut report = ValidationReport::new(format!("kernel {}", k.spec.kind_name()));
    let n = n_samples.max(100);
    let zmax = k.cutoff();
    // table nodes first, so failures are reported against a node
    let mut samples: Vec<(f64, Option<usize>)> = match &k.shape {
        Shape::Table(t) => t.nodes.iter().enumerate().map(|(i, &z)| (z, Some(i))).collect(),
        _ => Vec::new(),
    };
    samples.extend((0..n).map(|i| (zmax * (i + 1) as f64 / n as f64, None)));

    // symmetry of K and antisymmetry of K'
    let mut witness = samples.iter().find_map(|&(z, node)| {
        let (a, b) = (k.eval(z), k.eval(-z));
        ((a - b).abs() > tol * (1.0 + a.abs()) || !a.is_finite()).then_some(Witness { at: z, node, observed: a, bound: b })
    });
    if witness.is_none() {
        witness = samples.iter().find_map(|&(z, node)| {
            let (a, b) = (k.eval_d1(z), -k.eval_d1(-z));
            ((a - b).abs() > tol * (1.0 + a.abs())).then_some(Witness { at: z, node, observed: a, bound: b })
        });
    }
    report.push("k1_symmetry", witness, "K(z) = K(-z), K'(z) = -K'(-z)");

    // continuity at the origin
    let h = 1e-9 * zmax;
    let (kp, km, k0) = (k.eval(h), k.eval(-h), k.eval(0.0));
    let jump = (kp - km).abs().max((kp - k0).abs()).max((km - k0).abs());
    let allowed = tol + 2.0 * h * k.norms.sup_k1;
    let witness = (!(jump <= allowed)).then_some(Witness { at: 0.0, node: None, observed: jump, bound: allowed });
    report.push("k2_continuity", witness, format!("|K(0+) - K(0-)| = {jump:.3e}"));

    // boundedness on every sample
    let nm = k.norms;
    let finite = nm.sup_k.is_finite() && nm.sup_k1.is_finite() && nm.sup_k2.is_finite();
    let mut witness = (!finite).then_some(Witness { at: f64::NAN, node: None, observed: f64::INFINITY, bound: 0.0 });
    if witness.is_none() {
        'outer: for &(z, node) in &samples {
            for s in [z, -z] {
                let checks = [
                    (k.eval(s).abs(), nm.sup_k),
                    (k.eval_d1(s).abs(), nm.sup_k1),
                    (k.eval_d2(s).abs(), nm.sup_k2),
                ];
                for (v, b) in checks {
                    if v > b + tol * (1.0 + b) {
                        witness = Some(Witness { at: s, node, observed: v, bound: b });
                        break 'outer;
                    }
                }
            }
        }
    }
    report.push(
        "k3_bounded",
        witness,
        format!("sup|K| = {:.6e}, sup|K'| = {:.6e}, sup|K''| = {:.6e}", nm.sup_k, nm.sup_k1, nm.sup_k2),
    );

    // integrability of K' by an independent quadrature over [-zmax, zmax]
    let tail = match &k.shape {
        Shape::ExpSum(terms) => 2.0 * terms.iter().map(|t| t.amp.abs() * (-t.rate * zmax).exp()).sum::<f64>(),
        _ => 0.0,
    };
    let (lo, hi) = match &k.shape {
        Shape::Table(t) => (t.nodes[0], t.nodes[t.nodes.len() - 1]),
        _ => (-zmax, zmax),
    };
    let panels = 2048;
    let width = (hi - lo) / panels as f64;
    let integral: f64 = (0..panels)
        .map(|i| {
            let a = lo + width * i as f64;
            quad::adaptive_simpson(|z| k.eval_d1(z).abs(), a, a + width, 1e-14)
        })
        .sum::<f64>()
        + tail;
    let consistent = integral.is_finite() && (integral - nm.l1_k1).abs() <= 1e-6 * (1.0 + nm.l1_k1) + tol;
    let witness = (!consistent).then_some(Witness { at: zmax, node: None, observed: integral, bound: nm.l1_k1 });
    report.push("k4_l1", witness, format!("||K'||_L1 = {integral:.9e}"));
    report
}

/// Pairwise kernel sums over a fixed set of torus points.
///
/// For sums of exponentials the factors `exp(±b x_j)` are precomputed so that
/// each pair costs a few multiplications; the summation itself is still the
/// direct `O(N^2)` sum in ascending index order.
pub struct PairField<'a> {
    kernel: &'a Kernel,
    domain: TorusDomain,
    points: &'a [f64],
    factors: Option<ExpFactors>,
}

struct ExpFactors {
    d1_coef: Vec<f64>,
    amp: Vec<f64>,
    rate: Vec<f64>,
    /// `exp(-b L)` per term.
    period: Vec<f64>,
    /// `exp(b x_j)`, term-major.
    up: Vec<f64>,
    /// `exp(-b x_j)`, term-major.
    down: Vec<f64>,
}

/// Factors `(exp(b x), exp(-b x))` for one evaluation point.
struct PointFactors {
    up: [f64; MAX_TERMS],
    down: [f64; MAX_TERMS],
}

const MAX_TERMS: usize = 4;

impl<'a> PairField<'a> {
    pub fn new(kernel: &'a Kernel, domain: TorusDomain, points: &'a [f64]) -> Self {
        let factors = kernel.exp_terms().and_then(|terms| {
            // products of exp(±b x) stay well inside f64 range
            let safe = terms.len() <= MAX_TERMS && terms.iter().all(|t| t.rate * domain.length() < 600.0);
            safe.then(|| {
                let n = points.len();
                let mut up = Vec::with_capacity(n * terms.len());
                let mut down = Vec::with_capacity(n * terms.len());
                for t in terms {
                    up.extend(points.iter().map(|&x| (t.rate * x).exp()));
                    down.extend(points.iter().map(|&x| (-t.rate * x).exp()));
                }
                ExpFactors {
                    d1_coef: terms.iter().map(|t| -t.amp * t.rate).collect(),
                    amp: terms.iter().map(|t| t.amp).collect(),
                    rate: terms.iter().map(|t| t.rate).collect(),
                    period: terms.iter().map(|t| (-t.rate * domain.length()).exp()).collect(),
                    up,
                    down,
                }
            })
        });
        Self { kernel, domain, points, factors }
    }

    fn point_factors(&self, x: f64) -> PointFactors {
        let mut pf = PointFactors { up: [0.0; MAX_TERMS], down: [0.0; MAX_TERMS] };
        if let Some(f) = &self.factors {
            for (t, &b) in f.rate.iter().enumerate() {
                pf.up[t] = (b * x).exp();
                pf.down[t] = (-b * x).exp();
            }
        }
        pf
    }

    fn cached_factors(&self, k: usize) -> PointFactors {
        let mut pf = PointFactors { up: [0.0; MAX_TERMS], down: [0.0; MAX_TERMS] };
        if let Some(f) = &self.factors {
            let n = self.points.len();
            for t in 0..f.rate.len() {
                pf.up[t] = f.up[t * n + k];
                pf.down[t] = f.down[t * n + k];
            }
        }
        pf
    }

    /// `exp(-b |w|)` for each term, where `w = wrap(x - x_j)` and `shift` says
    /// which period correction the wrap applied.
    #[inline(always)]
    fn pair_exp(f: &ExpFactors, px: &PointFactors, j: usize, n: usize, t: usize, w: f64, shift: i8) -> f64 {
        let uj = f.up[t * n + j];
        let dj = f.down[t * n + j];
        match shift {
            0 if w > 0.0 => px.down[t] * uj,
            0 => px.up[t] * dj,
            -1 => f.period[t] * (px.up[t] * dj),
            _ => f.period[t] * (px.down[t] * uj),
        }
    }

    #[inline(always)]
    fn split(&self, raw: f64) -> (f64, i8) {
        let l = self.domain.length();
        let h = self.domain.half();
        if raw >= h {
            (raw - l, -1)
        } else if raw < -h {
            (raw + l, 1)
        } else {
            (raw, 0)
        }
    }

    /// `K'(wrap(x - x_j))` on the torus.
    #[inline(always)]
    fn pair_d1(&self, x: f64, px: &PointFactors, j: usize, antipode: f64) -> f64 {
        let raw = x - self.points[j];
        match &self.factors {
            Some(f) => {
                let (w, shift) = self.split(raw);
                if w == 0.0 || w.abs() >= antipode {
                    return 0.0;
                }
                let n = self.points.len();
                let mut s = 0.0;
                for t in 0..f.rate.len() {
                    s += f.d1_coef[t] * Self::pair_exp(f, px, j, n, t, w, shift);
                }
                if w > 0.0 {
                    s
                } else {
                    -s
                }
            }
            None => {
                let (w, _) = self.split(raw);
                self.kernel.torus_d1(w, &self.domain)
            }
        }
    }

    #[inline(always)]
    fn pair_eval(&self, x: f64, px: &PointFactors, j: usize) -> f64 {
        let raw = x - self.points[j];
        let (w, shift) = self.split(raw);
        match &self.factors {
            Some(f) => {
                if w == 0.0 {
                    return f.amp.iter().sum();
                }
                let n = self.points.len();
                let mut s = 0.0;
                for t in 0..f.rate.len() {
                    s += f.amp[t] * Self::pair_exp(f, px, j, n, t, w, shift);
                }
                s
            }
            None => self.kernel.torus_eval(w),
        }
    }

    /// `Σ_{j != skip} K'(wrap(x - x_j))` in ascending `j`.
    pub fn d1_sum_at(&self, x: f64, skip: Option<usize>) -> f64 {
        if self.kernel.is_zero() {
            return 0.0;
        }
        let px = self.point_factors(x);
        let antipode = antipode_threshold(&self.domain);
        let mut s = 0.0;
        for j in 0..self.points.len() {
            if Some(j) != skip {
                s += self.pair_d1(x, &px, j, antipode);
            }
        }
        s
    }

    fn row_sum(&self, k: usize, antipode: f64) -> f64 {
        let x = self.points[k];
        let px = self.cached_factors(k);
        let mut s = 0.0;
        for j in 0..self.points.len() {
            if j != k {
                s += self.pair_d1(x, &px, j, antipode);
            }
        }
        s
    }

    /// `S_k = Σ_{j != k} K'(wrap(x_k - x_j))` for every point.
    ///
    /// Every `S_k` is accumulated in ascending `j`, so the result does not
    /// depend on the number of worker threads.
    pub fn d1_sums(&self) -> Vec<f64> {
        let n = self.points.len();
        if self.kernel.is_zero() {
            return vec![0.0; n];
        }
        let antipode = antipode_threshold(&self.domain);
        if self.factors.is_some() && rayon::current_num_threads() == 1 {
            // Exact antisymmetry of the pair term lets one pass fill both
            // S_k and S_j; each S_k still receives its terms in ascending j.
            let mut sums = vec![0.0; n];
            for k in 0..n {
                let x = self.points[k];
                let px = self.cached_factors(k);
                let mut acc = sums[k];
                for j in (k + 1)..n {
                    let v = self.pair_d1(x, &px, j, antipode);
                    acc += v;
                    sums[j] -= v;
                }
                sums[k] = acc;
            }
            sums
        } else {
            (0..n).into_par_iter().with_min_len(16).map(|k| self.row_sum(k, antipode)).collect()
        }
    }

    /// `Σ_j K(wrap(x - x_j))` over all points.
    pub fn eval_sum_at(&self, x: f64) -> f64 {
        if self.kernel.is_zero() {
            return 0.0;
        }
        let px = self.point_factors(x);
        (0..self.points.len()).map(|j| self.pair_eval(x, &px, j)).sum()
    }

    /// `Σ_k Σ_j K(wrap(x_k - x_j))` over all ordered pairs, diagonal included.
    pub fn eval_double_sum(&self) -> f64 {
        if self.kernel.is_zero() {
            return 0.0;
        }
        let n = self.points.len();
        let k0 = self.kernel.eval(0.0);
        let rows: Vec<f64> = (0..n)
            .into_par_iter()
            .with_min_len(16)
            .map(|k| {
                let x = self.points[k];
                let px = self.cached_factors(k);
                let mut s = 0.0;
                for j in (k + 1)..n {
                    s += self.pair_eval(x, &px, j);
                }
                s
            })
            .collect();
        2.0 * rows.iter().sum::<f64>() + n as f64 * k0
    }
}

/// Pair sums over points given in cyclic order by their lifted coordinates
/// `u_0 < u_1 < ... < u_{N-1} < u_0 + L`.
///
/// For a fixed row the partners closer than half a period ahead form one
/// contiguous index range and the ones reached across the seam another, so
/// the exponential-sum kernels are evaluated without branches. Every row is
/// still accumulated in ascending partner index.
pub struct OrderedPairs<'a> {
    kernel: &'a Kernel,
    domain: TorusDomain,
    /// Lifted coordinates re-centred on the middle of the lifted window.
    y: Vec<f64>,
    factors: Option<ExpFactors>,
}

impl<'a> OrderedPairs<'a> {
    pub fn new(kernel: &'a Kernel, domain: TorusDomain, lifted: &[f64]) -> Self {
        let centre = lifted.first().copied().unwrap_or(0.0) + domain.half();
        let y: Vec<f64> = lifted.iter().map(|u| u - centre).collect();
        let factors = kernel.exp_terms().and_then(|terms| {
            let safe = terms.len() <= MAX_TERMS && terms.iter().all(|t| t.rate * domain.length() < 600.0);
            safe.then(|| {
                let mut up = Vec::with_capacity(y.len() * terms.len());
                let mut down = Vec::with_capacity(y.len() * terms.len());
                for t in terms {
                    up.extend(y.iter().map(|&x| (t.rate * x).exp()));
                    down.extend(y.iter().map(|&x| (-t.rate * x).exp()));
                }
                ExpFactors {
                    d1_coef: terms.iter().map(|t| -t.amp * t.rate).collect(),
                    amp: terms.iter().map(|t| t.amp).collect(),
                    rate: terms.iter().map(|t| t.rate).collect(),
                    period: terms.iter().map(|t| (-t.rate * domain.length()).exp()).collect(),
                    up,
                    down,
                }
            })
        });
        Self { kernel, domain, y, factors }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Partners `j > k` split as `[k+1, near_end)` within half a period
    /// ahead, `[near_end, wrap_start)` antipodal, `[wrap_start, N)` across
    /// the seam.
    #[inline]
    fn ahead_ranges(&self, k: usize, thr: f64) -> (usize, usize) {
        let yk = self.y[k];
        let l = self.domain.length();
        let rest = &self.y[k + 1..];
        let near_end = k + 1 + rest.partition_point(|&v| v - yk < thr);
        let wrap_start = k + 1 + rest.partition_point(|&v| v - yk <= l - thr);
        (near_end, wrap_start.max(near_end))
    }

    /// Partners `j < k` split as `[0, wrap_end)` across the seam,
    /// `[wrap_end, near_start)` antipodal, `[near_start, k)` within half a
    /// period behind.
    #[inline]
    fn behind_ranges(&self, k: usize, thr: f64) -> (usize, usize) {
        let yk = self.y[k];
        let l = self.domain.length();
        let before = &self.y[..k];
        let wrap_end = before.partition_point(|&v| yk - v > l - thr);
        let near_start = before.partition_point(|&v| yk - v >= thr);
        (wrap_end, near_start.max(wrap_end))
    }

    /// `Σ_{j≠k} K'(x_k - x_j)` in ascending `j`.
    pub fn d1_row(&self, k: usize) -> f64 {
        if self.kernel.is_zero() {
            return 0.0;
        }
        let thr = antipode_threshold(&self.domain);
        let n = self.y.len();
        let Some(f) = &self.factors else {
            let d = &self.domain;
            let mut s = 0.0;
            for j in 0..n {
                if j != k {
                    s += self.kernel.torus_d1(d.wrap(self.y[k] - self.y[j]), d);
                }
            }
            return s;
        };
        let nt = f.rate.len();
        let (wrap_end, near_start) = self.behind_ranges(k, thr);
        let (near_end, wrap_start) = self.ahead_ranges(k, thr);
        let mut acc = 0.0;
        // j < k across the seam: -s_wrap(j, k)
        for j in 0..wrap_end {
            let mut s = 0.0;
            for t in 0..nt {
                s += f.d1_coef[t] * (f.period[t] * (f.down[t * n + j] * f.up[t * n + k]));
            }
            acc += -s;
        }
        // antipodal partners contribute nothing
        // j < k within half a period: +s_near(j, k)
        for j in near_start..k {
            let mut s = 0.0;
            for t in 0..nt {
                s += f.d1_coef[t] * (f.up[t * n + j] * f.down[t * n + k]);
            }
            acc += s;
        }
        // j > k within half a period: -s_near(k, j)
        for j in (k + 1)..near_end {
            let mut s = 0.0;
            for t in 0..nt {
                s += f.d1_coef[t] * (f.up[t * n + k] * f.down[t * n + j]);
            }
            acc += -s;
        }
        // j > k across the seam: +s_wrap(k, j)
        for j in wrap_start..n {
            let mut s = 0.0;
            for t in 0..nt {
                s += f.d1_coef[t] * (f.period[t] * (f.down[t * n + k] * f.up[t * n + j]));
            }
            acc += s;
        }
        acc
    }

    /// `S_k` for every point; independent of the worker count.
    pub fn d1_sums(&self) -> Vec<f64> {
        let n = self.y.len();
        if self.kernel.is_zero() {
            return vec![0.0; n];
        }
        let Some(f) = self.factors.as_ref().filter(|_| rayon::current_num_threads() == 1) else {
            return (0..n).into_par_iter().with_min_len(16).map(|k| self.d1_row(k)).collect();
        };
        // One pass over k < j fills both rows: the (k, j) term is the exact
        // negative of the (j, k) term, and each row still receives its terms
        // in ascending partner index.
        let thr = antipode_threshold(&self.domain);
        let nt = f.rate.len();
        let mut sums = vec![0.0; n];
        let mut s = vec![0.0; n];
        for k in 0..n {
            let (near_end, wrap_start) = self.ahead_ranges(k, thr);
            let mut acc = sums[k];
            let tail = &mut sums[k + 1..];
            let near = &mut s[k + 1..near_end];
            near.iter_mut().for_each(|v| *v = 0.0);
            for t in 0..nt {
                let c = f.d1_coef[t];
                let uk = f.up[t * n + k];
                let down = &f.down[t * n + k + 1..t * n + near_end];
                for (v, d) in near.iter_mut().zip(down) {
                    *v += c * (uk * d);
                }
            }
            for (v, out) in near.iter().zip(tail.iter_mut()) {
                acc += -v;
                *out += v;
            }
            let wrap = &mut s[wrap_start..n];
            wrap.iter_mut().for_each(|v| *v = 0.0);
            for t in 0..nt {
                let c = f.d1_coef[t];
                let (p, dk) = (f.period[t], f.down[t * n + k]);
                let up = &f.up[t * n + wrap_start..t * n + n];
                for (v, u) in wrap.iter_mut().zip(up) {
                    *v += c * (p * (dk * u));
                }
            }
            for (v, out) in wrap.iter().zip(tail[wrap_start - k - 1..].iter_mut()) {
                acc += v;
                *out += -v;
            }
            sums[k] = acc;
        }
        sums
    }

    /// `Σ_k Σ_j K(x_k - x_j)` over all ordered pairs, diagonal included.
    pub fn eval_double_sum(&self) -> f64 {
        if self.kernel.is_zero() {
            return 0.0;
        }
        let n = self.y.len();
        let half = self.domain.half();
        let k0 = self.kernel.eval(0.0);
        let rows: Vec<f64> = (0..n)
            .into_par_iter()
            .with_min_len(16)
            .map(|k| {
                let yk = self.y[k];
                let split = k + 1 + self.y[k + 1..].partition_point(|&v| v - yk <= half);
                match &self.factors {
                    Some(f) => {
                        let mut s = 0.0;
                        for t in 0..f.rate.len() {
                            let (a, uk, dk, p) = (f.amp[t], f.up[t * n + k], f.down[t * n + k], f.period[t]);
                            let mut near = 0.0;
                            for d in &f.down[t * n + k + 1..t * n + split] {
                                near += uk * d;
                            }
                            let mut wrap = 0.0;
                            for u in &f.up[t * n + split..t * n + n] {
                                wrap += dk * u;
                            }
                            s += a * (near + p * wrap);
                        }
                        s
                    }
                    None => (k + 1..n).map(|j| self.kernel.torus_eval(self.domain.wrap(yk - self.y[j]))).sum(),
                }
            })
            .collect();
        2.0 * rows.iter().sum::<f64>() + n as f64 * k0
    }
}
