//! Energies, discrete norms, Wasserstein distances and inequality checks
//! along particle trajectories.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::dynamics::{klin_convolve_many, Trajectory};
use crate::error::{Error, Result};
use crate::kernels::{Kernel, OrderedPairs};
use crate::nonlinearity::Nonlinearity;
use crate::particles::ParticleState;

/// Default midpoint subdivisions per cell for the interaction energy.
pub const DEFAULT_QUAD_PER_CELL: usize = 4;

/// One sampled row; columns in serialization order.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DiagnosticsRow {
    pub t: f64,
    pub min_gap: f64,
    pub max_density: f64,
    pub energy: f64,
    pub interaction_energy: f64,
    pub internal_energy: f64,
    pub w12: f64,
    pub tv_phi: f64,
    pub w1_from_init: f64,
    pub energy_rate: f64,
}

impl DiagnosticsRow {
    pub const HEADER: &'static str =
        "t,min_gap,max_density,energy,interaction_energy,internal_energy,w12,tv_phi,w1_from_init,energy_rate";

    pub fn to_csv(&self) -> String {
        let v = [
            self.t,
            self.min_gap,
            self.max_density,
            self.energy,
            self.interaction_energy,
            self.internal_energy,
            self.w12,
            self.tv_phi,
            self.w1_from_init,
            self.energy_rate,
        ];
        let mut s = String::new();
        for (i, x) in v.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            let _ = write!(s, "{x:.17e}");
        }
        s
    }
}

/// Header line plus one line per row.
pub fn rows_to_csv(rows: &[DiagnosticsRow]) -> String {
    let mut s = String::from(DiagnosticsRow::HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Energy {
    pub total: f64,
    pub interaction: f64,
    pub internal: f64,
}

/// `Σ_k g_k W(ρ_k)`.
pub fn internal_energy(s: &ParticleState, nl: &Nonlinearity) -> f64 {
    let q = s.particle_mass();
    (0..s.n())
        .map(|k| {
            let g = s.gap(k);
            g * nl.w(q / g)
        })
        .sum()
}

/// Lifted midpoints of `per_cell` equal subcells of every particle cell.
fn subcell_midpoints(s: &ParticleState, per_cell: usize) -> Vec<f64> {
    let u = s.unwrapped();
    let mut pts = Vec::with_capacity(s.n() * per_cell);
    for k in 0..s.n() {
        let h = (u[k + 1] - u[k]) / per_cell as f64;
        for i in 0..per_cell {
            pts.push(u[k] + h * (i as f64 + 0.5));
        }
    }
    pts
}

/// `F_L = ½∬ K(x-y) ρ(x) ρ(y) + ∫ W(ρ)`; the double integral by midpoint
/// quadrature with `quad_per_cell` subdivisions per cell.
pub fn energy(s: &ParticleState, kernel: &Kernel, nl: &Nonlinearity, quad_per_cell: usize) -> Energy {
    let internal = internal_energy(s, nl);
    let interaction = if kernel.is_zero() {
        0.0
    } else {
        let per = quad_per_cell.max(1);
        let pts = subcell_midpoints(s, per);
        // every subcell carries the same mass c_L / (N per)
        let w = s.domain().mass() / pts.len() as f64;
        0.5 * w * w * OrderedPairs::new(kernel, *s.domain(), &pts).eval_double_sum()
    };
    Energy { total: internal + interaction, interaction, internal }
}

/// Particle-sum estimate `½(c_L/N)² Σ_{j≠k} K(x_k - x_j) + Σ g_k W(ρ_k)`.
pub fn energy_particle_estimate(s: &ParticleState, kernel: &Kernel, nl: &Nonlinearity) -> Energy {
    let internal = internal_energy(s, nl);
    let q = s.particle_mass();
    let interaction = if kernel.is_zero() {
        0.0
    } else {
        let all = OrderedPairs::new(kernel, *s.domain(), &s.unwrapped()[..s.n()]).eval_double_sum();
        0.5 * q * q * (all - s.n() as f64 * kernel.eval(0.0))
    };
    Energy { total: internal + interaction, interaction, internal }
}

fn phi_values(s: &ParticleState, nl: &Nonlinearity) -> Vec<f64> {
    s.densities().into_iter().map(|r| nl.phi(r)).collect()
}

/// `(N / c_L) Σ_k (φ(ρ_{k+1}) - φ(ρ_k))²`, cyclic.
pub fn discrete_w12(s: &ParticleState, nl: &Nonlinearity) -> f64 {
    let p = phi_values(s, nl);
    let n = p.len();
    let sq: f64 = (0..n).map(|k| (p[(k + 1) % n] - p[k]).powi(2)).sum();
    n as f64 / s.domain().mass() * sq
}

/// `Σ_k |φ(ρ_{k+1}) - φ(ρ_k)|`, cyclic.
pub fn tv_phi(s: &ParticleState, nl: &Nonlinearity) -> f64 {
    let p = phi_values(s, nl);
    let n = p.len();
    (0..n).map(|k| (p[(k + 1) % n] - p[k]).abs()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wasserstein {
    /// `∫ |X_a - X_b| dz / c_L`.
    pub value: f64,
    /// Some particle moved half a period or more: the anchored distance may
    /// exceed the periodic one.
    pub winding: bool,
}

/// Anchored 1-Wasserstein distance between two states with the same `N`.
pub fn wasserstein1(a: &ParticleState, b: &ParticleState) -> Result<Wasserstein> {
    let (da, db) = (a.domain(), b.domain());
    if a.n() != b.n() || da.length() != db.length() || (da.mass() - db.mass()).abs() > 1e-12 * da.mass() {
        return Err(Error::Mismatch(format!(
            "wasserstein1 needs the same N, L and mass: (N={}, L={}, c={}) vs (N={}, L={}, c={})",
            a.n(),
            da.length(),
            da.mass(),
            b.n(),
            db.length(),
            db.mass()
        )));
    }
    let (ua, ub) = (a.unwrapped(), b.unwrapped());
    // lift b next to a's base point
    let offset = ua[0] + da.wrap(ub[0] - ua[0]) - ub[0];
    let q = a.particle_mass();
    let d: Vec<f64> = ua.iter().zip(ub).map(|(x, y)| y + offset - x).collect();
    let mut total = 0.0;
    for w in d.windows(2) {
        let (p, r) = (w[0], w[1]);
        total += if p * r >= 0.0 {
            0.5 * q * (p.abs() + r.abs())
        } else {
            0.5 * q * (p * p + r * r) / (p.abs() + r.abs())
        };
    }
    let winding = d.iter().any(|v| v.abs() >= da.half());
    Ok(Wasserstein { value: total / da.mass(), winding })
}

/// `(K' ∗ ρ^N)(x)`, exact for the piecewise-constant density: each cell
/// contributes `ρ_j [K(x - x_j) - K(x - x_{j+1})]`.
pub fn exact_convolution(s: &ParticleState, kernel: &Kernel, xs: &[f64]) -> Vec<f64> {
    if kernel.is_zero() {
        return vec![0.0; xs.len()];
    }
    let d = *s.domain();
    let pos = s.positions();
    let dens = s.densities();
    let n = s.n();
    xs.par_iter()
        .with_min_len(8)
        .map(|&x| {
            let kv: Vec<f64> = pos.iter().map(|&p| kernel.torus_eval(d.wrap(x - p))).collect();
            (0..n).map(|j| dens[j] * (kv[j] - kv[(j + 1) % n])).sum()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct InequalityEntry {
    pub name: &'static str,
    /// Point where the smallest margin occurred.
    pub at: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// Smallest `rhs - lhs` over the sampled points.
    pub margin: f64,
}

impl InequalityEntry {
    pub fn passed(&self) -> bool {
        self.margin >= -INEQUALITY_TOL * self.rhs.abs().max(1.0)
    }
}

/// Relative slack granted to the algebraic inequality checks.
pub const INEQUALITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct InequalityReport {
    pub entries: Vec<InequalityEntry>,
}

impl InequalityReport {
    pub fn violations(&self) -> usize {
        self.entries.iter().filter(|e| !e.passed()).count()
    }

    pub fn entry(&self, name: &str) -> Option<&InequalityEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// Fractions of each cell at which the convolution inequalities are sampled.
const CELL_SAMPLES: [f64; 4] = [0.0, 0.25, 0.5, 0.75];

/// Evaluates both sides of the interaction and discrete-Sobolev inequalities.
pub fn check_inequalities(s: &ParticleState, kernel: &Kernel, nl: &Nonlinearity) -> InequalityReport {
    let n = s.n();
    let d = s.domain();
    let c = d.mass();
    let norms = kernel.norms();
    let u = s.unwrapped();
    let mut xs = Vec::with_capacity(n * CELL_SAMPLES.len());
    let mut cells = Vec::with_capacity(xs.capacity());
    for k in 0..n {
        for th in CELL_SAMPLES {
            xs.push(if th == 0.0 { s.positions()[k] } else { d.wrap(u[k] + th * s.gap(k)) });
            cells.push(k);
        }
    }
    let conv = exact_convolution(s, kernel, &xs);
    let klin = klin_convolve_many(s, kernel, &xs);

    let mut report = InequalityReport::default();
    let bound = c * norms.sup_k1;
    let worst = (0..xs.len()).map(|i| (i, bound - conv[i].abs())).min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    report.entries.push(InequalityEntry { name: "kerbound", at: xs[worst.0], lhs: conv[worst.0].abs(), rhs: bound, margin: worst.1 });

    let tail = c * (d.length() * norms.sup_k2 + 3.0 * norms.sup_k1) / n as f64;
    let worst = (0..xs.len())
        .map(|i| {
            let rhs = norms.sup_k2 * s.gap(cells[i]) + tail;
            let lhs = (conv[i] - klin[i]).abs();
            (i, lhs, rhs)
        })
        .min_by(|a, b| (a.2 - a.1).total_cmp(&(b.2 - b.1)))
        .unwrap();
    report.entries.push(InequalityEntry { name: "kerLip", at: xs[worst.0], lhs: worst.1, rhs: worst.2, margin: worst.2 - worst.1 });

    let phi = phi_values(s, nl);
    let sq: f64 = (0..n).map(|k| (phi[(k + 1) % n] - phi[k]).powi(2)).sum();
    let tv: f64 = (0..n).map(|k| (phi[(k + 1) % n] - phi[k]).abs()).sum();
    let (kmax, phimax) = phi.iter().enumerate().fold((0, f64::NEG_INFINITY), |m, (k, &v)| if v.abs() > m.1 { (k, v.abs()) } else { m });
    let rhs = nl.phi(c / d.length()) + 1.0 + n as f64 * sq;
    report.entries.push(InequalityEntry { name: "w12linfty", at: s.positions()[kmax], lhs: phimax, rhs, margin: rhs - phimax });

    let rhs = (n as f64 * sq).max(1.0);
    report.entries.push(InequalityEntry { name: "tvtv2", at: f64::NAN, lhs: tv, rhs, margin: rhs - tv });
    report
}

/// Centered differences of the energy column; one-sided at the ends.
pub fn energy_rate_series(traj: &Trajectory) -> Result<Vec<(f64, f64)>> {
    let rows = &traj.rows;
    if rows.len() < 3 {
        return Err(Error::InvalidArgument(format!("energy rate needs at least 3 sampled rows, got {}", rows.len())));
    }
    Ok(rates(&rows.iter().map(|r| (r.t, r.energy)).collect::<Vec<_>>()))
}

fn rates(te: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let n = te.len();
    (0..n)
        .map(|i| {
            let (a, b) = match i {
                0 => (0, 1),
                i if i == n - 1 => (n - 2, n - 1),
                i => (i - 1, i + 1),
            };
            (te[i].0, (te[b].1 - te[a].1) / (te[b].0 - te[a].0))
        })
        .collect()
}

/// One diagnostics row without the energy rate.
pub fn diagnose(s: &ParticleState, init: &ParticleState, kernel: &Kernel, nl: &Nonlinearity, quad_per_cell: usize) -> DiagnosticsRow {
    let e = energy(s, kernel, nl, quad_per_cell);
    let min_gap = s.min_gap();
    DiagnosticsRow {
        t: s.time(),
        min_gap,
        max_density: s.domain().mass() / (s.n() as f64 * min_gap),
        energy: e.total,
        interaction_energy: e.interaction,
        internal_energy: e.internal,
        w12: discrete_w12(s, nl),
        tv_phi: tv_phi(s, nl),
        w1_from_init: wasserstein1(init, s).map(|w| w.value).unwrap_or(f64::NAN),
        energy_rate: 0.0,
    }
}

/// Fills `traj.rows`, one per snapshot.
pub fn annotate(traj: &mut Trajectory, kernel: &Kernel, nl: &Nonlinearity, quad_per_cell: usize) {
    let init = &traj.snapshots[0];
    let mut rows: Vec<DiagnosticsRow> =
        traj.snapshots.par_iter().map(|s| diagnose(s, init, kernel, nl, quad_per_cell)).collect();
    if rows.len() >= 2 {
        let r = rates(&rows.iter().map(|r| (r.t, r.energy)).collect::<Vec<_>>());
        for (row, (_, rate)) in rows.iter_mut().zip(r) {
            row.energy_rate = rate;
        }
    }
    traj.rows = rows;
}

/// Ratios `w1(s,t) / |t-s|^{1/2}` on dyadic subdivisions of the sampled run.
#[derive(Debug, Clone, PartialEq)]
pub struct HolderFit {
    /// Ratio on the coarsest pair (first and last snapshot).
    pub coarse: f64,
    /// `(s, t, ratio)` for every dyadic pair, coarsest level first.
    pub pairs: Vec<(f64, f64, f64)>,
}

impl HolderFit {
    pub fn max_ratio(&self) -> f64 {
        self.pairs.iter().map(|p| p.2).fold(0.0, f64::max)
    }
}

pub fn dyadic_holder(traj: &Trajectory) -> Result<HolderFit> {
    let snaps = &traj.snapshots;
    if snaps.len() < 2 {
        return Err(Error::InvalidArgument("Hölder fit needs at least two snapshots".into()));
    }
    let intervals = snaps.len() - 1;
    let mut pairs = Vec::new();
    let mut parts = 1;
    while intervals % parts == 0 {
        let stride = intervals / parts;
        for j in 0..parts {
            let (a, b) = (&snaps[j * stride], &snaps[(j + 1) * stride]);
            let w = wasserstein1(a, b)?.value;
            pairs.push((a.time(), b.time(), w / (b.time() - a.time()).sqrt()));
        }
        if stride == 1 {
            break;
        }
        parts *= 2;
    }
    Ok(HolderFit { coarse: pairs[0].2, pairs })
}

/// Smallest `(γ₁, γ₂)` along the least-squares slope with
/// `y ≤ γ₁ + γ₂ (1 + t)` for every sample; `γ₂ ≥ 0`.
pub fn fit_linear_bound(samples: &[(f64, f64)]) -> (f64, f64) {
    let n = samples.len() as f64;
    let (mt, my) = samples.iter().fold((0.0, 0.0), |a, (t, y)| (a.0 + t / n, a.1 + y / n));
    let (sxy, sxx) = samples.iter().fold((0.0, 0.0), |a, (t, y)| (a.0 + (t - mt) * (y - my), a.1 + (t - mt).powi(2)));
    let g2 = if sxx > 0.0 { (sxy / sxx).max(0.0) } else { 0.0 };
    let g1 = samples.iter().map(|(t, y)| y - g2 * (1.0 + t)).fold(f64::NEG_INFINITY, f64::max);
    (g1, g2)
}
