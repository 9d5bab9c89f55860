//! Reference solutions: an explicit finite-volume solver on the torus grid
//! and Barenblatt profiles of the porous-medium equation.

use std::path::Path;

use crate::domain::TorusDomain;
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::nonlinearity::Nonlinearity;
use crate::particles::{l1_distance, DensityProfile, GridDensity};
use crate::quad;

#[derive(Debug, Clone, PartialEq)]
pub struct FVConfig {
    pub cell_count: usize,
    pub cfl: f64,
    pub t_end: f64,
    /// Extra output times in `(0, t_end)`; `t_end` is always recorded.
    pub snapshot_times: Vec<f64>,
}

impl FVConfig {
    pub fn new(cell_count: usize, t_end: f64) -> Self {
        Self { cell_count, cfl: 0.4, t_end, snapshot_times: Vec::new() }
    }

    pub fn with_snapshots(mut self, times: Vec<f64>) -> Self {
        self.snapshot_times = times;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.cell_count < 16 {
            return Err(Error::InvalidArgument(format!("FV cell count must be >= 16, got {}", self.cell_count)));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::InvalidArgument(format!("FV cfl must lie in (0, 1], got {}", self.cfl)));
        }
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(Error::InvalidArgument(format!("FV t_end must be positive, got {}", self.t_end)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FvSolution {
    /// `(t, density)`, starting with the initial datum and ending at `t_end`.
    pub snapshots: Vec<(f64, GridDensity)>,
    pub steps: u64,
    pub min_value: f64,
}

impl FvSolution {
    pub fn final_density(&self) -> &GridDensity {
        &self.snapshots.last().expect("initial snapshot always present").1
    }
}

/// Explicit upwind finite volumes for `∂t ρ = ∂x(ρ ∂x(K∗ρ) + ∂x φ(ρ))`.
pub fn fv_solve(rho0: &GridDensity, kernel: &Kernel, nl: &Nonlinearity, cfg: &FVConfig) -> Result<FvSolution> {
    cfg.validate()?;
    let m = cfg.cell_count;
    if rho0.cell_count() != m {
        return Err(Error::Mismatch(format!("initial grid has {} cells, FV config asks for {m}", rho0.cell_count())));
    }
    if rho0.mass() <= 0.0 {
        return Err(Error::InvalidArgument("FV initial datum has zero mass".into()));
    }
    let domain = *rho0.domain();
    let h = domain.cell_width(m);
    // face i+1/2 sits (i - j + 1/2) h to the right of the centre of cell j
    let table: Option<Vec<f64>> = (!kernel.is_zero()).then(|| {
        (0..m).map(|d| h * kernel.torus_d1(domain.wrap((d as f64 + 0.5) * h), &domain)).collect()
    });

    let mut out_times: Vec<f64> = cfg.snapshot_times.iter().copied().filter(|&t| t > 0.0 && t < cfg.t_end).collect();
    out_times.sort_by(|a, b| a.total_cmp(b));
    out_times.dedup();
    out_times.push(cfg.t_end);

    let mut rho = rho0.values().to_vec();
    let mut next = vec![0.0; m];
    let mut snapshots = vec![(0.0, rho0.clone())];
    let mut phi = vec![0.0; m];
    let mut vel = vec![0.0; m];
    let mut t = 0.0;
    let mut steps = 0u64;
    let mut min_value = rho.iter().copied().fold(f64::INFINITY, f64::min);
    let dt_floor = 1e-14 * cfg.t_end;
    let neg_tol = -1e-12 * rho0.max();
    for &target in &out_times {
        while t < target {
            nl.phi_into(&rho, &mut phi);
            let max_dphi = nl.max_phi_prime(&rho);
            let mut max_v: f64 = 0.0;
            if let Some(tab) = &table {
                for i in 0..m {
                    // v(x_{i+1/2}) = -Σ_j ρ_j h K'(x_{i+1/2} - y_j)
                    let mut s = 0.0;
                    for (j, r) in rho.iter().enumerate() {
                        let d = if j <= i { i - j } else { i + m - j };
                        s += r * tab[d];
                    }
                    vel[i] = -s;
                    max_v = max_v.max(s.abs());
                }
            }
            let mut dt = f64::INFINITY;
            if max_v > 0.0 {
                dt = dt.min(h / max_v);
            }
            if max_dphi > 0.0 {
                dt = dt.min(h * h / (2.0 * max_dphi));
            }
            dt *= cfg.cfl;
            if !(dt >= dt_floor) {
                return Err(Error::StepUnderflow {
                    t,
                    dt,
                    detail: format!("FV CFL step collapsed: max |v| = {max_v:e}, max φ' = {max_dphi:e}, h = {h:e}"),
                });
            }
            let hit = t + dt >= target;
            if hit {
                dt = target - t;
            }
            // J_{i+1/2} = v ρ_upwind - (φ_{i+1} - φ_i) / h
            let inv_h = 1.0 / h;
            let r = dt * inv_h;
            let mut lo = f64::INFINITY;
            if table.is_some() {
                let face = |i: usize, ip: usize| {
                    let v = vel[i];
                    let up = if v > 0.0 { rho[i] } else { rho[ip] };
                    v * up - (phi[ip] - phi[i]) * inv_h
                };
                let mut prev = face(m - 1, 0);
                for i in 0..m {
                    let f = face(i, if i + 1 == m { 0 } else { i + 1 });
                    let v = rho[i] - r * (f - prev);
                    next[i] = v;
                    lo = lo.min(v);
                    prev = f;
                }
            } else {
                let mut prev = (phi[m - 1] - phi[0]) * inv_h;
                for i in 0..m - 1 {
                    let f = (phi[i] - phi[i + 1]) * inv_h;
                    let v = rho[i] - r * (f - prev);
                    next[i] = v;
                    if v < lo {
                        lo = v;
                    }
                    prev = f;
                }
                let f = (phi[m - 1] - phi[0]) * inv_h;
                next[m - 1] = rho[m - 1] - r * (f - prev);
                lo = lo.min(next[m - 1]);
            }
            std::mem::swap(&mut rho, &mut next);
            min_value = min_value.min(lo);
            if lo < neg_tol {
                return Err(Error::InvalidArgument(format!("FV density became negative ({lo:e}) at t = {t:e}")));
            }
            t = if hit { target } else { t + dt };
            steps += 1;
        }
        snapshots.push((target, GridDensity::new(domain, rho.iter().map(|v| v.max(0.0)).collect())?));
    }
    Ok(FvSolution { snapshots, steps, min_value })
}

/// File name for a reference snapshot at time `t`.
pub fn reference_file_name(t: f64) -> String {
    format!("ref_t{t}.csv")
}

pub fn write_reference(dir: &Path, t: f64, grid: &GridDensity) -> std::io::Result<()> {
    grid.write_csv(&dir.join(reference_file_name(t)))
}

/// Self-similar solution of `∂t ρ = ∂xx(ρ^m)` on the line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Barenblatt {
    pub m: f64,
    pub mass: f64,
    pub alpha: f64,
    pub kappa: f64,
    /// Level `C` fixed by the mass.
    pub c: f64,
}

impl Barenblatt {
    pub fn new(m: f64, mass: f64) -> Result<Self> {
        if !(m > 1.0 && m.is_finite()) {
            return Err(Error::InvalidArgument(format!("Barenblatt profile needs m > 1, got {m}")));
        }
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::InvalidArgument(format!("Barenblatt mass must be positive, got {mass}")));
        }
        let alpha = 1.0 / (m + 1.0);
        let kappa = alpha * (m - 1.0) / (2.0 * m);
        let p = 1.0 / (m - 1.0);
        // mass = C^{p+1/2} κ^{-1/2} B(1/2, p+1)
        let beta = libm::tgamma(0.5) * libm::tgamma(p + 1.0) / libm::tgamma(p + 1.5);
        let c = (mass * kappa.sqrt() / beta).powf(1.0 / (p + 0.5));
        Ok(Self { m, mass, alpha, kappa, c })
    }

    pub fn support_radius(&self, t: f64) -> f64 {
        (self.c / self.kappa).sqrt() * t.powf(self.alpha)
    }

    /// `ρ(t, x)`; `t` must be positive.
    pub fn eval(&self, t: f64, x: f64) -> f64 {
        let ta = t.powf(-self.alpha);
        let base = self.c - self.kappa * x * x * ta * ta;
        if base <= 0.0 {
            0.0
        } else {
            ta * base.powf(1.0 / (self.m - 1.0))
        }
    }

    /// Cell averages on the `m_cells` grid of `domain` at time `t`.
    pub fn cell_averages(&self, t: f64, domain: TorusDomain, m_cells: usize) -> Result<GridDensity> {
        let r = self.support_radius(t);
        if r >= domain.half() {
            return Err(Error::InvalidArgument(format!("Barenblatt support radius {r} reaches the seam of a torus of length {}", domain.length())));
        }
        let h = domain.cell_width(m_cells);
        let vals = (0..m_cells)
            .map(|i| {
                let a = domain.cell_left(i, m_cells).max(-r);
                let b = (domain.cell_left(i, m_cells) + h).min(r);
                if b <= a {
                    0.0
                } else {
                    quad::gauss5_composite(|x| self.eval(t, x), a, b, 4) / h
                }
            })
            .collect();
        GridDensity::new(domain.with_mass(self.mass)?, vals)
    }

    /// The profile at time `t` as an initial density on `domain`.
    pub fn profile(&self, t: f64, domain: TorusDomain) -> Result<DensityProfile> {
        let r = self.support_radius(t);
        if r >= domain.half() {
            return Err(Error::InvalidArgument(format!("Barenblatt support radius {r} reaches the seam of a torus of length {}", domain.length())));
        }
        let b = *self;
        DensityProfile::new(domain, move |x| b.eval(t, x), &[-r, 0.0, r])
    }
}

/// `ρ(t, x)` of the Barenblatt solution with the given exponent and mass.
pub fn barenblatt(m: f64, mass: f64, t: f64, x: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("Barenblatt time must be positive, got {t}")));
    }
    Ok(Barenblatt::new(m, mass)?.eval(t, x))
}

/// Averages groups of `factor` neighbouring cells.
pub fn coarsen(grid: &GridDensity, factor: usize) -> Result<GridDensity> {
    if factor == 0 || grid.cell_count() % factor != 0 {
        return Err(Error::Mismatch(format!("cannot coarsen {} cells by {factor}", grid.cell_count())));
    }
    let vals = grid.values().chunks(factor).map(|c| c.iter().sum::<f64>() / factor as f64).collect();
    GridDensity::new(*grid.domain(), vals)
}

/// Per-time L¹ distance between the projected particle density and the
/// reference, at the reference times present in the trajectory.
pub fn compare_trajectories(particle: &Trajectory, reference: &[(f64, GridDensity)], m_grid: usize) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for (t, refg) in reference {
        let Some(s) = particle.snapshots.iter().find(|s| (s.time() - t).abs() <= 1e-9) else {
            continue;
        };
        let r = if refg.cell_count() == m_grid {
            refg.clone()
        } else if refg.cell_count() % m_grid == 0 {
            coarsen(refg, refg.cell_count() / m_grid)?
        } else {
            return Err(Error::Mismatch(format!("reference grid has {} cells, not a multiple of {m_grid}", refg.cell_count())));
        };
        out.push((*t, l1_distance(&s.to_grid(m_grid), &r)?));
    }
    if out.is_empty() {
        return Err(Error::Mismatch("no particle snapshot matches a reference time".into()));
    }
    Ok(out)
}

/// Trapezoid rule over `(t, value)` samples.
pub fn trapezoid(series: &[(f64, f64)]) -> f64 {
    series.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{build_kernel, KernelSpec};
    use crate::nonlinearity::{build_nonlinearity, NonlinearitySpec};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn pm(m: f64) -> Nonlinearity {
        build_nonlinearity(NonlinearitySpec::PowerLaw { m }).unwrap()
    }

    #[test]
    fn barenblatt_has_requested_mass() {
        for m in [1.5, 2.0, 3.0] {
            let b = Barenblatt::new(m, 0.7).unwrap();
            for t in [0.1, 1.0, 3.0] {
                let r = b.support_radius(t);
                let mass = quad::adaptive_simpson(|x| b.eval(t, x), -r, r, 1e-13);
                assert_relative_eq!(mass, 0.7, max_relative = 1e-9);
            }
        }
        let b = Barenblatt::new(2.0, 1.0).unwrap();
        assert_abs_diff_eq!(b.c, 0.360_56, epsilon = 1e-4);
        assert_abs_diff_eq!(b.support_radius(0.2), 1.216, epsilon = 1e-3);
    }

    #[test]
    fn barenblatt_is_even_and_compact() {
        let b = Barenblatt::new(2.0, 1.0).unwrap();
        for i in 0..100 {
            let x = i as f64 * 0.03;
            assert_eq!(b.eval(0.3, x), b.eval(0.3, -x));
        }
        let r = b.support_radius(0.3);
        assert_eq!(b.eval(0.3, r * 1.0001), 0.0);
        assert!(b.eval(0.3, r * 0.999) > 0.0);
        assert!(barenblatt(2.0, 1.0, 0.0, 0.0).is_err());
        assert!(barenblatt(1.0, 1.0, 1.0, 0.0).is_err());
    }

    /// `∂t ρ - ∂xx(ρ^m)` by fourth-order central differences inside the support.
    #[test]
    fn barenblatt_solves_porous_medium() {
        for m in [2.0, 3.0] {
            let b = Barenblatt::new(m, 1.0).unwrap();
            let t = 0.5;
            let r = b.support_radius(t);
            let (ht, hx) = (1e-4, 1e-3);
            let u = |t: f64, x: f64| b.eval(t, x).powf(m);
            for i in 1..40 {
                let x = -0.8 * r + 1.6 * r * i as f64 / 40.0;
                let dt = (-b.eval(t + 2.0 * ht, x) + 8.0 * b.eval(t + ht, x) - 8.0 * b.eval(t - ht, x) + b.eval(t - 2.0 * ht, x)) / (12.0 * ht);
                let dxx = (-u(t, x + 2.0 * hx) + 16.0 * u(t, x + hx) - 30.0 * u(t, x) + 16.0 * u(t, x - hx) - u(t, x - 2.0 * hx)) / (12.0 * hx * hx);
                assert!((dt - dxx).abs() <= 1e-4 * (1.0 + dt.abs()), "m={m} x={x} {dt} {dxx}");
            }
        }
    }

    #[test]
    fn fv_keeps_uniform_data() {
        let d = TorusDomain::new(4.0, 1.0).unwrap();
        let g = GridDensity::uniform(d, 64);
        let k = build_kernel(KernelSpec::DoubleYukawa { beta: 2.0 }).unwrap();
        let sol = fv_solve(&g, &k, &pm(2.0), &FVConfig::new(64, 1.0)).unwrap();
        for v in sol.final_density().values() {
            assert_abs_diff_eq!(*v, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn fv_conserves_mass_and_sign() {
        let d = TorusDomain::new(4.0, 1.0).unwrap();
        let p = DensityProfile::new(d, |x: f64| (1.0 - x.abs()).max(0.0), &[-1.0, 0.0, 1.0]).unwrap();
        let k = build_kernel(KernelSpec::DoubleYukawa { beta: 2.0 }).unwrap();
        let cfg = FVConfig::new(128, 0.2).with_snapshots(vec![0.05, 0.1, 0.15]);
        let sol = fv_solve(&p.to_grid(128), &k, &pm(2.0), &cfg).unwrap();
        assert_eq!(sol.snapshots.len(), 5);
        for (_, g) in &sol.snapshots {
            assert_relative_eq!(g.mass(), 1.0, max_relative = 1e-12);
        }
        assert!(sol.min_value >= 0.0);
    }

    #[test]
    fn fv_rejects_bad_config() {
        let d = TorusDomain::new(4.0, 1.0).unwrap();
        let z = build_kernel(KernelSpec::Zero).unwrap();
        assert!(fv_solve(&GridDensity::uniform(d, 8), &z, &pm(2.0), &FVConfig::new(8, 1.0)).is_err());
        assert!(fv_solve(&GridDensity::uniform(d, 32), &z, &pm(2.0), &FVConfig::new(64, 1.0)).is_err());
    }

    #[test]
    fn trapezoid_integrates_lines() {
        assert_abs_diff_eq!(trapezoid(&[(0.0, 1.0), (0.5, 2.0), (1.0, 3.0)]), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn reference_names() {
        assert_eq!(reference_file_name(0.5), "ref_t0.5.csv");
    }
}
