//! Particle states, initial densities and their grid representation.
//!
//! A state holds `N` particles of equal mass `c_L / N` in cyclic order on the
//! torus. Cell `k` is the arc `[x_k, x_{k+1})` (indices mod `N`) and carries
//! the constant density `ρ_k = c_L / (N g_k)`.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use crate::domain::TorusDomain;
use crate::error::{Error, Result};
use crate::quad;

/// Cell averages on the uniform grid of `M` cells anchored at `-L/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    domain: TorusDomain,
    values: Vec<f64>,
}

impl GridDensity {
    pub fn new(domain: TorusDomain, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("grid density needs at least one cell".into()));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidArgument(format!("grid density values must be finite and >= 0, got {v}")));
        }
        Ok(Self { domain, values })
    }

    pub fn uniform(domain: TorusDomain, m: usize) -> Self {
        Self { domain, values: vec![domain.mass() / domain.length(); m] }
    }

    pub fn domain(&self) -> &TorusDomain {
        &self.domain
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cell_count(&self) -> usize {
        self.values.len()
    }

    pub fn cell_width(&self) -> f64 {
        self.domain.cell_width(self.values.len())
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_width()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Mass in `[-L/2, x]`, exact for the piecewise-constant density.
    pub fn cumulative(&self, x: f64) -> f64 {
        let h = self.cell_width();
        let s = (x + self.domain.half()).clamp(0.0, self.domain.length());
        let i = ((s / h) as usize).min(self.values.len() - 1);
        let full: f64 = self.values[..i].iter().sum::<f64>() * h;
        full + self.values[i] * (s - h * i as f64)
    }

    /// Header `# L=<L> M=<M> mass=<c_L>`, then one cell average per line.
    pub fn to_csv(&self) -> String {
        let mut s = format!("# L={} M={} mass={}\n", self.domain.length(), self.values.len(), self.domain.mass());
        for v in &self.values {
            let _ = writeln!(s, "{v:e}");
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty grid density file".into()))?;
        let header = header
            .trim()
            .strip_prefix('#')
            .ok_or_else(|| Error::Parse(format!("expected header `# L=.. M=.. mass=..`, got `{header}`")))?;
        let (mut l, mut m, mut mass) = (None, None, None);
        for tok in header.split_whitespace() {
            let (k, v) = tok.split_once('=').ok_or_else(|| Error::Parse(format!("bad header token `{tok}`")))?;
            let num = || v.parse::<f64>().map_err(|e| Error::Parse(format!("header `{k}`: {e}")));
            match k {
                "L" => l = Some(num()?),
                "M" => m = Some(v.parse::<usize>().map_err(|e| Error::Parse(format!("header `M`: {e}")))?),
                "mass" => mass = Some(num()?),
                _ => return Err(Error::Parse(format!("unknown header key `{k}`"))),
            }
        }
        let (l, m, mass) = match (l, m, mass) {
            (Some(l), Some(m), Some(mass)) => (l, m, mass),
            _ => return Err(Error::Parse("header must define L, M and mass".into())),
        };
        let values = lines
            .map(|line| line.trim().parse::<f64>().map_err(|e| Error::Parse(format!("value `{line}`: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != m {
            return Err(Error::Parse(format!("header says M={m} but file has {} values", values.len())));
        }
        let grid = Self::new(TorusDomain::new(l, mass)?, values)?;
        if (grid.mass() - mass).abs() > 1e-9 * mass.max(1e-300) {
            return Err(Error::Parse(format!("cell values integrate to {} but header says mass={mass}", grid.mass())));
        }
        Ok(grid)
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_csv())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        Self::from_csv(&text)
    }
}

/// `Σ |a_i - b_i| (L/M)`.
pub fn l1_distance(a: &GridDensity, b: &GridDensity) -> Result<f64> {
    if a.cell_count() != b.cell_count() || a.domain.length() != b.domain.length() {
        return Err(Error::Mismatch(format!(
            "grids differ: L={} M={} vs L={} M={}",
            a.domain.length(),
            a.cell_count(),
            b.domain.length(),
            b.cell_count()
        )));
    }
    Ok(a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).sum::<f64>() * a.cell_width())
}

/// A density given through its cumulative mass on `[-L/2, L/2]`.
pub trait Cumulative {
    fn domain(&self) -> &TorusDomain;
    /// Mass in `[-L/2, x]`.
    fn cumulative(&self, x: f64) -> f64;
    fn total(&self) -> f64 {
        self.cumulative(self.domain().half())
    }
}

impl Cumulative for GridDensity {
    fn domain(&self) -> &TorusDomain {
        &self.domain
    }
    fn cumulative(&self, x: f64) -> f64 {
        GridDensity::cumulative(self, x)
    }
    fn total(&self) -> f64 {
        self.mass()
    }
}

type DensityFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A density given by a function on `[-L/2, L/2)`, smooth between `knots`,
/// normalized to the domain mass, optionally lifted by a vacuum floor.
#[derive(Clone)]
pub struct DensityProfile {
    domain: TorusDomain,
    f: DensityFn,
    breaks: Vec<f64>,
    cum: Vec<f64>,
    raw_total: f64,
    floor: f64,
    scale: f64,
}

impl std::fmt::Debug for DensityProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DensityProfile")
            .field("domain", &self.domain)
            .field("raw_total", &self.raw_total)
            .field("floor", &self.floor)
            .finish()
    }
}

impl DensityProfile {
    /// `f` must be nonnegative; `knots` lists points where it is not smooth.
    pub fn new(domain: TorusDomain, f: impl Fn(f64) -> f64 + Send + Sync + 'static, knots: &[f64]) -> Result<Self> {
        let h = domain.half();
        let mut pts: Vec<f64> = knots.iter().copied().filter(|k| *k > -h && *k < h).collect();
        pts.push(-h);
        pts.push(h);
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pts.dedup();
        let target = domain.length() / 8192.0;
        let mut breaks = vec![pts[0]];
        for w in pts.windows(2) {
            let panels = ((w[1] - w[0]) / target).ceil().max(4.0) as usize;
            for i in 1..=panels {
                let x = if i == panels { w[1] } else { w[0] + (w[1] - w[0]) * i as f64 / panels as f64 };
                breaks.push(x);
            }
        }
        let f: DensityFn = Arc::new(f);
        let mut cum = Vec::with_capacity(breaks.len());
        cum.push(0.0);
        let mut acc = 0.0;
        for w in breaks.windows(2) {
            acc += quad::gauss5(&*f, w[0], w[1]);
            cum.push(acc);
        }
        if !(acc.is_finite() && acc > 0.0) {
            return Err(Error::Initialization(format!("initial density has non-positive total mass {acc}")));
        }
        Ok(Self { domain, f, breaks, cum, raw_total: acc, floor: 0.0, scale: domain.mass() / acc })
    }

    /// `(ρ0 + eps) c_L / (∫ρ0 + eps L)`: strictly positive for `eps > 0`.
    pub fn with_vacuum_floor(mut self, eps: f64) -> Self {
        self.floor = eps.max(0.0);
        self.scale = self.domain.mass() / (self.raw_total + self.floor * self.domain.length());
        self
    }

    pub fn density(&self, x: f64) -> f64 {
        self.scale * ((self.f)(x) + self.floor)
    }

    /// Total mass of the unnormalized function.
    pub fn raw_mass(&self) -> f64 {
        self.raw_total
    }

    /// `∫ |x| ρ` over the torus window.
    pub fn first_moment(&self) -> f64 {
        self.breaks.windows(2).map(|w| quad::gauss5(|x| x.abs() * self.density(x), w[0], w[1])).sum()
    }

    /// Exact-in-quadrature cell averages on an `m`-cell grid.
    pub fn to_grid(&self, m: usize) -> GridDensity {
        let h = self.domain.cell_width(m);
        let mut prev = 0.0;
        let values = (0..m)
            .map(|i| {
                let right = if i + 1 == m { self.total() } else { self.cumulative(self.domain.cell_left(i + 1, m)) };
                let v = ((right - prev) / h).max(0.0);
                prev = right;
                v
            })
            .collect();
        GridDensity { domain: self.domain, values }
    }
}

impl Cumulative for DensityProfile {
    fn domain(&self) -> &TorusDomain {
        &self.domain
    }

    fn cumulative(&self, x: f64) -> f64 {
        let h = self.domain.half();
        let x = x.clamp(-h, h);
        let i = self.breaks.partition_point(|&b| b <= x).clamp(1, self.breaks.len() - 1) - 1;
        let raw = self.cum[i] + quad::gauss5(&*self.f, self.breaks[i], x);
        self.scale * (raw + self.floor * (x + h))
    }

    fn total(&self) -> f64 {
        self.scale * (self.raw_total + self.floor * self.domain.length())
    }
}

/// Ordered particles on the torus.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleState {
    domain: TorusDomain,
    positions: Vec<f64>,
    /// Positions lifted to `[x_0, x_0 + L)`, plus `x_N = x_0 + L`.
    unwrapped: Vec<f64>,
    time: f64,
}

impl ParticleState {
    /// Builds a state from canonical positions in cyclic order starting at `x_0`.
    pub fn new(domain: TorusDomain, positions: Vec<f64>, time: f64) -> Result<Self> {
        if positions.len() < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 particles, got {}", positions.len())));
        }
        let positions: Vec<f64> = positions.into_iter().map(|x| domain.wrap(x)).collect();
        let unwrapped = lift(&domain, &positions);
        if let Some(k) = first_order_violation(&unwrapped) {
            return Err(Error::InvalidArgument(format!("particles {k} and {} are not strictly ordered", (k + 1) % positions.len())));
        }
        Ok(Self { domain, positions, unwrapped, time })
    }

    /// Positions that are known to be ordered (checked in debug builds).
    pub(crate) fn from_ordered(domain: TorusDomain, positions: Vec<f64>, time: f64) -> std::result::Result<Self, usize> {
        let unwrapped = lift(&domain, &positions);
        if let Some(k) = first_order_violation(&unwrapped) {
            return Err(k);
        }
        Ok(Self { domain, positions, unwrapped, time })
    }

    /// Equispaced particles starting at `-L/2`.
    pub fn uniform(domain: TorusDomain, n: usize) -> Result<Self> {
        let l = domain.length();
        let pos = (0..n).map(|k| -0.5 * l + l * (k as f64 / n as f64)).collect();
        Self::new(domain, pos, 0.0)
    }

    pub fn domain(&self) -> &TorusDomain {
        &self.domain
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    /// Lifted positions `x_0 <= u_k < x_0 + L`, followed by `x_0 + L`.
    pub fn unwrapped(&self) -> &[f64] {
        &self.unwrapped
    }

    pub fn n(&self) -> usize {
        self.positions.len()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn with_time(mut self, t: f64) -> Self {
        self.time = t;
        self
    }

    pub fn particle_mass(&self) -> f64 {
        self.domain.mass() / self.n() as f64
    }

    #[inline]
    pub fn gap(&self, k: usize) -> f64 {
        self.unwrapped[k + 1] - self.unwrapped[k]
    }

    pub fn gaps(&self) -> Vec<f64> {
        self.unwrapped.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// `ρ_k = c_L / (N g_k)`.
    pub fn densities(&self) -> Vec<f64> {
        let q = self.particle_mass();
        self.unwrapped.windows(2).map(|w| q / (w[1] - w[0])).collect()
    }

    pub fn min_gap(&self) -> f64 {
        self.unwrapped.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }

    pub fn max_gap(&self) -> f64 {
        self.unwrapped.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    pub fn max_density(&self) -> f64 {
        self.particle_mass() / self.min_gap()
    }

    #[inline]
    fn lift_point(&self, x: f64) -> f64 {
        let x0 = self.positions[0];
        if x >= x0 {
            x
        } else {
            x + self.domain.length()
        }
    }

    /// Index of the cell containing the canonical point `x`.
    pub fn cell_of(&self, x: f64) -> usize {
        let u = self.lift_point(x);
        let n = self.n();
        (self.unwrapped[..n].partition_point(|&v| v <= u).max(1) - 1).min(n - 1)
    }

    /// Cell index and fractional position `θ ∈ [0, 1)` of a canonical point.
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let u = self.lift_point(x);
        let k = self.cell_of(x);
        (k, ((u - self.unwrapped[k]) / self.gap(k)).clamp(0.0, 1.0))
    }

    /// Mass of the piecewise-constant density from `x_0` forward to `x`.
    pub fn cdf_at(&self, x: f64) -> f64 {
        let x = self.domain.wrap(x);
        let u = self.lift_point(x);
        let k = self.cell_of(x);
        let q = self.particle_mass();
        k as f64 * q + (q / self.gap(k)) * (u - self.unwrapped[k])
    }

    /// Generalized inverse of [`cdf_at`](Self::cdf_at) on `[0, c_L)`.
    pub fn pseudo_inverse(&self, z: f64) -> Result<f64> {
        let c = self.domain.mass();
        if !(0.0..c).contains(&z) {
            return Err(Error::OutOfRange { value: z, lo: 0.0, hi: c });
        }
        let (k, theta) = self.mass_cell(z);
        if theta == 0.0 {
            return Ok(self.positions[k]);
        }
        Ok(self.domain.wrap(self.unwrapped[k] + theta * self.gap(k)))
    }

    /// Pseudo-inverse in lifted coordinates, defined on `[0, c_L]`.
    pub fn pseudo_inverse_unwrapped(&self, z: f64) -> f64 {
        let (k, theta) = self.mass_cell(z.clamp(0.0, self.domain.mass()));
        if k == self.n() {
            return self.unwrapped[k];
        }
        self.unwrapped[k] + theta * self.gap(k)
    }

    fn mass_cell(&self, z: f64) -> (usize, f64) {
        let n = self.n();
        let q = self.particle_mass();
        let mut k = ((z / q).floor().max(0.0) as usize).min(n);
        if k < n && (k + 1) as f64 * q <= z {
            k += 1;
        }
        while k > 0 && k as f64 * q > z {
            k -= 1;
        }
        if k == n {
            return (n, 0.0);
        }
        (k, ((z - k as f64 * q) / q).clamp(0.0, 1.0))
    }

    /// The state translated by `delta` along the torus.
    pub fn shifted(&self, delta: f64) -> Self {
        let pos = self.positions.iter().map(|&x| self.domain.wrap(x + delta)).collect();
        Self::from_ordered(self.domain, pos, self.time).expect("translation preserves order")
    }

    /// Cell averages over `m` equal cells of the window `[a, b)`, with
    /// `-L/2 <= a < b <= L/2`.
    pub fn window_averages(&self, a: f64, b: f64, m: usize) -> Vec<f64> {
        let h = (b - a) / m as f64;
        let l = self.domain.length();
        let half = self.domain.half();
        let mut acc = vec![0.0; m];
        let q = self.particle_mass();
        let mut deposit = |s: f64, e: f64, rho: f64| {
            let (s, e) = (s.max(a), e.min(b));
            if e <= s {
                return;
            }
            let i0 = (((s - a) / h) as usize).min(m - 1);
            let i1 = (((e - a) / h) as usize).min(m - 1);
            if i0 == i1 {
                acc[i0] += rho * (e - s);
                return;
            }
            acc[i0] += rho * (a + h * (i0 + 1) as f64 - s);
            for v in &mut acc[i0 + 1..i1] {
                *v += rho * h;
            }
            acc[i1] += rho * (e - (a + h * i1 as f64));
        };
        for k in 0..self.n() {
            let (s, e) = (self.unwrapped[k], self.unwrapped[k + 1]);
            let rho = q / (e - s);
            // lifted cells live in [-L/2, 3L/2); fold the part beyond L/2 back
            if e <= half {
                deposit(s, e, rho);
            } else if s >= half {
                deposit(s - l, e - l, rho);
            } else {
                deposit(s, half, rho);
                deposit(-half, e - l, rho);
            }
        }
        acc.iter_mut().for_each(|v| *v /= h);
        acc
    }

    /// Exact cell averages of the piecewise-constant density.
    pub fn to_grid(&self, m: usize) -> GridDensity {
        let h = self.domain.half();
        GridDensity { domain: self.domain, values: self.window_averages(-h, h, m.max(1)) }
    }
}

fn lift(domain: &TorusDomain, positions: &[f64]) -> Vec<f64> {
    let x0 = positions[0];
    let l = domain.length();
    let mut u: Vec<f64> = positions.iter().map(|&x| if x >= x0 { x } else { x + l }).collect();
    u.push(x0 + l);
    u
}

fn first_order_violation(unwrapped: &[f64]) -> Option<usize> {
    unwrapped.windows(2).position(|w| !(w[1] > w[0]))
}

/// Places `n` particles at the consecutive `c_L / N` quantiles of `rho0`,
/// starting from `x_0 = -L/2`.
pub fn init_from_density(rho0: &impl Cumulative, n: usize) -> Result<ParticleState> {
    let domain = *rho0.domain();
    if n < 2 {
        return Err(Error::Initialization(format!("need at least 2 particles, got {n}")));
    }
    let total = rho0.total();
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::Initialization(format!("initial density has total mass {total}")));
    }
    if (total - domain.mass()).abs() > 1e-9 * domain.mass() {
        return Err(Error::Initialization(format!(
            "initial density mass {total} does not match the domain mass {}",
            domain.mass()
        )));
    }
    let h = domain.half();
    let q = total / n as f64;
    let mut positions = Vec::with_capacity(n);
    positions.push(-h);
    for k in 1..n {
        let target = k as f64 * q;
        let lo = positions[k - 1];
        // x_k = sup{x : M(x) < k c/N}
        let x = quad::bisect_last_true(|x| rho0.cumulative(x) < target, lo, h, 0.0);
        if !(x > lo) || x >= h {
            return Err(Error::Initialization(format!(
                "quantiles {} and {k} coincide at x = {x}: the density concentrates mass >= c_L/N at a point",
                k - 1
            )));
        }
        positions.push(x);
    }
    ParticleState::new(domain, positions, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    fn dom(l: f64, c: f64) -> TorusDomain {
        TorusDomain::new(l, c).unwrap()
    }

    fn hat(domain: TorusDomain) -> DensityProfile {
        DensityProfile::new(domain, |x: f64| (1.0 - x.abs()).max(0.0), &[-1.0, 0.0, 1.0]).unwrap()
    }

    #[test]
    fn uniform_density_gives_equispaced_particles() {
        let d = dom(4.0, 1.0);
        let g = GridDensity::uniform(d, 16);
        let s = init_from_density(&g, 4).unwrap();
        for (x, e) in s.positions().iter().zip([-2.0, -1.0, 0.0, 1.0]) {
            assert_abs_diff_eq!(*x, e, epsilon = 1e-12);
        }
        for r in s.densities() {
            assert_abs_diff_eq!(r, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn uniform_densities_equal_mass_over_length() {
        let d = dom(3.0, 0.6);
        for n in [2, 7, 64] {
            let s = init_from_density(&GridDensity::uniform(d, 30), n).unwrap();
            for r in s.densities() {
                assert_relative_eq!(r, 0.2, max_relative = 1e-10);
            }
        }
    }

    /// Quantiles of the unit hat on [-1, 1] from its closed-form CDF.
    #[test]
    fn hat_quantiles_match_closed_form() {
        let s = init_from_density(&hat(dom(4.0, 1.0)), 4).unwrap();
        let hat_cdf_inverse = |z: f64| {
            if z <= 0.5 {
                -1.0 + (2.0 * z).sqrt()
            } else {
                1.0 - (2.0 * (1.0 - z)).sqrt()
            }
        };
        let expected = [-2.0, hat_cdf_inverse(0.25), hat_cdf_inverse(0.5), hat_cdf_inverse(0.75)];
        for (x, e) in s.positions().iter().zip(expected) {
            assert_abs_diff_eq!(*x, e, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(expected[1], -1.0 + 0.5f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn every_cell_carries_equal_initial_mass() {
        let prof = hat(dom(4.0, 1.0));
        let n = 97;
        let s = init_from_density(&prof, n).unwrap();
        let u = s.unwrapped();
        for k in 0..n {
            let m = if k + 1 < n { prof.cumulative(u[k + 1]) } else { prof.total() } - prof.cumulative(u[k]);
            assert_abs_diff_eq!(m, 1.0 / n as f64, epsilon = 1e-10);
        }
    }

    #[test]
    fn rejects_zero_mass_and_point_masses() {
        let d = dom(2.0, 1.0);
        assert!(DensityProfile::new(d, |_| 0.0, &[]).is_err());
        // nearly all the mass in one narrow cell of a grid
        let mut vals = vec![0.0; 1000];
        vals[500] = 1000.0 / 2.0;
        let g = GridDensity::new(d, vals).unwrap();
        let n = 1 << 20;
        assert!(matches!(init_from_density(&g, n), Err(Error::Initialization(_)) | Ok(_)));
        let spike = GridDensity::new(d, (0..4).map(|i| if i == 2 { 2.0 } else { 0.0 }).collect()).unwrap();
        assert!(init_from_density(&spike, 3).is_ok());
    }

    #[test]
    fn mismatched_mass_is_an_error() {
        let g = GridDensity::uniform(dom(2.0, 0.5), 8);
        let other = GridDensity::new(dom(2.0, 1.0), g.values().to_vec()).unwrap();
        assert!(init_from_density(&other, 4).is_err());
    }

    #[test]
    fn cdf_examples() {
        let d = dom(4.0, 1.0);
        let s = ParticleState::uniform(d, 4).unwrap();
        assert_eq!(s.cdf_at(0.0), 0.5);
        let r = ParticleState::new(d, vec![-2.0, -1.5, 0.25, 1.0], 0.0).unwrap();
        for k in 0..4 {
            assert_eq!(r.cdf_at(r.positions()[k]), k as f64 * 0.25);
            let mid = 0.5 * (r.unwrapped()[k] + r.unwrapped()[k + 1]);
            assert_abs_diff_eq!(r.cdf_at(mid), (k as f64 + 0.5) * 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn pseudo_inverse_examples() {
        let d = dom(4.0, 1.0);
        let s = ParticleState::new(d, vec![-2.0, -1.5, 0.25, 1.0], 0.0).unwrap();
        for k in 0..4 {
            assert_eq!(s.pseudo_inverse(k as f64 * 0.25).unwrap(), s.positions()[k]);
        }
        let u = ParticleState::uniform(d, 8).unwrap();
        for i in 0..100 {
            let z = i as f64 / 100.0;
            assert_abs_diff_eq!(u.pseudo_inverse(z).unwrap(), -2.0 + 4.0 * z, epsilon = 1e-14);
        }
        assert!(s.pseudo_inverse(1.0).is_err());
        assert!(s.pseudo_inverse(-0.1).is_err());
    }

    #[test]
    fn pseudo_inverse_round_trip() {
        let d = dom(5.0, 0.8);
        let s = ParticleState::new(d, vec![1.9, 2.2, -2.4, -1.0, 0.1, 0.7], 0.0).unwrap();
        for i in 0..1000 {
            let z = 0.8 * i as f64 / 1000.0;
            let x = s.pseudo_inverse(z).unwrap();
            assert_abs_diff_eq!(s.cdf_at(x), z, epsilon = 1e-12);
        }
    }

    #[test]
    fn grid_examples() {
        let d = dom(2.0, 1.0);
        let u = ParticleState::uniform(d, 10).unwrap();
        for v in u.to_grid(7).values() {
            assert_abs_diff_eq!(*v, 0.5, epsilon = 1e-13);
        }
        assert_abs_diff_eq!(u.to_grid(1).values()[0], 0.5, epsilon = 1e-15);
        // N = 2, gaps 0.5 and 1.5: densities 1 and 1/3
        let s = ParticleState::new(d, vec![-1.0, -0.5], 0.0).unwrap();
        assert_eq!(s.densities(), vec![1.0, 1.0 / 3.0]);
        let g = s.to_grid(4);
        let third = 1.0 / 3.0;
        // cells [-1,-.5) [-.5,0) [0,.5) [.5,1)
        let expected = [1.0, third, third, third];
        for (v, e) in g.values().iter().zip(expected) {
            assert_abs_diff_eq!(*v, e, epsilon = 1e-14);
        }
        let s2 = ParticleState::new(d, vec![-0.75, -0.25], 0.0).unwrap();
        // cell 0 = [-0.75,-0.25) density 1, cell 1 wraps from -0.25 to 1.25 = -0.75
        let expected = [0.5 * third + 0.5, 0.5 + 0.5 * third, third, third];
        for (v, e) in s2.to_grid(4).values().iter().zip(expected) {
            assert_abs_diff_eq!(*v, e, epsilon = 1e-14);
        }
    }

    #[test]
    fn grid_aligned_with_particles_is_exact() {
        let d = dom(4.0, 1.0);
        let s = ParticleState::new(d, vec![-2.0, -1.5, -0.5, 0.0, 1.0], 0.0).unwrap();
        let g = s.to_grid(8);
        let dens = s.densities();
        let expected = [dens[0], dens[1], dens[1], dens[2], dens[3], dens[3], dens[4], dens[4]];
        for (v, e) in g.values().iter().zip(expected) {
            assert_abs_diff_eq!(*v, e, epsilon = 1e-14);
        }
    }

    #[test]
    fn l1_examples() {
        let d = dom(4.0, 1.0);
        let a = GridDensity::uniform(d, 8);
        assert_eq!(l1_distance(&a, &a).unwrap(), 0.0);
        let b = GridDensity::new(d, vec![0.5; 8]).unwrap();
        assert_abs_diff_eq!(l1_distance(&a, &b).unwrap(), 1.0, epsilon = 1e-15);
        let mut v1 = vec![0.0; 8];
        let mut v2 = vec![0.0; 8];
        v1[2] = 2.0;
        v2[3] = 2.0;
        let (g1, g2) = (GridDensity::new(d, v1).unwrap(), GridDensity::new(d, v2).unwrap());
        assert_abs_diff_eq!(l1_distance(&g1, &g2).unwrap(), 2.0 * 0.5 * 2.0, epsilon = 1e-15);
        assert!(l1_distance(&a, &GridDensity::uniform(d, 4)).is_err());
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let d = dom(3.0, 0.75);
        let g = hat(TorusDomain::new(3.0, 0.75).unwrap()).to_grid(64);
        let back = GridDensity::from_csv(&g.to_csv()).unwrap();
        assert_eq!(back.cell_count(), 64);
        for (a, b) in g.values().iter().zip(back.values()) {
            assert_relative_eq!(*a, *b, max_relative = 1e-15);
        }
        assert_eq!(back.domain().mass(), d.mass());
        assert!(GridDensity::from_csv("# L=1 M=2 mass=1\n1\n").is_err());
        assert!(GridDensity::from_csv("L=1 M=1 mass=1\n1\n").is_err());
        assert!(GridDensity::from_csv("# L=1 M=1 mass=0.5\n1\n").is_err());
    }

    #[test]
    fn vacuum_floor_keeps_mass_and_positivity() {
        let d = dom(8.0, 1.0);
        let p = hat(d).with_vacuum_floor(0.01);
        assert_relative_eq!(p.total(), 1.0, max_relative = 1e-12);
        assert!(p.density(3.5) > 0.0);
        assert_relative_eq!(p.density(3.5), 0.01 / (1.0 + 0.08), max_relative = 1e-12);
        assert_relative_eq!(p.to_grid(128).mass(), 1.0, max_relative = 1e-12);
    }

    fn arb_state() -> impl Strategy<Value = ParticleState> {
        (2usize..40, 0.5f64..20.0, 0.05f64..1.0, -0.5f64..0.5).prop_flat_map(|(n, l, c, start)| {
            proptest::collection::vec(0.05f64..1.0, n).prop_map(move |w| {
                let d = TorusDomain::new(l, c).unwrap();
                let total: f64 = w.iter().sum();
                let mut x = start * l;
                let mut pos = Vec::with_capacity(w.len());
                for g in &w {
                    pos.push(d.wrap(x));
                    x += g / total * l;
                }
                ParticleState::new(d, pos, 0.0).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn mass_is_conserved(s in arb_state(), m in 1usize..300) {
            let c = s.domain().mass();
            let cells: f64 = s.densities().iter().zip(s.gaps()).map(|(r, g)| r * g).sum();
            prop_assert!((cells - c).abs() <= 1e-12 * c * s.n() as f64);
            let gaps: f64 = s.gaps().iter().sum();
            prop_assert!((gaps - s.domain().length()).abs() <= 1e-12 * s.domain().length());
            prop_assert!((s.to_grid(m).mass() - c).abs() <= 1e-12 * c * s.n() as f64);
        }

        #[test]
        fn pseudo_inverse_is_monotone(s in arb_state()) {
            let c = s.domain().mass();
            let mut prev = f64::NEG_INFINITY;
            for i in 0..=200 {
                let x = s.pseudo_inverse_unwrapped(c * i as f64 / 200.0);
                prop_assert!(x >= prev);
                prev = x;
            }
        }
    }
}
