//! Particle velocities, time stepping and trajectories.

use std::fmt;

use crate::diagnostics::DiagnosticsRow;
use crate::error::{Error, Result};
use crate::kernels::{Kernel, OrderedPairs};
use crate::nonlinearity::Nonlinearity;
use crate::particles::ParticleState;

/// Particle velocities together with their two parts.
#[derive(Debug, Clone, PartialEq)]
pub struct Velocity {
    pub values: Vec<f64>,
    /// `F_k = φ(ρ_k) - φ(ρ_{k-1})`.
    pub fluxes: Vec<f64>,
    /// `S_k = Σ_{j≠k} K'(x_k - x_j)`, before the `c_L/N` weight.
    pub interaction_sums: Vec<f64>,
}

impl Velocity {
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max_k |v_{k+1} - v_k|`, cyclically.
    pub fn max_relative_speed(&self) -> f64 {
        let n = self.values.len();
        (0..n).map(|k| (self.values[(k + 1) % n] - self.values[k]).abs()).fold(0.0, f64::max)
    }
}

/// Right-hand side of the particle system.
pub fn rhs(s: &ParticleState, kernel: &Kernel, nl: &Nonlinearity) -> Velocity {
    let n = s.n();
    let c = s.domain().mass();
    let q = c / n as f64;
    let phi: Vec<f64> = s.densities().into_iter().map(|r| nl.phi(r)).collect();
    let fluxes: Vec<f64> = (0..n).map(|k| phi[k] - phi[(k + n - 1) % n]).collect();
    let sums = pairs(s, kernel).d1_sums();
    let inv = n as f64 / c;
    let values = sums.iter().zip(&fluxes).map(|(sk, fk)| -q * sk - inv * fk).collect();
    Velocity { values, fluxes, interaction_sums: sums }
}

/// `(K^lin' ∗ ρ^N)(x)`: the particle interaction sums interpolated linearly
/// in mass between the two particles bounding the cell of `x`.
pub fn klin_convolve(s: &ParticleState, kernel: &Kernel, x: f64) -> f64 {
    let x = s.domain().wrap(x);
    let (k, theta) = s.locate(x);
    let field = pairs(s, kernel);
    let q = s.particle_mass();
    let sk = field.d1_row(k);
    if theta == 0.0 {
        return q * sk;
    }
    let sk1 = field.d1_row((k + 1) % s.n());
    q * ((1.0 - theta) * sk + theta * sk1)
}

fn pairs<'a>(s: &ParticleState, kernel: &'a Kernel) -> OrderedPairs<'a> {
    OrderedPairs::new(kernel, *s.domain(), &s.unwrapped()[..s.n()])
}

/// [`klin_convolve`] at many points, sharing one pass over the pair sums.
pub fn klin_convolve_many(s: &ParticleState, kernel: &Kernel, xs: &[f64]) -> Vec<f64> {
    let sums = pairs(s, kernel).d1_sums();
    let q = s.particle_mass();
    xs.iter()
        .map(|&x| {
            let (k, theta) = s.locate(s.domain().wrap(x));
            if theta == 0.0 {
                q * sums[k]
            } else {
                q * ((1.0 - theta) * sums[k] + theta * sums[(k + 1) % s.n()])
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    #[default]
    Rk4,
    Heun,
    Euler,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Rk4 => "rk4",
            Method::Heun => "heun",
            Method::Euler => "euler",
        }
    }

    /// Largest `dt λ` kept on the negative real axis; a little inside the
    /// stability interval of each method.
    fn stability_limit(self) -> f64 {
        match self {
            Method::Rk4 => 2.5,
            Method::Heun | Method::Euler => 1.8,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rk4" => Ok(Method::Rk4),
            "heun" => Ok(Method::Heun),
            "euler" => Ok(Method::Euler),
            _ => Err(Error::InvalidArgument(format!("integrator.method must be rk4, heun or euler, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorConfig {
    pub method: Method,
    pub dt_init: f64,
    pub safety: f64,
    /// Smallest admissible gap; `None` derives it from `density_cap`.
    pub min_gap_floor: Option<f64>,
    pub t_end: f64,
    /// Observer period; `None` means `t_end / 100`.
    pub sample_every: Option<f64>,
    pub density_cap: f64,
    /// Step halvings tried before a collapse is reported.
    pub max_retries: u32,
}

impl IntegratorConfig {
    pub fn new(t_end: f64) -> Self {
        Self {
            method: Method::Rk4,
            dt_init: t_end / 100.0,
            safety: 0.2,
            min_gap_floor: None,
            t_end,
            sample_every: None,
            density_cap: 100.0,
            max_retries: 8,
        }
    }

    pub fn with_method(mut self, m: Method) -> Self {
        self.method = m;
        self
    }

    pub fn with_sample_every(mut self, dt: f64) -> Self {
        self.sample_every = Some(dt);
        self
    }

    pub fn with_dt_init(mut self, dt: f64) -> Self {
        self.dt_init = dt;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64, name: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be a positive number, got {v}")))
            }
        };
        pos(self.t_end, "integrator.t_end")?;
        pos(self.dt_init, "integrator.dt_init")?;
        pos(self.density_cap, "density cap")?;
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return Err(Error::InvalidArgument(format!("integrator.safety must lie in (0, 1], got {}", self.safety)));
        }
        if let Some(f) = self.min_gap_floor {
            pos(f, "min_gap_floor")?;
        }
        if let Some(p) = self.sample_every {
            pos(p, "integrator.sample_every")?;
        }
        Ok(())
    }

    pub fn gap_floor(&self, n: usize, mass: f64) -> f64 {
        self.min_gap_floor.unwrap_or(1e-3 * mass / (n as f64 * self.density_cap))
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_every.unwrap_or(self.t_end / 100.0)
    }

    pub fn dt_floor(&self) -> f64 {
        1e-14 * self.t_end
    }
}

/// A step that would break the ordering or shrink a gap below the floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Collapse {
    /// Offending cell `[x_k, x_{k+1})`.
    pub k: usize,
    pub gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Termination {
    Completed,
    GapCollapse { t: f64, k: usize },
    StepFloor { t: f64 },
}

impl Termination {
    pub fn is_completed(&self) -> bool {
        matches!(self, Termination::Completed)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Termination::Completed => "completed",
            Termination::GapCollapse { .. } => "gap_collapse",
            Termination::StepFloor { .. } => "step_floor",
        }
    }

    /// Time reached before stopping; `None` when completed.
    pub fn time(&self) -> Option<f64> {
        match *self {
            Termination::Completed => None,
            Termination::GapCollapse { t, .. } | Termination::StepFloor { t } => Some(t),
        }
    }
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Termination::Completed => write!(f, "completed"),
            Termination::GapCollapse { t, k } => write!(f, "gap_collapse(t={t:e}, k={k})"),
            Termination::StepFloor { t } => write!(f, "step_floor(t={t:e})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepStats {
    pub steps: u64,
    pub rejected: u64,
    pub dt_min: f64,
    pub dt_max: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Sampled states, strictly increasing in time.
    pub snapshots: Vec<ParticleState>,
    /// Filled by [`crate::diagnostics::annotate`].
    pub rows: Vec<DiagnosticsRow>,
    pub termination: Termination,
    pub stats: StepStats,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.time()).collect()
    }

    pub fn final_state(&self) -> &ParticleState {
        self.snapshots.last().expect("a trajectory holds at least its initial state")
    }
}

/// Upper bound on the spectral radius of the velocity Jacobian.
pub fn stiffness(s: &ParticleState, kernel: &Kernel, nl: &Nonlinearity) -> f64 {
    let n = s.n();
    let inv_q = 1.0 / s.particle_mass();
    let a: Vec<f64> = (0..n)
        .map(|k| {
            let g = s.gap(k);
            let r = s.particle_mass() / g;
            inv_q * nl.phi_prime(r) * r / g
        })
        .collect();
    let diff = (0..n).map(|k| 2.0 * (a[k] + a[(k + n - 1) % n])).fold(0.0, f64::max);
    diff + 2.0 * s.domain().mass() * kernel.norms().sup_k2
}

/// One explicit step of size `dt`.
pub fn step(s: &ParticleState, kernel: &Kernel, nl: &Nonlinearity, cfg: &IntegratorConfig, dt: f64) -> std::result::Result<ParticleState, Collapse> {
    if dt == 0.0 {
        return Ok(s.clone());
    }
    let v = rhs(s, kernel, nl);
    step_from(s, &v, kernel, nl, cfg, dt)
}

fn advance(s: &ParticleState, dirs: &[(&[f64], f64)], dt: f64, t: f64) -> std::result::Result<ParticleState, Collapse> {
    let d = *s.domain();
    let u = s.unwrapped();
    let pos = (0..s.n())
        .map(|k| {
            let mut dx = 0.0;
            for (v, w) in dirs {
                dx += w * v[k];
            }
            d.wrap(u[k] + dt * dx)
        })
        .collect();
    ParticleState::from_ordered(d, pos, t).map_err(|k| Collapse { k, gap: 0.0 })
}

/// One step reusing an already computed velocity at `s`.
fn step_from(
    s: &ParticleState,
    v1: &Velocity,
    kernel: &Kernel,
    nl: &Nonlinearity,
    cfg: &IntegratorConfig,
    dt: f64,
) -> std::result::Result<ParticleState, Collapse> {
    let t = s.time();
    let k1 = v1.values.as_slice();
    let next = match cfg.method {
        Method::Euler => advance(s, &[(k1, 1.0)], dt, t + dt)?,
        Method::Heun => {
            let s2 = advance(s, &[(k1, 1.0)], dt, t + dt)?;
            let k2 = rhs(&s2, kernel, nl).values;
            advance(s, &[(k1, 0.5), (&k2, 0.5)], dt, t + dt)?
        }
        Method::Rk4 => {
            let s2 = advance(s, &[(k1, 0.5)], dt, t + 0.5 * dt)?;
            let k2 = rhs(&s2, kernel, nl).values;
            let s3 = advance(s, &[(&k2, 0.5)], dt, t + 0.5 * dt)?;
            let k3 = rhs(&s3, kernel, nl).values;
            let s4 = advance(s, &[(&k3, 1.0)], dt, t + dt)?;
            let k4 = rhs(&s4, kernel, nl).values;
            let w = 1.0 / 6.0;
            advance(s, &[(k1, w), (&k2, 2.0 * w), (&k3, 2.0 * w), (&k4, w)], dt, t + dt)?
        }
    };
    let floor = cfg.gap_floor(s.n(), s.domain().mass());
    let gaps = next.unwrapped();
    if let Some(k) = gaps.windows(2).position(|w| w[1] - w[0] < floor) {
        return Err(Collapse { k, gap: gaps[k + 1] - gaps[k] });
    }
    Ok(next)
}

/// Integrates to `cfg.t_end`, recording a snapshot at every sampling time and
/// passing it to each observer.
pub fn simulate(
    s0: &ParticleState,
    kernel: &Kernel,
    nl: &Nonlinearity,
    cfg: &IntegratorConfig,
    observers: &mut [&mut dyn FnMut(&ParticleState)],
) -> Result<Trajectory> {
    cfg.validate()?;
    let t0 = s0.time();
    let t_end = cfg.t_end;
    if t_end <= t0 {
        return Err(Error::InvalidArgument(format!("t_end = {t_end} must exceed the initial time {t0}")));
    }
    let period = cfg.sample_period();
    let samples: Vec<f64> = {
        let count = ((t_end - t0) / period * (1.0 + 1e-12)).floor() as usize;
        let mut ts: Vec<f64> = (0..=count).map(|i| t0 + i as f64 * period).filter(|&t| t < t_end).collect();
        ts.push(t_end);
        ts
    };
    let dt_floor = cfg.dt_floor();
    let mut stats = StepStats { dt_min: f64::INFINITY, ..Default::default() };
    let mut s = s0.clone();
    let mut snapshots = vec![s.clone()];
    for obs in observers.iter_mut() {
        obs(&s);
    }
    let mut next_sample = 1;
    let mut termination = Termination::Completed;
    while next_sample < samples.len() {
        let target = samples[next_sample];
        let v = rhs(&s, kernel, nl);
        let dt_gap = cfg.safety * s.min_gap() / (v.max_relative_speed() + 1e-30);
        let dt_stab = cfg.method.stability_limit() / stiffness(&s, kernel, nl).max(1e-300);
        let mut dt = cfg.dt_init.min(dt_gap).min(dt_stab);
        if !(dt >= dt_floor) {
            termination = Termination::StepFloor { t: s.time() };
            break;
        }
        let mut retries = 0;
        let stepped = loop {
            // a remainder of a few ulps is folded into this step
            let hits = s.time() + dt * (1.0 + 1e-9) >= target;
            let h = if hits { target - s.time() } else { dt };
            match step_from(&s, &v, kernel, nl, cfg, h) {
                Ok(next) => break Ok(if hits { next.with_time(target) } else { next }),
                Err(c) => {
                    stats.rejected += 1;
                    retries += 1;
                    dt = h * 0.5;
                    if dt < dt_floor {
                        break Err(Termination::StepFloor { t: s.time() });
                    }
                    if retries > cfg.max_retries {
                        break Err(Termination::GapCollapse { t: s.time(), k: c.k });
                    }
                }
            }
        };
        match stepped {
            Ok(next) => {
                let h = next.time() - s.time();
                stats.steps += 1;
                stats.dt_min = stats.dt_min.min(h);
                stats.dt_max = stats.dt_max.max(h);
                s = next;
                if s.time() == target {
                    for obs in observers.iter_mut() {
                        obs(&s);
                    }
                    snapshots.push(s.clone());
                    next_sample += 1;
                }
            }
            Err(t) => {
                termination = t;
                break;
            }
        }
    }
    if stats.steps == 0 {
        stats.dt_min = 0.0;
    }
    Ok(Trajectory { snapshots, rows: Vec::new(), termination, stats })
}
