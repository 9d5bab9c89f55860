//! Initial densities built from a [`RunConfig`].

use std::sync::Arc;

use agdiff_core::oracle::Barenblatt;
use agdiff_core::particles::{init_from_density, Cumulative, DensityProfile};
use agdiff_core::{Error, GridDensity, ParticleState, Result, TorusDomain};

use crate::config::{InitialSpec, RunConfig};

type LineFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Either a function of position or a grid read from disk.
#[derive(Debug, Clone)]
pub enum Datum {
    Profile(DensityProfile),
    Grid(GridDensity),
}

impl Cumulative for Datum {
    fn domain(&self) -> &TorusDomain {
        match self {
            Datum::Profile(p) => p.domain(),
            Datum::Grid(g) => g.domain(),
        }
    }

    fn cumulative(&self, x: f64) -> f64 {
        match self {
            Datum::Profile(p) => p.cumulative(x),
            Datum::Grid(g) => g.cumulative(x),
        }
    }

    fn total(&self) -> f64 {
        match self {
            Datum::Profile(p) => p.total(),
            Datum::Grid(g) => g.mass(),
        }
    }
}

impl Datum {
    pub fn to_grid(&self, m: usize) -> Result<GridDensity> {
        match self {
            Datum::Profile(p) => Ok(p.to_grid(m)),
            Datum::Grid(g) if g.cell_count() == m => Ok(g.clone()),
            Datum::Grid(g) if g.cell_count() % m == 0 => agdiff_core::oracle::coarsen(g, g.cell_count() / m),
            Datum::Grid(g) => Err(Error::Mismatch(format!("datum grid has {} cells; cannot project to {m}", g.cell_count()))),
        }
    }

    /// `∫|x|ρ` over the window.
    pub fn first_moment(&self) -> f64 {
        match self {
            Datum::Profile(p) => p.first_moment(),
            Datum::Grid(g) => {
                let h = g.cell_width();
                let d = g.domain();
                g.values().iter().enumerate().map(|(i, v)| v * (d.cell_left(i, g.cell_count()) + 0.5 * h).abs() * h).sum()
            }
        }
    }

    pub fn min_density(&self, m: usize) -> Result<f64> {
        Ok(self.to_grid(m)?.min())
    }

    pub fn particles(&self, n: usize) -> Result<ParticleState> {
        init_from_density(self, n)
    }
}

/// The unnormalized datum as a function on the line, with its kinks.
fn line_function(spec: &InitialSpec, mass: f64) -> Result<Option<(LineFn, Vec<f64>)>> {
    Ok(match *spec {
        InitialSpec::Uniform => Some((Arc::new(|_| 1.0), Vec::new())),
        InitialSpec::Hat { center, width, height } => Some((
            Arc::new(move |x: f64| height * (1.0 - ((x - center) / width).abs()).max(0.0)),
            vec![center - width, center, center + width],
        )),
        InitialSpec::GaussianLike { center, sigma } => {
            Some((Arc::new(move |x: f64| (-(x - center).powi(2) / (2.0 * sigma * sigma)).exp()), Vec::new()))
        }
        InitialSpec::Barenblatt { m, t0 } => {
            let b = Barenblatt::new(m, mass)?;
            let r = b.support_radius(t0);
            Some((Arc::new(move |x| b.eval(t0, x)), vec![-r, 0.0, r]))
        }
        InitialSpec::FromFile { .. } => None,
    })
}

/// The configured datum on the configured torus, normalized to `c_L`.
pub fn build_datum(cfg: &RunConfig) -> Result<Datum> {
    datum_on(cfg, cfg.domain)
}

fn datum_on(cfg: &RunConfig, domain: TorusDomain) -> Result<Datum> {
    let datum = match line_function(&cfg.initial, domain.mass())? {
        Some((f, knots)) => {
            if let InitialSpec::Barenblatt { .. } = cfg.initial {
                let r = knots[2];
                if r >= domain.half() {
                    return Err(Error::Initialization(format!("Barenblatt support radius {r} reaches the seam at L/2 = {}", domain.half())));
                }
            }
            Datum::Profile(DensityProfile::new(domain, move |x| f(x), &knots)?.with_vacuum_floor(cfg.vacuum_floor))
        }
        None => {
            let InitialSpec::FromFile { path } = &cfg.initial else { unreachable!() };
            let g = GridDensity::read_csv(path)?;
            if (g.domain().length() - domain.length()).abs() > 1e-12 * domain.length() {
                return Err(Error::Mismatch(format!(
                    "{} is defined on a torus of length {}, the configuration uses L = {}",
                    path.display(),
                    g.domain().length(),
                    domain.length()
                )));
            }
            let eps = cfg.vacuum_floor;
            let scale = domain.mass() / (g.mass() + eps * domain.length());
            Datum::Grid(GridDensity::new(domain, g.values().iter().map(|v| (v + eps) * scale).collect())?)
        }
    };
    let total = datum.total();
    if (total - domain.mass()).abs() > 1e-12 * domain.mass() {
        return Err(Error::Initialization(format!("normalized datum has mass {total}, expected {}", domain.mass())));
    }
    Ok(datum)
}

/// The datum of `cfg` cut to the window of a torus of length `length`.
///
/// The normalization constant is the one of the configured torus, so the
/// mass grows with the window when the datum has tails.
pub fn cut_datum(cfg: &RunConfig, length: f64) -> Result<Datum> {
    let Some((f, knots)) = line_function(&cfg.initial, cfg.domain.mass())? else {
        return Err(Error::InvalidArgument("a file datum lives on one torus and cannot be cut to other lengths".into()));
    };
    let raw = |l: f64| -> Result<f64> {
        let f = f.clone();
        Ok(DensityProfile::new(TorusDomain::new(l, 1.0)?, move |x| f(x), &knots)?.raw_mass())
    };
    let mass = cfg.domain.mass() * raw(length)? / raw(cfg.domain.length())?;
    datum_on(cfg, TorusDomain::new(length, mass)?)
}
