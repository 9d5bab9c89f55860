//! Run configuration: flat `key = value` files or nested JSON.
//!
//! ```text
//! domain.L = 8
//! domain.mass = 1
//! kernel.kind = double_yukawa
//! kernel.beta = 2
//! phi.m = 2
//! initial.kind = hat
//! initial.width = 1
//! n_particles = 512
//! integrator.t_end = 1
//! outputs.dir = out
//! ```
//!
//! Every key is consumed by exactly one field; anything left over is an error.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use agdiff_core::dynamics::{IntegratorConfig, Method};
use agdiff_core::{KernelSpec, NonlinearitySpec, TorusDomain};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("key `{0}` given twice")]
    Duplicate(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("missing key `{key}`: expected {expected}")]
    Missing { key: String, expected: String },
    #[error("invalid value `{value}` for `{key}`: expected {expected}")]
    Invalid { key: String, value: String, expected: String },
    #[error("invalid JSON config: {0}")]
    Json(String),
}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, PartialEq)]
pub enum InitialSpec {
    Uniform,
    /// Tent of half-width `width` and peak `height` centred at `center`.
    Hat { center: f64, width: f64, height: f64 },
    /// `exp(-(x - center)² / (2σ²))` cut to the window `[-L/2, L/2)`.
    GaussianLike { center: f64, sigma: f64 },
    /// Barenblatt profile of exponent `m` at time `t0`.
    Barenblatt { m: f64, t0: f64 },
    /// A grid density file (`# L=.. M=.. mass=..` header).
    FromFile { path: PathBuf },
}

impl InitialSpec {
    pub fn name(&self) -> &'static str {
        match self {
            InitialSpec::Uniform => "uniform",
            InitialSpec::Hat { .. } => "hat",
            InitialSpec::GaussianLike { .. } => "gaussian_like",
            InitialSpec::Barenblatt { .. } => "barenblatt",
            InitialSpec::FromFile { .. } => "from_file",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outputs {
    pub dir: PathBuf,
    /// Cells of the grid used for `final_state.csv` and L¹ comparisons.
    pub grid: usize,
    /// Comparison cells per unit length in domain sweeps.
    pub window_cells_per_unit: f64,
    /// Sub-cell quadrature points for the energy.
    pub quad_per_cell: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub domain: TorusDomain,
    pub kernel: KernelSpec,
    pub phi: NonlinearitySpec,
    pub initial: InitialSpec,
    /// Added to the datum before renormalization; 0 keeps vacuum.
    pub vacuum_floor: f64,
    pub n_particles: usize,
    pub integrator: IntegratorConfig,
    /// A collapse before this time is a failed run.
    pub min_time: f64,
    pub outputs: Outputs,
}

impl RunConfig {
    pub fn sample_every(&self) -> f64 {
        self.integrator.sample_period()
    }

    /// Same configuration on a torus of another length (mass unchanged).
    pub fn with_length(&self, length: f64) -> std::result::Result<Self, agdiff_core::Error> {
        let mut c = self.clone();
        c.domain = TorusDomain::new(length, self.domain.mass())?;
        Ok(c)
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let is_json = path.extension().is_some_and(|e| e == "json") || text.trim_start().starts_with('{');
    let map = if is_json { flatten_json(&text)? } else { parse_flat(&text)? };
    from_map(map, &base)
}

/// Parses configuration text; relative file paths resolve against `base`.
pub fn parse_config_str(text: &str, base: &Path) -> Result<RunConfig> {
    let map = if text.trim_start().starts_with('{') { flatten_json(text)? } else { parse_flat(text)? };
    from_map(map, base)
}

fn parse_flat(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax { line: i + 1, text: raw.to_string() })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1, text: raw.to_string() });
        }
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(ConfigError::Duplicate(k.to_string()));
        }
    }
    Ok(map)
}

fn flatten_json(text: &str) -> Result<BTreeMap<String, String>> {
    use serde_json::Value;
    fn scalar(v: &Value) -> Option<String> {
        match v {
            Value::String(s) => Some(s.clone()),
            Value::Number(n) => Some(n.to_string()),
            Value::Bool(b) => Some(b.to_string()),
            _ => None,
        }
    }
    fn walk(prefix: &str, v: &Value, out: &mut BTreeMap<String, String>) -> Result<()> {
        match v {
            Value::Object(obj) => {
                for (k, v) in obj {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, v, out)?;
                }
            }
            Value::Array(items) => {
                let parts = items
                    .iter()
                    .map(|i| scalar(i).ok_or_else(|| ConfigError::Json(format!("`{prefix}` must be a list of scalars"))))
                    .collect::<Result<Vec<_>>>()?;
                insert(out, prefix, parts.join(","))?;
            }
            Value::Null => return Err(ConfigError::Json(format!("`{prefix}` is null"))),
            other => insert(out, prefix, scalar(other).unwrap())?,
        }
        Ok(())
    }
    fn insert(out: &mut BTreeMap<String, String>, key: &str, v: String) -> Result<()> {
        if out.insert(key.to_string(), v).is_some() {
            return Err(ConfigError::Duplicate(key.to_string()));
        }
        Ok(())
    }
    let v: Value = serde_json::from_str(text).map_err(|e| ConfigError::Json(e.to_string()))?;
    if !v.is_object() {
        return Err(ConfigError::Json("top level must be an object".into()));
    }
    let mut out = BTreeMap::new();
    walk("", &v, &mut out)?;
    Ok(out)
}

/// Key/value pairs that are removed as they are read.
struct Fields(BTreeMap<String, String>);

impl Fields {
    fn take(&mut self, key: &str) -> Option<String> {
        self.0.remove(key)
    }

    fn req(&mut self, key: &str, expected: &str) -> Result<String> {
        self.take(key).ok_or_else(|| ConfigError::Missing { key: key.into(), expected: expected.into() })
    }

    fn num(key: &str, v: &str, expected: &str, ok: impl Fn(f64) -> bool) -> Result<f64> {
        match v.parse::<f64>() {
            Ok(x) if x.is_finite() && ok(x) => Ok(x),
            _ => Err(ConfigError::Invalid { key: key.into(), value: v.into(), expected: expected.into() }),
        }
    }

    fn f64_or(&mut self, key: &str, default: f64, expected: &str, ok: impl Fn(f64) -> bool) -> Result<f64> {
        match self.take(key) {
            Some(v) => Self::num(key, &v, expected, ok),
            None => Ok(default),
        }
    }

    fn f64_opt(&mut self, key: &str, expected: &str, ok: impl Fn(f64) -> bool) -> Result<Option<f64>> {
        self.take(key).map(|v| Self::num(key, &v, expected, ok)).transpose()
    }

    fn f64_req(&mut self, key: &str, expected: &str, ok: impl Fn(f64) -> bool) -> Result<f64> {
        let v = self.req(key, expected)?;
        Self::num(key, &v, expected, ok)
    }

    fn usize_or(&mut self, key: &str, default: usize, expected: &str, min: usize) -> Result<usize> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => match v.parse::<usize>() {
                Ok(n) if n >= min => Ok(n),
                _ => Err(ConfigError::Invalid { key: key.into(), value: v, expected: expected.into() }),
            },
        }
    }

    fn list(&mut self, key: &str, expected: &str) -> Result<Vec<f64>> {
        let v = self.req(key, expected)?;
        v.split(',')
            .map(|p| p.trim().parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| ConfigError::Invalid { key: key.into(), value: v.clone(), expected: expected.into() })
    }
}

const POS: &str = "a positive number";

fn from_map(map: BTreeMap<String, String>, base: &Path) -> Result<RunConfig> {
    let mut f = Fields(map);
    let pos = |x: f64| x > 0.0;

    let length = f.f64_req("domain.L", POS, pos)?;
    let mass = f.f64_or("domain.mass", 1.0, POS, pos)?;
    let domain = TorusDomain::new(length, mass)
        .map_err(|e| ConfigError::Invalid { key: "domain.L".into(), value: length.to_string(), expected: e.to_string() })?;

    let kernel = parse_kernel(&mut f)?;
    let phi = parse_phi(&mut f)?;
    let initial = parse_initial(&mut f, &phi, base)?;
    let vacuum_floor = f.f64_or("initial.vacuum_floor", 0.0, "a number >= 0", |x| x >= 0.0)?;
    let n_particles = f.usize_or("n_particles", usize::MAX, "an integer >= 2", 2)?;
    if n_particles == usize::MAX {
        return Err(ConfigError::Missing { key: "n_particles".into(), expected: "an integer >= 2".into() });
    }

    let t_end = f.f64_req("integrator.t_end", POS, pos)?;
    let mut integrator = IntegratorConfig::new(t_end);
    if let Some(m) = f.take("integrator.method") {
        integrator.method = m.parse::<Method>().map_err(|_| ConfigError::Invalid {
            key: "integrator.method".into(),
            value: m.clone(),
            expected: "one of rk4, heun, euler".into(),
        })?;
    }
    integrator.dt_init = f.f64_or("integrator.dt_init", t_end / 100.0, POS, pos)?;
    integrator.safety = f.f64_or("integrator.safety", 0.2, "a number in (0, 1]", |x| x > 0.0 && x <= 1.0)?;
    integrator.min_gap_floor = f.f64_opt("integrator.min_gap_floor", POS, pos)?;
    integrator.density_cap = f.f64_or("integrator.density_cap", integrator.density_cap, POS, pos)?;
    integrator.max_retries = f.usize_or("integrator.max_retries", integrator.max_retries as usize, "a non-negative integer", 0)? as u32;
    let min_time = f.f64_or("integrator.min_time", t_end, "a number in [0, t_end]", |x| x >= 0.0 && x <= t_end)?;
    let sample_every = f.f64_or("outputs.sample_every", t_end / 100.0, "a number in (0, t_end]", |x| x > 0.0 && x <= t_end)?;
    integrator.sample_every = Some(sample_every);

    let outputs = Outputs {
        dir: base.join(f.take("outputs.dir").unwrap_or_else(|| "out".into())),
        grid: f.usize_or("outputs.grid", 1024, "an integer >= 1", 1)?,
        window_cells_per_unit: f.f64_or("outputs.window_cells_per_unit", 16.0, POS, pos)?,
        quad_per_cell: f.usize_or("outputs.quad_per_cell", 4, "an integer >= 1", 1)?,
    };

    if let Some(key) = f.0.keys().next() {
        return Err(ConfigError::UnknownKey(key.clone()));
    }
    Ok(RunConfig { domain, kernel, phi, initial, vacuum_floor, n_particles, integrator, min_time, outputs })
}

fn parse_kernel(f: &mut Fields) -> Result<KernelSpec> {
    let kind = f.req("kernel.kind", "one of double_yukawa, morse, zero, tabulated")?;
    let pos = |x: f64| x > 0.0;
    Ok(match kind.as_str() {
        "double_yukawa" => KernelSpec::DoubleYukawa { beta: f.f64_req("kernel.beta", "a number > 1", |b| b > 1.0)? },
        "morse" => KernelSpec::Morse {
            attr_amp: f.f64_req("kernel.attr_amp", POS, pos)?,
            attr_range: f.f64_req("kernel.attr_range", POS, pos)?,
            rep_amp: f.f64_req("kernel.rep_amp", POS, pos)?,
            rep_range: f.f64_req("kernel.rep_range", POS, pos)?,
        },
        "zero" => KernelSpec::Zero,
        "tabulated" => {
            let nodes = f.list("kernel.nodes", "a comma-separated list of increasing numbers")?;
            let values = f.list("kernel.values", "a comma-separated list of numbers, one per node")?;
            if values.len() != nodes.len() {
                return Err(ConfigError::Invalid {
                    key: "kernel.values".into(),
                    value: format!("{} entries", values.len()),
                    expected: format!("{} entries, one per node", nodes.len()),
                });
            }
            KernelSpec::Tabulated { nodes, values }
        }
        _ => {
            return Err(ConfigError::Invalid {
                key: "kernel.kind".into(),
                value: kind,
                expected: "one of double_yukawa, morse, zero, tabulated".into(),
            })
        }
    })
}

fn parse_phi(f: &mut Fields) -> Result<NonlinearitySpec> {
    let kind = f.take("phi.kind").unwrap_or_else(|| "power".into());
    match kind.as_str() {
        "power" => Ok(NonlinearitySpec::PowerLaw { m: f.f64_req("phi.m", "an exponent m >= 1", |m| m >= 1.0)? }),
        "custom" => {
            let rho = f.list("phi.rho", "increasing densities starting at 0")?;
            let phi = f.list("phi.phi", "one φ value per density")?;
            let w = f.list("phi.w", "one W value per density")?;
            Ok(NonlinearitySpec::Custom { rho, phi, w })
        }
        _ => Err(ConfigError::Invalid { key: "phi.kind".into(), value: kind, expected: "power or custom".into() }),
    }
}

fn parse_initial(f: &mut Fields, phi: &NonlinearitySpec, base: &Path) -> Result<InitialSpec> {
    let kind = f.req("initial.kind", "one of uniform, hat, gaussian_like, barenblatt, from_file")?;
    let pos = |x: f64| x > 0.0;
    let any = |_: f64| true;
    Ok(match kind.as_str() {
        "uniform" => InitialSpec::Uniform,
        "hat" => InitialSpec::Hat {
            center: f.f64_or("initial.center", 0.0, "a number", any)?,
            width: f.f64_req("initial.width", "a positive half-width", pos)?,
            height: f.f64_or("initial.height", 1.0, POS, pos)?,
        },
        "gaussian_like" => InitialSpec::GaussianLike {
            center: f.f64_or("initial.center", 0.0, "a number", any)?,
            sigma: f.f64_req("initial.sigma", POS, pos)?,
        },
        "barenblatt" => {
            let default_m = match phi {
                NonlinearitySpec::PowerLaw { m } if *m > 1.0 => Some(*m),
                _ => None,
            };
            let m = match default_m {
                Some(d) => f.f64_or("initial.m", d, "an exponent m > 1", |m| m > 1.0)?,
                None => f.f64_req("initial.m", "an exponent m > 1", |m| m > 1.0)?,
            };
            InitialSpec::Barenblatt { m, t0: f.f64_req("initial.t0", POS, pos)? }
        }
        "from_file" => InitialSpec::FromFile { path: base.join(f.req("initial.path", "a grid density file path")?) },
        _ => {
            return Err(ConfigError::Invalid {
                key: "initial.kind".into(),
                value: kind,
                expected: "one of uniform, hat, gaussian_like, barenblatt, from_file".into(),
            })
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "domain.L = 8\nkernel.kind = zero\nphi.m = 2\ninitial.kind = uniform\nn_particles = 64\nintegrator.t_end = 1\n";

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = format!("# header\n\n{MINIMAL}outputs.grid = 64 # trailing\n");
        let c = parse_config_str(&text, Path::new("")).unwrap();
        assert_eq!(c.outputs.grid, 64);
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        let err = parse_config_str(&format!("{MINIMAL}phi.m = 3\n"), Path::new("")).unwrap_err();
        assert!(matches!(err, ConfigError::Duplicate(k) if k == "phi.m"));
    }

    #[test]
    fn json_lists_become_comma_lists() {
        let text = r#"{"domain": {"L": 4}, "kernel": {"kind": "tabulated", "nodes": [0, 1, 2], "values": [1, 0.5, 0]},
            "phi": {"m": 2}, "initial": {"kind": "uniform"}, "n_particles": 32, "integrator": {"t_end": 0.5}}"#;
        let c = parse_config_str(text, Path::new("")).unwrap();
        assert_eq!(c.kernel, KernelSpec::Tabulated { nodes: vec![0.0, 1.0, 2.0], values: vec![1.0, 0.5, 0.0] });
    }

    #[test]
    fn barenblatt_exponent_defaults_to_phi() {
        let text = MINIMAL.replace("initial.kind = uniform", "initial.kind = barenblatt\ninitial.t0 = 0.1");
        let c = parse_config_str(&text, Path::new("")).unwrap();
        assert_eq!(c.initial, InitialSpec::Barenblatt { m: 2.0, t0: 0.1 });
    }

    #[test]
    fn missing_line_separator_is_a_syntax_error() {
        let err = parse_config_str(&format!("{MINIMAL}outputs.grid 64\n"), Path::new("")).unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 7, .. }));
    }
}
