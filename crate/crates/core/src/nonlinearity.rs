//! Diffusion nonlinearities `φ(ρ) = ρ W'(ρ) - W(ρ)` and their structural constants.

use crate::error::{Error, Result};
use crate::quad;
use crate::validation::{ValidationReport, Witness};

#[derive(Debug, Clone, PartialEq)]
pub enum NonlinearitySpec {
    /// `φ(ρ) = ρ^m`, `m >= 1`.
    PowerLaw { m: f64 },
    /// Piecewise-linear `φ` and `W` tabulated on increasing densities starting at 0.
    Custom { rho: Vec<f64>, phi: Vec<f64>, w: Vec<f64> },
}

/// Constants `c0, c1, c2, ρ̂, ρ̄` of the growth conditions on `φ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructuralConstants {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub rho_hat: f64,
    pub rho_bar: f64,
}

#[derive(Debug, Clone)]
enum Form {
    Power { m: f64 },
    Linear,
    Table { rho: Vec<f64>, phi: Vec<f64>, w: Vec<f64> },
}

#[derive(Debug, Clone)]
pub struct Nonlinearity {
    spec: NonlinearitySpec,
    form: Form,
    constants: StructuralConstants,
}

pub fn build_nonlinearity(spec: NonlinearitySpec) -> Result<Nonlinearity> {
    let (form, constants) = match &spec {
        NonlinearitySpec::PowerLaw { m } => {
            let m = *m;
            if !(m.is_finite() && m >= 1.0) {
                return Err(Error::InvalidNonlinearity(format!("power law exponent must satisfy m >= 1, got {m}")));
            }
            let form = if m == 1.0 { Form::Linear } else { Form::Power { m } };
            (form, StructuralConstants { c0: m, c1: 1.0, c2: 1.0, rho_hat: 0.5, rho_bar: 2.0 })
        }
        NonlinearitySpec::Custom { rho, phi, w } => {
            if rho.len() < 2 || rho.len() != phi.len() || rho.len() != w.len() {
                return Err(Error::InvalidNonlinearity("custom table needs >= 2 rows of (rho, phi, w)".into()));
            }
            if rho[0] != 0.0 || rho.windows(2).any(|p| p[1] <= p[0]) {
                return Err(Error::InvalidNonlinearity("custom rho nodes must start at 0 and increase strictly".into()));
            }
            if rho.iter().chain(phi).chain(w).any(|v| !v.is_finite()) {
                return Err(Error::InvalidNonlinearity("custom table has non-finite entries".into()));
            }
            let form = Form::Table { rho: rho.clone(), phi: phi.clone(), w: w.clone() };
            (form, estimate_constants(rho, phi))
        }
    };
    Ok(Nonlinearity { spec, form, constants })
}

/// Constants read off a table: `c0 = max ρφ'/φ`, `c1 = max φ/ρ` on `ρ <= 1/2`,
/// `c2 = min φ/ρ` on `ρ >= 2` (or on the last node when the table stops short).
fn estimate_constants(rho: &[f64], phi: &[f64]) -> StructuralConstants {
    let n = rho.len();
    let mut c0: f64 = 0.0;
    for i in 1..n {
        let slope = (phi[i] - phi[i - 1]) / (rho[i] - rho[i - 1]);
        for &r in &[rho[i - 1], rho[i]] {
            let p = lerp_table(rho, phi, r);
            if p > 0.0 && r > 0.0 {
                c0 = c0.max(slope * r / p);
            }
        }
    }
    let c1 = rho
        .iter()
        .zip(phi)
        .filter(|(r, _)| **r > 0.0 && **r <= 0.5)
        .map(|(r, p)| p / r)
        .fold(f64::NEG_INFINITY, f64::max);
    let c1 = if c1.is_finite() { c1 } else { (phi[1] / rho[1]).max(f64::MIN_POSITIVE) };
    let big: Vec<f64> = rho.iter().zip(phi).filter(|(r, _)| **r >= 2.0).map(|(r, p)| p / r).collect();
    let c2 = if big.is_empty() { phi[n - 1] / rho[n - 1] } else { big.into_iter().fold(f64::INFINITY, f64::min) };
    StructuralConstants { c0: c0.max(1.0), c1, c2, rho_hat: 0.5, rho_bar: 2.0 }
}

fn lerp_table(x: &[f64], y: &[f64], v: f64) -> f64 {
    let n = x.len();
    let i = x.partition_point(|&t| t <= v).clamp(1, n - 1) - 1;
    let t = (v - x[i]) / (x[i + 1] - x[i]);
    y[i] + t * (y[i + 1] - y[i])
}

fn slope_table(x: &[f64], y: &[f64], v: f64) -> f64 {
    let n = x.len();
    let i = x.partition_point(|&t| t <= v).clamp(1, n - 1) - 1;
    (y[i + 1] - y[i]) / (x[i + 1] - x[i])
}

impl Nonlinearity {
    pub fn spec(&self) -> &NonlinearitySpec {
        &self.spec
    }

    pub fn constants(&self) -> &StructuralConstants {
        &self.constants
    }

    /// False for linear diffusion, whose `W = ρ log ρ - ρ` takes negative values.
    pub fn has_nonnegative_energy(&self) -> bool {
        !matches!(self.form, Form::Linear)
    }

    pub fn exponent(&self) -> Option<f64> {
        match self.form {
            Form::Power { m } => Some(m),
            Form::Linear => Some(1.0),
            Form::Table { .. } => None,
        }
    }

    #[inline]
    pub fn phi(&self, rho: f64) -> f64 {
        match &self.form {
            Form::Linear => rho,
            Form::Power { m } => pow(rho, *m),
            Form::Table { rho: r, phi, .. } => lerp_table(r, phi, rho),
        }
    }

    #[inline]
    pub fn phi_prime(&self, rho: f64) -> f64 {
        match &self.form {
            Form::Linear => 1.0,
            Form::Power { m } => m * pow(rho, m - 1.0),
            Form::Table { rho: r, phi, .. } => slope_table(r, phi, rho),
        }
    }

    /// `φ` applied elementwise.
    pub fn phi_into(&self, rho: &[f64], out: &mut [f64]) {
        match &self.form {
            Form::Power { m } if *m == 2.0 => out.iter_mut().zip(rho).for_each(|(o, r)| *o = r * r),
            Form::Linear => out.copy_from_slice(rho),
            _ => out.iter_mut().zip(rho).for_each(|(o, &r)| *o = self.phi(r)),
        }
    }

    /// `max φ'` over the given densities.
    pub fn max_phi_prime(&self, rho: &[f64]) -> f64 {
        match &self.form {
            // φ' is nondecreasing for power laws with m >= 1
            Form::Power { .. } | Form::Linear => {
                let top = rho.iter().copied().fold(0.0, f64::max);
                self.phi_prime(top)
            }
            Form::Table { .. } => rho.iter().map(|&r| self.phi_prime(r)).fold(0.0, f64::max),
        }
    }

    /// Internal energy density `W`.
    #[inline]
    pub fn w(&self, rho: f64) -> f64 {
        match &self.form {
            Form::Linear => {
                if rho > 0.0 {
                    rho * rho.ln() - rho
                } else {
                    0.0
                }
            }
            Form::Power { m } => pow(rho, *m) / (m - 1.0),
            Form::Table { rho: r, w, .. } => lerp_table(r, w, rho),
        }
    }

    pub fn phi_inverse(&self, v: f64) -> f64 {
        match &self.form {
            Form::Linear => v,
            Form::Power { m } => {
                if *m == 2.0 {
                    v.sqrt()
                } else {
                    v.powf(1.0 / m)
                }
            }
            Form::Table { .. } => {
                if v <= 0.0 {
                    return 0.0;
                }
                let mut hi = 1.0;
                while self.phi(hi) < v {
                    hi *= 2.0;
                }
                quad::bisect_last_true(|r| self.phi(r) < v, 0.0, hi, 1e-12 * (1.0 + v))
            }
        }
    }

    pub fn validate(&self, rho_max: f64, n_samples: usize) -> ValidationReport {
        validate_nonlinearity(self, rho_max, n_samples)
    }
}

#[inline]
fn pow(rho: f64, m: f64) -> f64 {
    if m == 2.0 {
        rho * rho
    } else if m == 3.0 {
        rho * rho * rho
    } else if m == 1.0 {
        rho
    } else {
        rho.powf(m)
    }
}

/// Checks `W >= 0`, `φ(0) = 0`, strict monotonicity, `φ'ρ <= c0 φ`,
/// `φ <= max(ρ, c0 W)` and the two-sided growth condition on `(0, rho_max]`.
pub fn validate_nonlinearity(nl: &Nonlinearity, rho_max: f64, n_samples: usize) -> ValidationReport {
    let n = n_samples.max(100);
    let grid: Vec<f64> = (1..=n).map(|i| rho_max * i as f64 / n as f64).collect();
    let c = nl.constants;
    let rel = 1e-12;
    let mut report = ValidationReport::new(format!("nonlinearity {:?}", nl.spec));

    let first = |f: &dyn Fn(f64) -> Option<(f64, f64)>| {
        grid.iter().find_map(|&r| f(r).map(|(observed, bound)| Witness { at: r, node: None, observed, bound }))
    };

    // W >= 0; probe below the grid too, where ρ log ρ - ρ is most negative
    let w_probe: Vec<f64> = grid.iter().copied().chain([0.5, 1.0].into_iter().filter(|r| *r <= rho_max)).collect();
    let wit = w_probe.iter().find_map(|&r| {
        let w = nl.w(r);
        (w < -1e-14).then_some(Witness { at: r, node: None, observed: w, bound: 0.0 })
    });
    report.push("phi1_w_nonneg", wit, "W(rho) >= 0");
    if !nl.has_nonnegative_energy() {
        if let Some(last) = report.checks.last_mut() {
            last.expected_failure = !last.passed;
            last.detail.push_str(" (linear diffusion: W = rho log rho - rho is not nonnegative)");
        }
    }

    let p0 = nl.phi(0.0);
    report.push(
        "phi2_zero",
        (p0.abs() > 1e-15).then_some(Witness { at: 0.0, node: None, observed: p0, bound: 0.0 }),
        "phi(0) = 0",
    );

    let mut prev = (0.0, nl.phi(0.0));
    let mut wit = None;
    for &r in &grid {
        let p = nl.phi(r);
        if !(p > prev.1) {
            wit = Some(Witness { at: r, node: None, observed: p, bound: prev.1 });
            break;
        }
        prev = (r, p);
    }
    report.push("phi3_monotone", wit, "phi strictly increasing");

    let wit = first(&|r| {
        let lhs = nl.phi_prime(r) * r;
        let rhs = c.c0 * nl.phi(r);
        (lhs > rhs * (1.0 + rel) + 1e-300).then_some((lhs, rhs))
    });
    report.push("phi4_growth", wit, format!("phi'(rho) rho <= c0 phi(rho), c0 = {}", c.c0));

    let wit = first(&|r| {
        let lhs = nl.phi(r);
        let rhs = r.max(c.c0 * nl.w(r));
        (lhs > rhs * (1.0 + rel)).then_some((lhs, rhs))
    });
    report.push("phi5_energy", wit, "phi(rho) <= max(rho, c0 W(rho))");

    let wit = first(&|r| {
        let p = nl.phi(r);
        if r <= c.rho_hat && p > c.c1 * r * (1.0 + rel) {
            Some((p, c.c1 * r))
        } else if r >= c.rho_bar && p < c.c2 * r * (1.0 - rel) {
            Some((p, c.c2 * r))
        } else {
            None
        }
    });
    report.push(
        "phi_rho_cond",
        wit,
        format!("phi <= {} rho below {}, phi >= {} rho above {}", c.c1, c.rho_hat, c.c2, c.rho_bar),
    );

    let wit = first(&|r| {
        let back = nl.phi_inverse(nl.phi(r));
        ((back - r).abs() > 1e-10 * r).then_some((back, r))
    });
    report.push("phi_inverse", wit, "phi_inverse(phi(rho)) = rho");
    report
}
