//! Pass/fail reports for structural assumptions on kernels and nonlinearities.

use std::fmt;

/// A sample point at which an assumption was observed to fail.
#[derive(Debug, Clone, PartialEq)]
pub struct Witness {
    pub at: f64,
    /// Table node index, when the failing sample is a tabulated node.
    pub node: Option<usize>,
    pub observed: f64,
    pub bound: f64,
}

impl fmt::Display for Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node {
            Some(i) => write!(f, "node {i} at {:.6e}: observed {:.6e}, bound {:.6e}", self.at, self.observed, self.bound),
            None => write!(f, "at {:.6e}: observed {:.6e}, bound {:.6e}", self.at, self.observed, self.bound),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// Known failure for a documented, non-conforming configuration.
    pub expected_failure: bool,
    pub witness: Option<Witness>,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub subject: String,
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn new(subject: impl Into<String>) -> Self {
        Self { subject: subject.into(), checks: Vec::new() }
    }

    pub(crate) fn push(&mut self, name: &'static str, witness: Option<Witness>, detail: impl Into<String>) {
        self.checks.push(Check {
            name,
            passed: witness.is_none(),
            expected_failure: false,
            witness,
            detail: detail.into(),
        });
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// True when every failure is a documented expected failure.
    pub fn acceptable(&self) -> bool {
        self.checks.iter().all(|c| c.passed || c.expected_failure)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.subject)?;
        for c in &self.checks {
            let status = match (c.passed, c.expected_failure) {
                (true, _) => "pass",
                (false, true) => "FAIL (expected)",
                (false, false) => "FAIL",
            };
            write!(f, "  {:<14} {:<16} {}", c.name, status, c.detail)?;
            if let Some(w) = &c.witness {
                write!(f, " [witness {w}]")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
