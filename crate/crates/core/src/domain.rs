//! Arithmetic on the one-dimensional torus `R / L Z`.
//!
//! Points are represented by their canonical representative in `[-L/2, L/2)`.

use crate::error::{Error, Result};

/// A torus of period `length` carrying total mass `mass`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorusDomain {
    length: f64,
    mass: f64,
}

impl TorusDomain {
    pub fn new(length: f64, mass: f64) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidDomain(format!("length must be positive, got {length}")));
        }
        if !(mass.is_finite() && mass > 0.0 && mass <= 1.0) {
            return Err(Error::InvalidDomain(format!("mass must lie in (0, 1], got {mass}")));
        }
        Ok(Self { length, mass })
    }

    #[inline]
    pub fn length(&self) -> f64 {
        self.length
    }

    #[inline]
    pub fn mass(&self) -> f64 {
        self.mass
    }

    #[inline]
    pub fn half(&self) -> f64 {
        0.5 * self.length
    }

    /// Canonical representative of `x` in `[-L/2, L/2)`.
    #[inline]
    pub fn wrap(&self, x: f64) -> f64 {
        let l = self.length;
        let h = 0.5 * l;
        if (-h..h).contains(&x) {
            return x;
        }
        let mut y = (x + h).rem_euclid(l) - h;
        // rem_euclid may round up to exactly l
        if y >= h {
            y -= l;
        }
        if y < -h {
            y = -h;
        }
        y
    }

    /// `wrap(x - y)`.
    #[inline]
    pub fn periodic_diff(&self, x: f64, y: f64) -> f64 {
        self.wrap(x - y)
    }

    /// Forward arc length from `x_left` to `x_right`, in `(0, L]`.
    ///
    /// Coincident points give `L` (a full turn).
    #[inline]
    pub fn gap(&self, x_left: f64, x_right: f64) -> f64 {
        let d = x_right - x_left;
        if d > 0.0 {
            d
        } else {
            d + self.length
        }
    }

    /// Uniform cell width for a grid of `m` cells anchored at `-L/2`.
    #[inline]
    pub fn cell_width(&self, m: usize) -> f64 {
        self.length / m as f64
    }

    /// Left edge of grid cell `i` for an `m`-cell grid.
    #[inline]
    pub fn cell_left(&self, i: usize, m: usize) -> f64 {
        -self.half() + self.length * (i as f64 / m as f64)
    }

    /// Same domain with a different mass.
    pub fn with_mass(&self, mass: f64) -> Result<Self> {
        Self::new(self.length, mass)
    }
}
