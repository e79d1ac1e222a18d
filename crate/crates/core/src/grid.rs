//! Space-angle grid and time-step bookkeeping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform vertex grid on `[a, b]` with `m` points, `n` angular moments and
/// a CFL-controlled time step `dt = cfl * dx` (unit maximal speed).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub m: usize,
    pub n: usize,
    pub a: f64,
    pub b: f64,
    pub cfl: f64,
    pub t_end: f64,
}

impl GridSpec {
    pub const DEFAULT_A: f64 = -1.5;
    pub const DEFAULT_B: f64 = 1.5;

    /// Grid on the default domain `[-1.5, 1.5]` with CFL 1 and final time 1.
    pub fn new(m: usize, n: usize) -> Result<Self> {
        Self::with_domain(m, n, Self::DEFAULT_A, Self::DEFAULT_B, 1.0, 1.0)
    }

    pub fn with_domain(m: usize, n: usize, a: f64, b: f64, cfl: f64, t_end: f64) -> Result<Self> {
        let grid = GridSpec {
            m,
            n,
            a,
            b,
            cfl,
            t_end,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn with_t_end(mut self, t_end: f64) -> Result<Self> {
        self.t_end = t_end;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 3 {
            return Err(Error::invalid(format!("need m >= 3 grid points, got {}", self.m)));
        }
        if self.n < 1 {
            return Err(Error::invalid("need at least one angular moment"));
        }
        if !(self.b > self.a) || !self.a.is_finite() || !self.b.is_finite() {
            return Err(Error::invalid(format!("bad domain [{}, {}]", self.a, self.b)));
        }
        if !(self.cfl > 0.0) || !self.cfl.is_finite() {
            return Err(Error::invalid(format!("cfl must be positive, got {}", self.cfl)));
        }
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return Err(Error::invalid(format!("t_end must be >= 0, got {}", self.t_end)));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.b - self.a) / (self.m - 1) as f64
    }

    pub fn dt(&self) -> f64 {
        self.cfl * self.dx()
    }

    pub fn x(&self, i: usize) -> f64 {
        self.a + i as f64 * self.dx()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.m).map(|i| self.x(i)).collect()
    }

    /// Step sizes carrying a state from `t_start` to `t_end`: full `dt` steps,
    /// with the last one shortened to land exactly on `t_end`.
    pub fn steps_between(&self, t_start: f64, t_end: f64) -> Vec<f64> {
        time_steps(self.dt(), t_start, t_end)
    }
}

pub(crate) fn time_steps(dt: f64, t_start: f64, t_end: f64) -> Vec<f64> {
    let span = t_end - t_start;
    if span <= 0.0 {
        return Vec::new();
    }
    // relative slack so that e.g. 0.6 / 0.03 counts as 20 steps, not 19 + sliver
    let ratio = span / dt;
    let full = (ratio * (1.0 + 1e-12)).floor() as usize;
    let mut steps = vec![dt; full];
    let rest = span - full as f64 * dt;
    if rest > 1e-12 * dt {
        steps.push(rest);
    }
    steps
}
