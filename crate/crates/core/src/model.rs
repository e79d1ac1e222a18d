//! Parameter-to-QoI maps `ν ↦ G(Y(ν))` consumed by the estimators.

use std::fmt;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::bug::{lowrank_qoi, solve_dlra};
use crate::error::{Error, Result};
use crate::full_rank::{scalar_flux, solve_full};
use crate::grid::GridSpec;
use crate::transport::{build_initial_condition, build_operators, InitialCondition, PnOperators};

/// Which solver evaluates a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Fidelity {
    /// Augmented BUG at fixed rank.
    Rank(usize),
    /// Dense P_N solve; orders above every rank.
    Full,
}

impl fmt::Display for Fidelity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fidelity::Full => write!(f, "full"),
            Fidelity::Rank(r) => write!(f, "{r}"),
        }
    }
}

pub trait QoiModel: Sync {
    /// Number of QoI points.
    fn len(&self) -> usize;

    /// Quadrature weight of the dx-weighted inner product.
    fn dx(&self) -> f64;

    fn evaluate(&self, fidelity: Fidelity, nu: f64) -> Result<DVector<f64>>;
}

/// Physical parameters of the slab problem other than the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Physics {
    pub sigma: f64,
    pub floor: f64,
    pub sigma_s: f64,
}

impl Default for Physics {
    fn default() -> Self {
        Physics {
            sigma: InitialCondition::DEFAULT_SIGMA,
            floor: InitialCondition::DEFAULT_FLOOR,
            sigma_s: 1.0,
        }
    }
}

/// Scalar flux at `t_end` of the slab problem with amplitude `ν`.
#[derive(Debug, Clone)]
pub struct SlabModel {
    grid: GridSpec,
    physics: Physics,
    ops: PnOperators,
}

impl SlabModel {
    pub fn new(grid: GridSpec, physics: Physics) -> Result<Self> {
        let rate = physics.sigma_s;
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(Error::invalid(format!("scattering rate must be >= 0, got {rate}")));
        }
        let ops = build_operators(&grid, |_| rate)?;
        Ok(SlabModel { grid, physics, ops })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn physics(&self) -> &Physics {
        &self.physics
    }

    pub fn operators(&self) -> &PnOperators {
        &self.ops
    }

    fn initial_condition(&self, nu: f64) -> InitialCondition {
        InitialCondition {
            sigma: self.physics.sigma,
            floor: self.physics.floor,
            nu,
        }
    }

    /// Largest rank the grid supports; requests above it are clamped here.
    pub fn effective_rank(&self, r: usize) -> usize {
        r.min(self.grid.m).min(self.grid.n)
    }
}

impl QoiModel for SlabModel {
    fn len(&self) -> usize {
        self.grid.m
    }

    fn dx(&self) -> f64 {
        self.grid.dx()
    }

    fn evaluate(&self, fidelity: Fidelity, nu: f64) -> Result<DVector<f64>> {
        let psi0 = build_initial_condition(&self.grid, &self.initial_condition(nu))?;
        match fidelity {
            Fidelity::Full => {
                let state = solve_full(&self.ops, &psi0, &self.grid)?;
                Ok(scalar_flux(&state, self.grid.dx()).phi)
            }
            Fidelity::Rank(r) => {
                let state = solve_dlra(&self.ops, &psi0, r, &self.grid)?;
                Ok(lowrank_qoi(&state, self.grid.dx()).phi)
            }
        }
    }
}

/// Closed-form QoI used to test estimators without a PDE solve.
pub struct AnalyticModel<F> {
    len: usize,
    dx: f64,
    f: F,
}

impl<F> AnalyticModel<F>
where
    F: Fn(Fidelity, f64) -> DVector<f64> + Sync,
{
    pub fn new(len: usize, dx: f64, f: F) -> Self {
        AnalyticModel { len, dx, f }
    }
}

impl<F> QoiModel for AnalyticModel<F>
where
    F: Fn(Fidelity, f64) -> DVector<f64> + Sync,
{
    fn len(&self) -> usize {
        self.len
    }

    fn dx(&self) -> f64 {
        self.dx
    }

    fn evaluate(&self, fidelity: Fidelity, nu: f64) -> Result<DVector<f64>> {
        Ok((self.f)(fidelity, nu))
    }
}
