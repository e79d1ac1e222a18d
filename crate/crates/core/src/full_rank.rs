//! Dense explicit-Euler reference solver and the scalar-flux quantity of
//! interest.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::grid::{time_steps, GridSpec};
use crate::rhs::MatrixRhs;
use crate::transport::FullState;

/// Scalar flux `φ(x_i) = (1/√2) ∫ ψ(x_i, μ) dμ` at the grid points.
#[derive(Debug, Clone, PartialEq)]
pub struct QoIVector {
    pub phi: DVector<f64>,
    pub dx: f64,
}

impl QoIVector {
    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }
}

/// `Ψ ← Ψ + h F(Ψ)`.
pub fn euler_step<R: MatrixRhs + ?Sized>(ops: &R, state: &FullState, h: f64) -> Result<FullState> {
    if !(h > 0.0) {
        return Err(Error::invalid(format!("step size must be positive, got {h}")));
    }
    let mut psi = ops.apply(&state.psi)?;
    psi *= h;
    psi += &state.psi;
    let t = state.t + h;
    if psi.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalOverflow { t });
    }
    Ok(FullState { psi, t })
}

/// Integrates from `state.t` to `t_end` with steps of `dt`, shortening the
/// last one.
pub fn advance_full<R: MatrixRhs + ?Sized>(
    ops: &R,
    state: &FullState,
    dt: f64,
    t_end: f64,
) -> Result<FullState> {
    let mut current = state.clone();
    for h in time_steps(dt, state.t, t_end) {
        current = euler_step(ops, &current, h)?;
    }
    if current.t != state.t {
        current.t = t_end;
    }
    Ok(current)
}

/// Reference solve from `psi0.t` to `grid.t_end` at `dt = cfl·dx`.
pub fn solve_full<R: MatrixRhs + ?Sized>(
    ops: &R,
    psi0: &FullState,
    grid: &GridSpec,
) -> Result<FullState> {
    if psi0.psi.shape() != (grid.m, grid.n) {
        return Err(Error::invalid("initial state does not match grid"));
    }
    advance_full(ops, psi0, grid.dt(), grid.t_end)
}

/// In the normalized Legendre basis the scalar flux is moment column 0.
pub fn scalar_flux(state: &FullState, dx: f64) -> QoIVector {
    QoIVector {
        phi: state.psi.column(0).into_owned(),
        dx,
    }
}

#[cfg(test)]
pub(crate) fn frobenius_relative(a: &nalgebra::DMatrix<f64>, b: &nalgebra::DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}
