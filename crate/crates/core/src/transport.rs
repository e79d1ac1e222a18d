//! P_N-in-angle, upwind-in-space discretization of the slab transport
//! equation
//!
//! ```text
//! ∂t ψ + μ ∂x ψ = σs(x) (½ ∫ ψ dμ' − ψ),   x ∈ [a, b], μ ∈ [−1, 1]
//! ```
//!
//! in normalized Legendre moments `ψ(x, μ) = Σ_l ψ_l(x) P̃_l(μ)` with
//! `∫ P̃_i P̃_j dμ = δ_ij`. The state is the `m×n` matrix `Ψ[i, l] = ψ_l(x_i)`
//! and the semi-discrete right-hand side is
//!
//! ```text
//! F(Ψ) = −(D⁻ Ψ A⁺ + D⁺ Ψ A⁻) + Σs Ψ G
//! ```
//!
//! with `A = A⁺ + A⁻` the spectral split of the flux matrix.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::rhs::{check_core_shapes, check_factor_shapes, check_state_shape, MatrixRhs};

/// Off-diagonal entries `c_l = (l+1) / sqrt((2l+1)(2l+3))` of the flux matrix.
fn flux_offdiagonal(n: usize) -> Vec<f64> {
    (0..n.saturating_sub(1))
        .map(|l| {
            let l = l as f64;
            (l + 1.0) / ((2.0 * l + 1.0) * (2.0 * l + 3.0)).sqrt()
        })
        .collect()
}

/// Symmetric tridiagonal matrix of `∫ μ P̃_i P̃_j dμ`.
pub fn build_flux_matrix(n: usize) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::invalid("flux matrix needs n >= 1"));
    }
    let c = flux_offdiagonal(n);
    let mut a = DMatrix::zeros(n, n);
    for (l, &cl) in c.iter().enumerate() {
        a[(l, l + 1)] = cl;
        a[(l + 1, l)] = cl;
    }
    Ok(a)
}

/// Splits a symmetric matrix into its positive and negative semidefinite
/// parts, `A = Q max(M, 0) Qᵀ + Q min(M, 0) Qᵀ`.
pub fn split_flux_matrix(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !a.is_square() {
        return Err(Error::invalid("flux matrix must be square"));
    }
    let scale = a.amax().max(1.0);
    let asym = (a - a.transpose()).amax();
    if asym > 1e-14 * scale {
        return Err(Error::invalid(format!("flux matrix is not symmetric (|A - Aᵀ| = {asym:.3e})")));
    }
    let eig = SymmetricEigen::new(a.clone());
    let q = &eig.eigenvectors;
    let pos = eig.eigenvalues.map(|l| l.max(0.0));
    let neg = eig.eigenvalues.map(|l| l.min(0.0));
    let a_plus = q * DMatrix::from_diagonal(&pos) * q.transpose();
    let a_minus = q * DMatrix::from_diagonal(&neg) * q.transpose();
    // symmetrize away eigen-solver rounding
    let a_plus = (&a_plus + a_plus.transpose()) * 0.5;
    let a_minus = (&a_minus + a_minus.transpose()) * 0.5;
    Ok((a_plus, a_minus))
}

/// Discretized transport operators for one grid.
#[derive(Debug, Clone)]
pub struct PnOperators {
    m: usize,
    n: usize,
    dx: f64,
    a: DMatrix<f64>,
    a_offdiag: Vec<f64>,
    a_plus: DMatrix<f64>,
    a_minus: DMatrix<f64>,
    sigma_s: DVector<f64>,
    g_diag: DVector<f64>,
    advect: bool,
}

/// Builds the operators for `grid` with scattering rate `sigma_s(x)`.
pub fn build_operators(grid: &GridSpec, sigma_s: impl Fn(f64) -> f64) -> Result<PnOperators> {
    grid.validate()?;
    let (m, n) = (grid.m, grid.n);
    let a = build_flux_matrix(n)?;
    let (a_plus, a_minus) = split_flux_matrix(&a)?;
    let sigma = DVector::from_iterator(m, grid.points().into_iter().map(&sigma_s));
    if let Some(bad) = sigma.iter().find(|s| !s.is_finite()) {
        return Err(Error::invalid(format!("scattering rate must be finite, got {bad}")));
    }
    let mut g_diag = DVector::from_element(n, -1.0);
    g_diag[0] = 0.0;
    Ok(PnOperators {
        m,
        n,
        dx: grid.dx(),
        a_offdiag: flux_offdiagonal(n),
        a,
        a_plus,
        a_minus,
        sigma_s: sigma,
        g_diag,
        advect: true,
    })
}

impl PnOperators {
    /// Operators with `F ≡ 0` for an `m×n` state.
    pub fn zero(m: usize, n: usize) -> Self {
        PnOperators {
            m,
            n,
            dx: 1.0,
            a: DMatrix::zeros(n, n),
            a_offdiag: vec![0.0; n.saturating_sub(1)],
            a_plus: DMatrix::zeros(n, n),
            a_minus: DMatrix::zeros(n, n),
            sigma_s: DVector::zeros(m),
            g_diag: DVector::zeros(n),
            advect: false,
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn flux_matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn flux_plus(&self) -> &DMatrix<f64> {
        &self.a_plus
    }

    pub fn flux_minus(&self) -> &DMatrix<f64> {
        &self.a_minus
    }

    pub fn scattering_rates(&self) -> &DVector<f64> {
        &self.sigma_s
    }

    /// Diagonal of the moment-space scattering projector `G`.
    pub fn scattering_projector(&self) -> &DVector<f64> {
        &self.g_diag
    }

    pub fn sigma_s_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.sigma_s)
    }

    pub fn g_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.g_diag)
    }

    /// Backward difference with zero inflow on the left.
    pub fn d_minus_matrix(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.m, self.m);
        if self.advect {
            let inv = 1.0 / self.dx;
            for i in 0..self.m {
                d[(i, i)] = inv;
                if i > 0 {
                    d[(i, i - 1)] = -inv;
                }
            }
        }
        d
    }

    /// Forward difference with zero inflow on the right.
    pub fn d_plus_matrix(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.m, self.m);
        if self.advect {
            let inv = 1.0 / self.dx;
            for i in 0..self.m {
                d[(i, i)] = -inv;
                if i + 1 < self.m {
                    d[(i, i + 1)] = inv;
                }
            }
        }
        d
    }

    fn apply_d_minus(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let (rows, cols) = z.shape();
        let mut out = DMatrix::zeros(rows, cols);
        if !self.advect {
            return out;
        }
        let inv = 1.0 / self.dx;
        for j in 0..cols {
            let src = z.column(j);
            let mut dst = out.column_mut(j);
            dst[0] = src[0] * inv;
            for i in 1..rows {
                dst[i] = (src[i] - src[i - 1]) * inv;
            }
        }
        out
    }

    fn apply_d_plus(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let (rows, cols) = z.shape();
        let mut out = DMatrix::zeros(rows, cols);
        if !self.advect {
            return out;
        }
        let inv = 1.0 / self.dx;
        for j in 0..cols {
            let src = z.column(j);
            let mut dst = out.column_mut(j);
            for i in 0..rows - 1 {
                dst[i] = (src[i + 1] - src[i]) * inv;
            }
            dst[rows - 1] = -src[rows - 1] * inv;
        }
        out
    }

    /// `Z A` for the tridiagonal flux matrix, `Z: k×n`.
    fn right_mul_flux(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let (rows, n) = z.shape();
        let mut out = DMatrix::zeros(rows, n);
        for (l, &c) in self.a_offdiag.iter().enumerate() {
            out.column_mut(l).axpy(c, &z.column(l + 1), 1.0);
            out.column_mut(l + 1).axpy(c, &z.column(l), 1.0);
        }
        out
    }

    /// `A W` for the tridiagonal flux matrix, `W: n×k`.
    fn left_mul_flux(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        self.right_mul_flux(&w.transpose()).transpose()
    }

    /// `(A⁺ W, A⁻ W)`; one dense product, the other from `A W − A⁺ W`.
    fn split_left_mul(&self, w: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let plus = &self.a_plus * w;
        let minus = self.left_mul_flux(w) - &plus;
        (plus, minus)
    }

    fn scale_rows(diag: &DVector<f64>, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = z.clone();
        for (i, mut row) in out.row_iter_mut().enumerate() {
            row *= diag[i];
        }
        out
    }

    /// `(Vᵀ A⁺ W, Vᵀ A⁻ W, Vᵀ G W)`.
    fn angular_galerkin(
        &self,
        v: &DMatrix<f64>,
        w: &DMatrix<f64>,
    ) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let (plus, minus) = self.split_left_mul(w);
        let vt = v.transpose();
        let gw = Self::scale_rows(&self.g_diag, w);
        (&vt * plus, &vt * minus, vt * gw)
    }

    /// `(Xᵀ D⁻ Z, Xᵀ D⁺ Z, Xᵀ Σs Z)`.
    fn spatial_galerkin(
        &self,
        x: &DMatrix<f64>,
        z: &DMatrix<f64>,
    ) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let xt = x.transpose();
        (
            &xt * self.apply_d_minus(z),
            &xt * self.apply_d_plus(z),
            xt * Self::scale_rows(&self.sigma_s, z),
        )
    }
}

/// `F(Ψ) = −(D⁻ Ψ A⁺ + D⁺ Ψ A⁻) + Σs Ψ G`.
pub fn apply_rhs(ops: &PnOperators, psi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_state_shape((ops.m, ops.n), psi)?;
    let psi_plus = psi * &ops.a_plus;
    let psi_minus = ops.right_mul_flux(psi) - &psi_plus;
    let mut out = ops.apply_d_minus(&psi_plus);
    out += ops.apply_d_plus(&psi_minus);
    out.neg_mut();
    for (l, &g) in ops.g_diag.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let mut col = out.column_mut(l);
        for i in 0..ops.m {
            col[i] += ops.sigma_s[i] * psi[(i, l)] * g;
        }
    }
    Ok(out)
}

impl MatrixRhs for PnOperators {
    fn shape(&self) -> (usize, usize) {
        (self.m, self.n)
    }

    fn apply(&self, psi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        apply_rhs(self, psi)
    }

    fn apply_k(&self, k: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_factor_shapes(self.shape(), k, v)?;
        let (vp, vm, vg) = self.angular_galerkin(v, v);
        let mut out = self.apply_d_minus(k) * vp;
        out += self.apply_d_plus(k) * vm;
        out.neg_mut();
        out += Self::scale_rows(&self.sigma_s, k) * vg;
        Ok(out)
    }

    fn apply_l(&self, x: &DMatrix<f64>, l: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_factor_shapes(self.shape(), x, l)?;
        let (dm, dp, sg) = self.spatial_galerkin(x, x);
        let (lp, lm) = self.split_left_mul(l);
        let mut out = lp * dm.transpose();
        out += lm * dp.transpose();
        out.neg_mut();
        out += Self::scale_rows(&self.g_diag, l) * sg.transpose();
        Ok(out)
    }

    fn apply_galerkin(
        &self,
        x: &DMatrix<f64>,
        s: &DMatrix<f64>,
        v: &DMatrix<f64>,
    ) -> Result<DMatrix<f64>> {
        check_core_shapes(self.shape(), x, s, v)?;
        let (dm, dp, sg) = self.spatial_galerkin(x, x);
        let (vp, vm, vg) = self.angular_galerkin(v, v);
        let mut out = dm * s * vp;
        out += dp * s * vm;
        out.neg_mut();
        out += sg * s * vg;
        Ok(out)
    }
}

/// Cut-off Gaussian `w(x) = max(floor, ν / (√(2π) σ) · exp(−x² / (2σ²)))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialCondition {
    pub sigma: f64,
    pub floor: f64,
    pub nu: f64,
}

impl InitialCondition {
    pub const DEFAULT_SIGMA: f64 = 0.1;
    pub const DEFAULT_FLOOR: f64 = 1e-4;

    pub fn new(nu: f64) -> Self {
        InitialCondition {
            sigma: Self::DEFAULT_SIGMA,
            floor: Self::DEFAULT_FLOOR,
            nu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::invalid(format!("gaussian width must be positive, got {}", self.sigma)));
        }
        if !(self.floor > 0.0) {
            return Err(Error::invalid(format!("floor must be positive, got {}", self.floor)));
        }
        if !self.nu.is_finite() {
            return Err(Error::invalid("amplitude must be finite"));
        }
        Ok(())
    }

    pub fn density(&self, x: f64) -> f64 {
        let peak = self.nu / ((2.0 * std::f64::consts::PI).sqrt() * self.sigma);
        (peak * (-x * x / (2.0 * self.sigma * self.sigma)).exp()).max(self.floor)
    }
}

/// Dense moment state `Ψ(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FullState {
    pub psi: DMatrix<f64>,
    pub t: f64,
}

/// Isotropic initial state: column 0 holds `√2 · w(x_i)`, the rest is zero.
pub fn build_initial_condition(grid: &GridSpec, ic: &InitialCondition) -> Result<FullState> {
    grid.validate()?;
    ic.validate()?;
    let mut psi = DMatrix::zeros(grid.m, grid.n);
    for i in 0..grid.m {
        psi[(i, 0)] = std::f64::consts::SQRT_2 * ic.density(grid.x(i));
    }
    Ok(FullState { psi, t: 0.0 })
}
