//! Right-hand sides of autonomous matrix ODEs `dΨ/dt = F(Ψ)`.
//!
//! The low-rank integrator never needs `F(Y)` as a dense matrix; it needs the
//! three projected forms below. The provided methods build them by
//! densifying, which is exact but costs `O(mn)` memory per call. Operators
//! with structure override them with factored evaluations.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub trait MatrixRhs: Sync {
    /// `(m, n)`: rows and columns of the state matrix.
    fn shape(&self) -> (usize, usize);

    /// Dense evaluation `F(Ψ)`.
    fn apply(&self, psi: &DMatrix<f64>) -> Result<DMatrix<f64>>;

    /// `F(K Vᵀ) V` for `K: m×r`, `V: n×r`.
    fn apply_k(&self, k: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_factor_shapes(self.shape(), k, v)?;
        Ok(self.apply(&(k * v.transpose()))? * v)
    }

    /// `F(X Lᵀ)ᵀ X` for `X: m×r`, `L: n×r`.
    fn apply_l(&self, x: &DMatrix<f64>, l: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_factor_shapes(self.shape(), x, l)?;
        Ok(self.apply(&(x * l.transpose()))?.transpose() * x)
    }

    /// Galerkin projection `Xᵀ F(X S Vᵀ) V` for `X: m×p`, `S: p×q`, `V: n×q`.
    fn apply_galerkin(
        &self,
        x: &DMatrix<f64>,
        s: &DMatrix<f64>,
        v: &DMatrix<f64>,
    ) -> Result<DMatrix<f64>> {
        check_core_shapes(self.shape(), x, s, v)?;
        let y = x * s * v.transpose();
        Ok(x.transpose() * self.apply(&y)? * v)
    }
}

/// The transposed dynamics `Z ↦ F(Zᵀ)ᵀ`: running the L-step of `F` is the
/// K-step of this operator.
pub struct Transposed<'a, R: ?Sized>(pub &'a R);

impl<R: MatrixRhs + ?Sized> MatrixRhs for Transposed<'_, R> {
    fn shape(&self) -> (usize, usize) {
        let (m, n) = self.0.shape();
        (n, m)
    }

    fn apply(&self, psi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.0.apply(&psi.transpose())?.transpose())
    }
}

pub(crate) fn check_state_shape(shape: (usize, usize), psi: &DMatrix<f64>) -> Result<()> {
    if psi.shape() != shape {
        return Err(Error::invalid(format!(
            "state is {}x{}, operator expects {}x{}",
            psi.nrows(),
            psi.ncols(),
            shape.0,
            shape.1
        )));
    }
    Ok(())
}

pub(crate) fn check_factor_shapes(
    (m, n): (usize, usize),
    left: &DMatrix<f64>,
    right: &DMatrix<f64>,
) -> Result<()> {
    if left.nrows() != m || right.nrows() != n || left.ncols() != right.ncols() {
        return Err(Error::invalid(format!(
            "factors {}x{} and {}x{} do not fit a {m}x{n} state",
            left.nrows(),
            left.ncols(),
            right.nrows(),
            right.ncols()
        )));
    }
    Ok(())
}

pub(crate) fn check_core_shapes(
    (m, n): (usize, usize),
    x: &DMatrix<f64>,
    s: &DMatrix<f64>,
    v: &DMatrix<f64>,
) -> Result<()> {
    if x.nrows() != m || v.nrows() != n || s.nrows() != x.ncols() || s.ncols() != v.ncols() {
        return Err(Error::invalid(format!(
            "core {}x{} with bases {}x{}, {}x{} does not fit a {m}x{n} state",
            s.nrows(),
            s.ncols(),
            x.nrows(),
            x.ncols(),
            v.nrows(),
            v.ncols()
        )));
    }
    Ok(())
}
