//! Fixed-rank augmented basis-update & Galerkin (BUG) integrator.
//!
//! One step maps `Y₀ = X₀ S₀ V₀ᵀ` to `Y₁ = X₁ S₁ V₁ᵀ`:
//!
//! 1. K- and L-steps: one Euler step of `K = XS` and `L = VSᵀ` with the
//!    co-basis frozen, then orthonormal bases `X̂ ⊇ span[K₁, X₀]` and
//!    `V̂ ⊇ span[L₁, V₀]` with `M = X̂ᵀX₀`, `N = V̂ᵀV₀`.
//! 2. S-step: one Euler step of the Galerkin system in `(X̂, V̂)` started
//!    from `Ŝ₀ = M S₀ Nᵀ`.
//! 3. Truncation of `Ŝ₁` back to rank `r` by SVD.
//!
//! The augmented widths are capped at `m` and `n`, so any `r ≤ min(m, n)` is
//! accepted. `S` is never inverted.

use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{Error, Result};
use crate::full_rank::QoIVector;
use crate::grid::{time_steps, GridSpec};
use crate::rhs::MatrixRhs;
use crate::transport::FullState;

const SVD_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct LowRankState {
    pub x: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub t: f64,
}

impl LowRankState {
    pub fn rank(&self) -> usize {
        self.s.nrows()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.x * &self.s * self.v.transpose()
    }

    /// Frobenius distances `(‖XᵀX − I‖, ‖VᵀV − I‖)`.
    pub fn orthonormality_defect(&self) -> (f64, f64) {
        (orthonormality_defect(&self.x), orthonormality_defect(&self.v))
    }
}

pub fn orthonormality_defect(q: &DMatrix<f64>) -> f64 {
    let k = q.ncols();
    (q.transpose() * q - DMatrix::<f64>::identity(k, k)).norm()
}

#[derive(Debug, Clone)]
pub struct AugmentedBasis {
    pub x_hat: DMatrix<f64>,
    pub v_hat: DMatrix<f64>,
    /// `X̂ᵀ X₀`
    pub m: DMatrix<f64>,
    /// `V̂ᵀ V₀`
    pub n: DMatrix<f64>,
}

fn svd(a: DMatrix<f64>) -> Result<SVD<f64, nalgebra::Dyn, nalgebra::Dyn>> {
    let (rows, cols) = a.shape();
    SVD::try_new(a, true, true, f64::EPSILON, SVD_MAX_ITER)
        .ok_or_else(|| Error::invalid(format!("SVD of a {rows}x{cols} matrix did not converge")))
}

fn check_finite(a: &DMatrix<f64>, t: f64) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericalOverflow { t })
    }
}

/// Rank-`r` truncated SVD of a dense state.
pub fn factorize(psi: &DMatrix<f64>, r: usize) -> Result<LowRankState> {
    let (m, n) = psi.shape();
    if r == 0 || r > m.min(n) {
        return Err(Error::invalid(format!("rank {r} outside 1..={}", m.min(n))));
    }
    let dec = svd(psi.clone())?;
    let u = dec.u.expect("requested U");
    let vt = dec.v_t.expect("requested Vᵀ");
    let x = u.columns(0, r).into_owned();
    let v = vt.rows(0, r).transpose();
    let s = DMatrix::from_diagonal(&dec.singular_values.rows(0, r).into_owned());
    // singular vectors of exactly-zero singular values can come out of the
    // bidiagonalization with a small orthogonality loss
    let x = reorthonormalize(x);
    let v = reorthonormalize(v);
    Ok(LowRankState { x, s, v, t: 0.0 })
}

/// Re-orthonormalizes nearly orthonormal columns without changing columns
/// that are already orthonormal to rounding.
fn reorthonormalize(q: DMatrix<f64>) -> DMatrix<f64> {
    if orthonormality_defect(&q) < 1e-13 {
        return q;
    }
    let k = q.ncols();
    let qr = q.qr();
    let mut out = qr.q();
    let r = qr.r();
    // keep the orientation of the input columns
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            out.column_mut(j).neg_mut();
        }
    }
    out
}

/// One Euler step of the K- and L-equations, both driven by `F(Y₀)`.
pub fn kl_steps<R: MatrixRhs + ?Sized>(
    ops: &R,
    state: &LowRankState,
    h: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(h > 0.0) {
        return Err(Error::invalid(format!("step size must be positive, got {h}")));
    }
    let k0 = &state.x * &state.s;
    let l0 = &state.v * state.s.transpose();
    let k1 = ops.apply_k(&k0, &state.v)? * h + &k0;
    let l1 = ops.apply_l(&state.x, &l0)? * h + &l0;
    check_finite(&k1, state.t + h)?;
    check_finite(&l1, state.t + h)?;
    Ok((k1, l1))
}

/// Orthonormal basis of `span[new, old]`, `min(rows, 2r)` columns wide.
/// Householder QR keeps the columns orthonormal even when the stack is
/// rank-deficient; the extra columns are then a deterministic completion.
fn augmented_basis(new: &DMatrix<f64>, old: &DMatrix<f64>) -> DMatrix<f64> {
    let rows = new.nrows();
    let r = new.ncols();
    let mut stacked = DMatrix::zeros(rows, 2 * r);
    stacked.columns_mut(0, r).copy_from(new);
    stacked.columns_mut(r, r).copy_from(old);
    stacked.qr().q()
}

pub fn augment_bases(
    k1: &DMatrix<f64>,
    l1: &DMatrix<f64>,
    state: &LowRankState,
) -> Result<AugmentedBasis> {
    let r = state.rank();
    if k1.shape() != state.x.shape() || l1.shape() != state.v.shape() {
        return Err(Error::invalid(format!(
            "K {}x{} / L {}x{} do not match factors {}x{r} / {}x{r}",
            k1.nrows(),
            k1.ncols(),
            l1.nrows(),
            l1.ncols(),
            state.x.nrows(),
            state.v.nrows()
        )));
    }
    let x_hat = augmented_basis(k1, &state.x);
    let v_hat = augmented_basis(l1, &state.v);
    let m = x_hat.transpose() * &state.x;
    let n = v_hat.transpose() * &state.v;
    Ok(AugmentedBasis { x_hat, v_hat, m, n })
}

/// Euler step of the Galerkin system in the augmented bases, started from
/// `Ŝ₀ = M S₀ Nᵀ`.
pub fn s_step<R: MatrixRhs + ?Sized>(
    ops: &R,
    aug: &AugmentedBasis,
    s0: &DMatrix<f64>,
    h: f64,
) -> Result<DMatrix<f64>> {
    if !(h > 0.0) {
        return Err(Error::invalid(format!("step size must be positive, got {h}")));
    }
    if s0.nrows() != aug.m.ncols() || s0.ncols() != aug.n.ncols() {
        return Err(Error::invalid("core matrix does not match augmented basis"));
    }
    let s_hat0 = &aug.m * s0 * aug.n.transpose();
    let s_hat1 = ops.apply_galerkin(&aug.x_hat, &s_hat0, &aug.v_hat)? * h + s_hat0;
    Ok(s_hat1)
}

/// Best rank-`r` approximation of `X̂ Ŝ V̂ᵀ`, plus the discarded
/// singular-value mass `(Σ_{i>r} σᵢ²)^½`.
pub fn truncate_rank_with_residual(
    s_hat: &DMatrix<f64>,
    aug: &AugmentedBasis,
    r: usize,
) -> Result<(LowRankState, f64)> {
    if r == 0 || r > s_hat.nrows().min(s_hat.ncols()) {
        return Err(Error::invalid(format!(
            "target rank {r} exceeds augmented core {}x{}",
            s_hat.nrows(),
            s_hat.ncols()
        )));
    }
    check_finite(s_hat, f64::NAN)?;
    let dec = svd(s_hat.clone())?;
    let p = dec.u.expect("requested U");
    let qt = dec.v_t.expect("requested Vᵀ");
    let sigma = &dec.singular_values;
    let x = &aug.x_hat * p.columns(0, r);
    let v = &aug.v_hat * qt.rows(0, r).transpose();
    let s = DMatrix::from_diagonal(&DVector::from_iterator(r, sigma.iter().take(r).copied()));
    let residual = sigma.iter().skip(r).map(|s| s * s).sum::<f64>().sqrt();
    Ok((LowRankState { x, s, v, t: 0.0 }, residual))
}

pub fn truncate_rank(s_hat: &DMatrix<f64>, aug: &AugmentedBasis, r: usize) -> Result<LowRankState> {
    truncate_rank_with_residual(s_hat, aug, r).map(|(state, _)| state)
}

fn bug_step_with_residual<R: MatrixRhs + ?Sized>(
    ops: &R,
    state: &LowRankState,
    h: f64,
) -> Result<(LowRankState, f64)> {
    let (k1, l1) = kl_steps(ops, state, h)?;
    let aug = augment_bases(&k1, &l1, state)?;
    let s_hat = s_step(ops, &aug, &state.s, h)?;
    let (mut next, residual) = truncate_rank_with_residual(&s_hat, &aug, state.rank())?;
    next.t = state.t + h;
    Ok((next, residual))
}

pub fn bug_step<R: MatrixRhs + ?Sized>(ops: &R, state: &LowRankState, h: f64) -> Result<LowRankState> {
    bug_step_with_residual(ops, state, h).map(|(s, _)| s)
}

/// Low-rank solution at `t_end` together with the per-step truncation
/// residuals.
#[derive(Debug, Clone)]
pub struct DlraSolution {
    pub state: LowRankState,
    pub truncation: Vec<f64>,
}

pub fn advance_dlra<R: MatrixRhs + ?Sized>(
    ops: &R,
    state: &LowRankState,
    dt: f64,
    t_end: f64,
) -> Result<DlraSolution> {
    let steps = time_steps(dt, state.t, t_end);
    let mut truncation = Vec::with_capacity(steps.len());
    let mut current = state.clone();
    for h in steps {
        let (next, res) = bug_step_with_residual(ops, &current, h)?;
        truncation.push(res);
        current = next;
    }
    if !truncation.is_empty() {
        current.t = t_end;
    }
    Ok(DlraSolution {
        state: current,
        truncation,
    })
}

pub fn solve_dlra_detailed<R: MatrixRhs + ?Sized>(
    ops: &R,
    psi0: &FullState,
    r: usize,
    grid: &GridSpec,
) -> Result<DlraSolution> {
    if psi0.psi.shape() != (grid.m, grid.n) {
        return Err(Error::invalid("initial state does not match grid"));
    }
    let mut y0 = factorize(&psi0.psi, r)?;
    y0.t = psi0.t;
    advance_dlra(ops, &y0, grid.dt(), grid.t_end)
}

/// Factorizes `psi0` at rank `r` and integrates to `grid.t_end`.
pub fn solve_dlra<R: MatrixRhs + ?Sized>(
    ops: &R,
    psi0: &FullState,
    r: usize,
    grid: &GridSpec,
) -> Result<LowRankState> {
    solve_dlra_detailed(ops, psi0, r, grid).map(|s| s.state)
}

/// Scalar flux `X S (row 0 of V)ᵀ` without forming `X S Vᵀ`.
pub fn lowrank_qoi(state: &LowRankState, dx: f64) -> QoIVector {
    let v0 = state.v.row(0).transpose();
    QoIVector {
        phi: &state.x * (&state.s * v0),
        dx,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::full_rank::{euler_step, frobenius_relative, scalar_flux, solve_full};
    use crate::rhs::Transposed;
    use crate::transport::{build_initial_condition, build_operators, InitialCondition, PnOperators};
    use proptest::prelude::*;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_state(m: usize, n: usize, r: usize, seed: u64) -> LowRankState {
        let psi = random_matrix(m, n, seed);
        factorize(&psi, r).unwrap()
    }

    /// Modified Gram–Schmidt with drop tolerance: basis of the column span.
    fn mgs_span(a: &DMatrix<f64>) -> DMatrix<f64> {
        let mut cols: Vec<DVector<f64>> = Vec::new();
        let scale = a.norm();
        for j in 0..a.ncols() {
            let mut v = a.column(j).into_owned();
            for q in &cols {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
            for q in &cols {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
            let norm = v.norm();
            if norm > 1e-10 * scale {
                cols.push(v / norm);
            }
        }
        DMatrix::from_columns(&cols)
    }

    fn reference_setup() -> (GridSpec, PnOperators, FullState) {
        let grid = GridSpec::new(51, 8).unwrap().with_t_end(0.5).unwrap();
        let ops = build_operators(&grid, |_| 1.0).unwrap();
        let psi0 = build_initial_condition(&grid, &InitialCondition::new(1.0)).unwrap();
        (grid, ops, psi0)
    }

    #[test]
    fn factorize_rank_one_is_exact() {
        let (_, _, psi0) = reference_setup();
        for r in [1, 3, 8] {
            let y = factorize(&psi0.psi, r).unwrap();
            assert!(frobenius_relative(&y.reconstruct(), &psi0.psi) < 1e-12);
            let (dx, dv) = y.orthonormality_defect();
            assert!(dx < 1e-10 && dv < 1e-10, "r = {r}: {dx} {dv}");
        }
        assert!(factorize(&psi0.psi, 0).is_err());
        assert!(factorize(&psi0.psi, 9).is_err());
    }

    #[test]
    fn factorize_error_is_singular_value_tail() {
        let psi = random_matrix(20, 12, 7);
        let sv = psi.clone().singular_values();
        let mut sorted: Vec<f64> = sv.iter().copied().collect();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for r in [1, 4, 11] {
            let y = factorize(&psi, r).unwrap();
            let err2 = (&psi - y.reconstruct()).norm_squared();
            let tail: f64 = sorted[r..].iter().map(|s| s * s).sum();
            assert!((err2 - tail).abs() <= 1e-10 * tail, "r = {r}");
        }
    }

    #[test]
    fn kl_steps_with_zero_dynamics() {
        let y = random_state(10, 6, 3, 1);
        let ops = PnOperators::zero(10, 6);
        let (k1, l1) = kl_steps(&ops, &y, 0.1).unwrap();
        assert_eq!(k1, &y.x * &y.s);
        assert_eq!(l1, &y.v * y.s.transpose());
    }

    #[test]
    fn k_step_at_full_column_rank_is_full_euler() {
        let grid = GridSpec::new(15, 5).unwrap();
        let ops = build_operators(&grid, |x| 1.0 + x * x).unwrap();
        let psi = random_matrix(15, 5, 3);
        let y = factorize(&psi, 5).unwrap();
        let (k1, _) = kl_steps(&ops, &y, grid.dt()).unwrap();
        let full = euler_step(&ops, &FullState { psi: psi.clone(), t: 0.0 }, grid.dt()).unwrap();
        assert!(frobenius_relative(&(k1 * y.v.transpose()), &full.psi) < 1e-12);
    }

    #[test]
    fn l_step_is_k_step_of_transposed_dynamics() {
        let grid = GridSpec::new(12, 7).unwrap();
        let ops = build_operators(&grid, |x| 1.0 - 0.2 * x).unwrap();
        let y = random_state(12, 7, 3, 11);
        let (_, l1) = kl_steps(&ops, &y, 0.05).unwrap();
        let swapped = LowRankState {
            x: y.v.clone(),
            s: y.s.transpose(),
            v: y.x.clone(),
            t: 0.0,
        };
        let (k1_t, _) = kl_steps(&Transposed(&ops), &swapped, 0.05).unwrap();
        assert!((l1 - k1_t).amax() < 1e-11);
    }

    #[test]
    fn augmented_bases_properties() {
        let grid = GridSpec::new(30, 10).unwrap();
        let ops = build_operators(&grid, |_| 1.0).unwrap();
        let y = random_state(30, 10, 3, 5);
        let (k1, l1) = kl_steps(&ops, &y, grid.dt()).unwrap();
        let aug = augment_bases(&k1, &l1, &y).unwrap();
        assert_eq!(aug.x_hat.shape(), (30, 6));
        assert_eq!(aug.v_hat.shape(), (10, 6));
        assert!(orthonormality_defect(&aug.x_hat) < 1e-10);
        assert!(orthonormality_defect(&aug.v_hat) < 1e-10);
        assert!((&aug.x_hat * &aug.m - &y.x).norm() < 1e-10);
        assert!((&aug.v_hat * &aug.n - &y.v).norm() < 1e-10);

        // same span as a Gram–Schmidt basis of [K1, X0]
        let mut stacked = DMatrix::zeros(30, 6);
        stacked.columns_mut(0, 3).copy_from(&k1);
        stacked.columns_mut(3, 3).copy_from(&y.x);
        let q = mgs_span(&stacked);
        assert_eq!(q.ncols(), 6);
        // sines of the principal angles are the singular values of (I - QQᵀ) X̂
        let residual = &aug.x_hat - &q * (q.transpose() * &aug.x_hat);
        let max_angle = residual.singular_values().max().min(1.0).asin();
        assert!(max_angle < 1e-8, "max principal angle {max_angle}");
    }

    #[test]
    fn augmentation_pads_rank_deficient_stacks() {
        let y = random_state(12, 6, 2, 9);
        let ops = PnOperators::zero(12, 6);
        // K1 = X0 S0 lies in span X0: stack has rank 2, basis is still 4 wide
        let (k1, l1) = kl_steps(&ops, &y, 0.1).unwrap();
        let aug = augment_bases(&k1, &l1, &y).unwrap();
        assert_eq!(aug.x_hat.ncols(), 4);
        assert!(orthonormality_defect(&aug.x_hat) < 1e-10);
        assert!(orthonormality_defect(&aug.v_hat) < 1e-10);
        assert!((&aug.x_hat * &aug.m - &y.x).norm() < 1e-10);
    }

    #[test]
    fn augmentation_width_is_capped() {
        let y = random_state(20, 5, 4, 2);
        let grid = GridSpec::new(20, 5).unwrap();
        let ops = build_operators(&grid, |_| 1.0).unwrap();
        let (k1, l1) = kl_steps(&ops, &y, 0.01).unwrap();
        let aug = augment_bases(&k1, &l1, &y).unwrap();
        assert_eq!(aug.x_hat.ncols(), 8);
        assert_eq!(aug.v_hat.shape(), (5, 5));
        assert!(orthonormality_defect(&aug.v_hat) < 1e-10);
        assert!(augment_bases(&k1.columns(0, 3).into_owned(), &l1, &y).is_err());
    }

    #[test]
    fn s_step_zero_dynamics_reconstructs_input() {
        let y = random_state(14, 8, 3, 4);
        let ops = PnOperators::zero(14, 8);
        let (k1, l1) = kl_steps(&ops, &y, 0.1).unwrap();
        let aug = augment_bases(&k1, &l1, &y).unwrap();
        let s_hat0 = &aug.m * &y.s * aug.n.transpose();
        let s_hat1 = s_step(&ops, &aug, &y.s, 0.1).unwrap();
        assert_eq!(s_hat1, s_hat0);
        let rec = &aug.x_hat * &s_hat0 * aug.v_hat.transpose();
        assert!(frobenius_relative(&rec, &y.reconstruct()) < 1e-12);
    }

    #[test]
    fn s_step_at_full_column_rank_is_full_euler() {
        let grid = GridSpec::new(20, 6).unwrap();
        let ops = build_operators(&grid, |_| 1.0).unwrap();
        let psi = random_matrix(20, 6, 8);
        let y = factorize(&psi, 6).unwrap();
        let h = grid.dt();
        let (k1, l1) = kl_steps(&ops, &y, h).unwrap();
        let aug = augment_bases(&k1, &l1, &y).unwrap();
        let s_hat1 = s_step(&ops, &aug, &y.s, h).unwrap();
        let full = euler_step(&ops, &FullState { psi, t: 0.0 }, h).unwrap();
        let rec = &aug.x_hat * &s_hat1 * aug.v_hat.transpose();
        assert!(frobenius_relative(&rec, &full.psi) < 1e-10);
    }

    #[test]
    fn s_step_increment_bounded_by_rhs() {
        let grid = GridSpec::new(25, 7).unwrap();
        let ops = build_operators(&grid, |_| 1.0).unwrap();
        let y = random_state(25, 7, 2, 21);
        let f_norm = ops.apply(&y.reconstruct()).unwrap().norm();
        for h in [1e-2, 1e-4, 1e-6] {
            let (k1, l1) = kl_steps(&ops, &y, h).unwrap();
            let aug = augment_bases(&k1, &l1, &y).unwrap();
            let s0 = &aug.m * &y.s * aug.n.transpose();
            let s1 = s_step(&ops, &aug, &y.s, h).unwrap();
            assert!((s1 - s0).norm() <= h * f_norm * (1.0 + 1e-12));
        }
    }

    #[test]
    fn truncation_of_low_rank_core_is_exact() {
        let y = random_state(16, 9, 3, 6);
        let ops = PnOperators::zero(16, 9);
        let (k1, l1) = kl_steps(&ops, &y, 0.1).unwrap();
        let aug = augment_bases(&k1, &l1, &y).unwrap();
        let s_hat = s_step(&ops, &aug, &y.s, 0.1).unwrap();
        let (trunc, residual) = truncate_rank_with_residual(&s_hat, &aug, 3).unwrap();
        let full = &aug.x_hat * &s_hat * aug.v_hat.transpose();
        assert!((trunc.reconstruct() - full).norm() < 1e-11);
        assert!(residual < 1e-11);
        let d: Vec<f64> = trunc.s.diagonal().iter().copied().collect();
        assert!(d.windows(2).all(|w| w[0] >= w[1]) && d.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn truncation_is_eckart_young_optimal() {
        let grid = GridSpec::new(30, 12).unwrap();
        let ops = build_operators(&grid, |_| 1.0).unwrap();
        for seed in 0..5 {
            let y = random_state(30, 12, 4, 100 + seed);
            let (k1, l1) = kl_steps(&ops, &y, 0.05).unwrap();
            let aug = augment_bases(&k1, &l1, &y).unwrap();
            let s_hat = s_step(&ops, &aug, &y.s, 0.05).unwrap();
            let full = &aug.x_hat * &s_hat * aug.v_hat.transpose();
            let trunc = truncate_rank(&s_hat, &aug, 4).unwrap();
            let oracle = full.clone().svd(true, true);
            let mut order: Vec<usize> = (0..oracle.singular_values.len()).collect();
            order.sort_by(|&a, &b| oracle.singular_values[b].partial_cmp(&oracle.singular_values[a]).unwrap());
            let best_err2: f64 = order[4..].iter().map(|&i| oracle.singular_values[i].powi(2)).sum();
            let err2 = (&full - trunc.reconstruct()).norm_squared();
            assert!((err2 - best_err2).abs() <= 1e-10 * full.norm_squared(), "seed {seed}");
            let (dx, dv) = trunc.orthonormality_defect();
            assert!(dx < 1e-10 && dv < 1e-10);
        }
    }

    #[test]
    fn bug_step_zero_dynamics_preserves_state() {
        let y = random_state(18, 10, 4, 13);
        let ops = PnOperators::zero(18, 10);
        let y1 = bug_step(&ops, &y, 0.1).unwrap();
        assert!(frobenius_relative(&y1.reconstruct(), &y.reconstruct()) < 1e-12);
        assert_eq!(y1.rank(), 4);
        assert!((y1.t - 0.1).abs() < 1e-15);
    }

    #[test]
    fn bug_step_full_column_rank_is_full_euler() {
        let grid = GridSpec::new(25, 6).unwrap();
        let ops = build_operators(&grid, |x| 1.0 + 0.5 * x).unwrap();
        let psi = random_matrix(25, 6, 17);
        let y = factorize(&psi, 6).unwrap();
        let y1 = bug_step(&ops, &y, grid.dt()).unwrap();
        let full = euler_step(&ops, &FullState { psi, t: 0.0 }, grid.dt()).unwrap();
        assert!(frobenius_relative(&y1.reconstruct(), &full.psi) < 1e-10);
    }

    #[test]
    fn full_rank_equivalence_over_a_solve() {
        let (grid, ops, psi0) = reference_setup();
        let sol = solve_dlra(&ops, &psi0, 8, &grid).unwrap();
        let full = solve_full(&ops, &psi0, &grid).unwrap();
        let rel = frobenius_relative(&sol.reconstruct(), &full.psi);
        assert!(rel <= 1e-9, "relative error {rel}");
    }

    #[test]
    fn rank_exact_trajectory_is_reproduced() {
        let (grid, _, psi0) = reference_setup();
        let ops = PnOperators::zero(grid.m, grid.n);
        let sol = solve_dlra(&ops, &psi0, 1, &grid).unwrap();
        let full = solve_full(&ops, &psi0, &grid).unwrap();
        assert!(frobenius_relative(&sol.reconstruct(), &full.psi) <= 1e-10);
    }

    #[test]
    fn zero_final_time_returns_factorization() {
        let (grid, ops, psi0) = reference_setup();
        let grid = grid.with_t_end(0.0).unwrap();
        let sol = solve_dlra(&ops, &psi0, 3, &grid).unwrap();
        assert_eq!(sol, factorize(&psi0.psi, 3).unwrap());
    }

    #[test]
    fn orthonormality_survives_a_full_solve() {
        let grid = GridSpec::new(101, 16).unwrap();
        let ops = build_operators(&grid, |_| 1.0).unwrap();
        let psi0 = build_initial_condition(&grid, &InitialCondition::new(1.3)).unwrap();
        for r in [2, 5, 10] {
            let sol = solve_dlra(&ops, &psi0, r, &grid).unwrap();
            let (dx, dv) = sol.orthonormality_defect();
            assert!(dx <= 1e-8 && dv <= 1e-8, "r = {r}: {dx:e} {dv:e}");
        }
    }

    #[test]
    fn first_order_in_time_at_full_rank() {
        let base = GridSpec::with_domain(41, 6, -1.5, 1.5, 0.8, 0.3).unwrap();
        let ops = build_operators(&base, |_| 1.0).unwrap();
        let ic = InitialCondition { sigma: 0.3, ..InitialCondition::new(1.0) };
        let psi0 = build_initial_condition(&base, &ic).unwrap();
        let run = |cfl: f64| {
            let g = GridSpec { cfl, ..base };
            solve_dlra(&ops, &psi0, 6, &g).unwrap().reconstruct()
        };
        let errs: Vec<f64> = [0.8, 0.4, 0.2].iter().map(|&c| (run(c) - run(c / 8.0)).norm()).collect();
        for w in errs.windows(2) {
            let slope = (w[0] / w[1]).log2();
            assert!((slope - 1.0).abs() <= 0.2, "slope {slope}");
        }
    }

    #[test]
    fn over_approximated_rank_is_robust() {
        let grid = GridSpec::new(101, 32).unwrap();
        let ops = build_operators(&grid, |_| 1.0).unwrap();
        let psi0 = build_initial_condition(&grid, &InitialCondition::new(1.0)).unwrap();
        let full = solve_full(&ops, &psi0, &grid).unwrap().psi;
        let err = |r| (solve_dlra(&ops, &psi0, r, &grid).unwrap().reconstruct() - &full).norm();
        let (e2, e5, e10, e30) = (err(2), err(5), err(10), err(30));
        assert!(e30 < e5 && e5 < e2, "{e2:e} {e5:e} {e30:e}");
        assert!(e30 <= e10 + 1e-8, "{e10:e} {e30:e}");
    }

    #[test]
    fn lowrank_qoi_matches_dense_reconstruction() {
        let y = random_state(13, 7, 3, 31);
        let q = lowrank_qoi(&y, 0.2);
        let dense = scalar_flux(&FullState { psi: y.reconstruct(), t: 0.0 }, 0.2);
        assert!((q.phi - dense.phi).amax() < 1e-12);

        let zero = LowRankState { s: DMatrix::zeros(3, 3), ..y };
        assert_eq!(lowrank_qoi(&zero, 0.2).phi.amax(), 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn bug_step_keeps_rank_and_orthonormality(seed in 0u64..10_000, r in 1usize..6) {
            let grid = GridSpec::new(24, 9).unwrap();
            let ops = build_operators(&grid, |x| 1.0 + 0.25 * x).unwrap();
            let y = random_state(24, 9, r, seed);
            let y1 = bug_step(&ops, &y, grid.dt()).unwrap();
            prop_assert_eq!(y1.rank(), r);
            let (dx, dv) = y1.orthonormality_defect();
            prop_assert!(dx <= 1e-10 && dv <= 1e-10);
        }
    }
}
