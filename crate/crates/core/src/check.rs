//! Fast self-test run by `lrrt check`.

use nalgebra::DVector;

use crate::bug::{solve_dlra, solve_dlra_detailed};
use crate::error::Result;
use crate::estimators::{cv_estimate, CoarseMean, CvSpec, Fidelities};
use crate::full_rank::solve_full;
use crate::grid::GridSpec;
use crate::model::{Fidelity, Physics, QoiModel, SlabModel};
use crate::quadrature::uniform_expectation_rule;
use crate::sampling::Executor;
use crate::transport::{build_initial_condition, build_operators, InitialCondition};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, value: f64, tol: f64) -> CheckOutcome {
    CheckOutcome {
        name,
        passed: value.is_finite() && value <= tol,
        detail: format!("{value:.3e} (tolerance {tol:.0e})"),
    }
}

fn orthonormality() -> Result<CheckOutcome> {
    let grid = GridSpec::new(101, 16)?;
    let ops = build_operators(&grid, |_| 1.0)?;
    let psi0 = build_initial_condition(&grid, &InitialCondition::new(1.0))?;
    let sol = solve_dlra_detailed(&ops, &psi0, 6, &grid)?;
    let (dx, dv) = sol.state.orthonormality_defect();
    Ok(outcome("basis orthonormality after a full solve", dx.max(dv), 1e-8))
}

fn full_rank_equivalence() -> Result<CheckOutcome> {
    let grid = GridSpec::new(51, 8)?.with_t_end(0.5)?;
    let ops = build_operators(&grid, |_| 1.0)?;
    let psi0 = build_initial_condition(&grid, &InitialCondition::new(1.0))?;
    let full = solve_full(&ops, &psi0, &grid)?.psi;
    let low = solve_dlra(&ops, &psi0, 8, &grid)?.reconstruct();
    Ok(outcome("rank-n BUG equals dense Euler", (low - &full).norm() / full.norm(), 1e-9))
}

fn zero_variance_identity() -> Result<CheckOutcome> {
    let grid = GridSpec::new(31, 6)?.with_t_end(0.3)?;
    let model = SlabModel::new(grid, Physics::default())?;
    let exec = Executor::sequential();
    let f = Fidelity::Rank(3);
    // any fixed field stands in for the exact coarse mean
    let (nodes, weights) = uniform_expectation_rule(4, 0.5, 1.5);
    let mut known = DVector::zeros(model.len());
    for (nu, w) in nodes.iter().zip(&weights) {
        known.axpy(*w, &model.evaluate(f, *nu)?, 1.0);
    }
    let spec = CvSpec {
        coarse_mean: CoarseMean::Known(known.clone()),
        ..CvSpec::new(Fidelities::identical(f), 2, 8, 1.0, 11)
    };
    let report = cv_estimate(&model, &exec, &spec)?;
    let dev = (report.mean - &known).amax().max(report.mc_error);
    Ok(outcome("control variate with s = r, alpha = 1 is exact", dev, 1e-12))
}

/// Runs every check; a check that errors counts as failed.
pub fn run_checks() -> Vec<CheckOutcome> {
    let checks: [(&'static str, fn() -> Result<CheckOutcome>); 3] = [
        ("basis orthonormality after a full solve", orthonormality),
        ("rank-n BUG equals dense Euler", full_rank_equivalence),
        ("control variate with s = r, alpha = 1 is exact", zero_variance_identity),
    ];
    checks
        .iter()
        .map(|(name, f)| {
            f().unwrap_or_else(|e| CheckOutcome {
                name,
                passed: false,
                detail: e.to_string(),
            })
        })
        .collect()
}
