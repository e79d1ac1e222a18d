use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{mc_estimate_on, EstimatorReport};
use crate::grid::GridSpec;
use crate::model::{Fidelity, Physics, SlabModel};
use crate::sampling::{Executor, SampleStream, StreamId};
use crate::statistics::weighted_norm;

/// Full-rank Monte Carlo mean of the scalar flux on a fine grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub grid: GridSpec,
    pub physics: Physics,
    pub n_samples: usize,
    pub master_seed: u64,
    pub low: f64,
    pub high: f64,
    pub mc_error: f64,
    pub phi_mean: Vec<f64>,
}

impl ReferenceSolution {
    /// Full-rank MC on the reference stream of `master_seed`.
    pub fn compute(
        grid: GridSpec,
        physics: Physics,
        n_samples: usize,
        master_seed: u64,
        low: f64,
        high: f64,
        exec: &Executor,
    ) -> Result<Self> {
        let model = SlabModel::new(grid, physics)?;
        let stream = SampleStream::new(master_seed, StreamId::Reference).with_bounds(low, high)?;
        let report = mc_estimate_on(&model, exec, Fidelity::Full, n_samples, &stream)?;
        Ok(ReferenceSolution {
            grid,
            physics,
            n_samples,
            master_seed,
            low,
            high,
            mc_error: report.mc_error,
            phi_mean: report.mean.iter().copied().collect(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let r: ReferenceSolution = serde_json::from_str(&text)?;
        if r.phi_mean.len() != r.grid.m {
            return Err(Error::invalid(format!(
                "{}: {} values for {} grid points",
                path.display(),
                r.phi_mean.len(),
                r.grid.m
            )));
        }
        Ok(r)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        super::write_atomic(path, text.as_bytes())
    }

    /// Stride `k` with study point `i` equal to reference point `k·i`, if the
    /// study grid is nested in the reference grid.
    pub fn stride(&self, grid: &GridSpec) -> Result<usize> {
        let r = &self.grid;
        let same = |x: f64, y: f64| (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0);
        if !same(r.a, grid.a) || !same(r.b, grid.b) {
            return Err(Error::invalid(format!(
                "domain [{}, {}] differs from reference domain [{}, {}]",
                grid.a, grid.b, r.a, r.b
            )));
        }
        if !same(r.t_end, grid.t_end) {
            return Err(Error::invalid(format!(
                "final time {} differs from reference final time {}",
                grid.t_end, r.t_end
            )));
        }
        if (r.m - 1) % (grid.m - 1) != 0 {
            return Err(Error::invalid(format!(
                "grid with m = {} is not nested in reference grid with m = {} (m - 1 must divide {})",
                grid.m,
                r.m,
                r.m - 1
            )));
        }
        Ok((r.m - 1) / (grid.m - 1))
    }

    /// Reference values at the points of a nested grid.
    pub fn restrict(&self, grid: &GridSpec) -> Result<DVector<f64>> {
        let k = self.stride(grid)?;
        Ok(DVector::from_fn(grid.m, |i, _| self.phi_mean[k * i]))
    }
}

/// `(bias, mc_error)`: bias is the dx-weighted L2 distance between the
/// estimate and the restricted reference.
pub fn compute_metrics(report: &EstimatorReport, grid: &GridSpec, reference: &ReferenceSolution) -> Result<(f64, f64)> {
    if report.mean.len() != grid.m {
        return Err(Error::invalid(format!(
            "report has {} points, grid has {}",
            report.mean.len(),
            grid.m
        )));
    }
    let restricted = reference.restrict(grid)?;
    Ok((weighted_norm(&(&report.mean - restricted), grid.dx()), report.mc_error))
}
