//! Streaming per-point moments of QoI fields and their dx-weighted scalar
//! summaries.
//!
//! Accumulators merge with Chan's pairwise update. Estimators feed them in
//! fixed-size index chunks and merge the chunks in index order, so results
//! do not depend on how many workers evaluated the samples.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Running mean and sum of squared deviations per grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldAccumulator {
    count: u64,
    mean: DVector<f64>,
    m2: DVector<f64>,
}

impl FieldAccumulator {
    pub fn new(len: usize) -> Self {
        FieldAccumulator {
            count: 0,
            mean: DVector::zeros(len),
            m2: DVector::zeros(len),
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn push(&mut self, x: &DVector<f64>) {
        self.count += 1;
        let n = self.count as f64;
        for i in 0..self.mean.len() {
            let delta = x[i] - self.mean[i];
            self.mean[i] += delta / n;
            self.m2[i] += delta * (x[i] - self.mean[i]);
        }
    }

    pub fn merge(&mut self, other: &FieldAccumulator) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / n;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / n;
        }
        self.count += other.count;
    }

    /// Unbiased per-point sample variance (zero for fewer than two samples).
    pub fn variance_field(&self) -> DVector<f64> {
        if self.count < 2 {
            return DVector::zeros(self.mean.len());
        }
        &self.m2 / (self.count - 1) as f64
    }
}

/// Paired fine/coarse moments including the per-point co-moment.
#[derive(Debug, Clone, PartialEq)]
pub struct PairAccumulator {
    fine: FieldAccumulator,
    coarse: FieldAccumulator,
    comoment: DVector<f64>,
}

impl PairAccumulator {
    pub fn new(len: usize) -> Self {
        PairAccumulator {
            fine: FieldAccumulator::new(len),
            coarse: FieldAccumulator::new(len),
            comoment: DVector::zeros(len),
        }
    }

    pub fn count(&self) -> u64 {
        self.fine.count
    }

    pub fn fine(&self) -> &FieldAccumulator {
        &self.fine
    }

    pub fn coarse(&self) -> &FieldAccumulator {
        &self.coarse
    }

    pub fn push(&mut self, fine: &DVector<f64>, coarse: &DVector<f64>) {
        let n = (self.fine.count + 1) as f64;
        for i in 0..self.comoment.len() {
            let dc = coarse[i] - self.coarse.mean[i];
            let fine_mean_new = self.fine.mean[i] + (fine[i] - self.fine.mean[i]) / n;
            self.comoment[i] += dc * (fine[i] - fine_mean_new);
        }
        self.fine.push(fine);
        self.coarse.push(coarse);
    }

    pub fn merge(&mut self, other: &PairAccumulator) {
        if other.count() == 0 {
            return;
        }
        if self.count() == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.count() as f64, other.count() as f64);
        let n = na + nb;
        for i in 0..self.comoment.len() {
            let df = other.fine.mean[i] - self.fine.mean[i];
            let dc = other.coarse.mean[i] - self.coarse.mean[i];
            self.comoment[i] += other.comoment[i] + df * dc * na * nb / n;
        }
        self.fine.merge(&other.fine);
        self.coarse.merge(&other.coarse);
    }

    pub fn covariance_field(&self) -> DVector<f64> {
        let n = self.count();
        if n < 2 {
            return DVector::zeros(self.comoment.len());
        }
        &self.comoment / (n - 1) as f64
    }

    pub fn statistics(&self, dx: f64) -> PairStatistics {
        let var_r = self.fine.variance_field().sum() * dx;
        let var_s = self.coarse.variance_field().sum() * dx;
        let cov_rs = self.covariance_field().sum() * dx;
        PairStatistics::from_moments(var_r, var_s, cov_rs)
    }
}

/// Scalar second moments under `⟨u, v⟩ = Σ uᵢ vᵢ dx`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairStatistics {
    pub var_r: f64,
    pub var_s: f64,
    pub cov_rs: f64,
    pub corr_rs: f64,
}

impl PairStatistics {
    pub fn from_moments(var_r: f64, var_s: f64, cov_rs: f64) -> Self {
        let denom = (var_r * var_s).sqrt();
        let corr_rs = if denom > 0.0 {
            (cov_rs / denom).clamp(-1.0, 1.0)
        } else {
            0.0
        };
        PairStatistics {
            var_r,
            var_s,
            cov_rs,
            corr_rs,
        }
    }
}

/// `(Var_r, Var_s, Cov_rs, Corr_rs)` of paired samples (same ν per index).
pub fn sample_statistics(fine: &[DVector<f64>], coarse: &[DVector<f64>], dx: f64) -> Result<PairStatistics> {
    if fine.len() != coarse.len() {
        return Err(Error::invalid(format!(
            "{} fine vs {} coarse samples",
            fine.len(),
            coarse.len()
        )));
    }
    if fine.len() < 2 {
        return Err(Error::invalid("need at least two sample pairs"));
    }
    let len = fine[0].len();
    if fine.iter().chain(coarse).any(|v| v.len() != len) {
        return Err(Error::invalid("sample fields differ in length"));
    }
    let mut acc = PairAccumulator::new(len);
    for (f, c) in fine.iter().zip(coarse) {
        acc.push(f, c);
    }
    Ok(acc.statistics(dx))
}

/// `α* = Cov_rs / Var_s`.
pub fn optimal_alpha(cov_rs: f64, var_s: f64) -> Result<f64> {
    if !(var_s > 0.0) {
        return Err(Error::DegenerateCoarse);
    }
    Ok(cov_rs / var_s)
}

/// `ceil(Var_r (1 − Corr²) / ε²)`, at least 1.
pub fn diff_sample_count(var_r: f64, corr_rs: f64, epsilon: f64) -> Result<usize> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(var_r >= 0.0) || !(corr_rs.abs() <= 1.0) {
        return Err(Error::invalid(format!("bad moments var_r = {var_r}, corr = {corr_rs}")));
    }
    let raw = var_r * (1.0 - corr_rs * corr_rs) / (epsilon * epsilon);
    if !raw.is_finite() {
        return Err(Error::invalid("difference sample count overflows"));
    }
    Ok((raw.ceil() as usize).max(1))
}

/// dx-weighted L2 norm.
pub fn weighted_norm(v: &DVector<f64>, dx: f64) -> f64 {
    (v.norm_squared() * dx).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn field(seed: u64, len: usize) -> DVector<f64> {
        DVector::from_fn(len, |i, _| (((seed * 2654435761 + i as u64 * 40503) % 1000) as f64) / 250.0 - 2.0)
    }

    /// Textbook two-pass oracle.
    fn two_pass(fine: &[DVector<f64>], coarse: &[DVector<f64>], dx: f64) -> (f64, f64, f64) {
        let n = fine.len() as f64;
        let mf = fine.iter().fold(DVector::zeros(fine[0].len()), |a, b| a + b) / n;
        let mc = coarse.iter().fold(DVector::zeros(fine[0].len()), |a, b| a + b) / n;
        let mut vr = 0.0;
        let mut vs = 0.0;
        let mut cv = 0.0;
        for (f, c) in fine.iter().zip(coarse) {
            let df = f - &mf;
            let dc = c - &mc;
            vr += df.dot(&df);
            vs += dc.dot(&dc);
            cv += df.dot(&dc);
        }
        (vr * dx / (n - 1.0), vs * dx / (n - 1.0), cv * dx / (n - 1.0))
    }

    #[test]
    fn identical_fidelities() {
        let fine: Vec<_> = (0..10).map(|s| field(s, 7)).collect();
        let st = sample_statistics(&fine, &fine, 0.1).unwrap();
        assert_relative_eq!(st.cov_rs, st.var_r, max_relative = 1e-14);
        assert_relative_eq!(st.var_s, st.var_r, max_relative = 1e-14);
        assert_relative_eq!(st.corr_rs, 1.0, max_relative = 1e-14);
        assert_relative_eq!(optimal_alpha(st.cov_rs, st.var_s).unwrap(), 1.0, max_relative = 1e-14);
    }

    #[test]
    fn scaled_coarse() {
        let fine: Vec<_> = (0..10).map(|s| field(s, 7)).collect();
        let coarse: Vec<_> = fine.iter().map(|f| f * 2.0).collect();
        let st = sample_statistics(&fine, &coarse, 0.1).unwrap();
        assert_relative_eq!(st.corr_rs, 1.0, max_relative = 1e-14);
        assert_relative_eq!(st.cov_rs, 2.0 * st.var_r, max_relative = 1e-13);
        assert_relative_eq!(optimal_alpha(st.cov_rs, st.var_s).unwrap(), 0.5, max_relative = 1e-13);
    }

    #[test]
    fn matches_two_pass_oracle() {
        let fine: Vec<_> = (0..40).map(|s| field(s, 11)).collect();
        let coarse: Vec<_> = (0..40).map(|s| field(s * 7 + 3, 11) + &fine[s as usize] * 0.5).collect();
        let st = sample_statistics(&fine, &coarse, 0.03).unwrap();
        let (vr, vs, cv) = two_pass(&fine, &coarse, 0.03);
        assert_relative_eq!(st.var_r, vr, max_relative = 1e-12);
        assert_relative_eq!(st.var_s, vs, max_relative = 1e-12);
        assert_relative_eq!(st.cov_rs, cv, max_relative = 1e-12);
    }

    #[test]
    fn statistics_errors() {
        let a = vec![field(1, 3), field(2, 3)];
        assert!(sample_statistics(&a, &a[..1], 1.0).is_err());
        assert!(sample_statistics(&a[..1], &a[..1], 1.0).is_err());
        assert!(matches!(optimal_alpha(1.0, 0.0), Err(Error::DegenerateCoarse)));
    }

    #[test]
    fn diff_count_examples() {
        assert_eq!(diff_sample_count(0.04, 1.0, 0.01).unwrap(), 1);
        assert_eq!(diff_sample_count(0.04, 0.0, 0.01).unwrap(), 400);
        assert_eq!(diff_sample_count(0.04, 0.99, 0.01).unwrap(), 8);
        assert!(diff_sample_count(0.04, 0.5, 0.0).is_err());
        assert!(diff_sample_count(0.04, 0.5, -1.0).is_err());
    }

    #[test]
    fn constant_samples_have_zero_variance() {
        let mut acc = FieldAccumulator::new(4);
        for _ in 0..5 {
            acc.push(&DVector::from_element(4, 3.25));
        }
        assert_eq!(acc.variance_field().amax(), 0.0);
        assert_eq!(acc.mean()[2], 3.25);
    }

    proptest! {
        #[test]
        fn merge_is_consistent_with_sequential_push(
            seeds in prop::collection::vec(0u64..1000, 4..40),
            split in 1usize..39,
        ) {
            let split = split.min(seeds.len() - 1);
            let fine: Vec<_> = seeds.iter().map(|&s| field(s, 5)).collect();
            let coarse: Vec<_> = seeds.iter().map(|&s| field(s + 17, 5)).collect();
            let mut whole = PairAccumulator::new(5);
            let mut left = PairAccumulator::new(5);
            let mut right = PairAccumulator::new(5);
            for (i, (f, c)) in fine.iter().zip(&coarse).enumerate() {
                whole.push(f, c);
                if i < split { left.push(f, c) } else { right.push(f, c) }
            }
            left.merge(&right);
            let a = whole.statistics(0.5);
            let b = left.statistics(0.5);
            prop_assert!((a.var_r - b.var_r).abs() <= 1e-10 * a.var_r.abs().max(1.0));
            prop_assert!((a.cov_rs - b.cov_rs).abs() <= 1e-10 * a.var_r.abs().max(1.0));
            prop_assert!((whole.fine().mean() - left.fine().mean()).amax() <= 1e-12);
        }
    }
}
