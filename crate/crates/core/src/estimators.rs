//! Plain Monte Carlo and two-fidelity control-variate estimators of the
//! expected QoI field, plus the pilot / warm-up pipelines that choose α and
//! the number of difference samples.

use std::collections::BTreeMap;
use std::ops::Range;
use std::time::{Duration, Instant};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::{Fidelity, QoiModel};
use crate::quadrature::uniform_expectation_rule;
use crate::sampling::{Executor, SampleStream, StreamId, UncertainParameter};
use crate::statistics::{
    diff_sample_count, optimal_alpha, weighted_norm, FieldAccumulator, PairAccumulator, PairStatistics,
};

/// Samples per reduction chunk. Chunks are formed from fixed index ranges and
/// merged in order, which keeps every statistic independent of worker count.
const CHUNK: u64 = 16;

/// One evaluated draw. `qoi_coarse` is present for correlated pairs and was
/// computed from the same `nu` as `qoi_fine`.
#[derive(Debug, Clone)]
pub struct SampleRecord {
    pub param: UncertainParameter,
    pub fine: Fidelity,
    pub qoi_fine: DVector<f64>,
    pub coarse: Option<Fidelity>,
    pub qoi_coarse: Option<DVector<f64>>,
    pub fine_time: Duration,
    pub coarse_time: Option<Duration>,
}

impl SampleRecord {
    pub fn nu(&self) -> f64 {
        self.param.nu
    }
}

#[derive(Debug, Clone)]
pub struct EstimatorReport {
    pub mean: DVector<f64>,
    pub dx: f64,
    /// Per-point variance of the estimator's summand(s) (sample variance of
    /// G for plain MC; of the combined CV terms otherwise).
    pub variance_field: DVector<f64>,
    /// `sqrt(Σ Var_i dx)` of the estimator itself.
    pub mc_error: f64,
    pub bias: Option<f64>,
    /// Fine-level samples (plain MC) or difference pairs (CV).
    pub n_samples: usize,
    pub alpha: Option<f64>,
    /// Difference-sample count from the allocation rule, before reuse.
    pub n_diff: Option<usize>,
    /// Coarse evaluations entering the coarse-mean term.
    pub n_coarse: Option<usize>,
    /// Coarse solves performed without a fine partner.
    pub n_coarse_only: Option<usize>,
    pub pair_stats: Option<PairStatistics>,
    pub epsilon: Option<f64>,
    pub wall_time: Duration,
}

impl EstimatorReport {
    fn plain(acc: &FieldAccumulator, dx: f64, wall_time: Duration) -> Self {
        let n = acc.count() as usize;
        let variance_field = acc.variance_field();
        let mc_error = (variance_field.sum() * dx / n as f64).sqrt();
        EstimatorReport {
            mean: acc.mean().clone(),
            dx,
            variance_field,
            mc_error,
            bias: None,
            n_samples: n,
            alpha: None,
            n_diff: None,
            n_coarse: None,
            n_coarse_only: None,
            pair_stats: None,
            epsilon: None,
            wall_time,
        }
    }
}

/// Fine/coarse fidelities of a control variate; the coarse level must be
/// strictly cheaper than the fine one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fidelities {
    fine: Fidelity,
    coarse: Fidelity,
}

impl Fidelities {
    pub fn new(fine: Fidelity, coarse: Fidelity) -> Result<Self> {
        if coarse >= fine {
            return Err(Error::invalid(format!(
                "coarse fidelity {coarse} must be below fine fidelity {fine}"
            )));
        }
        Ok(Fidelities { fine, coarse })
    }

    /// Coarse equal to fine. Only meaningful for checking the zero-variance
    /// identity of the control variate.
    #[doc(hidden)]
    pub fn identical(f: Fidelity) -> Self {
        Fidelities { fine: f, coarse: f }
    }

    pub fn fine(&self) -> Fidelity {
        self.fine
    }

    pub fn coarse(&self) -> Fidelity {
        self.coarse
    }
}

fn wrap(index: u64, e: Error) -> Error {
    match e {
        Error::Sample { .. } => e,
        e => Error::Sample {
            index,
            source: Box::new(e),
        },
    }
}

fn check_len(expected: usize, v: &DVector<f64>, index: u64) -> Result<()> {
    if v.len() != expected {
        return Err(wrap(
            index,
            Error::invalid(format!("model returned {} points, expected {expected}", v.len())),
        ));
    }
    Ok(())
}

fn eval<M: QoiModel + ?Sized>(model: &M, fidelity: Fidelity, p: &UncertainParameter) -> Result<(DVector<f64>, Duration)> {
    let start = Instant::now();
    let g = model.evaluate(fidelity, p.nu).map_err(|e| wrap(p.sample_index, e))?;
    let elapsed = start.elapsed();
    check_len(model.len(), &g, p.sample_index)?;
    Ok((g, elapsed))
}

fn chunks(range: &Range<u64>) -> Vec<Range<u64>> {
    let mut out = Vec::new();
    let mut lo = range.start;
    while lo < range.end {
        let hi = (lo + CHUNK).min(range.end);
        out.push(lo..hi);
        lo = hi;
    }
    out
}

/// Evaluates one fidelity at `stream` indices `range` and reduces in order.
pub fn accumulate_fields<M: QoiModel + ?Sized>(
    model: &M,
    exec: &Executor,
    fidelity: Fidelity,
    stream: &SampleStream,
    range: Range<u64>,
) -> Result<FieldAccumulator> {
    let parts = chunks(&range);
    let accs = exec.map(0..parts.len() as u64, |c| {
        let mut acc = FieldAccumulator::new(model.len());
        for i in parts[c as usize].clone() {
            let (g, _) = eval(model, fidelity, &stream.draw(i))?;
            acc.push(&g);
        }
        Ok(acc)
    })?;
    let mut total = FieldAccumulator::new(model.len());
    for a in &accs {
        total.merge(a);
    }
    Ok(total)
}

/// Evaluates correlated pairs: both fidelities consume the same draw.
pub fn accumulate_pairs<M: QoiModel + ?Sized>(
    model: &M,
    exec: &Executor,
    levels: Fidelities,
    stream: &SampleStream,
    range: Range<u64>,
) -> Result<PairAccumulator> {
    let parts = chunks(&range);
    let accs = exec.map(0..parts.len() as u64, |c| {
        let mut acc = PairAccumulator::new(model.len());
        for i in parts[c as usize].clone() {
            let p = stream.draw(i);
            let (gf, _) = eval(model, levels.fine, &p)?;
            let (gc, _) = eval(model, levels.coarse, &p)?;
            acc.push(&gf, &gc);
        }
        Ok(acc)
    })?;
    let mut total = PairAccumulator::new(model.len());
    for a in &accs {
        total.merge(a);
    }
    Ok(total)
}

/// Per-sample records, fine level always and the coarse level when given.
pub fn collect_samples<M: QoiModel + ?Sized>(
    model: &M,
    exec: &Executor,
    fine: Fidelity,
    coarse: Option<Fidelity>,
    stream: &SampleStream,
    range: Range<u64>,
) -> Result<Vec<SampleRecord>> {
    exec.map(range, |i| {
        let param = stream.draw(i);
        let (qoi_fine, fine_time) = eval(model, fine, &param)?;
        let (qoi_coarse, coarse_time) = match coarse {
            Some(c) => {
                let (g, t) = eval(model, c, &param)?;
                (Some(g), Some(t))
            }
            None => (None, None),
        };
        Ok(SampleRecord {
            param,
            fine,
            qoi_fine,
            coarse,
            qoi_coarse,
            fine_time,
            coarse_time,
        })
    })
}

/// Evaluates every fidelity in `levels` on the same draws; used for α tables
/// where one pilot set serves many (s, r) combinations.
pub fn collect_levels<M: QoiModel + ?Sized>(
    model: &M,
    exec: &Executor,
    levels: &[Fidelity],
    stream: &SampleStream,
    n: usize,
) -> Result<BTreeMap<Fidelity, Vec<DVector<f64>>>> {
    let rows = exec.map(0..n as u64, |i| {
        let p = stream.draw(i);
        levels.iter().map(|&f| eval(model, f, &p).map(|(g, _)| g)).collect::<Result<Vec<_>>>()
    })?;
    let mut out: BTreeMap<Fidelity, Vec<DVector<f64>>> = BTreeMap::new();
    for row in rows {
        for (&f, g) in levels.iter().zip(row) {
            out.entry(f).or_default().push(g);
        }
    }
    Ok(out)
}

/// Plain Monte Carlo on the dedicated MC stream of `master_seed`.
pub fn mc_estimate<M: QoiModel + ?Sized>(
    model: &M,
    exec: &Executor,
    fidelity: Fidelity,
    n: usize,
    master_seed: u64,
) -> Result<EstimatorReport> {
    mc_estimate_on(model, exec, fidelity, n, &SampleStream::new(master_seed, StreamId::Mc))
}

pub fn mc_estimate_on<M: QoiModel + ?Sized>(
    model: &M,
    exec: &Executor,
    fidelity: Fidelity,
    n: usize,
    stream: &SampleStream,
) -> Result<EstimatorReport> {
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 samples, got {n}")));
    }
    let start = Instant::now();
    let acc = accumulate_fields(model, exec, fidelity, stream, 0..n as u64)?;
    Ok(EstimatorReport::plain(&acc, model.dx(), start.elapsed()))
}

/// How the coarse-mean term of the control variate is obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum CoarseMean {
    /// Average of this many coarse-only samples.
    Sampled(usize),
    /// Supplied mean; only sensible for the zero-variance identity check.
    #[doc(hidden)]
    Known(DVector<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvSpec {
    pub levels: Fidelities,
    pub coarse_mean: CoarseMean,
    pub n_diff: usize,
    pub alpha: f64,
    pub master_seed: u64,
    pub low: f64,
    pub high: f64,
}

impl CvSpec {
    pub fn new(levels: Fidelities, n_coarse: usize, n_diff: usize, alpha: f64, master_seed: u64) -> Self {
        CvSpec {
            levels,
            coarse_mean: CoarseMean::Sampled(n_coarse),
            n_diff,
            alpha,
            master_seed,
            low: SampleStream::DEFAULT_LOW,
            high: SampleStream::DEFAULT_HIGH,
        }
    }

    fn stream(&self, id: StreamId) -> Result<SampleStream> {
        SampleStream::new(self.master_seed, id).with_bounds(self.low, self.high)
    }
}

/// Combines `α·E[G_s] + mean(G_r − α G_s)` from the pair and coarse-only
/// accumulators. Each term's variance contributes to the estimator's
/// variance as if the terms were independent.
fn combine(
    pairs: &PairAccumulator,
    coarse_mean: &DVector<f64>,
    coarse_var: Option<&DVector<f64>>,
    n_coarse: usize,
    alpha: f64,
    dx: f64,
) -> (DVector<f64>, DVector<f64>, f64) {
    let len = coarse_mean.len();
    let np = pairs.count() as usize;
    let mut mean = coarse_mean * alpha;
    let mut var = DVector::zeros(len);
    if np > 0 {
        mean += pairs.fine().mean() - pairs.coarse().mean() * alpha;
    }
    if np >= 2 {
        let vf = pairs.fine().variance_field();
        let vc = pairs.coarse().variance_field();
        let cov = pairs.covariance_field();
        for i in 0..len {
            var[i] += ((vf[i] - 2.0 * alpha * cov[i] + alpha * alpha * vc[i]).max(0.0)) / np as f64;
        }
    }
    if let Some(vc) = coarse_var {
        if n_coarse > 0 {
            var += vc * (alpha * alpha / n_coarse as f64);
        }
    }
    let err = (var.sum() * dx).sqrt();
    (mean, var, err)
}

/// Control-variate estimate with given α and counts.
pub fn cv_estimate<M: QoiModel + ?Sized>(model: &M, exec: &Executor, spec: &CvSpec) -> Result<EstimatorReport> {
    if !spec.alpha.is_finite() {
        return Err(Error::invalid("alpha must be finite"));
    }
    let start = Instant::now();
    let pairs = accumulate_pairs(model, exec, spec.levels, &spec.stream(StreamId::Pairs)?, 0..spec.n_diff as u64)?;
    let (coarse_mean, coarse_var, n_coarse) = match &spec.coarse_mean {
        CoarseMean::Sampled(n) => {
            if *n < 2 {
                return Err(Error::invalid(format!("need at least 2 coarse samples, got {n}")));
            }
            let acc = accumulate_fields(model, exec, spec.levels.coarse, &spec.stream(StreamId::Coarse)?, 0..*n as u64)?;
            (acc.mean().clone(), Some(acc.variance_field()), *n)
        }
        CoarseMean::Known(v) => {
            if v.len() != model.len() {
                return Err(Error::invalid("supplied coarse mean has the wrong length"));
            }
            (v.clone(), None, 0)
        }
    };
    let (mean, variance_field, mc_error) = combine(&pairs, &coarse_mean, coarse_var.as_ref(), n_coarse, spec.alpha, model.dx());
    Ok(EstimatorReport {
        mean,
        dx: model.dx(),
        variance_field,
        mc_error,
        bias: None,
        n_samples: spec.n_diff,
        alpha: Some(spec.alpha),
        n_diff: Some(spec.n_diff),
        n_coarse: Some(n_coarse),
        n_coarse_only: Some(n_coarse),
        pair_stats: (pairs.count() >= 2).then(|| pairs.statistics(model.dx())),
        epsilon: None,
        wall_time: start.elapsed(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CvMode {
    /// α*, correlation and N_diff from a separate pilot run before timing.
    Pilot,
    /// α*, correlation and N_diff from the first warm-up pairs of the run.
    Warmup,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSpec {
    pub mode: CvMode,
    pub levels: Fidelities,
    pub n_mc: usize,
    pub master_seed: u64,
    pub pilot_n: usize,
    pub warmup_n: usize,
    /// Hard cap on N_diff.
    pub max_diff: usize,
    /// Target error; derived from the data when absent (see [`cv_pipeline`]).
    pub epsilon: Option<f64>,
    pub low: f64,
    pub high: f64,
}

impl PipelineSpec {
    pub const DEFAULT_PILOT_N: usize = 500;
    pub const DEFAULT_WARMUP_N: usize = 200;

    pub fn new(mode: CvMode, levels: Fidelities, n_mc: usize, master_seed: u64) -> Self {
        PipelineSpec {
            mode,
            levels,
            n_mc,
            master_seed,
            pilot_n: Self::DEFAULT_PILOT_N,
            warmup_n: Self::DEFAULT_WARMUP_N,
            max_diff: 1_000_000,
            epsilon: None,
            low: SampleStream::DEFAULT_LOW,
            high: SampleStream::DEFAULT_HIGH,
        }
    }

    fn stream(&self, id: StreamId) -> Result<SampleStream> {
        SampleStream::new(self.master_seed, id).with_bounds(self.low, self.high)
    }

    fn allocate(&self, stats: &PairStatistics, epsilon: f64) -> Result<usize> {
        let n_diff = diff_sample_count(stats.var_r, stats.corr_rs, epsilon)?;
        if n_diff > self.max_diff {
            return Err(Error::BudgetExceeded {
                requested: n_diff,
                cap: self.max_diff,
                var_r: stats.var_r,
                corr: stats.corr_rs,
                eps: epsilon,
            });
        }
        Ok(n_diff)
    }
}

/// Runs a control-variate estimate whose α and N_diff are chosen from data.
///
/// Pilot mode: `pilot_n` pairs on the pilot stream give α*, Corr and Var_r;
/// ε defaults to the mc_error of an `n_mc`-sample fine MC run on the MC
/// stream; then [`cv_estimate`] runs with `n_mc` coarse samples. Only that
/// last step is counted in `wall_time`.
///
/// Warm-up mode: the first `warmup_n` pairs give α*, Corr and Var_r, and ε
/// defaults to `sqrt(Var_r / n_mc)`, the predicted error of `n_mc` fine
/// samples. Warm-up pairs are reused as difference samples; extra pairs are
/// drawn only if N_diff exceeds `warmup_n`. The coarse halves of all pairs
/// join the coarse-only samples in the coarse mean so that `n_mc` coarse
/// evaluations enter it in total. Everything counts towards `wall_time`.
pub fn cv_pipeline<M: QoiModel + ?Sized>(model: &M, exec: &Executor, spec: &PipelineSpec) -> Result<EstimatorReport> {
    if spec.n_mc < 2 {
        return Err(Error::invalid(format!("need n_mc >= 2, got {}", spec.n_mc)));
    }
    match spec.mode {
        CvMode::Pilot => pilot_pipeline(model, exec, spec),
        CvMode::Warmup => warmup_pipeline(model, exec, spec),
    }
}

fn pilot_pipeline<M: QoiModel + ?Sized>(model: &M, exec: &Executor, spec: &PipelineSpec) -> Result<EstimatorReport> {
    if spec.pilot_n < 2 {
        return Err(Error::invalid("need at least 2 pilot pairs"));
    }
    let pilot = accumulate_pairs(model, exec, spec.levels, &spec.stream(StreamId::Pilot)?, 0..spec.pilot_n as u64)?;
    let stats = pilot.statistics(model.dx());
    let alpha = optimal_alpha(stats.cov_rs, stats.var_s)?;
    let epsilon = match spec.epsilon {
        Some(e) => e,
        None => mc_estimate_on(model, exec, spec.levels.fine, spec.n_mc, &spec.stream(StreamId::Mc)?)?.mc_error,
    };
    let n_diff = spec.allocate(&stats, epsilon)?;
    let cv = CvSpec {
        levels: spec.levels,
        coarse_mean: CoarseMean::Sampled(spec.n_mc),
        n_diff,
        alpha,
        master_seed: spec.master_seed,
        low: spec.low,
        high: spec.high,
    };
    let mut report = cv_estimate(model, exec, &cv)?;
    report.pair_stats = Some(stats);
    report.epsilon = Some(epsilon);
    Ok(report)
}

fn warmup_pipeline<M: QoiModel + ?Sized>(model: &M, exec: &Executor, spec: &PipelineSpec) -> Result<EstimatorReport> {
    if spec.warmup_n < 2 {
        return Err(Error::invalid("need at least 2 warm-up pairs"));
    }
    let dx = model.dx();
    let start = Instant::now();
    let pair_stream = spec.stream(StreamId::Pairs)?;
    let mut pairs = accumulate_pairs(model, exec, spec.levels, &pair_stream, 0..spec.warmup_n as u64)?;
    let stats = pairs.statistics(dx);
    let alpha = optimal_alpha(stats.cov_rs, stats.var_s)?;
    let epsilon = spec.epsilon.unwrap_or_else(|| (stats.var_r / spec.n_mc as f64).sqrt());
    let n_diff = spec.allocate(&stats, epsilon)?;

    let coarse_only = if n_diff <= spec.warmup_n {
        spec.n_mc.saturating_sub(spec.warmup_n)
    } else {
        let extra = pairs_extra(model, exec, spec, &pair_stream, n_diff)?;
        pairs.merge(&extra);
        spec.n_mc.saturating_sub(n_diff - spec.warmup_n)
    };
    let mut coarse = pairs.coarse().clone();
    if coarse_only > 0 {
        let only = accumulate_fields(model, exec, spec.levels.coarse, &spec.stream(StreamId::Coarse)?, 0..coarse_only as u64)?;
        coarse.merge(&only);
    }
    let n_coarse = coarse.count() as usize;
    let (mean, variance_field, mc_error) =
        combine(&pairs, coarse.mean(), Some(&coarse.variance_field()), n_coarse, alpha, dx);
    Ok(EstimatorReport {
        mean,
        dx,
        variance_field,
        mc_error,
        bias: None,
        n_samples: pairs.count() as usize,
        alpha: Some(alpha),
        n_diff: Some(n_diff),
        n_coarse: Some(n_coarse),
        n_coarse_only: Some(coarse_only),
        pair_stats: Some(stats),
        epsilon: Some(epsilon),
        wall_time: start.elapsed(),
    })
}

fn pairs_extra<M: QoiModel + ?Sized>(
    model: &M,
    exec: &Executor,
    spec: &PipelineSpec,
    stream: &SampleStream,
    n_diff: usize,
) -> Result<PairAccumulator> {
    accumulate_pairs(model, exec, spec.levels, stream, spec.warmup_n as u64..n_diff as u64)
}

/// `E[G(ν)]` and `E‖G − E G‖²_dx` for `ν ~ U(low, high)` by a `k`-point
/// Gauss–Legendre rule. Deterministic; accurate when G is smooth in ν.
pub fn quadrature_moments<M: QoiModel + ?Sized>(
    model: &M,
    exec: &Executor,
    fidelity: Fidelity,
    k: usize,
    low: f64,
    high: f64,
) -> Result<(DVector<f64>, f64)> {
    if k == 0 || !(low < high) {
        return Err(Error::invalid("need k >= 1 and low < high"));
    }
    let (nodes, weights) = uniform_expectation_rule(k, low, high);
    let values = exec.map(0..k as u64, |j| {
        model.evaluate(fidelity, nodes[j as usize]).map_err(|e| wrap(j, e))
    })?;
    let mut mean = DVector::zeros(model.len());
    for (v, w) in values.iter().zip(&weights) {
        mean.axpy(*w, v, 1.0);
    }
    let var = values
        .iter()
        .zip(&weights)
        .map(|(v, w)| w * weighted_norm(&(v - &mean), model.dx()).powi(2))
        .sum();
    Ok((mean, var))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::AnalyticModel;

    fn square() -> AnalyticModel<impl Fn(Fidelity, f64) -> DVector<f64> + Sync> {
        AnalyticModel::new(3, 1.0 / 3.0, |f, nu| {
            let bump = match f {
                Fidelity::Rank(s) => 0.1 / (s as f64),
                Fidelity::Full => 0.0,
            };
            DVector::from_element(3, nu * nu + bump * nu)
        })
    }

    #[test]
    fn chunking_covers_range() {
        let c = chunks(&(5..40));
        assert_eq!(c.first().unwrap().start, 5);
        assert_eq!(c.last().unwrap().end, 40);
        assert_eq!(c.iter().map(|r| r.end - r.start).sum::<u64>(), 35);
        assert!(chunks(&(3..3)).is_empty());
    }

    #[test]
    fn fidelities_order() {
        assert!(Fidelities::new(Fidelity::Rank(10), Fidelity::Rank(2)).is_ok());
        assert!(Fidelities::new(Fidelity::Full, Fidelity::Rank(2)).is_ok());
        assert!(Fidelities::new(Fidelity::Rank(2), Fidelity::Rank(2)).is_err());
        assert!(Fidelities::new(Fidelity::Rank(2), Fidelity::Full).is_err());
    }

    #[test]
    fn mc_needs_two_samples() {
        let m = square();
        assert!(mc_estimate(&m, &Executor::sequential(), Fidelity::Full, 1, 0).is_err());
    }

    #[test]
    fn alpha_zero_reduces_to_mc_over_pairs() {
        let m = square();
        let exec = Executor::sequential();
        let levels = Fidelities::new(Fidelity::Full, Fidelity::Rank(1)).unwrap();
        let cv = cv_estimate(&m, &exec, &CvSpec::new(levels, 10, 50, 0.0, 9)).unwrap();
        let mc = mc_estimate_on(&m, &exec, Fidelity::Full, 50, &SampleStream::new(9, StreamId::Pairs)).unwrap();
        assert!((cv.mean - mc.mean).amax() < 1e-14);
        assert!((cv.mc_error - mc.mc_error).abs() < 1e-14);
    }

    #[test]
    fn warmup_reuse_counts() {
        let m = square();
        let levels = Fidelities::new(Fidelity::Full, Fidelity::Rank(1)).unwrap();
        let spec = PipelineSpec::new(CvMode::Warmup, levels, 300, 1);
        let r = cv_pipeline(&m, &Executor::sequential(), &spec).unwrap();
        // nearly perfect correlation: N_diff is tiny, warm-up pairs reused
        assert!(r.n_diff.unwrap() <= 200);
        assert_eq!(r.n_coarse_only, Some(100));
        assert_eq!(r.n_samples, 200);
        assert_eq!(r.n_coarse, Some(300));
    }

    #[test]
    fn budget_cap() {
        let m = AnalyticModel::new(2, 0.5, |f, nu| match f {
            Fidelity::Full => DVector::from_element(2, nu),
            Fidelity::Rank(_) => DVector::from_element(2, (nu * 97.0).sin()),
        });
        let levels = Fidelities::new(Fidelity::Full, Fidelity::Rank(1)).unwrap();
        let mut spec = PipelineSpec::new(CvMode::Warmup, levels, 1000, 1);
        spec.epsilon = Some(1e-4);
        spec.max_diff = 500;
        let err = cv_pipeline(&m, &Executor::sequential(), &spec).unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded { cap: 500, .. }));
    }

    #[test]
    fn sample_errors_carry_index() {
        let m = AnalyticModel::new(1, 1.0, |_, nu| DVector::from_element(1, if nu > 1.4 { f64::NAN } else { nu }));
        struct Failing<'a, M>(&'a M);
        impl<M: QoiModel> QoiModel for Failing<'_, M> {
            fn len(&self) -> usize {
                1
            }
            fn dx(&self) -> f64 {
                1.0
            }
            fn evaluate(&self, f: Fidelity, nu: f64) -> Result<DVector<f64>> {
                let v = self.0.evaluate(f, nu)?;
                if v[0].is_nan() {
                    return Err(Error::NumericalOverflow { t: 0.0 });
                }
                Ok(v)
            }
        }
        let err = mc_estimate(&Failing(&m), &Executor::sequential(), Fidelity::Full, 200, 3).unwrap_err();
        match err {
            Error::Sample { index, .. } => {
                let nu = SampleStream::new(3, StreamId::Mc).draw(index).nu;
                assert!(nu > 1.4);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn quadrature_moments_of_square() {
        let m = AnalyticModel::new(2, 0.5, |_, nu| DVector::from_element(2, nu * nu));
        let (mean, var) = quadrature_moments(&m, &Executor::sequential(), Fidelity::Full, 6, 0.5, 1.5).unwrap();
        assert!((mean[0] - 13.0 / 12.0).abs() < 1e-14);
        // Var[ν²] = E ν⁴ − (E ν²)² = 121/80 − 169/144
        let var_nu2 = 121.0 / 80.0 - 169.0 / 144.0;
        assert!((var - var_nu2).abs() < 1e-13);
    }
}
