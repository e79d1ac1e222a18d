//! Study driver: reference solutions, parameter sweeps and CSV output.

mod config;
mod reference;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub use config::{ExperimentConfig, StudyKind};
pub use reference::{compute_metrics, ReferenceSolution};

use crate::error::{Error, Result};
use crate::estimators::{
    collect_levels, cv_pipeline, mc_estimate_on, EstimatorReport, Fidelities, PipelineSpec,
};
use crate::grid::GridSpec;
use crate::model::{Fidelity, SlabModel};
use crate::sampling::{Executor, SampleStream, StreamId};
use crate::statistics::{optimal_alpha, sample_statistics};

pub const CSV_HEADER: [&str; 15] = [
    "study", "m", "n", "r", "s", "N", "N_diff", "alpha", "bias", "mc_error", "var_r", "var_s", "corr_rs",
    "wall_time_s", "seed",
];

/// One line of the results table. Empty cells mean "not applicable".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub study: String,
    pub m: usize,
    pub n: usize,
    pub r: Option<usize>,
    pub s: Option<usize>,
    #[serde(rename = "N")]
    pub n_samples: Option<usize>,
    #[serde(rename = "N_diff")]
    pub n_diff: Option<usize>,
    pub alpha: Option<f64>,
    pub bias: Option<f64>,
    pub mc_error: Option<f64>,
    pub var_r: Option<f64>,
    pub var_s: Option<f64>,
    pub corr_rs: Option<f64>,
    pub wall_time_s: Option<f64>,
    pub seed: u64,
    /// Failure message of an error row; not part of the CSV.
    #[serde(skip)]
    pub error: Option<String>,
}

impl ResultRow {
    fn blank(study: StudyKind, grid: &GridSpec, seed: u64) -> Self {
        ResultRow {
            study: study.name().to_string(),
            m: grid.m,
            n: grid.n,
            r: None,
            s: None,
            n_samples: None,
            n_diff: None,
            alpha: None,
            bias: None,
            mc_error: None,
            var_r: None,
            var_s: None,
            corr_rs: None,
            wall_time_s: None,
            seed,
            error: None,
        }
    }

    fn failed(mut self, err: &Error) -> Self {
        self.study = format!("{}:error", self.study);
        self.error = Some(err.to_string());
        self
    }

    pub fn is_error(&self) -> bool {
        self.study.ends_with(":error")
    }

    /// Same row with the timing cell cleared, for determinism comparisons.
    pub fn without_timing(&self) -> Self {
        ResultRow {
            wall_time_s: None,
            ..self.clone()
        }
    }
}

/// Mean scalar-flux profile behind a result row.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub study: String,
    pub grid: GridSpec,
    pub r: Option<usize>,
    pub s: Option<usize>,
    pub n_samples: usize,
    pub seed: u64,
    pub phi: DVector<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct StudyOutput {
    pub rows: Vec<ResultRow>,
    pub profiles: Vec<Profile>,
    pub reference: Option<ReferenceSolution>,
}

/// Computes the reference after checking that every study grid is nested.
pub fn compute_reference(cfg: &ExperimentConfig, exec: &Executor) -> Result<ReferenceSolution> {
    let grid = cfg.reference_grid()?;
    for &m in &cfg.m {
        let g = cfg.grid(m)?;
        if (grid.m - 1) % (g.m - 1) != 0 {
            return Err(Error::invalid(format!(
                "study grid m = {m} is not nested in reference grid m = {}",
                grid.m
            )));
        }
    }
    ReferenceSolution::compute(
        grid,
        cfg.physics(),
        cfg.ref_samples,
        cfg.master_seed,
        cfg.low,
        cfg.high,
        exec,
    )
}

/// Loads the configured reference file, or computes and stores it.
pub fn obtain_reference(cfg: &ExperimentConfig, exec: &Executor) -> Result<Option<ReferenceSolution>> {
    let Some(path) = &cfg.reference else {
        return Ok(None);
    };
    if path.exists() {
        let r = ReferenceSolution::load(path)?;
        if r.physics != cfg.physics() || r.low != cfg.low || r.high != cfg.high {
            return Err(Error::Config(format!(
                "{}: physics or parameter range differ from the study config",
                path.display()
            )));
        }
        return Ok(Some(r));
    }
    let r = compute_reference(cfg, exec)?;
    r.save(path)?;
    Ok(Some(r))
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn repeat_min<F>(reps: usize, mut run: F) -> Result<(EstimatorReport, Duration)>
where
    F: FnMut() -> Result<EstimatorReport>,
{
    let first = run()?;
    let mut best = first.wall_time;
    for _ in 1..reps {
        best = best.min(run()?.wall_time);
    }
    Ok((first, best))
}

/// Runs the configured sweep. `progress` sees every row as it is produced.
pub fn run_study(cfg: &ExperimentConfig, exec: &Executor, progress: &mut dyn FnMut(&ResultRow)) -> Result<StudyOutput> {
    cfg.validate()?;
    match cfg.study {
        StudyKind::Reference => reference_study(cfg, exec, progress),
        StudyKind::McStudy => mc_study(cfg, exec, progress),
        StudyKind::CvStudy => cv_study(cfg, exec, progress),
        StudyKind::AlphaTable => alpha_table(cfg, exec, progress),
    }
}

fn reference_study(cfg: &ExperimentConfig, exec: &Executor, progress: &mut dyn FnMut(&ResultRow)) -> Result<StudyOutput> {
    let start = std::time::Instant::now();
    let reference = compute_reference(cfg, exec)?;
    let elapsed = start.elapsed();
    let path = cfg
        .reference
        .clone()
        .unwrap_or_else(|| config::sidecar(&cfg.output, "reference.json"));
    reference.save(&path)?;
    let mut row = ResultRow::blank(StudyKind::Reference, &reference.grid, cfg.master_seed);
    row.n_samples = Some(reference.n_samples);
    row.mc_error = Some(reference.mc_error);
    row.wall_time_s = Some(secs(elapsed));
    progress(&row);
    let profile = Profile {
        study: row.study.clone(),
        grid: reference.grid,
        r: None,
        s: None,
        n_samples: reference.n_samples,
        seed: cfg.master_seed,
        phi: DVector::from_vec(reference.phi_mean.clone()),
    };
    Ok(StudyOutput {
        rows: vec![row],
        profiles: vec![profile],
        reference: Some(reference),
    })
}

fn mc_study(cfg: &ExperimentConfig, exec: &Executor, progress: &mut dyn FnMut(&ResultRow)) -> Result<StudyOutput> {
    let reference = obtain_reference(cfg, exec)?;
    let mut out = StudyOutput::default();
    for &m in &cfg.m {
        let grid = cfg.grid(m)?;
        let model = SlabModel::new(grid, cfg.physics())?;
        for &r in &cfg.r {
            let rank = model.effective_rank(r);
            for &n in &cfg.n_samples {
                let mut row = ResultRow::blank(StudyKind::McStudy, &grid, cfg.master_seed);
                row.r = Some(rank);
                row.n_samples = Some(n);
                let cell = repeat_min(cfg.replications, || {
                    mc_stream(&model, exec, Fidelity::Rank(rank), n, cfg)
                })
                .and_then(|(report, time)| {
                    let bias = match &reference {
                        Some(refsol) => Some(compute_metrics(&report, &grid, refsol)?.0),
                        None => None,
                    };
                    Ok((report, time, bias))
                });
                let row = match cell {
                    Ok((report, time, bias)) => {
                        row.bias = bias;
                        row.mc_error = Some(report.mc_error);
                        row.var_r = Some(report.variance_field.sum() * grid.dx());
                        row.wall_time_s = Some(secs(time));
                        out.profiles.push(profile_of(&row, &grid, n, report.mean));
                        row
                    }
                    Err(e) => row.failed(&e),
                };
                progress(&row);
                out.rows.push(row);
            }
        }
    }
    out.reference = reference;
    Ok(out)
}

fn mc_stream(model: &SlabModel, exec: &Executor, f: Fidelity, n: usize, cfg: &ExperimentConfig) -> Result<EstimatorReport> {
    let stream = SampleStream::new(cfg.master_seed, StreamId::Mc).with_bounds(cfg.low, cfg.high)?;
    mc_estimate_on(model, exec, f, n, &stream)
}

fn profile_of(row: &ResultRow, grid: &GridSpec, n: usize, phi: DVector<f64>) -> Profile {
    Profile {
        study: row.study.clone(),
        grid: *grid,
        r: row.r,
        s: row.s,
        n_samples: n,
        seed: row.seed,
        phi,
    }
}

fn cv_study(cfg: &ExperimentConfig, exec: &Executor, progress: &mut dyn FnMut(&ResultRow)) -> Result<StudyOutput> {
    let reference = obtain_reference(cfg, exec)?;
    let bias_of = |report: &EstimatorReport, grid: &GridSpec| -> Result<Option<f64>> {
        match &reference {
            Some(refsol) => Ok(Some(compute_metrics(report, grid, refsol)?.0)),
            None => Ok(None),
        }
    };
    let mut out = StudyOutput::default();
    for &m in &cfg.m {
        let grid = cfg.grid(m)?;
        let model = SlabModel::new(grid, cfg.physics())?;
        for &r in &cfg.r {
            let rank = model.effective_rank(r);
            for &n_mc in &cfg.n_samples {
                // plain fine-rank MC baseline: the row with an empty `s`
                let mut base = ResultRow::blank(StudyKind::CvStudy, &grid, cfg.master_seed);
                base.r = Some(rank);
                base.n_samples = Some(n_mc);
                let cell = repeat_min(cfg.replications, || mc_stream(&model, exec, Fidelity::Rank(rank), n_mc, cfg))
                    .and_then(|(rep, t)| Ok((bias_of(&rep, &grid)?, rep, t)));
                let base = match cell {
                    Ok((bias, report, time)) => {
                        base.bias = bias;
                        base.mc_error = Some(report.mc_error);
                        base.var_r = Some(report.variance_field.sum() * grid.dx());
                        base.wall_time_s = Some(secs(time));
                        out.profiles.push(profile_of(&base, &grid, n_mc, report.mean));
                        base
                    }
                    Err(e) => base.failed(&e),
                };
                progress(&base);
                out.rows.push(base);

                for &s in cfg.s.iter().filter(|&&s| s < r) {
                    let coarse = model.effective_rank(s);
                    let mut row = ResultRow::blank(StudyKind::CvStudy, &grid, cfg.master_seed);
                    row.r = Some(rank);
                    row.s = Some(coarse);
                    row.n_samples = Some(n_mc);
                    let cell = Fidelities::new(Fidelity::Rank(rank), Fidelity::Rank(coarse)).and_then(|levels| {
                        let spec = PipelineSpec {
                            mode: cfg.cv_mode,
                            levels,
                            n_mc,
                            master_seed: cfg.master_seed,
                            pilot_n: cfg.pilot_n,
                            warmup_n: cfg.warmup_n,
                            max_diff: cfg.max_diff,
                            epsilon: None,
                            low: cfg.low,
                            high: cfg.high,
                        };
                        let (rep, t) = repeat_min(cfg.replications, || cv_pipeline(&model, exec, &spec))?;
                        Ok((bias_of(&rep, &grid)?, rep, t))
                    });
                    let row = match cell {
                        Ok((bias, report, time)) => {
                            row.n_diff = report.n_diff;
                            row.alpha = report.alpha;
                            row.bias = bias;
                            row.mc_error = Some(report.mc_error);
                            if let Some(st) = report.pair_stats {
                                row.var_r = Some(st.var_r);
                                row.var_s = Some(st.var_s);
                                row.corr_rs = Some(st.corr_rs);
                            }
                            row.wall_time_s = Some(secs(time));
                            out.profiles.push(profile_of(&row, &grid, n_mc, report.mean));
                            row
                        }
                        Err(e) => row.failed(&e),
                    };
                    progress(&row);
                    out.rows.push(row);
                }
            }
        }
    }
    out.reference = reference;
    Ok(out)
}

fn alpha_table(cfg: &ExperimentConfig, exec: &Executor, progress: &mut dyn FnMut(&ResultRow)) -> Result<StudyOutput> {
    let mut out = StudyOutput::default();
    for &m in &cfg.m {
        let grid = cfg.grid(m)?;
        let model = SlabModel::new(grid, cfg.physics())?;
        let mut levels: Vec<Fidelity> = cfg
            .r
            .iter()
            .chain(&cfg.s)
            .map(|&k| Fidelity::Rank(model.effective_rank(k)))
            .collect();
        levels.sort();
        levels.dedup();
        let stream = SampleStream::new(cfg.master_seed, StreamId::Pilot).with_bounds(cfg.low, cfg.high)?;
        let start = std::time::Instant::now();
        let samples = collect_levels(&model, exec, &levels, &stream, cfg.pilot_n);
        let elapsed = secs(start.elapsed());
        for &s in &cfg.s {
            for &r in &cfg.r {
                let (rank, coarse) = (model.effective_rank(r), model.effective_rank(s));
                let mut row = ResultRow::blank(StudyKind::AlphaTable, &grid, cfg.master_seed);
                row.r = Some(rank);
                row.s = Some(coarse);
                row.n_samples = Some(cfg.pilot_n);
                let cell = match &samples {
                    Ok(samples) => alpha_cell(samples, rank, coarse, grid.dx()),
                    Err(e) => Err(Error::invalid(e.to_string())),
                };
                let row = match cell {
                    Ok((alpha, st)) => {
                        row.alpha = Some(alpha);
                        row.var_r = Some(st.var_r);
                        row.var_s = Some(st.var_s);
                        row.corr_rs = Some(st.corr_rs);
                        row.wall_time_s = Some(elapsed);
                        row
                    }
                    Err(e) => row.failed(&e),
                };
                progress(&row);
                out.rows.push(row);
            }
        }
    }
    Ok(out)
}

fn alpha_cell(
    samples: &BTreeMap<Fidelity, Vec<DVector<f64>>>,
    r: usize,
    s: usize,
    dx: f64,
) -> Result<(f64, crate::statistics::PairStatistics)> {
    if s >= r {
        return Err(Error::invalid(format!("coarse rank {s} is not below fine rank {r}")));
    }
    let st = sample_statistics(&samples[&Fidelity::Rank(r)], &samples[&Fidelity::Rank(s)], dx)?;
    Ok((optimal_alpha(st.cov_rs, st.var_s)?, st))
}

/// Writes `bytes` to a temporary sibling and renames it into place, so a
/// failed run never leaves a truncated file behind.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = tmp_path(path);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Results CSV with the fixed 15-column header.
pub fn write_results(rows: &[ResultRow], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for row in rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    write_atomic(path, &bytes)
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::invalid(format!("{}: unexpected header {header:?}", path.display())));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Long-format table `study,m,n,r,s,N,seed,x,phi` of mean profiles.
pub fn write_profiles(profiles: &[Profile], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["study", "m", "n", "r", "s", "N", "seed", "x", "phi"])?;
    let opt = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
    for p in profiles {
        for (i, phi) in p.phi.iter().enumerate() {
            w.write_record([
                p.study.clone(),
                p.grid.m.to_string(),
                p.grid.n.to_string(),
                opt(p.r),
                opt(p.s),
                p.n_samples.to_string(),
                p.seed.to_string(),
                p.grid.x(i).to_string(),
                phi.to_string(),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    write_atomic(path, &bytes)
}

/// Results, profiles and the config echo at the configured paths.
pub fn write_outputs(cfg: &ExperimentConfig, out: &StudyOutput) -> Result<()> {
    write_results(&out.rows, &cfg.output)?;
    write_profiles(&out.profiles, &cfg.profiles_path())?;
    let mut echo = cfg.to_toml_string()?;
    if let Some(r) = &out.reference {
        echo.push_str(&format!(
            "\n# reference: m = {}, n = {}, N = {}, seed = {}, mc_error = {:e}\n",
            r.grid.m, r.grid.n, r.n_samples, r.master_seed, r.mc_error
        ));
    }
    write_atomic(&cfg.echo_path(), echo.as_bytes())
}
