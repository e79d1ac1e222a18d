use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{CvMode, PipelineSpec};
use crate::grid::GridSpec;
use crate::model::Physics;
use crate::sampling::SampleStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyKind {
    Reference,
    McStudy,
    CvStudy,
    AlphaTable,
}

impl StudyKind {
    pub fn name(self) -> &'static str {
        match self {
            StudyKind::Reference => "reference",
            StudyKind::McStudy => "mc-study",
            StudyKind::CvStudy => "cv-study",
            StudyKind::AlphaTable => "alpha-table",
        }
    }
}

impl fmt::Display for StudyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for StudyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reference" => Ok(StudyKind::Reference),
            "mc-study" => Ok(StudyKind::McStudy),
            "cv-study" => Ok(StudyKind::CvStudy),
            "alpha-table" => Ok(StudyKind::AlphaTable),
            other => Err(Error::Config(format!("unknown study `{other}`"))),
        }
    }
}

/// Accepts `key = 3` as well as `key = [3, 5]`.
fn one_or_many<'de, D, T>(d: D) -> std::result::Result<Vec<T>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany<T> {
        One(T),
        Many(Vec<T>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(x) => vec![x],
        OneOrMany::Many(v) => v,
    })
}

/// A study description, read from TOML. Every field is echoed next to the
/// results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub study: StudyKind,

    #[serde(deserialize_with = "one_or_many")]
    pub m: Vec<usize>,
    pub n: usize,
    #[serde(default = "default_a")]
    pub a: f64,
    #[serde(default = "default_b")]
    pub b: f64,
    #[serde(default = "one")]
    pub cfl: f64,
    #[serde(default = "one")]
    pub t_end: f64,

    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_floor")]
    pub floor: f64,
    #[serde(default = "one")]
    pub sigma_s: f64,

    #[serde(default, deserialize_with = "one_or_many")]
    pub r: Vec<usize>,
    #[serde(default, deserialize_with = "one_or_many")]
    pub s: Vec<usize>,
    #[serde(rename = "N", default, deserialize_with = "one_or_many")]
    pub n_samples: Vec<usize>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(rename = "pilot_N", default = "default_pilot")]
    pub pilot_n: usize,
    #[serde(rename = "warmup_N", default = "default_warmup")]
    pub warmup_n: usize,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_cv_mode")]
    pub cv_mode: CvMode,
    #[serde(default = "default_max_diff")]
    pub max_diff: usize,
    #[serde(default = "default_low")]
    pub low: f64,
    #[serde(default = "default_high")]
    pub high: f64,

    /// Reference solution file: loaded when present, otherwise computed from
    /// the `ref_*` keys and written there. Without it no bias is reported.
    #[serde(default)]
    pub reference: Option<PathBuf>,
    #[serde(default = "default_ref_m")]
    pub ref_m: usize,
    #[serde(default = "default_ref_n")]
    pub ref_n: usize,
    #[serde(rename = "ref_N", default = "default_ref_samples")]
    pub ref_samples: usize,

    pub output: PathBuf,
    #[serde(default)]
    pub workers: Option<usize>,
}

fn default_a() -> f64 {
    GridSpec::DEFAULT_A
}
fn default_b() -> f64 {
    GridSpec::DEFAULT_B
}
fn one() -> f64 {
    1.0
}
fn default_sigma() -> f64 {
    Physics::default().sigma
}
fn default_floor() -> f64 {
    Physics::default().floor
}
fn default_pilot() -> usize {
    PipelineSpec::DEFAULT_PILOT_N
}
fn default_warmup() -> usize {
    PipelineSpec::DEFAULT_WARMUP_N
}
fn default_replications() -> usize {
    1
}
fn default_cv_mode() -> CvMode {
    CvMode::Warmup
}
fn default_max_diff() -> usize {
    1_000_000
}
fn default_low() -> f64 {
    SampleStream::DEFAULT_LOW
}
fn default_high() -> f64 {
    SampleStream::DEFAULT_HIGH
}
fn default_ref_m() -> usize {
    401
}
fn default_ref_n() -> usize {
    32
}
fn default_ref_samples() -> usize {
    10_000
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            e => e,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let need = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(what.to_string()))
            }
        };
        need(!self.m.is_empty(), "`m` must list at least one grid size")?;
        for &m in &self.m {
            self.grid(m)?;
        }
        self.physics_check()?;
        need(self.low < self.high, "`low` must be below `high`")?;
        need(self.replications >= 1, "`replications` must be >= 1")?;
        need(self.workers != Some(0), "`workers` must be >= 1")?;
        match self.study {
            StudyKind::Reference => {}
            StudyKind::McStudy => {
                need(!self.r.is_empty(), "mc-study needs ranks `r`")?;
                need(!self.n_samples.is_empty(), "mc-study needs sample counts `N`")?;
            }
            StudyKind::CvStudy => {
                need(!self.r.is_empty(), "cv-study needs fine ranks `r`")?;
                need(!self.s.is_empty(), "cv-study needs coarse ranks `s`")?;
                need(!self.n_samples.is_empty(), "cv-study needs sample counts `N`")?;
            }
            StudyKind::AlphaTable => {
                need(!self.r.is_empty(), "alpha-table needs fine ranks `r`")?;
                need(!self.s.is_empty(), "alpha-table needs coarse ranks `s`")?;
                need(self.pilot_n >= 2, "`pilot_N` must be >= 2")?;
            }
        }
        need(self.r.iter().chain(&self.s).all(|&r| r >= 1), "ranks must be >= 1")?;
        need(self.n_samples.iter().all(|&n| n >= 2), "sample counts must be >= 2")?;
        Ok(())
    }

    fn physics_check(&self) -> Result<()> {
        let p = self.physics();
        if !(p.sigma > 0.0) || !(p.floor >= 0.0) || !(p.sigma_s >= 0.0) {
            return Err(Error::Config(format!(
                "bad physics sigma = {}, floor = {}, sigma_s = {}",
                p.sigma, p.floor, p.sigma_s
            )));
        }
        Ok(())
    }

    pub fn grid(&self, m: usize) -> Result<GridSpec> {
        GridSpec::with_domain(m, self.n, self.a, self.b, self.cfl, self.t_end)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn reference_grid(&self) -> Result<GridSpec> {
        GridSpec::with_domain(self.ref_m, self.ref_n, self.a, self.b, self.cfl, self.t_end)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn physics(&self) -> Physics {
        Physics {
            sigma: self.sigma,
            floor: self.floor,
            sigma_s: self.sigma_s,
        }
    }

    /// Path of the config echo written beside the results.
    pub fn echo_path(&self) -> PathBuf {
        sidecar(&self.output, "config.toml")
    }

    /// Path of the mean-profile table written beside the results.
    pub fn profiles_path(&self) -> PathBuf {
        sidecar(&self.output, "profiles.csv")
    }
}

pub(crate) fn sidecar(output: &Path, suffix: &str) -> PathBuf {
    let stem = output.file_stem().map_or_else(|| "results".into(), |s| s.to_string_lossy().into_owned());
    output.with_file_name(format!("{stem}.{suffix}"))
}
