//! Counter-based parameter draws and the sample-evaluation executor.
//!
//! Every draw is a pure function of `(master_seed, stream, index)`: a ChaCha8
//! generator keyed by the seed, positioned on its own stream and at a word
//! offset fixed by the index. Draws can therefore be evaluated in any order
//! and on any number of workers with identical results.

use std::ops::Range;
#[cfg(feature = "parallel")]
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Disjoint sub-streams of one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamId {
    /// Plain Monte Carlo samples.
    Mc,
    /// Correlated fine/coarse pairs for control-variate differences
    /// (warm-up pairs are the leading indices of this stream).
    Pairs,
    /// Coarse-only samples for the control-variate mean term.
    Coarse,
    /// Pilot pairs used to estimate α* ahead of a run.
    Pilot,
    /// Full-rank reference samples.
    Reference,
}

impl StreamId {
    fn id(self) -> u64 {
        match self {
            StreamId::Mc => 1,
            StreamId::Pairs => 2,
            StreamId::Coarse => 3,
            StreamId::Pilot => 4,
            StreamId::Reference => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertainParameter {
    pub nu: f64,
    pub low: f64,
    pub high: f64,
    pub sample_index: u64,
    pub master_seed: u64,
}

/// Uniform draws on `[low, high)` addressed by index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleStream {
    pub master_seed: u64,
    pub stream: StreamId,
    pub low: f64,
    pub high: f64,
}

impl SampleStream {
    pub const DEFAULT_LOW: f64 = 0.5;
    pub const DEFAULT_HIGH: f64 = 1.5;

    pub fn new(master_seed: u64, stream: StreamId) -> Self {
        SampleStream {
            master_seed,
            stream,
            low: Self::DEFAULT_LOW,
            high: Self::DEFAULT_HIGH,
        }
    }

    pub fn with_bounds(mut self, low: f64, high: f64) -> Result<Self> {
        if !(low < high) || !low.is_finite() || !high.is_finite() {
            return Err(Error::invalid(format!("need low < high, got [{low}, {high}]")));
        }
        self.low = low;
        self.high = high;
        Ok(self)
    }

    pub fn draw(&self, index: u64) -> UncertainParameter {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream.id());
        // one u64 (two 32-bit words) per index
        rng.set_word_pos(u128::from(index) * 2);
        let u: f64 = rng.random();
        UncertainParameter {
            nu: self.low + (self.high - self.low) * u,
            low: self.low,
            high: self.high,
            sample_index: index,
            master_seed: self.master_seed,
        }
    }
}

/// Draw `sample_index` of the plain Monte Carlo stream of `master_seed`.
pub fn draw_parameter(master_seed: u64, sample_index: u64, low: f64, high: f64) -> Result<UncertainParameter> {
    Ok(SampleStream::new(master_seed, StreamId::Mc)
        .with_bounds(low, high)?
        .draw(sample_index))
}

/// Runs independent per-index tasks on a fixed-width worker pool, or inline
/// when built without the `parallel` feature or constructed sequential.
#[derive(Clone)]
pub struct Executor {
    workers: usize,
    #[cfg(feature = "parallel")]
    pool: Option<Arc<rayon::ThreadPool>>,
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor").field("workers", &self.workers).finish()
    }
}

impl Default for Executor {
    fn default() -> Self {
        Executor::available()
    }
}

impl Executor {
    pub fn sequential() -> Self {
        Executor {
            workers: 1,
            #[cfg(feature = "parallel")]
            pool: None,
        }
    }

    /// Pool of `workers` threads; `workers <= 1` runs inline.
    pub fn new(workers: usize) -> Result<Self> {
        if workers <= 1 || cfg!(not(feature = "parallel")) {
            return Ok(Executor::sequential());
        }
        #[cfg(feature = "parallel")]
        {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| Error::invalid(format!("cannot start {workers} workers: {e}")))?;
            Ok(Executor {
                workers,
                pool: Some(Arc::new(pool)),
            })
        }
        #[cfg(not(feature = "parallel"))]
        unreachable!()
    }

    /// One worker per available core.
    pub fn available() -> Self {
        let n = std::thread::available_parallelism().map_or(1, |n| n.get());
        Executor::new(n).unwrap_or_else(|_| Executor::sequential())
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// Evaluates `f` over `range`, returning results in index order. The
    /// first failing index (lowest index among failures observed) is
    /// reported.
    pub fn map<T, F>(&self, range: Range<u64>, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(u64) -> Result<T> + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| range.into_par_iter().map(&f).collect());
        }
        range.map(f).collect()
    }
}
