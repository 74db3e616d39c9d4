//! Parallel sample loops with worker-count independent results.
//!
//! Samples are grouped in fixed chunks of consecutive indices. Each chunk is
//! folded sequentially and the chunk results are merged in index order, so
//! the floating point reduction is identical for any number of workers.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::{Payoff, SdeModel};
use crate::paths::{sample_level_path, LevelGrid, NoiseSource, RngStream};
use crate::schemes::{level_sample, Coupling, LevelSample};

const CHUNK: u64 = 1024;

/// Thread pool handle; `0` workers means rayon's global pool.
pub struct Workers {
    pool: Option<rayon::ThreadPool>,
}

impl Workers {
    pub fn new(count: usize) -> Result<Self> {
        if count == 0 {
            return Ok(Workers { pool: None });
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(count)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot build thread pool: {e}")))?;
        Ok(Workers { pool: Some(pool) })
    }

    pub fn global() -> Self {
        Workers { pool: None }
    }

    fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        match &self.pool {
            Some(p) => p.install(f),
            None => f(),
        }
    }
}

/// Folds `fold(acc, index)` over `0..n` and merges chunk accumulators in order.
pub fn reduce_indexed<A, F, G>(workers: &Workers, n: u64, fold: F, merge: G) -> A
where
    A: Default + Send,
    F: Fn(&mut A, u64) + Sync,
    G: Fn(&mut A, A),
{
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<A> = workers.install(|| {
        (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut acc = A::default();
                for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                    fold(&mut acc, i);
                }
                acc
            })
            .collect()
    });
    let mut total = A::default();
    for p in parts {
        merge(&mut total, p);
    }
    total
}

/// Running mean and centred sum of squares of the successful samples, plus
/// abort and cost counters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    pub m2: f64,
    pub aborted: u64,
    pub cost_units: f64,
    pub error: Option<Error>,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: Moments) {
        if self.error.is_none() {
            self.error = other.error;
        }
        self.aborted += other.aborted;
        self.cost_units += other.cost_units;
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            self.count = other.count;
            self.mean = other.mean;
            self.m2 = other.m2;
            return;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / n;
        self.m2 += other.m2 + delta * delta * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    /// Unbiased sample variance; zero with fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).max(0.0)
        }
    }

    /// Empirical `E[X²]`.
    pub fn second_moment(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.mean * self.mean + self.m2 / self.count as f64
        }
    }

    pub fn sem(&self) -> f64 {
        if self.count == 0 {
            return f64::NAN;
        }
        (self.variance() / self.count as f64).sqrt()
    }

    /// Standard error of [`Moments::second_moment`] needs fourth moments;
    /// callers that want it push `x²` into a separate accumulator.
    pub fn into_result(self) -> Result<Moments> {
        match self.error {
            Some(e) => Err(e),
            None => Ok(self),
        }
    }
}

/// Model, payoff and horizon shared by every sample of an experiment.
#[derive(Clone, Copy)]
pub struct Problem<'a> {
    pub model: &'a dyn SdeModel,
    pub payoff: Payoff,
    pub horizon: f64,
}

impl<'a> Problem<'a> {
    pub fn new(model: &'a dyn SdeModel, payoff: Payoff, horizon: f64) -> Self {
        Problem { model, payoff, horizon }
    }

    /// Draws the path for `stream` and evaluates `coupling` on it.
    pub fn sample(&self, coupling: Coupling, level: u32, stream: &RngStream) -> Result<LevelSample> {
        let grid = LevelGrid::new(level, self.horizon)?;
        let (inc, eta) = sample_level_path(stream, &grid, self.model.noise_dim());
        level_sample(coupling, self.model, &self.payoff, &grid, &inc, &eta)
    }
}

/// Which coupling a multilevel estimator uses at each level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LevelScheme {
    /// GS at every level.
    Gs,
    /// NV at every level, with the chosen level-0 variant.
    Nv { level0_averaged: bool },
    /// GS below `last_level`, GS-NV at `last_level`.
    GsNv { last_level: u32 },
    /// The same coupling at every level asked for.
    Fixed(Coupling),
}

impl LevelScheme {
    pub fn coupling(&self, level: u32) -> Coupling {
        match *self {
            LevelScheme::Gs => {
                if level == 0 {
                    Coupling::Level0Gs
                } else {
                    Coupling::Gs
                }
            }
            LevelScheme::Nv { level0_averaged } => match (level, level0_averaged) {
                (0, true) => Coupling::Level0NvAveraged,
                (0, false) => Coupling::Level0NvSingle,
                _ => Coupling::Nv,
            },
            LevelScheme::GsNv { last_level } => {
                if level == 0 {
                    Coupling::Level0Gs
                } else if level == last_level {
                    Coupling::GsNv
                } else {
                    Coupling::Gs
                }
            }
            LevelScheme::Fixed(c) => c,
        }
    }
}

/// Anything producing one real-valued sample per `(level, stream)`.
pub trait LevelSampler: Sync {
    /// Returns the sample value and its cost in scheme steps.
    fn sample(&self, level: u32, stream: &RngStream) -> Result<(f64, f64)>;
}

impl<F> LevelSampler for F
where
    F: Fn(u32, &RngStream) -> Result<f64> + Sync,
{
    fn sample(&self, level: u32, stream: &RngStream) -> Result<(f64, f64)> {
        self(level, stream).map(|v| (v, 0.0))
    }
}

/// Level samples of a [`Problem`] under a [`LevelScheme`].
pub struct CouplingSampler<'a> {
    pub problem: Problem<'a>,
    pub scheme: LevelScheme,
}

impl LevelSampler for CouplingSampler<'_> {
    fn sample(&self, level: u32, stream: &RngStream) -> Result<(f64, f64)> {
        let z = self.problem.sample(self.scheme.coupling(level), level, stream)?;
        Ok((z.value, z.cost_units()))
    }
}

/// `m` samples at `level` on streams `(experiment, level, 0..m)`.
pub fn sample_moments<S: LevelSampler + ?Sized>(
    workers: &Workers,
    sampler: &S,
    noise: NoiseSource,
    experiment: u64,
    level: u32,
    m: u64,
) -> Moments {
    reduce_indexed(
        workers,
        m,
        |acc: &mut Moments, i| {
            if acc.error.is_some() {
                return;
            }
            match sampler.sample(level, &noise.stream(experiment, level, i)) {
                Ok((v, cost)) => {
                    acc.push(v);
                    acc.cost_units += cost;
                }
                Err(e) if e.is_sample_abort() => acc.aborted += 1,
                Err(e) => acc.error = Some(e),
            }
        },
        Moments::merge,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_merge_matches_single_pass() {
        let xs: Vec<f64> = (0..5000).map(|i| ((i * 37) % 101) as f64 * 0.1 - 3.0).collect();
        let mut whole = Moments::default();
        xs.iter().for_each(|&x| whole.push(x));
        let mut merged = Moments::default();
        for part in xs.chunks(333) {
            let mut m = Moments::default();
            part.iter().for_each(|&x| m.push(x));
            merged.merge(m);
        }
        assert!((whole.mean - merged.mean).abs() < 1e-12);
        assert!((whole.variance() - merged.variance()).abs() < 1e-10);
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((whole.variance() - var).abs() < 1e-10);
        let m2 = xs.iter().map(|x| x * x).sum::<f64>() / n;
        assert!((whole.second_moment() - m2).abs() < 1e-10);
    }

    #[test]
    fn reduction_is_independent_of_worker_count() {
        let sampler = |_l: u32, s: &RngStream| Ok(s.rng().standard_normal());
        let noise = NoiseSource::new(99);
        let one = sample_moments(&Workers::new(1).unwrap(), &sampler, noise, 0, 0, 10_000);
        let four = sample_moments(&Workers::new(4).unwrap(), &sampler, noise, 0, 0, 10_000);
        assert_eq!(one, four);
    }

    #[test]
    fn aborts_are_counted_and_other_errors_propagate() {
        let aborting = |_l: u32, s: &RngStream| {
            if s.index.is_multiple_of(10) {
                Err(Error::NegativeSqrtArgument { value: -1.0 })
            } else {
                Ok(1.0)
            }
        };
        let m = sample_moments(&Workers::global(), &aborting, NoiseSource::new(1), 0, 0, 100);
        assert_eq!((m.count, m.aborted), (90, 10));
        let failing = |_l: u32, _s: &RngStream| -> Result<f64> { Err(Error::ZeroWeakConstant) };
        let m = sample_moments(&Workers::global(), &failing, NoiseSource::new(1), 0, 0, 100);
        assert_eq!(m.into_result(), Err(Error::ZeroWeakConstant));
    }

    #[test]
    fn level_scheme_mapping() {
        assert_eq!(LevelScheme::Gs.coupling(0), Coupling::Level0Gs);
        assert_eq!(LevelScheme::Gs.coupling(3), Coupling::Gs);
        assert_eq!(LevelScheme::Nv { level0_averaged: false }.coupling(0), Coupling::Level0NvSingle);
        assert_eq!(LevelScheme::Nv { level0_averaged: true }.coupling(0), Coupling::Level0NvAveraged);
        let s = LevelScheme::GsNv { last_level: 3 };
        assert_eq!(
            (0..4).map(|l| s.coupling(l)).collect::<Vec<_>>(),
            vec![Coupling::Level0Gs, Coupling::Gs, Coupling::Gs, Coupling::GsNv]
        );
    }
}
