//! Randomness for one coupled multilevel sample.
//!
//! A level-`l` sample draws `2^l` Brownian increments per dimension and `2^l`
//! Rademacher signs. The coarse grid reuses the same path through
//! [`FineIncrements::coarsen`] and [`RademacherSeq::coarse`]; the antithetic
//! fine path swaps each successive pair of increments and keeps the signs.
//!
//! Every sample owns a [`RngStream`] keyed by `(seed, experiment, level,
//! index)`, so results do not depend on how samples are spread over workers.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Uniform grid on `[0, T]` with `2^l` steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelGrid {
    pub level: u32,
    pub horizon: f64,
}

impl LevelGrid {
    pub fn new(level: u32, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
        }
        if level > 40 {
            return Err(Error::InvalidLevel { level, reason: "more than 2^40 steps" });
        }
        Ok(LevelGrid { level, horizon })
    }

    pub fn steps(&self) -> usize {
        1usize << self.level
    }

    /// `h_l = T / 2^l`, exact in binary floating point.
    pub fn step(&self) -> f64 {
        self.horizon / self.steps() as f64
    }

    /// Grid of level `l − 1`.
    pub fn coarse(&self) -> Result<LevelGrid> {
        if self.level == 0 {
            return Err(Error::InvalidLevel { level: 0, reason: "level 0 has no coarse grid" });
        }
        Ok(LevelGrid { level: self.level - 1, horizon: self.horizon })
    }
}

/// Brownian increments, `d` per step, stored step-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FineIncrements {
    d: usize,
    data: Vec<f64>,
}

impl FineIncrements {
    /// `data[k * d + j]` is the increment of `W^j` over step `k`.
    pub fn from_step_major(d: usize, data: Vec<f64>) -> Result<Self> {
        if d == 0 || !data.len().is_multiple_of(d) {
            return Err(Error::InvalidArgument(format!(
                "{} increments do not split into steps of dimension {d}",
                data.len()
            )));
        }
        Ok(FineIncrements { d, data })
    }

    /// One inner vector per Brownian dimension.
    pub fn from_per_dimension(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        let steps = rows.first().map_or(0, Vec::len);
        if d == 0 || rows.iter().any(|r| r.len() != steps) {
            return Err(Error::InvalidArgument("ragged increment rows".into()));
        }
        let mut data = Vec::with_capacity(d * steps);
        for k in 0..steps {
            data.extend(rows.iter().map(|r| r[k]));
        }
        Ok(FineIncrements { d, data })
    }

    pub fn zeros(d: usize, steps: usize) -> Self {
        FineIncrements { d, data: vec![0.0; d * steps] }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn steps(&self) -> usize {
        self.data.len() / self.d
    }

    #[inline]
    pub fn step(&self, k: usize) -> &[f64] {
        &self.data[k * self.d..(k + 1) * self.d]
    }

    /// Increments of `W^j` over all steps.
    pub fn dimension(&self, j: usize) -> Vec<f64> {
        self.data.iter().skip(j).step_by(self.d).copied().collect()
    }

    fn check_even(&self) -> Result<()> {
        let steps = self.steps();
        if steps % 2 == 1 || steps == 0 {
            Err(Error::OddStepCount(steps))
        } else {
            Ok(())
        }
    }

    /// Increments on the grid with half as many steps: entry `k` is
    /// `fine[2k] + fine[2k + 1]`.
    pub fn coarsen(&self) -> Result<FineIncrements> {
        self.check_even()?;
        let d = self.d;
        let data = self.data.chunks_exact(2 * d).flat_map(|pair| (0..d).map(move |j| pair[j] + pair[d + j])).collect();
        Ok(FineIncrements { d, data })
    }

    /// Exchanges steps `2k` and `2k + 1`.
    pub fn antithetic_swap(&self) -> Result<FineIncrements> {
        self.check_even()?;
        let d = self.d;
        let mut data = Vec::with_capacity(self.data.len());
        for pair in self.data.chunks_exact(2 * d) {
            data.extend_from_slice(&pair[d..]);
            data.extend_from_slice(&pair[..d]);
        }
        Ok(FineIncrements { d, data })
    }
}

/// Rademacher signs driving the Ninomiya-Victoir composition order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RademacherSeq(Vec<i8>);

impl RademacherSeq {
    pub fn new(signs: Vec<i8>) -> Result<Self> {
        if signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::InvalidArgument("Rademacher entries must be ±1".into()));
        }
        Ok(RademacherSeq(signs))
    }

    pub fn ones(len: usize) -> Self {
        RademacherSeq(vec![1; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn get(&self, k: usize) -> i8 {
        self.0[k]
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.0
    }

    pub fn negated(&self) -> RademacherSeq {
        RademacherSeq(self.0.iter().map(|s| -s).collect())
    }

    /// Signs for the coarse grid: `(η₁, η₃, …, η_{2^l − 1})`, i.e. every
    /// other entry starting with the first.
    pub fn coarse(&self) -> Result<RademacherSeq> {
        if self.0.len() % 2 == 1 || self.0.is_empty() {
            return Err(Error::OddStepCount(self.0.len()));
        }
        Ok(RademacherSeq(self.0.iter().step_by(2).copied().collect()))
    }
}

/// Base seed plus the switch for the all-zero noise used in degenerate tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseSource {
    pub seed: u64,
    /// Zero increments and `η = +1` everywhere.
    pub degenerate: bool,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        NoiseSource { seed, degenerate: false }
    }

    pub fn degenerate() -> Self {
        NoiseSource { seed: 0, degenerate: true }
    }

    pub fn stream(&self, experiment: u64, level: u32, index: u64) -> RngStream {
        RngStream { source: *self, experiment, level, index }
    }
}

/// Coordinates of one sample's random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    pub source: NoiseSource,
    pub experiment: u64,
    pub level: u32,
    pub index: u64,
}

impl RngStream {
    pub fn rng(&self) -> SampleRng {
        if self.source.degenerate {
            return SampleRng::Zero;
        }
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.source.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.experiment.to_le_bytes());
        key[16..24].copy_from_slice(&u64::from(self.level).to_le_bytes());
        key[24..].copy_from_slice(&self.index.to_le_bytes());
        SampleRng::Chacha(Box::new(ChaCha8Rng::from_seed(key)))
    }
}

/// Generator handed to a single sample.
pub enum SampleRng {
    Chacha(Box<ChaCha8Rng>),
    Zero,
}

impl SampleRng {
    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        match self {
            SampleRng::Chacha(r) => r.sample(StandardNormal),
            SampleRng::Zero => 0.0,
        }
    }

    #[inline]
    pub fn sign(&mut self) -> i8 {
        match self {
            SampleRng::Chacha(r) => {
                if r.next_u32() & 1 == 1 {
                    1
                } else {
                    -1
                }
            }
            SampleRng::Zero => 1,
        }
    }

    pub fn uniform(&mut self) -> f64 {
        match self {
            SampleRng::Chacha(r) => r.random::<f64>(),
            SampleRng::Zero => 0.5,
        }
    }
}

/// Fresh `N(0, h_l)` increments and Rademacher signs for a level-`l` grid.
pub fn sample_level_path(stream: &RngStream, grid: &LevelGrid, d: usize) -> (FineIncrements, RademacherSeq) {
    let mut rng = stream.rng();
    let steps = grid.steps();
    let scale = grid.step().sqrt();
    let data = (0..steps * d).map(|_| scale * rng.standard_normal()).collect();
    let signs = (0..steps).map(|_| rng.sign()).collect();
    (FineIncrements { d, data }, RademacherSeq(signs))
}
