//! Ninomiya-Victoir and Giles-Szpruch one-step maps, full paths, and the
//! coupled level samples `Z^l`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::models::{Payoff, SdeModel, StateVector, MAX_STATE_DIM};
use crate::paths::{FineIncrements, LevelGrid, RademacherSeq};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    /// Ninomiya-Victoir splitting over exact flows.
    Nv,
    /// Milstein without Lévy areas.
    Gs,
}

/// How one level sample couples fine and coarse paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Coupling {
    /// `½(f(X̃^GS) + f(X^GS)) − f(X^GS,coarse)`.
    Gs,
    /// Four fine NV paths (±η, plain and antithetic) against two coarse ones.
    Nv,
    /// Four fine NV paths against one coarse GS path.
    GsNv,
    /// `f(X^GS,1)`.
    Level0Gs,
    /// `f(X^NV,1,η)`.
    Level0NvSingle,
    /// `½(f(X^NV,1,η) + f(X^NV,1,−η))`.
    Level0NvAveraged,
}

impl Coupling {
    /// Number of fine and coarse path evaluations per sample.
    pub fn evaluations(&self) -> (u32, u32) {
        match self {
            Coupling::Gs => (2, 1),
            Coupling::Nv => (4, 2),
            Coupling::GsNv => (4, 1),
            Coupling::Level0Gs | Coupling::Level0NvSingle => (1, 0),
            Coupling::Level0NvAveraged => (2, 0),
        }
    }

    pub fn is_level0(&self) -> bool {
        matches!(self, Coupling::Level0Gs | Coupling::Level0NvSingle | Coupling::Level0NvAveraged)
    }

    pub fn label(&self) -> &'static str {
        match self {
            Coupling::Gs => "gs",
            Coupling::Nv => "nv",
            Coupling::GsNv => "gs-nv",
            Coupling::Level0Gs => "level0-gs",
            Coupling::Level0NvSingle => "level0-nv-single",
            Coupling::Level0NvAveraged => "level0-nv-averaged",
        }
    }
}

impl fmt::Display for Coupling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Coupling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gs" => Ok(Coupling::Gs),
            "nv" => Ok(Coupling::Nv),
            "gs-nv" => Ok(Coupling::GsNv),
            "level0-gs" => Ok(Coupling::Level0Gs),
            "level0-nv-single" => Ok(Coupling::Level0NvSingle),
            "level0-nv-averaged" => Ok(Coupling::Level0NvAveraged),
            other => Err(Error::InvalidArgument(format!("unknown coupling '{other}'"))),
        }
    }
}

/// One realization of `Z^l`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelSample {
    pub value: f64,
    pub level: u32,
    pub coupling: Coupling,
    pub fine_evals: u32,
    pub coarse_evals: u32,
}

impl LevelSample {
    fn new(value: f64, level: u32, coupling: Coupling) -> Self {
        let (fine_evals, coarse_evals) = coupling.evaluations();
        LevelSample { value, level, coupling, fine_evals, coarse_evals }
    }

    /// Scheme steps spent: `fine·2^l + coarse·2^{l−1}`.
    pub fn cost_units(&self) -> f64 {
        let fine = (1u64 << self.level) as f64;
        f64::from(self.fine_evals) * fine + f64::from(self.coarse_evals) * fine / 2.0
    }
}

/// One Ninomiya-Victoir step, in place. `η = +1` applies the diffusion
/// flows in the order `1, …, d`, `η = −1` in the order `d, …, 1`, both
/// between two half steps of the drift flow.
#[inline]
pub fn nv_step_in_place<M: SdeModel + ?Sized>(model: &M, x: &mut [f64], h: f64, dw: &[f64], eta: i8) -> Result<()> {
    let half = 0.5 * h;
    model.drift_flow(x, half)?;
    if eta > 0 {
        for (j, &w) in dw.iter().enumerate() {
            model.diffusion_flow(j, x, w)?;
        }
    } else {
        for (j, &w) in dw.iter().enumerate().rev() {
            model.diffusion_flow(j, x, w)?;
        }
    }
    model.drift_flow(x, half)
}

/// One Giles-Szpruch step, in place:
/// `x + b h + Σ σ^j ΔW^j + ½ Σ_{j,m} ∂σ^jσ^m (ΔW^j ΔW^m − 1_{j=m} h)`.
#[inline]
pub fn gs_step_in_place<M: SdeModel + ?Sized>(model: &M, x: &mut [f64], h: f64, dw: &[f64]) -> Result<()> {
    let n = model.state_dim();
    let mut delta = [0.0; MAX_STATE_DIM];
    let mut buf = [0.0; MAX_STATE_DIM];
    model.drift(x, &mut buf[..n])?;
    for i in 0..n {
        delta[i] = buf[i] * h;
    }
    for (j, &wj) in dw.iter().enumerate() {
        model.diffusion(j, x, &mut buf[..n])?;
        for i in 0..n {
            delta[i] += buf[i] * wj;
        }
        for (m, &wm) in dw.iter().enumerate() {
            model.jacobian_product(j, m, x, &mut buf[..n])?;
            let weight = 0.5 * (wj * wm - if j == m { h } else { 0.0 });
            for i in 0..n {
                delta[i] += buf[i] * weight;
            }
        }
    }
    for i in 0..n {
        x[i] += delta[i];
    }
    Ok(())
}

fn check_step<M: SdeModel + ?Sized>(model: &M, x: &StateVector, h: f64, dw: &[f64]) -> Result<()> {
    if x.len() != model.state_dim() {
        return Err(Error::DimensionMismatch { expected: model.state_dim(), got: x.len() });
    }
    if dw.len() != model.noise_dim() {
        return Err(Error::DimensionMismatch { expected: model.noise_dim(), got: dw.len() });
    }
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
    }
    Ok(())
}

/// Checked Ninomiya-Victoir step.
pub fn nv_step<M: SdeModel + ?Sized>(model: &M, x: &StateVector, h: f64, dw: &[f64], eta: i8) -> Result<StateVector> {
    check_step(model, x, h, dw)?;
    if eta != 1 && eta != -1 {
        return Err(Error::InvalidArgument(format!("eta must be ±1, got {eta}")));
    }
    let mut y = x.clone();
    nv_step_in_place(model, &mut y, h, dw, eta)?;
    Ok(y)
}

/// Checked Giles-Szpruch step.
pub fn gs_step<M: SdeModel + ?Sized>(model: &M, x: &StateVector, h: f64, dw: &[f64]) -> Result<StateVector> {
    check_step(model, x, h, dw)?;
    let mut y = x.clone();
    gs_step_in_place(model, &mut y, h, dw)?;
    Ok(y)
}

/// Sign sequence as seen by one NV path.
#[derive(Debug, Clone, Copy)]
pub enum Signs<'a> {
    Plain(&'a RademacherSeq),
    Negated(&'a RademacherSeq),
}

impl Signs<'_> {
    #[inline]
    fn get(&self, k: usize) -> i8 {
        match self {
            Signs::Plain(s) => s.get(k),
            Signs::Negated(s) => -s.get(k),
        }
    }

    fn len(&self) -> usize {
        match self {
            Signs::Plain(s) | Signs::Negated(s) => s.len(),
        }
    }
}

/// Terminal state after `2^l` steps of `kind` from the model's initial
/// state. GS ignores `signs`.
pub fn simulate_path<M: SdeModel + ?Sized>(
    kind: SchemeKind,
    model: &M,
    grid: &LevelGrid,
    inc: &FineIncrements,
    signs: Option<Signs<'_>>,
) -> Result<StateVector> {
    let steps = grid.steps();
    if inc.steps() != steps {
        return Err(Error::DimensionMismatch { expected: steps, got: inc.steps() });
    }
    if inc.dim() != model.noise_dim() {
        return Err(Error::DimensionMismatch { expected: model.noise_dim(), got: inc.dim() });
    }
    let h = grid.step();
    let mut x = model.initial_state();
    match kind {
        SchemeKind::Nv => {
            let signs = signs.ok_or_else(|| Error::InvalidArgument("NV path needs Rademacher signs".into()))?;
            if signs.len() != steps {
                return Err(Error::DimensionMismatch { expected: steps, got: signs.len() });
            }
            for k in 0..steps {
                nv_step_in_place(model, &mut x, h, inc.step(k), signs.get(k))?;
            }
        }
        SchemeKind::Gs => {
            for k in 0..steps {
                gs_step_in_place(model, &mut x, h, inc.step(k))?;
            }
        }
    }
    Ok(x)
}

fn require_fine_level(grid: &LevelGrid) -> Result<LevelGrid> {
    if grid.level == 0 {
        return Err(Error::InvalidLevel { level: 0, reason: "coupled samples need l ≥ 1" });
    }
    grid.coarse()
}

/// `¼ Σ f` over the NV paths on `inc` and its antithetic swap, each with
/// `η` and `−η`.
fn nv_fine_average<M: SdeModel + ?Sized>(
    model: &M,
    payoff: &Payoff,
    grid: &LevelGrid,
    inc: &FineIncrements,
    swapped: &FineIncrements,
    eta: &RademacherSeq,
) -> Result<f64> {
    let mut total = 0.0;
    for path in [inc, swapped] {
        for signs in [Signs::Plain(eta), Signs::Negated(eta)] {
            let x = simulate_path(SchemeKind::Nv, model, grid, path, Some(signs))?;
            total += payoff.evaluate(&x);
        }
    }
    Ok(0.25 * total)
}

/// `Z_GS^l = ½(f(X̃^GS) + f(X^GS)) − f(X^GS,coarse)`.
pub fn level_sample_gs<M: SdeModel + ?Sized>(
    model: &M,
    payoff: &Payoff,
    grid: &LevelGrid,
    inc: &FineIncrements,
) -> Result<LevelSample> {
    let coarse_grid = require_fine_level(grid)?;
    let fine = simulate_path(SchemeKind::Gs, model, grid, inc, None)?;
    let anti = simulate_path(SchemeKind::Gs, model, grid, &inc.antithetic_swap()?, None)?;
    let coarse = simulate_path(SchemeKind::Gs, model, &coarse_grid, &inc.coarsen()?, None)?;
    let value = 0.5 * (payoff.evaluate(&anti) + payoff.evaluate(&fine)) - payoff.evaluate(&coarse);
    Ok(LevelSample::new(value, grid.level, Coupling::Gs))
}

/// `Z_NV^l`: four fine NV paths minus the average of the two coarse NV
/// paths driven by the odd-position signs and their negation.
pub fn level_sample_nv<M: SdeModel + ?Sized>(
    model: &M,
    payoff: &Payoff,
    grid: &LevelGrid,
    inc: &FineIncrements,
    eta: &RademacherSeq,
) -> Result<LevelSample> {
    let coarse_grid = require_fine_level(grid)?;
    let fine = nv_fine_average(model, payoff, grid, inc, &inc.antithetic_swap()?, eta)?;
    let coarse_inc = inc.coarsen()?;
    let coarse_eta = eta.coarse()?;
    let mut coarse = 0.0;
    for signs in [Signs::Plain(&coarse_eta), Signs::Negated(&coarse_eta)] {
        let x = simulate_path(SchemeKind::Nv, model, &coarse_grid, &coarse_inc, Some(signs))?;
        coarse += payoff.evaluate(&x);
    }
    Ok(LevelSample::new(fine - 0.5 * coarse, grid.level, Coupling::Nv))
}

/// `Z_GS-NV^L`: four fine NV paths minus one coarse GS path.
pub fn level_sample_gsnv<M: SdeModel + ?Sized>(
    model: &M,
    payoff: &Payoff,
    grid: &LevelGrid,
    inc: &FineIncrements,
    eta: &RademacherSeq,
) -> Result<LevelSample> {
    let coarse_grid = require_fine_level(grid)?;
    let fine = nv_fine_average(model, payoff, grid, inc, &inc.antithetic_swap()?, eta)?;
    let coarse = simulate_path(SchemeKind::Gs, model, &coarse_grid, &inc.coarsen()?, None)?;
    Ok(LevelSample::new(fine - payoff.evaluate(&coarse), grid.level, Coupling::GsNv))
}

/// Level-0 samples on a one-step grid.
pub fn level0_sample<M: SdeModel + ?Sized>(
    coupling: Coupling,
    model: &M,
    payoff: &Payoff,
    grid: &LevelGrid,
    inc: &FineIncrements,
    eta: &RademacherSeq,
) -> Result<LevelSample> {
    if grid.level != 0 {
        return Err(Error::InvalidLevel { level: grid.level, reason: "level-0 sample on a finer grid" });
    }
    let value = match coupling {
        Coupling::Level0Gs => payoff.evaluate(&simulate_path(SchemeKind::Gs, model, grid, inc, None)?),
        Coupling::Level0NvSingle => {
            payoff.evaluate(&simulate_path(SchemeKind::Nv, model, grid, inc, Some(Signs::Plain(eta)))?)
        }
        Coupling::Level0NvAveraged => {
            let a = simulate_path(SchemeKind::Nv, model, grid, inc, Some(Signs::Plain(eta)))?;
            let b = simulate_path(SchemeKind::Nv, model, grid, inc, Some(Signs::Negated(eta)))?;
            0.5 * (payoff.evaluate(&a) + payoff.evaluate(&b))
        }
        other => {
            return Err(Error::InvalidArgument(format!("{other} is not a level-0 coupling")));
        }
    };
    Ok(LevelSample::new(value, 0, coupling))
}

/// Dispatches on `coupling`; level-0 couplings require `grid.level == 0`
/// and the others `grid.level ≥ 1`.
pub fn level_sample<M: SdeModel + ?Sized>(
    coupling: Coupling,
    model: &M,
    payoff: &Payoff,
    grid: &LevelGrid,
    inc: &FineIncrements,
    eta: &RademacherSeq,
) -> Result<LevelSample> {
    match coupling {
        Coupling::Gs => level_sample_gs(model, payoff, grid, inc),
        Coupling::Nv => level_sample_nv(model, payoff, grid, inc, eta),
        Coupling::GsNv => level_sample_gsnv(model, payoff, grid, inc, eta),
        _ => level0_sample(coupling, model, payoff, grid, inc, eta),
    }
}
