//! End-to-end experiments shared by the command line and the test suites.

use crate::calibrate::{
    detect_inflection, fit_variance_rate, fit_weak_rate, ols_slope, pilot_stats, variance_table, LevelStats, RateFit,
};
use crate::error::{Error, Result};
use crate::estimators::{
    crude_mc, ml2r_plan, mlmc_last_level, mlmc_plan_from_table, run_multilevel, synthetic_variances, CouplingFamily,
    EstimatorKind, EstimatorResult, MlmcInputs, MultilevelPlan,
};
use crate::models::{ClarkCameron, Payoff, SdeModel, StateVector};
use crate::oracle::znv_second_moment;
use crate::paths::{sample_level_path, LevelGrid, NoiseSource};
use crate::sampling::{reduce_indexed, sample_moments, CouplingSampler, LevelScheme, Moments, Problem, Workers};
use crate::schemes::{simulate_path, Coupling, SchemeKind, Signs};

// Stream namespaces, so that different stages never share random numbers.
const STRONG: u64 = 1;
const DECAY: u64 = 2;
const PILOT_GS: u64 = 3;
const PILOT_NV: u64 = 5;
const PILOT_LEVEL0: u64 = 6;
const VARF: u64 = 7;
const TABLE: u64 = 8;
const PILOT_TOP: u64 = 1 << 20;
const RUNS: u64 = 1 << 32;

pub struct Context<'a> {
    pub workers: &'a Workers,
    pub noise: NoiseSource,
}

fn squared_distance(a: &StateVector, b: &StateVector) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrongRow {
    pub level: u32,
    /// `E‖X^{NV,2^l,η} − X^{NV,2^{l−1},η}‖²`.
    pub nv: f64,
    pub nv_sem: f64,
    /// `E‖X̄^{NV,2^l,η} − X^{GS,2^l}‖²`.
    pub coupling: f64,
    pub coupling_sem: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrongOrderReport {
    pub rows: Vec<StrongRow>,
    pub nv_slope: f64,
    pub coupling_slope: f64,
}

#[derive(Default)]
struct PairMoments(Moments, Moments);

/// Strong convergence of NV between consecutive levels and of the averaged
/// NV scheme against GS on the same grid.
pub fn strong_order(
    ctx: &Context<'_>,
    model: &dyn SdeModel,
    horizon: f64,
    levels: &[u32],
    m: u64,
) -> Result<StrongOrderReport> {
    let mut rows = Vec::new();
    for &l in levels {
        let grid = LevelGrid::new(l, horizon)?;
        let coarse = grid.coarse()?;
        let one = |i: u64| -> Result<(f64, f64)> {
            let (inc, eta) = sample_level_path(&ctx.noise.stream(STRONG, l, i), &grid, model.noise_dim());
            let fine = simulate_path(SchemeKind::Nv, model, &grid, &inc, Some(Signs::Plain(&eta)))?;
            let fine_neg = simulate_path(SchemeKind::Nv, model, &grid, &inc, Some(Signs::Negated(&eta)))?;
            let ceta = eta.coarse()?;
            let crs = simulate_path(SchemeKind::Nv, model, &coarse, &inc.coarsen()?, Some(Signs::Plain(&ceta)))?;
            let gs = simulate_path(SchemeKind::Gs, model, &grid, &inc, None)?;
            let mut avg = fine.clone();
            avg.iter_mut().zip(fine_neg.iter()).for_each(|(a, b)| *a = 0.5 * (*a + b));
            Ok((squared_distance(&fine, &crs), squared_distance(&avg, &gs)))
        };
        let acc = reduce_indexed(
            ctx.workers,
            m,
            |acc: &mut PairMoments, i| match one(i) {
                Ok((a, b)) => {
                    acc.0.push(a);
                    acc.1.push(b);
                }
                Err(e) if e.is_sample_abort() => {
                    acc.0.aborted += 1;
                    acc.1.aborted += 1;
                }
                Err(e) => {
                    if acc.0.error.is_none() {
                        acc.0.error = Some(e)
                    }
                }
            },
            |a, b| {
                a.0.merge(b.0);
                a.1.merge(b.1);
            },
        );
        let nv = LevelStats::from_moments(l, acc.0)?;
        let cp = LevelStats::from_moments(l, acc.1)?;
        rows.push(StrongRow { level: l, nv: nv.mean, nv_sem: nv.sem, coupling: cp.mean, coupling_sem: cp.sem });
    }
    let slope = |f: &dyn Fn(&StrongRow) -> f64| {
        ols_slope(&rows.iter().map(|r| (r.level as f64, f(r).log2())).collect::<Vec<_>>())
    };
    let nv_slope = slope(&|r| r.nv);
    let coupling_slope = slope(&|r| r.coupling);
    Ok(StrongOrderReport { rows, nv_slope, coupling_slope })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayRow {
    pub level: u32,
    pub second_moment: f64,
    pub sem: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    pub coupling: Coupling,
    pub rows: Vec<DecayRow>,
    pub slope: f64,
}

/// `E[(Z^l)²]` per level for one coupling, with the log2 slope.
pub fn variance_decay(
    ctx: &Context<'_>,
    problem: Problem<'_>,
    coupling: Coupling,
    levels: &[u32],
    m: u64,
) -> Result<DecayReport> {
    let squared = |l: u32, s: &crate::paths::RngStream| problem.sample(coupling, l, s).map(|z| z.value * z.value);
    let stats = pilot_stats(ctx.workers, &squared, levels, m, ctx.noise, DECAY)?;
    let rows: Vec<DecayRow> =
        stats.iter().map(|s| DecayRow { level: s.level, second_moment: s.mean, sem: s.sem }).collect();
    let slope = ols_slope(&rows.iter().map(|r| (r.level as f64, r.second_moment.log2())).collect::<Vec<_>>());
    Ok(DecayReport { coupling, rows, slope })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRow {
    pub level: u32,
    pub estimate: f64,
    pub sem: f64,
    pub oracle: f64,
    pub z_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub mu: f64,
    pub rows: Vec<OracleRow>,
    pub pass: bool,
}

/// Monte Carlo `E[(Z_NV^l)²]` for Clark-Cameron with `f = u²` against the
/// closed form in [`crate::oracle`]; passes when every `|z| ≤ 4`.
pub fn oracle_check(ctx: &Context<'_>, mu: f64, horizon: f64, levels: &[u32], m: u64) -> Result<OracleReport> {
    let model = ClarkCameron::new(mu, 0.0, 0.0);
    let problem = Problem::new(&model, Payoff::USquared, horizon);
    let mut rows = Vec::new();
    let report = variance_decay(ctx, problem, Coupling::Nv, levels, m)?;
    for r in report.rows {
        let oracle = znv_second_moment(r.level, mu, horizon).value;
        let z_score = (r.second_moment - oracle) / r.sem;
        rows.push(OracleRow { level: r.level, estimate: r.second_moment, sem: r.sem, oracle, z_score });
    }
    let pass = rows.iter().all(|r| r.z_score.abs() <= 4.0);
    Ok(OracleReport { mu, rows, pass })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub coupling: LevelScheme,
    pub level0: LevelStats,
    pub stats: Vec<LevelStats>,
    pub weak: RateFit,
    pub variance: RateFit,
    pub inflection: Option<u32>,
}

/// Pilot over `levels` (plus level 0) for `scheme`. The rates are fitted on
/// the first `fit_levels` pilot levels; the rest only feed inflection
/// detection.
pub fn calibrate(
    ctx: &Context<'_>,
    problem: Problem<'_>,
    scheme: LevelScheme,
    levels: &[u32],
    fit_levels: usize,
    m: u64,
    threshold: f64,
) -> Result<CalibrationReport> {
    let sampler = CouplingSampler { problem, scheme };
    let experiment = match scheme.coupling(1) {
        Coupling::Gs => PILOT_GS,
        _ => PILOT_NV,
    };
    let stats = pilot_stats(ctx.workers, &sampler, levels, m, ctx.noise, experiment)?;
    let level0 = pilot_stats(ctx.workers, &sampler, &[0], m, ctx.noise, PILOT_LEVEL0 + experiment * 16)?.remove(0);
    let fit_on = &stats[..fit_levels.min(stats.len())];
    let weak = fit_weak_rate(fit_on)?;
    let variance = fit_variance_rate(fit_on)?;
    let inflection = detect_inflection(&stats, &variance, threshold);
    Ok(CalibrationReport { coupling: scheme, level0, stats, weak, variance, inflection })
}

/// Settings of [`run`] that are not part of the problem itself.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub kind: EstimatorKind,
    pub family: CouplingFamily,
    pub epsilons: Vec<f64>,
    pub pilot_levels: Vec<u32>,
    pub fit_levels: usize,
    pub pilot_m: u64,
    pub inflection_threshold: f64,
    /// Variance order used beyond an inflection; defaults to the fitted one.
    pub beta_theory: Option<f64>,
    /// Level and sample count of the crude run estimating `Var f(X_T)`.
    pub varf_level: u32,
    pub varf_m: u64,
    /// Independent repetitions per epsilon.
    pub runs: u64,
}

impl RunSettings {
    pub fn new(kind: EstimatorKind, family: CouplingFamily, epsilons: Vec<f64>) -> Self {
        RunSettings {
            kind,
            family,
            epsilons,
            pilot_levels: vec![1, 2, 3, 4],
            fit_levels: 4,
            pilot_m: 10_000,
            inflection_threshold: crate::calibrate::DEFAULT_INFLECTION_THRESHOLD,
            beta_theory: None,
            varf_level: 5,
            varf_m: 10_000,
            runs: 1,
        }
    }
}

/// Calibration feeding every plan of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunCalibration {
    /// Source of `(α, c₁)`.
    pub weak: CalibrationReport,
    /// Source of `(β, c₂)` and `V̂₀`.
    pub variance: CalibrationReport,
    pub varf: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub epsilon: f64,
    pub repetition: u64,
    pub plan: MultilevelPlan,
    pub result: EstimatorResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub calibration: RunCalibration,
    pub rows: Vec<RunRow>,
}

fn nv_scheme(family: CouplingFamily) -> LevelScheme {
    LevelScheme::Nv { level0_averaged: family != CouplingFamily::NvSingle }
}

pub fn calibrate_for_run(ctx: &Context<'_>, problem: Problem<'_>, s: &RunSettings) -> Result<RunCalibration> {
    let cal =
        |scheme| calibrate(ctx, problem, scheme, &s.pilot_levels, s.fit_levels, s.pilot_m, s.inflection_threshold);
    let (weak, variance) = match s.family {
        CouplingFamily::Gs => {
            let c = cal(LevelScheme::Gs)?;
            (c.clone(), c)
        }
        CouplingFamily::NvSingle | CouplingFamily::NvAveraged => {
            let c = cal(nv_scheme(s.family))?;
            (c.clone(), c)
        }
        CouplingFamily::GsNv => (cal(nv_scheme(s.family))?, cal(LevelScheme::Gs)?),
    };
    let varf = if s.kind == EstimatorKind::Ml2r {
        let scheme = if s.family == CouplingFamily::Gs { SchemeKind::Gs } else { SchemeKind::Nv };
        Some(crude_mc(ctx.workers, problem, scheme, s.varf_level, s.varf_m, ctx.noise, VARF)?.variance)
    } else {
        None
    };
    Ok(RunCalibration { weak, variance, varf })
}

/// Builds the plan for one epsilon, running the extra pilots it needs.
pub fn plan_for(
    ctx: &Context<'_>,
    problem: Problem<'_>,
    s: &RunSettings,
    cal: &RunCalibration,
    eps_index: usize,
) -> Result<MultilevelPlan> {
    let epsilon = s.epsilons[eps_index];
    let (weak, var) = (&cal.weak.weak, &cal.variance.variance);
    if s.kind == EstimatorKind::Ml2r {
        let varf = cal.varf.ok_or_else(|| Error::InvalidArgument("ML2R needs Var f(X_T)".into()))?;
        return ml2r_plan(s.family, epsilon, weak.order, var.order, var.constant, varf, problem.horizon);
    }
    let last_level = mlmc_last_level(epsilon, weak.constant, weak.order)?;
    let v_last = if s.family == CouplingFamily::GsNv {
        let sampler = CouplingSampler { problem, scheme: LevelScheme::Fixed(Coupling::GsNv) };
        let experiment = PILOT_TOP + eps_index as u64;
        Some(pilot_stats(ctx.workers, &sampler, &[last_level], s.pilot_m, ctx.noise, experiment)?[0].variance)
    } else {
        None
    };
    let inputs = MlmcInputs {
        alpha: weak.order,
        c1: weak.constant,
        beta: var.order,
        c2: var.constant,
        v0: cal.variance.level0.variance,
        v_last,
    };
    let mut table = match cal.variance.inflection {
        Some(lbar) if last_level >= lbar => {
            let beta = s.beta_theory.unwrap_or(var.order);
            let sampler = CouplingSampler { problem, scheme: cal.variance.coupling };
            let experiment = TABLE + 16 * eps_index as u64;
            variance_table(ctx.workers, &sampler, last_level, lbar, beta, s.pilot_m, ctx.noise, experiment)?
        }
        _ => synthetic_variances(s.family, last_level, &inputs)?,
    };
    if let Some(v) = v_last {
        table[last_level as usize] = v;
    }
    mlmc_plan_from_table(s.family, epsilon, &table)
}

/// Calibrates once, then plans and runs every epsilon `runs` times.
pub fn run(ctx: &Context<'_>, problem: Problem<'_>, s: &RunSettings) -> Result<RunReport> {
    if s.epsilons.is_empty() {
        return Err(Error::InvalidArgument("no epsilon given".into()));
    }
    let calibration = calibrate_for_run(ctx, problem, s)?;
    run_calibrated(ctx, problem, s, calibration)
}

/// [`run`] with a calibration supplied by the caller, for instance one whose
/// rates were overridden by hand.
pub fn run_calibrated(
    ctx: &Context<'_>,
    problem: Problem<'_>,
    s: &RunSettings,
    calibration: RunCalibration,
) -> Result<RunReport> {
    if s.epsilons.is_empty() {
        return Err(Error::InvalidArgument("no epsilon given".into()));
    }
    let mut rows = Vec::new();
    for (i, &epsilon) in s.epsilons.iter().enumerate() {
        let plan = plan_for(ctx, problem, s, &calibration, i)?;
        for r in 0..s.runs {
            let experiment = RUNS + (i as u64) * (1 << 24) + r;
            let result = run_multilevel(ctx.workers, &plan, problem, ctx.noise, experiment)?;
            rows.push(RunRow { epsilon, repetition: r, plan: plan.clone(), result });
        }
    }
    Ok(RunReport { calibration, rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub run: RunReport,
    /// Slope of log2 plan cost units against log2 epsilon.
    pub cost_slope: f64,
}

/// One run per epsilon and the complexity slope of the plan costs.
pub fn sweep(ctx: &Context<'_>, problem: Problem<'_>, s: &RunSettings) -> Result<SweepReport> {
    let settings = RunSettings { runs: 1, ..s.clone() };
    let run = run(ctx, problem, &settings)?;
    let cost_slope = complexity_slope(&run);
    Ok(SweepReport { run, cost_slope })
}

/// Slope of log2 plan cost units against log2 epsilon over the rows of `run`.
pub fn complexity_slope(run: &RunReport) -> f64 {
    ols_slope(&run.rows.iter().map(|r| (r.epsilon.log2(), r.plan.cost_units().log2())).collect::<Vec<_>>())
}

/// Mean of `m` plain samples of one coupling, used by consistency checks.
pub fn coupling_moments(
    ctx: &Context<'_>,
    problem: Problem<'_>,
    coupling: Coupling,
    level: u32,
    m: u64,
    experiment: u64,
) -> Moments {
    let sampler = CouplingSampler { problem, scheme: LevelScheme::Fixed(coupling) };
    sample_moments(ctx.workers, &sampler, ctx.noise, experiment, level, m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_strong_order_is_degenerate() {
        let w = Workers::global();
        let ctx = Context { workers: &w, noise: NoiseSource::degenerate() };
        let r = strong_order(&ctx, &ClarkCameron::default(), 1.0, &[2, 3, 4], 10).unwrap();
        assert!(r.rows.iter().all(|row| row.nv == 0.0 && row.coupling == 0.0));
        assert!(r.nv_slope.is_nan() && r.coupling_slope.is_nan());
    }

    #[test]
    fn small_run_is_reproducible() {
        let w = Workers::global();
        let ctx = Context { workers: &w, noise: NoiseSource::new(5) };
        let model = ClarkCameron::default();
        let problem = Problem::new(&model, Payoff::CosU, 1.0);
        let mut s = RunSettings::new(EstimatorKind::Mlmc, CouplingFamily::GsNv, vec![0.05]);
        s.pilot_m = 2000;
        let a = run(&ctx, problem, &s).unwrap();
        let b = run(&ctx, problem, &s).unwrap();
        assert_eq!(a.rows[0].result.estimate, b.rows[0].result.estimate);
        assert_eq!(a.rows[0].plan.scheme(), LevelScheme::GsNv { last_level: a.rows[0].plan.last_level });
    }

    #[test]
    fn ml2r_run_uses_weights() {
        let w = Workers::global();
        let ctx = Context { workers: &w, noise: NoiseSource::new(6) };
        let model = ClarkCameron::default();
        let problem = Problem::new(&model, Payoff::CosU, 1.0);
        let mut s = RunSettings::new(EstimatorKind::Ml2r, CouplingFamily::Gs, vec![0.05]);
        s.pilot_m = 2000;
        s.varf_m = 2000;
        let r = run(&ctx, problem, &s).unwrap();
        let row = &r.rows[0];
        let manual: f64 = row.result.levels.iter().zip(&row.plan.weights).map(|(l, w)| w * l.mean).sum();
        assert!((row.result.estimate - manual).abs() < 1e-14);
        assert!((row.plan.weights[0] - 1.0).abs() < 1e-12);
    }
}
