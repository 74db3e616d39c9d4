//! MLMC and ML2R plans and the multilevel estimator itself.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::calibrate::LevelStats;
use crate::error::{Error, Result};
use crate::paths::{sample_level_path, LevelGrid, NoiseSource, RngStream};
use crate::sampling::{sample_moments, CouplingSampler, LevelScheme, Problem, Workers};
use crate::schemes::{simulate_path, SchemeKind, Signs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    Mlmc,
    Ml2r,
}

impl EstimatorKind {
    pub fn label(&self) -> &'static str {
        match self {
            EstimatorKind::Mlmc => "mlmc",
            EstimatorKind::Ml2r => "ml2r",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlmc" => Ok(EstimatorKind::Mlmc),
            "ml2r" => Ok(EstimatorKind::Ml2r),
            other => Err(Error::InvalidArgument(format!("unknown estimator '{other}'"))),
        }
    }
}

/// Coupling family of a multilevel estimator, before the last level is known.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CouplingFamily {
    Gs,
    /// NV with `f(X^{NV,1,η})` at level 0.
    NvSingle,
    /// NV with the `±η` average at level 0.
    NvAveraged,
    /// GS levels with GS-NV on top.
    GsNv,
}

impl CouplingFamily {
    pub fn scheme(&self, last_level: u32) -> LevelScheme {
        match self {
            CouplingFamily::Gs => LevelScheme::Gs,
            CouplingFamily::NvSingle => LevelScheme::Nv { level0_averaged: false },
            CouplingFamily::NvAveraged => LevelScheme::Nv { level0_averaged: true },
            CouplingFamily::GsNv => LevelScheme::GsNv { last_level },
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            CouplingFamily::Gs => "gs",
            CouplingFamily::NvSingle => "nv-single",
            CouplingFamily::NvAveraged => "nv",
            CouplingFamily::GsNv => "gs-nv",
        }
    }
}

impl fmt::Display for CouplingFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for CouplingFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gs" => Ok(CouplingFamily::Gs),
            "nv" | "nv-averaged" => Ok(CouplingFamily::NvAveraged),
            "nv-single" => Ok(CouplingFamily::NvSingle),
            "gs-nv" => Ok(CouplingFamily::GsNv),
            other => Err(Error::InvalidArgument(format!("unknown coupling '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultilevelPlan {
    pub kind: EstimatorKind,
    pub family: CouplingFamily,
    pub last_level: u32,
    pub samples: Vec<u64>,
    /// All ones for MLMC, `W_l` for ML2R.
    pub weights: Vec<f64>,
    pub lambda: Vec<f64>,
    pub epsilon: f64,
}

impl MultilevelPlan {
    pub fn scheme(&self) -> LevelScheme {
        self.family.scheme(self.last_level)
    }

    /// `Σ M_l λ_l 2^l`.
    pub fn cost_units(&self) -> f64 {
        self.samples
            .iter()
            .zip(&self.lambda)
            .enumerate()
            .map(|(l, (&m, &lam))| m as f64 * lam * (l as f64).exp2())
            .sum()
    }

    pub fn total_samples(&self) -> u64 {
        self.samples.iter().sum()
    }
}

/// `L* = ⌈log2(√2|c₁|/ε)/α⌉`, at least 1.
pub fn mlmc_last_level(epsilon: f64, c1: f64, alpha: f64) -> Result<u32> {
    if !(epsilon > 0.0) || !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("need epsilon > 0 and alpha > 0, got {epsilon}, {alpha}")));
    }
    if c1 == 0.0 {
        return Err(Error::ZeroWeakConstant);
    }
    let raw = ((2f64.sqrt() * c1.abs() / epsilon).log2() / alpha).ceil();
    Ok(if raw < 1.0 { 1 } else { raw as u32 })
}

/// `M_l = ⌈(2/ε²)√(V_l/(λ_l 2^l)) Σ_j √(λ_j 2^j V_j)⌉`, floored at 1.
pub fn mlmc_sample_sizes(epsilon: f64, variances: &[f64], lambda: &[f64]) -> Result<Vec<u64>> {
    if variances.len() != lambda.len() {
        return Err(Error::DimensionMismatch { expected: variances.len(), got: lambda.len() });
    }
    if let Some(&v) = variances.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::NonpositiveVariance(v));
    }
    let cost = |l: usize| lambda[l] * (l as f64).exp2();
    let sum: f64 = (0..variances.len()).map(|j| (cost(j) * variances[j]).sqrt()).sum();
    Ok((0..variances.len())
        .map(|l| {
            let m = (2.0 / (epsilon * epsilon) * (variances[l] / cost(l)).sqrt() * sum).ceil();
            m.max(1.0) as u64
        })
        .collect())
}

/// Default cost weights of an MLMC family with last level `last_level`.
pub fn mlmc_lambda(family: CouplingFamily, last_level: u32) -> Vec<f64> {
    let upper = match family {
        CouplingFamily::NvSingle => 5.0,
        _ => 2.5,
    };
    let mut lambda = vec![upper; last_level as usize + 1];
    lambda[0] = 1.0;
    if family == CouplingFamily::GsNv && last_level > 0 {
        lambda[last_level as usize] = 4.5;
    }
    lambda
}

/// Rates used to size an MLMC plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlmcInputs {
    pub alpha: f64,
    pub c1: f64,
    pub beta: f64,
    pub c2: f64,
    /// Pilot variance at level 0.
    pub v0: f64,
    /// Pilot variance of `Z_GS-NV` at the last level.
    pub v_last: Option<f64>,
}

/// Variances `V̂₀, c₂2^{−β}, …, c₂2^{−βL}`, with `V̂_GS-NV` on top for GS-NV.
pub fn synthetic_variances(family: CouplingFamily, last_level: u32, inputs: &MlmcInputs) -> Result<Vec<f64>> {
    let mut v: Vec<f64> = (0..=last_level)
        .map(|l| if l == 0 { inputs.v0 } else { inputs.c2 * (-inputs.beta * l as f64).exp2() })
        .collect();
    if family == CouplingFamily::GsNv {
        v[last_level as usize] = inputs.v_last.ok_or(Error::MissingLastLevelVariance)?;
    }
    Ok(v)
}

/// MLMC plan from calibrated rates. For GS-NV the caller passes NV's
/// `(α, c₁)` and GS's `(β, c₂)`.
pub fn mlmc_plan(family: CouplingFamily, epsilon: f64, inputs: &MlmcInputs) -> Result<MultilevelPlan> {
    let last_level = mlmc_last_level(epsilon, inputs.c1, inputs.alpha)?;
    let variances = synthetic_variances(family, last_level, inputs)?;
    mlmc_plan_from_table(family, epsilon, &variances)
}

/// MLMC plan with last level `variances.len() − 1` and the given variances.
pub fn mlmc_plan_from_table(family: CouplingFamily, epsilon: f64, variances: &[f64]) -> Result<MultilevelPlan> {
    if variances.len() < 2 {
        return Err(Error::InvalidArgument("variance table needs levels 0 and 1".into()));
    }
    let last_level = (variances.len() - 1) as u32;
    let lambda = mlmc_lambda(family, last_level);
    let samples = mlmc_sample_sizes(epsilon, variances, &lambda)?;
    Ok(MultilevelPlan {
        kind: EstimatorKind::Mlmc,
        family,
        last_level,
        samples,
        weights: vec![1.0; variances.len()],
        lambda,
        epsilon,
    })
}

/// Richardson-Romberg weights `w_j` and their suffix sums `W_l`.
pub fn ml2r_weights(last_level: u32, alpha: f64) -> (Vec<f64>, Vec<f64>) {
    let big_l = last_level as i32;
    let prod = |n: i32| (1..=n).map(|k| 1.0 - (-(k as f64) * alpha).exp2()).product::<f64>();
    let w: Vec<f64> = (0..=big_l)
        .map(|j| {
            let r = big_l - j;
            let sign = if r % 2 == 0 { 1.0 } else { -1.0 };
            sign * (-0.5 * alpha * (r * (r + 1)) as f64).exp2() / (prod(j) * prod(r))
        })
        .collect();
    let mut big_w = w.clone();
    for l in (0..big_w.len() - 1).rev() {
        big_w[l] += big_w[l + 1];
    }
    (w, big_w)
}

/// `⌊√((½ + log2 T)² + (2/α) log2(√(1+4α)/ε)) + log2 T − ½⌋`, at least 1.
pub fn ml2r_last_level(epsilon: f64, alpha: f64, horizon: f64) -> u32 {
    let lt = horizon.log2();
    let inner = (0.5 + lt).powi(2) + 2.0 / alpha * ((1.0 + 4.0 * alpha).sqrt() / epsilon).log2();
    let raw = (inner.max(0.0).sqrt() + lt - 0.5).floor();
    if raw < 1.0 || raw.is_nan() {
        1
    } else {
        raw as u32
    }
}

/// Allocation details of an ML2R plan.
#[derive(Debug, Clone, PartialEq)]
pub struct Ml2rAllocation {
    pub theta: f64,
    pub q: Vec<f64>,
    pub n_star: f64,
}

pub fn ml2r_allocation(
    last_level: u32,
    epsilon: f64,
    alpha: f64,
    beta: f64,
    c2: f64,
    varf: f64,
    horizon: f64,
) -> Result<Ml2rAllocation> {
    if !(varf > 0.0) {
        return Err(Error::NonpositiveVariance(varf));
    }
    if !(c2 > 0.0) {
        return Err(Error::NonpositiveVariance(c2));
    }
    let (_, big_w) = ml2r_weights(last_level, alpha);
    let theta = horizon.powf(-beta / 2.0) * (c2 / varf).sqrt();
    let decay = |l: f64| (-beta / 2.0 * l).exp2() + (-beta / 2.0 * (l - 1.0)).exp2();
    let pair_cost = |l: f64| l.exp2() + (l - 1.0).exp2();
    let mut q = vec![1.0 + theta];
    let mut spread = 1.0;
    for l in 1..=last_level as usize {
        let lf = l as f64;
        q.push(theta * big_w[l].abs() * decay(lf) / pair_cost(lf).sqrt());
        spread += big_w[l].abs() * decay(lf) * pair_cost(lf).sqrt();
    }
    let total: f64 = q.iter().sum();
    q.iter_mut().for_each(|x| *x /= total);
    let cost_norm = q[0] + (1..q.len()).map(|l| q[l] * pair_cost(l as f64)).sum::<f64>();
    let bias_factor = 1.0 + 1.0 / (2.0 * alpha * (last_level as f64 + 1.0));
    let n_star = bias_factor * varf * (1.0 + theta * spread).powi(2) / (epsilon * epsilon * cost_norm);
    Ok(Ml2rAllocation { theta, q, n_star })
}

/// ML2R plan; `family` is GS or single-start NV.
#[allow(clippy::too_many_arguments)]
pub fn ml2r_plan(
    family: CouplingFamily,
    epsilon: f64,
    alpha: f64,
    beta: f64,
    c2: f64,
    varf: f64,
    horizon: f64,
) -> Result<MultilevelPlan> {
    if !matches!(family, CouplingFamily::Gs | CouplingFamily::NvSingle) {
        return Err(Error::InvalidArgument(format!("ML2R runs on gs or nv-single, not {family}")));
    }
    let last_level = ml2r_last_level(epsilon, alpha, horizon);
    let alloc = ml2r_allocation(last_level, epsilon, alpha, beta, c2, varf, horizon)?;
    let samples = alloc.q.iter().map(|q| ((q * alloc.n_star).ceil()).max(1.0) as u64).collect();
    let (_, weights) = ml2r_weights(last_level, alpha);
    let mut lambda = vec![1.5; last_level as usize + 1];
    lambda[0] = 1.0;
    Ok(MultilevelPlan { kind: EstimatorKind::Ml2r, family, last_level, samples, weights, lambda, epsilon })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorResult {
    pub estimate: f64,
    pub levels: Vec<LevelStats>,
    /// Plan accounting `Σ M_l λ_l 2^l`.
    pub cost_units: f64,
    /// Scheme steps actually simulated.
    pub measured_steps: f64,
    pub seconds: f64,
    pub aborted: u64,
}

/// `Ŷ = Σ_l (W_l/M_l) Σ_k Z^l_k` on streams `(experiment, l, k)`.
pub fn run_multilevel(
    workers: &Workers,
    plan: &MultilevelPlan,
    problem: Problem<'_>,
    noise: NoiseSource,
    experiment: u64,
) -> Result<EstimatorResult> {
    let start = Instant::now();
    let sampler = CouplingSampler { problem, scheme: plan.scheme() };
    let mut levels = Vec::with_capacity(plan.samples.len());
    let mut estimate = 0.0;
    for (l, (&m, &w)) in plan.samples.iter().zip(&plan.weights).enumerate() {
        let l = l as u32;
        let stats = LevelStats::from_moments(l, sample_moments(workers, &sampler, noise, experiment, l, m))?;
        estimate += w * stats.mean;
        levels.push(stats);
    }
    Ok(EstimatorResult {
        estimate,
        cost_units: plan.cost_units(),
        measured_steps: levels.iter().map(|s| s.cost_units).sum(),
        aborted: levels.iter().map(|s| s.aborted).sum(),
        levels,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Plain Monte Carlo of `f(X_T)` with one scheme at a fixed level; NV uses
/// a single `η` path.
pub fn crude_mc(
    workers: &Workers,
    problem: Problem<'_>,
    scheme: SchemeKind,
    level: u32,
    m: u64,
    noise: NoiseSource,
    experiment: u64,
) -> Result<LevelStats> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!("crude MC needs M >= 2, got {m}")));
    }
    let grid = LevelGrid::new(level, problem.horizon)?;
    let sampler = |_l: u32, s: &RngStream| -> Result<f64> {
        let (inc, eta) = sample_level_path(s, &grid, problem.model.noise_dim());
        let signs = (scheme == SchemeKind::Nv).then_some(Signs::Plain(&eta));
        let x = simulate_path(scheme, problem.model, &grid, &inc, signs)?;
        Ok(problem.payoff.evaluate(&x))
    };
    LevelStats::from_moments(level, sample_moments(workers, &sampler, noise, experiment, level, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ClarkCameron, Heston, Payoff};
    use proptest::prelude::*;

    #[test]
    fn last_level_examples() {
        let eps = 2f64.sqrt() * (-10f64).exp2();
        assert_eq!(mlmc_last_level(eps, 1.0, 1.0).unwrap(), 10);
        assert_eq!(mlmc_last_level(eps, 1.0, 2.0).unwrap(), 5);
        assert_eq!(mlmc_last_level(0.1, 1e-6, 2.0).unwrap(), 1);
        assert_eq!(mlmc_last_level(0.1, 0.0, 2.0), Err(Error::ZeroWeakConstant));
    }

    #[test]
    fn sample_size_examples() {
        assert_eq!(mlmc_sample_sizes(1.0, &[1.0], &[1.0]).unwrap(), vec![2]);
        let v = [0.7, 0.2, 0.05];
        let lam = [1.0, 2.5, 2.5];
        let raw = |eps: f64| {
            let sum: f64 = (0..3).map(|j| (lam[j] * (j as f64).exp2() * v[j]).sqrt()).sum();
            (0..3).map(|l| 2.0 / (eps * eps) * (v[l] / (lam[l] * (l as f64).exp2())).sqrt() * sum).collect::<Vec<_>>()
        };
        let (a, b) = (raw(0.01), raw(0.005));
        for l in 0..3 {
            assert!((b[l] - 4.0 * a[l]).abs() < 1e-6 * b[l]);
        }
        assert_eq!(mlmc_sample_sizes(0.01, &v, &lam).unwrap(), a.iter().map(|x| x.ceil() as u64).collect::<Vec<_>>());
        assert_eq!(mlmc_sample_sizes(0.1, &[1.0, 0.0], &[1.0, 2.5]).unwrap()[1], 1);
        assert_eq!(mlmc_sample_sizes(0.1, &[0.0, 0.0], &[1.0, 2.5]).unwrap(), vec![1, 1]);
    }

    #[test]
    fn lambda_tables() {
        assert_eq!(mlmc_lambda(CouplingFamily::GsNv, 3), vec![1.0, 2.5, 2.5, 4.5]);
        assert_eq!(mlmc_lambda(CouplingFamily::NvSingle, 3), vec![1.0, 5.0, 5.0, 5.0]);
        assert_eq!(mlmc_lambda(CouplingFamily::NvAveraged, 2), vec![1.0, 2.5, 2.5]);
        assert_eq!(mlmc_lambda(CouplingFamily::Gs, 2), vec![1.0, 2.5, 2.5]);
    }

    #[test]
    fn plan_reduces_to_synthetic_table() {
        let inputs = MlmcInputs { alpha: 1.0, c1: 1.0, beta: 2.0, c2: 0.3, v0: 0.3, v_last: None };
        let plan = mlmc_plan(CouplingFamily::Gs, 0.01, &inputs).unwrap();
        let v: Vec<f64> = (0..=plan.last_level).map(|l| 0.3 * (-2.0 * l as f64).exp2()).collect();
        let direct = mlmc_sample_sizes(0.01, &v, &mlmc_lambda(CouplingFamily::Gs, plan.last_level)).unwrap();
        assert_eq!(plan.samples, direct);
        assert_eq!(plan.last_level, mlmc_last_level(0.01, 1.0, 1.0).unwrap());
    }

    #[test]
    fn gsnv_plan_needs_last_variance() {
        let mut inputs = MlmcInputs { alpha: 2.0, c1: 0.5, beta: 2.0, c2: 0.3, v0: 0.5, v_last: None };
        assert_eq!(mlmc_plan(CouplingFamily::GsNv, 0.01, &inputs), Err(Error::MissingLastLevelVariance));
        inputs.v_last = Some(1e-3);
        let plan = mlmc_plan(CouplingFamily::GsNv, 0.01, &inputs).unwrap();
        assert_eq!(*plan.lambda.last().unwrap(), 4.5);
        assert_eq!(plan.scheme(), LevelScheme::GsNv { last_level: plan.last_level });
    }

    #[test]
    fn plan_cost_units() {
        let plan = MultilevelPlan {
            kind: EstimatorKind::Mlmc,
            family: CouplingFamily::Gs,
            last_level: 2,
            samples: vec![100, 10, 3],
            weights: vec![1.0; 3],
            lambda: vec![1.0, 2.5, 2.5],
            epsilon: 0.1,
        };
        assert_eq!(plan.cost_units(), 100.0 + 10.0 * 2.5 * 2.0 + 3.0 * 2.5 * 4.0);
    }

    #[test]
    fn ml2r_weight_examples() {
        let (w, big_w) = ml2r_weights(1, 1.0);
        assert!((w[0] + 1.0).abs() < 1e-15 && (w[1] - 2.0).abs() < 1e-15);
        assert!((big_w[0] - 1.0).abs() < 1e-15 && (big_w[1] - 2.0).abs() < 1e-15);
        for l in 1..=6 {
            for alpha in [0.5, 1.0, 1.5, 2.0] {
                let (w, big_w) = ml2r_weights(l, alpha);
                assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!((big_w[0] - 1.0).abs() < 1e-12);
                assert!(*w.last().unwrap() > 0.0);
                assert_eq!(w.last(), big_w.last());
            }
        }
    }

    #[test]
    fn ml2r_examples() {
        let eps = 5f64.sqrt() * (-4f64).exp2();
        assert_eq!(ml2r_last_level(eps, 1.0, 1.0), 2);
        assert_eq!(ml2r_last_level(10.0, 2.0, 1.0), 1);
        let a = ml2r_allocation(3, 0.01, 1.0, 2.0, 0.4, 0.4, 1.0).unwrap();
        assert!((a.theta - 1.0).abs() < 1e-15);
        assert_eq!(ml2r_allocation(3, 0.01, 1.0, 2.0, 0.4, 0.0, 1.0), Err(Error::NonpositiveVariance(0.0)));
    }

    proptest! {
        #[test]
        fn ml2r_q_is_normalised(
            l in 1u32..7, alpha in 0.5f64..2.5, beta in 0.5f64..3.0,
            c2 in 0.01f64..10.0, varf in 0.01f64..10.0, t in 0.25f64..4.0, eps in 1e-4f64..0.1,
        ) {
            let a = ml2r_allocation(l, eps, alpha, beta, c2, varf, t).unwrap();
            prop_assert!((a.q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(a.q.iter().all(|q| *q > 0.0));
            prop_assert!(a.n_star > 0.0);
        }

        #[test]
        fn mlmc_sizes_non_increasing(
            beta in 1.05f64..3.0, c2 in 0.01f64..10.0, l in 1u32..10, eps in 1e-4f64..0.1,
        ) {
            let v: Vec<f64> = (0..=l).map(|j| c2 * (-beta * j as f64).exp2()).collect();
            let m = mlmc_sample_sizes(eps, &v, &mlmc_lambda(CouplingFamily::Gs, l)).unwrap();
            for j in 2..m.len() {
                prop_assert!(m[j] <= m[j - 1]);
            }
        }
    }

    fn cc() -> ClarkCameron {
        ClarkCameron::default()
    }

    #[test]
    fn zero_noise_run_is_zero() {
        let model = cc();
        let inputs = MlmcInputs { alpha: 2.0, c1: 1.0, beta: 2.0, c2: 1.0, v0: 1.0, v_last: Some(0.1) };
        for family in [CouplingFamily::Gs, CouplingFamily::NvAveraged, CouplingFamily::GsNv] {
            let plan = mlmc_plan(family, 0.1, &inputs).unwrap();
            let r = run_multilevel(
                &Workers::global(),
                &plan,
                Problem::new(&model, Payoff::USquared, 1.0),
                NoiseSource::degenerate(),
                0,
            )
            .unwrap();
            assert_eq!(r.estimate, 0.0);
            assert_eq!(r.aborted, 0);
        }
    }

    #[test]
    fn single_level_run_is_a_plain_mean() {
        let model = cc();
        let problem = Problem::new(&model, Payoff::CosU, 1.0);
        let plan = MultilevelPlan {
            kind: EstimatorKind::Mlmc,
            family: CouplingFamily::Gs,
            last_level: 0,
            samples: vec![5000],
            weights: vec![1.0],
            lambda: vec![1.0],
            epsilon: 0.1,
        };
        let noise = NoiseSource::new(4);
        let r = run_multilevel(&Workers::global(), &plan, problem, noise, 9).unwrap();
        let mean = (0..5000u64)
            .map(|k| problem.sample(crate::schemes::Coupling::Level0Gs, 0, &noise.stream(9, 0, k)).unwrap().value)
            .sum::<f64>()
            / 5000.0;
        assert!((r.estimate - mean).abs() < 1e-12);
        assert_eq!(r.cost_units, 5000.0);
        assert_eq!(r.measured_steps, 5000.0);
    }

    #[test]
    fn estimate_does_not_depend_on_worker_count() {
        let model = cc();
        let problem = Problem::new(&model, Payoff::CosU, 1.0);
        let inputs = MlmcInputs { alpha: 2.0, c1: 0.2, beta: 2.0, c2: 0.5, v0: 0.2, v_last: Some(0.01) };
        let plan = mlmc_plan(CouplingFamily::GsNv, 0.02, &inputs).unwrap();
        let noise = NoiseSource::new(77);
        let a = run_multilevel(&Workers::new(1).unwrap(), &plan, problem, noise, 3).unwrap();
        let b = run_multilevel(&Workers::new(3).unwrap(), &plan, problem, noise, 3).unwrap();
        assert_eq!(a.estimate.to_bits(), b.estimate.to_bits());
        assert_eq!(a.levels, b.levels);
    }

    #[test]
    fn crude_mc_examples() {
        let model = cc();
        // identical paths give a constant payoff
        let problem = Problem::new(&model, Payoff::CosU, 1.0);
        let s = crude_mc(&Workers::global(), problem, SchemeKind::Nv, 2, 100, NoiseSource::degenerate(), 0).unwrap();
        assert_eq!(s.variance, 0.0);

        let problem = Problem::new(&model, Payoff::USquared, 1.0);
        let s = crude_mc(&Workers::global(), problem, SchemeKind::Nv, 8, 100_000, NoiseSource::new(2), 0).unwrap();
        let exact = crate::oracle::cc_exact_usq_mean(1.0, 1.0, 0.0).value;
        assert!((s.mean - exact).abs() < 3.0 * s.sem + 0.02, "{} vs {exact}", s.mean);

        let heston = Heston::reference();
        let call = Problem::new(&heston, Payoff::HestonCall { rate: 0.05, maturity: 1.0 }, 1.0);
        let s = crude_mc(&Workers::global(), call, SchemeKind::Nv, 5, 20_000, NoiseSource::new(3), 0).unwrap();
        assert!(s.variance > 0.0 && s.variance.is_finite());
    }
}
