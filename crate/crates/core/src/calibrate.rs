//! Pilot runs and log2 regressions for the weak and variance rates.

use crate::error::{Error, Result};
use crate::paths::NoiseSource;
use crate::sampling::{sample_moments, LevelSampler, Moments, Workers};

/// A level fails when more than this fraction of its samples aborted.
pub const MAX_ABORT_FRACTION: f64 = 0.01;

pub const DEFAULT_INFLECTION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct LevelStats {
    pub level: u32,
    /// Successful samples.
    pub samples: u64,
    pub mean: f64,
    pub variance: f64,
    pub second_moment: f64,
    pub sem: f64,
    pub aborted: u64,
    pub cost_units: f64,
}

impl LevelStats {
    /// Converts accumulated moments, failing on hard errors or too many aborts.
    pub fn from_moments(level: u32, m: Moments) -> Result<Self> {
        let m = m.into_result()?;
        let requested = m.count + m.aborted;
        if m.aborted as f64 > MAX_ABORT_FRACTION * requested as f64 || m.count == 0 {
            return Err(Error::AbortFractionExceeded { level, aborted: m.aborted, samples: requested });
        }
        Ok(LevelStats {
            level,
            samples: m.count,
            mean: m.mean,
            variance: m.variance(),
            second_moment: m.second_moment(),
            sem: m.sem(),
            aborted: m.aborted,
            cost_units: m.cost_units,
        })
    }
}

/// `m` samples per level, streams `(experiment, l, 0..m)`.
pub fn pilot_stats<S: LevelSampler + ?Sized>(
    workers: &Workers,
    sampler: &S,
    levels: &[u32],
    m: u64,
    noise: NoiseSource,
    experiment: u64,
) -> Result<Vec<LevelStats>> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!("pilot needs M >= 2, got {m}")));
    }
    levels
        .iter()
        .map(|&l| LevelStats::from_moments(l, sample_moments(workers, sampler, noise, experiment, l, m)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    /// Decay order snapped to the nearest multiple of ½.
    pub order: f64,
    /// `c₁` for weak fits, `c₂` for variance fits.
    pub constant: f64,
    /// Minus the least-squares slope, before snapping.
    pub raw_slope: f64,
    pub intercept: f64,
    pub residuals: Vec<f64>,
}

impl RateFit {
    /// The unsnapped regression line `intercept − raw_slope·l`.
    pub fn line(&self, level: f64) -> f64 {
        self.intercept - self.raw_slope * level
    }
}

pub fn snap_half(x: f64) -> f64 {
    (2.0 * x).round() / 2.0
}

/// Ordinary least squares `y ≈ a + b·x`; returns `(a, b, residuals)`.
fn least_squares(points: &[(f64, f64)]) -> Result<(f64, f64, Vec<f64>)> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return Err(Error::IllConditioned(points.len()));
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::IllConditioned(points.len()));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let res = points.iter().map(|p| p.1 - (a + b * p.0)).collect();
    Ok((a, b, res))
}

/// Least-squares slope of `points`; NaN when fewer than two distinct abscissae
/// or any ordinate is not finite.
pub fn ols_slope(points: &[(f64, f64)]) -> f64 {
    if points.iter().any(|p| !p.1.is_finite()) {
        return f64::NAN;
    }
    least_squares(points).map(|(_, b, _)| b).unwrap_or(f64::NAN)
}

fn fit_log2(points: &[(f64, f64)]) -> Result<(f64, f64, f64, Vec<f64>)> {
    let (a, b, res) = least_squares(points)?;
    let order = snap_half(-b);
    if order <= 0.0 || !order.is_finite() {
        return Err(Error::InvalidArgument(format!("fitted slope {b} does not decay")));
    }
    Ok((order, -b, a, res))
}

/// Fits `E[Z^l] ≈ c₁(1 − 2^α)2^{−αl}` on `log2|mean|`. Since `1 − 2^α < 0`,
/// `c₁` takes the sign opposite to the summed means.
pub fn fit_weak_rate(stats: &[LevelStats]) -> Result<RateFit> {
    let mut points = Vec::with_capacity(stats.len());
    for s in stats {
        if s.mean == 0.0 {
            return Err(Error::ZeroMean { level: s.level });
        }
        points.push((s.level as f64, s.mean.abs().log2()));
    }
    let (order, raw_slope, intercept, residuals) = fit_log2(&points)?;
    let sign = if stats.iter().map(|s| s.mean).sum::<f64>() < 0.0 { 1.0 } else { -1.0 };
    let constant = sign * intercept.exp2() / (order.exp2() - 1.0);
    Ok(RateFit { order, constant, raw_slope, intercept, residuals })
}

/// Fits `V[Z^l] ≈ c₂ 2^{−βl}`.
pub fn fit_variance_rate(stats: &[LevelStats]) -> Result<RateFit> {
    let mut points = Vec::with_capacity(stats.len());
    for s in stats {
        if !(s.variance > 0.0) {
            return Err(Error::NonpositiveVariance(s.variance));
        }
        points.push((s.level as f64, s.variance.log2()));
    }
    let (order, raw_slope, intercept, residuals) = fit_log2(&points)?;
    Ok(RateFit { order, constant: intercept.exp2(), raw_slope, intercept, residuals })
}

/// Smallest level whose log2 variance is off the fitted line by more than
/// `threshold_log2`.
pub fn detect_inflection(stats: &[LevelStats], fit: &RateFit, threshold_log2: f64) -> Option<u32> {
    stats
        .iter()
        .filter(|s| s.variance > 0.0)
        .find(|s| (s.variance.log2() - fit.line(s.level as f64)).abs() > threshold_log2)
        .map(|s| s.level)
}

/// Monte Carlo variances for `l ≤ l̄`, then `V̂^{l̄} 2^{−β(l−l̄)}` up to `last_level`.
#[allow(clippy::too_many_arguments)]
pub fn variance_table<S: LevelSampler + ?Sized>(
    workers: &Workers,
    sampler: &S,
    last_level: u32,
    inflection: u32,
    beta: f64,
    m: u64,
    noise: NoiseSource,
    experiment: u64,
) -> Result<Vec<f64>> {
    if inflection > last_level {
        return Err(Error::InvalidLevel { level: inflection, reason: "inflection level above last level" });
    }
    let levels: Vec<u32> = (0..=inflection).collect();
    let mut table: Vec<f64> =
        pilot_stats(workers, sampler, &levels, m, noise, experiment)?.iter().map(|s| s.variance).collect();
    let anchor = table[inflection as usize];
    table.extend((inflection + 1..=last_level).map(|l| anchor * (-beta * (l - inflection) as f64).exp2()));
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ClarkCameron, Payoff};
    use crate::paths::RngStream;
    use crate::sampling::{CouplingSampler, LevelScheme, Problem};
    use crate::schemes::Coupling;

    fn stats_from(means: &[f64], variances: &[f64], first: u32) -> Vec<LevelStats> {
        means
            .iter()
            .zip(variances)
            .enumerate()
            .map(|(i, (&mean, &variance))| LevelStats {
                level: first + i as u32,
                samples: 100,
                mean,
                variance,
                second_moment: variance + mean * mean,
                sem: (variance / 100.0).sqrt(),
                aborted: 0,
                cost_units: 0.0,
            })
            .collect()
    }

    #[test]
    fn constant_sampler_pilot() {
        let c = |_l: u32, _s: &RngStream| Ok(2.5);
        let st = pilot_stats(&Workers::global(), &c, &[1, 2], 1000, NoiseSource::new(0), 0).unwrap();
        for s in st {
            assert_eq!(s.mean, 2.5);
            assert_eq!(s.variance, 0.0);
            assert_eq!(s.sem, 0.0);
        }
    }

    #[test]
    fn rademacher_sampler_pilot() {
        let r = |_l: u32, s: &RngStream| Ok(s.rng().sign() as f64);
        let st = pilot_stats(&Workers::global(), &r, &[0], 1_000_000, NoiseSource::new(3), 0).unwrap();
        assert!(st[0].mean.abs() < 3e-3);
        assert!((st[0].variance - 1.0).abs() < 0.01);
        assert!((st[0].sem - (st[0].variance / 1e6).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn pilot_rejects_tiny_m() {
        let c = |_l: u32, _s: &RngStream| Ok(1.0);
        assert!(pilot_stats(&Workers::global(), &c, &[1], 1, NoiseSource::new(0), 0).is_err());
    }

    // Exact E[(Z_NV^1)²] for μ = T = 1 from a symbolic Gaussian-moment
    // expansion of the six paths: 3/256 + 3/32 + 13/32.
    const ZNV_L1_SECOND_MOMENT: f64 = 131.0 / 256.0;

    #[test]
    fn znv_second_moment_at_level_one() {
        let cc = ClarkCameron::default();
        let problem = Problem::new(&cc, Payoff::USquared, 1.0);
        let sq = |l: u32, s: &RngStream| problem.sample(Coupling::Nv, l, s).map(|z| z.value * z.value);
        let st = pilot_stats(&Workers::global(), &sq, &[1], 1_000_000, NoiseSource::new(21), 0).unwrap();
        let exact = ZNV_L1_SECOND_MOMENT;
        assert!((st[0].mean - exact).abs() <= 4.0 * st[0].sem, "{} vs {exact}", st[0].mean);
    }

    #[test]
    fn variance_estimates_are_unbiased() {
        let normal = |_l: u32, s: &RngStream| Ok(3.0 * s.rng().standard_normal());
        let m = 20u64;
        let reps = 200;
        let est: Vec<f64> = (0..reps)
            .map(|k| {
                pilot_stats(&Workers::global(), &normal, &[0], m, NoiseSource::new(500 + k), 0).unwrap()[0].variance
            })
            .collect();
        let mean = est.iter().sum::<f64>() / reps as f64;
        // Var of the sample variance of normals is 2σ⁴/(M−1)
        let se = (2.0 * 81.0 / (m - 1) as f64 / reps as f64).sqrt();
        assert!((mean - 9.0).abs() < 3.0 * se, "{mean}");
    }

    #[test]
    fn weak_fit_examples() {
        let means: Vec<f64> = (1..=4).map(|l| -(0.5f64).powi(l)).collect();
        let f = fit_weak_rate(&stats_from(&means, &[1.0; 4], 1)).unwrap();
        assert_eq!(f.order, 1.0);
        // c₁(1 − 2)2^{−l} = −2^{−l} gives c₁ = 1
        assert!((f.constant - 1.0).abs() < 1e-10);
        assert!(f.residuals.iter().all(|r| r.abs() < 1e-12));

        let means: Vec<f64> = (1..=4).map(|l| 0.3 * (0.25f64).powi(l)).collect();
        let f = fit_weak_rate(&stats_from(&means, &[1.0; 4], 1)).unwrap();
        assert_eq!(f.order, 2.0);
        assert!((f.constant + 0.3 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn weak_fit_errors() {
        let st = stats_from(&[0.1, 0.0], &[1.0, 1.0], 1);
        assert_eq!(fit_weak_rate(&st), Err(Error::ZeroMean { level: 2 }));
        let st = stats_from(&[0.1], &[1.0], 1);
        assert_eq!(fit_weak_rate(&st), Err(Error::IllConditioned(1)));
    }

    #[test]
    fn variance_fit_examples() {
        let vars: Vec<f64> = (1..=4).map(|l| (0.25f64).powi(l)).collect();
        let f = fit_variance_rate(&stats_from(&[1.0; 4], &vars, 1)).unwrap();
        assert_eq!(f.order, 2.0);
        assert!((f.constant - 1.0).abs() < 1e-10);

        let vars: Vec<f64> = (1..=5).map(|l| 7.0 * (-1.5 * l as f64).exp2()).collect();
        let f = fit_variance_rate(&stats_from(&[1.0; 5], &vars, 1)).unwrap();
        assert_eq!(f.order, 1.5);
        assert!((f.constant - 7.0).abs() < 1e-10);
    }

    #[test]
    fn snapping_tolerance() {
        for base in [0.5, 1.0, 1.5, 2.0, 3.0] {
            for off in [-0.24, -0.1, 0.0, 0.1, 0.24] {
                assert_eq!(snap_half(base + off), base);
            }
        }
        let vars: Vec<f64> = (1..=4).map(|l| (-1.2 * l as f64).exp2()).collect();
        let f = fit_variance_rate(&stats_from(&[1.0; 4], &vars, 1)).unwrap();
        assert_eq!(f.order, 1.0);
        assert!((f.raw_slope - 1.2).abs() < 1e-12);
    }

    #[test]
    fn inflection_detection() {
        let vars: Vec<f64> = (1..=4).map(|l| (-3.0 * l as f64).exp2()).collect();
        let linear = stats_from(&[1.0; 4], &vars, 1);
        let fit = fit_variance_rate(&linear).unwrap();
        assert_eq!(detect_inflection(&linear, &fit, 0.5), None);

        let vars: Vec<f64> =
            (1..=7).map(|l| if l <= 4 { (-3.0 * l as f64).exp2() } else { (-1.5 * l as f64).exp2() }).collect();
        let bent = stats_from(&[1.0; 7], &vars, 1);
        assert_eq!(detect_inflection(&bent, &fit, 0.5), Some(5));
        assert_eq!(detect_inflection(&bent[..6], &fit, 10.0), None);
    }

    #[test]
    fn variance_table_examples() {
        let cc = ClarkCameron::default();
        let sampler = CouplingSampler { problem: Problem::new(&cc, Payoff::CosU, 1.0), scheme: LevelScheme::Gs };
        let w = Workers::global();
        let noise = NoiseSource::new(8);
        let pure = variance_table(&w, &sampler, 3, 3, 2.0, 2000, noise, 1).unwrap();
        let direct = pilot_stats(&w, &sampler, &[0, 1, 2, 3], 2000, noise, 1).unwrap();
        assert_eq!(pure, direct.iter().map(|s| s.variance).collect::<Vec<_>>());

        let t = variance_table(&w, &sampler, 4, 2, 2.0, 2000, noise, 1).unwrap();
        assert_eq!(t.len(), 5);
        assert_eq!(t[4], t[2] / 16.0);

        let c = |_l: u32, _s: &RngStream| Ok(1.0);
        assert_eq!(variance_table(&w, &c, 4, 2, 2.0, 100, noise, 1).unwrap(), vec![0.0; 5]);
        assert!(variance_table(&w, &c, 2, 3, 2.0, 100, noise, 1).is_err());
    }
}
