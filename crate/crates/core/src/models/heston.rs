use super::{SdeModel, StateVector};
use crate::error::{Error, Result};

/// What to do when a coefficient needs `√v` and the variance went negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NegativeVariancePolicy {
    /// Abort the sample with [`Error::NegativeSqrtArgument`].
    #[default]
    Error,
    /// Use `√max(v, 0)`.
    Reflect,
}

/// Heston model in log-price, uncorrelated Brownian motions:
///
/// ```text
/// dU = (r − V/2) dt + √V dW¹
/// dV = κ(θ − V) dt + σ √V dW²
/// ```
///
/// State is `(u, v)`. Construction requires `ξ = θ − σ²/(4κ) ≥ 0`, which
/// keeps the Ninomiya-Victoir variance nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct Heston {
    pub r: f64,
    pub kappa: f64,
    pub theta: f64,
    pub sigma: f64,
    pub u0: f64,
    pub v0: f64,
    pub policy: NegativeVariancePolicy,
    xi: f64,
}

impl Heston {
    pub fn new(r: f64, kappa: f64, theta: f64, sigma: f64, u0: f64, v0: f64) -> Result<Self> {
        let all_finite = [r, kappa, theta, sigma, u0, v0].iter().all(|p| p.is_finite());
        if !all_finite {
            return Err(Error::InvalidModel("non-finite Heston parameter".into()));
        }
        if kappa <= 0.0 || sigma <= 0.0 || theta <= 0.0 {
            return Err(Error::InvalidModel("kappa, theta and sigma must be positive".into()));
        }
        if v0 <= 0.0 {
            return Err(Error::InvalidModel(format!("v0 must be positive, got {v0}")));
        }
        if 2.0 * kappa * theta < sigma * sigma {
            return Err(Error::InvalidModel(format!(
                "2·kappa·theta = {} < sigma² = {}",
                2.0 * kappa * theta,
                sigma * sigma
            )));
        }
        let xi = theta - sigma * sigma / (4.0 * kappa);
        if xi < 0.0 {
            return Err(Error::InvalidModel(format!("xi = {xi} < 0")));
        }
        Ok(Heston { r, kappa, theta, sigma, u0, v0, policy: NegativeVariancePolicy::Error, xi })
    }

    /// `S₀ = V₀ = 1, r = 0.05, κ = 0.5, θ = 0.9, σ = 0.05`.
    pub fn reference() -> Self {
        Heston::new(0.05, 0.5, 0.9, 0.05, 0.0, 1.0).expect("valid parameters")
    }

    pub fn with_policy(mut self, policy: NegativeVariancePolicy) -> Self {
        self.policy = policy;
        self
    }

    /// `ξ = θ − σ²/(4κ)`, the fixed point of the Stratonovich variance drift.
    pub fn xi(&self) -> f64 {
        self.xi
    }

    fn sqrt_v(&self, v: f64) -> Result<f64> {
        if v >= 0.0 {
            Ok(v.sqrt())
        } else {
            match self.policy {
                NegativeVariancePolicy::Error => Err(Error::NegativeSqrtArgument { value: v }),
                NegativeVariancePolicy::Reflect => Ok(0.0),
            }
        }
    }
}

impl SdeModel for Heston {
    fn state_dim(&self) -> usize {
        2
    }

    fn noise_dim(&self) -> usize {
        2
    }

    fn initial_state(&self) -> StateVector {
        StateVector::new(&[self.u0, self.v0])
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        out[0] = self.r - 0.5 * x[1];
        out[1] = self.kappa * (self.theta - x[1]);
        Ok(())
    }

    fn diffusion(&self, j: usize, x: &[f64], out: &mut [f64]) -> Result<()> {
        let sv = self.sqrt_v(x[1])?;
        if j == 0 {
            out[0] = sv;
            out[1] = 0.0;
        } else {
            out[0] = 0.0;
            out[1] = self.sigma * sv;
        }
        Ok(())
    }

    fn jacobian_product(&self, j: usize, m: usize, _x: &[f64], out: &mut [f64]) -> Result<()> {
        // ∂σ¹ = [[0, 1/(2√v)], [0, 0]], ∂σ² = [[0, 0], [0, σ/(2√v)]]; the √v cancel
        let (a, b) = match (j, m) {
            (0, 1) => (0.5 * self.sigma, 0.0),
            (1, 1) => (0.0, 0.5 * self.sigma * self.sigma),
            _ => (0.0, 0.0),
        };
        out[0] = a;
        out[1] = b;
        Ok(())
    }

    fn stratonovich_drift(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        out[0] = self.r - 0.5 * x[1];
        out[1] = self.kappa * (self.theta - x[1]) - 0.25 * self.sigma * self.sigma;
        Ok(())
    }

    fn drift_flow(&self, x: &mut [f64], t: f64) -> Result<()> {
        let decay = (-self.kappa * t).exp();
        let dv = x[1] - self.xi;
        x[0] += (self.r - 0.5 * self.xi) * t + dv * (decay - 1.0) / (2.0 * self.kappa);
        x[1] = dv * decay + self.xi;
        Ok(())
    }

    fn diffusion_flow(&self, j: usize, x: &mut [f64], w: f64) -> Result<()> {
        let sv = self.sqrt_v(x[1])?;
        if j == 0 {
            x[0] += sv * w;
        } else if w != 0.0 {
            let root = sv + 0.5 * self.sigma * w;
            x[1] = root * root;
        }
        Ok(())
    }
}
