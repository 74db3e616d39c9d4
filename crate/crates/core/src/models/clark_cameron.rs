use super::{SdeModel, StateVector};
use crate::error::Result;

/// Clark-Cameron SDE with drift:
///
/// ```text
/// dU = S dW¹
/// dS = μ dt + dW²
/// ```
///
/// State is `(u, s)`. `σ¹ = (s, 0)`, `σ² = (0, 1)` and the Stratonovich
/// drift equals the Itô drift `(0, μ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClarkCameron {
    pub mu: f64,
    pub u0: f64,
    pub s0: f64,
}

impl ClarkCameron {
    pub fn new(mu: f64, u0: f64, s0: f64) -> Self {
        ClarkCameron { mu, u0, s0 }
    }
}

impl Default for ClarkCameron {
    fn default() -> Self {
        ClarkCameron::new(1.0, 0.0, 0.0)
    }
}

impl SdeModel for ClarkCameron {
    fn state_dim(&self) -> usize {
        2
    }

    fn noise_dim(&self) -> usize {
        2
    }

    fn initial_state(&self) -> StateVector {
        StateVector::new(&[self.u0, self.s0])
    }

    fn drift(&self, _x: &[f64], out: &mut [f64]) -> Result<()> {
        out[0] = 0.0;
        out[1] = self.mu;
        Ok(())
    }

    fn diffusion(&self, j: usize, x: &[f64], out: &mut [f64]) -> Result<()> {
        if j == 0 {
            out[0] = x[1];
            out[1] = 0.0;
        } else {
            out[0] = 0.0;
            out[1] = 1.0;
        }
        Ok(())
    }

    fn jacobian_product(&self, j: usize, m: usize, _x: &[f64], out: &mut [f64]) -> Result<()> {
        // only ∂σ¹ is nonzero, [[0, 1], [0, 0]]
        out[0] = if j == 0 && m == 1 { 1.0 } else { 0.0 };
        out[1] = 0.0;
        Ok(())
    }

    fn stratonovich_drift(&self, _x: &[f64], out: &mut [f64]) -> Result<()> {
        out[0] = 0.0;
        out[1] = self.mu;
        Ok(())
    }

    fn drift_flow(&self, x: &mut [f64], t: f64) -> Result<()> {
        x[1] += self.mu * t;
        Ok(())
    }

    fn diffusion_flow(&self, j: usize, x: &mut [f64], w: f64) -> Result<()> {
        if j == 0 {
            x[0] += x[1] * w;
        } else {
            x[1] += w;
        }
        Ok(())
    }
}
