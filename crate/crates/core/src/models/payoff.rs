use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// Payoffs evaluated on the terminal state. All of them read only the first
/// coordinate `u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Payoff {
    CosU,
    USquared,
    UPlus,
    /// `exp(−rT) (exp(u) − 1)₊`, an at-the-money call when `S₀ = 1`.
    HestonCall {
        rate: f64,
        maturity: f64,
    },
}

impl Payoff {
    #[inline]
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let u = x[0];
        match *self {
            Payoff::CosU => u.cos(),
            Payoff::USquared => u * u,
            Payoff::UPlus => u.max(0.0),
            Payoff::HestonCall { rate, maturity } => (-rate * maturity).exp() * (u.exp() - 1.0).max(0.0),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Payoff::CosU => "cos-u",
            Payoff::USquared => "u-squared",
            Payoff::UPlus => "u-plus",
            Payoff::HestonCall { .. } => "heston-call",
        }
    }
}

impl fmt::Display for Payoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Payoff {
    type Err = Error;

    /// Parses a label. `heston-call` gets `r = 0.05, T = 1`; callers with
    /// other parameters build the variant directly.
    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "cos-u" => Ok(Payoff::CosU),
            "u-squared" => Ok(Payoff::USquared),
            "u-plus" => Ok(Payoff::UPlus),
            "heston-call" => Ok(Payoff::HestonCall { rate: 0.05, maturity: 1.0 }),
            other => Err(Error::InvalidArgument(format!("unknown payoff '{other}'"))),
        }
    }
}
