//! SDE models in Itô form `dX = b(X) dt + Σ_j σ^j(X) dW^j`.
//!
//! Every model also carries its Stratonovich drift
//! `σ⁰ = b − ½ Σ_j ∂σ^j σ^j` and closed-form flows of `σ⁰` and of each
//! diffusion column, which is all the Ninomiya-Victoir scheme needs. The
//! Giles-Szpruch scheme uses `b`, the columns `σ^j` and the products
//! `∂σ^j σ^m`.
//!
//! Vector field methods write into caller-provided slices so that the
//! stepping loops never allocate. Column indices are 0-based.

mod clark_cameron;
mod heston;
mod payoff;

pub use clark_cameron::ClarkCameron;
pub use heston::{Heston, NegativeVariancePolicy};
pub use payoff::Payoff;

use std::ops::{Deref, DerefMut};

use smallvec::SmallVec;

use crate::error::{Error, Result};

/// Largest state dimension the stepping loops keep on the stack.
pub const MAX_STATE_DIM: usize = 8;

/// A model state `x ∈ R^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(SmallVec<[f64; 4]>);

impl StateVector {
    pub fn new(coordinates: &[f64]) -> Self {
        StateVector(SmallVec::from_slice(coordinates))
    }

    pub fn zeros(n: usize) -> Self {
        StateVector(SmallVec::from_elem(0.0, n))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    pub fn norm_squared(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum()
    }
}

impl From<Vec<f64>> for StateVector {
    fn from(v: Vec<f64>) -> Self {
        StateVector(SmallVec::from_vec(v))
    }
}

impl Deref for StateVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for StateVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

pub trait SdeModel: Send + Sync {
    /// State dimension `n`.
    fn state_dim(&self) -> usize;

    /// Brownian dimension `d`.
    fn noise_dim(&self) -> usize;

    fn initial_state(&self) -> StateVector;

    /// Itô drift `b(x)`.
    fn drift(&self, x: &[f64], out: &mut [f64]) -> Result<()>;

    /// Diffusion column `σ^j(x)`.
    fn diffusion(&self, j: usize, x: &[f64], out: &mut [f64]) -> Result<()>;

    /// `∂σ^j σ^m (x)`: the Jacobian of column `j` applied to column `m`.
    fn jacobian_product(&self, j: usize, m: usize, x: &[f64], out: &mut [f64]) -> Result<()>;

    /// `σ⁰(x) = b(x) − ½ Σ_j ∂σ^j σ^j(x)`.
    ///
    /// Models with a closed form override this; the identity with
    /// [`SdeModel::drift`] is checked in tests.
    fn stratonovich_drift(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.state_dim();
        self.drift(x, out)?;
        let mut jp = [0.0; MAX_STATE_DIM];
        for j in 0..self.noise_dim() {
            self.jacobian_product(j, j, x, &mut jp[..n])?;
            for i in 0..n {
                out[i] -= 0.5 * jp[i];
            }
        }
        Ok(())
    }

    /// Replaces `x` by `exp(t σ⁰) x`.
    fn drift_flow(&self, x: &mut [f64], t: f64) -> Result<()>;

    /// Replaces `x` by `exp(w σ^j) x`.
    fn diffusion_flow(&self, j: usize, x: &mut [f64], w: f64) -> Result<()>;
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

fn check_state<M: SdeModel + ?Sized>(model: &M, x: &StateVector) -> Result<()> {
    check_dim(model.state_dim(), x.len())?;
    if !x.is_finite() {
        return Err(Error::InvalidArgument("state has non-finite coordinates".into()));
    }
    Ok(())
}

/// Checked, allocating form of [`SdeModel::stratonovich_drift`].
pub fn stratonovich_drift<M: SdeModel + ?Sized>(model: &M, x: &StateVector) -> Result<StateVector> {
    check_state(model, x)?;
    let mut out = StateVector::zeros(model.state_dim());
    model.stratonovich_drift(x, &mut out)?;
    Ok(out)
}

/// Checked, allocating form of [`SdeModel::drift`].
pub fn drift<M: SdeModel + ?Sized>(model: &M, x: &StateVector) -> Result<StateVector> {
    check_state(model, x)?;
    let mut out = StateVector::zeros(model.state_dim());
    model.drift(x, &mut out)?;
    Ok(out)
}

/// Checked, allocating form of [`SdeModel::diffusion`].
pub fn diffusion<M: SdeModel + ?Sized>(model: &M, j: usize, x: &StateVector) -> Result<StateVector> {
    check_state(model, x)?;
    check_column(model, j)?;
    let mut out = StateVector::zeros(model.state_dim());
    model.diffusion(j, x, &mut out)?;
    Ok(out)
}

/// Checked, allocating form of [`SdeModel::jacobian_product`].
pub fn jacobian_product<M: SdeModel + ?Sized>(model: &M, j: usize, m: usize, x: &StateVector) -> Result<StateVector> {
    check_state(model, x)?;
    check_column(model, j)?;
    check_column(model, m)?;
    let mut out = StateVector::zeros(model.state_dim());
    model.jacobian_product(j, m, x, &mut out)?;
    Ok(out)
}

/// `exp(t σ⁰) x`.
pub fn drift_flow<M: SdeModel + ?Sized>(model: &M, x: &StateVector, t: f64) -> Result<StateVector> {
    check_state(model, x)?;
    let mut out = x.clone();
    model.drift_flow(&mut out, t)?;
    Ok(out)
}

/// `exp(w σ^j) x`.
pub fn diffusion_flow<M: SdeModel + ?Sized>(model: &M, j: usize, x: &StateVector, w: f64) -> Result<StateVector> {
    check_state(model, x)?;
    check_column(model, j)?;
    let mut out = x.clone();
    model.diffusion_flow(j, &mut out, w)?;
    Ok(out)
}

fn check_column<M: SdeModel + ?Sized>(model: &M, j: usize) -> Result<()> {
    if j < model.noise_dim() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("column {j} out of range for noise dimension {}", model.noise_dim())))
    }
}

/// Model choice as read from configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    ClarkCameron(ClarkCameron),
    Heston(Heston),
}

impl ModelSpec {
    pub fn as_model(&self) -> &dyn SdeModel {
        match self {
            ModelSpec::ClarkCameron(m) => m,
            ModelSpec::Heston(m) => m,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ModelSpec::ClarkCameron(_) => "clark-cameron",
            ModelSpec::Heston(_) => "heston",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn models() -> Vec<Box<dyn SdeModel>> {
        vec![
            Box::new(ClarkCameron::new(1.0, 0.0, 0.0)),
            Box::new(ClarkCameron::new(-2.5, 0.3, 1.0)),
            Box::new(Heston::reference()),
            Box::new(Heston::new(0.01, 2.0, 0.04, 0.3, 0.0, 0.04).unwrap()),
        ]
    }

    fn random_state(model: &dyn SdeModel, rng: &mut ChaCha8Rng) -> StateVector {
        let mut x = model.initial_state();
        x[0] += rng.random_range(-2.0..2.0);
        // second coordinate is a variance for Heston, keep it positive
        x[1] = rng.random_range(0.05..3.0);
        x
    }

    #[test]
    fn stratonovich_identity_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for model in models() {
            let m = model.as_ref();
            for _ in 0..200 {
                let x = random_state(m, &mut rng);
                let s0 = stratonovich_drift(m, &x).unwrap();
                let b = drift(m, &x).unwrap();
                let mut rebuilt = s0.clone();
                for j in 0..m.noise_dim() {
                    let jp = jacobian_product(m, j, j, &x).unwrap();
                    for i in 0..m.state_dim() {
                        rebuilt[i] += 0.5 * jp[i];
                    }
                }
                for i in 0..m.state_dim() {
                    assert!((rebuilt[i] - b[i]).abs() <= 1e-12, "{rebuilt:?} vs {b:?}");
                }
            }
        }
    }

    #[test]
    fn jacobian_products_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let eps = 1e-6;
        for model in models() {
            let m = model.as_ref();
            let n = m.state_dim();
            for _ in 0..200 {
                let x = random_state(m, &mut rng);
                for j in 0..m.noise_dim() {
                    for k in 0..m.noise_dim() {
                        let dir = diffusion(m, k, &x).unwrap();
                        // central difference of σ^j along σ^k
                        let mut xp = x.clone();
                        let mut xm = x.clone();
                        for i in 0..n {
                            xp[i] += eps * dir[i];
                            xm[i] -= eps * dir[i];
                        }
                        let fp = diffusion(m, j, &xp).unwrap();
                        let fm = diffusion(m, j, &xm).unwrap();
                        let exact = jacobian_product(m, j, k, &x).unwrap();
                        for i in 0..n {
                            let fd = (fp[i] - fm[i]) / (2.0 * eps);
                            let scale = exact[i].abs().max(1.0);
                            assert!(
                                (fd - exact[i]).abs() <= 1e-6 * scale,
                                "j={j} k={k} i={i}: fd {fd} vs {}",
                                exact[i]
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn flows_at_zero_time_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for model in models() {
            let m = model.as_ref();
            let x = random_state(m, &mut rng);
            assert_eq!(drift_flow(m, &x, 0.0).unwrap(), x);
            for j in 0..m.noise_dim() {
                assert_eq!(diffusion_flow(m, j, &x, 0.0).unwrap(), x);
            }
        }
    }

    #[test]
    fn drift_flow_is_a_semigroup() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for model in models() {
            let m = model.as_ref();
            for _ in 0..50 {
                let x = random_state(m, &mut rng);
                let s = rng.random_range(0.0..1.0);
                let t = rng.random_range(0.0..1.0);
                let two = drift_flow(m, &drift_flow(m, &x, s).unwrap(), t).unwrap();
                let one = drift_flow(m, &x, s + t).unwrap();
                for i in 0..m.state_dim() {
                    assert!((two[i] - one[i]).abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn flows_are_tangent_to_their_vector_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for model in models() {
            let m = model.as_ref();
            let x = random_state(m, &mut rng);
            let n = m.state_dim();
            let mut fields = vec![stratonovich_drift(m, &x).unwrap()];
            for j in 0..m.noise_dim() {
                fields.push(diffusion(m, j, &x).unwrap());
            }
            for (idx, field) in fields.iter().enumerate() {
                let errs: Vec<f64> = [1e-2, 1e-3, 1e-4]
                    .iter()
                    .map(|&e| {
                        let y = if idx == 0 {
                            drift_flow(m, &x, e).unwrap()
                        } else {
                            diffusion_flow(m, idx - 1, &x, e).unwrap()
                        };
                        (0..n).map(|i| ((y[i] - x[i]) / e - field[i]).abs()).fold(0.0, f64::max)
                    })
                    .collect();
                // first order: each decade shrinks the error tenfold (or it is already at rounding level)
                for w in errs.windows(2) {
                    assert!(w[1] <= w[0] * 0.2 || w[1] < 1e-9, "{errs:?}");
                }
            }
        }
    }

    #[test]
    fn checked_api_rejects_wrong_dimension() {
        let m = ClarkCameron::new(1.0, 0.0, 0.0);
        let err = stratonovich_drift(&m, &StateVector::new(&[1.0, 2.0, 3.0])).unwrap_err();
        assert_eq!(err, Error::DimensionMismatch { expected: 2, got: 3 });
    }

    /// A model whose columns are constant: σ⁰ must coincide with b.
    struct ConstantColumns;

    impl SdeModel for ConstantColumns {
        fn state_dim(&self) -> usize {
            2
        }
        fn noise_dim(&self) -> usize {
            2
        }
        fn initial_state(&self) -> StateVector {
            StateVector::zeros(2)
        }
        fn drift(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
            out[0] = -x[0];
            out[1] = x[0] * x[1];
            Ok(())
        }
        fn diffusion(&self, j: usize, _x: &[f64], out: &mut [f64]) -> Result<()> {
            out[0] = 1.0 + j as f64;
            out[1] = 0.5;
            Ok(())
        }
        fn jacobian_product(&self, _j: usize, _m: usize, _x: &[f64], out: &mut [f64]) -> Result<()> {
            out.fill(0.0);
            Ok(())
        }
        fn drift_flow(&self, _x: &mut [f64], _t: f64) -> Result<()> {
            unimplemented!()
        }
        fn diffusion_flow(&self, _j: usize, _x: &mut [f64], _w: f64) -> Result<()> {
            unimplemented!()
        }
    }

    #[test]
    fn constant_columns_have_ito_drift_equal_to_stratonovich() {
        let x = StateVector::new(&[0.7, -1.3]);
        assert_eq!(stratonovich_drift(&ConstantColumns, &x).unwrap(), drift(&ConstantColumns, &x).unwrap());
    }
}
