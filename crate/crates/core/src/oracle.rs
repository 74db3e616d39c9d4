//! Closed-form reference values for the Clark-Cameron model.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Published closed form for the second moment of `Z_NV^l` with `f(u, s) = u²`.
    PublishedClosedForm,
    /// `E[U_T²]` by the Itô isometry.
    ItoIsometry,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleValue {
    pub value: f64,
    pub provenance: Provenance,
}

// Coefficients of E[(Z_NV^l)²], kept as exact rationals.
const C4_MU4: (i64, i64) = (3, 16);
const C4_MU2: (i64, i64) = (9, 16);
const C3_MU2: (i64, i64) = (11, 64);
const C3_MU0: (i64, i64) = (1545, 512);
const C2_MU0: (i64, i64) = (163, 1024);

fn rational(c: (i64, i64)) -> f64 {
    c.0 as f64 / c.1 as f64
}

/// `E[(Z_NV^l)²]` for Clark-Cameron started at `(0, 0)` with `f(u, s) = u²`:
///
/// ```text
/// 2^{−4l}(3/16 μ⁴T⁶ + 9/16 μ²T⁵) + 2^{−3l}(11/64 μ²T⁵ + 1545/512 T⁴) + 2^{−2l}(163/1024 T⁴)
/// ```
///
/// Every coefficient is a dyadic rational, so each term is exact in
/// binary; rounding only enters through the powers of `μ` and `T` and
/// the final sums.
///
/// Simulation does not reproduce these coefficients beyond the `μ⁴` term
/// (at `l = 1, μ = T = 1` the level sample gives about 0.5117, not 0.4854);
/// the value is kept as published and `oracle-check` reports the mismatch.
pub fn znv_second_moment(level: u32, mu: f64, horizon: f64) -> OracleValue {
    let p = 0.5f64.powi(level as i32);
    let (p2, p3, p4) = (p * p, p * p * p, p * p * p * p);
    let mu2 = mu * mu;
    let t4 = horizon.powi(4);
    let t5 = t4 * horizon;
    let t6 = t5 * horizon;
    let quartic = rational(C4_MU4) * mu2 * mu2 * t6 + rational(C4_MU2) * mu2 * t5;
    let cubic = rational(C3_MU2) * mu2 * t5 + rational(C3_MU0) * t4;
    let quadratic = rational(C2_MU0) * t4;
    // smallest terms first
    let value = p4 * quartic + (p3 * cubic + p2 * quadratic);
    OracleValue { value, provenance: Provenance::PublishedClosedForm }
}

/// `E[U_T²] = ∫₀ᵀ (s₀ + μt)² + t dt = s₀²T + s₀μT² + μ²T³/3 + T²/2`
/// for `U_T = ∫ S dW¹`, `S_t = s₀ + μt + W²_t`.
pub fn cc_exact_usq_mean(mu: f64, horizon: f64, s0: f64) -> OracleValue {
    let t = horizon;
    let value = s0 * s0 * t + s0 * mu * t * t + mu * mu * t * t * t / 3.0 + t * t / 2.0;
    OracleValue { value, provenance: Provenance::ItoIsometry }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_moment_spot_values() {
        assert_eq!(znv_second_moment(1, 1.0, 1.0).value, 0.4853515625);
        assert_eq!(znv_second_moment(1, 0.0, 1.0).value, 0.4169921875);
        assert_eq!(0.4169921875, (1545.0 + 163.0) / 4096.0);
    }

    #[test]
    fn second_moment_ratio_tends_to_a_quarter() {
        let r = znv_second_moment(40, 1.0, 1.0).value / znv_second_moment(39, 1.0, 1.0).value;
        assert!((r - 0.25).abs() < 1e-10);
        // large drift: leading 2^{−4l} term dominates at small l
        let r = znv_second_moment(2, 20.0, 1.0).value / znv_second_moment(1, 20.0, 1.0).value;
        assert!((r - 1.0 / 16.0).abs() < 2e-3, "{r}");
    }

    #[test]
    fn second_moment_is_a_polynomial_in_two_to_minus_l() {
        // evaluate by Horner in p = 2^{−l} with exact rationals and compare
        for l in 1..12 {
            for mu in [0.0f64, 1.0, 4.0, -2.5] {
                let p = 0.5f64.powi(l);
                let c4 = 3.0 / 16.0 * mu.powi(4) + 9.0 / 16.0 * mu * mu;
                let c3 = 11.0 / 64.0 * mu * mu + 1545.0 / 512.0;
                let c2 = 163.0 / 1024.0;
                let horner = ((c4 * p + c3) * p + c2) * p * p;
                let v = znv_second_moment(l as u32, mu, 1.0).value;
                assert!(((v - horner) / v).abs() < 4.0 * f64::EPSILON);
            }
        }
    }

    #[test]
    fn ito_isometry_values() {
        assert!((cc_exact_usq_mean(1.0, 1.0, 0.0).value - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(cc_exact_usq_mean(0.0, 1.0, 0.0).value, 0.5);
        assert_eq!(cc_exact_usq_mean(1.0, 0.0, 0.0).value, 0.0);
        assert_eq!(cc_exact_usq_mean(1.0, 1.0, 0.0).provenance, Provenance::ItoIsometry);
    }
}
