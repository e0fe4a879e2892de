//! Hallucination lower bounds.
//!
//! Two bounds share the same shape, monofact rate minus penalties:
//!
//! * population form: `mf - Mis(g,p) - 3e^-m/delta - sqrt(6 ln(6/delta)/n)`
//! * empirical form:  `mf - sqrt(KL/2) - 3e^-m/delta - sqrt(6 ln(12/delta)/n)
//!   - sqrt(ln(4b/delta)/(2n))`
//!
//! The empirical form splits the failure budget evenly between the
//! population bound and the bin-frequency deviation, which is where the
//! `12/delta` comes from. Negative values are vacuous and reported as-is.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default sparsity parameter `m`.
pub const DEFAULT_SPARSITY: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Population,
    EmpiricalKl,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    pub kind: BoundKind,
    pub mf: f64,
    /// `Mis(g,p)` for the population form, `sqrt(KL/2)` for the empirical one.
    pub penalty_mis: f64,
    pub sparsity_term: f64,
    pub sampling_term_a: f64,
    /// Bin-frequency deviation; zero for the population form.
    pub sampling_term_b: f64,
    pub bound_value: f64,
    pub m: f64,
    pub n: usize,
    /// Number of bins; only meaningful for the empirical form.
    pub b: Option<usize>,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub holds: bool,
    /// `f_gen - bound_value`.
    pub slack: f64,
}

fn check_unit(name: &'static str, x: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::invalid(name, format!("{x} is not in [0, 1]")));
    }
    Ok(())
}

fn check_common(mf: f64, m: f64, n: usize, delta: f64) -> Result<()> {
    check_unit("mf", mf)?;
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::invalid("m", format!("{m} must be > 0")));
    }
    if n == 0 {
        return Err(Error::invalid("n", "n must be at least 1"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("delta", format!("{delta} is not in (0, 1)")));
    }
    Ok(())
}

pub fn sparsity_term(m: f64, delta: f64) -> f64 {
    3.0 * (-m).exp() / delta
}

/// `sqrt(6 ln(c / delta') / n)`.
pub fn sampling_term_a(c_over_delta: f64, n: usize) -> f64 {
    (6.0 * c_over_delta.ln() / n as f64).sqrt()
}

/// `sqrt(ln(4b / delta) / (2n))`.
pub fn sampling_term_b(b: usize, n: usize, delta: f64) -> f64 {
    ((4.0 * b as f64 / delta).ln() / (2.0 * n as f64)).sqrt()
}

/// Population-miscalibration bound.
pub fn kv_bound(mf: f64, mis: f64, m: f64, n: usize, delta: f64) -> Result<BoundTerms> {
    check_common(mf, m, n, delta)?;
    check_unit("mis", mis)?;
    let sparsity = sparsity_term(m, delta);
    let sampling_a = sampling_term_a(6.0 / delta, n);
    Ok(BoundTerms {
        kind: BoundKind::Population,
        mf,
        penalty_mis: mis,
        sparsity_term: sparsity,
        sampling_term_a: sampling_a,
        sampling_term_b: 0.0,
        bound_value: mf - mis - sparsity - sampling_a,
        m,
        n,
        b: None,
        delta,
    })
}

/// Empirical bin-wise KL bound. An infinite `kl` yields a bound of `-inf`.
pub fn kl_bound(mf: f64, kl: f64, b: usize, m: f64, n: usize, delta: f64) -> Result<BoundTerms> {
    check_common(mf, m, n, delta)?;
    if kl.is_nan() || kl < 0.0 {
        return Err(Error::invalid("kl", format!("{kl} must be >= 0")));
    }
    if b < 2 {
        return Err(Error::invalid("b", format!("{b} bins; need at least 2")));
    }
    let penalty = (0.5 * kl).sqrt();
    let sparsity = sparsity_term(m, delta);
    let sampling_a = sampling_term_a(12.0 / delta, n);
    let sampling_b = sampling_term_b(b, n, delta);
    Ok(BoundTerms {
        kind: BoundKind::EmpiricalKl,
        mf,
        penalty_mis: penalty,
        sparsity_term: sparsity,
        sampling_term_a: sampling_a,
        sampling_term_b: sampling_b,
        bound_value: mf - penalty - sparsity - sampling_a - sampling_b,
        m,
        n,
        b: Some(b),
        delta,
    })
}

/// The bound holds when the measured hallucination rate is at least the
/// bound value.
pub fn check_bound(terms: &BoundTerms, f_gen: f64) -> Result<BoundCheck> {
    check_unit("f_gen", f_gen)?;
    Ok(BoundCheck {
        holds: f_gen >= terms.bound_value,
        slack: f_gen - terms.bound_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn population_bound_arithmetic() {
        let t = kv_bound(0.5, 0.0, 20.0, 1_000_000, 0.01).unwrap();
        assert!((t.bound_value - 0.4938040949025759).abs() < 1e-12);
        assert_eq!(
            t.bound_value,
            t.mf - t.penalty_mis - t.sparsity_term - t.sampling_term_a - t.sampling_term_b
        );
    }

    #[test]
    fn cancellation_approaches_zero_from_below() {
        let t = kv_bound(0.4, 0.4, 60.0, usize::MAX / 2, 0.5).unwrap();
        assert!(t.bound_value < 0.0 && t.bound_value > -1e-6);
    }

    #[test]
    fn shrinking_delta_drives_bound_down() {
        let mut prev = f64::INFINITY;
        for delta in [0.5, 0.1, 1e-2, 1e-4, 1e-8, 1e-16] {
            let v = kv_bound(0.5, 0.1, 10.0, 5000, delta).unwrap().bound_value;
            assert!(v < prev);
            prev = v;
        }
        assert!(prev < -1e6);
    }

    #[test]
    fn empirical_bound_arithmetic() {
        let t = kl_bound(0.3, 0.02, 197, 10.0, 5000, 0.05).unwrap();
        assert!((t.bound_value - 0.08508978365013425).abs() < 1e-12);
        let t = kl_bound(0.3, 0.0, 2, 80.0, 1 << 50, 0.5).unwrap();
        assert!((t.bound_value - 0.3).abs() < 1e-6);
        assert!((sampling_term_b(200, 100_000, 0.01) - 0.0075).abs() < 1e-4);
    }

    #[test]
    fn penalties_worsen_monotonically() {
        let base = kl_bound(0.5, 0.1, 50, 10.0, 5000, 0.05).unwrap().bound_value;
        assert!(kl_bound(0.5, 0.2, 50, 10.0, 5000, 0.05).unwrap().bound_value < base);
        assert!(kl_bound(0.5, 0.1, 100, 10.0, 5000, 0.05).unwrap().bound_value < base);
        assert!(kl_bound(0.5, 0.1, 50, 5.0, 5000, 0.05).unwrap().bound_value < base);
        assert!(kl_bound(0.5, 0.1, 50, 10.0, 2500, 0.05).unwrap().bound_value < base);
        assert!(kl_bound(0.5, 0.1, 50, 10.0, 5000, 0.01).unwrap().bound_value < base);
        let pop = kv_bound(0.5, 0.1, 10.0, 5000, 0.05).unwrap().bound_value;
        assert!(kv_bound(0.5, 0.2, 10.0, 5000, 0.05).unwrap().bound_value < pop);
    }

    #[test]
    fn parameter_validation() {
        assert!(kv_bound(1.2, 0.0, 10.0, 10, 0.1).is_err());
        assert!(kv_bound(0.5, -0.1, 10.0, 10, 0.1).is_err());
        assert!(kv_bound(0.5, 0.1, 0.0, 10, 0.1).is_err());
        assert!(kv_bound(0.5, 0.1, 10.0, 0, 0.1).is_err());
        assert!(kv_bound(0.5, 0.1, 10.0, 10, 1.0).is_err());
        assert!(kl_bound(0.5, -1.0, 10, 10.0, 10, 0.1).is_err());
        assert!(kl_bound(0.5, 0.1, 1, 10.0, 10, 0.1).is_err());
        let inf = kl_bound(0.5, f64::INFINITY, 10, 10.0, 10, 0.1).unwrap();
        assert_eq!(inf.bound_value, f64::NEG_INFINITY);
    }

    #[test]
    fn check_semantics() {
        let t = kv_bound(0.1, 0.5, 10.0, 100, 0.05).unwrap();
        assert!(t.bound_value <= 0.0);
        assert!(check_bound(&t, 0.0).unwrap().holds);
        let t = kv_bound(0.9, 0.0, 30.0, 1 << 40, 0.5).unwrap();
        let c = check_bound(&t, t.bound_value).unwrap();
        assert!(c.holds && c.slack == 0.0);
        assert!(!check_bound(&t, 0.1).unwrap().holds);
        assert!(check_bound(&t, 1.5).is_err());
    }
}
