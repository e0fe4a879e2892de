//! Hallucination measurement and the two-sample Kolmogorov–Smirnov test.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{Fact, FactUniverse};
use crate::error::{Error, Result};
use crate::ngram::GenerationSet;

/// Significance threshold applied to KS p-values.
pub const KS_SIGNIFICANCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct HallucinationResult {
    pub f_gen: f64,
    /// Generated statements outside the truth set, with multiplicity.
    pub hallucinated: Vec<Fact>,
    pub total: usize,
}

pub fn hallucination_rate(generated: &GenerationSet, truth: &FactUniverse) -> Result<HallucinationResult> {
    if generated.is_empty() {
        return Err(Error::EmptySample("generation set is empty"));
    }
    let hallucinated: Vec<Fact> = generated
        .statements
        .iter()
        .filter(|s| !truth.contains(s))
        .cloned()
        .collect();
    Ok(HallucinationResult {
        f_gen: hallucinated.len() as f64 / generated.len() as f64,
        hallucinated,
        total: generated.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub d_statistic: f64,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
}

impl KsResult {
    pub fn significant(&self) -> bool {
        self.p_value < KS_SIGNIFICANCE
    }
}

/// Largest gap between the two empirical CDFs, evaluated at every pooled
/// point (ties in both samples are stepped over together).
fn ks_statistic(xs: &[f64], ys: &[f64]) -> f64 {
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n1 - j as f64 / n2).abs());
    }
    d
}

/// Survival function of the Kolmogorov distribution, `P(K > lambda)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Jacobi theta form converges fast for small arguments.
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        let mut cdf = 0.0;
        for k in 1..=20 {
            let m = (2 * k - 1) as f64;
            cdf += (-m * m * pi2 / (8.0 * lambda * lambda)).exp();
        }
        cdf *= (2.0 * std::f64::consts::PI).sqrt() / lambda;
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        let mut sum = 0.0;
        let mut sign = 1.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            sum += sign * term;
            if term < 1e-17 {
                break;
            }
            sign = -sign;
        }
        (2.0 * sum).clamp(0.0, 1.0)
    }
}

/// Two-sided two-sample KS test. The p-value uses the asymptotic
/// Kolmogorov distribution at `(sqrt(ne) + 0.12 + 0.11/sqrt(ne)) * D` with
/// effective size `ne = n1 n2 / (n1 + n2)`.
pub fn ks_two_sample(xs: &[f64], ys: &[f64]) -> Result<KsResult> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::EmptySample("KS test needs two non-empty samples"));
    }
    if xs.iter().chain(ys).any(|v| v.is_nan()) {
        return Err(Error::invalid("ks", "samples contain NaN"));
    }
    let d = ks_statistic(xs, ys);
    let (n1, n2) = (xs.len(), ys.len());
    let ne = (n1 * n2) as f64 / (n1 + n2) as f64;
    let sq = ne.sqrt();
    let p = kolmogorov_sf((sq + 0.12 + 0.11 / sq) * d);
    Ok(KsResult {
        d_statistic: d,
        p_value: p,
        n1,
        n2,
    })
}

/// Rows of `config_id, d, p, significant@0.01`.
pub fn write_ks_csv<'a, W: Write>(writer: W, rows: impl IntoIterator<Item = (&'a str, &'a KsResult)>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["config_id", "d", "p", "significant@0.01"])?;
    for (id, r) in rows {
        w.write_record([
            id.to_string(),
            r.d_statistic.to_string(),
            r.p_value.to_string(),
            r.significant().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}
