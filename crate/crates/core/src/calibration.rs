//! Probability-bin partitions, miscalibration and bin-wise empirical KL.
//!
//! A partition splits (0, 1] into bins indexed by the model's own scores.
//! Items the model assigns zero probability fall into a separate residual
//! bin with no model mass, so the truth and sample columns still sum to one.
//!
//! Bin 0 is always the most confident bin.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::hash::Hash;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor used for the plottable variant of an infinite KL divergence.
pub const KL_FLOOR: f64 = 1e-12;

/// Logarithmic partitions stop adding bins once the upper edge reaches this.
pub const DEFAULT_MASS_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "lowercase")]
pub enum BinStrategy {
    Logarithmic { epsilon: f64, floor: f64 },
    Adaptive { bins: usize },
    Custom,
}

/// Which bin an item falls into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BinSlot {
    Bin(usize),
    /// Items with `g(x) = 0`.
    Residual,
}

impl fmt::Display for BinSlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BinSlot::Bin(i) => write!(f, "{i}"),
            BinSlot::Residual => f.write_str("residual"),
        }
    }
}

impl Serialize for BinSlot {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinPartition {
    strategy: BinStrategy,
    /// Descending: `edges[0] = 1`, last edge `0`. Bin `i` lies between
    /// `edges[i + 1]` and `edges[i]`.
    edges: Vec<f64>,
    /// `true` for `(lower, upper]` bins, `false` for `[lower, upper)` bins
    /// (bin 0 of a lower-closed partition also contains 1).
    upper_closed: bool,
    /// Bins known to hold none of the scores the partition was built from.
    #[serde(skip)]
    unoccupied: Vec<usize>,
}

/// Logarithmic bins `[(1-eps)^(i+1), (1-eps)^i)`, with bin 0 closed at 1.
/// Bins are added until the lower edge drops to `floor`; the last bin is
/// extended down to 0 so the partition covers all of (0, 1].
pub fn log_partition(epsilon: f64) -> Result<BinPartition> {
    log_partition_with_floor(epsilon, DEFAULT_MASS_FLOOR)
}

pub fn log_partition_with_floor(epsilon: f64, floor: f64) -> Result<BinPartition> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid("epsilon", format!("{epsilon} is not in (0, 1)")));
    }
    if !(floor > 0.0 && floor < 1.0) {
        return Err(Error::invalid("floor", format!("{floor} is not in (0, 1)")));
    }
    let ratio = 1.0 - epsilon;
    let mut edges = vec![1.0];
    let mut i = 1;
    loop {
        let lower = ratio.powi(i);
        if lower <= floor {
            break;
        }
        edges.push(lower);
        i += 1;
    }
    edges.push(0.0);
    Ok(BinPartition {
        strategy: BinStrategy::Logarithmic { epsilon, floor },
        edges,
        upper_closed: false,
        unoccupied: Vec::new(),
    })
}

/// Equal-mass partition over `b` bins: threshold `a_i` is the smallest
/// score whose cumulative mass (over all items scoring at most it) reaches
/// `i / b`. Items with equal scores always share a bin, so ties can leave
/// some bins empty; see [`BinPartition::degenerate_bins`].
pub fn adaptive_partition(probs: &[f64], b: usize) -> Result<BinPartition> {
    if b < 2 {
        return Err(Error::invalid(
            "b",
            format!("adaptive partitions need at least 2 bins, got {b}"),
        ));
    }
    if probs.is_empty() {
        return Err(Error::invalid("probs", "no probabilities to partition"));
    }
    if let Some(bad) = probs.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
        return Err(Error::invalid("probs", format!("{bad} is not in (0, 1]")));
    }
    let mut sorted = probs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let total: f64 = sorted.iter().sum();

    // (distinct value, cumulative mass up to and including it)
    let mut cumulative: Vec<(f64, f64)> = Vec::new();
    let mut acc = 0.0;
    for &p in &sorted {
        acc += p;
        match cumulative.last_mut() {
            Some(last) if last.0 == p => last.1 = acc,
            _ => cumulative.push((p, acc)),
        }
    }

    let mut thresholds = Vec::with_capacity(b - 1);
    for i in 1..b {
        let target = total * i as f64 / b as f64;
        let tol = 1e-12 * total;
        let a = cumulative
            .iter()
            .find(|(_, cum)| *cum >= target - tol)
            .map_or(sorted[sorted.len() - 1], |(v, _)| *v);
        thresholds.push(a);
    }
    let mut edges = vec![1.0];
    edges.extend(thresholds.iter().rev());
    edges.push(0.0);
    let mut partition = BinPartition {
        strategy: BinStrategy::Adaptive { bins: b },
        edges,
        upper_closed: true,
        unoccupied: Vec::new(),
    };
    let mut occupied = vec![false; partition.len()];
    for &(v, _) in &cumulative {
        if let BinSlot::Bin(i) = partition.bin_of(v) {
            occupied[i] = true;
        }
    }
    partition.unoccupied = (0..occupied.len()).filter(|&i| !occupied[i]).collect();
    Ok(partition)
}

impl BinPartition {
    /// Bins from explicit descending interior edges, as `(lower, upper]`.
    pub fn custom(interior: &[f64]) -> Result<Self> {
        let mut edges = vec![1.0];
        for &e in interior {
            if !(e > 0.0 && e < *edges.last().unwrap()) {
                return Err(Error::invalid(
                    "edges",
                    "interior edges must be strictly descending in (0, 1)",
                ));
            }
            edges.push(e);
        }
        edges.push(0.0);
        Ok(BinPartition {
            strategy: BinStrategy::Custom,
            edges,
            upper_closed: true,
            unoccupied: Vec::new(),
        })
    }

    pub fn strategy(&self) -> &BinStrategy {
        &self.strategy
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(lower, upper)` edges of bin `i`.
    pub fn bounds(&self, i: usize) -> (f64, f64) {
        (self.edges[i + 1], self.edges[i])
    }

    /// Bins whose interval is empty or that received none of the scores an
    /// adaptive partition was built from. Ties produce these when a single
    /// score carries more than `1/b` of the mass.
    pub fn degenerate_bins(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.edges[i + 1] >= self.edges[i] || self.unoccupied.contains(&i))
            .collect()
    }

    /// Scores strictly below this land in the last bin.
    pub fn last_bin_upper(&self) -> f64 {
        self.edges[self.edges.len() - 2]
    }

    pub fn bin_of(&self, g: f64) -> BinSlot {
        if g.is_nan() || g <= 0.0 {
            return BinSlot::Residual;
        }
        let k = if self.upper_closed {
            self.edges.partition_point(|&e| e >= g)
        } else {
            self.edges.partition_point(|&e| e > g)
        };
        BinSlot::Bin(k.saturating_sub(1).min(self.len() - 1))
    }
}

/// Per-bin tallies for the model, truth and sample columns.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BinTally {
    pub g_mass: f64,
    pub p_mass: f64,
    pub p_hat_count: f64,
    pub item_count: u64,
}

/// Accumulates masses bin by bin. Model mass, truth mass and sample
/// statements can be added independently, which lets callers stream a
/// model's support without materializing it.
#[derive(Debug, Clone)]
pub struct BinAccumulator<'a> {
    partition: &'a BinPartition,
    bins: Vec<BinTally>,
    residual: BinTally,
    sample_total: f64,
    items_exact: bool,
}

impl<'a> BinAccumulator<'a> {
    pub fn new(partition: &'a BinPartition) -> Self {
        BinAccumulator {
            partition,
            bins: vec![BinTally::default(); partition.len()],
            residual: BinTally::default(),
            sample_total: 0.0,
            items_exact: true,
        }
    }

    fn slot_mut(&mut self, slot: BinSlot) -> &mut BinTally {
        match slot {
            BinSlot::Bin(i) => &mut self.bins[i],
            BinSlot::Residual => &mut self.residual,
        }
    }

    /// One item of the model's support (or of the union of supports when
    /// `g` is zero) with model probability `g`.
    pub fn add_item(&mut self, g: f64) {
        let slot = self.partition.bin_of(g);
        let t = self.slot_mut(slot);
        t.g_mass += g.max(0.0);
        t.item_count += 1;
    }

    /// Model mass whose items were not enumerated individually. Item
    /// counts are no longer exact afterwards.
    pub fn add_untracked_mass(&mut self, slot: BinSlot, mass: f64) {
        if mass > 0.0 {
            self.slot_mut(slot).g_mass += mass;
            self.items_exact = false;
        }
    }

    /// Truth mass `p` of an item the model scores `g`.
    pub fn add_truth(&mut self, g: f64, p: f64) {
        let slot = self.partition.bin_of(g);
        self.slot_mut(slot).p_mass += p;
    }

    /// A training statement scored `g`, counted `weight` times.
    pub fn add_sample(&mut self, g: f64, weight: f64) {
        let slot = self.partition.bin_of(g);
        self.slot_mut(slot).p_hat_count += weight;
        self.sample_total += weight;
    }

    pub fn finish(self) -> BinMasses {
        let norm = |mut t: BinTally, total: f64| {
            if total > 0.0 {
                t.p_hat_count /= total;
            }
            t
        };
        let total = self.sample_total;
        BinMasses {
            bins: self.bins.into_iter().map(|t| norm(t, total)).collect(),
            residual: norm(self.residual, total),
            items_exact: self.items_exact,
        }
    }
}

/// Finished per-bin masses; `p_hat_count` holds the normalized frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct BinMasses {
    pub bins: Vec<BinTally>,
    pub residual: BinTally,
    pub items_exact: bool,
}

impl BinMasses {
    fn all(&self) -> impl Iterator<Item = &BinTally> {
        self.bins.iter().chain(std::iter::once(&self.residual))
    }

    /// `1/2 * sum_B |p(B) - g(B)|`, residual included.
    pub fn miscalibration(&self) -> f64 {
        (0.5 * self.all().map(|t| (t.p_mass - t.g_mass).abs()).sum::<f64>()).clamp(0.0, 1.0)
    }

    /// Total variation between the sample's bin frequencies and the model's
    /// bin masses.
    pub fn empirical_tv(&self) -> f64 {
        (0.5 * self.all().map(|t| (t.p_hat_count - t.g_mass).abs()).sum::<f64>()).clamp(0.0, 1.0)
    }

    pub fn empirical_kl(&self) -> KlDivergence {
        let mut value = 0.0;
        let mut floored = 0.0;
        let mut infinite = false;
        for t in self.all() {
            let (ph, g) = (t.p_hat_count, t.g_mass);
            if ph <= 0.0 {
                continue;
            }
            if g <= 0.0 {
                infinite = true;
            } else {
                value += ph * (ph / g).ln();
            }
            floored += ph * (ph / g.max(KL_FLOOR)).ln();
        }
        // Rounding can push a zero divergence slightly negative.
        KlDivergence {
            value: if infinite { f64::INFINITY } else { value.max(0.0) },
            floored: floored.max(0.0),
            infinite,
        }
    }

    /// Bins (residual included) holding any mass in any column.
    pub fn nonempty_bins(&self) -> usize {
        self.all()
            .filter(|t| t.g_mass > 0.0 || t.p_mass > 0.0 || t.p_hat_count > 0.0)
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlDivergence {
    /// Exact value; `inf` when a bin has sample mass but no model mass.
    #[serde(serialize_with = "ser_maybe_inf")]
    pub value: f64,
    /// Same sum with model bin masses floored at [`KL_FLOOR`].
    pub floored: f64,
    pub infinite: bool,
}

fn ser_maybe_inf<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str("inf")
    }
}

fn accumulate<'a, K: Hash + Eq>(
    partition: &'a BinPartition,
    g_probs: &HashMap<K, f64>,
    p_probs: Option<&HashMap<K, f64>>,
) -> BinAccumulator<'a> {
    let mut acc = BinAccumulator::new(partition);
    for &g in g_probs.values() {
        acc.add_item(g);
    }
    if let Some(p_probs) = p_probs {
        for (k, &p) in p_probs {
            let g = g_probs.get(k).copied().unwrap_or(0.0);
            if !g_probs.contains_key(k) {
                acc.add_item(0.0);
            }
            acc.add_truth(g, p);
        }
    }
    acc
}

/// Coarse miscalibration `1/2 * sum_B |p(B) - g(B)|` over the union of
/// supports.
pub fn miscalibration<K: Hash + Eq>(
    g_probs: &HashMap<K, f64>,
    p_probs: &HashMap<K, f64>,
    partition: &BinPartition,
) -> f64 {
    accumulate(partition, g_probs, Some(p_probs)).finish().miscalibration()
}

/// Per-item form `1/2 * sum_B sum_{x in B} |p(B)/|B| - g(x)|`. Never
/// smaller than [`miscalibration`]; equal when every item of a bin deviates
/// from the bin average in the same direction.
pub fn miscalibration_fine<K: Hash + Eq>(
    g_probs: &HashMap<K, f64>,
    p_probs: &HashMap<K, f64>,
    partition: &BinPartition,
) -> f64 {
    let masses = accumulate(partition, g_probs, Some(p_probs)).finish();
    let tally = |slot: BinSlot| match slot {
        BinSlot::Bin(i) => &masses.bins[i],
        BinSlot::Residual => &masses.residual,
    };
    let keys: HashSet<&K> = g_probs.keys().chain(p_probs.keys()).collect();
    let mut total = 0.0;
    for k in keys {
        let g = g_probs.get(k).copied().unwrap_or(0.0);
        let t = tally(partition.bin_of(g));
        total += (t.p_mass / t.item_count as f64 - g).abs();
    }
    0.5 * total
}

/// Bin-wise `sum_B p_hat_B * ln(p_hat_B / g_B)`, where `p_hat_B` is the
/// share of sample statements (with multiplicity) whose score falls in `B`.
pub fn empirical_kl<'s, K: Hash + Eq + 's>(
    sample: impl IntoIterator<Item = &'s K>,
    g_probs: &HashMap<K, f64>,
    partition: &BinPartition,
) -> KlDivergence {
    let mut acc = accumulate(partition, g_probs, None);
    for item in sample {
        acc.add_sample(g_probs.get(item).copied().unwrap_or(0.0), 1.0);
    }
    acc.finish().empirical_kl()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinStat {
    pub bin_id: BinSlot,
    pub lower: f64,
    pub upper: f64,
    pub g_mass: f64,
    pub p_mass: f64,
    pub p_hat_mass: f64,
    /// Items whose score falls in the bin; `None` when part of the bin's
    /// model mass was added without enumerating items.
    pub item_count: Option<u64>,
    /// `p_mass - g_mass`.
    pub signed_diff: f64,
}

impl BinStat {
    pub fn is_empty(&self) -> bool {
        self.g_mass <= 0.0 && self.p_mass <= 0.0 && self.p_hat_mass <= 0.0
    }

    /// This bin's share of the total miscalibration.
    pub fn miscalibration(&self) -> f64 {
        0.5 * self.signed_diff.abs()
    }

    /// This bin's term of the empirical KL sum (floored model mass).
    pub fn kl_contribution(&self) -> f64 {
        if self.p_hat_mass <= 0.0 {
            0.0
        } else {
            self.p_hat_mass * (self.p_hat_mass / self.g_mass.max(KL_FLOOR)).ln()
        }
    }
}

pub const POLARITY_DEFINITION: &str =
    "|sum of (p_mass - g_mass) over scored bins| / sum of |p_mass - g_mass| over scored bins; residual bin excluded";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub partition: BinStrategy,
    pub bins: Vec<BinStat>,
    pub residual: BinStat,
    pub miscalibration_total: f64,
    pub empirical_tv: f64,
    pub empirical_kl_total: KlDivergence,
    pub polarity_index: f64,
    pub polarity_definition: &'static str,
    /// Bins with mass in any column, residual included.
    pub nonempty_bins: usize,
}

impl CalibrationReport {
    pub fn from_masses(partition: &BinPartition, masses: &BinMasses) -> Self {
        let stat = |slot: BinSlot, (lower, upper): (f64, f64), t: &BinTally| BinStat {
            bin_id: slot,
            lower,
            upper,
            g_mass: t.g_mass,
            p_mass: t.p_mass,
            p_hat_mass: t.p_hat_count,
            item_count: masses.items_exact.then_some(t.item_count),
            signed_diff: t.p_mass - t.g_mass,
        };
        let bins: Vec<BinStat> = masses
            .bins
            .iter()
            .enumerate()
            .map(|(i, t)| stat(BinSlot::Bin(i), partition.bounds(i), t))
            .collect();
        let residual = stat(BinSlot::Residual, (0.0, 0.0), &masses.residual);
        let signed: f64 = bins.iter().map(|b| b.signed_diff).sum();
        let abs: f64 = bins.iter().map(|b| b.signed_diff.abs()).sum();
        let polarity_index = if abs > 0.0 { (signed.abs() / abs).min(1.0) } else { 0.0 };
        CalibrationReport {
            partition: *partition.strategy(),
            bins,
            residual,
            miscalibration_total: masses.miscalibration(),
            empirical_tv: masses.empirical_tv(),
            empirical_kl_total: masses.empirical_kl(),
            polarity_index,
            polarity_definition: POLARITY_DEFINITION,
            nonempty_bins: masses.nonempty_bins(),
        }
    }

    /// Regular bins followed by the residual bin.
    pub fn all_bins(&self) -> impl Iterator<Item = &BinStat> {
        self.bins.iter().chain(std::iter::once(&self.residual))
    }

    /// One row per bin: bin_id, lower, upper, g_mass, p_mass, p_hat_mass,
    /// signed_diff.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "bin_id",
            "lower",
            "upper",
            "g_mass",
            "p_mass",
            "p_hat_mass",
            "signed_diff",
        ])?;
        for b in self.all_bins() {
            w.write_record([
                b.bin_id.to_string(),
                b.lower.to_string(),
                b.upper.to_string(),
                b.g_mass.to_string(),
                b.p_mass.to_string(),
                b.p_hat_mass.to_string(),
                b.signed_diff.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    /// Totals and metadata without the per-bin table.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "partition": self.partition,
            "bins": self.bins.len(),
            "nonempty_bins": self.nonempty_bins,
            "miscalibration_total": self.miscalibration_total,
            "empirical_tv": self.empirical_tv,
            "empirical_kl_total": self.empirical_kl_total,
            "polarity_index": self.polarity_index,
            "polarity_definition": self.polarity_definition,
        })
    }
}

/// Full per-bin table plus totals for explicit probability maps.
pub fn binwise_report<'s, K: Hash + Eq + 's>(
    sample: impl IntoIterator<Item = &'s K>,
    g_probs: &HashMap<K, f64>,
    p_probs: &HashMap<K, f64>,
    partition: &BinPartition,
) -> CalibrationReport {
    let mut acc = accumulate(partition, g_probs, Some(p_probs));
    for item in sample {
        acc.add_sample(g_probs.get(item).copied().unwrap_or(0.0), 1.0);
    }
    CalibrationReport::from_masses(partition, &acc.finish())
}
