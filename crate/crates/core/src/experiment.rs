//! End-to-end trials and the sweeps built from them.
//!
//! A trial replicates the universe into a population, draws a training
//! sample, trains an n-gram model, generates from it and measures
//! calibration. Cells of a sweep are independent; each trial gets a
//! sub-seed derived from the master seed and the cell label, so results do
//! not depend on how work is scheduled.

use std::collections::HashMap;

use rand::seq::index;
use rayon::prelude::*;
use serde::Serialize;

use crate::biogen::{
    eval_free_generation, generate_biographies, make_forced_prompts, AttributeEvalResult, BioPools, BiographyCorpus,
    BiographyRecord, ForcedPrompt, TemplateSet,
};
use crate::bounds::{check_bound, kl_bound, kv_bound, BoundKind, BoundTerms};
use crate::calibration::{
    log_partition_with_floor, BinAccumulator, BinMasses, BinPartition, BinSlot, BinTally, CalibrationReport,
    DEFAULT_MASS_FLOOR,
};
use crate::config::{BinningConfig, BoundConfig, ExperimentConfig, UniverseConfig};
use crate::corpus::{
    ingest_tsv, monofact_rate, replicate, sample_training, synth_universe, Fact, FactSchema, FactUniverse, Population,
    ReplicationSpec, TrainingSample, TsvOptions,
};
use crate::error::{Error, Result};
use crate::ngram::{generate, train, upweight, NGramModel, SupportWalk};
use crate::seed::{derive, derive_indexed, rng_from_seed, StageSeeds};
use crate::stats::{hallucination_rate, ks_two_sample, KsResult};

pub fn build_universe(config: &ExperimentConfig) -> Result<FactUniverse> {
    match &config.universe {
        UniverseConfig::Synth {
            fields,
            pool_sizes,
            count,
        } => synth_universe(
            &FactSchema::new(fields.iter().cloned())?,
            pool_sizes,
            *count,
            derive(config.seed, "universe"),
        ),
        UniverseConfig::Tsv {
            path,
            fields,
            delimiter,
            skip_header,
        } => ingest_tsv(
            path,
            &FactSchema::new(fields.iter().cloned())?,
            &TsvOptions {
                delimiter: *delimiter,
                skip_header: *skip_header,
            },
        ),
    }
}

/// Calibration masses of one model against one population and sample.
#[derive(Debug, Clone)]
pub struct Measurement {
    pub partition: BinPartition,
    pub masses: BinMasses,
    pub support: SupportWalk,
}

impl Measurement {
    pub fn report(&self) -> CalibrationReport {
        CalibrationReport::from_masses(&self.partition, &self.masses)
    }
}

/// Bins the model's support, the population and the training sample by
/// model probability. Support statements below the partition's last edge
/// are not enumerated; their mass is credited to the last bin.
pub fn measure_calibration(
    model: &NGramModel,
    population: &Population,
    sample: &TrainingSample,
    binning: &BinningConfig,
) -> Result<Measurement> {
    let min_prob = match *binning {
        BinningConfig::Logarithmic { epsilon, floor } => log_partition_with_floor(epsilon, floor)?.last_bin_upper(),
        BinningConfig::Adaptive { .. } => DEFAULT_MASS_FLOOR,
    };
    let mut support_probs = Vec::new();
    let support = model.walk_support(min_prob, |_, g| support_probs.push(g));
    let partition = binning.partition(&support_probs)?;

    let mut acc = BinAccumulator::new(&partition);
    for &g in &support_probs {
        acc.add_item(g);
    }
    acc.add_untracked_mass(BinSlot::Bin(partition.len() - 1), support.pruned_mass);
    for (fact, _) in population.iter() {
        acc.add_truth(model.score(fact), population.prob(fact));
    }
    for (fact, count) in sample.fact_counts() {
        acc.add_sample(model.score(&fact), count as f64);
    }
    let masses = acc.finish();
    Ok(Measurement {
        partition,
        masses,
        support,
    })
}

/// Everything measured about one trained (and possibly upweighted) model.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub f_gen: f64,
    pub aborted: usize,
    pub measurement: Measurement,
}

pub fn evaluate(
    model: &NGramModel,
    universe: &FactUniverse,
    population: &Population,
    sample: &TrainingSample,
    config: &ExperimentConfig,
    generation_seed: u64,
) -> Result<Evaluation> {
    let generated = generate(model, config.generations, generation_seed)?;
    let f_gen = hallucination_rate(&generated, universe)?.f_gen;
    let measurement = measure_calibration(model, population, sample, &config.binning)?;
    Ok(Evaluation {
        f_gen,
        aborted: generated.aborted,
        measurement,
    })
}

/// Replicated population, training sample and baseline model of a trial.
#[derive(Debug, Clone)]
pub struct Baseline {
    pub seeds: StageSeeds,
    pub population: Population,
    pub sample: TrainingSample,
    pub model: NGramModel,
    pub monofact: f64,
}

pub fn baseline(
    universe: &FactUniverse,
    spec: &ReplicationSpec,
    config: &ExperimentConfig,
    sub_seed: u64,
) -> Result<Baseline> {
    let seeds = StageSeeds::from_master(sub_seed);
    let population = replicate(universe, spec, seeds.replication)?;
    let sample = sample_training(&population, config.n, seeds.sampling)?;
    let model = train(&sample, config.order)?;
    let monofact = monofact_rate(&sample);
    Ok(Baseline {
        seeds,
        population,
        sample,
        model,
        monofact,
    })
}

/// Number of bins entering the empirical bound: bins holding any mass,
/// at least two.
pub fn bins_used(masses: &BinMasses) -> usize {
    masses.nonempty_bins().max(2)
}

fn bound_pair(monofact: f64, masses: &BinMasses, config: &ExperimentConfig) -> Result<(BoundTerms, BoundTerms)> {
    let BoundConfig { m, delta } = config.bounds;
    let kv = kv_bound(monofact, masses.miscalibration(), m, config.n, delta)?;
    let kl = kl_bound(
        monofact,
        masses.empirical_kl().value,
        bins_used(masses),
        m,
        config.n,
        delta,
    )?;
    Ok((kv, kl))
}

fn cell_label(spec: &ReplicationSpec) -> String {
    spec.to_string()
}

fn with_cell<T>(cell: &str, trial: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Cell {
        cell: format!("{cell} trial {trial}"),
        source: Box::new(e),
    })
}

fn family_and_param(spec: &ReplicationSpec) -> (&'static str, f64) {
    match *spec {
        ReplicationSpec::Pareto { shape, .. } => ("pareto", shape),
        ReplicationSpec::Gaussian { mean, .. } => ("gaussian", mean),
        ReplicationSpec::Poisson { rate } => ("poisson", rate),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonofactRow {
    pub config_hash: String,
    pub cell_id: String,
    pub trial: usize,
    pub sub_seed: u64,
    pub family: &'static str,
    pub param: f64,
    pub monofact: f64,
    pub distinct_statements: usize,
    pub f_gen: f64,
    pub miscalibration: f64,
    pub empirical_tv: f64,
    pub kl: f64,
    pub kl_floored: f64,
    pub kl_infinite: bool,
    pub bins_used: usize,
    pub polarity: f64,
    pub bound_population: f64,
    pub bound_empirical: f64,
    pub population_holds: bool,
    pub empirical_holds: bool,
    pub empirical_slack: f64,
    pub support_statements: usize,
    pub pruned_mass: f64,
    pub aborted_generations: usize,
}

/// One full trial of the monofact sweep, with its measurement.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub row: MonofactRow,
    pub measurement: Measurement,
    pub bounds: (BoundTerms, BoundTerms),
}

pub fn run_trial(
    universe: &FactUniverse,
    spec: &ReplicationSpec,
    config: &ExperimentConfig,
    trial: usize,
) -> Result<TrialOutcome> {
    let cell = cell_label(spec);
    let sub_seed = derive_indexed(config.seed, &cell, trial as u64);
    with_cell(
        &cell,
        trial,
        (|| {
            let base = baseline(universe, spec, config, sub_seed)?;
            let eval = evaluate(
                &base.model,
                universe,
                &base.population,
                &base.sample,
                config,
                base.seeds.generation,
            )?;
            let masses = &eval.measurement.masses;
            let (kv, kl) = bound_pair(base.monofact, masses, config)?;
            let kv_check = check_bound(&kv, eval.f_gen)?;
            let kl_check = check_bound(&kl, eval.f_gen)?;
            let report = eval.measurement.report();
            let kl_div = masses.empirical_kl();
            let (family, param) = family_and_param(spec);
            let row = MonofactRow {
                config_hash: config.hash(),
                cell_id: cell.clone(),
                trial,
                sub_seed,
                family,
                param,
                monofact: base.monofact,
                distinct_statements: base.sample.fact_counts().len(),
                f_gen: eval.f_gen,
                miscalibration: masses.miscalibration(),
                empirical_tv: masses.empirical_tv(),
                kl: kl_div.value,
                kl_floored: kl_div.floored,
                kl_infinite: kl_div.infinite,
                bins_used: bins_used(masses),
                polarity: report.polarity_index,
                bound_population: kv.bound_value,
                bound_empirical: kl.bound_value,
                population_holds: kv_check.holds,
                empirical_holds: kl_check.holds,
                empirical_slack: kl_check.slack,
                support_statements: eval.measurement.support.visited,
                pruned_mass: eval.measurement.support.pruned_mass,
                aborted_generations: eval.aborted,
            };
            Ok(TrialOutcome {
                row,
                measurement: eval.measurement,
                bounds: (kv, kl),
            })
        })(),
    )
}

fn grid_jobs(specs: &[ReplicationSpec], trials: usize) -> Vec<(usize, usize)> {
    (0..specs.len())
        .flat_map(|c| (0..trials).map(move |t| (c, t)))
        .collect()
}

/// Every (replication setting, trial) pair of the configured grid.
pub fn sweep_trials(config: &ExperimentConfig) -> Result<Vec<TrialOutcome>> {
    config.validate()?;
    let universe = build_universe(config)?;
    let specs = config.replication.specs();
    grid_jobs(&specs, config.trials)
        .into_par_iter()
        .map(|(c, t)| run_trial(&universe, &specs[c], config, t))
        .collect()
}

pub fn sweep_monofact(config: &ExperimentConfig) -> Result<Vec<MonofactRow>> {
    Ok(sweep_trials(config)?.into_iter().map(|o| o.row).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundRow {
    pub config_hash: String,
    pub cell_id: String,
    pub trial: usize,
    pub sub_seed: u64,
    pub kind: BoundKind,
    pub monofact: f64,
    pub f_gen: f64,
    pub penalty: f64,
    pub sparsity_term: f64,
    pub sampling_term_a: f64,
    pub sampling_term_b: f64,
    pub bound_value: f64,
    pub bins: Option<usize>,
    pub m: f64,
    pub delta: f64,
    pub holds: bool,
    pub slack: f64,
}

/// Both bounds for every trial of the grid.
pub fn verify_bounds(config: &ExperimentConfig) -> Result<Vec<BoundRow>> {
    let mut rows = Vec::new();
    for o in sweep_trials(config)? {
        for terms in [o.bounds.0, o.bounds.1] {
            let check = check_bound(&terms, o.row.f_gen)?;
            rows.push(BoundRow {
                config_hash: o.row.config_hash.clone(),
                cell_id: o.row.cell_id.clone(),
                trial: o.row.trial,
                sub_seed: o.row.sub_seed,
                kind: terms.kind,
                monofact: o.row.monofact,
                f_gen: o.row.f_gen,
                penalty: terms.penalty_mis,
                sparsity_term: terms.sparsity_term,
                sampling_term_a: terms.sampling_term_a,
                sampling_term_b: terms.sampling_term_b,
                bound_value: terms.bound_value,
                bins: terms.b,
                m: terms.m,
                delta: terms.delta,
                holds: check.holds,
                slack: check.slack,
            });
        }
    }
    Ok(rows)
}

/// Fraction of rows of `kind` whose bound holds.
pub fn holds_rate(rows: &[BoundRow], kind: BoundKind) -> f64 {
    let of_kind: Vec<&BoundRow> = rows.iter().filter(|r| r.kind == kind).collect();
    if of_kind.is_empty() {
        return 0.0;
    }
    of_kind.iter().filter(|r| r.holds).count() as f64 / of_kind.len() as f64
}

/// Element-wise mean of per-trial masses over a shared partition.
pub fn mean_masses(masses: &[&BinMasses]) -> Result<BinMasses> {
    let first = masses.first().ok_or(Error::EmptySample("no trials to average"))?;
    let len = first.bins.len();
    if masses.iter().any(|m| m.bins.len() != len) {
        return Err(Error::LengthMismatch {
            expected: len,
            actual: masses.iter().map(|m| m.bins.len()).find(|&l| l != len).unwrap_or(len),
        });
    }
    let k = masses.len() as f64;
    let avg = |get: &dyn Fn(&BinMasses) -> &BinTally| {
        let mut t = BinTally::default();
        for m in masses {
            let x = get(m);
            t.g_mass += x.g_mass / k;
            t.p_mass += x.p_mass / k;
            t.p_hat_count += x.p_hat_count / k;
            t.item_count += x.item_count;
        }
        t
    };
    Ok(BinMasses {
        bins: (0..len).map(|i| avg(&|m: &BinMasses| &m.bins[i])).collect(),
        residual: avg(&|m: &BinMasses| &m.residual),
        items_exact: false,
    })
}

/// Trial-averaged per-bin report for every cell of the grid. Needs a
/// partition that is the same in every trial, i.e. logarithmic binning.
pub fn binwise(config: &ExperimentConfig) -> Result<Vec<(String, CalibrationReport)>> {
    if !matches!(config.binning, BinningConfig::Logarithmic { .. }) {
        return Err(Error::invalid("binning", "trial averages need logarithmic binning"));
    }
    let outcomes = sweep_trials(config)?;
    let mut out = Vec::new();
    for spec in config.replication.specs() {
        let cell = cell_label(&spec);
        let of_cell: Vec<&TrialOutcome> = outcomes.iter().filter(|o| o.row.cell_id == cell).collect();
        let masses: Vec<&BinMasses> = of_cell.iter().map(|o| &o.measurement.masses).collect();
        let mean = mean_masses(&masses)?;
        out.push((
            cell,
            CalibrationReport::from_masses(&of_cell[0].measurement.partition, &mean),
        ));
    }
    Ok(out)
}

/// Per-bin miscalibration and KL terms for bins holding mass in either of
/// two reports; a bin is kept or dropped for both together.
pub fn paired_bin_values(
    pre: &CalibrationReport,
    post: &CalibrationReport,
) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut out = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (a, b) in pre.all_bins().zip(post.all_bins()) {
        if a.is_empty() && b.is_empty() {
            continue;
        }
        out.0.push(a.miscalibration());
        out.1.push(b.miscalibration());
        out.2.push(a.kl_contribution());
        out.3.push(b.kl_contribution());
    }
    out
}

/// Picks `k` distinct training statements uniformly without replacement.
/// `k = n` selects the whole training multiset instead.
pub fn select_subset(sample: &TrainingSample, k: usize, seed: u64) -> Result<Vec<Fact>> {
    if k > sample.n() {
        return Err(Error::invalid(
            "k",
            format!("{k} exceeds the training sample size {}", sample.n()),
        ));
    }
    if k == sample.n() {
        return Ok(sample.statements().to_vec());
    }
    let mut distinct: Vec<Fact> = sample.fact_counts().into_iter().map(|(f, _)| f).collect();
    if k > distinct.len() {
        return Err(Error::invalid(
            "k",
            format!("{k} exceeds the {} distinct training statements", distinct.len()),
        ));
    }
    distinct.sort();
    let mut rng = rng_from_seed(seed);
    Ok(index::sample(&mut rng, distinct.len(), k)
        .iter()
        .map(|i| distinct[i].clone())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UpweightRow {
    pub config_hash: String,
    pub cell_id: String,
    pub trial: usize,
    pub sub_seed: u64,
    pub family: &'static str,
    pub param: f64,
    pub k: usize,
    pub weight: u64,
    pub monofact: f64,
    pub pre_f_gen: f64,
    pub post_f_gen: f64,
    pub pre_miscalibration: f64,
    pub post_miscalibration: f64,
    pub pre_kl: f64,
    pub post_kl: f64,
    pub pre_polarity: f64,
    pub post_polarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UpweightCell {
    pub config_hash: String,
    pub cell_id: String,
    pub param: f64,
    pub k: usize,
    pub weight: u64,
    pub trials: usize,
    pub monofact_mean: f64,
    pub pre_f_gen_mean: f64,
    pub post_f_gen_mean: f64,
    /// `1 - post / pre` of the mean hallucination rates.
    pub relative_reduction: f64,
    pub pre_miscalibration_mean: f64,
    pub post_miscalibration_mean: f64,
    pub ks_miscalibration_d: f64,
    pub ks_miscalibration_p: f64,
    pub ks_kl_d: f64,
    pub ks_kl_p: f64,
}

#[derive(Debug, Clone, Default)]
pub struct UpweightSweep {
    pub rows: Vec<UpweightRow>,
    pub cells: Vec<UpweightCell>,
}

struct InterventionResult {
    row: UpweightRow,
    bins: (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>),
}

fn upweight_trial(
    universe: &FactUniverse,
    spec: &ReplicationSpec,
    config: &ExperimentConfig,
    trial: usize,
) -> Result<Vec<InterventionResult>> {
    let cell = format!("upweight/{}", cell_label(spec));
    let sub_seed = derive_indexed(config.seed, &cell, trial as u64);
    with_cell(
        &cell,
        trial,
        (|| {
            let base = baseline(universe, spec, config, sub_seed)?;
            let pre = evaluate(
                &base.model,
                universe,
                &base.population,
                &base.sample,
                config,
                base.seeds.generation,
            )?;
            let pre_report = pre.measurement.report();
            let (family, param) = family_and_param(spec);
            let mut out = Vec::new();
            for &k in &config.upweight.subset_sizes {
                let subset = select_subset(
                    &base.sample,
                    k,
                    derive_indexed(base.seeds.selection, "subset", k as u64),
                )?;
                for &w in &config.upweight.weights {
                    let post = if subset.is_empty() {
                        pre.clone()
                    } else {
                        let model = upweight(&base.model, &subset, w)?;
                        evaluate(
                            &model,
                            universe,
                            &base.population,
                            &base.sample,
                            config,
                            base.seeds.generation,
                        )?
                    };
                    let post_report = post.measurement.report();
                    out.push(InterventionResult {
                        bins: paired_bin_values(&pre_report, &post_report),
                        row: UpweightRow {
                            config_hash: config.hash(),
                            cell_id: format!("{}/k={k}/w={w}", cell_label(spec)),
                            trial,
                            sub_seed,
                            family,
                            param,
                            k,
                            weight: w,
                            monofact: base.monofact,
                            pre_f_gen: pre.f_gen,
                            post_f_gen: post.f_gen,
                            pre_miscalibration: pre.measurement.masses.miscalibration(),
                            post_miscalibration: post.measurement.masses.miscalibration(),
                            pre_kl: pre.measurement.masses.empirical_kl().value,
                            post_kl: post.measurement.masses.empirical_kl().value,
                            pre_polarity: pre_report.polarity_index,
                            post_polarity: post_report.polarity_index,
                        },
                    });
                }
            }
            Ok(out)
        })(),
    )
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Upweighting grid: for every replication setting and trial, one baseline
/// and one intervention per (k, weight). KS tests compare pooled per-bin
/// values before and after the intervention.
pub fn sweep_upweight(config: &ExperimentConfig) -> Result<UpweightSweep> {
    config.validate()?;
    let universe = build_universe(config)?;
    let specs = config.upweight.replication.specs();
    let per_trial: Vec<Vec<InterventionResult>> = grid_jobs(&specs, config.trials)
        .into_par_iter()
        .map(|(c, t)| upweight_trial(&universe, &specs[c], config, t))
        .collect::<Result<_>>()?;

    let mut sweep = UpweightSweep::default();
    let mut grouped: HashMap<String, Vec<&InterventionResult>> = HashMap::new();
    let mut order = Vec::new();
    for r in per_trial.iter().flatten() {
        let entry = grouped.entry(r.row.cell_id.clone()).or_default();
        if entry.is_empty() {
            order.push(r.row.cell_id.clone());
        }
        entry.push(r);
    }
    for id in order {
        let group = &grouped[&id];
        let pooled = |pick: fn(&InterventionResult) -> &Vec<f64>| -> Vec<f64> {
            group.iter().flat_map(|r| pick(r).iter().copied()).collect()
        };
        let ks = |a: Vec<f64>, b: Vec<f64>| -> Result<KsResult> {
            if a.is_empty() {
                Ok(KsResult {
                    d_statistic: 0.0,
                    p_value: 1.0,
                    n1: 0,
                    n2: 0,
                })
            } else {
                ks_two_sample(&a, &b)
            }
        };
        let ks_mis = ks(pooled(|r| &r.bins.0), pooled(|r| &r.bins.1))?;
        let ks_kl = ks(pooled(|r| &r.bins.2), pooled(|r| &r.bins.3))?;
        let first = &group[0].row;
        let pre = mean(group.iter().map(|r| r.row.pre_f_gen));
        let post = mean(group.iter().map(|r| r.row.post_f_gen));
        sweep.cells.push(UpweightCell {
            config_hash: first.config_hash.clone(),
            cell_id: id.clone(),
            param: first.param,
            k: first.k,
            weight: first.weight,
            trials: group.len(),
            monofact_mean: mean(group.iter().map(|r| r.row.monofact)),
            pre_f_gen_mean: pre,
            post_f_gen_mean: post,
            relative_reduction: if pre > 0.0 { 1.0 - post / pre } else { 0.0 },
            pre_miscalibration_mean: mean(group.iter().map(|r| r.row.pre_miscalibration)),
            post_miscalibration_mean: mean(group.iter().map(|r| r.row.post_miscalibration)),
            ks_miscalibration_d: ks_mis.d_statistic,
            ks_miscalibration_p: ks_mis.p_value,
            ks_kl_d: ks_kl.d_statistic,
            ks_kl_p: ks_kl.p_value,
        });
    }
    sweep.rows = per_trial.into_iter().flatten().map(|r| r.row).collect();
    Ok(sweep)
}

/// Outputs of the biography pipeline.
#[derive(Debug, Clone)]
pub struct BiogenRun {
    pub corpus: BiographyCorpus,
    pub sample_monofact: f64,
    pub round_trip: AttributeEvalResult,
    pub corrupted: AttributeEvalResult,
    pub prompts: Vec<ForcedPrompt>,
}

pub fn run_biogen(config: &ExperimentConfig) -> Result<BiogenRun> {
    config.validate()?;
    let bc = &config.biogen;
    let pools = match &bc.pools_dir {
        Some(dir) => BioPools::from_dir(dir)?,
        None => BioPools::bundled(),
    };
    let seed = derive(config.seed, "biogen");
    let corpus = generate_biographies(&pools, bc.count, &bc.replication, seed)?;
    let sample = sample_training(&corpus.population()?, bc.sample_size, derive(seed, "sample"))?;
    let texts: Vec<&str> = corpus.records.iter().map(|r| r.text.as_str()).collect();
    let round_trip = eval_free_generation(&texts, &corpus.records)?;

    let mut rng = rng_from_seed(derive(seed, "corruption"));
    let picks = index::sample(&mut rng, corpus.records.len(), bc.corrupt_count);
    let mut corrupted_texts: Vec<String> = texts.iter().map(|t| t.to_string()).collect();
    let templates = TemplateSet::bundled();
    for i in picks.iter() {
        let r = &corpus.records[i];
        let mut attrs = r.attributes.clone();
        let replacement = pools
            .alternative(bc.corrupt_field, attrs.get(bc.corrupt_field), &mut rng)
            .ok_or_else(|| Error::invalid("biogen", format!("the {} pool has a single value", bc.corrupt_field)))?;
        attrs.set(bc.corrupt_field, replacement);
        corrupted_texts[i] = BiographyRecord::new(attrs, r.template_ids, templates)?.text;
    }
    let corrupted = eval_free_generation(&corrupted_texts, &corpus.records)?;
    let prompts = make_forced_prompts(&corpus.records);
    Ok(BiogenRun {
        sample_monofact: monofact_rate(&sample),
        corpus,
        round_trip,
        corrupted,
        prompts,
    })
}
