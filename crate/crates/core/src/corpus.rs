//! Fact universes, replicated populations and training samples.
//!
//! A universe is the truth set: a deduplicated list of fixed-arity facts.
//! Replicating each fact a random number of times yields the population
//! distribution `p`; training samples are i.i.d. draws from that multiset.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::{Normal, Pareto, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

pub type Token = Arc<str>;

/// Ordered attribute labels shared by every fact of a universe.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactSchema {
    field_names: Vec<String>,
}

impl FactSchema {
    pub fn new<S: Into<String>>(fields: impl IntoIterator<Item = S>) -> Result<Self> {
        let field_names: Vec<String> = fields.into_iter().map(Into::into).collect();
        if field_names.is_empty() {
            return Err(Error::invalid("schema", "a schema needs at least one field"));
        }
        if field_names.iter().any(|f| f.trim().is_empty()) {
            return Err(Error::invalid("schema", "field names must be non-empty"));
        }
        Ok(FactSchema { field_names })
    }

    /// Actor, Co-star, Movie, Director, Genre, Year.
    pub fn movie() -> Self {
        FactSchema {
            field_names: ["Actor", "Co-star", "Movie", "Director", "Genre", "Year"]
                .into_iter()
                .map(String::from)
                .collect(),
        }
    }

    pub fn arity(&self) -> usize {
        self.field_names.len()
    }

    pub fn field_names(&self) -> &[String] {
        &self.field_names
    }
}

/// One statement: a tuple of atomic field tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fact(Vec<Token>);

impl Fact {
    pub fn new<S: AsRef<str>>(tokens: impl IntoIterator<Item = S>) -> Result<Self> {
        let tokens: Vec<Token> = tokens.into_iter().map(|t| Token::from(t.as_ref())).collect();
        if tokens.is_empty() {
            return Err(Error::invalid("fact", "a fact needs at least one token"));
        }
        if tokens.iter().any(|t| t.is_empty()) {
            return Err(Error::invalid("fact", "fact tokens must be non-empty"));
        }
        Ok(Fact(tokens))
    }

    pub(crate) fn from_tokens_unchecked(tokens: Vec<Token>) -> Self {
        Fact(tokens)
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Fact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            f.write_str(t)?;
        }
        Ok(())
    }
}

/// The truth set `T`.
#[derive(Debug, Clone)]
pub struct FactUniverse {
    schema: FactSchema,
    facts: Vec<Fact>,
    index: HashSet<Fact>,
}

impl FactUniverse {
    /// Builds a universe, silently collapsing duplicates. Order of first
    /// appearance is kept.
    pub fn new(schema: FactSchema, facts: impl IntoIterator<Item = Fact>) -> Result<Self> {
        let mut index = HashSet::new();
        let mut unique = Vec::new();
        for fact in facts {
            if fact.len() != schema.arity() {
                return Err(Error::LengthMismatch {
                    expected: schema.arity(),
                    actual: fact.len(),
                });
            }
            if index.insert(fact.clone()) {
                unique.push(fact);
            }
        }
        Ok(FactUniverse {
            schema,
            facts: unique,
            index,
        })
    }

    pub fn schema(&self) -> &FactSchema {
        &self.schema
    }

    pub fn facts(&self) -> &[Fact] {
        &self.facts
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn contains(&self, fact: &Fact) -> bool {
        self.index.contains(fact)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TsvOptions {
    pub delimiter: char,
    pub skip_header: bool,
}

impl Default for TsvOptions {
    fn default() -> Self {
        TsvOptions {
            delimiter: '\t',
            skip_header: false,
        }
    }
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Reads one fact per line. Fields are whitespace-normalized and
/// case-sensitive; blank lines are skipped.
pub fn ingest_tsv(path: &Path, schema: &FactSchema, options: &TsvOptions) -> Result<FactUniverse> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_tsv_reader(file, path, schema, options)
}

pub fn ingest_tsv_reader<R: Read>(
    reader: R,
    path: &Path,
    schema: &FactSchema,
    options: &TsvOptions,
) -> Result<FactUniverse> {
    let mut facts = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line_no == 1 && options.skip_header {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split(options.delimiter).map(normalize_ws).collect();
        if fields.len() != schema.arity() {
            return Err(Error::MalformedRow {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("expected {} fields, found {}", schema.arity(), fields.len()),
            });
        }
        if let Some(pos) = fields.iter().position(String::is_empty) {
            return Err(Error::MalformedRow {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("field `{}` is empty", schema.field_names()[pos]),
            });
        }
        facts.push(Fact::new(fields)?);
    }
    if facts.is_empty() {
        return Err(Error::EmptyInput(path.to_path_buf()));
    }
    FactUniverse::new(schema.clone(), facts)
}

/// Synthesizes `count` distinct facts whose i-th field is drawn uniformly
/// from a pool of `pool_sizes[i]` values named `<field>_<index>`.
pub fn synth_universe(schema: &FactSchema, pool_sizes: &[u64], count: usize, seed: u64) -> Result<FactUniverse> {
    if pool_sizes.len() != schema.arity() {
        return Err(Error::invalid(
            "pool_sizes",
            format!("{} pools for a {}-field schema", pool_sizes.len(), schema.arity()),
        ));
    }
    if pool_sizes.contains(&0) {
        return Err(Error::invalid("pool_sizes", "every pool needs at least one value"));
    }
    let capacity = pool_sizes
        .iter()
        .try_fold(1u128, |acc, &s| acc.checked_mul(u128::from(s)))
        .unwrap_or(u128::MAX);
    if count as u128 > capacity {
        return Err(Error::CapacityExceeded {
            requested: count as u128,
            capacity,
        });
    }

    let pools: Vec<Vec<Token>> = schema
        .field_names()
        .iter()
        .zip(pool_sizes)
        .map(|(name, &size)| {
            let width = size.saturating_sub(1).to_string().len();
            (0..size).map(|i| Token::from(format!("{name}_{i:0width$}"))).collect()
        })
        .collect::<Vec<_>>();

    let mut rng = rng_from_seed(seed);
    let mut seen = HashSet::with_capacity(count);
    let mut facts = Vec::with_capacity(count);

    // Dense requests are drawn without replacement over the index space;
    // sparse ones by rejection, which is faster when collisions are rare.
    if capacity <= 4 * count as u128 {
        let chosen = rand::seq::index::sample(&mut rng, capacity as usize, count);
        for mut code in chosen.into_iter() {
            let mut tokens = Vec::with_capacity(pools.len());
            for pool in pools.iter().rev() {
                tokens.push(pool[code % pool.len()].clone());
                code /= pool.len();
            }
            tokens.reverse();
            facts.push(Fact(tokens));
        }
    } else {
        while facts.len() < count {
            let tokens: Vec<Token> = pools
                .iter()
                .map(|pool| pool[rng.random_range(0..pool.len())].clone())
                .collect();
            let fact = Fact(tokens);
            if seen.insert(fact.clone()) {
                facts.push(fact);
            }
        }
    }
    FactUniverse::new(schema.clone(), facts)
}

/// Distribution of per-fact replication counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ReplicationSpec {
    Pareto { shape: f64, scale: f64 },
    Gaussian { mean: f64, std_dev: f64 },
    Poisson { rate: f64 },
}

impl ReplicationSpec {
    pub fn pareto(shape: f64) -> Self {
        ReplicationSpec::Pareto { shape, scale: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let finite_pos = |x: f64| x.is_finite() && x > 0.0;
        match *self {
            ReplicationSpec::Pareto { shape, scale } => {
                if !finite_pos(shape) {
                    return Err(Error::invalid("shape", format!("{shape} must be > 0")));
                }
                if !finite_pos(scale) {
                    return Err(Error::invalid("scale", format!("{scale} must be > 0")));
                }
            }
            ReplicationSpec::Gaussian { mean, std_dev } => {
                if !mean.is_finite() {
                    return Err(Error::invalid("mean", "must be finite"));
                }
                if !(std_dev.is_finite() && std_dev >= 0.0) {
                    return Err(Error::invalid("std_dev", format!("{std_dev} must be >= 0")));
                }
            }
            ReplicationSpec::Poisson { rate } => {
                if !finite_pos(rate) {
                    return Err(Error::invalid("rate", format!("{rate} must be > 0")));
                }
            }
        }
        Ok(())
    }

    fn sampler(&self) -> Result<CountSampler> {
        self.validate()?;
        Ok(match *self {
            ReplicationSpec::Pareto { shape, scale } => {
                CountSampler::Pareto(Pareto::new(scale, shape).map_err(|e| Error::invalid("pareto", e.to_string()))?)
            }
            ReplicationSpec::Gaussian { mean, std_dev } => CountSampler::Gaussian(
                Normal::new(mean, std_dev).map_err(|e| Error::invalid("gaussian", e.to_string()))?,
            ),
            ReplicationSpec::Poisson { rate } => {
                CountSampler::Poisson(Poisson::new(rate).map_err(|e| Error::invalid("poisson", e.to_string()))?)
            }
        })
    }
}

impl fmt::Display for ReplicationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ReplicationSpec::Pareto { shape, scale } => write!(f, "pareto(shape={shape}, scale={scale})"),
            ReplicationSpec::Gaussian { mean, std_dev } => {
                write!(f, "gaussian(mean={mean}, std_dev={std_dev})")
            }
            ReplicationSpec::Poisson { rate } => write!(f, "poisson(rate={rate})"),
        }
    }
}

enum CountSampler {
    Pareto(Pareto<f64>),
    Gaussian(Normal<f64>),
    Poisson(Poisson<f64>),
}

impl CountSampler {
    /// Every fact keeps support: a Pareto draw `X` becomes `floor(X)`,
    /// the ceiling of its excess `X - 1` over unit scale, so
    /// `P(count = 1) = 1 - 2^-shape`. Gaussian draws are rounded and anything
    /// below one is clamped to one.
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let x = match self {
            CountSampler::Pareto(d) => d.sample(rng).floor(),
            CountSampler::Gaussian(d) => d.sample(rng).round(),
            CountSampler::Poisson(d) => d.sample(rng),
        };
        // `as` saturates for out-of-range floats and maps NaN to 0.
        (x as u64).max(1)
    }
}

/// Multiset over facts; defines `p(x) = count(x) / total_mass`.
#[derive(Debug, Clone)]
pub struct Population {
    facts: Vec<Fact>,
    counts: Vec<u64>,
    total_mass: u64,
    index: HashMap<Fact, usize>,
}

impl Population {
    pub fn from_counts(entries: impl IntoIterator<Item = (Fact, u64)>) -> Result<Self> {
        let mut facts = Vec::new();
        let mut counts = Vec::new();
        let mut index = HashMap::new();
        let mut total_mass = 0u64;
        for (fact, count) in entries {
            if count == 0 {
                return Err(Error::invalid("count", format!("fact `{fact}` has count 0")));
            }
            total_mass = total_mass
                .checked_add(count)
                .ok_or_else(|| Error::invalid("count", "total population mass overflows u64"))?;
            match index.get(&fact) {
                Some(&i) => counts[i] += count,
                None => {
                    index.insert(fact.clone(), facts.len());
                    facts.push(fact);
                    counts.push(count);
                }
            }
        }
        if facts.is_empty() {
            return Err(Error::EmptySample("population has no facts"));
        }
        Ok(Population {
            facts,
            counts,
            total_mass,
            index,
        })
    }

    pub fn facts(&self) -> &[Fact] {
        &self.facts
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total_mass(&self) -> u64 {
        self.total_mass
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn count_of(&self, fact: &Fact) -> u64 {
        self.index.get(fact).map_or(0, |&i| self.counts[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Fact, u64)> {
        self.facts.iter().zip(self.counts.iter().copied())
    }

    pub fn prob(&self, fact: &Fact) -> f64 {
        population_prob(self, fact)
    }

    pub fn write_jsonl<W: Write>(&self, writer: W) -> Result<()> {
        write_counts_jsonl(writer, self.iter())
    }

    pub fn read_jsonl<R: Read>(reader: R) -> Result<Self> {
        Population::from_counts(read_counts_jsonl(reader)?)
    }
}

#[derive(Serialize, Deserialize)]
struct CountRecord<'a> {
    #[serde(borrow)]
    tokens: Vec<std::borrow::Cow<'a, str>>,
    count: u64,
}

fn write_counts_jsonl<'a, W: Write>(mut writer: W, entries: impl Iterator<Item = (&'a Fact, u64)>) -> Result<()> {
    for (fact, count) in entries {
        let rec = CountRecord {
            tokens: fact.tokens().iter().map(|t| std::borrow::Cow::Borrowed(&**t)).collect(),
            count,
        };
        serde_json::to_writer(&mut writer, &rec)?;
        writer.write_all(b"\n").map_err(|e| Error::io("<jsonl writer>", e))?;
    }
    Ok(())
}

fn read_counts_jsonl<R: Read>(reader: R) -> Result<Vec<(Fact, u64)>> {
    let mut out = Vec::new();
    for line in BufReader::new(reader).lines() {
        let line = line.map_err(|e| Error::io("<jsonl reader>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CountRecord<'_> = serde_json::from_str(&line)?;
        out.push((Fact::new(rec.tokens.iter())?, rec.count));
    }
    Ok(out)
}

/// Replicates every fact of the universe by an independent count draw.
pub fn replicate(universe: &FactUniverse, spec: &ReplicationSpec, seed: u64) -> Result<Population> {
    if universe.is_empty() {
        return Err(Error::EmptySample("universe has no facts"));
    }
    let sampler = spec.sampler()?;
    let mut rng = rng_from_seed(seed);
    let counts: Vec<u64> = universe.facts().iter().map(|_| sampler.draw(&mut rng)).collect();
    Population::from_counts(universe.facts().iter().cloned().zip(counts))
}

/// The multiset `S` of training statements, in draw order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingSample {
    statements: Vec<Fact>,
}

impl TrainingSample {
    pub fn new(statements: Vec<Fact>) -> Result<Self> {
        if statements.is_empty() {
            return Err(Error::EmptySample("training sample has no statements"));
        }
        Ok(TrainingSample { statements })
    }

    pub fn statements(&self) -> &[Fact] {
        &self.statements
    }

    pub fn n(&self) -> usize {
        self.statements.len()
    }

    /// Distinct facts with their multiplicities, in order of first draw.
    pub fn fact_counts(&self) -> Vec<(Fact, u64)> {
        let mut index: HashMap<&Fact, usize> = HashMap::new();
        let mut out: Vec<(Fact, u64)> = Vec::new();
        for fact in &self.statements {
            match index.get(fact) {
                Some(&i) => out[i].1 += 1,
                None => {
                    index.insert(fact, out.len());
                    out.push((fact.clone(), 1));
                }
            }
        }
        out
    }

    pub fn write_jsonl<W: Write>(&self, writer: W) -> Result<()> {
        let counts = self.fact_counts();
        write_counts_jsonl(writer, counts.iter().map(|(f, c)| (f, *c)))
    }

    pub fn read_jsonl<R: Read>(reader: R) -> Result<Self> {
        let mut statements = Vec::new();
        for (fact, count) in read_counts_jsonl(reader)? {
            statements.extend(std::iter::repeat_n(fact, count as usize));
        }
        TrainingSample::new(statements)
    }
}

/// Draws `n` statements i.i.d. from `p`, i.e. with replacement from the
/// expanded multiset.
pub fn sample_training(pop: &Population, n: usize, seed: u64) -> Result<TrainingSample> {
    if n == 0 {
        return Err(Error::invalid("n", "sample size must be at least 1"));
    }
    let dist = WeightedIndex::new(pop.counts()).map_err(|e| Error::invalid("population", e.to_string()))?;
    let mut rng = rng_from_seed(seed);
    let statements = (0..n).map(|_| pop.facts[dist.sample(&mut rng)].clone()).collect();
    TrainingSample::new(statements)
}

/// Good-Turing monofact rate `N1 / n`: the share of draws whose fact was
/// drawn exactly once.
pub fn monofact_rate(sample: &TrainingSample) -> f64 {
    let mut freq: HashMap<&Fact, u64> = HashMap::with_capacity(sample.n());
    for fact in sample.statements() {
        *freq.entry(fact).or_insert(0) += 1;
    }
    let singletons = freq.values().filter(|&&c| c == 1).count();
    singletons as f64 / sample.n() as f64
}

pub fn population_prob(pop: &Population, fact: &Fact) -> f64 {
    pop.count_of(fact) as f64 / pop.total_mass as f64
}
