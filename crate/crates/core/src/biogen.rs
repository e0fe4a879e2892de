//! Synthetic biography corpus and model-agnostic evaluators for generated
//! biographies.
//!
//! A biography is seven attributes rendered through four sentence slots,
//! each with four variants. The evaluator is compiled from the same template
//! file as the renderer, so extraction always matches generation.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::OnceLock;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{replicate, Fact, FactSchema, FactUniverse, Population, ReplicationSpec};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::seed::{derive, rng_from_seed};

const BUNDLED_TEMPLATES: &str = include_str!("../data/bio_templates.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Name,
    Birthday,
    Hometown,
    College,
    Major,
    JobTitle,
    Employer,
}

impl Attribute {
    pub const ALL: [Attribute; 7] = [
        Attribute::Name,
        Attribute::Birthday,
        Attribute::Hometown,
        Attribute::College,
        Attribute::Major,
        Attribute::JobTitle,
        Attribute::Employer,
    ];

    /// Attributes checked once the subject is identified.
    pub const SCORED: [Attribute; 6] = [
        Attribute::Birthday,
        Attribute::Hometown,
        Attribute::College,
        Attribute::Major,
        Attribute::JobTitle,
        Attribute::Employer,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Attribute::Name => "name",
            Attribute::Birthday => "birthday",
            Attribute::Hometown => "hometown",
            Attribute::College => "college",
            Attribute::Major => "major",
            Attribute::JobTitle => "job_title",
            Attribute::Employer => "employer",
        }
    }

    /// Wording used in forced-completion prompts.
    pub fn label(self) -> &'static str {
        match self {
            Attribute::JobTitle => "job title",
            other => other.key(),
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Attribute::ALL.into_iter().find(|a| a.key() == key)
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BioAttributes {
    pub name: String,
    pub birthday: String,
    pub hometown: String,
    pub college: String,
    pub major: String,
    pub job_title: String,
    pub employer: String,
}

impl BioAttributes {
    pub fn get(&self, attr: Attribute) -> &str {
        match attr {
            Attribute::Name => &self.name,
            Attribute::Birthday => &self.birthday,
            Attribute::Hometown => &self.hometown,
            Attribute::College => &self.college,
            Attribute::Major => &self.major,
            Attribute::JobTitle => &self.job_title,
            Attribute::Employer => &self.employer,
        }
    }

    pub fn set(&mut self, attr: Attribute, value: impl Into<String>) {
        let slot = match attr {
            Attribute::Name => &mut self.name,
            Attribute::Birthday => &mut self.birthday,
            Attribute::Hometown => &mut self.hometown,
            Attribute::College => &mut self.college,
            Attribute::Major => &mut self.major,
            Attribute::JobTitle => &mut self.job_title,
            Attribute::Employer => &mut self.employer,
        };
        *slot = value.into();
    }

    fn validate(&self) -> Result<()> {
        for attr in Attribute::ALL {
            check_value(attr.key(), self.get(attr))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiographyRecord {
    #[serde(flatten)]
    pub attributes: BioAttributes,
    pub template_ids: [u8; 4],
    pub text: String,
}

impl BiographyRecord {
    pub fn new(attributes: BioAttributes, template_ids: [u8; 4], templates: &TemplateSet) -> Result<Self> {
        let text = templates.render(&attributes, template_ids)?;
        Ok(BiographyRecord {
            attributes,
            template_ids,
            text,
        })
    }

    /// The record as a seven-field fact, in [`Attribute::ALL`] order.
    pub fn fact(&self) -> Fact {
        Fact::new(Attribute::ALL.map(|a| self.attributes.get(a))).expect("attributes are non-empty")
    }
}

pub fn bio_schema() -> FactSchema {
    FactSchema::new(Attribute::ALL.map(Attribute::key)).expect("static schema")
}

fn check_value(what: &str, value: &str) -> Result<()> {
    if value.trim().is_empty() {
        return Err(Error::invalid("biography", format!("{what} is empty")));
    }
    if value.contains(['.', '{', '}', '\n']) || value.trim() != value {
        return Err(Error::invalid(
            "biography",
            format!("{what} value {value:?} contains '.', braces, a newline or surrounding space"),
        ));
    }
    Ok(())
}

/// Lower-cases and collapses runs of whitespace.
pub fn normalize(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Literal(String),
    Field(Attribute),
}

#[derive(Debug, Clone)]
struct Slot {
    name: String,
    variants: Vec<Vec<Piece>>,
}

/// `(slot, variant, capture group names by field)`.
type VariantGroups = (usize, usize, Vec<(String, Attribute)>);

/// Parsed and compiled sentence templates.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    slots: Vec<Slot>,
    full: Regex,
    full_groups: Vec<VariantGroups>,
    sentence: Vec<Vec<Regex>>,
}

pub const SLOTS: usize = 4;
pub const VARIANTS: usize = 4;

fn parse_pieces(line: &str) -> Result<Vec<Piece>> {
    let mut pieces = Vec::new();
    let mut rest = line;
    while let Some(open) = rest.find('{') {
        if open > 0 {
            pieces.push(Piece::Literal(rest[..open].to_string()));
        }
        let close = rest[open..]
            .find('}')
            .ok_or_else(|| Error::invalid("templates", format!("unclosed marker in {line:?}")))?;
        let key = &rest[open + 1..open + close];
        let attr =
            Attribute::from_key(key).ok_or_else(|| Error::invalid("templates", format!("unknown marker {{{key}}}")))?;
        if matches!(pieces.last(), Some(Piece::Field(_))) {
            return Err(Error::invalid("templates", format!("adjacent markers in {line:?}")));
        }
        pieces.push(Piece::Field(attr));
        rest = &rest[open + close + 1..];
    }
    if !rest.is_empty() {
        pieces.push(Piece::Literal(rest.to_string()));
    }
    Ok(pieces)
}

fn fields_of(pieces: &[Piece]) -> Vec<Attribute> {
    let mut out: Vec<Attribute> = pieces
        .iter()
        .filter_map(|p| match p {
            Piece::Field(a) => Some(*a),
            Piece::Literal(_) => None,
        })
        .collect();
    out.sort();
    out
}

fn pattern(pieces: &[Piece], group_prefix: &str, groups: &mut Vec<(String, Attribute)>) -> String {
    let mut out = String::new();
    for p in pieces {
        match p {
            Piece::Literal(s) => {
                for (i, word) in s.split(' ').enumerate() {
                    if i > 0 {
                        out.push_str(r"\s+");
                    }
                    out.push_str(&regex::escape(word));
                }
            }
            Piece::Field(a) => {
                let name = format!("{group_prefix}_{}", a.key());
                out.push_str(&format!("(?P<{name}>.+?)"));
                groups.push((name, *a));
            }
        }
    }
    out
}

impl TemplateSet {
    /// The template file shipped with the crate.
    pub fn bundled() -> &'static TemplateSet {
        static SET: OnceLock<TemplateSet> = OnceLock::new();
        SET.get_or_init(|| TemplateSet::parse(BUNDLED_TEMPLATES).expect("bundled templates are valid"))
    }

    /// Parses `[slot]` sections of one template per line. `#` starts a
    /// comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut slots: Vec<Slot> = Vec::new();
        for raw in text.lines() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                slots.push(Slot {
                    name: name.to_string(),
                    variants: Vec::new(),
                });
                continue;
            }
            let slot = slots
                .last_mut()
                .ok_or_else(|| Error::invalid("templates", "template line before any [slot] header"))?;
            slot.variants.push(parse_pieces(line)?);
        }
        if slots.len() != SLOTS {
            return Err(Error::invalid(
                "templates",
                format!("expected {SLOTS} slots, found {}", slots.len()),
            ));
        }
        let mut covered = Vec::new();
        for (si, slot) in slots.iter().enumerate() {
            if slot.variants.len() != VARIANTS {
                return Err(Error::invalid(
                    "templates",
                    format!(
                        "slot [{}] has {} variants, expected {VARIANTS}",
                        slot.name,
                        slot.variants.len()
                    ),
                ));
            }
            let fields = fields_of(&slot.variants[0]);
            if fields.is_empty() {
                return Err(Error::invalid(
                    "templates",
                    format!("slot [{}] has no markers", slot.name),
                ));
            }
            for v in &slot.variants {
                let f = fields_of(v);
                if f != fields || f.windows(2).any(|w| w[0] == w[1]) {
                    return Err(Error::invalid(
                        "templates",
                        format!("variants of [{}] must use the same markers once each", slot.name),
                    ));
                }
                if si == 0 && v.first() != Some(&Piece::Field(Attribute::Name)) {
                    return Err(Error::invalid(
                        "templates",
                        "every first-slot variant must begin with {name}",
                    ));
                }
            }
            covered.extend(fields);
        }
        covered.sort();
        if covered != Attribute::ALL.to_vec() {
            return Err(Error::invalid(
                "templates",
                "slots must cover every attribute exactly once",
            ));
        }

        let mut full = String::from(r"^\s*");
        let mut full_groups = Vec::new();
        let mut sentence = Vec::new();
        for (si, slot) in slots.iter().enumerate() {
            if si > 0 {
                full.push_str(r"\s+");
            }
            let mut alts = Vec::new();
            let mut compiled = Vec::new();
            for (vi, v) in slot.variants.iter().enumerate() {
                let mut groups = Vec::new();
                alts.push(pattern(v, &format!("s{si}v{vi}"), &mut groups));
                full_groups.push((si, vi, groups));
                let mut unused = Vec::new();
                let re = format!("^{}$", pattern(v, "x", &mut unused));
                compiled.push(Regex::new(&re).map_err(|e| Error::invalid("templates", e.to_string()))?);
            }
            full.push_str(&format!("(?:{})", alts.join("|")));
            sentence.push(compiled);
        }
        full.push_str(r"\s*$");
        let full = Regex::new(&full).map_err(|e| Error::invalid("templates", e.to_string()))?;
        Ok(TemplateSet {
            slots,
            full,
            full_groups,
            sentence,
        })
    }

    /// Number of distinct renderings of one attribute set.
    pub fn renderings(&self) -> usize {
        self.slots.iter().map(|s| s.variants.len()).product()
    }

    pub fn render(&self, attrs: &BioAttributes, template_ids: [u8; 4]) -> Result<String> {
        attrs.validate()?;
        let mut sentences = Vec::with_capacity(SLOTS);
        for (slot, &id) in self.slots.iter().zip(&template_ids) {
            let variant = slot
                .variants
                .get(id as usize)
                .ok_or_else(|| Error::invalid("template_ids", format!("{id} is not in 0..{VARIANTS}")))?;
            let mut s = String::new();
            for p in variant {
                match p {
                    Piece::Literal(l) => s.push_str(l),
                    Piece::Field(a) => s.push_str(attrs.get(*a)),
                }
            }
            sentences.push(s);
        }
        Ok(sentences.join(" "))
    }

    /// Extracts whatever attributes the text expresses. Whole-text matches
    /// are tried first; otherwise each sentence is matched on its own.
    pub fn extract(&self, text: &str) -> Extraction {
        let mut out = Extraction::default();
        if let Some(caps) = self.full.captures(text) {
            for (si, vi, groups) in &self.full_groups {
                if let Some((name, _)) = groups.first() {
                    if caps.name(name).is_none() {
                        continue;
                    }
                }
                out.template_ids[*si] = Some(*vi as u8);
                for (name, attr) in groups {
                    out.values[attr.index()] = caps.name(name).map(|m| m.as_str().trim().to_string());
                }
            }
            return out;
        }
        for sentence in split_sentences(text) {
            for (si, variants) in self.sentence.iter().enumerate() {
                if out.template_ids[si].is_some() {
                    continue;
                }
                let hit = variants
                    .iter()
                    .enumerate()
                    .find_map(|(vi, re)| re.captures(sentence).map(|c| (vi, c)));
                if let Some((vi, caps)) = hit {
                    out.template_ids[si] = Some(vi as u8);
                    for p in &self.slots[si].variants[vi] {
                        if let Piece::Field(a) = p {
                            let group = format!("x_{}", a.key());
                            out.values[a.index()] = caps.name(&group).map(|m| m.as_str().trim().to_string());
                        }
                    }
                    break;
                }
            }
        }
        out
    }
}

fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let bytes = text.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        let at_break = b == b'.' && bytes.get(i + 1).is_none_or(|c| c.is_ascii_whitespace());
        if at_break {
            let s = text[start..=i].trim();
            if !s.is_empty() {
                out.push(s);
            }
            start = i + 1;
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

/// Attribute values recovered from one text, indexed like [`Attribute::ALL`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Extraction {
    pub values: [Option<String>; 7],
    pub template_ids: [Option<u8>; 4],
}

impl Extraction {
    pub fn get(&self, attr: Attribute) -> Option<&str> {
        self.values[attr.index()].as_deref()
    }

    /// The full attribute set and template tuple, if every slot matched.
    pub fn complete(&self) -> Option<(BioAttributes, [u8; 4])> {
        let v = |a: Attribute| self.get(a).map(str::to_string);
        let attrs = BioAttributes {
            name: v(Attribute::Name)?,
            birthday: v(Attribute::Birthday)?,
            hometown: v(Attribute::Hometown)?,
            college: v(Attribute::College)?,
            major: v(Attribute::Major)?,
            job_title: v(Attribute::JobTitle)?,
            employer: v(Attribute::Employer)?,
        };
        let ids = [
            self.template_ids[0]?,
            self.template_ids[1]?,
            self.template_ids[2]?,
            self.template_ids[3]?,
        ];
        Some((attrs, ids))
    }
}

/// Value lists the generator draws from. Names are first × last
/// combinations; birthdays are calendar dates within `birth_years`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BioPools {
    pub first_names: Vec<String>,
    pub last_names: Vec<String>,
    pub hometowns: Vec<String>,
    pub colleges: Vec<String>,
    pub majors: Vec<String>,
    pub job_titles: Vec<String>,
    pub employers: Vec<String>,
    pub birth_years: (i32, i32),
}

const POOL_FILES: [&str; 7] = [
    "first_names",
    "last_names",
    "hometowns",
    "colleges",
    "majors",
    "job_titles",
    "employers",
];

const BUNDLED_POOLS: [&str; 7] = [
    include_str!("../data/bio/first_names.txt"),
    include_str!("../data/bio/last_names.txt"),
    include_str!("../data/bio/hometowns.txt"),
    include_str!("../data/bio/colleges.txt"),
    include_str!("../data/bio/majors.txt"),
    include_str!("../data/bio/job_titles.txt"),
    include_str!("../data/bio/employers.txt"),
];

fn pool_lines(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|l| !l.is_empty())
        .collect()
}

impl BioPools {
    pub fn bundled() -> Self {
        Self::from_lists(BUNDLED_POOLS.map(pool_lines))
    }

    fn from_lists(lists: [Vec<String>; 7]) -> Self {
        let [first_names, last_names, hometowns, colleges, majors, job_titles, employers] = lists;
        BioPools {
            first_names,
            last_names,
            hometowns,
            colleges,
            majors,
            job_titles,
            employers,
            birth_years: (1950, 2004),
        }
    }

    /// Loads `<pool>.txt` files (one value per line) from `dir`. Pools
    /// without a file keep their bundled values.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut lists = BUNDLED_POOLS.map(pool_lines);
        for (name, list) in POOL_FILES.iter().zip(lists.iter_mut()) {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                *list = pool_lines(&text);
            }
        }
        let pools = Self::from_lists(lists);
        pools.validate()?;
        Ok(pools)
    }

    fn lists(&self) -> [&Vec<String>; 7] {
        [
            &self.first_names,
            &self.last_names,
            &self.hometowns,
            &self.colleges,
            &self.majors,
            &self.job_titles,
            &self.employers,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, list) in POOL_FILES.iter().zip(self.lists()) {
            if list.is_empty() {
                return Err(Error::invalid("pools", format!("{name} pool is empty")));
            }
            for v in list {
                check_value(name, v)?;
            }
        }
        if self.birth_years.0 > self.birth_years.1 {
            return Err(Error::invalid("pools", "birth year range is empty"));
        }
        Ok(())
    }

    /// Number of distinct full names.
    pub fn name_capacity(&self) -> u128 {
        let distinct = |v: &Vec<String>| {
            let mut v = v.clone();
            v.sort();
            v.dedup();
            v.len() as u128
        };
        distinct(&self.first_names) * distinct(&self.last_names)
    }

    /// A pool value for `attr` different from `current`, if the pool has one.
    pub fn alternative<R: Rng>(&self, attr: Attribute, current: &str, rng: &mut R) -> Option<String> {
        let pool = match attr {
            Attribute::Hometown => &self.hometowns,
            Attribute::College => &self.colleges,
            Attribute::Major => &self.majors,
            Attribute::JobTitle => &self.job_titles,
            Attribute::Employer => &self.employers,
            Attribute::Birthday => loop {
                let b = random_birthday(self.birth_years, rng);
                if b != current {
                    return Some(b);
                }
            },
            Attribute::Name => {
                let name = format!(
                    "{} {}",
                    self.first_names[rng.random_range(0..self.first_names.len())],
                    self.last_names[rng.random_range(0..self.last_names.len())]
                );
                return (name != current).then_some(name);
            }
        };
        let others: Vec<&String> = pool.iter().filter(|v| *v != current).collect();
        if others.is_empty() {
            return None;
        }
        Some(others[rng.random_range(0..others.len())].clone())
    }
}

const MONTHS: [&str; 12] = [
    "January",
    "February",
    "March",
    "April",
    "May",
    "June",
    "July",
    "August",
    "September",
    "October",
    "November",
    "December",
];

fn days_in_month(year: i32, month: usize) -> u32 {
    match month {
        1 if (year % 4 == 0 && year % 100 != 0) || year % 400 == 0 => 29,
        1 => 28,
        3 | 5 | 8 | 10 => 30,
        _ => 31,
    }
}

fn random_birthday<R: Rng>(years: (i32, i32), rng: &mut R) -> String {
    let year = rng.random_range(years.0..=years.1);
    let month = rng.random_range(0..12);
    let day = rng.random_range(1..=days_in_month(year, month));
    format!("{} {day}, {year}", MONTHS[month])
}

/// Distinct biographies plus their duplication counts.
#[derive(Debug, Clone, PartialEq)]
pub struct BiographyCorpus {
    pub records: Vec<BiographyRecord>,
    pub counts: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct CorpusLine {
    #[serde(flatten)]
    record: BiographyRecord,
    count: u64,
}

impl BiographyCorpus {
    /// The corpus as a population over seven-field facts.
    pub fn population(&self) -> Result<Population> {
        Population::from_counts(
            self.records
                .iter()
                .map(BiographyRecord::fact)
                .zip(self.counts.iter().copied()),
        )
    }

    pub fn write_jsonl<W: Write>(&self, writer: W) -> Result<()> {
        let lines: Vec<CorpusLine> = self
            .records
            .iter()
            .zip(&self.counts)
            .map(|(r, &count)| CorpusLine {
                record: r.clone(),
                count,
            })
            .collect();
        jsonl::write_jsonl(writer, &lines)
    }

    /// Reads a corpus; lines without a `count` field fail to parse.
    pub fn read_jsonl<R: Read>(reader: R) -> Result<Self> {
        let lines: Vec<CorpusLine> = jsonl::read_jsonl(reader)?;
        let (records, counts) = lines.into_iter().map(|l| (l.record, l.count)).unzip();
        Ok(BiographyCorpus { records, counts })
    }
}

/// Draws `n` biographies with distinct names and uniformly chosen
/// attributes and templates, then duplicates each by `spec`.
pub fn generate_biographies(pools: &BioPools, n: usize, spec: &ReplicationSpec, seed: u64) -> Result<BiographyCorpus> {
    generate_with_templates(pools, n, spec, seed, TemplateSet::bundled())
}

pub fn generate_with_templates(
    pools: &BioPools,
    n: usize,
    spec: &ReplicationSpec,
    seed: u64,
    templates: &TemplateSet,
) -> Result<BiographyCorpus> {
    pools.validate()?;
    spec.validate()?;
    if n == 0 {
        return Err(Error::invalid("n", "need at least one biography"));
    }
    let capacity = pools.name_capacity();
    if n as u128 > capacity {
        return Err(Error::CapacityExceeded {
            requested: n as u128,
            capacity,
        });
    }
    let mut firsts = pools.first_names.clone();
    firsts.sort();
    firsts.dedup();
    let mut lasts = pools.last_names.clone();
    lasts.sort();
    lasts.dedup();

    let mut rng = rng_from_seed(derive(seed, "biographies"));
    let picks = index::sample(&mut rng, capacity as usize, n);
    let pick = |rng: &mut crate::seed::LabRng, pool: &Vec<String>| pool[rng.random_range(0..pool.len())].clone();
    let mut records = Vec::with_capacity(n);
    for idx in picks.iter() {
        let name = format!("{} {}", firsts[idx / lasts.len()], lasts[idx % lasts.len()]);
        let attributes = BioAttributes {
            name,
            birthday: random_birthday(pools.birth_years, &mut rng),
            hometown: pick(&mut rng, &pools.hometowns),
            college: pick(&mut rng, &pools.colleges),
            major: pick(&mut rng, &pools.majors),
            job_title: pick(&mut rng, &pools.job_titles),
            employer: pick(&mut rng, &pools.employers),
        };
        let ids = [0; 4].map(|_| rng.random_range(0..VARIANTS as u8));
        records.push(BiographyRecord::new(attributes, ids, templates)?);
    }

    let universe = FactUniverse::new(bio_schema(), records.iter().map(BiographyRecord::fact))?;
    let population = replicate(&universe, spec, derive(seed, "biography-replication"))?;
    let counts = records.iter().map(|r| population.count_of(&r.fact())).collect();
    Ok(BiographyCorpus { records, counts })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeCounts {
    pub correct: u64,
    pub incorrect: u64,
    pub missing: u64,
}

impl AttributeCounts {
    /// Incorrect share of the attributes that were expressed.
    pub fn incorrect_rate(&self) -> f64 {
        let seen = self.correct + self.incorrect;
        if seen == 0 {
            0.0
        } else {
            self.incorrect as f64 / seen as f64
        }
    }
}

/// Free-generation scoring. Texts whose subject is a known name are scored
/// per attribute; unknown names are complete hallucinations; texts with no
/// recognizable subject are `unparsed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeEvalResult {
    pub per_attribute: BTreeMap<Attribute, AttributeCounts>,
    pub evaluated: usize,
    pub scored: usize,
    pub complete_hallucinations: usize,
    pub unparsed: usize,
}

impl AttributeEvalResult {
    pub fn incorrect_total(&self) -> u64 {
        self.per_attribute.values().map(|c| c.incorrect).sum()
    }

    /// Share of wrong attributes among all expressed attributes, where a
    /// complete hallucination counts all of its attributes as wrong.
    pub fn attribute_hallucination_rate(&self) -> f64 {
        let per_text = Attribute::SCORED.len() as u64;
        let wrong = self.incorrect_total() + per_text * self.complete_hallucinations as u64;
        let seen: u64 = self
            .per_attribute
            .values()
            .map(|c| c.correct + c.incorrect)
            .sum::<u64>()
            + per_text * self.complete_hallucinations as u64;
        if seen == 0 {
            0.0
        } else {
            wrong as f64 / seen as f64
        }
    }

    pub fn complete_hallucination_rate(&self) -> f64 {
        if self.evaluated == 0 {
            0.0
        } else {
            self.complete_hallucinations as f64 / self.evaluated as f64
        }
    }

    /// Per-attribute table: `attribute,correct,incorrect,missing,incorrect_rate`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["attribute", "correct", "incorrect", "missing", "incorrect_rate"])?;
        for (attr, c) in &self.per_attribute {
            w.write_record([
                attr.key().to_string(),
                c.correct.to_string(),
                c.incorrect.to_string(),
                c.missing.to_string(),
                c.incorrect_rate().to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))
    }
}

enum Outcome {
    Scored([Option<bool>; 6]),
    Complete,
    Unparsed,
}

fn index_truth(truth: &[BiographyRecord]) -> Result<HashMap<String, &BioAttributes>> {
    let mut by_name: HashMap<String, &BioAttributes> = HashMap::with_capacity(truth.len());
    for r in truth {
        if let Some(prev) = by_name.insert(normalize(&r.attributes.name), &r.attributes) {
            if prev != &r.attributes {
                return Err(Error::invalid(
                    "ground_truth",
                    format!("conflicting records for {}", r.attributes.name),
                ));
            }
        }
    }
    Ok(by_name)
}

pub fn eval_free_generation<S: AsRef<str> + Sync>(
    texts: &[S],
    ground_truth: &[BiographyRecord],
) -> Result<AttributeEvalResult> {
    eval_free_generation_with(texts, ground_truth, TemplateSet::bundled())
}

pub fn eval_free_generation_with<S: AsRef<str> + Sync>(
    texts: &[S],
    ground_truth: &[BiographyRecord],
    templates: &TemplateSet,
) -> Result<AttributeEvalResult> {
    let by_name = index_truth(ground_truth)?;
    let outcomes: Vec<Outcome> = texts
        .par_iter()
        .map(|t| {
            let ex = templates.extract(t.as_ref());
            let Some(name) = ex.get(Attribute::Name) else {
                return Outcome::Unparsed;
            };
            let Some(truth) = by_name.get(&normalize(name)) else {
                return Outcome::Complete;
            };
            Outcome::Scored(Attribute::SCORED.map(|a| ex.get(a).map(|v| normalize(v) == normalize(truth.get(a)))))
        })
        .collect();

    let mut result = AttributeEvalResult {
        per_attribute: Attribute::SCORED
            .into_iter()
            .map(|a| (a, AttributeCounts::default()))
            .collect(),
        evaluated: texts.len(),
        scored: 0,
        complete_hallucinations: 0,
        unparsed: 0,
    };
    for o in outcomes {
        match o {
            Outcome::Unparsed => result.unparsed += 1,
            Outcome::Complete => result.complete_hallucinations += 1,
            Outcome::Scored(marks) => {
                result.scored += 1;
                for (attr, mark) in Attribute::SCORED.iter().zip(marks) {
                    let c = result.per_attribute.get_mut(attr).expect("all attributes present");
                    match mark {
                        Some(true) => c.correct += 1,
                        Some(false) => c.incorrect += 1,
                        None => c.missing += 1,
                    }
                }
            }
        }
    }
    Ok(result)
}

/// One free-generation evaluator input line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedText {
    pub generated_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForcedPrompt {
    pub prompt: String,
    pub expected: String,
    pub name: String,
    pub attribute: Attribute,
}

/// One forced-completion evaluator input line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForcedAnswer {
    pub prompt: String,
    pub completion: String,
}

pub fn forced_prompt_text(name: &str, attr: Attribute) -> String {
    format!("{name}'s {} is", attr.label())
}

/// One prompt per scored attribute of every distinct record.
pub fn make_forced_prompts(records: &[BiographyRecord]) -> Vec<ForcedPrompt> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(records.len() * Attribute::SCORED.len());
    for r in records {
        if !seen.insert(r.attributes.name.clone()) {
            continue;
        }
        for attr in Attribute::SCORED {
            out.push(ForcedPrompt {
                prompt: forced_prompt_text(&r.attributes.name, attr),
                expected: r.attributes.get(attr).to_string(),
                name: r.attributes.name.clone(),
                attribute: attr,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcedEvalResult {
    pub total: usize,
    pub incorrect: usize,
    pub inaccuracy: f64,
    pub per_attribute: BTreeMap<Attribute, AttributeCounts>,
}

/// Fraction of completions that differ from the expected value after
/// whitespace and case normalization.
pub fn eval_forced_completion(answers: &[ForcedAnswer], expected: &[ForcedPrompt]) -> Result<ForcedEvalResult> {
    if answers.is_empty() {
        return Err(Error::EmptySample("no forced-completion answers"));
    }
    let by_prompt: HashMap<String, &ForcedPrompt> = expected.iter().map(|p| (normalize(&p.prompt), p)).collect();
    let mut per_attribute: BTreeMap<Attribute, AttributeCounts> = BTreeMap::new();
    let mut incorrect = 0;
    for a in answers {
        let p = by_prompt
            .get(&normalize(&a.prompt))
            .ok_or_else(|| Error::UnknownPrompt(a.prompt.clone()))?;
        let c = per_attribute.entry(p.attribute).or_default();
        if normalize(&a.completion) == normalize(&p.expected) {
            c.correct += 1;
        } else {
            c.incorrect += 1;
            incorrect += 1;
        }
    }
    Ok(ForcedEvalResult {
        total: answers.len(),
        incorrect,
        inaccuracy: incorrect as f64 / answers.len() as f64,
        per_attribute,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{monofact_rate, sample_training};

    fn attrs() -> BioAttributes {
        BioAttributes {
            name: "Ada Quill".into(),
            birthday: "May 2, 1990".into(),
            hometown: "Cape Town".into(),
            college: "Arden College".into(),
            major: "Physics".into(),
            job_title: "pilot".into(),
            employer: "Orbit Software".into(),
        }
    }

    #[test]
    fn bundled_templates_cover_every_slot() {
        let t = TemplateSet::bundled();
        assert_eq!(t.renderings(), 256);
        assert!(TemplateSet::parse("[a]\n{name}\n").is_err());
        assert!(TemplateSet::parse(&BUNDLED_TEMPLATES.replace("{major}.", "{majr}.")).is_err());
    }

    #[test]
    fn every_template_tuple_round_trips() {
        let t = TemplateSet::bundled();
        let pools = BioPools::bundled();
        let mut rng = rng_from_seed(3);
        for code in 0..256u32 {
            let ids = [0, 1, 2, 3].map(|s| ((code >> (2 * s)) & 3) as u8);
            let mut a = attrs();
            for attr in Attribute::SCORED {
                a.set(attr, pools.alternative(attr, "", &mut rng).unwrap());
            }
            let text = t.render(&a, ids).unwrap();
            assert!(text.starts_with(&a.name));
            assert_eq!(t.extract(&text).complete(), Some((a.clone(), ids)), "{text}");
        }
    }

    #[test]
    fn sentence_fallback_handles_reordered_text() {
        let t = TemplateSet::bundled();
        let a = attrs();
        let text = t.render(&a, [1, 2, 0, 3]).unwrap();
        let mut sentences = split_sentences(&text);
        sentences.swap(2, 3);
        let shuffled = sentences.join("  ");
        let ex = t.extract(&shuffled);
        assert_eq!(ex.complete(), Some((a, [1, 2, 0, 3])));
        let partial = t.extract("Ada Quill was born on May 2, 1990. Something else entirely.");
        assert_eq!(partial.get(Attribute::Name), Some("Ada Quill"));
        assert_eq!(partial.get(Attribute::Major), None);
    }

    #[test]
    fn single_record_self_consistent() {
        let pools = BioPools::bundled();
        let corpus = generate_biographies(&pools, 1, &ReplicationSpec::pareto(1.5), 11).unwrap();
        let r = &corpus.records[0];
        let res = eval_free_generation(&[r.text.as_str()], &corpus.records).unwrap();
        assert_eq!(res.scored, 1);
        assert_eq!(res.incorrect_total(), 0);
        assert_eq!(res.complete_hallucinations, 0);
        assert_eq!(res.attribute_hallucination_rate(), 0.0);
    }

    #[test]
    fn distinct_names_and_determinism() {
        let pools = BioPools::bundled();
        let spec = ReplicationSpec::pareto(1.5);
        let a = generate_biographies(&pools, 2000, &spec, 5).unwrap();
        let b = generate_biographies(&pools, 2000, &spec, 5).unwrap();
        assert_eq!(a, b);
        let names: std::collections::HashSet<_> = a.records.iter().map(|r| &r.attributes.name).collect();
        assert_eq!(names.len(), 2000);
        assert!(a.counts.iter().all(|&c| c >= 1));
        let pop = a.population().unwrap();
        assert_eq!(pop.len(), 2000);
    }

    #[test]
    fn name_pool_exhaustion() {
        let mut pools = BioPools::bundled();
        pools.first_names.truncate(2);
        pools.last_names.truncate(3);
        let err = generate_biographies(&pools, 7, &ReplicationSpec::pareto(1.5), 1).unwrap_err();
        assert!(matches!(
            err,
            Error::CapacityExceeded {
                requested: 7,
                capacity: 6
            }
        ));
        assert!(generate_biographies(&pools, 6, &ReplicationSpec::pareto(1.5), 1).is_ok());
    }

    #[test]
    fn corrupted_and_fabricated_texts() {
        let t = TemplateSet::bundled();
        let truth = vec![BiographyRecord::new(attrs(), [0, 0, 0, 0], t).unwrap()];
        let mut wrong = attrs();
        wrong.employer = "Nova Biotech".into();
        let bad = t.render(&wrong, [2, 1, 3, 2]).unwrap();
        let mut stranger = attrs();
        stranger.name = "Zed Nobody".into();
        let fake = t.render(&stranger, [0, 0, 0, 0]).unwrap();
        let texts = [bad.as_str(), fake.as_str(), "gibberish without structure"];
        let res = eval_free_generation(&texts, &truth).unwrap();
        assert_eq!(res.per_attribute[&Attribute::Employer].incorrect, 1);
        assert_eq!(res.incorrect_total(), 1);
        assert_eq!(res.complete_hallucinations, 1);
        assert_eq!(res.unparsed, 1);
        assert_eq!(res.evaluated, 3);
        let expected = (1.0 + 6.0) / 12.0;
        assert!((res.attribute_hallucination_rate() - expected).abs() < 1e-15);
    }

    #[test]
    fn matching_ignores_case_and_spacing() {
        let t = TemplateSet::bundled();
        let truth = vec![BiographyRecord::new(attrs(), [0, 0, 0, 0], t).unwrap()];
        let text = truth[0].text.replace("Physics", "physics").replace(' ', "   ");
        let res = eval_free_generation(&[text], &truth).unwrap();
        assert_eq!(res.incorrect_total(), 0);
        assert_eq!(res.scored, 1);
    }

    #[test]
    fn forced_completion_scoring() {
        let pools = BioPools::bundled();
        let corpus = generate_biographies(&pools, 50, &ReplicationSpec::pareto(2.0), 9).unwrap();
        let prompts = make_forced_prompts(&corpus.records);
        assert_eq!(prompts.len(), 300);
        assert!(prompts.iter().any(|p| p.prompt.ends_with("'s major is")));

        let exact: Vec<ForcedAnswer> = prompts
            .iter()
            .map(|p| ForcedAnswer {
                prompt: p.prompt.clone(),
                completion: format!(" {} ", p.expected.to_uppercase()),
            })
            .collect();
        assert_eq!(eval_forced_completion(&exact, &prompts).unwrap().inaccuracy, 0.0);

        let empty: Vec<ForcedAnswer> = prompts
            .iter()
            .map(|p| ForcedAnswer {
                prompt: p.prompt.clone(),
                completion: String::new(),
            })
            .collect();
        assert_eq!(eval_forced_completion(&empty, &prompts).unwrap().inaccuracy, 1.0);

        let mut rng = rng_from_seed(4);
        let mut corrupted = exact.clone();
        let picks = index::sample(&mut rng, corrupted.len(), 30);
        for i in picks.iter() {
            corrupted[i].completion.push_str(" junk");
        }
        let res = eval_forced_completion(&corrupted, &prompts).unwrap();
        assert_eq!(res.incorrect, 30);
        assert!((res.inaccuracy - 0.1).abs() < 1e-15);

        let stray = [ForcedAnswer {
            prompt: "Nobody's major is".into(),
            completion: "x".into(),
        }];
        assert!(matches!(
            eval_forced_completion(&stray, &prompts),
            Err(Error::UnknownPrompt(_))
        ));
        assert!(eval_forced_completion(&[], &prompts).is_err());
    }

    #[test]
    fn corpus_jsonl_round_trip() {
        let pools = BioPools::bundled();
        let corpus = generate_biographies(&pools, 20, &ReplicationSpec::pareto(1.5), 2).unwrap();
        let mut buf = Vec::new();
        corpus.write_jsonl(&mut buf).unwrap();
        assert_eq!(BiographyCorpus::read_jsonl(&buf[..]).unwrap(), corpus);
        let first: serde_json::Value = serde_json::from_slice(buf.split(|&b| b == b'\n').next().unwrap()).unwrap();
        for key in ["name", "employer", "template_ids", "text", "count"] {
            assert!(first.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn pools_reject_sentence_breaking_values() {
        let mut pools = BioPools::bundled();
        pools.majors.push("Ph.D. Studies".into());
        assert!(pools.validate().is_err());
        let mut pools = BioPools::bundled();
        pools.colleges.clear();
        assert!(pools.validate().is_err());
    }

    #[test]
    fn monofact_rate_near_reference() {
        let pools = BioPools::bundled();
        let spec = ReplicationSpec::pareto(1.5);
        let mut rates = Vec::new();
        for seed in 0..5 {
            let corpus = generate_biographies(&pools, 10_000, &spec, seed).unwrap();
            let pop = corpus.population().unwrap();
            let sample = sample_training(&pop, 10_000, derive(seed, "bio-sample")).unwrap();
            rates.push(monofact_rate(&sample));
        }
        let mean = rates.iter().sum::<f64>() / rates.len() as f64;
        assert!((mean - 0.2765).abs() < 0.02, "{rates:?}");
    }
}
