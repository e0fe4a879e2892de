//! Order-n fact generators.
//!
//! An order-n model conditions each token on the previous `n - 1` tokens and
//! draws the first `n - 1` tokens from an initial-prefix distribution, so the
//! default order 2 is the bigram `g(x) = g(t1) * prod g(t_{i+1} | t_i)`.
//! Token pairs from every position share one transition table. There is no
//! smoothing: unseen prefixes and transitions have probability zero.
//!
//! Integer counts are the source of truth; probabilities are always derived
//! from them by [`normalize`].

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::corpus::{Fact, Token, TrainingSample};
use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

pub type TokenId = u32;
pub type Context = Vec<TokenId>;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CountTables {
    pub initial: BTreeMap<Context, u64>,
    pub transitions: BTreeMap<Context, BTreeMap<TokenId, u64>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProbTables {
    pub initial: BTreeMap<Context, f64>,
    pub transitions: BTreeMap<Context, BTreeMap<TokenId, f64>>,
}

/// Divides every row by its total.
pub fn normalize(counts: &CountTables) -> Result<ProbTables> {
    fn row<K: Ord + Clone>(row: &BTreeMap<K, u64>, name: impl FnOnce() -> String) -> Result<BTreeMap<K, f64>> {
        let total: u64 = row.values().sum();
        if total == 0 {
            return Err(Error::ZeroRow { context: name() });
        }
        let total = total as f64;
        Ok(row.iter().map(|(k, &c)| (k.clone(), c as f64 / total)).collect())
    }

    let initial = row(&counts.initial, || "<initial>".to_string())?;
    let transitions = counts
        .transitions
        .iter()
        .map(|(ctx, next)| Ok((ctx.clone(), row(next, || format!("{ctx:?}"))?)))
        .collect::<Result<_>>()?;
    Ok(ProbTables { initial, transitions })
}

#[derive(Debug, Clone, Default)]
struct Vocab {
    tokens: Vec<Token>,
    ids: HashMap<Token, TokenId>,
}

impl Vocab {
    fn intern(&mut self, token: &Token) -> TokenId {
        if let Some(&id) = self.ids.get(token) {
            return id;
        }
        let id = self.tokens.len() as TokenId;
        self.tokens.push(token.clone());
        self.ids.insert(token.clone(), id);
        id
    }

    fn get(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }
}

#[derive(Debug, Clone)]
pub struct NGramModel {
    order: usize,
    statement_length: usize,
    vocab: Vocab,
    counts: CountTables,
    probs: ProbTables,
}

impl PartialEq for NGramModel {
    fn eq(&self, other: &Self) -> bool {
        self.order == other.order
            && self.statement_length == other.statement_length
            && self.vocab.tokens == other.vocab.tokens
            && self.counts == other.counts
    }
}

fn add_statement(vocab: &mut Vocab, counts: &mut CountTables, fact: &Fact, order: usize, weight: u64) -> Result<()> {
    if fact.len() < order {
        return Err(Error::StatementTooShort {
            length: fact.len(),
            order,
        });
    }
    let ids: Vec<TokenId> = fact.tokens().iter().map(|t| vocab.intern(t)).collect();
    let ctx_len = order - 1;
    *counts.initial.entry(ids[..ctx_len].to_vec()).or_insert(0) += weight;
    for j in ctx_len..ids.len() {
        *counts
            .transitions
            .entry(ids[j - ctx_len..j].to_vec())
            .or_default()
            .entry(ids[j])
            .or_insert(0) += weight;
    }
    Ok(())
}

/// Tallies initial prefixes and `(context, next)` pairs over every statement
/// of the sample, with multiplicity.
pub fn train(sample: &TrainingSample, order: usize) -> Result<NGramModel> {
    if order == 0 {
        return Err(Error::invalid("order", "order must be at least 1"));
    }
    let mut vocab = Vocab::default();
    let mut counts = CountTables::default();
    for fact in sample.statements() {
        add_statement(&mut vocab, &mut counts, fact, order, 1)?;
    }
    let probs = normalize(&counts)?;
    Ok(NGramModel {
        order,
        statement_length: sample.statements()[0].len(),
        vocab,
        counts,
        probs,
    })
}

/// Returns a copy of `model` where every initial prefix and transition
/// occurring in `subset` gains `weight` extra counts per occurrence, then
/// renormalizes. The input model is left untouched.
pub fn upweight(model: &NGramModel, subset: &[Fact], weight: u64) -> Result<NGramModel> {
    if weight == 0 {
        return Err(Error::invalid("weight", "upweighting needs a positive weight"));
    }
    if subset.is_empty() {
        return Ok(model.clone());
    }
    let mut vocab = model.vocab.clone();
    let mut counts = model.counts.clone();
    for fact in subset {
        add_statement(&mut vocab, &mut counts, fact, model.order, weight)?;
    }
    let probs = normalize(&counts)?;
    Ok(NGramModel {
        order: model.order,
        statement_length: model.statement_length,
        vocab,
        counts,
        probs,
    })
}

/// Probability of a statement under the model; zero for any unseen token,
/// prefix or transition, and for statements of the wrong length.
pub fn score(model: &NGramModel, statement: &Fact) -> f64 {
    model.score(statement)
}

/// Statements produced by a model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationSet {
    pub statements: Vec<Fact>,
    /// Attempts abandoned because a context had no outgoing transition.
    pub aborted: usize,
}

impl GenerationSet {
    pub fn len(&self) -> usize {
        self.statements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.statements.is_empty()
    }
}

struct Row {
    next: Vec<TokenId>,
    dist: WeightedIndex<f64>,
}

/// Draws `count` statements: the prefix from the initial distribution, then
/// each following token from the transition row of its context.
pub fn generate(model: &NGramModel, count: usize, seed: u64) -> Result<GenerationSet> {
    if model.probs.initial.is_empty() {
        return Err(Error::UntrainedModel);
    }
    let init_keys: Vec<&Context> = model.probs.initial.keys().collect();
    let init_dist = WeightedIndex::new(model.probs.initial.values().copied()).map_err(|_| Error::UntrainedModel)?;
    let mut rows: HashMap<&[TokenId], Row> = HashMap::with_capacity(model.probs.transitions.len());
    for (ctx, next) in &model.probs.transitions {
        let dist = WeightedIndex::new(next.values().copied()).map_err(|_| Error::ZeroRow {
            context: model.render_context(ctx),
        })?;
        rows.insert(
            ctx.as_slice(),
            Row {
                next: next.keys().copied().collect(),
                dist,
            },
        );
    }

    let ctx_len = model.order - 1;
    let len = model.statement_length;
    let mut rng = rng_from_seed(seed);
    let mut statements = Vec::with_capacity(count);
    let mut aborted = 0usize;
    let mut ids: Vec<TokenId> = Vec::with_capacity(len);
    // Rejection on dead ends keeps `count` statements; with uniform-length,
    // position-disjoint vocabularies it never triggers.
    while statements.len() < count {
        ids.clear();
        ids.extend_from_slice(init_keys[init_dist.sample(&mut rng)]);
        let mut dead = false;
        while ids.len() < len {
            match rows.get(&ids[ids.len() - ctx_len..]) {
                Some(row) => ids.push(row.next[row.dist.sample(&mut rng)]),
                None => {
                    dead = true;
                    break;
                }
            }
        }
        if dead {
            aborted += 1;
            if aborted > count.saturating_mul(100).max(10_000) && statements.is_empty() {
                return Err(Error::ZeroRow {
                    context: "every generation attempt reached a context without transitions".into(),
                });
            }
            continue;
        }
        statements.push(model.fact_from_ids(&ids));
    }
    Ok(GenerationSet { statements, aborted })
}

/// Outcome of enumerating a model's support.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SupportWalk {
    /// Complete statements visited.
    pub visited: usize,
    /// Mass of prefixes cut off below the probability floor.
    pub pruned_mass: f64,
    /// Mass lost at contexts without outgoing transitions.
    pub dead_end_mass: f64,
}

impl NGramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn statement_length(&self) -> usize {
        self.statement_length
    }

    pub fn counts(&self) -> &CountTables {
        &self.counts
    }

    pub fn probs(&self) -> &ProbTables {
        &self.probs
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.tokens.len()
    }

    pub fn token(&self, id: TokenId) -> &Token {
        &self.vocab.tokens[id as usize]
    }

    fn ids_of(&self, tokens: &[impl AsRef<str>]) -> Option<Vec<TokenId>> {
        tokens.iter().map(|t| self.vocab.get(t.as_ref())).collect()
    }

    fn fact_from_ids(&self, ids: &[TokenId]) -> Fact {
        Fact::from_tokens_unchecked(ids.iter().map(|&i| self.token(i).clone()).collect())
    }

    fn render_context(&self, ctx: &[TokenId]) -> String {
        let toks: Vec<&str> = ctx.iter().map(|&i| &**self.token(i)).collect();
        format!("{toks:?}")
    }

    /// Initial-prefix probability for a prefix of `order - 1` tokens.
    pub fn initial_prob<S: AsRef<str>>(&self, prefix: &[S]) -> f64 {
        self.ids_of(prefix)
            .and_then(|ids| self.probs.initial.get(&ids).copied())
            .unwrap_or(0.0)
    }

    /// `g(next | context)` for a context of `order - 1` tokens.
    pub fn transition_prob<S: AsRef<str>>(&self, context: &[S], next: &str) -> f64 {
        let (Some(ctx), Some(next)) = (self.ids_of(context), self.vocab.get(next)) else {
            return 0.0;
        };
        self.probs
            .transitions
            .get(&ctx)
            .and_then(|row| row.get(&next).copied())
            .unwrap_or(0.0)
    }

    pub fn score(&self, statement: &Fact) -> f64 {
        if statement.len() != self.statement_length {
            return 0.0;
        }
        match self.ids_of(statement.tokens()) {
            Some(ids) => self.score_ids(&ids),
            None => 0.0,
        }
    }

    /// The product is accumulated left to right, in the same order as
    /// [`NGramModel::walk_support`], so both paths give bit-identical values.
    pub fn score_ids(&self, ids: &[TokenId]) -> f64 {
        let ctx_len = self.order - 1;
        if ids.len() != self.statement_length {
            return 0.0;
        }
        let Some(&init) = self.probs.initial.get(&ids[..ctx_len]) else {
            return 0.0;
        };
        let mut p = init;
        for j in ctx_len..ids.len() {
            match self
                .probs
                .transitions
                .get(&ids[j - ctx_len..j])
                .and_then(|row| row.get(&ids[j]))
            {
                Some(&t) => p *= t,
                None => return 0.0,
            }
        }
        p
    }

    /// Depth-first enumeration of every full-length statement with
    /// probability at least `min_prob`. Prefixes whose probability falls
    /// below `min_prob` are not expanded; their mass is reported instead.
    pub fn walk_support<F: FnMut(&[TokenId], f64)>(&self, min_prob: f64, mut visit: F) -> SupportWalk {
        let mut summary = SupportWalk::default();
        let mut ids = Vec::with_capacity(self.statement_length);
        for (prefix, &p) in &self.probs.initial {
            ids.clear();
            ids.extend_from_slice(prefix);
            self.walk_from(&mut ids, p, min_prob, &mut visit, &mut summary);
        }
        summary
    }

    fn walk_from<F: FnMut(&[TokenId], f64)>(
        &self,
        ids: &mut Vec<TokenId>,
        p: f64,
        min_prob: f64,
        visit: &mut F,
        summary: &mut SupportWalk,
    ) {
        if p < min_prob {
            summary.pruned_mass += p;
            return;
        }
        if ids.len() == self.statement_length {
            summary.visited += 1;
            visit(ids, p);
            return;
        }
        let ctx_len = self.order - 1;
        let Some(row) = self.probs.transitions.get(&ids[ids.len() - ctx_len..]) else {
            summary.dead_end_mass += p;
            return;
        };
        for (&next, &t) in row {
            ids.push(next);
            self.walk_from(ids, p * t, min_prob, visit, summary);
            ids.pop();
        }
    }

    /// Resolves token ids back to a fact.
    pub fn fact(&self, ids: &[TokenId]) -> Fact {
        self.fact_from_ids(ids)
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, &self.to_dump())?;
        Ok(())
    }

    pub fn read_json<R: Read>(reader: R) -> Result<Self> {
        let dump: ModelDump = serde_json::from_reader(reader)?;
        NGramModel::from_dump(dump)
    }

    fn to_dump(&self) -> ModelDump {
        let toks = |ids: &[TokenId]| ids.iter().map(|&i| self.token(i).to_string()).collect::<Vec<_>>();
        ModelDump {
            order: self.order,
            statement_length: self.statement_length,
            initial: self
                .counts
                .initial
                .iter()
                .map(|(ctx, &count)| InitialEntry {
                    prefix: toks(ctx),
                    count,
                    prob: Some(self.probs.initial[ctx]),
                })
                .collect(),
            transitions: self
                .counts
                .transitions
                .iter()
                .map(|(ctx, row)| TransitionRow {
                    context: toks(ctx),
                    next: row
                        .iter()
                        .map(|(&n, &count)| NextEntry {
                            token: self.token(n).to_string(),
                            count,
                            prob: Some(self.probs.transitions[ctx][&n]),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    fn from_dump(dump: ModelDump) -> Result<Self> {
        if dump.order == 0 {
            return Err(Error::invalid("order", "order must be at least 1"));
        }
        let ctx_len = dump.order - 1;
        let mut vocab = Vocab::default();
        let mut counts = CountTables::default();
        let intern_all = |vocab: &mut Vocab, toks: &[String]| -> Context {
            toks.iter().map(|t| vocab.intern(&Token::from(t.as_str()))).collect()
        };
        for e in &dump.initial {
            if e.prefix.len() != ctx_len {
                return Err(Error::invalid(
                    "initial",
                    format!("prefix {:?} has wrong length", e.prefix),
                ));
            }
            let ctx = intern_all(&mut vocab, &e.prefix);
            *counts.initial.entry(ctx).or_insert(0) += e.count;
        }
        for row in &dump.transitions {
            if row.context.len() != ctx_len {
                return Err(Error::invalid(
                    "transitions",
                    format!("context {:?} has wrong length", row.context),
                ));
            }
            let ctx = intern_all(&mut vocab, &row.context);
            let entry = counts.transitions.entry(ctx).or_default();
            for n in &row.next {
                let id = vocab.intern(&Token::from(n.token.as_str()));
                *entry.entry(id).or_insert(0) += n.count;
            }
        }
        let probs = normalize(&counts)?;
        let model = NGramModel {
            order: dump.order,
            statement_length: dump.statement_length,
            vocab,
            counts,
            probs,
        };
        let check = |context: String, stored: Option<f64>, recomputed: f64| match stored {
            Some(s) if (s - recomputed).abs() > 1e-12 => Err(Error::ProbabilityMismatch {
                context,
                stored: s,
                recomputed,
            }),
            _ => Ok(()),
        };
        for e in &dump.initial {
            check(format!("{:?}", e.prefix), e.prob, model.initial_prob(&e.prefix))?;
        }
        for row in &dump.transitions {
            for n in &row.next {
                check(
                    format!("{:?} -> {}", row.context, n.token),
                    n.prob,
                    model.transition_prob(&row.context, &n.token),
                )?;
            }
        }
        Ok(model)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelDump {
    order: usize,
    statement_length: usize,
    initial: Vec<InitialEntry>,
    transitions: Vec<TransitionRow>,
}

#[derive(Debug, Serialize, Deserialize)]
struct InitialEntry {
    prefix: Vec<String>,
    count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prob: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TransitionRow {
    context: Vec<String>,
    next: Vec<NextEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NextEntry {
    token: String,
    count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prob: Option<f64>,
}
