use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use monofact_core::artifacts::{slug, ArtifactKind, RunWriter};
use monofact_core::biogen::{
    eval_forced_completion, eval_free_generation, make_forced_prompts, BiographyCorpus, ForcedAnswer, GeneratedText,
};
use monofact_core::bounds::BoundKind;
use monofact_core::config::ExperimentConfig;
use monofact_core::experiment::{binwise, holds_rate, run_biogen, sweep_monofact, sweep_upweight, verify_bounds};
use monofact_core::jsonl::read_jsonl;
use monofact_core::stats::{ks_two_sample, write_ks_csv};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(
    name = "monofact",
    version,
    about = "Monofact rate, miscalibration and hallucination experiments"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// TOML experiment configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; defaults to `runs/<command>-<config hash>`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; all cores when omitted.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Monofact rate, hallucination rate, calibration and both bounds per trial.
    SweepMonofact,
    /// Hallucination and calibration before and after upweighting subsets.
    SweepUpweight,
    /// One row per bound per trial, with holding rates.
    VerifyBounds,
    /// Trial-averaged per-bin tables for each replication setting.
    Binwise,
    /// Biography corpus, forced-completion prompts and self-checks.
    Biogen,
    /// Scores externally generated biographies or prompted completions.
    EvalBio(EvalBioArgs),
    /// Two-sample Kolmogorov-Smirnov test on two files of numbers.
    Ks(KsArgs),
}

#[derive(Args, Debug)]
struct EvalBioArgs {
    /// Ground-truth corpus as written by `biogen`.
    #[arg(long)]
    corpus: PathBuf,
    /// JSONL of `{"generated_text": ...}` lines.
    #[arg(long)]
    generations: Option<PathBuf>,
    /// JSONL of `{"prompt": ..., "completion": ...}` lines.
    #[arg(long)]
    answers: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct KsArgs {
    /// Whitespace-separated numbers.
    #[arg(long)]
    xs: PathBuf,
    #[arg(long)]
    ys: PathBuf,
    /// Row label in the output table.
    #[arg(long, default_value = "ks")]
    label: String,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SweepMonofact => "sweep-monofact",
            Command::SweepUpweight => "sweep-upweight",
            Command::VerifyBounds => "verify-bounds",
            Command::Binwise => "binwise",
            Command::Biogen => "biogen",
            Command::EvalBio(_) => "eval-bio",
            Command::Ks(_) => "ks",
        }
    }
}

fn load_config(global: &GlobalArgs) -> Result<ExperimentConfig> {
    let mut config = match &global.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ExperimentConfig::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = global.seed {
        config.seed = seed;
    }
    if let Some(out) = &global.out {
        config.out = Some(out.clone());
    }
    config.validate()?;
    Ok(config)
}

fn out_dir(config: &ExperimentConfig, command: &str) -> PathBuf {
    config
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(format!("{command}-{}", config.hash())))
}

fn read_numbers(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .with_context(|| format!("{}: not a number: {t:?}", path.display()))
        })
        .collect()
}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path).with_context(|| format!("opening {}", path.display()))
}

fn run(cli: Cli) -> Result<PathBuf> {
    if let Command::EvalBio(args) = &cli.command {
        if args.generations.is_none() && args.answers.is_none() {
            bail!("eval-bio needs --generations, --answers or both");
        }
    }
    let config = load_config(&cli.global)?;
    let command = cli.command.name();
    let mut run = RunWriter::create(out_dir(&config, command), command, &config)?;

    match &cli.command {
        Command::SweepMonofact => {
            let rows = sweep_monofact(&config)?;
            run.csv("monofact.csv", &rows)?;
        }
        Command::SweepUpweight => {
            let sweep = sweep_upweight(&config)?;
            run.csv("upweight_trials.csv", &sweep.rows)?;
            run.csv("upweight_cells.csv", &sweep.cells)?;
        }
        Command::VerifyBounds => {
            let rows = verify_bounds(&config)?;
            run.csv("bounds.csv", &rows)?;
            let summary = json!({
                "trials": rows.len() / 2,
                "population_holds_rate": holds_rate(&rows, BoundKind::Population),
                "empirical_kl_holds_rate": holds_rate(&rows, BoundKind::EmpiricalKl),
                "delta": config.bounds.delta,
                "m": config.bounds.m,
            });
            run.json("bounds_summary.json", &summary)?;
        }
        Command::Binwise => {
            let mut summaries = Vec::new();
            for (cell, report) in binwise(&config)? {
                let name = format!("binwise_{}.csv", slug(&cell));
                run.write_with(&name, ArtifactKind::Csv, Some(report.bins.len() + 1), |w| {
                    report.write_csv(w)
                })?;
                let mut s = report.summary_json();
                s["cell_id"] = cell.into();
                s["file"] = name.into();
                summaries.push(s);
            }
            run.json("binwise_summary.json", &json!({ "cells": summaries }))?;
        }
        Command::Biogen => {
            let out = run_biogen(&config)?;
            let records = out.corpus.records.len();
            run.write_with("corpus.jsonl", ArtifactKind::Jsonl, Some(records), |w| {
                out.corpus.write_jsonl(w)
            })?;
            run.jsonl("forced_prompts.jsonl", &out.prompts)?;
            run.write_with("round_trip.csv", ArtifactKind::Csv, Some(6), |w| {
                out.round_trip.write_csv(w)
            })?;
            run.write_with("corrupted.csv", ArtifactKind::Csv, Some(6), |w| {
                out.corrupted.write_csv(w)
            })?;
            let summary = json!({
                "records": records,
                "statements": out.corpus.counts.iter().sum::<u64>(),
                "sample_size": config.biogen.sample_size,
                "sample_monofact": out.sample_monofact,
                "round_trip": out.round_trip,
                "round_trip_incorrect": out.round_trip.incorrect_total(),
                "corrupted_field": config.biogen.corrupt_field,
                "corrupted": out.corrupted,
                "corrupted_incorrect": out.corrupted.incorrect_total(),
            });
            run.json("biogen_summary.json", &summary)?;
        }
        Command::EvalBio(args) => {
            let corpus = BiographyCorpus::read_jsonl(open(&args.corpus)?)
                .with_context(|| format!("reading {}", args.corpus.display()))?;
            let mut summary = serde_json::Map::new();
            if let Some(path) = &args.generations {
                let lines: Vec<GeneratedText> =
                    read_jsonl(open(path)?).with_context(|| format!("reading {}", path.display()))?;
                let texts: Vec<&str> = lines.iter().map(|l| l.generated_text.as_str()).collect();
                let result = eval_free_generation(&texts, &corpus.records)?;
                run.write_with("free_generation.csv", ArtifactKind::Csv, Some(6), |w| {
                    result.write_csv(w)
                })?;
                summary.insert(
                    "free_generation".into(),
                    json!({
                        "result": result,
                        "attribute_hallucination_rate": result.attribute_hallucination_rate(),
                        "complete_hallucination_rate": result.complete_hallucination_rate(),
                    }),
                );
            }
            if let Some(path) = &args.answers {
                let answers: Vec<ForcedAnswer> =
                    read_jsonl(open(path)?).with_context(|| format!("reading {}", path.display()))?;
                let result = eval_forced_completion(&answers, &make_forced_prompts(&corpus.records))?;
                summary.insert("forced_completion".into(), serde_json::to_value(&result)?);
            }
            run.json("eval_bio.json", &summary)?;
        }
        Command::Ks(args) => {
            let result = ks_two_sample(&read_numbers(&args.xs)?, &read_numbers(&args.ys)?)?;
            run.write_with("ks.csv", ArtifactKind::Csv, Some(1), |w| {
                write_ks_csv(w, [(args.label.as_str(), &result)])
            })?;
            run.json(
                "ks.json",
                &json!({ "label": args.label, "result": result, "significant": result.significant() }),
            )?;
        }
    }
    Ok(run.finish()?)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(jobs) = cli.global.jobs {
            if jobs == 0 {
                bail!("--jobs must be positive");
            }
            b = b.num_threads(jobs);
        }
        b.build()?
    };
    let index = pool.install(|| run(cli))?;
    println!("{}", index.display());
    Ok(())
}
