//! `deeia` command-line tool.

mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use deeia::corpus::{generate_synthetic, load_corpus, load_templates, save_corpus, GenConfig};
use deeia::model::{export_bias_summary, Model, Vocab};
use deeia::pipeline::{
    bench, bench_documents, error_report, evaluate, grad_check_config, model_grad_check, predict_corpus,
    predictions_from_jsonl, predictions_to_jsonl, train, Mode,
};
use serde::Serialize;
use toml::Value;

use config::{parse_override, RunConfig};

const GRAD_CHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(name = "deeia", version, about = "Multi-event document-level argument extraction")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// TOML file with flat `key = value` settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set gamma=0.1`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded synthetic corpus (JSONL) and its templates (JSON).
    GenCorpus {
        #[arg(long)]
        docs: Option<usize>,
        /// Where to write the template registry.
        #[arg(long)]
        templates: Option<PathBuf>,
    },
    /// Train a model and write its checkpoint.
    Train {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        templates: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        /// Per-step JSONL loss log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Predict arguments for a corpus.
    Infer {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        templates: Option<PathBuf>,
        #[arg(long, default_value = "multi")]
        mode: Mode,
    },
    /// Score predictions against gold.
    Eval {
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Five-category error report.
    Errors {
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Time multi-event against per-event inference.
    Bench {
        /// Checkpoint to time; a freshly initialized model otherwise.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        repeats: usize,
        #[arg(long, default_value_t = 3)]
        warmup: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        events: Vec<usize>,
        #[arg(long, default_value_t = 4)]
        docs_per_bucket: usize,
    },
    /// Mean learned attention bias per layer and dependency category.
    BiasSummary {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        templates: Option<PathBuf>,
    },
    /// Finite-difference check of the full model loss.
    Gradcheck {
        /// Coordinates checked per parameter tensor.
        #[arg(long, default_value_t = 8)]
        per_param: usize,
    },
}

/// Bad command-line usage (exit 1).
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

/// Numeric failure not raised by the core library (exit 3).
#[derive(Debug)]
struct Numeric(String);

impl std::fmt::Display for Numeric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Numeric {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (kind, code) = classify(&err);
            let report = serde_json::json!({
                "error": kind,
                "message": format!("{err:#}"),
            });
            eprintln!("{report}");
            ExitCode::from(code)
        }
    }
}

fn classify(err: &anyhow::Error) -> (&'static str, u8) {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return ("usage", 1);
        }
        if cause.is::<Numeric>() {
            return ("numeric", 3);
        }
        if let Some(e) = cause.downcast_ref::<deeia::Error>() {
            if e.is_numeric() {
                return ("numeric", 3);
            }
        }
    }
    ("data", 2)
}

/// Settings from `--config`, then `--set`, then the dedicated flags.
fn load_config(common: &Common, flags: Vec<(&str, Option<Value>)>) -> Result<RunConfig> {
    let mut overrides = common
        .set
        .iter()
        .map(|s| parse_override(s).map_err(|e| anyhow!(Usage(e.to_string()))))
        .collect::<Result<Vec<_>>>()?;
    let mut push = |k: &str, v: Option<Value>| {
        if let Some(v) = v {
            overrides.push((k.to_string(), v));
        }
    };
    push("seed", common.seed.map(|s| Value::Integer(s as i64)));
    push("out", common.out.as_deref().map(path_value));
    for (k, v) in flags {
        push(k, v);
    }
    RunConfig::load(common.config.as_deref(), &overrides)
}

fn path_value(p: &Path) -> Value {
    Value::String(p.display().to_string())
}

fn path_flag(p: &Option<PathBuf>) -> Option<Value> {
    p.as_deref().map(path_value)
}

fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| anyhow!(Usage(format!("missing --{what} (or `{what}` in the config file)"))))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Writes `value` as pretty JSON to `out` when given, and prints it either way.
fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    if let Some(path) = out {
        write_text(path, &(text.clone() + "\n"))?;
    }
    print_stdout(&(text + "\n"))
}

/// Prints to stdout; a closed pipe (e.g. `| head`) is not an error.
fn print_stdout(text: &str) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    match stdout.write_all(text.as_bytes()).and_then(|()| stdout.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e).context("writing to stdout"),
        _ => Ok(()),
    }
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    match cli.command {
        Command::GenCorpus { docs, templates } => {
            let cfg = load_config(common, vec![("templates", path_flag(&templates))])?;
            let out = require(&cfg.paths.out, "out")?;
            let gen = GenConfig {
                documents: docs.unwrap_or(GenConfig::default().documents),
                ..GenConfig::default()
            };
            let corpus = generate_synthetic(&gen, cfg.train.seed)?;
            save_corpus(&corpus, out)?;
            if let Some(t) = &cfg.paths.templates {
                write_text(t, &gen.registry()?.to_json_string())?;
            }
            let multi = corpus.documents.iter().filter(|d| d.events.len() > 1).count();
            emit(
                &serde_json::json!({
                    "documents": corpus.len(),
                    "multi_event_documents": multi,
                    "seed": cfg.train.seed,
                    "corpus": out,
                    "templates": cfg.paths.templates,
                }),
                None,
            )
        }
        Command::Train {
            corpus,
            templates,
            steps,
            log,
        } => {
            let cfg = load_config(
                common,
                vec![
                    ("corpus", path_flag(&corpus)),
                    ("templates", path_flag(&templates)),
                    ("steps", steps.map(|s| Value::Integer(s as i64))),
                    ("log", path_flag(&log)),
                ],
            )?;
            let out = require(&cfg.paths.out, "out")?;
            let corpus = load_corpus(require(&cfg.paths.corpus, "corpus")?)?;
            let reg = load_templates(require(&cfg.paths.templates, "templates")?)?;
            let mut log_file = match &cfg.paths.log {
                Some(p) => {
                    write_text(p, "")?;
                    Some(
                        fs::OpenOptions::new()
                            .append(true)
                            .open(p)
                            .with_context(|| format!("opening {}", p.display()))?,
                    )
                }
                None => None,
            };
            let mut log_err = None;
            let outcome = train(&corpus, &reg, &cfg.model, &cfg.train, |s| {
                if let (Some(f), None) = (log_file.as_mut(), log_err.as_ref()) {
                    let line = serde_json::to_string(s).expect("step log serializes");
                    if let Err(e) = writeln!(f, "{line}") {
                        log_err = Some(e);
                    }
                }
            })?;
            if let Some(e) = log_err {
                return Err(e).context("writing training log");
            }
            outcome.model.save(out)?;
            emit(
                &serde_json::json!({
                    "steps": cfg.train.steps,
                    "last_loss": outcome.last_loss,
                    "dropped_golds": outcome.dropped_golds,
                    "checkpoint": out,
                }),
                None,
            )
        }
        Command::Infer {
            checkpoint,
            corpus,
            templates,
            mode,
        } => {
            let cfg = load_config(
                common,
                vec![
                    ("checkpoint", path_flag(&checkpoint)),
                    ("corpus", path_flag(&corpus)),
                    ("templates", path_flag(&templates)),
                ],
            )?;
            let model = Model::load(require(&cfg.paths.checkpoint, "checkpoint")?)?;
            let corpus = load_corpus(require(&cfg.paths.corpus, "corpus")?)?;
            let reg = load_templates(require(&cfg.paths.templates, "templates")?)?;
            let preds = predict_corpus(&model, &reg, &corpus, mode)?;
            let text = predictions_to_jsonl(&preds);
            match &cfg.paths.out {
                Some(out) => {
                    write_text(out, &text)?;
                    emit(&serde_json::json!({ "predictions": preds.len(), "mode": mode, "out": out }), None)
                }
                None => {
                    print_stdout(&text)
                }
            }
        }
        Command::Eval { predictions, corpus } => {
            let (cfg, preds, gold) = scoring_inputs(common, predictions, corpus)?;
            emit(&evaluate(&preds, &gold)?, cfg.paths.out.as_deref())
        }
        Command::Errors { predictions, corpus } => {
            let (cfg, preds, gold) = scoring_inputs(common, predictions, corpus)?;
            emit(&error_report(&preds, &gold)?, cfg.paths.out.as_deref())
        }
        Command::Bench {
            checkpoint,
            repeats,
            warmup,
            events,
            docs_per_bucket,
        } => {
            let cfg = load_config(common, vec![("checkpoint", path_flag(&checkpoint))])?;
            let (docs, reg) = bench_documents(&events, docs_per_bucket, cfg.train.seed)?;
            let model = match &cfg.paths.checkpoint {
                Some(p) => Model::load(p)?,
                None => Model::new(
                    cfg.model.clone(),
                    Vocab::build(&docs, &reg, cfg.model.max_markers),
                    cfg.train.seed,
                )?,
            };
            emit(&bench(&model, &reg, &docs.documents, repeats, warmup)?, cfg.paths.out.as_deref())
        }
        Command::BiasSummary {
            checkpoint,
            corpus,
            templates,
        } => {
            let cfg = load_config(
                common,
                vec![
                    ("checkpoint", path_flag(&checkpoint)),
                    ("corpus", path_flag(&corpus)),
                    ("templates", path_flag(&templates)),
                ],
            )?;
            let model = Model::load(require(&cfg.paths.checkpoint, "checkpoint")?)?;
            let corpus = load_corpus(require(&cfg.paths.corpus, "corpus")?)?;
            let reg = load_templates(require(&cfg.paths.templates, "templates")?)?;
            emit(&export_bias_summary(&model, &corpus, &reg)?, cfg.paths.out.as_deref())
        }
        Command::Gradcheck { per_param } => {
            let cfg = load_config(common, vec![])?;
            let report = model_grad_check(&grad_check_config(), cfg.train.seed, per_param)?;
            let passed = report.max_rel_error <= GRAD_CHECK_TOLERANCE;
            emit(
                &serde_json::json!({
                    "seed": cfg.train.seed,
                    "checked": report.checked,
                    "max_rel_error": report.max_rel_error,
                    "worst_param": report.worst_param,
                    "worst_index": report.worst_index,
                    "tolerance": GRAD_CHECK_TOLERANCE,
                    "passed": passed,
                }),
                cfg.paths.out.as_deref(),
            )?;
            if passed {
                Ok(())
            } else {
                Err(anyhow!(Numeric(format!(
                    "max relative error {:e} exceeds {GRAD_CHECK_TOLERANCE:e}",
                    report.max_rel_error
                ))))
            }
        }
    }
}

fn scoring_inputs(
    common: &Common,
    predictions: Option<PathBuf>,
    corpus: Option<PathBuf>,
) -> Result<(RunConfig, Vec<deeia::pipeline::Prediction>, deeia::corpus::Corpus)> {
    let cfg = load_config(
        common,
        vec![("predictions", path_flag(&predictions)), ("corpus", path_flag(&corpus))],
    )?;
    let path = require(&cfg.paths.predictions, "predictions")?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let preds = predictions_from_jsonl(&text)?;
    let gold = load_corpus(require(&cfg.paths.corpus, "corpus")?)?;
    Ok((cfg, preds, gold))
}
