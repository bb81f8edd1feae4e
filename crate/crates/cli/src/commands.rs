//! Subcommand definitions and their implementations.
//!
//! Every command writes its result to the given writer so it can be driven
//! from tests; `main` only maps errors to exit codes.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use guardrail_core::backends::{BackendHandle, BackendSlot, EmbeddingBackend};
use guardrail_core::customizer::Wrapper;
use guardrail_core::dataprep::{process_dataset, read_jsonl, write_jsonl, FailureMode, RawHaluRecord};
use guardrail_core::grounding::{
    build_index, ground_query, load_corpus, run_callback_experiment, write_callback_csv, ExperimentConfig,
    QueryMode, SyntheticRephraser,
};
use guardrail_core::repairer::{repair, RepairRequest};
use guardrail_core::safety::{check_input, detect_hallucination};
use guardrail_core::IndexStrategy;
use serde::{Deserialize, Serialize};

use crate::config::{build_backend, build_guardrail, build_reasoning, build_url_wrapper, ServiceConfig};
use crate::service::{serve, AppState};

/// Invalid arguments detected after parsing; exits with status 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

#[derive(Debug, Parser)]
#[command(name = "guardrail", version, about = "Guardrail pipeline for LLM applications")]
pub struct Cli {
    /// TOML service configuration. Without it every backend is a mock.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum StrategyArg {
    WholeKnowledge,
    KeyInformation,
    Both,
}

impl StrategyArg {
    fn strategies(self) -> Vec<IndexStrategy> {
        match self {
            StrategyArg::WholeKnowledge => vec![IndexStrategy::WholeKnowledge],
            StrategyArg::KeyInformation => vec![IndexStrategy::KeyInformation],
            StrategyArg::Both => vec![IndexStrategy::WholeKnowledge, IndexStrategy::KeyInformation],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum ModeArg {
    Original,
    Rephrased,
    Both,
}

impl ModeArg {
    fn modes(self) -> Vec<QueryMode> {
        match self {
            ModeArg::Original => vec![QueryMode::Original],
            ModeArg::Rephrased => vec![QueryMode::Rephrased],
            ModeArg::Both => vec![QueryMode::Original, QueryMode::Rephrased],
        }
    }
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

fn probability(s: &str) -> Result<f64, String> {
    let p: f64 = s.parse().map_err(|e: std::num::ParseFloatError| e.to_string())?;
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err("must be within [0, 1]".into())
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classify a user input as safe or unsafe.
    CheckInput {
        #[arg(long)]
        text: String,
        #[arg(long, value_parser = probability)]
        threshold: Option<f64>,
    },
    /// Score an answer for hallucination.
    DetectHalu {
        #[arg(long)]
        question: String,
        #[arg(long, default_value = "")]
        context: String,
        #[arg(long)]
        answer: String,
        #[arg(long, value_parser = positive)]
        top_k: Option<usize>,
        #[arg(long, value_parser = probability)]
        threshold: Option<f64>,
    },
    /// Retrieve the top-k knowledge records for a query.
    Ground {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(long, default_value_t = 3, value_parser = positive)]
        k: usize,
        #[arg(long, default_value = "key_information")]
        strategy: IndexStrategy,
    },
    /// Rewrite a hallucinated answer using the detector's reason.
    Repair {
        #[arg(long)]
        question: String,
        #[arg(long, default_value = "")]
        context: String,
        #[arg(long)]
        answer: String,
        #[arg(long)]
        reason: String,
    },
    /// Turn labeled QA records into detector training records (JSONL).
    PrepData {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip records whose explanation fails instead of aborting.
        #[arg(long)]
        skip_failures: bool,
    },
    /// Measure top-k callback of the index strategies (CSV).
    EvalCallback {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value_t = StrategyArg::Both)]
        strategy: StrategyArg,
        #[arg(long, value_delimiter = ',', default_value = "1,3,5,10", value_parser = positive)]
        k: Vec<usize>,
        #[arg(long, value_enum, default_value_t = ModeArg::Original)]
        mode: ModeArg,
        /// Number of questions to sample; all when omitted.
        #[arg(long, value_parser = positive)]
        sample: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Latency report for the URL warning wrapper over a JSONL file of texts.
    BenchWrapper {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 1, value_parser = positive)]
        iterations: usize,
    },
    /// Run the HTTP service.
    Serve {
        /// Overrides `listen` from the config.
        #[arg(long)]
        listen: Option<String>,
    },
}

pub fn load_config(path: Option<&Path>) -> Result<ServiceConfig> {
    match path {
        Some(p) => ServiceConfig::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(ServiceConfig::default()),
    }
}

fn emit_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

fn embedder(config: &ServiceConfig) -> Result<Arc<dyn EmbeddingBackend>> {
    match build_backend(BackendSlot::Embedding, &config.descriptor(BackendSlot::Embedding))? {
        BackendHandle::Embedding(e) => Ok(e),
        _ => unreachable!("embedding slot builds an embedding handle"),
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum TextLine {
    Object { text: String },
    Plain(String),
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LatencyReport {
    pub texts: usize,
    pub iterations: usize,
    pub modified: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[f64], pct: f64) -> f64 {
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn bench_wrapper(wrapper: &dyn Wrapper, texts: &[String], iterations: usize) -> LatencyReport {
    let mut samples = Vec::with_capacity(texts.len() * iterations);
    let mut modified = 0;
    for round in 0..iterations {
        for text in texts {
            let start = Instant::now();
            let out = wrapper.apply(text, &[]);
            samples.push(start.elapsed().as_secs_f64() * 1e3);
            if round == 0 && out.is_ok_and(|o| o.modified) {
                modified += 1;
            }
        }
    }
    samples.sort_by(f64::total_cmp);
    let mean = if samples.is_empty() { 0.0 } else { samples.iter().sum::<f64>() / samples.len() as f64 };
    let pick = |p| if samples.is_empty() { 0.0 } else { percentile(&samples, p) };
    LatencyReport {
        texts: texts.len(),
        iterations,
        modified,
        mean_ms: mean,
        p50_ms: pick(50.0),
        p90_ms: pick(90.0),
        p99_ms: pick(99.0),
        max_ms: samples.last().copied().unwrap_or(0.0),
    }
}

pub fn read_texts(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut texts = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: TextLine =
            serde_json::from_str(&line).with_context(|| format!("{}:{}: not a text record", path.display(), i + 1))?;
        texts.push(match parsed {
            TextLine::Object { text } | TextLine::Plain(text) => text,
        });
    }
    Ok(texts)
}

/// Run one non-serving command.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::CheckInput { text, threshold } => {
            if text.trim().is_empty() {
                bail!(UsageError("--text must not be empty".into()));
            }
            let handle = build_backend(BackendSlot::Moderation, &config.descriptor(BackendSlot::Moderation))?;
            let BackendHandle::Moderation(m) = handle else { unreachable!() };
            let verdict = check_input(m.as_ref(), &text, threshold.unwrap_or(config.input_unsafe_threshold))?;
            emit_json(out, &verdict)
        }
        Command::DetectHalu {
            question,
            context,
            answer,
            top_k,
            threshold,
        } => {
            let mut policy = config.policy.clone();
            if let Some(k) = top_k {
                policy.top_k_tokens = k;
            }
            if let Some(t) = threshold {
                policy.halu_threshold = t;
            }
            let handle = build_backend(BackendSlot::Generation, &config.descriptor(BackendSlot::Generation))?;
            let BackendHandle::Generation(g) = handle else { unreachable!() };
            let sets = guardrail_core::YesNoTokenSets::default();
            let assessment = detect_hallucination(g.as_ref(), &question, &context, &answer, &policy, &sets)?;
            emit_json(out, &assessment)
        }
        Command::Ground {
            corpus,
            query,
            k,
            strategy,
        } => {
            let records = load_corpus(&corpus)?;
            let e = embedder(&config)?;
            let index = build_index(&records, strategy, e.as_ref())?;
            emit_json(out, &ground_query(&query, &index, k, e.as_ref())?)
        }
        Command::Repair {
            question,
            context,
            answer,
            reason,
        } => {
            let handle = build_backend(BackendSlot::Fixing, &config.descriptor(BackendSlot::Fixing))?;
            let BackendHandle::Fixing(f) = handle else { unreachable!() };
            let req = RepairRequest::new(question, context, answer, reason);
            if let Err(e) = req.validate() {
                bail!(UsageError(e.to_string()));
            }
            emit_json(out, &repair(f.as_ref(), &req)?)
        }
        Command::PrepData {
            input,
            out: out_path,
            skip_failures,
        } => {
            let file = File::open(&input).with_context(|| format!("opening {}", input.display()))?;
            let raw: Vec<RawHaluRecord> = read_jsonl(BufReader::new(file))?;
            let reasoning = build_reasoning(&config)?;
            let mode = if skip_failures { FailureMode::Skip } else { FailureMode::Abort };
            let processed = process_dataset(&raw, reasoning.as_ref(), mode)?;
            let file = File::create(&out_path).with_context(|| format!("creating {}", out_path.display()))?;
            write_jsonl(BufWriter::new(file), &processed.records)?;
            emit_json(
                out,
                &serde_json::json!({
                    "input": raw.len(),
                    "written": processed.records.len(),
                    "skipped": processed.skipped,
                }),
            )
        }
        Command::EvalCallback {
            corpus,
            strategy,
            k,
            mode,
            sample,
            seed,
            out: out_path,
        } => {
            let records = load_corpus(&corpus)?;
            let e = embedder(&config)?;
            let rephraser = SyntheticRephraser::new(seed);
            let mut rows = Vec::new();
            for s in strategy.strategies() {
                for m in mode.modes() {
                    let cfg = ExperimentConfig {
                        strategy: s,
                        query_mode: m,
                        k_values: k.clone(),
                        sample_size: sample,
                        seed,
                    };
                    rows.extend(run_callback_experiment(&records, &cfg, e.as_ref(), &rephraser)?);
                }
            }
            match out_path {
                Some(p) => {
                    let file = File::create(&p).with_context(|| format!("creating {}", p.display()))?;
                    write_callback_csv(BufWriter::new(file), &rows)?;
                }
                None => write_callback_csv(out, &rows)?,
            }
            Ok(())
        }
        Command::BenchWrapper { input, iterations } => {
            let texts = read_texts(&input)?;
            let wrapper = build_url_wrapper(&config.customizer.url_warning)?;
            emit_json(out, &bench_wrapper(&wrapper, &texts, iterations))
        }
        Command::Serve { .. } => bail!(UsageError("serve is handled by run_serve".into())),
    }
}

/// Build everything, then serve until Ctrl-C.
///
/// The pipeline is built before the async runtime starts and the last
/// reference is dropped after it stops, because blocking HTTP clients must
/// not be created or dropped on runtime threads.
pub fn run_serve(config_path: Option<&Path>, listen: Option<String>) -> Result<()> {
    let mut config = load_config(config_path)?;
    if let Some(l) = listen {
        config.listen = l;
    }
    config.validate()?;
    let guardrail = Arc::new(build_guardrail(&config)?);
    let state = AppState::new(guardrail.clone(), config.policy.clone());

    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&config.listen)
            .await
            .with_context(|| format!("binding {}", config.listen))?;
        tracing::info!(addr = %listener.local_addr()?, "listening");
        serve(listener, state, async {
            let _ = tokio::signal::ctrl_c().await;
            tracing::info!("shutting down");
        })
        .await?;
        anyhow::Ok(())
    })?;
    drop(runtime);
    drop(guardrail);
    Ok(())
}
