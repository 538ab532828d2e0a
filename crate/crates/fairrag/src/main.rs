//! Operator CLI: ingest, ask, eval, report.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use fairrag::agents::PromptLibrary;
use fairrag::config::{Config, GatewayConfig, GatewayMode};
use fairrag::domain::{ModelTier, QueryTrace};
use fairrag::econ::CostModel;
use fairrag::error::{Error, Result};
use fairrag::evalharness::{self, Judge};
use fairrag::gateway::{Gateway, HttpBackend, ScriptedBackend};
use fairrag::ingest::{load_corpus, WordTokenizer, DEFAULT_MAX_TOKENS};
use fairrag::orchestrator::Pipeline;
use fairrag::retrieval::{HashEmbedder, Index, IndexParams};

#[derive(Parser)]
#[command(name = "fairrag", about = "Iterative retrieval-augmented QA pipeline")]
struct Cli {
    /// Configuration file (TOML). Missing file means defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Emit machine-readable JSON instead of human tables.
    #[arg(long, global = true)]
    json: bool,

    /// Worker threads for batch evaluation.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build and persist a search index from a JSONL corpus.
    Ingest(IngestArgs),
    /// Answer one question and print an iteration summary.
    Ask(AskArgs),
    /// Run the evaluation harness over a JSONL dataset.
    Eval(EvalArgs),
    /// Print the cost and latency model tables.
    Report(ReportArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Corpus JSONL path; overrides the config.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Output index directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Chunk token budget.
    #[arg(long, default_value_t = DEFAULT_MAX_TOKENS)]
    max_tokens: usize,
}

#[derive(Args)]
struct AskArgs {
    question: String,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Write the full trace JSON here.
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Backend override: http or scripted.
    #[arg(long)]
    backend: Option<String>,
    /// Scripted-backend rule file override.
    #[arg(long)]
    script: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Write one trace JSON per line here.
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Write the metrics report JSON here.
    #[arg(long)]
    report_out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Summarize these trace JSONL files empirically.
    #[arg(long)]
    traces: Option<PathBuf>,
}

fn load_config(path: &Option<PathBuf>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Config::parse(""),
    }
}

fn build_gateway(gw: &GatewayConfig, cost: CostModel) -> Result<Gateway> {
    let backend: Box<dyn fairrag::gateway::Backend> = match gw.mode {
        GatewayMode::Scripted => {
            let script = gw.script.as_ref().ok_or_else(|| {
                Error::Config("scripted gateway requires a script file".to_string())
            })?;
            Box::new(ScriptedBackend::from_jsonl(script)?)
        }
        GatewayMode::Http => {
            let models: HashMap<ModelTier, String> = gw.models().into_iter().collect();
            Box::new(HttpBackend::new(
                gw.base_url.clone(),
                models,
                gw.api_key()?,
            ))
        }
    };
    Ok(Gateway::new(backend, gw.routing(), cost).with_inflight_cap(gw.inflight_cap))
}

fn load_prompts(cfg: &Config) -> Result<PromptLibrary> {
    match &cfg.paths.prompts_dir {
        Some(dir) => PromptLibrary::from_dir(dir),
        None => Ok(PromptLibrary::builtin()),
    }
}

fn cmd_ingest(cli: &Cli, args: &IngestArgs) -> Result<()> {
    let cfg = load_config(&cli.config)?;
    let corpus = args.corpus.clone().unwrap_or(cfg.paths.corpus.clone());
    let out = args.out.clone().unwrap_or(cfg.paths.index_dir.clone());
    let tokenizer = Arc::new(WordTokenizer);
    let chunks = load_corpus(&corpus, args.max_tokens, &*tokenizer)?;
    let n_chunks = chunks.len();
    let index = Index::build(chunks, IndexParams::default(), tokenizer)?;
    index.save(&out)?;
    if cli.json {
        println!(
            "{}",
            serde_json::json!({"chunks": n_chunks, "index_dir": out})
        );
    } else {
        println!("indexed {n_chunks} chunks into {}", out.display());
    }
    Ok(())
}

fn summarize_trace(trace: &QueryTrace) {
    match trace.class {
        Some(c) => println!("class: {c}"),
        None => println!("class: (validation failed)"),
    }
    for it in &trace.iterations {
        let queries: Vec<&str> = it.sub_queries.iter().map(|q| q.text.as_str()).collect();
        println!(
            "iteration {}: sub-queries {:?}, sufficient: {}",
            it.index,
            queries,
            if it.sea.sufficient { "Yes" } else { "No" }
        );
    }
    if let Some(answer) = &trace.answer {
        println!("citations: {}", answer.citations.len());
        println!("\n{}", answer.text);
    }
    let a = &trace.accounting;
    println!(
        "\ncalls: {}, tokens: {}+{}, cost: ${:.6}, predicted latency: {:.2}s",
        a.api_calls, a.prompt_tokens, a.completion_tokens, a.cost_usd, a.latency_s
    );
}

fn cmd_ask(cli: &Cli, args: &AskArgs) -> Result<bool> {
    let mut cfg = load_config(&cli.config)?;
    if let Some(max_iter) = args.max_iter {
        cfg.pipeline.max_iter = max_iter;
    }
    if let Some(mode) = &args.backend {
        cfg.gateway.mode = match mode.as_str() {
            "http" => GatewayMode::Http,
            "scripted" => GatewayMode::Scripted,
            other => return Err(Error::Config(format!("unknown backend {other:?}"))),
        };
    }
    if args.script.is_some() {
        cfg.gateway.script = args.script.clone();
    }
    let index = Index::load(&cfg.paths.index_dir, Arc::new(WordTokenizer))?;
    let gateway = build_gateway(&cfg.gateway, cfg.econ.cost_model())?;
    let prompts = load_prompts(&cfg)?;
    let embedder = index.dimension().map(|dim| HashEmbedder { dim });
    let pipeline = Pipeline {
        config: cfg.pipeline.to_pipeline_config(),
        index: &index,
        gateway: &gateway,
        prompts: &prompts,
        provider: embedder
            .as_ref()
            .map(|e| e as &dyn fairrag::retrieval::EmbeddingProvider),
        latency: cfg.econ.latency_model(),
    };
    let trace = pipeline.run_query(&args.question);
    if let Some(path) = &args.trace_out {
        std::fs::write(path, serde_json::to_string_pretty(&trace)?)?;
    }
    if cli.json {
        println!("{}", serde_json::to_string(&trace)?);
    } else {
        summarize_trace(&trace);
    }
    if let Some(err) = &trace.error {
        eprintln!("pipeline aborted: {err}");
        return Ok(false);
    }
    Ok(true)
}

fn cmd_eval(cli: &Cli, args: &EvalArgs) -> Result<bool> {
    let cfg = load_config(&cli.config)?;
    let dataset = evalharness::load_dataset(&args.dataset)?;
    let index = Index::load(&cfg.paths.index_dir, Arc::new(WordTokenizer))?;
    let gateway = build_gateway(&cfg.gateway, cfg.econ.cost_model())?;
    let judge_gateway = build_gateway(&cfg.eval.judge, cfg.econ.cost_model())?;
    let prompts = load_prompts(&cfg)?;
    let embedder = index.dimension().map(|dim| HashEmbedder { dim });
    let pipeline = Pipeline {
        config: cfg.pipeline.to_pipeline_config(),
        index: &index,
        gateway: &gateway,
        prompts: &prompts,
        provider: embedder
            .as_ref()
            .map(|e| e as &dyn fairrag::retrieval::EmbeddingProvider),
        latency: cfg.econ.latency_model(),
    };
    let judge = Judge {
        gateway: &judge_gateway,
        prompts: &prompts,
        tier: cfg.eval.judge_tier,
    };
    let jobs = cli
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let outcomes = evalharness::run_eval_parallel(&dataset, &pipeline, &judge, jobs);
    if let Some(path) = &args.trace_out {
        let mut f = File::create(path)?;
        for o in &outcomes {
            writeln!(f, "{}", serde_json::to_string(&o.trace)?)?;
        }
    }
    let report = evalharness::aggregate(&outcomes, cfg.eval.correctness_threshold);
    let report_json = serde_json::to_string_pretty(&report)?;
    if let Some(path) = &args.report_out {
        std::fs::write(path, &report_json)?;
    }
    println!("{report_json}");
    let aborted = outcomes.iter().any(|o| o.trace.error.is_some());
    Ok(!aborted)
}

fn cmd_report(cli: &Cli, args: &ReportArgs) -> Result<()> {
    let cfg = load_config(&cli.config)?;
    let cost = cfg.econ.cost_model();
    let latency = cfg.econ.latency_model();

    // Reference workload: average call density of the dynamic pipeline.
    let ref_calls = 5.64;
    let ref_tokens = 10_900.0;
    let latency_rows = serde_json::json!({
        "model_time_ms_per_token": latency.m * 1000.0,
        "call_overhead_ms_per_token": latency.call_overhead_per_token(ref_calls, ref_tokens) * 1000.0,
        "run_overhead_ms_per_token": latency.run_overhead_per_token(ref_tokens) * 1000.0,
    });
    let configs = [
        ("static_small", 16_145.0, cost.blended_rate(ModelTier::Small)),
        ("static_large", 11_681.0, cost.blended_rate(ModelTier::Large)),
        (
            "static_reasoner",
            33_934.0,
            cost.blended_rate(ModelTier::Reasoner),
        ),
        ("dynamic", 11_863.0, cost.dynamic_rate()),
    ];
    let cost_rows: Vec<serde_json::Value> = configs
        .iter()
        .map(|(name, tokens, rate)| {
            serde_json::json!({
                "configuration": name,
                "avg_tokens": tokens,
                "blended_rate_per_mtok": rate,
                "avg_cost_usd": CostModel::cost_per_query(*tokens, *rate),
            })
        })
        .collect();

    let mut empirical = serde_json::Value::Null;
    if let Some(path) = &args.traces {
        let reader = BufReader::new(File::open(path)?);
        let mut calls = 0u64;
        let mut tokens = 0u64;
        let mut cost_sum = 0.0;
        let mut n = 0u64;
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let trace: QueryTrace = serde_json::from_str(&line)?;
            calls += trace.accounting.api_calls;
            tokens += trace.accounting.prompt_tokens + trace.accounting.completion_tokens;
            cost_sum += trace.accounting.cost_usd;
            n += 1;
        }
        if n > 0 {
            empirical = serde_json::json!({
                "traces": n,
                "avg_calls": calls as f64 / n as f64,
                "avg_tokens": tokens as f64 / n as f64,
                "avg_cost_usd": cost_sum / n as f64,
            });
        }
    }

    let report = serde_json::json!({
        "latency_per_token": latency_rows,
        "cost_per_query": cost_rows,
        "empirical": empirical,
    });
    if cli.json {
        println!("{report}");
    } else {
        println!("{}", serde_json::to_string_pretty(&report)?);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Ingest(args) => cmd_ingest(&cli, args).map(|()| true),
        Command::Ask(args) => cmd_ask(&cli, args),
        Command::Eval(args) => cmd_eval(&cli, args),
        Command::Report(args) => cmd_report(&cli, args).map(|()| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
