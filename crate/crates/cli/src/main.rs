use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use sap_core::backend::{BackendServer, BACKEND_URL_ENV};
use sap_core::pipeline::{self, RunConfig};
use sap_core::{BackendError, Error};

/// Sequential autoregressive prompting: few-shot and unsupervised
/// translation, QA and summarization with mask-infill models.
#[derive(Parser)]
#[command(name = "sap", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    #[command(flatten)]
    overrides: Overrides,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

/// Flags that override configuration keys.
#[derive(Args, Default)]
struct Overrides {
    /// Backend base URL (`backend.url`); also read from SAP_BACKEND_URL.
    #[arg(long, global = true)]
    backend_url: Option<String>,
    /// `source_lang`
    #[arg(long, global = true)]
    source_lang: Option<String>,
    /// `target_lang`
    #[arg(long, global = true)]
    target_lang: Option<String>,
    /// `seed`
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `workers`
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// `paths.input`
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// `paths.output`
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// `paths.manifest`
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// `paths.shots`
    #[arg(long, global = true)]
    shots: Option<PathBuf>,
    /// `paths.checkpoint`
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Any configuration key, e.g. `--set sap.max_steps=64`. Values are
    /// read as TOML, falling back to a plain string.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Translate every input line with the few-shot prompt from the shots file.
    TranslateFewshot,
    /// Build a synthetic few-shot pool from monolingual text; resumes from
    /// an existing checkpoint.
    Bootstrap {
        /// Stop once this many rounds are complete.
        #[arg(long)]
        stop_after_round: Option<usize>,
    },
    /// Translate with a prompt ensemble built from a bootstrap checkpoint.
    TranslateZeroshot,
    /// Answer questions from a JSONL dataset (context, question, answers).
    Qa,
    /// Summarize articles from a JSONL dataset (article, summary).
    Summarize,
    /// Score a candidates file against a references file.
    Evaluate,
    /// Serve the configured mock backend over HTTP until killed.
    ServeMock {
        /// Listen address (`backend.listen`); port 0 picks a free port.
        #[arg(long)]
        listen: Option<String>,
        #[arg(long, default_value_t = 4)]
        threads: usize,
    },
    /// Write a toy corpus, mock backend files and a starter config.
    GenToy {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 500)]
        sentences: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the effective configuration as TOML.
    ShowConfig,
}

fn set_key(table: &mut toml::Table, dotted: &str, value: toml::Value) -> anyhow::Result<()> {
    let mut parts = dotted.split('.').peekable();
    let mut cur = table;
    while let Some(part) = parts.next() {
        if part.is_empty() {
            bail!("bad key {dotted:?}");
        }
        if parts.peek().is_none() {
            cur.insert(part.to_string(), value);
            return Ok(());
        }
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("{dotted:?}: {part:?} is not a table"))?;
    }
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn path_value(p: &Path) -> toml::Value {
    toml::Value::String(p.display().to_string())
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    // File paths are relative to the config file; flag paths to the
    // working directory.
    let mut table = match &cli.config {
        Some(p) => {
            let cfg = RunConfig::load(p)?;
            toml::Table::try_from(&cfg)?
        }
        None => toml::Table::new(),
    };
    let o = &cli.overrides;
    let env_url = std::env::var(BACKEND_URL_ENV).ok().filter(|s| !s.is_empty());
    let mut pairs: Vec<(&str, toml::Value)> = Vec::new();
    if let Some(url) = o.backend_url.clone().or(env_url) {
        pairs.push(("backend.url", toml::Value::String(url)));
    }
    if let Some(v) = &o.source_lang {
        pairs.push(("source_lang", toml::Value::String(v.clone())));
    }
    if let Some(v) = &o.target_lang {
        pairs.push(("target_lang", toml::Value::String(v.clone())));
    }
    if let Some(v) = o.seed {
        pairs.push(("seed", toml::Value::Integer(i64::try_from(v).context("seed too large")?)));
    }
    if let Some(v) = o.workers {
        pairs.push(("workers", toml::Value::Integer(v as i64)));
    }
    let paths = [
        ("paths.input", &o.input),
        ("paths.output", &o.output),
        ("paths.manifest", &o.manifest),
        ("paths.shots", &o.shots),
        ("paths.checkpoint", &o.checkpoint),
    ];
    for (key, value) in paths {
        if let Some(p) = value {
            pairs.push((key, path_value(p)));
        }
    }
    for (key, value) in pairs {
        set_key(&mut table, key, value)?;
    }
    for item in &o.set {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got {item:?}"))?;
        set_key(&mut table, key.trim(), parse_value(raw.trim()))?;
    }
    let text = toml::to_string(&table)?;
    Ok(RunConfig::from_toml_str(&text)?)
}

fn print_json(value: &impl serde::Serialize) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Command::GenToy { dir, sentences, seed } = &cli.command {
        let written = pipeline::cmd_gen_toy(dir, *sentences, *seed)?;
        return print_json(&json!({ "written": written }));
    }
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::TranslateFewshot => print_json(&pipeline::cmd_translate_fewshot(&cfg)?),
        Command::TranslateZeroshot => print_json(&pipeline::cmd_translate_zeroshot(&cfg)?),
        Command::Qa => print_json(&pipeline::cmd_qa(&cfg)?),
        Command::Summarize => print_json(&pipeline::cmd_summarize(&cfg)?),
        Command::Evaluate => print_json(&pipeline::cmd_evaluate(&cfg)?),
        Command::Bootstrap { stop_after_round } => {
            let ckpt = pipeline::cmd_bootstrap(&cfg, *stop_after_round)?;
            print_json(&json!({
                "rounds_completed": ckpt.rounds_completed,
                "rounds": ckpt.config.rounds,
                "pool_size": ckpt.pool.len(),
                "pool_minima": ckpt.pool_minima(),
                "checkpoint": cfg.paths.checkpoint,
            }))
        }
        Command::ServeMock { listen, threads } => {
            let (infill, embedder) = pipeline::mock_backends(&cfg.backend)?;
            let mask = infill.spec().mask_token.clone();
            let addr = listen.clone().unwrap_or_else(|| cfg.backend.listen.clone());
            let server = BackendServer::start(&addr, infill, embedder, &mask, *threads)
                .with_context(|| format!("binding {addr}"))?;
            println!("{}", server.url());
            std::io::stdout().flush()?;
            server.join();
            Ok(())
        }
        Command::ShowConfig => {
            print!("{}", cfg.to_toml_string()?);
            Ok(())
        }
        Command::GenToy { .. } => unreachable!("handled above"),
    }
}

/// 2: invalid input or configuration, 3: backend unreachable or failing,
/// 4: checkpoint integrity, 1: anything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Integrity { .. }) => 4,
        Some(Error::Backend(BackendError::Transport { .. })) => 3,
        Some(Error::Backend(BackendError::Protocol(_))) => 3,
        Some(Error::Io { .. }) => 1,
        Some(_) => 2,
        None if err.downcast_ref::<toml::de::Error>().is_some() => 2,
        None if err.downcast_ref::<clap::Error>().is_some() => 2,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
