//! Run orchestration behind the command-line tool: configuration, dataset
//! ingestion, resumable manifests and the per-command drivers.
//!
//! A manifest is line-delimited JSON: one header record holding the command
//! and a configuration snapshot, then one record per finished item. Items are
//! appended in input order, so a rerun skips what is already recorded and
//! produces the same bytes as an uninterrupted run. Wall-clock timings go to
//! a `.timings.json` sidecar to keep the manifest itself deterministic.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{
    Embedder, HttpBackend, InfillBackend, Lexicon, MockEmbedder, MockInfill, MockInfillSpec,
    RetryPolicy, BACKEND_URL_ENV,
};
use crate::bootstrap::{write_atomic, BootstrapCheckpoint, BootstrapConfig, CorpusSet, Strategy};
use crate::ensemble::{build_ensemble, translate_ensemble, Grouping};
use crate::error::{Error, Result};
use crate::metrics::{
    bleu_report, qa_em_f1, qa_reports, rouge_l_with_beta, rouge_report, BleuConfig, MetricReport,
    Smoothing, Tokenizer, VocabTokenizer, DEFAULT_BETA,
};
use crate::prompt::{Example, FieldShot, LangTag, PromptTemplate, TaskKind, TaskSpec};
use crate::sap::{generate_fields, single_infill, FinishReason, SapConfig, SapOutput};
use crate::scoring::{builtin_profiles, LangProfile, Scorer, ScoringConfig};
use crate::toy::ToyWorld;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Http,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Base URL of an HTTP backend. Falls back to `SAP_BACKEND_URL`.
    pub url: Option<String>,
    pub timeout_ms: u64,
    pub retry_attempts: u32,
    pub initial_backoff_ms: u64,
    /// Engine sentinel -> model vocabulary entry.
    pub token_map: BTreeMap<String, String>,
    /// JSON file holding a mock infill spec (mock backends only).
    pub mock_spec: Option<PathBuf>,
    /// JSON object mapping words to a shared form for the mock embedder.
    pub canonical: Option<PathBuf>,
    /// Address for `serve-mock`.
    pub listen: String,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Http,
            url: None,
            timeout_ms: 30_000,
            retry_attempts: 3,
            initial_backoff_ms: 50,
            token_map: BTreeMap::new(),
            mock_spec: None,
            canonical: None,
            listen: "127.0.0.1:8080".to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    #[default]
    Bleu,
    RougeL,
    Qa,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    pub metric: MetricKind,
    pub max_ngram: usize,
    pub smoothing: Smoothing,
    /// Subword vocabulary for BLEU; whitespace+punctuation when absent.
    pub vocab: Option<PathBuf>,
    pub rouge_beta: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            metric: MetricKind::Bleu,
            max_ngram: 4,
            smoothing: Smoothing::Exponential,
            vocab: None,
            rouge_beta: DEFAULT_BETA,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub shots: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub candidates: Option<PathBuf>,
    pub references: Option<PathBuf>,
    pub report: Option<PathBuf>,
    /// Monolingual corpora by language code.
    pub corpora: BTreeMap<String, PathBuf>,
    /// Language-id seed texts by language code; bundled profiles when empty.
    pub profiles: BTreeMap<String, PathBuf>,
}

/// Bootstrap settings of a run. The seed and SAP settings come from the
/// top level of [`RunConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSection {
    pub rounds: usize,
    pub sample_size: usize,
    pub pool_keep: usize,
    pub shots_per_prompt: usize,
    pub strategy: Strategy,
    pub self_amplification: bool,
    pub pivot_lang: String,
}

impl Default for BootstrapSection {
    fn default() -> Self {
        let d = BootstrapConfig::default();
        BootstrapSection {
            rounds: d.rounds,
            sample_size: d.sample_size,
            pool_keep: d.pool_keep,
            shots_per_prompt: d.shots_per_prompt,
            strategy: d.strategy,
            self_amplification: d.self_amplification,
            pivot_lang: d.pivot_lang,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskKind,
    pub source_lang: String,
    pub target_lang: String,
    /// Seeds the bootstrap sampler; required for `bootstrap`.
    pub seed: Option<u64>,
    pub workers: usize,
    /// Demonstrations taken from the shots file; all of them when unset.
    pub shots: Option<usize>,
    /// `false` makes each item a single raw infill call.
    pub sap_enabled: bool,
    pub ensemble_size: usize,
    pub grouping: Grouping,
    pub sap: SapConfig,
    pub bootstrap: BootstrapSection,
    pub scoring: ScoringConfig,
    pub backend: BackendConfig,
    pub metrics: MetricConfig,
    pub paths: PathConfig,
    /// Replaces the default template for the task.
    pub template: Option<PromptTemplate>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: TaskKind::Translation,
            source_lang: "es".to_string(),
            target_lang: "en".to_string(),
            seed: None,
            workers: 8,
            shots: None,
            sap_enabled: true,
            ensemble_size: 8,
            grouping: Grouping::RankConsecutive,
            sap: SapConfig::default(),
            bootstrap: BootstrapSection::default(),
            scoring: ScoringConfig::default(),
            backend: BackendConfig::default(),
            metrics: MetricConfig::default(),
            paths: PathConfig::default(),
            template: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::format("run config", e))
    }

    /// Loads a config file; relative paths in it are taken relative to the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg =
            Self::from_toml_str(&text).map_err(|e| Error::format(path.display().to_string(), e))?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    /// Joins every relative path onto `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let p = &mut self.paths;
        for slot in [
            &mut p.input,
            &mut p.output,
            &mut p.manifest,
            &mut p.shots,
            &mut p.checkpoint,
            &mut p.candidates,
            &mut p.references,
            &mut p.report,
            &mut self.backend.mock_spec,
            &mut self.backend.canonical,
            &mut self.metrics.vocab,
        ]
        .into_iter()
        .flatten()
        {
            fix(slot);
        }
        p.corpora.values_mut().chain(p.profiles.values_mut()).for_each(fix);
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::format("run config", e))
    }

    pub fn source(&self) -> Result<LangTag> {
        lang_tag(&self.source_lang)
    }

    pub fn target(&self) -> Result<LangTag> {
        lang_tag(&self.target_lang)
    }

    /// The bootstrap settings with the run's seed and SAP settings applied.
    pub fn effective_bootstrap(&self) -> Result<BootstrapConfig> {
        let seed = self
            .seed
            .ok_or_else(|| Error::invalid("run config", "`seed` must be set for bootstrap runs"))?;
        let b = self.bootstrap.clone();
        Ok(BootstrapConfig {
            rounds: b.rounds,
            sample_size: b.sample_size,
            pool_keep: b.pool_keep,
            shots_per_prompt: b.shots_per_prompt,
            strategy: b.strategy,
            self_amplification: b.self_amplification,
            rng_seed: seed,
            pivot_lang: b.pivot_lang,
            sap: self.sap.clone(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::invalid("run config", "workers must be >= 1"));
        }
        self.sap.validate()?;
        if let Some(t) = &self.template {
            t.validate()?;
        }
        Ok(())
    }

    fn template_for(&self, kind: TaskKind) -> Result<PromptTemplate> {
        if let Some(t) = &self.template {
            return Ok(t.clone());
        }
        Ok(match kind {
            TaskKind::Translation => PromptTemplate::translation(&self.source()?, &self.target()?),
            TaskKind::QuestionAnswering => PromptTemplate::question_answering(),
            TaskKind::Summarization => PromptTemplate::summarization(),
        })
    }

    fn snapshot(&self) -> Result<serde_json::Value> {
        serde_json::to_value(self).map_err(|e| Error::format("run config", e))
    }
}

fn lang_tag(code: &str) -> Result<LangTag> {
    LangTag::from_code(code).or_else(|_| LangTag::new(code, code))
}

fn require<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::invalid("run config", format!("`paths.{key}` is required")))
}

fn require_existing<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    let p = require(path, key)?;
    if !p.exists() {
        return Err(Error::invalid(
            "run config",
            format!("`paths.{key}` points to {}, which does not exist", p.display()),
        ));
    }
    Ok(p)
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// One entry per line; a trailing newline does not add an empty entry.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    Ok(read_text(path)?.lines().map(str::to_string).collect())
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut text = lines.join("\n");
    if !lines.is_empty() {
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

// Backends.

pub struct Backends {
    pub infill: Arc<dyn InfillBackend>,
    pub embedder: Arc<dyn Embedder>,
}

pub fn load_mock_spec(path: &Path) -> Result<MockInfillSpec> {
    let spec: MockInfillSpec = serde_json::from_str(&read_text(path)?)
        .map_err(|e| Error::format(path.display().to_string(), e))?;
    spec.validate()?;
    Ok(spec)
}

pub fn load_lexicon(path: &Path) -> Result<Lexicon> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::format(path.display().to_string(), e))
}

/// The in-process mock pair described by `cfg.backend`.
pub fn mock_backends(cfg: &BackendConfig) -> Result<(Arc<MockInfill>, Arc<MockEmbedder>)> {
    let spec = load_mock_spec(require(&cfg.mock_spec, "backend.mock_spec")
        .map_err(|_| Error::invalid("run config", "`backend.mock_spec` is required for mock backends"))?)?;
    let embedder = match &cfg.canonical {
        Some(p) => MockEmbedder::with_canonical(load_lexicon(p)?),
        None => MockEmbedder::new(),
    };
    Ok((Arc::new(MockInfill::new(spec)?), Arc::new(embedder)))
}

pub fn build_backends(cfg: &RunConfig) -> Result<Backends> {
    match cfg.backend.kind {
        BackendKind::Mock => {
            let (infill, embedder) = mock_backends(&cfg.backend)?;
            Ok(Backends { infill, embedder })
        }
        BackendKind::Http => {
            let url = cfg
                .backend
                .url
                .clone()
                .or_else(|| std::env::var(BACKEND_URL_ENV).ok().filter(|s| !s.is_empty()))
                .ok_or_else(|| {
                    Error::invalid(
                        "run config",
                        format!("no backend URL: set `backend.url` or {BACKEND_URL_ENV}"),
                    )
                })?;
            let retry = RetryPolicy {
                attempts: cfg.backend.retry_attempts.max(1),
                initial_backoff_ms: cfg.backend.initial_backoff_ms,
                ..RetryPolicy::default()
            };
            let http = Arc::new(
                HttpBackend::new(url, Duration::from_millis(cfg.backend.timeout_ms), retry)
                    .with_token_map(cfg.backend.token_map.clone()),
            );
            Ok(Backends {
                infill: http.clone(),
                embedder: http,
            })
        }
    }
}

pub fn load_profiles(cfg: &RunConfig) -> Result<Vec<LangProfile>> {
    if cfg.paths.profiles.is_empty() {
        return Ok(builtin_profiles());
    }
    cfg.paths
        .profiles
        .iter()
        .map(|(code, path)| LangProfile::load(lang_tag(code)?, path))
        .collect()
}

fn build_scorer(cfg: &RunConfig, embedder: Arc<dyn Embedder>, idf_docs: &[String]) -> Result<Scorer> {
    let scorer = Scorer::new(embedder, load_profiles(cfg)?).with_config(cfg.scoring.clone());
    Ok(if cfg.scoring.idf {
        scorer.with_idf(idf_docs)
    } else {
        scorer
    })
}

// Manifests.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub kind: String,
    pub command: String,
    pub config: serde_json::Value,
}

/// One SAP chain (one prompt) run for an item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub prompt: usize,
    /// Accepted fragments, in order.
    pub trace: Vec<String>,
    pub calls: usize,
    pub steps: usize,
    pub finish_reason: Option<FinishReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection_score: Option<f64>,
}

impl ChainRecord {
    fn from_output(prompt: usize, out: &SapOutput) -> Self {
        ChainRecord {
            prompt,
            trace: out.state.accepted.clone(),
            calls: out.state.calls,
            steps: out.state.step,
            finish_reason: out.state.finish_reason,
            selection_score: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub kind: String,
    pub id: String,
    pub index: usize,
    pub input: BTreeMap<String, String>,
    pub output: String,
    pub chains: Vec<ChainRecord>,
    /// Backend calls across all chains.
    pub calls: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub winner: Option<usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub scores: BTreeMap<String, f64>,
}

impl ItemRecord {
    fn new(item: &WorkItem, output: String, chains: Vec<ChainRecord>) -> Self {
        ItemRecord {
            kind: "item".to_string(),
            id: item.id.clone(),
            index: item.index,
            input: item.fields.clone(),
            calls: chains.iter().map(|c| c.calls).sum(),
            output,
            chains,
            winner: None,
            scores: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub header: ManifestHeader,
    pub items: Vec<ItemRecord>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = read_text(path)?;
        let ctx = |n: usize| format!("{} line {n}", path.display());
        let mut lines = text.lines().enumerate();
        let (_, first) = lines
            .next()
            .ok_or_else(|| Error::format(path.display().to_string(), "empty manifest"))?;
        let header: ManifestHeader =
            serde_json::from_str(first).map_err(|e| Error::format(ctx(1), e))?;
        let mut items = Vec::new();
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<ItemRecord>(line) {
                Ok(item) => items.push(item),
                // A torn final line from an interrupted write is dropped.
                Err(e) if n + 1 == text.lines().count() && !text.ends_with('\n') => {
                    log::warn!("{}: ignoring incomplete last record: {e}", ctx(n + 1));
                }
                Err(e) => return Err(Error::format(ctx(n + 1), e)),
            }
        }
        Ok(Manifest { header, items })
    }
}

/// Append-only manifest writer.
struct ManifestWriter {
    path: PathBuf,
    done: BTreeSet<String>,
}

impl ManifestWriter {
    fn open(path: &Path, command: &str, cfg: &RunConfig) -> Result<Self> {
        let header = ManifestHeader {
            kind: "manifest_header".to_string(),
            command: command.to_string(),
            config: cfg.snapshot()?,
        };
        if path.exists() {
            let existing = Manifest::load(path)?;
            if existing.header != header {
                return Err(Error::invalid(
                    "manifest",
                    format!(
                        "{} was written by a different command or configuration; remove it to start over",
                        path.display()
                    ),
                ));
            }
            // Rewrite without any torn tail so appends start on a clean line.
            let mut text = line_of(&existing.header)?;
            for item in &existing.items {
                text.push_str(&line_of(item)?);
            }
            write_atomic(path, text.as_bytes())?;
            return Ok(ManifestWriter {
                path: path.to_path_buf(),
                done: existing.items.into_iter().map(|i| i.id).collect(),
            });
        }
        write_atomic(path, line_of(&header)?.as_bytes())?;
        Ok(ManifestWriter {
            path: path.to_path_buf(),
            done: BTreeSet::new(),
        })
    }

    fn append(&mut self, items: &[ItemRecord]) -> Result<()> {
        if items.is_empty() {
            return Ok(());
        }
        let mut text = String::new();
        for item in items {
            text.push_str(&line_of(item)?);
        }
        let mut f = OpenOptions::new()
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        f.write_all(text.as_bytes()).map_err(|e| Error::io(&self.path, e))?;
        f.sync_data().map_err(|e| Error::io(&self.path, e))?;
        self.done.extend(items.iter().map(|i| i.id.clone()));
        Ok(())
    }
}

fn line_of<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string(value).map_err(|e| Error::format("manifest", e))?;
    s.push('\n');
    Ok(s)
}

/// One input item: its id, position, and named field values.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkItem {
    pub id: String,
    pub index: usize,
    pub fields: BTreeMap<String, String>,
    /// Gold outputs, when the dataset has them.
    pub gold: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub command: String,
    pub manifest: PathBuf,
    pub total_items: usize,
    pub processed: usize,
    pub resumed: usize,
    pub skipped_records: usize,
    /// Mean of every per-item score over the whole manifest.
    pub mean_scores: BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct Timings {
    command: String,
    processed: usize,
    elapsed_ms: u128,
    chunk_ms: Vec<u128>,
}

/// Processes `items` in parallel chunks of `cfg.workers`, appending finished
/// records to the manifest in input order. On a failure the records finished
/// before it in the same chunk are kept and the error is returned.
fn run_items<F>(
    cfg: &RunConfig,
    command: &str,
    items: &[WorkItem],
    skipped_records: usize,
    process: F,
) -> Result<RunSummary>
where
    F: Fn(&WorkItem) -> Result<ItemRecord> + Sync,
{
    let manifest_path = require(&cfg.paths.manifest, "manifest")?;
    let output_path = require(&cfg.paths.output, "output")?;
    let mut writer = ManifestWriter::open(manifest_path, command, cfg)?;
    let pending: Vec<&WorkItem> = items.iter().filter(|i| !writer.done.contains(&i.id)).collect();
    let resumed = items.len() - pending.len();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::invalid("workers", e.to_string()))?;

    let started = Instant::now();
    let mut chunk_ms = Vec::new();
    let mut processed = 0;
    let mut failure = None;
    for chunk in pending.chunks(cfg.workers) {
        let t = Instant::now();
        let results: Vec<Result<ItemRecord>> =
            pool.install(|| chunk.par_iter().map(|item| process(item)).collect());
        let mut ok = Vec::new();
        for r in results {
            match r {
                Ok(rec) => ok.push(rec),
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            }
        }
        processed += ok.len();
        writer.append(&ok)?;
        chunk_ms.push(t.elapsed().as_millis());
        if failure.is_some() {
            break;
        }
    }
    let timings = Timings {
        command: command.to_string(),
        processed,
        elapsed_ms: started.elapsed().as_millis(),
        chunk_ms,
    };
    let mut sidecar = manifest_path.as_os_str().to_owned();
    sidecar.push(".timings.json");
    let timings_json =
        serde_json::to_string_pretty(&timings).map_err(|e| Error::format("timings", e))?;
    write_atomic(Path::new(&sidecar), timings_json.as_bytes())?;
    if let Some(e) = failure {
        return Err(e);
    }

    let manifest = Manifest::load(manifest_path)?;
    let by_id: BTreeMap<&str, &ItemRecord> =
        manifest.items.iter().map(|i| (i.id.as_str(), i)).collect();
    let outputs: Vec<String> = items
        .iter()
        .map(|i| by_id.get(i.id.as_str()).map(|r| r.output.clone()).unwrap_or_default())
        .collect();
    write_lines(output_path, &outputs)?;

    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for item in &manifest.items {
        for (k, v) in &item.scores {
            let e = sums.entry(k.clone()).or_default();
            e.0 += v;
            e.1 += 1;
        }
    }
    Ok(RunSummary {
        command: command.to_string(),
        manifest: manifest_path.to_path_buf(),
        total_items: items.len(),
        processed,
        resumed,
        skipped_records,
        mean_scores: sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect(),
    })
}

/// Lines of a plain-text input file as single-field items.
fn text_items(path: &Path, field: &str) -> Result<Vec<WorkItem>> {
    Ok(read_lines(path)?
        .into_iter()
        .enumerate()
        .map(|(i, line)| WorkItem {
            id: (i + 1).to_string(),
            index: i,
            fields: BTreeMap::from([(field.to_string(), line)]),
            gold: Vec::new(),
        })
        .collect())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Answers {
    Many(Vec<String>),
    One(String),
}

#[derive(Deserialize)]
struct DatasetRecord {
    id: Option<serde_json::Value>,
    #[serde(flatten)]
    rest: BTreeMap<String, serde_json::Value>,
}

/// Reads line-delimited records holding `fields` plus an optional gold
/// field. Malformed records are skipped and logged with their line number;
/// the number skipped is returned alongside the items.
pub fn read_dataset(
    path: &Path,
    fields: &[&str],
    gold_field: &str,
) -> Result<(Vec<WorkItem>, usize)> {
    let mut items = Vec::new();
    let mut skipped = 0;
    for (n, line) in read_text(path)?.lines().enumerate() {
        let lineno = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        match parse_record(line, fields, gold_field) {
            Ok((id, values, gold)) => items.push(WorkItem {
                id: id.unwrap_or_else(|| format!("line{lineno}")),
                index: items.len(),
                fields: values,
                gold,
            }),
            Err(why) => {
                log::warn!("{}:{lineno}: skipping malformed record: {why}", path.display());
                skipped += 1;
            }
        }
    }
    let mut seen = BTreeSet::new();
    for item in &items {
        if !seen.insert(item.id.as_str()) {
            return Err(Error::format(
                path.display().to_string(),
                format!("duplicate record id {:?}", item.id),
            ));
        }
    }
    Ok((items, skipped))
}

type ParsedRecord = (Option<String>, BTreeMap<String, String>, Vec<String>);

fn parse_record(line: &str, fields: &[&str], gold_field: &str) -> std::result::Result<ParsedRecord, String> {
    let rec: DatasetRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let id = match rec.id {
        None | Some(serde_json::Value::Null) => None,
        Some(serde_json::Value::String(s)) => Some(s),
        Some(serde_json::Value::Number(n)) => Some(n.to_string()),
        Some(other) => return Err(format!("id must be a string or number, got {other}")),
    };
    let mut values = BTreeMap::new();
    for f in fields {
        match rec.rest.get(*f) {
            Some(serde_json::Value::String(s)) if !s.trim().is_empty() => {
                values.insert(f.to_string(), s.clone());
            }
            Some(_) => return Err(format!("field {f:?} must be a non-empty string")),
            None => return Err(format!("missing field {f:?}")),
        }
    }
    let gold = match rec.rest.get(gold_field) {
        None | Some(serde_json::Value::Null) => Vec::new(),
        Some(v) => match serde_json::from_value::<Answers>(v.clone()) {
            Ok(Answers::Many(v)) => v,
            Ok(Answers::One(s)) => vec![s],
            Err(_) => return Err(format!("field {gold_field:?} must be a string or list of strings")),
        },
    };
    Ok((id, values, gold))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotRecord {
    pub source: String,
    pub target: String,
}

/// Reads `{"source": .., "target": ..}` lines as translation examples.
pub fn read_translation_shots(
    path: &Path,
    source: &LangTag,
    target: &LangTag,
    limit: Option<usize>,
) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (n, line) in read_text(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ShotRecord = serde_json::from_str(line)
            .map_err(|e| Error::format(format!("{}:{}", path.display(), n + 1), e))?;
        out.push(Example::new(rec.source, rec.target, source.clone(), target.clone())?);
    }
    if let Some(k) = limit {
        if out.len() < k {
            return Err(Error::invalid(
                "shots",
                format!("{} holds {} example(s), {k} requested", path.display(), out.len()),
            ));
        }
        out.truncate(k);
    }
    Ok(out)
}

fn field_shots(
    path: Option<&Path>,
    fields: &[&str],
    gold_field: &str,
    limit: Option<usize>,
) -> Result<Vec<FieldShot>> {
    let Some(path) = path else {
        if limit.unwrap_or(0) > 0 {
            return Err(Error::invalid("run config", "`paths.shots` is required when `shots` > 0"));
        }
        return Ok(Vec::new());
    };
    let (items, _) = read_dataset(path, fields, gold_field)?;
    let mut shots = Vec::new();
    for item in items {
        let Some(output) = item.gold.into_iter().next() else {
            return Err(Error::invalid(
                "shots",
                format!("shot {:?} in {} has no {gold_field:?}", item.id, path.display()),
            ));
        };
        shots.push(FieldShot {
            fields: item.fields,
            output,
        });
    }
    if let Some(k) = limit {
        if shots.len() < k {
            return Err(Error::invalid(
                "shots",
                format!("{} holds {} shot(s), {k} requested", path.display(), shots.len()),
            ));
        }
        shots.truncate(k);
    }
    Ok(shots)
}

fn generate(
    task: &TaskSpec,
    fields: &BTreeMap<String, String>,
    backend: &dyn InfillBackend,
    cfg: &RunConfig,
) -> Result<SapOutput> {
    if cfg.sap_enabled {
        generate_fields(task, fields, backend, &cfg.sap)
    } else {
        single_infill(task, fields, backend, &cfg.sap)
    }
}

fn translation_item(
    task: &TaskSpec,
    item: &WorkItem,
    backend: &dyn InfillBackend,
    cfg: &RunConfig,
) -> Result<ItemRecord> {
    if item.fields.values().all(|v| v.trim().is_empty()) {
        return Ok(ItemRecord::new(item, String::new(), Vec::new()));
    }
    let out = generate(task, &item.fields, backend, cfg)?;
    Ok(ItemRecord::new(item, out.text.clone(), vec![ChainRecord::from_output(0, &out)]))
}

// Commands.

pub fn cmd_translate_fewshot(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let input = require_existing(&cfg.paths.input, "input")?;
    let shots_path = require_existing(&cfg.paths.shots, "shots")?;
    require(&cfg.paths.output, "output")?;
    require(&cfg.paths.manifest, "manifest")?;
    let (source, target) = (cfg.source()?, cfg.target()?);
    let shots = read_translation_shots(shots_path, &source, &target, cfg.shots)?;
    let mut task = TaskSpec::translation(&source, &target, shots)?;
    task.template = cfg.template_for(TaskKind::Translation)?;
    task.validate()?;
    let field = single_field_key(&task)?;
    let items = text_items(input, &field)?;
    let backends = build_backends(cfg)?;
    run_items(cfg, "translate-fewshot", &items, 0, |item| {
        translation_item(&task, item, backends.infill.as_ref(), cfg)
    })
}

fn single_field_key(task: &TaskSpec) -> Result<String> {
    let fields = task.template.input_fields();
    match fields.as_slice() {
        [f] => Ok(f.key.clone()),
        _ => Err(Error::invalid("template", "translation templates take exactly one input field")),
    }
}

/// Loads the corpora a strategy needs, and only those.
fn load_corpora(cfg: &RunConfig, boot: &BootstrapConfig) -> Result<CorpusSet> {
    let (source, target) = (cfg.source()?, cfg.target()?);
    let needed: Vec<LangTag> = match boot.strategy {
        Strategy::Direct => vec![source],
        Strategy::Reversed => vec![target],
        Strategy::Pivot => vec![source, target, lang_tag(&boot.pivot_lang)?],
    };
    let mut set = CorpusSet::new();
    for lang in needed {
        let path = cfg.paths.corpora.get(&lang.code).ok_or_else(|| {
            Error::invalid(
                "run config",
                format!("`paths.corpora.{}` is required by the {:?} strategy", lang.code, boot.strategy),
            )
        })?;
        let sentences: Vec<String> = read_lines(path)?
            .into_iter()
            .filter(|s| !s.trim().is_empty())
            .collect();
        set.insert(&lang, sentences);
    }
    Ok(set)
}

/// Runs (or resumes) the bootstrap, saving the checkpoint after every round.
/// `stop_after` ends the run early once that many rounds are complete.
pub fn cmd_bootstrap(cfg: &RunConfig, stop_after: Option<usize>) -> Result<BootstrapCheckpoint> {
    cfg.validate()?;
    let boot = cfg.effective_bootstrap()?;
    boot.validate()?;
    let ckpt_path = require(&cfg.paths.checkpoint, "checkpoint")?;
    let (source, target) = (cfg.source()?, cfg.target()?);
    let corpora = load_corpora(cfg, &boot)?;
    let mut ckpt = if ckpt_path.exists() {
        let ckpt = BootstrapCheckpoint::load(ckpt_path)?;
        if ckpt.config != boot || ckpt.source != source || ckpt.target != target {
            return Err(Error::invalid(
                "checkpoint",
                format!(
                    "{} was produced with a different configuration; remove it to start over",
                    ckpt_path.display()
                ),
            ));
        }
        log::info!("resuming after round {}", ckpt.rounds_completed);
        ckpt
    } else {
        BootstrapCheckpoint::new(boot, &source, &target)?
    };
    let backends = build_backends(cfg)?;
    let idf_docs: Vec<String> = if cfg.scoring.idf {
        cfg.paths
            .corpora
            .get(&source.code)
            .map(|p| read_lines(p))
            .transpose()?
            .unwrap_or_default()
    } else {
        Vec::new()
    };
    let scorer = build_scorer(cfg, backends.embedder.clone(), &idf_docs)?;
    let limit = stop_after.unwrap_or(usize::MAX);
    while !ckpt.is_complete() && ckpt.rounds_completed < limit {
        ckpt.run_round(&corpora, backends.infill.as_ref(), &scorer)?;
        ckpt.save(ckpt_path)?;
        log::info!(
            "round {} done: pool of {} (min score {:?})",
            ckpt.rounds_completed,
            ckpt.pool.len(),
            ckpt.pool.last().map(|e| e.score)
        );
    }
    if !ckpt_path.exists() {
        ckpt.save(ckpt_path)?;
    }
    Ok(ckpt)
}

pub fn cmd_translate_zeroshot(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let input = require_existing(&cfg.paths.input, "input")?;
    let ckpt_path = require_existing(&cfg.paths.checkpoint, "checkpoint")?;
    require(&cfg.paths.output, "output")?;
    require(&cfg.paths.manifest, "manifest")?;
    let ckpt = BootstrapCheckpoint::load(ckpt_path)?;
    let (source, target) = (cfg.source()?, cfg.target()?);
    if ckpt.source != source || ckpt.target != target {
        return Err(Error::invalid(
            "checkpoint",
            format!("checkpoint is {}->{}, run is {source}->{target}", ckpt.source, ckpt.target),
        ));
    }
    if ckpt.pool.len() < cfg.ensemble_size {
        return Err(Error::invalid(
            "checkpoint",
            format!(
                "pool holds {} example(s) but the ensemble needs {}; run `bootstrap` (more rounds or a larger sample) first",
                ckpt.pool.len(),
                cfg.ensemble_size
            ),
        ));
    }
    let ensemble = build_ensemble(
        &ckpt.pool,
        cfg.ensemble_size,
        cfg.bootstrap.shots_per_prompt,
        cfg.grouping,
    )?;
    let items = text_items(input, crate::prompt::SOURCE_FIELD)?;
    let backends = build_backends(cfg)?;
    let docs: Vec<String> = items.iter().flat_map(|i| i.fields.values().cloned()).collect();
    let scorer = build_scorer(cfg, backends.embedder.clone(), &docs)?;
    run_items(cfg, "translate-zeroshot", &items, 0, |item| {
        let query = &item.fields[crate::prompt::SOURCE_FIELD];
        if query.trim().is_empty() {
            return Ok(ItemRecord::new(item, String::new(), Vec::new()));
        }
        let outcome = translate_ensemble(&ensemble, query, backends.infill.as_ref(), &scorer, &cfg.sap)?;
        let chains = outcome
            .candidates
            .iter()
            .enumerate()
            .map(|(i, c)| ChainRecord {
                prompt: i,
                trace: c.trace.clone(),
                calls: c.calls,
                steps: c.steps,
                finish_reason: c.finish_reason,
                selection_score: c.score,
            })
            .collect();
        let mut rec = ItemRecord::new(item, outcome.text, chains);
        rec.winner = outcome.winner;
        Ok(rec)
    })
}

const QA_FIELDS: [&str; 2] = ["context", "question"];
const SUMMARY_FIELDS: [&str; 1] = ["article"];

pub fn cmd_qa(cfg: &RunConfig) -> Result<RunSummary> {
    field_task(cfg, TaskKind::QuestionAnswering, "qa", &QA_FIELDS, "answers", |pred, gold| {
        let (em, f1) = qa_em_f1(pred, gold);
        BTreeMap::from([("em".to_string(), f64::from(em)), ("f1".to_string(), f1)])
    })
}

pub fn cmd_summarize(cfg: &RunConfig) -> Result<RunSummary> {
    let beta = cfg.metrics.rouge_beta;
    field_task(cfg, TaskKind::Summarization, "summarize", &SUMMARY_FIELDS, "summary", |pred, gold| {
        let best = gold
            .iter()
            .map(|g| rouge_l_with_beta(pred, g, beta))
            .fold(0.0, f64::max);
        BTreeMap::from([("rouge_l".to_string(), best)])
    })
}

fn field_task(
    cfg: &RunConfig,
    kind: TaskKind,
    command: &str,
    fields: &[&str],
    gold_field: &str,
    score: impl Fn(&str, &[String]) -> BTreeMap<String, f64> + Sync,
) -> Result<RunSummary> {
    cfg.validate()?;
    let input = require_existing(&cfg.paths.input, "input")?;
    require(&cfg.paths.output, "output")?;
    require(&cfg.paths.manifest, "manifest")?;
    if let Some(p) = &cfg.paths.shots {
        if !p.exists() {
            return Err(Error::invalid("run config", format!("shots file {} does not exist", p.display())));
        }
    }
    let template = cfg.template_for(kind)?;
    let keys: Vec<String> = template.input_fields().into_iter().map(|f| f.key).collect();
    let key_refs: Vec<&str> = keys.iter().map(String::as_str).collect();
    let used_fields: &[&str] = if cfg.template.is_some() { &key_refs } else { fields };
    let shots = field_shots(cfg.paths.shots.as_deref(), used_fields, gold_field, cfg.shots)?;
    let task = TaskSpec::with_field_shots(kind, template, shots)?;
    let (items, skipped) = read_dataset(input, used_fields, gold_field)?;
    let backends = build_backends(cfg)?;
    run_items(cfg, command, &items, skipped, |item| {
        let out = generate(&task, &item.fields, backends.infill.as_ref(), cfg)?;
        let mut rec = ItemRecord::new(item, out.text.clone(), vec![ChainRecord::from_output(0, &out)]);
        if !item.gold.is_empty() {
            rec.scores = score(&out.text, &item.gold);
        }
        Ok(rec)
    })
}

/// Scores a candidates file against a references file, one segment per line.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<Vec<MetricReport>> {
    let cand_path = require_existing(&cfg.paths.candidates, "candidates")?;
    let ref_path = require_existing(&cfg.paths.references, "references")?;
    let candidates = read_lines(cand_path)?;
    let references = read_lines(ref_path)?;
    if candidates.len() != references.len() {
        return Err(Error::LengthMismatch {
            left: candidates.len(),
            right: references.len(),
        });
    }
    let m = &cfg.metrics;
    let reports = match m.metric {
        MetricKind::Bleu => {
            let tokenizer = match &m.vocab {
                Some(p) => Tokenizer::Vocab(VocabTokenizer::load(p)?),
                None => Tokenizer::WhitespacePunct,
            };
            let bleu = BleuConfig {
                max_ngram: m.max_ngram,
                smoothing: m.smoothing,
                tokenizer,
            };
            vec![bleu_report(&candidates, &references, &bleu)?]
        }
        MetricKind::RougeL => vec![rouge_report(&candidates, &references, m.rouge_beta)?],
        MetricKind::Qa => {
            let gold: Vec<Vec<String>> = references
                .iter()
                .map(|r| serde_json::from_str::<Vec<String>>(r).unwrap_or_else(|_| vec![r.clone()]))
                .collect();
            let (em, f1) = qa_reports(&candidates, &gold)?;
            vec![em, f1]
        }
    };
    if let Some(report) = &cfg.paths.report {
        let mut text =
            serde_json::to_string_pretty(&reports).map_err(|e| Error::format("report", e))?;
        text.push('\n');
        write_atomic(report, text.as_bytes())?;
    }
    Ok(reports)
}

/// Writes a self-contained toy workspace into `dir`: monolingual corpora,
/// a parallel test set, shots, mock backend files, language-id seed texts
/// and a starter `config.toml`. Returns the written paths.
pub fn cmd_gen_toy(dir: &Path, sentences: usize, seed: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let w = ToyWorld::new();
    let mut written = Vec::new();
    let mut put = |name: &str, text: String| -> Result<PathBuf> {
        let p = dir.join(name);
        write_atomic(&p, text.as_bytes())?;
        written.push(p.clone());
        Ok(p)
    };
    let mut corpora = BTreeMap::new();
    let mut profiles = BTreeMap::new();
    for lang in w.languages() {
        let corpus = w.corpus(lang, sentences, 20, seed)?;
        let p = put(&format!("mono.{}.txt", lang.code), corpus.join("\n") + "\n")?;
        corpora.insert(lang.code.clone(), p);
        let profile_text = w.corpus(lang, 400, 12, 7)?.join("\n") + "\n";
        profiles.insert(lang.code.clone(), put(&format!("profile.{}.txt", lang.code), profile_text)?);
    }
    let test_src = w.corpus(&w.spanish, sentences.min(200), 20, seed.wrapping_add(1))?;
    let test_ref: Vec<String> = test_src
        .iter()
        .map(|s| w.translate(s, &w.spanish, &w.english))
        .collect::<Result<_>>()?;
    let input = put("test.es.txt", test_src.join("\n") + "\n")?;
    put("test.en.ref.txt", test_ref.join("\n") + "\n")?;
    let shot_lines: Vec<String> = ["el perro azul", "el gato come"]
        .iter()
        .map(|s| {
            let rec = ShotRecord {
                source: s.to_string(),
                target: w.translate(s, &w.spanish, &w.english)?,
            };
            serde_json::to_string(&rec).map_err(|e| Error::format("shots", e))
        })
        .collect::<Result<_>>()?;
    let shots = put("shots.es-en.jsonl", shot_lines.join("\n") + "\n")?;
    let spec = serde_json::to_string_pretty(&w.mock_spec(3)).map_err(|e| Error::format("mock spec", e))?;
    let mock_spec = put("mock_spec.json", spec + "\n")?;
    let canonical =
        serde_json::to_string_pretty(&w.canonical()).map_err(|e| Error::format("canonical", e))?;
    let canonical = put("canonical.json", canonical + "\n")?;

    // The config refers to its siblings by bare file name.
    let local = |p: PathBuf| PathBuf::from(p.file_name().expect("file path"));
    let cfg = RunConfig {
        seed: Some(seed),
        backend: BackendConfig {
            kind: BackendKind::Mock,
            mock_spec: Some(local(mock_spec)),
            canonical: Some(local(canonical)),
            ..BackendConfig::default()
        },
        paths: PathConfig {
            input: Some(local(input)),
            output: Some("out.en.txt".into()),
            manifest: Some("manifest.jsonl".into()),
            shots: Some(local(shots)),
            checkpoint: Some("bootstrap.ckpt.jsonl".into()),
            candidates: Some("out.en.txt".into()),
            references: Some("test.en.ref.txt".into()),
            report: Some("report.json".into()),
            corpora: corpora.into_iter().map(|(k, v)| (k, local(v))).collect(),
            profiles: profiles.into_iter().map(|(k, v)| (k, local(v))).collect(),
        },
        ..RunConfig::default()
    };
    put("config.toml", cfg.to_toml_string()?)?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
        assert_eq!(cfg.workers, 8);
        assert_eq!(cfg.ensemble_size, 8);
        assert_eq!(cfg.bootstrap.rounds, 4);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml_str("workerz = 3").is_err());
        let cfg = RunConfig::from_toml_str("workers = 3\n[sap]\nmax_steps = 5").unwrap();
        assert_eq!((cfg.workers, cfg.sap.max_steps), (3, 5));
    }

    #[test]
    fn bootstrap_requires_seed() {
        assert!(RunConfig::default().effective_bootstrap().is_err());
        let cfg = RunConfig {
            seed: Some(9),
            ..RunConfig::default()
        };
        assert_eq!(cfg.effective_bootstrap().unwrap().rng_seed, 9);
    }

    #[test]
    fn dataset_parsing_skips_bad_records() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("qa.jsonl");
        std::fs::write(
            &p,
            concat!(
                "{\"id\": 7, \"context\": \"c\", \"question\": \"q\", \"answers\": [\"a\", \"b\"]}\n",
                "not json\n",
                "{\"context\": \"c\"}\n",
                "{\"context\": \"c2\", \"question\": \"q2\", \"answers\": \"x\"}\n",
            ),
        )
        .unwrap();
        let (items, skipped) = read_dataset(&p, &QA_FIELDS, "answers").unwrap();
        assert_eq!(skipped, 2);
        assert_eq!(items.len(), 2);
        assert_eq!(items[0].id, "7");
        assert_eq!(items[0].gold, vec!["a", "b"]);
        assert_eq!(items[1].id, "line4");
        assert_eq!(items[1].gold, vec!["x"]);
    }
}
