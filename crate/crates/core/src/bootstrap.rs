//! Unsupervised few-shot bootstrap.
//!
//! Each round samples monolingual sentences, translates them with SAP
//! (zero-shot at first, later with the best synthetic pairs so far as
//! shots), filters the outputs by language and similarity to the source, and
//! keeps the top `pool_keep` of the old pool plus the new survivors.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::InfillBackend;
use crate::error::{Error, Result};
use crate::prompt::{reverse_example, Example, LangTag, TaskSpec};
use crate::sap::{sap_generate, SapConfig};
use crate::scoring::{pivot_score, Scorer};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Translate source sentences into the target language.
    #[default]
    Direct,
    /// Translate target sentences into the source language, then swap each
    /// pair.
    Reversed,
    /// Build source->pivot and target->pivot pools, then translate pivot
    /// sentences into both languages and pair the outputs.
    Pivot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub rounds: usize,
    pub sample_size: usize,
    pub pool_keep: usize,
    pub shots_per_prompt: usize,
    pub strategy: Strategy,
    pub self_amplification: bool,
    pub rng_seed: u64,
    /// Language code of the pivot language.
    pub pivot_lang: String,
    pub sap: SapConfig,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            rounds: 4,
            sample_size: 100,
            pool_keep: 8,
            shots_per_prompt: 2,
            strategy: Strategy::Direct,
            self_amplification: true,
            rng_seed: 0,
            pivot_lang: "en".to_string(),
            sap: SapConfig::default(),
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rounds", self.rounds),
            ("sample_size", self.sample_size),
            ("pool_keep", self.pool_keep),
            ("shots_per_prompt", self.shots_per_prompt),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid("bootstrap config", format!("{name} must be >= 1")));
            }
        }
        if self.pool_keep < self.shots_per_prompt {
            return Err(Error::invalid(
                "bootstrap config",
                format!(
                    "pool_keep ({}) is smaller than shots_per_prompt ({})",
                    self.pool_keep, self.shots_per_prompt
                ),
            ));
        }
        self.sap.validate()
    }
}

/// Scores of the two halves of a pivot-aligned example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PivotLegs {
    pub pivot_text: String,
    pub source_score: f64,
    pub target_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    pub example: Example,
    pub score: f64,
    pub round: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pivot: Option<PivotLegs>,
}

/// What happened in one round of one leg.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub sampled: usize,
    pub survivors: usize,
    pub shots: usize,
    /// Pool after the round.
    pub pool: Vec<ScoredExample>,
}

impl RoundRecord {
    pub fn pool_min(&self) -> Option<f64> {
        self.pool.last().map(|e| e.score)
    }
}

/// One translation direction with its own pool history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leg {
    pub source: LangTag,
    pub target: LangTag,
    pub rounds: Vec<RoundRecord>,
}

impl Leg {
    fn new(source: &LangTag, target: &LangTag) -> Self {
        Leg {
            source: source.clone(),
            target: target.clone(),
            rounds: Vec::new(),
        }
    }

    pub fn pool(&self) -> &[ScoredExample] {
        self.rounds.last().map(|r| r.pool.as_slice()).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCheckpoint {
    pub config: BootstrapConfig,
    pub source: LangTag,
    pub target: LangTag,
    pub rounds_completed: usize,
    pub rng: ChaCha8Rng,
    pub legs: Vec<Leg>,
    /// Source->target examples, best first.
    pub pool: Vec<ScoredExample>,
}

/// Monolingual corpora keyed by language code. Records which ones were read.
#[derive(Debug, Default)]
pub struct CorpusSet {
    corpora: BTreeMap<String, (Vec<String>, AtomicBool)>,
}

impl CorpusSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, lang: &LangTag, sentences: Vec<String>) {
        self.corpora
            .insert(lang.code.clone(), (sentences, AtomicBool::new(false)));
    }

    pub fn with(mut self, lang: &LangTag, sentences: Vec<String>) -> Self {
        self.insert(lang, sentences);
        self
    }

    pub fn contains(&self, lang: &LangTag) -> bool {
        self.corpora.contains_key(&lang.code)
    }

    /// Returns the corpus and marks it as read.
    pub fn get(&self, lang: &LangTag) -> Result<&[String]> {
        let (sentences, read) = self
            .corpora
            .get(&lang.code)
            .ok_or_else(|| Error::invalid("corpora", format!("no monolingual corpus for {lang}")))?;
        read.store(true, Ordering::SeqCst);
        Ok(sentences)
    }

    pub fn was_read(&self, lang: &LangTag) -> bool {
        self.corpora
            .get(&lang.code)
            .is_some_and(|(_, read)| read.load(Ordering::SeqCst))
    }
}

/// Top-`k` examples (best first) as shots of a `source`->`target` task.
pub fn build_fewshot_task(
    pool: &[ScoredExample],
    source: &LangTag,
    target: &LangTag,
    k: usize,
) -> Result<TaskSpec> {
    if pool.len() < k {
        return Err(Error::InsufficientPool {
            required: k,
            available: pool.len(),
        });
    }
    let mut ranked: Vec<&ScoredExample> = pool.iter().collect();
    ranked.sort_by(|a, b| rank_order(a, b));
    let shots = ranked
        .into_iter()
        .take(k)
        .map(|e| {
            if e.example.source_lang != *source || e.example.target_lang != *target {
                return Err(Error::invalid(
                    "pool",
                    format!(
                        "example is {}->{}, task is {source}->{target}",
                        e.example.source_lang, e.example.target_lang
                    ),
                ));
            }
            Ok(e.example.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    TaskSpec::translation(source, target, shots)
}

// Higher score first, then earlier round. Sorting is stable, so input order
// decides what is left.
fn rank_order(a: &ScoredExample, b: &ScoredExample) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then(a.round.cmp(&b.round))
}

/// Top `keep` of `old` followed by `new`.
pub fn merge_pool(old: &[ScoredExample], new: Vec<ScoredExample>, keep: usize) -> Vec<ScoredExample> {
    let mut all: Vec<ScoredExample> = old.iter().cloned().chain(new).collect();
    all.sort_by(rank_order);
    all.truncate(keep);
    all
}

struct Translated {
    source: String,
    output: String,
}

fn sample(corpus: &[String], n: usize, rng: &mut ChaCha8Rng, lang: &LangTag) -> Result<Vec<String>> {
    if corpus.len() < n {
        return Err(Error::invalid(
            "corpus",
            format!(
                "{lang} corpus has {} sentence(s), sample_size is {n}",
                corpus.len()
            ),
        ));
    }
    Ok(index::sample(rng, corpus.len(), n)
        .into_iter()
        .map(|i| corpus[i].clone())
        .collect())
}

fn translate_all(
    task: &TaskSpec,
    sentences: Vec<String>,
    backend: &dyn InfillBackend,
    sap: &SapConfig,
) -> Result<Vec<Translated>> {
    sentences
        .into_par_iter()
        .map(|source| {
            let output = sap_generate(task, &source, backend, sap)?.text;
            Ok(Translated { source, output })
        })
        .collect()
}

/// Filters and scores translations into `source`->`target` examples.
fn score_translations(
    translated: &[Translated],
    source: &LangTag,
    target: &LangTag,
    round: usize,
    scorer: &Scorer,
) -> Result<Vec<(usize, ScoredExample)>> {
    let cands: Vec<(String, String)> = translated
        .iter()
        .map(|t| (t.source.clone(), t.output.clone()))
        .collect();
    scorer
        .filter_candidates(&cands, target)?
        .into_iter()
        .map(|c| {
            let example = Example::new(c.source, c.generated, source.clone(), target.clone())?;
            Ok((
                c.index,
                ScoredExample {
                    example,
                    score: c.score,
                    round,
                    pivot: None,
                },
            ))
        })
        .collect()
}

fn shots_for(pool: &[ScoredExample], config: &BootstrapConfig, round: usize) -> usize {
    if round == 1 || !config.self_amplification {
        0
    } else {
        config.shots_per_prompt.min(pool.len())
    }
}

fn leg_round(
    leg: &mut Leg,
    round: usize,
    corpus: &[String],
    rng: &mut ChaCha8Rng,
    backend: &dyn InfillBackend,
    scorer: &Scorer,
    config: &BootstrapConfig,
) -> Result<()> {
    let shots = shots_for(leg.pool(), config, round);
    let task = build_fewshot_task(leg.pool(), &leg.source, &leg.target, shots)?;
    let sentences = sample(corpus, config.sample_size, rng, &leg.source)?;
    let sampled = sentences.len();
    let translated = translate_all(&task, sentences, backend, &config.sap)?;
    let scored: Vec<ScoredExample> =
        score_translations(&translated, &leg.source, &leg.target, round, scorer)?
            .into_iter()
            .map(|(_, e)| e)
            .collect();
    if scored.is_empty() {
        log::warn!(
            "round {round} ({}->{}): no translation survived filtering",
            leg.source,
            leg.target
        );
    }
    let survivors = scored.len();
    let pool = merge_pool(leg.pool(), scored, config.pool_keep);
    leg.rounds.push(RoundRecord {
        round,
        sampled,
        survivors,
        shots,
        pool,
    });
    Ok(())
}

/// Shots for a pivot->`lang` task: the reversed pool of the `lang`->pivot leg.
fn reversed_pool(leg: &Leg) -> Vec<ScoredExample> {
    leg.pool()
        .iter()
        .map(|e| ScoredExample {
            example: reverse_example(e.example.clone()),
            ..e.clone()
        })
        .collect()
}

impl BootstrapCheckpoint {
    pub fn new(config: BootstrapConfig, source: &LangTag, target: &LangTag) -> Result<Self> {
        config.validate()?;
        source.validate()?;
        target.validate()?;
        if source == target {
            return Err(Error::invalid("language pair", "source equals target"));
        }
        let legs = match config.strategy {
            Strategy::Direct => vec![Leg::new(source, target)],
            Strategy::Reversed => vec![Leg::new(target, source)],
            Strategy::Pivot => {
                let pivot = pivot_tag(&config, source, target)?;
                vec![Leg::new(source, &pivot), Leg::new(target, &pivot)]
            }
        };
        Ok(BootstrapCheckpoint {
            rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
            config,
            source: source.clone(),
            target: target.clone(),
            rounds_completed: 0,
            legs,
            pool: Vec::new(),
        })
    }

    pub fn is_complete(&self) -> bool {
        self.rounds_completed >= self.config.rounds
    }

    /// Minimum pool score after each completed round of the final pool.
    pub fn pool_minima(&self) -> Vec<Option<f64>> {
        match self.config.strategy {
            Strategy::Pivot => vec![self.pool.last().map(|e| e.score)],
            _ => self.legs[0].rounds.iter().map(RoundRecord::pool_min).collect(),
        }
    }

    /// Runs the next round.
    pub fn run_round(
        &mut self,
        corpora: &CorpusSet,
        backend: &dyn InfillBackend,
        scorer: &Scorer,
    ) -> Result<()> {
        if self.is_complete() {
            return Err(Error::invalid("bootstrap", "all rounds already completed"));
        }
        let round = self.rounds_completed + 1;
        match self.config.strategy {
            Strategy::Direct | Strategy::Reversed => {
                let leg = &mut self.legs[0];
                let corpus = corpora.get(&leg.source)?;
                leg_round(leg, round, corpus, &mut self.rng, backend, scorer, &self.config)?;
                self.pool = if self.config.strategy == Strategy::Direct {
                    leg.pool().to_vec()
                } else {
                    reversed_pool(leg)
                };
            }
            Strategy::Pivot if round < self.config.rounds => {
                for leg in &mut self.legs {
                    let corpus = corpora.get(&leg.source)?;
                    leg_round(leg, round, corpus, &mut self.rng, backend, scorer, &self.config)?;
                }
            }
            Strategy::Pivot => self.pivot_round(round, corpora, backend, scorer)?,
        }
        self.rounds_completed = round;
        Ok(())
    }

    fn pivot_round(
        &mut self,
        round: usize,
        corpora: &CorpusSet,
        backend: &dyn InfillBackend,
        scorer: &Scorer,
    ) -> Result<()> {
        let config = &self.config;
        let pivot = self.legs[0].target.clone();
        let sentences = sample(corpora.get(&pivot)?, config.sample_size, &mut self.rng, &pivot)?;
        let mut sides = Vec::with_capacity(2);
        for leg in &self.legs {
            let shots_pool = reversed_pool(leg);
            let k = shots_for(&shots_pool, config, round);
            let task = build_fewshot_task(&shots_pool, &pivot, &leg.source, k)?;
            let translated = translate_all(&task, sentences.clone(), backend, &config.sap)?;
            let scored = score_translations(&translated, &pivot, &leg.source, round, scorer)?;
            sides.push(scored.into_iter().collect::<BTreeMap<usize, ScoredExample>>());
        }
        let (src_side, tgt_side) = (&sides[0], &sides[1]);
        let mut aligned = Vec::new();
        for (i, s) in src_side {
            let Some(t) = tgt_side.get(i) else { continue };
            debug_assert_eq!(s.example.source_text, t.example.source_text);
            let score = pivot_score(s.score, t.score)?;
            let example = Example::new(
                s.example.target_text.clone(),
                t.example.target_text.clone(),
                self.source.clone(),
                self.target.clone(),
            )?;
            aligned.push(ScoredExample {
                example,
                score,
                round,
                pivot: Some(PivotLegs {
                    pivot_text: s.example.source_text.clone(),
                    source_score: s.score,
                    target_score: t.score,
                }),
            });
        }
        if aligned.is_empty() {
            log::warn!("pivot round {round}: no aligned pair survived filtering");
        }
        aligned.sort_by(rank_order);
        self.pool = merge_pool(&self.pool, aligned, config.pool_keep);
        Ok(())
    }

    /// Runs the remaining rounds, calling `on_round` after each one.
    pub fn run_to_completion(
        &mut self,
        corpora: &CorpusSet,
        backend: &dyn InfillBackend,
        scorer: &Scorer,
        mut on_round: impl FnMut(&BootstrapCheckpoint) -> Result<()>,
    ) -> Result<()> {
        while !self.is_complete() {
            self.run_round(corpora, backend, scorer)?;
            on_round(self)?;
        }
        Ok(())
    }
}

fn pivot_tag(config: &BootstrapConfig, source: &LangTag, target: &LangTag) -> Result<LangTag> {
    let pivot = LangTag::from_code(&config.pivot_lang)
        .or_else(|_| LangTag::new(config.pivot_lang.clone(), config.pivot_lang.clone()))?;
    if &pivot == source || &pivot == target {
        return Err(Error::invalid(
            "bootstrap config",
            format!("pivot language {pivot} must differ from both ends of the pair"),
        ));
    }
    Ok(pivot)
}

pub fn run_bootstrap(
    config: BootstrapConfig,
    source: &LangTag,
    target: &LangTag,
    corpora: &CorpusSet,
    backend: &dyn InfillBackend,
    scorer: &Scorer,
) -> Result<BootstrapCheckpoint> {
    let mut ckpt = BootstrapCheckpoint::new(config, source, target)?;
    ckpt.run_to_completion(corpora, backend, scorer, |_| Ok(()))?;
    Ok(ckpt)
}

// Persistence: a header line followed by one line per pooled example. The
// header carries a digest of the example lines.

#[derive(Serialize, Deserialize)]
struct LegHeader {
    source: LangTag,
    target: LangTag,
    rounds: Vec<RoundHeader>,
}

#[derive(Serialize, Deserialize)]
struct RoundHeader {
    round: usize,
    sampled: usize,
    survivors: usize,
    shots: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    config: BootstrapConfig,
    source: LangTag,
    target: LangTag,
    rounds_completed: usize,
    rng: ChaCha8Rng,
    legs: Vec<LegHeader>,
    records: usize,
    sha256: String,
}

#[derive(Serialize, Deserialize)]
struct Record {
    /// Leg index, or `None` for the final pool.
    leg: Option<usize>,
    /// Round whose pool snapshot this belongs to (leg records only).
    snapshot: Option<usize>,
    source: String,
    target: String,
    source_lang: LangTag,
    target_lang: LangTag,
    score: f64,
    round: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pivot: Option<PivotLegs>,
}

impl Record {
    fn new(leg: Option<usize>, snapshot: Option<usize>, e: &ScoredExample) -> Self {
        Record {
            leg,
            snapshot,
            source: e.example.source_text.clone(),
            target: e.example.target_text.clone(),
            source_lang: e.example.source_lang.clone(),
            target_lang: e.example.target_lang.clone(),
            score: e.score,
            round: e.round,
            pivot: e.pivot.clone(),
        }
    }

    fn into_example(self) -> Result<ScoredExample> {
        if !self.score.is_finite() || self.score < 0.0 {
            return Err(Error::invalid("score", format!("{} is not a finite non-negative number", self.score)));
        }
        Ok(ScoredExample {
            example: Example::new(self.source, self.target, self.source_lang, self.target_lang)?,
            score: self.score,
            round: self.round,
            pivot: self.pivot,
        })
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl BootstrapCheckpoint {
    /// Serializes to line-delimited JSON. Equal checkpoints give equal bytes.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut records = Vec::new();
        for (i, leg) in self.legs.iter().enumerate() {
            for r in &leg.rounds {
                for e in &r.pool {
                    records.push(Record::new(Some(i), Some(r.round), e));
                }
            }
        }
        records.extend(self.pool.iter().map(|e| Record::new(None, None, e)));
        let lines = records
            .iter()
            .map(serde_json::to_string)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format("checkpoint", e))?;
        let mut hasher = Sha256::new();
        for line in &lines {
            hasher.update(line.as_bytes());
            hasher.update(b"\n");
        }
        let header = Header {
            kind: "bootstrap_checkpoint".to_string(),
            config: self.config.clone(),
            source: self.source.clone(),
            target: self.target.clone(),
            rounds_completed: self.rounds_completed,
            rng: self.rng.clone(),
            legs: self
                .legs
                .iter()
                .map(|l| LegHeader {
                    source: l.source.clone(),
                    target: l.target.clone(),
                    rounds: l
                        .rounds
                        .iter()
                        .map(|r| RoundHeader {
                            round: r.round,
                            sampled: r.sampled,
                            survivors: r.survivors,
                            shots: r.shots,
                        })
                        .collect(),
                })
                .collect(),
            records: lines.len(),
            sha256: hex(&hasher.finalize()),
        };
        let mut out = serde_json::to_string(&header).map_err(|e| Error::format("checkpoint", e))?;
        out.push('\n');
        for line in lines {
            out.push_str(&line);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header_line = lines.next().ok_or_else(|| Error::Integrity {
            round: 0,
            reason: "empty checkpoint".to_string(),
        })?;
        let header: Header = serde_json::from_str(header_line).map_err(|e| Error::Integrity {
            round: 0,
            reason: format!("unreadable header: {e}"),
        })?;
        let round = header.rounds_completed;
        let corrupt = |reason: String| Error::Integrity { round, reason };
        if header.kind != "bootstrap_checkpoint" {
            return Err(corrupt(format!("unexpected record kind {:?}", header.kind)));
        }
        let body: Vec<&str> = lines.collect();
        if body.len() != header.records {
            return Err(corrupt(format!(
                "header announces {} record(s), found {}",
                header.records,
                body.len()
            )));
        }
        let mut hasher = Sha256::new();
        for line in &body {
            hasher.update(line.as_bytes());
            hasher.update(b"\n");
        }
        if hex(&hasher.finalize()) != header.sha256 {
            return Err(corrupt("record digest does not match header".to_string()));
        }
        header.config.validate().map_err(|e| corrupt(e.to_string()))?;

        let mut legs: Vec<Leg> = header
            .legs
            .into_iter()
            .map(|l| Leg {
                source: l.source,
                target: l.target,
                rounds: l
                    .rounds
                    .into_iter()
                    .map(|r| RoundRecord {
                        round: r.round,
                        sampled: r.sampled,
                        survivors: r.survivors,
                        shots: r.shots,
                        pool: Vec::new(),
                    })
                    .collect(),
            })
            .collect();
        let mut pool = Vec::new();
        for (n, line) in body.iter().enumerate() {
            let rec: Record = serde_json::from_str(line)
                .map_err(|e| corrupt(format!("record {}: {e}", n + 1)))?;
            let (leg, snapshot) = (rec.leg, rec.snapshot);
            let example = rec
                .into_example()
                .map_err(|e| corrupt(format!("record {}: {e}", n + 1)))?;
            match (leg, snapshot) {
                (None, _) => pool.push(example),
                (Some(i), Some(r)) => {
                    let slot = legs
                        .get_mut(i)
                        .and_then(|l| l.rounds.iter_mut().find(|x| x.round == r))
                        .ok_or_else(|| corrupt(format!("record {} names unknown leg/round", n + 1)))?;
                    slot.pool.push(example);
                }
                (Some(_), None) => {
                    return Err(corrupt(format!("record {} has a leg but no snapshot", n + 1)))
                }
            }
        }
        let ckpt = BootstrapCheckpoint {
            config: header.config,
            source: header.source,
            target: header.target,
            rounds_completed: header.rounds_completed,
            rng: header.rng,
            legs,
            pool,
        };
        ckpt.check_invariants().map_err(corrupt)?;
        Ok(ckpt)
    }

    fn check_invariants(&self) -> std::result::Result<(), String> {
        let keep = self.config.pool_keep;
        let sorted = |p: &[ScoredExample]| p.windows(2).all(|w| w[0].score >= w[1].score);
        if self.pool.len() > keep || !sorted(&self.pool) {
            return Err("final pool is oversized or unsorted".to_string());
        }
        for leg in &self.legs {
            for r in &leg.rounds {
                if r.pool.len() > keep || !sorted(&r.pool) {
                    return Err(format!("round {} pool is oversized or unsorted", r.round));
                }
            }
        }
        if self.rounds_completed > self.config.rounds {
            return Err("more rounds completed than configured".to_string());
        }
        Ok(())
    }

    /// Atomic write: a temporary file in the same directory, then rename.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_jsonl()?.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text)
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::MockInfill;
    use crate::toy::ToyWorld;
    use std::sync::Arc;

    fn ex(src: &str, score: f64, round: usize) -> ScoredExample {
        let es = LangTag::from_code("es").unwrap();
        let en = LangTag::from_code("en").unwrap();
        ScoredExample {
            example: Example::new(src, format!("{src}-en"), es, en).unwrap(),
            score,
            round,
            pivot: None,
        }
    }

    fn small_config() -> BootstrapConfig {
        BootstrapConfig {
            rounds: 2,
            sample_size: 12,
            pool_keep: 4,
            ..BootstrapConfig::default()
        }
    }

    fn setup(noise: f64) -> (ToyWorld, MockInfill, Scorer, CorpusSet) {
        let w = ToyWorld::new();
        let backend = MockInfill::new(w.mock_spec(3).with_noise(noise, 5)).unwrap();
        let scorer = Scorer::new(Arc::new(w.embedder()), w.profiles());
        let corpora = CorpusSet::new()
            .with(&w.spanish, w.corpus(&w.spanish, 60, 8, 1).unwrap())
            .with(&w.english, w.corpus(&w.english, 60, 8, 2).unwrap())
            .with(&w.russian, w.corpus(&w.russian, 60, 8, 3).unwrap())
            .with(&w.chinese, w.corpus(&w.chinese, 60, 8, 4).unwrap());
        (w, backend, scorer, corpora)
    }

    #[test]
    fn merge_keeps_top_k_and_prefers_earlier_rounds() {
        let old = vec![ex("a", 0.9, 1), ex("b", 0.5, 1)];
        let new = vec![ex("c", 0.7, 2), ex("d", 0.5, 2), ex("e", 0.1, 2)];
        let pool = merge_pool(&old, new, 3);
        let names: Vec<_> = pool.iter().map(|e| e.example.source_text.as_str()).collect();
        assert_eq!(names, ["a", "c", "b"]);
    }

    #[test]
    fn fewshot_task_takes_best_k() {
        let pool = vec![ex("a", 0.9, 1), ex("b", 0.8, 1), ex("c", 0.7, 2)];
        let es = LangTag::from_code("es").unwrap();
        let en = LangTag::from_code("en").unwrap();
        let t = build_fewshot_task(&pool, &es, &en, 2).unwrap();
        assert_eq!(t.shots.len(), 2);
        assert_eq!(t.shots[0].source_text, "a");
        assert_eq!(t.shots[1].source_text, "b");
        assert!(build_fewshot_task(&pool, &es, &en, 0).unwrap().shots.is_empty());
        assert!(matches!(
            build_fewshot_task(&pool, &es, &en, 4),
            Err(Error::InsufficientPool { required: 4, available: 3 })
        ));
    }

    #[test]
    fn tie_at_rank_k_goes_to_earlier_round() {
        let pool = vec![ex("late", 0.5, 3), ex("early", 0.5, 1)];
        let es = LangTag::from_code("es").unwrap();
        let en = LangTag::from_code("en").unwrap();
        let t = build_fewshot_task(&pool, &es, &en, 1).unwrap();
        assert_eq!(t.shots[0].source_text, "early");
    }

    #[test]
    fn config_validation() {
        let mut c = BootstrapConfig::default();
        assert_eq!((c.rounds, c.sample_size, c.pool_keep, c.shots_per_prompt), (4, 100, 8, 2));
        c.pool_keep = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn oracle_pool_holds_exact_translations() {
        let (w, backend, scorer, corpora) = setup(0.0);
        let ckpt = run_bootstrap(small_config(), &w.spanish, &w.english, &corpora, &backend, &scorer)
            .unwrap();
        assert_eq!(ckpt.pool.len(), 4);
        for e in &ckpt.pool {
            let exact = w.translate(&e.example.source_text, &w.spanish, &w.english).unwrap();
            assert_eq!(e.example.target_text, exact);
            assert!((e.score - 1.0).abs() < 1e-9);
        }
        assert!(!corpora.was_read(&w.english));
    }

    #[test]
    fn sample_larger_than_corpus_is_rejected() {
        let (w, backend, scorer, _) = setup(0.0);
        let corpora = CorpusSet::new().with(&w.spanish, vec!["el perro".into()]);
        let err = run_bootstrap(small_config(), &w.spanish, &w.english, &corpora, &backend, &scorer);
        assert!(matches!(err, Err(Error::Invalid { what: "corpus", .. })));
    }

    #[test]
    fn reversed_strategy_reads_target_corpus_and_swaps() {
        let (w, backend, scorer, corpora) = setup(0.0);
        let config = BootstrapConfig {
            strategy: Strategy::Reversed,
            ..small_config()
        };
        let ckpt = run_bootstrap(config, &w.english, &w.russian, &corpora, &backend, &scorer).unwrap();
        assert!(corpora.was_read(&w.russian));
        assert!(!corpora.was_read(&w.english));
        for e in &ckpt.pool {
            assert_eq!(e.example.source_lang, w.english);
            assert_eq!(e.example.target_lang, w.russian);
        }
        assert_eq!(ckpt.legs[0].source, w.russian);
    }

    #[test]
    fn pivot_strategy_aligns_on_the_pivot_sentence() {
        let (w, backend, scorer, corpora) = setup(0.3);
        let config = BootstrapConfig {
            strategy: Strategy::Pivot,
            rounds: 3,
            ..small_config()
        };
        let ckpt = run_bootstrap(config, &w.russian, &w.chinese, &corpora, &backend, &scorer).unwrap();
        assert!(!ckpt.pool.is_empty());
        assert_eq!(ckpt.legs[0].rounds.len(), 2);
        for e in &ckpt.pool {
            let legs = e.pivot.as_ref().unwrap();
            let s = pivot_score(legs.source_score, legs.target_score).unwrap();
            assert!((e.score - s).abs() < 1e-12);
            assert_eq!(e.example.source_lang, w.russian);
        }
    }

    #[test]
    fn jsonl_round_trip_and_corruption() {
        let (w, backend, scorer, corpora) = setup(0.2);
        let ckpt = run_bootstrap(small_config(), &w.spanish, &w.english, &corpora, &backend, &scorer)
            .unwrap();
        let text = ckpt.to_jsonl().unwrap();
        let back = BootstrapCheckpoint::from_jsonl(&text).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_jsonl().unwrap(), text);

        let mut lines: Vec<&str> = text.lines().collect();
        let edited = lines[1].replace("\"round\":1", "\"round\":7");
        lines[1] = &edited;
        let broken = lines.join("\n");
        match BootstrapCheckpoint::from_jsonl(&broken) {
            Err(Error::Integrity { round, .. }) => assert_eq!(round, 2),
            other => panic!("expected integrity error, got {other:?}"),
        }
    }
}
