//! Deterministic test doubles.
//!
//! [`MockInfill`] behaves like a span-infill model that knows a word-for-word
//! lexicon: it reads the query and the partial output back out of the
//! prompt, and answers with at most `span_budget` words of what remains.
//! [`MockEmbedder`] maps each whitespace token to a hashed character-trigram
//! vector.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    BackendError, Embedder, EmbeddingRequest, EmbeddingResponse, GenerationRequest,
    GenerationResponse, InfillBackend, TokenEmbeddings,
};
use crate::prompt::{DEFAULT_MASK_TOKEN, DEFAULT_STOP_TOKEN};

pub type Lexicon = BTreeMap<String, String>;

/// Appended to the last word of a corrupted span.
pub const JUNK_SUFFIX: &str = "zq";

pub const MOCK_EMBED_DIM: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockInfillSpec {
    pub lexicon: Lexicon,
    pub span_budget: usize,
    pub noise_rate: f64,
    pub seed: u64,
    /// Per-direction lexicons keyed by target label (without the colon),
    /// e.g. `"Russian"`. Falls back to `lexicon`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub target_lexicons: BTreeMap<String, Lexicon>,
    #[serde(default = "default_mask")]
    pub mask_token: String,
    #[serde(default = "default_stop")]
    pub stop_token: String,
}

fn default_mask() -> String {
    DEFAULT_MASK_TOKEN.to_string()
}
fn default_stop() -> String {
    DEFAULT_STOP_TOKEN.to_string()
}

impl MockInfillSpec {
    pub fn new(lexicon: Lexicon, span_budget: usize) -> Self {
        MockInfillSpec {
            lexicon,
            span_budget,
            noise_rate: 0.0,
            seed: 0,
            target_lexicons: BTreeMap::new(),
            mask_token: default_mask(),
            stop_token: default_stop(),
        }
    }

    pub fn with_noise(mut self, noise_rate: f64, seed: u64) -> Self {
        self.noise_rate = noise_rate;
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.span_budget == 0 {
            return Err(BackendError::Protocol("span_budget must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(BackendError::Protocol("noise_rate must lie in [0, 1]".into()));
        }
        Ok(())
    }

    fn lexicon_for(&self, target_label: &str) -> &Lexicon {
        let key = target_label.trim_end_matches(':').trim();
        self.target_lexicons.get(key).unwrap_or(&self.lexicon)
    }

    /// Word-by-word lexicon translation; unknown words pass through.
    pub fn translate_words<'a>(&'a self, target_label: &str, text: &'a str) -> Vec<&'a str> {
        let lex = self.lexicon_for(target_label);
        text.split_whitespace()
            .map(|w| lex.get(w).map(String::as_str).unwrap_or(w))
            .collect()
    }
}

/// The pieces of a rendered prompt the mock needs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPrompt<'a> {
    pub query: &'a str,
    pub target_label: &'a str,
    pub partial: &'a str,
}

/// Reads the last input line and the final target line of a prompt.
///
/// Expects `<label>: <query><stop>` followed by `<label>: <partial> <mask>`.
pub fn parse_prompt<'a>(
    prompt: &'a str,
    mask: &str,
    stop: &str,
) -> Result<ParsedPrompt<'a>, BackendError> {
    let bad = |why: &str| BackendError::Protocol(format!("unparseable prompt: {why}"));
    let mut lines = prompt.rsplit('\n');
    let last = lines.next().ok_or_else(|| bad("empty"))?;
    let body = last
        .strip_suffix(mask)
        .ok_or_else(|| bad("last line does not end with the mask token"))?;
    let (target_label, partial) = split_label(body).ok_or_else(|| bad("no target label"))?;
    let query_line = lines.next().ok_or_else(|| bad("no query line"))?;
    let query_body = query_line
        .strip_suffix(stop)
        .ok_or_else(|| bad("query line does not end with the stop token"))?;
    let (_, query) = split_label(query_body).ok_or_else(|| bad("no query label"))?;
    Ok(ParsedPrompt {
        query,
        target_label,
        partial,
    })
}

fn split_label(line: &str) -> Option<(&str, &str)> {
    let idx = line.find(':')?;
    Some((&line[..=idx], line[idx + 1..].trim()))
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// One mock infill call.
///
/// Returns the next `span_budget` words of the lexicon translation that the
/// partial output has not covered yet, or the stop token when nothing is
/// left. With probability `noise_rate` a multi-word span has its last word
/// corrupted with [`JUNK_SUFFIX`]; the draw is seeded by `(seed, prompt)` so
/// the call is stateless and repeatable.
pub fn mock_infill(spec: &MockInfillSpec, prompt: &str) -> Result<String, BackendError> {
    spec.validate()?;
    let parsed = parse_prompt(prompt, &spec.mask_token, &spec.stop_token)?;
    let reference = spec.translate_words(parsed.target_label, parsed.query);
    let done = parsed.partial.split(' ').filter(|w| !w.is_empty()).count();
    let remainder = &reference[done.min(reference.len())..];
    if remainder.is_empty() {
        return Ok(spec.stop_token.clone());
    }
    let mut span: Vec<String> = remainder
        .iter()
        .take(spec.span_budget)
        .map(|w| (*w).to_string())
        .collect();
    if span.len() >= 2 && spec.noise_rate > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ fnv1a(prompt.as_bytes()));
        if rng.random::<f64>() < spec.noise_rate {
            if let Some(last) = span.last_mut() {
                last.push_str(JUNK_SUFFIX);
            }
        }
    }
    Ok(span.join(" "))
}

#[derive(Debug, Clone)]
pub struct MockInfill {
    spec: MockInfillSpec,
}

impl MockInfill {
    pub fn new(spec: MockInfillSpec) -> Result<Self, BackendError> {
        spec.validate()?;
        Ok(MockInfill { spec })
    }

    pub fn spec(&self) -> &MockInfillSpec {
        &self.spec
    }
}

impl InfillBackend for MockInfill {
    fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        req.validate(&self.spec.mask_token)?;
        Ok(GenerationResponse {
            infill: mock_infill(&self.spec, &req.prompt)?,
        })
    }

    fn name(&self) -> String {
        format!(
            "mock-infill(span_budget={}, noise_rate={})",
            self.spec.span_budget, self.spec.noise_rate
        )
    }
}

/// L2-normalized hashed trigram counts of `^token$`.
pub fn trigram_vector(token: &str) -> Vec<f64> {
    let mut v = vec![0.0; MOCK_EMBED_DIM];
    let padded: Vec<char> = std::iter::once('^')
        .chain(token.chars())
        .chain(std::iter::once('$'))
        .collect();
    for w in padded.windows(3) {
        let gram: String = w.iter().collect();
        let slot = (fnv1a(gram.as_bytes()) % MOCK_EMBED_DIM as u64) as usize;
        v[slot] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Trigram embedder. Tokens found in `canonical` are embedded as their
/// mapped form, which lets a lexicon act as a shared cross-lingual space.
#[derive(Debug, Clone, Default)]
pub struct MockEmbedder {
    canonical: Lexicon,
}

impl MockEmbedder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_canonical(canonical: Lexicon) -> Self {
        MockEmbedder { canonical }
    }

    pub fn embed_text(&self, text: &str) -> TokenEmbeddings {
        let tokens: Vec<String> = text.split_whitespace().map(str::to_string).collect();
        let vectors = tokens
            .iter()
            .map(|t| {
                let key = self.canonical.get(t).unwrap_or(t);
                trigram_vector(&key.to_lowercase())
            })
            .collect();
        TokenEmbeddings { tokens, vectors }
    }
}

impl Embedder for MockEmbedder {
    fn embed(&self, req: &EmbeddingRequest) -> Result<EmbeddingResponse, BackendError> {
        req.validate()?;
        Ok(EmbeddingResponse {
            embeddings: req.texts.iter().map(|t| self.embed_text(t)).collect(),
        })
    }

    fn name(&self) -> String {
        "mock-trigram".to_string()
    }
}
