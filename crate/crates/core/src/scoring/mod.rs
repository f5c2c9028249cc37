//! Unsupervised quality signals.
//!
//! [`similarity`] is greedy-matching token similarity over contextual
//! embeddings (BERTScore-style): every reference token is matched to its most
//! similar candidate token for recall, and vice versa for precision.

mod langid;

use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{Embedder, EmbeddingRequest, TokenEmbeddings};
use crate::error::{Error, Result};
use crate::prompt::LangTag;

pub use langid::{
    builtin_profile, builtin_profiles, detect_language, ngram_ranking, Detection, LangProfile,
    MAX_NGRAM, PROFILE_SIZE,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl SimilarityScore {
    pub fn new(precision: f64, recall: f64) -> Self {
        let sum = precision + recall;
        let f1 = if sum > 0.0 {
            2.0 * precision * recall / sum
        } else {
            0.0
        };
        SimilarityScore {
            precision,
            recall,
            f1,
        }
    }

    pub fn get(&self, variant: ScoreVariant) -> f64 {
        match variant {
            ScoreVariant::Precision => self.precision,
            ScoreVariant::Recall => self.recall,
            ScoreVariant::F1 => self.f1,
        }
    }
}

/// Which component of [`SimilarityScore`] ranks candidates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreVariant {
    Precision,
    Recall,
    #[default]
    F1,
}

/// Inverse document frequency weights, `ln((M + 1) / (df + 1))`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdfTable {
    weights: HashMap<String, f64>,
    unseen: f64,
}

impl IdfTable {
    pub fn from_corpus<S: AsRef<str>>(docs: &[S]) -> Self {
        let m = docs.len() as f64;
        let mut df: HashMap<String, usize> = HashMap::new();
        for doc in docs {
            let uniq: HashSet<&str> = doc.as_ref().split_whitespace().collect();
            for tok in uniq {
                *df.entry(tok.to_string()).or_default() += 1;
            }
        }
        let weights = df
            .into_iter()
            .map(|(t, c)| (t, ((m + 1.0) / (c as f64 + 1.0)).ln()))
            .collect();
        IdfTable {
            weights,
            unseen: (m + 1.0).ln(),
        }
    }

    pub fn weight(&self, token: &str) -> f64 {
        self.weights.get(token).copied().unwrap_or(self.unseen)
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
    }
}

/// Weighted mean over `from` tokens of their best cosine against `to`.
fn greedy_match(from: &TokenEmbeddings, to: &TokenEmbeddings, idf: Option<&IdfTable>) -> f64 {
    if from.vectors.is_empty() || to.vectors.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    let mut weight_sum = 0.0;
    for (tok, v) in from.tokens.iter().zip(&from.vectors) {
        let best = to
            .vectors
            .iter()
            .map(|u| cosine(v, u))
            .fold(f64::NEG_INFINITY, f64::max);
        let w = idf.map_or(1.0, |t| t.weight(tok));
        total += w * best;
        weight_sum += w;
    }
    if weight_sum > 0.0 {
        total / weight_sum
    } else {
        0.0
    }
}

/// Scores already-embedded token sequences.
pub fn similarity_from_embeddings(
    candidate: &TokenEmbeddings,
    reference: &TokenEmbeddings,
    idf: Option<&IdfTable>,
) -> SimilarityScore {
    let recall = greedy_match(reference, candidate, idf);
    let precision = greedy_match(candidate, reference, idf);
    SimilarityScore::new(precision, recall)
}

pub fn similarity(
    candidate: &str,
    reference: &str,
    embedder: &dyn Embedder,
) -> Result<SimilarityScore> {
    similarity_weighted(candidate, reference, embedder, None)
}

pub fn similarity_weighted(
    candidate: &str,
    reference: &str,
    embedder: &dyn Embedder,
    idf: Option<&IdfTable>,
) -> Result<SimilarityScore> {
    if candidate.trim().is_empty() || reference.trim().is_empty() {
        return Err(Error::invalid("similarity input", "texts must be non-empty"));
    }
    let req = EmbeddingRequest::new([candidate, reference]);
    let resp = embedder.embed(&req)?;
    resp.validate(2)?;
    Ok(similarity_from_embeddings(
        &resp.embeddings[0],
        &resp.embeddings[1],
        idf,
    ))
}

/// Harmonic mean of two non-negative leg scores.
pub fn pivot_score(s1: f64, s2: f64) -> Result<f64> {
    if !(s1 >= 0.0 && s2 >= 0.0) {
        return Err(Error::invalid(
            "pivot score input",
            format!("scores must be non-negative, got {s1} and {s2}"),
        ));
    }
    let sum = s1 + s2;
    Ok(if sum == 0.0 { 0.0 } else { 2.0 * s1 * s2 / sum })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringConfig {
    pub variant: ScoreVariant,
    pub idf: bool,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            variant: ScoreVariant::F1,
            idf: false,
        }
    }
}

/// A candidate that passed the language filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    /// Position in the input list.
    pub index: usize,
    pub source: String,
    pub generated: String,
    pub score: f64,
}

/// Embedder plus language profiles: everything needed to filter and rank.
#[derive(Clone)]
pub struct Scorer {
    embedder: Arc<dyn Embedder>,
    profiles: Vec<LangProfile>,
    config: ScoringConfig,
    idf: Option<IdfTable>,
}

impl Scorer {
    pub fn new(embedder: Arc<dyn Embedder>, profiles: Vec<LangProfile>) -> Self {
        Scorer {
            embedder,
            profiles,
            config: ScoringConfig::default(),
            idf: None,
        }
    }

    pub fn with_config(mut self, config: ScoringConfig) -> Self {
        self.config = config;
        self
    }

    /// Enables IDF weighting with weights computed from `docs`.
    pub fn with_idf<S: AsRef<str>>(mut self, docs: &[S]) -> Self {
        self.config.idf = true;
        self.idf = Some(IdfTable::from_corpus(docs));
        self
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    pub fn profiles(&self) -> &[LangProfile] {
        &self.profiles
    }

    pub fn config(&self) -> &ScoringConfig {
        &self.config
    }

    fn idf(&self) -> Option<&IdfTable> {
        if self.config.idf {
            self.idf.as_ref()
        } else {
            None
        }
    }

    pub fn similarity(&self, candidate: &str, reference: &str) -> Result<SimilarityScore> {
        similarity_weighted(candidate, reference, self.embedder.as_ref(), self.idf())
    }

    /// The configured ranking score of `candidate` against `reference`.
    pub fn score(&self, candidate: &str, reference: &str) -> Result<f64> {
        Ok(self.similarity(candidate, reference)?.get(self.config.variant))
    }

    pub fn detect(&self, text: &str) -> Result<Detection> {
        detect_language(text, &self.profiles)
    }

    /// Drops candidates not detected as `target_lang`, scores the rest
    /// against their source, and sorts descending (stable on input order).
    ///
    /// Scores are clamped to be non-negative.
    pub fn filter_candidates(
        &self,
        cands: &[(String, String)],
        target_lang: &LangTag,
    ) -> Result<Vec<ScoredCandidate>> {
        let scored: Vec<Option<ScoredCandidate>> = cands
            .par_iter()
            .enumerate()
            .map(|(index, (source, generated))| -> Result<Option<ScoredCandidate>> {
                if generated.trim().is_empty() || source.trim().is_empty() {
                    return Ok(None);
                }
                if self.detect(generated)?.lang != *target_lang {
                    return Ok(None);
                }
                let score = self.score(generated, source)?.max(0.0);
                Ok(Some(ScoredCandidate {
                    index,
                    source: source.clone(),
                    generated: generated.clone(),
                    score,
                }))
            })
            .collect::<Result<_>>()?;
        let mut survivors: Vec<ScoredCandidate> = scored.into_iter().flatten().collect();
        survivors.sort_by(|a, b| b.score.total_cmp(&a.score));
        Ok(survivors)
    }
}

pub fn filter_candidates(
    cands: &[(String, String)],
    target_lang: &LangTag,
    embedder: Arc<dyn Embedder>,
    profiles: Vec<LangProfile>,
) -> Result<Vec<ScoredCandidate>> {
    Scorer::new(embedder, profiles).filter_candidates(cands, target_lang)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{BackendError, EmbeddingResponse, MockEmbedder};
    use std::collections::BTreeMap;

    /// Returns fixed vectors per token.
    struct Table(BTreeMap<&'static str, Vec<f64>>);

    impl Embedder for Table {
        fn embed(&self, req: &EmbeddingRequest) -> std::result::Result<EmbeddingResponse, BackendError> {
            Ok(EmbeddingResponse {
                embeddings: req
                    .texts
                    .iter()
                    .map(|t| TokenEmbeddings {
                        tokens: t.split_whitespace().map(String::from).collect(),
                        vectors: t
                            .split_whitespace()
                            .map(|w| self.0.get(w).cloned().unwrap_or(vec![0.0, 0.0]))
                            .collect(),
                    })
                    .collect(),
            })
        }
    }

    fn hand_table() -> Table {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        Table(BTreeMap::from([
            ("a", vec![1.0, 0.0]),
            ("b", vec![0.0, 1.0]),
            ("c", vec![r, r]),
            ("z", vec![0.0, 0.0]),
        ]))
    }

    #[test]
    fn identical_texts_score_one() {
        let e = MockEmbedder::new();
        let s = similarity("the dog barks", "the dog barks", &e).unwrap();
        assert!((s.f1 - 1.0).abs() < 1e-12);
        assert!((s.precision - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_trigrams_score_zero() {
        let e = MockEmbedder::new();
        let s = similarity("abc", "xyz", &e).unwrap();
        assert_eq!(s.f1, 0.0);
    }

    #[test]
    fn hand_built_greedy_matching() {
        // recall: a -> max(1, 0) = 1, c -> max(1/√2, 1/√2) = 1/√2
        // precision: a -> max(1, 1/√2) = 1, b -> max(0, 1/√2) = 1/√2
        let s = similarity("a b", "a c", &hand_table()).unwrap();
        let expected = (1.0 + std::f64::consts::FRAC_1_SQRT_2) / 2.0;
        assert!((s.recall - expected).abs() < 1e-12);
        assert!((s.precision - expected).abs() < 1e-12);
        assert!((s.f1 - 0.853_553_390_593_273_7).abs() < 1e-12);
    }

    #[test]
    fn zero_norm_token_contributes_zero() {
        let s = similarity("a z", "a", &hand_table()).unwrap();
        assert!((s.precision - 0.5).abs() < 1e-12);
        assert!((s.recall - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_text_rejected() {
        assert!(similarity("", "a", &hand_table()).is_err());
    }

    #[test]
    fn pivot_score_examples() {
        assert!((pivot_score(0.8, 0.8).unwrap() - 0.8).abs() < 1e-12);
        assert!((pivot_score(1.0, 0.5).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(pivot_score(0.7, 0.0).unwrap(), 0.0);
        assert_eq!(pivot_score(0.0, 0.0).unwrap(), 0.0);
        assert!(pivot_score(-0.1, 0.5).is_err());
        assert!(pivot_score(f64::NAN, 0.5).is_err());
    }

    #[test]
    fn idf_downweights_common_tokens() {
        let idf = IdfTable::from_corpus(&["a b", "a c", "a d"]);
        assert!(idf.weight("a") < idf.weight("b"));
        assert!((idf.weight("a") - (4.0f64 / 4.0).ln()).abs() < 1e-12);
        let table = hand_table();
        let plain = similarity_weighted("a b", "a c", &table, None).unwrap();
        let weighted = similarity_weighted("a b", "a c", &table, Some(&idf)).unwrap();
        // "a" carries zero weight, so only the c/b matches remain
        assert!((weighted.recall - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(weighted.recall < plain.recall);
    }

    fn en_es_scorer(embedder: Arc<dyn Embedder>) -> Scorer {
        let en = LangTag::from_code("en").unwrap();
        let es = LangTag::from_code("es").unwrap();
        Scorer::new(
            embedder,
            vec![builtin_profile(&en).unwrap(), builtin_profile(&es).unwrap()],
        )
    }

    #[test]
    fn filter_drops_wrong_language() {
        let scorer = en_es_scorer(Arc::new(MockEmbedder::new()));
        let en = LangTag::from_code("en").unwrap();
        let cands = vec![
            ("el perro".to_string(), "el perro es muy grande y bonito".to_string()),
            ("la casa".to_string(), "la casa de mi madre está lejos".to_string()),
        ];
        assert!(scorer.filter_candidates(&cands, &en).unwrap().is_empty());
    }

    #[test]
    fn filter_orders_by_hand_computed_score_stably() {
        // Candidate scores against source "a": "a" -> 1, "c" -> 1/√2, "b" -> 0.
        let table: Arc<dyn Embedder> = Arc::new(hand_table());
        let profile = LangProfile::from_text(LangTag::from_code("en").unwrap(), "a b c").unwrap();
        let scorer = Scorer::new(table, vec![profile]);
        let en = LangTag::from_code("en").unwrap();
        let cands: Vec<(String, String)> = [("a", "b"), ("a", "c"), ("a", "a"), ("a", "c")]
            .iter()
            .map(|(s, g)| (s.to_string(), g.to_string()))
            .collect();
        let out = scorer.filter_candidates(&cands, &en).unwrap();
        let order: Vec<usize> = out.iter().map(|c| c.index).collect();
        assert_eq!(order, vec![2, 1, 3, 0]);
        assert!((out[1].score - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }
}
