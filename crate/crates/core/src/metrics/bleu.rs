//! Corpus-level BLEU: clipped n-gram precision with a brevity penalty, counts
//! summed over all segments before the geometric mean is taken.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::tokenize::Tokenizer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Smoothing {
    #[serde(rename = "none")]
    None,
    /// A zero-match order `n` gets precision `1 / (2^k * total_n)`, where
    /// `k` counts the zero-match orders seen so far.
    #[default]
    #[serde(rename = "add_epsilon_exponential")]
    Exponential,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BleuConfig {
    pub max_ngram: usize,
    pub smoothing: Smoothing,
    pub tokenizer: Tokenizer,
}

impl Default for BleuConfig {
    fn default() -> Self {
        BleuConfig {
            max_ngram: 4,
            smoothing: Smoothing::Exponential,
            tokenizer: Tokenizer::WhitespacePunct,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BleuScore {
    /// In [0, 100].
    pub score: f64,
    /// Per-order precisions in percent, after smoothing.
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub matches: Vec<u64>,
    pub totals: Vec<u64>,
    pub sys_len: u64,
    pub ref_len: u64,
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_default() += 1;
        }
    }
    counts
}

/// Clipped matches and candidate n-gram totals for one segment.
fn segment_stats(cand: &[String], reference: &[String], max_n: usize) -> (Vec<u64>, Vec<u64>) {
    let mut matches = vec![0; max_n];
    let mut totals = vec![0; max_n];
    for n in 1..=max_n {
        let c = ngram_counts(cand, n);
        let r = ngram_counts(reference, n);
        totals[n - 1] = cand.len().saturating_sub(n - 1) as u64;
        matches[n - 1] = c
            .iter()
            .map(|(g, k)| (*k).min(r.get(g).copied().unwrap_or(0)))
            .sum();
    }
    (matches, totals)
}

fn score_from_stats(
    matches: Vec<u64>,
    totals: Vec<u64>,
    sys_len: u64,
    ref_len: u64,
    smoothing: Smoothing,
) -> BleuScore {
    let mut precisions = vec![0.0; matches.len()];
    let mut smooth = 1.0;
    for n in 0..matches.len() {
        if totals[n] == 0 {
            continue;
        }
        precisions[n] = if matches[n] > 0 {
            100.0 * matches[n] as f64 / totals[n] as f64
        } else {
            match smoothing {
                Smoothing::None => 0.0,
                Smoothing::Exponential => {
                    smooth *= 2.0;
                    100.0 / (smooth * totals[n] as f64)
                }
            }
        };
    }
    let brevity_penalty = if sys_len == 0 {
        0.0
    } else if sys_len < ref_len {
        (1.0 - ref_len as f64 / sys_len as f64).exp()
    } else {
        1.0
    };
    // Orders with no candidate n-grams at all are left out of the mean.
    let effective: Vec<f64> = precisions
        .iter()
        .zip(&totals)
        .filter(|(_, t)| **t > 0)
        .map(|(p, _)| *p)
        .collect();
    let score = if effective.is_empty() || effective.contains(&0.0) {
        0.0
    } else {
        let mean_log = effective.iter().map(|p| p.ln()).sum::<f64>() / effective.len() as f64;
        (brevity_penalty * mean_log.exp()).min(100.0)
    };
    BleuScore {
        score,
        precisions,
        brevity_penalty,
        matches,
        totals,
        sys_len,
        ref_len,
    }
}

pub fn corpus_bleu<C: AsRef<str>, R: AsRef<str>>(
    candidates: &[C],
    references: &[R],
    cfg: &BleuConfig,
) -> Result<BleuScore> {
    if candidates.len() != references.len() {
        return Err(Error::LengthMismatch {
            left: candidates.len(),
            right: references.len(),
        });
    }
    if candidates.is_empty() {
        return Err(Error::invalid("bleu input", "corpus is empty"));
    }
    if cfg.max_ngram == 0 {
        return Err(Error::invalid("bleu config", "max_ngram must be >= 1"));
    }
    let max_n = cfg.max_ngram;
    let mut matches = vec![0; max_n];
    let mut totals = vec![0; max_n];
    let (mut sys_len, mut ref_len) = (0u64, 0u64);
    for (c, r) in candidates.iter().zip(references) {
        let ct = cfg.tokenizer.tokenize(c.as_ref());
        let rt = cfg.tokenizer.tokenize(r.as_ref());
        let (m, t) = segment_stats(&ct, &rt, max_n);
        for n in 0..max_n {
            matches[n] += m[n];
            totals[n] += t[n];
        }
        sys_len += ct.len() as u64;
        ref_len += rt.len() as u64;
    }
    Ok(score_from_stats(matches, totals, sys_len, ref_len, cfg.smoothing))
}

/// BLEU of a single segment with the same configuration.
pub fn sentence_bleu(candidate: &str, reference: &str, cfg: &BleuConfig) -> Result<BleuScore> {
    corpus_bleu(&[candidate], &[reference], cfg)
}
