//! Supervised evaluation metrics.

mod bleu;
mod qa;
mod rouge;
mod tokenize;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bleu::{corpus_bleu, sentence_bleu, BleuConfig, BleuScore, Smoothing};
pub use qa::{normalize_answer, qa_em_f1};
pub use rouge::{lcs_length, rouge_l, rouge_l_from_lcs, rouge_l_tokens, rouge_l_with_beta, DEFAULT_BETA};
pub use tokenize::{whitespace_punct, Tokenizer, VocabTokenizer, WORD_START};

/// A corpus score with its per-segment breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub corpus_score: f64,
    pub per_segment: Vec<f64>,
    pub config: serde_json::Value,
}

fn check_aligned(left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::LengthMismatch { left, right });
    }
    if left == 0 {
        return Err(Error::invalid("metric input", "no segments"));
    }
    Ok(())
}

pub fn bleu_report<C: AsRef<str>, R: AsRef<str>>(
    candidates: &[C],
    references: &[R],
    cfg: &BleuConfig,
) -> Result<MetricReport> {
    check_aligned(candidates.len(), references.len())?;
    let corpus = corpus_bleu(candidates, references, cfg)?;
    let per_segment = candidates
        .iter()
        .zip(references)
        .map(|(c, r)| sentence_bleu(c.as_ref(), r.as_ref(), cfg).map(|s| s.score))
        .collect::<Result<_>>()?;
    Ok(MetricReport {
        metric: "bleu".to_string(),
        corpus_score: corpus.score,
        per_segment,
        config: serde_json::to_value(cfg).map_err(|e| Error::format("bleu config", e))?,
    })
}

/// Mean exact match and mean F1 as two reports.
pub fn qa_reports<P: AsRef<str>>(
    predictions: &[P],
    gold: &[Vec<String>],
) -> Result<(MetricReport, MetricReport)> {
    check_aligned(predictions.len(), gold.len())?;
    let (ems, f1s): (Vec<f64>, Vec<f64>) = predictions
        .iter()
        .zip(gold)
        .map(|(p, g)| {
            let (em, f1) = qa_em_f1(p.as_ref(), g);
            (f64::from(em), f1)
        })
        .unzip();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let config = serde_json::json!({ "normalization": "lowercase, strip punctuation, drop a/an/the" });
    Ok((
        MetricReport {
            metric: "exact_match".to_string(),
            corpus_score: mean(&ems),
            per_segment: ems,
            config: config.clone(),
        },
        MetricReport {
            metric: "f1".to_string(),
            corpus_score: mean(&f1s),
            per_segment: f1s,
            config,
        },
    ))
}

/// Mean sentence-level ROUGE-L F-measure.
pub fn rouge_report<P: AsRef<str>, R: AsRef<str>>(
    predictions: &[P],
    references: &[R],
    beta: f64,
) -> Result<MetricReport> {
    check_aligned(predictions.len(), references.len())?;
    let per_segment: Vec<f64> = predictions
        .iter()
        .zip(references)
        .map(|(p, r)| rouge_l_with_beta(p.as_ref(), r.as_ref(), beta))
        .collect();
    Ok(MetricReport {
        metric: "rouge_l".to_string(),
        corpus_score: per_segment.iter().sum::<f64>() / per_segment.len() as f64,
        per_segment,
        config: serde_json::json!({ "variant": "sentence-level LCS", "beta": beta }),
    })
}
