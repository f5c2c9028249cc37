//! Prompt ensembles built from a bootstrap pool, with unsupervised
//! best-candidate selection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::InfillBackend;
use crate::bootstrap::ScoredExample;
use crate::error::{Error, Result};
use crate::prompt::TaskSpec;
use crate::sap::{sap_generate, FinishReason, SapConfig};
use crate::scoring::Scorer;

/// How the top-N pool examples are assigned to prompts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// Prompt 1 gets ranks 1..k, prompt 2 the next k, and so on.
    #[default]
    RankConsecutive,
    /// Rank `r` (0-based) goes to prompt `r mod (N / k)`.
    RoundRobin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptEnsemble {
    pub tasks: Vec<TaskSpec>,
    /// Pool ranks (0-based) used by each prompt, in shot order.
    pub members: Vec<Vec<usize>>,
    pub grouping: Grouping,
}

impl PromptEnsemble {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}

/// Splits the top `n` of `pool` (already best first) into `n / shots_per_prompt`
/// few-shot prompts.
pub fn build_ensemble(
    pool: &[ScoredExample],
    n: usize,
    shots_per_prompt: usize,
    grouping: Grouping,
) -> Result<PromptEnsemble> {
    if n == 0 || shots_per_prompt == 0 {
        return Err(Error::invalid("ensemble", "size and shots_per_prompt must be >= 1"));
    }
    if !n.is_multiple_of(shots_per_prompt) {
        return Err(Error::invalid(
            "ensemble",
            format!("size {n} is not divisible by shots_per_prompt {shots_per_prompt}"),
        ));
    }
    if pool.len() < n {
        return Err(Error::InsufficientPool {
            required: n,
            available: pool.len(),
        });
    }
    let prompts = n / shots_per_prompt;
    let members: Vec<Vec<usize>> = (0..prompts)
        .map(|p| match grouping {
            Grouping::RankConsecutive => (p * shots_per_prompt..(p + 1) * shots_per_prompt).collect(),
            Grouping::RoundRobin => (0..shots_per_prompt).map(|j| p + j * prompts).collect(),
        })
        .collect();
    let first = &pool[0].example;
    let tasks = members
        .iter()
        .map(|ranks| {
            let shots = ranks.iter().map(|&r| pool[r].example.clone()).collect();
            TaskSpec::translation(&first.source_lang, &first.target_lang, shots)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PromptEnsemble {
        tasks,
        members,
        grouping,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleCandidate {
    pub text: String,
    /// Selection score; `None` for an empty candidate.
    pub score: Option<f64>,
    pub trace: Vec<String>,
    pub calls: usize,
    pub steps: usize,
    pub finish_reason: Option<FinishReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleOutcome {
    pub text: String,
    /// Index of the winning prompt; `None` when every candidate was empty.
    pub winner: Option<usize>,
    pub candidates: Vec<EnsembleCandidate>,
}

impl EnsembleOutcome {
    pub fn all_empty(&self) -> bool {
        self.winner.is_none()
    }
}

/// Translates `source` with every prompt and keeps the candidate scoring
/// highest against the source. Ties go to the lower prompt index.
pub fn translate_ensemble(
    ensemble: &PromptEnsemble,
    source: &str,
    backend: &dyn InfillBackend,
    scorer: &Scorer,
    config: &SapConfig,
) -> Result<EnsembleOutcome> {
    if ensemble.is_empty() {
        return Err(Error::invalid("ensemble", "no prompts"));
    }
    let candidates: Vec<EnsembleCandidate> = ensemble
        .tasks
        .par_iter()
        .map(|task| {
            let out = sap_generate(task, source, backend, config)?;
            let score = if out.text.trim().is_empty() {
                None
            } else {
                Some(scorer.score(&out.text, source)?)
            };
            Ok(EnsembleCandidate {
                text: out.text,
                score,
                trace: out.state.accepted,
                calls: out.state.calls,
                steps: out.state.step,
                finish_reason: out.state.finish_reason,
            })
        })
        .collect::<Result<_>>()?;
    let mut winner: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        if let Some(s) = c.score {
            if winner.is_none_or(|(_, best)| s > best) {
                winner = Some((i, s));
            }
        }
    }
    if winner.is_none() {
        log::warn!("every ensemble candidate was empty for source {source:?}");
    }
    Ok(EnsembleOutcome {
        text: winner.map(|(i, _)| candidates[i].text.clone()).unwrap_or_default(),
        winner: winner.map(|(i, _)| i),
        candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::{Example, LangTag};

    fn pool(n: usize) -> Vec<ScoredExample> {
        let es = LangTag::from_code("es").unwrap();
        let en = LangTag::from_code("en").unwrap();
        (0..n)
            .map(|i| ScoredExample {
                example: Example::new(format!("s{i}"), format!("t{i}"), es.clone(), en.clone())
                    .unwrap(),
                score: 1.0 - i as f64 / 100.0,
                round: 1,
                pivot: None,
            })
            .collect()
    }

    #[test]
    fn eight_by_two_gives_four_prompts() {
        let e = build_ensemble(&pool(8), 8, 2, Grouping::RankConsecutive).unwrap();
        assert_eq!(e.len(), 4);
        assert_eq!(e.members, vec![vec![0, 1], vec![2, 3], vec![4, 5], vec![6, 7]]);
        assert_eq!(e.tasks[1].shots[0].source_text, "s2");
    }

    #[test]
    fn round_robin_grouping() {
        let e = build_ensemble(&pool(8), 8, 2, Grouping::RoundRobin).unwrap();
        assert_eq!(e.members, vec![vec![0, 4], vec![1, 5], vec![2, 6], vec![3, 7]]);
    }

    #[test]
    fn every_example_used_once() {
        for grouping in [Grouping::RankConsecutive, Grouping::RoundRobin] {
            let e = build_ensemble(&pool(12), 12, 3, grouping).unwrap();
            let mut all: Vec<usize> = e.members.concat();
            all.sort();
            assert_eq!(all, (0..12).collect::<Vec<_>>());
        }
    }

    #[test]
    fn degenerate_and_invalid_sizes() {
        assert_eq!(build_ensemble(&pool(8), 2, 2, Grouping::default()).unwrap().len(), 1);
        assert!(matches!(
            build_ensemble(&pool(8), 7, 2, Grouping::default()),
            Err(Error::Invalid { .. })
        ));
        assert!(matches!(
            build_ensemble(&pool(4), 8, 2, Grouping::default()),
            Err(Error::InsufficientPool { required: 8, available: 4 })
        ));
    }
}
