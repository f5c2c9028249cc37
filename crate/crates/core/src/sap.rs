//! The sequential autoregressive prompting loop.
//!
//! Each step renders the prompt with everything accepted so far, asks the
//! backend to fill the mask, and keeps only the first word of the infill.
//! The loop ends when the first word carries the stop token, when the
//! backend returns nothing, or when `max_steps` calls have been made.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::{GenerationRequest, InfillBackend};
use crate::error::{Error, Result};
use crate::prompt::{render_task_prompt, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConcatMode {
    /// Keep only the first word of each infill.
    FirstWord,
    /// Keep the whole infill (up to any stop token).
    FullGeneration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SapConfig {
    pub max_steps: usize,
    pub concat_mode: ConcatMode,
    pub repetition_min_window: usize,
    pub max_new_tokens: u32,
}

impl Default for SapConfig {
    fn default() -> Self {
        SapConfig {
            max_steps: 128,
            concat_mode: ConcatMode::FirstWord,
            repetition_min_window: 3,
            max_new_tokens: 16,
        }
    }
}

impl SapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return Err(Error::invalid("sap config", "max_steps must be >= 1"));
        }
        if self.repetition_min_window == 0 {
            return Err(Error::invalid("sap config", "repetition_min_window must be >= 1"));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::invalid("sap config", "max_new_tokens must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    StopToken,
    EmptyGeneration,
    MaxSteps,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SapState {
    /// Accepted fragments, one per completed step.
    pub accepted: Vec<String>,
    /// Completed (non-terminating) steps.
    pub step: usize,
    pub finished: bool,
    pub finish_reason: Option<FinishReason>,
    /// Backend calls made so far.
    pub calls: usize,
}

impl SapState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn partial_output(&self) -> String {
        self.accepted.join(" ")
    }

    fn finish(&mut self, reason: FinishReason) {
        self.finished = true;
        self.finish_reason = Some(reason);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SapOutput {
    pub text: String,
    pub state: SapState,
}

/// Text before the first ASCII space, after trimming leading spaces.
pub fn first_word(generation: &str) -> &str {
    let g = generation.trim_start_matches(' ');
    g.split(' ').next().unwrap_or("")
}

/// Runs one step for a single-input task.
pub fn sap_step(
    task: &TaskSpec,
    query: &str,
    state: SapState,
    backend: &dyn InfillBackend,
    config: &SapConfig,
) -> Result<SapState> {
    let fields = single_field(task, query)?;
    step_fields(task, &fields, state, backend, config)
}

/// Runs one step for any task given its input field values.
pub fn step_fields(
    task: &TaskSpec,
    fields: &BTreeMap<String, String>,
    mut state: SapState,
    backend: &dyn InfillBackend,
    config: &SapConfig,
) -> Result<SapState> {
    if state.finished {
        return Err(Error::invalid("sap state", "already finished"));
    }
    if state.step >= config.max_steps {
        return Err(Error::invalid("sap state", "step budget exhausted"));
    }
    let t = &task.template;
    let prompt = render_task_prompt(task, fields, &state.partial_output())?;
    let req = GenerationRequest::greedy(prompt, config.max_new_tokens);
    let infill = backend.generate(&req)?.infill;
    state.calls += 1;

    if infill.trim().is_empty() {
        state.finish(FinishReason::EmptyGeneration);
        return Ok(state);
    }
    let head = first_word(&infill);
    if let Some(pos) = head.find(t.stop_token.as_str()) {
        let before = clean_fragment(&head[..pos], &t.mask_token);
        if !before.is_empty() {
            state.accepted.push(before.to_string());
        }
        state.finish(FinishReason::StopToken);
        return Ok(state);
    }
    let fragment = match config.concat_mode {
        ConcatMode::FirstWord => clean_fragment(head, &t.mask_token),
        ConcatMode::FullGeneration => {
            let upto_stop = infill.split(t.stop_token.as_str()).next().unwrap_or("");
            clean_fragment(upto_stop, &t.mask_token)
        }
    };
    if fragment.is_empty() {
        state.finish(FinishReason::EmptyGeneration);
        return Ok(state);
    }
    state.accepted.push(fragment.to_string());
    state.step += 1;
    if state.step >= config.max_steps {
        state.finish(FinishReason::MaxSteps);
    }
    Ok(state)
}

// Accepted text is folded back into the prompt, so it must not carry a mask
// token or line breaks.
fn clean_fragment<'a>(text: &'a str, mask: &str) -> &'a str {
    let text = text.split(mask).next().unwrap_or("");
    text.split(['\n', '\r']).next().unwrap_or("").trim()
}

fn single_field(task: &TaskSpec, query: &str) -> Result<BTreeMap<String, String>> {
    let fields = task.template.input_fields();
    if fields.len() != 1 {
        return Err(Error::invalid(
            "task",
            format!("template declares {} input fields", fields.len()),
        ));
    }
    if query.trim().is_empty() {
        return Err(Error::invalid("query", "empty"));
    }
    let mut map = BTreeMap::new();
    map.insert(fields[0].key.clone(), query.to_string());
    Ok(map)
}

pub fn sap_generate(
    task: &TaskSpec,
    query: &str,
    backend: &dyn InfillBackend,
    config: &SapConfig,
) -> Result<SapOutput> {
    let fields = single_field(task, query)?;
    generate_fields(task, &fields, backend, config)
}

pub fn generate_fields(
    task: &TaskSpec,
    fields: &BTreeMap<String, String>,
    backend: &dyn InfillBackend,
    config: &SapConfig,
) -> Result<SapOutput> {
    config.validate()?;
    let mut state = SapState::new();
    while !state.finished {
        state = step_fields(task, fields, state, backend, config)?;
    }
    let text = strip_repetition(&state.partial_output(), config.repetition_min_window);
    Ok(SapOutput { text, state })
}

/// One raw infill call with no loop; the answer is the infill up to the
/// first stop token.
pub fn single_infill(
    task: &TaskSpec,
    fields: &BTreeMap<String, String>,
    backend: &dyn InfillBackend,
    config: &SapConfig,
) -> Result<SapOutput> {
    config.validate()?;
    let t = &task.template;
    let prompt = render_task_prompt(task, fields, "")?;
    let infill = backend
        .generate(&GenerationRequest::greedy(prompt, config.max_new_tokens))?
        .infill;
    let head = infill.split(t.stop_token.as_str()).next().unwrap_or("");
    let head = head.split(t.mask_token.as_str()).next().unwrap_or("");
    let words: Vec<&str> = head.split_whitespace().collect();
    let mut state = SapState {
        calls: 1,
        ..SapState::default()
    };
    let reason = if words.is_empty() {
        FinishReason::EmptyGeneration
    } else if infill.contains(t.stop_token.as_str()) {
        FinishReason::StopToken
    } else {
        FinishReason::MaxSteps
    };
    state.accepted = words.iter().map(|w| (*w).to_string()).collect();
    state.finish(reason);
    let text = strip_repetition(&words.join(" "), config.repetition_min_window);
    Ok(SapOutput { text, state })
}

/// Cuts the text after the first immediately repeated block of at least
/// `min_window` whitespace tokens, keeping one copy of the block.
///
/// Among all repeats `tokens[i..i+w] == tokens[i+w..i+2w]` with
/// `w >= min_window`, the one whose second copy ends earliest is used (ties
/// go to the smaller window). Cutting at the earliest completed repeat makes
/// the operation idempotent. Text without a repeat is returned unchanged.
pub fn strip_repetition(text: &str, min_window: usize) -> String {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let min_window = min_window.max(1);
    let n = tokens.len();
    for end in (2 * min_window)..=n {
        let mut w = min_window;
        while 2 * w <= end {
            let i = end - 2 * w;
            if tokens[i..i + w] == tokens[i + w..end] {
                return tokens[..i + w].join(" ");
            }
            w += 1;
        }
    }
    text.to_string()
}
