//! Tasks, demonstrations, and prompt rendering.
//!
//! A rendered prompt is the instruction line, one block per demonstration,
//! the query block, and a final target line that ends in exactly one mask
//! token:
//!
//! ```text
//! Translate Spanish to English.
//! Spanish: El clima es soleado.</s>
//! English: The weather is sunny.</s>
//! Spanish: Los árboles son importantes.</s>
//! English: <X>
//! ```
//!
//! Every line of a demonstration and every query field line ends with the
//! stop token, which is what teaches the model to emit it when the answer is
//! complete. The partial output accumulated by the decoding loop is placed
//! between the final label and the mask.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MASK_TOKEN: &str = "<X>";
pub const DEFAULT_STOP_TOKEN: &str = "</s>";

/// Field key used by translation templates for the source sentence.
pub const SOURCE_FIELD: &str = "source";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LangTag {
    pub code: String,
    pub display_name: String,
}

const KNOWN_LANGUAGES: &[(&str, &str)] = &[
    ("ar", "Arabic"),
    ("bg", "Bulgarian"),
    ("ca", "Catalan"),
    ("de", "German"),
    ("en", "English"),
    ("es", "Spanish"),
    ("fi", "Finnish"),
    ("fr", "French"),
    ("hi", "Hindi"),
    ("ko", "Korean"),
    ("my", "Malayalam"),
    ("ru", "Russian"),
    ("sw", "Swahili"),
    ("ta", "Tamil"),
    ("zh", "Chinese"),
];

impl LangTag {
    pub fn new(code: impl Into<String>, display_name: impl Into<String>) -> Result<Self> {
        let tag = LangTag {
            code: code.into(),
            display_name: display_name.into(),
        };
        tag.validate()?;
        Ok(tag)
    }

    /// Looks up a display name for a common language code.
    pub fn from_code(code: &str) -> Result<Self> {
        KNOWN_LANGUAGES
            .iter()
            .find(|(c, _)| *c == code)
            .map(|(c, name)| LangTag {
                code: (*c).to_string(),
                display_name: (*name).to_string(),
            })
            .ok_or_else(|| Error::invalid("language", format!("unknown code {code:?}")))
    }

    pub fn validate(&self) -> Result<()> {
        let code_ok = !self.code.is_empty()
            && self.code.chars().count() <= 8
            && self.code.chars().all(|c| !c.is_uppercase() && !c.is_whitespace());
        if !code_ok {
            return Err(Error::invalid(
                "language code",
                format!("{:?} must be non-empty, lowercase, at most 8 characters", self.code),
            ));
        }
        if self.display_name.trim().is_empty() {
            return Err(Error::invalid("language display name", "empty"));
        }
        Ok(())
    }
}

impl std::fmt::Display for LangTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.code)
    }
}

/// One parallel pair used as an in-context demonstration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub source_text: String,
    pub target_text: String,
    pub source_lang: LangTag,
    pub target_lang: LangTag,
}

impl Example {
    pub fn new(
        source_text: impl Into<String>,
        target_text: impl Into<String>,
        source_lang: LangTag,
        target_lang: LangTag,
    ) -> Result<Self> {
        let e = Example {
            source_text: source_text.into(),
            target_text: target_text.into(),
            source_lang,
            target_lang,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        if self.source_text.trim().is_empty() || self.target_text.trim().is_empty() {
            return Err(Error::invalid("example", "source and target text must be non-empty"));
        }
        if self.source_lang == self.target_lang {
            return Err(Error::invalid(
                "example",
                format!("source and target language are both {}", self.source_lang),
            ));
        }
        Ok(())
    }

    /// Swaps texts and language tags.
    pub fn reversed(&self) -> Example {
        reverse_example(self.clone())
    }
}

pub fn reverse_example(e: Example) -> Example {
    Example {
        source_text: e.target_text,
        target_text: e.source_text,
        source_lang: e.target_lang,
        target_lang: e.source_lang,
    }
}

/// A labelled input line of a template.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateField {
    pub key: String,
    pub label: String,
}

impl TemplateField {
    pub fn new(key: &str, label: &str) -> Self {
        TemplateField {
            key: key.to_string(),
            label: label.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplate {
    pub instruction: String,
    pub source_label: String,
    pub target_label: String,
    pub mask_token: String,
    pub stop_token: String,
    pub example_separator: String,
    /// Input lines for multi-field tasks. Empty means a single
    /// [`SOURCE_FIELD`] line labelled with `source_label`.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<TemplateField>,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            instruction: String::new(),
            source_label: "Source:".to_string(),
            target_label: "Target:".to_string(),
            mask_token: DEFAULT_MASK_TOKEN.to_string(),
            stop_token: DEFAULT_STOP_TOKEN.to_string(),
            example_separator: "\n".to_string(),
            fields: Vec::new(),
        }
    }
}

impl PromptTemplate {
    pub fn translation(source: &LangTag, target: &LangTag) -> Self {
        PromptTemplate {
            instruction: format!(
                "Translate {} to {}.",
                source.display_name, target.display_name
            ),
            source_label: format!("{}:", source.display_name),
            target_label: format!("{}:", target.display_name),
            ..PromptTemplate::default()
        }
    }

    pub fn question_answering() -> Self {
        PromptTemplate {
            instruction: "Answer the question using the context.".to_string(),
            source_label: "Question:".to_string(),
            target_label: "Answer:".to_string(),
            fields: vec![
                TemplateField::new("context", "Context:"),
                TemplateField::new("question", "Question:"),
            ],
            ..PromptTemplate::default()
        }
    }

    pub fn summarization() -> Self {
        PromptTemplate {
            instruction: "Summarize the article.".to_string(),
            source_label: "Article:".to_string(),
            target_label: "Summary:".to_string(),
            fields: vec![TemplateField::new("article", "Article:")],
            ..PromptTemplate::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let t: PromptTemplate =
            toml::from_str(text).map_err(|e| Error::format("prompt template", e))?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn input_fields(&self) -> Vec<TemplateField> {
        if self.fields.is_empty() {
            vec![TemplateField::new(SOURCE_FIELD, &self.source_label)]
        } else {
            self.fields.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mask_token.is_empty() || self.stop_token.is_empty() {
            return Err(Error::invalid("template", "mask and stop tokens must be non-empty"));
        }
        if self.mask_token == self.stop_token {
            return Err(Error::invalid("template", "mask and stop tokens must differ"));
        }
        if self.example_separator.is_empty() {
            return Err(Error::invalid("template", "example separator is empty"));
        }
        let mut texts = vec![&self.instruction, &self.source_label, &self.target_label];
        texts.extend(self.fields.iter().map(|f| &f.label));
        for text in texts {
            for token in [&self.mask_token, &self.stop_token] {
                if text.contains(token.as_str()) {
                    return Err(Error::invalid(
                        "template",
                        format!("{text:?} contains reserved token {token:?}"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Errors when `text` contains the mask or stop token.
    pub fn check_clean(&self, text: &str) -> Result<()> {
        for token in [&self.mask_token, &self.stop_token] {
            if text.contains(token.as_str()) {
                return Err(Error::ReservedToken {
                    token: token.clone(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Translation,
    QuestionAnswering,
    Summarization,
}

/// A demonstration for multi-field tasks (question answering, summarization).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldShot {
    pub fields: BTreeMap<String, String>,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub template: PromptTemplate,
    /// Translation demonstrations.
    #[serde(default)]
    pub shots: Vec<Example>,
    /// Demonstrations for the other task kinds.
    #[serde(default)]
    pub field_shots: Vec<FieldShot>,
}

impl TaskSpec {
    /// A translation task; `shots` may be empty for a zero-shot prompt.
    pub fn translation(source: &LangTag, target: &LangTag, shots: Vec<Example>) -> Result<Self> {
        let task = TaskSpec {
            kind: TaskKind::Translation,
            template: PromptTemplate::translation(source, target),
            shots,
            field_shots: Vec::new(),
        };
        task.validate()?;
        Ok(task)
    }

    pub fn with_field_shots(
        kind: TaskKind,
        template: PromptTemplate,
        field_shots: Vec<FieldShot>,
    ) -> Result<Self> {
        let task = TaskSpec {
            kind,
            template,
            shots: Vec::new(),
            field_shots,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn shot_count(&self) -> usize {
        self.shots.len() + self.field_shots.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.template.validate()?;
        if let Some(first) = self.shots.first() {
            for shot in &self.shots {
                shot.validate()?;
                if shot.source_lang != first.source_lang || shot.target_lang != first.target_lang {
                    return Err(Error::invalid(
                        "task",
                        "translation shots must share one language direction",
                    ));
                }
            }
        }
        if !self.shots.is_empty() && !self.field_shots.is_empty() {
            return Err(Error::invalid("task", "mixes translation and field shots"));
        }
        for shot in &self.shots {
            self.template.check_clean(&shot.source_text)?;
            self.template.check_clean(&shot.target_text)?;
        }
        for shot in &self.field_shots {
            shot.fields.values().try_for_each(|v| self.template.check_clean(v))?;
            self.template.check_clean(&shot.output)?;
        }
        Ok(())
    }

    /// Demonstrations as (field values, output) pairs in prompt order.
    fn demonstrations(&self) -> Vec<(BTreeMap<String, String>, &str)> {
        let mut out = Vec::with_capacity(self.shot_count());
        for shot in &self.shots {
            let mut fields = BTreeMap::new();
            fields.insert(SOURCE_FIELD.to_string(), shot.source_text.clone());
            out.push((fields, shot.target_text.as_str()));
        }
        for shot in &self.field_shots {
            out.push((shot.fields.clone(), shot.output.as_str()));
        }
        out
    }
}

/// Renders the single-input prompt for `query` with `partial_output` placed
/// before the mask.
pub fn render_prompt(task: &TaskSpec, query: &str, partial_output: &str) -> Result<String> {
    let fields = task.template.input_fields();
    if fields.len() != 1 {
        return Err(Error::invalid(
            "task",
            format!("template declares {} input fields; use render_task_prompt", fields.len()),
        ));
    }
    if query.trim().is_empty() {
        return Err(Error::invalid("query", "empty"));
    }
    let mut values = BTreeMap::new();
    values.insert(fields[0].key.clone(), query.to_string());
    render_task_prompt(task, &values, partial_output)
}

pub fn render_task_prompt(
    task: &TaskSpec,
    values: &BTreeMap<String, String>,
    partial_output: &str,
) -> Result<String> {
    let t = &task.template;
    let fields = t.input_fields();
    for field in &fields {
        match values.get(&field.key) {
            Some(v) => t.check_clean(v)?,
            None => return Err(Error::MissingField(field.key.clone())),
        }
    }
    t.check_clean(partial_output)?;

    let sep = &t.example_separator;
    let mut out = String::new();
    if !t.instruction.is_empty() {
        out.push_str(&t.instruction);
        out.push_str(sep);
    }
    for (shot_values, output) in task.demonstrations() {
        for field in &fields {
            let value = shot_values
                .get(&field.key)
                .ok_or_else(|| Error::MissingField(field.key.clone()))?;
            push_line(&mut out, &field.label, value, &t.stop_token, sep);
        }
        push_line(&mut out, &t.target_label, output, &t.stop_token, sep);
    }
    for field in &fields {
        push_line(&mut out, &field.label, &values[&field.key], &t.stop_token, sep);
    }
    out.push_str(&t.target_label);
    out.push(' ');
    if !partial_output.is_empty() {
        out.push_str(partial_output);
        out.push(' ');
    }
    out.push_str(&t.mask_token);
    Ok(out)
}

fn push_line(out: &mut String, label: &str, value: &str, stop: &str, sep: &str) {
    out.push_str(label);
    out.push(' ');
    out.push_str(value);
    out.push_str(stop);
    out.push_str(sep);
}
