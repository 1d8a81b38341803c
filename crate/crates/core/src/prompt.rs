//! Prompt rendering for inference and fine-tuning data, and completion
//! parsing.
//!
//! The four templates live in `templates/` as newline-exact text assets. Each
//! is pinned by SHA-256; a modified asset fails to load rather than silently
//! changing what the model sees.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use once_cell::sync::Lazy;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::RetrievedContext;

pub const CORRECTION_MARKER: &str = "### Correction:\n";
pub const TERMINATOR: &str = "###";
const QUERY_MARKER: &str = "### Query:\n";
const CONTEXT_MARKER: &str = "### Context:\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptVariant {
    ZeroShotInfer,
    RagInfer,
    BasicFtTrain,
    ContextualFtTrain,
}

impl PromptVariant {
    pub const ALL: [PromptVariant; 4] = [Self::ZeroShotInfer, Self::RagInfer, Self::BasicFtTrain, Self::ContextualFtTrain];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::ZeroShotInfer => "zero_shot_infer",
            Self::RagInfer => "rag_infer",
            Self::BasicFtTrain => "basic_ft_train",
            Self::ContextualFtTrain => "contextual_ft_train",
        }
    }

    pub fn asset_file(&self) -> String {
        format!("{}.txt", self.as_str())
    }

    pub fn is_training(&self) -> bool {
        matches!(self, Self::BasicFtTrain | Self::ContextualFtTrain)
    }

    pub fn uses_context(&self) -> bool {
        matches!(self, Self::RagInfer | Self::ContextualFtTrain)
    }

    /// SHA-256 of the expected asset bytes.
    pub fn pinned_digest(&self) -> &'static str {
        match self {
            Self::ZeroShotInfer => "3fa9be3ee2170b985ca8626ef6dd71d74490f6bace93e143067b30a85b1d7325",
            Self::RagInfer => "e1f843e3660ccf27d1ca987717a23407a23c28a16d2da817e458a44ef2de681b",
            Self::BasicFtTrain => "b5cc190a61fb40e986416117c698b97f21cce1280acd0556dde6b74d851f13e5",
            Self::ContextualFtTrain => "91d94a0ac0d936860dd37524c4c8f70ba4a317409cc5920ef0f7e311521372c9",
        }
    }

    fn builtin_source(&self) -> &'static str {
        match self {
            Self::ZeroShotInfer => include_str!("../templates/zero_shot_infer.txt"),
            Self::RagInfer => include_str!("../templates/rag_infer.txt"),
            Self::BasicFtTrain => include_str!("../templates/basic_ft_train.txt"),
            Self::ContextualFtTrain => include_str!("../templates/contextual_ft_train.txt"),
        }
    }
}

impl fmt::Display for PromptVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|v| v.as_str() == s).ok_or_else(|| format!("unknown prompt variant `{s}`"))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("template {variant} does not match its pinned digest (got {actual})")]
    TemplateMismatch { variant: PromptVariant, actual: String },
    #[error("template {variant}: {message}")]
    TemplateSyntax { variant: PromptVariant, message: String },
    #[error("failed to read template {path}: {message}")]
    Io { path: String, message: String },
    #[error("{0} is not a training variant")]
    NotTraining(PromptVariant),
    #[error("contextual training examples require a context")]
    MissingContext,
    #[error("basic training examples must not carry a context")]
    UnexpectedContext,
    #[error("model returned an empty completion")]
    EmptyCompletion,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub variant: PromptVariant,
    pub char_length: usize,
}

impl RenderedPrompt {
    fn new(text: String, variant: PromptVariant) -> Self {
        let char_length = text.chars().count();
        Self { text, variant, char_length }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Context,
    Input,
    Label,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Slot(Slot),
}

#[derive(Debug, Clone)]
struct Template {
    segments: Vec<Segment>,
}

impl Template {
    fn parse(variant: PromptVariant, source: &str) -> Result<Self, PromptError> {
        let mut segments = Vec::new();
        let mut rest = source;
        while let Some(open) = rest.find('{') {
            let close = rest[open..].find('}').map(|c| open + c).ok_or_else(|| PromptError::TemplateSyntax {
                variant,
                message: "unterminated placeholder".into(),
            })?;
            if open > 0 {
                segments.push(Segment::Literal(rest[..open].to_owned()));
            }
            let slot = match &rest[open + 1..close] {
                "context" => Slot::Context,
                "input" => Slot::Input,
                "label" => Slot::Label,
                other => {
                    return Err(PromptError::TemplateSyntax { variant, message: format!("unknown placeholder `{other}`") })
                }
            };
            segments.push(Segment::Slot(slot));
            rest = &rest[close + 1..];
        }
        if !rest.is_empty() {
            segments.push(Segment::Literal(rest.to_owned()));
        }

        let count = |s: Slot| segments.iter().filter(|seg| **seg == Segment::Slot(s)).count();
        let expect = |s: Slot, n: usize| -> Result<(), PromptError> {
            if count(s) == n {
                Ok(())
            } else {
                Err(PromptError::TemplateSyntax { variant, message: format!("expected {n} {s:?} placeholder(s)") })
            }
        };
        expect(Slot::Input, 1)?;
        expect(Slot::Context, usize::from(variant.uses_context()))?;
        expect(Slot::Label, usize::from(variant.is_training()))?;
        Ok(Self { segments })
    }

    fn render(&self, context: &str, input: &str, label: &str) -> String {
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Literal(s) => out.push_str(s),
                Segment::Slot(Slot::Context) => out.push_str(context),
                Segment::Slot(Slot::Input) => out.push_str(input),
                Segment::Slot(Slot::Label) => out.push_str(label),
            }
        }
        out
    }
}

/// The four prompt templates, verified against their pinned digests.
#[derive(Debug, Clone)]
pub struct PromptTemplates {
    templates: [Template; 4],
}

fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn slot(variant: PromptVariant) -> usize {
    PromptVariant::ALL.iter().position(|v| *v == variant).expect("variant listed")
}

static BUILTIN: Lazy<PromptTemplates> =
    Lazy::new(|| PromptTemplates::from_sources(|v| Ok(v.builtin_source().to_owned())).expect("built-in templates are valid"));

impl PromptTemplates {
    /// Templates compiled into the binary.
    pub fn builtin() -> &'static PromptTemplates {
        &BUILTIN
    }

    /// Loads `<variant>.txt` for every variant from `dir`.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self, PromptError> {
        let dir = dir.as_ref();
        Self::from_sources(|v| {
            let path = dir.join(v.asset_file());
            fs::read_to_string(&path)
                .map_err(|e| PromptError::Io { path: path.display().to_string(), message: e.to_string() })
        })
    }

    fn from_sources(load: impl Fn(PromptVariant) -> Result<String, PromptError>) -> Result<Self, PromptError> {
        let mut parsed = Vec::with_capacity(4);
        for variant in PromptVariant::ALL {
            let source = load(variant)?;
            let actual = digest_hex(source.as_bytes());
            if actual != variant.pinned_digest() {
                return Err(PromptError::TemplateMismatch { variant, actual });
            }
            parsed.push(Template::parse(variant, &source)?);
        }
        let templates: [Template; 4] = parsed.try_into().expect("four templates");
        Ok(Self { templates })
    }

    fn get(&self, variant: PromptVariant) -> &Template {
        &self.templates[slot(variant)]
    }

    pub fn render_rag(&self, query: &str, context: &RetrievedContext) -> RenderedPrompt {
        self.render_rag_rendered(query, &context.rendered)
    }

    /// RAG prompt from an already-rendered context string.
    pub fn render_rag_rendered(&self, query: &str, rendered_context: &str) -> RenderedPrompt {
        let text = self.get(PromptVariant::RagInfer).render(rendered_context, query, "");
        RenderedPrompt::new(text, PromptVariant::RagInfer)
    }

    pub fn render_zero_shot(&self, query: &str) -> RenderedPrompt {
        let text = self.get(PromptVariant::ZeroShotInfer).render("", query, "");
        RenderedPrompt::new(text, PromptVariant::ZeroShotInfer)
    }

    /// Renders a fine-tuning string. `context` is the rendered context field
    /// and must be present exactly for the contextual variant.
    pub fn render_training(
        &self,
        variant: PromptVariant,
        query: &str,
        context: Option<&str>,
        label: &str,
    ) -> Result<String, PromptError> {
        match (variant, context) {
            (PromptVariant::BasicFtTrain, Some(_)) => Err(PromptError::UnexpectedContext),
            (PromptVariant::ContextualFtTrain, None) => Err(PromptError::MissingContext),
            (PromptVariant::BasicFtTrain | PromptVariant::ContextualFtTrain, ctx) => {
                Ok(self.get(variant).render(ctx.unwrap_or(""), query, label))
            }
            (other, _) => Err(PromptError::NotTraining(other)),
        }
    }
}

pub fn render_rag_prompt(query: &str, context: &RetrievedContext) -> RenderedPrompt {
    PromptTemplates::builtin().render_rag(query, context)
}

pub fn render_zero_shot_prompt(query: &str) -> RenderedPrompt {
    PromptTemplates::builtin().render_zero_shot(query)
}

pub fn render_training_example(
    variant: PromptVariant,
    query: &str,
    context: Option<&str>,
    label: &str,
) -> Result<String, PromptError> {
    PromptTemplates::builtin().render_training(variant, query, context, label)
}

/// Text up to the first `###` (or the end), trimmed, first line only. No
/// other cleanup is applied.
pub fn parse_completion(raw: &str) -> Result<String, PromptError> {
    let head = raw.find(TERMINATOR).map_or(raw, |i| &raw[..i]);
    let line = head.trim().lines().next().unwrap_or("").trim_end();
    if line.is_empty() {
        Err(PromptError::EmptyCompletion)
    } else {
        Ok(line.to_owned())
    }
}

/// Label of a rendered training string: the text between the correction
/// marker and the final `\n###`.
pub fn extract_label(training: &str) -> Option<&str> {
    let start = training.rfind(CORRECTION_MARKER)? + CORRECTION_MARKER.len();
    let body = training.strip_suffix("\n###")?;
    body.get(start..)
}

/// Query and (for RAG prompts) context fields recovered from a rendered
/// inference prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptFields<'a> {
    pub query: &'a str,
    pub context: Option<&'a str>,
}

pub fn extract_fields(prompt: &str) -> Option<PromptFields<'_>> {
    let q_start = prompt.find(QUERY_MARKER)? + QUERY_MARKER.len();
    let q_len = prompt[q_start..].find(&format!("\n{CORRECTION_MARKER}"))?;
    let query = &prompt[q_start..q_start + q_len];
    let context = prompt[..q_start].find(CONTEXT_MARKER).map(|c| {
        let start = c + CONTEXT_MARKER.len();
        let end = q_start - QUERY_MARKER.len();
        // An empty context renders as "### Context:\n\n### Query:".
        prompt.get(start..end.saturating_sub(1).max(start)).unwrap_or("")
    });
    Some(PromptFields { query, context })
}
