//! Prompt construction for the three training stages and chat inference.
//!
//! The template strings here are normative: golden tests pin them byte for
//! byte, and the checkpoint pipeline depends on every training string
//! starting with `<|begin_of_text|>` and ending with `<|eot_id|>`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{BEGIN_OF_TEXT, END_HEADER, EOT, START_HEADER};

/// Role markers scrubbed from instruction records at ingest.
pub const ROLE_MARKERS: [&str; 2] = ["<< human >>:", "<< assistant >>:"];

/// One instruction-tuning record: system context, task, optional input,
/// reference output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftRecord {
    pub system: String,
    pub instruction: String,
    #[serde(default)]
    pub input: String,
    pub output: String,
}

impl SftRecord {
    /// Apply [`strip_role_markers`] to every field.
    pub fn normalized(&self) -> Self {
        Self {
            system: strip_role_markers(&self.system),
            instruction: strip_role_markers(&self.instruction),
            input: strip_role_markers(&self.input),
            output: strip_role_markers(&self.output),
        }
    }

    fn contains_role_markers(&self) -> bool {
        [&self.system, &self.instruction, &self.input, &self.output]
            .iter()
            .any(|f| ROLE_MARKERS.iter().any(|m| f.contains(m)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    fn label(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }
}

/// A raw-corpus document for the language-adaptation stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDoc {
    pub text: String,
    #[serde(default)]
    pub language: String,
}

/// Delete every `<< human >>:` / `<< assistant >>:` marker, collapsing the
/// whitespace around each deletion to a single space and trimming the ends.
/// Idempotent.
pub fn strip_role_markers(text: &str) -> String {
    let mut segments = vec![text];
    for marker in ROLE_MARKERS {
        segments = segments
            .into_iter()
            .flat_map(|seg| seg.split(marker))
            .collect();
    }
    if segments.len() == 1 {
        return text.trim().to_string();
    }
    segments
        .iter()
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Instruction-template body parts for one record: everything up to and
/// including the response header, and the supervised remainder. Their
/// concatenation is exactly [`format_alpaca`].
pub fn format_alpaca_parts(r: &SftRecord) -> Result<(String, String)> {
    if r.instruction.is_empty() {
        return Err(Error::InvalidData("record instruction is empty".into()));
    }
    if r.output.is_empty() {
        return Err(Error::InvalidData("record output is empty".into()));
    }
    if r.contains_role_markers() {
        return Err(Error::InvalidData(
            "record contains role markers; normalize it first".into(),
        ));
    }
    let mut prompt = String::new();
    prompt.push_str(BEGIN_OF_TEXT);
    prompt.push_str(&r.system);
    prompt.push_str("\n\n### Instruction:\n");
    prompt.push_str(&r.instruction);
    if !r.input.is_empty() {
        prompt.push_str("\n\n### Input:\n");
        prompt.push_str(&r.input);
    }
    prompt.push_str("\n\n### Response:\n");
    let response = format!("{}{}", r.output, EOT);
    Ok((prompt, response))
}

/// Render a record with the pinned instruction template, wrapped in
/// `<|begin_of_text|>` ... `<|eot_id|>`. The `### Input:` block is omitted
/// when the input field is empty.
pub fn format_alpaca(r: &SftRecord) -> Result<String> {
    let (prompt, response) = format_alpaca_parts(r)?;
    Ok(format!("{prompt}{response}"))
}

/// Render a chat transcript with header-token framing:
/// `<|start_header_id|>role<|end_header_id|>\n{content}<|eot_id|>` per
/// message, after a single `<|begin_of_text|>`. With
/// `add_generation_prompt`, an open assistant header is appended.
pub fn format_chat(messages: &[ChatMessage], add_generation_prompt: bool) -> Result<String> {
    validate_role_order(messages)?;
    let mut out = String::from(BEGIN_OF_TEXT);
    for m in messages {
        out.push_str(START_HEADER);
        out.push_str(m.role.label());
        out.push_str(END_HEADER);
        out.push('\n');
        out.push_str(&m.content);
        out.push_str(EOT);
    }
    if add_generation_prompt {
        out.push_str(START_HEADER);
        out.push_str("assistant");
        out.push_str(END_HEADER);
        out.push('\n');
    }
    Ok(out)
}

fn validate_role_order(messages: &[ChatMessage]) -> Result<()> {
    let mut expect_user = true;
    for (i, m) in messages.iter().enumerate() {
        match m.role {
            Role::System if i == 0 => {}
            Role::System => {
                return Err(Error::InvalidData(format!(
                    "system message only allowed at position 0, found at {i}"
                )))
            }
            Role::User | Role::Assistant => {
                let is_user = m.role == Role::User;
                if is_user != expect_user {
                    return Err(Error::InvalidData(format!(
                        "roles must alternate user/assistant; message {i} is {}",
                        m.role.label()
                    )));
                }
                expect_user = !expect_user;
            }
        }
    }
    Ok(())
}

/// Wrap one raw document for continued pretraining. The single spaces
/// around the text are part of the format.
pub fn format_raw(d: &RawDoc) -> Result<String> {
    if d.text.trim().is_empty() {
        return Err(Error::InvalidData("raw document text is empty".into()));
    }
    Ok(format!("{BEGIN_OF_TEXT} {} {EOT}", d.text))
}
