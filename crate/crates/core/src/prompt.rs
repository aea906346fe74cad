//! Prompt assembly.
//!
//! Sections are joined by blank lines in a fixed order: wiki summary, task
//! prompt, guidelines (CoT), numbered evidence paragraphs.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::features::{FeatureId, FeatureSpec};
use crate::retrieval::ScoredList;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PromptMode {
    Baseline,
    Rag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub mode: PromptMode,
    pub use_cot: bool,
    pub include_wiki: bool,
}

impl PromptConfig {
    pub fn baseline() -> Self {
        Self {
            mode: PromptMode::Baseline,
            use_cot: false,
            include_wiki: true,
        }
    }

    pub fn rag(use_cot: bool) -> Self {
        Self {
            mode: PromptMode::Rag,
            use_cot,
            include_wiki: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssembledPrompt {
    pub text: String,
    pub n_paragraphs: usize,
    pub feature_id: FeatureId,
    pub char_count: usize,
}

impl AssembledPrompt {
    /// Hex SHA-256 of the prompt text.
    pub fn hash(&self) -> String {
        prompt_hash(&self.text)
    }
}

pub fn prompt_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("baseline prompts take no paragraphs (got {0})")]
    ParagraphsInBaseline(usize),
    #[error("RAG prompts need at least one paragraph")]
    NoParagraphs,
    #[error("language name is empty")]
    EmptyLanguage,
}

pub fn assemble(
    spec: &FeatureSpec,
    language_name: &str,
    paragraphs: Option<&ScoredList>,
    config: PromptConfig,
) -> Result<AssembledPrompt, PromptError> {
    if language_name.trim().is_empty() {
        return Err(PromptError::EmptyLanguage);
    }
    let n = paragraphs.map_or(0, ScoredList::len);
    match config.mode {
        PromptMode::Baseline if n > 0 => return Err(PromptError::ParagraphsInBaseline(n)),
        PromptMode::Rag if n == 0 => return Err(PromptError::NoParagraphs),
        _ => {}
    }

    let mut sections: Vec<String> = Vec::new();
    if config.include_wiki && !spec.wiki_summary.is_empty() {
        sections.push(spec.wiki_summary.clone());
    }
    sections.push(spec.base_prompt(language_name));
    if config.use_cot && !spec.cot_text.is_empty() {
        sections.push(spec.cot_text.clone());
    }
    if let Some(list) = paragraphs {
        for (i, p) in list.paragraphs().enumerate() {
            sections.push(format!("Paragraph {}:\n{}", i + 1, p.text.trim_end()));
        }
    }

    let text = sections.join("\n\n");
    Ok(AssembledPrompt {
        char_count: text.chars().count(),
        text,
        n_paragraphs: n,
        feature_id: spec.feature_id,
    })
}
