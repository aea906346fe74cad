//! Grammar documents, language metadata and paragraph chunking.
//!
//! A corpus directory looks like
//!
//! ```text
//! <root>/metadata.json
//! <root>/texts/<doc_id>.txt
//! ```
//!
//! where `metadata.json` is a JSON array of [`ManifestEntry`] objects.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The six macroareas used for sampling stratification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String")]
pub enum Macroarea {
    Africa,
    Australia,
    Eurasia,
    #[serde(rename = "North America")]
    NorthAmerica,
    Papunesia,
    #[serde(rename = "South America")]
    SouthAmerica,
}

impl Macroarea {
    pub const ALL: [Macroarea; 6] = [
        Macroarea::Africa,
        Macroarea::Australia,
        Macroarea::Eurasia,
        Macroarea::NorthAmerica,
        Macroarea::Papunesia,
        Macroarea::SouthAmerica,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Macroarea::Africa => "Africa",
            Macroarea::Australia => "Australia",
            Macroarea::Eurasia => "Eurasia",
            Macroarea::NorthAmerica => "North America",
            Macroarea::Papunesia => "Papunesia",
            Macroarea::SouthAmerica => "South America",
        }
    }
}

impl fmt::Display for Macroarea {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown macroarea {0:?}")]
pub struct UnknownMacroarea(pub String);

impl FromStr for Macroarea {
    type Err = UnknownMacroarea;

    /// Accepts the display names as well as squashed forms such as
    /// `NorthAmerica` or `north_america`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let squashed: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        Macroarea::ALL
            .into_iter()
            .find(|m| m.as_str().replace(' ', "").to_lowercase() == squashed)
            .ok_or_else(|| UnknownMacroarea(s.to_string()))
    }
}

impl TryFrom<String> for Macroarea {
    type Error = UnknownMacroarea;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageMeta {
    pub language_name: String,
    pub glottocode: Option<String>,
    pub family: String,
    pub genus: String,
    pub macroarea: Macroarea,
}

/// Returns true for codes shaped like `abcd1234`.
pub fn is_valid_glottocode(code: &str) -> bool {
    let bytes = code.as_bytes();
    bytes.len() == 8
        && bytes[..4].iter().all(u8::is_ascii_lowercase)
        && bytes[4..].iter().all(u8::is_ascii_digit)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrammarDoc {
    pub doc_id: String,
    pub meta: LanguageMeta,
    pub raw_text: String,
}

/// One chunk of a grammar; the unit of retrieval and reranking.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Paragraph {
    pub doc_id: String,
    pub index: usize,
    pub text: String,
}

/// One object of `metadata.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub doc_id: String,
    pub language_name: String,
    pub glottocode: Option<String>,
    pub family: String,
    pub genus: String,
    pub macroarea: Macroarea,
}

impl ManifestEntry {
    fn into_meta(self) -> (String, LanguageMeta) {
        (
            self.doc_id,
            LanguageMeta {
                language_name: self.language_name,
                glottocode: self.glottocode,
                family: self.family,
                genus: self.genus,
                macroarea: self.macroarea,
            },
        )
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read manifest {path}: {source}")]
    ManifestIo {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {source}")]
    ManifestFormat {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("duplicate doc_id {0:?} in manifest")]
    DuplicateDocId(String),
    #[error("doc {doc_id}: invalid glottocode {code:?}")]
    BadGlottocode { doc_id: String, code: String },
    #[error("doc {doc_id}: cannot read {path}: {source}")]
    TextIo {
        doc_id: String,
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("doc {doc_id}: text is not valid UTF-8")]
    InvalidUtf8 { doc_id: String },
    #[error("doc {doc_id}: text is empty")]
    EmptyText { doc_id: String },
}

pub const MANIFEST_FILE: &str = "metadata.json";
pub const TEXTS_DIR: &str = "texts";

pub fn read_manifest(root: &Path) -> Result<Vec<ManifestEntry>, CorpusError> {
    let path = root.join(MANIFEST_FILE);
    let bytes = std::fs::read(&path).map_err(|source| CorpusError::ManifestIo {
        path: path.clone(),
        source,
    })?;
    let entries: Vec<ManifestEntry> = serde_json::from_slice(&bytes)
        .map_err(|source| CorpusError::ManifestFormat { path, source })?;
    let mut seen = HashSet::new();
    for e in &entries {
        if !seen.insert(e.doc_id.as_str()) {
            return Err(CorpusError::DuplicateDocId(e.doc_id.clone()));
        }
        if let Some(code) = &e.glottocode {
            if !is_valid_glottocode(code) {
                return Err(CorpusError::BadGlottocode {
                    doc_id: e.doc_id.clone(),
                    code: code.clone(),
                });
            }
        }
    }
    Ok(entries)
}

/// Loads every manifest entry with its text, in manifest order.
pub fn load_corpus(root: &Path) -> Result<Vec<GrammarDoc>, CorpusError> {
    read_manifest(root)?
        .into_iter()
        .map(|entry| {
            let (doc_id, meta) = entry.into_meta();
            let path = root.join(TEXTS_DIR).join(format!("{doc_id}.txt"));
            let bytes = std::fs::read(&path).map_err(|source| CorpusError::TextIo {
                doc_id: doc_id.clone(),
                path,
                source,
            })?;
            let raw_text = String::from_utf8(bytes).map_err(|_| CorpusError::InvalidUtf8 {
                doc_id: doc_id.clone(),
            })?;
            if raw_text.is_empty() {
                return Err(CorpusError::EmptyText { doc_id });
            }
            Ok(GrammarDoc {
                doc_id,
                meta,
                raw_text,
            })
        })
        .collect()
}

// A blank line is a line holding nothing but spaces, tabs, CR or form feeds.
fn boundary() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\n(?:[ \t\r\x0C]*\n)+").expect("static regex"))
}

/// Splits raw text on blank lines; chunks are trimmed and empty ones dropped.
pub fn split_text(doc_id: &str, text: &str) -> Vec<Paragraph> {
    boundary()
        .split(text)
        .map(str::trim)
        .filter(|chunk| !chunk.is_empty())
        .enumerate()
        .map(|(index, chunk)| Paragraph {
            doc_id: doc_id.to_string(),
            index,
            text: chunk.to_string(),
        })
        .collect()
}

pub fn split_paragraphs(doc: &GrammarDoc) -> Vec<Paragraph> {
    split_text(&doc.doc_id, &doc.raw_text)
}
