//! The four benchmark features and the parsers that turn a model response
//! into a structured answer.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FeatureId {
    #[serde(rename = "WALS_81A")]
    Wals81A,
    #[serde(rename = "GB_107")]
    Gb107,
    #[serde(rename = "WALS_116A_STAR")]
    Wals116AStar,
    #[serde(rename = "WALS_49A")]
    Wals49A,
}

impl FeatureId {
    pub const ALL: [FeatureId; 4] = [
        FeatureId::Wals81A,
        FeatureId::Gb107,
        FeatureId::Wals116AStar,
        FeatureId::Wals49A,
    ];

    /// Identifier used in files and on the command line.
    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureId::Wals81A => "WALS_81A",
            FeatureId::Gb107 => "GB_107",
            FeatureId::Wals116AStar => "WALS_116A_STAR",
            FeatureId::Wals49A => "WALS_49A",
        }
    }

    /// Human-facing name, as printed in report tables.
    pub fn display_name(&self) -> &'static str {
        match self {
            FeatureId::Wals81A => "WALS 81A",
            FeatureId::Gb107 => "GB 107",
            FeatureId::Wals116AStar => "WALS 116A*",
            FeatureId::Wals49A => "WALS 49A",
        }
    }
}

impl fmt::Display for FeatureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown feature {0:?}")]
pub struct UnknownFeature(pub String);

impl FromStr for FeatureId {
    type Err = UnknownFeature;

    /// Accepts `WALS_81A`, `WALS 81A`, `wals81a`, `WALS 116A*` and similar.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .to_uppercase()
            .replace('*', "_STAR")
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect();
        FeatureId::ALL
            .into_iter()
            .find(|f| f.as_str().replace('_', "") == norm)
            .ok_or_else(|| UnknownFeature(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureKind {
    SingleLabel,
    BinaryVector7,
}

/// The polar-question strategies, in the fixed vector order.
pub const POLAR_QUESTION_LABELS: [&str; 7] = [
    "Interrogative intonation only",
    "Interrogative word order",
    "Clause-initial question particle",
    "Clause-final question particle",
    "Clause-medial question particle",
    "Interrogative verb morphology",
    "Tone",
];

/// Gold value for grammars that never mention the feature, and the answer
/// for "Not enough information" responses.
pub const NO_MENTION: &str = "NO_MENTION";

const NO_MENTION_SPELLINGS: [&str; 3] = ["no mention", "not enough information", "no_mention"];

pub const LANGUAGE_PLACEHOLDER: &str = "<LANGUAGE>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub feature_id: FeatureId,
    pub kind: FeatureKind,
    pub label_domain: Vec<String>,
    pub query_term: String,
    pub wiki_title: String,
    pub wiki_summary: String,
    pub base_prompt_template: String,
    pub cot_text: String,
}

impl FeatureSpec {
    pub fn base_prompt(&self, language_name: &str) -> String {
        self.base_prompt_template
            .replace(LANGUAGE_PLACEHOLDER, language_name)
    }

    pub fn canonical_label(&self, label: &str) -> Option<&str> {
        self.label_domain
            .iter()
            .find(|l| l.as_str() == label)
            .map(String::as_str)
    }
}

fn strip_trailing_newline(s: &str) -> String {
    s.trim_end_matches(['\n', '\r']).to_string()
}

fn labels(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

/// The four bundled features with their prompts, summaries and guidelines.
pub fn builtin_features() -> Vec<FeatureSpec> {
    FeatureId::ALL.into_iter().map(builtin_feature).collect()
}

pub fn builtin_feature(id: FeatureId) -> FeatureSpec {
    let (kind, domain, query_term, wiki_title, wiki, prompt, cot) = match id {
        FeatureId::Wals81A => (
            FeatureKind::SingleLabel,
            labels(&["SOV", "SVO", "VOS", "VSO", "OVS", "OSV", "No dominant order"]),
            "Dominant word order (Order of Subject, Object, and Verb)",
            "Word order",
            include_str!("../data/wiki/WALS_81A.txt"),
            include_str!("../data/prompts/WALS_81A.txt"),
            include_str!("../data/cot/WALS_81A.txt"),
        ),
        FeatureId::Gb107 => (
            FeatureKind::SingleLabel,
            labels(&["1", "0"]),
            "Standard negation (Can standard negation be marked by an affix, clitic or modification of the verb?)",
            "Affirmation and negation",
            include_str!("../data/wiki/GB_107.txt"),
            include_str!("../data/prompts/GB_107.txt"),
            include_str!("../data/cot/GB_107.txt"),
        ),
        FeatureId::Wals116AStar => (
            FeatureKind::BinaryVector7,
            labels(&POLAR_QUESTION_LABELS),
            "Polar questions (Strategies for forming yes-no questions)",
            "Yes-no question",
            include_str!("../data/wiki/WALS_116A_STAR.txt"),
            include_str!("../data/prompts/WALS_116A_STAR.txt"),
            include_str!("../data/cot/WALS_116A_STAR.txt"),
        ),
        FeatureId::Wals49A => (
            FeatureKind::SingleLabel,
            labels(&[
                "No morphological case-marking",
                "2 cases",
                "3 cases",
                "4 cases",
                "5 cases",
                "6-7 cases",
                "8-9 cases",
                "10 or more cases",
                "Exclusively borderline case-marking",
            ]),
            "Number of cases (Number of grammatical cases of nouns)",
            "Grammatical case",
            include_str!("../data/wiki/WALS_49A.txt"),
            include_str!("../data/prompts/WALS_49A.txt"),
            include_str!("../data/cot/WALS_49A.txt"),
        ),
    };
    FeatureSpec {
        feature_id: id,
        kind,
        label_domain: domain,
        query_term: query_term.to_string(),
        wiki_title: wiki_title.to_string(),
        wiki_summary: strip_trailing_newline(wiki),
        base_prompt_template: strip_trailing_newline(prompt),
        cot_text: strip_trailing_newline(cot),
    }
}

/// Replaces bundled texts with files from `dir` when present:
/// `<dir>/wiki/<ID>.txt`, `<dir>/cot/<ID>.txt`, `<dir>/prompts/<ID>.txt`.
pub fn with_data_overrides(
    mut specs: Vec<FeatureSpec>,
    dir: &Path,
) -> std::io::Result<Vec<FeatureSpec>> {
    for spec in &mut specs {
        let name = format!("{}.txt", spec.feature_id);
        for (sub, slot) in [
            ("wiki", &mut spec.wiki_summary),
            ("cot", &mut spec.cot_text),
            ("prompts", &mut spec.base_prompt_template),
        ] {
            let path = dir.join(sub).join(&name);
            if path.exists() {
                *slot = strip_trailing_newline(&std::fs::read_to_string(path)?);
            }
        }
    }
    Ok(specs)
}

/// A parsed model answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerValue {
    Label(String),
    Vector([u8; 7]),
    NoMention,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub feature_id: FeatureId,
    pub value: AnswerValue,
    pub reasoning_text: String,
    pub raw_response: String,
}

#[derive(Debug, Clone, Error, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParseError {
    #[error("no \"Conclusion:\" marker")]
    NoMarker,
    #[error("conclusion {0:?} matches no option")]
    Unmatched(String),
    #[error("conclusion {text:?} matches several options: {candidates:?}")]
    Ambiguous {
        text: String,
        candidates: Vec<String>,
    },
    #[error("missing value for {0:?}")]
    MissingLabel(String),
    #[error("duplicated value for {0:?}")]
    DuplicateLabel(String),
    #[error("value {value:?} for {label:?} is not 0 or 1")]
    InvalidValue { label: String, value: String },
    #[error("parser does not handle {0:?} features")]
    WrongKind(FeatureKind),
}

const MARKER: &str = "conclusion:";

// Byte offset of the last case-insensitive "Conclusion:".
fn last_marker(raw: &str) -> Option<usize> {
    // ASCII lowercasing keeps byte offsets aligned with `raw`.
    raw.to_ascii_lowercase().rfind(MARKER)
}

fn is_edge_noise(c: char) -> bool {
    c.is_whitespace() || c.is_ascii_punctuation() || matches!(c, '“' | '”' | '‘' | '’')
}

fn trim_noise(s: &str) -> &str {
    s.trim_matches(is_edge_noise)
}

// Case-insensitive search for `needle` in `hay` at word boundaries.
fn contains_word(hay: &str, needle: &str) -> bool {
    let hay = hay.to_lowercase();
    let needle = needle.to_lowercase();
    let mut from = 0;
    while let Some(pos) = hay[from..].find(&needle) {
        let start = from + pos;
        let end = start + needle.len();
        let before_ok = hay[..start]
            .chars()
            .next_back()
            .is_none_or(|c| !c.is_alphanumeric());
        let after_ok = hay[end..]
            .chars()
            .next()
            .is_none_or(|c| !c.is_alphanumeric());
        if before_ok && after_ok {
            return true;
        }
        from = start + needle.chars().next().map_or(1, char::len_utf8);
    }
    false
}

fn split_at_marker(raw: &str) -> Result<(&str, &str), ParseError> {
    let pos = last_marker(raw).ok_or(ParseError::NoMarker)?;
    Ok((&raw[..pos], &raw[pos + MARKER.len()..]))
}

/// Parses a single-label answer from the text after the last `Conclusion:`.
///
/// The first non-empty line after the marker is compared with the domain,
/// first exactly (ignoring case and surrounding punctuation), then by
/// unique whole-word containment. With `allow_no_mention`, the out-of-band
/// "No mention" / "Not enough information" answers are accepted too.
pub fn parse_conclusion(
    raw: &str,
    spec: &FeatureSpec,
    allow_no_mention: bool,
) -> Result<Answer, ParseError> {
    if spec.kind != FeatureKind::SingleLabel {
        return Err(ParseError::WrongKind(spec.kind));
    }
    let (reasoning, rest) = split_at_marker(raw)?;
    let line = rest
        .lines()
        .map(trim_noise)
        .find(|l| !l.is_empty())
        .unwrap_or("");
    let answer = |value| Answer {
        feature_id: spec.feature_id,
        value,
        reasoning_text: reasoning.to_string(),
        raw_response: raw.to_string(),
    };

    if let Some(label) = spec
        .label_domain
        .iter()
        .find(|l| l.eq_ignore_ascii_case(line))
    {
        return Ok(answer(AnswerValue::Label(label.clone())));
    }
    if allow_no_mention
        && NO_MENTION_SPELLINGS
            .iter()
            .any(|s| s.eq_ignore_ascii_case(line))
    {
        return Ok(answer(AnswerValue::NoMention));
    }

    let mut candidates: Vec<String> = spec
        .label_domain
        .iter()
        .filter(|l| contains_word(line, l))
        .cloned()
        .collect();
    if allow_no_mention && NO_MENTION_SPELLINGS.iter().any(|s| contains_word(line, s)) {
        candidates.push(NO_MENTION.to_string());
    }
    match candidates.len() {
        0 => Err(ParseError::Unmatched(line.to_string())),
        1 => {
            let c = candidates.pop().expect("one candidate");
            if c == NO_MENTION {
                Ok(answer(AnswerValue::NoMention))
            } else {
                Ok(answer(AnswerValue::Label(c)))
            }
        }
        _ => Err(ParseError::Ambiguous {
            text: line.to_string(),
            candidates,
        }),
    }
}

/// Parses the seven `label: 0|1` pairs after the last `Conclusion:`.
pub fn parse_multilabel(raw: &str, spec: &FeatureSpec) -> Result<Answer, ParseError> {
    if spec.kind != FeatureKind::BinaryVector7 {
        return Err(ParseError::WrongKind(spec.kind));
    }
    let (reasoning, rest) = split_at_marker(raw)?;
    let mut values: [Option<u8>; 7] = [None; 7];
    for segment in rest.split([',', '\n', ';']) {
        let Some((name, value)) = segment.split_once(':') else {
            continue;
        };
        let name = trim_noise(name);
        let Some(slot) = POLAR_QUESTION_LABELS
            .iter()
            .position(|l| l.eq_ignore_ascii_case(name))
        else {
            continue;
        };
        let label = POLAR_QUESTION_LABELS[slot].to_string();
        if values[slot].is_some() {
            return Err(ParseError::DuplicateLabel(label));
        }
        let value = trim_noise(value);
        values[slot] = Some(match value {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(ParseError::InvalidValue {
                    label,
                    value: other.to_string(),
                })
            }
        });
    }
    let mut vector = [0u8; 7];
    for (i, v) in values.iter().enumerate() {
        vector[i] = v.ok_or_else(|| ParseError::MissingLabel(POLAR_QUESTION_LABELS[i].into()))?;
    }
    Ok(Answer {
        feature_id: spec.feature_id,
        value: AnswerValue::Vector(vector),
        reasoning_text: reasoning.to_string(),
        raw_response: raw.to_string(),
    })
}

/// Dispatches on the feature kind.
pub fn parse_answer(
    raw: &str,
    spec: &FeatureSpec,
    allow_no_mention: bool,
) -> Result<Answer, ParseError> {
    match spec.kind {
        FeatureKind::SingleLabel => parse_conclusion(raw, spec, allow_no_mention),
        FeatureKind::BinaryVector7 => parse_multilabel(raw, spec),
    }
}

/// The comma-separated `label: v` list, without any prefix.
pub fn format_vector(vector: &[u8; 7]) -> String {
    POLAR_QUESTION_LABELS
        .iter()
        .zip(vector)
        .map(|(l, v)| format!("{l}: {v}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// `Conclusion: ` followed by [`format_vector`].
pub fn format_multilabel(vector: &[u8; 7]) -> String {
    format!("Conclusion: {}", format_vector(vector))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(id: FeatureId) -> FeatureSpec {
        builtin_feature(id)
    }

    fn label_of(a: Answer) -> String {
        match a.value {
            AnswerValue::Label(l) => l,
            other => panic!("expected label, got {other:?}"),
        }
    }

    const PROMPT_EXAMPLE: &str = "Interrogative intonation only: 1, Interrogative word order: 0, Clause-initial question particle: 0, Clause-final question particle: 1, Clause-medial question particle: 0, Interrogative verb morphology: 0, Tone: 0";

    #[test]
    fn registry_shape() {
        let all = builtin_features();
        assert_eq!(all.len(), 4);
        assert_eq!(spec(FeatureId::Wals49A).label_domain.len(), 9);
        assert_eq!(spec(FeatureId::Wals81A).label_domain.len(), 7);
        assert_eq!(spec(FeatureId::Gb107).label_domain, vec!["1", "0"]);
        assert_eq!(
            spec(FeatureId::Wals116AStar).kind,
            FeatureKind::BinaryVector7
        );
        for s in &all {
            assert!(s.base_prompt_template.contains(LANGUAGE_PLACEHOLDER));
            assert!(s
                .base_prompt_template
                .contains("output the word \"Conclusion:\""));
            assert!(!s.wiki_summary.is_empty());
            assert!(!s.cot_text.is_empty());
        }
    }

    #[test]
    fn prompt_lists_the_same_options_as_the_domain() {
        let s = spec(FeatureId::Wals81A);
        assert!(s
            .base_prompt_template
            .contains("Reply with one of the 7 following options: SOV, SVO, VOS, VSO, OVS, OSV, No dominant order."));
        let cases = spec(FeatureId::Wals49A);
        let listed = cases.label_domain.join(", ");
        assert!(cases.base_prompt_template.contains(&listed));
        let polar = spec(FeatureId::Wals116AStar);
        assert!(polar.base_prompt_template.contains(PROMPT_EXAMPLE));
    }

    #[test]
    fn feature_id_spellings() {
        assert_eq!("WALS 116A*".parse(), Ok(FeatureId::Wals116AStar));
        assert_eq!("wals_81a".parse(), Ok(FeatureId::Wals81A));
        assert_eq!("GB107".parse(), Ok(FeatureId::Gb107));
        assert!("WALS 1A".parse::<FeatureId>().is_err());
    }

    #[test]
    fn conclusion_basic() {
        let s = spec(FeatureId::Wals81A);
        let a = parse_conclusion("Verbs come last.\nConclusion: SOV", &s, false).unwrap();
        assert_eq!(a.reasoning_text, "Verbs come last.\n");
        assert_eq!(label_of(a), "SOV");
    }

    #[test]
    fn conclusion_normalizes_case_and_punctuation() {
        let s = spec(FeatureId::Wals81A);
        assert_eq!(
            label_of(parse_conclusion("Conclusion: sov.", &s, false).unwrap()),
            "SOV"
        );
        assert_eq!(
            label_of(parse_conclusion("**Conclusion:** No dominant order\n", &s, false).unwrap()),
            "No dominant order"
        );
    }

    #[test]
    fn conclusion_missing_marker() {
        let s = spec(FeatureId::Wals81A);
        assert_eq!(
            parse_conclusion("The order is SOV.", &s, false),
            Err(ParseError::NoMarker)
        );
    }

    #[test]
    fn last_marker_wins() {
        let s = spec(FeatureId::Wals81A);
        let raw = "First guess. Conclusion: SVO. But on reflection...\nConclusion: VSO";
        assert_eq!(label_of(parse_conclusion(raw, &s, false).unwrap()), "VSO");
    }

    #[test]
    fn substring_match_and_ambiguity() {
        let s = spec(FeatureId::Wals49A);
        let a = parse_conclusion("Conclusion: the language has 6-7 cases", &s, false).unwrap();
        assert_eq!(label_of(a), "6-7 cases");
        let err = parse_conclusion("Conclusion: 2 cases or 3 cases", &s, false).unwrap_err();
        assert!(matches!(err, ParseError::Ambiguous { .. }));
        let err = parse_conclusion("Conclusion: 7 cases", &s, false).unwrap_err();
        assert_eq!(err, ParseError::Unmatched("7 cases".into()));
    }

    #[test]
    fn digits_match_whole_words_only() {
        let s = spec(FeatureId::Gb107);
        assert_eq!(
            label_of(parse_conclusion("Conclusion: 1", &s, false).unwrap()),
            "1"
        );
        assert_eq!(
            parse_conclusion("Conclusion: 10", &s, false),
            Err(ParseError::Unmatched("10".into()))
        );
    }

    #[test]
    fn no_mention_only_when_enabled() {
        let s = spec(FeatureId::Wals81A);
        assert!(parse_conclusion("Conclusion: Not enough information", &s, false).is_err());
        let a = parse_conclusion("Conclusion: Not enough information", &s, true).unwrap();
        assert_eq!(a.value, AnswerValue::NoMention);
    }

    #[test]
    fn multilabel_prompt_example() {
        let s = spec(FeatureId::Wals116AStar);
        let raw = format!("Some reasoning.\nConclusion: \"{PROMPT_EXAMPLE}\"");
        let a = parse_multilabel(&raw, &s).unwrap();
        assert_eq!(a.value, AnswerValue::Vector([1, 0, 0, 1, 0, 0, 0]));
        assert_eq!(format_vector(&[1, 0, 0, 1, 0, 0, 0]), PROMPT_EXAMPLE);
    }

    #[test]
    fn multilabel_bullets_and_case() {
        let s = spec(FeatureId::Wals116AStar);
        let raw = "Conclusion:\n- interrogative intonation only: 0\n- Interrogative word order: 0\n\
                   - Clause-initial question particle: 1\n- Clause-final question particle: 0\n\
                   - Clause-medial question particle: 0\n- Interrogative verb morphology: 1\n- TONE: 0.";
        let a = parse_multilabel(raw, &s).unwrap();
        assert_eq!(a.value, AnswerValue::Vector([0, 0, 1, 0, 0, 1, 0]));
    }

    #[test]
    fn multilabel_errors() {
        let s = spec(FeatureId::Wals116AStar);
        let six = format!(
            "Conclusion: {}",
            format_vector(&[0; 7]).replace(", Tone: 0", "")
        );
        assert_eq!(
            parse_multilabel(&six, &s),
            Err(ParseError::MissingLabel("Tone".into()))
        );
        let dup = format!("{}, Tone: 1", format_multilabel(&[0; 7]));
        assert_eq!(
            parse_multilabel(&dup, &s),
            Err(ParseError::DuplicateLabel("Tone".into()))
        );
        let bad = format_multilabel(&[0; 7]).replace("Tone: 0", "Tone: 2");
        assert_eq!(
            parse_multilabel(&bad, &s),
            Err(ParseError::InvalidValue {
                label: "Tone".into(),
                value: "2".into()
            })
        );
        assert_eq!(
            parse_multilabel(PROMPT_EXAMPLE, &s),
            Err(ParseError::NoMarker)
        );
    }

    #[test]
    fn all_128_vectors_round_trip() {
        let s = spec(FeatureId::Wals116AStar);
        for bits in 0u8..128 {
            let mut v = [0u8; 7];
            for (i, slot) in v.iter_mut().enumerate() {
                *slot = (bits >> i) & 1;
            }
            let a = parse_multilabel(&format_multilabel(&v), &s).unwrap();
            assert_eq!(a.value, AnswerValue::Vector(v));
        }
    }

    #[test]
    fn every_label_parses() {
        for s in builtin_features()
            .into_iter()
            .filter(|s| s.kind == FeatureKind::SingleLabel)
        {
            for l in &s.label_domain {
                let raw = format!("  Conclusion: {l}. \n");
                assert_eq!(label_of(parse_conclusion(&raw, &s, false).unwrap()), *l);
            }
        }
    }

    #[test]
    fn wrong_kind_is_rejected() {
        assert_eq!(
            parse_conclusion("Conclusion: 1", &spec(FeatureId::Wals116AStar), false),
            Err(ParseError::WrongKind(FeatureKind::BinaryVector7))
        );
        assert_eq!(
            parse_multilabel("Conclusion: 1", &spec(FeatureId::Gb107)),
            Err(ParseError::WrongKind(FeatureKind::SingleLabel))
        );
    }
}
