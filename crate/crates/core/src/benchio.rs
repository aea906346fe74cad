//! Benchmark file formats.
//!
//! Reranker benchmark (JSONL, one judged paragraph per line):
//!
//! ```text
//! {"grammar_id": "...", "bm25_rank": 1, "text": "...", "relevance": 3}
//! ```
//!
//! RAG gold labels (JSONL):
//!
//! ```text
//! {"doc_id": "...", "feature": "WALS_81A", "gold": "SOV", "sufficient_info": true, "relevant_pages": [12, 13]}
//! ```
//!
//! `gold` is a label string, `"NO_MENTION"`, or for the polar-question
//! feature an object mapping each of the seven labels to 0 or 1.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

use crate::corpus::{split_text, GrammarDoc, Paragraph};
use crate::features::{
    builtin_feature, AnswerValue, FeatureId, FeatureKind, NO_MENTION, POLAR_QUESTION_LABELS,
};
use crate::metrics::{JudgedRanking, MAX_GRADE};
use crate::retrieval::ScoredList;

/// Judged paragraphs per grammar in the published benchmark.
pub const JUDGED_PER_GRAMMAR: usize = 50;

pub const PAGE_SEPARATOR: char = '\u{000C}';

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{path}: line {line}: {message}")]
    Line {
        path: String,
        line: usize,
        message: String,
    },
    #[error("page {page} out of range (document has {n_pages} pages)")]
    PageOutOfRange { page: usize, n_pages: usize },
    #[error("no pages requested")]
    NoPages,
    #[error("{0}")]
    Convert(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn line_err(path: &Path, line: usize, message: impl std::fmt::Display) -> BenchError {
    BenchError::Line {
        path: path.display().to_string(),
        line,
        message: message.to_string(),
    }
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, BenchError> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RerankerRecord {
    pub grammar_id: String,
    pub bm25_rank: u32,
    pub text: String,
    pub relevance: u8,
}

/// One grammar of the reranker benchmark, ordered by BM25 rank.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchGrammar {
    pub grammar_id: String,
    pub ranks: Vec<u32>,
    pub texts: Vec<String>,
    pub ranking: JudgedRanking,
}

impl BenchGrammar {
    pub fn records(&self) -> impl Iterator<Item = RerankerRecord> + '_ {
        self.ranks
            .iter()
            .zip(&self.texts)
            .zip(&self.ranking.relevances_in_rank_order)
            .map(|((&r, t), &g)| RerankerRecord {
                grammar_id: self.grammar_id.clone(),
                bm25_rank: r,
                text: t.clone(),
                relevance: g,
            })
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RerankerBenchmark {
    /// In order of first appearance in the file.
    pub grammars: Vec<BenchGrammar>,
    pub warnings: Vec<String>,
}

impl RerankerBenchmark {
    pub fn n_records(&self) -> usize {
        self.grammars.iter().map(BenchGrammar::len).sum()
    }

    /// Count of records per relevance grade 0..=5.
    pub fn grade_histogram(&self) -> [usize; 6] {
        let mut h = [0; 6];
        for g in &self.grammars {
            for &r in &g.ranking.relevances_in_rank_order {
                h[r as usize] += 1;
            }
        }
        h
    }

    pub fn records(&self) -> impl Iterator<Item = RerankerRecord> + '_ {
        self.grammars.iter().flat_map(BenchGrammar::records)
    }

    pub fn get(&self, grammar_id: &str) -> Option<&BenchGrammar> {
        self.grammars.iter().find(|g| g.grammar_id == grammar_id)
    }
}

/// Groups records by grammar and orders each group by `bm25_rank`.
pub fn group_reranker_records(
    records: Vec<(usize, RerankerRecord)>,
    path: &Path,
) -> Result<RerankerBenchmark, BenchError> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<(usize, RerankerRecord)>> = HashMap::new();
    for (line, rec) in records {
        if rec.relevance > MAX_GRADE {
            return Err(line_err(
                path,
                line,
                format!("relevance {} outside 0..=5", rec.relevance),
            ));
        }
        if rec.bm25_rank == 0 {
            return Err(line_err(path, line, "bm25_rank must be at least 1"));
        }
        if !groups.contains_key(&rec.grammar_id) {
            order.push(rec.grammar_id.clone());
        }
        groups
            .entry(rec.grammar_id.clone())
            .or_default()
            .push((line, rec));
    }
    let mut bench = RerankerBenchmark::default();
    for id in order {
        let mut rows = groups.remove(&id).expect("grouped");
        rows.sort_by_key(|(_, r)| r.bm25_rank);
        let mut seen = HashSet::new();
        for (line, r) in &rows {
            if !seen.insert(r.bm25_rank) {
                return Err(line_err(
                    path,
                    *line,
                    format!("duplicate bm25_rank {} for {id}", r.bm25_rank),
                ));
            }
        }
        if rows.len() != JUDGED_PER_GRAMMAR {
            let w = format!(
                "{id}: {} judged paragraphs (expected {JUDGED_PER_GRAMMAR})",
                rows.len()
            );
            log::warn!("{w}");
            bench.warnings.push(w);
        }
        let rels: Vec<u8> = rows.iter().map(|(_, r)| r.relevance).collect();
        bench.grammars.push(BenchGrammar {
            ranking: JudgedRanking::new(id.clone(), rels).expect("grades checked"),
            grammar_id: id,
            ranks: rows.iter().map(|(_, r)| r.bm25_rank).collect(),
            texts: rows.into_iter().map(|(_, r)| r.text).collect(),
        });
    }
    Ok(bench)
}

pub fn load_reranker_benchmark(path: &Path) -> Result<RerankerBenchmark, BenchError> {
    let mut records = Vec::new();
    for (line, text) in read_lines(path)? {
        let rec: RerankerRecord =
            serde_json::from_str(&text).map_err(|e| line_err(path, line, e))?;
        records.push((line, rec));
    }
    group_reranker_records(records, path)
}

pub fn write_reranker_records<'a>(
    mut w: impl Write,
    records: impl IntoIterator<Item = &'a RerankerRecord>,
) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_reranker_benchmark(path: &Path, bench: &RerankerBenchmark) -> std::io::Result<()> {
    let records: Vec<RerankerRecord> = bench.records().collect();
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_reranker_records(&mut w, &records)?;
    w.flush()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RagGoldRecord {
    pub doc_id: String,
    pub feature_id: FeatureId,
    pub gold_value: AnswerValue,
    pub sufficient_info: bool,
    pub relevant_pages: Option<Vec<u32>>,
}

#[derive(Deserialize)]
struct RawGold {
    doc_id: String,
    feature: String,
    gold: Value,
    sufficient_info: bool,
    #[serde(default)]
    relevant_pages: Option<Vec<u32>>,
}

/// Serializes a gold value in the JSONL `gold` field shape.
pub struct GoldJson<'a>(pub &'a AnswerValue);

impl Serialize for GoldJson<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            AnswerValue::Label(l) => s.serialize_str(l),
            AnswerValue::NoMention => s.serialize_str(NO_MENTION),
            AnswerValue::Vector(v) => {
                let mut m = s.serialize_map(Some(7))?;
                for (label, bit) in POLAR_QUESTION_LABELS.iter().zip(v) {
                    m.serialize_entry(label, bit)?;
                }
                m.end()
            }
        }
    }
}

#[derive(Serialize)]
struct GoldLine<'a> {
    doc_id: &'a str,
    feature: FeatureId,
    gold: GoldJson<'a>,
    sufficient_info: bool,
    relevant_pages: &'a Option<Vec<u32>>,
}

fn is_no_mention(s: &str) -> bool {
    let t = s.trim();
    t == NO_MENTION || t.eq_ignore_ascii_case("no mention")
}

fn bit(v: &Value) -> Option<u8> {
    match v {
        Value::Number(n) => n.as_u64().filter(|&b| b <= 1).map(|b| b as u8),
        Value::String(s) => match s.trim() {
            "0" => Some(0),
            "1" => Some(1),
            _ => None,
        },
        Value::Bool(b) => Some(*b as u8),
        _ => None,
    }
}

/// Validates a gold value against the feature's label domain.
pub fn gold_value(feature: FeatureId, gold: &Value) -> Result<AnswerValue, String> {
    let spec = builtin_feature(feature);
    match (spec.kind, gold) {
        (_, Value::String(s)) if is_no_mention(s) => Ok(AnswerValue::NoMention),
        (FeatureKind::SingleLabel, Value::String(s)) => spec
            .label_domain
            .iter()
            .find(|l| l.eq_ignore_ascii_case(s.trim()))
            .map(|l| AnswerValue::Label(l.clone()))
            .ok_or_else(|| format!("gold {s:?} not in the {feature} domain")),
        (FeatureKind::SingleLabel, Value::Number(n)) => {
            gold_value(feature, &Value::String(n.to_string()))
        }
        (FeatureKind::BinaryVector7, Value::Object(map)) => {
            let mut v = [0u8; 7];
            for (i, label) in POLAR_QUESTION_LABELS.iter().enumerate() {
                let (_, raw) = map
                    .iter()
                    .find(|(k, _)| k.trim().eq_ignore_ascii_case(label))
                    .ok_or_else(|| format!("gold vector lacks {label:?}"))?;
                v[i] = bit(raw).ok_or_else(|| format!("gold value for {label:?} is not 0 or 1"))?;
            }
            if map.len() != 7 {
                return Err(format!("gold vector has {} entries, expected 7", map.len()));
            }
            Ok(AnswerValue::Vector(v))
        }
        (kind, other) => Err(format!("gold {other} does not fit a {kind:?} feature")),
    }
}

pub fn load_rag_gold(path: &Path) -> Result<Vec<RagGoldRecord>, BenchError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (line, text) in read_lines(path)? {
        let raw: RawGold = serde_json::from_str(&text).map_err(|e| line_err(path, line, e))?;
        let feature_id: FeatureId = raw.feature.parse().map_err(|e| line_err(path, line, e))?;
        let gold = gold_value(feature_id, &raw.gold).map_err(|e| line_err(path, line, e))?;
        if !seen.insert((raw.doc_id.clone(), feature_id)) {
            return Err(line_err(
                path,
                line,
                format!("duplicate entry for {} / {feature_id}", raw.doc_id),
            ));
        }
        out.push(RagGoldRecord {
            doc_id: raw.doc_id,
            feature_id,
            gold_value: gold,
            sufficient_info: raw.sufficient_info,
            relevant_pages: raw.relevant_pages,
        });
    }
    Ok(out)
}

pub fn write_rag_gold(mut w: impl Write, records: &[RagGoldRecord]) -> std::io::Result<()> {
    for r in records {
        let line = GoldLine {
            doc_id: &r.doc_id,
            feature: r.feature_id,
            gold: GoldJson(&r.gold_value),
            sufficient_info: r.sufficient_info,
            relevant_pages: &r.relevant_pages,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_rag_gold(path: &Path, records: &[RagGoldRecord]) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_rag_gold(&mut w, records)?;
    w.flush()
}

/// Items with enough information in the grammar, and all items, per feature.
pub fn sufficiency_counts(records: &[RagGoldRecord]) -> BTreeMap<FeatureId, (usize, usize)> {
    let mut out: BTreeMap<FeatureId, (usize, usize)> = BTreeMap::new();
    for r in records {
        let e = out.entry(r.feature_id).or_default();
        e.0 += r.sufficient_info as usize;
        e.1 += 1;
    }
    out
}

pub fn page_count(doc: &GrammarDoc) -> usize {
    doc.raw_text.split(PAGE_SEPARATOR).count()
}

/// Paragraphs from the given 1-based pages, in document order. Indices
/// count paragraphs page by page from the start of the document.
pub fn extract_pages(doc: &GrammarDoc, pages: &[u32]) -> Result<ScoredList, BenchError> {
    if pages.is_empty() {
        return Err(BenchError::NoPages);
    }
    let texts: Vec<&str> = doc.raw_text.split(PAGE_SEPARATOR).collect();
    let mut wanted: Vec<usize> = pages.iter().map(|&p| p as usize).collect();
    wanted.sort_unstable();
    wanted.dedup();
    if let Some(&bad) = wanted.iter().find(|&&p| p == 0 || p > texts.len()) {
        return Err(BenchError::PageOutOfRange {
            page: bad,
            n_pages: texts.len(),
        });
    }
    let mut out = Vec::new();
    let mut offset = 0;
    for (i, text) in texts.iter().enumerate() {
        let paras = split_text(&doc.doc_id, text);
        if wanted.binary_search(&(i + 1)).is_ok() {
            out.extend(paras.iter().map(|p| Paragraph {
                doc_id: p.doc_id.clone(),
                index: offset + p.index,
                text: p.text.clone(),
            }));
        }
        offset += paras.len();
    }
    Ok(ScoredList::human(out))
}

/// Column names for [`convert_benchmark`]. Each field lists accepted
/// source names, compared case-insensitively; the first match wins.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub grammar_id: Vec<String>,
    pub bm25_rank: Vec<String>,
    pub text: Vec<String>,
    pub relevance: Vec<String>,
}

fn names(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            grammar_id: names(&["grammar_id", "grammar", "doc_id", "document", "book"]),
            bm25_rank: names(&["bm25_rank", "rank", "bm25", "position"]),
            text: names(&["text", "paragraph", "passage", "content"]),
            relevance: names(&["relevance", "grade", "label", "score", "annotation"]),
        }
    }
}

fn pick<'a>(row: &'a BTreeMap<String, Value>, wanted: &[String]) -> Option<&'a Value> {
    wanted.iter().find_map(|w| {
        row.iter()
            .find(|(k, _)| k.trim().eq_ignore_ascii_case(w))
            .map(|(_, v)| v)
    })
}

fn as_int(v: &Value) -> Option<i64> {
    match v {
        Value::Number(n) => n
            .as_i64()
            .or_else(|| n.as_f64().filter(|f| f.fract() == 0.0).map(|f| f as i64)),
        Value::String(s) => {
            let s = s.trim();
            s.parse::<i64>().ok().or_else(|| {
                s.parse::<f64>()
                    .ok()
                    .filter(|f| f.fract() == 0.0)
                    .map(|f| f as i64)
            })
        }
        _ => None,
    }
}

fn as_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Reads a CSV/TSV/JSON/JSONL export with arbitrary column names and maps
/// it to canonical records. When no rank column exists, ranks follow file
/// order within each grammar.
pub fn convert_benchmark(path: &Path, map: &ColumnMap) -> Result<Vec<RerankerRecord>, BenchError> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    let rows: Vec<(usize, BTreeMap<String, Value>)> = match ext.as_str() {
        "csv" | "tsv" => {
            let mut rdr = csv::ReaderBuilder::new()
                .delimiter(if ext == "tsv" { b'\t' } else { b',' })
                .from_path(path)
                .map_err(|e| BenchError::Convert(e.to_string()))?;
            let headers = rdr
                .headers()
                .map_err(|e| BenchError::Convert(e.to_string()))?
                .clone();
            let mut out = Vec::new();
            for (i, rec) in rdr.records().enumerate() {
                let rec = rec.map_err(|e| line_err(path, i + 2, e))?;
                let row = headers
                    .iter()
                    .zip(rec.iter())
                    .map(|(h, v)| (h.to_string(), Value::String(v.to_string())))
                    .collect();
                out.push((i + 2, row));
            }
            out
        }
        "json" => {
            let text = std::fs::read_to_string(path)?;
            let rows: Vec<BTreeMap<String, Value>> =
                serde_json::from_str(&text).map_err(|e| line_err(path, e.line(), e))?;
            rows.into_iter()
                .enumerate()
                .map(|(i, r)| (i + 1, r))
                .collect()
        }
        _ => {
            let mut out = Vec::new();
            for (line, text) in read_lines(path)? {
                out.push((
                    line,
                    serde_json::from_str(&text).map_err(|e| line_err(path, line, e))?,
                ));
            }
            out
        }
    };

    let mut next_rank: HashMap<String, u32> = HashMap::new();
    let mut out = Vec::with_capacity(rows.len());
    for (line, row) in rows {
        let need = |field: &str, cols: &[String]| {
            pick(&row, cols).ok_or_else(|| {
                line_err(
                    path,
                    line,
                    format!("no column for {field} (tried {cols:?})"),
                )
            })
        };
        let grammar_id = as_text(need("grammar_id", &map.grammar_id)?);
        let text = as_text(need("text", &map.text)?);
        let rel = as_int(need("relevance", &map.relevance)?)
            .filter(|r| (0..=MAX_GRADE as i64).contains(r))
            .ok_or_else(|| line_err(path, line, "relevance is not an integer in 0..=5"))?;
        let counter = next_rank.entry(grammar_id.clone()).or_insert(0);
        *counter += 1;
        let rank = match pick(&row, &map.bm25_rank) {
            Some(v) => as_int(v)
                .filter(|&r| r >= 1)
                .ok_or_else(|| line_err(path, line, "bm25_rank is not a positive integer"))?
                as u32,
            None => *counter,
        };
        out.push(RerankerRecord {
            grammar_id,
            bm25_rank: rank,
            text,
            relevance: rel as u8,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{LanguageMeta, Macroarea};
    use proptest::prelude::*;

    fn tmp_with(content: &str, ext: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(ext).tempfile().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn rec(g: &str, rank: u32, rel: u8) -> RerankerRecord {
        RerankerRecord {
            grammar_id: g.into(),
            bm25_rank: rank,
            text: format!("{g} paragraph {rank}"),
            relevance: rel,
        }
    }

    fn jsonl(records: &[RerankerRecord]) -> String {
        let mut buf = Vec::new();
        write_reranker_records(&mut buf, records).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn small_fixture_loads_with_warning() {
        let f = tmp_with(
            &jsonl(&[rec("a", 3, 1), rec("a", 1, 5), rec("a", 2, 0)]),
            ".jsonl",
        );
        let b = load_reranker_benchmark(f.path()).unwrap();
        assert_eq!(b.grammars.len(), 1);
        assert_eq!(
            b.grammars[0].ranking.relevances_in_rank_order,
            vec![5, 0, 1]
        );
        assert_eq!(b.grammars[0].ranks, vec![1, 2, 3]);
        assert_eq!(b.warnings.len(), 1);
    }

    #[test]
    fn bad_grade_reports_its_line() {
        let mut s = jsonl(&[rec("a", 1, 1)]);
        s.push_str(r#"{"grammar_id":"a","bm25_rank":2,"text":"t","relevance":7}"#);
        s.push('\n');
        let f = tmp_with(&s, ".jsonl");
        let err = load_reranker_benchmark(f.path()).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn malformed_line_reports_its_line() {
        let s = format!("{}{}\n", jsonl(&[rec("a", 1, 1)]), "{not json");
        let f = tmp_with(&s, ".jsonl");
        assert!(load_reranker_benchmark(f.path())
            .unwrap_err()
            .to_string()
            .contains("line 2"));
    }

    #[test]
    fn duplicate_rank_rejected() {
        let f = tmp_with(&jsonl(&[rec("a", 1, 1), rec("a", 1, 2)]), ".jsonl");
        assert!(load_reranker_benchmark(f.path()).is_err());
    }

    #[test]
    fn gold_domain_checks() {
        assert_eq!(
            gold_value(FeatureId::Wals81A, &Value::String("SOV".into())),
            Ok(AnswerValue::Label("SOV".into()))
        );
        assert!(gold_value(FeatureId::Wals49A, &Value::String("7 cases".into())).is_err());
        assert_eq!(
            gold_value(FeatureId::Gb107, &serde_json::json!(1)),
            Ok(AnswerValue::Label("1".into()))
        );
        assert_eq!(
            gold_value(FeatureId::Wals81A, &Value::String("NO_MENTION".into())),
            Ok(AnswerValue::NoMention)
        );
        let mut obj = serde_json::Map::new();
        for (i, l) in POLAR_QUESTION_LABELS.iter().enumerate() {
            obj.insert(l.to_string(), serde_json::json!((i % 2) as u8));
        }
        assert_eq!(
            gold_value(FeatureId::Wals116AStar, &Value::Object(obj.clone())),
            Ok(AnswerValue::Vector([0, 1, 0, 1, 0, 1, 0]))
        );
        obj.remove("Tone");
        assert!(gold_value(FeatureId::Wals116AStar, &Value::Object(obj))
            .unwrap_err()
            .contains("Tone"));
        assert!(gold_value(FeatureId::Wals116AStar, &Value::String("SOV".into())).is_err());
    }

    #[test]
    fn unknown_feature_rejected() {
        let f = tmp_with(
            r#"{"doc_id":"d","feature":"WALS_1A","gold":"x","sufficient_info":true,"relevant_pages":null}"#,
            ".jsonl",
        );
        assert!(load_rag_gold(f.path()).is_err());
    }

    fn doc(text: &str) -> GrammarDoc {
        GrammarDoc {
            doc_id: "d".into(),
            meta: LanguageMeta {
                language_name: "L".into(),
                glottocode: None,
                family: "F".into(),
                genus: "G".into(),
                macroarea: Macroarea::Africa,
            },
            raw_text: text.into(),
        }
    }

    #[test]
    fn page_extraction() {
        let d = doc("one a\n\none b\x0Ctwo a\n\ntwo b\x0Cthree a");
        let p2 = extract_pages(&d, &[2]).unwrap();
        let texts: Vec<_> = p2.paragraphs().map(|p| p.text.as_str()).collect();
        assert_eq!(texts, vec!["two a", "two b"]);
        assert_eq!(p2.entries[0].paragraph.index, 2);
        let p13 = extract_pages(&d, &[3, 1]).unwrap();
        let texts: Vec<_> = p13.paragraphs().map(|p| p.text.as_str()).collect();
        assert_eq!(texts, vec!["one a", "one b", "three a"]);
        assert_eq!(p13.provenance, crate::retrieval::Provenance::Human);
        assert!(matches!(
            extract_pages(&d, &[9]),
            Err(BenchError::PageOutOfRange {
                page: 9,
                n_pages: 3
            })
        ));
        assert!(matches!(
            extract_pages(&d, &[0]),
            Err(BenchError::PageOutOfRange { .. })
        ));
        assert!(matches!(extract_pages(&d, &[]), Err(BenchError::NoPages)));
    }

    #[test]
    fn converter_maps_columns() {
        let f = tmp_with(
            "Grammar,Paragraph,Grade\nx,\"first, para\",3\nx,second,0\ny,other,5\n",
            ".csv",
        );
        let recs = convert_benchmark(f.path(), &ColumnMap::default()).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(
            recs[0],
            RerankerRecord {
                grammar_id: "x".into(),
                bm25_rank: 1,
                text: "first, para".into(),
                relevance: 3
            }
        );
        assert_eq!(recs[1].bm25_rank, 2);
        assert_eq!(recs[2].bm25_rank, 1);
        let f = tmp_with(
            r#"[{"book":"z","rank":"4","content":"t","score":2.0}]"#,
            ".json",
        );
        let recs = convert_benchmark(f.path(), &ColumnMap::default()).unwrap();
        assert_eq!(recs[0].bm25_rank, 4);
        assert_eq!(recs[0].relevance, 2);
        let f = tmp_with("grammar,text\nx,t\n", ".csv");
        assert!(convert_benchmark(f.path(), &ColumnMap::default())
            .unwrap_err()
            .to_string()
            .contains("relevance"));
    }

    fn gold_strategy() -> impl Strategy<Value = RagGoldRecord> {
        let value = prop_oneof![
            (0usize..7).prop_map(|i| (
                FeatureId::Wals81A,
                AnswerValue::Label(builtin_feature(FeatureId::Wals81A).label_domain[i].clone())
            )),
            (0usize..2).prop_map(|i| (
                FeatureId::Gb107,
                AnswerValue::Label(["1", "0"][i].to_string())
            )),
            (0usize..9).prop_map(|i| (
                FeatureId::Wals49A,
                AnswerValue::Label(builtin_feature(FeatureId::Wals49A).label_domain[i].clone())
            )),
            proptest::array::uniform7(0u8..=1)
                .prop_map(|v| (FeatureId::Wals116AStar, AnswerValue::Vector(v))),
            Just((FeatureId::Wals81A, AnswerValue::NoMention)),
        ];
        (
            "[a-z]{1,8}",
            value,
            any::<bool>(),
            proptest::option::of(proptest::collection::vec(1u32..500, 0..5)),
        )
            .prop_map(
                |(doc_id, (feature_id, gold_value), sufficient_info, relevant_pages)| {
                    RagGoldRecord {
                        doc_id,
                        feature_id,
                        gold_value,
                        sufficient_info,
                        relevant_pages,
                    }
                },
            )
    }

    proptest! {
        #[test]
        fn reranker_round_trip(
            groups in proptest::collection::vec((1usize..6, proptest::collection::vec(0u8..=5, 1..8)), 1..4),
        ) {
            let mut records = Vec::new();
            for (gi, (_, rels)) in groups.iter().enumerate() {
                for (i, &r) in rels.iter().enumerate() {
                    records.push(rec(&format!("g{gi}"), i as u32 + 1, r));
                }
            }
            // physical order scrambled
            records.reverse();
            let f = tmp_with(&jsonl(&records), ".jsonl");
            let a = load_reranker_benchmark(f.path()).unwrap();
            for g in &a.grammars {
                prop_assert!(g.ranks.windows(2).all(|w| w[0] < w[1]));
            }
            let out = tempfile::NamedTempFile::new().unwrap();
            save_reranker_benchmark(out.path(), &a).unwrap();
            let b = load_reranker_benchmark(out.path()).unwrap();
            prop_assert_eq!(&a.grammars, &b.grammars);
            let again = tempfile::NamedTempFile::new().unwrap();
            save_reranker_benchmark(again.path(), &b).unwrap();
            prop_assert_eq!(std::fs::read(out.path()).unwrap(), std::fs::read(again.path()).unwrap());
        }

        #[test]
        fn gold_round_trip(records in proptest::collection::vec(gold_strategy(), 1..10)) {
            let mut seen = HashSet::new();
            let records: Vec<_> = records.into_iter().filter(|r| seen.insert((r.doc_id.clone(), r.feature_id))).collect();
            let mut buf = Vec::new();
            write_rag_gold(&mut buf, &records).unwrap();
            let f = tmp_with(std::str::from_utf8(&buf).unwrap(), ".jsonl");
            let back = load_rag_gold(f.path()).unwrap();
            prop_assert_eq!(&back, &records);
            let mut buf2 = Vec::new();
            write_rag_gold(&mut buf2, &back).unwrap();
            prop_assert_eq!(buf, buf2);
        }
    }
}
