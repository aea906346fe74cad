//! Genus-macroarea stratified sampling of grammars.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Macroarea;

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("genus table is empty")]
    EmptyTable,
    #[error("genus {0:?} listed twice")]
    DuplicateGenus(String),
    #[error("total {total} is smaller than the {needed} macroareas with genera")]
    TotalTooSmall { total: usize, needed: usize },
    #[error("{macroarea}: quota {quota} but eligible candidates cover only {available} genera")]
    Infeasible {
        macroarea: Macroarea,
        quota: usize,
        available: usize,
    },
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Genera with their macroarea.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenusTable {
    rows: Vec<(String, Macroarea)>,
}

impl GenusTable {
    pub fn new(rows: Vec<(String, Macroarea)>) -> Result<Self, SamplingError> {
        let mut seen = HashSet::new();
        for (g, _) in &rows {
            if !seen.insert(g.as_str()) {
                return Err(SamplingError::DuplicateGenus(g.clone()));
            }
        }
        Ok(Self { rows })
    }

    /// Builds a table from per-language rows, assigning each genus the
    /// macroarea most of its languages belong to (ties: first in
    /// [`Macroarea::ALL`] order).
    pub fn from_language_rows(
        rows: impl IntoIterator<Item = (String, Macroarea)>,
    ) -> Result<Self, SamplingError> {
        let mut votes: BTreeMap<String, BTreeMap<Macroarea, usize>> = BTreeMap::new();
        for (genus, m) in rows {
            *votes.entry(genus).or_default().entry(m).or_default() += 1;
        }
        let rows = votes
            .into_iter()
            .map(|(g, v)| {
                let best = v
                    .iter()
                    .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                    .map(|(m, _)| *m)
                    .expect("at least one vote");
                (g, best)
            })
            .collect();
        Self::new(rows)
    }

    pub fn rows(&self) -> &[(String, Macroarea)] {
        &self.rows
    }

    pub fn counts(&self) -> BTreeMap<Macroarea, usize> {
        let mut out = BTreeMap::new();
        for (_, m) in &self.rows {
            *out.entry(*m).or_insert(0) += 1;
        }
        out
    }
}

#[derive(Deserialize)]
struct GenusRow {
    #[serde(alias = "Genus", alias = "name", alias = "Name")]
    genus: String,
    #[serde(alias = "Macroarea")]
    macroarea: String,
}

/// Reads a CSV with `genus` and `macroarea` columns. With `per_language`,
/// repeated genera are resolved by majority macroarea; otherwise they are an
/// error.
pub fn load_genus_table(path: &Path, per_language: bool) -> Result<GenusTable, SamplingError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| parse_err(path, 0, e))?;
    let mut rows = Vec::new();
    for (i, rec) in reader.deserialize::<GenusRow>().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(path, line, e))?;
        let m: Macroarea = rec
            .macroarea
            .parse()
            .map_err(|e| parse_err(path, line, e))?;
        rows.push((rec.genus, m));
    }
    if per_language {
        GenusTable::from_language_rows(rows)
    } else {
        GenusTable::new(rows)
    }
}

fn parse_err(path: &Path, line: usize, e: impl std::fmt::Display) -> SamplingError {
    SamplingError::Parse {
        path: path.display().to_string(),
        line,
        message: e.to_string(),
    }
}

/// Target number of languages per macroarea.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quota {
    pub counts: BTreeMap<Macroarea, usize>,
}

impl Quota {
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn get(&self, m: Macroarea) -> usize {
        self.counts.get(&m).copied().unwrap_or(0)
    }
}

/// Splits `total` in proportion to genus counts with largest-remainder
/// rounding. Equal remainders go to the larger share, then to the earlier
/// macroarea.
pub fn macroarea_quota(table: &GenusTable, total: usize) -> Result<Quota, SamplingError> {
    quota_from_counts(&table.counts(), total)
}

pub fn quota_from_counts(
    counts: &BTreeMap<Macroarea, usize>,
    total: usize,
) -> Result<Quota, SamplingError> {
    let n: usize = counts.values().sum();
    if n == 0 {
        return Err(SamplingError::EmptyTable);
    }
    let nonzero = counts.values().filter(|&&c| c > 0).count();
    if total < nonzero {
        return Err(SamplingError::TotalTooSmall {
            total,
            needed: nonzero,
        });
    }
    // exact integer arithmetic: total*c = q*n + r
    let mut out = BTreeMap::new();
    let mut rems = Vec::new();
    for (&m, &c) in counts {
        let scaled = total * c;
        out.insert(m, scaled / n);
        rems.push((scaled % n, c, m));
    }
    let assigned: usize = out.values().sum();
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
    for &(_, _, m) in rems.iter().take(total - assigned) {
        *out.get_mut(&m).expect("present") += 1;
    }
    Ok(Quota { counts: out })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub language_name: String,
    pub glottocode: String,
    pub genus: String,
    pub macroarea: Macroarea,
    pub doc_language: String,
    pub doctypes: Vec<String>,
}

impl Candidate {
    pub fn is_eligible(&self) -> bool {
        self.doc_language.trim().eq_ignore_ascii_case("english")
            && self.doctypes.iter().any(|t| {
                matches!(
                    t.trim().to_ascii_lowercase().as_str(),
                    "grammar" | "grammar_sketch"
                )
            })
    }
}

/// Picks `quota[m]` eligible candidates per macroarea, at most one per
/// genus. Genera are drawn uniformly, then one candidate within each genus.
/// Only the first eligible entry per glottocode is considered.
pub fn stratified_sample(
    candidates: &[Candidate],
    quota: &Quota,
    seed: u64,
) -> Result<Vec<Candidate>, SamplingError> {
    let mut seen = HashSet::new();
    let mut by_area: HashMap<Macroarea, BTreeMap<&str, Vec<&Candidate>>> = HashMap::new();
    for c in candidates.iter().filter(|c| c.is_eligible()) {
        if !seen.insert(c.glottocode.as_str()) {
            continue;
        }
        by_area
            .entry(c.macroarea)
            .or_default()
            .entry(c.genus.as_str())
            .or_default()
            .push(c);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(quota.total());
    for m in Macroarea::ALL {
        let q = quota.get(m);
        let genera = by_area.remove(&m).unwrap_or_default();
        if genera.len() < q {
            return Err(SamplingError::Infeasible {
                macroarea: m,
                quota: q,
                available: genera.len(),
            });
        }
        let names: Vec<&str> = genera.keys().copied().collect();
        for g in names.choose_multiple(&mut rng, q) {
            let pick = genera[g].choose(&mut rng).expect("non-empty genus");
            out.push((*pick).clone());
        }
    }
    out.sort_by(|a, b| {
        a.macroarea
            .cmp(&b.macroarea)
            .then_with(|| a.language_name.cmp(&b.language_name))
            .then_with(|| a.glottocode.cmp(&b.glottocode))
    });
    Ok(out)
}

pub fn load_candidates(path: &Path) -> Result<Vec<Candidate>, SamplingError> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| parse_err(path, i + 1, e))?);
    }
    Ok(out)
}

#[derive(Serialize)]
struct SelectedRow<'a> {
    #[serde(flatten)]
    candidate: &'a Candidate,
    selected: bool,
}

/// Writes the selection as JSONL with `"selected": true` on every line.
pub fn write_manifest(mut w: impl Write, selected: &[Candidate]) -> std::io::Result<()> {
    for c in selected {
        let row = SelectedRow {
            candidate: c,
            selected: true,
        };
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Distinct genera per macroarea among eligible candidates.
pub fn eligible_genera(candidates: &[Candidate]) -> BTreeMap<Macroarea, BTreeSet<String>> {
    let mut out: BTreeMap<Macroarea, BTreeSet<String>> = BTreeMap::new();
    for c in candidates.iter().filter(|c| c.is_eligible()) {
        out.entry(c.macroarea).or_default().insert(c.genus.clone());
    }
    out
}
