//! Corpus ingestion, seeded subsampling and splitting, instruction rendering
//! and preference-triple construction.
//!
//! Corpora are JSON lines, one `{"id", "molecule", "caption", "category"?}`
//! object per line. Triples are persisted as JSON lines
//! `{"id", "direction", "x", "y_w", "y_l"}`.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::item_seed;
use crate::policy::{DecodeMode, TabularBigramPolicy};

const MOL2LANG_TEMPLATE: &str = include_str!("../templates/mol2lang.txt");
const LANG2MOL_TEMPLATE: &str = include_str!("../templates/lang2mol.txt");
const SOURCE_SLOT: &str = "{source}";

// floor(fraction · n) tolerates representation error such as 0.29 · 100
const FLOOR_SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate id {id:?} at line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("dis-preferred outputs do not cover id {0:?}")]
    MissingOutput(String),
    #[error("{0}")]
    Domain(String),
    #[error("policy error: {0}")]
    Policy(#[from] crate::policy::PolicyError),
}

pub type Result<T> = std::result::Result<T, DataError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One language-molecule pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub molecule: String,
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

impl PairRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.molecule.trim().is_empty() {
            return Err(format!("record {:?} has an empty molecule", self.id));
        }
        if self.caption.trim().is_empty() {
            return Err(format!("record {:?} has an empty caption", self.id));
        }
        Ok(())
    }
}

/// Translation direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Mol2Lang,
    Lang2Mol,
}

impl Direction {
    pub const ALL: [Direction; 2] = [Direction::Mol2Lang, Direction::Lang2Mol];

    pub fn source<'a>(&self, record: &'a PairRecord) -> &'a str {
        match self {
            Direction::Mol2Lang => &record.molecule,
            Direction::Lang2Mol => &record.caption,
        }
    }

    pub fn target<'a>(&self, record: &'a PairRecord) -> &'a str {
        match self {
            Direction::Mol2Lang => &record.caption,
            Direction::Lang2Mol => &record.molecule,
        }
    }

    /// Phrase every rendered prompt of this direction contains.
    pub fn signature_phrase(&self) -> &'static str {
        match self {
            Direction::Mol2Lang => "could you formulate a caption about",
            Direction::Lang2Mol => "generate a molecule smile string",
        }
    }

    fn template(&self) -> &'static str {
        match self {
            Direction::Mol2Lang => MOL2LANG_TEMPLATE,
            Direction::Lang2Mol => LANG2MOL_TEMPLATE,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Mol2Lang => "mol2lang",
            Direction::Lang2Mol => "lang2mol",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mol2lang" => Ok(Direction::Mol2Lang),
            "lang2mol" => Ok(Direction::Lang2Mol),
            other => Err(DataError::Domain(format!(
                "unknown direction {other:?} (expected mol2lang or lang2mol)"
            ))),
        }
    }
}

/// `(x, y_w, y_l)` with provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceTriple {
    pub id: String,
    pub direction: Direction,
    pub x: String,
    pub y_w: String,
    pub y_l: String,
}

/// Train/validation/test fractions and the shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub fractions: (f64, f64, f64),
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.fractions;
        for f in [a, b, c] {
            if !f.is_finite() || f < 0.0 {
                return Err(DataError::Domain(format!("split fraction {f} is invalid")));
            }
        }
        if (a + b + c - 1.0).abs() > 1e-9 {
            return Err(DataError::Domain(format!(
                "split fractions sum to {}, expected 1",
                a + b + c
            )));
        }
        Ok(())
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(io_err(path))?;
    BufReader::new(file)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(io_err(path))
}

/// Parses a JSON-lines corpus. Blank lines are skipped; line numbers are
/// 1-based and count blank lines.
pub fn parse_pairs(reader: impl Read) -> Result<Vec<PairRecord>> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| DataError::Malformed {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PairRecord = serde_json::from_str(&line).map_err(|e| DataError::Malformed {
            line: lineno,
            message: e.to_string(),
        })?;
        record
            .validate()
            .map_err(|message| DataError::Malformed { line: lineno, message })?;
        if !seen.insert(record.id.clone()) {
            return Err(DataError::DuplicateId {
                id: record.id,
                line: lineno,
            });
        }
        records.push(record);
    }
    Ok(records)
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<PairRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    parse_pairs(file)
}

/// Imports a tab-separated corpus with header `id, molecule, caption` and an
/// optional `category` column.
pub fn load_pairs_tsv(path: impl AsRef<Path>) -> Result<Vec<PairRecord>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| DataError::Malformed {
            line: 1,
            message: e.to_string(),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| DataError::Malformed {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (Some(id_col), Some(mol_col), Some(cap_col)) = (col("id"), col("molecule"), col("caption")) else {
        return Err(DataError::Malformed {
            line: 1,
            message: "header must name id, molecule and caption columns".into(),
        });
    };
    let cat_col = col("category");
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in reader.records().enumerate() {
        let lineno = i + 2;
        let row = row.map_err(|e| DataError::Malformed {
            line: lineno,
            message: e.to_string(),
        })?;
        let field = |c: usize| row.get(c).map(str::to_string);
        let (Some(id), Some(molecule), Some(caption)) = (field(id_col), field(mol_col), field(cap_col)) else {
            return Err(DataError::Malformed {
                line: lineno,
                message: "missing column".into(),
            });
        };
        let record = PairRecord {
            id,
            molecule,
            caption,
            category: cat_col.and_then(field).filter(|c| !c.is_empty()),
        };
        record
            .validate()
            .map_err(|message| DataError::Malformed { line: lineno, message })?;
        if !seen.insert(record.id.clone()) {
            return Err(DataError::DuplicateId {
                id: record.id,
                line: lineno,
            });
        }
        records.push(record);
    }
    Ok(records)
}

/// Writes any serializable items as JSON lines.
pub fn write_jsonl<T: Serialize>(writer: impl Write, items: &[T]) -> std::io::Result<()> {
    let mut w = BufWriter::new(writer);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn save_pairs(path: impl AsRef<Path>, records: &[PairRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    write_jsonl(file, records).map_err(io_err(path))
}

pub fn save_triples(path: impl AsRef<Path>, triples: &[PreferenceTriple]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    write_jsonl(file, triples).map_err(io_err(path))
}

pub fn load_triples(path: impl AsRef<Path>) -> Result<Vec<PreferenceTriple>> {
    let path = path.as_ref();
    let mut triples = Vec::new();
    for (i, line) in read_lines(path)?.into_iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let t: PreferenceTriple = serde_json::from_str(&line).map_err(|e| DataError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        if t.y_w == t.y_l {
            return Err(DataError::Malformed {
                line: i + 1,
                message: format!("triple {:?} has identical preferred and dis-preferred outputs", t.id),
            });
        }
        triples.push(t);
    }
    Ok(triples)
}

#[derive(Deserialize)]
struct OutputLine {
    id: String,
    output: String,
}

/// Loads `{id, output}` JSON lines into a lookup table.
pub fn load_outputs(path: impl AsRef<Path>) -> Result<HashMap<String, String>> {
    let path = path.as_ref();
    let mut map = HashMap::new();
    for (i, line) in read_lines(path)?.into_iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let o: OutputLine = serde_json::from_str(&line).map_err(|e| DataError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        if map.insert(o.id.clone(), o.output).is_some() {
            return Err(DataError::DuplicateId { id: o.id, line: i + 1 });
        }
    }
    Ok(map)
}

fn floor_count(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64 + FLOOR_SLACK).floor() as usize).min(n)
}

/// Seeded uniform sample without replacement of `⌊fraction·N⌋` records
/// (at least one), returned in original order.
pub fn subsample(records: &[PairRecord], fraction: f64, seed: u64) -> Result<Vec<PairRecord>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DataError::Domain(format!(
            "subsample fraction must lie in (0, 1], got {fraction}"
        )));
    }
    if records.is_empty() {
        return Err(DataError::Domain("cannot subsample an empty corpus".into()));
    }
    let k = floor_count(fraction, records.len()).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, records.len(), k).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| records[i].clone()).collect())
}

/// Seeded shuffle, then contiguous cut: `⌊f_train·N⌋` train,
/// `⌊f_val·N⌋` validation, remainder test.
pub fn split(records: &[PairRecord], spec: &SplitSpec) -> Result<(Vec<PairRecord>, Vec<PairRecord>, Vec<PairRecord>)> {
    spec.validate()?;
    if records.is_empty() {
        return Err(DataError::Domain("cannot split an empty corpus".into()));
    }
    let n = records.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let n_train = floor_count(spec.fractions.0, n);
    let n_val = floor_count(spec.fractions.1, n).min(n - n_train);
    let take = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    Ok((
        take(&order[..n_train]),
        take(&order[n_train..n_train + n_val]),
        take(&order[n_train + n_val..]),
    ))
}

/// Renders the instruction prompt for `record` in `direction`; the response
/// slot is left empty.
pub fn render_instruction(record: &PairRecord, direction: Direction) -> String {
    render_source(direction.source(record), direction)
}

pub fn render_source(source: &str, direction: Direction) -> String {
    let template = direction.template();
    let at = template
        .find(SOURCE_SLOT)
        .expect("instruction template has a source slot");
    let mut out = String::with_capacity(template.len() + source.len());
    out.push_str(&template[..at]);
    out.push_str(source);
    out.push_str(&template[at + SOURCE_SLOT.len()..]);
    out
}

/// Where dis-preferred outputs come from.
#[derive(Debug, Clone)]
pub enum DispreferredSource<'a> {
    /// JSON lines `{id, output}` covering every record id.
    FromFile(PathBuf),
    /// Seeded random character edits of the gold target.
    FromNoiser { seed: u64, edit_rate: f64 },
    /// Greedy decode of a policy.
    FromPolicy {
        policy: &'a TabularBigramPolicy,
        max_len: usize,
    },
}

impl DispreferredSource<'_> {
    pub fn route(&self) -> &'static str {
        match self {
            DispreferredSource::FromFile(_) => "file",
            DispreferredSource::FromNoiser { .. } => "noiser",
            DispreferredSource::FromPolicy { .. } => "policy",
        }
    }
}

/// Result of [`build_triples`]: the triples plus the ids dropped because the
/// source reproduced the gold target.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleBuild {
    pub triples: Vec<PreferenceTriple>,
    pub dropped: Vec<String>,
    pub route: &'static str,
}

/// Applies seeded character edits (substitute/insert/delete, each with
/// probability `edit_rate` per input character) and guarantees at least one
/// effective edit. Returns the noised text and the number of edits.
pub fn noise_text(text: &str, edit_rate: f64, alphabet: &[char], rng: &mut impl Rng) -> (String, usize) {
    let chars: Vec<char> = text.chars().collect();
    let pick = |rng: &mut dyn rand::RngCore, exclude: Option<char>| -> Option<char> {
        let pool: Vec<char> = alphabet.iter().copied().filter(|&c| Some(c) != exclude).collect();
        if pool.is_empty() {
            None
        } else {
            Some(pool[rng.gen_range(0..pool.len())])
        }
    };
    let mut out = Vec::with_capacity(chars.len() + 4);
    let mut edits = 0usize;
    for &c in &chars {
        if rng.gen::<f64>() >= edit_rate {
            out.push(c);
            continue;
        }
        edits += 1;
        match rng.gen_range(0..3u8) {
            0 => match pick(rng, Some(c)) {
                Some(s) => out.push(s),
                None => out.push(c),
            },
            1 => {
                if let Some(s) = pick(rng, None) {
                    out.push(s);
                }
                out.push(c);
            }
            _ => {}
        }
    }
    if out == chars {
        // forced edit: a deletion or an insertion always changes the string
        let prefer_insert = chars.len() < 2 || rng.gen_bool(0.5);
        match pick(rng, None) {
            Some(s) if prefer_insert || out.is_empty() => {
                let at = rng.gen_range(0..=out.len());
                out.insert(at, s);
            }
            _ if !out.is_empty() => {
                let at = rng.gen_range(0..out.len());
                out.remove(at);
            }
            // empty text and empty alphabet: nothing can change
            _ => return (String::new(), edits),
        }
        edits += 1;
    }
    (out.into_iter().collect(), edits)
}

/// Builds preference triples: `y_w` is the gold target, `y_l` comes from
/// `source`. Records whose file or policy output equals the gold target are
/// dropped and tallied.
pub fn build_triples(
    records: &[PairRecord],
    direction: Direction,
    source: &DispreferredSource<'_>,
) -> Result<TripleBuild> {
    let mut seen = HashSet::new();
    for r in records {
        r.validate().map_err(DataError::Domain)?;
        if !seen.insert(r.id.as_str()) {
            return Err(DataError::DuplicateId {
                id: r.id.clone(),
                line: 0,
            });
        }
    }
    let file_outputs = match source {
        DispreferredSource::FromFile(path) => Some(load_outputs(path)?),
        _ => None,
    };
    if let DispreferredSource::FromNoiser { edit_rate, .. } = source {
        if !(0.0..=1.0).contains(edit_rate) {
            return Err(DataError::Domain(format!(
                "edit rate must lie in [0, 1], got {edit_rate}"
            )));
        }
    }
    let alphabet: Vec<char> = records
        .iter()
        .flat_map(|r| direction.target(r).chars())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let mut triples = Vec::with_capacity(records.len());
    let mut dropped = Vec::new();
    for record in records {
        let y_w = direction.target(record).to_string();
        let y_l = match source {
            DispreferredSource::FromFile(_) => file_outputs
                .as_ref()
                .and_then(|m| m.get(&record.id))
                .cloned()
                .ok_or_else(|| DataError::MissingOutput(record.id.clone()))?,
            DispreferredSource::FromNoiser { seed, edit_rate } => {
                let key = format!("{}\u{1f}{}", direction, record.id);
                let mut rng = ChaCha8Rng::seed_from_u64(item_seed(*seed, &key));
                noise_text(&y_w, *edit_rate, &alphabet, &mut rng).0
            }
            DispreferredSource::FromPolicy { policy, max_len } => {
                let x = render_instruction(record, direction);
                policy.generate(&x, *max_len, DecodeMode::Greedy)
            }
        };
        if y_l == y_w {
            dropped.push(record.id.clone());
            continue;
        }
        triples.push(PreferenceTriple {
            id: record.id.clone(),
            direction,
            x: render_instruction(record, direction),
            y_w,
            y_l,
        });
    }
    Ok(TripleBuild {
        triples,
        dropped,
        route: source.route(),
    })
}
