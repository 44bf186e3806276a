//! Surface metrics for generated captions and molecules: chrF, BLEU, ROUGE,
//! Levenshtein, exact match, Morgan-Tanimoto, validity and length bias,
//! plus a batch runner producing a [`MetricReport`].

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Direction;
use crate::smiles;

/// Smoothing constant replacing zero BLEU match counts.
pub const BLEU_EPSILON: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("{0}")]
    Domain(String),
    #[error("no pairs to evaluate")]
    Empty,
    #[error("duplicate pair id {0:?}")]
    DuplicateId(String),
    #[error("worker pool: {0}")]
    Pool(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, MetricError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalPair {
    pub id: String,
    pub generated: String,
    pub reference: String,
}

impl EvalPair {
    pub fn new(id: impl Into<String>, generated: impl Into<String>, reference: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            generated: generated.into(),
            reference: reference.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tokenizer {
    Caption,
    Smiles,
}

/// A score with an optional note explaining a degenerate case.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scored<T> {
    pub value: T,
    pub diagnostic: Option<String>,
}

impl<T> Scored<T> {
    fn clean(value: T) -> Self {
        Self {
            value,
            diagnostic: None,
        }
    }
}

/// Lowercased alphanumeric runs; every other non-space character is its own
/// token.
pub fn caption_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_alphanumeric() {
            word.push(c);
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            out.push(c.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// SMILES lexer tokens of the trimmed text; characters when it does not lex.
pub fn smiles_tokens(text: &str) -> Scored<Vec<String>> {
    match smiles::tokenize(text.trim()) {
        Ok(t) => Scored::clean(t.into_iter().map(|t| t.text).collect()),
        Err(e) => Scored {
            value: text.chars().filter(|c| !c.is_whitespace()).map(String::from).collect(),
            diagnostic: Some(format!("character tokens used: {e}")),
        },
    }
}

fn tokens(text: &str, tokenizer: Tokenizer) -> Scored<Vec<String>> {
    match tokenizer {
        Tokenizer::Caption => Scored::clean(caption_tokens(text)),
        Tokenizer::Smiles => smiles_tokens(text),
    }
}

fn count<T: Ord + Clone>(items: impl IntoIterator<Item = T>) -> BTreeMap<T, usize> {
    let mut m = BTreeMap::new();
    for it in items {
        *m.entry(it).or_insert(0) += 1;
    }
    m
}

fn clipped_matches<T: Ord>(hyp: &BTreeMap<T, usize>, reference: &BTreeMap<T, usize>) -> usize {
    hyp.iter()
        .map(|(k, &c)| c.min(reference.get(k).copied().unwrap_or(0)))
        .sum()
}

fn token_ngrams(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    count(tokens.windows(n))
}

/// Character n-gram multiset, whitespace removed first.
pub fn char_ngrams(text: &str, n: usize) -> BTreeMap<String, usize> {
    assert!(n >= 1, "n-gram order must be positive");
    let chars: Vec<char> = text.chars().filter(|c| !c.is_whitespace()).collect();
    count(chars.windows(n).map(|w| w.iter().collect::<String>()))
}

/// Character n-gram F-score over orders `1..=max_n`.
pub fn chrf(pair: &EvalPair, max_n: usize, beta: f64) -> Result<f64> {
    if max_n == 0 {
        return Err(MetricError::Domain("chrF max_n must be >= 1".into()));
    }
    if !(beta.is_finite() && beta > 0.0) {
        return Err(MetricError::Domain(format!("chrF beta must be > 0, got {beta}")));
    }
    let (mut p_sum, mut r_sum) = (0.0, 0.0);
    for n in 1..=max_n {
        let h = char_ngrams(&pair.generated, n);
        let r = char_ngrams(&pair.reference, n);
        let (hn, rn) = (h.values().sum::<usize>(), r.values().sum::<usize>());
        let (p, rc) = match (hn, rn) {
            (0, 0) => (1.0, 1.0),
            (0, _) | (_, 0) => (0.0, 0.0),
            _ => {
                let m = clipped_matches(&h, &r) as f64;
                (m / hn as f64, m / rn as f64)
            }
        };
        p_sum += p;
        r_sum += rc;
    }
    let (p, r) = (p_sum / max_n as f64, r_sum / max_n as f64);
    let b2 = beta * beta;
    let denom = b2 * p + r;
    Ok(if denom == 0.0 { 0.0 } else { (1.0 + b2) * p * r / denom })
}

/// Clipped-precision BLEU with add-ε smoothing and brevity penalty.
pub fn bleu(pair: &EvalPair, max_n: usize, tokenizer: Tokenizer) -> Result<Scored<f64>> {
    if max_n != 2 && max_n != 4 {
        return Err(MetricError::Domain(format!("BLEU max_n must be 2 or 4, got {max_n}")));
    }
    let hyp = tokens(&pair.generated, tokenizer);
    let reference = tokens(&pair.reference, tokenizer);
    let mut notes: Vec<String> = hyp.diagnostic.iter().chain(&reference.diagnostic).cloned().collect();
    if hyp.value.is_empty() {
        notes.push("empty hypothesis".into());
        return Ok(Scored {
            value: 0.0,
            diagnostic: Some(notes.join("; ")),
        });
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let h = token_ngrams(&hyp.value, n);
        let r = token_ngrams(&reference.value, n);
        let total = h.values().sum::<usize>();
        let matches = clipped_matches(&h, &r) as f64;
        log_sum += (matches.max(BLEU_EPSILON) / total.max(1) as f64).ln();
    }
    let (hl, rl) = (hyp.value.len() as f64, reference.value.len() as f64);
    let bp = if hl < rl { (1.0 - rl / hl).exp() } else { 1.0 };
    Ok(Scored {
        value: bp * (log_sum / max_n as f64).exp(),
        diagnostic: (!notes.is_empty()).then(|| notes.join("; ")),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RougeVariant {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "L")]
    L,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(matches: usize, hyp: usize, reference: usize) -> Self {
        let p = if hyp == 0 { 0.0 } else { matches as f64 / hyp as f64 };
        let r = if reference == 0 {
            0.0
        } else {
            matches as f64 / reference as f64
        };
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        Self {
            precision: p,
            recall: r,
            f1,
        }
    }
}

/// Longest common subsequence length of two token slices.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// ROUGE-1/2 (clipped n-gram overlap) or ROUGE-L (LCS) on caption tokens.
pub fn rouge(pair: &EvalPair, variant: RougeVariant) -> Scored<Prf> {
    let hyp = caption_tokens(&pair.generated);
    let reference = caption_tokens(&pair.reference);
    if hyp.is_empty() && reference.is_empty() {
        return Scored {
            value: Prf::from_counts(0, 0, 0),
            diagnostic: Some("both sides empty".into()),
        };
    }
    let value = match variant {
        RougeVariant::L => Prf::from_counts(lcs_len(&hyp, &reference), hyp.len(), reference.len()),
        RougeVariant::One | RougeVariant::Two => {
            let n = if variant == RougeVariant::One { 1 } else { 2 };
            let h = token_ngrams(&hyp, n);
            let r = token_ngrams(&reference, n);
            Prf::from_counts(clipped_matches(&h, &r), h.values().sum(), r.values().sum())
        }
    };
    Scored::clean(value)
}

/// Character-level edit distance with unit costs.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// 1 when the whitespace-trimmed strings are equal; no canonicalisation.
pub fn exact_match(pair: &EvalPair) -> f64 {
    f64::from(u8::from(pair.generated.trim() == pair.reference.trim()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthUnit {
    Char,
    Token,
}

impl LengthUnit {
    pub fn length(self, text: &str) -> usize {
        match self {
            LengthUnit::Char => text.chars().count(),
            LengthUnit::Token => caption_tokens(text).len(),
        }
    }
}

/// Distribution of `len(generated) − len(reference)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasStats {
    pub unit: LengthUnit,
    pub mean_delta: f64,
    pub median_delta: f64,
    pub p10: f64,
    pub p90: f64,
}

/// Percentile with linear interpolation between closest ranks.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn length_bias(pairs: &[EvalPair], unit: LengthUnit) -> Result<BiasStats> {
    if pairs.is_empty() {
        return Err(MetricError::Domain("length bias needs at least one pair".into()));
    }
    let mut deltas: Vec<f64> = pairs
        .iter()
        .map(|p| unit.length(&p.generated) as f64 - unit.length(&p.reference) as f64)
        .collect();
    let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
    deltas.sort_by(f64::total_cmp);
    Ok(BiasStats {
        unit,
        mean_delta: mean,
        median_delta: percentile(&deltas, 0.5),
        p10: percentile(&deltas, 0.1),
        p90: percentile(&deltas, 0.9),
    })
}

/// Metric settings, echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub chrf_beta: f64,
    pub chrf_max_n: usize,
    /// Order of the single BLEU score reported for molecules.
    pub bleu_max_n: usize,
    pub fingerprint_radius: u32,
    pub fingerprint_nbits: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            chrf_beta: 2.0,
            chrf_max_n: 3,
            bleu_max_n: 4,
            fingerprint_radius: 2,
            fingerprint_nbits: 2048,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chrf_max_n == 0 || !(self.chrf_beta.is_finite() && self.chrf_beta > 0.0) {
            return Err(MetricError::Domain("chrF needs max_n >= 1 and beta > 0".into()));
        }
        if self.bleu_max_n != 2 && self.bleu_max_n != 4 {
            return Err(MetricError::Domain(format!(
                "BLEU max_n must be 2 or 4, got {}",
                self.bleu_max_n
            )));
        }
        if self.fingerprint_nbits == 0 {
            return Err(MetricError::Domain("fingerprint_nbits must be >= 1".into()));
        }
        Ok(())
    }

    /// The configuration plus the fixed conventions behind each number.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::json!({
            "chrf_beta": self.chrf_beta,
            "chrf_max_n": self.chrf_max_n,
            "chrf_whitespace": "removed before n-gram extraction",
            "bleu_max_n": self.bleu_max_n,
            "bleu_smoothing": format!("add-epsilon {BLEU_EPSILON:e} on zero match counts"),
            "caption_tokenizer": "lowercase alphanumeric runs, punctuation as single tokens",
            "smiles_tokenizer": "SMILES lexer, characters when lexing fails",
            "rouge_tokenizer": "caption",
            "fingerprint": {
                "kind": "morgan-style circular, FNV-1a 64",
                "radius": self.fingerprint_radius,
                "nbits": self.fingerprint_nbits,
            },
            "exact_match": "whitespace-trimmed raw strings, no canonicalisation",
            "validity": "validity (this tool's definition): parses and neutral non-aromatic organic atoms within default valence",
            "aggregation": "corpus value = mean over pairs where the metric is defined",
        })
    }
}

/// Per-pair and corpus metric values with configuration provenance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub direction: Direction,
    pub per_pair: BTreeMap<String, BTreeMap<String, f64>>,
    pub corpus: BTreeMap<String, f64>,
    /// Number of pairs contributing to each corpus value.
    pub counts: BTreeMap<String, usize>,
    pub length_bias: BiasStats,
    pub diagnostics: BTreeMap<String, Vec<String>>,
    pub config: serde_json::Value,
}

impl MetricReport {
    /// One row per pair, one column per metric; undefined values are empty.
    pub fn write_csv(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let names: Vec<&String> = self.corpus.keys().collect();
        let mut header = vec!["id"];
        header.extend(names.iter().map(|s| s.as_str()));
        w.write_record(&header)?;
        for (id, metrics) in &self.per_pair {
            let mut row = vec![id.clone()];
            row.extend(
                names
                    .iter()
                    .map(|n| metrics.get(*n).map(|v| v.to_string()).unwrap_or_default()),
            );
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

struct PairResult {
    metrics: BTreeMap<String, f64>,
    notes: Vec<String>,
}

fn note(notes: &mut Vec<String>, metric: &str, d: Option<String>) {
    if let Some(d) = d {
        notes.push(format!("{metric}: {d}"));
    }
}

fn mol2lang_metrics(pair: &EvalPair, cfg: &MetricConfig) -> Result<PairResult> {
    let mut m = BTreeMap::new();
    let mut notes = Vec::new();
    for n in [2, 4] {
        let b = bleu(pair, n, Tokenizer::Caption)?;
        note(&mut notes, &format!("bleu{n}"), b.diagnostic);
        m.insert(format!("bleu{n}"), b.value);
    }
    for (name, v) in [
        ("rouge1", RougeVariant::One),
        ("rouge2", RougeVariant::Two),
        ("rougeL", RougeVariant::L),
    ] {
        let r = rouge(pair, v);
        note(&mut notes, name, r.diagnostic);
        m.insert(format!("{name}_f1"), r.value.f1);
    }
    m.insert("chrf".into(), chrf(pair, cfg.chrf_max_n, cfg.chrf_beta)?);
    Ok(PairResult { metrics: m, notes })
}

fn lang2mol_metrics(pair: &EvalPair, cfg: &MetricConfig) -> Result<PairResult> {
    let mut m = BTreeMap::new();
    let mut notes = Vec::new();
    let b = bleu(pair, cfg.bleu_max_n, Tokenizer::Smiles)?;
    note(&mut notes, "bleu", b.diagnostic);
    m.insert("bleu".into(), b.value);
    m.insert("exact_match".into(), exact_match(pair));
    m.insert(
        "levenshtein".into(),
        levenshtein(pair.generated.trim(), pair.reference.trim()) as f64,
    );
    m.insert("chrf".into(), chrf(pair, cfg.chrf_max_n, cfg.chrf_beta)?);

    let (gen_ok, gen_diag) = smiles::is_valid(pair.generated.trim());
    let (ref_ok, _) = smiles::is_valid(pair.reference.trim());
    m.insert("validity".into(), f64::from(u8::from(gen_ok)));
    m.insert("reference_validity".into(), f64::from(u8::from(ref_ok)));
    for d in gen_diag {
        notes.push(format!("validity: {}", d.message));
    }

    match (
        smiles::parse(pair.generated.trim()),
        smiles::parse(pair.reference.trim()),
    ) {
        (Ok(g), Ok(r)) => {
            let fp = |x| smiles::morgan_fingerprint(x, cfg.fingerprint_radius, cfg.fingerprint_nbits);
            match (fp(&g), fp(&r)) {
                (Ok(a), Ok(b)) => {
                    let t = smiles::tanimoto(&a, &b).map_err(|e| MetricError::Domain(e.to_string()))?;
                    m.insert("morgan_tanimoto".into(), t);
                }
                (Err(e), _) | (_, Err(e)) => return Err(MetricError::Domain(e.to_string())),
            }
        }
        (Err(e), _) => notes.push(format!("morgan_tanimoto: generated does not parse: {e}")),
        (_, Err(e)) => notes.push(format!("morgan_tanimoto: reference does not parse: {e}")),
    }
    Ok(PairResult { metrics: m, notes })
}

/// Computes the direction's metric suite over `pairs` on up to `jobs`
/// threads. Results do not depend on scheduling.
pub fn evaluate(pairs: &[EvalPair], direction: Direction, config: &MetricConfig, jobs: usize) -> Result<MetricReport> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut seen = HashSet::new();
    for p in pairs {
        if !seen.insert(p.id.as_str()) {
            return Err(MetricError::DuplicateId(p.id.clone()));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| MetricError::Pool(e.to_string()))?;
    let results: Vec<Result<PairResult>> = pool.install(|| {
        pairs
            .par_iter()
            .map(|p| match direction {
                Direction::Mol2Lang => mol2lang_metrics(p, config),
                Direction::Lang2Mol => lang2mol_metrics(p, config),
            })
            .collect()
    });

    let mut per_pair = BTreeMap::new();
    let mut diagnostics = BTreeMap::new();
    for (p, r) in pairs.iter().zip(results) {
        let r = r?;
        if !r.notes.is_empty() {
            diagnostics.insert(p.id.clone(), r.notes);
        }
        per_pair.insert(p.id.clone(), r.metrics);
    }

    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for metrics in per_pair.values() {
        for (k, v) in metrics {
            let e = sums.entry(k.clone()).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }
    let corpus = sums.iter().map(|(k, (s, n))| (k.clone(), s / *n as f64)).collect();
    let counts = sums.into_iter().map(|(k, (_, n))| (k, n)).collect();

    let unit = match direction {
        Direction::Mol2Lang => LengthUnit::Token,
        Direction::Lang2Mol => LengthUnit::Char,
    };
    Ok(MetricReport {
        direction,
        per_pair,
        corpus,
        counts,
        length_bias: length_bias(pairs, unit)?,
        diagnostics,
        config: config.echo(),
    })
}
