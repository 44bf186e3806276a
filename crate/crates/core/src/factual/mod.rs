//! QA-based factual consistency of generated captions.
//!
//! Answer spans are selected from the generated caption, a question is
//! generated for each span, the question is answered from the reference
//! caption, and the answers are compared with the spans. Three scores come
//! out: overlap (0–5), token F1 and answerability.
//!
//! Question generation, answering and overlap scoring are pluggable; the
//! [`mock`] clients are deterministic and offline, [`http`] talks to an
//! external service.

pub mod http;
pub mod mock;

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpClient, QaServiceConfig, TranscriptEntry};
pub use mock::{MockQa, MockQg};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClientError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("{0}")]
    Failed(String),
}

#[derive(Debug, Error)]
pub enum FactualError {
    #[error("invalid service configuration: {0}")]
    Config(String),
    #[error("worker pool: {0}")]
    Pool(String),
    #[error("duplicate caption id {0:?}")]
    DuplicateId(String),
}

/// A candidate answer; offsets are character positions in the caption.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSpan {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Answer from a QA client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub text: Option<String>,
    /// Probability that the question is answerable, in `[0, 1]`.
    pub score: f64,
}

pub trait QuestionGenerator: Send + Sync {
    fn generate_question(&self, span: &AnswerSpan, caption: &str) -> Result<String, ClientError>;
}

pub trait QuestionAnswerer: Send + Sync {
    fn answer_question(&self, question: &str, reference: &str) -> Result<Answer, ClientError>;
}

/// Scores the semantic overlap of an answer with its span on a 0–5 scale.
pub trait OverlapScorer: Send + Sync {
    fn name(&self) -> &str;
    fn overlap(&self, predicted: Option<&str>, span: &str, f1: f64) -> Result<f64, ClientError>;
}

/// Default scorer: `5 × token F1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct F1Overlap;

impl OverlapScorer for F1Overlap {
    fn name(&self) -> &str {
        "5 x token F1"
    }

    fn overlap(&self, _predicted: Option<&str>, _span: &str, f1: f64) -> Result<f64, ClientError> {
        Ok(5.0 * f1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaItem {
    pub span: AnswerSpan,
    pub question: Option<String>,
    pub predicted_answer: Option<String>,
    pub answerable_score: f64,
    pub f1: f64,
    pub overlap: f64,
    /// Client failure that excluded this item from scoring.
    pub failure: Option<String>,
}

impl QaItem {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactualReport {
    pub overlap: f64,
    pub f1: f64,
    pub answerability: f64,
    pub items: Vec<QaItem>,
    pub failures: usize,
}

impl FactualReport {
    pub fn scored_items(&self) -> usize {
        self.items.len() - self.failures
    }

    /// Items exist and every one of them failed.
    pub fn all_failed(&self) -> bool {
        !self.items.is_empty() && self.failures == self.items.len()
    }
}

const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "all", "also", "an", "and", "any", "are", "as", "at", "be", "been", "being",
    "both", "but", "by", "can", "could", "do", "does", "each", "either", "for", "from", "had", "has", "have", "having",
    "he", "her", "here", "his", "how", "however", "i", "if", "in", "into", "is", "it", "its", "itself", "may", "more",
    "most", "no", "nor", "not", "of", "on", "one", "only", "or", "other", "our", "over", "per", "she", "should", "so",
    "some", "such", "than", "that", "the", "their", "them", "then", "there", "these", "they", "this", "those",
    "through", "to", "under", "up", "upon", "very", "via", "was", "we", "were", "what", "when", "where", "which",
    "while", "who", "whose", "why", "will", "with", "within", "without", "would", "you",
];

const VERB_SUFFIXES: &[&str] = &["ed", "ing"];

fn is_stopword(lower: &str) -> bool {
    STOPWORDS.contains(&lower)
}

fn looks_like_verb(lower: &str) -> bool {
    lower.chars().count() > 4 && VERB_SUFFIXES.iter().any(|s| lower.ends_with(s))
}

struct Word {
    /// Character offsets of the token with edge punctuation removed.
    start: usize,
    end: usize,
    core: String,
    trailing_break: bool,
}

fn words(text: &str) -> Vec<Word> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let tok_start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        let (mut s, mut e) = (tok_start, i);
        while s < e && !chars[s].is_alphanumeric() {
            s += 1;
        }
        while e > s && !chars[e - 1].is_alphanumeric() {
            e -= 1;
        }
        out.push(Word {
            start: s,
            end: e,
            core: chars[s..e].iter().collect(),
            trailing_break: chars[e..i]
                .iter()
                .any(|c| matches!(c, ',' | '.' | ';' | ':' | '!' | '?')),
        });
    }
    out
}

/// Rule-based noun-phrase chunking: maximal runs of content words.
///
/// Stopwords and `-ed`/`-ing` words break a run, except that capitalised
/// words always join it. Sentence punctuation after a word closes the run.
/// Spans are deduplicated by text, first occurrence kept.
pub fn select_answers(caption: &str) -> Vec<AnswerSpan> {
    let chars: Vec<char> = caption.chars().collect();
    let mut spans = Vec::new();
    let mut seen = HashSet::new();
    let mut run: Option<(usize, usize)> = None;
    let mut flush = |run: &mut Option<(usize, usize)>, spans: &mut Vec<AnswerSpan>| {
        if let Some((start, end)) = run.take() {
            let text: String = chars[start..end].iter().collect();
            if seen.insert(text.clone()) {
                spans.push(AnswerSpan { text, start, end });
            }
        }
    };
    for w in words(caption) {
        let lower = w.core.to_lowercase();
        let capitalised = w.core.chars().next().is_some_and(char::is_uppercase);
        let content = !w.core.is_empty() && !is_stopword(&lower) && (capitalised || !looks_like_verb(&lower));
        if !content {
            flush(&mut run, &mut spans);
            continue;
        }
        run = Some(match run {
            Some((s, _)) => (s, w.end),
            None => (w.start, w.end),
        });
        if w.trailing_break {
            flush(&mut run, &mut spans);
        }
    }
    flush(&mut run, &mut spans);
    spans
}

/// Lowercase, drop punctuation and the articles a/an/the, split on spaces.
pub fn normalize_answer(text: &str) -> Vec<String> {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    cleaned
        .split_whitespace()
        .filter(|t| !matches!(*t, "a" | "an" | "the"))
        .map(str::to_string)
        .collect()
}

/// Number of shared tokens, counting multiplicity.
pub fn bag_overlap(a: &[String], b: &[String]) -> usize {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for t in b {
        *counts.entry(t).or_insert(0) += 1;
    }
    a.iter()
        .filter(|t| match counts.get_mut(t.as_str()) {
            Some(c) if *c > 0 => {
                *c -= 1;
                true
            }
            _ => false,
        })
        .count()
}

/// Bag-of-tokens F1 after answer normalisation.
pub fn token_f1(predicted: &str, gold: &str) -> f64 {
    let p = normalize_answer(predicted);
    let g = normalize_answer(gold);
    match (p.is_empty(), g.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let common = bag_overlap(&p, &g) as f64;
    if common == 0.0 {
        return 0.0;
    }
    let precision = common / p.len() as f64;
    let recall = common / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Runs the pipeline with a question generator, answerer and overlap
/// scorer on a bounded worker pool.
pub struct FactualEvaluator {
    qg: Box<dyn QuestionGenerator>,
    qa: Box<dyn QuestionAnswerer>,
    scorer: Box<dyn OverlapScorer>,
    pool: rayon::ThreadPool,
}

/// Corpus aggregate: per-caption means averaged over captions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusFactualReport {
    pub overlap: f64,
    pub f1: f64,
    pub answerability: f64,
    pub overlap_scorer: String,
    pub aggregation: String,
    pub captions: usize,
    /// Captions that contributed to the means.
    pub scored_captions: usize,
    /// Captions with no selectable spans (contribute zeros).
    pub empty_captions: usize,
    /// Captions whose every item failed (excluded).
    pub failed_captions: usize,
    pub items: usize,
    pub failed_items: usize,
    pub per_caption: BTreeMap<String, FactualReport>,
}

impl CorpusFactualReport {
    pub fn all_failed(&self) -> bool {
        self.items > 0 && self.failed_items == self.items
    }
}

impl FactualEvaluator {
    pub fn new(
        qg: Box<dyn QuestionGenerator>,
        qa: Box<dyn QuestionAnswerer>,
        scorer: Box<dyn OverlapScorer>,
        jobs: usize,
    ) -> Result<Self, FactualError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| FactualError::Pool(e.to_string()))?;
        Ok(Self { qg, qa, scorer, pool })
    }

    /// Mock question generation and answering with the `5 × F1` scorer.
    pub fn mock(jobs: usize) -> Result<Self, FactualError> {
        Self::new(Box::new(MockQg), Box::new(MockQa), Box::new(F1Overlap), jobs)
    }

    pub fn scorer_name(&self) -> &str {
        self.scorer.name()
    }

    fn item(&self, span: AnswerSpan, generated: &str, reference: &str) -> QaItem {
        let mut item = QaItem {
            span,
            question: None,
            predicted_answer: None,
            answerable_score: 0.0,
            f1: 0.0,
            overlap: 0.0,
            failure: None,
        };
        let question = match self.qg.generate_question(&item.span, generated) {
            Ok(q) => q,
            Err(e) => {
                item.failure = Some(format!("question generation: {e}"));
                return item;
            }
        };
        item.question = Some(question.clone());
        let answer = match self.qa.answer_question(&question, reference) {
            Ok(a) => a,
            Err(e) => {
                item.failure = Some(format!("question answering: {e}"));
                return item;
            }
        };
        item.predicted_answer = answer.text;
        item.answerable_score = if item.predicted_answer.is_some() {
            answer.score
        } else {
            0.0
        };
        item.f1 = token_f1(item.predicted_answer.as_deref().unwrap_or(""), &item.span.text);
        match self
            .scorer
            .overlap(item.predicted_answer.as_deref(), &item.span.text, item.f1)
        {
            Ok(o) => item.overlap = o.clamp(0.0, 5.0),
            Err(e) => item.failure = Some(format!("overlap scoring: {e}")),
        }
        item
    }

    fn evaluate_in_pool(&self, generated: &str, reference: &str) -> FactualReport {
        let items: Vec<QaItem> = select_answers(generated)
            .into_par_iter()
            .map(|span| self.item(span, generated, reference))
            .collect();
        let failures = items.iter().filter(|i| i.failed()).count();
        let scored: Vec<&QaItem> = items.iter().filter(|i| !i.failed()).collect();
        let mean = |f: fn(&QaItem) -> f64| {
            if scored.is_empty() {
                0.0
            } else {
                scored.iter().map(|i| f(i)).sum::<f64>() / scored.len() as f64
            }
        };
        FactualReport {
            overlap: mean(|i| i.overlap),
            f1: mean(|i| i.f1),
            answerability: mean(|i| i.answerable_score),
            failures,
            items,
        }
    }

    /// Factual consistency of one generated caption against its reference.
    pub fn evaluate(&self, generated: &str, reference: &str) -> FactualReport {
        self.pool.install(|| self.evaluate_in_pool(generated, reference))
    }

    /// Evaluates `(id, generated, reference)` triples and averages the
    /// per-caption scores.
    pub fn evaluate_corpus(&self, pairs: &[(String, String, String)]) -> Result<CorpusFactualReport, FactualError> {
        let mut ids = HashSet::new();
        for (id, _, _) in pairs {
            if !ids.insert(id.as_str()) {
                return Err(FactualError::DuplicateId(id.clone()));
            }
        }
        let reports: Vec<FactualReport> = self
            .pool
            .install(|| pairs.par_iter().map(|(_, g, r)| self.evaluate_in_pool(g, r)).collect());
        let mut sums = (0.0, 0.0, 0.0);
        let (mut scored, mut empty, mut failed, mut items, mut failed_items) = (0, 0, 0, 0, 0);
        for r in &reports {
            items += r.items.len();
            failed_items += r.failures;
            if r.all_failed() {
                failed += 1;
                continue;
            }
            if r.items.is_empty() {
                empty += 1;
            }
            scored += 1;
            sums.0 += r.overlap;
            sums.1 += r.f1;
            sums.2 += r.answerability;
        }
        let n = scored.max(1) as f64;
        Ok(CorpusFactualReport {
            overlap: sums.0 / n,
            f1: sums.1 / n,
            answerability: sums.2 / n,
            overlap_scorer: self.scorer.name().to_string(),
            aggregation: "mean over items within a caption, then mean over captions; \
                          captions without spans count as zero, captions whose items all failed are excluded"
                .into(),
            captions: pairs.len(),
            scored_captions: scored,
            empty_captions: empty,
            failed_captions: failed,
            items,
            failed_items,
            per_caption: pairs.iter().map(|(id, _, _)| id.clone()).zip(reports).collect(),
        })
    }
}
