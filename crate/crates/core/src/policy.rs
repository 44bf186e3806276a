//! Bucketed conditional bigram policy with exact log-probabilities and
//! gradients, its CPO trainer and a decoder.
//!
//! The prompt `x` selects one of `B` logit tables by stable hash; within a
//! table, row `prev` holds the logits of the next symbol. Sequences start
//! from BOS and must end with EOS, so the policy is a proper distribution
//! over finite strings. Parameters are flattened as
//! `(bucket · V + prev) · V + next`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::PreferenceTriple;
use crate::hash::fnv1a;
use crate::prefopt::{
    self, cpo_example_weights, CpoHyperparams, LogProbPair, NextTokenModel, PrefOptError, SparseGradient,
};

/// Reserved begin-of-sequence symbol.
pub const BOS: char = '\u{2}';
/// Reserved end-of-sequence symbol.
pub const EOS: char = '\u{3}';
pub const BOS_INDEX: usize = 0;
pub const EOS_INDEX: usize = 1;

const POLICY_FORMAT: &str = "xmodal-pref/tabular-bigram-policy";
const POLICY_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("character {ch:?} at position {position} is not in the vocabulary")]
    OutOfVocabulary { ch: char, position: usize },
    #[error("reserved symbol {0:?} cannot be a data symbol")]
    ReservedSymbol(char),
    #[error("vocabulary has no data symbols")]
    EmptyVocabulary,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid policy: {0}")]
    Invalid(String),
    #[error("no training triples")]
    EmptyTrainingSet,
    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error(transparent)]
    Loss(#[from] PrefOptError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("policy file: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PolicyError>;

/// Ordered symbol set: BOS, EOS, then the data characters in ascending
/// order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    symbols: Vec<char>,
    index: HashMap<char, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from data characters (deduplicated and sorted).
    pub fn new(data_symbols: impl IntoIterator<Item = char>) -> Result<Self> {
        let data: BTreeSet<char> = data_symbols.into_iter().collect();
        if let Some(&c) = data.iter().find(|&&c| c == BOS || c == EOS) {
            return Err(PolicyError::ReservedSymbol(c));
        }
        if data.is_empty() {
            return Err(PolicyError::EmptyVocabulary);
        }
        let symbols: Vec<char> = [BOS, EOS].into_iter().chain(data).collect();
        let index = symbols.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        Ok(Self { symbols, index })
    }

    /// Vocabulary of every character appearing in `texts`.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        Self::new(texts.into_iter().flat_map(str::chars))
    }

    /// Number of symbols including BOS and EOS.
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn symbol(&self, index: usize) -> char {
        self.symbols[index]
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    pub fn data_symbols(&self) -> &[char] {
        &self.symbols[2..]
    }

    /// Maps `text` to symbol indices; reserved symbols are rejected.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .enumerate()
            .map(|(position, ch)| match self.index_of(ch) {
                Some(i) if i > EOS_INDEX => Ok(i),
                _ => Err(PolicyError::OutOfVocabulary { ch, position }),
            })
            .collect()
    }
}

/// Bucket of prompt `x`: FNV-1a of its UTF-8 bytes modulo `buckets`.
pub fn bucket_of(x: &str, buckets: usize) -> usize {
    assert!(buckets >= 1, "bucket count must be positive");
    (fnv1a(x.as_bytes()) % buckets as u64) as usize
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn log_softmax_at(row: &[f64], target: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = row.iter().map(|&l| (l - max).exp()).sum();
    (row[target] - max) - z.ln()
}

/// Decoding strategy for [`TabularBigramPolicy::generate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum DecodeMode {
    Greedy,
    Sample { seed: u64 },
}

/// π_θ(y|x) as `B` softmax bigram tables.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularBigramPolicy {
    vocab: Vocabulary,
    buckets: usize,
    logits: Vec<f64>,
}

impl TabularBigramPolicy {
    /// All-zero logits: every row is uniform.
    pub fn uniform(vocab: Vocabulary, buckets: usize) -> Self {
        assert!(buckets >= 1, "bucket count must be positive");
        let v = vocab.len();
        Self {
            vocab,
            buckets,
            logits: vec![0.0; buckets * v * v],
        }
    }

    pub fn from_logits(vocab: Vocabulary, buckets: usize, logits: Vec<f64>) -> Result<Self> {
        let v = vocab.len();
        if buckets == 0 {
            return Err(PolicyError::Invalid("bucket count must be positive".into()));
        }
        if logits.len() != buckets * v * v {
            return Err(PolicyError::Invalid(format!(
                "expected {} logits for {buckets} buckets and {v} symbols, got {}",
                buckets * v * v,
                logits.len()
            )));
        }
        if let Some(i) = logits.iter().position(|l| !l.is_finite()) {
            return Err(PolicyError::Invalid(format!("logit {i} is not finite")));
        }
        Ok(Self { vocab, buckets, logits })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn param_count(&self) -> usize {
        self.logits.len()
    }

    pub fn param_index(&self, bucket: usize, prev: usize, next: usize) -> usize {
        let v = self.vocab.len();
        (bucket * v + prev) * v + next
    }

    fn row_start(&self, bucket: usize, prev: usize) -> usize {
        self.param_index(bucket, prev, 0)
    }

    pub fn row(&self, bucket: usize, prev: usize) -> &[f64] {
        let start = self.row_start(bucket, prev);
        &self.logits[start..start + self.vocab.len()]
    }

    /// Next-symbol distribution after `prev` for prompt `x`.
    pub fn next_token_distribution(&self, x: &str, prev: usize) -> Vec<f64> {
        softmax(self.row(bucket_of(x, self.buckets), prev))
    }

    /// `(prev, target)` index pairs visited when scoring `y`, ending in EOS.
    fn transitions(&self, y: &str) -> Result<Vec<(usize, usize)>> {
        let encoded = self.vocab.encode(y)?;
        let mut prev = BOS_INDEX;
        let mut steps = Vec::with_capacity(encoded.len() + 1);
        for t in encoded.into_iter().chain(std::iter::once(EOS_INDEX)) {
            steps.push((prev, t));
            prev = t;
        }
        Ok(steps)
    }

    /// `log π(y|x)`, summed over the `|y| + 1` teacher-forced steps.
    pub fn log_prob(&self, x: &str, y: &str) -> Result<f64> {
        let bucket = bucket_of(x, self.buckets);
        Ok(self
            .transitions(y)?
            .into_iter()
            .map(|(prev, t)| log_softmax_at(self.row(bucket, prev), t))
            .sum())
    }

    /// `log π(y|x)` and its gradient: for each visited row,
    /// `one_hot(target) − softmax(row)`, accumulated over visits.
    pub fn log_prob_grad(&self, x: &str, y: &str) -> Result<(f64, SparseGradient)> {
        let bucket = bucket_of(x, self.buckets);
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        let mut lp = 0.0;
        for (prev, t) in self.transitions(y)? {
            let row = self.row(bucket, prev);
            lp += log_softmax_at(row, t);
            let probs = softmax(row);
            let start = self.row_start(bucket, prev);
            for (j, p) in probs.into_iter().enumerate() {
                let one_hot = if j == t { 1.0 } else { 0.0 };
                *acc.entry(start + j).or_insert(0.0) += one_hot - p;
            }
        }
        Ok((
            lp,
            SparseGradient {
                dim: self.param_count(),
                entries: acc.into_iter().collect(),
            },
        ))
    }

    /// Scores a triple as `(lp_w, lp_l)`.
    pub fn score(&self, triple: &PreferenceTriple) -> Result<LogProbPair> {
        Ok(LogProbPair::new(
            self.log_prob(&triple.x, &triple.y_w)?,
            self.log_prob(&triple.x, &triple.y_l)?,
        )?)
    }

    /// Autoregressive decoding from BOS until EOS or `max_len` symbols. BOS is
    /// never emitted; greedy ties go to the lowest symbol index (EOS first).
    pub fn generate(&self, x: &str, max_len: usize, mode: DecodeMode) -> String {
        let bucket = bucket_of(x, self.buckets);
        let mut rng = match mode {
            DecodeMode::Sample { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
            DecodeMode::Greedy => None,
        };
        let mut out = String::new();
        let mut prev = BOS_INDEX;
        for _ in 0..max_len {
            let row = self.row(bucket, prev);
            let next = match rng.as_mut() {
                None => {
                    let mut best = EOS_INDEX;
                    for j in EOS_INDEX + 1..row.len() {
                        if row[j] > row[best] {
                            best = j;
                        }
                    }
                    best
                }
                Some(rng) => {
                    let probs = softmax(row);
                    let mass: f64 = probs[EOS_INDEX..].iter().sum();
                    let mut u = rng.gen::<f64>() * mass;
                    let mut pick = row.len() - 1;
                    for (j, p) in probs.iter().enumerate().skip(EOS_INDEX) {
                        if u < *p {
                            pick = j;
                            break;
                        }
                        u -= p;
                    }
                    pick
                }
            };
            if next == EOS_INDEX {
                break;
            }
            out.push(self.vocab.symbol(next));
            prev = next;
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, &PolicyFile::from(self))?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&PolicyFile::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str::<PolicyFile>(s)?.into_policy()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: PolicyFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        file.into_policy()
    }
}

impl NextTokenModel for TabularBigramPolicy {
    fn teacher_forced_distributions(
        &self,
        x: &str,
        y: &str,
    ) -> std::result::Result<Vec<Vec<f64>>, Box<dyn std::error::Error + Send + Sync>> {
        let bucket = bucket_of(x, self.buckets);
        Ok(self
            .transitions(y)?
            .into_iter()
            .map(|(prev, _)| softmax(self.row(bucket, prev)))
            .collect())
    }
}

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    format: String,
    version: u32,
    vocab: Vec<String>,
    buckets: usize,
    logits: Vec<f64>,
}

impl From<&TabularBigramPolicy> for PolicyFile {
    fn from(p: &TabularBigramPolicy) -> Self {
        Self {
            format: POLICY_FORMAT.into(),
            version: POLICY_VERSION,
            vocab: p.vocab.data_symbols().iter().map(|c| c.to_string()).collect(),
            buckets: p.buckets,
            logits: p.logits.clone(),
        }
    }
}

impl PolicyFile {
    fn into_policy(self) -> Result<TabularBigramPolicy> {
        if self.format != POLICY_FORMAT || self.version != POLICY_VERSION {
            return Err(PolicyError::Invalid(format!(
                "unsupported policy file {} v{}",
                self.format, self.version
            )));
        }
        let mut chars = Vec::with_capacity(self.vocab.len());
        for s in &self.vocab {
            let mut it = s.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => chars.push(c),
                _ => return Err(PolicyError::Invalid(format!("vocab entry {s:?} is not one character"))),
            }
        }
        let vocab = Vocabulary::new(chars.iter().copied())?;
        if vocab.data_symbols() != chars.as_slice() {
            return Err(PolicyError::Invalid("vocab entries must be unique and sorted".into()));
        }
        TabularBigramPolicy::from_logits(vocab, self.buckets, self.logits)
    }
}

/// Add-one-smoothed maximum-likelihood bigram fit: logits are
/// `ln(count + 1)` per `(bucket, prev, next)`.
pub fn fit_mle_bigram(outputs: &[(String, String)], vocab: &Vocabulary, buckets: usize) -> Result<TabularBigramPolicy> {
    let mut policy = TabularBigramPolicy::uniform(vocab.clone(), buckets);
    let mut counts = vec![0u64; policy.param_count()];
    for (x, y) in outputs {
        let bucket = bucket_of(x, buckets);
        for (prev, t) in policy.transitions(y)? {
            counts[policy.param_index(bucket, prev, t)] += 1;
        }
    }
    for (l, c) in policy.logits.iter_mut().zip(counts) {
        *l = ((c + 1) as f64).ln();
    }
    Ok(policy)
}

/// Starting point of training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Init {
    /// All-zero logits (uniform policy).
    #[default]
    Zeros,
    /// Add-one MLE bigram fit on the training `(x, y_w)` pairs.
    WarmStart,
    /// Logits drawn uniformly from `[−scale, scale]` with the config seed.
    Random { scale: f64 },
}

/// Which loss the trainer minimises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// `L_prefer + nll_weight · L_NLL`
    #[default]
    Cpo,
    /// `nll_weight · L_NLL` only (supervised fine-tuning ablation).
    NllOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Seed of the `Random` initialisation; training itself is deterministic.
    pub seed: u64,
    pub hp: CpoHyperparams,
    pub max_grad_norm: f64,
    pub buckets: usize,
    pub init: Init,
    pub objective: Objective,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            epochs: 100,
            seed: 0,
            hp: CpoHyperparams::default(),
            max_grad_norm: 5.0,
            buckets: 256,
            init: Init::Zeros,
            objective: Objective::Cpo,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(PolicyError::InvalidConfig(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(PolicyError::InvalidConfig("epochs must be >= 1".into()));
        }
        if !(self.max_grad_norm.is_finite() && self.max_grad_norm > 0.0) {
            return Err(PolicyError::InvalidConfig(format!(
                "max_grad_norm must be finite and > 0, got {}",
                self.max_grad_norm
            )));
        }
        if self.buckets == 0 {
            return Err(PolicyError::InvalidConfig("buckets must be >= 1".into()));
        }
        if let Init::Random { scale } = self.init {
            if !(scale.is_finite() && scale >= 0.0) {
                return Err(PolicyError::InvalidConfig(format!("init scale {scale} is invalid")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
}

/// Per-epoch losses and preference margins of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub loss_history: Vec<EpochLoss>,
    /// Mean `lp_w − lp_l` over the margin triples before training.
    pub initial_margin: f64,
    /// Mean `lp_w − lp_l` over the margin triples after training.
    pub final_margin: f64,
    /// Mean `L_prefer` over the margin triples before and after training.
    pub initial_prefer_loss: f64,
    pub final_prefer_loss: f64,
    /// `"validation"`, or `"train"` when no validation triples were given.
    pub margin_split: String,
    pub objective: Objective,
}

/// Loss of `triples` under `objective`, with its sparse gradient.
pub fn objective_and_gradient(
    policy: &TabularBigramPolicy,
    triples: &[PreferenceTriple],
    hp: CpoHyperparams,
    objective: Objective,
) -> Result<(f64, SparseGradient)> {
    if triples.is_empty() {
        return Err(PolicyError::EmptyTrainingSet);
    }
    let inv_n = 1.0 / triples.len() as f64;
    let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
    let mut total = 0.0;
    for t in triples {
        let (lp_w, gw) = policy.log_prob_grad(&t.x, &t.y_w)?;
        let (lp_l, gl) = policy.log_prob_grad(&t.x, &t.y_l)?;
        let pair = LogProbPair::new(lp_w, lp_l)?;
        let (dw, dl) = match objective {
            Objective::Cpo => {
                total += prefopt::cpo_loss(&[pair], hp)?.value;
                cpo_example_weights(pair, hp)
            }
            Objective::NllOnly => {
                total += hp.nll_weight * prefopt::nll_loss(lp_w)?.value;
                (-hp.nll_weight, 0.0)
            }
        };
        for (g, w) in [(&gw, dw), (&gl, dl)] {
            if w == 0.0 {
                continue;
            }
            for &(i, v) in &g.entries {
                *acc.entry(i).or_insert(0.0) += w * inv_n * v;
            }
        }
    }
    Ok((
        total * inv_n,
        SparseGradient {
            dim: policy.param_count(),
            entries: acc.into_iter().collect(),
        },
    ))
}

fn objective_value(
    policy: &TabularBigramPolicy,
    triples: &[PreferenceTriple],
    hp: CpoHyperparams,
    objective: Objective,
) -> Result<f64> {
    let pairs = triples.iter().map(|t| policy.score(t)).collect::<Result<Vec<_>>>()?;
    Ok(match objective {
        Objective::Cpo => prefopt::cpo_loss(&pairs, hp)?.value,
        Objective::NllOnly => hp.nll_weight * pairs.iter().map(|p| -p.lp_w).sum::<f64>() / pairs.len() as f64,
    })
}

/// Mean margin and mean `L_prefer` of `triples`.
pub fn margin_stats(
    policy: &TabularBigramPolicy,
    triples: &[PreferenceTriple],
    hp: CpoHyperparams,
) -> Result<(f64, f64)> {
    if triples.is_empty() {
        return Err(PolicyError::EmptyTrainingSet);
    }
    let mut margin = 0.0;
    let mut prefer = 0.0;
    for t in triples {
        let p = policy.score(t)?;
        margin += p.margin();
        prefer += prefopt::cpo_prefer_loss(p, hp)?.value;
    }
    let n = triples.len() as f64;
    Ok((margin / n, prefer / n))
}

/// Builds the initial policy for `config` over the given vocabulary.
pub fn initial_policy(
    vocab: Vocabulary,
    triples: &[PreferenceTriple],
    config: &TrainConfig,
) -> Result<TabularBigramPolicy> {
    Ok(match config.init {
        Init::Zeros => TabularBigramPolicy::uniform(vocab, config.buckets),
        Init::WarmStart => {
            let outputs: Vec<(String, String)> = triples.iter().map(|t| (t.x.clone(), t.y_w.clone())).collect();
            fit_mle_bigram(&outputs, &vocab, config.buckets)?
        }
        Init::Random { scale } => {
            let mut p = TabularBigramPolicy::uniform(vocab, config.buckets);
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            for l in p.logits_mut() {
                *l = rng.gen_range(-1.0..=1.0) * scale;
            }
            p
        }
    })
}

/// Full-batch gradient descent on the configured objective with
/// global-norm clipping. Losses are recorded before each epoch's update.
pub fn train_cpo(
    triples: &[PreferenceTriple],
    val_triples: &[PreferenceTriple],
    config: &TrainConfig,
) -> Result<(TabularBigramPolicy, TrainReport)> {
    config.validate()?;
    if triples.is_empty() {
        return Err(PolicyError::EmptyTrainingSet);
    }
    let vocab = Vocabulary::from_texts(
        triples
            .iter()
            .chain(val_triples)
            .flat_map(|t| [t.y_w.as_str(), t.y_l.as_str()]),
    )?;
    let mut policy = initial_policy(vocab, triples, config)?;
    let (margin_triples, margin_split) = if val_triples.is_empty() {
        (triples, "train")
    } else {
        (val_triples, "validation")
    };
    let (initial_margin, initial_prefer_loss) = margin_stats(&policy, margin_triples, config.hp)?;

    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let diverged = |e: PolicyError| match e {
            PolicyError::Loss(PrefOptError::NonFinite(_)) => PolicyError::NonFiniteLoss { epoch },
            other => other,
        };
        let (loss, grad) = objective_and_gradient(&policy, triples, config.hp, config.objective).map_err(diverged)?;
        let validation_loss = if val_triples.is_empty() {
            None
        } else {
            Some(objective_value(&policy, val_triples, config.hp, config.objective).map_err(diverged)?)
        };
        if !loss.is_finite() || validation_loss.is_some_and(|v| !v.is_finite()) {
            return Err(PolicyError::NonFiniteLoss { epoch });
        }
        history.push(EpochLoss {
            epoch,
            train_loss: loss,
            validation_loss,
        });
        let norm = grad.entries.iter().map(|(_, g)| g * g).sum::<f64>().sqrt();
        let scale = if norm > config.max_grad_norm {
            config.max_grad_norm / norm
        } else {
            1.0
        };
        let step = config.learning_rate * scale;
        if step != 0.0 {
            let logits = policy.logits_mut();
            for &(i, g) in &grad.entries {
                logits[i] -= step * g;
            }
        }
        if policy.logits().iter().any(|l| !l.is_finite()) {
            return Err(PolicyError::NonFiniteLoss { epoch });
        }
    }

    let (final_margin, final_prefer_loss) = margin_stats(&policy, margin_triples, config.hp)?;
    Ok((
        policy,
        TrainReport {
            loss_history: history,
            initial_margin,
            final_margin,
            initial_prefer_loss,
            final_prefer_loss,
            margin_split: margin_split.into(),
            objective: config.objective,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Direction;
    use proptest::prelude::*;

    fn vocab(s: &str) -> Vocabulary {
        Vocabulary::new(s.chars()).unwrap()
    }

    fn triple(x: &str, w: &str, l: &str) -> PreferenceTriple {
        PreferenceTriple {
            id: x.into(),
            direction: Direction::Lang2Mol,
            x: x.into(),
            y_w: w.into(),
            y_l: l.into(),
        }
    }

    fn random_policy(v: &Vocabulary, buckets: usize, seed: u64) -> TabularBigramPolicy {
        let mut p = TabularBigramPolicy::uniform(v.clone(), buckets);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in p.logits_mut() {
            *l = rand::Rng::gen_range(&mut rng, -2.0..2.0);
        }
        p
    }

    #[test]
    fn vocabulary_layout() {
        let v = vocab("OCC");
        assert_eq!(v.len(), 4);
        assert_eq!(v.symbol(BOS_INDEX), BOS);
        assert_eq!(v.symbol(EOS_INDEX), EOS);
        assert_eq!(v.data_symbols(), &['C', 'O']);
        assert!(matches!(
            Vocabulary::new("a\u{3}".chars()),
            Err(PolicyError::ReservedSymbol(_))
        ));
        assert!(matches!(Vocabulary::new("".chars()), Err(PolicyError::EmptyVocabulary)));
    }

    #[test]
    fn bucket_examples() {
        assert_eq!(bucket_of("anything", 1), 0);
        assert_eq!(bucket_of("x", 1024), bucket_of("x", 1024));
        // reference values from an independent FNV-1a implementation
        assert_eq!(bucket_of("Molecule: CCO", 1024), 726);
        assert_eq!(bucket_of("Caption: a fatty acid", 1024), 747);
    }

    #[test]
    fn uniform_log_prob() {
        let v = vocab("ab");
        let p = TabularBigramPolicy::uniform(v, 3);
        let big_v = 4f64;
        assert!((p.log_prob("x", "ab").unwrap() + 3.0 * big_v.ln()).abs() < 1e-12);
        assert!((p.log_prob("x", "").unwrap() + big_v.ln()).abs() < 1e-12);
        match p.log_prob("x", "abz") {
            Err(PolicyError::OutOfVocabulary { ch, position }) => {
                assert_eq!(ch, 'z');
                assert_eq!(position, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn uniform_gradient_entries() {
        let p = TabularBigramPolicy::uniform(vocab("abc"), 2);
        let v = p.vocab().len() as f64;
        let (_, g) = p.log_prob_grad("x", "a").unwrap();
        let b = bucket_of("x", 2);
        let a = p.vocab().index_of('a').unwrap();
        assert!((g.get(p.param_index(b, BOS_INDEX, a)) - (1.0 - 1.0 / v)).abs() < 1e-15);
        assert!((g.get(p.param_index(b, BOS_INDEX, EOS_INDEX)) + 1.0 / v).abs() < 1e-15);
        // row 'b' never visited
        let bi = p.vocab().index_of('b').unwrap();
        for j in 0..p.vocab().len() {
            assert_eq!(g.get(p.param_index(b, bi, j)), 0.0);
            assert_eq!(g.get(p.param_index(1 - b, BOS_INDEX, j)), 0.0);
        }
        assert_eq!(g.entries.len(), 2 * p.vocab().len());
    }

    #[test]
    fn log_prob_gradient_matches_finite_differences() {
        let v = vocab("CNO=#");
        let mut p = random_policy(&v, 3, 9);
        let (x, y) = ("prompt", "C=NO#C");
        let (_, g) = p.log_prob_grad(x, y).unwrap();
        let h = 1e-5;
        for &(i, a) in &g.entries {
            let orig = p.logits()[i];
            p.logits_mut()[i] = orig + h;
            let up = p.log_prob(x, y).unwrap();
            p.logits_mut()[i] = orig - h;
            let down = p.log_prob(x, y).unwrap();
            p.logits_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!(
                (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8) < 1e-5,
                "{i}: {a} vs {fd}"
            );
        }
    }

    #[test]
    fn training_gradient_agrees_with_dense_chain_rule() {
        let v = vocab("CNO");
        let p = random_policy(&v, 4, 1);
        let ts = [triple("a", "CN", "NC"), triple("b", "O", "OO"), triple("a", "NOC", "C")];
        let hp = CpoHyperparams::new(0.3, 0.7).unwrap();
        let (loss, g) = objective_and_gradient(&p, &ts, hp, Objective::Cpo).unwrap();
        let grads: Vec<_> = ts
            .iter()
            .map(|t| {
                (
                    p.score(t).unwrap(),
                    p.log_prob_grad(&t.x, &t.y_w).unwrap().1,
                    p.log_prob_grad(&t.x, &t.y_l).unwrap().1,
                )
            })
            .collect();
        let pairs: Vec<_> = grads
            .iter()
            .map(|(lp, gw, gl)| prefopt::DifferentiablePair {
                logprobs: *lp,
                grad_w: gw,
                grad_l: gl,
            })
            .collect();
        let dense = prefopt::cpo_loss_with_gradient(&pairs, hp).unwrap();
        assert!((dense.value - loss).abs() < 1e-12);
        let d = dense.gradient.unwrap();
        let s = g.to_dense();
        for i in 0..d.len() {
            assert!((d[i] - s[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn generate_forced_eos_and_determinism() {
        let v = vocab("ab");
        let mut p = TabularBigramPolicy::uniform(v, 1);
        assert_eq!(p.generate("x", 5, DecodeMode::Greedy), "");
        let a = p.vocab().index_of('a').unwrap();
        let i = p.param_index(0, BOS_INDEX, a);
        p.logits_mut()[i] = 5.0;
        let j = p.param_index(0, a, EOS_INDEX);
        p.logits_mut()[j] = 5.0;
        assert_eq!(p.generate("x", 5, DecodeMode::Greedy), "a");
        let q = random_policy(p.vocab(), 2, 3);
        let s1 = q.generate("x", 20, DecodeMode::Sample { seed: 5 });
        assert_eq!(s1, q.generate("x", 20, DecodeMode::Sample { seed: 5 }));
        assert!(s1.chars().count() <= 20);
        assert_eq!(
            q.generate("x", 20, DecodeMode::Greedy),
            q.generate("x", 20, DecodeMode::Greedy)
        );
        assert!(!s1.contains(BOS));
    }

    #[test]
    fn mle_fit_counts() {
        let v = vocab("a");
        let outputs: Vec<(String, String)> = (0..10).map(|_| ("x".to_string(), "aa".to_string())).collect();
        let p = fit_mle_bigram(&outputs, &v, 1).unwrap();
        let a = v.index_of('a').unwrap();
        let start = p.next_token_distribution("x", BOS_INDEX);
        assert!((start[a] - 11.0 / 13.0).abs() < 1e-12);
        assert!((start[EOS_INDEX] - 1.0 / 13.0).abs() < 1e-12);
        let after_a = p.next_token_distribution("x", a);
        assert!((after_a[a] - 11.0 / 23.0).abs() < 1e-12);
        assert!((after_a[EOS_INDEX] - 11.0 / 23.0).abs() < 1e-12);
        assert_eq!(p.generate("x", 10, DecodeMode::Greedy).chars().next(), Some('a'));
    }

    #[test]
    fn mle_fit_empty_outputs_prefers_eos() {
        let v = vocab("ab");
        let outputs = vec![("x".to_string(), String::new()); 4];
        let p = fit_mle_bigram(&outputs, &v, 1).unwrap();
        let d = p.next_token_distribution("x", BOS_INDEX);
        assert!(d[EOS_INDEX] > 0.5);
        assert!(d.iter().all(|&q| q > 0.0));
        let trained = random_policy(&v, 1, 2);
        let div = prefopt::bc_divergence(&p, &trained, &[("x".into(), "ab".into())]).unwrap();
        assert!(div.is_finite() && div > 0.0);
        assert_eq!(
            prefopt::bc_divergence(&p, &p, &[("x".into(), "ab".into())]).unwrap(),
            0.0
        );
        let u = TabularBigramPolicy::uniform(v.clone(), 1);
        assert_eq!(
            prefopt::bc_divergence(&u, &u.clone(), &[("y".into(), "ba".into())]).unwrap(),
            0.0
        );
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let ts = [triple("p1", "CO", "OC"), triple("p2", "NC", "N")];
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 4,
            buckets: 8,
            ..TrainConfig::default()
        };
        let (p, report) = train_cpo(&ts, &[], &cfg).unwrap();
        assert!(p.logits().iter().all(|&l| l == 0.0));
        let first = report.loss_history[0].train_loss;
        assert!(report.loss_history.iter().all(|e| e.train_loss == first));
        assert_eq!(report.loss_history.len(), 4);
        assert_eq!(report.margin_split, "train");
    }

    #[test]
    fn training_is_deterministic_and_improves_margin() {
        let ts = [
            triple("p1", "CO", "OC"),
            triple("p2", "NC", "N"),
            triple("p3", "C#N", "C=N"),
        ];
        let val = [triple("p1", "CO", "CC"), triple("p3", "C#N", "CN")];
        let cfg = TrainConfig {
            learning_rate: 2.0,
            epochs: 50,
            buckets: 64,
            ..TrainConfig::default()
        };
        let (p1, r1) = train_cpo(&ts, &val, &cfg).unwrap();
        let (p2, r2) = train_cpo(&ts, &val, &cfg).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(r1, r2);
        assert!(r1.final_margin > r1.initial_margin);
        assert!(r1.final_prefer_loss < r1.initial_prefer_loss);
        for t in &ts {
            assert_eq!(p1.generate(&t.x, 10, DecodeMode::Greedy), t.y_w);
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let ts = [triple("p", "C", "O")];
        for cfg in [
            TrainConfig {
                epochs: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                max_grad_norm: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                learning_rate: f64::NAN,
                ..TrainConfig::default()
            },
        ] {
            assert!(matches!(train_cpo(&ts, &[], &cfg), Err(PolicyError::InvalidConfig(_))));
        }
        assert!(matches!(
            train_cpo(&[], &[], &TrainConfig::default()),
            Err(PolicyError::EmptyTrainingSet)
        ));
    }

    #[test]
    fn saturating_steps_stay_finite() {
        let ts = [triple("p", "C", "O")];
        let cfg = TrainConfig {
            learning_rate: 1e300,
            max_grad_norm: 1e300,
            epochs: 5,
            buckets: 2,
            ..TrainConfig::default()
        };
        let (p, report) = train_cpo(&ts, &[], &cfg).unwrap();
        assert!(p.logits().iter().all(|l| l.is_finite()));
        assert!(report.loss_history.iter().all(|e| e.train_loss.is_finite()));
    }

    #[test]
    fn overflowing_steps_report_divergence() {
        let ts = [triple("p", "CO", "OC"), triple("q", "OC", "CC")];
        let cfg = TrainConfig {
            learning_rate: 1e308,
            max_grad_norm: 1e308,
            epochs: 10,
            buckets: 1,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_cpo(&ts, &[], &cfg),
            Err(PolicyError::NonFiniteLoss { .. })
        ));
    }

    proptest! {
        #[test]
        fn rows_are_distributions(seed in any::<u64>(), prev in 0usize..5, x in "\\PC{0,12}") {
            let p = random_policy(&vocab("abc"), 3, seed);
            let d = p.next_token_distribution(&x, prev);
            prop_assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn log_prob_non_positive(seed in any::<u64>(), y in "[abc]{0,15}", x in "\\PC{0,12}") {
            let p = random_policy(&vocab("abc"), 5, seed);
            let lp = p.log_prob(&x, &y).unwrap();
            prop_assert!(lp <= 0.0);
            prop_assert!(lp.exp() <= 1.0);
        }

        #[test]
        fn json_round_trip_is_bit_exact(seed in any::<u64>(), buckets in 1usize..4) {
            let p = random_policy(&vocab("C=O#\u{e9}"), buckets, seed);
            let back = TabularBigramPolicy::from_json(&p.to_json().unwrap()).unwrap();
            prop_assert_eq!(back.logits().iter().map(|l| l.to_bits()).collect::<Vec<_>>(),
                            p.logits().iter().map(|l| l.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back, p);
        }
    }
}
