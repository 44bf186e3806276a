//! The workflow commands. Each writes content-addressed artifacts
//! (`<name>-<hash>.<ext>`) into the output directory plus a
//! `<command>.manifest.json` naming them; later commands read the manifests
//! when no explicit path is configured.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use xmodal_pref_core::data::{self, Direction, DispreferredSource, PairRecord, PreferenceTriple};
use xmodal_pref_core::factual::{F1Overlap, FactualEvaluator, HttpClient, MockQa, MockQg};
use xmodal_pref_core::hash::{content_hash, stage_seed};
use xmodal_pref_core::policy::{self, DecodeMode, Init, TabularBigramPolicy};
use xmodal_pref_core::textmetrics::{self, EvalPair, LengthUnit};

use crate::config::{Route, RunConfig};
use crate::error::CliError;

pub const TOOL_NAME: &str = env!("CARGO_PKG_NAME");
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

type Result<T> = std::result::Result<T, CliError>;

/// Per-invocation settings that are not part of the config file.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub jobs: usize,
    pub csv: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { jobs: 1, csv: false }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: String,
    pub timestamp_unix: u64,
    /// Artifact role → file name inside the output directory.
    pub artifacts: BTreeMap<String, String>,
    pub details: Value,
}

fn manifest_path(out: &Path, command: &str) -> PathBuf {
    out.join(format!("{command}.manifest.json"))
}

pub fn read_manifest(out: &Path, command: &str) -> Result<Manifest> {
    let path = manifest_path(out, command);
    let text = fs::read_to_string(&path).map_err(|e| {
        CliError::Input(format!(
            "no path configured and cannot read {} (run `{command}` first): {e}",
            path.display()
        ))
    })?;
    Ok(serde_json::from_str(&text)?)
}

fn manifest_artifact(out: &Path, command: &str, role: &str) -> Result<PathBuf> {
    let m = read_manifest(out, command)?;
    m.artifacts
        .get(role)
        .map(|name| out.join(name))
        .ok_or_else(|| CliError::Input(format!("{command} manifest has no {role:?} artifact")))
}

fn write_manifest(out: &Path, command: &str, artifacts: BTreeMap<String, String>, details: Value) -> Result<()> {
    let m = Manifest {
        command: command.into(),
        tool_version: TOOL_VERSION.into(),
        timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        artifacts,
        details,
    };
    let mut bytes = serde_json::to_vec_pretty(&m)?;
    bytes.push(b'\n');
    fs::write(manifest_path(out, command), bytes)?;
    Ok(())
}

/// Writes `bytes` as `<stem>-<hash>.<ext>` and returns the file name.
fn write_artifact(out: &Path, stem: &str, ext: &str, bytes: &[u8]) -> Result<String> {
    let name = format!("{stem}-{}.{ext}", content_hash(bytes));
    fs::write(out.join(&name), bytes)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", out.join(&name).display())))?;
    log::info!("wrote {}", out.join(&name).display());
    Ok(name)
}

fn jsonl<T: Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    data::write_jsonl(&mut buf, items)?;
    Ok(buf)
}

fn report_bytes(body: Value, config: &RunConfig) -> Result<Vec<u8>> {
    let doc = json!({
        "tool": { "name": TOOL_NAME, "version": TOOL_VERSION },
        "config": config,
        "report": body,
    });
    let mut bytes = serde_json::to_vec_pretty(&doc)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn ensure_out_dir(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| CliError::Input(format!("cannot create output directory {}: {e}", cfg.out_dir.display())))?;
    Ok(&cfg.out_dir)
}

fn load_corpus(path: &Path) -> Result<Vec<PairRecord>> {
    let records = if path.extension().is_some_and(|e| e == "tsv") {
        data::load_pairs_tsv(path)?
    } else {
        data::load_pairs(path)?
    };
    Ok(records)
}

fn load_policy_file(path: &Path) -> Result<TabularBigramPolicy> {
    TabularBigramPolicy::load(path).map_err(|e| CliError::Input(format!("cannot load policy {}: {e}", path.display())))
}

/// Subsample, split and build preference triples for every direction.
pub fn cmd_build_prefs(cfg: &RunConfig, _opts: &RunOptions) -> Result<Vec<PathBuf>> {
    let out = ensure_out_dir(cfg)?;
    let corpus_path = cfg
        .data
        .corpus
        .as_ref()
        .ok_or_else(|| CliError::Input("data.corpus is required for build-prefs".into()))?;
    let corpus = load_corpus(corpus_path)?;
    if corpus.is_empty() {
        return Err(CliError::Input(format!("corpus {} is empty", corpus_path.display())));
    }
    let sample = data::subsample(&corpus, cfg.data.fraction, stage_seed(cfg.seed, "subsample"))?;
    let (train, validation, test) = data::split(&sample, &cfg.split_spec())?;

    let directions = cfg.direction.directions();
    let loaded_policy;
    let dispreferred_policy = match cfg.data.route {
        Route::Policy => {
            let p = cfg
                .data
                .dispreferred_policy
                .as_ref()
                .ok_or_else(|| CliError::Input("route \"policy\" needs data.dispreferred_policy".into()))?;
            loaded_policy = load_policy_file(p)?;
            Some(&loaded_policy)
        }
        _ => None,
    };
    if cfg.data.route == Route::File && directions.len() > 1 {
        return Err(CliError::Input(
            "route \"file\" needs a single direction (outputs are keyed by id)".into(),
        ));
    }
    let make_source = |stage: &str| -> Result<DispreferredSource<'_>> {
        Ok(match cfg.data.route {
            Route::Noiser => DispreferredSource::FromNoiser {
                seed: stage_seed(cfg.seed, stage),
                edit_rate: cfg.data.edit_rate,
            },
            Route::File => DispreferredSource::FromFile(
                cfg.data
                    .dispreferred
                    .clone()
                    .ok_or_else(|| CliError::Input("route \"file\" needs data.dispreferred".into()))?,
            ),
            Route::Policy => DispreferredSource::FromPolicy {
                policy: dispreferred_policy.expect("policy loaded for the policy route"),
                max_len: cfg.generate.max_len,
            },
        })
    };

    let mut train_triples = Vec::new();
    let mut val_triples = Vec::new();
    let mut dropped = BTreeMap::new();
    for &dir in &directions {
        let t = data::build_triples(&train, dir, &make_source("noiser")?)?;
        let v = data::build_triples(&validation, dir, &make_source("validation-noiser")?)?;
        dropped.insert(dir.to_string(), json!({ "train": t.dropped, "validation": v.dropped }));
        train_triples.extend(t.triples);
        val_triples.extend(v.triples);
    }
    if train_triples.is_empty() {
        return Err(CliError::Input("no training triples were built".into()));
    }

    let mut artifacts = BTreeMap::new();
    artifacts.insert(
        "train_triples".to_string(),
        write_artifact(out, "build-prefs-train", "jsonl", &jsonl(&train_triples)?)?,
    );
    artifacts.insert(
        "validation_triples".to_string(),
        write_artifact(out, "build-prefs-validation", "jsonl", &jsonl(&val_triples)?)?,
    );
    artifacts.insert(
        "heldout".to_string(),
        write_artifact(out, "build-prefs-heldout", "jsonl", &jsonl(&test)?)?,
    );
    let details = json!({
        "seed": cfg.seed,
        "fraction": cfg.data.fraction,
        "route": cfg.data.route,
        "directions": directions,
        "counts": {
            "corpus": corpus.len(),
            "subsample": sample.len(),
            "train": train.len(),
            "validation": validation.len(),
            "test": test.len(),
            "train_triples": train_triples.len(),
            "validation_triples": val_triples.len(),
        },
        "dropped": dropped,
    });
    write_manifest(out, "build-prefs", artifacts.clone(), details)?;
    Ok(artifacts.values().map(|n| out.join(n)).collect())
}

fn triples_path(cfg: &RunConfig, explicit: &Option<PathBuf>, role: &str) -> Result<PathBuf> {
    match explicit {
        Some(p) => Ok(p.clone()),
        None => manifest_artifact(&cfg.out_dir, "build-prefs", role),
    }
}

/// Trains the policy with CPO and writes it with its training report.
pub fn cmd_train(cfg: &RunConfig, _opts: &RunOptions) -> Result<Vec<PathBuf>> {
    let out = ensure_out_dir(cfg)?;
    let train: Vec<PreferenceTriple> = data::load_triples(triples_path(cfg, &cfg.data.triples, "train_triples")?)?;
    let validation = match (&cfg.data.validation_triples, &cfg.data.triples) {
        (Some(p), _) => data::load_triples(p)?,
        // explicit training triples without validation ones: train-split margins
        (None, Some(_)) => Vec::new(),
        (None, None) => data::load_triples(manifest_artifact(out, "build-prefs", "validation_triples")?)?,
    };
    if train.is_empty() {
        return Err(CliError::Input("no training triples".into()));
    }
    let mut tc = cfg.train.clone();
    tc.seed = stage_seed(cfg.seed, "train");
    let (policy, report) = policy::train_cpo(&train, &validation, &tc)?;

    let mut artifacts = BTreeMap::new();
    let mut policy_bytes = policy.to_json()?.into_bytes();
    policy_bytes.push(b'\n');
    artifacts.insert(
        "policy".to_string(),
        write_artifact(out, "train-policy", "json", &policy_bytes)?,
    );
    let init_note = match tc.init {
        Init::WarmStart => {
            "warm start: add-one MLE bigram fit on the training preferred outputs, \
                            a stand-in for a pretrained initialisation"
        }
        Init::Zeros => "uniform policy",
        Init::Random { .. } => "seeded uniform random logits",
    };
    let body = json!({
        "train_config": tc,
        "init": init_note,
        "training": report,
        "train_triples": train.len(),
        "validation_triples": validation.len(),
    });
    artifacts.insert(
        "report".to_string(),
        write_artifact(out, "train-report", "json", &report_bytes(body, cfg)?)?,
    );
    write_manifest(
        out,
        "train",
        artifacts.clone(),
        json!({ "epochs": tc.epochs, "final_margin": report.final_margin }),
    )?;
    Ok(artifacts.values().map(|n| out.join(n)).collect())
}

fn heldout_records(cfg: &RunConfig) -> Result<Vec<PairRecord>> {
    let path = match &cfg.data.heldout {
        Some(p) => p.clone(),
        None => manifest_artifact(&cfg.out_dir, "build-prefs", "heldout")?,
    };
    let records = load_corpus(&path)?;
    if records.is_empty() {
        return Err(CliError::Input(format!("held-out corpus {} is empty", path.display())));
    }
    Ok(records)
}

fn trained_policy(cfg: &RunConfig) -> Result<TabularBigramPolicy> {
    let path = match &cfg.data.policy {
        Some(p) => p.clone(),
        None => manifest_artifact(&cfg.out_dir, "train", "policy")?,
    };
    load_policy_file(&path)
}

#[derive(Serialize)]
struct Generation<'a> {
    id: &'a str,
    output: &'a str,
}

fn generate_outputs(
    policy: &TabularBigramPolicy,
    records: &[PairRecord],
    dir: Direction,
    max_len: usize,
) -> HashMap<String, String> {
    records
        .iter()
        .map(|r| {
            let x = data::render_instruction(r, dir);
            (r.id.clone(), policy.generate(&x, max_len, DecodeMode::Greedy))
        })
        .collect()
}

/// Greedy generations for every held-out prompt in every direction.
pub fn cmd_generate(cfg: &RunConfig, _opts: &RunOptions) -> Result<Vec<PathBuf>> {
    let out = ensure_out_dir(cfg)?;
    let records = heldout_records(cfg)?;
    let policy = trained_policy(cfg)?;
    let mut artifacts = BTreeMap::new();
    for dir in cfg.direction.directions() {
        let outputs = generate_outputs(&policy, &records, dir, cfg.generate.max_len);
        let lines: Vec<Generation> = records
            .iter()
            .map(|r| Generation {
                id: &r.id,
                output: &outputs[&r.id],
            })
            .collect();
        let name = write_artifact(out, &format!("generate-{dir}"), "jsonl", &jsonl(&lines)?)?;
        artifacts.insert(dir.to_string(), name);
    }
    write_manifest(
        out,
        "generate",
        artifacts.clone(),
        json!({ "heldout": records.len(), "max_len": cfg.generate.max_len }),
    )?;
    Ok(artifacts.values().map(|n| out.join(n)).collect())
}

/// Generations for `dir`: configured file, else last `generate` output,
/// else decoded from the trained policy.
fn generations(cfg: &RunConfig, dir: Direction, records: &[PairRecord]) -> Result<(HashMap<String, String>, String)> {
    let from_file = |p: &Path| -> Result<(HashMap<String, String>, String)> {
        Ok((data::load_outputs(p)?, p.display().to_string()))
    };
    if let Some(p) = cfg.data.generations.get(&dir) {
        return from_file(p);
    }
    if let Ok(m) = read_manifest(&cfg.out_dir, "generate") {
        if let Some(name) = m.artifacts.get(dir.as_str()) {
            return from_file(&cfg.out_dir.join(name));
        }
    }
    let policy = trained_policy(cfg)?;
    Ok((
        generate_outputs(&policy, records, dir, cfg.generate.max_len),
        "policy (greedy)".into(),
    ))
}

fn eval_pairs(cfg: &RunConfig, dir: Direction, records: &[PairRecord]) -> Result<(Vec<EvalPair>, String)> {
    let (outputs, source) = generations(cfg, dir, records)?;
    let pairs = records
        .iter()
        .map(|r| {
            let generated = outputs
                .get(&r.id)
                .ok_or_else(|| CliError::Input(format!("generations from {source} lack id {:?}", r.id)))?;
            Ok(EvalPair::new(r.id.clone(), generated.clone(), dir.target(r)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((pairs, source))
}

/// Metric suite per direction on the held-out corpus.
pub fn cmd_eval(cfg: &RunConfig, opts: &RunOptions) -> Result<Vec<PathBuf>> {
    let out = ensure_out_dir(cfg)?;
    let records = heldout_records(cfg)?;
    let mut artifacts = BTreeMap::new();
    for dir in cfg.direction.directions() {
        let (pairs, source) = eval_pairs(cfg, dir, &records)?;
        let report = textmetrics::evaluate(&pairs, dir, &cfg.metrics, opts.jobs)?;
        let body = json!({ "generations": source, "metrics": report });
        let name = write_artifact(out, &format!("eval-{dir}"), "json", &report_bytes(body, cfg)?)?;
        artifacts.insert(dir.to_string(), name);
        if opts.csv {
            let mut buf = Vec::new();
            report.write_csv(&mut buf)?;
            artifacts.insert(
                format!("{dir}_csv"),
                write_artifact(out, &format!("eval-{dir}"), "csv", &buf)?,
            );
        }
    }
    write_manifest(out, "eval", artifacts.clone(), json!({ "heldout": records.len() }))?;
    Ok(artifacts.values().map(|n| out.join(n)).collect())
}

/// QA-based factual consistency of generated captions.
pub fn cmd_factual(cfg: &RunConfig, opts: &RunOptions) -> Result<Vec<PathBuf>> {
    let out = ensure_out_dir(cfg)?;
    if !cfg.direction.directions().contains(&Direction::Mol2Lang) {
        return Err(CliError::Input(
            "factual evaluation scores captions and needs direction mol2lang or both".into(),
        ));
    }
    let records = heldout_records(cfg)?;
    let (pairs, source) = eval_pairs(cfg, Direction::Mol2Lang, &records)?;
    let triples: Vec<(String, String, String)> = pairs.into_iter().map(|p| (p.id, p.generated, p.reference)).collect();

    let mut artifacts = BTreeMap::new();
    let (report, client) = match cfg.factual_service() {
        Some(service) => {
            let client = Arc::new(HttpClient::new(service.clone())?);
            let jobs = opts.jobs.min(service.max_concurrent).max(1);
            let ev = FactualEvaluator::new(
                Box::new(client.clone()),
                Box::new(client.clone()),
                Box::new(F1Overlap),
                jobs,
            )?;
            (ev.evaluate_corpus(&triples)?, Some(client))
        }
        None => {
            let ev = FactualEvaluator::new(Box::new(MockQg), Box::new(MockQa), Box::new(F1Overlap), opts.jobs)?;
            (ev.evaluate_corpus(&triples)?, None)
        }
    };
    let transcript = match &client {
        Some(c) => {
            let mut buf = Vec::new();
            for e in c.transcript() {
                serde_json::to_writer(&mut buf, &e)?;
                buf.push(b'\n');
            }
            let name = write_artifact(out, "factual-transcript", "jsonl", &buf)?;
            artifacts.insert("transcript".to_string(), name.clone());
            Some(name)
        }
        None => None,
    };
    let clients = if client.is_some() { "http" } else { "mock" };
    let body = json!({ "generations": source, "clients": clients, "transcript": transcript, "factual": report });
    artifacts.insert(
        "report".to_string(),
        write_artifact(out, "factual", "json", &report_bytes(body, cfg)?)?,
    );
    write_manifest(
        out,
        "factual",
        artifacts.clone(),
        json!({ "captions": report.captions, "failed_items": report.failed_items }),
    )?;
    if report.all_failed() {
        return Err(CliError::ServiceFailure(format!(
            "all {} factual items failed; see {}",
            report.items,
            out.join(&artifacts["report"]).display()
        )));
    }
    Ok(artifacts.values().map(|n| out.join(n)).collect())
}

/// Character and token length bias per direction.
pub fn cmd_bias(cfg: &RunConfig, _opts: &RunOptions) -> Result<Vec<PathBuf>> {
    let out = ensure_out_dir(cfg)?;
    let records = heldout_records(cfg)?;
    let mut body = serde_json::Map::new();
    for dir in cfg.direction.directions() {
        let (pairs, source) = eval_pairs(cfg, dir, &records)?;
        body.insert(
            dir.to_string(),
            json!({
                "generations": source,
                "char": textmetrics::length_bias(&pairs, LengthUnit::Char)?,
                "token": textmetrics::length_bias(&pairs, LengthUnit::Token)?,
            }),
        );
    }
    let mut artifacts = BTreeMap::new();
    artifacts.insert(
        "report".to_string(),
        write_artifact(out, "bias", "json", &report_bytes(Value::Object(body), cfg)?)?,
    );
    write_manifest(out, "bias", artifacts.clone(), json!({ "heldout": records.len() }))?;
    Ok(artifacts.values().map(|n| out.join(n)).collect())
}
