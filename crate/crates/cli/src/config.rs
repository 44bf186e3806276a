//! Run configuration: one JSON file, relative paths resolved against the
//! file's directory, command-line flags applied on top.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use xmodal_pref_core::data::{Direction, SplitSpec};
use xmodal_pref_core::factual::QaServiceConfig;
use xmodal_pref_core::policy::TrainConfig;
use xmodal_pref_core::textmetrics::MetricConfig;

use crate::error::CliError;

/// Environment variable overriding the factual service endpoint.
pub const QA_ENDPOINT_ENV: &str = "XMODAL_PREF_QA_ENDPOINT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DirectionChoice {
    Mol2lang,
    Lang2mol,
    #[default]
    Both,
}

impl DirectionChoice {
    pub fn directions(self) -> Vec<Direction> {
        match self {
            DirectionChoice::Mol2lang => vec![Direction::Mol2Lang],
            DirectionChoice::Lang2mol => vec![Direction::Lang2Mol],
            DirectionChoice::Both => Direction::ALL.to_vec(),
        }
    }
}

/// Source of dis-preferred outputs when building triples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    #[default]
    Noiser,
    File,
    Policy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Corpus of `{id, molecule, caption[, category]}` lines (`.tsv` also accepted).
    pub corpus: Option<PathBuf>,
    pub fraction: f64,
    /// Train / validation / test fractions.
    pub split: (f64, f64, f64),
    pub route: Route,
    /// `{id, output}` lines for the file route.
    pub dispreferred: Option<PathBuf>,
    /// Policy decoded greedily for the policy route.
    pub dispreferred_policy: Option<PathBuf>,
    pub edit_rate: f64,
    /// Training triples; defaults to the last build-prefs output.
    pub triples: Option<PathBuf>,
    pub validation_triples: Option<PathBuf>,
    /// Held-out corpus; defaults to the test split of the last build-prefs.
    pub heldout: Option<PathBuf>,
    /// Trained policy; defaults to the last train output.
    pub policy: Option<PathBuf>,
    /// Precomputed `{id, output}` generations per direction.
    pub generations: BTreeMap<Direction, PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            fraction: 0.1,
            split: (0.8, 0.1, 0.1),
            route: Route::Noiser,
            dispreferred: None,
            dispreferred_policy: None,
            edit_rate: 0.1,
            triples: None,
            validation_triples: None,
            heldout: None,
            policy: None,
            generations: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub max_len: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self { max_len: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub direction: DirectionChoice,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub generate: GenerateConfig,
    pub metrics: MetricConfig,
    /// External question generation/answering service; an empty endpoint
    /// selects the built-in mock clients.
    pub factual: QaServiceConfig,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            direction: DirectionChoice::Both,
            data: DataConfig::default(),
            train: TrainConfig::default(),
            generate: GenerateConfig::default(),
            metrics: MetricConfig::default(),
            factual: QaServiceConfig::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub qa_endpoint: Option<String>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Input(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        if let Some(seed) = overrides.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &overrides.out_dir {
            cfg.out_dir = out.clone();
        }
        if let Some(endpoint) = &overrides.qa_endpoint {
            cfg.factual.endpoint = endpoint.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let d = &mut self.data;
        for p in [
            &mut d.corpus,
            &mut d.dispreferred,
            &mut d.dispreferred_policy,
            &mut d.triples,
            &mut d.validation_triples,
            &mut d.heldout,
            &mut d.policy,
        ]
        .into_iter()
        .flatten()
        {
            resolve(base, p);
        }
        for p in d.generations.values_mut() {
            resolve(base, p);
        }
        resolve(base, &mut self.out_dir);
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let d = &self.data;
        if !(d.fraction > 0.0 && d.fraction <= 1.0) {
            return Err(CliError::Input(format!(
                "data.fraction must lie in (0, 1], got {}",
                d.fraction
            )));
        }
        self.split_spec()
            .validate()
            .map_err(|e| CliError::Input(e.to_string()))?;
        self.metrics.validate().map_err(|e| CliError::Input(e.to_string()))?;
        self.train.validate().map_err(|e| CliError::Input(e.to_string()))?;
        if self.generate.max_len == 0 {
            return Err(CliError::Input("generate.max_len must be >= 1".into()));
        }
        let paths = [
            &d.corpus,
            &d.dispreferred,
            &d.dispreferred_policy,
            &d.triples,
            &d.validation_triples,
            &d.heldout,
            &d.policy,
        ];
        for p in paths.into_iter().flatten().chain(d.generations.values()) {
            if !p.exists() {
                return Err(CliError::Input(format!("path does not exist: {}", p.display())));
            }
        }
        Ok(())
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            fractions: self.data.split,
            seed: xmodal_pref_core::hash::stage_seed(self.seed, "split"),
        }
    }

    /// The factual service, or `None` for the mock clients.
    pub fn factual_service(&self) -> Option<&QaServiceConfig> {
        (!self.factual.endpoint.is_empty()).then_some(&self.factual)
    }
}
