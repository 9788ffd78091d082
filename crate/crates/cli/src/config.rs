//! Project configuration (`weaklab.toml`).

use std::path::{Path, PathBuf};

use serde::Deserialize;
use weaklab::active::LifecycleThresholds;
use weaklab::campaign::CampaignConfig;
use weaklab::classifier::{default_search_grid, FeatureSpec, TrainConfig, SEARCH_SIZE};
use weaklab::{GenerativeConfig, LabelSpace, LfKind};

use crate::Failure;

pub const DEFAULT_CONFIG_FILE: &str = "weaklab.toml";

/// File locations. Relative paths resolve against the config file's
/// directory.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: PathBuf,
    pub matrix: PathBuf,
    pub rules: PathBuf,
    pub params: PathBuf,
    pub posteriors: PathBuf,
    /// Directory for `model.json` and the search report.
    pub models: PathBuf,
    pub rounds_log: PathBuf,
    /// Live state of a served campaign.
    pub state_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            dataset: "examples.jsonl".into(),
            matrix: "matrix.jsonl".into(),
            rules: "rules.jsonl".into(),
            params: "params.json".into(),
            posteriors: "posteriors.jsonl".into(),
            models: "models".into(),
            rounds_log: "rounds.jsonl".into(),
            state_dir: "state".into(),
        }
    }
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.dataset,
            &mut self.matrix,
            &mut self.rules,
            &mut self.params,
            &mut self.posteriors,
            &mut self.models,
            &mut self.rounds_log,
            &mut self.state_dir,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn model_file(&self) -> PathBuf {
        self.models.join("model.json")
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActiveSection {
    pub batch_size: usize,
    pub seed: u64,
    pub conflict_weight: f64,
    pub score_kinds: Option<LfKind>,
    pub lifecycle: LifecycleThresholds,
    pub lifecycle_kinds: Vec<LfKind>,
    /// Annotator ids registered when the service starts.
    pub annotators: Vec<String>,
}

impl Default for ActiveSection {
    fn default() -> Self {
        let c = CampaignConfig::default();
        ActiveSection {
            batch_size: c.batch_size,
            seed: c.seed,
            conflict_weight: c.conflict_weight,
            score_kinds: c.score_kinds,
            lifecycle: c.lifecycle,
            lifecycle_kinds: c.lifecycle_kinds,
            annotators: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSection {
    pub host: String,
    pub port: u16,
    /// Origin allowed by CORS; any origin when unset.
    pub allowed_origin: Option<String>,
}

impl Default for ServiceSection {
    fn default() -> Self {
        ServiceSection {
            host: "127.0.0.1".into(),
            port: 8080,
            allowed_origin: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectConfig {
    pub paths: Paths,
    pub label_space: LabelSpace,
    pub label_model: GenerativeConfig,
    pub features: FeatureSpec,
    /// The hyperparameter search grid. The first entry also trains the
    /// campaign model.
    pub train: Vec<TrainConfig>,
    pub active: ActiveSection,
    pub service: ServiceSection,
}

impl Default for ProjectConfig {
    fn default() -> Self {
        ProjectConfig {
            paths: Paths::default(),
            label_space: LabelSpace::iqa(),
            label_model: GenerativeConfig::default(),
            features: FeatureSpec::default(),
            train: default_search_grid(),
            active: ActiveSection::default(),
            service: ServiceSection::default(),
        }
    }
}

const PATH_OVERRIDES: [&str; 8] = [
    "WEAKLAB_DATASET",
    "WEAKLAB_MATRIX",
    "WEAKLAB_RULES",
    "WEAKLAB_PARAMS",
    "WEAKLAB_POSTERIORS",
    "WEAKLAB_MODELS",
    "WEAKLAB_ROUNDS_LOG",
    "WEAKLAB_STATE_DIR",
];

impl ProjectConfig {
    /// Reads `path`, or `weaklab.toml` in the working directory when it
    /// exists, or falls back to defaults. Environment overrides apply last.
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let (mut config, base) = match path {
            Some(p) => (Self::read(p)?, p.parent().map(Path::to_path_buf).unwrap_or_default()),
            None if Path::new(DEFAULT_CONFIG_FILE).exists() => (Self::read(Path::new(DEFAULT_CONFIG_FILE))?, PathBuf::new()),
            None => (ProjectConfig::default(), PathBuf::new()),
        };
        config.paths.resolve(&base);
        config.apply_env(|k| std::env::var(k).ok())?;
        Ok(config)
    }

    fn read(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<(), Failure> {
        let p = &mut self.paths;
        let targets = [
            &mut p.dataset,
            &mut p.matrix,
            &mut p.rules,
            &mut p.params,
            &mut p.posteriors,
            &mut p.models,
            &mut p.rounds_log,
            &mut p.state_dir,
        ];
        for (key, target) in PATH_OVERRIDES.iter().zip(targets) {
            if let Some(v) = var(key) {
                *target = PathBuf::from(v);
            }
        }
        if let Some(port) = var("WEAKLAB_PORT") {
            self.service.port = port
                .parse()
                .map_err(|_| Failure::Usage(format!("WEAKLAB_PORT is not a port number: {port}")))?;
        }
        Ok(())
    }

    pub fn campaign_config(&self) -> CampaignConfig {
        CampaignConfig {
            batch_size: self.active.batch_size,
            seed: self.active.seed,
            conflict_weight: self.active.conflict_weight,
            score_kinds: self.active.score_kinds,
            lifecycle: self.active.lifecycle.clone(),
            lifecycle_kinds: self.active.lifecycle_kinds.clone(),
            label_model: self.label_model.clone(),
            train: self.train.first().cloned().unwrap_or_default(),
            feature_spec: self.features.clone(),
        }
    }

    pub fn search_grid(&self) -> Result<&[TrainConfig], Failure> {
        if self.train.len() != SEARCH_SIZE {
            return Err(Failure::Usage(format!(
                "the search needs exactly {SEARCH_SIZE} [[train]] entries, the config has {}",
                self.train.len()
            )));
        }
        Ok(&self.train)
    }
}
