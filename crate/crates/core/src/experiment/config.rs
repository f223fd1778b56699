use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cohort::{GeneratorConfig, SiteConfig};
use crate::error::{Error, Result};
use crate::fed::{Algorithm, TrainConfig};
use crate::model::{ArchConfig, HighCardSpec, DEFAULT_EMBED_DIM};
use crate::personalize::PersonalizeConfig;
use crate::pipeline::SplitSpec;

/// Network widths; input sizes follow from the generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub embed_dim: usize,
    pub branch_hidden: usize,
    pub merge_hidden: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { embed_dim: DEFAULT_EMBED_DIM, branch_hidden: 32, merge_hidden: 64 }
    }
}

/// A training job listed under `runs`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunKind {
    /// One model per development site.
    Local,
    /// One model on the pooled development data.
    Central,
    FedAvg,
    FedProx,
    Scaffold,
    /// Per-site fine-tuning of the `personalize.base` federated model.
    Personalized,
}

impl RunKind {
    pub fn algorithm(self) -> Option<Algorithm> {
        match self {
            RunKind::FedAvg => Some(Algorithm::FedAvg),
            RunKind::FedProx => Some(Algorithm::FedProx),
            RunKind::Scaffold => Some(Algorithm::Scaffold),
            _ => None,
        }
    }

    pub fn from_algorithm(a: Algorithm) -> Self {
        match a {
            Algorithm::FedAvg => RunKind::FedAvg,
            Algorithm::FedProx => RunKind::FedProx,
            Algorithm::Scaffold => RunKind::Scaffold,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transport {
    /// Sites called directly, full precision.
    Direct,
    /// Every exchange encoded and decoded as wire frames.
    InProcess,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub local: TrainConfig,
    pub central: TrainConfig,
    pub federated: TrainConfig,
    /// Transport used by `train` for federated runs.
    pub transport: Transport,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            local: TrainConfig::default(),
            central: TrainConfig::default(),
            federated: TrainConfig::default(),
            transport: Transport::InProcess,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PersonalizeSection {
    /// Federated run whose model is fine-tuned.
    pub base: RunKind,
    pub train: TrainConfig,
    pub surgeon: PersonalizeConfig,
}

impl Default for PersonalizeSection {
    fn default() -> Self {
        PersonalizeSection {
            base: RunKind::Scaffold,
            train: TrainConfig { lr: 0.05, rounds: 20, patience: 5, ..TrainConfig::default() },
            surgeon: PersonalizeConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub n_boot: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection { n_boot: crate::metrics::DEFAULT_N_BOOT, alpha: crate::metrics::DEFAULT_ALPHA, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoordinatorSection {
    /// `host:port`; the `FEDRISK_ENDPOINT` environment variable overrides it.
    pub endpoint: String,
    /// How long to wait for every site to join.
    pub join_timeout_secs: u64,
    /// Federated algorithm run over sockets.
    pub algorithm: Algorithm,
}

impl Default for CoordinatorSection {
    fn default() -> Self {
        CoordinatorSection { endpoint: "127.0.0.1:7878".into(), join_timeout_secs: 120, algorithm: Algorithm::Scaffold }
    }
}

/// One declarative document describing a whole experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub generator: GeneratorConfig,
    pub development: Vec<SiteConfig>,
    #[serde(default)]
    pub external: Vec<SiteConfig>,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub personalize: PersonalizeSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default)]
    pub coordinator: CoordinatorSection,
    /// Jobs run by `train`, in order.
    #[serde(default = "default_runs")]
    pub runs: Vec<RunKind>,
}

fn default_runs() -> Vec<RunKind> {
    vec![RunKind::Local, RunKind::Central, RunKind::FedAvg, RunKind::FedProx, RunKind::Scaffold]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SiteRole {
    Development,
    External,
}

impl ExperimentConfig {
    /// Three development and two external sites shaped like the default
    /// profiles.
    pub fn example(output_dir: impl Into<PathBuf>, n_patients: usize) -> Self {
        ExperimentConfig {
            seed: 20_240_601,
            output_dir: output_dir.into(),
            generator: GeneratorConfig::default(),
            development: vec![
                SiteConfig::partner3(n_patients),
                SiteConfig::partner4(n_patients),
                SiteConfig::partner6(n_patients),
            ],
            external: vec![SiteConfig::external("partner1", n_patients), SiteConfig::external("partner2", n_patients)],
            split: SplitSpec::default(),
            model: ModelSection::default(),
            training: TrainingSection::default(),
            personalize: PersonalizeSection::default(),
            evaluation: EvaluationSection::default(),
            coordinator: CoordinatorSection::default(),
            runs: default_runs(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        if self.development.is_empty() {
            return Err(Error::Config("at least one development site is required".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in self.sites() {
            s.0.validate()?;
            if !seen.insert(s.0.site_name.as_str()) {
                return Err(Error::Config(format!("site `{}` is listed twice", s.0.site_name)));
            }
            if s.0.site_name.is_empty() || s.0.site_name.contains(['/', '\\']) || s.0.site_name.contains("__") {
                return Err(Error::Config(format!("site name `{}` cannot be used in file names", s.0.site_name)));
            }
        }
        for t in [&self.training.local, &self.training.central, &self.training.federated, &self.personalize.train] {
            t.validate()?;
        }
        if self.personalize.base.algorithm().is_none() {
            return Err(Error::Config("personalize.base must be a federated run".into()));
        }
        if self.model.embed_dim == 0 || self.model.branch_hidden == 0 || self.model.merge_hidden == 0 {
            return Err(Error::Config("model widths must be positive".into()));
        }
        Ok(())
    }

    /// Every site with its role, development sites first.
    pub fn sites(&self) -> impl Iterator<Item = (&SiteConfig, SiteRole)> {
        self.development
            .iter()
            .map(|s| (s, SiteRole::Development))
            .chain(self.external.iter().map(|s| (s, SiteRole::External)))
    }

    pub fn site(&self, name: &str) -> Result<(&SiteConfig, SiteRole)> {
        self.sites()
            .find(|(s, _)| s.site_name == name)
            .ok_or_else(|| Error::Config(format!("no site named `{name}` in the configuration")))
    }

    /// Shared category catalog: procedure codes, then each categorical column.
    pub fn catalog(&self) -> Vec<usize> {
        std::iter::once(self.generator.n_procedures).chain(self.generator.categorical_vocab.iter().copied()).collect()
    }

    pub fn arch(&self) -> ArchConfig {
        ArchConfig {
            n_continuous: self.generator.n_continuous,
            n_binary: self.generator.n_binary,
            high_card: self
                .catalog()
                .into_iter()
                .map(|v| HighCardSpec { vocab: v + 1, embed_dim: self.model.embed_dim })
                .collect(),
            branch_hidden: self.model.branch_hidden,
            merge_hidden: self.model.merge_hidden,
        }
    }

    pub fn cohort_dir(&self) -> PathBuf {
        self.output_dir.join("cohorts")
    }
    pub fn cohort_path(&self, site: &str) -> PathBuf {
        self.cohort_dir().join(format!("{site}.csv"))
    }
    pub fn model_dir(&self, model: &str) -> PathBuf {
        self.output_dir.join("models").join(model)
    }
    pub fn score_path(&self, model: &str, site: &str) -> PathBuf {
        self.output_dir.join("scores").join(format!("{model}__{site}.csv"))
    }
    pub fn report_dir(&self) -> PathBuf {
        self.output_dir.join("reports")
    }
}
