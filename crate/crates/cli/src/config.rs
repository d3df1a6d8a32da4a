use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use vmr_core::dataset::GridConfig;
use vmr_core::datamodel::Split;
use vmr_core::enhancement::EncoderConfig;
use vmr_core::narration::{FixtureNarrator, NarrateOptions, NarratorClient, RemoteNarrator, DEFAULT_PROMPT};
use vmr_core::paragraph_branch::FusionConfig;
use vmr_core::training::TrainConfig;
use vmr_core::{Error, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum NarratorMode {
    Fixture,
    Remote,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Word-embedding table in whitespace-separated text format.
    pub embeddings: PathBuf,
    /// Training manifest.
    pub train: PathBuf,
    /// Evaluation manifests by split name.
    #[serde(default)]
    pub splits: BTreeMap<String, PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NarratorConfig {
    pub mode: NarratorMode,
    /// Caption fixtures for `mode = "fixture"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixtures: Option<PathBuf>,
    /// Captioning endpoint for `mode = "remote"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    /// Frame reference sent to the endpoint; `{video_id}`, `{t}` and `{ms}` are substituted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_ref_template: Option<String>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_retries")]
    pub retries: u32,
    /// Defaults to `<output_dir>/narrations`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

fn default_model() -> String {
    "llava-v1.5-13b".into()
}

fn default_parallelism() -> usize {
    4
}

fn default_retries() -> u32 {
    3
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub encoder: EncoderConfig,
    pub narrative_merge: bool,
    pub paragraph_branch: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { encoder: EncoderConfig::default(), narrative_merge: true, paragraph_branch: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds initialisation, batch order and dropout; overrides `train.seed`.
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub grid: GridConfig,
    pub narrator: NarratorConfig,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub fusion: FusionConfig,
}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Error::Validation(msg.into()).into()
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// Reads a TOML file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut cfg.output_dir);
        resolve(base, &mut cfg.data.embeddings);
        resolve(base, &mut cfg.data.train);
        cfg.data.splits.values_mut().for_each(|p| resolve(base, p));
        if let Some(p) = cfg.narrator.fixtures.as_mut() {
            resolve(base, p);
        }
        if let Some(p) = cfg.narrator.cache_dir.as_mut() {
            resolve(base, p);
        }
        cfg.train.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.model.encoder.validate()?;
        self.train.validate()?;
        self.fusion.validate()?;
        if self.grid.snippets == 0 || !(self.grid.frame_interval > 0.0) {
            return Err(invalid("grid.snippets and grid.frame_interval must be positive"));
        }
        for name in self.data.splits.keys() {
            name.parse::<Split>()?;
        }
        for p in [&self.data.embeddings, &self.data.train] {
            if !p.exists() {
                return Err(invalid(format!("{} does not exist", p.display())));
            }
        }
        if self.narrator.parallelism == 0 {
            return Err(invalid("narrator.parallelism must be positive"));
        }
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.narrator.cache_dir.clone().unwrap_or_else(|| self.output_dir.join("narrations"))
    }

    pub fn narrate_options(&self) -> NarrateOptions {
        let mut opts = NarrateOptions {
            prompt: self.narrator.prompt.clone().unwrap_or_else(|| DEFAULT_PROMPT.to_owned()),
            parallelism: self.narrator.parallelism,
            ..Default::default()
        };
        if let Some(t) = &self.narrator.frame_ref_template {
            opts.frame_ref_template = t.clone();
        }
        opts
    }

    pub fn client(&self) -> anyhow::Result<Box<dyn NarratorClient>> {
        match self.narrator.mode {
            NarratorMode::Fixture => {
                let path = self.narrator.fixtures.as_ref().ok_or_else(|| invalid("narrator.fixtures is required in fixture mode"))?;
                Ok(Box::new(FixtureNarrator::load(path)?))
            }
            NarratorMode::Remote => {
                let endpoint = self.narrator.endpoint.as_ref().ok_or_else(|| invalid("narrator.endpoint is required in remote mode"))?;
                Ok(Box::new(
                    RemoteNarrator::new(endpoint.clone(), self.narrator.model.clone())
                        .with_retries(self.narrator.retries, Duration::from_millis(500)),
                ))
            }
        }
    }

    /// Manifest path of a split; `train` maps to `data.train`.
    pub fn manifest_path(&self, split: Split) -> Option<&Path> {
        match split {
            Split::Train => Some(&self.data.train),
            other => self.data.splits.get(other.as_str()).map(PathBuf::as_path),
        }
    }

    /// Every configured split, training first.
    pub fn configured_splits(&self) -> Vec<Split> {
        Split::ALL.into_iter().filter(|s| self.manifest_path(*s).is_some()).collect()
    }

    pub fn model_config(&self, d_v: usize, d_w: usize) -> ModelConfig {
        ModelConfig {
            encoder: self.model.encoder,
            d_v,
            d_w,
            narrative_merge: self.model.narrative_merge,
            paragraph_branch: self.model.paragraph_branch,
        }
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        toml::to_string_pretty(self).context("serialising config")
    }
}
