use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::gateway::{DecodingConfig, EndpointTable};
use crate::optimizer::OptimizerConfig;
use crate::retrieval::EmbedderConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub taxonomy: PathBuf,
    pub dataset: PathBuf,
    /// Component manifest; the bundled library when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub library: Option<PathBuf>,
    /// Index file; `<out>/index.pfvi` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<PathBuf>,
    /// Root for every artifact a command writes.
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            ratios: [0.70, 0.15, 0.15],
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    /// Self-consistency samples per exemplar.
    pub samples: usize,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig { samples: 5 }
    }
}

/// Everything a command needs, loaded from one TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub embedder: EmbedderConfig,
    #[serde(default)]
    pub decoding: DecodingConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub synthesis: SynthesisConfig,
    #[serde(default)]
    pub endpoints: EndpointTable,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Reads a config file and makes its relative paths absolute with
    /// respect to the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let base = if base.as_os_str().is_empty() { Path::new(".") } else { base };
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        resolve(base, &mut p.taxonomy);
        resolve(base, &mut p.dataset);
        resolve(base, &mut p.out);
        if let Some(l) = &mut p.library {
            resolve(base, l);
        }
        if let Some(i) = &mut p.index {
            resolve(base, i);
        }
        for spec in self.endpoints.values_mut() {
            spec.resolve_paths(base);
        }
    }

    pub fn index_path(&self) -> PathBuf {
        self.paths.index.clone().unwrap_or_else(|| self.paths.out.join("index.pfvi"))
    }

    pub fn split_path(&self) -> PathBuf {
        self.paths.out.join("split.json")
    }

    pub fn run_dir(&self) -> PathBuf {
        self.paths.out.join("run")
    }

    pub fn predictions_dir(&self) -> PathBuf {
        self.paths.out.join("predictions")
    }
}
