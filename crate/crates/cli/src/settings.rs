//! Effective per-command settings: defaults, overlaid by the TOML config file,
//! overlaid by command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tfbeam::figure::DEFAULT_FLOOR_DB;
use tfbeam::neural::TrainConfig;
use tfbeam::pipeline::{Method, ProcessConfig};
use tfbeam::scene::CorpusConfig;
use tfbeam::StftConfig;

use crate::CliError;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct GenCorpusSettings {
    pub out: Option<PathBuf>,
    #[serde(flatten)]
    pub corpus: CorpusConfig,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSettings {
    pub corpus: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub method: Option<Method>,
    pub checkpoint: Option<PathBuf>,
    #[serde(flatten)]
    pub process: ProcessConfig,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub corpus: Option<PathBuf>,
    pub val_corpus: Option<PathBuf>,
    pub out: Option<PathBuf>,
    #[serde(flatten)]
    pub train: TrainConfig,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateSettings {
    pub corpus: Option<PathBuf>,
    /// Directory holding one sub-directory of WAVs per method.
    pub outputs: Option<PathBuf>,
    /// Methods to score; every method directory found when empty.
    pub methods: Vec<Method>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PlotSettings {
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub beam: usize,
    pub channel: usize,
    pub floor_db: f64,
    pub stft: StftConfig,
}

impl Default for PlotSettings {
    fn default() -> Self {
        Self {
            input: None,
            out: None,
            beam: 0,
            channel: 0,
            floor_db: DEFAULT_FLOOR_DB,
            stft: StftConfig::default(),
        }
    }
}

/// Contents of a `--config` file, one table per subcommand.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct FileConfig {
    pub gen_corpus: GenCorpusSettings,
    pub run: RunSettings,
    pub train: TrainSettings,
    pub evaluate: EvaluateSettings,
    pub plot: PlotSettings,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }
}

/// Prints the effective configuration as one JSON line.
pub fn echo(command: &str, settings: &impl Serialize) -> Result<(), CliError> {
    let line = serde_json::json!({ "command": command, "config": settings });
    println!("{line}");
    Ok(())
}
