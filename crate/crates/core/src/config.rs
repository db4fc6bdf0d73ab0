//! Global run configuration: a TOML key-value file, overridable by flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusError, Preprocessor, DEFAULT_DATE_PATTERNS, DEFAULT_SEPARATOR};
use crate::pipeline::PipelineOptions;
use crate::temporal::DEFAULT_HISTORY_THRESHOLD_DAYS;

/// Looked up in the working directory when no `--config` is given.
pub const CONFIG_FILE: &str = "trialsift.toml";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("parallelism must be at least 1")]
    Parallelism,
    #[error("history_threshold_days must not be negative")]
    Threshold,
    #[error(transparent)]
    Patterns(#[from] CorpusError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub store: PathBuf,
    pub rules: PathBuf,
    /// Predictions, traces and reports are written under this directory.
    pub output: PathBuf,
    /// Gold label directory used by the server's eval endpoint.
    pub gold: Option<PathBuf>,
    pub history_threshold_days: i64,
    pub parallelism: usize,
    pub separator: String,
    pub date_patterns: Vec<String>,
    pub serve_address: String,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            store: "trialsift.db".into(),
            rules: "rules".into(),
            output: "out".into(),
            gold: None,
            history_threshold_days: DEFAULT_HISTORY_THRESHOLD_DAYS,
            parallelism: 1,
            separator: DEFAULT_SEPARATOR.to_string(),
            date_patterns: DEFAULT_DATE_PATTERNS.iter().map(|p| p.to_string()).collect(),
            serve_address: "127.0.0.1:7878".into(),
        }
    }
}

impl Config {
    /// Parses `text`; relative paths are taken relative to `base`.
    pub fn from_toml(text: &str, base: &Path, path: &Path) -> Result<Config, ConfigError> {
        let mut c: Config = toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        c.rebase(base);
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        Config::from_toml(&text, base, path)
    }

    /// An explicit path must exist; otherwise [`CONFIG_FILE`] is used if
    /// present, else the defaults.
    pub fn discover(explicit: Option<&Path>) -> Result<Config, ConfigError> {
        match explicit {
            Some(p) => Config::load(p),
            None if Path::new(CONFIG_FILE).is_file() => Config::load(Path::new(CONFIG_FILE)),
            None => Ok(Config::default()),
        }
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !base.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.store);
        fix(&mut self.rules);
        fix(&mut self.output);
        if let Some(g) = self.gold.as_mut() {
            fix(g);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.parallelism == 0 {
            return Err(ConfigError::Parallelism);
        }
        if self.history_threshold_days < 0 {
            return Err(ConfigError::Threshold);
        }
        self.preprocessor()?;
        Ok(())
    }

    pub fn preprocessor(&self) -> Result<Preprocessor, CorpusError> {
        Preprocessor::new(&self.separator, &self.date_patterns)
    }

    pub fn pipeline_options(&self) -> PipelineOptions {
        PipelineOptions {
            history_threshold_days: self.history_threshold_days,
            ..PipelineOptions::default()
        }
    }

    pub fn predictions_dir(&self) -> PathBuf {
        self.output.join("predictions")
    }

    pub fn traces_dir(&self) -> PathBuf {
        self.output.join("traces")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
