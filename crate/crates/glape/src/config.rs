//! TOML run configuration.
//!
//! A config file has per-module sections with defaults for every field, so a
//! minimal file only names the dataset and the backends. Relative paths are
//! resolved against the config file's directory at load time; the resolved
//! snapshot is what gets archived into a run directory, keeping runs
//! reproducible after the original file changes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::answers::TaskKind;
use crate::backend::http::HttpConfig;
use crate::backend::replay::ReplayFixture;
use crate::backend::{Backend, HttpBackend, ReplayBackend};
use crate::error::{Error, Result};
use crate::solver::SolverConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    /// Run seed: drives subsetting, replay draws, and cache keys.
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub optimizer: OptimizerConfig,
    pub solver: SolverConfig,
    /// Backend and sampling settings for scoring candidate prompts.
    pub evaluation: RoleConfig,
    /// Backend and sampling settings for proposing new candidates.
    pub optimization: RoleConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            seed: 42,
            dataset: DatasetConfig::default(),
            optimizer: OptimizerConfig::default(),
            solver: SolverConfig::default(),
            evaluation: RoleConfig::evaluation_default(),
            optimization: RoleConfig::optimization_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: String,
    pub task_kind: TaskKind,
    /// Evaluate on a fixed seeded subset instead of the full file.
    pub subset_size: Option<usize>,
    /// Defaults to the run seed.
    pub subset_seed: Option<u64>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            path: String::new(),
            task_kind: TaskKind::Numeric,
            subset_size: None,
            subset_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub iterations: usize,
    pub candidates_per_iteration: usize,
    pub initial_prompts: Vec<String>,
    /// How many best-scoring entries the meta-prompt shows.
    pub top_k: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            iterations: 16,
            candidates_per_iteration: 8,
            initial_prompts: vec!["Let's think step by step.".to_string()],
            top_k: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoleConfig {
    /// `"http"` or `"replay:<fixture path>"`.
    pub backend: String,
    pub model: String,
    pub temperature: f64,
    pub n_samples: usize,
    pub max_tokens: u32,
    pub system_text: Option<String>,
    /// Transport settings, used when `backend = "http"`.
    pub http: HttpConfig,
}

impl RoleConfig {
    pub fn evaluation_default() -> Self {
        RoleConfig {
            backend: "http".to_string(),
            model: "gpt-3.5-turbo-0613".to_string(),
            temperature: 0.7,
            n_samples: 10,
            max_tokens: 1024,
            system_text: None,
            http: HttpConfig::default(),
        }
    }

    pub fn optimization_default() -> Self {
        RoleConfig {
            temperature: 1.0,
            n_samples: 8,
            ..Self::evaluation_default()
        }
    }
}

impl Default for RoleConfig {
    fn default() -> Self {
        Self::evaluation_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Http,
    Replay(PathBuf),
}

impl RoleConfig {
    pub fn backend_spec(&self) -> Result<BackendSpec> {
        if self.backend == "http" {
            Ok(BackendSpec::Http)
        } else if let Some(path) = self.backend.strip_prefix("replay:") {
            if path.is_empty() {
                Err(Error::Config("replay backend needs a fixture path".into()))
            } else {
                Ok(BackendSpec::Replay(PathBuf::from(path)))
            }
        } else {
            Err(Error::Config(format!(
                "unknown backend \"{}\" (expected \"http\" or \"replay:<path>\")",
                self.backend
            )))
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let Some(rest) = self.backend.strip_prefix("replay:") {
            let p = Path::new(rest);
            if p.is_relative() && !rest.is_empty() {
                self.backend = format!("replay:{}", base.join(p).display());
            }
        }
        if let Some(cache) = &self.http.cache_path {
            if cache.is_relative() {
                self.http.cache_path = Some(base.join(cache));
            }
        }
    }

    pub fn validate(&self, section: &str) -> Result<()> {
        self.backend_spec()?;
        if self.model.is_empty() {
            return Err(Error::Config(format!("{section}.model is empty")));
        }
        if self.n_samples == 0 {
            return Err(Error::Config(format!(
                "{section}.n_samples must be at least 1"
            )));
        }
        if !(self.temperature >= 0.0) {
            return Err(Error::Config(format!(
                "{section}.temperature must be non-negative, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(Error::Config(format!(
                "{section}.max_tokens must be at least 1"
            )));
        }
        if matches!(self.backend_spec()?, BackendSpec::Http) {
            self.http.validate()?;
        }
        Ok(())
    }

    /// Build the transport this role is configured for.
    pub fn build_backend(&self, run_seed: u64) -> Result<Box<dyn Backend>> {
        match self.backend_spec()? {
            BackendSpec::Http => {
                let backend = HttpBackend::new(self.http.clone(), run_seed)?;
                Ok(Box::new(backend))
            }
            BackendSpec::Replay(path) => {
                let fixture = ReplayFixture::load(&path)?;
                Ok(Box::new(ReplayBackend::new(fixture, run_seed)))
            }
        }
    }
}

impl AppConfig {
    /// Load a config file, resolve relative paths against its directory, and
    /// validate.
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: AppConfig = toml::from_str(&raw)
            .map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if !self.dataset.path.is_empty() && Path::new(&self.dataset.path).is_relative() {
            self.dataset.path = base.join(&self.dataset.path).display().to_string();
        }
        self.evaluation.resolve_paths(base);
        self.optimization.resolve_paths(base);
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.path.is_empty() {
            return Err(Error::Config("dataset.path is required".into()));
        }
        if let Some(n) = self.dataset.subset_size {
            if n == 0 {
                return Err(Error::Config("dataset.subset_size must be at least 1".into()));
            }
        }
        if self.optimizer.iterations == 0 {
            return Err(Error::Config("optimizer.iterations must be at least 1".into()));
        }
        if self.optimizer.candidates_per_iteration == 0 {
            return Err(Error::Config(
                "optimizer.candidates_per_iteration must be at least 1".into(),
            ));
        }
        if self.optimizer.top_k == 0 {
            return Err(Error::Config("optimizer.top_k must be at least 1".into()));
        }
        if self.optimizer.initial_prompts.is_empty() {
            return Err(Error::Config(
                "optimizer.initial_prompts must contain at least one prompt".into(),
            ));
        }
        self.solver.validate()?;
        self.evaluation.validate("evaluation")?;
        self.optimization.validate("optimization")?;
        Ok(())
    }

    /// Seed used for dataset subsetting.
    pub fn subset_seed(&self) -> u64 {
        self.dataset.subset_seed.unwrap_or(self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn minimal_config_gets_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            r#"
[dataset]
path = "questions.jsonl"

[evaluation]
backend = "replay:fixture.json"

[optimization]
backend = "replay:fixture.json"
"#,
        )
        .unwrap();
        let cfg = AppConfig::load(&path).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.optimizer.iterations, 16);
        assert_eq!(cfg.optimizer.candidates_per_iteration, 8);
        assert_eq!(cfg.evaluation.temperature, 0.7);
        assert_eq!(cfg.evaluation.n_samples, 10);
        assert_eq!(cfg.optimization.temperature, 1.0);
        assert_eq!(cfg.solver.alpha, 0.5);
        assert_eq!(
            cfg.optimizer.initial_prompts,
            vec!["Let's think step by step.".to_string()]
        );
        // relative paths are pinned to the config directory
        assert!(Path::new(&cfg.dataset.path).is_absolute() || dir.path().is_relative());
        assert!(cfg.dataset.path.ends_with("questions.jsonl"));
        assert!(cfg.dataset.path.contains(dir.path().to_str().unwrap()));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[dataset]\npath = \"x\"\ntypo_field = 3\n").unwrap();
        let err = AppConfig::load(&path).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "got: {err}");
    }

    #[test]
    fn alpha_out_of_range_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "[dataset]\npath = \"x\"").unwrap();
        writeln!(f, "[solver]\nalpha = 0.0").unwrap();
        writeln!(f, "[evaluation]\nbackend = \"replay:f.json\"").unwrap();
        writeln!(f, "[optimization]\nbackend = \"replay:f.json\"").unwrap();
        let err = AppConfig::load(&path).unwrap_err();
        assert!(err.to_string().contains("alpha"), "got: {err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn backend_spec_parsing() {
        let mut role = RoleConfig::evaluation_default();
        assert_eq!(role.backend_spec().unwrap(), BackendSpec::Http);
        role.backend = "replay:/tmp/f.json".into();
        assert_eq!(
            role.backend_spec().unwrap(),
            BackendSpec::Replay(PathBuf::from("/tmp/f.json"))
        );
        role.backend = "carrier-pigeon".into();
        assert!(role.backend_spec().is_err());
    }
}
