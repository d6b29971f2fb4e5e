//! Run configuration file.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::enhance::macros::DEFAULT_GLOBS;
use crate::ingest::DEFAULT_TOKEN_LIMIT;
use crate::localize::ProviderConfig;
use crate::verify::{Backend, EquivConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    /// SMT-LIB solver executable; the built-in solver is used when absent.
    pub path: Option<String>,
    pub args: Vec<String>,
    pub timeout_secs: f64,
    pub width: u32,
    /// Use exhaustive enumeration instead of a solver.
    pub exhaustive: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            path: None,
            args: vec!["-in".into()],
            timeout_secs: 10.0,
            width: 32,
            exhaustive: false,
        }
    }
}

impl SolverSettings {
    pub fn equiv_config(&self) -> EquivConfig {
        let backend = if self.exhaustive {
            Backend::Exhaustive { max_bits: 24 }
        } else if let Some(p) = &self.path {
            Backend::External { path: p.clone(), args: self.args.clone() }
        } else {
            Backend::Builtin
        };
        EquivConfig {
            width: self.width,
            timeout: Duration::from_secs_f64(self.timeout_secs.max(0.001)),
            backend,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub provider: ProviderConfig,
    pub token_limit: usize,
    pub solver: SolverSettings,
    /// Worker threads for corpus runs; defaults to the core count.
    pub workers: Option<usize>,
    /// Upper bound on workers imposed by provider rate limits.
    pub provider_concurrency: Option<usize>,
    pub macro_globs: Vec<String>,
    /// Directory for per-request audit transcripts.
    pub audit_dir: Option<PathBuf>,
    /// Directory for per-case report files.
    pub report_dir: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            provider: ProviderConfig::default(),
            token_limit: DEFAULT_TOKEN_LIMIT,
            solver: SolverSettings::default(),
            workers: None,
            provider_concurrency: None,
            macro_globs: DEFAULT_GLOBS.iter().map(|s| s.to_string()).collect(),
            audit_dir: None,
            report_dir: None,
        }
    }
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(x) = p {
        if x.is_relative() {
            *x = base.join(&*x);
        }
    }
}

impl Config {
    /// Reads a JSON config; relative paths are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Config, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: Config = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut cfg.provider.replay_dir);
        resolve(base, &mut cfg.audit_dir);
        resolve(base, &mut cfg.report_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.provider.validate().map_err(PipelineError::Config)?;
        if self.token_limit == 0 {
            return Err(PipelineError::Config("token_limit must be positive".into()));
        }
        if self.solver.width == 0 || self.solver.width > 64 {
            return Err(PipelineError::Config(format!("solver width {} outside 1..=64", self.solver.width)));
        }
        if self.workers == Some(0) {
            return Err(PipelineError::Config("workers must be positive".into()));
        }
        Ok(())
    }

    pub fn worker_count(&self) -> usize {
        let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
        let n = self.workers.unwrap_or(cores);
        self.provider_concurrency.map_or(n, |cap| n.min(cap.max(1))).max(1)
    }
}
