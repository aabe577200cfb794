use std::path::Path;
use std::time::Duration;

use mrta_core::reward::check_gamma;
use mrta_core::{GeneratorConfig, RolloutConfig, SolverOptions, DEFAULT_GAMMA};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Contents of the optional `--config` TOML file. Every field has a default,
/// and command-line flags override whatever the file sets.
///
/// ```toml
/// jobs = 4
/// seed = 7
/// gamma = 0.99
/// time_limit_s = 60.0
/// dataset_size = 1000
///
/// [generator]
/// n_robots = 3
/// n_tasks = 8
/// n_precedence = 3
///
/// [rollouts]
/// sigma = 0.05
/// n_rollouts = 10
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    /// Worker threads for per-instance parallelism; 0 uses every core.
    pub jobs: usize,
    pub seed: u64,
    pub gamma: f64,
    pub time_limit_s: f64,
    /// Node budget for the solver. Unlike the wall-clock limit it makes
    /// timeouts reproducible.
    pub node_limit: Option<u64>,
    pub dataset_size: u64,
    pub generator: GeneratorConfig,
    pub rollouts: RolloutConfig,
}

impl Default for FileConfig {
    fn default() -> Self {
        Self {
            jobs: 0,
            seed: 0,
            gamma: DEFAULT_GAMMA,
            time_limit_s: 60.0,
            node_limit: None,
            dataset_size: 1000,
            generator: GeneratorConfig::default(),
            rollouts: RolloutConfig::default(),
        }
    }
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        check_gamma(self.gamma).map_err(|e| CliError::Usage(e.to_string()))?;
        if !(self.time_limit_s.is_finite() && self.time_limit_s > 0.0) {
            return Err(CliError::Usage(format!("time limit must be positive, got {}", self.time_limit_s)));
        }
        self.rollouts.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.generator.validate().map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn solver(&self) -> SolverOptions {
        SolverOptions { time_limit: Duration::from_secs_f64(self.time_limit_s), node_limit: self.node_limit }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_files_keep_defaults() {
        let cfg: FileConfig = toml::from_str("seed = 3\n[generator]\nn_tasks = 5\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.generator.n_tasks, 5);
        assert_eq!(cfg.generator.n_robots, 3);
        assert_eq!(cfg.gamma, DEFAULT_GAMMA);
        assert!(toml::from_str::<FileConfig>("bogus = 1").is_err());
    }
}
