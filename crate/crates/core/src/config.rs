//! Run configuration: a TOML file whose every key is optional.
//!
//! ```toml
//! scenarios = ["baseline_normal", "correlated"]  # run order
//! sample_sizes = [100, 300, 500]                 # baseline scenario
//! robustness_sample_sizes = [300]                # every other scenario
//! p = 5
//! replications = 1000
//! epsilons = [0.005, 0.01, 0.02, 0.05, 0.5]
//! master_seed = 20240601
//! ```
//!
//! Keys not listed in [`RunConfig`] are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::designs::{Allocation, DesignSpec, DEFAULT_MAX_ATTEMPTS, DEFAULT_RR_THRESHOLD};
use crate::dgp::{ScenarioKind, ScenarioSpec};
use crate::engine::GridSpec;
use crate::error::{Error, Result};
use crate::selection::{AcceptanceMeasure, BandRule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenarios: Vec<ScenarioKind>,
    pub sample_sizes: Vec<usize>,
    pub robustness_sample_sizes: Vec<usize>,
    pub p: usize,
    pub replications: usize,
    pub epsilons: GridSpec,
    pub rr_threshold: f64,
    pub max_attempts: usize,
    pub allocation: Allocation,
    pub tau: f64,
    pub rho: f64,
    pub hetero_slope: f64,
    pub master_seed: u64,
    pub split_seed: u64,
    pub bootstrap_b: usize,
    pub min_accept: Vec<f64>,
    pub acceptance_measure: AcceptanceMeasure,
    pub band: BandRule,
    pub output_dir: PathBuf,
    pub oracle: OracleConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Fixture sample file; the built-in n = 8, p = 2 fixture when absent.
    pub fixture: Option<PathBuf>,
    pub grid: Vec<f64>,
    pub draws: usize,
    pub seed: u64,
    /// Agreement band in standard errors.
    pub z: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            fixture: None,
            grid: crate::study::ORACLE_FIXTURE_GRID.to_vec(),
            draws: 100_000,
            seed: 8,
            z: 4.0,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenarios: ScenarioKind::ALL.to_vec(),
            sample_sizes: vec![100, 300, 500],
            robustness_sample_sizes: vec![300],
            p: 5,
            replications: 1000,
            epsilons: GridSpec::default(),
            rr_threshold: DEFAULT_RR_THRESHOLD,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            allocation: Allocation::FixedHalf,
            tau: 1.0,
            rho: 0.5,
            hetero_slope: 0.5,
            master_seed: 20_240_601,
            split_seed: 1_000,
            bootstrap_b: 1000,
            min_accept: vec![0.01, 0.05],
            acceptance_measure: AcceptanceMeasure::SingleDraw,
            band: BandRule::default(),
            output_dir: PathBuf::from("out"),
            oracle: OracleConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn scenario(&self, kind: ScenarioKind) -> ScenarioSpec {
        ScenarioSpec {
            kind,
            rho: self.rho,
            tau: self.tau,
            hetero_slope: self.hetero_slope,
        }
    }

    /// `(scenario, n)` cells in run order.
    pub fn cells(&self) -> Vec<(ScenarioSpec, usize)> {
        self.scenarios
            .iter()
            .flat_map(|&kind| {
                let sizes = match kind {
                    ScenarioKind::BaselineNormal => &self.sample_sizes,
                    _ => &self.robustness_sample_sizes,
                };
                sizes.iter().map(move |&n| (self.scenario(kind), n))
            })
            .collect()
    }

    /// CR, RR, then FSM at every grid threshold.
    pub fn designs(&self) -> Vec<DesignSpec> {
        let with = |d: DesignSpec| d.with_max_attempts(self.max_attempts).with_allocation(self.allocation);
        let mut out = vec![
            DesignSpec::cr().with_allocation(self.allocation),
            with(DesignSpec::rr(self.rr_threshold)),
        ];
        out.extend(self.epsilons.epsilons().iter().map(|&e| with(DesignSpec::fsm(e))));
        out
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, msg: String| Err(Error::Config(format!("{name}: {msg}")));
        if self.scenarios.is_empty() {
            return field("scenarios", "at least one scenario is required".into());
        }
        if self.cells().is_empty() {
            return field("sample_sizes", "no (scenario, n) cells to run".into());
        }
        if let Some(n) = self.sample_sizes.iter().chain(&self.robustness_sample_sizes).find(|&&n| n < 4) {
            return field("sample_sizes", format!("n = {n} is below 4"));
        }
        if self.p == 0 {
            return field("p", "must be at least 1".into());
        }
        if self.replications < 4 {
            return field("replications", format!("{} is below 4", self.replications));
        }
        GridSpec::new(self.epsilons.epsilons().to_vec()).map_err(|e| Error::Config(format!("epsilons: {e}")))?;
        if self.rr_threshold.is_nan() || self.rr_threshold <= 0.0 {
            return field("rr_threshold", format!("{} must be positive", self.rr_threshold));
        }
        if self.max_attempts == 0 {
            return field("max_attempts", "must be at least 1".into());
        }
        if self.bootstrap_b < 2 {
            return field("bootstrap_b", format!("{} is below 2", self.bootstrap_b));
        }
        if let Some(m) = self.min_accept.iter().find(|m| !(0.0..=1.0).contains(*m)) {
            return field("min_accept", format!("{m} is outside [0, 1]"));
        }
        if self.band.mse_slack.is_nan() || self.band.mse_slack < 0.0 || !(0.0..=1.0).contains(&self.band.min_accept) {
            return field("band", "mse_slack must be nonnegative and min_accept in [0, 1]".into());
        }
        for kind in &self.scenarios {
            self.scenario(*kind).validate()?;
        }
        if self.oracle.draws < 2 {
            return field("oracle.draws", "must be at least 2".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_reproduce_the_study_layout() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.replications, 1000);
        assert_eq!(cfg.sample_sizes, vec![100, 300, 500]);
        assert_eq!(cfg.max_attempts, 80);
        assert_eq!(cfg.rr_threshold, 0.1);
        let cells = cfg.cells();
        assert_eq!(cells.len(), 7);
        assert_eq!(cells[0].0.kind, ScenarioKind::BaselineNormal);
        assert!(cells[3..].iter().all(|(_, n)| *n == 300));
        assert_eq!(cfg.designs().len(), 23);
    }

    #[test]
    fn empty_file_is_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn overrides_and_field_errors() {
        let cfg = RunConfig::from_toml("replications = 200\nscenarios = [\"skewed_chi_sq2\"]\n[band]\nmse_slack = 0.2\nmin_accept = 0.1\nmeasure = \"within_attempts\"\n").unwrap();
        assert_eq!(cfg.replications, 200);
        assert_eq!(cfg.cells().len(), 1);
        assert_eq!(cfg.band.measure, AcceptanceMeasure::WithinAttempts);

        let err = RunConfig::from_toml("replications = 2").unwrap_err().to_string();
        assert!(err.contains("replications"), "{err}");
        let err = RunConfig::from_toml("epsilons = [0.2, 0.1]").unwrap_err().to_string();
        assert!(err.contains("epsilons"), "{err}");
        assert!(RunConfig::from_toml("bogus = 1").is_err());
        assert!(RunConfig::from_toml("[band]\nbogus = 1").is_err());

        let partial = RunConfig::from_toml("[band]\nmse_slack = 0.2\n[oracle]\ndraws = 10").unwrap();
        assert_eq!(partial.band.min_accept, BandRule::default().min_accept);
        assert_eq!(partial.oracle.grid, OracleConfig::default().grid);
    }
}
