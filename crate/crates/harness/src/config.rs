//! Experiment configuration read from JSON.
//!
//! Only `model` is required; every other field has a default. Operational knobs
//! (`--seed`, `--replicas`, `--out`) override the file after loading.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use brwre_core::edgeworth::OracleMethod;
use brwre_core::environment::EnvironmentModel;
use brwre_core::expansion::{CdfProvider, DEFAULT_BETA, DEFAULT_T_GRID, MAX_EXPANSION_ORDER};
use brwre_core::simulator::{DEFAULT_PARTICLE_CAP, MAX_GENERATIONS};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: EnvironmentModel,
    #[serde(default = "default_n_list")]
    pub n_list: Vec<usize>,
    #[serde(default = "default_t_grid")]
    pub t_grid: Vec<f64>,
    /// Replicas per batch.
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default = "default_batches")]
    pub batches: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Highest expansion order reported in summaries.
    #[serde(default = "default_order_max")]
    pub order_max: usize,
    /// Last simulated generation; defaults to `max(n_list)`.
    #[serde(default)]
    pub n_max: Option<usize>,
    #[serde(default = "default_particle_cap")]
    pub particle_cap: usize,
    #[serde(default)]
    pub oracle: OracleSettings,
    #[serde(default)]
    pub ab_provider: ProviderSetting,
    #[serde(default)]
    pub edgeworth_study: EdgeworthStudy,
    #[serde(default)]
    pub gate: GateSettings,
    /// Output directory; `--out` takes precedence.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_n_list() -> Vec<usize> {
    vec![8, 12, 16, 24, 32]
}

fn default_t_grid() -> Vec<f64> {
    DEFAULT_T_GRID.to_vec()
}

fn default_replicas() -> usize {
    400
}

fn default_batches() -> usize {
    1
}

fn default_beta() -> f64 {
    DEFAULT_BETA
}

fn default_order_max() -> usize {
    MAX_EXPANSION_ORDER
}

fn default_particle_cap() -> usize {
    DEFAULT_PARTICLE_CAP
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleSettings {
    GridConvolution { step_fraction: f64, half_width: f64 },
    MonteCarlo { samples: usize },
}

impl Default for OracleSettings {
    fn default() -> Self {
        OracleSettings::GridConvolution {
            step_fraction: OracleMethod::DEFAULT_STEP_FRACTION,
            half_width: OracleMethod::DEFAULT_HALF_WIDTH,
        }
    }
}

impl OracleSettings {
    /// Monte Carlo oracles draw from the given seed; the grid ignores it.
    pub fn method(&self, seed: u64) -> OracleMethod {
        match *self {
            OracleSettings::GridConvolution {
                step_fraction,
                half_width,
            } => OracleMethod::GridConvolution {
                step_fraction,
                half_width,
            },
            OracleSettings::MonteCarlo { samples } => OracleMethod::MonteCarlo { samples, seed },
        }
    }
}

/// Window CDF used for `F_u` in the A/B decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderSetting {
    ExactGaussian,
    Edgeworth { order: usize },
    /// The configured oracle.
    Oracle,
}

impl Default for ProviderSetting {
    fn default() -> Self {
        ProviderSetting::Edgeworth { order: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EdgeworthStudy {
    pub lengths: Vec<usize>,
    pub x_grid: Vec<f64>,
    /// Environment realizations per window length.
    pub environments: usize,
}

impl Default for EdgeworthStudy {
    fn default() -> Self {
        Self {
            lengths: vec![8, 16, 32, 64],
            x_grid: (0..25).map(|i| -3.0 + 0.25 * i as f64).collect(),
            environments: 5,
        }
    }
}

/// Where and how strictly the expansion-order verdicts are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateSettings {
    pub n: usize,
    pub t: f64,
    /// Fraction of batches in which median |residual| must be nonincreasing in κ = 0, 1, 2.
    pub batch_fraction: f64,
    /// Required improvement of the κ = 1 decay slope over κ = 0.
    pub slope_gap: f64,
}

impl Default for GateSettings {
    fn default() -> Self {
        Self {
            n: 24,
            t: 0.5,
            batch_fraction: 0.8,
            slope_gap: 0.3,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.replicas == 0 {
            bail!("replicas must be at least 1");
        }
        if self.batches == 0 {
            bail!("batches must be at least 1");
        }
        if !(self.beta > 0.0 && self.beta < 0.5) {
            bail!("beta = {} must lie in (0, 0.5)", self.beta);
        }
        if self.n_list.is_empty() || self.n_list.contains(&0) {
            bail!("n_list must hold positive generations");
        }
        if self.n_max() > MAX_GENERATIONS {
            bail!("n_max = {} exceeds {MAX_GENERATIONS}", self.n_max());
        }
        if self.n_list.iter().any(|&n| n > self.n_max()) {
            bail!("n_list exceeds n_max = {}", self.n_max());
        }
        if self.t_grid.is_empty() || self.t_grid.iter().any(|t| !t.is_finite()) {
            bail!("t_grid must hold finite values");
        }
        if self.order_max > MAX_EXPANSION_ORDER {
            bail!("order_max = {} exceeds {MAX_EXPANSION_ORDER}", self.order_max);
        }
        if self.particle_cap == 0 {
            bail!("particle_cap must be at least 1");
        }
        if let ProviderSetting::Edgeworth { order } = self.ab_provider {
            if !(3..=6).contains(&order) {
                bail!("ab_provider order {order} outside 3..=6");
            }
        }
        let study = &self.edgeworth_study;
        if study.lengths.is_empty() || study.lengths.contains(&0) || study.environments == 0 {
            bail!("edgeworth_study needs positive lengths and at least one environment");
        }
        if study.x_grid.is_empty() || study.x_grid.iter().any(|x| !x.is_finite()) {
            bail!("edgeworth_study.x_grid must hold finite values");
        }
        Ok(())
    }

    pub fn n_max(&self) -> usize {
        self.n_max
            .unwrap_or_else(|| self.n_list.iter().copied().max().unwrap_or(1))
    }

    pub fn total_replicas(&self) -> usize {
        self.replicas * self.batches
    }

    pub fn provider(&self) -> CdfProvider {
        match self.ab_provider {
            ProviderSetting::ExactGaussian => CdfProvider::ExactGaussian,
            ProviderSetting::Edgeworth { order } => CdfProvider::Edgeworth { order },
            ProviderSetting::Oracle => CdfProvider::Oracle(self.oracle.method(self.seed)),
        }
    }

    /// SHA-256 of the canonical JSON form with the output location removed.
    pub fn semantic_hash(&self) -> String {
        let mut semantic = self.clone();
        semantic.output = None;
        let bytes = serde_json::to_vec(&semantic).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "model": {"states": [{"probability": 1.0,
            "offspring": {"family": "explicit_pmf", "pmf": [0.0, 0.0, 1.0]},
            "moving": {"family": "gaussian", "mu": 0.0, "sigma": 1.0}}]}
    }"#;

    #[test]
    fn defaults_fill_in() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.n_max(), 32);
        assert_eq!(cfg.replicas, 400);
        assert_eq!(cfg.provider(), CdfProvider::Edgeworth { order: 5 });
        assert_eq!(cfg.t_grid.len(), 7);
    }

    #[test]
    fn hash_tracks_semantic_fields_only() {
        let cfg = ExperimentConfig::parse(MINIMAL).unwrap();
        let mut moved = cfg.clone();
        moved.output = Some("elsewhere".into());
        assert_eq!(cfg.semantic_hash(), moved.semantic_hash());
        let mut reseeded = cfg.clone();
        reseeded.seed = 9;
        assert_ne!(cfg.semantic_hash(), reseeded.semantic_hash());
        let mut shifted = cfg.clone();
        shifted.t_grid[0] = -2.5;
        assert_ne!(cfg.semantic_hash(), shifted.semantic_hash());
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = ExperimentConfig::parse("{\n  \"model\": {\"states\": []},\n  \"replicas\": \"x\"\n}").unwrap_err();
        let text = format!("{err:#}");
        assert!(text.contains("line"), "{text}");
        let err = ExperimentConfig::parse(&MINIMAL.replace("\"model\"", "\"modle\"")).unwrap_err();
        assert!(format!("{err:#}").contains("modle"));
    }

    #[test]
    fn invalid_values_are_rejected() {
        for patch in [
            r#""replicas": 0"#,
            r#""beta": 0.7"#,
            r#""n_list": [8, 80]"#,
            r#""order_max": 4"#,
        ] {
            let text = MINIMAL.replacen('{', &format!("{{{patch},"), 1);
            assert!(ExperimentConfig::parse(&text).is_err(), "{patch}");
        }
    }
}
