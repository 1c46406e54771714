//! Run configuration: defaults, overlaid by a JSON file, overlaid by flags.

use std::path::Path;

use kinoplan::baselines::{LatticeConfig, RrtStarConfig};
use kinoplan::evaluate::HeatmapSpec;
use kinoplan::scenario::{DatasetCounts, GenerateConfig, ScenarioKind};
use kinoplan::trainer::TrainConfig;
use kinoplan::vehicle::VehicleParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub kinds: Vec<ScenarioKind>,
    pub tasks_per_env: usize,
    pub resolution: f64,
}

impl Default for GenerateSection {
    fn default() -> Self {
        let g = GenerateConfig::default();
        Self { train: 600, val: 150, test: 100, kinds: g.kinds, tasks_per_env: g.tasks_per_env, resolution: g.resolution }
    }
}

impl GenerateSection {
    pub fn counts(&self) -> DatasetCounts {
        DatasetCounts { train: self.train, val: self.val, test: self.test }
    }

    pub fn generate_config(&self) -> GenerateConfig {
        GenerateConfig { kinds: self.kinds.clone(), tasks_per_env: self.tasks_per_env, resolution: self.resolution }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub planners: Vec<String>,
    pub timing: bool,
    pub parallel: bool,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self { planners: vec!["neural".into(), "lattice".into(), "rrtstar".into()], timing: true, parallel: false }
    }
}

/// Everything that influences a run. The top-level `seed` replaces the
/// per-section seeds of `train` and `rrtstar`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub vehicle: VehicleParams,
    pub generate: GenerateSection,
    pub train: TrainConfig,
    pub lattice: LatticeConfig,
    pub rrtstar: RrtStarConfig,
    pub heatmap: HeatmapSpec,
    pub evaluate: EvaluateSection,
}

impl Config {
    /// Parses a JSON config. Errors carry the path of the offending field.
    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            anyhow::anyhow!("config field `{path}`: {}", e.into_inner())
        })
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        Self::from_json(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        self.rrtstar.seed = seed;
    }

    /// Range checks that serde cannot express, reported per field.
    pub fn check(&self) -> anyhow::Result<()> {
        let v = &self.vehicle;
        for (name, value) in [
            ("vehicle.wheelbase", v.wheelbase),
            ("vehicle.width", v.width),
            ("vehicle.rear_overhang", v.rear_overhang),
            ("vehicle.front_length", v.front_length),
            ("vehicle.kappa_max", v.kappa_max),
            ("generate.resolution", self.generate.resolution),
            ("lattice.resolution", self.lattice.resolution),
            ("lattice.max_time_s", self.lattice.max_time_s),
            ("heatmap.resolution", self.heatmap.resolution),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                anyhow::bail!("config field `{name}`: must be positive, got {value}");
            }
        }
        if self.generate.kinds.is_empty() && self.generate.train + self.generate.val + self.generate.test > 0 {
            anyhow::bail!("config field `generate.kinds`: at least one kind is required");
        }
        if self.lattice.headings < 4 {
            anyhow::bail!("config field `lattice.headings`: at least 4 required");
        }
        if self.heatmap.orientations == 0 {
            anyhow::bail!("config field `heatmap.orientations`: at least 1 required");
        }
        self.train.check().map_err(|e| anyhow::anyhow!("config section `train`: {e}"))?;
        self.rrtstar.check().map_err(|e| anyhow::anyhow!("config section `rrtstar`: {e}"))?;
        for p in &self.evaluate.planners {
            if !matches!(p.as_str(), "neural" | "lattice" | "rrtstar") {
                anyhow::bail!("config field `evaluate.planners`: unknown planner `{p}`");
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
