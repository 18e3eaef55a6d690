//! Declarative run configuration: one TOML document drives every command.

use crate::augment::{AugmentationParams, AugmentationStrategy};
use crate::baselines::HyperGrid;
use crate::error::{Error, Result};
use crate::eval::fixture::FixtureSpec;
use crate::eval::tsne::TsneParams;
use crate::network::model::NetworkConfig;
use crate::stage::FlightSpec;
use crate::train::TrainConfig;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Input file locations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub annotations: PathBuf,
    /// Flight name -> orthomosaic image path.
    pub orthomosaics: IndexMap<String, PathBuf>,
    /// Optional checkpoint to initialize matching parameters from.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_checkpoint: Option<PathBuf>,
}

/// Validation/test sample counts for one flight's split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitCounts {
    pub val: usize,
    pub test: usize,
}

impl Default for SplitCounts {
    fn default() -> Self {
        SplitCounts { val: 5, test: 10 }
    }
}

/// Split settings: global counts plus optional per-flight overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    #[serde(flatten)]
    pub default: SplitCounts,
    pub per_flight: IndexMap<String, SplitCounts>,
}

impl SplitConfig {
    pub fn for_flight(&self, flight: FlightSpec) -> SplitCounts {
        self.per_flight
            .get(flight.name())
            .copied()
            .unwrap_or(self.default)
    }
}

/// Augmentation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    pub strategy: AugmentationStrategy,
    pub params: AugmentationParams,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            strategy: AugmentationStrategy::AffineWarp,
            params: AugmentationParams::default(),
        }
    }
}

/// Visualization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VisualizeConfig {
    pub tsne: TsneParams,
    /// Strategies to produce t-SNE embeddings for.
    pub strategies: Vec<AugmentationStrategy>,
    /// Cap on embedded points per strategy (subsampled deterministically).
    pub max_points: usize,
}

impl Default for VisualizeConfig {
    fn default() -> Self {
        VisualizeConfig {
            tsne: TsneParams::default(),
            strategies: AugmentationStrategy::ALL.to_vec(),
            max_points: 400,
        }
    }
}

/// The whole run configuration. Every command reads the same document; the
/// CLI's `--seed` and `--out` flags override `seed` and `out_dir`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patch_side: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feature_side: Option<usize>,
    pub paths: PathsConfig,
    pub split: SplitConfig,
    pub augmentation: AugmentationConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub baselines: HyperGrid,
    pub visualize: VisualizeConfig,
    /// Settings for the `fixture` helper command.
    pub fixture: FixtureSpec,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn patch_side(&self) -> usize {
        self.patch_side.unwrap_or(64)
    }

    pub fn feature_side(&self) -> usize {
        self.feature_side.unwrap_or(crate::baselines::FEATURE_SIDE)
    }

    /// Seed is mandatory; there is no silent default.
    pub fn require_seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config("a seed is required (config `seed` or --seed)".into()))
    }

    pub fn require_out_dir(&self) -> Result<&Path> {
        self.out_dir
            .as_deref()
            .ok_or_else(|| Error::Config("an output directory is required (config `out_dir` or --out)".into()))
    }

    /// Flights with configured orthomosaics, in declaration order.
    pub fn flights(&self) -> Result<Vec<(FlightSpec, PathBuf)>> {
        if self.paths.orthomosaics.is_empty() {
            return Err(Error::Config("no orthomosaics configured under [paths.orthomosaics]".into()));
        }
        self.paths
            .orthomosaics
            .iter()
            .map(|(name, path)| Ok((name.parse::<FlightSpec>()?, path.clone())))
            .collect()
    }

    /// Check that every referenced input path resolves.
    pub fn validate_inputs(&self) -> Result<()> {
        if !self.paths.annotations.exists() {
            return Err(Error::Config(format!(
                "annotations file not found: {}",
                self.paths.annotations.display()
            )));
        }
        for (flight, path) in self.flights()? {
            if !path.exists() {
                return Err(Error::Config(format!(
                    "orthomosaic for {flight} not found: {}",
                    path.display()
                )));
            }
        }
        if let Some(ckpt) = &self.paths.init_checkpoint {
            if !ckpt.exists() {
                return Err(Error::Config(format!(
                    "init checkpoint not found: {}",
                    ckpt.display()
                )));
            }
        }
        Ok(())
    }

    /// Serialize the fully resolved configuration (for the config echo).
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let config = RunConfig {
            seed: Some(7),
            ..Default::default()
        };
        let text = config.to_toml().unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn minimal_document_parses_with_defaults() {
        let text = r#"
            seed = 42
            [paths.orthomosaics]
            Jun60 = "data/jun60.png"
            [split]
            val = 3
            test = 6
            [augmentation]
            strategy = "Flips"
        "#;
        let config: RunConfig = toml::from_str(text).unwrap();
        assert_eq!(config.require_seed().unwrap(), 42);
        assert_eq!(config.split.for_flight(FlightSpec::Jun60).val, 3);
        assert_eq!(config.augmentation.strategy, AugmentationStrategy::Flips);
        assert_eq!(config.train.epochs, 50);
        assert_eq!(config.network.input_side, 224);
        let flights = config.flights().unwrap();
        assert_eq!(flights[0].0, FlightSpec::Jun60);
    }

    #[test]
    fn per_flight_split_overrides() {
        let text = r#"
            seed = 1
            [split]
            val = 5
            test = 10
            [split.per_flight.Aug90]
            val = 13
            test = 28
        "#;
        let config: RunConfig = toml::from_str(text).unwrap();
        assert_eq!(config.split.for_flight(FlightSpec::Aug90).val, 13);
        assert_eq!(config.split.for_flight(FlightSpec::Jun60).val, 5);
    }

    #[test]
    fn missing_seed_is_a_config_error() {
        let config = RunConfig::default();
        let err = config.require_seed().unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn unknown_flight_name_rejected() {
        let text = r#"
            seed = 1
            [paths.orthomosaics]
            Sep60 = "x.png"
        "#;
        let config: RunConfig = toml::from_str(text).unwrap();
        assert!(config.flights().is_err());
    }
}
