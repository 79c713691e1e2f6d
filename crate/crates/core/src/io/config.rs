use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binning::BinningSpec;
use crate::error::{Error, Result};
use crate::types::{DiscountConfig, FeatureSchema};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SketchSettings {
    pub enabled: bool,
    pub k: usize,
    pub seed: u64,
}

impl Default for SketchSettings {
    fn default() -> Self {
        SketchSettings {
            enabled: false,
            k: 16,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmitMode {
    /// One row per event, written right after the event is applied.
    PerEvent,
    /// One row per node after the whole stream.
    #[default]
    Final,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingOptions {
    /// Append raw in/out degrees after the histograms.
    pub append_degrees: bool,
    pub emit: EmitMode,
    /// In per-event mode, one row holding source then destination embedding
    /// instead of one row per endpoint.
    pub pair: bool,
}

/// Everything needed to run the engine over a stream, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub schema: FeatureSchema,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binning: Option<BinningSpec>,
    pub discounts: DiscountConfig,
    #[serde(default)]
    pub sketch: SketchSettings,
    /// How far (seconds) a timestamp may fall behind the latest one seen.
    #[serde(default)]
    pub tolerance: f64,
    #[serde(default)]
    pub embedding: EmbeddingOptions,
}

impl RunConfig {
    pub fn new(schema: FeatureSchema, discounts: DiscountConfig) -> Self {
        RunConfig {
            schema,
            binning: None,
            discounts,
            sketch: SketchSettings::default(),
            tolerance: 0.0,
            embedding: EmbeddingOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        self.discounts.validate()?;
        if !(self.tolerance.is_finite() && self.tolerance >= 0.0) {
            return Err(Error::Config(format!(
                "tolerance {} must be finite and >= 0",
                self.tolerance
            )));
        }
        if self.sketch.enabled && self.sketch.k == 0 {
            return Err(Error::Config("sketch k must be at least 1".into()));
        }
        if let Some(b) = &self.binning {
            b.validate_against(&self.schema)?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

pub fn read_binning(path: impl AsRef<Path>) -> Result<BinningSpec> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Binning(format!("{}: {e}", path.display())))
}

pub fn write_binning(path: impl AsRef<Path>, spec: &BinningSpec) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(spec)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::DiscountMode;

    const SAMPLE: &str = r#"
tolerance = 0.5

[[schema.features]]
name = "amount"
kind = "numerical"

[[schema.features]]
name = "in_degree"
kind = "numerical"
source = "derived_in_degree"

[discounts]
degree_timescale = 3600.0
alpha = { mode = "constant", value = 0.5 }
beta = { mode = "exp_time_decay", timescale = 60.0 }

[sketch]
enabled = true
k = 8

[embedding]
emit = "per-event"
pair = true
"#;

    #[test]
    fn parses_and_defaults() {
        let c: RunConfig = toml::from_str(SAMPLE).unwrap();
        c.validate().unwrap();
        assert_eq!(c.schema.len(), 2);
        assert_eq!(c.discounts.beta, DiscountMode::ExpTimeDecay { timescale: 60.0 });
        assert_eq!(c.sketch, SketchSettings { enabled: true, k: 8, seed: 42 });
        assert_eq!(c.embedding.emit, EmitMode::PerEvent);
        assert!(!c.embedding.append_degrees);
        assert!(c.binning.is_none());
        let again: RunConfig = toml::from_str(&c.to_toml().unwrap()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn rejects_bad_values() {
        let mut c: RunConfig = toml::from_str(SAMPLE).unwrap();
        c.tolerance = -1.0;
        assert!(c.validate().is_err());
        let bad = SAMPLE.replace("value = 0.5", "value = 1.5");
        let c: RunConfig = toml::from_str(&bad).unwrap();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
