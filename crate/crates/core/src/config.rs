//! The single configuration document driving every stage.
//!
//! TOML with sections `scene`, `filter`, `bands`, `samples`, `train_params`
//! and `palette`; every field has a default, so an empty document is the
//! reference run.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::cart::TrainParams;
use crate::classify::{Palette, Rgb};
use crate::collection::Sensor;
use crate::compositing::{FilterSpec, SAR_COMPOSITE_BANDS};
use crate::error::{Error, Result};
use crate::raster::Legend;
use crate::scene::{SceneConfig, OPTICAL_BANDS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub date_start: NaiveDate,
    pub date_end: NaiveDate,
    pub max_cloud_fraction: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            date_start: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            date_end: NaiveDate::from_ymd_opt(2021, 8, 1).unwrap(),
            max_cloud_fraction: 0.2,
        }
    }
}

impl FilterConfig {
    pub fn spec(&self, sensor: Sensor) -> FilterSpec {
        FilterSpec {
            date_start: self.date_start,
            date_end: self.date_end,
            max_cloud_fraction: self.max_cloud_fraction,
            sensor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandsConfig {
    /// Optical composite bands, a subset of B2..B7.
    pub optical: Vec<String>,
    /// SAR composite bands appended after the optical ones in the fused stack.
    pub sar: Vec<String>,
    /// Red, green, blue bands for composite previews.
    pub true_color: [String; 3],
    /// Percentile pair for preview stretching.
    pub stretch: [f64; 2],
}

impl Default for BandsConfig {
    fn default() -> Self {
        BandsConfig {
            optical: OPTICAL_BANDS.iter().map(|s| s.to_string()).collect(),
            sar: SAR_COMPOSITE_BANDS.iter().map(|s| s.to_string()).collect(),
            true_color: ["B4".into(), "B3".into(), "B2".into()],
            stretch: [2.0, 98.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplesConfig {
    /// Pins per class, in ascending class-id order.
    pub training_counts: Vec<usize>,
    pub validation_counts: Vec<usize>,
    pub training_seed: u64,
    pub validation_seed: u64,
    /// Minimum distance between any two pins, in pixels.
    pub min_spacing: f64,
}

impl Default for SamplesConfig {
    fn default() -> Self {
        SamplesConfig {
            training_counts: vec![78, 53, 70],
            validation_counts: vec![129, 95, 89],
            training_seed: 1,
            validation_seed: 2,
            min_spacing: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PaletteConfig {
    /// Colour per class name.
    pub classes: BTreeMap<String, Rgb>,
    pub nodata: Rgb,
}

impl Default for PaletteConfig {
    fn default() -> Self {
        PaletteConfig {
            classes: BTreeMap::from([
                ("water".to_string(), [0, 0, 255]),
                ("urban".to_string(), [255, 255, 255]),
                ("non-urban".to_string(), [255, 0, 0]),
            ]),
            nodata: [0, 0, 0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub scene: SceneConfig,
    pub filter: FilterConfig,
    pub bands: BandsConfig,
    pub samples: SamplesConfig,
    pub train_params: TrainParams,
    pub palette: PaletteConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Config::from_toml(&text)
    }

    /// Canonical TOML of the effective configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn legend(&self) -> Legend {
        self.scene.legend()
    }

    pub fn palette(&self) -> Result<Palette> {
        Palette::from_names(&self.legend(), &self.palette.classes, self.palette.nodata)
    }

    fn counts(&self, counts: &[usize], what: &str) -> Result<BTreeMap<u8, usize>> {
        let legend = self.legend();
        if counts.len() != legend.len() {
            return Err(Error::Config(format!(
                "{what} lists {} counts for {} classes",
                counts.len(),
                legend.len()
            )));
        }
        Ok(legend.ids().zip(counts.iter().copied()).collect())
    }

    pub fn training_counts(&self) -> Result<BTreeMap<u8, usize>> {
        self.counts(&self.samples.training_counts, "samples.training_counts")
    }

    pub fn validation_counts(&self) -> Result<BTreeMap<u8, usize>> {
        self.counts(&self.samples.validation_counts, "samples.validation_counts")
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.filter.spec(Sensor::Optical).validate()?;
        self.train_params.validate()?;
        self.training_counts()?;
        self.validation_counts()?;
        if self.bands.optical.is_empty() || self.bands.sar.is_empty() {
            return Err(Error::Config(
                "bands.optical and bands.sar must be non-empty".into(),
            ));
        }
        if let Some(b) = self
            .bands
            .optical
            .iter()
            .find(|b| !OPTICAL_BANDS.contains(&b.as_str()))
        {
            return Err(Error::Config(format!("unknown optical band {b:?}")));
        }
        if let Some(b) = self
            .bands
            .sar
            .iter()
            .find(|b| !SAR_COMPOSITE_BANDS.contains(&b.as_str()))
        {
            return Err(Error::Config(format!("unknown SAR composite band {b:?}")));
        }
        let [lo, hi] = self.bands.stretch;
        if !(0.0..=100.0).contains(&lo) || !(0.0..=100.0).contains(&hi) || lo > hi {
            return Err(Error::Config(format!("bands.stretch [{lo}, {hi}] invalid")));
        }
        if !(self.samples.min_spacing.is_finite() && self.samples.min_spacing >= 0.0) {
            return Err(Error::Config("samples.min_spacing must be >= 0".into()));
        }
        let palette = self.palette()?;
        if let Some(id) = self
            .legend()
            .ids()
            .find(|id| !palette.colors.contains_key(id))
        {
            return Err(Error::Config(format!(
                "palette lacks a colour for class {id}"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default_run() {
        let cfg = Config::from_toml("").unwrap();
        assert_eq!(cfg, Config::default());
        assert_eq!(cfg.scene.anchor_lon, -94.925);
        assert_eq!(cfg.scene.anchor_lat, 29.389);
        assert_eq!(cfg.samples.training_counts, [78, 53, 70]);
        assert_eq!(cfg.samples.validation_counts, [129, 95, 89]);
        assert_eq!(cfg.filter.date_start.to_string(), "2020-01-01");
        assert_eq!(cfg.filter.date_end.to_string(), "2021-08-01");
    }

    #[test]
    fn canonical_text_round_trips() {
        let cfg = Config::default();
        assert_eq!(Config::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn partial_sections_override() {
        let cfg = Config::from_toml(
            "[scene]\nseed = 9\nwidth = 64\nheight = 64\n[train_params]\nmax_depth = 4\n",
        )
        .unwrap();
        assert_eq!(cfg.scene.seed, 9);
        assert_eq!(cfg.scene.n_dates, 12);
        assert_eq!(cfg.train_params.max_depth, 4);
        assert_eq!(cfg.train_params.min_leaf_samples, 1);
    }

    #[test]
    fn invalid_documents_are_config_errors() {
        for text in [
            "[scene]\nlooks = 0.0\n",
            "[samples]\ntraining_counts = [1, 2]\n",
            "[bands]\noptical = [\"B8\"]\n",
            "[palette.classes]\nforest = [0, 255, 0]\n",
            "[nonsense]\n",
            "not toml at all [",
        ] {
            assert!(
                matches!(Config::from_toml(text), Err(Error::Config(_))),
                "{text}"
            );
        }
    }
}
