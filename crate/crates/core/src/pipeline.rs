//! In-memory composition of the stages. The file-backed runner in
//! [`crate::stages`] calls the same functions, so both paths agree.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cart::{train, DecisionTree, TrainParams};
use crate::classify::{classify_stack, render_classmap, render_composite, RgbImage};
use crate::collection::{ImageCollection, Sensor};
use crate::compositing::{
    build_fused_composite, build_sar_composite, filter_collection, reduce_mean,
};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::raster::{BandStack, ClassMap};
use crate::samples::{auto_sample, auto_sample_avoiding, extract_features, pixel_index, SampleSet};
use crate::scene::{generate_optical_series, generate_sar_series, generate_truth};
use crate::validation::{
    accuracy_metrics, compare_report, confusion_matrix, AccuracyReport, Comparison,
};

/// Which composite a model is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Optical,
    Fused,
}

impl Source {
    pub const ALL: [Source; 2] = [Source::Optical, Source::Fused];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Optical => "optical",
            Source::Fused => "fused",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "optical" => Ok(Source::Optical),
            "fused" => Ok(Source::Fused),
            _ => Err(Error::Config(format!(
                "unknown source {s:?}, expected optical or fused"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub truth: ClassMap,
    pub optical: ImageCollection,
    pub sar: ImageCollection,
}

pub fn simulate(cfg: &Config) -> Result<Simulation> {
    let truth = generate_truth(&cfg.scene)?;
    let optical = generate_optical_series(&truth, &cfg.scene)?;
    let sar = generate_sar_series(&truth, &cfg.scene)?;
    Ok(Simulation {
        truth,
        optical,
        sar,
    })
}

fn sample_seed(scene_seed: u64, set_seed: u64) -> u64 {
    scene_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ set_seed
}

/// Training and validation pins, drawn from the truth map and kept apart by
/// the configured spacing.
pub fn draw_samples(cfg: &Config, truth: &ClassMap) -> Result<(SampleSet, SampleSet)> {
    let s = &cfg.samples;
    let training = auto_sample(
        truth,
        &cfg.training_counts()?,
        sample_seed(cfg.scene.seed, s.training_seed),
        s.min_spacing,
    )?;
    let validation = auto_sample_avoiding(
        truth,
        &cfg.validation_counts()?,
        sample_seed(cfg.scene.seed, s.validation_seed),
        s.min_spacing,
        Some(&training),
    )?;
    Ok((training, validation))
}

#[derive(Debug, Clone)]
pub struct Composites {
    pub optical: BandStack,
    pub sar: BandStack,
    pub fused: BandStack,
}

impl Composites {
    pub fn get(&self, source: Source) -> &BandStack {
        match source {
            Source::Optical => &self.optical,
            Source::Fused => &self.fused,
        }
    }
}

pub fn build_composites(
    cfg: &Config,
    optical: &ImageCollection,
    sar: &ImageCollection,
) -> Result<Composites> {
    let optical = filter_collection(optical, &cfg.filter.spec(Sensor::Optical))?;
    let sar = filter_collection(sar, &cfg.filter.spec(Sensor::Sar))?;
    let optical = reduce_mean(&optical, &cfg.bands.optical)?;
    let sar = build_sar_composite(&sar)?.select(&cfg.bands.sar)?;
    let fused = build_fused_composite(&optical, &sar)?;
    Ok(Composites {
        optical,
        sar,
        fused,
    })
}

pub fn train_on(
    samples: &SampleSet,
    stack: &BandStack,
    params: &TrainParams,
) -> Result<DecisionTree> {
    let data = extract_features(samples, stack)?;
    train(&data, params)
}

pub fn evaluate(
    tree: &DecisionTree,
    validation: &SampleSet,
    stack: &BandStack,
) -> Result<AccuracyReport> {
    let data = extract_features(validation, stack)?;
    accuracy_metrics(&confusion_matrix(tree, &data)?)
}

pub fn classify(tree: &DecisionTree, stack: &BandStack) -> Result<ClassMap> {
    classify_stack(tree, stack)
}

pub fn render_map(cfg: &Config, map: &ClassMap) -> Result<RgbImage> {
    render_classmap(map, &cfg.palette()?)
}

pub fn render_true_color(cfg: &Config, stack: &BandStack) -> Result<RgbImage> {
    let [r, g, b] = &cfg.bands.true_color;
    let [lo, hi] = cfg.bands.stretch;
    render_composite(stack, [r, g, b], (lo, hi))
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub optical: AccuracyReport,
    pub fused: AccuracyReport,
    pub comparison: Comparison,
}

/// Simulate, composite, train both models and compare them, all in memory.
pub fn run_experiment(cfg: &Config) -> Result<Experiment> {
    cfg.validate()?;
    let sim = simulate(cfg)?;
    let (training, validation) = draw_samples(cfg, &sim.truth)?;
    let comps = build_composites(cfg, &sim.optical, &sim.sar)?;
    let mut reports = Vec::with_capacity(2);
    for source in Source::ALL {
        let stack = comps.get(source);
        let tree = train_on(&training, stack, &cfg.train_params)?;
        reports.push(evaluate(&tree, &validation, stack)?);
    }
    let fused = reports.pop().expect("two reports");
    let optical = reports.pop().expect("two reports");
    let comparison = compare_report(&optical, &fused)?;
    Ok(Experiment {
        optical,
        fused,
        comparison,
    })
}

/// A reference pin joined with the model's prediction at its pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinPrediction {
    pub lon: f64,
    pub lat: f64,
    pub class_id: u8,
    pub predicted: u8,
}

impl PinPrediction {
    pub fn is_correct(&self) -> bool {
        self.class_id == self.predicted
    }
}

/// Predictions at every pin that falls on a valid pixel, in input order.
/// Pins dropped here are exactly the ones `extract_features` drops.
pub fn predict_pins(
    tree: &DecisionTree,
    samples: &SampleSet,
    stack: &BandStack,
) -> Result<Vec<PinPrediction>> {
    if stack.band_names() != tree.bands {
        return Err(Error::BandOrderMismatch {
            expected: tree.bands.clone(),
            found: stack.band_names(),
        });
    }
    let mut out = Vec::with_capacity(samples.len());
    for f in &samples.features {
        let x = pixel_index(
            stack.transform(),
            stack.width(),
            stack.height(),
            f.lon,
            f.lat,
        )
        .and_then(|idx| stack.pixel_vector(idx));
        let Some(x) = x else { continue };
        out.push(PinPrediction {
            lon: f.lon,
            lat: f.lat,
            class_id: f.class_id,
            predicted: tree.predict(&x)?,
        });
    }
    Ok(out)
}
