//! Seeded synthetic Sentinel-like scenes: a ground-truth class map, a clouded
//! optical time series (bands B2..B7) and a speckled SAR time series (VV, VH
//! in dB plus the incidence angle).
//!
//! Every acquisition draws from its own ChaCha stream derived from
//! `(seed, stream id)`, so output does not depend on generation order.

use chrono::{Duration, NaiveDate};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::collection::{CollectionItem, ImageCollection, Sensor};
use crate::error::{Error, Result};
use crate::raster::{Band, BandStack, ClassMap, GeoTransform, Legend};

pub const OPTICAL_BANDS: [&str; 6] = ["B2", "B3", "B4", "B5", "B6", "B7"];
pub const SAR_BANDS: [&str; 3] = ["VV", "VH", "angle"];

const TRUTH_STREAM: u64 = 1;
const OPTICAL_STREAM: u64 = 1_000;
const SAR_STREAM: u64 = 2_000;

/// Radiometry and target area of one land-cover class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub id: u8,
    pub name: String,
    /// Surface reflectance per band, B2..B7.
    pub optical_mean: [f64; 6],
    pub optical_sd: [f64; 6],
    /// Mean backscatter (VV, VH) in dB.
    pub sar_mean_db: [f64; 2],
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Pixel pitch in degrees (square pixels).
    pub pixel_size: f64,
    /// The grid is centred on this point.
    pub anchor_lon: f64,
    pub anchor_lat: f64,
    pub classes: Vec<ClassSpec>,
    pub n_dates: usize,
    pub cloud_fraction_range: [f64; 2],
    pub cloud_reflectance: f64,
    /// Equivalent number of looks of the SAR speckle.
    pub looks: f64,
    /// Incidence angle at the first and last column, degrees.
    pub angle_range: [f64; 2],
    /// First day and exclusive end of the acquisition window.
    pub date_range: [NaiveDate; 2],
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            seed: 2020,
            width: 512,
            height: 512,
            pixel_size: 1e-4,
            anchor_lon: -94.925,
            anchor_lat: 29.389,
            classes: default_classes(),
            n_dates: 12,
            cloud_fraction_range: [0.0, 0.4],
            cloud_reflectance: 0.35,
            looks: 5.0,
            angle_range: [30.0, 46.0],
            date_range: [
                NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
                NaiveDate::from_ymd_opt(2021, 8, 1).unwrap(),
            ],
        }
    }
}

/// Water and urban are nearly indistinguishable in reflectance (dark water
/// against dark asphalt and shadow) but sit 17 dB apart in VV backscatter.
pub fn default_classes() -> Vec<ClassSpec> {
    vec![
        ClassSpec {
            id: 0,
            name: "water".into(),
            optical_mean: [0.070, 0.062, 0.050, 0.046, 0.042, 0.040],
            optical_sd: [0.02; 6],
            sar_mean_db: [-22.0, -28.0],
            fraction: 0.3,
        },
        ClassSpec {
            id: 1,
            name: "urban".into(),
            optical_mean: [0.076, 0.068, 0.060, 0.058, 0.056, 0.053],
            optical_sd: [0.02; 6],
            sar_mean_db: [-5.0, -10.0],
            fraction: 0.3,
        },
        ClassSpec {
            id: 2,
            name: "non-urban".into(),
            optical_mean: [0.045, 0.075, 0.060, 0.120, 0.240, 0.280],
            optical_sd: [0.02; 6],
            sar_mean_db: [-12.0, -18.0],
            fraction: 0.4,
        },
    ]
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        if self.width == 0 || self.height == 0 {
            return cfg_err(format!(
                "scene grid {}x{} is empty",
                self.width, self.height
            ));
        }
        if !(self.pixel_size.is_finite() && self.pixel_size > 0.0) {
            return cfg_err(format!("pixel_size must be > 0, got {}", self.pixel_size));
        }
        if self.classes.is_empty() {
            return cfg_err("scene needs at least one class".into());
        }
        if self.n_dates == 0 {
            return cfg_err("n_dates must be >= 1".into());
        }
        if !(self.looks.is_finite() && self.looks >= 1.0) {
            return cfg_err(format!("looks must be >= 1, got {}", self.looks));
        }
        let [lo, hi] = self.cloud_fraction_range;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return cfg_err(format!(
                "cloud_fraction_range [{lo}, {hi}] not within [0, 1]"
            ));
        }
        if self.date_range[0] >= self.date_range[1] {
            return cfg_err("date_range start must precede end".into());
        }
        if !self.angle_range.iter().all(|a| a.is_finite()) {
            return cfg_err("angle_range must be finite".into());
        }
        let total: f64 = self.classes.iter().map(|c| c.fraction).sum();
        if (total - 1.0).abs() > 1e-9 {
            return cfg_err(format!("class fractions sum to {total}, expected 1"));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if self.classes[..i].iter().any(|o| o.id == c.id) {
                return cfg_err(format!("duplicate class id {}", c.id));
            }
            if c.id == crate::raster::NODATA_LABEL {
                return cfg_err("class id 255 is reserved for nodata".into());
            }
            if c.fraction.is_nan() || c.fraction < 0.0 {
                return cfg_err(format!("class {} has negative fraction", c.name));
            }
            if c.optical_sd.iter().any(|s| s.is_nan() || *s < 0.0) {
                return cfg_err(format!("class {} has a negative optical sd", c.name));
            }
        }
        Ok(())
    }

    pub fn transform(&self) -> Result<GeoTransform> {
        GeoTransform::centered_on(
            self.anchor_lon,
            self.anchor_lat,
            (self.width / 2) as u32,
            (self.height / 2) as u32,
            self.pixel_size,
        )
    }

    pub fn legend(&self) -> Legend {
        Legend(
            self.classes
                .iter()
                .map(|c| (c.id, c.name.clone()))
                .collect(),
        )
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    /// Evenly spaced acquisition days; `phase` in [0, 1) shifts within a slot.
    fn dates(&self, phase: f64) -> Vec<NaiveDate> {
        let span = (self.date_range[1] - self.date_range[0]).num_days() as f64;
        (0..self.n_dates)
            .map(|i| {
                let offset = ((i as f64 + phase) * span / self.n_dates as f64).floor() as i64;
                self.date_range[0] + Duration::days(offset)
            })
            .collect()
    }

    pub fn optical_dates(&self) -> Vec<NaiveDate> {
        self.dates(0.0)
    }

    pub fn sar_dates(&self) -> Vec<NaiveDate> {
        self.dates(0.5)
    }

    fn class_spec(&self, id: u8) -> &ClassSpec {
        self.classes
            .iter()
            .find(|c| c.id == id)
            .expect("truth labels come from the class list")
    }

    fn check_truth(&self, truth: &ClassMap) -> Result<()> {
        if truth.width() != self.width || truth.height() != self.height {
            return Err(Error::Config(format!(
                "truth map is {}x{}, config says {}x{}",
                truth.width(),
                truth.height(),
                self.width,
                self.height
            )));
        }
        if let Some(&bad) = truth
            .labels()
            .iter()
            .find(|&&l| !self.classes.iter().any(|c| c.id == l))
        {
            return Err(Error::Config(format!(
                "truth label {bad} has no class spec"
            )));
        }
        Ok(())
    }
}

/// Gaussian white noise smoothed by a 2-D box filter of the given radius,
/// clamped at the raster edges.
fn smooth_field(rng: &mut ChaCha8Rng, width: usize, height: usize, radius: usize) -> Vec<f64> {
    let noise: Vec<f64> = (0..width * height)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let horiz = box_pass(&noise, width, height, radius, true);
    box_pass(&horiz, width, height, radius, false)
}

fn box_pass(src: &[f64], width: usize, height: usize, radius: usize, along_rows: bool) -> Vec<f64> {
    let (lines, len) = if along_rows {
        (height, width)
    } else {
        (width, height)
    };
    let at = |line: usize, k: usize| {
        if along_rows {
            line * width + k
        } else {
            k * width + line
        }
    };
    let mut out = vec![0.0; src.len()];
    let mut prefix = vec![0.0; len + 1];
    for line in 0..lines {
        for k in 0..len {
            prefix[k + 1] = prefix[k] + src[at(line, k)];
        }
        for k in 0..len {
            let lo = k.saturating_sub(radius);
            let hi = (k + radius + 1).min(len);
            out[at(line, k)] = (prefix[hi] - prefix[lo]) / (hi - lo) as f64;
        }
    }
    out
}

/// Indices of the `count` smallest values among `candidates` (ties by index).
fn lowest(field: &[f64], candidates: &[usize], count: usize) -> Vec<usize> {
    let mut order = candidates.to_vec();
    order.sort_by(|&a, &b| field[a].total_cmp(&field[b]).then(a.cmp(&b)));
    order.truncate(count);
    order
}

/// Ground-truth map. Classes are carved out one at a time: class k takes the
/// lowest-valued unassigned pixels of its own smoothed random field, so each
/// class forms coherent blobs with an exact pixel count.
pub fn generate_truth(cfg: &SceneConfig) -> Result<ClassMap> {
    cfg.validate()?;
    let n = cfg.width * cfg.height;
    let mut rng = cfg.rng(TRUTH_STREAM);
    let radius = (cfg.width / 16).max(1);

    let mut counts = Vec::with_capacity(cfg.classes.len());
    let mut cum = 0.0;
    let mut assigned = 0usize;
    for c in &cfg.classes {
        cum += c.fraction;
        let boundary = ((cum * n as f64).round() as usize).min(n);
        counts.push(boundary.saturating_sub(assigned));
        assigned = boundary.max(assigned);
    }
    *counts.last_mut().unwrap() += n - assigned;
    for (c, &count) in cfg.classes.iter().zip(&counts) {
        if c.fraction > 0.0 && count == 0 {
            return Err(Error::Config(format!(
                "class {} gets no pixels on a {}x{} grid",
                c.name, cfg.width, cfg.height
            )));
        }
    }

    let mut labels = vec![0u8; n];
    let mut free: Vec<usize> = (0..n).collect();
    let last = cfg.classes.len() - 1;
    for (k, c) in cfg.classes.iter().enumerate() {
        if k == last {
            for &i in &free {
                labels[i] = c.id;
            }
            break;
        }
        let field = smooth_field(&mut rng, cfg.width, cfg.height, radius);
        let taken = lowest(&field, &free, counts[k]);
        let mut mark = vec![false; n];
        for &i in &taken {
            labels[i] = c.id;
            mark[i] = true;
        }
        free.retain(|&i| !mark[i]);
    }
    ClassMap::new(
        cfg.width,
        cfg.height,
        cfg.transform()?,
        labels,
        cfg.legend(),
    )
}

/// Smooth cloud mask covering exactly `round(fraction * n)` pixels.
fn cloud_mask(rng: &mut ChaCha8Rng, cfg: &SceneConfig, fraction: f64) -> Vec<bool> {
    let n = cfg.width * cfg.height;
    let count = ((fraction * n as f64).round() as usize).min(n);
    let radius = (cfg.width / 24).max(1);
    let field = smooth_field(rng, cfg.width, cfg.height, radius);
    let all: Vec<usize> = (0..n).collect();
    let mut mask = vec![false; n];
    for i in lowest(&field, &all, count) {
        mask[i] = true;
    }
    mask
}

fn optical_date(
    truth: &ClassMap,
    cfg: &SceneConfig,
    index: usize,
    date: NaiveDate,
) -> Result<CollectionItem> {
    let n = cfg.width * cfg.height;
    let mut rng = cfg.rng(OPTICAL_STREAM + index as u64);
    let mut planes = vec![vec![0f32; n]; OPTICAL_BANDS.len()];
    for (i, &label) in truth.labels().iter().enumerate() {
        let spec = cfg.class_spec(label);
        for (b, plane) in planes.iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            plane[i] = (spec.optical_mean[b] + spec.optical_sd[b] * z) as f32;
        }
    }
    let [lo, hi] = cfg.cloud_fraction_range;
    let target = if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    };
    let mask = cloud_mask(&mut rng, cfg, target);
    let clouded = mask.iter().filter(|&&m| m).count();
    for plane in &mut planes {
        for (v, &m) in plane.iter_mut().zip(&mask) {
            if m {
                *v = cfg.cloud_reflectance as f32;
            }
        }
    }
    let bands = OPTICAL_BANDS
        .iter()
        .zip(planes)
        .map(|(name, values)| Band::new(*name, values))
        .collect();
    Ok(CollectionItem {
        date,
        sensor: Sensor::Optical,
        stack: BandStack::new(cfg.width, cfg.height, *truth.transform(), bands)?,
        cloud_fraction: Some(clouded as f64 / n as f64),
    })
}

/// One optical acquisition per date: class reflectance plus Gaussian noise,
/// then a smooth cloud mask of random coverage painted at constant brightness.
pub fn generate_optical_series(truth: &ClassMap, cfg: &SceneConfig) -> Result<ImageCollection> {
    cfg.validate()?;
    cfg.check_truth(truth)?;
    let items = cfg
        .optical_dates()
        .into_iter()
        .enumerate()
        .map(|(i, date)| optical_date(truth, cfg, i, date))
        .collect::<Result<Vec<_>>>()?;
    ImageCollection::new(items)
}

/// Incidence angle ramp across columns, identical on every row and date.
pub fn angle_ramp(cfg: &SceneConfig) -> Vec<f32> {
    let [lo, hi] = cfg.angle_range;
    let w = cfg.width;
    let row: Vec<f32> = (0..w)
        .map(|c| {
            if w == 1 {
                lo as f32
            } else {
                (lo + (hi - lo) * c as f64 / (w - 1) as f64) as f32
            }
        })
        .collect();
    row.iter().copied().cycle().take(w * cfg.height).collect()
}

fn sar_date(
    truth: &ClassMap,
    cfg: &SceneConfig,
    index: usize,
    date: NaiveDate,
) -> Result<CollectionItem> {
    let n = cfg.width * cfg.height;
    let mut rng = cfg.rng(SAR_STREAM + index as u64);
    let speckle = Gamma::new(cfg.looks, 1.0 / cfg.looks)
        .map_err(|e| Error::Config(format!("speckle distribution: {e}")))?;
    let mut vv = vec![0f32; n];
    let mut vh = vec![0f32; n];
    for (i, &label) in truth.labels().iter().enumerate() {
        let spec = cfg.class_spec(label);
        // Linear power sigma0 * g in dB is mean_db + 10 log10(g).
        let g_vv: f64 = speckle.sample(&mut rng);
        let g_vh: f64 = speckle.sample(&mut rng);
        vv[i] = (spec.sar_mean_db[0] + 10.0 * g_vv.log10()) as f32;
        vh[i] = (spec.sar_mean_db[1] + 10.0 * g_vh.log10()) as f32;
    }
    let bands = vec![
        Band::new("VV", vv),
        Band::new("VH", vh),
        Band::new("angle", angle_ramp(cfg)),
    ];
    Ok(CollectionItem {
        date,
        sensor: Sensor::Sar,
        stack: BandStack::new(cfg.width, cfg.height, *truth.transform(), bands)?,
        cloud_fraction: None,
    })
}

/// One SAR acquisition per date with independent multiplicative Gamma speckle
/// (shape = looks, mean 1) on VV and VH, stored in dB.
pub fn generate_sar_series(truth: &ClassMap, cfg: &SceneConfig) -> Result<ImageCollection> {
    cfg.validate()?;
    cfg.check_truth(truth)?;
    let items = cfg
        .sar_dates()
        .into_iter()
        .enumerate()
        .map(|(i, date)| sar_date(truth, cfg, i, date))
        .collect::<Result<Vec<_>>>()?;
    ImageCollection::new(items)
}
