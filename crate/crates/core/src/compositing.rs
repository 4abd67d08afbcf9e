//! Temporal filtering and per-pixel mean reduction of image collections, and
//! the optical, SAR and fused composites built from them.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::collection::{ImageCollection, Sensor};
use crate::error::{Error, Result};
use crate::raster::{stack_concat, Band, BandStack};
use crate::scene::OPTICAL_BANDS;

/// Names of the four SAR composite bands, in stack order.
pub const SAR_COMPOSITE_BANDS: [&str; 4] = ["VV", "VH", "angle", "ratio"];

/// Which acquisitions survive into a composite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    /// Inclusive.
    pub date_start: NaiveDate,
    /// Exclusive.
    pub date_end: NaiveDate,
    /// Optical acquisitions above this cloud fraction are dropped.
    pub max_cloud_fraction: f64,
    pub sensor: Sensor,
}

impl FilterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.date_start >= self.date_end {
            return Err(Error::Config(format!(
                "filter window {} .. {} is empty",
                self.date_start, self.date_end
            )));
        }
        if !(0.0..=1.0).contains(&self.max_cloud_fraction) {
            return Err(Error::Config(format!(
                "max_cloud_fraction {} outside [0, 1]",
                self.max_cloud_fraction
            )));
        }
        Ok(())
    }

    fn accepts(&self, sensor: Sensor, date: NaiveDate, cloud_fraction: Option<f64>) -> bool {
        if sensor != self.sensor || date < self.date_start || date >= self.date_end {
            return false;
        }
        match (sensor, cloud_fraction) {
            (Sensor::Optical, Some(cf)) => cf <= self.max_cloud_fraction,
            _ => true,
        }
    }
}

/// Keeps acquisitions of the requested sensor inside the window and, for
/// optical data, at or under the cloud threshold. Order is preserved.
pub fn filter_collection(c: &ImageCollection, f: &FilterSpec) -> Result<ImageCollection> {
    f.validate()?;
    let kept: Vec<_> = c
        .items()
        .iter()
        .filter(|it| f.accepts(it.sensor, it.date, it.cloud_fraction))
        .cloned()
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyResult(format!(
            "no {} acquisition in {} .. {} with cloud fraction <= {}",
            f.sensor, f.date_start, f.date_end, f.max_cloud_fraction
        )));
    }
    ImageCollection::new(kept)
}

/// Per-pixel arithmetic mean over dates, skipping nodata. A pixel with no
/// valid date becomes NaN.
///
/// Sums run in f64 in date order (the collection keeps items sorted), so the
/// result does not depend on the order acquisitions were supplied in.
pub fn reduce_mean<S: AsRef<str>>(c: &ImageCollection, band_names: &[S]) -> Result<BandStack> {
    let first = c.items().first().ok_or(Error::EmptyCollection)?;
    let n = first.stack.len_pixels();
    let mut bands = Vec::with_capacity(band_names.len());
    for name in band_names {
        let name = name.as_ref();
        let mut sum = vec![0f64; n];
        let mut count = vec![0u32; n];
        for it in c.items() {
            let band = it
                .stack
                .band(name)
                .ok_or_else(|| Error::MissingBand(format!("{name} (acquisition {})", it.date)))?;
            for (i, &v) in band.values.iter().enumerate() {
                if !band.nodata.is_nodata(v) {
                    sum[i] += f64::from(v);
                    count[i] += 1;
                }
            }
        }
        let values = sum
            .iter()
            .zip(&count)
            .map(|(&s, &k)| {
                if k == 0 {
                    f32::NAN
                } else {
                    (s / f64::from(k)) as f32
                }
            })
            .collect();
        bands.push(Band::new(name, values));
    }
    BandStack::new(
        first.stack.width(),
        first.stack.height(),
        *first.stack.transform(),
        bands,
    )
}

/// Mean composite of the six optical bands B2..B7.
pub fn build_optical_composite(c: &ImageCollection) -> Result<BandStack> {
    let stack = reduce_mean(c, &OPTICAL_BANDS)?;
    assert_eq!(stack.bands().len(), 6);
    Ok(stack)
}

/// Four-band SAR composite: mean VV and VH (dB), mean incidence angle, and the
/// cross-polarisation ratio VH - VV computed on the means.
pub fn build_sar_composite(c: &ImageCollection) -> Result<BandStack> {
    let means = reduce_mean(c, &SAR_COMPOSITE_BANDS[..3])?;
    let vv = &means.bands()[0].values;
    let vh = &means.bands()[1].values;
    let ratio: Vec<f32> = vv.iter().zip(vh).map(|(&a, &b)| b - a).collect();
    let (w, h, t) = (means.width(), means.height(), *means.transform());
    let mut bands = means.into_bands();
    bands.push(Band::new("ratio", ratio));
    BandStack::new(w, h, t, bands)
}

/// Optical bands followed by SAR bands.
pub fn build_fused_composite(optical: &BandStack, sar: &BandStack) -> Result<BandStack> {
    stack_concat(optical, sar)
}
