//! Georeferenced rasters: the affine pixel grid, multi-band float stacks and
//! categorical class maps.
//!
//! Coordinates are plate-carrée longitude/latitude in degrees. The grid is
//! north-up, so `pixel_h` is negative and row 0 is the northern edge.

mod container;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use container::{read_classmap, read_stack, write_classmap, write_stack};

/// Class label reserved for pixels that could not be classified.
pub const NODATA_LABEL: u8 = 255;

/// Affine pixel grid with zero rotation terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_w: f64,
    pub pixel_h: f64,
}

impl GeoTransform {
    pub fn new(origin_x: f64, origin_y: f64, pixel_w: f64, pixel_h: f64) -> Result<Self> {
        let t = GeoTransform {
            origin_x,
            origin_y,
            pixel_w,
            pixel_h,
        };
        t.validate()?;
        Ok(t)
    }

    /// North-up grid of square pixels whose pixel `(col, row)` has its centre
    /// exactly on `(lon, lat)`.
    pub fn centered_on(lon: f64, lat: f64, col: u32, row: u32, pixel_size: f64) -> Result<Self> {
        GeoTransform::new(
            lon - (f64::from(col) + 0.5) * pixel_size,
            lat + (f64::from(row) + 0.5) * pixel_size,
            pixel_size,
            -pixel_size,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.origin_x, self.origin_y, self.pixel_w, self.pixel_h]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("geotransform has non-finite terms".into()));
        }
        if self.pixel_w <= 0.0 {
            return Err(Error::Config(format!(
                "pixel_w must be > 0, got {}",
                self.pixel_w
            )));
        }
        if self.pixel_h >= 0.0 {
            return Err(Error::Config(format!(
                "pixel_h must be < 0 (north-up), got {}",
                self.pixel_h
            )));
        }
        Ok(())
    }

    /// Pixel containing `(lon, lat)`. Not clamped; indices may fall outside
    /// the raster and callers are expected to check.
    pub fn geo_to_pixel(&self, lon: f64, lat: f64) -> (i64, i64) {
        let col = ((lon - self.origin_x) / self.pixel_w).floor();
        let row = ((lat - self.origin_y) / self.pixel_h).floor();
        (col as i64, row as i64)
    }

    /// Centre of pixel `(col, row)`.
    pub fn pixel_to_geo(&self, col: i64, row: i64) -> (f64, f64) {
        (
            self.origin_x + (col as f64 + 0.5) * self.pixel_w,
            self.origin_y + (row as f64 + 0.5) * self.pixel_h,
        )
    }

    fn same_bits(&self, other: &GeoTransform) -> bool {
        self.origin_x.to_bits() == other.origin_x.to_bits()
            && self.origin_y.to_bits() == other.origin_y.to_bits()
            && self.pixel_w.to_bits() == other.pixel_w.to_bits()
            && self.pixel_h.to_bits() == other.pixel_h.to_bits()
    }
}

/// Sentinel marking missing samples in a band.
#[derive(Debug, Clone, Copy, Default)]
pub enum Nodata {
    #[default]
    Nan,
    Value(f32),
}

impl Nodata {
    /// NaN is treated as missing whatever the declared sentinel.
    pub fn is_nodata(&self, v: f32) -> bool {
        match *self {
            Nodata::Nan => v.is_nan(),
            Nodata::Value(x) => v.is_nan() || v.to_bits() == x.to_bits() || v == x,
        }
    }

    /// The value written into pixels that have no data.
    pub fn fill(&self) -> f32 {
        match *self {
            Nodata::Nan => f32::NAN,
            Nodata::Value(x) => x,
        }
    }
}

impl PartialEq for Nodata {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Nodata::Nan, Nodata::Nan) => true,
            (Nodata::Value(a), Nodata::Value(b)) => a.to_bits() == b.to_bits(),
            _ => false,
        }
    }
}

/// One named raster plane, row-major.
#[derive(Debug, Clone)]
pub struct Band {
    pub name: String,
    pub values: Vec<f32>,
    pub nodata: Nodata,
}

impl Band {
    pub fn new(name: impl Into<String>, values: Vec<f32>) -> Self {
        Band {
            name: name.into(),
            values,
            nodata: Nodata::Nan,
        }
    }

    pub fn with_nodata(mut self, nodata: Nodata) -> Self {
        self.nodata = nodata;
        self
    }

    pub fn is_nodata(&self, idx: usize) -> bool {
        self.nodata.is_nodata(self.values[idx])
    }
}

/// Bitwise equality: NaN payloads compare equal when their bit patterns do.
impl PartialEq for Band {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.nodata == other.nodata
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

pub(crate) fn valid_band_name(name: &str) -> bool {
    !name.is_empty()
        && !name.starts_with('.')
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

/// Ordered multi-band raster sharing one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BandStack {
    width: usize,
    height: usize,
    transform: GeoTransform,
    bands: Vec<Band>,
}

impl BandStack {
    pub fn new(
        width: usize,
        height: usize,
        transform: GeoTransform,
        bands: Vec<Band>,
    ) -> Result<Self> {
        transform.validate()?;
        if width == 0 || height == 0 {
            return Err(Error::InvalidStack(format!("empty grid {width}x{height}")));
        }
        if bands.is_empty() {
            return Err(Error::InvalidStack(
                "a band stack needs at least one band".into(),
            ));
        }
        let n = width * height;
        for (i, band) in bands.iter().enumerate() {
            if !valid_band_name(&band.name) {
                return Err(Error::InvalidStack(format!(
                    "invalid band name {:?}",
                    band.name
                )));
            }
            if band.values.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "band `{}` has {} values, grid is {width}x{height}",
                    band.name,
                    band.values.len()
                )));
            }
            if bands[..i].iter().any(|b| b.name == band.name) {
                return Err(Error::DuplicateBandName(band.name.clone()));
            }
        }
        Ok(BandStack {
            width,
            height,
            transform,
            bands,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn transform(&self) -> &GeoTransform {
        &self.transform
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    pub fn into_bands(self) -> Vec<Band> {
        self.bands
    }

    pub fn band(&self, name: &str) -> Option<&Band> {
        self.bands.iter().find(|b| b.name == name)
    }

    pub fn band_names(&self) -> Vec<String> {
        self.bands.iter().map(|b| b.name.clone()).collect()
    }

    /// Same width, height and (bitwise) transform.
    pub fn same_geometry(&self, other: &BandStack) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.transform.same_bits(&other.transform)
    }

    /// New stack holding copies of the named bands in the requested order.
    pub fn select<S: AsRef<str>>(&self, names: &[S]) -> Result<BandStack> {
        let bands = names
            .iter()
            .map(|n| {
                self.band(n.as_ref())
                    .cloned()
                    .ok_or_else(|| Error::MissingBand(n.as_ref().to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        BandStack::new(self.width, self.height, self.transform, bands)
    }

    /// Band values at a linear pixel index, or `None` when any band is nodata.
    pub fn pixel_vector(&self, idx: usize) -> Option<Vec<f32>> {
        let mut out = Vec::with_capacity(self.bands.len());
        for band in &self.bands {
            if band.is_nodata(idx) {
                return None;
            }
            out.push(band.values[idx]);
        }
        Some(out)
    }
}

/// Concatenate two stacks on the same grid: `a`'s bands, then `b`'s.
pub fn stack_concat(a: &BandStack, b: &BandStack) -> Result<BandStack> {
    if !a.same_geometry(b) {
        return Err(Error::DimensionMismatch(format!(
            "cannot concatenate {}x{} stack with {}x{} stack (or transforms differ)",
            a.width, a.height, b.width, b.height
        )));
    }
    if let Some(dup) = b.bands.iter().find(|bb| a.band(&bb.name).is_some()) {
        return Err(Error::DuplicateBandName(dup.name.clone()));
    }
    let bands = a.bands.iter().chain(&b.bands).cloned().collect();
    BandStack::new(a.width, a.height, a.transform, bands)
}

/// Class id to class name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Legend(pub BTreeMap<u8, String>);

pub const WATER: u8 = 0;
pub const URBAN: u8 = 1;
pub const NON_URBAN: u8 = 2;

impl Default for Legend {
    fn default() -> Self {
        Legend(BTreeMap::from([
            (WATER, "water".to_string()),
            (URBAN, "urban".to_string()),
            (NON_URBAN, "non-urban".to_string()),
        ]))
    }
}

impl Legend {
    pub fn contains(&self, id: u8) -> bool {
        self.0.contains_key(&id)
    }

    pub fn name(&self, id: u8) -> Option<&str> {
        self.0.get(&id).map(String::as_str)
    }

    pub fn ids(&self) -> impl Iterator<Item = u8> + '_ {
        self.0.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Position of `id` in ascending id order.
    pub fn index_of(&self, id: u8) -> Option<usize> {
        self.0.keys().position(|&k| k == id)
    }

    /// One more than the largest id; the size of per-class count vectors.
    pub fn class_span(&self) -> usize {
        self.0.keys().next_back().map_or(0, |&k| k as usize + 1)
    }
}

/// Categorical raster of class ids.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMap {
    width: usize,
    height: usize,
    transform: GeoTransform,
    labels: Vec<u8>,
    legend: Legend,
}

impl ClassMap {
    pub fn new(
        width: usize,
        height: usize,
        transform: GeoTransform,
        labels: Vec<u8>,
        legend: Legend,
    ) -> Result<Self> {
        transform.validate()?;
        if labels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for a {width}x{height} grid",
                labels.len()
            )));
        }
        if legend.contains(NODATA_LABEL) {
            return Err(Error::Config(format!(
                "class id {NODATA_LABEL} is reserved for nodata"
            )));
        }
        if let Some(&bad) = labels
            .iter()
            .find(|&&l| l != NODATA_LABEL && !legend.contains(l))
        {
            return Err(Error::LegendMismatch(format!("label {bad} not in legend")));
        }
        Ok(ClassMap {
            width,
            height,
            transform,
            labels,
            legend,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn transform(&self) -> &GeoTransform {
        &self.transform
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn legend(&self) -> &Legend {
        &self.legend
    }

    pub fn label_at(&self, col: usize, row: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    /// Pixel count per label value (index = label, 256 entries).
    pub fn histogram(&self) -> [usize; 256] {
        let mut h = [0usize; 256];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }
}
