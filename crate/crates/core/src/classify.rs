//! Per-pixel classification of a composite and rendering of class maps and
//! composites to 8-bit RGB images (binary PPM, optionally PNG).

use std::collections::BTreeMap;
use std::io::Cursor;

use crate::cart::DecisionTree;
use crate::error::{Error, Result};
use crate::raster::{BandStack, ClassMap, Legend, NODATA_LABEL, NON_URBAN, URBAN, WATER};

/// Applies `tree` to every pixel. Pixels with nodata in any band get
/// [`NODATA_LABEL`].
pub fn classify_stack(tree: &DecisionTree, stack: &BandStack) -> Result<ClassMap> {
    let names = stack.band_names();
    if names != tree.bands {
        return Err(Error::BandOrderMismatch {
            expected: tree.bands.clone(),
            found: names,
        });
    }
    let labels = (0..stack.len_pixels())
        .map(|i| match stack.pixel_vector(i) {
            Some(x) => tree.predict_unchecked(&x),
            None => NODATA_LABEL,
        })
        .collect();
    ClassMap::new(
        stack.width(),
        stack.height(),
        *stack.transform(),
        labels,
        tree.legend.clone(),
    )
}

pub type Rgb = [u8; 3];

/// Class colours plus the colour used for nodata pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Palette {
    pub colors: BTreeMap<u8, Rgb>,
    pub nodata: Rgb,
}

impl Default for Palette {
    /// Water blue, urban white, non-urban red, nodata black.
    fn default() -> Self {
        Palette {
            colors: BTreeMap::from([
                (WATER, [0, 0, 255]),
                (URBAN, [255, 255, 255]),
                (NON_URBAN, [255, 0, 0]),
            ]),
            nodata: [0, 0, 0],
        }
    }
}

impl Palette {
    /// Resolve colours given by class name against a legend.
    pub fn from_names(
        legend: &Legend,
        by_name: &BTreeMap<String, Rgb>,
        nodata: Rgb,
    ) -> Result<Self> {
        let mut colors = BTreeMap::new();
        for (name, rgb) in by_name {
            let id = legend
                .0
                .iter()
                .find(|(_, n)| *n == name)
                .map(|(&id, _)| id)
                .ok_or_else(|| {
                    Error::Config(format!("palette entry {name:?} is not a legend class"))
                })?;
            colors.insert(id, *rgb);
        }
        Ok(Palette { colors, nodata })
    }
}

/// Packed 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn pixel(&self, col: usize, row: usize) -> Rgb {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Binary PPM (P6, maxval 255).
    pub fn to_ppm(&self) -> Vec<u8> {
        let header = format!("P6\n{} {}\n255\n", self.width, self.height);
        let mut out = Vec::with_capacity(header.len() + self.data.len());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&self.data);
        out
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let img =
            image::RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
                .expect("buffer length matches dimensions");
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png)
            .map_err(|e| Error::Config(format!("png encoding failed: {e}")))?;
        Ok(out.into_inner())
    }
}

/// Parse a binary PPM produced by [`RgbImage::to_ppm`].
pub fn parse_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let bad = |m: &str| Error::Parse(format!("ppm: {m}"));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header not ASCII"))?);
    }
    if fields[0] != "P6" || fields[3] != "255" {
        return Err(bad("only P6 with maxval 255 is supported"));
    }
    let width: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let height: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    let data = bytes.get(pos + 1..).ok_or_else(|| bad("missing raster"))?;
    if data.len() != width * height * 3 {
        return Err(bad("raster length does not match header"));
    }
    Ok(RgbImage {
        width,
        height,
        data: data.to_vec(),
    })
}

pub fn render_classmap(m: &ClassMap, palette: &Palette) -> Result<RgbImage> {
    if let Some(id) = m.legend().ids().find(|id| !palette.colors.contains_key(id)) {
        return Err(Error::MissingPaletteEntry(id));
    }
    let mut data = Vec::with_capacity(m.labels().len() * 3);
    for &l in m.labels() {
        let rgb = if l == NODATA_LABEL {
            palette.nodata
        } else {
            palette.colors[&l]
        };
        data.extend_from_slice(&rgb);
    }
    Ok(RgbImage {
        width: m.width(),
        height: m.height(),
        data,
    })
}

/// Percentile of sorted data with linear interpolation between ranks.
fn percentile(sorted: &[f32], pct: f64) -> f64 {
    let rank = pct / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    f64::from(sorted[lo]) * (1.0 - frac) + f64::from(sorted[hi]) * frac
}

/// Stretch bands linearly between percentiles to 0..=255. A band whose
/// percentiles coincide renders mid-grey (127); nodata renders 0.
pub fn stretch_band(
    values: &[f32],
    nodata: &crate::raster::Nodata,
    stretch: (f64, f64),
) -> Vec<u8> {
    let mut valid: Vec<f32> = values
        .iter()
        .copied()
        .filter(|v| !nodata.is_nodata(*v))
        .collect();
    if valid.is_empty() {
        return vec![0; values.len()];
    }
    valid.sort_by(f32::total_cmp);
    let lo = percentile(&valid, stretch.0);
    let hi = percentile(&valid, stretch.1);
    values
        .iter()
        .map(|&v| {
            if nodata.is_nodata(v) {
                0
            } else if hi <= lo {
                127
            } else {
                ((f64::from(v) - lo) / (hi - lo) * 255.0)
                    .round()
                    .clamp(0.0, 255.0) as u8
            }
        })
        .collect()
}

pub fn render_composite(
    stack: &BandStack,
    rgb: [&str; 3],
    stretch: (f64, f64),
) -> Result<RgbImage> {
    if !(0.0..=100.0).contains(&stretch.0)
        || !(0.0..=100.0).contains(&stretch.1)
        || stretch.0 > stretch.1
    {
        return Err(Error::Config(format!(
            "stretch percentiles {:?} must satisfy 0 <= low <= high <= 100",
            stretch
        )));
    }
    let channels = rgb
        .iter()
        .map(|name| {
            let band = stack
                .band(name)
                .ok_or_else(|| Error::MissingBand(name.to_string()))?;
            Ok(stretch_band(&band.values, &band.nodata, stretch))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut data = Vec::with_capacity(stack.len_pixels() * 3);
    for ((&r, &g), &b) in channels[0].iter().zip(&channels[1]).zip(&channels[2]) {
        data.extend([r, g, b]);
    }
    Ok(RgbImage {
        width: stack.width(),
        height: stack.height(),
        data,
    })
}
