//! Class-labelled point samples ("pins"), their GeoJSON wire format, and
//! extraction of per-pin feature vectors from a composite.
//!
//! Wire format: an RFC 7946 FeatureCollection of `Point` features with an
//! integer property `class` and an optional string property `label`. The
//! class legend travels as a `legend` foreign member on the collection; when
//! it is absent the default water/urban/non-urban legend applies.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::raster::{BandStack, ClassMap, GeoTransform, Legend, NODATA_LABEL};

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePoint {
    pub lon: f64,
    pub lat: f64,
    pub class_id: u8,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub features: Vec<SamplePoint>,
    pub legend: Legend,
}

impl SampleSet {
    pub fn new(features: Vec<SamplePoint>, legend: Legend) -> Result<Self> {
        for f in &features {
            if !legend.contains(f.class_id) {
                return Err(Error::LegendMismatch(format!(
                    "sample class {} not in legend",
                    f.class_id
                )));
            }
            if !(f.lon.is_finite() && f.lat.is_finite()) {
                return Err(Error::Parse("sample coordinates must be finite".into()));
            }
        }
        Ok(SampleSet { features, legend })
    }

    pub fn empty(legend: Legend) -> Self {
        SampleSet {
            features: Vec::new(),
            legend,
        }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// Pin count per class id.
    pub fn class_counts(&self) -> BTreeMap<u8, usize> {
        let mut m = BTreeMap::new();
        for f in &self.features {
            *m.entry(f.class_id).or_insert(0) += 1;
        }
        m
    }
}

fn parse_err(msg: impl Into<String>) -> Error {
    Error::Parse(msg.into())
}

fn parse_feature(i: usize, v: &Value) -> Result<SamplePoint> {
    let obj = v
        .as_object()
        .ok_or_else(|| parse_err(format!("feature {i} is not an object")))?;
    if obj.get("type").and_then(Value::as_str) != Some("Feature") {
        return Err(parse_err(format!("feature {i}: type must be \"Feature\"")));
    }
    let geom = obj
        .get("geometry")
        .and_then(Value::as_object)
        .ok_or_else(|| parse_err(format!("feature {i}: missing geometry")))?;
    match geom.get("type").and_then(Value::as_str) {
        Some("Point") => {}
        Some(other) => {
            return Err(parse_err(format!(
                "feature {i}: unsupported geometry {other:?}, only Point is accepted"
            )))
        }
        None => return Err(parse_err(format!("feature {i}: geometry has no type"))),
    }
    let coords = geom
        .get("coordinates")
        .and_then(Value::as_array)
        .filter(|c| c.len() >= 2)
        .ok_or_else(|| parse_err(format!("feature {i}: Point needs [lon, lat]")))?;
    let lon = coords[0]
        .as_f64()
        .ok_or_else(|| parse_err(format!("feature {i}: longitude is not a number")))?;
    let lat = coords[1]
        .as_f64()
        .ok_or_else(|| parse_err(format!("feature {i}: latitude is not a number")))?;
    let props = obj
        .get("properties")
        .and_then(Value::as_object)
        .ok_or_else(|| parse_err(format!("feature {i}: missing properties")))?;
    let class = props
        .get("class")
        .ok_or_else(|| parse_err(format!("feature {i}: missing \"class\"")))?
        .as_u64()
        .filter(|&c| c < u64::from(NODATA_LABEL))
        .ok_or_else(|| {
            parse_err(format!(
                "feature {i}: \"class\" must be an integer in 0..255"
            ))
        })?;
    let note = match props.get("label") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => {
            return Err(parse_err(format!(
                "feature {i}: \"label\" must be a string"
            )))
        }
    };
    Ok(SamplePoint {
        lon,
        lat,
        class_id: class as u8,
        note,
    })
}

pub fn parse_samples(text: &str) -> Result<SampleSet> {
    let doc: Value =
        serde_json::from_str(text).map_err(|e| parse_err(format!("malformed JSON: {e}")))?;
    let obj = doc
        .as_object()
        .ok_or_else(|| parse_err("document is not a JSON object"))?;
    if obj.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(parse_err("document is not a FeatureCollection"));
    }
    let legend = match obj.get("legend") {
        None => Legend::default(),
        Some(v) => serde_json::from_value::<Legend>(v.clone())
            .map_err(|e| parse_err(format!("bad legend: {e}")))?,
    };
    let features = obj
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| parse_err("FeatureCollection has no features array"))?
        .iter()
        .enumerate()
        .map(|(i, f)| parse_feature(i, f))
        .collect::<Result<Vec<_>>>()?;
    SampleSet::new(features, legend).map_err(|e| parse_err(e.to_string()))
}

#[derive(Serialize)]
struct GeometryOut {
    #[serde(rename = "type")]
    kind: &'static str,
    coordinates: [f64; 2],
}

#[derive(Serialize)]
struct PropertiesOut<'a> {
    class: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<&'a str>,
}

#[derive(Serialize)]
struct FeatureOut<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    geometry: GeometryOut,
    properties: PropertiesOut<'a>,
}

#[derive(Serialize)]
struct CollectionOut<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    legend: &'a Legend,
    features: Vec<FeatureOut<'a>>,
}

/// Canonical GeoJSON text; floats use the shortest round-trip representation.
pub fn serialize_samples(s: &SampleSet) -> String {
    let doc = CollectionOut {
        kind: "FeatureCollection",
        legend: &s.legend,
        features: s
            .features
            .iter()
            .map(|f| FeatureOut {
                kind: "Feature",
                geometry: GeometryOut {
                    kind: "Point",
                    coordinates: [f.lon, f.lat],
                },
                properties: PropertiesOut {
                    class: f.class_id,
                    label: f.note.as_deref(),
                },
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("sample set serializes");
    text.push('\n');
    text
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRow {
    pub x: Vec<f32>,
    pub y: u8,
}

/// Feature vectors (one value per band, in `band_names` order) with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVectors {
    pub rows: Vec<LabeledRow>,
    pub band_names: Vec<String>,
    pub legend: Legend,
    /// Pins discarded because they fell outside the raster or on nodata.
    pub dropped: usize,
}

impl LabeledVectors {
    pub fn new(rows: Vec<LabeledRow>, band_names: Vec<String>, legend: Legend) -> Result<Self> {
        for r in &rows {
            if r.x.len() != band_names.len() {
                return Err(Error::DimensionMismatch(format!(
                    "row has {} features, expected {}",
                    r.x.len(),
                    band_names.len()
                )));
            }
            if r.x.iter().any(|v| v.is_nan()) {
                return Err(Error::Parse("feature vectors must not contain NaN".into()));
            }
            if !legend.contains(r.y) {
                return Err(Error::LegendMismatch(format!(
                    "row label {} not in legend",
                    r.y
                )));
            }
        }
        Ok(LabeledVectors {
            rows,
            band_names,
            legend,
            dropped: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.band_names.len()
    }
}

pub(crate) fn pixel_index(
    t: &GeoTransform,
    width: usize,
    height: usize,
    lon: f64,
    lat: f64,
) -> Option<usize> {
    let (col, row) = t.geo_to_pixel(lon, lat);
    if col < 0 || row < 0 || col as usize >= width || row as usize >= height {
        return None;
    }
    Some(row as usize * width + col as usize)
}

/// Nearest-pixel band values under each pin. Pins off the raster or on a
/// nodata pixel in any band are dropped and counted.
pub fn extract_features(s: &SampleSet, stack: &BandStack) -> Result<LabeledVectors> {
    let mut rows = Vec::with_capacity(s.len());
    let mut dropped = 0;
    for f in &s.features {
        let x = pixel_index(
            stack.transform(),
            stack.width(),
            stack.height(),
            f.lon,
            f.lat,
        )
        .and_then(|idx| stack.pixel_vector(idx));
        match x {
            Some(x) => rows.push(LabeledRow { x, y: f.class_id }),
            None => dropped += 1,
        }
    }
    if rows.is_empty() && dropped > 0 {
        return Err(Error::AllSamplesDropped(dropped));
    }
    let mut out = LabeledVectors::new(rows, stack.band_names(), s.legend.clone())?;
    out.dropped = dropped;
    Ok(out)
}

/// Greedy spacing check over a coarse hash grid.
struct SpacingIndex {
    cell: f64,
    min_sq: f64,
    buckets: HashMap<(i64, i64), Vec<(f64, f64)>>,
}

impl SpacingIndex {
    fn new(min_spacing: f64) -> Self {
        SpacingIndex {
            cell: min_spacing.max(1.0),
            min_sq: min_spacing * min_spacing,
            buckets: HashMap::new(),
        }
    }

    fn key(&self, c: f64, r: f64) -> (i64, i64) {
        (
            (c / self.cell).floor() as i64,
            (r / self.cell).floor() as i64,
        )
    }

    fn is_clear(&self, c: f64, r: f64) -> bool {
        let (kc, kr) = self.key(c, r);
        for dc in -1..=1 {
            for dr in -1..=1 {
                if let Some(pts) = self.buckets.get(&(kc + dc, kr + dr)) {
                    if pts.iter().any(|&(pc, pr)| {
                        let d = (pc - c).powi(2) + (pr - r).powi(2);
                        d < self.min_sq || (pc == c && pr == r)
                    }) {
                        return false;
                    }
                }
            }
        }
        true
    }

    fn insert(&mut self, c: f64, r: f64) {
        let k = self.key(c, r);
        self.buckets.entry(k).or_default().push((c, r));
    }
}

/// Seeded stand-in for manually placed pins: `counts[class]` pins at pixel
/// centres of that class, pairwise at least `min_spacing` pixels apart.
pub fn auto_sample(
    truth: &ClassMap,
    counts: &BTreeMap<u8, usize>,
    seed: u64,
    min_spacing: f64,
) -> Result<SampleSet> {
    auto_sample_avoiding(truth, counts, seed, min_spacing, None)
}

/// As [`auto_sample`], additionally keeping `min_spacing` from every pin of
/// `avoid`, which makes the two sets disjoint.
pub fn auto_sample_avoiding(
    truth: &ClassMap,
    counts: &BTreeMap<u8, usize>,
    seed: u64,
    min_spacing: f64,
    avoid: Option<&SampleSet>,
) -> Result<SampleSet> {
    if !(min_spacing.is_finite() && min_spacing >= 0.0) {
        return Err(Error::Config(format!(
            "min_spacing {min_spacing} must be >= 0"
        )));
    }
    let t = truth.transform();
    let w = truth.width();
    let mut index = SpacingIndex::new(min_spacing);
    if let Some(avoid) = avoid {
        for f in &avoid.features {
            let (c, r) = t.geo_to_pixel(f.lon, f.lat);
            index.insert(c as f64, r as f64);
        }
    }

    let mut features = Vec::new();
    for (&class_id, &count) in counts {
        if count == 0 {
            continue;
        }
        if !truth.legend().contains(class_id) {
            return Err(Error::LegendMismatch(format!(
                "class {class_id} not in truth legend"
            )));
        }
        let mut candidates: Vec<usize> = truth
            .labels()
            .iter()
            .enumerate()
            .filter(|&(_, &l)| l == class_id)
            .map(|(i, _)| i)
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::from(class_id) + 1);
        candidates.shuffle(&mut rng);

        let mut placed = 0;
        for idx in candidates {
            let (c, r) = ((idx % w) as f64, (idx / w) as f64);
            if !index.is_clear(c, r) {
                continue;
            }
            index.insert(c, r);
            let (lon, lat) = t.pixel_to_geo((idx % w) as i64, (idx / w) as i64);
            features.push(SamplePoint {
                lon,
                lat,
                class_id,
                note: None,
            });
            placed += 1;
            if placed == count {
                break;
            }
        }
        if placed < count {
            return Err(Error::InsufficientPixels {
                class_id,
                requested: count,
                available: placed,
            });
        }
    }
    SampleSet::new(features, truth.legend().clone())
}
