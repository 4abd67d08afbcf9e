//! Date-tagged sequences of band stacks and their on-disk index.

use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{read_stack, write_stack, BandStack};

const COLLECTION_FORMAT: &str = "terrafuse-collection/1";
const COLLECTION_INDEX: &str = "collection.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sensor {
    Optical,
    Sar,
}

impl std::fmt::Display for Sensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Sensor::Optical => "optical",
            Sensor::Sar => "sar",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectionItem {
    pub date: NaiveDate,
    pub sensor: Sensor,
    pub stack: BandStack,
    /// Fraction of cloud-covered pixels; optical acquisitions only.
    pub cloud_fraction: Option<f64>,
}

/// Acquisitions sorted by date, all on one grid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ImageCollection {
    items: Vec<CollectionItem>,
}

impl ImageCollection {
    /// Sorts by date (stable) and checks that every stack shares one grid.
    pub fn new(mut items: Vec<CollectionItem>) -> Result<Self> {
        items.sort_by_key(|it| it.date);
        if let Some(first) = items.first() {
            if let Some(bad) = items
                .iter()
                .find(|it| !it.stack.same_geometry(&first.stack))
            {
                return Err(Error::DimensionMismatch(format!(
                    "acquisition {} is not on the collection grid",
                    bad.date
                )));
            }
        }
        for it in &items {
            if let Some(cf) = it.cloud_fraction {
                if !(0.0..=1.0).contains(&cf) {
                    return Err(Error::Config(format!(
                        "cloud fraction {cf} on {} outside [0, 1]",
                        it.date
                    )));
                }
            }
        }
        Ok(ImageCollection { items })
    }

    pub fn items(&self) -> &[CollectionItem] {
        &self.items
    }

    pub fn into_items(self) -> Vec<CollectionItem> {
        self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
struct ItemDoc {
    date: NaiveDate,
    sensor: Sensor,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    cloud_fraction: Option<f64>,
    stack: String,
}

#[derive(Serialize, Deserialize)]
struct CollectionDoc {
    format: String,
    items: Vec<ItemDoc>,
}

/// Writes `collection.json` plus one stack container per item under `items/`.
pub fn write_collection(c: &ImageCollection, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut items = Vec::with_capacity(c.len());
    for (i, it) in c.items().iter().enumerate() {
        let rel = format!("items/{i:03}_{}_{}", it.sensor, it.date);
        write_stack(&it.stack, dir.join(&rel))?;
        items.push(ItemDoc {
            date: it.date,
            sensor: it.sensor,
            cloud_fraction: it.cloud_fraction,
            stack: rel,
        });
    }
    let doc = CollectionDoc {
        format: COLLECTION_FORMAT.into(),
        items,
    };
    let path = dir.join(COLLECTION_INDEX);
    let text = serde_json::to_string_pretty(&doc).expect("collection index serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_collection(dir: impl AsRef<Path>) -> Result<ImageCollection> {
    let dir = dir.as_ref();
    let path = dir.join(COLLECTION_INDEX);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingArtifact(path))
        }
        Err(e) => return Err(Error::io(&path, e)),
    };
    let doc: CollectionDoc =
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    if doc.format != COLLECTION_FORMAT {
        return Err(Error::format(&path, format!("bad magic {:?}", doc.format)));
    }
    let items = doc
        .items
        .into_iter()
        .map(|d| {
            if d.stack.split('/').any(|part| part == "..") {
                return Err(Error::format(
                    &path,
                    format!("stack path {:?} escapes", d.stack),
                ));
            }
            Ok(CollectionItem {
                date: d.date,
                sensor: d.sensor,
                stack: read_stack(dir.join(&d.stack))?,
                cloud_fraction: d.cloud_fraction,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ImageCollection::new(items)
}
