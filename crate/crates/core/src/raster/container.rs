//! On-disk containers.
//!
//! A band stack is a directory holding `stack.json` and one headerless plane
//! file `<band>.f32` per band: little-endian IEEE-754 binary32, row-major,
//! exactly `width * height * 4` bytes. Class maps use `classmap.json` plus a
//! single `labels.u8` plane of one byte per pixel.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    valid_band_name, Band, BandStack, ClassMap, GeoTransform, Legend, Nodata, NODATA_LABEL,
};
use crate::error::{Error, Result};

const STACK_FORMAT: &str = "terrafuse-stack/1";
const CLASSMAP_FORMAT: &str = "terrafuse-classmap/1";
const STACK_HEADER: &str = "stack.json";
const CLASSMAP_HEADER: &str = "classmap.json";
const LABELS_PLANE: &str = "labels.u8";

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum NodataDoc {
    Text(String),
    Number(f32),
}

#[derive(Serialize, Deserialize)]
struct BandDoc {
    name: String,
    dtype: String,
    nodata: NodataDoc,
}

#[derive(Serialize, Deserialize)]
struct StackDoc {
    format: String,
    width: usize,
    height: usize,
    transform: GeoTransform,
    bands: Vec<BandDoc>,
}

#[derive(Serialize, Deserialize)]
struct ClassMapDoc {
    format: String,
    width: usize,
    height: usize,
    transform: GeoTransform,
    nodata: u8,
    legend: Legend,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_header<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingArtifact(path.to_path_buf()))
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_stack(stack: &BandStack, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut bands = Vec::with_capacity(stack.bands().len());
    for band in stack.bands() {
        let mut bytes = Vec::with_capacity(band.values.len() * 4);
        for v in &band.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        write_file(&dir.join(format!("{}.f32", band.name)), &bytes)?;
        bands.push(BandDoc {
            name: band.name.clone(),
            dtype: "f32".into(),
            nodata: match band.nodata {
                Nodata::Nan => NodataDoc::Text("nan".into()),
                Nodata::Value(v) => NodataDoc::Number(v),
            },
        });
    }
    let doc = StackDoc {
        format: STACK_FORMAT.into(),
        width: stack.width(),
        height: stack.height(),
        transform: *stack.transform(),
        bands,
    };
    let text = serde_json::to_string_pretty(&doc).expect("stack header serializes");
    write_file(&dir.join(STACK_HEADER), text.as_bytes())
}

pub fn read_stack(dir: impl AsRef<Path>) -> Result<BandStack> {
    let dir = dir.as_ref();
    let header_path = dir.join(STACK_HEADER);
    let doc: StackDoc = read_header(&header_path)?;
    if doc.format != STACK_FORMAT {
        return Err(Error::format(
            &header_path,
            format!("bad magic {:?}", doc.format),
        ));
    }
    let n = doc
        .width
        .checked_mul(doc.height)
        .ok_or_else(|| Error::format(&header_path, "grid size overflows"))?;
    let mut bands = Vec::with_capacity(doc.bands.len());
    for bd in doc.bands {
        if bd.dtype != "f32" {
            return Err(Error::format(
                &header_path,
                format!("unsupported dtype {:?}", bd.dtype),
            ));
        }
        if !valid_band_name(&bd.name) {
            return Err(Error::format(
                &header_path,
                format!("invalid band name {:?}", bd.name),
            ));
        }
        let nodata = match bd.nodata {
            NodataDoc::Text(s) if s == "nan" => Nodata::Nan,
            NodataDoc::Text(s) => {
                return Err(Error::format(&header_path, format!("bad nodata {s:?}")))
            }
            NodataDoc::Number(v) => Nodata::Value(v),
        };
        let plane_path = dir.join(format!("{}.f32", bd.name));
        let bytes = match fs::read(&plane_path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::format(&plane_path, "plane file missing"))
            }
            Err(e) => return Err(Error::io(&plane_path, e)),
        };
        if bytes.len() != n * 4 {
            return Err(Error::format(
                &plane_path,
                format!("plane has {} bytes, header implies {}", bytes.len(), n * 4),
            ));
        }
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        bands.push(Band {
            name: bd.name,
            values,
            nodata,
        });
    }
    BandStack::new(doc.width, doc.height, doc.transform, bands)
        .map_err(|e| Error::format(&header_path, e.to_string()))
}

pub fn write_classmap(map: &ClassMap, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join(LABELS_PLANE), map.labels())?;
    let doc = ClassMapDoc {
        format: CLASSMAP_FORMAT.into(),
        width: map.width(),
        height: map.height(),
        transform: *map.transform(),
        nodata: NODATA_LABEL,
        legend: map.legend().clone(),
    };
    let text = serde_json::to_string_pretty(&doc).expect("classmap header serializes");
    write_file(&dir.join(CLASSMAP_HEADER), text.as_bytes())
}

pub fn read_classmap(dir: impl AsRef<Path>) -> Result<ClassMap> {
    let dir = dir.as_ref();
    let header_path = dir.join(CLASSMAP_HEADER);
    let doc: ClassMapDoc = read_header(&header_path)?;
    if doc.format != CLASSMAP_FORMAT {
        return Err(Error::format(
            &header_path,
            format!("bad magic {:?}", doc.format),
        ));
    }
    if doc.nodata != NODATA_LABEL {
        return Err(Error::format(
            &header_path,
            format!("nodata label must be {NODATA_LABEL}"),
        ));
    }
    let plane_path = dir.join(LABELS_PLANE);
    let labels = fs::read(&plane_path).map_err(|e| Error::io(&plane_path, e))?;
    if labels.len() != doc.width * doc.height {
        return Err(Error::format(
            &plane_path,
            format!(
                "{} labels, header implies {}",
                labels.len(),
                doc.width * doc.height
            ),
        ));
    }
    ClassMap::new(doc.width, doc.height, doc.transform, labels, doc.legend)
        .map_err(|e| Error::format(&header_path, e.to_string()))
}
