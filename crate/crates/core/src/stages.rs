//! File-backed stages over an output directory.
//!
//! Every stage reads its inputs from the output directory, writes into a
//! private staging directory and moves the results into place only when it
//! succeeds, so a failed stage never leaves partial artifacts behind. After
//! each commit `manifest.json` is rewritten with the effective config hash,
//! the seed and a SHA-256 digest of every artifact file.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cart::{parse_tree, serialize_tree, DecisionTree, TrainParams};
use crate::classify::{render_composite, RgbImage};
use crate::collection::{read_collection, write_collection, ImageCollection};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::pipeline::{self, Source};
use crate::raster::{read_classmap, read_stack, write_classmap, write_stack};
use crate::raster::{BandStack, ClassMap};
use crate::samples::{parse_samples, serialize_samples, SampleSet};
use crate::validation::{compare_report, AccuracyReport, Comparison};

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG_COPY: &str = "config.toml";

/// Relative artifact paths inside an output directory.
pub mod layout {
    use super::Source;

    pub const TRUTH: &str = "truth";
    pub const OPTICAL_COLLECTION: &str = "collections/optical";
    pub const SAR_COLLECTION: &str = "collections/sar";
    pub const TRAINING_SAMPLES: &str = "samples/training.geojson";
    pub const VALIDATION_SAMPLES: &str = "samples/validation.geojson";
    pub const COMPARE_JSON: &str = "reports/compare.json";
    pub const COMPARE_TEXT: &str = "reports/compare.txt";
    /// Pins stored by the labelling service; survives re-simulation.
    pub const SESSION_SAMPLES: &str = "session/samples.geojson";

    pub fn composite(kind: &str) -> String {
        format!("composites/{kind}")
    }

    pub fn model(s: Source) -> String {
        format!("models/{s}.tree.json")
    }

    pub fn classmap(s: Source) -> String {
        format!("classmaps/{s}")
    }

    pub fn report_json(s: Source) -> String {
        format!("reports/{s}.json")
    }

    pub fn report_text(s: Source) -> String {
        format!("reports/{s}.txt")
    }

    pub fn render(name: &str) -> String {
        format!("renders/{name}.ppm")
    }

    /// Directories wiped when a new scene is simulated.
    pub const DERIVED: [&str; 5] = ["composites", "models", "classmaps", "reports", "renders"];
}

/// Composite kinds on disk; `sar` is stored but never classified on its own.
pub const COMPOSITE_KINDS: [&str; 3] = ["optical", "sar", "fused"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Simulate,
    Composite,
    Train,
    Classify,
    Validate,
    Compare,
    Render,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Simulate,
        Stage::Composite,
        Stage::Train,
        Stage::Classify,
        Stage::Validate,
        Stage::Compare,
        Stage::Render,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Composite => "composite",
            Stage::Train => "train",
            Stage::Classify => "classify",
            Stage::Validate => "validate",
            Stage::Compare => "compare",
            Stage::Render => "render",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

/// Per-invocation overrides.
#[derive(Debug, Clone, Default)]
pub struct StageOptions {
    /// Restrict train/classify/validate to one source; both when `None`.
    pub source: Option<Source>,
    /// Sample file used instead of the simulated training (for `train`) or
    /// validation (for `validate`) pins.
    pub samples: Option<PathBuf>,
    /// Training parameters replacing the configured ones.
    pub train_params: Option<TrainParams>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: u64,
    /// Stages in the order they first ran.
    pub stages: Vec<Stage>,
    /// Relative path to lowercase hex SHA-256 of the file contents.
    pub artifacts: BTreeMap<String, String>,
}

impl Manifest {
    pub fn load(out: &Path) -> Result<Option<Manifest>> {
        let path = out.join(MANIFEST);
        match fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| Error::format(&path, e.to_string())),
            Err(e) if e.kind() == ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digests of every file under `rel` (a file or a directory), keyed by
/// slash-separated path relative to `root`.
fn digest_tree(root: &Path, rel: &str, into: &mut BTreeMap<String, String>) -> Result<()> {
    let path = root.join(rel);
    let meta = fs::metadata(&path).map_err(|e| Error::io(&path, e))?;
    if meta.is_dir() {
        let mut names: Vec<String> = fs::read_dir(&path)
            .map_err(|e| Error::io(&path, e))?
            .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io(&path, e))?;
        names.sort();
        for n in names {
            digest_tree(root, &format!("{rel}/{n}"), into)?;
        }
    } else {
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        into.insert(rel.to_string(), sha256_hex(&bytes));
    }
    Ok(())
}

fn remove_path(path: &Path) -> Result<()> {
    let res = match fs::symlink_metadata(path) {
        Ok(m) if m.is_dir() => fs::remove_dir_all(path),
        Ok(_) => fs::remove_file(path),
        Err(e) if e.kind() == ErrorKind::NotFound => return Ok(()),
        Err(e) => Err(e),
    };
    res.map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    match fs::read_to_string(path) {
        Ok(t) => Ok(t),
        Err(e) if e.kind() == ErrorKind::NotFound => {
            Err(Error::MissingArtifact(path.to_path_buf()))
        }
        Err(e) => Err(Error::io(path, e)),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

/// Runs stages against one output directory.
#[derive(Debug, Clone)]
pub struct Runner {
    cfg: Config,
    out: PathBuf,
    config_sha256: String,
}

impl Runner {
    pub fn new(cfg: Config, out: impl Into<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        let out = out.into();
        fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        let config_sha256 = sha256_hex(cfg.to_toml().as_bytes());
        Ok(Runner {
            cfg,
            out,
            config_sha256,
        })
    }

    pub fn config(&self) -> &Config {
        &self.cfg
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn config_sha256(&self) -> &str {
        &self.config_sha256
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    pub fn manifest(&self) -> Result<Option<Manifest>> {
        Manifest::load(&self.out)
    }

    pub fn load_truth(&self) -> Result<ClassMap> {
        read_classmap(self.path(layout::TRUTH))
    }

    pub fn load_collection(&self, rel: &str) -> Result<ImageCollection> {
        read_collection(self.path(rel))
    }

    pub fn load_samples_file(&self, path: &Path) -> Result<SampleSet> {
        let set = parse_samples(&read_text(path)?)?;
        if set.legend != self.cfg.legend() {
            return Err(Error::LegendMismatch(format!(
                "{} uses a legend that differs from the configured one",
                path.display()
            )));
        }
        Ok(set)
    }

    pub fn load_samples(&self, rel: &str) -> Result<SampleSet> {
        self.load_samples_file(&self.path(rel))
    }

    pub fn load_composite(&self, kind: &str) -> Result<BandStack> {
        if !COMPOSITE_KINDS.contains(&kind) {
            return Err(Error::Config(format!("unknown composite {kind:?}")));
        }
        read_stack(self.path(&layout::composite(kind)))
    }

    pub fn load_model(&self, s: Source) -> Result<DecisionTree> {
        parse_tree(&read_text(&self.path(&layout::model(s)))?)
    }

    pub fn load_classmap(&self, s: Source) -> Result<ClassMap> {
        read_classmap(self.path(&layout::classmap(s)))
    }

    pub fn load_report(&self, s: Source) -> Result<AccuracyReport> {
        read_json(&self.path(&layout::report_json(s)))
    }

    pub fn load_comparison(&self) -> Result<Comparison> {
        read_json(&self.path(layout::COMPARE_JSON))
    }

    /// Preview of any three bands of a stored composite.
    pub fn render_composite_bands(&self, kind: &str, rgb: [&str; 3]) -> Result<RgbImage> {
        let stack = self.load_composite(kind)?;
        let [lo, hi] = self.cfg.bands.stretch;
        render_composite(&stack, rgb, (lo, hi))
    }

    pub fn render_classmap(&self, s: Source) -> Result<RgbImage> {
        pipeline::render_map(&self.cfg, &self.load_classmap(s)?)
    }

    fn sources(opts: &StageOptions) -> Vec<Source> {
        match opts.source {
            Some(s) => vec![s],
            None => Source::ALL.to_vec(),
        }
    }

    /// Run one stage and commit its artifacts; returns their relative paths.
    pub fn run(&self, stage: Stage, opts: &StageOptions) -> Result<Vec<String>> {
        let staging = self.out.join(format!(".staging-{stage}"));
        remove_path(&staging)?;
        fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        let produced = match self.produce(stage, opts, &staging) {
            Ok(p) => p,
            Err(e) => {
                let _ = remove_path(&staging);
                return Err(e);
            }
        };
        let committed = self.commit(stage, &staging, &produced);
        let _ = remove_path(&staging);
        committed.map(|()| produced)
    }

    /// Every stage in order.
    pub fn run_all(&self, opts: &StageOptions) -> Result<()> {
        for stage in Stage::ALL {
            self.run(stage, opts)?;
        }
        Ok(())
    }

    fn produce(&self, stage: Stage, opts: &StageOptions, dst: &Path) -> Result<Vec<String>> {
        let cfg = &self.cfg;
        let mut produced = Vec::new();
        match stage {
            Stage::Simulate => {
                let sim = pipeline::simulate(cfg)?;
                let (training, validation) = pipeline::draw_samples(cfg, &sim.truth)?;
                write_classmap(&sim.truth, dst.join(layout::TRUTH))?;
                write_collection(&sim.optical, dst.join(layout::OPTICAL_COLLECTION))?;
                write_collection(&sim.sar, dst.join(layout::SAR_COLLECTION))?;
                write_text(
                    &dst.join(layout::TRAINING_SAMPLES),
                    &serialize_samples(&training),
                )?;
                write_text(
                    &dst.join(layout::VALIDATION_SAMPLES),
                    &serialize_samples(&validation),
                )?;
                write_text(&dst.join(CONFIG_COPY), &cfg.to_toml())?;
                produced.extend(
                    [
                        layout::TRUTH,
                        layout::OPTICAL_COLLECTION,
                        layout::SAR_COLLECTION,
                        layout::TRAINING_SAMPLES,
                        layout::VALIDATION_SAMPLES,
                        CONFIG_COPY,
                    ]
                    .map(String::from),
                );
            }
            Stage::Composite => {
                let optical = self.load_collection(layout::OPTICAL_COLLECTION)?;
                let sar = self.load_collection(layout::SAR_COLLECTION)?;
                let comps = pipeline::build_composites(cfg, &optical, &sar)?;
                for (kind, stack) in
                    COMPOSITE_KINDS
                        .iter()
                        .zip([&comps.optical, &comps.sar, &comps.fused])
                {
                    let rel = layout::composite(kind);
                    write_stack(stack, dst.join(&rel))?;
                    produced.push(rel);
                }
            }
            Stage::Train => {
                let samples = match &opts.samples {
                    Some(p) => self.load_samples_file(p)?,
                    None => self.load_samples(layout::TRAINING_SAMPLES)?,
                };
                let params = opts.train_params.unwrap_or(cfg.train_params);
                params.validate()?;
                for s in Self::sources(opts) {
                    let stack = self.load_composite(s.as_str())?;
                    let tree = pipeline::train_on(&samples, &stack, &params)?;
                    let rel = layout::model(s);
                    write_text(&dst.join(&rel), &serialize_tree(&tree))?;
                    produced.push(rel);
                }
            }
            Stage::Classify => {
                for s in Self::sources(opts) {
                    let tree = self.load_model(s)?;
                    let stack = self.load_composite(s.as_str())?;
                    let map = pipeline::classify(&tree, &stack)?;
                    let rel = layout::classmap(s);
                    write_classmap(&map, dst.join(&rel))?;
                    produced.push(rel);
                }
            }
            Stage::Validate => {
                let samples = match &opts.samples {
                    Some(p) => self.load_samples_file(p)?,
                    None => self.load_samples(layout::VALIDATION_SAMPLES)?,
                };
                for s in Self::sources(opts) {
                    let tree = self.load_model(s)?;
                    let stack = self.load_composite(s.as_str())?;
                    let report = pipeline::evaluate(&tree, &samples, &stack)?;
                    let (json, text) = (layout::report_json(s), layout::report_text(s));
                    write_text(&dst.join(&json), &to_json(&report))?;
                    write_text(
                        &dst.join(&text),
                        &report.to_text(&format!("{s} classification")),
                    )?;
                    produced.extend([json, text]);
                }
            }
            Stage::Compare => {
                let cmp = compare_report(
                    &self.load_report(Source::Optical)?,
                    &self.load_report(Source::Fused)?,
                )?;
                write_text(&dst.join(layout::COMPARE_JSON), &to_json(&cmp))?;
                write_text(&dst.join(layout::COMPARE_TEXT), &cmp.to_text())?;
                produced.extend([layout::COMPARE_JSON, layout::COMPARE_TEXT].map(String::from));
            }
            Stage::Render => {
                let palette = cfg.palette()?;
                let mut images: Vec<(String, RgbImage)> = Vec::new();
                let truth = self.load_truth()?;
                images.push((
                    "truth".into(),
                    crate::classify::render_classmap(&truth, &palette)?,
                ));
                let optical = self.load_composite("optical")?;
                images.push((
                    "optical_true_color".into(),
                    pipeline::render_true_color(cfg, &optical)?,
                ));
                for s in Source::ALL {
                    match self.load_classmap(s) {
                        Ok(map) => images.push((
                            format!("classmap_{s}"),
                            crate::classify::render_classmap(&map, &palette)?,
                        )),
                        Err(Error::MissingArtifact(_)) => {}
                        Err(e) => return Err(e),
                    }
                }
                for (name, img) in images {
                    let rel = layout::render(&name);
                    write_bytes(&dst.join(&rel), &img.to_ppm())?;
                    produced.push(rel);
                }
            }
        }
        Ok(produced)
    }

    fn commit(&self, stage: Stage, staging: &Path, produced: &[String]) -> Result<()> {
        let mut manifest = match self.manifest()? {
            Some(m) if stage != Stage::Simulate => m,
            _ => Manifest::default(),
        };
        if stage == Stage::Simulate {
            for d in layout::DERIVED {
                remove_path(&self.out.join(d))?;
            }
        }
        for rel in produced {
            let target = self.out.join(rel);
            remove_path(&target)?;
            if let Some(parent) = target.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            let src = staging.join(rel);
            fs::rename(&src, &target).map_err(|e| Error::io(&src, e))?;
        }
        if stage == Stage::Simulate && self.path(layout::SESSION_SAMPLES).is_file() {
            digest_tree(&self.out, layout::SESSION_SAMPLES, &mut manifest.artifacts)?;
        }
        if !manifest.stages.contains(&stage) {
            manifest.stages.push(stage);
        }
        self.record(manifest, produced)
    }

    /// Store `bytes` verbatim at `rel` outside any stage, atomically, and
    /// record its digest.
    pub fn put_artifact(&self, rel: &str, bytes: &[u8]) -> Result<()> {
        let target = self.out.join(rel);
        let tmp = self.out.join(".put.tmp");
        write_bytes(&tmp, bytes)?;
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::rename(&tmp, &target).map_err(|e| Error::io(&target, e))?;
        let manifest = self.manifest()?.unwrap_or_default();
        self.record(manifest, &[rel.to_string()])
    }

    fn record(&self, mut manifest: Manifest, produced: &[String]) -> Result<()> {
        manifest.tool = "terrafuse".into();
        manifest.version = env!("CARGO_PKG_VERSION").into();
        manifest.config_sha256 = self.config_sha256.clone();
        manifest.seed = self.cfg.scene.seed;
        for rel in produced {
            let prefix = format!("{rel}/");
            manifest
                .artifacts
                .retain(|k, _| k != rel && !k.starts_with(&prefix));
            digest_tree(&self.out, rel, &mut manifest.artifacts)?;
        }
        let tmp = self.out.join(".manifest.json.tmp");
        write_text(&tmp, &to_json(&manifest))?;
        let path = self.out.join(MANIFEST);
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> Config {
        let mut cfg = Config::default();
        cfg.scene.width = 96;
        cfg.scene.height = 96;
        cfg.scene.n_dates = 4;
        cfg.samples.training_counts = vec![10, 8, 9];
        cfg.samples.validation_counts = vec![12, 10, 11];
        cfg
    }

    #[test]
    fn full_run_writes_layout_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let runner = Runner::new(small_config(), dir.path()).unwrap();
        runner.run_all(&StageOptions::default()).unwrap();
        for rel in [
            "truth/classmap.json",
            "collections/optical/collection.json",
            "composites/fused/stack.json",
            "models/fused.tree.json",
            "classmaps/optical/labels.u8",
            "reports/compare.json",
            "reports/compare.txt",
            "renders/classmap_fused.ppm",
            "config.toml",
        ] {
            assert!(dir.path().join(rel).is_file(), "{rel}");
        }
        let m = runner.manifest().unwrap().unwrap();
        assert_eq!(m.stages, Stage::ALL.to_vec());
        assert_eq!(m.config_sha256, runner.config_sha256());
        assert!(m.artifacts.contains_key("composites/fused/VV.f32"));
        assert!(!dir.path().join(".staging-render").exists());
    }

    #[test]
    fn failed_stage_leaves_no_partial_output() {
        let dir = tempfile::tempdir().unwrap();
        let runner = Runner::new(small_config(), dir.path()).unwrap();
        let err = runner
            .run(Stage::Composite, &StageOptions::default())
            .unwrap_err();
        assert!(matches!(err, Error::MissingArtifact(_)), "{err}");
        assert!(!dir.path().join("composites").exists());
        assert!(!dir.path().join(".staging-composite").exists());
        assert!(runner.manifest().unwrap().is_none());
    }

    #[test]
    fn stage_names_parse() {
        for s in Stage::ALL {
            assert_eq!(s.as_str().parse::<Stage>().unwrap(), s);
        }
        assert!(matches!("deploy".parse::<Stage>(), Err(Error::Config(_))));
    }
}
