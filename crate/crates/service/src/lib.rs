//! Local JSON-over-HTTP service for the interactive labelling loop.
//!
//! All work is delegated to [`terrafuse::stages::Runner`], the same code the
//! CLI runs, and every result is persisted in the output directory so a
//! restarted service picks up where the last one stopped. Mutating requests
//! (storing samples, training, classifying, validating) take a single job
//! slot; a second one arriving while a job runs is answered with `409` and
//! `{"status": "busy"}`. Reads never wait for the slot.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::{Mutex, OwnedMutexGuard};

use terrafuse::cart::TrainParams;
use terrafuse::classify::RgbImage;
use terrafuse::config::Config;
use terrafuse::pipeline::{predict_pins, PinPrediction, Source};
use terrafuse::raster::{GeoTransform, Legend};
use terrafuse::samples::parse_samples;
use terrafuse::stages::{layout, Runner, Stage, StageOptions};
use terrafuse::{Error, ErrorClass};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl ServiceError {
    pub fn category(&self) -> &'static str {
        match self {
            ServiceError::PortInUse(_) => "PortInUse",
            ServiceError::Core(e) => e.category(),
            ServiceError::Io(_) => "IoError",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            ServiceError::PortInUse(_) => ErrorClass::Config.exit_code(),
            ServiceError::Core(e) => e.class().exit_code(),
            ServiceError::Io(_) => ErrorClass::Internal.exit_code(),
        }
    }
}

/// Static scene description served by `/api/meta`.
#[derive(Debug, Clone, Serialize)]
pub struct SceneMeta {
    pub width: usize,
    pub height: usize,
    pub transform: GeoTransform,
    pub bands: BTreeMap<String, Vec<String>>,
    pub legend: Legend,
    pub palette: BTreeMap<String, [u8; 3]>,
}

pub struct AppState {
    runner: Runner,
    meta: SceneMeta,
    job: Arc<Mutex<()>>,
}

impl AppState {
    /// Open `out`, preparing the scene and composites when they are absent.
    pub fn open(cfg: Config, out: impl Into<PathBuf>) -> Result<Self, Error> {
        let runner = Runner::new(cfg, out)?;
        if let Some(m) = runner.manifest()? {
            if m.config_sha256 != runner.config_sha256() {
                log::warn!("output directory was produced with a different configuration");
            }
        }
        if !runner.path(layout::TRUTH).join("classmap.json").is_file() {
            log::info!("no scene in {}, simulating", runner.out_dir().display());
            runner.run(Stage::Simulate, &StageOptions::default())?;
        }
        if !runner
            .path(&layout::composite("fused"))
            .join("stack.json")
            .is_file()
        {
            log::info!("building composites");
            runner.run(Stage::Composite, &StageOptions::default())?;
        }
        let mut bands = BTreeMap::new();
        let mut geometry = None;
        for kind in terrafuse::stages::COMPOSITE_KINDS {
            let stack = runner.load_composite(kind)?;
            geometry.get_or_insert((stack.width(), stack.height(), *stack.transform()));
            bands.insert(kind.to_string(), stack.band_names());
        }
        let (width, height, transform) = geometry.expect("three composites");
        let cfg = runner.config();
        let meta = SceneMeta {
            width,
            height,
            transform,
            bands,
            legend: cfg.legend(),
            palette: cfg.palette.classes.clone(),
        };
        Ok(AppState {
            runner,
            meta,
            job: Arc::new(Mutex::new(())),
        })
    }

    pub fn runner(&self) -> &Runner {
        &self.runner
    }

    /// Claim the job slot without waiting; `None` while another job runs.
    pub fn try_claim(&self) -> Option<OwnedMutexGuard<()>> {
        self.job.clone().try_lock_owned().ok()
    }
}

type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/api/meta", get(meta))
        .route("/api/render/{kind}", get(render))
        .route("/api/samples", get(get_samples).post(post_samples))
        .route("/api/train", post(train))
        .route("/api/classify", post(classify))
        .route("/api/validate", post(validate))
        .route("/api/report/compare", get(compare))
        .with_state(state)
}

/// Bind the listening socket, mapping an occupied port to `PortInUse`.
pub async fn bind(addr: SocketAddr) -> Result<TcpListener, ServiceError> {
    TcpListener::bind(addr).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse => ServiceError::PortInUse(addr.port()),
        _ => ServiceError::Io(e),
    })
}

/// Bind, open the output directory and serve until Ctrl-C.
pub async fn serve(cfg: Config, out: PathBuf, addr: SocketAddr) -> Result<(), ServiceError> {
    let listener = bind(addr).await?;
    let state = tokio::task::spawn_blocking(move || AppState::open(cfg, out))
        .await
        .map_err(|e| ServiceError::Io(std::io::Error::other(e)))??;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

/// A core error tagged with the stage or endpoint that raised it.
struct ApiError {
    stage: &'static str,
    error: Error,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match (&self.error, self.error.class()) {
            (Error::MissingArtifact(_), _) => StatusCode::NOT_FOUND,
            (_, ErrorClass::Config) => StatusCode::BAD_REQUEST,
            (_, ErrorClass::Data) => StatusCode::UNPROCESSABLE_ENTITY,
            (_, ErrorClass::Internal) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = json!({
            "error": self.error.category(),
            "stage": self.stage,
            "message": self.error.to_string(),
        });
        (status, Json(body)).into_response()
    }
}

fn internal(e: impl std::fmt::Display) -> Error {
    Error::Io {
        path: PathBuf::new(),
        source: std::io::Error::other(e.to_string()),
    }
}

fn busy() -> Response {
    (StatusCode::CONFLICT, Json(json!({ "status": "busy" }))).into_response()
}

fn tag(stage: &'static str) -> impl Fn(Error) -> ApiError {
    move |error| ApiError { stage, error }
}

/// Run CPU-bound work off the async executor.
async fn blocking<T: Send + 'static>(
    stage: &'static str,
    f: impl FnOnce() -> Result<T, Error> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError {
            stage,
            error: internal(e),
        })?
        .map_err(tag(stage))
}

fn parse_source(stage: &'static str, s: Option<&str>) -> Result<Source, ApiError> {
    s.unwrap_or("fused").parse().map_err(tag(stage))
}

async fn meta(State(st): State<Shared>) -> Json<Value> {
    let models: Vec<Source> = Source::ALL
        .into_iter()
        .filter(|&s| st.runner.path(&layout::model(s)).is_file())
        .collect();
    let classmaps: Vec<Source> = Source::ALL
        .into_iter()
        .filter(|&s| st.runner.path(&layout::classmap(s)).is_dir())
        .collect();
    Json(json!({
        "scene": st.meta,
        "models": models,
        "classmaps": classmaps,
        "session_samples": st.runner.path(layout::SESSION_SAMPLES).is_file(),
        "busy": st.job.try_lock().is_err(),
    }))
}

#[derive(Debug, Deserialize)]
struct RenderQuery {
    r: Option<String>,
    g: Option<String>,
    b: Option<String>,
    source: Option<String>,
    format: Option<String>,
}

fn image_response(img: RgbImage, format: &str) -> Result<Response, Error> {
    match format {
        "ppm" => Ok((
            [(header::CONTENT_TYPE, "image/x-portable-pixmap")],
            img.to_ppm(),
        )
            .into_response()),
        "png" => Ok(([(header::CONTENT_TYPE, "image/png")], img.to_png()?).into_response()),
        other => Err(Error::Config(format!(
            "unknown image format {other:?}, expected ppm or png"
        ))),
    }
}

async fn render(
    State(st): State<Shared>,
    Path(kind): Path<String>,
    Query(q): Query<RenderQuery>,
) -> Result<Response, ApiError> {
    let format = q.format.clone().unwrap_or_else(|| "ppm".into());
    match kind.as_str() {
        "composite" => {
            let [dr, dg, db] = st.runner.config().bands.true_color.clone();
            let source = q.source.unwrap_or_else(|| "fused".into());
            let (r, g, b) = (q.r.unwrap_or(dr), q.g.unwrap_or(dg), q.b.unwrap_or(db));
            blocking("render", move || {
                let img = st
                    .runner
                    .render_composite_bands(&source, [r.as_str(), g.as_str(), b.as_str()])?;
                image_response(img, &format)
            })
            .await
        }
        "classmap" => {
            let source = parse_source("render", q.source.as_deref())?;
            blocking("render", move || {
                image_response(st.runner.render_classmap(source)?, &format)
            })
            .await
        }
        other => Err(ApiError {
            stage: "render",
            error: Error::Config(format!(
                "unknown render target {other:?}, expected composite or classmap"
            )),
        }),
    }
}

fn geojson(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "application/geo+json")], bytes).into_response()
}

async fn get_samples(State(st): State<Shared>) -> Result<Response, ApiError> {
    let session = st.runner.path(layout::SESSION_SAMPLES);
    let path = if session.is_file() {
        session
    } else {
        st.runner.path(layout::TRAINING_SAMPLES)
    };
    match std::fs::read(&path) {
        Ok(bytes) => Ok(geojson(bytes)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(tag("samples")(Error::MissingArtifact(path)))
        }
        Err(e) => Err(tag("samples")(Error::Io { path, source: e })),
    }
}

async fn post_samples(State(st): State<Shared>, body: Bytes) -> Result<Response, ApiError> {
    let Some(guard) = st.try_claim() else {
        return Ok(busy());
    };
    blocking("samples", move || {
        let _guard = guard;
        let text = std::str::from_utf8(&body)
            .map_err(|e| Error::Parse(format!("body is not UTF-8: {e}")))?;
        let set = parse_samples(text)?;
        if set.legend != st.runner.config().legend() {
            return Err(Error::LegendMismatch(
                "sample legend differs from the configured one".into(),
            ));
        }
        st.runner.put_artifact(layout::SESSION_SAMPLES, &body)?;
        let counts: BTreeMap<String, usize> = set
            .class_counts()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        Ok(Json(json!({ "stored": set.len(), "class_counts": counts })).into_response())
    })
    .await
}

/// Pins used for training: the stored session set if any, else the
/// simulated training draw.
fn training_samples(runner: &Runner) -> Option<PathBuf> {
    let session = runner.path(layout::SESSION_SAMPLES);
    session.is_file().then_some(session)
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainRequest {
    params: Option<TrainParams>,
    source: Option<Source>,
}

fn sources(s: Option<Source>) -> Vec<Source> {
    s.map_or_else(|| Source::ALL.to_vec(), |s| vec![s])
}

fn json_body<T: Default + serde::de::DeserializeOwned>(
    stage: &'static str,
    body: &Bytes,
) -> Result<T, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body)
        .map_err(|e| tag(stage)(Error::Config(format!("bad request body: {e}"))))
}

async fn train(State(st): State<Shared>, body: Bytes) -> Result<Response, ApiError> {
    let req: TrainRequest = json_body("train", &body)?;
    let Some(guard) = st.try_claim() else {
        return Ok(busy());
    };
    blocking("train", move || {
        let _guard = guard;
        let samples = training_samples(&st.runner);
        let opts = StageOptions {
            source: req.source,
            samples: samples.clone(),
            train_params: req.params,
        };
        st.runner.run(Stage::Train, &opts)?;
        let mut models = BTreeMap::new();
        for s in sources(req.source) {
            let tree = st.runner.load_model(s)?;
            models.insert(
                s.to_string(),
                json!({ "bands": tree.bands, "depth": tree.depth(), "leaves": tree.n_leaves() }),
            );
        }
        let used = if samples.is_some() {
            "session"
        } else {
            "training"
        };
        Ok(Json(json!({ "samples": used, "models": models })).into_response())
    })
    .await
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ClassifyRequest {
    source: Option<Source>,
}

async fn classify(State(st): State<Shared>, body: Bytes) -> Result<Response, ApiError> {
    let req: ClassifyRequest = json_body("classify", &body)?;
    let Some(guard) = st.try_claim() else {
        return Ok(busy());
    };
    blocking("classify", move || {
        let _guard = guard;
        let opts = StageOptions {
            source: req.source,
            ..StageOptions::default()
        };
        st.runner.run(Stage::Classify, &opts)?;
        let mut maps = BTreeMap::new();
        for s in sources(req.source) {
            let map = st.runner.load_classmap(s)?;
            let hist = map.histogram();
            let counts: BTreeMap<String, usize> = map
                .legend()
                .0
                .iter()
                .map(|(&id, name)| (name.clone(), hist[id as usize]))
                .collect();
            maps.insert(s.to_string(), json!({ "pixels": counts }));
        }
        Ok(Json(json!({ "classmaps": maps })).into_response())
    })
    .await
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ValidateRequest {
    /// `validation` (default), `training` or `session`.
    samples_ref: Option<String>,
    source: Option<Source>,
}

#[derive(Debug, Serialize)]
struct ValidateResponse {
    samples_ref: String,
    reports: BTreeMap<Source, terrafuse::validation::AccuracyReport>,
    comparison: Option<terrafuse::validation::Comparison>,
    pins: BTreeMap<Source, Vec<PinPrediction>>,
}

async fn validate(State(st): State<Shared>, body: Bytes) -> Result<Response, ApiError> {
    let req: ValidateRequest = json_body("validate", &body)?;
    let samples_ref = req.samples_ref.unwrap_or_else(|| "validation".into());
    let rel = match samples_ref.as_str() {
        "validation" => layout::VALIDATION_SAMPLES,
        "training" => layout::TRAINING_SAMPLES,
        "session" => layout::SESSION_SAMPLES,
        other => {
            return Err(tag("validate")(Error::Config(format!(
                "unknown samples_ref {other:?}, expected validation, training or session"
            ))))
        }
    };
    let Some(guard) = st.try_claim() else {
        return Ok(busy());
    };
    blocking("validate", move || {
        let _guard = guard;
        let runner = &st.runner;
        let path = runner.path(rel);
        let wanted: Vec<Source> = match req.source {
            Some(s) => vec![s],
            None => Source::ALL
                .into_iter()
                .filter(|&s| runner.path(&layout::model(s)).is_file())
                .collect(),
        };
        if wanted.is_empty() {
            return Err(Error::MissingArtifact(
                runner.path(&layout::model(Source::Fused)),
            ));
        }
        let samples = runner.load_samples_file(&path)?;
        let mut reports = BTreeMap::new();
        let mut pins = BTreeMap::new();
        for &s in &wanted {
            let opts = StageOptions {
                source: Some(s),
                samples: Some(path.clone()),
                ..StageOptions::default()
            };
            runner.run(Stage::Validate, &opts)?;
            reports.insert(s, runner.load_report(s)?);
            let tree = runner.load_model(s)?;
            let stack = runner.load_composite(s.as_str())?;
            pins.insert(s, predict_pins(&tree, &samples, &stack)?);
        }
        let comparison = if wanted.len() == Source::ALL.len() {
            runner.run(Stage::Compare, &StageOptions::default())?;
            Some(runner.load_comparison()?)
        } else {
            None
        };
        Ok(Json(ValidateResponse {
            samples_ref,
            reports,
            comparison,
            pins,
        })
        .into_response())
    })
    .await
}

async fn compare(
    State(st): State<Shared>,
) -> Result<Json<terrafuse::validation::Comparison>, ApiError> {
    blocking("compare", move || st.runner.load_comparison())
        .await
        .map(Json)
}
