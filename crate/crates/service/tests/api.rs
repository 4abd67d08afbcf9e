use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use terrafuse::config::Config;
use terrafuse::pipeline::Source;
use terrafuse::stages::{layout, Runner, Stage, StageOptions};
use terrafuse_service::{bind, router, AppState, ServiceError};

fn small_config() -> Config {
    let mut cfg = Config::default();
    cfg.scene.width = 96;
    cfg.scene.height = 80;
    cfg.scene.n_dates = 4;
    cfg.samples.training_counts = vec![12, 10, 11];
    cfg.samples.validation_counts = vec![15, 12, 13];
    cfg
}

struct Harness {
    state: Arc<AppState>,
    dir: tempfile::TempDir,
}

impl Harness {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let state = Arc::new(AppState::open(small_config(), dir.path()).unwrap());
        Harness { state, dir }
    }

    async fn call(
        &self,
        method: &str,
        uri: &str,
        body: impl Into<Body>,
    ) -> (StatusCode, Vec<u8>, String) {
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .body(body.into())
            .unwrap();
        let resp = router(self.state.clone()).oneshot(req).await.unwrap();
        let status = resp.status();
        let ctype = resp
            .headers()
            .get("content-type")
            .map(|v| v.to_str().unwrap().to_string())
            .unwrap_or_default();
        let bytes = resp
            .into_body()
            .collect()
            .await
            .unwrap()
            .to_bytes()
            .to_vec();
        (status, bytes, ctype)
    }

    async fn json(&self, method: &str, uri: &str, body: Value) -> (StatusCode, Value) {
        let text = if body.is_null() {
            String::new()
        } else {
            body.to_string()
        };
        let (s, b, _) = self.call(method, uri, text).await;
        (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
    }
}

#[tokio::test]
async fn meta_describes_the_scene() {
    let h = Harness::new();
    let (s, v) = h.json("GET", "/api/meta", Value::Null).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["scene"]["width"], 96);
    assert_eq!(v["scene"]["height"], 80);
    assert_eq!(v["scene"]["bands"]["fused"].as_array().unwrap().len(), 10);
    assert_eq!(v["scene"]["legend"]["0"], "water");
    assert_eq!(v["busy"], false);
    assert_eq!(v["models"], json!([]));
}

#[tokio::test]
async fn composite_renders_as_ppm_and_png() {
    let h = Harness::new();
    let (s, body, ctype) = h
        .call("GET", "/api/render/composite?r=B4&g=B3&b=B2", Body::empty())
        .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ctype, "image/x-portable-pixmap");
    let header = b"P6\n96 80\n255\n";
    assert_eq!(&body[..header.len()], header);
    assert_eq!(body.len(), header.len() + 96 * 80 * 3);

    let (s, body, ctype) = h
        .call(
            "GET",
            "/api/render/composite?r=VV&g=VH&b=ratio&source=sar&format=png",
            Body::empty(),
        )
        .await;
    assert_eq!((s, ctype.as_str()), (StatusCode::OK, "image/png"));
    assert_eq!(&body[..8], b"\x89PNG\r\n\x1a\n");

    let (s, v) = h
        .json("GET", "/api/render/composite?r=B9&g=B3&b=B2", Value::Null)
        .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "MissingBand");
    assert_eq!(v["stage"], "render");
    let (s, v) = h
        .json("GET", "/api/render/composite?format=gif", Value::Null)
        .await;
    assert_eq!(
        (s, v["error"].as_str()),
        (StatusCode::BAD_REQUEST, Some("ConfigError"))
    );
    let (s, v) = h.json("GET", "/api/render/classmap", Value::Null).await;
    assert_eq!(
        (s, v["error"].as_str()),
        (StatusCode::NOT_FOUND, Some("MissingArtifact"))
    );
}

#[tokio::test]
async fn posted_samples_come_back_byte_for_byte() {
    let h = Harness::new();
    let (_, initial, ctype) = h.call("GET", "/api/samples", Body::empty()).await;
    assert_eq!(ctype, "application/geo+json");
    assert_eq!(
        initial,
        std::fs::read(h.dir.path().join(layout::TRAINING_SAMPLES)).unwrap()
    );

    let doc = r#"{"type": "FeatureCollection", "features": [
        {"type": "Feature", "geometry": {"type": "Point", "coordinates": [-94.925, 29.389]},
         "properties": {"class": 0, "label": "bay"}}]}"#;
    let (s, b, _) = h.call("POST", "/api/samples", doc).await;
    assert_eq!(s, StatusCode::OK);
    let v: Value = serde_json::from_slice(&b).unwrap();
    assert_eq!(v["stored"], 1);
    let (_, back, _) = h.call("GET", "/api/samples", Body::empty()).await;
    assert_eq!(back, doc.as_bytes());

    let polygon = r#"{"type": "FeatureCollection", "features": [{"type": "Feature",
        "geometry": {"type": "Polygon", "coordinates": []}, "properties": {"class": 0}}]}"#;
    let (s, b, _) = h.call("POST", "/api/samples", polygon).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(
        serde_json::from_slice::<Value>(&b).unwrap()["error"],
        "ParseError"
    );
    let (_, still, _) = h.call("GET", "/api/samples", Body::empty()).await;
    assert_eq!(still, doc.as_bytes());
}

#[tokio::test]
async fn train_classify_validate_compare() {
    let h = Harness::new();
    let (s, v) = h.json("POST", "/api/train", json!({})).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["samples"], "training");
    assert_eq!(v["models"]["fused"]["bands"].as_array().unwrap().len(), 10);
    assert_eq!(v["models"]["optical"]["bands"].as_array().unwrap().len(), 6);

    let (s, v) = h
        .json("POST", "/api/classify", json!({"source": "fused"}))
        .await;
    assert_eq!(s, StatusCode::OK);
    let pixels: u64 = v["classmaps"]["fused"]["pixels"]
        .as_object()
        .unwrap()
        .values()
        .map(|n| n.as_u64().unwrap())
        .sum();
    assert!(pixels <= 96 * 80);
    let (s, body, _) = h
        .call("GET", "/api/render/classmap?source=fused", Body::empty())
        .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(&body[..12], b"P6\n96 80\n255");

    let (s, v) = h.json("POST", "/api/validate", Value::Null).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["samples_ref"], "validation");
    let fused = &v["reports"]["fused"];
    assert_eq!(fused["total"], 40);
    let pins = v["pins"]["fused"].as_array().unwrap();
    assert_eq!(pins.len(), 40);
    let correct = pins
        .iter()
        .filter(|p| p["class_id"] == p["predicted"])
        .count() as f64;
    assert_eq!(correct / 40.0, fused["overall_accuracy"].as_f64().unwrap());

    let (s, cmp) = h.json("GET", "/api/report/compare", Value::Null).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(cmp, v["comparison"]);
    assert_eq!(cmp["fused_overall"], fused["overall_accuracy"]);

    let (s, v) = h
        .json("POST", "/api/validate", json!({"samples_ref": "elsewhere"}))
        .await;
    assert_eq!(
        (s, v["error"].as_str()),
        (StatusCode::BAD_REQUEST, Some("ConfigError"))
    );
}

#[tokio::test]
async fn service_results_equal_the_shared_runner() {
    let h = Harness::new();
    let params = json!({"max_depth": 5, "min_leaf_samples": 2, "min_impurity_decrease": 0.0});
    let (s, _) = h
        .json(
            "POST",
            "/api/train",
            json!({"source": "optical", "params": params}),
        )
        .await;
    assert_eq!(s, StatusCode::OK);
    let (s, v) = h
        .json("POST", "/api/validate", json!({"source": "optical"}))
        .await;
    assert_eq!(s, StatusCode::OK);

    let other = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.train_params = serde_json::from_value(params).unwrap();
    let runner = Runner::new(cfg, other.path()).unwrap();
    for stage in [
        Stage::Simulate,
        Stage::Composite,
        Stage::Train,
        Stage::Validate,
    ] {
        runner
            .run(
                stage,
                &StageOptions {
                    source: Some(Source::Optical),
                    ..Default::default()
                },
            )
            .unwrap();
    }
    let offline = runner.load_report(Source::Optical).unwrap();
    assert_eq!(
        v["reports"]["optical"],
        serde_json::to_value(&offline).unwrap()
    );
    assert_eq!(
        std::fs::read(h.dir.path().join(layout::model(Source::Optical))).unwrap(),
        std::fs::read(other.path().join(layout::model(Source::Optical))).unwrap()
    );
}

#[tokio::test]
async fn concurrent_jobs_are_rejected_as_busy() {
    let h = Harness::new();
    let guard = h.state.try_claim().expect("slot free");
    for (uri, body) in [
        ("/api/train", "{}"),
        ("/api/classify", "{}"),
        ("/api/validate", "{}"),
        ("/api/samples", "{}"),
    ] {
        let (s, b, _) = h.call("POST", uri, body).await;
        assert_eq!(s, StatusCode::CONFLICT, "{uri}");
        assert_eq!(
            serde_json::from_slice::<Value>(&b).unwrap(),
            json!({"status": "busy"})
        );
    }
    let (s, v) = h.json("GET", "/api/meta", Value::Null).await;
    assert_eq!((s, v["busy"].as_bool()), (StatusCode::OK, Some(true)));
    let (s, _, _) = h.call("GET", "/api/render/composite", Body::empty()).await;
    assert_eq!(s, StatusCode::OK);
    drop(guard);
    let (s, _) = h
        .json("POST", "/api/train", json!({"source": "fused"}))
        .await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn empty_session_samples_fail_training_with_a_category() {
    let h = Harness::new();
    let (s, _, _) = h
        .call(
            "POST",
            "/api/samples",
            r#"{"type":"FeatureCollection","features":[]}"#,
        )
        .await;
    assert_eq!(s, StatusCode::OK);
    let (s, v) = h
        .json("POST", "/api/train", json!({"source": "fused"}))
        .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "EmptyTrainingSet");
    assert_eq!(v["stage"], "train");
    assert!(!h.dir.path().join(layout::model(Source::Fused)).exists());
    let (s, v) = h
        .json("POST", "/api/train", json!({"source": "radar"}))
        .await;
    assert_eq!(
        (s, v["error"].as_str()),
        (StatusCode::BAD_REQUEST, Some("ConfigError"))
    );
}

#[tokio::test]
async fn restart_resumes_from_the_output_directory() {
    let h = Harness::new();
    let doc = r#"{"type":"FeatureCollection","features":[
        {"type":"Feature","geometry":{"type":"Point","coordinates":[-94.9252,29.3891]},"properties":{"class":1}}]}"#;
    h.call("POST", "/api/samples", doc).await;
    h.json("POST", "/api/train", json!({"source": "fused"}))
        .await;
    let manifest = std::fs::read(h.dir.path().join("manifest.json")).unwrap();

    let reopened = Harness {
        state: Arc::new(AppState::open(small_config(), h.dir.path()).unwrap()),
        dir: h.dir,
    };
    let (_, back, _) = reopened.call("GET", "/api/samples", Body::empty()).await;
    assert_eq!(back, doc.as_bytes());
    let (_, v) = reopened.json("GET", "/api/meta", Value::Null).await;
    assert_eq!(v["models"], json!(["fused"]));
    assert_eq!(v["session_samples"], true);
    assert_eq!(
        std::fs::read(reopened.dir.path().join("manifest.json")).unwrap(),
        manifest
    );
}

#[tokio::test]
async fn occupied_port_is_reported() {
    let held = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = held.local_addr().unwrap();
    match bind(addr).await {
        Err(e @ ServiceError::PortInUse(port)) => {
            assert_eq!(port, addr.port());
            assert_eq!(e.category(), "PortInUse");
        }
        other => panic!("expected PortInUse, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn invalid_config_is_a_config_error() {
    let mut cfg = small_config();
    cfg.scene.looks = 0.5;
    let dir = tempfile::tempdir().unwrap();
    let err = AppState::open(cfg, dir.path()).err().unwrap();
    assert_eq!(err.category(), "ConfigError");
    assert_eq!(ServiceError::from(err).exit_code(), 2);
}
