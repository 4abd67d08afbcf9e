use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use axum::body::Body;
use axum::http::Request;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

use terrafuse::stages::Manifest;

const SMALL: &str = r#"
[scene]
width = 80
height = 64
n_dates = 4

[samples]
training_counts = [10, 8, 9]
validation_counts = [12, 10, 11]
"#;

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("config.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn terrafuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_terrafuse"))
        .args(args)
        .output()
        .unwrap()
}

fn error_line(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("an error line");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("{e}: {stderr}"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn stages_chain_and_record_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    for stage in [
        "simulate",
        "composite",
        "train",
        "classify",
        "validate",
        "compare",
        "render",
    ] {
        let o = terrafuse(&[stage, "--config", s(&cfg), "--out", s(&out), "--seed", "77"]);
        assert!(
            o.status.success(),
            "{stage}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let m = Manifest::load(&out).unwrap().unwrap();
    assert_eq!(m.seed, 77);
    assert_eq!(m.stages.len(), 7);
    assert_eq!(m.version, env!("CARGO_PKG_VERSION"));
    for (rel, digest) in &m.artifacts {
        let bytes = std::fs::read(out.join(rel)).unwrap();
        assert_eq!(&terrafuse::stages::sha256_hex(&bytes), digest, "{rel}");
    }
    let cmp: Value =
        serde_json::from_slice(&std::fs::read(out.join("reports/compare.json")).unwrap()).unwrap();
    assert!(cmp["overall_delta"].is_number());
}

#[test]
fn bad_config_exits_two_with_a_category() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[scene]\nlooks = 0.2\n");
    let o = terrafuse(&[
        "simulate",
        "--config",
        s(&cfg),
        "--out",
        s(&dir.path().join("out")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let e = error_line(&o);
    assert_eq!(e["error"], "ConfigError");
    assert_eq!(e["stage"], "config");
    let o = terrafuse(&["simulate", "--config", s(&dir.path().join("absent.toml"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn empty_sample_file_fails_training_without_writing_a_tree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    for stage in ["simulate", "composite"] {
        assert!(terrafuse(&[stage, "--config", s(&cfg), "--out", s(&out)])
            .status
            .success());
    }
    let empty = dir.path().join("empty.geojson");
    std::fs::write(&empty, r#"{"type": "FeatureCollection", "features": []}"#).unwrap();
    let o = terrafuse(&[
        "train",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--samples",
        s(&empty),
    ]);
    assert_eq!(o.status.code(), Some(3));
    let e = error_line(&o);
    assert_eq!(e["error"], "EmptyTrainingSet");
    assert_eq!(e["stage"], "train");
    assert!(!out.join("models").exists());
    assert!(!out.join(".staging-train").exists());
}

#[test]
fn missing_inputs_are_data_errors_naming_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = terrafuse(&["composite", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(3));
    let e = error_line(&o);
    assert_eq!(e["error"], "MissingArtifact");
    assert_eq!(e["stage"], "composite");
    assert!(!out.join("composites").exists());
}

#[tokio::test]
async fn cli_and_service_agree_on_identical_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path(), SMALL);
    let cfg = terrafuse::config::Config::from_toml(SMALL).unwrap();

    // Service session: store pins, train fused, validate.
    let svc_out = dir.path().join("svc");
    let state = Arc::new(terrafuse_service::AppState::open(cfg, &svc_out).unwrap());
    let pins = std::fs::read_to_string(svc_out.join("samples/validation.geojson")).unwrap();
    let call = |method: &str, uri: &str, body: String| {
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .body(Body::from(body))
            .unwrap();
        let app = terrafuse_service::router(state.clone());
        async move {
            let resp = app.oneshot(req).await.unwrap();
            assert!(resp.status().is_success(), "{}", resp.status());
            let bytes = resp.into_body().collect().await.unwrap().to_bytes();
            serde_json::from_slice::<Value>(&bytes).unwrap()
        }
    };
    call("POST", "/api/samples", pins.clone()).await;
    call("POST", "/api/train", r#"{"source": "fused"}"#.into()).await;
    let v = call(
        "POST",
        "/api/validate",
        r#"{"source": "fused", "samples_ref": "training"}"#.into(),
    )
    .await;

    // Offline run on the same config with the same pins as training input.
    let pin_file = dir.path().join("pins.geojson");
    std::fs::write(&pin_file, &pins).unwrap();
    let cli_out = dir.path().join("cli");
    let cli_training = cli_out.join("samples/training.geojson");
    let base = ["--config", s(&cfg_path), "--out", s(&cli_out)];
    for args in [
        vec!["simulate"],
        vec!["composite"],
        vec!["train", "--source", "fused", "--samples", s(&pin_file)],
        vec![
            "validate",
            "--source",
            "fused",
            "--samples",
            s(&cli_training),
        ],
    ] {
        let mut full = args.clone();
        full.extend(base);
        let o = terrafuse(&full);
        assert!(
            o.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    let report: Value =
        serde_json::from_slice(&std::fs::read(cli_out.join("reports/fused.json")).unwrap())
            .unwrap();
    assert_eq!(v["reports"]["fused"], report);
    assert_eq!(
        std::fs::read(cli_out.join("models/fused.tree.json")).unwrap(),
        std::fs::read(svc_out.join("models/fused.tree.json")).unwrap()
    );
}
