use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use steerlab::curvegen;
use steerlab::simulator::{self, AgentConfig, TrialMeta};
use steerlab_cli::service::{router, AppState, Clock, ServiceConfig};

fn repo(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn steerlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_steerlab"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn fit_reference_means() {
    let out = steerlab(&["fit", "--data", path_str(&repo("data/paper_means.csv"))]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let models = v["models"].as_array().unwrap();
    assert_eq!(models.len(), 7);
    assert_eq!(models[0]["form_id"], "COMP_LOGK");
    assert_eq!(models[0]["rank"], 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("skipping NL"));
}

#[test]
fn fit_selected_models_to_file() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("report.json");
    let out = steerlab(&[
        "fit",
        "--data",
        path_str(&repo("data/paper_means.csv")),
        "--models",
        "SL_BASE,liu",
        "--out",
        path_str(&out_path),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_str(&fs::read_to_string(out_path).unwrap()).unwrap();
    let ids: Vec<&str> = v["models"].as_array().unwrap().iter().map(|m| m["form_id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["LIU", "SL_BASE"]);
}

#[test]
fn validation_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.csv");
    assert_eq!(steerlab(&["fit", "--data", path_str(&missing)]).status.code(), Some(2));

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "trial_id,L,K,mt_mean\nA,1500,10,abc\n").unwrap();
    assert_eq!(steerlab(&["fit", "--data", path_str(&bad)]).status.code(), Some(2));

    assert_eq!(
        steerlab(&["fit", "--data", path_str(&repo("data/paper_means.csv")), "--models", "NOPE"]).status.code(),
        Some(2)
    );
    assert_eq!(steerlab(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(steerlab(&["gen", "--l-band", "10:5"]).status.code(), Some(2));
    assert_eq!(steerlab(&["gen", "--k", "-3"]).status.code(), Some(2));
}

#[test]
fn help_exits_0() {
    assert_eq!(steerlab(&["--help"]).status.code(), Some(0));
}

#[test]
fn models_list_prints_catalog() {
    let out = steerlab(&["models", "list"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 9);
    assert!(text.contains("LIU\tL,K\tMT = 10^(a + b*log10(L) + c*K/L)"));
}

#[test]
fn gen_single_cell() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("trials.json");
    let out = steerlab(&[
        "gen",
        "--k",
        "10",
        "--l-band",
        "1495:1505",
        "--periods",
        "1.2:1.3:0.05",
        "--out",
        path_str(&out_path),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let docs = curvegen::read_trial_set(&fs::read_to_string(out_path).unwrap()).unwrap();
    assert_eq!(docs.len(), 1);
    assert_eq!(docs[0].trial_id, "L0-K0");
    assert!((docs[0].total_curvature - 10.0).abs() < 0.01);
    assert!((1495.0..=1505.0).contains(&docs[0].length_px));
}

#[test]
fn simulate_is_deterministic_and_analyzable() {
    let dir = tempfile::tempdir().unwrap();
    let trials = repo("data/trialset.json");
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = steerlab(&[
            "simulate",
            "--trials",
            path_str(&trials),
            "--participants",
            "3",
            "--reps",
            "2",
            "--seed",
            "11",
            "--out",
            path_str(&out_dir),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        out_dir
    };
    let a = run("a");
    let b = run("b");
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 3 * 9 * 2);
    for n in &names {
        assert_eq!(fs::read(a.join(n)).unwrap(), fs::read(b.join(n)).unwrap());
    }

    let measures = dir.path().join("measures.csv");
    let summary = dir.path().join("summary.csv");
    let heat = dir.path().join("heat");
    let out = steerlab(&[
        "analyze",
        "--trials",
        path_str(&trials),
        "--logs",
        path_str(&a),
        "--out",
        path_str(&measures),
        "--summary",
        path_str(&summary),
        "--heatmap-dir",
        path_str(&heat),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read_to_string(&measures).unwrap().lines().count(), 1 + 54);
    assert_eq!(fs::read_to_string(&summary).unwrap().lines().count(), 1 + 9);
    assert!(heat.join("L2-K1.csv").is_file());
    assert!(heat.join("L2-K1.json").is_file());

    let out = steerlab(&["anova", "--measures", path_str(&measures), "--measure", "v_avg"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let effects: Vec<&str> = v["effects"].as_array().unwrap().iter().map(|e| e["effect"].as_str().unwrap()).collect();
    assert_eq!(effects, ["L", "K", "LxK"]);
}

#[test]
fn crossval_reports_five_folds() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("reps.csv");
    let mut text = String::from("trial_id,L,K,repetition,mt_ms\n");
    for (i, t) in steerlab::fixtures::TRIALS.iter().enumerate() {
        for r in 0..15 {
            let wobble = ((i * 15 + r) % 7) as f64 * 10.0 - 30.0;
            text.push_str(&format!(
                "{},{},{},{},{}\n",
                t.trial_id,
                t.length_px,
                t.total_curvature,
                r,
                t.mt_mean_ms + wobble
            ));
        }
    }
    fs::write(&data, text).unwrap();
    let out = steerlab(&["crossval", "--data", path_str(&data), "--models", "SL_BASE,COMP_LOGK"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 2);
    assert_eq!(v[0]["fold_rmse"].as_array().unwrap().len(), 5);
    let random = steerlab(&["crossval", "--data", path_str(&data), "--folds", "random", "--seed", "3"]);
    assert_eq!(random.status.code(), Some(0));
}

// A log ingested by the service and the same persisted file analyzed by the
// CLI must give identical measures tables.
#[tokio::test]
async fn service_and_cli_agree_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let trials_path = repo("data/trialset.json");
    let trials = curvegen::read_trial_set(&fs::read_to_string(&trials_path).unwrap()).unwrap();
    let now = Arc::new(AtomicU64::new(0));
    let n = now.clone();
    let clock: Clock = Arc::new(move || n.load(Ordering::SeqCst) as f64);
    let state = AppState::open(ServiceConfig {
        trials: trials.clone(),
        data_dir: dir.path().to_path_buf(),
        clock,
    })
    .unwrap();
    let app = router(Arc::new(state));

    let call = |method: &str, uri: String, body: String| {
        let req = Request::builder().method(method).uri(uri).body(Body::from(body)).unwrap();
        let app = app.clone();
        async move {
            let resp = app.oneshot(req).await.unwrap();
            let status = resp.status();
            let bytes = resp.into_body().collect().await.unwrap().to_bytes();
            (status, serde_json::from_slice::<Value>(&bytes).unwrap())
        }
    };

    let (status, v) = call("POST", "/api/v1/sessions".into(), json!({ "participant_id": "P09" }).to_string()).await;
    assert_eq!(status, StatusCode::CREATED);
    let sid = v["session_id"].as_str().unwrap().to_string();
    for i in 0..3 {
        let (_, step) = call("GET", format!("/api/v1/sessions/{sid}/next"), String::new()).await;
        let id = step["trial"]["trial_id"].as_str().unwrap();
        let flipped = step["trial"]["flipped"].as_bool().unwrap();
        let doc = trials.iter().find(|d| d.trial_id == id).unwrap();
        let meta = TrialMeta {
            session_id: sid.clone(),
            participant_id: "P09".into(),
            trial_id: id.into(),
            repetition: i,
            flipped,
        };
        let cfg = AgentConfig {
            seed: 100 + i as u64,
            ..AgentConfig::default()
        };
        let log = simulator::simulate_trial(&doc.tunnel(flipped).unwrap(), &cfg, &meta).unwrap();
        now.fetch_add(20_000, Ordering::SeqCst);
        let (status, v) = call("POST", format!("/api/v1/sessions/{sid}/logs"), log.to_trajlog()).await;
        assert_eq!(status, StatusCode::OK, "{v}");
    }
    let (_, report) = call("GET", format!("/api/v1/sessions/{sid}/report"), String::new()).await;

    let session_dir = dir.path().join("sessions").join(&sid);
    let served = fs::read_to_string(session_dir.join("tutorial_measures.csv")).unwrap();
    assert_eq!(served, report["tutorial_measures_csv"].as_str().unwrap());
    let cli_out = dir.path().join("cli.csv");
    let out = steerlab(&[
        "analyze",
        "--trials",
        path_str(&trials_path),
        "--logs",
        path_str(&session_dir.join("logs")),
        "--out",
        path_str(&cli_out),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(cli_out).unwrap(), served.as_bytes());
}
