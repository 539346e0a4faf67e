use serde_json::Value;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

fn evgest(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evgest")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = evgest(args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small dataset and a briefly trained model, shared by the workflow test.
fn workflow(dir: &Path) -> (PathBuf, PathBuf) {
    let data = dir.join("data");
    let model = dir.join("m.hck1");
    ok(&["simulate", "--per-class", "2", "--seed", "3", "--out", s(&data), "--width", "64", "--height", "64", "--split", "0.5"]);
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(data.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["entries"].as_array().unwrap().len(), 14);
    ok(&["train", "--data", s(&data), "--out", s(&model), "--epochs", "12", "--batch", "8", "--seed", "1", "--lr", "0.003"]);
    assert!(model.exists());
    (data, model)
}

#[test]
fn simulate_train_infer_eval_trial_bench() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = workflow(dir.path());
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(data.join("manifest.json")).unwrap()).unwrap();
    let samples: Vec<PathBuf> =
        manifest["entries"].as_array().unwrap().iter().map(|e| data.join(e["path"].as_str().unwrap())).collect();
    let sample = &samples[0];

    let mut detections = Vec::new();
    for input in &samples {
        let lines = ok(&["infer", "--model", s(&model), "--input", s(input), "--json", "--threshold", "0.3"]);
        detections.extend(lines.lines().map(|l| serde_json::from_str::<Value>(l).unwrap()));
    }
    assert!(!detections.is_empty(), "a low threshold fires somewhere");
    for d in &detections {
        let keys: Vec<_> = d.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, ["gesture", "latency_us", "probability", "t_us"]);
        assert_eq!(d["t_us"].as_u64().unwrap() % 80_000, 0);
    }

    let eval: Value = serde_json::from_str(&ok(&["eval", "--model", s(&model), "--data", s(&data), "--split", "val", "--json"])).unwrap();
    let windows = eval["metrics"]["windows"].as_u64().unwrap();
    let counts = eval["matrix"]["counts"].as_array().unwrap();
    assert_eq!(counts.len(), 7);
    let total: u64 = counts.iter().flat_map(|r| r.as_array().unwrap()).map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(total, windows);
    assert!(windows > 0);

    let trial = ok(&["trial", "--model", s(&model), "--reps", "1", "--seed", "4", "--json"]);
    let trial: Value = serde_json::from_str(&trial).unwrap();
    assert_eq!(trial["records"].as_array().unwrap().len(), 3);
    assert!(trial["metrics"]["per_gesture"]["swipe_left"]["recall"]["n"].as_u64() == Some(1));
    let again: Value = serde_json::from_str(&ok(&["trial", "--model", s(&model), "--reps", "1", "--seed", "4", "--json"])).unwrap();
    assert_eq!(trial["records"], again["records"]);

    let bench: Value = serde_json::from_str(&ok(&["bench", "--model", s(&model), "--input", s(sample), "--reps", "2", "--json"])).unwrap();
    assert_eq!(bench["repetitions"], 2);
    assert!(bench["real_time_factor"].as_f64().unwrap() > 0.0);
    assert!(bench["compute_us"]["p95"].as_f64().unwrap() >= bench["compute_us"]["p50"].as_f64().unwrap());

    let text = ok(&["eval", "--model", s(&model), "--data", s(&data)]);
    assert!(text.starts_with("accuracy"));
}

#[test]
fn bad_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.hck1");
    let out = evgest(&["infer", "--model", s(&missing), "--input", s(&missing)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.hck1"));

    let out = evgest(&["simulate", "--classes", "sl,jazz", "--per-class", "1", "--out", s(dir.path())]);
    assert!(!out.status.success());

    let garbage = dir.path().join("garbage.hev1");
    std::fs::write(&garbage, b"HEV1 but not really").unwrap();
    let model = dir.path().join("m.hck1");
    std::fs::write(&model, b"not a checkpoint").unwrap();
    let out = evgest(&["bench", "--model", s(&model), "--input", s(&garbage)]);
    assert!(!out.status.success());
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn get(port: u16, path: &str) -> Option<String> {
    let mut c = TcpStream::connect(("127.0.0.1", port)).ok()?;
    write!(c, "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").ok()?;
    let mut body = String::new();
    c.read_to_string(&mut body).ok()?;
    Some(body)
}

#[test]
fn serve_answers_model_info() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let model = dir.path().join("serve-me.hck1");
    ok(&["simulate", "--classes", "nh,sl", "--per-class", "2", "--out", s(&data), "--width", "64", "--height", "64", "--split", "0.5"]);
    ok(&["train", "--data", s(&data), "--out", s(&model), "--epochs", "1", "--batch", "4"]);
    let port = free_port();
    let mut child = Command::new(env!("CARGO_BIN_EXE_evgest"))
        .args(["serve", "--model", s(&model), "--port", &port.to_string(), "--threshold", "0.9"])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(20);
    let reply = loop {
        if let Some(r) = get(port, "/model") {
            break r;
        }
        assert!(Instant::now() < deadline, "server did not come up");
        std::thread::sleep(Duration::from_millis(50));
    };
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(reply.starts_with("HTTP/1.1 200"), "{reply}");
    let body: Value = serde_json::from_str(reply.split("\r\n\r\n").nth(1).unwrap()).unwrap();
    assert_eq!(body["name"], "serve-me");
    let sl = body["classes"].as_array().unwrap().iter().find(|c| c["code"] == "sl").unwrap();
    assert!((sl["threshold"].as_f64().unwrap() - 0.9).abs() < 1e-6);
}
