use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

fn sap() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sap"));
    c.env_remove("SAP_BACKEND_URL");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    sap().current_dir(dir).args(args).output().unwrap()
}

fn json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn gen_toy(dir: &Path) {
    let out = run(dir, &["gen-toy", "--dir", ".", "--sentences", "60", "--seed", "5"]);
    json(&out);
}

#[test]
fn toy_workflow() {
    let dir = tempfile::tempdir().unwrap();
    gen_toy(dir.path());
    let summary = json(&run(dir.path(), &["-c", "config.toml", "translate-fewshot"]));
    assert_eq!(summary["processed"], summary["total_items"]);
    let reports = json(&run(dir.path(), &["-c", "config.toml", "evaluate"]));
    assert_eq!(reports[0]["metric"], "bleu");
    assert_eq!(reports[0]["corpus_score"].as_f64().unwrap(), 100.0);

    let boot = json(&run(
        dir.path(),
        &[
            "-c",
            "config.toml",
            "--set",
            "bootstrap.rounds=2",
            "--set",
            "bootstrap.sample_size=30",
            "bootstrap",
        ],
    ));
    assert_eq!(boot["rounds_completed"], 2);
    assert_eq!(boot["pool_size"], 8);
}

#[test]
fn config_from_another_directory() {
    let dir = tempfile::tempdir().unwrap();
    gen_toy(dir.path());
    let cfg = dir.path().join("config.toml");
    let out = sap()
        .current_dir(std::env::temp_dir())
        .args(["-c", cfg.to_str().unwrap(), "translate-fewshot"])
        .output()
        .unwrap();
    json(&out);
    assert!(dir.path().join("out.en.txt").exists());
}

#[test]
fn overrides_reach_the_config() {
    let dir = tempfile::tempdir().unwrap();
    gen_toy(dir.path());
    let out = run(
        dir.path(),
        &["-c", "config.toml", "--workers", "3", "--set", "sap.max_steps=9", "--set", "grouping=\"round_robin\"", "show-config"],
    );
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let table: toml::Table = text.parse().unwrap();
    assert_eq!(table["workers"].as_integer(), Some(3));
    assert_eq!(table["sap"]["max_steps"].as_integer(), Some(9));
    assert_eq!(table["grouping"].as_str(), Some("round_robin"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    gen_toy(dir.path());

    // Unknown config key.
    let out = run(dir.path(), &["-c", "config.toml", "--set", "nonsense=1", "show-config"]);
    assert_eq!(out.status.code(), Some(2));

    // Zero workers.
    let out = run(dir.path(), &["-c", "config.toml", "--set", "workers=0", "translate-fewshot"]);
    assert_eq!(out.status.code(), Some(2));

    // Backend unreachable.
    let out = run(
        dir.path(),
        &["-c", "config.toml", "--set", "backend.kind=\"http\"", "--set", "backend.retry_attempts=1",
          "--backend-url", "http://127.0.0.1:9", "translate-fewshot"],
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    // Corrupt checkpoint.
    json(&run(dir.path(), &["-c", "config.toml", "--set", "bootstrap.rounds=2", "--set", "bootstrap.sample_size=20", "bootstrap", "--stop-after-round", "1"]));
    let ckpt = dir.path().join("bootstrap.ckpt.jsonl");
    let text = std::fs::read_to_string(&ckpt).unwrap();
    let last = text.trim_end().rfind('\n').unwrap();
    std::fs::write(&ckpt, &text[..last + 1]).unwrap();
    let out = run(dir.path(), &["-c", "config.toml", "--set", "bootstrap.rounds=2", "--set", "bootstrap.sample_size=20", "bootstrap"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));

    // Missing input file.
    let out = run(dir.path(), &["-c", "config.toml", "--input", "absent.txt", "translate-fewshot"]);
    assert_ne!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.txt"));
}

#[test]
fn serve_mock_answers_requests() {
    let dir = tempfile::tempdir().unwrap();
    gen_toy(dir.path());
    let mut child = sap()
        .current_dir(dir.path())
        .args(["-c", "config.toml", "serve-mock", "--listen", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let url = line.trim().to_string();
    assert!(url.starts_with("http://127.0.0.1:"), "{url}");

    let health: serde_json::Value = ureq::get(&format!("{url}/health"))
        .call()
        .unwrap()
        .body_mut()
        .read_json()
        .unwrap();
    assert_eq!(health["status"], "ok");

    // The same workspace translated through the HTTP backend.
    let out = run(
        dir.path(),
        &["-c", "config.toml", "--set", "backend.kind=\"http\"", "--backend-url", &url,
          "--output", "http.out", "--manifest", "http.manifest.jsonl", "translate-fewshot"],
    );
    json(&out);
    child.kill().unwrap();
    child.wait().unwrap();
    assert_eq!(
        std::fs::read_to_string(dir.path().join("http.out")).unwrap(),
        std::fs::read_to_string(dir.path().join("test.en.ref.txt")).unwrap()
    );
}
