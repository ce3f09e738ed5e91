use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use axum::body::Body;
use axum::http::Request;
use crowdscope_core::store::Store;
use crowdscope_service::{router, AppState};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

fn crowdscope(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crowdscope"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) -> &Output {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// 40 posts by 4 users over 2 days, one file per day.
fn toy_inputs(dir: &Path) -> String {
    let topics = [
        ("ann", "vote debate ballot great win"),
        ("bob", "vote ballot debate happy good"),
        ("cat", "rain storm flood awful bad"),
        ("dan", "storm rain wind terrible sad"),
    ];
    for day in 1..=2 {
        let mut out = String::new();
        for (user, text) in topics {
            for hour in 0..5 {
                let _ = writeln!(
                    out,
                    r#"{{"user":"{user}","ts":"2012-09-0{day}T1{hour}:00:00Z","text":"{text} the"}}"#
                );
            }
        }
        fs::write(dir.join(format!("day{day}.ndjson")), out).unwrap();
    }
    dir.join("day*.ndjson").to_string_lossy().into_owned()
}

fn write_config(dir: &Path, inputs: &str) -> PathBuf {
    let stop = dir.join("stop.txt");
    fs::write(&stop, "the\n").unwrap();
    let config = format!(
        r#"dataset = "toy"
store = "{store}"
inputs = ["{inputs}"]
stoplists = ["{stop}"]

[time]
step = "1d"

[clustering]
p = 1
k = 2
seed = 7

[sentiment]
scope = "global"
"#,
        store = dir.join("store").display(),
        stop = stop.display(),
    );
    let path = dir.join("crowdscope.toml");
    fs::write(&path, config).unwrap();
    path
}

fn snapshot(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn run_reports_totals_and_completes_store() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &toy_inputs(dir.path()));
    let out = crowdscope(&["run", "-c", config.to_str().unwrap(), "--jobs", "1"]);
    let report: Value = serde_json::from_slice(&ok(&out).stdout).unwrap();
    assert_eq!(report["total_posts"], 40);
    assert_eq!(report["total_users"], 8);
    assert_eq!(report["steps"].as_array().unwrap().len(), 2);
    assert_eq!(report["steps"][0]["tokens"], 5 * 5 * 4);
    let manifest = Store::new(dir.path().join("store"))
        .read_manifest("toy")
        .unwrap();
    assert!(manifest.complete);
    assert_eq!(manifest.config.clustering.unwrap().seed, 7);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &toy_inputs(dir.path()));
    let report = dir.path().join("report.json");
    ok(&crowdscope(&[
        "run",
        "-c",
        config.to_str().unwrap(),
        "--seed",
        "11",
        "--obfuscate-labels",
        "--sentiment-scope",
        "per-step",
        "--report",
        report.to_str().unwrap(),
    ]));
    let manifest = Store::new(dir.path().join("store"))
        .read_manifest("toy")
        .unwrap();
    assert_eq!(manifest.config.clustering.unwrap().seed, 11);
    assert_eq!(manifest.labels, ["t1", "t2"]);
    let saved: Value = serde_json::from_slice(&fs::read(report).unwrap()).unwrap();
    assert_eq!(saved["dataset"], "toy");
}

#[test]
fn empty_input_glob_fails() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        &dir.path().join("none-*.ndjson").to_string_lossy(),
    );
    let out = crowdscope(&["run", "-c", config.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no input files"));
}

#[test]
fn staged_commands_match_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let inputs = toy_inputs(a.path());
    let ca = write_config(a.path(), &inputs);
    let cb = write_config(b.path(), &inputs);
    ok(&crowdscope(&["run", "-c", ca.to_str().unwrap()]));
    for stage in ["ingest", "cluster", "sentiment"] {
        ok(&crowdscope(&[stage, "-c", cb.to_str().unwrap()]));
    }
    assert_eq!(
        snapshot(&a.path().join("store")),
        snapshot(&b.path().join("store"))
    );
}

#[test]
fn sentiment_before_cluster_fails() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &toy_inputs(dir.path()));
    ok(&crowdscope(&["ingest", "-c", config.to_str().unwrap()]));
    let out = crowdscope(&["sentiment", "-c", config.to_str().unwrap()]);
    assert!(!out.status.success());
    let out = crowdscope(&[
        "export",
        "-c",
        config.to_str().unwrap(),
        "--mode",
        "posneg",
        "--len",
        "2",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("incomplete"));
}

#[test]
fn exports_match_the_service() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &toy_inputs(dir.path()));
    let c = config.to_str().unwrap();
    ok(&crowdscope(&["run", "-c", c]));

    let list = dir.path().join("list.json");
    let args = [
        "export",
        "-c",
        c,
        "--mode",
        "posneg",
        "--view",
        "list",
        "--len",
        "2",
        "-o",
        list.to_str().unwrap(),
    ];
    ok(&crowdscope(&args));
    let first = fs::read(&list).unwrap();
    ok(&crowdscope(&args));
    assert_eq!(first, fs::read(&list).unwrap());

    let scene: Value = serde_json::from_slice(&first).unwrap();
    for day in scene["scenes"].as_array().unwrap() {
        let scores: Vec<f64> = day["items"]
            .as_array()
            .unwrap()
            .iter()
            .map(|i| i["score"].as_f64().unwrap())
            .collect();
        assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    }

    let state = Arc::new(AppState::new(Store::new(dir.path().join("store"))));
    let served = tokio::runtime::Runtime::new().unwrap().block_on(async {
        let response = router(state, &[])
            .oneshot(
                Request::get("/datasets/toy/window?mode=posneg&view=list&len=2")
                    .body(Body::empty())
                    .unwrap(),
            )
            .await
            .unwrap();
        response
            .into_body()
            .collect()
            .await
            .unwrap()
            .to_bytes()
            .to_vec()
    });
    assert_eq!(first, served);

    let out = crowdscope(&[
        "export", "-c", c, "--mode", "search", "--q", "vote", "--len", "2", "--format", "svg",
    ]);
    let svg = String::from_utf8(ok(&out).stdout.clone()).unwrap();
    let treemap: Value = serde_json::from_slice(
        &ok(&crowdscope(&[
            "export", "-c", c, "--mode", "search", "--q", "vote", "--len", "2",
        ]))
        .stdout,
    )
    .unwrap();
    let antichain_total: usize = treemap["scenes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["antichain"].as_array().unwrap().len())
        .sum();
    assert!(svg.starts_with("<svg"));
    assert_eq!(
        svg.matches(r#"<rect class="cell""#).count(),
        antichain_total
    );
}

#[test]
fn bad_arguments_exit_nonzero() {
    let out = crowdscope(&[
        "export",
        "--store",
        "/nonexistent",
        "--dataset",
        "x",
        "--mode",
        "wrong",
    ]);
    assert!(!out.status.success());
    let out = crowdscope(&["frobnicate"]);
    assert!(!out.status.success());
    let out = crowdscope(&["serve", "--store", "/nonexistent/store"]);
    assert!(!out.status.success());
}
