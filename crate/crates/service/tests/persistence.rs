mod common;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use axum::http::StatusCode;
use common::{answers, tiny_request, Client};
use serde_json::{json, Value};

fn log_path(state: &Path, id: &str) -> PathBuf {
    state.join("sessions").join(format!("{id}.jsonl"))
}

fn log_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

fn write_lines(path: &Path, lines: &[String]) {
    let mut text = lines.join("\n");
    text.push('\n');
    fs::write(path, text).unwrap();
}

fn comparable(mut s: Value) -> Value {
    s.as_object_mut().unwrap().remove("updatedAt");
    s
}

#[tokio::test]
async fn restart_restores_sessions_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (id, before, batch) = {
        let c = Client::start(dir.path()).await;
        let id = c.create(tiny_request(10)).await;
        let b = c.next_batch(&id).await.json();
        c.post(&format!("/sessions/{id}/labels"), answers(&b, None, Some("kettle"))).await;
        let b = c.next_batch(&id).await.json();
        (id.clone(), c.status(&id).await, b)
    };
    let c = Client::start(dir.path()).await;
    let after = c.status(&id).await;
    assert_eq!(after, before);
    let list = c.get("/sessions").await.json();
    assert_eq!(list["sessions"][0]["digest"], before["digest"]);
    // The outstanding batch survives and can be answered.
    assert_eq!(c.next_batch(&id).await.json(), batch);
    let r = c.post(&format!("/sessions/{id}/labels"), answers(&batch, Some(2), None)).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["labeledCount"], 10);
}

#[tokio::test]
async fn fresh_session_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let (id, digest) = {
        let c = Client::start(dir.path()).await;
        let id = c.create(tiny_request(11)).await;
        (id.clone(), c.status(&id).await["digest"].clone())
    };
    let c = Client::start(dir.path()).await;
    assert_eq!(c.status(&id).await["digest"], digest);
}

/// Runs one labeled round and returns the log lines plus the digests before
/// and after the submission.
async fn one_round(state: &Path) -> (String, Vec<String>, Value, Value) {
    let c = Client::start(state).await;
    let id = c.create(tiny_request(12)).await;
    let b = c.next_batch(&id).await.json();
    let pre = c.status(&id).await;
    let r = c.post(&format!("/sessions/{id}/labels"), answers(&b, None, Some("novel"))).await;
    assert_eq!(r.status, StatusCode::OK);
    let post = c.status(&id).await;
    let lines = log_lines(&log_path(state, &id));
    (id, lines, pre, post)
}

#[tokio::test]
async fn crash_after_label_persistence_resumes_to_the_post_submit_state() {
    let dir = tempfile::tempdir().unwrap();
    let (id, lines, _, post) = one_round(dir.path()).await;
    let kinds: Vec<String> =
        lines.iter().map(|l| serde_json::from_str::<Value>(l).unwrap()["event"].as_str().unwrap().to_string()).collect();
    assert_eq!(kinds, ["created", "batch_issued", "labels_accepted", "update_finished"]);

    // Killed after the labels were logged, before the update finished.
    let crashed = tempfile::tempdir().unwrap();
    fs::create_dir_all(crashed.path().join("sessions")).unwrap();
    write_lines(&log_path(crashed.path(), &id), &lines[..3]);
    let c = Client::start(crashed.path()).await;
    let resumed = c.settle(&id).await;
    assert_eq!(comparable(resumed), comparable(post.clone()));
    // The resumed update is logged, so a second restart agrees too.
    assert_eq!(log_lines(&log_path(crashed.path(), &id)).len(), 4);
    let c = Client::start(crashed.path()).await;
    assert_eq!(c.status(&id).await["digest"], post["digest"]);
}

#[tokio::test]
async fn torn_label_write_restores_the_pre_submit_state() {
    let dir = tempfile::tempdir().unwrap();
    let (id, lines, pre, _) = one_round(dir.path()).await;

    let crashed = tempfile::tempdir().unwrap();
    fs::create_dir_all(crashed.path().join("sessions")).unwrap();
    let path = log_path(crashed.path(), &id);
    write_lines(&path, &lines[..2]);
    let torn = &lines[2][..lines[2].len() / 2];
    fs::OpenOptions::new().append(true).open(&path).unwrap().write_all(torn.as_bytes()).unwrap();

    let c = Client::start(crashed.path()).await;
    let restored = c.status(&id).await;
    assert_eq!(restored, pre);
    assert_eq!(restored["status"], "awaiting_labels");
    // The torn tail is gone and new events append cleanly.
    assert_eq!(log_lines(&path).len(), 2);
    let b = c.next_batch(&id).await.json();
    let r = c.post(&format!("/sessions/{id}/labels"), answers(&b, None, None)).await;
    assert_eq!(r.status, StatusCode::OK);
    let c = Client::start(crashed.path()).await;
    assert_eq!(c.status(&id).await["digest"], r.json()["digest"]);
}

#[tokio::test]
async fn tampered_logs_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let (id, lines, _, _) = one_round(dir.path()).await;
    let mut bad: Value = serde_json::from_str(&lines[3]).unwrap();
    bad["digest"] = json!("0".repeat(64));
    let mut tampered = lines.clone();
    tampered[3] = bad.to_string();
    write_lines(&log_path(dir.path(), &id), &tampered);

    let mut garbage = lines.clone();
    garbage.insert(1, "{not json".into());
    fs::write(log_path(dir.path(), "other"), garbage.join("\n") + "\n").unwrap();

    let c = Client::start(dir.path()).await;
    assert!(c.get("/sessions").await.json()["sessions"].as_array().unwrap().is_empty());
    assert_eq!(c.get("/healthz").await.json()["sessions"], 0);
}
