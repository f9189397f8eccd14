#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

pub fn advsal(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_advsal"))
        .current_dir(dir)
        .env_remove("ADVSAL_OUTPUT_ROOT")
        .args(args)
        .output()
        .expect("spawn advsal")
}

/// Runs `advsal` and panics with its stderr unless it exits 0.
pub fn advsal_ok(dir: &Path, args: &[&str]) -> String {
    let out = advsal(dir, args);
    assert!(
        out.status.success(),
        "advsal {args:?} exited {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn manifest(run: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap()
}

pub fn jsonl(run: &Path) -> Vec<Value> {
    fs::read_to_string(run.join("attacks.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// Report CSV rows as column-name maps.
pub fn report(run: &Path) -> Vec<BTreeMap<String, String>> {
    let text = fs::read_to_string(run.join("report.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    lines
        .map(|l| header.iter().cloned().zip(l.split(',').map(String::from)).collect())
        .collect()
}

/// Every regular file under `root`, keyed by relative path.
pub fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Manifest with wall-clock fields removed.
pub fn manifest_without_times(run: &Path) -> Value {
    let mut m = manifest(run);
    let o = m.as_object_mut().unwrap();
    o.remove("started_at");
    o.remove("finished_at");
    m
}

/// Differences between two run directories: file sets, bytes of everything
/// but the manifest, and the manifest up to timestamps.
pub fn run_differences(a: &Path, b: &Path) -> Vec<String> {
    let fa = files(a);
    let fb = files(b);
    let mut diffs = Vec::new();
    if fa.keys().ne(fb.keys()) {
        diffs.push("file sets differ".to_string());
    }
    for (k, v) in &fa {
        if k.as_os_str() == "manifest.json" {
            continue;
        }
        if fb.get(k) != Some(v) {
            diffs.push(format!("{} differs", k.display()));
        }
    }
    if manifest_without_times(a) != manifest_without_times(b) {
        diffs.push("manifest differs beyond timestamps".to_string());
    }
    diffs
}

pub fn entries(m: &Value) -> &Vec<Value> {
    m["images"].as_array().unwrap()
}

pub fn strings(v: &Value) -> Vec<String> {
    v.as_array().unwrap().iter().map(|s| s.as_str().unwrap().to_string()).collect()
}
