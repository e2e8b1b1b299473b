#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use legacydoc_cli::{LoadedConfig, RunConfig};
use legacydoc_core::review::{Assignment, ReviewItem};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("fixtures")
}

/// Drops one id on the very first call; every call reports 1000 input and
/// 500 output tokens.
pub const DROP_FIRST: &str = r#"{"scope": "run", "calls": [{"action": "drop", "count": 1}],
 "input_tokens": 1000, "output_tokens": 500, "latency_secs": 1.0}"#;

pub const ROSTER: &str = r#"{"reviewers": [{"id": "r1", "token": "tok-1"}, {"id": "r2", "token": "tok-2"},
 {"id": "r3", "token": "tok-3"}]}"#;

pub struct Setup {
    pub dir: tempfile::TempDir,
    pub config: PathBuf,
}

impl Setup {
    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn out(&self) -> PathBuf {
        self.path("out")
    }

    pub fn load(&self, overrides: &[&str]) -> LoadedConfig {
        let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        RunConfig::load(Some(&self.config), &o).expect("config loads")
    }
}

/// A temporary study: the fixture corpora for `languages`, a priced model,
/// a scripted provider and a three-reviewer roster. `extra` is merged
/// over the configuration.
pub fn setup(languages: &[&str], script: &str, extra: Value) -> Setup {
    let dir = tempfile::tempdir().expect("tempdir");
    std::fs::write(dir.path().join("mock.json"), script).unwrap();
    std::fs::write(dir.path().join("roster.json"), ROSTER).unwrap();
    let corpora: Vec<Value> = languages
        .iter()
        .map(|l| json!({"name": l, "path": fixtures().join(l)}))
        .collect();
    let mut config = json!({
        "corpora": corpora,
        "models": [{"name": "claude-3-sonnet", "context_window": 200000, "input_price": 3.0, "output_price": 15.0}],
        "provider": {"kind": "mock", "script": "mock.json"},
        "time_source": "reported",
        "review": {"roster": "roster.json", "overlap": 1.0, "seed": 7},
        "output_dir": "out"
    });
    if let (Some(base), Value::Object(more)) = (config.as_object_mut(), extra) {
        base.extend(more);
    }
    let path = dir.path().join("run.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&config).unwrap()).unwrap();
    Setup { dir, config: path }
}

/// Seeded ratings for every assignment of the bundle, as JSONL export rows.
pub fn synthetic_ratings(out: &Path, seed: u64) -> String {
    let dir = out.join("assign");
    let items: Vec<ReviewItem> =
        serde_json::from_slice(&std::fs::read(dir.join("items.json")).unwrap()).unwrap();
    let assignments: Vec<Assignment> =
        serde_json::from_slice(&std::fs::read(dir.join("assignments.json")).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = String::new();
    for a in &assignments {
        let item = items
            .iter()
            .find(|i| i.item_id == a.item_id)
            .expect("assigned item exists");
        let base: u8 = rng.random_range(1..=4);
        let mut jitter = |b: u8| (b as i32 + rng.random_range(-1..=1)).clamp(1, 4);
        let row = json!({
            "reviewer_id": a.reviewer_id,
            "item_id": item.item_id,
            "comment_id": item.comment_id,
            "source": item.source,
            "language": item.language,
            "hallucination": jitter(base),
            "readability": jitter(base),
            "completeness": jitter(base),
            "usefulness": jitter(base),
            "submitted_at": "2024-05-01T12:00:00Z"
        });
        text.push_str(&row.to_string());
        text.push('\n');
    }
    text
}

/// Every file under `root`, relative, with its bytes; skips the run ledger,
/// which records wall-clock timings.
pub fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            let rel = p
                .strip_prefix(root)
                .unwrap()
                .to_string_lossy()
                .replace('\\', "/");
            if rel == "run" || rel == "cache" {
                continue;
            }
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

pub fn read_data(path: &Path) -> Value {
    let v: Value = serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap();
    v["data"].clone()
}
