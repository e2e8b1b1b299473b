mod common;

use std::process::Command;

use serde_json::{json, Value};

use common::{read_data, setup, synthetic_ratings, tree, DROP_FIRST};
use legacydoc_cli::artifact::{is_complete, read_json};
use legacydoc_cli::stages::{dry_run, run_pipeline};
use legacydoc_cli::{CliError, Options, Stage};
use legacydoc_core::genclient::{compute_cost, ModelProfile};
use legacydoc_core::masking::MaskedFile;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_legacydoc"))
}

fn run_all(s: &common::Setup, overrides: &[&str]) -> Result<(), CliError> {
    run_pipeline(&s.load(overrides), &Stage::ALL, &Options::default()).map(|_| ())
}

#[test]
fn offline_run_recovers_a_dropped_id_and_balances_cost() {
    let s = setup(&["mumps", "alc"], DROP_FIRST, json!({}));
    run_all(&s, &[]).unwrap();
    let out = s.out();
    let summary = read_data(&out.join("generate/claude-3-sonnet/summary.json"));
    assert_eq!(summary["retries"], 1);
    assert_eq!(summary["failed"], 0);
    let calls = summary["chunks"].as_u64().unwrap() + 1;
    assert_eq!(summary["input_tokens"], 1000 * calls);
    assert_eq!(summary["output_tokens"], 500 * calls);
    let profile = ModelProfile::new("p", 200000).with_prices(3.0, 15.0);
    assert_eq!(
        summary["cost"].as_f64().unwrap(),
        compute_cost(1000 * calls, 500 * calls, &profile)
    );
    assert_eq!(summary["processing_time"].as_f64().unwrap(), calls as f64);

    let guard = read_data(&out.join("unmask/claude-3-sonnet/diff_guard.json"));
    let guard = guard.as_array().unwrap();
    assert_eq!(guard.len(), 4);
    assert!(
        guard.iter().all(|g| g["verdict"]["verdict"] == "clean"),
        "{guard:?}"
    );

    let rebuilt =
        std::fs::read_to_string(out.join("unmask/claude-3-sonnet/mumps/PATCNT.m")).unwrap();
    assert!(!rebuilt.contains("<MISSING>"));
    assert!(rebuilt.contains("Generated comment for"));
    for stage in Stage::ALL {
        assert!(
            is_complete(&s.load(&[]), stage.name()),
            "{stage} incomplete"
        );
    }
}

#[test]
fn rerun_in_a_fresh_directory_is_byte_identical() {
    let s = setup(&["mumps", "alc"], DROP_FIRST, json!({}));
    run_all(&s, &[]).unwrap();
    let other = s.path("again");
    let other_str = format!("output_dir={}", Value::from(other.display().to_string()));
    run_all(&s, &[&other_str]).unwrap();
    let a = tree(&s.out());
    let b = tree(&other);
    assert_eq!(a.len(), b.len());
    for ((pa, ba), (pb, bb)) in a.iter().zip(&b) {
        assert_eq!(pa, pb);
        assert!(ba == bb, "{pa} differs between runs");
    }
}

#[test]
fn completed_stages_are_skipped_and_config_changes_rerun_them() {
    let s = setup(&["mumps"], DROP_FIRST, json!({}));
    let cfg = s.load(&[]);
    let first = run_pipeline(&cfg, &[Stage::Mask], &Options::default()).unwrap();
    assert_eq!(
        first
            .iter()
            .map(|e| (e.stage, e.skipped))
            .collect::<Vec<_>>(),
        [(Stage::Ingest, false), (Stage::Mask, false)]
    );
    let again = run_pipeline(&cfg, &[Stage::Mask], &Options::default()).unwrap();
    assert_eq!(
        again
            .iter()
            .map(|e| (e.stage, e.skipped))
            .collect::<Vec<_>>(),
        [(Stage::Mask, true)]
    );

    let reseeded = s.load(&["mask_seed=99"]);
    assert_ne!(reseeded.digest, cfg.digest);
    assert!(!is_complete(&reseeded, "mask"));
    let third = run_pipeline(&reseeded, &[Stage::Mask], &Options::default()).unwrap();
    assert!(third.iter().all(|e| !e.skipped));
    let old: Result<Vec<MaskedFile>, _> = read_json(&cfg, "mask", "masked.json");
    assert!(matches!(old, Err(CliError::Validation(_))));

    let forced = Options {
        force: true,
        ..Default::default()
    };
    let fourth = run_pipeline(&reseeded, &[Stage::Ingest], &forced).unwrap();
    assert_eq!(fourth.len(), 1);
    assert!(
        !is_complete(&reseeded, "mask"),
        "rerunning ingest invalidates mask"
    );
}

#[test]
fn unfilled_ids_exhaust_then_resume_from_the_checkpoint() {
    // One chunk per run scope call: the first two chunks fill, every later
    // call fails in transport.
    let failing = r#"{"scope": "run", "calls": [{"action": "fill"}, {"action": "fill"}],
        "then": {"action": "fail", "message": "down"}, "input_tokens": 10, "output_tokens": 5}"#;
    let s = setup(&["mumps", "alc"], failing, json!({"max_retries": 1}));
    let err = run_all(&s, &[]).unwrap_err();
    assert!(matches!(err, CliError::Exhausted(_)), "{err}");
    assert_eq!(err.exit_code(), 3);
    let cfg = s.load(&[]);
    assert!(!is_complete(&cfg, "generate"));
    let checkpoint =
        std::fs::read_to_string(s.out().join("generate/claude-3-sonnet/ledger.jsonl")).unwrap();
    let done: Vec<Value> = checkpoint
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["result"].clone())
        .filter(|r| r["failed_ids"].as_array().unwrap().is_empty())
        .collect();
    assert_eq!(done.len(), 2);

    // Same script path, new behaviour: only the unfinished chunks are sent.
    std::fs::write(
        s.path("mock.json"),
        r#"{"input_tokens": 10, "output_tokens": 5, "comment": "second run"}"#,
    )
    .unwrap();
    run_all(&s, &[]).unwrap();
    let summary = read_data(&s.out().join("generate/claude-3-sonnet/summary.json"));
    assert_eq!(summary["failed"], 0);
    let ledger =
        std::fs::read_to_string(s.out().join("generate/claude-3-sonnet/ledger.jsonl")).unwrap();
    let results: Vec<Value> = ledger
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["result"].clone())
        .collect();
    assert_eq!(results.len(), 4);
    for r in &done {
        assert!(
            results.contains(r),
            "checkpointed chunk {} was regenerated",
            r["chunk"]
        );
    }
    let second = results
        .iter()
        .filter(|r| {
            r["comments"]
                .as_object()
                .unwrap()
                .values()
                .all(|v| v == "second run")
        })
        .count();
    assert_eq!(second, 2);
}

#[test]
fn allow_failed_keeps_markers_and_completes() {
    let never = r#"{"scope": "chunk", "then": {"action": "drop", "count": 1}}"#;
    let s = setup(
        &["mumps"],
        never,
        json!({"allow_failed": true, "max_retries": 2}),
    );
    run_all(&s, &[]).unwrap();
    let summary = read_data(&s.out().join("generate/claude-3-sonnet/summary.json"));
    let chunks = summary["chunks"].as_u64().unwrap();
    assert_eq!(summary["failed"].as_u64().unwrap(), chunks);
    assert_eq!(summary["retries"].as_u64().unwrap(), 2 * chunks);
    let marked = ["LABRPT.m", "PATCNT.m", "UTLSTR.m"]
        .iter()
        .map(|f| {
            std::fs::read_to_string(s.out().join("unmask/claude-3-sonnet/mumps").join(f)).unwrap()
        })
        .filter(|t| t.contains("<MISSING>"))
        .count();
    assert_eq!(marked as u64, chunks);
    let guard = read_data(&s.out().join("unmask/claude-3-sonnet/diff_guard.json"));
    assert!(guard
        .as_array()
        .unwrap()
        .iter()
        .all(|g| g["verdict"]["verdict"] == "clean"));
}

#[test]
fn dry_run_estimates_without_writing() {
    let s = setup(&["mumps", "alc"], DROP_FIRST, json!({"max_retries": 3}));
    let cfg = s.load(&[]);
    let plan = dry_run(&cfg, &Stage::ALL, &Options::default()).unwrap();
    assert!(!s.out().exists(), "dry run wrote output");
    assert_eq!(plan.stages.len(), Stage::ALL.len());
    assert!(plan.stages.iter().all(|(_, run)| *run));
    let m = &plan.models[0];
    assert_eq!(m.placeholders, 17 + 11);
    assert_eq!(m.output_tokens, 64 * m.placeholders as u64);
    let profile = &cfg.config.models[0];
    assert_eq!(
        m.cost_ceiling,
        4.0 * compute_cost(m.input_tokens, m.output_tokens, profile)
    );
    assert_eq!(plan.provider, "mock:mock.json");
}

#[test]
fn correlate_builds_both_table_layouts_from_ratings() {
    let s = setup(&["mumps", "alc"], DROP_FIRST, json!({}));
    let cfg = s.load(&[]);
    let ratings = s.path("ratings.jsonl");
    run_pipeline(&cfg, &[Stage::Assign], &Options::default()).unwrap();
    std::fs::write(&ratings, synthetic_ratings(&s.out(), 11)).unwrap();
    let opts = Options {
        ratings: Some(ratings),
        ..Default::default()
    };
    run_pipeline(&cfg, &[Stage::Report], &opts).unwrap();
    let complexity = read_data(&s.out().join("correlate/complexity_correlations.json"));
    let quality = read_data(&s.out().join("correlate/quality_correlations.json"));
    let names = |t: &Value| -> Vec<String> {
        t["rows"]
            .as_array()
            .unwrap()
            .iter()
            .map(|r| r["metric"].as_str().unwrap().to_string())
            .collect()
    };
    assert_eq!(complexity[0]["dataset"], "MUMPS");
    assert_eq!(complexity[1]["dataset"], "ALC");
    assert_eq!(names(&complexity[0]).len(), 15);
    assert_eq!(names(&complexity[1]).len(), 8);
    assert!(names(&complexity[0]).contains(&"Pain Point Kill Goto".to_string()));
    assert_eq!(
        names(&quality[0]),
        [
            "BLEU",
            "Flesch",
            "Gunning Fog",
            "CHRF",
            "ROUGE",
            "Similarity Score"
        ]
    );
    let cost = &complexity[0]["rows"][0];
    assert_eq!(cost["metric"], "Cost");
    for cell in cost["cells"].as_array().unwrap() {
        assert_eq!(cell["n"], 17, "every MUMPS comment joins: {cell}");
    }
    let report = std::fs::read_to_string(s.out().join("report/report.md")).unwrap();
    for heading in [
        "## Corpus",
        "## Generation",
        "## Inter-rater agreement",
        "| Dataset | Metric | Hallucination | Completeness | Readability | Usefulness |",
    ] {
        assert!(report.contains(heading), "missing {heading}");
    }
    assert!(report
        .trim_end()
        .ends_with(&format!("<!-- config_digest: {} -->", cfg.digest)));
    let csv = std::fs::read_to_string(s.out().join("correlate/icc.csv")).unwrap();
    assert!(csv.starts_with("config_digest,"));
}

#[test]
fn correlate_reads_the_review_log() {
    use legacydoc_core::review::{Category, ReviewBundle, ReviewRecord, ReviewStore};
    let s = setup(&["mumps"], DROP_FIRST, json!({}));
    let cfg = s.load(&[]);
    run_pipeline(&cfg, &[Stage::Assign], &Options::default()).unwrap();
    let bundle = ReviewBundle::load(&s.out().join("assign")).unwrap();
    let mut store = ReviewStore::open(s.out().join("reviews"), &bundle.assignments).unwrap();
    for (k, a) in bundle.assignments.iter().enumerate() {
        let v = (k % 4) as u8 + 1;
        store
            .submit(ReviewRecord {
                reviewer_id: a.reviewer_id.clone(),
                item_id: a.item_id.clone(),
                scores: Category::ALL.into_iter().map(|c| (c, v)).collect(),
                submitted_at: "2024-05-01T12:00:00Z".parse().unwrap(),
            })
            .unwrap();
    }
    drop(store);
    run_pipeline(&cfg, &[Stage::Correlate], &Options::default()).unwrap();
    let summary = read_data(&s.out().join("correlate/summary.json"));
    let rows = summary.as_array().unwrap();
    assert_eq!(rows.len(), 2 * 4, "one row per source and category");
    let total: u64 = rows.iter().map(|r| r["n"].as_u64().unwrap()).sum();
    assert_eq!(total, 4 * bundle.assignments.len() as u64);
}

#[test]
fn binary_exit_codes() {
    let s = setup(&["mumps"], DROP_FIRST, json!({}));
    let status = |args: &[&str]| {
        bin()
            .args(["-c", s.config.to_str().unwrap(), "--log-level", "error"])
            .args(args)
            .output()
            .unwrap()
    };
    let ok = status(&["run", "--stages", "ingest,stats"]);
    assert!(
        ok.status.success(),
        "{}",
        String::from_utf8_lossy(&ok.stderr)
    );
    let ledger: Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(ledger.as_array().unwrap().len(), 2);

    assert_eq!(
        status(&["--set", "nonsense=1", "ingest"]).status.code(),
        Some(1)
    );
    assert_eq!(
        status(&["--set", "concurrency=0", "ingest"]).status.code(),
        Some(1)
    );
    assert_eq!(status(&["run", "--stages", "bogus"]).status.code(), Some(1));
    assert_eq!(
        status(&["--provider", "http://x", "ingest"]).status.code(),
        Some(1)
    );
    assert_eq!(
        status(&["serve"]).status.code(),
        Some(1),
        "serve needs a finished assign stage"
    );

    std::fs::write(
        s.path("mock.json"),
        r#"{"scope": "chunk", "then": {"action": "drop", "count": 1}}"#,
    )
    .unwrap();
    let exhausted = status(&["--set", "max_retries=0", "generate"]);
    assert_eq!(exhausted.status.code(), Some(3));

    std::fs::write(s.path("mock.json"), "{not json").unwrap();
    let broken = status(&["--set", "max_retries=1", "generate"]);
    assert_eq!(broken.status.code(), Some(1));

    let logs = String::from_utf8_lossy(&broken.stderr);
    let first = logs
        .lines()
        .find(|l| l.starts_with('{'))
        .expect("json log line");
    let parsed: Value = serde_json::from_str(first).unwrap();
    assert_eq!(parsed["level"], "ERROR");
}

#[test]
fn provider_flag_overrides_the_config() {
    let s = setup(&["mumps"], "{}", json!({}));
    let other = s.path("other.json");
    std::fs::write(&other, r#"{"comment": "from the flag"}"#).unwrap();
    let out = bin()
        .args(["-c", s.config.to_str().unwrap(), "--log-level", "error"])
        .args([
            "--provider",
            &format!("mock:{}", other.display()),
            "run",
            "--stages",
            "unmask",
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text =
        std::fs::read_to_string(s.out().join("unmask/claude-3-sonnet/mumps/UTLSTR.m")).unwrap();
    assert!(text.contains("from the flag"));
}
