mod common;

use common::*;
use riskd_core::provenance::{ProvenanceStore, ResultsCartridge};

fn run_t2d(store: &std::path::Path, extra: &[&str]) -> std::process::Output {
    let mut args = run_args("response_t2d", "cohort_adults", &["factors_blood_metals", "factors_urinary_metals"], "workflow_ewas", store);
    args.extend(extra.iter().map(|s| s.to_string()));
    riskd(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

#[test]
fn t2d_fixture_ranks_a_planted_exposure_first() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_t2d(&dir.path().join("store.log"), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("type 2 diabetes"));
    assert!(lines.next().unwrap().starts_with("factor"));
    let top = lines.next().unwrap();
    assert!(top.starts_with("URXUMO") || top.starts_with("URXUUR"), "top row: {top}");
    assert!(top.ends_with('*'));
    let id_line = text.lines().last().unwrap();
    assert!(id_line.starts_with("result ") && id_line.len() == "result ".len() + 64);
}

#[test]
fn missing_workflow_is_a_usage_error() {
    let out = riskd(&["run", "--response", "r.json", "--cohort", "c.json", "--factors", "f.json", "--data", "d.csv", "--dict", "d.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--workflow"));
}

#[test]
fn json_output_matches_the_stored_cartridge() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store.log");
    let out = run_t2d(&store, &["--format", "json"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let printed: ResultsCartridge = serde_json::from_slice(&out.stdout).unwrap();
    let stored = ProvenanceStore::open(&store).unwrap().result(&printed.id).unwrap();
    assert_eq!(printed, stored);
    assert_eq!(printed.findings.len(), 7);
}

#[test]
fn provenance_show_lists_a_resolved_chain() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store.log");
    let args = run_args("response_hypertension", "cohort_adults", &["factors_blood_metals"], "workflow_ewas", &store);
    let out = riskd(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let id = stdout(&out).lines().last().unwrap().trim_start_matches("result ").to_string();

    let shown = riskd(&["provenance", "show", &id, "--store", store.to_str().unwrap()]);
    assert_eq!(shown.status.code(), Some(0));
    let text = stdout(&shown);
    let links: Vec<&str> = text.lines().filter(|l| !l.starts_with("dataset")).collect();
    assert_eq!(links.len(), 4, "{text}");
    assert!(text.lines().all(|l| l.ends_with(" resolved")));
    for (line, kind) in links.iter().zip(["response", "cohort", "risk-factor", "workflow"]) {
        assert!(line.starts_with(kind));
    }

    let audit = riskd(&["provenance", "audit", "--store", store.to_str().unwrap()]);
    assert_eq!(audit.status.code(), Some(0));
}

#[test]
fn unknown_ids_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store.log");
    let out = riskd(&["provenance", "show", "deadbeef", "--store", store.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("NotFound"));
    let out = riskd(&["results", "show", "deadbeef", "--store", store.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn query_for_an_unknown_factor_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store.log");
    assert_eq!(run_t2d(&store, &[]).status.code(), Some(0));
    let s = store.to_str().unwrap();
    let out = riskd(&["results", "query", "--factor", "no-such", "--store", s]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out).lines().count(), 1);
    let out = riskd(&["results", "query", "--factor", "URXUMO", "--significant-only", "--store", s, "--format", "json"]);
    let hits: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(hits.as_array().unwrap().len(), 1);
    assert_eq!(hits[0]["disease_label"], "type 2 diabetes");
}

#[test]
fn store_path_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("env-store.log");
    let args = run_args("response_t2d", "cohort_adults", &["factors_urinary_metals"], "workflow_ewas", &store);
    // drop the explicit --store pair
    let args: Vec<&str> = args[..args.len() - 2].iter().map(String::as_str).collect();
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_riskd"))
        .args(&args)
        .env("RISKD_STORE", &store)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(ProvenanceStore::open(&store).unwrap().query_results(&Default::default()).len(), 1);
}

#[test]
fn synth_generate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let spec = fixtures().join("data/nhanes_like.spec.json");
    let mut texts = Vec::new();
    for name in ["a", "b"] {
        let prefix = dir.path().join(name);
        let out = riskd(&["synth", "generate", "--spec", spec.to_str().unwrap(), "--seed", "7", "--out", prefix.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        texts.push((
            std::fs::read(dir.path().join(format!("{name}.csv"))).unwrap(),
            std::fs::read(dir.path().join(format!("{name}.dictionary.json"))).unwrap(),
        ));
    }
    assert_eq!(texts[0], texts[1]);
    assert_eq!(String::from_utf8_lossy(&texts[0].0).lines().count(), 201);
}

#[test]
fn bundled_extract_regenerates_from_its_spec() {
    let dir = tempfile::tempdir().unwrap();
    let spec = fixtures().join("data/nhanes_like.spec.json");
    let prefix = dir.path().join("x");
    let out = riskd(&["synth", "generate", "--spec", spec.to_str().unwrap(), "--seed", "2026", "--out", prefix.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(std::fs::read(dir.path().join("x.csv")).unwrap(), std::fs::read(data_csv()).unwrap());
}

#[test]
fn invalid_cartridge_exits_two_with_its_error_name() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"kind": "response", "id": "x", "disease_label": "x", "positive_rule": {"type": "codes", "codes": [1]}}"#).unwrap();
    let out = riskd(&["cartridge", "validate", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("SchemaViolation"));
    assert!(stderr(&out).contains("response_var"));

    let mut args = run_args("response_t2d", "cohort_adults", &["factors_blood_metals"], "workflow_ewas", &dir.path().join("s.log"));
    args[2] = bad.display().to_string();
    let out = riskd(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn wrong_cartridge_kind_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = run_args("response_t2d", "cohort_adults", &["factors_blood_metals"], "workflow_ewas", &dir.path().join("s.log"));
    args[4] = cartridge("workflow_ewas").display().to_string();
    let out = riskd(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("WrongCartridgeKind"));
}

#[test]
fn empty_cohort_is_an_analysis_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = dir.path().join("nobody.json");
    std::fs::write(
        &cohort,
        r#"{"kind": "cohort", "id": "nobody", "label": "Nobody", "filter": {"clauses": [{"var": "RIDAGEYR", "op": ">", "value": 500}]}}"#,
    )
    .unwrap();
    let mut args = run_args("response_t2d", "cohort_adults", &["factors_blood_metals"], "workflow_ewas", &dir.path().join("s.log"));
    args[4] = cohort.display().to_string();
    let out = riskd(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("EmptyCohort"));
}

#[test]
fn unusable_store_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    // a directory cannot be opened as the append-only log
    let out = run_t2d(dir.path(), &[]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
}

#[test]
fn every_fixture_cartridge_validates() {
    let dir = fixtures().join("cartridges");
    let mut files: Vec<String> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path().display().to_string())
        .collect();
    files.sort();
    let mut args = vec!["cartridge", "validate"];
    args.extend(files.iter().map(String::as_str));
    let out = riskd(&args);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 12);
    assert_eq!(text.lines().filter(|l| l.starts_with("response ")).count(), 5);
}
