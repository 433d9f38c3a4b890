#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use riskd_core::dataset::{generate_synthetic, load_dataset, CadreSpec, Dataset, SyntheticSpec};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn cartridge(name: &str) -> PathBuf {
    fixtures().join("cartridges").join(format!("{name}.json"))
}

pub fn data_csv() -> PathBuf {
    fixtures().join("data/nhanes_like.csv")
}

pub fn data_dict() -> PathBuf {
    fixtures().join("data/nhanes_like.dictionary.json")
}

pub fn nhanes_like() -> Dataset {
    load_dataset(&data_csv(), &data_dict()).expect("fixture dataset loads")
}

pub const DISEASES: [(&str, &str); 5] = [
    ("response_t2d", "cohort_adults"),
    ("response_hypertension", "cohort_adults"),
    ("response_heart_disease", "cohort_adults"),
    ("response_thyroid", "cohort_adults"),
    ("response_breast_cancer", "cohort_adult_women"),
];

pub fn riskd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_riskd")).args(args).env_remove("RISKD_STORE").output().expect("riskd runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// `riskd run` arguments for one disease fixture against the bundled extract.
pub fn run_args(response: &str, cohort: &str, factors: &[&str], workflow: &str, store: &Path) -> Vec<String> {
    let mut args = vec![
        "run".to_string(),
        "--response".into(),
        cartridge(response).display().to_string(),
        "--cohort".into(),
        cartridge(cohort).display().to_string(),
    ];
    for f in factors {
        args.push("--factors".into());
        args.push(cartridge(f).display().to_string());
    }
    args.extend([
        "--workflow".into(),
        cartridge(workflow).display().to_string(),
        "--data".into(),
        data_csv().display().to_string(),
        "--dict".into(),
        data_dict().display().to_string(),
        "--store".into(),
        store.display().to_string(),
    ]);
    args
}

/// Two cadres split on exposure_1 (offset 3) with opposite effects of
/// exposure_2, plus a whole-sample effect of exposure_1 in cadre 0 only.
pub fn planted_two_cadres(n: usize, seed: u64) -> Dataset {
    let p = 5;
    let mut spec = SyntheticSpec::planted(n, p);
    let mut a = CadreSpec::new(0.5);
    a.offsets = vec![0.0; p];
    let mut b = CadreSpec::new(0.5);
    b.offsets = vec![0.0; p];
    b.offsets[0] = 3.0;
    spec.cadres = vec![a, b];
    spec.outcomes[0].intercepts = vec![0.0, 0.0];
    spec.outcomes[0].coefficients = vec![vec![0.0, 1.5, 0.0, 0.0, 0.0], vec![0.0, -1.5, 0.0, 0.0, 0.0]];
    generate_synthetic(&spec, seed).expect("valid spec").dataset
}

/// One planted factor, exposure_1, among five.
pub fn planted_factor(n: usize, seed: u64) -> Dataset {
    let mut spec = SyntheticSpec::planted(n, 5);
    spec.outcomes[0].intercepts = vec![-0.3];
    spec.outcomes[0].coefficients = vec![vec![1.0, 0.0, 0.0, 0.0, 0.0]];
    generate_synthetic(&spec, seed).expect("valid spec").dataset
}

pub const OUTCOME_RESPONSE: &str = r#"{
  "kind": "response",
  "id": "response-outcome",
  "disease_label": "planted outcome",
  "response_var": "OUTCOME",
  "positive_rule": {"type": "codes", "codes": [1]}
}"#;

pub const ALL_SUBJECTS: &str = r#"{
  "kind": "cohort",
  "id": "cohort-all",
  "label": "All subjects",
  "filter": {"clauses": []}
}"#;

pub const PLAIN_EWAS: &str = r#"{
  "kind": "workflow",
  "id": "workflow-plain-ewas",
  "label": "EWAS on standardized exposures",
  "preprocessing": ["standardize"],
  "method": "swglm-ewas",
  "hyperparams": {"alpha": 0.05, "fdr_method": "benjamini-hochberg"}
}"#;
