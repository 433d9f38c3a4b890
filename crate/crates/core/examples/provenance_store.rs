//! Runs the five bundled disease studies, persists each result with its
//! inputs to a temporary append-only log, reopens the log and walks the
//! provenance chains.

use riskd_core::cartridge::{parse_cartridge, resolve_study, Cartridge};
use riskd_core::dataset::load_dataset;
use riskd_core::provenance::{DatasetRecord, ProvenanceStore, QueryFilter, ResultsCartridge};
use riskd_core::study::run_study;

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures");

fn load(name: &str) -> Cartridge {
    let text = std::fs::read_to_string(format!("{FIXTURES}/cartridges/{name}.json")).expect("fixture");
    parse_cartridge(&text).expect("valid fixture")
}

fn main() {
    let data = format!("{FIXTURES}/data/nhanes_like");
    let ds = load_dataset(format!("{data}.csv").as_ref(), format!("{data}.dictionary.json").as_ref()).expect("dataset");
    let log = std::env::temp_dir().join(format!("riskd-example-{}.log", std::process::id()));
    let store = ProvenanceStore::open(&log).expect("store");

    let studies = [
        ("response_t2d", "cohort_adults"),
        ("response_hypertension", "cohort_adults"),
        ("response_heart_disease", "cohort_adults"),
        ("response_thyroid", "cohort_adults"),
        ("response_breast_cancer", "cohort_adult_women"),
    ];
    for (response, cohort) in studies {
        let inputs = [load(response), load(cohort), load("factors_blood_metals"), load("factors_urinary_metals"), load("workflow_ewas")];
        let [Cartridge::Response(r), Cartridge::Cohort(c), Cartridge::RiskFactor(f1), Cartridge::RiskFactor(f2), Cartridge::Workflow(w)] =
            inputs.clone()
        else {
            unreachable!()
        };
        let plan = resolve_study(&r, &c, &[f1, f2], &w, &ds).expect("study resolves");
        let findings = run_study(&plan, &ds, |_, _| {}).expect("analysis");
        let result = ResultsCartridge::new(&plan, &ds, findings, chrono::Utc::now());
        store.persist_results(&result, &inputs, Some(&DatasetRecord::of(&ds))).expect("persist");
    }
    drop(store);

    let store = ProvenanceStore::open(&log).expect("reopen");
    println!("{} records in {}", store.record_count(), log.display());
    for header in store.query_results(&QueryFilter::default()) {
        let chain = store.provenance_chain(&header.id).expect("chain");
        println!(
            "{}  {:<22} resolved: {}  significant: {}",
            &header.id[..12],
            header.disease_label,
            chain.fully_resolved(),
            header.significant_factors.join(",")
        );
    }
    println!("audit issues: {}", store.audit().len());
    std::fs::remove_file(&log).ok();
}
