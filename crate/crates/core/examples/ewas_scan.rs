//! Runs a survey-weighted EWAS from cartridge files against a dataset.
//!
//! Usage: ewas_scan <data.csv> <dictionary.json> <response> <cohort> <workflow> <factors>...

use std::path::Path;

use riskd_core::cartridge::{parse_cartridge, resolve_study, Cartridge};
use riskd_core::dataset::load_dataset;
use riskd_core::study::{run_study, Findings};

fn load(path: &str) -> Cartridge {
    parse_cartridge(&std::fs::read_to_string(path).expect("readable cartridge")).expect("valid cartridge")
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.len() < 6 {
        eprintln!("usage: ewas_scan <data.csv> <dictionary.json> <response> <cohort> <workflow> <factors>...");
        std::process::exit(2);
    }
    let ds = load_dataset(Path::new(&args[0]), Path::new(&args[1])).expect("dataset");
    let (Cartridge::Response(response), Cartridge::Cohort(cohort), Cartridge::Workflow(workflow)) =
        (load(&args[2]), load(&args[3]), load(&args[4]))
    else {
        panic!("expected response, cohort and workflow cartridges in that order");
    };
    let factors: Vec<_> = args[5..]
        .iter()
        .map(|p| match load(p) {
            Cartridge::RiskFactor(f) => f,
            other => panic!("{p}: expected a risk-factor cartridge, got {}", other.kind()),
        })
        .collect();
    let plan = resolve_study(&response, &cohort, &factors, &workflow, &ds).expect("study resolves");
    let Findings::Ewas(report) = run_study(&plan, &ds, |_, _| {}).expect("analysis") else {
        panic!("workflow is not an EWAS");
    };
    println!("{:<10} {:>10} {:>10} {:>10} {:>10}  n", "factor", "coef", "robust se", "p", "adj p");
    for r in &report.results {
        println!(
            "{:<10} {:>10.4} {:>10.4} {:>10.2e} {:>10.2e}  {}{}",
            r.factor,
            r.coefficient,
            r.robust_se,
            r.p_value,
            r.adjusted_p,
            r.n_used,
            if r.significant { " *" } else { "" }
        );
    }
    for s in &report.skipped {
        println!("skipped {}: {}", s.factor, s.reason);
    }
}
