//! Generates an NHANES-like extract from a synthetic spec.
//!
//! Usage: synthesize <spec.json> <seed> <out-prefix>
//!
//! Writes `<out-prefix>.csv` and `<out-prefix>.dictionary.json`.

use std::path::PathBuf;

use riskd_core::dataset::{generate_synthetic, SyntheticSpec};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [spec_path, seed, prefix] = args.as_slice() else {
        eprintln!("usage: synthesize <spec.json> <seed> <out-prefix>");
        std::process::exit(2);
    };
    let spec: SyntheticSpec =
        serde_json::from_str(&std::fs::read_to_string(spec_path).expect("readable spec")).expect("valid spec");
    let data = generate_synthetic(&spec, seed.parse().expect("integer seed")).expect("generation");
    let data_path = PathBuf::from(format!("{prefix}.csv"));
    let dict_path = PathBuf::from(format!("{prefix}.dictionary.json"));
    data.dataset.write(&data_path, &dict_path).expect("write dataset");
    println!(
        "{} rows, {} variables, fingerprint {}",
        data.dataset.n_rows(),
        data.dataset.dictionary().len(),
        data.dataset.fingerprint()
    );
}
