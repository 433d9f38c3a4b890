//! Validates every cartridge in a directory and prints its kind, id and
//! content digest. With `--canonical`, also prints the canonical JSON.
//!
//! Usage: cartridges [dir] [--canonical]

use riskd_core::cartridge::{parse_cartridge, serialize_cartridge};
use riskd_core::provenance::cartridge_digest;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let canonical = args.iter().any(|a| a == "--canonical");
    let dir = args
        .iter()
        .find(|a| !a.starts_with("--"))
        .cloned()
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/cartridges").to_string());

    let mut paths: Vec<_> = std::fs::read_dir(&dir).expect("readable directory").map(|e| e.expect("entry").path()).collect();
    paths.sort();
    let mut failures = 0;
    for path in paths.iter().filter(|p| p.extension().is_some_and(|e| e == "json")) {
        let text = std::fs::read_to_string(path).expect("readable file");
        match parse_cartridge(&text) {
            Ok(c) => {
                println!("{:<12} {:<28} {}", c.kind().as_str(), c.id(), &cartridge_digest(&c)[..16]);
                if canonical {
                    println!("{}", serialize_cartridge(&c));
                }
            }
            Err(e) => {
                failures += 1;
                println!("{}: {}: {e}", path.display(), e.code());
            }
        }
    }
    std::process::exit(i32::from(failures > 0));
}
