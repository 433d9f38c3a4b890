//! Draws a sample that oversamples a high-slope stratum and compares the
//! survey-weighted and unweighted exposure slopes with the population slope.
//!
//! Usage: survey_weights [seed]

use riskd_core::cartridge::{Analysis, PositiveRule};
use riskd_core::dataset::{generate_synthetic, CadreSpec, OversampleSpec, SyntheticSpec};
use riskd_core::preprocess::{build_design, FactorSelection};
use riskd_core::swglm::{fit_logistic, EwasHyperparams, IrlsOptions};
use riskd_core::study::StudyCartridges;

fn spec(n: usize, oversample: bool) -> SyntheticSpec {
    let mut spec = SyntheticSpec::planted(n, 1);
    spec.cadres = vec![CadreSpec::new(0.8), CadreSpec::new(0.2)];
    spec.outcomes[0].intercepts = vec![-0.5, -0.5];
    spec.outcomes[0].coefficients = vec![vec![0.2], vec![1.5]];
    spec.oversample = oversample.then_some(OversampleSpec { cadre: 1, sample_share: 0.6 });
    spec
}

fn slopes(n: usize, oversample: bool, seed: u64) -> (f64, f64) {
    let ds = generate_synthetic(&spec(n, oversample), seed).expect("valid spec").dataset;
    let plan = StudyCartridges::simple(
        "survey",
        "OUTCOME",
        PositiveRule::Codes { codes: vec![1.0] },
        &["exposure_1"],
        &[],
        Vec::new(),
        Analysis::SwglmEwas(EwasHyperparams::default()),
    )
    .resolve(&ds)
    .expect("study resolves");
    let d = build_design(&plan, &ds, &FactorSelection::All).expect("design");
    let fit = |w: &[f64]| fit_logistic(&d.values, &d.response, w, IrlsOptions::default()).expect("irls").coefficients[1];
    (fit(&d.weights), fit(&vec![1.0; d.n_rows()]))
}

fn main() {
    let seed: u64 = std::env::args().nth(1).map_or(1, |s| s.parse().expect("seed must be an integer"));
    let (population, _) = slopes(100_000, false, 99);
    let (weighted, unweighted) = slopes(3000, true, seed);
    println!("population slope  {population:.3}");
    println!("weighted sample   {weighted:.3}  (error {:.3})", (weighted - population).abs());
    println!("unweighted sample {unweighted:.3}  (error {:.3})", (unweighted - population).abs());
}
