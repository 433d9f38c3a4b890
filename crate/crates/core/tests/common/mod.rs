#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use riskd_core::cartridge::{Analysis, Axiom, PositiveRule, StudyPlan};
use riskd_core::dataset::{generate_synthetic, CadreSpec, SyntheticData, SyntheticSpec};
use riskd_core::scm::{CadreModelParams, ElasticNet, ScmHyperparams};
use riskd_core::study::StudyCartridges;
use riskd_core::swglm::EwasHyperparams;

pub fn exposure_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("exposure_{j}")).collect()
}

/// Two equal-share cadres; cadre 1 is shifted by `offset` in exposure 1.
pub fn two_cadre_spec(n: usize, p: usize, offset: f64, coef_a: Vec<f64>, coef_b: Vec<f64>) -> SyntheticSpec {
    let mut spec = SyntheticSpec::planted(n, p);
    let mut a = CadreSpec::new(0.5);
    a.offsets = vec![0.0; p];
    let mut b = CadreSpec::new(0.5);
    b.offsets = vec![0.0; p];
    b.offsets[0] = offset;
    spec.cadres = vec![a, b];
    spec.outcomes[0].intercepts = vec![0.0, 0.0];
    spec.outcomes[0].coefficients = vec![coef_a, coef_b];
    spec
}

pub fn unit_coef(p: usize, j: usize, value: f64) -> Vec<f64> {
    let mut v = vec![0.0; p];
    v[j] = value;
    v
}

pub fn planted_cadres(seed: u64, n: usize, p: usize, offset: f64, coef_a: Vec<f64>, coef_b: Vec<f64>) -> SyntheticData {
    generate_synthetic(&two_cadre_spec(n, p, offset, coef_a, coef_b), seed).expect("valid synthetic spec")
}

pub fn scm_hyperparams(cadres: usize, seed: u64) -> ScmHyperparams {
    ScmHyperparams {
        cadres,
        gamma: 0.1,
        learning_rate: 0.5,
        epochs: 30,
        batch_size: 100,
        lambda_w: ElasticNet::new(0.0, 0.0),
        lambda_d: ElasticNet::new(0.003, 0.0),
        seed,
        alpha: 0.05,
        restarts: 5,
    }
}

pub fn ewas_analysis(alpha: f64) -> Analysis {
    Analysis::SwglmEwas(EwasHyperparams { alpha, ..EwasHyperparams::default() })
}

/// Study of the binary `OUTCOME` against the given exposures with
/// standardization.
pub fn outcome_study(ds: &riskd_core::dataset::Dataset, factors: &[String], analysis: Analysis) -> StudyPlan {
    let refs: Vec<&str> = factors.iter().map(String::as_str).collect();
    StudyCartridges::simple(
        "synthetic",
        "OUTCOME",
        PositiveRule::Codes { codes: vec![1.0] },
        &refs,
        &[],
        vec![Axiom::Standardize],
        analysis,
    )
    .resolve(ds)
    .expect("study resolves")
}

/// Fraction of rows whose label agrees with the assignment, maximized over
/// the two possible label swaps.
pub fn two_cadre_accuracy(truth: &[usize], assigned: &[usize]) -> f64 {
    let agree = truth.iter().zip(assigned).filter(|(t, a)| t == a).count();
    agree.max(truth.len() - agree) as f64 / truth.len() as f64
}

/// Plain Newton-Raphson for weighted logistic regression; no step control.
pub fn newton_logistic(x: &DMatrix<f64>, y: &[f64], w: &[f64]) -> Vec<f64> {
    let (n, k) = x.shape();
    let mut beta = DVector::zeros(k);
    for _ in 0..100 {
        let eta = x * &beta;
        let mut grad = DVector::zeros(k);
        let mut hess = DMatrix::zeros(k, k);
        for i in 0..n {
            let mu = 1.0 / (1.0 + (-eta[i]).exp());
            let row = x.row(i).transpose();
            grad += &row * (w[i] * (y[i] - mu));
            hess += &row * row.transpose() * (w[i] * mu * (1.0 - mu));
        }
        let delta = hess.lu().solve(&grad).expect("nonsingular Hessian");
        beta += &delta;
        if delta.amax() < 1e-13 {
            break;
        }
    }
    beta.iter().copied().collect()
}

/// Logistic data with standard normal covariates and an intercept column.
pub fn logistic_data(seed: u64, n: usize, beta: &[f64]) -> (DMatrix<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = beta.len();
    let x = DMatrix::from_fn(n, k, |_, j| if j == 0 { 1.0 } else { StandardNormal.sample(&mut rng) });
    let y = (0..n)
        .map(|i| {
            let eta: f64 = (0..k).map(|j| x[(i, j)] * beta[j]).sum();
            f64::from(u8::from(rng.random::<f64>() < 1.0 / (1.0 + (-eta).exp())))
        })
        .collect();
    (x, y)
}

/// Random model parameters with entries of magnitude at least `floor` in
/// the expert weights and seminorm diagonal.
pub fn random_params(rng: &mut ChaCha8Rng, m: usize, p: usize, floor: f64) -> CadreModelParams {
    let away = |rng: &mut ChaCha8Rng| {
        let v: f64 = StandardNormal.sample(rng);
        if v.abs() < floor {
            floor.copysign(v)
        } else {
            v
        }
    };
    let centers = (0..m).map(|_| (0..p).map(|_| StandardNormal.sample(rng)).collect()).collect();
    let mut params = CadreModelParams::new(centers, rng.random_range(0.2..2.0)).unwrap();
    params.expert_weights = (0..m).map(|_| (0..p).map(|_| away(rng)).collect()).collect();
    params.expert_bias = (0..m).map(|_| StandardNormal.sample(rng)).collect();
    params.seminorm_diag = (0..p).map(|_| away(rng)).collect();
    params
}

/// Two strata with population shares 0.8 / 0.2 and different slopes on
/// exposure 1; when `oversample` is set, stratum 1 makes up 60% of the
/// sample and weights compensate.
pub fn survey_spec(n: usize, oversample: bool) -> SyntheticSpec {
    let mut spec = SyntheticSpec::planted(n, 2);
    spec.cadres = vec![CadreSpec::new(0.8), CadreSpec::new(0.2)];
    spec.outcomes[0].intercepts = vec![-0.5, -0.5];
    spec.outcomes[0].coefficients = vec![vec![0.2, 0.0], vec![1.5, 0.0]];
    if oversample {
        spec.oversample = Some(riskd_core::dataset::OversampleSpec { cadre: 1, sample_share: 0.6 });
    }
    spec
}

/// Study on raw (untransformed) exposures.
pub fn raw_study(ds: &riskd_core::dataset::Dataset, factors: &[String]) -> StudyPlan {
    let refs: Vec<&str> = factors.iter().map(String::as_str).collect();
    StudyCartridges::simple(
        "raw",
        "OUTCOME",
        PositiveRule::Codes { codes: vec![1.0] },
        &refs,
        &[],
        Vec::new(),
        ewas_analysis(0.05),
    )
    .resolve(ds)
    .expect("study resolves")
}

/// One planted factor (exposure_1, coefficient `beta`) among `p` exposures.
pub fn planted_factor_spec(n: usize, p: usize, beta: f64) -> SyntheticSpec {
    let mut spec = SyntheticSpec::planted(n, p);
    spec.outcomes[0].intercepts = vec![-0.3];
    spec.outcomes[0].coefficients = vec![unit_coef(p, 0, beta)];
    spec
}
