//! Seeded generator for NHANES-like survey extracts with planted structure.
//!
//! Subjects belong to latent cadres. Each cadre shifts the means of the
//! exposures and carries its own logistic (or linear) outcome model. One
//! cadre may be oversampled relative to its population share; the survey
//! weight is then the inverse inclusion probability of the subject's stratum.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetError, VarCategory, VarKind, VariableDef, SUBJECT_ID_VAR};

pub const GENDER_VAR: &str = "RIAGENDR";
pub const ETHNICITY_VAR: &str = "RIDRETH1";
pub const AGE_VAR: &str = "RIDAGEYR";
pub const BMI_VAR: &str = "BMXBMI";
pub const CREATININE_VAR: &str = "URXUCR";
pub const WEIGHT_VAR: &str = "WTMEC";

const ETHNICITY_LABELS: [&str; 5] =
    ["Mexican American", "Other Hispanic", "Non-Hispanic White", "Non-Hispanic Black", "Other Race"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExposureDef {
    pub id: String,
    #[serde(default)]
    pub label: String,
    #[serde(default)]
    pub unit: String,
    #[serde(default = "default_exposure_category")]
    pub category: VarCategory,
    /// Observed value is `exp(latent)` instead of the latent normal draw.
    #[serde(default)]
    pub log_scale: bool,
    #[serde(default)]
    pub ontology_term: Option<String>,
}

fn default_exposure_category() -> VarCategory {
    VarCategory::Exposure
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CadreSpec {
    /// Population share. Shares are normalized to sum to one.
    pub share: f64,
    /// Mean shift of each latent exposure; empty means no shift.
    #[serde(default)]
    pub offsets: Vec<f64>,
    #[serde(default = "half")]
    pub male_share: f64,
    /// Relative ethnicity frequencies over the five NHANES codes; empty means uniform.
    #[serde(default)]
    pub ethnicity_weights: Vec<f64>,
}

fn half() -> f64 {
    0.5
}

impl CadreSpec {
    pub fn new(share: f64) -> Self {
        Self { share, offsets: Vec::new(), male_share: 0.5, ethnicity_weights: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OutcomeKind {
    /// 0/1 binary variable drawn from the logistic model.
    Binary,
    /// Categorical with codebook {1: Yes, 2: No}.
    YesNo,
    /// Continuous `center + scale * eta + N(0, noise_sd)`.
    Continuous { center: f64, scale: f64, noise_sd: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeSpec {
    pub id: String,
    #[serde(default)]
    pub label: String,
    #[serde(default)]
    pub unit: String,
    pub kind: OutcomeKind,
    /// One intercept per cadre.
    pub intercepts: Vec<f64>,
    /// One coefficient vector per cadre, each of length P, on the latent
    /// (unit-variance) exposure scale.
    pub coefficients: Vec<Vec<f64>>,
    /// Log-odds change per decade of age above 50.
    #[serde(default)]
    pub age_effect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OversampleSpec {
    pub cadre: usize,
    /// Fraction of the sample drawn from this cadre.
    pub sample_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_subjects: usize,
    /// Declared population size; weights sum to roughly this. Defaults to
    /// 1000 subjects represented per sampled subject.
    #[serde(default)]
    pub population_size: Option<f64>,
    /// Shorthand for `exposure_1 .. exposure_P` when `exposures` is empty.
    #[serde(default)]
    pub n_exposures: usize,
    #[serde(default)]
    pub exposures: Vec<ExposureDef>,
    pub cadres: Vec<CadreSpec>,
    pub outcomes: Vec<OutcomeSpec>,
    #[serde(default)]
    pub oversample: Option<OversampleSpec>,
    /// Probability that any exposure cell is missing.
    #[serde(default)]
    pub missing_rate: f64,
    #[serde(default)]
    pub include_bmi: bool,
    #[serde(default)]
    pub include_creatinine: bool,
}

impl SyntheticSpec {
    /// `n` subjects, `p` exposures, one cadre and a binary `OUTCOME` with all
    /// coefficients zero.
    pub fn planted(n: usize, p: usize) -> Self {
        Self {
            n_subjects: n,
            population_size: None,
            n_exposures: p,
            exposures: Vec::new(),
            cadres: vec![CadreSpec::new(1.0)],
            outcomes: vec![OutcomeSpec {
                id: "OUTCOME".into(),
                label: "Planted binary outcome".into(),
                unit: String::new(),
                kind: OutcomeKind::Binary,
                intercepts: vec![0.0],
                coefficients: vec![vec![0.0; p]],
                age_effect: 0.0,
            }],
            oversample: None,
            missing_rate: 0.0,
            include_bmi: false,
            include_creatinine: false,
        }
    }

    pub fn exposure_defs(&self) -> Vec<ExposureDef> {
        if !self.exposures.is_empty() {
            return self.exposures.clone();
        }
        (1..=self.n_exposures)
            .map(|j| ExposureDef {
                id: format!("exposure_{j}"),
                label: format!("Synthetic exposure {j}"),
                unit: String::new(),
                category: VarCategory::Exposure,
                log_scale: false,
                ontology_term: None,
            })
            .collect()
    }

    fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::InvalidSpec(m));
        if self.n_subjects == 0 {
            return bad("n_subjects must be positive".into());
        }
        let p = self.exposure_defs().len();
        if self.cadres.is_empty() {
            return bad("at least one cadre is required".into());
        }
        for (c, cadre) in self.cadres.iter().enumerate() {
            if !(cadre.share > 0.0 && cadre.share.is_finite()) {
                return bad(format!("cadre {c} share must be positive"));
            }
            if !cadre.offsets.is_empty() && cadre.offsets.len() != p {
                return bad(format!("cadre {c} has {} offsets, expected {p}", cadre.offsets.len()));
            }
            if !(0.0..=1.0).contains(&cadre.male_share) {
                return bad(format!("cadre {c} male_share outside [0, 1]"));
            }
            if !cadre.ethnicity_weights.is_empty()
                && (cadre.ethnicity_weights.len() != 5 || cadre.ethnicity_weights.iter().any(|w| *w < 0.0))
            {
                return bad(format!("cadre {c} needs five non-negative ethnicity weights"));
            }
        }
        for o in &self.outcomes {
            if o.intercepts.len() != self.cadres.len() || o.coefficients.len() != self.cadres.len() {
                return bad(format!("outcome `{}` needs one intercept and coefficient vector per cadre", o.id));
            }
            if let Some(c) = o.coefficients.iter().position(|b| b.len() != p) {
                return bad(format!("outcome `{}` cadre {c}: coefficient length must equal {p}", o.id));
            }
        }
        if let Some(os) = &self.oversample {
            if os.cadre >= self.cadres.len() {
                return bad("oversampled cadre index out of range".into());
            }
            if !(os.sample_share > 0.0 && os.sample_share < 1.0) && self.cadres.len() > 1 {
                return bad("oversample sample_share must lie in (0, 1)".into());
            }
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return bad("missing_rate must lie in [0, 1)".into());
        }
        Ok(())
    }

    fn population_shares(&self) -> Vec<f64> {
        let total: f64 = self.cadres.iter().map(|c| c.share).sum();
        self.cadres.iter().map(|c| c.share / total).collect()
    }

    fn sample_shares(&self) -> Vec<f64> {
        let pop = self.population_shares();
        match &self.oversample {
            Some(os) if pop.len() > 1 => {
                let rest = 1.0 - pop[os.cadre];
                pop.iter()
                    .enumerate()
                    .map(|(c, &p)| if c == os.cadre { os.sample_share } else { p * (1.0 - os.sample_share) / rest })
                    .collect()
            }
            _ => pop,
        }
    }
}

/// Generator output: the dataset plus the planted truth for test oracles.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub truth: GroundTruth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Planted cadre of each row.
    pub cadre_labels: Vec<usize>,
    /// outcome id -> per-cadre coefficient vectors.
    pub coefficients: BTreeMap<String, Vec<Vec<f64>>>,
    /// Population mean of each exposure on its observed scale.
    pub population_means: BTreeMap<String, f64>,
    pub population_shares: Vec<f64>,
}

fn draw_index(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, p) in probs.iter().enumerate() {
        if u < *p {
            return i;
        }
        u -= p;
    }
    probs.len() - 1
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn continuous(id: &str, label: &str, unit: &str, category: VarCategory) -> VariableDef {
    VariableDef {
        id: id.into(),
        label: label.into(),
        kind: VarKind::Continuous,
        unit: unit.into(),
        codebook: BTreeMap::new(),
        ontology_term: None,
        category,
    }
}

fn dictionary(spec: &SyntheticSpec, exposures: &[ExposureDef]) -> Vec<VariableDef> {
    let mut dict = vec![
        continuous(SUBJECT_ID_VAR, "Respondent sequence number", "", VarCategory::Demographic),
        VariableDef {
            id: GENDER_VAR.into(),
            label: "Gender".into(),
            kind: VarKind::Categorical,
            unit: String::new(),
            codebook: [("1", "Male"), ("2", "Female")].iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            ontology_term: None,
            category: VarCategory::Demographic,
        },
        VariableDef {
            id: ETHNICITY_VAR.into(),
            label: "Race/Hispanic origin".into(),
            kind: VarKind::Categorical,
            unit: String::new(),
            codebook: ETHNICITY_LABELS.iter().enumerate().map(|(i, l)| ((i + 1).to_string(), l.to_string())).collect(),
            ontology_term: None,
            category: VarCategory::Demographic,
        },
        continuous(AGE_VAR, "Age at screening", "years", VarCategory::Demographic),
    ];
    if spec.include_bmi {
        dict.push(continuous(BMI_VAR, "Body mass index", "kg/m**2", VarCategory::Demographic));
    }
    for e in exposures {
        let mut v = continuous(&e.id, if e.label.is_empty() { &e.id } else { &e.label }, &e.unit, e.category);
        v.ontology_term = e.ontology_term.clone();
        dict.push(v);
    }
    if spec.include_creatinine {
        let mut v = continuous(CREATININE_VAR, "Creatinine, urine", "mg/dL", VarCategory::Laboratory);
        v.ontology_term = Some("CHEBI:16737".into());
        dict.push(v);
    }
    for o in &spec.outcomes {
        let label = if o.label.is_empty() { o.id.clone() } else { o.label.clone() };
        let (kind, codebook) = match o.kind {
            OutcomeKind::Binary => (VarKind::Binary, BTreeMap::new()),
            OutcomeKind::YesNo => (
                VarKind::Categorical,
                [("1", "Yes"), ("2", "No")].iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            ),
            OutcomeKind::Continuous { .. } => (VarKind::Continuous, BTreeMap::new()),
        };
        dict.push(VariableDef {
            id: o.id.clone(),
            label,
            kind,
            unit: o.unit.clone(),
            codebook,
            ontology_term: None,
            category: VarCategory::Outcome,
        });
    }
    dict.push(continuous(WEIGHT_VAR, "Full sample MEC exam weight", "", VarCategory::Weight));
    dict
}

/// Generates a dataset from `spec`. Bitwise deterministic for a fixed
/// `(spec, seed)`.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticData, DatasetError> {
    spec.validate()?;
    let exposures = spec.exposure_defs();
    let p = exposures.len();
    let pop_shares = spec.population_shares();
    let sample_shares = spec.sample_shares();
    let population_size = spec.population_size.unwrap_or(1000.0 * spec.n_subjects as f64);
    let n = spec.n_subjects;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = draw_index(&mut rng, &sample_shares);
        let cadre = &spec.cadres[c];
        let mut row = vec![Some((i + 1) as f64)];
        let male = rng.random::<f64>() < cadre.male_share;
        row.push(Some(if male { 1.0 } else { 2.0 }));
        let eth_weights = if cadre.ethnicity_weights.is_empty() { vec![1.0; 5] } else { cadre.ethnicity_weights.clone() };
        row.push(Some((draw_index(&mut rng, &eth_weights) + 1) as f64));
        let age = (20.0 + 60.0 * rng.random::<f64>()).floor();
        row.push(Some(age));
        if spec.include_bmi {
            row.push(Some(((28.0 + 5.0 * normal(&mut rng)).max(15.0) * 10.0).round() / 10.0));
        }
        let latent: Vec<f64> = (0..p)
            .map(|j| cadre.offsets.get(j).copied().unwrap_or(0.0) + normal(&mut rng))
            .collect();
        for (e, u) in exposures.iter().zip(&latent) {
            let observed = if e.log_scale { u.exp() } else { *u };
            let missing = spec.missing_rate > 0.0 && rng.random::<f64>() < spec.missing_rate;
            row.push(if missing { None } else { Some(observed) });
        }
        if spec.include_creatinine {
            row.push(Some((4.6 + 0.6 * normal(&mut rng)).exp()));
        }
        for o in &spec.outcomes {
            let eta = o.intercepts[c]
                + o.coefficients[c].iter().zip(&latent).map(|(b, u)| b * u).sum::<f64>()
                + o.age_effect * (age - 50.0) / 10.0;
            let value = match o.kind {
                OutcomeKind::Binary => f64::from(u8::from(rng.random::<f64>() < sigmoid(eta))),
                OutcomeKind::YesNo => {
                    if rng.random::<f64>() < sigmoid(eta) {
                        1.0
                    } else {
                        2.0
                    }
                }
                OutcomeKind::Continuous { center, scale, noise_sd } => {
                    center + scale * eta + noise_sd * normal(&mut rng)
                }
            };
            row.push(Some(value));
        }
        row.push(Some(population_size * pop_shares[c] / (n as f64 * sample_shares[c])));
        rows.push(row);
        labels.push(c);
    }

    let dict = dictionary(spec, &exposures);
    let subject_ids = (1..=n).map(|i| i.to_string()).collect();
    let dataset = Dataset::new(dict, rows, subject_ids, WEIGHT_VAR)?;

    let population_means = exposures
        .iter()
        .enumerate()
        .map(|(j, e)| {
            let mean: f64 = spec
                .cadres
                .iter()
                .zip(&pop_shares)
                .map(|(cadre, share)| {
                    let mu = cadre.offsets.get(j).copied().unwrap_or(0.0);
                    share * if e.log_scale { (mu + 0.5).exp() } else { mu }
                })
                .sum();
            (e.id.clone(), mean)
        })
        .collect();
    let coefficients = spec.outcomes.iter().map(|o| (o.id.clone(), o.coefficients.clone())).collect();
    Ok(SyntheticData {
        dataset,
        truth: GroundTruth { cadre_labels: labels, coefficients, population_means, population_shares: pop_shares },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let mut spec = SyntheticSpec::planted(300, 4);
        spec.missing_rate = 0.1;
        let a = generate_synthetic(&spec, 7).unwrap();
        let b = generate_synthetic(&spec, 7).unwrap();
        assert_eq!(a, b);
        for (ra, rb) in a.dataset.rows().iter().zip(b.dataset.rows()) {
            for (x, y) in ra.iter().zip(rb) {
                assert_eq!(x.map(f64::to_bits), y.map(f64::to_bits));
            }
        }
        let c = generate_synthetic(&spec, 8).unwrap();
        assert_ne!(a.dataset, c.dataset);
    }

    #[test]
    fn invalid_specs() {
        let mut spec = SyntheticSpec::planted(0, 2);
        assert!(matches!(generate_synthetic(&spec, 1), Err(DatasetError::InvalidSpec(_))));
        spec.n_subjects = 10;
        spec.outcomes[0].coefficients[0] = vec![1.0];
        assert!(matches!(generate_synthetic(&spec, 1), Err(DatasetError::InvalidSpec(_))));
    }

    #[test]
    fn zero_coefficients_give_even_prevalence() {
        let n = 4000;
        let data = generate_synthetic(&SyntheticSpec::planted(n, 3), 11).unwrap();
        let y = data.dataset.column("OUTCOME").unwrap();
        let prevalence = y.iter().map(|v| v.unwrap()).sum::<f64>() / n as f64;
        let sigma = (0.25 / n as f64).sqrt();
        assert!((prevalence - 0.5).abs() < 3.0 * sigma, "prevalence {prevalence}");
    }

    #[test]
    fn oversampling_weights_are_inverse_inclusion() {
        let mut spec = SyntheticSpec::planted(2000, 2);
        spec.cadres = vec![CadreSpec::new(0.9), CadreSpec::new(0.1)];
        spec.outcomes[0].intercepts = vec![0.0, 0.0];
        spec.outcomes[0].coefficients = vec![vec![0.0; 2]; 2];
        spec.oversample = Some(OversampleSpec { cadre: 1, sample_share: 0.5 });
        spec.population_size = Some(1e6);
        let data = generate_synthetic(&spec, 3).unwrap();
        let w = data.dataset.weights();
        for (wi, &c) in w.iter().zip(&data.truth.cadre_labels) {
            let expected = if c == 1 { 1e6 * 0.1 / (2000.0 * 0.5) } else { 1e6 * 0.9 / (2000.0 * 0.5) };
            assert!((wi - expected).abs() < 1e-9);
        }
        let minority = data.truth.cadre_labels.iter().filter(|&&c| c == 1).count() as f64 / 2000.0;
        assert!((minority - 0.5).abs() < 0.05);
    }
}
