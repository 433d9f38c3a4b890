//! Environment-wide association scan: one weighted logistic fit per factor
//! (factor plus all controls), Benjamini-Hochberg across the factors that
//! could be fitted.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{adjust_fdr, fit_weighted_logistic, wald_test, FdrMethod, IrlsOptions};
use crate::cartridge::StudyPlan;
use crate::dataset::{apply_cohort, Dataset};
use crate::preprocess::{build_design, FactorSelection, PreprocessError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EwasHyperparams {
    pub alpha: f64,
    pub fdr_method: FdrMethod,
}

impl Default for EwasHyperparams {
    fn default() -> Self {
        Self { alpha: 0.05, fdr_method: FdrMethod::BenjaminiHochberg }
    }
}

impl EwasHyperparams {
    pub fn validate(&self) -> Result<(), (String, String)> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(("alpha".into(), "must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Risk,
    Protective,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationResult {
    pub factor: String,
    pub coefficient: f64,
    pub robust_se: f64,
    pub z: f64,
    pub p_value: f64,
    pub adjusted_p: f64,
    pub significant: bool,
    pub n_used: usize,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedFactor {
    pub factor: String,
    /// Error name, e.g. `DegenerateVariable`.
    pub reason: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EwasReport {
    /// Sorted ascending by adjusted p-value (ties keep cartridge order).
    pub results: Vec<AssociationResult>,
    pub skipped: Vec<SkippedFactor>,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EwasError {
    #[error("cohort keeps no subjects")]
    EmptyCohort,
    #[error("every factor was skipped")]
    AllFactorsSkipped(Vec<SkippedFactor>),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
}

struct Unadjusted {
    factor: String,
    coefficient: f64,
    robust_se: f64,
    z: f64,
    p_value: f64,
    n_used: usize,
}

fn fit_factor(plan: &StudyPlan, ds: &Dataset, factor: &str) -> Result<Unadjusted, SkippedFactor> {
    let skip = |reason: &str, detail: String| SkippedFactor { factor: factor.to_string(), reason: reason.into(), detail };
    let design = build_design(plan, ds, &FactorSelection::One(factor.to_string()))
        .map_err(|e| skip(e.code(), e.to_string()))?;
    let fit = fit_weighted_logistic(&design, IrlsOptions::default()).map_err(|e| skip(e.code(), e.to_string()))?;
    let k = design.column_index(factor).expect("factor column present");
    let (z, p_value) = wald_test(&fit, k).map_err(|e| skip(e.code(), e.to_string()))?;
    if !fit.robust_se[k].is_finite() || fit.robust_se[k] <= 0.0 {
        return Err(skip("Singular", "zero robust standard error".into()));
    }
    Ok(Unadjusted {
        factor: factor.to_string(),
        coefficient: fit.coefficients[k],
        robust_se: fit.robust_se[k],
        z,
        p_value,
        n_used: design.n_rows(),
    })
}

/// Runs the per-factor scan at FDR level `alpha`. Factors whose design or fit
/// fails are reported in `skipped` with the error name.
///
/// Fits run in parallel; the output is identical to serial execution.
pub fn ewas_scan(plan: &StudyPlan, ds: &Dataset, alpha: f64) -> Result<EwasReport, EwasError> {
    let (_, kept, _) = apply_cohort(ds, &plan.cohort.filter).map_err(PreprocessError::from)?;
    if kept == 0 {
        return Err(EwasError::EmptyCohort);
    }
    let method = match &plan.workflow.analysis {
        crate::cartridge::Analysis::SwglmEwas(h) => h.fdr_method,
        crate::cartridge::Analysis::Scm(_) => FdrMethod::BenjaminiHochberg,
    };
    let outcomes: Vec<Result<Unadjusted, SkippedFactor>> =
        plan.factors.par_iter().map(|f| fit_factor(plan, ds, &f.id)).collect();
    let mut fitted = Vec::new();
    let mut skipped = Vec::new();
    for o in outcomes {
        match o {
            Ok(u) => fitted.push(u),
            Err(s) => skipped.push(s),
        }
    }
    if fitted.is_empty() {
        return Err(EwasError::AllFactorsSkipped(skipped));
    }
    let p: Vec<f64> = fitted.iter().map(|u| u.p_value).collect();
    let adjusted = adjust_fdr(&p, method).expect("wald p-values lie in [0, 1]");
    let mut results: Vec<AssociationResult> = fitted
        .into_iter()
        .zip(adjusted)
        .map(|(u, adjusted_p)| AssociationResult {
            direction: if u.coefficient < 0.0 { Direction::Protective } else { Direction::Risk },
            significant: adjusted_p < alpha,
            factor: u.factor,
            coefficient: u.coefficient,
            robust_se: u.robust_se,
            z: u.z,
            p_value: u.p_value,
            adjusted_p,
            n_used: u.n_used,
        })
        .collect();
    results.sort_by(|a, b| a.adjusted_p.total_cmp(&b.adjusted_p).then(a.p_value.total_cmp(&b.p_value)));
    Ok(EwasReport { results, skipped })
}
