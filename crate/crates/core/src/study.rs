//! Running a resolved study end to end.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cartridge::{
    resolve_study, Analysis, Axiom, CohortCartridge, PositiveRule, ResolveError, ResponseCartridge,
    RiskFactorCartridge, StudyPlan, WorkflowCartridge,
};
use crate::dataset::{CohortFilter, Dataset};
use crate::preprocess::{build_design, FactorSelection, PreprocessError};
use crate::scm::{
    cadre_summaries, per_cadre_association, train_scm, CadreAssociation, CadreSummary, ScmError, ScmModel,
};
use crate::swglm::{ewas_scan, EwasError, EwasReport};

/// The four component cartridges of a study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyCartridges {
    pub response: ResponseCartridge,
    pub cohort: CohortCartridge,
    pub risk_factors: Vec<RiskFactorCartridge>,
    pub workflow: WorkflowCartridge,
}

impl StudyCartridges {
    /// A study over the whole dataset with one factor set and an unfiltered
    /// cohort. Cartridge ids are derived from `name`.
    pub fn simple(
        name: &str,
        response_var: &str,
        positive_rule: PositiveRule,
        factors: &[&str],
        controls: &[&str],
        preprocessing: Vec<Axiom>,
        analysis: Analysis,
    ) -> Self {
        Self {
            response: ResponseCartridge {
                id: format!("{name}-response"),
                disease_label: response_var.to_string(),
                response_var: response_var.to_string(),
                positive_rule,
                required_controls: controls.iter().map(|s| s.to_string()).collect(),
                domain_axioms: Vec::new(),
            },
            cohort: CohortCartridge {
                id: format!("{name}-cohort"),
                label: "All subjects".into(),
                filter: CohortFilter::default(),
            },
            risk_factors: vec![RiskFactorCartridge {
                id: format!("{name}-factors"),
                category: "exposure".into(),
                factors: factors.iter().map(|s| s.to_string()).collect(),
                per_factor_axioms: Default::default(),
            }],
            workflow: WorkflowCartridge {
                id: format!("{name}-workflow"),
                label: String::new(),
                preprocessing,
                analysis,
            },
        }
    }

    pub fn resolve(&self, ds: &Dataset) -> Result<StudyPlan, ResolveError> {
        resolve_study(&self.response, &self.cohort, &self.risk_factors, &self.workflow, ds)
    }
}

/// Output of a cadre-model study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CadreAnalysis {
    pub model: ScmModel,
    /// Dataset row of each design row, aligned with `model.assignments`.
    pub rows: Vec<usize>,
    pub summaries: Vec<CadreSummary>,
    pub associations: Vec<CadreAssociation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum Findings {
    #[serde(rename = "swglm-ewas")]
    Ewas(EwasReport),
    Scm(CadreAnalysis),
}

impl Findings {
    pub fn method_name(&self) -> &'static str {
        match self {
            Findings::Ewas(_) => "swglm-ewas",
            Findings::Scm(_) => "scm",
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum StudyError {
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Ewas(#[from] EwasError),
    #[error(transparent)]
    Scm(#[from] ScmError),
}

impl StudyError {
    pub fn code(&self) -> String {
        match self {
            StudyError::Preprocess(e) => e.code().to_string(),
            StudyError::Ewas(EwasError::EmptyCohort) => "EmptyCohort".into(),
            StudyError::Ewas(EwasError::AllFactorsSkipped(_)) => "AllFactorsSkipped".into(),
            StudyError::Ewas(EwasError::Preprocess(e)) => e.code().to_string(),
            StudyError::Scm(e) => match e {
                ScmError::DimensionMismatch { .. } => "DimensionMismatch",
                ScmError::EmptyBatch => "EmptyBatch",
                ScmError::NonBinaryLabel { .. } => "NonBinaryLabel",
                ScmError::DivergedLoss { .. } => "DivergedLoss",
                ScmError::InvalidParams(_) => "InvalidParams",
                ScmError::InvalidHyperparams { .. } => "InvalidHyperparams",
            }
            .into(),
        }
    }
}

/// Executes the plan's analysis. `progress` receives `(epoch, loss)` for
/// cadre models and is not called for association scans.
pub fn run_study(plan: &StudyPlan, ds: &Dataset, mut progress: impl FnMut(usize, f64)) -> Result<Findings, StudyError> {
    match &plan.workflow.analysis {
        Analysis::SwglmEwas(h) => Ok(Findings::Ewas(ewas_scan(plan, ds, h.alpha)?)),
        Analysis::Scm(h) => {
            let design = build_design(plan, ds, &FactorSelection::All)?;
            let model = train_scm(&design, h, &mut progress)?;
            let summaries = cadre_summaries(&design, ds, &model.assignments, h.cadres);
            let associations = per_cadre_association(plan, ds, &design, &model.assignments, h.cadres, h.alpha);
            Ok(Findings::Scm(CadreAnalysis { rows: design.rows.clone(), model, summaries, associations }))
        }
    }
}
