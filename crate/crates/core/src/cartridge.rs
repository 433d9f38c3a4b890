//! Study cartridges: declarative JSON documents for the response, the cohort,
//! the risk factor sets and the analysis workflow, and their resolution into
//! an executable [`StudyPlan`].
//!
//! Every cartridge document is a JSON object with a `"kind"` discriminator
//! (`response`, `cohort`, `risk-factor` or `workflow`) and an `"id"`. Unknown
//! keys are rejected. The canonical form sorts keys and carries no
//! insignificant whitespace, so equal cartridges serialize to equal bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::dataset::{apply_cohort, CohortFilter, Comparator, Dataset, DatasetError, VarKind};
use crate::scm::ScmHyperparams;
use crate::swglm::EwasHyperparams;

/// Variable id of urinary creatinine.
pub const CREATININE_VAR: &str = "URXUCR";

/// Version of the closed axiom vocabulary below.
pub const AXIOM_VOCABULARY_VERSION: &str = "1";

/// Workflow and domain axioms understood by the engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axiom {
    Standardize,
    LogTransform,
    CreatinineControl,
    CompleteCase,
    /// Marks a urinary measurement; such factors are creatinine-adjusted
    /// when the study asks for creatinine control.
    Urinary,
}

impl Axiom {
    pub const ALL: [Axiom; 5] =
        [Axiom::Standardize, Axiom::LogTransform, Axiom::CreatinineControl, Axiom::CompleteCase, Axiom::Urinary];

    pub fn tag(self) -> &'static str {
        match self {
            Axiom::Standardize => "standardize",
            Axiom::LogTransform => "log-transform",
            Axiom::CreatinineControl => "creatinine-control",
            Axiom::CompleteCase => "complete-case",
            Axiom::Urinary => "urinary",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Axiom> {
        Axiom::ALL.into_iter().find(|a| a.tag() == tag)
    }

    /// Whether the axiom may appear in a workflow's preprocessing list.
    pub fn is_workflow_step(self) -> bool {
        self != Axiom::Urinary
    }

    /// Whether the axiom rewrites a variable's values.
    pub fn is_value_transform(self) -> bool {
        matches!(self, Axiom::Standardize | Axiom::LogTransform)
    }
}

impl fmt::Display for Axiom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CartridgeError {
    #[error("malformed cartridge: {0}")]
    MalformedCartridge(String),
    #[error("schema violation at `{field}`: {message}")]
    SchemaViolation { field: String, message: String },
    #[error("unknown axiom tag `{0}`")]
    UnknownAxiom(String),
}

impl CartridgeError {
    pub fn code(&self) -> &'static str {
        match self {
            CartridgeError::MalformedCartridge(_) => "MalformedCartridge",
            CartridgeError::SchemaViolation { .. } => "SchemaViolation",
            CartridgeError::UnknownAxiom(_) => "UnknownAxiom",
        }
    }

    fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        CartridgeError::SchemaViolation { field: field.into(), message: message.into() }
    }
}

/// How the response variable is binarized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PositiveRule {
    /// `value op threshold` is a positive case.
    Threshold { op: Comparator, value: f64 },
    /// Membership in a code set is a positive case.
    Codes { codes: Vec<f64> },
}

impl PositiveRule {
    pub fn is_positive(&self, v: f64) -> bool {
        match self {
            PositiveRule::Threshold { op, value } => op.holds(v, *value),
            PositiveRule::Codes { codes } => codes.contains(&v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseCartridge {
    pub id: String,
    pub disease_label: String,
    pub response_var: String,
    pub positive_rule: PositiveRule,
    #[serde(default)]
    pub required_controls: Vec<String>,
    #[serde(default)]
    pub domain_axioms: Vec<Axiom>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortCartridge {
    pub id: String,
    pub label: String,
    pub filter: CohortFilter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskFactorCartridge {
    pub id: String,
    pub category: String,
    pub factors: Vec<String>,
    #[serde(default)]
    pub per_factor_axioms: BTreeMap<String, Vec<Axiom>>,
}

impl RiskFactorCartridge {
    pub fn axioms(&self, factor: &str) -> &[Axiom] {
        self.per_factor_axioms.get(factor).map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Analysis {
    SwglmEwas(EwasHyperparams),
    Scm(ScmHyperparams),
}

impl Analysis {
    pub fn method(&self) -> Method {
        match self {
            Analysis::SwglmEwas(_) => Method::SwglmEwas,
            Analysis::Scm(_) => Method::Scm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "swglm-ewas")]
    SwglmEwas,
    #[serde(rename = "scm")]
    Scm,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::SwglmEwas => "swglm-ewas",
            Method::Scm => "scm",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWorkflow", into = "RawWorkflow")]
pub struct WorkflowCartridge {
    pub id: String,
    pub label: String,
    pub preprocessing: Vec<Axiom>,
    pub analysis: Analysis,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWorkflow {
    id: String,
    #[serde(default)]
    label: String,
    preprocessing: Vec<Axiom>,
    method: Method,
    hyperparams: Value,
}

impl TryFrom<RawWorkflow> for WorkflowCartridge {
    type Error = String;

    fn try_from(raw: RawWorkflow) -> Result<Self, String> {
        fn typed<T: DeserializeOwned>(v: Value) -> Result<T, String> {
            serde_path_to_error::deserialize(v).map_err(|e| e.inner().to_string())
        }
        let analysis = match raw.method {
            Method::SwglmEwas => Analysis::SwglmEwas(typed(raw.hyperparams)?),
            Method::Scm => Analysis::Scm(typed(raw.hyperparams)?),
        };
        Ok(WorkflowCartridge { id: raw.id, label: raw.label, preprocessing: raw.preprocessing, analysis })
    }
}

impl From<WorkflowCartridge> for RawWorkflow {
    fn from(w: WorkflowCartridge) -> Self {
        let (method, hyperparams) = match &w.analysis {
            Analysis::SwglmEwas(h) => (Method::SwglmEwas, serde_json::to_value(h)),
            Analysis::Scm(h) => (Method::Scm, serde_json::to_value(h)),
        };
        RawWorkflow {
            id: w.id,
            label: w.label,
            preprocessing: w.preprocessing,
            method,
            hyperparams: hyperparams.expect("hyperparameters serialize"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CartridgeKind {
    Response,
    Cohort,
    RiskFactor,
    Workflow,
}

impl CartridgeKind {
    pub const ALL: [CartridgeKind; 4] =
        [CartridgeKind::Response, CartridgeKind::Cohort, CartridgeKind::RiskFactor, CartridgeKind::Workflow];

    pub fn as_str(self) -> &'static str {
        match self {
            CartridgeKind::Response => "response",
            CartridgeKind::Cohort => "cohort",
            CartridgeKind::RiskFactor => "risk-factor",
            CartridgeKind::Workflow => "workflow",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for CartridgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A parsed cartridge of any input kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Cartridge {
    Response(ResponseCartridge),
    Cohort(CohortCartridge),
    RiskFactor(RiskFactorCartridge),
    Workflow(WorkflowCartridge),
}

impl Cartridge {
    pub fn kind(&self) -> CartridgeKind {
        match self {
            Cartridge::Response(_) => CartridgeKind::Response,
            Cartridge::Cohort(_) => CartridgeKind::Cohort,
            Cartridge::RiskFactor(_) => CartridgeKind::RiskFactor,
            Cartridge::Workflow(_) => CartridgeKind::Workflow,
        }
    }

    pub fn id(&self) -> &str {
        match self {
            Cartridge::Response(c) => &c.id,
            Cartridge::Cohort(c) => &c.id,
            Cartridge::RiskFactor(c) => &c.id,
            Cartridge::Workflow(c) => &c.id,
        }
    }

    /// The document as a JSON value, `kind` included.
    pub fn to_value(&self) -> Value {
        let body = match self {
            Cartridge::Response(c) => serde_json::to_value(c),
            Cartridge::Cohort(c) => serde_json::to_value(c),
            Cartridge::RiskFactor(c) => serde_json::to_value(c),
            Cartridge::Workflow(c) => serde_json::to_value(c),
        }
        .expect("cartridges serialize");
        let mut map = match body {
            Value::Object(m) => m,
            _ => unreachable!("cartridges serialize to objects"),
        };
        map.insert("kind".into(), Value::String(self.kind().as_str().into()));
        Value::Object(map)
    }

    pub fn validate(&self) -> Result<(), CartridgeError> {
        let non_empty = |field: &str, v: &str| {
            if v.trim().is_empty() {
                Err(CartridgeError::schema(field, "must not be empty"))
            } else {
                Ok(())
            }
        };
        non_empty("id", self.id())?;
        match self {
            Cartridge::Response(r) => {
                non_empty("response_var", &r.response_var)?;
                non_empty("disease_label", &r.disease_label)?;
                if r.required_controls.contains(&r.response_var) {
                    return Err(CartridgeError::schema("required_controls", "must not include the response variable"));
                }
                if has_duplicates(&r.required_controls) {
                    return Err(CartridgeError::schema("required_controls", "duplicate control"));
                }
                match &r.positive_rule {
                    PositiveRule::Codes { codes } if codes.is_empty() => {
                        return Err(CartridgeError::schema("positive_rule", "code set must not be empty"))
                    }
                    PositiveRule::Threshold { op: Comparator::In, .. } => {
                        return Err(CartridgeError::schema("positive_rule", "threshold rules need a scalar comparator"))
                    }
                    PositiveRule::Threshold { value, .. } if !value.is_finite() => {
                        return Err(CartridgeError::schema("positive_rule", "threshold must be finite"))
                    }
                    _ => {}
                }
            }
            Cartridge::Cohort(c) => {
                c.filter.validate_shape().map_err(|m| CartridgeError::schema("filter", m))?;
            }
            Cartridge::RiskFactor(f) => {
                if f.factors.is_empty() {
                    return Err(CartridgeError::schema("factors", "must not be empty"));
                }
                if has_duplicates(&f.factors) {
                    return Err(CartridgeError::schema("factors", "factors must be unique"));
                }
                if let Some(k) = f.per_factor_axioms.keys().find(|k| !f.factors.contains(k)) {
                    return Err(CartridgeError::schema("per_factor_axioms", format!("`{k}` is not a listed factor")));
                }
                for axioms in f.per_factor_axioms.values() {
                    if axioms.contains(&Axiom::CompleteCase) {
                        return Err(CartridgeError::schema("per_factor_axioms", "complete-case is a workflow step"));
                    }
                }
            }
            Cartridge::Workflow(w) => {
                if let Some(a) = w.preprocessing.iter().find(|a| !a.is_workflow_step()) {
                    return Err(CartridgeError::schema("preprocessing", format!("`{a}` is not a workflow step")));
                }
                if has_duplicates(&w.preprocessing) {
                    return Err(CartridgeError::schema("preprocessing", "duplicate step"));
                }
                match &w.analysis {
                    Analysis::Scm(h) => h.validate().map_err(|(f, m)| CartridgeError::schema(f, m))?,
                    Analysis::SwglmEwas(h) => h.validate().map_err(|(f, m)| CartridgeError::schema(f, m))?,
                }
            }
        }
        Ok(())
    }
}

fn has_duplicates<T: Ord>(items: &[T]) -> bool {
    items.iter().collect::<BTreeSet<_>>().len() != items.len()
}

fn schema_error(err: serde_path_to_error::Error<serde_json::Error>) -> CartridgeError {
    let message = err.inner().to_string();
    // Workflow hyperparameters are parsed inside a `try_from` conversion, so
    // their field names only survive in serde's message text.
    let named = message.contains("missing field") || message.contains("unknown field");
    let field = match message.split('`').nth(1) {
        Some(q) if named => q.to_string(),
        _ => err.path().to_string(),
    };
    CartridgeError::SchemaViolation { field, message }
}

fn check_axioms(value: &Value) -> Result<(), CartridgeError> {
    let check = |v: &Value| -> Result<(), CartridgeError> {
        if let Value::Array(items) = v {
            for item in items {
                if let Value::String(tag) = item {
                    if Axiom::from_tag(tag).is_none() {
                        return Err(CartridgeError::UnknownAxiom(tag.clone()));
                    }
                }
            }
        }
        Ok(())
    };
    if let Some(v) = value.get("domain_axioms") {
        check(v)?;
    }
    if let Some(v) = value.get("preprocessing") {
        check(v)?;
    }
    if let Some(Value::Object(m)) = value.get("per_factor_axioms") {
        for v in m.values() {
            check(v)?;
        }
    }
    Ok(())
}

fn typed<T: DeserializeOwned>(body: Map<String, Value>) -> Result<T, CartridgeError> {
    serde_path_to_error::deserialize(Value::Object(body)).map_err(schema_error)
}

/// Parses and validates a cartridge document.
pub fn parse_cartridge(text: &str) -> Result<Cartridge, CartridgeError> {
    let value: Value = serde_json::from_str(text).map_err(|e| CartridgeError::MalformedCartridge(e.to_string()))?;
    cartridge_from_value(value)
}

pub fn cartridge_from_value(value: Value) -> Result<Cartridge, CartridgeError> {
    let Value::Object(mut body) = value else {
        return Err(CartridgeError::MalformedCartridge("cartridge must be a JSON object".into()));
    };
    let kind = match body.remove("kind") {
        Some(Value::String(k)) => k,
        Some(_) => return Err(CartridgeError::schema("kind", "must be a string")),
        None => return Err(CartridgeError::schema("kind", "missing field `kind`")),
    };
    let kind = CartridgeKind::parse(&kind)
        .ok_or_else(|| CartridgeError::schema("kind", format!("unknown cartridge kind `{kind}`")))?;
    check_axioms(&Value::Object(body.clone()))?;
    let cartridge = match kind {
        CartridgeKind::Response => Cartridge::Response(typed(body)?),
        CartridgeKind::Cohort => Cartridge::Cohort(typed(body)?),
        CartridgeKind::RiskFactor => Cartridge::RiskFactor(typed(body)?),
        CartridgeKind::Workflow => Cartridge::Workflow(typed(body)?),
    };
    cartridge.validate()?;
    Ok(cartridge)
}

/// Canonical document text: sorted keys, no insignificant whitespace.
pub fn serialize_cartridge(c: &Cartridge) -> String {
    canonical_json(&c.to_value())
}

/// Compact JSON with lexicographically sorted object keys.
pub fn canonical_json(value: &Value) -> String {
    // serde_json's default map is a BTreeMap, so objects already come out sorted.
    serde_json::to_string(value).expect("JSON values serialize")
}

#[derive(Debug, Error, PartialEq)]
pub enum ResolveError {
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("factor `{0}` is also a control")]
    FactorControlCollision(String),
    #[error("factor `{0}` requires creatinine control but the dataset has no `URXUCR`")]
    MissingCreatinine(String),
    #[error("cohort keeps no subjects")]
    EmptyCohort,
    #[error("variable `{var}`: {reason}")]
    TypeMismatch { var: String, reason: String },
    #[error("invalid cartridge `{id}`: {source}")]
    InvalidCartridge { id: String, source: CartridgeError },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

impl ResolveError {
    pub fn code(&self) -> &'static str {
        match self {
            ResolveError::UnknownVariable(_) => "UnknownVariable",
            ResolveError::FactorControlCollision(_) => "FactorControlCollision",
            ResolveError::MissingCreatinine(_) => "MissingCreatinine",
            ResolveError::EmptyCohort => "EmptyCohort",
            ResolveError::TypeMismatch { .. } => "TypeMismatch",
            ResolveError::InvalidCartridge { source, .. } => source.code(),
            ResolveError::Dataset(e) => e.code(),
        }
    }
}

/// Concrete preprocessing for one factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorPlan {
    pub id: String,
    /// Value transforms in application order.
    pub transforms: Vec<Axiom>,
    pub creatinine_control: bool,
}

/// A fully resolved study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyPlan {
    pub response: ResponseCartridge,
    pub cohort: CohortCartridge,
    pub risk_factors: Vec<RiskFactorCartridge>,
    pub workflow: WorkflowCartridge,
    pub dataset_fingerprint: String,
    pub created_at: DateTime<Utc>,
    pub factors: Vec<FactorPlan>,
}

impl StudyPlan {
    pub fn method(&self) -> Method {
        self.workflow.analysis.method()
    }

    pub fn controls(&self) -> &[String] {
        &self.response.required_controls
    }

    pub fn factor(&self, id: &str) -> Option<&FactorPlan> {
        self.factors.iter().find(|f| f.id == id)
    }

    pub fn uses_creatinine(&self) -> bool {
        self.factors.iter().any(|f| f.creatinine_control)
    }

    pub fn standardizes(&self) -> bool {
        self.workflow.preprocessing.contains(&Axiom::Standardize)
    }
}

/// Cross-checks cartridges against each other and the dataset and merges
/// per-factor axioms with the workflow steps.
///
/// Each factor's value transforms are its own value-transform axioms not
/// already listed by the workflow, followed by the workflow's value
/// transforms in declared order.
pub fn resolve_study(
    response: &ResponseCartridge,
    cohort: &CohortCartridge,
    factors: &[RiskFactorCartridge],
    workflow: &WorkflowCartridge,
    ds: &Dataset,
) -> Result<StudyPlan, ResolveError> {
    let invalid = |c: Cartridge| {
        c.validate().map_err(|source| ResolveError::InvalidCartridge { id: c.id().to_string(), source })
    };
    invalid(Cartridge::Response(response.clone()))?;
    invalid(Cartridge::Cohort(cohort.clone()))?;
    for f in factors {
        invalid(Cartridge::RiskFactor(f.clone()))?;
    }
    invalid(Cartridge::Workflow(workflow.clone()))?;
    if factors.is_empty() {
        return Err(ResolveError::InvalidCartridge {
            id: "<risk-factors>".into(),
            source: CartridgeError::schema("factors", "at least one risk factor cartridge is required"),
        });
    }

    let known = |id: &str| ds.variable(id).ok_or_else(|| ResolveError::UnknownVariable(id.to_string()));
    let response_def = known(&response.response_var)?;
    if let PositiveRule::Threshold { .. } = response.positive_rule {
        if response_def.kind != VarKind::Continuous {
            return Err(ResolveError::TypeMismatch {
                var: response.response_var.clone(),
                reason: "threshold rules need a continuous response".into(),
            });
        }
    }
    for c in &response.required_controls {
        known(c)?;
    }

    let mut plans: Vec<FactorPlan> = Vec::new();
    let workflow_transforms: Vec<Axiom> =
        workflow.preprocessing.iter().copied().filter(|a| a.is_value_transform()).collect();
    let study_creatinine = workflow.preprocessing.contains(&Axiom::CreatinineControl)
        || response.domain_axioms.contains(&Axiom::CreatinineControl);
    for set in factors {
        for id in &set.factors {
            if plans.iter().any(|p| &p.id == id) {
                continue;
            }
            let def = known(id)?;
            if def.kind == VarKind::Categorical {
                return Err(ResolveError::TypeMismatch {
                    var: id.clone(),
                    reason: "risk factors must be continuous or binary".into(),
                });
            }
            if response.required_controls.contains(id) || id == &response.response_var {
                return Err(ResolveError::FactorControlCollision(id.clone()));
            }
            let axioms = set.axioms(id);
            let mut transforms: Vec<Axiom> = Vec::new();
            if def.kind == VarKind::Continuous {
                transforms.extend(
                    axioms.iter().copied().filter(|a| a.is_value_transform() && !workflow_transforms.contains(a)),
                );
                transforms.extend(workflow_transforms.iter().copied());
            }
            let creatinine_control = axioms.contains(&Axiom::CreatinineControl)
                || (study_creatinine && axioms.contains(&Axiom::Urinary));
            if creatinine_control && ds.variable(CREATININE_VAR).is_none() {
                return Err(ResolveError::MissingCreatinine(id.clone()));
            }
            plans.push(FactorPlan { id: id.clone(), transforms, creatinine_control });
        }
    }
    if plans.iter().any(|p| p.id == CREATININE_VAR) && plans.iter().any(|p| p.creatinine_control) {
        return Err(ResolveError::FactorControlCollision(CREATININE_VAR.into()));
    }

    let (_, kept, _) = apply_cohort(ds, &cohort.filter)?;
    if kept == 0 {
        return Err(ResolveError::EmptyCohort);
    }

    Ok(StudyPlan {
        response: response.clone(),
        cohort: cohort.clone(),
        risk_factors: factors.to_vec(),
        workflow: workflow.clone(),
        dataset_fingerprint: ds.fingerprint(),
        created_at: Utc::now(),
        factors: plans,
    })
}
