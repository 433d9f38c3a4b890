//! Results cartridges and the provenance store.
//!
//! A results cartridge records what a study found together with references to
//! every input that produced it: the four kinds of component cartridge (by id
//! and content digest) and the dataset fingerprint. Its id is the SHA-256 of
//! its canonical body with `id` and `created_at` left out, so rerunning the
//! same study with the same seed yields the same id.

mod store;

pub use store::{
    AuditIssue, DatasetRecord, ProvenanceChain, ProvenanceLink, ProvenanceStore, QueryFilter, ResultHeader,
    StoreError,
};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::cartridge::{canonical_json, serialize_cartridge, Analysis, Cartridge, CartridgeKind, Method, StudyPlan};
use crate::dataset::Dataset;
use crate::scm::{CadreAssociation, CadreModelParams, CadreSummary, CadreTest, ScmHyperparams};
use crate::study::Findings;
use crate::swglm::{AssociationResult, SkippedFactor};

pub const ENGINE_VERSION: &str = concat!("riskd-core/", env!("CARGO_PKG_VERSION"));

/// Lowercase hex SHA-256.
pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest of a cartridge's canonical text.
pub fn cartridge_digest(c: &Cartridge) -> String {
    content_hash(serialize_cartridge(c).as_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CartridgeRef {
    pub id: String,
    pub digest: String,
}

impl CartridgeRef {
    pub fn of(c: &Cartridge) -> Self {
        Self { id: c.id().to_string(), digest: cartridge_digest(c) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRefs {
    pub response: CartridgeRef,
    pub cohort: CartridgeRef,
    pub risk_factors: Vec<CartridgeRef>,
    pub workflow: CartridgeRef,
    pub dataset: String,
}

impl InputRefs {
    /// Cartridge references in chain order.
    pub fn cartridges(&self) -> Vec<(CartridgeKind, &CartridgeRef)> {
        let mut out = vec![(CartridgeKind::Response, &self.response), (CartridgeKind::Cohort, &self.cohort)];
        out.extend(self.risk_factors.iter().map(|r| (CartridgeKind::RiskFactor, r)));
        out.push((CartridgeKind::Workflow, &self.workflow));
        out
    }
}

/// Serialized cadre model: parameters, hyperparameters (seed included) and the
/// per-epoch training loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub params: CadreModelParams,
    pub hyperparams: ScmHyperparams,
    pub seed: u64,
    pub loss_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CadreAssignment {
    pub subject: String,
    pub cadre: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmPayload {
    pub model: ModelDocument,
    pub summaries: Vec<CadreSummary>,
    pub per_cadre: Vec<CadreAssociation>,
    pub assignments: Vec<CadreAssignment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsCartridge {
    pub id: String,
    pub created_at: DateTime<Utc>,
    pub input_refs: InputRefs,
    pub disease_label: String,
    pub method: Method,
    pub seed: Option<u64>,
    pub engine_version: String,
    /// Whole-cohort associations; empty for cadre models, whose findings
    /// live in the per-cadre scans.
    pub findings: Vec<AssociationResult>,
    pub skipped: Vec<SkippedFactor>,
    pub scm_payload: Option<ScmPayload>,
}

impl ResultsCartridge {
    /// Assembles the cartridge for `findings` produced from `plan` on `ds`
    /// and stamps its content id.
    pub fn new(plan: &StudyPlan, ds: &Dataset, findings: Findings, created_at: DateTime<Utc>) -> Self {
        let [response, cohort, workflow] = [
            Cartridge::Response(plan.response.clone()),
            Cartridge::Cohort(plan.cohort.clone()),
            Cartridge::Workflow(plan.workflow.clone()),
        ]
        .map(|c| CartridgeRef::of(&c));
        let input_refs = InputRefs {
            response,
            cohort,
            risk_factors: plan.risk_factors.iter().map(|r| CartridgeRef::of(&Cartridge::RiskFactor(r.clone()))).collect(),
            workflow,
            dataset: plan.dataset_fingerprint.clone(),
        };
        let seed = match &plan.workflow.analysis {
            Analysis::Scm(h) => Some(h.seed),
            Analysis::SwglmEwas(_) => None,
        };
        let (findings, skipped, scm_payload) = match findings {
            Findings::Ewas(report) => (report.results, report.skipped, None),
            Findings::Scm(out) => {
                let subjects = ds.subject_ids();
                let payload = ScmPayload {
                    model: ModelDocument {
                        seed: out.model.hyperparams.seed,
                        params: out.model.params,
                        hyperparams: out.model.hyperparams,
                        loss_trace: out.model.loss_trace,
                    },
                    summaries: out.summaries,
                    per_cadre: out.associations,
                    assignments: out
                        .rows
                        .iter()
                        .zip(&out.model.assignments)
                        .map(|(&r, &cadre)| CadreAssignment { subject: subjects[r].clone(), cadre })
                        .collect(),
                };
                (Vec::new(), Vec::new(), Some(payload))
            }
        };
        let mut r = Self {
            id: String::new(),
            created_at,
            input_refs,
            disease_label: plan.response.disease_label.clone(),
            method: plan.method(),
            seed,
            engine_version: ENGINE_VERSION.to_string(),
            findings,
            skipped,
            scm_payload,
        };
        r.id = r.content_id();
        r
    }

    /// Canonical body without `id` and `created_at`.
    pub fn canonical_body(&self) -> String {
        let mut v = serde_json::to_value(self).expect("results serialize");
        if let Value::Object(m) = &mut v {
            m.remove("id");
            m.remove("created_at");
        }
        canonical_json(&v)
    }

    pub fn content_id(&self) -> String {
        content_hash(self.canonical_body().as_bytes())
    }

    pub fn canonical(&self) -> String {
        canonical_json(&serde_json::to_value(self).expect("results serialize"))
    }

    /// Whole-cohort findings followed by every tested per-cadre finding.
    pub fn all_findings(&self) -> impl Iterator<Item = &AssociationResult> {
        let cadre = self.scm_payload.iter().flat_map(|p| &p.per_cadre).flat_map(|c| match &c.test {
            CadreTest::Tested { report } => report.results.as_slice(),
            CadreTest::Untestable { .. } => &[],
        });
        self.findings.iter().chain(cadre)
    }
}
