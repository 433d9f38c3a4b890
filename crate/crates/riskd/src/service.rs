//! JSON API under `/v1`.
//!
//! Studies are queued and executed by a fixed pool of workers in submission
//! order. Every error response has the body `{code, message, detail}`.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::mpsc;

use riskd_core::cartridge::{
    parse_cartridge, resolve_study, serialize_cartridge, Analysis, Cartridge, CartridgeError, CartridgeKind,
    CohortCartridge, ResolveError, ResponseCartridge, RiskFactorCartridge, StudyPlan, WorkflowCartridge,
};
use riskd_core::dataset::Dataset;
use riskd_core::provenance::{
    cartridge_digest, DatasetRecord, ProvenanceStore, QueryFilter, ResultsCartridge, StoreError,
};
use riskd_core::study::{run_study, StudyError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
    pub detail: Value,
}

impl ApiError {
    pub fn new(status: StatusCode, code: impl Into<String>, message: impl Into<String>) -> Self {
        Self { status: status.as_u16(), code: code.into(), message: message.into(), detail: Value::Null }
    }

    fn with_detail(mut self, detail: Value) -> Self {
        self.detail = detail;
        self
    }

    fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "NotFound", format!("no {what} `{id}`")).with_detail(json!({ "id": id }))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

impl From<CartridgeError> for ApiError {
    fn from(e: CartridgeError) -> Self {
        let detail = match &e {
            CartridgeError::SchemaViolation { field, .. } => json!({ "field": field }),
            CartridgeError::UnknownAxiom(tag) => json!({ "axiom": tag }),
            CartridgeError::MalformedCartridge(_) => Value::Null,
        };
        ApiError::new(StatusCode::BAD_REQUEST, e.code(), e.to_string()).with_detail(detail)
    }
}

impl From<ResolveError> for ApiError {
    fn from(e: ResolveError) -> Self {
        let detail = match &e {
            ResolveError::UnknownVariable(v) | ResolveError::FactorControlCollision(v) => json!({ "variable": v }),
            ResolveError::MissingCreatinine(f) => json!({ "factor": f }),
            ResolveError::TypeMismatch { var, .. } => json!({ "variable": var }),
            ResolveError::InvalidCartridge { id, .. } => json!({ "cartridge": id }),
            _ => Value::Null,
        };
        ApiError::new(StatusCode::BAD_REQUEST, e.code(), e.to_string()).with_detail(detail)
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match e {
            StoreError::NotFound(_) => StatusCode::NOT_FOUND,
            StoreError::Conflict(_) => StatusCode::CONFLICT,
            StoreError::DanglingRef { .. } | StoreError::InvalidResult(_) => StatusCode::UNPROCESSABLE_ENTITY,
            StoreError::StorageFailure(_) | StoreError::Corrupt { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "InvalidQuery", e.body_text())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "InvalidRequest", e.body_text())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyRequest {
    pub response_id: String,
    pub cohort_id: String,
    pub factor_ids: Vec<String>,
    pub workflow_id: String,
    /// Dataset fingerprint or registered name.
    pub dataset_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProgressUnit {
    Epoch,
    Factor,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub unit: ProgressUnit,
    pub completed: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobError {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyJob {
    pub id: String,
    pub status: JobStatus,
    pub request: StudyRequest,
    pub submitted_at: DateTime<Utc>,
    pub progress: Progress,
    pub result_id: Option<String>,
    pub error: Option<JobError>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub id: String,
    pub name: String,
    pub n_rows: usize,
    pub variables: Vec<String>,
}

struct Inputs {
    response: ResponseCartridge,
    cohort: CohortCartridge,
    factors: Vec<RiskFactorCartridge>,
    workflow: WorkflowCartridge,
    dataset: Arc<Dataset>,
}

impl Inputs {
    fn cartridges(&self) -> Vec<Cartridge> {
        let mut v = vec![Cartridge::Response(self.response.clone()), Cartridge::Cohort(self.cohort.clone())];
        v.extend(self.factors.iter().cloned().map(Cartridge::RiskFactor));
        v.push(Cartridge::Workflow(self.workflow.clone()));
        v
    }

    fn resolve(&self) -> Result<StudyPlan, ResolveError> {
        resolve_study(&self.response, &self.cohort, &self.factors, &self.workflow, &self.dataset)
    }
}

struct Inner {
    store: Arc<ProvenanceStore>,
    datasets: RwLock<BTreeMap<String, (String, Arc<Dataset>)>>,
    jobs: RwLock<BTreeMap<String, StudyJob>>,
    next_job: AtomicU64,
    queue: mpsc::UnboundedSender<String>,
}

/// Shared service state. Cloning is cheap.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    /// Creates the state and starts `workers` job workers on the current
    /// tokio runtime.
    pub fn new(store: Arc<ProvenanceStore>, workers: usize) -> Self {
        let (tx, rx) = mpsc::unbounded_channel();
        let state = Self {
            inner: Arc::new(Inner {
                store,
                datasets: RwLock::new(BTreeMap::new()),
                jobs: RwLock::new(BTreeMap::new()),
                next_job: AtomicU64::new(1),
                queue: tx,
            }),
        };
        let rx = Arc::new(tokio::sync::Mutex::new(rx));
        for _ in 0..workers.max(1) {
            tokio::spawn(worker(state.clone(), rx.clone()));
        }
        state
    }

    pub fn store(&self) -> &ProvenanceStore {
        &self.inner.store
    }

    /// Makes a dataset available to studies under its fingerprint and `name`.
    pub fn register_dataset(&self, name: &str, ds: Dataset) -> Result<DatasetInfo, StoreError> {
        let record = DatasetRecord::of(&ds);
        self.inner.store.put_dataset(&record)?;
        self.inner.datasets.write().insert(record.fingerprint.clone(), (name.to_string(), Arc::new(ds)));
        Ok(DatasetInfo { id: record.fingerprint, name: name.into(), n_rows: record.n_rows, variables: record.variables })
    }

    pub fn datasets(&self) -> Vec<DatasetInfo> {
        self.inner
            .datasets
            .read()
            .iter()
            .map(|(fp, (name, ds))| DatasetInfo {
                id: fp.clone(),
                name: name.clone(),
                n_rows: ds.n_rows(),
                variables: ds.dictionary().iter().map(|v| v.id.clone()).collect(),
            })
            .collect()
    }

    fn dataset(&self, id: &str) -> Option<Arc<Dataset>> {
        let datasets = self.inner.datasets.read();
        datasets
            .get(id)
            .or_else(|| datasets.values().find(|(name, _)| name == id))
            .map(|(_, ds)| ds.clone())
    }

    pub fn job(&self, id: &str) -> Option<StudyJob> {
        self.inner.jobs.read().get(id).cloned()
    }

    fn gather(&self, req: &StudyRequest) -> Result<Inputs, ApiError> {
        let store = &self.inner.store;
        let fetch = |id: &str, kind: CartridgeKind| -> Result<Cartridge, ApiError> {
            let c = store.cartridge(id).ok_or_else(|| ApiError::not_found("cartridge", id))?;
            if c.kind() != kind {
                return Err(ApiError::new(
                    StatusCode::BAD_REQUEST,
                    "WrongCartridgeKind",
                    format!("cartridge `{id}` is a {} cartridge, expected {kind}", c.kind()),
                )
                .with_detail(json!({ "id": id, "expected": kind, "found": c.kind() })));
            }
            Ok(c)
        };
        let Cartridge::Response(response) = fetch(&req.response_id, CartridgeKind::Response)? else { unreachable!() };
        let Cartridge::Cohort(cohort) = fetch(&req.cohort_id, CartridgeKind::Cohort)? else { unreachable!() };
        let Cartridge::Workflow(workflow) = fetch(&req.workflow_id, CartridgeKind::Workflow)? else { unreachable!() };
        let mut factors = Vec::new();
        for id in &req.factor_ids {
            let Cartridge::RiskFactor(f) = fetch(id, CartridgeKind::RiskFactor)? else { unreachable!() };
            factors.push(f);
        }
        let dataset = self.dataset(&req.dataset_id).ok_or_else(|| ApiError::not_found("dataset", &req.dataset_id))?;
        Ok(Inputs { response, cohort, factors, workflow, dataset })
    }

    /// Validates and queues a study. Resolution failures other than an
    /// empty cohort are rejected here; an empty cohort fails the job.
    pub fn submit(&self, req: StudyRequest) -> Result<StudyJob, ApiError> {
        if req.factor_ids.is_empty() {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, "SchemaViolation", "factor_ids must not be empty")
                .with_detail(json!({ "field": "factor_ids" })));
        }
        let inputs = self.gather(&req)?;
        match inputs.resolve() {
            Ok(_) | Err(ResolveError::EmptyCohort) => {}
            Err(e) => return Err(e.into()),
        }
        let progress = match &inputs.workflow.analysis {
            Analysis::Scm(h) => Progress { unit: ProgressUnit::Epoch, completed: 0, total: h.epochs * h.restarts },
            Analysis::SwglmEwas(_) => Progress {
                unit: ProgressUnit::Factor,
                completed: 0,
                total: inputs.factors.iter().map(|f| f.factors.len()).sum(),
            },
        };
        let n = self.inner.next_job.fetch_add(1, Ordering::SeqCst);
        let job = StudyJob {
            id: format!("job-{n:06}"),
            status: JobStatus::Queued,
            request: req,
            submitted_at: Utc::now(),
            progress,
            result_id: None,
            error: None,
        };
        self.inner.jobs.write().insert(job.id.clone(), job.clone());
        self.inner
            .queue
            .send(job.id.clone())
            .map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "ShuttingDown", "job queue is closed"))?;
        Ok(job)
    }

    fn update(&self, id: &str, f: impl FnOnce(&mut StudyJob)) {
        if let Some(job) = self.inner.jobs.write().get_mut(id) {
            f(job);
        }
    }

    fn execute(&self, id: &str) {
        let Some(job) = self.job(id) else { return };
        self.update(id, |j| j.status = JobStatus::Running);
        match self.run(id, &job.request) {
            Ok(result_id) => self.update(id, |j| {
                j.status = JobStatus::Done;
                j.progress.completed = j.progress.total;
                j.result_id = Some(result_id);
            }),
            Err(e) => self.update(id, |j| {
                j.status = JobStatus::Failed;
                j.error = Some(JobError { code: e.code, message: e.message });
            }),
        }
    }

    fn run(&self, id: &str, req: &StudyRequest) -> Result<String, ApiError> {
        let inputs = self.gather(req)?;
        let plan = inputs.resolve().map_err(ApiError::from)?;
        let findings = run_study(&plan, &inputs.dataset, |epoch, _| {
            self.update(id, |j| j.progress.completed = j.progress.completed.max(epoch));
        })
        .map_err(|e: StudyError| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.code(), e.to_string()))?;
        let result = ResultsCartridge::new(&plan, &inputs.dataset, findings, Utc::now());
        Ok(self.inner.store.persist_results(&result, &inputs.cartridges(), Some(&DatasetRecord::of(&inputs.dataset)))?)
    }
}

async fn worker(state: AppState, rx: Arc<tokio::sync::Mutex<mpsc::UnboundedReceiver<String>>>) {
    loop {
        let next = rx.lock().await.recv().await;
        let Some(id) = next else { return };
        let st = state.clone();
        if let Err(e) = tokio::task::spawn_blocking(move || st.execute(&id)).await {
            eprintln!("study worker panicked: {e}");
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct KindQuery {
    kind: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoQuery {}

type ApiResult<T> = Result<T, ApiError>;

async fn list_cartridges(
    State(state): State<AppState>,
    query: Result<Query<KindQuery>, QueryRejection>,
) -> ApiResult<Json<Vec<Value>>> {
    let Query(q) = query?;
    let kind = match q.kind {
        None => None,
        Some(k) => Some(CartridgeKind::parse(&k).ok_or_else(|| {
            ApiError::new(StatusCode::BAD_REQUEST, "InvalidQuery", format!("unknown cartridge kind `{k}`"))
                .with_detail(json!({ "kind": k }))
        })?),
    };
    Ok(Json(state.store().cartridges(kind).iter().map(Cartridge::to_value).collect()))
}

async fn upload_cartridge(State(state): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let text = std::str::from_utf8(&body)
        .map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, "MalformedCartridge", "body is not UTF-8"))?;
    let cartridge = parse_cartridge(text)?;
    state.store().put_cartridge(&cartridge)?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "id": cartridge.id(), "kind": cartridge.kind(), "digest": cartridge_digest(&cartridge) })),
    ))
}

async fn get_cartridge(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let c = state.store().cartridge(&id).ok_or_else(|| ApiError::not_found("cartridge", &id))?;
    Ok(([(header::CONTENT_TYPE, "application/json")], serialize_cartridge(&c)).into_response())
}

async fn submit_study(
    State(state): State<AppState>,
    body: Result<Json<StudyRequest>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let Json(req) = body?;
    let job = state.submit(req)?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": job.id, "status": job.status }))))
}

async fn get_job(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<StudyJob>> {
    state.job(&id).map(Json).ok_or_else(|| ApiError::not_found("job", &id))
}

async fn query_results(
    State(state): State<AppState>,
    query: Result<Query<QueryFilter>, QueryRejection>,
) -> ApiResult<Json<Value>> {
    let Query(filter) = query?;
    Ok(Json(serde_json::to_value(state.store().query_results(&filter)).expect("headers serialize")))
}

async fn get_result(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<ResultsCartridge>> {
    Ok(Json(state.store().result(&id)?))
}

async fn get_provenance(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let chain = state.store().provenance_chain(&id)?;
    let resolved = chain.fully_resolved();
    let mut v = serde_json::to_value(chain).expect("chain serializes");
    v["fully_resolved"] = Value::Bool(resolved);
    Ok(Json(v))
}

async fn get_cadres(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let r = state.store().result(&id)?;
    let Some(payload) = r.scm_payload else {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "NotACadreModel",
            format!("result `{id}` was produced by {}, which has no cadres", r.method),
        )
        .with_detail(json!({ "method": r.method })));
    };
    Ok(Json(json!({
        "result_id": r.id,
        "cadres": payload.model.params.cadres,
        "features": payload.model.params.feature_names,
        "centers": payload.model.params.centers,
        "summaries": payload.summaries,
        "per_cadre": payload.per_cadre,
    })))
}

async fn list_datasets(
    State(state): State<AppState>,
    query: Result<Query<NoQuery>, QueryRejection>,
) -> ApiResult<Json<Vec<DatasetInfo>>> {
    query?;
    Ok(Json(state.datasets()))
}

async fn fallback() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "NotFound", "no such endpoint")
}

/// The `/v1` router over `state`.
pub fn router(state: AppState) -> Router {
    let v1 = Router::new()
        .route("/cartridges", get(list_cartridges).post(upload_cartridge))
        .route("/cartridges/{id}", get(get_cartridge))
        .route("/studies", axum::routing::post(submit_study))
        .route("/jobs/{id}", get(get_job))
        .route("/results", get(query_results))
        .route("/results/{id}", get(get_result))
        .route("/results/{id}/provenance", get(get_provenance))
        .route("/results/{id}/cadres", get(get_cadres))
        .route("/datasets", get(list_datasets));
    Router::new().nest("/v1", v1).fallback(fallback).with_state(state)
}
