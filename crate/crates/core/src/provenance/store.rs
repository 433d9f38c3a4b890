use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{cartridge_digest, CartridgeRef, ResultsCartridge};
use crate::cartridge::{cartridge_from_value, serialize_cartridge, Cartridge, CartridgeKind, Method};
use crate::dataset::Dataset;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum StoreError {
    #[error("{kind} `{id}` is referenced but neither stored nor supplied")]
    DanglingRef { kind: String, id: String },
    #[error("storage failure: {0}")]
    StorageFailure(String),
    #[error("no stored record `{0}`")]
    NotFound(String),
    #[error("cartridge id `{0}` is already stored with different content")]
    Conflict(String),
    #[error("store line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("invalid results cartridge: {0}")]
    InvalidResult(String),
}

impl StoreError {
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::DanglingRef { .. } => "DanglingRef",
            StoreError::StorageFailure(_) => "StorageFailure",
            StoreError::NotFound(_) => "NotFound",
            StoreError::Conflict(_) => "Conflict",
            StoreError::Corrupt { .. } => "Corrupt",
            StoreError::InvalidResult(_) => "InvalidResult",
        }
    }
}

/// What the store keeps about a dataset: enough to resolve a fingerprint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub fingerprint: String,
    pub n_rows: usize,
    pub variables: Vec<String>,
}

impl DatasetRecord {
    pub fn of(ds: &Dataset) -> Self {
        Self {
            fingerprint: ds.fingerprint(),
            n_rows: ds.n_rows(),
            variables: ds.dictionary().iter().map(|v| v.id.clone()).collect(),
        }
    }
}

/// Conjunctive result filter. Absent fields match everything.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryFilter {
    pub disease_label: Option<String>,
    /// Results with a finding for this factor (significant, if
    /// `significant_only` is set).
    #[serde(alias = "factor_id")]
    pub factor: Option<String>,
    #[serde(default)]
    pub significant_only: bool,
    pub method: Option<Method>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultHeader {
    pub id: String,
    pub created_at: DateTime<Utc>,
    pub disease_label: String,
    pub method: Method,
    pub response: String,
    pub n_findings: usize,
    pub significant_factors: Vec<String>,
}

impl ResultHeader {
    fn of(r: &ResultsCartridge) -> Self {
        let mut significant: Vec<String> =
            r.all_findings().filter(|f| f.significant).map(|f| f.factor.clone()).collect();
        significant.sort();
        significant.dedup();
        Self {
            id: r.id.clone(),
            created_at: r.created_at,
            disease_label: r.disease_label.clone(),
            method: r.method,
            response: r.input_refs.response.id.clone(),
            n_findings: r.all_findings().count(),
            significant_factors: significant,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceLink {
    pub kind: CartridgeKind,
    pub id: String,
    pub digest: String,
    pub resolved: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceChain {
    pub result_id: String,
    pub links: Vec<ProvenanceLink>,
    pub dataset: String,
    pub dataset_resolved: bool,
    pub seed: Option<u64>,
}

impl ProvenanceChain {
    pub fn fully_resolved(&self) -> bool {
        self.dataset_resolved && self.links.iter().all(|l| l.resolved)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditIssue {
    pub result_id: String,
    pub problem: String,
}

#[derive(Default)]
struct Index {
    cartridges: BTreeMap<String, (String, Cartridge)>,
    datasets: BTreeMap<String, DatasetRecord>,
    results: BTreeMap<String, ResultsCartridge>,
    records: usize,
}

impl Index {
    fn resolves(&self, r: &CartridgeRef) -> bool {
        self.cartridges.get(&r.id).is_some_and(|(digest, _)| digest == &r.digest)
    }

    fn apply(&mut self, record: Record) {
        match record {
            Record::Cartridge(digest, c) => {
                self.cartridges.insert(c.id().to_string(), (digest, c));
            }
            Record::Dataset(d) => {
                self.datasets.insert(d.fingerprint.clone(), d);
            }
            Record::Result(r) => {
                self.results.insert(r.id.clone(), *r);
            }
        }
        self.records += 1;
    }
}

enum Record {
    Cartridge(String, Cartridge),
    Dataset(DatasetRecord),
    Result(Box<ResultsCartridge>),
}

impl Record {
    fn line(&self) -> String {
        let (id, kind, body) = match self {
            Record::Cartridge(digest, c) => (digest.clone(), "cartridge", serialize_cartridge(c)),
            Record::Dataset(d) => (
                d.fingerprint.clone(),
                "dataset",
                crate::cartridge::canonical_json(&serde_json::to_value(d).expect("dataset record serializes")),
            ),
            Record::Result(r) => (r.id.clone(), "result", r.canonical()),
        };
        format!("{id} {kind} {body}\n")
    }

    fn parse(line: &str) -> Result<Record, String> {
        let mut parts = line.splitn(3, ' ');
        let (Some(id), Some(kind), Some(body)) = (parts.next(), parts.next(), parts.next()) else {
            return Err("expected `<id> <kind> <json>`".into());
        };
        let value: serde_json::Value = serde_json::from_str(body).map_err(|e| e.to_string())?;
        match kind {
            "cartridge" => {
                let c = cartridge_from_value(value).map_err(|e| e.to_string())?;
                let digest = cartridge_digest(&c);
                if digest != id {
                    return Err(format!("cartridge digest {digest} does not match {id}"));
                }
                Ok(Record::Cartridge(digest, c))
            }
            "dataset" => {
                let d: DatasetRecord = serde_json::from_value(value).map_err(|e| e.to_string())?;
                if d.fingerprint != id {
                    return Err("dataset fingerprint does not match record id".into());
                }
                Ok(Record::Dataset(d))
            }
            "result" => {
                let r: ResultsCartridge = serde_json::from_value(value).map_err(|e| e.to_string())?;
                if r.id != id || r.content_id() != id {
                    return Err("result id does not match its content".into());
                }
                Ok(Record::Result(Box::new(r)))
            }
            other => Err(format!("unknown record kind `{other}`")),
        }
    }
}

/// Append-only record log with an in-memory index.
///
/// Each line of the store file is `<hex id> <kind> <canonical json>`. The
/// index is rebuilt from the file on open. Writes are serialized and each
/// batch of records is appended with a single write followed by a sync;
/// readers only see a record once it is in the index.
pub struct ProvenanceStore {
    path: Option<PathBuf>,
    index: RwLock<Index>,
    writer: Mutex<Option<File>>,
}

fn io_err(e: std::io::Error) -> StoreError {
    StoreError::StorageFailure(e.to_string())
}

impl ProvenanceStore {
    /// A store that lives only in memory.
    pub fn in_memory() -> Self {
        Self { path: None, index: RwLock::new(Index::default()), writer: Mutex::new(None) }
    }

    /// Opens (or creates) the store file and rebuilds the index. A final line
    /// without a newline is an interrupted append and is ignored.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io_err)?;
        }
        let mut index = Index::default();
        if path.exists() {
            let mut reader = BufReader::new(File::open(&path).map_err(io_err)?);
            let mut line = String::new();
            let mut number = 0;
            loop {
                line.clear();
                if reader.read_line(&mut line).map_err(io_err)? == 0 {
                    break;
                }
                number += 1;
                let Some(complete) = line.strip_suffix('\n') else { break };
                if complete.is_empty() {
                    continue;
                }
                let record = Record::parse(complete).map_err(|reason| StoreError::Corrupt { line: number, reason })?;
                index.apply(record);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err)?;
        Ok(Self { path: Some(path), index: RwLock::new(index), writer: Mutex::new(Some(file)) })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Number of records ever written.
    pub fn record_count(&self) -> usize {
        self.index.read().records
    }

    fn append(&self, file: &mut Option<File>, records: Vec<Record>) -> Result<(), StoreError> {
        if records.is_empty() {
            return Ok(());
        }
        if let Some(f) = file.as_mut() {
            let text: String = records.iter().map(Record::line).collect();
            f.write_all(text.as_bytes()).map_err(io_err)?;
            f.sync_data().map_err(io_err)?;
        }
        let mut index = self.index.write();
        for r in records {
            index.apply(r);
        }
        Ok(())
    }

    fn cartridge_record(index: &Index, c: &Cartridge) -> Result<Option<Record>, StoreError> {
        let digest = cartridge_digest(c);
        match index.cartridges.get(c.id()) {
            Some((stored, _)) if *stored == digest => Ok(None),
            Some(_) => Err(StoreError::Conflict(c.id().to_string())),
            None => Ok(Some(Record::Cartridge(digest, c.clone()))),
        }
    }

    /// Stores a component cartridge. Storing identical content again is a
    /// no-op; a different cartridge under a stored id is a conflict.
    pub fn put_cartridge(&self, c: &Cartridge) -> Result<CartridgeRef, StoreError> {
        c.validate().map_err(|e| StoreError::InvalidResult(e.to_string()))?;
        let mut file = self.writer.lock();
        let record = Self::cartridge_record(&self.index.read(), c)?;
        self.append(&mut file, record.into_iter().collect())?;
        Ok(CartridgeRef::of(c))
    }

    pub fn put_dataset(&self, d: &DatasetRecord) -> Result<(), StoreError> {
        let mut file = self.writer.lock();
        let known = self.index.read().datasets.contains_key(&d.fingerprint);
        if known {
            return Ok(());
        }
        self.append(&mut file, vec![Record::Dataset(d.clone())])
    }

    pub fn cartridge(&self, id: &str) -> Option<Cartridge> {
        self.index.read().cartridges.get(id).map(|(_, c)| c.clone())
    }

    /// Stored cartridges ordered by id, optionally of one kind.
    pub fn cartridges(&self, kind: Option<CartridgeKind>) -> Vec<Cartridge> {
        self.index
            .read()
            .cartridges
            .values()
            .map(|(_, c)| c)
            .filter(|c| kind.is_none_or(|k| c.kind() == k))
            .cloned()
            .collect()
    }

    pub fn dataset(&self, fingerprint: &str) -> Option<DatasetRecord> {
        self.index.read().datasets.get(fingerprint).cloned()
    }

    pub fn datasets(&self) -> Vec<DatasetRecord> {
        self.index.read().datasets.values().cloned().collect()
    }

    /// Persists a results cartridge along with any of its inputs not yet
    /// stored, all in one append. Re-persisting identical content returns the
    /// same id and writes nothing.
    pub fn persist_results(
        &self,
        r: &ResultsCartridge,
        inputs: &[Cartridge],
        dataset: Option<&DatasetRecord>,
    ) -> Result<String, StoreError> {
        if r.content_id() != r.id {
            return Err(StoreError::InvalidResult("id does not match content".into()));
        }
        for c in inputs {
            c.validate().map_err(|e| StoreError::InvalidResult(format!("input `{}`: {e}", c.id())))?;
        }
        let mut file = self.writer.lock();
        let index = self.index.read();
        if index.results.contains_key(&r.id) {
            return Ok(r.id.clone());
        }
        let mut records = Vec::new();
        let mut staged: BTreeMap<String, String> = BTreeMap::new();
        for c in inputs {
            let digest = cartridge_digest(c);
            if let Some(prev) = staged.get(c.id()) {
                if *prev != digest {
                    return Err(StoreError::Conflict(c.id().to_string()));
                }
                continue;
            }
            if let Some(rec) = Self::cartridge_record(&index, c)? {
                records.push(rec);
            }
            staged.insert(c.id().to_string(), digest);
        }
        for (kind, cref) in r.input_refs.cartridges() {
            let supplied = staged.get(&cref.id).is_some_and(|d| *d == cref.digest);
            if !supplied && !index.resolves(cref) {
                return Err(StoreError::DanglingRef { kind: kind.as_str().into(), id: cref.id.clone() });
            }
        }
        let fp = &r.input_refs.dataset;
        if !index.datasets.contains_key(fp) {
            match dataset {
                Some(d) if &d.fingerprint == fp => records.push(Record::Dataset(d.clone())),
                _ => return Err(StoreError::DanglingRef { kind: "dataset".into(), id: fp.clone() }),
            }
        }
        records.push(Record::Result(Box::new(r.clone())));
        drop(index);
        self.append(&mut file, records)?;
        Ok(r.id.clone())
    }

    pub fn result(&self, id: &str) -> Result<ResultsCartridge, StoreError> {
        self.index.read().results.get(id).cloned().ok_or_else(|| StoreError::NotFound(id.to_string()))
    }

    /// Headers of matching results ordered by `created_at`, then id.
    pub fn query_results(&self, filter: &QueryFilter) -> Vec<ResultHeader> {
        let index = self.index.read();
        let mut hits: Vec<&ResultsCartridge> = index
            .results
            .values()
            .filter(|r| filter.disease_label.as_ref().is_none_or(|d| &r.disease_label == d))
            .filter(|r| filter.method.is_none_or(|m| r.method == m))
            .filter(|r| match &filter.factor {
                Some(f) => r.all_findings().any(|a| &a.factor == f && (a.significant || !filter.significant_only)),
                None => !filter.significant_only || r.all_findings().any(|a| a.significant),
            })
            .collect();
        hits.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.id.cmp(&b.id)));
        hits.into_iter().map(ResultHeader::of).collect()
    }

    pub fn provenance_chain(&self, result_id: &str) -> Result<ProvenanceChain, StoreError> {
        let index = self.index.read();
        let r = index.results.get(result_id).ok_or_else(|| StoreError::NotFound(result_id.to_string()))?;
        Ok(ProvenanceChain {
            result_id: r.id.clone(),
            links: r
                .input_refs
                .cartridges()
                .into_iter()
                .map(|(kind, c)| ProvenanceLink {
                    kind,
                    id: c.id.clone(),
                    digest: c.digest.clone(),
                    resolved: index.resolves(c),
                })
                .collect(),
            dataset: r.input_refs.dataset.clone(),
            dataset_resolved: index.datasets.contains_key(&r.input_refs.dataset),
            seed: r.seed,
        })
    }

    /// Checks every stored result: content id and full resolution of its
    /// inputs.
    pub fn audit(&self) -> Vec<AuditIssue> {
        let ids: Vec<String> = self.index.read().results.keys().cloned().collect();
        let mut issues = Vec::new();
        for id in ids {
            let r = self.result(&id).expect("listed result exists");
            if r.content_id() != r.id {
                issues.push(AuditIssue { result_id: id.clone(), problem: "content id mismatch".into() });
            }
            let chain = self.provenance_chain(&id).expect("listed result exists");
            for l in chain.links.iter().filter(|l| !l.resolved) {
                issues.push(AuditIssue {
                    result_id: id.clone(),
                    problem: format!("unresolved {} `{}`", l.kind.as_str(), l.id),
                });
            }
            if !chain.dataset_resolved {
                issues.push(AuditIssue { result_id: id.clone(), problem: "unresolved dataset".into() });
            }
        }
        issues
    }
}
