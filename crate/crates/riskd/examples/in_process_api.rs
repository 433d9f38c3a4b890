//! Drives the /v1 API in process: lists response cartridges, submits the
//! type 2 diabetes study, polls the job and prints the significant findings.

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::Request;
use axum::Router;
use http_body_util::BodyExt;
use riskd::cli::{load_cartridge_dir, load_dataset_dir};
use riskd::service::{router, AppState};
use riskd_core::provenance::ProvenanceStore;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> Value {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .expect("request");
    let resp = app.clone().oneshot(req).await.expect("infallible");
    let bytes = resp.into_body().collect().await.expect("body").to_bytes();
    serde_json::from_slice(&bytes).expect("json body")
}

#[tokio::main]
async fn main() {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    let store = Arc::new(ProvenanceStore::in_memory());
    for c in load_cartridge_dir(&fixtures.join("cartridges")).expect("cartridges") {
        store.put_cartridge(&c).expect("store cartridge");
    }
    let state = AppState::new(store, 2);
    for (name, ds) in load_dataset_dir(&fixtures.join("data")).expect("datasets") {
        state.register_dataset(&name, ds).expect("register");
    }
    let app = router(state);

    let responses = call(&app, "GET", "/v1/cartridges?kind=response", None).await;
    for c in responses.as_array().expect("list") {
        println!("{:<24} {}", c["id"].as_str().unwrap_or(""), c["disease_label"].as_str().unwrap_or(""));
    }

    let accepted = call(
        &app,
        "POST",
        "/v1/studies",
        Some(json!({
            "response_id": "response-t2d",
            "cohort_id": "cohort-adults",
            "factor_ids": ["factors-blood-metals", "factors-urinary-metals"],
            "workflow_id": "workflow-ewas",
            "dataset_id": "nhanes_like",
        })),
    )
    .await;
    let job_id = accepted["job_id"].as_str().expect("job id").to_string();
    let job = loop {
        let job = call(&app, "GET", &format!("/v1/jobs/{job_id}"), None).await;
        if matches!(job["status"].as_str(), Some("done" | "failed")) {
            break job;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    };
    println!("\n{job_id}: {}", job["status"]);
    let Some(result_id) = job["result_id"].as_str() else {
        println!("{}", job["error"]);
        return;
    };
    let result = call(&app, "GET", &format!("/v1/results/{result_id}"), None).await;
    for f in result["findings"].as_array().expect("findings") {
        if f["significant"] == true {
            println!("{:<8} beta {:>7.3}  q {:.2e}", f["factor"].as_str().unwrap_or(""), f["coefficient"].as_f64().unwrap_or(f64::NAN), f["adjusted_p"].as_f64().unwrap_or(f64::NAN));
        }
    }
}
