//! Drive the workbench HTTP API in process: run a document, delete a
//! feature row, recompile and run it again.
//!
//!     cargo run --example workbench_api

use axum::body::Body;
use axum::http::{Method, Request};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;
use trialsift::config::Config;
use trialsift::corpus::{build_patient, Preprocessor, Store};
use trialsift::demo::write_rules;
use trialsift::ruleset::{compile, load_rules_dir};
use trialsift::server::{router, AppState};

async fn call(app: &axum::Router, method: Method, uri: &str, body: String) -> Value {
    let req = Request::builder().method(method).uri(uri).body(Body::from(body)).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    println!("{uri} -> {}", resp.status());
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    serde_json::from_slice(&bytes).unwrap()
}

fn feature_concepts(run: &Value) -> Vec<String> {
    run["trace"]["layers"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|l| l["component"] == "feature")
        .flat_map(|l| l["annotations"].as_array().unwrap().iter())
        .map(|a| a["type"].as_str().unwrap().to_string())
        .collect()
}

#[tokio::main(flavor = "current_thread")]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let rules = dir.path().join("rules");
    write_rules(&rules)?;
    let mut store = Store::in_memory()?;
    let note = "Record date: 2018-05-01\nFindings:\nAcute MI was seen.\n";
    store.put_patients(&[build_patient("W01", note, &Preprocessor::default(), &mut Vec::new())?])?;
    let config = Config {
        rules: rules.clone(),
        ..Config::default()
    };
    let app = router(AppState::new(config, store, compile(load_rules_dir(&rules)?)?));

    let before = call(&app, Method::POST, "/api/run/W01-0", String::new()).await;
    println!("  features {:?}", feature_concepts(&before));

    let table = std::fs::read_to_string(rules.join("feature.tsv"))?;
    let edited: String = table
        .lines()
        .filter(|l| !(l.starts_with("MI\t") && l.ends_with("\tFindings")))
        .map(|l| format!("{l}\n"))
        .collect();
    let put = call(&app, Method::PUT, "/api/rules/feature", edited).await;
    println!("  pending {}", put["pending_fingerprint"]);
    let swap = call(&app, Method::POST, "/api/recompile", String::new()).await;
    println!("  changed {} ({} -> {})", swap["changed"], swap["previous"], swap["fingerprint"]);

    let after = call(&app, Method::POST, "/api/run/W01-0", String::new()).await;
    println!("  features {:?}", feature_concepts(&after));
    Ok(())
}
