//! HTTP interface for the rule workbench. Every JSON body carries the
//! active ruleset fingerprint so clients can spot stale views.

use std::collections::HashMap;
use std::fs;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde_json::{json, Value};

use crate::config::Config;
use crate::corpus::Store;
use crate::eval::{read_label_dir, score_labels, GoldLabelSet};
use crate::pipeline::{process_document, process_patient, run_patients, PipelineOptions, Trace};
use crate::ruleset::{compile, load_rules_dir, CompiledRuleset, ComponentKind, RuleError, RuleTable};

/// Seconds a client should wait when a recompile is in flight.
pub const RETRY_AFTER_SECS: u64 = 1;

pub struct AppState {
    config: Config,
    options: PipelineOptions,
    store: Mutex<Store>,
    ruleset: RwLock<Arc<CompiledRuleset>>,
    recompiling: AtomicBool,
    /// Serializes rule writes and recompiles.
    rules_lock: tokio::sync::Mutex<()>,
    traces: Mutex<HashMap<String, Trace>>,
}

/// Marks a recompile as in flight until dropped.
pub struct RecompileGuard<'a>(&'a AtomicBool);

impl Drop for RecompileGuard<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::SeqCst);
    }
}

impl AppState {
    pub fn new(config: Config, store: Store, ruleset: CompiledRuleset) -> Arc<Self> {
        Arc::new(AppState {
            options: config.pipeline_options(),
            config,
            store: Mutex::new(store),
            ruleset: RwLock::new(Arc::new(ruleset)),
            recompiling: AtomicBool::new(false),
            rules_lock: tokio::sync::Mutex::new(()),
            traces: Mutex::new(HashMap::new()),
        })
    }

    pub fn ruleset(&self) -> Arc<CompiledRuleset> {
        self.ruleset.read().expect("ruleset lock").clone()
    }

    pub fn fingerprint(&self) -> String {
        self.ruleset().fingerprint.clone()
    }

    pub fn begin_recompile(&self) -> RecompileGuard<'_> {
        self.recompiling.store(true, Ordering::SeqCst);
        RecompileGuard(&self.recompiling)
    }

    pub fn is_recompiling(&self) -> bool {
        self.recompiling.load(Ordering::SeqCst)
    }
}

type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/api/patients", get(patients))
        .route("/api/documents/{doc_id}", get(document))
        .route("/api/run/{doc_id}", post(run_document))
        .route("/api/trace/{doc_id}", get(trace))
        .route("/api/rules", get(rules))
        .route("/api/rules/{kind}", put(put_rules))
        .route("/api/recompile", post(recompile))
        .route("/api/decisions/{patient_id}", get(decisions))
        .route("/api/eval", get(eval))
        .with_state(state)
}

/// Serves on an already bound listener until ctrl-c.
pub async fn serve(state: Shared, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

fn reply(fingerprint: &str, status: StatusCode, mut body: Value) -> Response {
    if let Value::Object(map) = &mut body {
        map.insert("fingerprint".into(), Value::String(fingerprint.to_string()));
    }
    (status, Json(body)).into_response()
}

fn fail(fingerprint: &str, status: StatusCode, message: impl ToString) -> Response {
    reply(fingerprint, status, json!({ "error": message.to_string() }))
}

fn busy(fingerprint: &str) -> Response {
    let mut r = fail(fingerprint, StatusCode::SERVICE_UNAVAILABLE, "recompile in progress");
    r.headers_mut()
        .insert(header::RETRY_AFTER, RETRY_AFTER_SECS.to_string().parse().expect("header value"));
    r
}

fn internal(fingerprint: &str, e: impl ToString) -> Response {
    fail(fingerprint, StatusCode::INTERNAL_SERVER_ERROR, e)
}

async fn patients(State(s): State<Shared>) -> Response {
    let fp = s.fingerprint();
    let listed = s.store.lock().expect("store lock").patients();
    match listed {
        Ok(ps) => {
            let ps: Vec<Value> = ps
                .iter()
                .map(|p| {
                    let docs: Vec<Value> = p
                        .documents
                        .iter()
                        .map(|d| json!({ "doc_id": d.doc_id, "seq": d.seq, "record_date": d.record_date }))
                        .collect();
                    json!({ "patient_id": p.patient_id, "reference_date": p.reference_date, "documents": docs })
                })
                .collect();
            reply(&fp, StatusCode::OK, json!({ "patients": ps }))
        }
        Err(e) => internal(&fp, e),
    }
}

async fn document(State(s): State<Shared>, Path(doc_id): Path<String>) -> Response {
    let fp = s.fingerprint();
    let found = s.store.lock().expect("store lock").document(&doc_id);
    match found {
        Ok(Some(d)) => reply(&fp, StatusCode::OK, json!({ "document": d })),
        Ok(None) => fail(&fp, StatusCode::NOT_FOUND, format!("unknown document {doc_id}")),
        Err(e) => internal(&fp, e),
    }
}

async fn run_document(State(s): State<Shared>, Path(doc_id): Path<String>) -> Response {
    let ruleset = s.ruleset();
    let fp = ruleset.fingerprint.clone();
    if s.is_recompiling() {
        return busy(&fp);
    }
    let doc = match s.store.lock().expect("store lock").document(&doc_id) {
        Ok(Some(d)) => d,
        Ok(None) => return fail(&fp, StatusCode::NOT_FOUND, format!("unknown document {doc_id}")),
        Err(e) => return internal(&fp, e),
    };
    let options = s.options.clone();
    let joined = tokio::task::spawn_blocking(move || process_document(&doc, &ruleset, &options, true)).await;
    match joined {
        Ok(Ok((analysis, Some(trace)))) => {
            s.traces.lock().expect("trace lock").insert(doc_id.clone(), trace.clone());
            reply(&fp, StatusCode::OK, json!({ "doc_id": doc_id, "trace": trace, "conclusions": analysis.conclusions }))
        }
        Ok(Ok((_, None))) => internal(&fp, "trace missing"),
        Ok(Err(e)) => internal(&fp, e),
        Err(e) => internal(&fp, e),
    }
}

async fn trace(State(s): State<Shared>, Path(doc_id): Path<String>) -> Response {
    let fp = s.fingerprint();
    let cached = s.traces.lock().expect("trace lock").get(&doc_id).cloned();
    match cached {
        // A trace from an older ruleset keeps its own fingerprint.
        Some(t) => reply(&fp, StatusCode::OK, json!({ "doc_id": doc_id, "stale": t.fingerprint != fp, "trace": t })),
        None => fail(&fp, StatusCode::NOT_FOUND, format!("no trace for {doc_id}; run it first")),
    }
}

fn table_json(t: &RuleTable) -> Value {
    let rows: Vec<Value> = t.rows.iter().map(|r| json!({ "line": r.line, "cells": r.cells })).collect();
    json!({
        "kind": t.kind.name(),
        "path": t.source_path,
        "header": t.kind.header(),
        "rows": rows,
        "text": t.to_tsv(),
    })
}

async fn rules(State(s): State<Shared>) -> Response {
    let ruleset = s.ruleset();
    let tables: Vec<Value> = ruleset.tables().iter().map(table_json).collect();
    reply(&ruleset.fingerprint, StatusCode::OK, json!({ "tables": tables }))
}

/// Row-anchored messages for a rule error.
pub fn row_errors(e: &RuleError) -> Vec<Value> {
    match e {
        RuleError::ColumnCount { path, line, .. } | RuleError::Invalid { path, line, .. } => {
            vec![json!({ "path": path, "line": line, "message": e.to_string() })]
        }
        RuleError::Compile(issues) => issues
            .iter()
            .map(|i| json!({ "kind": i.kind.name(), "path": i.path, "line": i.line, "message": i.message }))
            .collect(),
        other => vec![json!({ "line": null, "message": other.to_string() })],
    }
}

fn table_path(dir: &std::path::Path, kind: ComponentKind) -> std::path::PathBuf {
    let csv = dir.join(format!("{}.csv", kind.name()));
    if csv.is_file() && !dir.join(format!("{}.tsv", kind.name())).is_file() {
        csv
    } else {
        dir.join(format!("{}.tsv", kind.name()))
    }
}

/// Replaces one table on disk after checking that it parses and that the
/// rules directory still compiles with it. Activation needs a recompile.
async fn put_rules(State(s): State<Shared>, Path(kind): Path<String>, body: String) -> Response {
    let fp = s.fingerprint();
    let kind: ComponentKind = match kind.parse() {
        Ok(k) => k,
        Err(e) => return fail(&fp, StatusCode::NOT_FOUND, e),
    };
    let _lock = s.rules_lock.lock().await;
    let dir = s.config.rules.clone();
    let path = table_path(&dir, kind);
    let checked = tokio::task::spawn_blocking(move || -> Result<(RuleTable, String), RuleError> {
        let table = RuleTable::parse(&body, kind, &path.display().to_string())?;
        let mut tables: Vec<RuleTable> = load_rules_dir(&dir)?.into_iter().filter(|t| t.kind != kind).collect();
        tables.push(table.clone());
        let pending = compile(tables)?.fingerprint;
        fs::write(&path, &body).map_err(|source| RuleError::Io { path: path.clone(), source })?;
        Ok((table, pending))
    })
    .await;
    match checked {
        Ok(Ok((table, pending))) => reply(&fp, StatusCode::OK, json!({ "table": table_json(&table), "pending_fingerprint": pending })),
        Ok(Err(e @ RuleError::Io { .. })) => internal(&fp, e),
        Ok(Err(e)) => reply(&fp, StatusCode::UNPROCESSABLE_ENTITY, json!({ "error": e.to_string(), "errors": row_errors(&e) })),
        Err(e) => internal(&fp, e),
    }
}

/// Reloads the rules directory. On failure the active ruleset stays.
async fn recompile(State(s): State<Shared>) -> Response {
    let _lock = s.rules_lock.lock().await;
    let previous = s.fingerprint();
    let _guard = s.begin_recompile();
    let dir = s.config.rules.clone();
    let built = tokio::task::spawn_blocking(move || load_rules_dir(&dir).and_then(compile)).await;
    match built {
        Ok(Ok(rs)) => {
            let fp = rs.fingerprint.clone();
            *s.ruleset.write().expect("ruleset lock") = Arc::new(rs);
            reply(&fp, StatusCode::OK, json!({ "previous": previous, "changed": fp != previous }))
        }
        Ok(Err(e)) => reply(&previous, StatusCode::UNPROCESSABLE_ENTITY, json!({ "error": e.to_string(), "errors": row_errors(&e) })),
        Err(e) => internal(&previous, e),
    }
}

async fn decisions(State(s): State<Shared>, Path(patient_id): Path<String>) -> Response {
    let ruleset = s.ruleset();
    let fp = ruleset.fingerprint.clone();
    if s.is_recompiling() {
        return busy(&fp);
    }
    let patient = match s.store.lock().expect("store lock").patient(&patient_id) {
        Ok(Some(p)) => p,
        Ok(None) => return fail(&fp, StatusCode::NOT_FOUND, format!("unknown patient {patient_id}")),
        Err(e) => return internal(&fp, e),
    };
    let options = s.options.clone();
    let joined = tokio::task::spawn_blocking(move || process_patient(&patient, &ruleset, &options, false)).await;
    match joined {
        Ok(Ok(r)) => reply(&fp, StatusCode::OK, json!({ "patient_id": patient_id, "decisions": r.decisions })),
        Ok(Err(e)) => internal(&fp, e),
        Err(e) => internal(&fp, e),
    }
}

async fn eval(State(s): State<Shared>) -> Response {
    let ruleset = s.ruleset();
    let fp = ruleset.fingerprint.clone();
    if s.is_recompiling() {
        return busy(&fp);
    }
    let Some(gold_dir) = s.config.gold.clone() else {
        return fail(&fp, StatusCode::CONFLICT, "no gold directory configured");
    };
    let patients = match s.store.lock().expect("store lock").patients() {
        Ok(p) => p,
        Err(e) => return internal(&fp, e),
    };
    let options = s.options.clone();
    let parallelism = s.config.parallelism;
    let joined = tokio::task::spawn_blocking(move || {
        let run = run_patients(&patients, &ruleset, &options, parallelism, false, None).map_err(|e| e.to_string())?;
        let criteria: Vec<String> = ruleset.criterion_ids().map(str::to_string).collect();
        let predicted: Vec<GoldLabelSet> = run
            .results
            .iter()
            .map(|r| GoldLabelSet::from_decisions(&r.patient_id, &r.decisions))
            .collect();
        let gold = read_label_dir(&gold_dir, &criteria).map_err(|e| e.to_string())?;
        score_labels(&gold, &predicted, &criteria).map_err(|e| e.to_string())
    })
    .await;
    match joined {
        Ok(Ok(report)) => reply(&fp, StatusCode::OK, json!({ "report": report })),
        Ok(Err(e)) => fail(&fp, StatusCode::UNPROCESSABLE_ENTITY, e),
        Err(e) => internal(&fp, e),
    }
}
