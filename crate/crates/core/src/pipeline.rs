//! Document and patient orchestration with per-component traces.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::context::{apply_context, TEMPORALITY};
use crate::corpus::{ClinicalDocument, CorpusError, Patient, Store};
use crate::eval::{write_predictions, EvalError};
use crate::inference::{
    apply_feature_rules, extract_numeric_value, infer_document, infer_patient, CriterionDecision,
    DocumentConclusion, DocumentOutcome, DEFAULT_UNITS,
};
use crate::matcher::{tokenize, Span, Token};
use crate::ner::{match_concepts, Mention, SentenceTokens};
use crate::ruleset::CompiledRuleset;
use crate::sectioner::{detect_sections, HeaderOptions, Sections};
use crate::segmenter::{segment, SentenceSpan};
use crate::temporal::{
    classify_temporality, find_expressions, resolve_event_date, EventBasis, TemporalExpression,
    DEFAULT_EVENT_WINDOW, DEFAULT_HISTORY_THRESHOLD_DAYS,
};

/// Component names, in execution order.
pub const LAYERS: [&str; 7] = ["sectioner", "segmenter", "ner", "context", "temporal", "feature", "document"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub history_threshold_days: i64,
    pub event_window: usize,
    pub headers: HeaderOptions,
    pub units: Vec<String>,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            history_threshold_days: DEFAULT_HISTORY_THRESHOLD_DAYS,
            event_window: DEFAULT_EVENT_WINDOW,
            headers: HeaderOptions::default(),
            units: DEFAULT_UNITS.iter().map(|u| u.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{component} failed on {doc_id}: {message}")]
pub struct PipelineError {
    pub doc_id: String,
    pub component: &'static str,
    pub message: String,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Store(#[from] CorpusError),
    #[error(transparent)]
    Predictions(#[from] EvalError),
    #[error("cannot build worker pool: {0}")]
    Pool(String),
}

/// One annotation of a trace layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: String,
    pub span: Span,
    #[serde(rename = "type")]
    pub kind: String,
    pub attributes: BTreeMap<String, String>,
    pub rule_ids: Vec<usize>,
    /// Ids of annotations in earlier layers this one was drawn from.
    pub evidence: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub component: String,
    pub annotations: Vec<Annotation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub doc_id: String,
    pub fingerprint: String,
    pub layers: Vec<Layer>,
}

#[derive(Serialize, Deserialize)]
struct TraceLine<'a> {
    doc_id: std::borrow::Cow<'a, str>,
    fingerprint: std::borrow::Cow<'a, str>,
    #[serde(flatten)]
    layer: std::borrow::Cow<'a, Layer>,
}

impl Trace {
    /// One JSON object per layer, one per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for layer in &self.layers {
            let line = TraceLine {
                doc_id: self.doc_id.as_str().into(),
                fingerprint: self.fingerprint.as_str().into(),
                layer: std::borrow::Cow::Borrowed(layer),
            };
            out.push_str(&serde_json::to_string(&line).expect("trace serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Trace, serde_json::Error> {
        let mut trace = Trace {
            doc_id: String::new(),
            fingerprint: String::new(),
            layers: Vec::new(),
        };
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let l: TraceLine<'static> = serde_json::from_str(line)?;
            trace.doc_id = l.doc_id.into_owned();
            trace.fingerprint = l.fingerprint.into_owned();
            trace.layers.push(l.layer.into_owned());
        }
        Ok(trace)
    }

    pub fn layer(&self, component: &str) -> Option<&Layer> {
        self.layers.iter().find(|l| l.component == component)
    }
}

/// Elapsed time per component, in [`LAYERS`] order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings(pub Vec<(String, Duration)>);

impl Timings {
    pub fn total(&self) -> Duration {
        self.0.iter().map(|(_, d)| *d).sum()
    }

    fn add(&mut self, other: &Timings) {
        for (name, d) in &other.0 {
            match self.0.iter_mut().find(|(n, _)| n == name) {
                Some((_, acc)) => *acc += *d,
                None => self.0.push((name.clone(), *d)),
            }
        }
    }
}

/// Everything the pipeline derived from one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentAnalysis {
    pub doc_id: String,
    pub sections: Sections,
    pub sentences: Vec<SentenceSpan>,
    pub expressions: Vec<TemporalExpression>,
    /// Dictionary mentions with context and temporal attributes applied.
    pub mentions: Vec<Mention>,
    /// Feature-rule conclusions.
    pub features: Vec<Mention>,
    pub conclusions: Vec<DocumentConclusion>,
    pub timings: Timings,
}

struct Stopwatch {
    at: Instant,
    timings: Timings,
}

impl Stopwatch {
    fn new() -> Self {
        Stopwatch {
            at: Instant::now(),
            timings: Timings::default(),
        }
    }

    fn lap(&mut self, name: &str) {
        let now = Instant::now();
        self.timings.0.push((name.to_string(), now - self.at));
        self.at = now;
    }
}

fn mention_annotation(m: &Mention) -> Annotation {
    let mut attributes = m.attributes.clone();
    if let Some(v) = &m.value {
        attributes.insert("value".into(), v.value.to_string());
        if let Some(u) = &v.unit {
            attributes.insert("unit".into(), u.clone());
        }
    }
    if let Some(ev) = &m.event {
        if let Some(iv) = ev.interval {
            attributes.insert("event_earliest".into(), iv.earliest.to_string());
            attributes.insert("event_latest".into(), iv.latest.to_string());
        }
        let basis = serde_json::to_value(ev.basis).expect("basis serializes");
        attributes.insert("event_basis".into(), basis.as_str().unwrap_or_default().to_string());
    }
    Annotation {
        id: m.id.clone(),
        span: m.span,
        kind: m.concept.clone(),
        attributes,
        rule_ids: m.rule_ids.iter().map(|r| r.0).collect(),
        evidence: m.evidence.iter().cloned().collect(),
    }
}

fn mention_layer(name: &str, mentions: &[Mention]) -> Layer {
    Layer {
        component: name.to_string(),
        annotations: mentions.iter().map(mention_annotation).collect(),
    }
}

/// Runs every component over one document. With `trace_on`, also returns
/// a snapshot per component.
pub fn process_document(
    doc: &ClinicalDocument,
    ruleset: &CompiledRuleset,
    options: &PipelineOptions,
    trace_on: bool,
) -> Result<(DocumentAnalysis, Option<Trace>), PipelineError> {
    let mut layers = Vec::new();
    let mut clock = Stopwatch::new();
    let text = doc.text.as_str();
    let tokens = tokenize(text);

    let sections = detect_sections(text, &tokens, &ruleset.sections, options.headers);
    clock.lap("sectioner");
    if trace_on {
        layers.push(Layer {
            component: "sectioner".into(),
            annotations: sections
                .spans
                .iter()
                .enumerate()
                .map(|(i, s)| Annotation {
                    id: format!("{}:s{i}", doc.doc_id),
                    span: Span::new(s.header_span.begin.min(s.body_span.begin), s.body_span.end),
                    kind: "Section".into(),
                    attributes: [("name".to_string(), s.name.clone())].into(),
                    rule_ids: vec![],
                    evidence: vec![],
                })
                .collect(),
        });
    }

    let sentences = segment(text, &ruleset.sentences);
    let sentence_tokens = sentence_token_ranges(&tokens, &sentences);
    clock.lap("segmenter");
    if trace_on {
        layers.push(Layer {
            component: "segmenter".into(),
            annotations: sentences
                .iter()
                .map(|s| Annotation {
                    id: format!("{}:t{}", doc.doc_id, s.index),
                    span: s.span,
                    kind: "Sentence".into(),
                    attributes: BTreeMap::new(),
                    rule_ids: vec![],
                    evidence: vec![],
                })
                .collect(),
        });
    }

    let views: Vec<SentenceTokens<'_>> = sentences
        .iter()
        .zip(&sentence_tokens)
        .map(|(s, &(lo, hi))| SentenceTokens {
            index: s.index,
            span: s.span,
            token_offset: lo,
            tokens: &tokens[lo..hi],
        })
        .collect();
    // Temporal expressions are found up front so number extraction can
    // skip their tokens; they are reported in the temporal layer.
    let expressions: Vec<Vec<TemporalExpression>> = views
        .iter()
        .map(|v| {
            let mut found = find_expressions(v.tokens, &ruleset.temporal, doc.record_date);
            for e in &mut found {
                e.token_start += v.token_offset;
                e.token_end += v.token_offset;
            }
            found
        })
        .collect();
    let find_time = clock.at.elapsed();
    clock.at = Instant::now();

    let mut per_sentence: Vec<Vec<Mention>> = Vec::with_capacity(views.len());
    let mut next_id = 0usize;
    for (v, exprs) in views.iter().zip(&expressions) {
        let mut found = match_concepts(v, &ruleset.ner_include, &ruleset.ner_exclude);
        for m in &mut found {
            m.id = format!("{}:m{next_id}", doc.doc_id);
            next_id += 1;
            if m.numeric {
                let local = (m.tokens.0 - v.token_offset, m.tokens.1 - v.token_offset);
                let skip = |i: usize| {
                    let g = i + v.token_offset;
                    exprs.iter().any(|e| e.token_start <= g && g < e.token_end)
                };
                m.value = extract_numeric_value(local, v.tokens, &skip, &options.units);
            }
        }
        per_sentence.push(found);
    }
    clock.lap("ner");
    if trace_on {
        layers.push(mention_layer("ner", &per_sentence.concat()));
    }

    for (v, ms) in views.iter().zip(per_sentence.iter_mut()) {
        apply_context(v, ms, &ruleset.context);
    }
    clock.lap("context");
    if trace_on {
        layers.push(mention_layer("context", &per_sentence.concat()));
    }

    for (ms, exprs) in per_sentence.iter_mut().zip(&expressions) {
        for m in ms.iter_mut() {
            let event = resolve_event_date(m.tokens, exprs, doc.record_date, options.event_window);
            // An explicit date outranks the lexical temporality cue.
            if event.basis == EventBasis::Expression {
                if let Some(t) = doc
                    .record_date
                    .and_then(|d| classify_temporality(&event, d, options.history_threshold_days))
                {
                    m.attributes.insert(TEMPORALITY.to_string(), t.as_str().to_string());
                }
            }
            m.event = Some(event);
        }
    }
    let mentions: Vec<Mention> = per_sentence.concat();
    let expressions: Vec<TemporalExpression> = expressions.concat();
    clock.lap("temporal");
    if let Some(last) = clock.timings.0.last_mut() {
        last.1 += find_time;
    }
    if trace_on {
        let mut layer = mention_layer("temporal", &mentions);
        let exprs = expressions.iter().enumerate().map(|(i, e)| Annotation {
            id: format!("{}:d{i}", doc.doc_id),
            span: e.span,
            kind: "TemporalExpression".into(),
            attributes: [
                ("tag".to_string(), e.tag.name().to_string()),
                ("earliest".to_string(), e.interval.earliest.to_string()),
                ("latest".to_string(), e.interval.latest.to_string()),
            ]
            .into(),
            rule_ids: vec![],
            evidence: vec![],
        });
        layer.annotations.splice(0..0, exprs);
        layers.push(layer);
    }

    let mut features = Vec::new();
    for m in &mentions {
        let section = sections.section_of(m.span.begin).map_err(|e| PipelineError {
            doc_id: doc.doc_id.clone(),
            component: "feature",
            message: e.to_string(),
        })?;
        for mut f in apply_feature_rules(m, section, ruleset) {
            f.id = format!("{}:f{}", doc.doc_id, features.len());
            features.push(f);
        }
    }
    clock.lap("feature");
    if trace_on {
        layers.push(mention_layer("feature", &features));
    }

    let mut pool = mentions.clone();
    pool.extend(features.iter().cloned());
    let conclusions = infer_document(&doc.doc_id, &pool, &ruleset.document_groups);
    clock.lap("document");
    if trace_on {
        layers.push(Layer {
            component: "document".into(),
            annotations: conclusions
                .iter()
                .enumerate()
                .map(|(i, c)| Annotation {
                    id: format!("{}:c{i}", doc.doc_id),
                    span: Span::new(0, text.len()),
                    kind: c.conclusion.clone(),
                    attributes: [
                        ("criterion".to_string(), c.criterion.clone()),
                        ("priority".to_string(), c.priority.to_string()),
                        ("default".to_string(), c.is_default.to_string()),
                    ]
                    .into(),
                    rule_ids: vec![],
                    evidence: c.evidence.iter().map(|e| e.mention_id.clone()).collect(),
                })
                .collect(),
        });
    }

    let trace = trace_on.then(|| Trace {
        doc_id: doc.doc_id.clone(),
        fingerprint: ruleset.fingerprint.clone(),
        layers,
    });
    let analysis = DocumentAnalysis {
        doc_id: doc.doc_id.clone(),
        sections,
        sentences,
        expressions,
        mentions,
        features,
        conclusions,
        timings: clock.timings,
    };
    Ok((analysis, trace))
}

/// Half-open token index range of each sentence.
fn sentence_token_ranges(tokens: &[Token], sentences: &[SentenceSpan]) -> Vec<(usize, usize)> {
    sentences
        .iter()
        .map(|s| {
            let lo = tokens.partition_point(|t| t.span.begin < s.span.begin);
            let hi = tokens.partition_point(|t| t.span.end <= s.span.end);
            (lo, hi.max(lo))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub patient_id: String,
    pub decisions: Vec<CriterionDecision>,
    pub documents: Vec<DocumentOutcome>,
    pub traces: Vec<Trace>,
    pub timings: Timings,
}

pub fn process_patient(
    patient: &Patient,
    ruleset: &CompiledRuleset,
    options: &PipelineOptions,
    trace_on: bool,
) -> Result<RunResult, PipelineError> {
    let mut documents = Vec::new();
    let mut traces = Vec::new();
    let mut timings = Timings::default();
    for doc in &patient.documents {
        let (analysis, trace) = process_document(doc, ruleset, options, trace_on)?;
        timings.add(&analysis.timings);
        traces.extend(trace);
        documents.push(DocumentOutcome {
            doc_id: doc.doc_id.clone(),
            record_date: doc.record_date,
            conclusions: analysis.conclusions,
        });
    }
    let decisions = infer_patient(&patient.patient_id, patient.reference_date, &documents, &ruleset.criteria);
    Ok(RunResult {
        patient_id: patient.patient_id.clone(),
        decisions,
        documents,
        traces,
        timings,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusRun {
    /// Sorted by patient id.
    pub results: Vec<RunResult>,
    pub failures: Vec<(String, String)>,
    pub warnings: Vec<String>,
}

impl CorpusRun {
    pub fn decisions(&self) -> impl Iterator<Item = &CriterionDecision> {
        self.results.iter().flat_map(|r| r.decisions.iter())
    }
}

/// Processes every patient in `store` on `parallelism` workers. Output is
/// independent of the worker count. With `predictions_dir`, writes one
/// `{patient_id}.xml` per patient.
pub fn run_corpus(
    store: &Store,
    ruleset: &CompiledRuleset,
    options: &PipelineOptions,
    parallelism: usize,
    trace_on: bool,
    predictions_dir: Option<&Path>,
) -> Result<CorpusRun, RunError> {
    let patients = store.patients()?;
    run_patients(&patients, ruleset, options, parallelism, trace_on, predictions_dir)
}

pub fn run_patients(
    patients: &[Patient],
    ruleset: &CompiledRuleset,
    options: &PipelineOptions,
    parallelism: usize,
    trace_on: bool,
    predictions_dir: Option<&Path>,
) -> Result<CorpusRun, RunError> {
    use rayon::prelude::*;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| RunError::Pool(e.to_string()))?;
    let outcomes: Vec<Result<RunResult, PipelineError>> = pool.install(|| {
        patients
            .par_iter()
            .map(|p| process_patient(p, ruleset, options, trace_on))
            .collect()
    });
    let mut run = CorpusRun::default();
    if patients.is_empty() {
        run.warnings.push("store holds no patients".into());
    }
    for (p, outcome) in patients.iter().zip(outcomes) {
        match outcome {
            Ok(r) => run.results.push(r),
            Err(e) => run.failures.push((p.patient_id.clone(), e.to_string())),
        }
    }
    run.results.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    if let Some(dir) = predictions_dir {
        fs::create_dir_all(dir).map_err(|source| EvalError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        for r in &run.results {
            write_predictions(&r.patient_id, &r.decisions, &dir.join(format!("{}.xml", r.patient_id)))?;
        }
    }
    Ok(run)
}
