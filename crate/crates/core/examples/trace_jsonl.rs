//! Run one document with tracing on and print the per-component layers as
//! JSON lines.
//!
//!     cargo run --example trace_jsonl

use chrono::NaiveDate;
use trialsift::corpus::ClinicalDocument;
use trialsift::demo::demo_ruleset;
use trialsift::pipeline::{process_document, PipelineOptions, Trace};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rs = demo_ruleset()?;
    let doc = ClinicalDocument {
        doc_id: "T-0".into(),
        patient_id: "T".into(),
        seq: 0,
        text: "Record date: 2018-05-01\nImpression:\nMI 2 months ago. No angina.\n".into(),
        record_date: NaiveDate::from_ymd_opt(2018, 5, 1),
    };
    let (analysis, trace) = process_document(&doc, &rs, &PipelineOptions::default(), true)?;
    let trace = trace.expect("tracing was requested");
    let jsonl = trace.to_jsonl();
    print!("{jsonl}");
    assert_eq!(Trace::from_jsonl(&jsonl)?, trace);
    for (component, elapsed) in &analysis.timings.0 {
        eprintln!("{component:<10} {elapsed:?}");
    }
    Ok(())
}
