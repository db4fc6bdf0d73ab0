//! One MI mention in three sections. Feature rules restricted to named
//! sections conclude MI only where listed, while the ANY row fires
//! everywhere.
//!
//!     cargo run --example feature_sections

use chrono::NaiveDate;
use trialsift::corpus::ClinicalDocument;
use trialsift::demo::demo_ruleset;
use trialsift::pipeline::{process_document, PipelineOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rs = demo_ruleset()?;
    for header in ["Findings", "Family History", "Impression"] {
        let doc = ClinicalDocument {
            doc_id: "F-0".into(),
            patient_id: "F".into(),
            seq: 0,
            text: format!("Record date: 2018-05-01\n{header}:\nAcute MI was seen.\n"),
            record_date: NaiveDate::from_ymd_opt(2018, 5, 1),
        };
        let (a, _) = process_document(&doc, &rs, &PipelineOptions::default(), false)?;
        let features: Vec<String> = a
            .features
            .iter()
            .map(|f| format!("{} (rows {:?})", f.concept, f.rule_ids.iter().map(|r| r.0).collect::<Vec<_>>()))
            .collect();
        let conclusions: Vec<&str> = a.conclusions.iter().map(|c| c.conclusion.as_str()).collect();
        println!("{header:<15} features {features:?}");
        println!("{:<15} documents {conclusions:?}", "");
    }
    Ok(())
}
