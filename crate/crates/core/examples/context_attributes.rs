//! Show the negation, certainty, experiencer and temporality attributes
//! ConText-style triggers assign to dictionary mentions.
//!
//!     cargo run --example context_attributes

use chrono::NaiveDate;
use trialsift::corpus::ClinicalDocument;
use trialsift::demo::demo_ruleset;
use trialsift::pipeline::{process_document, PipelineOptions};

const SENTENCES: [&str; 7] = [
    "Patient had an MI.",
    "No evidence of MI.",
    "Rule out MI.",
    "Mother had an MI.",
    "Denies chest pain but reports angina.",
    "MI in 2009.",
    "No MI, but angina persists.",
];

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rs = demo_ruleset()?;
    let options = PipelineOptions::default();
    for (i, s) in SENTENCES.iter().enumerate() {
        let doc = ClinicalDocument {
            doc_id: format!("X-{i}"),
            patient_id: "X".into(),
            seq: i,
            text: format!("Record date: 2019-06-01\n{s}\n"),
            record_date: NaiveDate::from_ymd_opt(2019, 6, 1),
        };
        let (analysis, _) = process_document(&doc, &rs, &options, false)?;
        println!("{s}");
        for m in &analysis.mentions {
            let attrs: Vec<String> = m.attributes.iter().map(|(k, v)| format!("{k}={v}")).collect();
            println!("  {:<14} {}", m.concept, attrs.join(" "));
        }
    }
    Ok(())
}
