//! Generate the seeded synthetic cohort, run the demo ruleset over it and
//! score the decisions against the generator's gold labels.
//!
//!     cargo run --example synthetic_cohort

use trialsift::corpus::{build_patient, Preprocessor};
use trialsift::demo::{criteria, demo_ruleset, generate, DEMO_PATIENTS, DEMO_SEED};
use trialsift::eval::{score_labels, GoldLabelSet};
use trialsift::pipeline::{run_patients, PipelineOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ruleset = demo_ruleset()?;
    let synthetic = generate(DEMO_SEED, DEMO_PATIENTS);
    let pre = Preprocessor::default();
    let mut warnings = Vec::new();
    let patients = synthetic
        .iter()
        .map(|p| build_patient(&p.patient_id, &p.file_text, &pre, &mut warnings))
        .collect::<Result<Vec<_>, _>>()?;

    let run = run_patients(&patients, &ruleset, &PipelineOptions::default(), 4, false, None)?;
    let predicted: Vec<GoldLabelSet> = run
        .results
        .iter()
        .map(|r| GoldLabelSet::from_decisions(&r.patient_id, &r.decisions))
        .collect();
    let gold: Vec<GoldLabelSet> = synthetic.iter().map(|p| p.gold.clone()).collect();

    for (g, p) in gold.iter().zip(&predicted) {
        for (criterion, want) in &g.labels {
            let got = p.labels[criterion];
            if got != *want {
                println!("{} {criterion}: gold {want}, predicted {got}", g.patient_id);
            }
        }
    }
    let report = score_labels(&gold, &predicted, &criteria())?;
    print!("{}", report.to_tsv());
    println!("micro F1 (met) = {:.4}", report.micro.f1_met);
    Ok(())
}
