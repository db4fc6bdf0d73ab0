//! Per-criterion metrics from confusion counts and the micro and macro
//! aggregates.
//!
//!     cargo run --example metrics

use trialsift::eval::{aggregate, score_criterion, ConfusionCounts, CriterionScore};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rows = [("Abdominal", 25, 8, 5, 48), ("Creatinine", 20, 3, 4, 59), ("Hba1c", 31, 6, 4, 45)];
    let mut scores = Vec::new();
    for (name, tp, fp, fn_, tn) in rows {
        let counts = ConfusionCounts { tp, fp, fn_, tn };
        scores.push(CriterionScore {
            criterion: name.to_string(),
            counts,
            metrics: score_criterion(&counts)?,
        });
    }
    let report = aggregate(scores)?;
    print!("{}", report.to_tsv());
    Ok(())
}
