//! Find and interpret temporal expressions relative to a record date, then
//! classify a few event dates as historical or present.
//!
//!     cargo run --example temporal_expressions

use chrono::NaiveDate;
use trialsift::demo::demo_ruleset;
use trialsift::matcher::tokenize;
use trialsift::temporal::{classify_temporality, find_expressions, EventBasis, ResolvedEventDate};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rs = demo_ruleset()?;
    let record = NaiveDate::from_ymd_opt(2018, 5, 1).unwrap();
    let text = "MI in the early 90s, stent placed 3 years ago, angina since March 2018, \
                seen on 04/20/2018 and again yesterday.";
    let tokens = tokenize(text);
    for e in find_expressions(&tokens, &rs.temporal, Some(record)) {
        let resolved = ResolvedEventDate {
            interval: Some(e.interval),
            basis: EventBasis::Expression,
        };
        let t = classify_temporality(&resolved, record, 30).map(|t| t.as_str()).unwrap_or("undatable");
        println!(
            "{:<22} {:<10} {} .. {}  {t}",
            format!("{:?}", e.span.slice(text)),
            e.tag.name(),
            e.interval.earliest,
            e.interval.latest
        );
    }
    Ok(())
}
