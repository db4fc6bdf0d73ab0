//! Split a note into sections and sentences with the demo rules.
//!
//!     cargo run --example sections_and_sentences

use trialsift::demo::demo_ruleset;
use trialsift::matcher::tokenize;
use trialsift::sectioner::{detect_sections, HeaderOptions};
use trialsift::segmenter::segment;

const NOTE: &str = "Record date: 2019-03-02\n\
Patient seen for follow up.\n\
\n\
History of Present Illness:\n\
Chest pain for 2 days. Dr. Lee saw him on 3/1.\n\
Impression:\n\
Stable angina\n\
Plan: start aspirin 81 mg daily.\n";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rs = demo_ruleset()?;
    let tokens = tokenize(NOTE);
    let sections = detect_sections(NOTE, &tokens, &rs.sections, HeaderOptions::default());
    for s in &sections.spans {
        println!("[{}] {:?}", s.name, s.body_text(NOTE));
    }
    println!();
    for s in segment(NOTE, &rs.sentences) {
        let section = sections.section_of(s.span.begin)?;
        println!("{:>2} {:<15} {:?}", s.index, section, s.span.slice(NOTE));
    }
    Ok(())
}
