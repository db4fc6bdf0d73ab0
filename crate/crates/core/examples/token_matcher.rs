//! Build a token trie from rule phrases and scan a sentence with both
//! overlap policies.
//!
//!     cargo run --example token_matcher

use trialsift::matcher::{parse_phrase, tokenize, OverlapPolicy, RuleId, TokenTrie};

fn main() {
    let phrases = ["heart attack", "attack", "hba1c of <NUM>", "\"MI\"", "history of <ANY> disease"];
    let mut trie = TokenTrie::new();
    for (i, p) in phrases.iter().enumerate() {
        trie.insert(&parse_phrase(p), RuleId(i));
    }
    let text = "Heart attack in 2015; HbA1c of 7.2 and history of renal disease. Note mi vs MI.";
    let tokens = tokenize(text);

    for policy in [OverlapPolicy::LongestLeftmost, OverlapPolicy::All] {
        println!("{policy:?}");
        for m in trie.scan(&tokens, policy) {
            let rules: Vec<&str> = m.rule_ids.iter().map(|r| phrases[r.0]).collect();
            println!("  {:>3}..{:<3} {:?} <- {rules:?}", m.span.begin, m.span.end, m.span.slice(text));
        }
    }
    let s = trie.stats();
    println!("nodes {} edges {} accepting {}", s.nodes, s.edges, s.accepting);
}
