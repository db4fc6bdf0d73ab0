#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use trialsift::corpus::ClinicalDocument;
use trialsift::matcher::{OverlapPolicy, PatternToken, Token, TokenKind};
use trialsift::pipeline::{process_document, DocumentAnalysis, PipelineOptions};
use trialsift::ruleset::{compile, CompiledRuleset, ComponentKind, RuleTable};

/// (token start, token length, sorted rule ids)
pub type Hit = (usize, usize, Vec<usize>);

fn token_fits(p: &PatternToken, t: &Token) -> bool {
    match p {
        PatternToken::Folded(s) => t.norm == *s,
        PatternToken::Cased(s) => t.surface == *s,
        PatternToken::Num => t.kind == TokenKind::Number,
        PatternToken::Any => true,
    }
}

/// Every (start, phrase) pair tried directly.
pub fn naive_all(phrases: &[Vec<PatternToken>], tokens: &[Token]) -> Vec<Hit> {
    let mut grouped: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for start in 0..tokens.len() {
        for (id, p) in phrases.iter().enumerate() {
            if p.is_empty() || start + p.len() > tokens.len() {
                continue;
            }
            if p.iter().zip(&tokens[start..]).all(|(pt, t)| token_fits(pt, t)) {
                grouped.entry((start, p.len())).or_default().push(id);
            }
        }
    }
    let mut out: Vec<Hit> = grouped.into_iter().map(|((s, l), mut ids)| {
        ids.sort_unstable();
        (s, l, ids)
    }).collect();
    // Start ascending, longer first.
    out.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
    out
}

pub fn naive_longest_leftmost(phrases: &[Vec<PatternToken>], tokens: &[Token]) -> Vec<Hit> {
    let all = naive_all(phrases, tokens);
    let mut out = Vec::new();
    let mut next = 0;
    for h in all {
        // The first hit at a start is the longest one.
        if h.0 >= next {
            next = h.0 + h.1;
            out.push(h);
        }
    }
    out
}

pub fn naive(phrases: &[Vec<PatternToken>], tokens: &[Token], policy: OverlapPolicy) -> Vec<Hit> {
    match policy {
        OverlapPolicy::All => naive_all(phrases, tokens),
        OverlapPolicy::LongestLeftmost => naive_longest_leftmost(phrases, tokens),
    }
}

pub const VOCAB: [&str; 40] = [
    "chest", "pain", "denies", "history", "of", "myocardial", "infarction", "mi", "no", "patient",
    "reports", "shortness", "breath", "with", "the", "left", "arm", "aspirin", "daily", "mg",
    "stent", "placed", "in", "was", "noted", "on", "exam", "cad", "angina", "stable",
    "nitroglycerin", "prn", "mother", "had", "diabetes", "type", "2", "10", "3.5", "95",
];

/// A random phrase cell over [`VOCAB`] with occasional wildcards and quoting.
pub fn random_phrase(rng: &mut ChaCha8Rng) -> String {
    let len = rng.random_range(1..=4);
    let mut words: Vec<String> = (0..len)
        .map(|_| match rng.random_range(0..20) {
            0 => "<NUM>".to_string(),
            1 => "<ANY>".to_string(),
            _ => VOCAB.choose(rng).unwrap().to_string(),
        })
        .collect();
    if rng.random_bool(0.1) {
        words[0] = capitalize(&words[0]);
        return format!("\"{}\"", words.join(" "));
    }
    words.join(" ")
}

pub fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) if !w.starts_with('<') => f.to_uppercase().chain(c).collect(),
        _ => w.to_string(),
    }
}

/// Random text of `n` words over [`VOCAB`], some capitalized, some
/// followed by punctuation.
pub fn random_text(rng: &mut ChaCha8Rng, n: usize) -> String {
    let mut s = String::new();
    for _ in 0..n {
        let w = VOCAB.choose(rng).unwrap();
        if rng.random_bool(0.15) {
            s.push_str(&capitalize(w));
        } else {
            s.push_str(w);
        }
        match rng.random_range(0..12) {
            0 => s.push_str(". "),
            1 => s.push_str(", "),
            2 => s.push('\n'),
            _ => s.push(' '),
        }
    }
    s
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Compiles the given tables; required lexical tables left out are empty.
pub fn ruleset(tables: &[(ComponentKind, &str)]) -> CompiledRuleset {
    let mut out: Vec<RuleTable> = tables
        .iter()
        .map(|(k, text)| RuleTable::parse(text, *k, &format!("{}.tsv", k.name())).unwrap())
        .collect();
    for k in [
        ComponentKind::Section,
        ComponentKind::Sentence,
        ComponentKind::NerInclude,
        ComponentKind::Context,
        ComponentKind::Temporal,
    ] {
        if !out.iter().any(|t| t.kind == k) {
            out.push(RuleTable::empty(k));
        }
    }
    compile(out).unwrap()
}

pub fn document(doc_id: &str, text: &str, record_date: Option<chrono::NaiveDate>) -> ClinicalDocument {
    ClinicalDocument {
        doc_id: doc_id.to_string(),
        patient_id: doc_id.split('-').next().unwrap_or(doc_id).to_string(),
        seq: 0,
        text: text.to_string(),
        record_date,
    }
}

pub fn analyze(text: &str, rs: &CompiledRuleset, record_date: Option<chrono::NaiveDate>) -> DocumentAnalysis {
    let doc = document("X-0", text, record_date);
    process_document(&doc, rs, &PipelineOptions::default(), false).unwrap().0
}

pub fn date(y: i32, m: u32, d: u32) -> chrono::NaiveDate {
    chrono::NaiveDate::from_ymd_opt(y, m, d).unwrap()
}
