//! ConText-style attribute assignment.
//!
//! Trigger phrases scope mentions within a token window in their direction.
//! Scope stops at the sentence edges and at terminate phrases of the same
//! attribute. Pseudo phrases swallow overlapping triggers of their attribute
//! and fire nothing themselves. When several triggers of one attribute scope
//! a mention, the nearest wins and ties go to the later-starting trigger.

use std::collections::BTreeMap;

use crate::matcher::OverlapPolicy;
use crate::ner::{Mention, SentenceTokens};
use crate::ruleset::{ContextFlag, ContextRule, Direction, LexicalTable, ANY};

pub const NEGATION: &str = "negation";
pub const CERTAINTY: &str = "certainty";
pub const EXPERIENCER: &str = "experiencer";
pub const TEMPORALITY: &str = "temporality";

/// The four reserved dimensions and their values when nothing fires.
pub const DEFAULTS: [(&str, &str); 4] = [
    (NEGATION, "affirm"),
    (CERTAINTY, "certain"),
    (EXPERIENCER, "patient"),
    (TEMPORALITY, "present"),
];

#[derive(Debug, Clone, Copy)]
struct Hit<'r> {
    rule: &'r ContextRule,
    start: usize,
    end: usize,
}

fn same_attribute(a: &str, b: &str) -> bool {
    a == b || a == ANY || b == ANY
}

/// Sets context attributes on every mention of `sentence`. A firing trigger
/// overrides a dictionary seed; a seed overrides the default.
pub fn apply_context(sentence: &SentenceTokens<'_>, mentions: &mut [Mention], rules: &LexicalTable<ContextRule>) {
    let mut triggers = Vec::new();
    let mut pseudos = Vec::new();
    let mut terminates = Vec::new();
    for m in rules.trie.scan(sentence.tokens, OverlapPolicy::All) {
        for &id in &m.rule_ids {
            let rule = rules.rule(id);
            let hit = Hit {
                rule,
                start: m.token_start,
                end: m.token_end(),
            };
            match rule.flag {
                ContextFlag::Trigger => triggers.push(hit),
                ContextFlag::Pseudo => pseudos.push(hit),
                ContextFlag::Terminate => terminates.push(hit),
            }
        }
    }
    triggers.retain(|t| {
        !pseudos.iter().any(|p| {
            same_attribute(&p.rule.attribute, &t.rule.attribute) && p.start < t.end && t.start < p.end
        })
    });

    for mention in mentions.iter_mut() {
        let first = mention.tokens.0 - sentence.token_offset;
        let last = mention.tokens.1 - sentence.token_offset;
        // attribute -> (distance, trigger start, value)
        let mut best: BTreeMap<&str, (usize, usize, &str)> = BTreeMap::new();
        for t in &triggers {
            let Some(dist) = scope_distance(t, first, last, &terminates) else {
                continue;
            };
            let entry = (dist, t.start, t.rule.value.as_str());
            best.entry(t.rule.attribute.as_str())
                .and_modify(|cur| {
                    if dist < cur.0 || (dist == cur.0 && t.start > cur.1) {
                        *cur = entry;
                    }
                })
                .or_insert(entry);
        }
        for (attr, (_, _, value)) in best {
            mention.attributes.insert(attr.to_string(), value.to_string());
        }
        for (attr, value) in DEFAULTS {
            mention
                .attributes
                .entry(attr.to_string())
                .or_insert_with(|| value.to_string());
        }
    }
}

/// Token distance from trigger to the mention's first token if the
/// trigger scopes the mention.
fn scope_distance(t: &Hit<'_>, first: usize, last: usize, terminates: &[Hit<'_>]) -> Option<usize> {
    let blocked = |lo: usize, hi: usize| {
        terminates
            .iter()
            .any(|x| same_attribute(&x.rule.attribute, &t.rule.attribute) && lo <= x.start && x.start < hi)
    };
    let forward = || -> Option<usize> {
        if first < t.end {
            return None;
        }
        let dist = first - t.end + 1;
        (dist <= t.rule.window && !blocked(t.end, first)).then_some(dist)
    };
    let backward = || -> Option<usize> {
        if last > t.start {
            return None;
        }
        let dist = t.start - first;
        (dist <= t.rule.window && !blocked(last, t.start)).then_some(dist)
    };
    match t.rule.direction {
        Direction::Forward => forward(),
        Direction::Backward => backward(),
        Direction::Both => forward().or_else(backward),
    }
}
