//! Dictionary concept matching with exclusion dictionaries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::inference::NumericFinding;
use crate::matcher::{Match, OverlapPolicy, RuleId, Span, Token};
use crate::ruleset::{LexicalTable, NerExcludeRule, NerIncludeRule};
use crate::temporal::ResolvedEventDate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MentionSource {
    Ner,
    Feature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mention {
    pub id: String,
    pub concept: String,
    pub span: Span,
    /// Document-level token range, half-open.
    pub tokens: (usize, usize),
    pub sentence_index: usize,
    pub attributes: BTreeMap<String, String>,
    pub source: MentionSource,
    /// Rows of the producing component's table.
    pub rule_ids: Vec<RuleId>,
    /// Set from a `NUMERIC` dictionary seed.
    pub numeric: bool,
    pub value: Option<NumericFinding>,
    pub event: Option<ResolvedEventDate>,
    /// Id of the mention a feature conclusion was drawn from.
    pub evidence: Option<String>,
}

impl Mention {
    pub fn attr(&self, name: &str) -> Option<&str> {
        self.attributes.get(name).map(String::as_str)
    }

    pub fn has_value(&self, value: &str) -> bool {
        self.attributes.values().any(|v| v == value)
    }
}

/// Tokens of one sentence plus where they sit in the document.
#[derive(Debug, Clone, Copy)]
pub struct SentenceTokens<'a> {
    pub index: usize,
    pub span: Span,
    /// Document index of `tokens[0]`.
    pub token_offset: usize,
    pub tokens: &'a [Token],
}

/// Longest-leftmost dictionary matches in one sentence, minus those
/// covered by an exclusion match aimed at the same concept (or `ANY`).
///
/// Mention ids are left empty for the caller to assign.
pub fn match_concepts(
    sentence: &SentenceTokens<'_>,
    include: &LexicalTable<NerIncludeRule>,
    exclude: &LexicalTable<NerExcludeRule>,
) -> Vec<Mention> {
    let exclusions = exclude.trie.scan(sentence.tokens, OverlapPolicy::All);
    let mut out = Vec::new();
    for m in include.trie.scan(sentence.tokens, OverlapPolicy::LongestLeftmost) {
        // One mention per distinct concept among the matched rows.
        let mut concepts: Vec<(&str, Vec<RuleId>)> = Vec::new();
        for &id in &m.rule_ids {
            let concept = include.rule(id).concept.as_str();
            match concepts.iter_mut().find(|(c, _)| *c == concept) {
                Some((_, ids)) => ids.push(id),
                None => concepts.push((concept, vec![id])),
            }
        }
        for (concept, ids) in concepts {
            if is_excluded(&m, concept, &exclusions, exclude) {
                continue;
            }
            let mut attributes = BTreeMap::new();
            let mut numeric = false;
            for &id in &ids {
                let rule = include.rule(id);
                numeric |= rule.numeric;
                for (k, v) in &rule.seeds {
                    attributes.entry(k.clone()).or_insert_with(|| v.clone());
                }
            }
            out.push(Mention {
                id: String::new(),
                concept: concept.to_string(),
                span: m.span,
                tokens: (
                    sentence.token_offset + m.token_start,
                    sentence.token_offset + m.token_end(),
                ),
                sentence_index: sentence.index,
                attributes,
                source: MentionSource::Ner,
                rule_ids: ids,
                numeric,
                value: None,
                event: None,
                evidence: None,
            });
        }
    }
    out
}

fn is_excluded(
    m: &Match,
    concept: &str,
    exclusions: &[Match],
    exclude: &LexicalTable<NerExcludeRule>,
) -> bool {
    exclusions.iter().any(|x| {
        x.span.contains(&m.span)
            && x.rule_ids.iter().any(|&id| {
                exclude
                    .rule(id)
                    .target
                    .as_deref()
                    .is_none_or(|t| t == concept)
            })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcher::{parse_phrase, tokenize, TokenTrie};

    fn include(rows: &[(&str, &str)]) -> LexicalTable<NerIncludeRule> {
        let mut trie = TokenTrie::new();
        let mut rules = Vec::new();
        for (i, (p, c)) in rows.iter().enumerate() {
            let phrase = parse_phrase(p);
            trie.insert(&phrase, RuleId(i));
            rules.push(NerIncludeRule {
                phrase,
                concept: c.to_string(),
                seeds: [("domain".to_string(), "cardiac".to_string())].into(),
                numeric: false,
            });
        }
        LexicalTable { trie, rules }
    }

    fn exclude(rows: &[(&str, Option<&str>)]) -> LexicalTable<NerExcludeRule> {
        let mut trie = TokenTrie::new();
        let mut rules = Vec::new();
        for (i, (p, c)) in rows.iter().enumerate() {
            let phrase = parse_phrase(p);
            trie.insert(&phrase, RuleId(i));
            rules.push(NerExcludeRule {
                phrase,
                target: c.map(str::to_string),
            });
        }
        LexicalTable { trie, rules }
    }

    fn run(text: &str, inc: &LexicalTable<NerIncludeRule>, exc: &LexicalTable<NerExcludeRule>) -> Vec<Mention> {
        let toks = tokenize(text);
        let s = SentenceTokens {
            index: 0,
            span: Span::new(0, text.len()),
            token_offset: 0,
            tokens: &toks,
        };
        match_concepts(&s, inc, exc)
    }

    #[test]
    fn thick_skin_is_excluded() {
        let inc = include(&[("skin", "SkinIssue"), ("skin infection", "SkinIssue")]);
        let exc = exclude(&[("thick skin", Some("SkinIssue"))]);
        assert!(run("apply to thick skin on feet", &inc, &exc).is_empty());
        assert_eq!(run("skin infection on feet", &inc, &exc).len(), 1);
        // An exclusion aimed at another concept does not veto.
        let other = exclude(&[("thick skin", Some("Other"))]);
        assert_eq!(run("apply to thick skin on feet", &inc, &other).len(), 1);
        let any = exclude(&[("thick skin", None)]);
        assert!(run("apply to thick skin on feet", &inc, &any).is_empty());
    }

    #[test]
    fn single_mention_with_seeds() {
        let inc = include(&[("mi", "MI_Candidate")]);
        let text = "MI in 2090";
        let ms = run(text, &inc, &exclude(&[]));
        assert_eq!(ms.len(), 1);
        assert_eq!(ms[0].concept, "MI_Candidate");
        assert_eq!(ms[0].span.slice(text), "MI");
        assert_eq!(ms[0].attr("domain"), Some("cardiac"));
        assert_eq!(ms[0].tokens, (0, 1));
    }

    #[test]
    fn empty_dictionary() {
        assert!(run("MI in 2090", &include(&[]), &exclude(&[])).is_empty());
    }

    #[test]
    fn one_phrase_two_concepts() {
        let inc = include(&[("aspirin", "Asa"), ("aspirin", "Antiplatelet")]);
        let ms = run("on aspirin daily", &inc, &exclude(&[("aspirin", Some("Asa"))]));
        assert_eq!(ms.len(), 1);
        assert_eq!(ms[0].concept, "Antiplatelet");
    }
}
