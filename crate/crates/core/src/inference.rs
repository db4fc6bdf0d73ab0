//! Feature, document and patient conclusion tiers.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::context::TEMPORALITY;
use crate::matcher::{RuleId, Token, TokenKind};
use crate::ner::{Mention, MentionSource};
use crate::ruleset::{
    Aggregation, CompiledRuleset, ConclusionAttributes, CriterionRules, Decision, DocumentGroup,
    DocumentRule,
};
use crate::temporal::{shift, DateInterval, EventBasis, ResolvedEventDate};

pub const DEFAULT_UNITS: [&str; 8] = ["%", "mg", "g", "mmol", "mcg", "units", "ml", "meq"];
/// How far a value may sit from its mention, in tokens.
pub const NUMERIC_WINDOW: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericFinding {
    pub value: f64,
    pub unit: Option<String>,
}

/// Feature-rule conclusions for one mention. At most one conclusion per
/// conclusion type; the first matching row wins.
pub fn apply_feature_rules(mention: &Mention, section: &str, ruleset: &CompiledRuleset) -> Vec<Mention> {
    let Some(indices) = ruleset.features_by_evidence.get(&mention.concept) else {
        return Vec::new();
    };
    let values: BTreeSet<&str> = mention.attributes.values().map(String::as_str).collect();
    let mut out: Vec<Mention> = Vec::new();
    for &i in indices {
        let rule = &ruleset.features[i];
        if out.iter().any(|m| m.concept == rule.conclusion) {
            continue;
        }
        let attrs_ok = rule
            .evidence_attributes
            .as_ref()
            .is_none_or(|req| req.iter().all(|v| values.contains(v.as_str())));
        let section_ok = rule.section.as_deref().is_none_or(|s| s == section);
        if !(attrs_ok && section_ok) {
            continue;
        }
        let attributes = match &rule.conclusion_attributes {
            ConclusionAttributes::CopyAll => mention.attributes.clone(),
            ConclusionAttributes::Explicit(pairs) => pairs.iter().cloned().collect(),
        };
        out.push(Mention {
            id: String::new(),
            concept: rule.conclusion.clone(),
            attributes,
            source: MentionSource::Feature,
            rule_ids: vec![RuleId(i)],
            evidence: Some(mention.id.clone()),
            ..mention.clone()
        });
    }
    out
}

/// Nearest number within [`NUMERIC_WINDOW`] tokens after the mention, then
/// before it. `skip` marks sentence-local tokens that must not be read as
/// values (dates, for instance).
pub fn extract_numeric_value(
    mention_tokens: (usize, usize),
    sentence_tokens: &[Token],
    skip: &dyn Fn(usize) -> bool,
    units: &[String],
) -> Option<NumericFinding> {
    let (first, end) = mention_tokens;
    let after = (end..sentence_tokens.len()).take(NUMERIC_WINDOW);
    let before = (first.saturating_sub(NUMERIC_WINDOW)..first).rev();
    after.chain(before).find_map(|i| {
        let tok = &sentence_tokens[i];
        if tok.kind != TokenKind::Number || skip(i) {
            return None;
        }
        let value: f64 = tok.norm.parse().ok().filter(|v: &f64| v.is_finite())?;
        let unit = sentence_tokens
            .get(i + 1)
            .filter(|u| matches!(u.kind, TokenKind::Word | TokenKind::Punct))
            .filter(|u| units.iter().any(|x| x.eq_ignore_ascii_case(&u.norm)))
            .map(|u| u.norm.clone());
        Some(NumericFinding { value, unit })
    })
}

/// Evidence carried from a mention into document and patient conclusions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceRef {
    pub mention_id: String,
    pub concept: String,
    pub event: Option<ResolvedEventDate>,
    pub temporality: Option<String>,
    pub value: Option<f64>,
}

impl EvidenceRef {
    pub fn from_mention(m: &Mention) -> Self {
        EvidenceRef {
            mention_id: m.id.clone(),
            concept: m.concept.clone(),
            event: m.event,
            temporality: m.attr(TEMPORALITY).map(str::to_string),
            value: m.value.as_ref().map(|v| v.value),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentConclusion {
    pub doc_id: String,
    pub criterion: String,
    #[serde(rename = "type")]
    pub conclusion: String,
    pub evidence: Vec<EvidenceRef>,
    pub priority: i64,
    pub is_default: bool,
}

fn evidence_for<'m>(rule: &DocumentRule, mentions: &'m [Mention]) -> Vec<&'m Mention> {
    mentions
        .iter()
        .filter(|m| rule.evidence.iter().any(|e| *e == m.concept))
        .filter(|m| {
            rule.condition
                .is_none_or(|c| m.value.as_ref().is_some_and(|v| c.holds(v.value)))
        })
        .collect()
}

/// One conclusion per document group: the highest-priority rule with
/// evidence present, else the group's DEFAULT.
pub fn infer_document(doc_id: &str, mentions: &[Mention], groups: &[DocumentGroup]) -> Vec<DocumentConclusion> {
    groups
        .iter()
        .map(|group| {
            let fired = group.rules.iter().find_map(|rule| {
                let ev = evidence_for(rule, mentions);
                (!ev.is_empty()).then_some((rule, ev))
            });
            let (rule, evidence) = match fired {
                Some((rule, ev)) => (rule, ev.into_iter().map(EvidenceRef::from_mention).collect()),
                None => (&group.default, Vec::new()),
            };
            DocumentConclusion {
                doc_id: doc_id.to_string(),
                criterion: group.criterion.clone(),
                conclusion: rule.conclusion.clone(),
                evidence,
                priority: rule.priority,
                is_default: rule.is_default,
            }
        })
        .collect()
}

/// Per-document input to patient inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentOutcome {
    pub doc_id: String,
    pub record_date: Option<NaiveDate>,
    pub conclusions: Vec<DocumentConclusion>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DecisionEvidence {
    pub doc_id: String,
    pub conclusion: String,
    pub interval: Option<DateInterval>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriterionDecision {
    pub patient_id: String,
    pub criterion: String,
    pub decision: Decision,
    pub evidence: Vec<DecisionEvidence>,
}

/// Within-window check for one evidence mention. Historical mentions only
/// count when an explicit expression puts them inside the window.
fn mention_in_window(ev: &EvidenceRef, cutoff: NaiveDate) -> Option<DateInterval> {
    let event = ev.event?;
    let interval = event.interval?;
    if ev.temporality.as_deref() == Some("historical") && event.basis != EventBasis::Expression {
        return None;
    }
    (interval.latest >= cutoff).then_some(interval)
}

/// One decision per criterion, in ruleset order. Non-default rules are
/// tried in row order; the first satisfied one decides.
pub fn infer_patient(
    patient_id: &str,
    reference_date: Option<NaiveDate>,
    documents: &[DocumentOutcome],
    criteria: &[CriterionRules],
) -> Vec<CriterionDecision> {
    criteria
        .iter()
        .map(|c| decide(patient_id, reference_date, documents, c))
        .collect()
}

fn decide(
    patient_id: &str,
    reference_date: Option<NaiveDate>,
    documents: &[DocumentOutcome],
    criterion: &CriterionRules,
) -> CriterionDecision {
    for rule in &criterion.rules {
        let Some(wanted) = rule.evidence.as_deref() else { continue };
        let cutoff = match (rule.window_days, reference_date) {
            (None, _) => None,
            (Some(w), Some(r)) => Some(shift(r, -w)),
            // A window needs a reference date.
            (Some(_), None) => continue,
        };
        let mut evidence = Vec::new();
        let mut concepts: BTreeSet<&str> = BTreeSet::new();
        for doc in documents {
            for c in doc.conclusions.iter().filter(|c| c.conclusion == wanted) {
                let (qualifies, interval) = match cutoff {
                    None => {
                        concepts.extend(c.evidence.iter().map(|e| e.concept.as_str()));
                        let iv = c
                            .evidence
                            .iter()
                            .filter_map(|e| e.event.and_then(|ev| ev.interval))
                            .max_by_key(|iv| iv.latest)
                            .or(doc.record_date.map(DateInterval::day));
                        (true, iv)
                    }
                    Some(cut) if c.evidence.is_empty() => {
                        let d = doc.record_date.filter(|d| *d >= cut);
                        (d.is_some(), d.map(DateInterval::day))
                    }
                    Some(cut) => {
                        let mut best: Option<DateInterval> = None;
                        for e in &c.evidence {
                            if let Some(iv) = mention_in_window(e, cut) {
                                concepts.insert(e.concept.as_str());
                                if best.is_none_or(|b| iv.latest > b.latest) {
                                    best = Some(iv);
                                }
                            }
                        }
                        (best.is_some(), best)
                    }
                };
                if qualifies {
                    evidence.push(DecisionEvidence {
                        doc_id: doc.doc_id.clone(),
                        conclusion: c.conclusion.clone(),
                        interval,
                    });
                }
            }
        }
        let satisfied = match rule.aggregation {
            Aggregation::Any => !evidence.is_empty(),
            Aggregation::AtLeast(k) => concepts.len() >= k,
        };
        if satisfied {
            evidence.sort();
            return CriterionDecision {
                patient_id: patient_id.to_string(),
                criterion: criterion.criterion.clone(),
                decision: rule.decision,
                evidence,
            };
        }
    }
    CriterionDecision {
        patient_id: patient_id.to_string(),
        criterion: criterion.criterion.clone(),
        decision: criterion.default.decision,
        evidence: Vec::new(),
    }
}

/// Decisions keyed by criterion, convenient for comparisons.
pub fn decision_map(decisions: &[CriterionDecision]) -> BTreeMap<String, Decision> {
    decisions
        .iter()
        .map(|d| (d.criterion.clone(), d.decision))
        .collect()
}
