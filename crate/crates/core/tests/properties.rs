mod common;

use std::collections::BTreeMap;

use common::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use trialsift::corpus::{build_patient, split_records, Patient, Preprocessor};
use trialsift::demo;
use trialsift::eval::{aggregate, labels_to_xml, parse_labels, score_criterion, ConfusionCounts, CriterionScore, GoldLabelSet};
use trialsift::matcher::{parse_phrase, tokenize, OverlapPolicy, RuleId, TokenKind, TokenTrie};
use trialsift::pipeline::{process_patient, PipelineOptions};
use trialsift::ruleset::{fingerprint, ComponentKind, Decision, RuleTable};
use trialsift::segmenter::segment;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trie_scan_equals_naive_scan(seed in any::<u64>(), phrases in 1usize..60, words in 0usize..300) {
        let mut r = rng(seed);
        let parsed: Vec<_> = (0..phrases).map(|_| parse_phrase(&random_phrase(&mut r))).collect();
        let mut trie = TokenTrie::new();
        for (i, p) in parsed.iter().enumerate() {
            trie.insert(p, RuleId(i));
        }
        let tokens = tokenize(&random_text(&mut r, words));
        for policy in [OverlapPolicy::All, OverlapPolicy::LongestLeftmost] {
            let got: Vec<Hit> = trie
                .scan(&tokens, policy)
                .iter()
                .map(|m| (m.token_start, m.phrase_len, m.rule_ids.iter().map(|r| r.0).collect()))
                .collect();
            prop_assert_eq!(got, naive(&parsed, &tokens, policy));
        }
    }

    #[test]
    fn longest_leftmost_matches_do_not_overlap(seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut trie = TokenTrie::new();
        for i in 0..40 {
            trie.insert(&parse_phrase(&random_phrase(&mut r)), RuleId(i));
        }
        let tokens = tokenize(&random_text(&mut r, 200));
        let ms = trie.scan(&tokens, OverlapPolicy::LongestLeftmost);
        for w in ms.windows(2) {
            prop_assert!(w[0].token_end() <= w[1].token_start);
        }
    }

    #[test]
    fn tokens_are_ordered_slices_covering_all_content(text in "[a-zA-Z0-9 .,;:%/()\n\t\u{e9}-]{0,200}") {
        let tokens = tokenize(&text);
        let mut covered = vec![false; text.len()];
        let mut prev_end = 0;
        for t in &tokens {
            prop_assert!(t.span.begin >= prev_end && t.span.begin < t.span.end);
            prop_assert_eq!(&text[t.span.begin..t.span.end], t.surface.as_str());
            prop_assert_eq!(t.norm.clone(), t.surface.to_lowercase());
            if t.kind == TokenKind::Number {
                prop_assert!(t.surface.parse::<f64>().is_ok());
            }
            covered[t.span.begin..t.span.end].iter_mut().for_each(|c| *c = true);
            prev_end = t.span.end;
        }
        for (i, c) in text.char_indices() {
            if !(c.is_whitespace() && c != '\n') {
                prop_assert!(covered[i], "char {:?} at {} not covered", c, i);
            }
        }
    }

    #[test]
    fn split_records_preserves_record_content(records in prop::collection::vec("[A-Za-z][A-Za-z0-9 .:\n]{0,60}", 1..6)) {
        let file = records.join("\n****\n");
        let got: Vec<String> = split_records(&file).unwrap().into_iter().map(|(_, t)| t).collect();
        let want: Vec<String> = records.into_iter().filter(|r| !r.trim().is_empty()).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn sentences_are_ordered_and_trimmed(seed in any::<u64>(), words in 0usize..200) {
        let rs = demo::demo_ruleset().unwrap();
        let text = random_text(&mut rng(seed), words);
        let sentences = segment(&text, &rs.sentences);
        let mut prev = 0;
        for (i, s) in sentences.iter().enumerate() {
            prop_assert_eq!(s.index, i);
            prop_assert!(s.span.begin >= prev && s.span.begin < s.span.end && s.span.end <= text.len());
            let body = &text[s.span.begin..s.span.end];
            prop_assert_eq!(body.trim(), body);
            prev = s.span.end;
        }
        // Every word lands in some sentence.
        for t in tokenize(&text).iter().filter(|t| t.kind == TokenKind::Word) {
            prop_assert!(sentences.iter().any(|s| s.span.contains(&t.span)), "{:?} outside sentences", t.surface);
        }
    }

    #[test]
    fn context_is_unchanged_by_a_leading_sentence(pick in prop::collection::vec(0usize..CLAUSES.len(), 1..4), lead in 0usize..LEADS.len()) {
        let rs = demo::demo_ruleset().unwrap();
        let body: String = pick.iter().map(|&i| CLAUSES[i]).collect::<Vec<_>>().join(" ");
        let prefix = LEADS[lead];
        let plain = analyze(&body, &rs, None);
        let shifted = analyze(&format!("{prefix}{body}"), &rs, None);
        let key = |a: &trialsift::pipeline::DocumentAnalysis, off: usize| -> Vec<_> {
            a.mentions
                .iter()
                .filter(|m| m.span.begin >= off)
                .map(|m| (m.concept.clone(), m.span.begin - off, m.attributes.clone()))
                .collect()
        };
        prop_assert_eq!(key(&plain, 0), key(&shifted, prefix.len()));
    }

    #[test]
    fn metric_identities_hold(tp in 0u64..200, fp in 0u64..200, fn_ in 0u64..200, tn in 0u64..200) {
        prop_assume!(tp + fp + fn_ + tn > 0);
        let m = score_criterion(&ConfusionCounts { tp, fp, fn_, tn }).unwrap();
        for v in m.values() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert_eq!(m.rec_notmet, m.specificity);
        prop_assert!((m.auc - (m.rec_met + m.specificity) / 2.0).abs() < 1e-12);
        prop_assert!((m.overall_f1 - (m.f1_met + m.f1_notmet) / 2.0).abs() < 1e-12);
        // Swapping the classes swaps the per-class metrics.
        let s = score_criterion(&ConfusionCounts { tp: tn, fp: fn_, fn_: fp, tn: tp }).unwrap();
        prop_assert!((s.f1_met - m.f1_notmet).abs() < 1e-12 && (s.prec_met - m.prec_notmet).abs() < 1e-12);
    }

    #[test]
    fn identical_counts_give_identical_micro_and_macro(tp in 0u64..50, fp in 0u64..50, fn_ in 0u64..50, tn in 1u64..50, n in 1usize..14) {
        let counts = ConfusionCounts { tp, fp, fn_, tn };
        let rows: Vec<CriterionScore> = (0..n)
            .map(|i| CriterionScore { criterion: format!("C{i}"), counts, metrics: score_criterion(&counts).unwrap() })
            .collect();
        let r = aggregate(rows).unwrap();
        for (a, b) in r.micro.values().iter().zip(r.macro_.values()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn label_xml_round_trips(bits in prop::collection::vec(any::<bool>(), demo::CRITERIA.len())) {
        let criteria = demo::criteria();
        let labels: BTreeMap<String, Decision> = criteria
            .iter()
            .zip(&bits)
            .map(|(c, b)| (c.clone(), if *b { Decision::Met } else { Decision::NotMet }))
            .collect();
        let set = GoldLabelSet { patient_id: "P9".into(), labels };
        let xml = labels_to_xml(&set);
        let back = parse_labels(&xml, "P9", &criteria, "P9.xml").unwrap();
        prop_assert_eq!(&back, &set);
        prop_assert_eq!(labels_to_xml(&back), xml);
    }

    #[test]
    fn fingerprint_tracks_table_bytes(extra in "[a-z]{1,8}") {
        let base = demo::demo_tables().unwrap();
        let again = demo::demo_tables().unwrap();
        prop_assert_eq!(fingerprint(&base), fingerprint(&again));
        let mut edited = again;
        let i = edited.iter().position(|t| t.kind == ComponentKind::NerInclude).unwrap();
        let text = format!("{}{extra}\tExtra\n", edited[i].to_tsv());
        edited[i] = RuleTable::parse(&text, ComponentKind::NerInclude, "ner_include.tsv").unwrap();
        prop_assert_ne!(fingerprint(&base), fingerprint(&edited));
    }
}

const CLAUSES: [&str; 10] = [
    "No evidence of MI.",
    "Patient had an MI last year.",
    "Denies chest pain but has angina.",
    "Mother had diabetes.",
    "Possible ischemia on stress test.",
    "Takes aspirin daily.",
    "Creatinine 1.9 today.",
    "History of MI in the early 90s.",
    "No increase in angina.",
    "Smokes, drinks alcohol daily.",
];

const LEADS: [&str; 3] = ["Seen today. ", "Follow up visit.\n", "Vitals stable; afebrile. "];

const WINDOW_PATIENT: &str = "Criterion\tDecision\tEvidence\tWindowDays\tAggregation\tDefault\n\
    Recent\tmet\tMi_doc\t{w}\tANY\n\
    Recent\tnot_met\t-\tNONE\tANY\tDEFAULT\n";
const WINDOW_DOCUMENT: &str = "Criterion\tConclusion\tEvidence\tPriority\n\
    Recent\tMi_doc\tMI\t1\n\
    Recent\tNoMi_doc\t-\t0\tDEFAULT\n";

fn window_decision(w: i64, days_back: &[i64]) -> Decision {
    let temporal = "Pattern\tTag\n<NUM> - <NUM> - <NUM>\tISO_DATE\n";
    let patient_rules = WINDOW_PATIENT.replace("{w}", &w.to_string());
    let rs = ruleset(&[
        (ComponentKind::NerInclude, "Phrase\tConcept\tSeeds\nmi\tMI_Candidate\n"),
        (ComponentKind::Temporal, temporal),
        (ComponentKind::Sentence, "Pattern\tAction\n.| \\C\tend\n"),
        (ComponentKind::Feature, "C\tCA\tE\tEA\tS\nMI\tCOPYALL\tMI_Candidate\tANY\tANY\n"),
        (ComponentKind::Document, WINDOW_DOCUMENT),
        (ComponentKind::Patient, &patient_rules),
    ]);
    let reference = date(2018, 6, 15);
    let documents = days_back
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let event = reference - chrono::Duration::days(*d);
            let mut doc = document(&format!("W-{i}"), &format!("MI on {}.", event.format("%Y-%m-%d")), Some(reference));
            doc.seq = i;
            doc
        })
        .collect();
    let p = Patient { patient_id: "W".into(), documents, reference_date: Some(reference) };
    process_patient(&p, &rs, &PipelineOptions::default(), false).unwrap().decisions[0].decision
}

fn build(p: &demo::SyntheticPatient) -> Patient {
    build_patient(&p.patient_id, &p.file_text, &Preprocessor::default(), &mut Vec::new()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn widening_a_window_never_loses_a_met(days in prop::collection::vec(0i64..800, 1..4), w1 in 0i64..700, extra in 0i64..300) {
        let narrow = window_decision(w1, &days);
        let wide = window_decision(w1 + extra, &days);
        // Hand oracle: met iff some event is at most w days back.
        let expect = |w: i64| if days.iter().any(|d| *d <= w) { Decision::Met } else { Decision::NotMet };
        prop_assert_eq!(narrow, expect(w1));
        prop_assert_eq!(wide, expect(w1 + extra));
    }

    #[test]
    fn every_patient_gets_every_criterion_once(seed in any::<u64>(), n in 1usize..6) {
        let rs = demo::demo_ruleset().unwrap();
        for p in demo::generate(seed, n) {
            let patient = build(&p);
            let r = process_patient(&patient, &rs, &PipelineOptions::default(), false).unwrap();
            let got: Vec<&str> = r.decisions.iter().map(|d| d.criterion.as_str()).collect();
            prop_assert_eq!(got, demo::CRITERIA.to_vec());
        }
    }

    #[test]
    fn document_order_does_not_change_decisions(seed in any::<u64>(), shuffle in any::<u64>()) {
        let rs = demo::demo_ruleset().unwrap();
        let p = &demo::generate(seed, 1)[0];
        let documents = build(p).documents;
        let mut shuffled = documents.clone();
        shuffled.shuffle(&mut rng(shuffle));
        let run = |docs: Vec<_>| {
            let patient = Patient { patient_id: p.patient_id.clone(), documents: docs, reference_date: Some(p.reference_date()) };
            process_patient(&patient, &rs, &PipelineOptions::default(), false).unwrap().decisions
        };
        prop_assert_eq!(run(documents), run(shuffled));
    }
}
