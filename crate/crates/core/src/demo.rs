//! Bundled demo assets: a ruleset covering the thirteen challenge criteria
//! and a seeded generator of synthetic patients with gold labels.
//!
//! The generator plants facts, renders them as note sentences, and labels
//! each patient from the facts alone. The pipeline never sees the facts.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use chrono::{Days, Months, NaiveDate};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eval::{labels_to_xml, GoldLabelSet};
use crate::ruleset::{compile, CompiledRuleset, ComponentKind, Decision, RuleError, RuleTable};

pub const DEMO_SEED: u64 = 2018;
pub const DEMO_PATIENTS: usize = 20;

pub const CRITERIA: [&str; 13] = [
    "Abdominal",
    "Advanced-cad",
    "Alcohol-abuse",
    "Asp-for-mi",
    "Creatinine",
    "Dietsupp-2mos",
    "Drug-abuse",
    "English",
    "Hba1c",
    "Keto-1yr",
    "Major-diabetes",
    "Makes-decisions",
    "Mi-6mos",
];

pub const RULE_FILES: [(ComponentKind, &str); 9] = [
    (ComponentKind::Section, include_str!("../rules/demo/section.tsv")),
    (ComponentKind::Sentence, include_str!("../rules/demo/sentence.tsv")),
    (ComponentKind::NerInclude, include_str!("../rules/demo/ner_include.tsv")),
    (ComponentKind::NerExclude, include_str!("../rules/demo/ner_exclude.tsv")),
    (ComponentKind::Context, include_str!("../rules/demo/context.tsv")),
    (ComponentKind::Temporal, include_str!("../rules/demo/temporal.tsv")),
    (ComponentKind::Feature, include_str!("../rules/demo/feature.tsv")),
    (ComponentKind::Document, include_str!("../rules/demo/document.tsv")),
    (ComponentKind::Patient, include_str!("../rules/demo/patient.tsv")),
];

pub fn criteria() -> Vec<String> {
    CRITERIA.iter().map(|c| c.to_string()).collect()
}

pub fn demo_tables() -> Result<Vec<RuleTable>, RuleError> {
    RULE_FILES
        .iter()
        .map(|(kind, text)| RuleTable::parse(text, *kind, &format!("{}.tsv", kind.name())))
        .collect()
}

pub fn demo_ruleset() -> Result<CompiledRuleset, RuleError> {
    compile(demo_tables()?)
}

/// Writes the demo tables as `<kind>.tsv` files.
pub fn write_rules(dir: &Path) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    for (kind, text) in RULE_FILES {
        fs::write(dir.join(format!("{}.tsv", kind.name())), text)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Section {
    PresentHistory,
    PastHistory,
    Findings,
    Medications,
    Labs,
    Social,
    Family,
    Impression,
}

impl Section {
    const ORDER: [Section; 8] = [
        Section::PresentHistory,
        Section::PastHistory,
        Section::Findings,
        Section::Medications,
        Section::Labs,
        Section::Social,
        Section::Family,
        Section::Impression,
    ];

    fn header(self) -> &'static str {
        match self {
            Section::PresentHistory => "History of Present Illness:",
            Section::PastHistory => "Past Medical History:",
            Section::Findings => "Findings:",
            Section::Medications => "Medications:",
            Section::Labs => "Labs:",
            Section::Social => "Social History:",
            Section::Family => "Family History:",
            Section::Impression => "Impression:",
        }
    }

    /// Sections the MI feature rows accept.
    fn counts_for_mi(self) -> bool {
        matches!(self, Section::PresentHistory | Section::Impression | Section::Findings)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kind {
    Mi,
    Angina,
    Ischemia,
    Nitrate,
    BetaBlocker,
    Aspirin,
    Abdominal,
    Alcohol,
    Drug,
    Creatinine(f64),
    Hba1c(f64),
    DietSupp,
    Keto,
    DmComplication,
    NonEnglish,
    Incapacity,
}

impl Kind {
    fn is_cad(self) -> bool {
        matches!(self, Kind::Mi | Kind::Angina | Kind::Ischemia | Kind::Nitrate | Kind::BetaBlocker)
    }

    fn cad_key(self) -> &'static str {
        match self {
            Kind::Mi => "mi",
            Kind::Angina => "angina",
            Kind::Ischemia => "ischemia",
            Kind::Nitrate => "nitrate",
            _ => "beta",
        }
    }

    fn home(self) -> Section {
        match self {
            Kind::Nitrate | Kind::BetaBlocker | Kind::Aspirin | Kind::DietSupp => Section::Medications,
            Kind::Creatinine(_) | Kind::Hba1c(_) => Section::Labs,
            Kind::Alcohol | Kind::Drug | Kind::NonEnglish => Section::Social,
            Kind::Abdominal | Kind::DmComplication | Kind::Keto => Section::PastHistory,
            Kind::Mi | Kind::Angina | Kind::Ischemia | Kind::Incapacity => Section::PresentHistory,
        }
    }

    /// Noun phrase for negated, hedged and family sentences.
    fn phrase(self) -> &'static str {
        match self {
            Kind::Mi => "MI",
            Kind::Angina => "angina",
            Kind::Ischemia => "ischemia",
            Kind::Nitrate => "nitroglycerin",
            Kind::BetaBlocker => "metoprolol",
            Kind::Aspirin => "aspirin",
            Kind::Abdominal => "appendectomy",
            Kind::Alcohol => "alcohol abuse",
            Kind::Drug => "drug abuse",
            Kind::DietSupp => "fish oil",
            Kind::Keto => "DKA",
            Kind::DmComplication => "diabetic neuropathy",
            Kind::NonEnglish => "Cantonese",
            Kind::Incapacity => "dementia",
            Kind::Creatinine(_) | Kind::Hba1c(_) => unreachable!("labs are never negated"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Affirmed,
    Negated,
    Family,
    Possible,
}

/// One planted statement.
#[derive(Debug, Clone, PartialEq)]
pub struct Fact {
    pub kind: Kind,
    pub polarity: Polarity,
    pub doc: usize,
    pub section: Section,
    /// Stated as past history ("History of ...").
    pub historical: bool,
    /// Stated as "N months ago".
    pub months_ago: Option<u32>,
    pub sentence: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPatient {
    pub patient_id: String,
    pub record_dates: Vec<NaiveDate>,
    pub facts: Vec<Fact>,
    pub file_text: String,
    pub gold: GoldLabelSet,
}

impl SyntheticPatient {
    pub fn reference_date(&self) -> NaiveDate {
        *self.record_dates.iter().max().expect("at least one record")
    }

    fn offset_days(&self, doc: usize) -> i64 {
        (self.reference_date() - self.record_dates[doc]).num_days()
    }
}

fn affirmed_sentence(kind: Kind, historical: bool, months_ago: Option<u32>, rng: &mut ChaCha8Rng) -> String {
    let pick = |rng: &mut ChaCha8Rng, options: &[&str]| options.choose(rng).unwrap().to_string();
    if historical {
        let np = match kind {
            Kind::Mi => "myocardial infarction",
            Kind::Abdominal => "colectomy",
            Kind::Alcohol => "alcoholism",
            Kind::Drug => "IVDU",
            Kind::Keto => "DKA",
            other => other.phrase(),
        };
        return format!("History of {np}.");
    }
    match kind {
        Kind::Mi => {
            let np = pick(rng, &["an NSTEMI", "an MI", "a myocardial infarction"]);
            match months_ago {
                Some(k) => format!("Found to have {np} {k} months ago."),
                None => format!("Found to have {np}."),
            }
        }
        Kind::Angina => pick(
            rng,
            &[
                "Reports exertional angina.",
                "No increase in angina since last visit.",
                "No fever but reports angina.",
            ],
        ),
        Kind::Ischemia => pick(rng, &["Stress test shows ischemic changes.", "Ischemia noted on imaging."]),
        Kind::Nitrate => pick(rng, &["Takes nitroglycerin as needed.", "Started isosorbide mononitrate."]),
        Kind::BetaBlocker => pick(rng, &["Started on labetalol.", "Continues metoprolol."]),
        Kind::Aspirin => pick(rng, &["Takes aspirin 81 mg daily.", "On ASA daily."]),
        Kind::Abdominal => pick(rng, &["Status post cholecystectomy.", "Underwent appendectomy."]),
        Kind::Alcohol => pick(rng, &["Ongoing alcohol abuse.", "Reports alcohol dependence."]),
        Kind::Drug => pick(rng, &["Active cocaine use.", "Reports heroin use."]),
        Kind::Creatinine(v) => format!("Creatinine {v:.1} mg/dL."),
        Kind::Hba1c(v) => format!("HbA1c {v:.1}%."),
        Kind::DietSupp => pick(rng, &["Takes fish oil daily.", "Started a multivitamin."]),
        Kind::Keto => pick(rng, &["Admitted for DKA.", "Treated for diabetic ketoacidosis."]),
        Kind::DmComplication => pick(rng, &["Has diabetic retinopathy.", "Followed for diabetic nephropathy."]),
        Kind::NonEnglish => pick(rng, &["Speaks only Taiwanese; daughter interprets.", "Speaks Mandarin only."]),
        Kind::Incapacity => pick(rng, &["Has advanced dementia.", "Is incapacitated per neurology."]),
    }
}

fn other_sentence(kind: Kind, polarity: Polarity, rng: &mut ChaCha8Rng) -> String {
    let np = kind.phrase();
    match polarity {
        Polarity::Negated => match kind {
            Kind::Nitrate | Kind::BetaBlocker | Kind::Aspirin | Kind::DietSupp => format!("Denies taking {np}."),
            Kind::Abdominal => format!("Denies prior {np}."),
            _ => {
                let lead = ["No evidence of", "Denies", "Negative for"].choose(rng).unwrap();
                format!("{lead} {np}.")
            }
        },
        Polarity::Family => {
            let who = ["Mother", "Father", "Brother"].choose(rng).unwrap();
            match kind {
                Kind::NonEnglish => format!("{who} speaks only {np}."),
                Kind::Nitrate | Kind::BetaBlocker | Kind::Aspirin | Kind::DietSupp => format!("{who} takes {np}."),
                _ => format!("{who} had {np}."),
            }
        }
        Polarity::Possible => format!("Possible {np}."),
        Polarity::Affirmed => unreachable!(),
    }
}

const FILLER: [&str; 5] = [
    "Seen in clinic for follow up.",
    "Apply cream to thick skin on feet.",
    "Denies chest pain.",
    "Sleeping well.",
    "Reports aspirin allergy.",
];

struct Builder<'r> {
    rng: &'r mut ChaCha8Rng,
    facts: Vec<Fact>,
    docs: usize,
}

impl Builder<'_> {
    fn add(&mut self, kind: Kind, polarity: Polarity, doc: usize, section: Section, historical: bool, months_ago: Option<u32>) {
        let sentence = match polarity {
            Polarity::Affirmed => affirmed_sentence(kind, historical, months_ago, self.rng),
            p => other_sentence(kind, p, self.rng),
        };
        self.facts.push(Fact {
            kind,
            polarity,
            doc,
            section,
            historical,
            months_ago,
            sentence,
        });
    }

    fn affirm(&mut self, kind: Kind, doc: usize) {
        self.add(kind, Polarity::Affirmed, doc, kind.home(), false, None);
    }

    fn any_doc(&mut self) -> usize {
        self.rng.random_range(0..self.docs)
    }

    /// A hedged, negated or family statement that must not count.
    fn decoy(&mut self, kind: Kind) {
        let polarity = match kind {
            // A family member's language is the only sensible decoy.
            Kind::NonEnglish => Polarity::Family,
            _ => *[Polarity::Negated, Polarity::Family, Polarity::Possible].choose(self.rng).unwrap(),
        };
        let section = if polarity == Polarity::Family { Section::Family } else { kind.home() };
        let doc = self.any_doc();
        self.add(kind, polarity, doc, section, false, None);
    }
}

fn random_value(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo..hi) * 10.0).round() / 10.0
}

/// Patient files for `n` patients from `seed`.
///
/// The first three patients are fixed cases: coronary evidence split over
/// two notes (nitroglycerin in one, labetalol in another), an MI 100 days
/// before the reference date, and an MI 200 days before it.
pub fn generate(seed: u64, n: usize) -> Vec<SyntheticPatient> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| generate_patient(i, &mut rng)).collect()
}

fn generate_patient(i: usize, rng: &mut ChaCha8Rng) -> SyntheticPatient {
    let patient_id = format!("P{:02}", i + 1);
    let reference = NaiveDate::from_ymd_opt(2090, 1, 1).unwrap() + Days::new(rng.random_range(0..2000));
    let offsets: Vec<u64> = match i {
        1 => vec![400, 100, 0],
        2 => vec![350, 200, 0],
        _ => {
            let docs = rng.random_range(2..=5);
            let mut picked: BTreeSet<u64> = BTreeSet::new();
            while picked.len() < docs - 1 {
                picked.insert(rng.random_range(10..800));
            }
            picked.into_iter().rev().chain([0]).collect()
        }
    };
    let record_dates: Vec<NaiveDate> = offsets.iter().map(|&o| reference - Days::new(o)).collect();
    let docs = record_dates.len();
    let last = docs - 1;
    let mut b = Builder {
        rng,
        facts: Vec::new(),
        docs,
    };
    let window_doc = |b: &mut Builder<'_>, window: u64| -> usize {
        let eligible: Vec<usize> = (0..docs).filter(|&d| offsets[d] <= window).collect();
        *eligible.choose(b.rng).unwrap()
    };
    let stale_doc = |b: &mut Builder<'_>, window: u64| -> Option<usize> {
        let stale: Vec<usize> = (0..docs).filter(|&d| offsets[d] > window + 5).collect();
        stale.choose(b.rng).copied()
    };

    match i {
        0 => {
            b.affirm(Kind::Nitrate, 0);
            b.affirm(Kind::BetaBlocker, last);
        }
        1 => b.add(Kind::Mi, Polarity::Affirmed, 1, Section::PresentHistory, false, None),
        2 => b.add(Kind::Mi, Polarity::Affirmed, 1, Section::PresentHistory, false, None),
        _ => {
            // Coronary evidence: zero to three distinct kinds.
            let mut kinds = vec![Kind::Angina, Kind::Ischemia, Kind::Nitrate, Kind::BetaBlocker];
            let take = b.rng.random_range(0..=3usize);
            for _ in 0..take {
                let k = kinds.remove(b.rng.random_range(0..kinds.len()));
                let d = b.any_doc();
                b.affirm(k, d);
            }
            // Myocardial infarction, in or out of the six-month window.
            match b.rng.random_range(0..6) {
                0 => {
                    let d = window_doc(&mut b, 150);
                    let s = *[Section::PresentHistory, Section::Impression, Section::Findings].choose(b.rng).unwrap();
                    b.add(Kind::Mi, Polarity::Affirmed, d, s, false, None);
                }
                1 => {
                    let k = *[2u32, 3, 4, 8, 10, 14].choose(b.rng).unwrap();
                    b.add(Kind::Mi, Polarity::Affirmed, last, Section::PresentHistory, false, Some(k));
                }
                2 => b.add(Kind::Mi, Polarity::Affirmed, last, Section::PresentHistory, true, None),
                3 => b.add(Kind::Mi, Polarity::Affirmed, last, Section::PastHistory, false, None),
                4 => b.decoy(Kind::Mi),
                _ => {}
            }
        }
    }
    if i > 0 {
        for _ in 0..b.rng.random_range(0..2) {
            let k = *[Kind::Angina, Kind::Ischemia, Kind::Nitrate].choose(b.rng).unwrap();
            b.decoy(k);
        }
    } else {
        b.decoy(Kind::Mi);
    }

    // Criteria without a window: a positive statement, a decoy, or nothing.
    for kind in [
        Kind::Aspirin,
        Kind::Abdominal,
        Kind::Alcohol,
        Kind::Drug,
        Kind::DmComplication,
        Kind::NonEnglish,
        Kind::Incapacity,
    ] {
        match b.rng.random_range(0..4) {
            0 => {
                let d = b.any_doc();
                b.affirm(kind, d);
            }
            1 if matches!(kind, Kind::Abdominal | Kind::Alcohol | Kind::Drug) => {
                let d = b.any_doc();
                b.add(kind, Polarity::Affirmed, d, kind.home(), true, None);
            }
            1 | 2 => b.decoy(kind),
            _ => {}
        }
    }

    // Labs: values on either side of the thresholds.
    for _ in 0..b.rng.random_range(0..3) {
        let v = if b.rng.random_bool(0.5) {
            random_value(b.rng, 1.6, 3.5)
        } else {
            random_value(b.rng, 0.6, 1.4)
        };
        let d = b.any_doc();
        b.affirm(Kind::Creatinine(v), d);
    }
    for _ in 0..b.rng.random_range(0..3) {
        let v = match b.rng.random_range(0..3) {
            0 => random_value(b.rng, 6.6, 9.4),
            1 => random_value(b.rng, 4.8, 6.3),
            _ => random_value(b.rng, 9.7, 12.0),
        };
        let d = b.any_doc();
        b.affirm(Kind::Hba1c(v), d);
    }

    // Windowed criteria: recent, stale, or stated as history.
    for (kind, window) in [(Kind::DietSupp, 60u64), (Kind::Keto, 365)] {
        match b.rng.random_range(0..5) {
            0 => {
                let d = window_doc(&mut b, window);
                b.affirm(kind, d);
            }
            1 => {
                if let Some(d) = stale_doc(&mut b, window) {
                    b.affirm(kind, d);
                }
            }
            2 if kind == Kind::Keto => b.add(kind, Polarity::Affirmed, last, kind.home(), true, None),
            2 | 3 => b.decoy(kind),
            _ => {}
        }
    }

    let mut facts = b.facts;
    let file_text = render(&record_dates, &mut facts, b.rng);
    let mut patient = SyntheticPatient {
        patient_id: patient_id.clone(),
        record_dates,
        facts,
        file_text,
        gold: GoldLabelSet {
            patient_id,
            labels: BTreeMap::new(),
        },
    };
    patient.gold.labels = gold_labels(&patient);
    patient
}

fn render(record_dates: &[NaiveDate], facts: &mut [Fact], rng: &mut ChaCha8Rng) -> String {
    let mut notes = Vec::new();
    for (doc, date) in record_dates.iter().enumerate() {
        let mut by_section: BTreeMap<Section, Vec<String>> = BTreeMap::new();
        by_section
            .entry(Section::PresentHistory)
            .or_default()
            .push(FILLER.choose(rng).unwrap().to_string());
        for f in facts.iter().filter(|f| f.doc == doc) {
            by_section.entry(f.section).or_default().push(f.sentence.clone());
        }
        let mut note = format!("Record date: {}\n\n", date.format("%Y-%m-%d"));
        for section in Section::ORDER {
            if let Some(lines) = by_section.get(&section) {
                note.push_str(section.header());
                note.push('\n');
                for l in lines {
                    note.push_str(l);
                    note.push('\n');
                }
                note.push('\n');
            }
        }
        notes.push(note.trim_end().to_string());
    }
    notes.join("\n****\n") + "\n"
}

/// Labels from the planted facts, following the criterion definitions the
/// demo ruleset encodes.
pub fn gold_labels(p: &SyntheticPatient) -> BTreeMap<String, Decision> {
    let reference = p.reference_date();
    let counted = |f: &&Fact| f.polarity == Polarity::Affirmed;
    let in_window = |f: &Fact, days: u64| -> bool {
        let cutoff = reference - Days::new(days);
        match f.months_ago {
            Some(k) => p.record_dates[f.doc].checked_sub_months(Months::new(k)).unwrap() >= cutoff,
            None => !f.historical && p.offset_days(f.doc) <= days as i64,
        }
    };
    let has = |pred: &dyn Fn(&Fact) -> bool| p.facts.iter().filter(counted).any(pred);
    let met = |b: bool| if b { Decision::Met } else { Decision::NotMet };
    let cad: BTreeSet<&str> = p
        .facts
        .iter()
        .filter(counted)
        .filter(|f| f.kind.is_cad())
        .map(|f| f.kind.cad_key())
        .collect();
    let mut labels = BTreeMap::new();
    let mut put = |c: &str, d: Decision| {
        labels.insert(c.to_string(), d);
    };
    put("Abdominal", met(has(&|f| f.kind == Kind::Abdominal)));
    put("Advanced-cad", met(cad.len() >= 2));
    put("Alcohol-abuse", met(has(&|f| f.kind == Kind::Alcohol)));
    put("Asp-for-mi", met(has(&|f| f.kind == Kind::Aspirin)));
    put("Creatinine", met(has(&|f| matches!(f.kind, Kind::Creatinine(v) if v > 1.5))));
    put("Dietsupp-2mos", met(has(&|f| f.kind == Kind::DietSupp && in_window(f, 60))));
    put("Drug-abuse", met(has(&|f| f.kind == Kind::Drug)));
    put("English", met(!has(&|f| f.kind == Kind::NonEnglish)));
    put("Hba1c", met(has(&|f| matches!(f.kind, Kind::Hba1c(v) if (6.5..=9.5).contains(&v)))));
    put("Keto-1yr", met(has(&|f| f.kind == Kind::Keto && in_window(f, 365))));
    put("Major-diabetes", met(has(&|f| f.kind == Kind::DmComplication)));
    put("Makes-decisions", met(!has(&|f| f.kind == Kind::Incapacity)));
    put(
        "Mi-6mos",
        met(has(&|f| f.kind == Kind::Mi && f.section.counts_for_mi() && in_window(f, 183))),
    );
    labels
}

/// Writes `{id}.txt` patient files to `corpus_dir` and `{id}.xml` gold
/// labels to `gold_dir`.
pub fn write_corpus(patients: &[SyntheticPatient], corpus_dir: &Path, gold_dir: &Path) -> std::io::Result<()> {
    fs::create_dir_all(corpus_dir)?;
    fs::create_dir_all(gold_dir)?;
    for p in patients {
        fs::write(corpus_dir.join(format!("{}.txt", p.patient_id)), &p.file_text)?;
        fs::write(gold_dir.join(format!("{}.xml", p.patient_id)), labels_to_xml(&p.gold))?;
    }
    Ok(())
}
