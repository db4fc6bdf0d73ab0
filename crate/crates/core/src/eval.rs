//! Scoring of patient decisions against gold labels.
//!
//! "met" is the positive class. The not-met columns mirror the classes, so
//! not-met recall is specificity. AUC over hard labels is balanced accuracy.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use quick_xml::events::{BytesDecl, BytesEnd, BytesStart, Event};
use quick_xml::{Reader, Writer};
use serde::{Deserialize, Serialize};

use crate::inference::CriterionDecision;
use crate::ruleset::Decision;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("nothing to score")]
    EmptyReport,
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("{path}: missing label for criterion {criterion}")]
    MissingCriterion { path: String, criterion: String },
    #[error("patient sets differ; missing predictions: [{}]; missing gold: [{}]", .missing_pred.join(", "), .missing_gold.join(", "))]
    PatientSetMismatch {
        missing_pred: Vec<String>,
        missing_gold: Vec<String>,
    },
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn record(&mut self, gold: Decision, predicted: Decision) {
        match (gold, predicted) {
            (Decision::Met, Decision::Met) => self.tp += 1,
            (Decision::NotMet, Decision::Met) => self.fp += 1,
            (Decision::Met, Decision::NotMet) => self.fn_ += 1,
            (Decision::NotMet, Decision::NotMet) => self.tn += 1,
        }
    }

    fn add(self, o: Self) -> Self {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub prec_met: f64,
    pub rec_met: f64,
    pub specificity: f64,
    pub f1_met: f64,
    pub prec_notmet: f64,
    pub rec_notmet: f64,
    pub f1_notmet: f64,
    pub overall_f1: f64,
    pub auc: f64,
}

/// `num / den`, with 0 for an empty denominator.
pub fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn balanced_accuracy(recall: f64, specificity: f64) -> f64 {
    (recall + specificity) / 2.0
}

impl Metrics {
    pub const FIELDS: [&'static str; 9] = [
        "prec_met",
        "rec_met",
        "specificity",
        "f1_met",
        "prec_notmet",
        "rec_notmet",
        "f1_notmet",
        "overall_f1",
        "auc",
    ];

    pub fn values(&self) -> [f64; 9] {
        [
            self.prec_met,
            self.rec_met,
            self.specificity,
            self.f1_met,
            self.prec_notmet,
            self.rec_notmet,
            self.f1_notmet,
            self.overall_f1,
            self.auc,
        ]
    }

    pub fn from_values(v: [f64; 9]) -> Self {
        Metrics {
            prec_met: v[0],
            rec_met: v[1],
            specificity: v[2],
            f1_met: v[3],
            prec_notmet: v[4],
            rec_notmet: v[5],
            f1_notmet: v[6],
            overall_f1: v[7],
            auc: v[8],
        }
    }
}

fn metrics_of(c: &ConfusionCounts) -> Metrics {
    let prec_met = ratio(c.tp, c.tp + c.fp);
    let rec_met = ratio(c.tp, c.tp + c.fn_);
    let specificity = ratio(c.tn, c.tn + c.fp);
    let prec_notmet = ratio(c.tn, c.tn + c.fn_);
    let rec_notmet = specificity;
    let f1_met = f1(prec_met, rec_met);
    let f1_notmet = f1(prec_notmet, rec_notmet);
    Metrics {
        prec_met,
        rec_met,
        specificity,
        f1_met,
        prec_notmet,
        rec_notmet,
        f1_notmet,
        overall_f1: (f1_met + f1_notmet) / 2.0,
        auc: balanced_accuracy(rec_met, specificity),
    }
}

pub fn score_criterion(counts: &ConfusionCounts) -> Result<Metrics, EvalError> {
    if counts.total() == 0 {
        return Err(EvalError::EmptyReport);
    }
    Ok(metrics_of(counts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionScore {
    pub criterion: String,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub criteria: Vec<CriterionScore>,
    pub micro: Metrics,
    #[serde(rename = "macro")]
    pub macro_: Metrics,
}

/// Micro metrics from the summed counts; macro as the plain mean of each
/// per-criterion value.
pub fn aggregate(criteria: Vec<CriterionScore>) -> Result<MetricReport, EvalError> {
    if criteria.is_empty() {
        return Err(EvalError::EmptyReport);
    }
    let summed = criteria
        .iter()
        .fold(ConfusionCounts::default(), |acc, c| acc.add(c.counts));
    let micro = score_criterion(&summed)?;
    let n = criteria.len() as f64;
    let mut sums = [0.0; 9];
    for c in &criteria {
        for (s, v) in sums.iter_mut().zip(c.metrics.values()) {
            *s += v;
        }
    }
    let macro_ = Metrics::from_values(sums.map(|s| s / n));
    Ok(MetricReport {
        criteria,
        micro,
        macro_,
    })
}

/// Gold or predicted labels of one patient.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLabelSet {
    pub patient_id: String,
    pub labels: BTreeMap<String, Decision>,
}

impl GoldLabelSet {
    pub fn from_decisions(patient_id: &str, decisions: &[CriterionDecision]) -> Self {
        GoldLabelSet {
            patient_id: patient_id.to_string(),
            labels: decisions.iter().map(|d| (d.criterion.clone(), d.decision)).collect(),
        }
    }
}

fn tag_name(criterion: &str) -> String {
    criterion.to_uppercase()
}

/// Labels from a label document. Every element carrying a `met` attribute
/// is a label, wherever it sits, so challenge-style files with the labels
/// under a wrapper element also parse.
pub fn parse_labels(xml: &str, patient_id: &str, criteria: &[String], path: &str) -> Result<GoldLabelSet, EvalError> {
    let schema = |message: String| EvalError::Schema {
        path: path.to_string(),
        message,
    };
    let by_tag: BTreeMap<String, &String> = criteria.iter().map(|c| (tag_name(c), c)).collect();
    let mut reader = Reader::from_str(xml);
    let mut labels = BTreeMap::new();
    let mut saw_root = false;
    loop {
        let event = reader.read_event().map_err(|e| schema(format!("malformed XML: {e}")))?;
        let el = match &event {
            Event::Eof => break,
            Event::Start(e) | Event::Empty(e) => e,
            _ => continue,
        };
        saw_root = true;
        let met = el
            .try_get_attribute("met")
            .map_err(|e| schema(format!("bad attribute: {e}")))?;
        let Some(met) = met else { continue };
        let name = String::from_utf8_lossy(el.name().as_ref()).into_owned();
        let value = met
            .unescape_value()
            .map_err(|e| schema(format!("bad attribute value: {e}")))?;
        let decision: Decision = value
            .parse()
            .map_err(|_| schema(format!("<{name}> has met={value:?}; expected \"met\" or \"not met\"")))?;
        let Some(&criterion) = by_tag.get(&name) else {
            return Err(schema(format!("unknown criterion tag <{name}>")));
        };
        if labels.insert(criterion.clone(), decision).is_some() {
            return Err(schema(format!("criterion tag <{name}> appears twice")));
        }
    }
    if !saw_root {
        return Err(schema("no root element".to_string()));
    }
    if let Some(missing) = criteria.iter().find(|c| !labels.contains_key(*c)) {
        return Err(EvalError::MissingCriterion {
            path: path.to_string(),
            criterion: missing.clone(),
        });
    }
    Ok(GoldLabelSet {
        patient_id: patient_id.to_string(),
        labels,
    })
}

/// Reads `path`; the patient id is the file stem.
pub fn read_labels(path: &Path, criteria: &[String]) -> Result<GoldLabelSet, EvalError> {
    let xml = fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    parse_labels(&xml, stem, criteria, &path.display().to_string())
}

/// `<LABELS>` document with one element per label, in map order.
pub fn labels_to_xml(labels: &GoldLabelSet) -> String {
    let mut w = Writer::new_with_indent(Vec::new(), b' ', 2);
    let io = "writing to a Vec cannot fail";
    w.write_event(Event::Decl(BytesDecl::new("1.0", Some("UTF-8"), None))).expect(io);
    w.write_event(Event::Start(BytesStart::new("LABELS"))).expect(io);
    for (criterion, decision) in &labels.labels {
        let tag = tag_name(criterion);
        let mut el = BytesStart::new(tag.as_str());
        el.push_attribute(("met", decision.as_str()));
        w.write_event(Event::Empty(el)).expect(io);
    }
    w.write_event(Event::End(BytesEnd::new("LABELS"))).expect(io);
    let mut out = String::from_utf8(w.into_inner()).expect("writer emits UTF-8");
    out.push('\n');
    out
}

/// Writes one patient's decisions to `path`.
pub fn write_predictions(patient_id: &str, decisions: &[CriterionDecision], path: &Path) -> Result<(), EvalError> {
    let xml = labels_to_xml(&GoldLabelSet::from_decisions(patient_id, decisions));
    fs::write(path, xml).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Scores aligned gold and predicted label sets over `criteria`.
pub fn score_labels(
    gold: &[GoldLabelSet],
    predicted: &[GoldLabelSet],
    criteria: &[String],
) -> Result<MetricReport, EvalError> {
    let g: BTreeMap<&str, &GoldLabelSet> = gold.iter().map(|s| (s.patient_id.as_str(), s)).collect();
    let p: BTreeMap<&str, &GoldLabelSet> = predicted.iter().map(|s| (s.patient_id.as_str(), s)).collect();
    let gk: BTreeSet<&str> = g.keys().copied().collect();
    let pk: BTreeSet<&str> = p.keys().copied().collect();
    if gk != pk {
        return Err(EvalError::PatientSetMismatch {
            missing_pred: gk.difference(&pk).map(|s| s.to_string()).collect(),
            missing_gold: pk.difference(&gk).map(|s| s.to_string()).collect(),
        });
    }
    let mut scores = Vec::new();
    for criterion in criteria {
        let mut counts = ConfusionCounts::default();
        for (id, gs) in &g {
            let missing = |set: &GoldLabelSet| EvalError::MissingCriterion {
                path: set.patient_id.clone(),
                criterion: criterion.clone(),
            };
            let gold_label = *gs.labels.get(criterion).ok_or_else(|| missing(gs))?;
            let ps = p[id];
            let pred_label = *ps.labels.get(criterion).ok_or_else(|| missing(ps))?;
            counts.record(gold_label, pred_label);
        }
        scores.push(CriterionScore {
            criterion: criterion.clone(),
            counts,
            metrics: score_criterion(&counts)?,
        });
    }
    aggregate(scores)
}

fn xml_files(dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    let io = |source| EvalError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io)?;
    files.retain(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("xml")));
    files.sort();
    Ok(files)
}

pub fn read_label_dir(dir: &Path, criteria: &[String]) -> Result<Vec<GoldLabelSet>, EvalError> {
    xml_files(dir)?.iter().map(|p| read_labels(p, criteria)).collect()
}

/// `eval` over two directories of `{patient_id}.xml` files.
pub fn evaluate_dirs(gold_dir: &Path, pred_dir: &Path, criteria: &[String]) -> Result<MetricReport, EvalError> {
    let gold = read_label_dir(gold_dir, criteria)?;
    let pred = read_label_dir(pred_dir, criteria)?;
    score_labels(&gold, &pred, criteria)
}

impl MetricReport {
    /// Tab-separated table: a class band row, the column heads, one row
    /// per criterion, then the micro and macro rows.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("\tmet\t\t\t\tnot met\t\t\toverall\t\n");
        out.push_str("\tPrec.\tRec.\tSpeci.\tF(b=1)\tPrec.\tRec.\tF(b=1)\tF(b=1)\tAUC\n");
        let mut row = |name: &str, m: &Metrics| {
            out.push_str(name);
            for v in m.values() {
                out.push_str(&format!("\t{v:.4}"));
            }
            out.push('\n');
        };
        for c in &self.criteria {
            row(&c.criterion, &c.metrics);
        }
        row("Overall (micro)", &self.micro);
        row("Overall (macro)", &self.macro_);
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> ConfusionCounts {
        ConfusionCounts { tp, fp, fn_, tn }
    }

    #[test]
    fn hand_counts() {
        let m = score_criterion(&counts(3, 1, 1, 5)).unwrap();
        assert_eq!(m.prec_met, 0.75);
        assert_eq!(m.rec_met, 0.75);
        assert!((m.specificity - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(m.rec_notmet, m.specificity);
        assert!((m.auc - (0.75 + 5.0 / 6.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_denominators_give_zero() {
        let m = score_criterion(&counts(0, 0, 3, 80)).unwrap();
        assert_eq!(m.prec_met, 0.0);
        assert_eq!(m.f1_met, 0.0);
        assert!(score_criterion(&counts(0, 0, 0, 0)).is_err());
    }

    #[test]
    fn single_criterion_micro_is_macro() {
        let c = counts(4, 2, 1, 9);
        let r = aggregate(vec![CriterionScore {
            criterion: "A".into(),
            counts: c,
            metrics: score_criterion(&c).unwrap(),
        }])
        .unwrap();
        for (a, b) in r.micro.values().iter().zip(r.macro_.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn criteria() -> Vec<String> {
        vec!["Mi-6mos".into(), "Abdominal".into()]
    }

    #[test]
    fn label_round_trip() {
        let xml = "<LABELS><MI-6MOS met=\"met\"/><ABDOMINAL met=\"not met\"/></LABELS>";
        let set = parse_labels(xml, "P1", &criteria(), "x").unwrap();
        assert_eq!(set.labels["Mi-6mos"], Decision::Met);
        assert_eq!(set.labels["Abdominal"], Decision::NotMet);
        let again = parse_labels(&labels_to_xml(&set), "P1", &criteria(), "x").unwrap();
        assert_eq!(again, set);
    }

    #[test]
    fn wrapped_labels_parse() {
        let xml = "<PatientMatching><TEXT>note</TEXT><TAGS><MI-6MOS met=\"not met\" /><ABDOMINAL met=\"met\" /></TAGS></PatientMatching>";
        assert_eq!(parse_labels(xml, "P", &criteria(), "x").unwrap().labels.len(), 2);
    }

    #[test]
    fn schema_errors() {
        let maybe = "<LABELS><MI-6MOS met=\"maybe\"/><ABDOMINAL met=\"met\"/></LABELS>";
        assert!(matches!(parse_labels(maybe, "P", &criteria(), "x"), Err(EvalError::Schema { .. })));
        let missing = "<LABELS><MI-6MOS met=\"met\"/></LABELS>";
        match parse_labels(missing, "P", &criteria(), "x") {
            Err(EvalError::MissingCriterion { criterion, .. }) => assert_eq!(criterion, "Abdominal"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mismatched_patients() {
        let crit = vec!["A".to_string()];
        let set = |id: &str| GoldLabelSet {
            patient_id: id.into(),
            labels: [("A".to_string(), Decision::Met)].into(),
        };
        match score_labels(&[set("1"), set("2")], &[set("1"), set("3")], &crit) {
            Err(EvalError::PatientSetMismatch {
                missing_pred,
                missing_gold,
            }) => {
                assert_eq!(missing_pred, ["2"]);
                assert_eq!(missing_gold, ["3"]);
            }
            other => panic!("{other:?}"),
        }
    }
}
