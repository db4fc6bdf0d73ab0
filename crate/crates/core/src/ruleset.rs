//! Tabular rule files and their compilation.
//!
//! Every pipeline component reads a delimiter-separated table whose columns
//! are positional. The first non-comment line is a header; its delimiter
//! (tab if it contains one, comma otherwise) applies to the whole file.
//! Blank lines and lines starting with `#` are skipped.
//!
//! | kind          | columns |
//! |---------------|---------|
//! | `section`     | header phrase, section name |
//! | `sentence`    | pattern, action (`begin`/`end`/`pseudo`) |
//! | `ner_include` | phrase, concept, [seeds: `attr=value` pairs or `NUMERIC`] |
//! | `ner_exclude` | phrase, suppressed concept or `ANY` |
//! | `context`     | trigger, attribute, value, direction, [window], [flag] |
//! | `temporal`    | phrase pattern, interpretation tag |
//! | `feature`     | conclusion, conclusion attributes, evidence, evidence attributes, section |
//! | `document`    | criterion, conclusion, evidence types, priority, [DEFAULT], [range] |
//! | `patient`     | criterion, decision, evidence, window days, aggregation, [DEFAULT] |
//!
//! Phrase cells go through the same tokenizer as document text; `<NUM>` and
//! `<ANY>` are wildcards and a phrase wrapped in double quotes matches
//! case-sensitively. In comma-separated files csv quoting still applies, so
//! a case-sensitive phrase is written `"""MS"""` there.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::matcher::{parse_phrase, PatternToken, RuleId, TokenTrie, TrieStats};
use crate::segmenter::{SentenceAction, SentencePattern, SentenceRule};
use crate::temporal::TemporalTag;

/// Wildcard accepted in section, concept and attribute-set cells.
pub const ANY: &str = "ANY";
pub const COPYALL: &str = "COPYALL";
pub const DEFAULT_FLAG: &str = "DEFAULT";
/// Keyword in a dictionary seed cell marking the concept as value-bearing.
pub const NUMERIC_FLAG: &str = "NUMERIC";
/// Section name for text before the first recognized header.
pub const UNKNOWN_SECTION: &str = "Unknown";
pub const DEFAULT_CONTEXT_WINDOW: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentKind {
    Section,
    Sentence,
    NerInclude,
    NerExclude,
    Context,
    Temporal,
    Feature,
    Document,
    Patient,
}

impl ComponentKind {
    pub const ALL: [ComponentKind; 9] = [
        ComponentKind::Section,
        ComponentKind::Sentence,
        ComponentKind::NerInclude,
        ComponentKind::NerExclude,
        ComponentKind::Context,
        ComponentKind::Temporal,
        ComponentKind::Feature,
        ComponentKind::Document,
        ComponentKind::Patient,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ComponentKind::Section => "section",
            ComponentKind::Sentence => "sentence",
            ComponentKind::NerInclude => "ner_include",
            ComponentKind::NerExclude => "ner_exclude",
            ComponentKind::Context => "context",
            ComponentKind::Temporal => "temporal",
            ComponentKind::Feature => "feature",
            ComponentKind::Document => "document",
            ComponentKind::Patient => "patient",
        }
    }

    /// Inclusive column-count range and a human-readable schema.
    pub fn schema(self) -> (usize, usize, &'static str) {
        match self {
            ComponentKind::Section => (2, 2, "header phrase, section name"),
            ComponentKind::Sentence => (2, 2, "pattern, action"),
            ComponentKind::NerInclude => (2, 3, "phrase, concept, [seeds]"),
            ComponentKind::NerExclude => (2, 2, "phrase, suppressed concept"),
            ComponentKind::Context => (
                4,
                6,
                "trigger, attribute, value, direction, [window], [flag]",
            ),
            ComponentKind::Temporal => (2, 2, "phrase pattern, interpretation tag"),
            ComponentKind::Feature => (
                5,
                5,
                "conclusion, conclusion attributes, evidence, evidence attributes, section",
            ),
            ComponentKind::Document => (
                4,
                6,
                "criterion, conclusion, evidence types, priority, [DEFAULT], [range]",
            ),
            ComponentKind::Patient => (
                5,
                6,
                "criterion, decision, evidence, window days, aggregation, [DEFAULT]",
            ),
        }
    }

    pub fn header(self) -> &'static [&'static str] {
        match self {
            ComponentKind::Section => &["Header", "Section"],
            ComponentKind::Sentence => &["Pattern", "Action"],
            ComponentKind::NerInclude => &["Phrase", "Concept", "Seeds"],
            ComponentKind::NerExclude => &["Phrase", "Concept"],
            ComponentKind::Context => &["Trigger", "Attribute", "Value", "Direction", "Window", "Flag"],
            ComponentKind::Temporal => &["Pattern", "Tag"],
            ComponentKind::Feature => &[
                "Conclusion",
                "ConclusionAttributes",
                "Evidence",
                "EvidenceAttributes",
                "Section",
            ],
            ComponentKind::Document => &["Criterion", "Conclusion", "Evidence", "Priority", "Default", "Range"],
            ComponentKind::Patient => &["Criterion", "Decision", "Evidence", "WindowDays", "Aggregation", "Default"],
        }
    }

    /// Whether the component is matched through a token trie.
    pub fn is_lexical(self) -> bool {
        matches!(
            self,
            ComponentKind::Section
                | ComponentKind::NerInclude
                | ComponentKind::NerExclude
                | ComponentKind::Context
                | ComponentKind::Temporal
        )
    }
}

impl fmt::Display for ComponentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ComponentKind {
    type Err = RuleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ComponentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| RuleError::UnknownComponent(s.to_string()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RuleError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed table: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("{path}:{line}: expected {expected} column(s) ({schema}), found {found}")]
    ColumnCount {
        path: String,
        line: u64,
        found: usize,
        expected: String,
        schema: &'static str,
    },
    #[error("{path}:{line}: column {column}: {message}")]
    Invalid {
        path: String,
        line: u64,
        column: usize,
        message: String,
    },
    #[error("unknown component kind {0:?}")]
    UnknownComponent(String),
    #[error("missing rule table for component {0}")]
    MissingTable(ComponentKind),
    #[error("ruleset failed to compile:\n{}", format_issues(.0))]
    Compile(Vec<CompileIssue>),
}

fn format_issues(issues: &[CompileIssue]) -> String {
    issues
        .iter()
        .map(|i| format!("  {i}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// A cross-reference or completeness problem found while compiling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompileIssue {
    pub kind: ComponentKind,
    pub path: String,
    pub line: u64,
    pub message: String,
}

impl fmt::Display for CompileIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.path, self.line, self.message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextFlag {
    Trigger,
    Pseudo,
    Terminate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Decision {
    #[serde(rename = "met")]
    Met,
    #[serde(rename = "not met")]
    NotMet,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Met => "met",
            Decision::NotMet => "not met",
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Decision {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.trim().to_ascii_lowercase().as_str() {
            "met" => Ok(Decision::Met),
            "not met" | "not_met" | "notmet" => Ok(Decision::NotMet),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionRule {
    pub phrase: Vec<PatternToken>,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NerIncludeRule {
    pub phrase: Vec<PatternToken>,
    pub concept: String,
    pub seeds: BTreeMap<String, String>,
    pub numeric: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NerExcludeRule {
    pub phrase: Vec<PatternToken>,
    /// `None` suppresses every concept.
    pub target: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextRule {
    pub trigger: Vec<PatternToken>,
    pub attribute: String,
    pub value: String,
    pub direction: Direction,
    pub window: usize,
    pub flag: ContextFlag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalRule {
    pub phrase: Vec<PatternToken>,
    pub tag: TemporalTag,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConclusionAttributes {
    CopyAll,
    Explicit(Vec<(String, String)>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureRule {
    pub conclusion: String,
    pub conclusion_attributes: ConclusionAttributes,
    pub evidence: String,
    /// Required attribute values; `None` means no requirement (`ANY`).
    pub evidence_attributes: Option<BTreeSet<String>>,
    /// `None` means any section.
    pub section: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NumericCondition {
    Gt(f64),
    Ge(f64),
    Lt(f64),
    Le(f64),
    /// Inclusive on both ends.
    Between(f64, f64),
}

impl NumericCondition {
    pub fn holds(&self, v: f64) -> bool {
        match *self {
            NumericCondition::Gt(x) => v > x,
            NumericCondition::Ge(x) => v >= x,
            NumericCondition::Lt(x) => v < x,
            NumericCondition::Le(x) => v <= x,
            NumericCondition::Between(lo, hi) => lo <= v && v <= hi,
        }
    }
}

impl FromStr for NumericCondition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("bad number in range {s:?}"))
        };
        if let Some((lo, hi)) = s.split_once("..") {
            let (lo, hi) = (num(lo)?, num(hi)?);
            if lo > hi {
                return Err(format!("empty range {s:?}"));
            }
            return Ok(NumericCondition::Between(lo, hi));
        }
        if let Some(r) = s.strip_prefix(">=") {
            return Ok(NumericCondition::Ge(num(r)?));
        }
        if let Some(r) = s.strip_prefix("<=") {
            return Ok(NumericCondition::Le(num(r)?));
        }
        if let Some(r) = s.strip_prefix('>') {
            return Ok(NumericCondition::Gt(num(r)?));
        }
        if let Some(r) = s.strip_prefix('<') {
            return Ok(NumericCondition::Lt(num(r)?));
        }
        Err(format!(
            "range {s:?} must be >X, >=X, <X, <=X or LO..HI"
        ))
    }
}

impl fmt::Display for NumericCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NumericCondition::Gt(x) => write!(f, ">{x}"),
            NumericCondition::Ge(x) => write!(f, ">={x}"),
            NumericCondition::Lt(x) => write!(f, "<{x}"),
            NumericCondition::Le(x) => write!(f, "<={x}"),
            NumericCondition::Between(a, b) => write!(f, "{a}..{b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentRule {
    pub criterion: String,
    pub conclusion: String,
    /// Mention types any of which can serve as evidence; empty for DEFAULT.
    pub evidence: Vec<String>,
    pub priority: i64,
    pub is_default: bool,
    pub condition: Option<NumericCondition>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aggregation {
    Any,
    /// At least k distinct evidence concept types.
    AtLeast(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientRule {
    pub criterion: String,
    pub decision: Decision,
    pub evidence: Option<String>,
    pub window_days: Option<i64>,
    pub aggregation: Aggregation,
    pub is_default: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Rule {
    Section(SectionRule),
    Sentence(SentenceRule),
    NerInclude(NerIncludeRule),
    NerExclude(NerExcludeRule),
    Context(ContextRule),
    Temporal(TemporalRule),
    Feature(FeatureRule),
    Document(DocumentRule),
    Patient(PatientRule),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleRow {
    /// 1-based line in the source file.
    pub line: u64,
    pub cells: Vec<String>,
    pub rule: Rule,
}

#[derive(Debug, Clone)]
pub struct RuleTable {
    pub kind: ComponentKind,
    pub rows: Vec<RuleRow>,
    pub source_path: String,
    digest: [u8; 32],
}

impl RuleTable {
    pub fn empty(kind: ComponentKind) -> Self {
        RuleTable::parse("", kind, "<empty>").expect("empty table parses")
    }

    pub fn digest(&self) -> [u8; 32] {
        self.digest
    }

    /// Serializes back to a tab-separated table with a header row.
    pub fn to_tsv(&self) -> String {
        let mut out = self.kind.header().join("\t");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.cells.join("\t"));
            out.push('\n');
        }
        out
    }

    pub fn rules(&self) -> impl Iterator<Item = &Rule> {
        self.rows.iter().map(|r| &r.rule)
    }

    pub fn parse(text: &str, kind: ComponentKind, source_path: &str) -> Result<Self, RuleError> {
        let digest: [u8; 32] = Sha256::digest(text.as_bytes()).into();
        let cleaned = strip_comments(text);
        let delimiter = sniff_delimiter(&cleaned);
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .delimiter(delimiter)
            .quoting(delimiter == b',')
            .from_reader(cleaned.as_bytes());

        let (min, max, schema) = kind.schema();
        let mut rows = Vec::new();
        let mut seen_header = false;
        for record in reader.records() {
            let record = record.map_err(|source| RuleError::Csv {
                path: source_path.to_string(),
                source,
            })?;
            // The reader reports the position where it began skipping blank
            // lines, so step over them before counting.
            let line = record
                .position()
                .map_or(0, |p| line_of(cleaned.as_bytes(), p.byte() as usize));
            let cells: Vec<String> = record.iter().map(|c| c.trim().to_string()).collect();
            if cells.iter().all(String::is_empty) {
                continue;
            }
            if !seen_header {
                seen_header = true;
                continue;
            }
            // Trailing optional cells may be left off entirely or blank.
            let mut cells = cells;
            while cells.len() > min && cells.last().is_some_and(String::is_empty) {
                cells.pop();
            }
            if cells.len() < min || cells.len() > max {
                return Err(RuleError::ColumnCount {
                    path: source_path.to_string(),
                    line,
                    found: cells.len(),
                    expected: if min == max {
                        min.to_string()
                    } else {
                        format!("{min}-{max}")
                    },
                    schema,
                });
            }
            let ctx = RowCtx {
                path: source_path,
                line,
                cells: &cells,
            };
            let rule = parse_row(kind, &ctx)?;
            rows.push(RuleRow { line, cells, rule });
        }
        Ok(RuleTable {
            kind,
            rows,
            source_path: source_path.to_string(),
            digest,
        })
    }
}

fn line_of(bytes: &[u8], mut at: usize) -> u64 {
    while at < bytes.len() && matches!(bytes[at], b'\n' | b'\r') {
        at += 1;
    }
    bytes[..at].iter().filter(|&&b| b == b'\n').count() as u64 + 1
}

/// Comment lines blanked out, line count preserved.
fn strip_comments(text: &str) -> String {
    text.split_inclusive('\n')
        .map(|l| {
            if l.trim_start().starts_with('#') {
                if l.ends_with('\n') { "\n" } else { "" }
            } else {
                l
            }
        })
        .collect()
}

pub fn load_rule_table(path: &Path, kind: ComponentKind) -> Result<RuleTable, RuleError> {
    let text = fs::read_to_string(path).map_err(|source| RuleError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    RuleTable::parse(&text, kind, &path.display().to_string())
}

/// Loads `<kind>.tsv` (or `.csv`) for every component kind present in `dir`.
pub fn load_rules_dir(dir: &Path) -> Result<Vec<RuleTable>, RuleError> {
    let mut tables = Vec::new();
    for kind in ComponentKind::ALL {
        for ext in ["tsv", "csv"] {
            let path = dir.join(format!("{}.{ext}", kind.name()));
            if path.is_file() {
                tables.push(load_rule_table(&path, kind)?);
                break;
            }
        }
    }
    Ok(tables)
}

fn sniff_delimiter(text: &str) -> u8 {
    let header = text
        .lines()
        .map(str::trim_end)
        .find(|l| !l.trim().is_empty() && !l.starts_with('#'));
    match header {
        Some(h) if h.contains('\t') => b'\t',
        _ => b',',
    }
}

struct RowCtx<'a> {
    path: &'a str,
    line: u64,
    cells: &'a [String],
}

impl RowCtx<'_> {
    fn cell(&self, i: usize) -> &str {
        self.cells.get(i).map_or("", String::as_str)
    }

    fn invalid(&self, column: usize, message: impl Into<String>) -> RuleError {
        RuleError::Invalid {
            path: self.path.to_string(),
            line: self.line,
            column: column + 1,
            message: message.into(),
        }
    }

    fn required(&self, i: usize, what: &str) -> Result<&str, RuleError> {
        let c = self.cell(i);
        if c.is_empty() {
            Err(self.invalid(i, format!("{what} must not be empty")))
        } else {
            Ok(c)
        }
    }

    fn phrase(&self, i: usize) -> Result<Vec<PatternToken>, RuleError> {
        let p = parse_phrase(self.required(i, "phrase")?);
        if p.is_empty() {
            return Err(self.invalid(i, "phrase has no tokens"));
        }
        Ok(p)
    }

    fn default_flag(&self, i: usize) -> Result<bool, RuleError> {
        match self.cell(i) {
            "" => Ok(false),
            c if c.eq_ignore_ascii_case(DEFAULT_FLAG) => Ok(true),
            other => Err(self.invalid(i, format!("unknown keyword {other:?}, expected DEFAULT or blank"))),
        }
    }
}

fn is_blank_or_dash(s: &str) -> bool {
    s.is_empty() || s == "-"
}

fn parse_row(kind: ComponentKind, row: &RowCtx<'_>) -> Result<Rule, RuleError> {
    Ok(match kind {
        ComponentKind::Section => Rule::Section(SectionRule {
            phrase: row.phrase(0)?,
            name: row.required(1, "section name")?.to_string(),
        }),
        ComponentKind::Sentence => {
            let pattern = SentencePattern::parse(row.cell(0)).map_err(|e| row.invalid(0, e.to_string()))?;
            let action: SentenceAction = row.cell(1).parse().map_err(|_| {
                row.invalid(1, format!("unknown action {:?}, expected begin, end or pseudo", row.cell(1)))
            })?;
            Rule::Sentence(SentenceRule { pattern, action })
        }
        ComponentKind::NerInclude => {
            let mut seeds = BTreeMap::new();
            let mut numeric = false;
            for item in row.cell(2).split([',', ';']).map(str::trim).filter(|s| !s.is_empty()) {
                match item.split_once('=') {
                    Some((k, v)) if !k.trim().is_empty() && !v.trim().is_empty() => {
                        seeds.insert(k.trim().to_string(), v.trim().to_string());
                    }
                    None if item.eq_ignore_ascii_case(NUMERIC_FLAG) => numeric = true,
                    _ => {
                        return Err(row.invalid(
                            2,
                            format!("unknown seed keyword {item:?}, expected attribute=value or NUMERIC"),
                        ))
                    }
                }
            }
            Rule::NerInclude(NerIncludeRule {
                phrase: row.phrase(0)?,
                concept: row.required(1, "concept")?.to_string(),
                seeds,
                numeric,
            })
        }
        ComponentKind::NerExclude => {
            let target = row.required(1, "concept")?;
            Rule::NerExclude(NerExcludeRule {
                phrase: row.phrase(0)?,
                target: (target != ANY).then(|| target.to_string()),
            })
        }
        ComponentKind::Context => {
            let direction = match row.cell(3).to_ascii_lowercase().as_str() {
                "forward" => Direction::Forward,
                "backward" => Direction::Backward,
                "both" | "bidirectional" => Direction::Both,
                other => {
                    return Err(row.invalid(3, format!("unknown direction {other:?}, expected forward, backward or both")))
                }
            };
            let window = match row.cell(4) {
                "" => DEFAULT_CONTEXT_WINDOW,
                w => w
                    .parse::<usize>()
                    .ok()
                    .filter(|&w| w >= 1)
                    .ok_or_else(|| row.invalid(4, format!("window {w:?} must be a positive integer")))?,
            };
            let flag = match row.cell(5).to_ascii_lowercase().as_str() {
                "" | "trigger" => ContextFlag::Trigger,
                "pseudo" => ContextFlag::Pseudo,
                "terminate" | "termination" => ContextFlag::Terminate,
                other => {
                    return Err(row.invalid(5, format!("unknown flag {other:?}, expected trigger, pseudo or terminate")))
                }
            };
            Rule::Context(ContextRule {
                trigger: row.phrase(0)?,
                attribute: row.required(1, "attribute")?.to_string(),
                value: row.required(2, "value")?.to_string(),
                direction,
                window,
                flag,
            })
        }
        ComponentKind::Temporal => Rule::Temporal(TemporalRule {
            phrase: row.phrase(0)?,
            tag: row
                .cell(1)
                .parse()
                .map_err(|_| row.invalid(1, format!("unknown interpretation tag {:?}", row.cell(1))))?,
        }),
        ComponentKind::Feature => {
            let conclusion_attributes = match row.required(1, "conclusion attributes")? {
                c if c.eq_ignore_ascii_case(COPYALL) => ConclusionAttributes::CopyAll,
                c => {
                    let mut pairs = Vec::new();
                    for item in c.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                        match item.split_once('=') {
                            Some((k, v)) if !k.trim().is_empty() && !v.trim().is_empty() => {
                                pairs.push((k.trim().to_string(), v.trim().to_string()))
                            }
                            _ => {
                                return Err(row.invalid(
                                    1,
                                    format!("unknown keyword {item:?}, expected COPYALL or attribute=value"),
                                ))
                            }
                        }
                    }
                    ConclusionAttributes::Explicit(pairs)
                }
            };
            let evidence_attributes = match row.required(3, "evidence attributes")? {
                ANY => None,
                c => Some(
                    c.split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(str::to_string)
                        .collect::<BTreeSet<_>>(),
                ),
            };
            let section = match row.required(4, "section")? {
                ANY => None,
                s => Some(s.to_string()),
            };
            Rule::Feature(FeatureRule {
                conclusion: row.required(0, "conclusion")?.to_string(),
                conclusion_attributes,
                evidence: row.required(2, "evidence")?.to_string(),
                evidence_attributes,
                section,
            })
        }
        ComponentKind::Document => {
            let is_default = row.default_flag(4)?;
            let evidence: Vec<String> = if is_blank_or_dash(row.cell(2)) {
                Vec::new()
            } else {
                row.cell(2)
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect()
            };
            if !is_default && evidence.is_empty() {
                return Err(row.invalid(2, "non-DEFAULT document rule needs an evidence type"));
            }
            let priority = match row.cell(3) {
                "" | "-" if is_default => 0,
                p => p
                    .parse::<i64>()
                    .map_err(|_| row.invalid(3, format!("priority {p:?} must be an integer")))?,
            };
            let condition = match row.cell(5) {
                "" | "-" => None,
                c => Some(c.parse().map_err(|m: String| row.invalid(5, m))?),
            };
            Rule::Document(DocumentRule {
                criterion: row.required(0, "criterion")?.to_string(),
                conclusion: row.required(1, "conclusion")?.to_string(),
                evidence,
                priority,
                is_default,
                condition,
            })
        }
        ComponentKind::Patient => {
            let is_default = row.default_flag(5)?;
            let decision: Decision = row.cell(1).parse().map_err(|_| {
                row.invalid(1, format!("unknown decision {:?}, expected met or not_met", row.cell(1)))
            })?;
            let evidence = (!is_blank_or_dash(row.cell(2))).then(|| row.cell(2).to_string());
            if !is_default && evidence.is_none() {
                return Err(row.invalid(2, "non-DEFAULT patient rule needs an evidence conclusion"));
            }
            let window_days = match row.cell(3) {
                "" | "-" => None,
                w if w.eq_ignore_ascii_case("NONE") => None,
                w => Some(
                    w.parse::<i64>()
                        .ok()
                        .filter(|&d| d >= 0)
                        .ok_or_else(|| row.invalid(3, format!("window {w:?} must be NONE or a day count")))?,
                ),
            };
            let agg = row.cell(4);
            let aggregation = if is_blank_or_dash(agg) || agg.eq_ignore_ascii_case("ANY") {
                Aggregation::Any
            } else if let Some(k) = agg
                .to_ascii_uppercase()
                .strip_prefix("COUNT>=")
                .and_then(|k| k.trim().parse::<usize>().ok())
                .filter(|&k| k >= 1)
            {
                Aggregation::AtLeast(k)
            } else {
                return Err(row.invalid(4, format!("unknown aggregation {agg:?}, expected ANY or COUNT>=k")));
            };
            Rule::Patient(PatientRule {
                criterion: row.required(0, "criterion")?.to_string(),
                decision,
                evidence,
                window_days,
                aggregation,
                is_default,
            })
        }
    })
}

/// Trie plus the rules its payload ids index into.
#[derive(Debug, Clone)]
pub struct LexicalTable<R> {
    pub trie: TokenTrie,
    pub rules: Vec<R>,
}

impl<R> LexicalTable<R> {
    fn build(rules: Vec<R>, phrase: impl Fn(&R) -> &[PatternToken]) -> Self {
        let mut trie = TokenTrie::new();
        for (i, r) in rules.iter().enumerate() {
            trie.insert(phrase(r), RuleId(i));
        }
        LexicalTable { trie, rules }
    }

    pub fn rule(&self, id: RuleId) -> &R {
        &self.rules[id.0]
    }
}

/// Document rules sharing a criterion id.
#[derive(Debug, Clone)]
pub struct DocumentGroup {
    pub criterion: String,
    /// Non-default rules, sorted by descending priority then row order.
    pub rules: Vec<DocumentRule>,
    pub default: DocumentRule,
}

#[derive(Debug, Clone)]
pub struct CriterionRules {
    pub criterion: String,
    /// Non-default rules in row order.
    pub rules: Vec<PatientRule>,
    pub default: PatientRule,
}

/// Immutable product of [`compile`]; shareable across threads.
#[derive(Debug, Clone)]
pub struct CompiledRuleset {
    pub sections: LexicalTable<SectionRule>,
    pub sentences: Vec<SentenceRule>,
    pub ner_include: LexicalTable<NerIncludeRule>,
    pub ner_exclude: LexicalTable<NerExcludeRule>,
    pub context: LexicalTable<ContextRule>,
    pub temporal: LexicalTable<TemporalRule>,
    pub features: Vec<FeatureRule>,
    /// Feature rule indices by evidence concept, in row order.
    pub features_by_evidence: HashMap<String, Vec<usize>>,
    pub document_groups: Vec<DocumentGroup>,
    pub criteria: Vec<CriterionRules>,
    pub fingerprint: String,
    tables: Vec<RuleTable>,
}

impl CompiledRuleset {
    pub fn tables(&self) -> &[RuleTable] {
        &self.tables
    }

    pub fn table(&self, kind: ComponentKind) -> Option<&RuleTable> {
        self.tables.iter().find(|t| t.kind == kind)
    }

    /// Criterion ids in patient-table order.
    pub fn criterion_ids(&self) -> impl Iterator<Item = &str> {
        self.criteria.iter().map(|c| c.criterion.as_str())
    }

    pub fn trie_stats(&self) -> Vec<(ComponentKind, TrieStats)> {
        vec![
            (ComponentKind::Section, self.sections.trie.stats()),
            (ComponentKind::NerInclude, self.ner_include.trie.stats()),
            (ComponentKind::NerExclude, self.ner_exclude.trie.stats()),
            (ComponentKind::Context, self.context.trie.stats()),
            (ComponentKind::Temporal, self.temporal.trie.stats()),
        ]
    }
}

/// Content hash over every table's kind and source bytes, in kind order.
pub fn fingerprint(tables: &[RuleTable]) -> String {
    let mut sorted: Vec<&RuleTable> = tables.iter().collect();
    sorted.sort_by_key(|t| t.kind);
    let mut hasher = Sha256::new();
    for t in sorted {
        hasher.update(t.kind.name().as_bytes());
        hasher.update([0u8]);
        hasher.update(t.digest);
    }
    hex::encode(hasher.finalize())
}

pub fn compile(tables: Vec<RuleTable>) -> Result<CompiledRuleset, RuleError> {
    for kind in [
        ComponentKind::Section,
        ComponentKind::Sentence,
        ComponentKind::NerInclude,
        ComponentKind::Context,
        ComponentKind::Temporal,
    ] {
        if !tables.iter().any(|t| t.kind == kind) {
            return Err(RuleError::MissingTable(kind));
        }
    }
    let fingerprint = fingerprint(&tables);

    let rows_of = |kind: ComponentKind| -> Vec<(&RuleTable, &RuleRow)> {
        tables
            .iter()
            .filter(|t| t.kind == kind)
            .flat_map(|t| t.rows.iter().map(move |r| (t, r)))
            .collect()
    };
    macro_rules! collect_rules {
        ($kind:expr, $variant:ident) => {
            rows_of($kind)
                .into_iter()
                .filter_map(|(_, r)| match &r.rule {
                    Rule::$variant(x) => Some(x.clone()),
                    _ => None,
                })
                .collect::<Vec<_>>()
        };
    }

    let mut issues = Vec::new();
    let issue = |t: &RuleTable, r: &RuleRow, message: String| CompileIssue {
        kind: t.kind,
        path: t.source_path.clone(),
        line: r.line,
        message,
    };

    let sections = LexicalTable::build(collect_rules!(ComponentKind::Section, Section), |r| &r.phrase);
    let sentences = collect_rules!(ComponentKind::Sentence, Sentence);
    let ner_include = LexicalTable::build(collect_rules!(ComponentKind::NerInclude, NerInclude), |r| &r.phrase);
    let ner_exclude = LexicalTable::build(collect_rules!(ComponentKind::NerExclude, NerExclude), |r| &r.phrase);
    let context = LexicalTable::build(collect_rules!(ComponentKind::Context, Context), |r| &r.trigger);
    let temporal = LexicalTable::build(collect_rules!(ComponentKind::Temporal, Temporal), |r| &r.phrase);

    let section_names: BTreeSet<&str> = sections
        .rules
        .iter()
        .map(|r| r.name.as_str())
        .chain([UNKNOWN_SECTION])
        .collect();
    let ner_concepts: BTreeSet<&str> = ner_include.rules.iter().map(|r| r.concept.as_str()).collect();

    let mut features = Vec::new();
    let mut features_by_evidence: HashMap<String, Vec<usize>> = HashMap::new();
    for (t, r) in rows_of(ComponentKind::Feature) {
        let Rule::Feature(f) = &r.rule else { continue };
        if let Some(s) = &f.section {
            if !section_names.contains(s.as_str()) {
                issues.push(issue(t, r, format!("section {s:?} is not defined in the section table")));
            }
        }
        if !ner_concepts.contains(f.evidence.as_str()) {
            issues.push(issue(
                t,
                r,
                format!("evidence concept {:?} is not produced by any dictionary entry", f.evidence),
            ));
        }
        features_by_evidence
            .entry(f.evidence.clone())
            .or_default()
            .push(features.len());
        features.push(f.clone());
    }
    let mention_types: BTreeSet<&str> = ner_concepts
        .iter()
        .copied()
        .chain(features.iter().map(|f| f.conclusion.as_str()))
        .collect();

    // Document groups in first-appearance order.
    let mut document_groups: Vec<DocumentGroup> = Vec::new();
    let mut pending: Vec<(String, Vec<DocumentRule>, Vec<DocumentRule>, &RuleTable, &RuleRow)> = Vec::new();
    for (t, r) in rows_of(ComponentKind::Document) {
        let Rule::Document(d) = &r.rule else { continue };
        for ev in &d.evidence {
            if !mention_types.contains(ev.as_str()) {
                issues.push(issue(
                    t,
                    r,
                    format!("evidence type {ev:?} is not produced by any feature rule or dictionary entry"),
                ));
            }
        }
        let idx = match pending.iter().position(|g| g.0 == d.criterion) {
            Some(i) => i,
            None => {
                pending.push((d.criterion.clone(), Vec::new(), Vec::new(), t, r));
                pending.len() - 1
            }
        };
        if d.is_default {
            pending[idx].2.push(d.clone());
        } else {
            pending[idx].1.push(d.clone());
        }
    }
    for (criterion, mut rules, defaults, t, r) in pending {
        match defaults.len() {
            1 => {
                // Stable sort keeps row order among equal priorities.
                rules.sort_by_key(|d| std::cmp::Reverse(d.priority));
                document_groups.push(DocumentGroup {
                    criterion,
                    rules,
                    default: defaults.into_iter().next().unwrap(),
                });
            }
            0 => issues.push(issue(t, r, format!("document group {criterion:?} has no DEFAULT rule"))),
            n => issues.push(issue(t, r, format!("document group {criterion:?} has {n} DEFAULT rules"))),
        }
    }
    let doc_conclusions: BTreeSet<&str> = document_groups
        .iter()
        .flat_map(|g| g.rules.iter().chain([&g.default]))
        .map(|d| d.conclusion.as_str())
        .collect();

    let mut criteria: Vec<CriterionRules> = Vec::new();
    let mut pending: Vec<(String, Vec<PatientRule>, Vec<PatientRule>, &RuleTable, &RuleRow)> = Vec::new();
    for (t, r) in rows_of(ComponentKind::Patient) {
        let Rule::Patient(p) = &r.rule else { continue };
        if let Some(ev) = &p.evidence {
            if !doc_conclusions.contains(ev.as_str()) {
                issues.push(issue(
                    t,
                    r,
                    format!("evidence {ev:?} is not a conclusion of any document rule"),
                ));
            }
        }
        let idx = match pending.iter().position(|g| g.0 == p.criterion) {
            Some(i) => i,
            None => {
                pending.push((p.criterion.clone(), Vec::new(), Vec::new(), t, r));
                pending.len() - 1
            }
        };
        if p.is_default {
            pending[idx].2.push(p.clone());
        } else {
            pending[idx].1.push(p.clone());
        }
    }
    for (criterion, rules, defaults, t, r) in pending {
        match defaults.len() {
            1 => criteria.push(CriterionRules {
                criterion,
                rules,
                default: defaults.into_iter().next().unwrap(),
            }),
            0 => issues.push(issue(t, r, format!("criterion {criterion:?} has no DEFAULT rule"))),
            n => issues.push(issue(t, r, format!("criterion {criterion:?} has {n} DEFAULT rules"))),
        }
    }

    if !issues.is_empty() {
        return Err(RuleError::Compile(issues));
    }

    Ok(CompiledRuleset {
        sections,
        sentences,
        ner_include,
        ner_exclude,
        context,
        temporal,
        features,
        features_by_evidence,
        document_groups,
        criteria,
        fingerprint,
        tables,
    })
}

/// Lints every table in `dir`, returning one message per problem.
pub fn lint_dir(dir: &Path) -> Vec<String> {
    let mut problems = Vec::new();
    let mut tables = Vec::new();
    for kind in ComponentKind::ALL {
        for ext in ["tsv", "csv"] {
            let path = dir.join(format!("{}.{ext}", kind.name()));
            if !path.is_file() {
                continue;
            }
            match load_rule_table(&path, kind) {
                Ok(t) => tables.push(t),
                Err(e) => problems.push(e.to_string()),
            }
            break;
        }
    }
    if problems.is_empty() {
        match compile(tables) {
            Ok(_) => {}
            Err(RuleError::Compile(issues)) => problems.extend(issues.iter().map(ToString::to_string)),
            Err(e) => problems.push(e.to_string()),
        }
    }
    problems
}

#[cfg(test)]
mod tests {
    use super::*;

    const MI_FEATURES: &str = "\
Conclusion\tConclusionAttributes\tEvidence\tEvidenceAttributes\tSection
MI\tCOPYALL\tMI_Candidate\taffirm,certain,patient,cardiac\tFindings
MI\tCOPYALL\tMI_Candidate\taffirm,certain,patient,cardiac\tImpression
MI\tCOPYALL\tMI_Candidate\taffirm,certain,patient,cardiac\tPresentHistory
";

    fn minimal(extra: Vec<RuleTable>) -> Vec<RuleTable> {
        let mut v = vec![
            RuleTable::parse("h\ts\nfindings\tFindings\nimpression\tImpression\nhistory of present illness\tPresentHistory\n", ComponentKind::Section, "section.tsv").unwrap(),
            RuleTable::empty(ComponentKind::Sentence),
            RuleTable::parse("p\tc\ts\nmi\tMI_Candidate\tdomain=cardiac\n", ComponentKind::NerInclude, "ner_include.tsv").unwrap(),
            RuleTable::empty(ComponentKind::Context),
            RuleTable::empty(ComponentKind::Temporal),
        ];
        v.extend(extra);
        v
    }

    #[test]
    fn section_scoped_feature_row_parses() {
        let t = RuleTable::parse(MI_FEATURES, ComponentKind::Feature, "feature.tsv").unwrap();
        assert_eq!(t.rows.len(), 3);
        assert_eq!(t.rows[0].line, 2);
        let Rule::Feature(f) = &t.rows[0].rule else { panic!() };
        assert_eq!(f.conclusion, "MI");
        assert_eq!(f.conclusion_attributes, ConclusionAttributes::CopyAll);
        assert_eq!(f.evidence, "MI_Candidate");
        let want: BTreeSet<String> = ["affirm", "certain", "patient", "cardiac"].map(String::from).into();
        assert_eq!(f.evidence_attributes.as_ref(), Some(&want));
        assert_eq!(f.section.as_deref(), Some("Findings"));
    }

    #[test]
    fn comma_delimited_with_quoted_attribute_list() {
        let csv = "Conclusion,ConclusionAttributes,Evidence,EvidenceAttributes,Section\n\
                   # comment\n\n\
                   MI,COPYALL,MI_Candidate,\"affirm,certain,patient,cardiac\",Findings\n";
        let t = RuleTable::parse(csv, ComponentKind::Feature, "f.csv").unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].line, 4);
        let Rule::Feature(f) = &t.rows[0].rule else { panic!() };
        assert_eq!(f.evidence_attributes.as_ref().unwrap().len(), 4);
    }

    #[test]
    fn empty_file_is_empty_table() {
        let t = RuleTable::parse("", ComponentKind::Feature, "f.tsv").unwrap();
        assert!(t.rows.is_empty());
    }

    #[test]
    fn wrong_column_count_names_row_and_schema() {
        let text = "a\tb\tc\td\te\nMI\tCOPYALL\tMI_Candidate\n";
        let err = RuleTable::parse(text, ComponentKind::Feature, "feature.tsv").unwrap_err();
        match &err {
            RuleError::ColumnCount { line, found, schema, .. } => {
                assert_eq!(*line, 2);
                assert_eq!(*found, 3);
                assert!(schema.contains("evidence attributes"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("feature.tsv:2"));
    }

    #[test]
    fn unknown_keywords_rejected() {
        let bad = [
            (ComponentKind::NerInclude, "p\tc\ts\nmi\tMI\tcardiac\n"),
            (ComponentKind::Context, "t\ta\tv\td\nno\tnegation\tnegated\tsideways\n"),
            (ComponentKind::Context, "t\ta\tv\td\tw\tf\nno\tnegation\tnegated\tforward\t5\tmaybe\n"),
            (ComponentKind::Temporal, "p\tt\n<NUM>\tFORTNIGHT\n"),
            (ComponentKind::Patient, "a\tb\tc\td\te\tf\nX\tmaybe\tD\tNONE\tANY\t\n"),
            (ComponentKind::Patient, "a\tb\tc\td\te\tf\nX\tmet\tD\tNONE\tMOST\t\n"),
            (ComponentKind::Document, "a\tb\tc\td\te\nX\tD\tE\t1\tSOMETIMES\n"),
            (ComponentKind::Sentence, "p\ta\n.|\tsplit\n"),
        ];
        for (kind, text) in bad {
            let err = RuleTable::parse(text, kind, "t.tsv").unwrap_err();
            assert!(matches!(err, RuleError::Invalid { line: 2, .. }), "{kind}: {err}");
        }
    }

    #[test]
    fn context_defaults() {
        let t = RuleTable::parse("t\ta\tv\td\nno evidence of\tnegation\tnegated\tforward\n", ComponentKind::Context, "c.tsv").unwrap();
        let Rule::Context(c) = &t.rows[0].rule else { panic!() };
        assert_eq!(c.window, DEFAULT_CONTEXT_WINDOW);
        assert_eq!(c.flag, ContextFlag::Trigger);
        assert_eq!(c.trigger.len(), 3);
    }

    #[test]
    fn numeric_conditions() {
        let c: NumericCondition = "6.5..9.5".parse().unwrap();
        assert!(c.holds(6.5) && c.holds(9.5) && !c.holds(10.1));
        assert!(">1.5".parse::<NumericCondition>().unwrap().holds(2.1));
        assert!(!">1.5".parse::<NumericCondition>().unwrap().holds(1.5));
        assert!("~3".parse::<NumericCondition>().is_err());
        assert!("9..6".parse::<NumericCondition>().is_err());
    }

    #[test]
    fn compile_rejects_dangling_section() {
        let feat = "c\tca\te\tea\ts\nMI\tCOPYALL\tMI_Candidate\taffirm\tNope\n";
        let tables = minimal(vec![RuleTable::parse(feat, ComponentKind::Feature, "feature.tsv").unwrap()]);
        match compile(tables).unwrap_err() {
            RuleError::Compile(issues) => {
                assert_eq!(issues.len(), 1);
                assert_eq!(issues[0].line, 2);
                assert!(issues[0].message.contains("Nope"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn compile_requires_defaults() {
        let doc = "a\tb\tc\td\te\nMi-6mos\tMI_doc\tMI\t1\t\n";
        let feat = RuleTable::parse(MI_FEATURES, ComponentKind::Feature, "feature.tsv").unwrap();
        let tables = minimal(vec![feat, RuleTable::parse(doc, ComponentKind::Document, "document.tsv").unwrap()]);
        let Err(RuleError::Compile(issues)) = compile(tables) else { panic!() };
        assert!(issues[0].message.contains("no DEFAULT"));
    }

    #[test]
    fn compile_requires_lexical_tables() {
        let err = compile(vec![RuleTable::empty(ComponentKind::Section)]).unwrap_err();
        assert!(matches!(err, RuleError::MissingTable(ComponentKind::Sentence)));
    }

    #[test]
    fn duplicate_dictionary_rows_both_report() {
        let ner = "p\tc\nmi\tMI_Candidate\nmi\tMI_Candidate\n";
        let mut tables = minimal(vec![]);
        tables[2] = RuleTable::parse(ner, ComponentKind::NerInclude, "ner_include.tsv").unwrap();
        let rs = compile(tables).unwrap();
        assert_eq!(rs.ner_include.trie.lookup(&parse_phrase("mi")), &[RuleId(0), RuleId(1)]);
    }

    #[test]
    fn fingerprint_tracks_bytes() {
        let a = RuleTable::parse(MI_FEATURES, ComponentKind::Feature, "f").unwrap();
        let b = RuleTable::parse(MI_FEATURES, ComponentKind::Feature, "f").unwrap();
        let c = RuleTable::parse(&format!("{MI_FEATURES}\n"), ComponentKind::Feature, "f").unwrap();
        assert_eq!(fingerprint(&[a.clone()]), fingerprint(&[b]));
        assert_ne!(fingerprint(&[a]), fingerprint(&[c]));
    }

    #[test]
    fn tsv_round_trip() {
        let t = RuleTable::parse(MI_FEATURES, ComponentKind::Feature, "f").unwrap();
        let back = RuleTable::parse(&t.to_tsv(), ComponentKind::Feature, "f").unwrap();
        assert_eq!(
            t.rules().cloned().collect::<Vec<_>>(),
            back.rules().cloned().collect::<Vec<_>>()
        );
    }
}
