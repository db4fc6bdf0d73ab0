//! Patient files to an EMR-like store: split, date, ingest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use regex::Regex;
use rusqlite::{params, Connection, OptionalExtension};
use serde::{Deserialize, Serialize};

pub const DEFAULT_SEPARATOR: &str = r"^\*{4,}[ \t\r]*$";

pub const DEFAULT_DATE_PATTERNS: [&str; 3] = [
    r"(?m)^[ \t]*Record date:[ \t]*(?P<y>\d{4})-(?P<m>\d{1,2})-(?P<d>\d{1,2})",
    r"\b(?P<y>\d{4})-(?P<m>\d{1,2})-(?P<d>\d{1,2})\b",
    r"\b(?P<m>\d{1,2})/(?P<d>\d{1,2})/(?P<y>\d{4})\b",
];

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("input has no record content")]
    EmptyInput,
    #[error("patient {0} has no dated record")]
    MissingReferenceDate(String),
    #[error("invalid pattern {pattern:?}: {source}")]
    Pattern {
        pattern: String,
        #[source]
        source: regex::Error,
    },
    #[error("date pattern {0:?} lacks the y, m and d groups")]
    DatePatternGroups(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("store: {0}")]
    Store(#[from] rusqlite::Error),
    #[error("unknown document {0}")]
    UnknownDocument(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalDocument {
    pub doc_id: String,
    pub patient_id: String,
    pub seq: usize,
    pub text: String,
    pub record_date: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patient {
    pub patient_id: String,
    pub documents: Vec<ClinicalDocument>,
    pub reference_date: Option<NaiveDate>,
}

pub fn doc_id(patient_id: &str, seq: usize) -> String {
    format!("{patient_id}-{seq}")
}

/// How files are cut into records and dated.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    separator: Regex,
    date_patterns: Vec<Regex>,
}

impl Default for Preprocessor {
    fn default() -> Self {
        let patterns: Vec<String> = DEFAULT_DATE_PATTERNS.iter().map(|s| s.to_string()).collect();
        Preprocessor::new(DEFAULT_SEPARATOR, &patterns).expect("default patterns are valid")
    }
}

fn compile(pattern: &str) -> Result<Regex, CorpusError> {
    Regex::new(pattern).map_err(|source| CorpusError::Pattern {
        pattern: pattern.to_string(),
        source,
    })
}

impl Preprocessor {
    /// `separator` is matched against single lines (without the newline).
    pub fn new(separator: &str, date_patterns: &[String]) -> Result<Self, CorpusError> {
        let separator = compile(separator)?;
        let date_patterns = date_patterns
            .iter()
            .map(|p| {
                let re = compile(p)?;
                let names: Vec<&str> = re.capture_names().flatten().collect();
                if ["y", "m", "d"].iter().all(|g| names.contains(g)) {
                    Ok(re)
                } else {
                    Err(CorpusError::DatePatternGroups(p.clone()))
                }
            })
            .collect::<Result<_, _>>()?;
        Ok(Preprocessor {
            separator,
            date_patterns,
        })
    }

    /// Byte ranges of separator lines with their own line ending and the
    /// newline before them. Ranges of adjacent separators may overlap.
    pub fn separator_ranges(&self, text: &str) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut pos = 0;
        for line in text.split_inclusive('\n') {
            let body = line.strip_suffix('\n').unwrap_or(line);
            let start = pos;
            pos += line.len();
            if !self.separator.is_match(body) {
                continue;
            }
            out.push((start.saturating_sub(1), pos));
        }
        out
    }

    /// Records in file order. A file without separators is one record.
    pub fn split_records(&self, file_text: &str) -> Result<Vec<(usize, String)>, CorpusError> {
        let mut pieces = Vec::new();
        let mut cursor = 0;
        for (lo, hi) in self.separator_ranges(file_text) {
            let lo = lo.max(cursor);
            pieces.push(&file_text[cursor..lo]);
            cursor = hi.max(cursor);
        }
        pieces.push(&file_text[cursor..]);
        let records: Vec<(usize, String)> = pieces
            .into_iter()
            .filter(|p| !p.trim().is_empty())
            .enumerate()
            .map(|(i, p)| (i, p.to_string()))
            .collect();
        if records.is_empty() {
            return Err(CorpusError::EmptyInput);
        }
        Ok(records)
    }

    /// First date found by the ordered patterns. A date that matches a
    /// pattern but is not a real calendar day ends the search with a warning.
    pub fn extract_record_date(&self, text: &str) -> (Option<NaiveDate>, Option<String>) {
        for re in &self.date_patterns {
            let Some(c) = re.captures(text) else { continue };
            let num = |g: &str| c[g].parse::<u32>().ok();
            let date = match (c["y"].parse::<i32>().ok(), num("m"), num("d")) {
                (Some(y), Some(m), Some(d)) => NaiveDate::from_ymd_opt(y, m, d),
                _ => None,
            };
            return match date {
                Some(d) => (Some(d), None),
                None => (None, Some(format!("invalid calendar date {:?}", &c[0]))),
            };
        }
        (None, None)
    }
}

pub fn split_records(file_text: &str) -> Result<Vec<(usize, String)>, CorpusError> {
    Preprocessor::default().split_records(file_text)
}

pub fn extract_record_date(text: &str) -> Option<NaiveDate> {
    let (date, warning) = Preprocessor::default().extract_record_date(text);
    if let Some(w) = warning {
        tracing::warn!("{w}");
    }
    date
}

pub fn infer_reference_date(patient: &Patient) -> Result<NaiveDate, CorpusError> {
    patient
        .documents
        .iter()
        .filter_map(|d| d.record_date)
        .max()
        .ok_or_else(|| CorpusError::MissingReferenceDate(patient.patient_id.clone()))
}

/// Cuts one patient file into a dated [`Patient`]. Warnings go to `warnings`.
pub fn build_patient(
    patient_id: &str,
    file_text: &str,
    pre: &Preprocessor,
    warnings: &mut Vec<String>,
) -> Result<Patient, CorpusError> {
    let mut documents = Vec::new();
    for (seq, text) in pre.split_records(file_text)? {
        let (record_date, warning) = pre.extract_record_date(&text);
        if let Some(w) = warning {
            warnings.push(format!("{}: {w}", doc_id(patient_id, seq)));
        }
        documents.push(ClinicalDocument {
            doc_id: doc_id(patient_id, seq),
            patient_id: patient_id.to_string(),
            seq,
            text,
            record_date,
        });
    }
    let mut patient = Patient {
        patient_id: patient_id.to_string(),
        documents,
        reference_date: None,
    };
    match infer_reference_date(&patient) {
        Ok(d) => patient.reference_date = Some(d),
        Err(e) => warnings.push(e.to_string()),
    }
    Ok(patient)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub patients: usize,
    pub documents: usize,
    pub warnings: Vec<String>,
}

/// Patient files in `dir`: visible regular files that are not gold XML,
/// sorted by name.
pub fn patient_files(dir: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    let io = |source| CorpusError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        let is_xml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("xml"));
        if path.is_file() && !name.starts_with('.') && !is_xml {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Reads every patient file of `dir` into `store`. Files that cannot be
/// read or hold no record are skipped with a warning.
pub fn ingest(dir: &Path, store: &mut Store, pre: &Preprocessor) -> Result<IngestSummary, CorpusError> {
    let mut summary = IngestSummary::default();
    let mut patients = Vec::new();
    for path in patient_files(dir)? {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let text = match fs::read(&path).map(String::from_utf8) {
            Ok(Ok(t)) => t,
            Ok(Err(_)) => {
                summary.warnings.push(format!("{}: not valid UTF-8", path.display()));
                continue;
            }
            Err(e) => {
                summary.warnings.push(format!("{}: {e}", path.display()));
                continue;
            }
        };
        match build_patient(&stem, &text, pre, &mut summary.warnings) {
            Ok(p) => patients.push(p),
            Err(e) => summary.warnings.push(format!("{}: {e}", path.display())),
        }
    }
    summary.patients = patients.len();
    summary.documents = patients.iter().map(|p| p.documents.len()).sum();
    store.put_patients(&patients)?;
    Ok(summary)
}

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS patients (
    patient_id TEXT PRIMARY KEY,
    reference_date TEXT
);
CREATE TABLE IF NOT EXISTS documents (
    doc_id TEXT PRIMARY KEY,
    patient_id TEXT NOT NULL REFERENCES patients(patient_id),
    seq INTEGER NOT NULL,
    record_date TEXT,
    text TEXT NOT NULL
);
CREATE INDEX IF NOT EXISTS documents_by_patient ON documents(patient_id, seq);
";

fn parse_date(s: Option<String>) -> Option<NaiveDate> {
    s.and_then(|s| NaiveDate::parse_from_str(&s, "%Y-%m-%d").ok())
}

fn fmt_date(d: Option<NaiveDate>) -> Option<String> {
    d.map(|d| d.format("%Y-%m-%d").to_string())
}

/// SQLite-backed patient and document tables.
pub struct Store {
    conn: Connection,
}

impl Store {
    pub fn open(path: &Path) -> Result<Self, CorpusError> {
        let conn = Connection::open(path)?;
        conn.execute_batch(SCHEMA)?;
        Ok(Store { conn })
    }

    pub fn in_memory() -> Result<Self, CorpusError> {
        let conn = Connection::open_in_memory()?;
        conn.execute_batch(SCHEMA)?;
        Ok(Store { conn })
    }

    /// Replaces each patient (and its documents) wholesale, so repeated
    /// ingestion of the same files leaves the store unchanged.
    pub fn put_patients(&mut self, patients: &[Patient]) -> Result<(), CorpusError> {
        let tx = self.conn.transaction()?;
        for p in patients {
            tx.execute("DELETE FROM documents WHERE patient_id = ?1", params![p.patient_id])?;
            tx.execute(
                "INSERT OR REPLACE INTO patients (patient_id, reference_date) VALUES (?1, ?2)",
                params![p.patient_id, fmt_date(p.reference_date)],
            )?;
            for d in &p.documents {
                tx.execute(
                    "INSERT INTO documents (doc_id, patient_id, seq, record_date, text) VALUES (?1, ?2, ?3, ?4, ?5)",
                    params![d.doc_id, d.patient_id, d.seq as i64, fmt_date(d.record_date), d.text],
                )?;
            }
        }
        tx.commit()?;
        Ok(())
    }

    pub fn patient_ids(&self) -> Result<Vec<String>, CorpusError> {
        let mut stmt = self.conn.prepare("SELECT patient_id FROM patients ORDER BY patient_id")?;
        let ids = stmt.query_map([], |r| r.get(0))?.collect::<Result<_, _>>()?;
        Ok(ids)
    }

    pub fn patient(&self, patient_id: &str) -> Result<Option<Patient>, CorpusError> {
        let reference: Option<Option<String>> = self
            .conn
            .query_row(
                "SELECT reference_date FROM patients WHERE patient_id = ?1",
                params![patient_id],
                |r| r.get(0),
            )
            .optional()?;
        let Some(reference) = reference else { return Ok(None) };
        let mut stmt = self.conn.prepare(
            "SELECT doc_id, patient_id, seq, record_date, text FROM documents WHERE patient_id = ?1 ORDER BY seq",
        )?;
        let documents = stmt
            .query_map(params![patient_id], row_to_document)?
            .collect::<Result<_, _>>()?;
        Ok(Some(Patient {
            patient_id: patient_id.to_string(),
            documents,
            reference_date: parse_date(reference),
        }))
    }

    pub fn patients(&self) -> Result<Vec<Patient>, CorpusError> {
        self.patient_ids()?
            .iter()
            .filter_map(|id| self.patient(id).transpose())
            .collect()
    }

    pub fn document(&self, doc_id: &str) -> Result<Option<ClinicalDocument>, CorpusError> {
        Ok(self
            .conn
            .query_row(
                "SELECT doc_id, patient_id, seq, record_date, text FROM documents WHERE doc_id = ?1",
                params![doc_id],
                row_to_document,
            )
            .optional()?)
    }

    /// Patients whose stored reference date differs from the maximum of
    /// their stored record dates. Empty for a consistent store.
    pub fn reference_date_mismatches(&self) -> Result<Vec<String>, CorpusError> {
        let mut stmt = self.conn.prepare(
            "SELECT p.patient_id FROM patients p
             LEFT JOIN (SELECT patient_id, MAX(record_date) AS latest FROM documents GROUP BY patient_id) d
               ON d.patient_id = p.patient_id
             WHERE p.reference_date IS NOT d.latest
             ORDER BY p.patient_id",
        )?;
        let ids = stmt.query_map([], |r| r.get(0))?.collect::<Result<_, _>>()?;
        Ok(ids)
    }

    pub fn counts(&self) -> Result<(usize, usize), CorpusError> {
        let count = |table: &str| -> Result<usize, rusqlite::Error> {
            self.conn
                .query_row(&format!("SELECT COUNT(*) FROM {table}"), [], |r| r.get::<_, i64>(0))
                .map(|n| n as usize)
        };
        Ok((count("patients")?, count("documents")?))
    }

    /// One row per document: doc_id, patient_id, seq, record_date, byte length.
    pub fn export_tsv(&self) -> Result<String, CorpusError> {
        let mut out = String::from("doc_id\tpatient_id\tseq\trecord_date\tbytes\n");
        for p in self.patients()? {
            for d in &p.documents {
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\n",
                    d.doc_id,
                    d.patient_id,
                    d.seq,
                    fmt_date(d.record_date).unwrap_or_default(),
                    d.text.len()
                ));
            }
        }
        Ok(out)
    }

    /// Both tables as JSON lines, for fixtures.
    pub fn export_flat(&self) -> Result<String, CorpusError> {
        let mut out = String::new();
        for p in self.patients()? {
            out.push_str(&serde_json::to_string(&p).expect("patient serializes"));
            out.push('\n');
        }
        Ok(out)
    }

    pub fn import_flat(&mut self, flat: &str) -> Result<usize, CorpusError> {
        let patients: Vec<Patient> = flat
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()
            .map_err(|e| CorpusError::Io {
                path: PathBuf::from("<flat import>"),
                source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
            })?;
        self.put_patients(&patients)?;
        Ok(patients.len())
    }

    /// Full contents in a comparable form.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Patient>, CorpusError> {
        Ok(self
            .patients()?
            .into_iter()
            .map(|p| (p.patient_id.clone(), p))
            .collect())
    }
}

fn row_to_document(r: &rusqlite::Row<'_>) -> rusqlite::Result<ClinicalDocument> {
    Ok(ClinicalDocument {
        doc_id: r.get(0)?,
        patient_id: r.get(1)?,
        seq: r.get::<_, i64>(2)? as usize,
        record_date: parse_date(r.get(3)?),
        text: r.get(4)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    #[test]
    fn splits_on_star_lines() {
        let text = "Record date: 2090-01-01\nA\n****\nRecord date: 2091-02-02\nB";
        let got = split_records(text).unwrap();
        assert_eq!(
            got,
            vec![
                (0, "Record date: 2090-01-01\nA".to_string()),
                (1, "Record date: 2091-02-02\nB".to_string())
            ]
        );
    }

    #[test]
    fn no_separator_is_one_record() {
        assert_eq!(
            split_records("single note, no separator").unwrap(),
            vec![(0, "single note, no separator".to_string())]
        );
    }

    #[test]
    fn separators_only_is_empty_input() {
        assert!(matches!(split_records("****\n*****\n"), Err(CorpusError::EmptyInput)));
        assert!(matches!(split_records(""), Err(CorpusError::EmptyInput)));
    }

    #[test]
    fn three_stars_are_content() {
        assert_eq!(split_records("a\n***\nb").unwrap().len(), 1);
    }

    #[test]
    fn record_dates() {
        assert_eq!(extract_record_date("Record date: 2091-02-02\nx"), Some(ymd(2091, 2, 2)));
        assert_eq!(extract_record_date("no date here"), None);
        assert_eq!(extract_record_date("seen 03/04/2090"), Some(ymd(2090, 3, 4)));
        let (d, w) = Preprocessor::default().extract_record_date("Record date: 2091-13-40");
        assert_eq!(d, None);
        assert!(w.is_some());
    }

    #[test]
    fn header_pattern_beats_earlier_bare_date() {
        let text = "noted 2080-01-01 earlier\nRecord date: 2091-02-02";
        assert_eq!(extract_record_date(text), Some(ymd(2091, 2, 2)));
    }

    #[test]
    fn reference_date_is_latest() {
        let mut w = Vec::new();
        let p = build_patient(
            "P",
            "Record date: 2090-01-01\n****\nRecord date: 2091-02-02\n****\nundated",
            &Preprocessor::default(),
            &mut w,
        )
        .unwrap();
        assert_eq!(p.reference_date, Some(ymd(2091, 2, 2)));
        assert_eq!(p.documents[2].record_date, None);
        let undated = Patient {
            patient_id: "Q".into(),
            documents: vec![],
            reference_date: None,
        };
        assert!(matches!(infer_reference_date(&undated), Err(CorpusError::MissingReferenceDate(id)) if id == "Q"));
    }

    #[test]
    fn bad_date_pattern_is_rejected() {
        assert!(Preprocessor::new(DEFAULT_SEPARATOR, &["(\\d+)".to_string()]).is_err());
    }
}
