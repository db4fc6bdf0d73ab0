//! Section header detection.
//!
//! A header is a section-table phrase that starts a line and is followed by
//! `:` or the end of the line. Sections are flat: each body runs from the
//! end of its header to the start of the next header.

use serde::{Deserialize, Serialize};

use crate::matcher::{OverlapPolicy, Span, Token, TokenKind};
use crate::ruleset::{LexicalTable, SectionRule, UNKNOWN_SECTION};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionSpan {
    pub name: String,
    /// Header phrase plus its colon; empty for the leading `Unknown` region.
    pub header_span: Span,
    pub body_span: Span,
}

impl SectionSpan {
    pub fn body_text<'a>(&self, text: &'a str) -> &'a str {
        self.body_span.slice(text).trim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeaderOptions {
    /// Accept a header followed directly by end of line (no colon).
    pub allow_bare: bool,
}

impl Default for HeaderOptions {
    fn default() -> Self {
        HeaderOptions { allow_bare: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("position {position} is outside the document (length {len})")]
pub struct OutOfBounds {
    pub position: usize,
    pub len: usize,
}

/// Sections of one document plus its length, for position lookups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sections {
    pub spans: Vec<SectionSpan>,
    pub text_len: usize,
}

impl Sections {
    pub fn section_of(&self, position: usize) -> Result<&str, OutOfBounds> {
        section_of(position, &self.spans, self.text_len)
    }
}

pub fn detect_sections(
    text: &str,
    tokens: &[Token],
    rules: &LexicalTable<SectionRule>,
    options: HeaderOptions,
) -> Sections {
    let mut headers: Vec<(String, Span, usize)> = Vec::new();
    let mut next_free = 0usize;
    let matches = rules.trie.scan(tokens, OverlapPolicy::All);
    let mut i = 0;
    while i < matches.len() {
        let start = matches[i].token_start;
        let mut j = i;
        while j < matches.len() && matches[j].token_start == start {
            j += 1;
        }
        let line_initial = start == 0 || tokens[start - 1].kind == TokenKind::Newline;
        if line_initial && start >= next_free {
            // Candidates are longest first.
            for m in &matches[i..j] {
                let end = m.token_end();
                let (header_end, consumed) = match tokens.get(end) {
                    Some(t) if t.kind == TokenKind::Punct && t.norm == ":" => (t.span.end, end + 1),
                    Some(t) if t.kind == TokenKind::Newline && options.allow_bare => (m.span.end, end),
                    None if options.allow_bare => (m.span.end, end),
                    _ => continue,
                };
                let name = rules.rule(m.rule_ids[0]).name.clone();
                headers.push((name, Span::new(m.span.begin, header_end), consumed));
                next_free = consumed;
                break;
            }
        }
        i = j;
    }

    let mut spans = Vec::new();
    if let Some(first) = headers.first() {
        if !text[..first.1.begin].trim().is_empty() {
            spans.push(SectionSpan {
                name: UNKNOWN_SECTION.to_string(),
                header_span: Span::new(0, 0),
                body_span: Span::new(0, first.1.begin),
            });
        }
    } else if !text.is_empty() {
        spans.push(SectionSpan {
            name: UNKNOWN_SECTION.to_string(),
            header_span: Span::new(0, 0),
            body_span: Span::new(0, text.len()),
        });
    }
    for (k, (name, header, _)) in headers.iter().enumerate() {
        let body_end = headers.get(k + 1).map_or(text.len(), |h| h.1.begin);
        spans.push(SectionSpan {
            name: name.clone(),
            header_span: *header,
            body_span: Span::new(header.end, body_end),
        });
    }
    Sections {
        spans,
        text_len: text.len(),
    }
}

/// Name of the section owning `position`; headers belong to their own
/// section.
pub fn section_of(position: usize, sections: &[SectionSpan], text_len: usize) -> Result<&str, OutOfBounds> {
    if position >= text_len {
        return Err(OutOfBounds {
            position,
            len: text_len,
        });
    }
    Ok(sections
        .iter()
        .find(|s| {
            (s.header_span.begin <= position && position < s.header_span.end)
                || (s.body_span.begin <= position && position < s.body_span.end)
        })
        .map_or(UNKNOWN_SECTION, |s| s.name.as_str()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcher::{parse_phrase, tokenize, RuleId, TokenTrie};

    fn table(rows: &[(&str, &str)]) -> LexicalTable<SectionRule> {
        let mut trie = TokenTrie::new();
        let mut rules = Vec::new();
        for (i, (p, n)) in rows.iter().enumerate() {
            let phrase = parse_phrase(p);
            trie.insert(&phrase, RuleId(i));
            rules.push(SectionRule {
                phrase,
                name: n.to_string(),
            });
        }
        LexicalTable { trie, rules }
    }

    fn demo() -> LexicalTable<SectionRule> {
        table(&[
            ("findings", "Findings"),
            ("impression", "Impression"),
            ("assessment", "Impression"),
            ("history", "PastHistory"),
            ("history of present illness", "PresentHistory"),
        ])
    }

    fn detect(text: &str) -> Sections {
        detect_sections(text, &tokenize(text), &demo(), HeaderOptions::default())
    }

    #[test]
    fn findings_and_impression() {
        let text = "FINDINGS:\nmass noted\nIMPRESSION:\nbenign";
        let s = detect(text);
        assert_eq!(s.spans.len(), 2);
        assert_eq!(s.spans[0].name, "Findings");
        assert_eq!(s.spans[0].body_text(text), "mass noted");
        assert_eq!(s.spans[0].header_span.slice(text), "FINDINGS:");
        assert_eq!(s.spans[1].name, "Impression");
        assert_eq!(s.spans[1].body_text(text), "benign");
    }

    #[test]
    fn no_headers_is_unknown() {
        let text = "the findings suggest nothing";
        let s = detect(text);
        assert_eq!(s.spans.len(), 1);
        assert_eq!(s.spans[0].name, UNKNOWN_SECTION);
        assert_eq!(s.spans[0].body_span, Span::new(0, text.len()));
    }

    #[test]
    fn header_as_last_line_has_empty_body() {
        let text = "intro line\nImpression:";
        let s = detect(text);
        assert_eq!(s.spans.len(), 2);
        assert_eq!(s.spans[0].name, UNKNOWN_SECTION);
        assert_eq!(s.spans[1].name, "Impression");
        assert!(s.spans[1].body_span.is_empty());
    }

    #[test]
    fn longest_alias_wins_and_aliases_map_to_canonical() {
        let text = "History of present illness: chest pain\nAssessment: MI";
        let s = detect(text);
        assert_eq!(s.spans[0].name, "PresentHistory");
        assert_eq!(s.spans[1].name, "Impression");
    }

    #[test]
    fn mid_line_mentions_do_not_open_sections() {
        let text = "FINDINGS: see impression below";
        let s = detect(text);
        assert_eq!(s.spans.len(), 1);
        let no_colon = "Impression of the team is good";
        assert_eq!(detect(no_colon).spans[0].name, UNKNOWN_SECTION);
    }

    #[test]
    fn section_of_lookup() {
        let text = "FINDINGS:\nmass noted\nIMPRESSION:\nbenign";
        let s = detect(text);
        let inside = text.find("mass").unwrap();
        assert_eq!(s.section_of(inside).unwrap(), "Findings");
        assert_eq!(s.section_of(2).unwrap(), "Findings");
        assert_eq!(s.section_of(text.find("IMPRESSION").unwrap() + 1).unwrap(), "Impression");
        assert!(s.section_of(text.len()).is_err());
        for p in 0..text.len() {
            assert!(s.section_of(p).is_ok());
        }
    }
}
