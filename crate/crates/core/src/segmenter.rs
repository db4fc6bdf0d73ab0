//! Rule-driven sentence segmentation.
//!
//! Rules are character patterns tagged `begin`, `end` or `pseudo`. A begin
//! or end rule contributes a boundary at its `|` marker; a pseudo rule
//! cancels any end boundary falling inside (or at the end of) its match.
//! Sentences are the whitespace-trimmed, non-empty stretches between
//! consecutive boundaries.
//!
//! Pattern elements: `\C` upper-case letter, `\c` lower-case letter, `\d`
//! digit, `\p` punctuation, `\n` newline, a literal space for one or more
//! horizontal whitespace characters, `\s` for zero or more, `^` line start,
//! `\b` word start (previous character not alphanumeric), `|` the boundary
//! marker. `\\`, `\|`, `\^` and `\ ` escape the literal character. Anything
//! else matches itself.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::matcher::Span;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Elem {
    Lit(char),
    Upper,
    Lower,
    Digit,
    Punct,
    Newline,
    Spaces1,
    Spaces0,
    LineStart,
    WordStart,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePattern {
    source: String,
    elems: Vec<Elem>,
    /// Index into `elems` where the boundary sits, if a `|` was given.
    marker: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid sentence pattern {pattern:?}: {reason}")]
pub struct PatternError {
    pub pattern: String,
    pub reason: String,
}

impl SentencePattern {
    pub fn parse(source: &str) -> Result<Self, PatternError> {
        let err = |reason: &str| PatternError {
            pattern: source.to_string(),
            reason: reason.to_string(),
        };
        let mut elems = Vec::new();
        let mut marker = None;
        let mut chars = source.chars();
        while let Some(c) = chars.next() {
            let elem = match c {
                '\\' => match chars.next() {
                    Some('C') => Elem::Upper,
                    Some('c') => Elem::Lower,
                    Some('d') => Elem::Digit,
                    Some('p') => Elem::Punct,
                    Some('n') => Elem::Newline,
                    Some('s') => Elem::Spaces0,
                    Some('b') => Elem::WordStart,
                    Some(ch @ ('\\' | '|' | '^' | ' ')) => Elem::Lit(ch),
                    Some(other) => return Err(err(&format!("unknown escape \\{other}"))),
                    None => return Err(err("dangling backslash")),
                },
                '|' => {
                    if marker.replace(elems.len()).is_some() {
                        return Err(err("more than one boundary marker"));
                    }
                    continue;
                }
                '^' => Elem::LineStart,
                ' ' => Elem::Spaces1,
                ch => Elem::Lit(ch),
            };
            elems.push(elem);
        }
        if elems.is_empty() {
            return Err(err("empty pattern"));
        }
        Ok(SentencePattern {
            source: source.to_string(),
            elems,
            marker,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Tries to match starting at byte `pos`. Returns (end of match,
    /// marker position) on success.
    fn match_at(&self, text: &str, pos: usize) -> Option<(usize, Option<usize>)> {
        self.match_from(text, 0, pos, None)
    }

    fn match_from(
        &self,
        text: &str,
        ei: usize,
        pos: usize,
        marked: Option<usize>,
    ) -> Option<(usize, Option<usize>)> {
        let marked = if self.marker == Some(ei) {
            Some(pos)
        } else {
            marked
        };
        let Some(elem) = self.elems.get(ei) else {
            return Some((pos, marked));
        };
        let rest = &text[pos..];
        let next_char = rest.chars().next();
        let single = |pred: fn(char) -> bool| -> Option<usize> {
            next_char.filter(|&c| pred(c)).map(|c| pos + c.len_utf8())
        };
        match elem {
            Elem::Lit(l) => {
                let n = next_char.filter(|c| c == l).map(|c| pos + c.len_utf8())?;
                self.match_from(text, ei + 1, n, marked)
            }
            Elem::Upper => self.match_from(text, ei + 1, single(char::is_uppercase)?, marked),
            Elem::Lower => self.match_from(text, ei + 1, single(char::is_lowercase)?, marked),
            Elem::Digit => {
                self.match_from(text, ei + 1, single(|c| c.is_ascii_digit())?, marked)
            }
            Elem::Punct => self.match_from(text, ei + 1, single(is_punct)?, marked),
            Elem::Newline => self.match_from(text, ei + 1, single(|c| c == '\n')?, marked),
            Elem::LineStart => {
                if pos == 0 || text[..pos].ends_with('\n') {
                    self.match_from(text, ei + 1, pos, marked)
                } else {
                    None
                }
            }
            Elem::WordStart => {
                let prev = text[..pos].chars().next_back();
                if prev.is_none_or(|c| !c.is_alphanumeric()) {
                    self.match_from(text, ei + 1, pos, marked)
                } else {
                    None
                }
            }
            Elem::Spaces0 | Elem::Spaces1 => {
                let run: usize = rest
                    .chars()
                    .take_while(|&c| is_hspace(c))
                    .map(char::len_utf8)
                    .sum();
                let min = usize::from(*elem == Elem::Spaces1);
                let mut taken = run;
                // Greedy with backtracking over character boundaries.
                loop {
                    if taken < min {
                        return None;
                    }
                    if let Some(m) = self.match_from(text, ei + 1, pos + taken, marked) {
                        return Some(m);
                    }
                    if taken == 0 {
                        return None;
                    }
                    taken -= rest[..taken].chars().next_back().map_or(1, char::len_utf8);
                }
            }
        }
    }
}

impl fmt::Display for SentencePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

fn is_hspace(c: char) -> bool {
    c != '\n' && c.is_whitespace()
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentenceAction {
    Begin,
    End,
    Pseudo,
}

impl FromStr for SentenceAction {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "begin" => Ok(SentenceAction::Begin),
            "end" => Ok(SentenceAction::End),
            "pseudo" => Ok(SentenceAction::Pseudo),
            _ => Err(()),
        }
    }
}

impl fmt::Display for SentenceAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SentenceAction::Begin => "begin",
            SentenceAction::End => "end",
            SentenceAction::Pseudo => "pseudo",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceRule {
    pub pattern: SentencePattern,
    pub action: SentenceAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceSpan {
    pub span: Span,
    pub index: usize,
}

pub fn segment(text: &str, rules: &[SentenceRule]) -> Vec<SentenceSpan> {
    let mut begins = Vec::new();
    let mut ends = Vec::new();
    let mut pseudo: Vec<(usize, usize)> = Vec::new();

    for (pos, _) in text.char_indices() {
        for rule in rules {
            let Some((end, marked)) = rule.pattern.match_at(text, pos) else {
                continue;
            };
            match rule.action {
                SentenceAction::Begin => begins.push(marked.unwrap_or(pos)),
                SentenceAction::End => ends.push(marked.unwrap_or(end)),
                SentenceAction::Pseudo => pseudo.push((pos, end)),
            }
        }
    }

    let mut boundaries: Vec<usize> = ends
        .into_iter()
        .filter(|&b| !pseudo.iter().any(|&(s, e)| s < b && b <= e))
        .chain(begins)
        .chain([0, text.len()])
        .collect();
    boundaries.sort_unstable();
    boundaries.dedup();

    let mut out = Vec::new();
    for w in boundaries.windows(2) {
        if let Some(span) = trim_span(text, w[0], w[1]) {
            out.push(SentenceSpan {
                span,
                index: out.len(),
            });
        }
    }
    out
}

/// Shrinks `[begin, end)` to exclude surrounding whitespace; `None` if
/// nothing remains.
pub(crate) fn trim_span(text: &str, begin: usize, end: usize) -> Option<Span> {
    let slice = &text[begin..end];
    let lead = slice.len() - slice.trim_start().len();
    let trimmed = slice.trim();
    if trimmed.is_empty() {
        None
    } else {
        Some(Span::new(begin + lead, begin + lead + trimmed.len()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule(p: &str, a: SentenceAction) -> SentenceRule {
        SentenceRule {
            pattern: SentencePattern::parse(p).unwrap(),
            action: a,
        }
    }

    fn defaults() -> Vec<SentenceRule> {
        use SentenceAction::*;
        vec![
            rule(".| \\C", End),
            rule(".|\\s\\n", End),
            rule("?| \\C", End),
            rule("!| \\C", End),
            rule("\\n\\s\\n|", Begin),
            rule("^|- ", Begin),
            rule("\\bDr.", Pseudo),
            rule("\\b\\C.", Pseudo),
        ]
    }

    fn texts<'a>(text: &'a str, spans: &[SentenceSpan]) -> Vec<&'a str> {
        spans.iter().map(|s| s.span.slice(text)).collect()
    }

    #[test]
    fn two_sentences() {
        let t = "He fell. She called.";
        assert_eq!(texts(t, &segment(t, &defaults())), ["He fell.", "She called."]);
    }

    #[test]
    fn empty_and_unterminated() {
        assert!(segment("", &defaults()).is_empty());
        let t = "no terminal punctuation";
        let s = segment(t, &defaults());
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].span, Span::new(0, t.len()));
    }

    #[test]
    fn empty_rules_one_sentence() {
        let t = "  One. Two.  ";
        let s = segment(t, &[]);
        assert_eq!(texts(t, &s), ["One. Two."]);
    }

    #[test]
    fn abbreviations_do_not_split() {
        let t = "Seen by Dr. Smith today. J. Doe agreed. Next.";
        assert_eq!(
            texts(t, &segment(t, &defaults())),
            ["Seen by Dr. Smith today.", "J. Doe agreed.", "Next."]
        );
    }

    #[test]
    fn list_items_and_blank_lines() {
        let t = "Meds\n- aspirin\n- plavix\n\nplan follows";
        assert_eq!(
            texts(t, &segment(t, &defaults())),
            ["Meds", "- aspirin", "- plavix", "plan follows"]
        );
    }

    #[test]
    fn pattern_parse_errors() {
        assert!(SentencePattern::parse("").is_err());
        assert!(SentencePattern::parse("a|b|").is_err());
        assert!(SentencePattern::parse("\\q").is_err());
        assert!(SentencePattern::parse("a\\").is_err());
        assert!(SentencePattern::parse("\\|x").is_ok());
    }

    #[test]
    fn trailing_whitespace_is_stable() {
        let t = "He fell. She called.";
        let base = segment(t, &defaults()).len();
        for pad in [" ", "\n", "  \n\n \t"] {
            assert_eq!(segment(&format!("{t}{pad}"), &defaults()).len(), base);
        }
    }
}
