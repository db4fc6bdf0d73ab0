//! Token-level trie shared by every lexical component.
//!
//! Phrases are inserted as token sequences. Each edge is either an exact
//! token (case-folded or case-sensitive) or one of two wildcards: `NUM`
//! matches any number token and `ANY` matches any single token. Scanning
//! walks the trie from every start position without failure links.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Half-open byte range into a document's text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub begin: usize,
    pub end: usize,
}

impl Span {
    pub fn new(begin: usize, end: usize) -> Self {
        debug_assert!(begin <= end);
        Span { begin, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.begin
    }

    pub fn is_empty(&self) -> bool {
        self.begin == self.end
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.begin <= other.begin && other.end <= self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.begin < other.end && other.begin < self.end
    }

    pub fn slice<'a>(&self, text: &'a str) -> &'a str {
        &text[self.begin..self.end]
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.begin, self.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenKind {
    Word,
    Number,
    Punct,
    Newline,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub span: Span,
    /// Lower-cased surface form.
    pub norm: String,
    /// Surface form as it appears in the text.
    pub surface: String,
    pub kind: TokenKind,
}

impl Token {
    pub fn is_newline(&self) -> bool {
        self.kind == TokenKind::Newline
    }
}

/// Splits text into words, numbers, single-character punctuation and newlines.
///
/// Alphanumeric runs containing at least one letter are words ("HbA1c",
/// "90s"). All-digit runs are numbers and may absorb one internal `.`
/// followed by more digits ("7.2"). Whitespace other than `\n` is dropped.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut chars = text.char_indices().peekable();

    while let Some(&(begin, c)) = chars.peek() {
        if c == '\n' {
            chars.next();
            tokens.push(make_token(text, begin, begin + 1, TokenKind::Newline));
        } else if c.is_whitespace() {
            chars.next();
        } else if c.is_alphanumeric() {
            let mut end = begin;
            let mut has_letter = false;
            while let Some(&(i, ch)) = chars.peek() {
                if !ch.is_alphanumeric() {
                    break;
                }
                has_letter |= !ch.is_ascii_digit();
                end = i + ch.len_utf8();
                chars.next();
            }
            if has_letter {
                tokens.push(make_token(text, begin, end, TokenKind::Word));
                continue;
            }
            // Decimal continuation: "7.2" but not "7.2a" or "7."
            let rest = &text[end..];
            if let Some(frac) = rest.strip_prefix('.') {
                let frac_len = frac
                    .char_indices()
                    .find(|(_, ch)| !ch.is_alphanumeric())
                    .map_or(frac.len(), |(i, _)| i);
                let frac_run = &frac[..frac_len];
                if !frac_run.is_empty() && frac_run.bytes().all(|b| b.is_ascii_digit()) {
                    end += 1 + frac_len;
                    while let Some(&(i, _)) = chars.peek() {
                        if i >= end {
                            break;
                        }
                        chars.next();
                    }
                }
            }
            tokens.push(make_token(text, begin, end, TokenKind::Number));
        } else {
            chars.next();
            tokens.push(make_token(text, begin, begin + c.len_utf8(), TokenKind::Punct));
        }
    }
    tokens
}

fn make_token(text: &str, begin: usize, end: usize, kind: TokenKind) -> Token {
    let surface = &text[begin..end];
    Token {
        span: Span::new(begin, end),
        norm: surface.to_lowercase(),
        surface: surface.to_string(),
        kind,
    }
}

/// Identifier of a rule row within one component's table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RuleId(pub usize);

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// One element of an inserted phrase.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PatternToken {
    /// Matches a token whose lower-cased form equals the (lower-cased) text.
    Folded(String),
    /// Matches a token whose surface equals the text exactly.
    Cased(String),
    Num,
    Any,
}

impl PatternToken {
    pub fn matches(&self, token: &Token) -> bool {
        match self {
            PatternToken::Folded(s) => token.norm == *s,
            PatternToken::Cased(s) => token.surface == *s,
            PatternToken::Num => token.kind == TokenKind::Number,
            PatternToken::Any => true,
        }
    }
}

/// Parses a phrase cell into pattern tokens.
///
/// Whitespace-separated chunks `<NUM>` and `<ANY>` become wildcards; every
/// other chunk is run through [`tokenize`]. A cell wrapped in double quotes
/// is matched case-sensitively.
pub fn parse_phrase(cell: &str) -> Vec<PatternToken> {
    let trimmed = cell.trim();
    let (body, cased) = match trimmed
        .strip_prefix('"')
        .and_then(|s| s.strip_suffix('"'))
    {
        Some(inner) if trimmed.len() >= 2 => (inner, true),
        _ => (trimmed, false),
    };
    let mut out = Vec::new();
    for chunk in body.split_whitespace() {
        match chunk {
            "<NUM>" => out.push(PatternToken::Num),
            "<ANY>" => out.push(PatternToken::Any),
            _ => {
                for tok in tokenize(chunk) {
                    out.push(if cased {
                        PatternToken::Cased(tok.surface)
                    } else {
                        PatternToken::Folded(tok.norm)
                    });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Default)]
struct Node {
    folded: HashMap<String, u32>,
    cased: HashMap<String, u32>,
    num: Option<u32>,
    any: Option<u32>,
    payload: Vec<RuleId>,
}

impl Node {
    fn edge_count(&self) -> usize {
        self.folded.len()
            + self.cased.len()
            + usize::from(self.num.is_some())
            + usize::from(self.any.is_some())
    }
}

/// Token trie with wildcard edges; payloads are the rule ids of phrases
/// ending at a node.
#[derive(Debug, Clone)]
pub struct TokenTrie {
    nodes: Vec<Node>,
}

impl Default for TokenTrie {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrieStats {
    pub nodes: usize,
    pub edges: usize,
    pub accepting: usize,
}

impl TokenTrie {
    pub fn new() -> Self {
        TokenTrie {
            nodes: vec![Node::default()],
        }
    }

    /// Inserts a phrase. Empty phrases are ignored so the root never carries
    /// a payload. Re-inserting a phrase appends the id.
    pub fn insert(&mut self, phrase: &[PatternToken], rule_id: RuleId) {
        if phrase.is_empty() {
            return;
        }
        let mut cur = 0usize;
        for pt in phrase {
            let next_id = self.nodes.len() as u32;
            let node = &mut self.nodes[cur];
            let slot = match pt {
                PatternToken::Folded(s) => *node.folded.entry(s.clone()).or_insert(next_id),
                PatternToken::Cased(s) => *node.cased.entry(s.clone()).or_insert(next_id),
                PatternToken::Num => *node.num.get_or_insert(next_id),
                PatternToken::Any => *node.any.get_or_insert(next_id),
            };
            if slot == next_id {
                self.nodes.push(Node::default());
            }
            cur = slot as usize;
        }
        self.nodes[cur].payload.push(rule_id);
    }

    /// Follows `phrase` edge by edge, returning the payload of the final
    /// node (empty if the path does not exist).
    pub fn lookup(&self, phrase: &[PatternToken]) -> &[RuleId] {
        let mut cur = 0usize;
        for pt in phrase {
            let node = &self.nodes[cur];
            let next = match pt {
                PatternToken::Folded(s) => node.folded.get(s).copied(),
                PatternToken::Cased(s) => node.cased.get(s).copied(),
                PatternToken::Num => node.num,
                PatternToken::Any => node.any,
            };
            match next {
                Some(n) => cur = n as usize,
                None => return &[],
            }
        }
        &self.nodes[cur].payload
    }

    /// Depth of the deepest node.
    pub fn depth(&self) -> usize {
        fn walk(trie: &TokenTrie, node: usize) -> usize {
            let n = &trie.nodes[node];
            n.folded
                .values()
                .chain(n.cased.values())
                .chain(n.num.iter())
                .chain(n.any.iter())
                .map(|&c| 1 + walk(trie, c as usize))
                .max()
                .unwrap_or(0)
        }
        walk(self, 0)
    }

    pub fn has_wildcard_edges(&self) -> bool {
        self.nodes.iter().any(|n| n.num.is_some() || n.any.is_some())
    }

    pub fn stats(&self) -> TrieStats {
        TrieStats {
            nodes: self.nodes.len(),
            edges: self.nodes.iter().map(Node::edge_count).sum(),
            accepting: self.nodes.iter().filter(|n| !n.payload.is_empty()).count(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() == 1
    }

    /// All accepting paths starting at `start`, as (token length, rule ids).
    /// Lengths ascend; ids within a length ascend.
    fn matches_at(&self, tokens: &[Token], start: usize) -> Vec<(usize, Vec<RuleId>)> {
        let mut by_len: Vec<(usize, Vec<RuleId>)> = Vec::new();
        let mut stack: Vec<(u32, usize)> = vec![(0, start)];
        while let Some((node_id, pos)) = stack.pop() {
            let node = &self.nodes[node_id as usize];
            if pos > start && !node.payload.is_empty() {
                let len = pos - start;
                match by_len.iter_mut().find(|(l, _)| *l == len) {
                    Some((_, ids)) => ids.extend_from_slice(&node.payload),
                    None => by_len.push((len, node.payload.clone())),
                }
            }
            let Some(tok) = tokens.get(pos) else { continue };
            // Pushed in reverse so exact edges are explored first.
            if let Some(n) = node.any {
                stack.push((n, pos + 1));
            }
            if tok.kind == TokenKind::Number {
                if let Some(n) = node.num {
                    stack.push((n, pos + 1));
                }
            }
            if let Some(&n) = node.cased.get(&tok.surface) {
                stack.push((n, pos + 1));
            }
            if let Some(&n) = node.folded.get(&tok.norm) {
                stack.push((n, pos + 1));
            }
        }
        for (_, ids) in &mut by_len {
            ids.sort_unstable();
        }
        by_len.sort_by_key(|(l, _)| *l);
        by_len
    }

    pub fn scan(&self, tokens: &[Token], policy: OverlapPolicy) -> Vec<Match> {
        let mut out = Vec::new();
        if self.is_empty() {
            return out;
        }
        match policy {
            OverlapPolicy::All => {
                for start in 0..tokens.len() {
                    let mut found = self.matches_at(tokens, start);
                    found.reverse();
                    for (len, ids) in found {
                        out.push(Match::new(tokens, start, len, ids));
                    }
                }
            }
            OverlapPolicy::LongestLeftmost => {
                let mut start = 0;
                while start < tokens.len() {
                    match self.matches_at(tokens, start).pop() {
                        Some((len, ids)) => {
                            out.push(Match::new(tokens, start, len, ids));
                            start += len;
                        }
                        None => start += 1,
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OverlapPolicy {
    /// Greedy left-to-right; the longest match at a position wins and
    /// scanning resumes after it.
    LongestLeftmost,
    /// Every match at every start position.
    All,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Match {
    pub span: Span,
    /// Index of the first matched token.
    pub token_start: usize,
    pub phrase_len: usize,
    pub rule_ids: Vec<RuleId>,
}

impl Match {
    fn new(tokens: &[Token], start: usize, len: usize, rule_ids: Vec<RuleId>) -> Self {
        Match {
            span: Span::new(tokens[start].span.begin, tokens[start + len - 1].span.end),
            token_start: start,
            phrase_len: len,
            rule_ids,
        }
    }

    /// One past the last matched token.
    pub fn token_end(&self) -> usize {
        self.token_start + self.phrase_len
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norms(tokens: &[Token]) -> Vec<(&str, TokenKind)> {
        tokens.iter().map(|t| (t.norm.as_str(), t.kind)).collect()
    }

    fn trie_of(phrases: &[&str]) -> TokenTrie {
        let mut trie = TokenTrie::new();
        for (i, p) in phrases.iter().enumerate() {
            trie.insert(&parse_phrase(p), RuleId(i));
        }
        trie
    }

    #[test]
    fn tokenize_lab_value() {
        let toks = tokenize("HbA1c 7.2%");
        assert_eq!(
            norms(&toks),
            vec![
                ("hba1c", TokenKind::Word),
                ("7.2", TokenKind::Number),
                ("%", TokenKind::Punct)
            ]
        );
        assert_eq!(toks[0].span, Span::new(0, 5));
        assert_eq!(toks[1].span, Span::new(6, 9));
        assert_eq!(toks[2].span, Span::new(9, 10));
    }

    #[test]
    fn tokenize_edge_cases() {
        assert!(tokenize("").is_empty());
        assert_eq!(
            norms(&tokenize("a.b")),
            vec![
                ("a", TokenKind::Word),
                (".", TokenKind::Punct),
                ("b", TokenKind::Word)
            ]
        );
        assert_eq!(
            norms(&tokenize("2.1.\n90s")),
            vec![
                ("2.1", TokenKind::Number),
                (".", TokenKind::Punct),
                ("\n", TokenKind::Newline),
                ("90s", TokenKind::Word)
            ]
        );
        assert_eq!(
            norms(&tokenize("2091-02-02")),
            vec![
                ("2091", TokenKind::Number),
                ("-", TokenKind::Punct),
                ("02", TokenKind::Number),
                ("-", TokenKind::Punct),
                ("02", TokenKind::Number)
            ]
        );
    }

    #[test]
    fn tokenize_multibyte() {
        let toks = tokenize("• café");
        assert_eq!(toks.len(), 2);
        assert_eq!(toks[0].kind, TokenKind::Punct);
        assert_eq!(toks[1].span.slice("• café"), "café");
    }

    #[test]
    fn insert_builds_path() {
        let trie = trie_of(&["no evidence of"]);
        assert!(trie.depth() >= 3);
        assert_eq!(trie.lookup(&parse_phrase("no evidence of")), &[RuleId(0)]);
    }

    #[test]
    fn duplicate_insert_appends() {
        let mut trie = TokenTrie::new();
        let p = parse_phrase("heart attack");
        trie.insert(&p, RuleId(1));
        trie.insert(&p, RuleId(2));
        assert_eq!(trie.lookup(&p), &[RuleId(1), RuleId(2)]);
    }

    #[test]
    fn wildcard_edge_present() {
        let trie = trie_of(&["creatinine <NUM>"]);
        assert!(trie.has_wildcard_edges());
        assert_eq!(
            trie.lookup(&[PatternToken::Folded("creatinine".into()), PatternToken::Num]),
            &[RuleId(0)]
        );
        let toks = tokenize("creatinine 2.1");
        let m = trie.scan(&toks, OverlapPolicy::All);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].phrase_len, 2);
    }

    #[test]
    fn root_has_no_payload() {
        let mut trie = TokenTrie::new();
        trie.insert(&[], RuleId(0));
        assert!(trie.is_empty());
        assert_eq!(trie.stats().accepting, 0);
    }

    #[test]
    fn longest_leftmost_vs_all() {
        let trie = trie_of(&["heart attack", "heart"]);
        let toks = tokenize("heart attack today");
        let ll = trie.scan(&toks, OverlapPolicy::LongestLeftmost);
        assert_eq!(ll.len(), 1);
        assert_eq!(ll[0].span, Span::new(0, 12));
        assert_eq!(ll[0].rule_ids, vec![RuleId(0)]);

        let all = trie.scan(&toks, OverlapPolicy::All);
        assert_eq!(all.len(), 2);
        assert_eq!(all[0].phrase_len, 2);
        assert_eq!(all[1].phrase_len, 1);
        assert_eq!(all[1].rule_ids, vec![RuleId(1)]);
    }

    #[test]
    fn quoted_phrase_is_case_sensitive() {
        let trie = trie_of(&["\"MS\""]);
        assert_eq!(trie.scan(&tokenize("hx of MS"), OverlapPolicy::All).len(), 1);
        assert!(trie.scan(&tokenize("ms smith"), OverlapPolicy::All).is_empty());
        let folded = trie_of(&["MS"]);
        assert_eq!(folded.scan(&tokenize("ms smith"), OverlapPolicy::All).len(), 1);
    }

    #[test]
    fn exact_and_wildcard_paths_merge_ids() {
        let trie = trie_of(&["<ANY> pain", "chest pain"]);
        let m = trie.scan(&tokenize("chest pain"), OverlapPolicy::All);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].rule_ids, vec![RuleId(0), RuleId(1)]);
    }

    #[test]
    fn empty_inputs() {
        let trie = trie_of(&["x"]);
        assert!(trie.scan(&[], OverlapPolicy::All).is_empty());
        assert!(TokenTrie::new()
            .scan(&tokenize("x"), OverlapPolicy::LongestLeftmost)
            .is_empty());
    }

    #[test]
    fn stats_count_structure() {
        let trie = trie_of(&["a b", "a c", "<NUM>"]);
        assert_eq!(
            trie.stats(),
            TrieStats {
                nodes: 5,
                edges: 4,
                accepting: 3
            }
        );
    }
}
