//! Temporal expressions, event-date resolution and historical/present
//! classification.
//!
//! Expressions are found by scanning the temporal rule trie and handing each
//! match to the interpreter named by its rule's tag. The interpreter
//! validates the matched tokens (a `<ANY>` slot must hold a decade word, a
//! `<NUM>` year must look like a year) and yields a calendar interval.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, Days, Months, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::matcher::{OverlapPolicy, Span, Token, TokenKind};
use crate::ruleset::{LexicalTable, TemporalRule};

pub const DEFAULT_HISTORY_THRESHOLD_DAYS: i64 = 30;
/// Maximum token gap between a mention and the expression dating it.
pub const DEFAULT_EVENT_WINDOW: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DateInterval {
    pub earliest: NaiveDate,
    pub latest: NaiveDate,
}

impl DateInterval {
    pub fn new(earliest: NaiveDate, latest: NaiveDate) -> Option<Self> {
        (earliest <= latest).then_some(DateInterval { earliest, latest })
    }

    pub fn day(d: NaiveDate) -> Self {
        DateInterval {
            earliest: d,
            latest: d,
        }
    }

    pub fn year(y: i32) -> Option<Self> {
        DateInterval::new(NaiveDate::from_ymd_opt(y, 1, 1)?, NaiveDate::from_ymd_opt(y, 12, 31)?)
    }

    pub fn month(y: i32, m: u32) -> Option<Self> {
        let first = NaiveDate::from_ymd_opt(y, m, 1)?;
        let last = first.checked_add_months(Months::new(1))?.pred_opt()?;
        DateInterval::new(first, last)
    }

    pub fn years(from: i32, to: i32) -> Option<Self> {
        DateInterval::new(NaiveDate::from_ymd_opt(from, 1, 1)?, NaiveDate::from_ymd_opt(to, 12, 31)?)
    }

    pub fn shift_days(&self, days: i64) -> Self {
        DateInterval {
            earliest: shift(self.earliest, days),
            latest: shift(self.latest, days),
        }
    }
}

impl fmt::Display for DateInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.earliest == self.latest {
            write!(f, "{}", self.earliest)
        } else {
            write!(f, "{}/{}", self.earliest, self.latest)
        }
    }
}

pub(crate) fn shift(d: NaiveDate, days: i64) -> NaiveDate {
    if days >= 0 {
        d + Days::new(days as u64)
    } else {
        d - Days::new(days.unsigned_abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TemporalTag {
    IsoDate,
    UsDate,
    MonthYear,
    Year,
    Decade,
    EarlyDecade,
    MidDecade,
    LateDecade,
    DaysAgo,
    WeeksAgo,
    MonthsAgo,
    YearsAgo,
    Yesterday,
    LastMonth,
    LastYear,
    ForDays,
    ForMonths,
    ForYears,
}

impl TemporalTag {
    const NAMES: [(&'static str, TemporalTag); 18] = [
        ("ISO_DATE", TemporalTag::IsoDate),
        ("US_DATE", TemporalTag::UsDate),
        ("MONTH_YEAR", TemporalTag::MonthYear),
        ("YEAR", TemporalTag::Year),
        ("DECADE", TemporalTag::Decade),
        ("EARLY_DECADE", TemporalTag::EarlyDecade),
        ("MID_DECADE", TemporalTag::MidDecade),
        ("LATE_DECADE", TemporalTag::LateDecade),
        ("DAYS_AGO", TemporalTag::DaysAgo),
        ("WEEKS_AGO", TemporalTag::WeeksAgo),
        ("MONTHS_AGO", TemporalTag::MonthsAgo),
        ("YEARS_AGO", TemporalTag::YearsAgo),
        ("YESTERDAY", TemporalTag::Yesterday),
        ("LAST_MONTH", TemporalTag::LastMonth),
        ("LAST_YEAR", TemporalTag::LastYear),
        ("FOR_DAYS", TemporalTag::ForDays),
        ("FOR_MONTHS", TemporalTag::ForMonths),
        ("FOR_YEARS", TemporalTag::ForYears),
    ];

    pub fn name(self) -> &'static str {
        Self::NAMES.iter().find(|(_, t)| *t == self).map(|(n, _)| *n).unwrap()
    }

    pub fn kind(self) -> TemporalKind {
        use TemporalTag::*;
        match self {
            IsoDate | UsDate | MonthYear | Year => TemporalKind::Absolute,
            Decade | EarlyDecade | MidDecade | LateDecade => TemporalKind::Decade,
            DaysAgo | WeeksAgo | MonthsAgo | YearsAgo | Yesterday | LastMonth | LastYear => {
                TemporalKind::Relative
            }
            ForDays | ForMonths | ForYears => TemporalKind::Duration,
        }
    }
}

impl FromStr for TemporalTag {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        let s = s.trim().to_ascii_uppercase();
        Self::NAMES.iter().find(|(n, _)| *n == s).map(|(_, t)| *t).ok_or(())
    }
}

impl fmt::Display for TemporalTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemporalKind {
    Absolute,
    Relative,
    Decade,
    Duration,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalExpression {
    pub span: Span,
    pub token_start: usize,
    pub token_end: usize,
    pub interval: DateInterval,
    pub kind: TemporalKind,
    pub tag: TemporalTag,
}

const MONTHS: [&str; 12] = [
    "january", "february", "march", "april", "may", "june", "july", "august", "september",
    "october", "november", "december",
];

fn month_number(word: &str) -> Option<u32> {
    let w = word.trim_end_matches('.');
    MONTHS
        .iter()
        .position(|m| *m == w || (w.len() >= 3 && m.starts_with(w) && (w.len() == 3 || w == "sept")))
        .map(|i| i as u32 + 1)
}

fn as_int(tok: &Token) -> Option<i64> {
    (tok.kind == TokenKind::Number && tok.norm.bytes().all(|b| b.is_ascii_digit()))
        .then(|| tok.norm.parse().ok())
        .flatten()
}

fn as_year(tok: &Token) -> Option<i32> {
    if tok.norm.len() != 4 {
        return None;
    }
    as_int(tok)
        .filter(|y| (1900..=2199).contains(y))
        .map(|y| y as i32)
}

/// Decade word such as `90s` or `1990s`: (year digits, digit count).
fn decade_word(tok: &Token) -> Option<(i32, usize)> {
    let digits = tok.norm.strip_suffix('s')?;
    if !(digits.len() == 2 || digits.len() == 4) || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let v: i32 = digits.parse().ok()?;
    (v % 10 == 0).then_some((v, digits.len()))
}

/// Interprets the tokens of one rule match. `None` when the tokens do not
/// fit the tag or a needed anchor date is missing.
pub fn interpret(tag: TemporalTag, tokens: &[Token], anchor: Option<NaiveDate>) -> Option<DateInterval> {
    use TemporalTag::*;
    let ints: Vec<i64> = tokens.iter().filter_map(as_int).collect();
    let single_int = || -> Option<i64> { (ints.len() == 1).then(|| ints[0]) };
    match tag {
        IsoDate | UsDate => {
            let nums: Vec<&Token> = tokens.iter().filter(|t| t.kind == TokenKind::Number).collect();
            if nums.len() != 3 {
                return None;
            }
            let (y, m, d) = if tag == IsoDate {
                (as_year(nums[0])?, as_int(nums[1])?, as_int(nums[2])?)
            } else {
                (as_year(nums[2])?, as_int(nums[0])?, as_int(nums[1])?)
            };
            NaiveDate::from_ymd_opt(y, u32::try_from(m).ok()?, u32::try_from(d).ok()?).map(DateInterval::day)
        }
        MonthYear => {
            let month = tokens
                .iter()
                .filter(|t| t.kind == TokenKind::Word)
                .find_map(|t| month_number(&t.norm))?;
            let year = tokens.iter().find_map(as_year)?;
            DateInterval::month(year, month)
        }
        Year => {
            let years: Vec<i32> = tokens.iter().filter_map(as_year).collect();
            (years.len() == 1).then(|| DateInterval::year(years[0])).flatten()
        }
        Decade | EarlyDecade | MidDecade | LateDecade => {
            let (value, width) = tokens.iter().find_map(decade_word)?;
            let (lo, hi) = match tag {
                Decade => (0, 9),
                EarlyDecade => (0, 3),
                MidDecade => (4, 6),
                _ => (7, 9),
            };
            let base = if width == 4 {
                value
            } else {
                resolve_century(value, hi, anchor)
            };
            DateInterval::years(base + lo, base + hi)
        }
        DaysAgo | WeeksAgo | MonthsAgo | YearsAgo => {
            let (n, a) = (single_int()?, anchor?);
            let n = u32::try_from(n).ok()?;
            let d = match tag {
                DaysAgo => a.checked_sub_days(Days::new(n.into()))?,
                WeeksAgo => a.checked_sub_days(Days::new(u64::from(n) * 7))?,
                MonthsAgo => a.checked_sub_months(Months::new(n))?,
                _ => a.checked_sub_months(Months::new(n.checked_mul(12)?))?,
            };
            Some(DateInterval::day(d))
        }
        Yesterday => Some(DateInterval::day(anchor?.pred_opt()?)),
        LastMonth => {
            let prev = anchor?.checked_sub_months(Months::new(1))?;
            DateInterval::month(prev.year(), prev.month())
        }
        LastYear => DateInterval::year(anchor?.year() - 1),
        ForDays | ForMonths | ForYears => {
            let (n, a) = (single_int()?, anchor?);
            let n = u32::try_from(n).ok()?;
            let start = match tag {
                ForDays => a.checked_sub_days(Days::new(n.into()))?,
                ForMonths => a.checked_sub_months(Months::new(n))?,
                _ => a.checked_sub_months(Months::new(n.checked_mul(12)?))?,
            };
            DateInterval::new(start, a)
        }
    }
}

/// Two-digit decade to a full year: the latest century whose interval ends
/// no later than the anchor year. Without an anchor, the 1900s.
fn resolve_century(two_digit: i32, hi: i32, anchor: Option<NaiveDate>) -> i32 {
    let Some(anchor) = anchor else {
        return 1900 + two_digit;
    };
    let ay = anchor.year();
    let mut century = ay.div_euclid(100) * 100;
    while century + two_digit + hi > ay {
        century -= 100;
    }
    century + two_digit
}

/// All non-overlapping expressions in `tokens`, leftmost-longest among the
/// matches that interpret successfully.
pub fn find_expressions(
    tokens: &[Token],
    rules: &LexicalTable<TemporalRule>,
    anchor: Option<NaiveDate>,
) -> Vec<TemporalExpression> {
    let mut candidates = Vec::new();
    for m in rules.trie.scan(tokens, OverlapPolicy::All) {
        let slice = &tokens[m.token_start..m.token_end()];
        let hit = m.rule_ids.iter().find_map(|&id| {
            let tag = rules.rule(id).tag;
            interpret(tag, slice, anchor).map(|iv| (tag, iv))
        });
        if let Some((tag, interval)) = hit {
            candidates.push(TemporalExpression {
                span: m.span,
                token_start: m.token_start,
                token_end: m.token_end(),
                interval,
                kind: tag.kind(),
                tag,
            });
        }
    }
    // Scan output is already ordered by (start, longest first).
    let mut out: Vec<TemporalExpression> = Vec::new();
    for c in candidates {
        if out.last().is_none_or(|prev| c.token_start >= prev.token_end) {
            out.push(c);
        }
    }
    out
}

/// The first expression in `tokens`, if any.
pub fn parse_temporal_expression(
    tokens: &[Token],
    rules: &LexicalTable<TemporalRule>,
    anchor: Option<NaiveDate>,
) -> Option<TemporalExpression> {
    find_expressions(tokens, rules, anchor).into_iter().next()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventBasis {
    Expression,
    DocumentDate,
    Undatable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedEventDate {
    /// Empty only when `basis` is `Undatable`.
    pub interval: Option<DateInterval>,
    pub basis: EventBasis,
}

impl ResolvedEventDate {
    pub const UNDATABLE: ResolvedEventDate = ResolvedEventDate {
        interval: None,
        basis: EventBasis::Undatable,
    };
}

fn token_gap(a: (usize, usize), b: (usize, usize)) -> usize {
    if b.1 <= a.0 {
        a.0 - b.1
    } else if b.0 >= a.1 {
        b.0 - a.1
    } else {
        0
    }
}

/// Dates a mention from the nearest expression within `window` tokens of
/// it (ties go to the later expression), else from the record date.
pub fn resolve_event_date(
    mention_tokens: (usize, usize),
    expressions: &[TemporalExpression],
    record_date: Option<NaiveDate>,
    window: usize,
) -> ResolvedEventDate {
    let nearest = expressions
        .iter()
        .map(|e| (token_gap(mention_tokens, (e.token_start, e.token_end)), e))
        .filter(|(gap, _)| *gap <= window)
        .min_by(|(ga, ea), (gb, eb)| ga.cmp(gb).then(eb.token_start.cmp(&ea.token_start)));
    match (nearest, record_date) {
        (Some((_, e)), _) => ResolvedEventDate {
            interval: Some(e.interval),
            basis: EventBasis::Expression,
        },
        (None, Some(d)) => ResolvedEventDate {
            interval: Some(DateInterval::day(d)),
            basis: EventBasis::DocumentDate,
        },
        (None, None) => ResolvedEventDate::UNDATABLE,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Temporality {
    Historical,
    Present,
}

impl Temporality {
    pub fn as_str(self) -> &'static str {
        match self {
            Temporality::Historical => "historical",
            Temporality::Present => "present",
        }
    }
}

/// Historical iff the event ends strictly before `record_date - threshold`.
/// `None` for undatable events.
pub fn classify_temporality(
    resolved: &ResolvedEventDate,
    record_date: NaiveDate,
    history_threshold_days: i64,
) -> Option<Temporality> {
    let interval = resolved.interval?;
    let cutoff = shift(record_date, -history_threshold_days);
    Some(if interval.latest < cutoff {
        Temporality::Historical
    } else {
        Temporality::Present
    })
}
