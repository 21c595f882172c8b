//! Date detection and normalization relative to a reference date, plus
//! time-window membership tests with day/month/year granularity.
//!
//! The recognized forms are listed in `docs/temporal-grammar.md`.

use std::sync::OnceLock;

use chrono::{Datelike, Days, Months, NaiveDate};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, PatientRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Granularity {
    Day,
    Month,
    Year,
}

/// A calendar date that may be known only to month or year precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartialDate {
    pub year: i32,
    pub month: Option<u32>,
    pub day: Option<u32>,
}

impl PartialDate {
    pub fn day(year: i32, month: u32, day: u32) -> Option<PartialDate> {
        NaiveDate::from_ymd_opt(year, month, day)?;
        Some(PartialDate {
            year,
            month: Some(month),
            day: Some(day),
        })
    }

    pub fn month(year: i32, month: u32) -> Option<PartialDate> {
        if !(1..=12).contains(&month) {
            return None;
        }
        Some(PartialDate {
            year,
            month: Some(month),
            day: None,
        })
    }

    pub fn year(year: i32) -> PartialDate {
        PartialDate {
            year,
            month: None,
            day: None,
        }
    }

    pub fn from_date(d: NaiveDate) -> PartialDate {
        PartialDate {
            year: d.year(),
            month: Some(d.month()),
            day: Some(d.day()),
        }
    }

    pub fn granularity(&self) -> Granularity {
        match (self.month, self.day) {
            (Some(_), Some(_)) => Granularity::Day,
            (Some(_), None) => Granularity::Month,
            _ => Granularity::Year,
        }
    }

    /// Earliest instant consistent with the granularity.
    pub fn earliest(&self) -> NaiveDate {
        let month = self.month.unwrap_or(1);
        let day = self.day.unwrap_or(1);
        NaiveDate::from_ymd_opt(self.year, month, day).expect("validated on construction")
    }

    /// Latest instant consistent with the granularity.
    pub fn latest(&self) -> NaiveDate {
        match (self.month, self.day) {
            (Some(m), Some(d)) => NaiveDate::from_ymd_opt(self.year, m, d).unwrap(),
            (Some(m), None) => last_day_of_month(self.year, m),
            _ => NaiveDate::from_ymd_opt(self.year, 12, 31).unwrap(),
        }
    }
}

fn last_day_of_month(year: i32, month: u32) -> NaiveDate {
    let first = NaiveDate::from_ymd_opt(year, month, 1).expect("valid month");
    first
        .checked_add_months(Months::new(1))
        .unwrap()
        .pred_opt()
        .unwrap()
}

/// A detected temporal expression with offsets into the scanned text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimexSpan {
    pub start: usize,
    pub end: usize,
    pub surface: String,
    pub normalized: PartialDate,
}

/// `[anchor - length_months, anchor]`, inclusive on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeWindow {
    pub anchor: NaiveDate,
    pub length_months: u32,
}

impl TimeWindow {
    pub fn new(anchor: NaiveDate, length_months: u32) -> TimeWindow {
        assert!(length_months >= 1, "window length must be at least 1 month");
        TimeWindow {
            anchor,
            length_months,
        }
    }

    /// Window start; month subtraction clamps the day of month.
    pub fn start(&self) -> NaiveDate {
        self.anchor
            .checked_sub_months(Months::new(self.length_months))
            .expect("window start in range")
    }
}

/// Interval-overlap membership: the timex interval implied by its granularity
/// must intersect the window.
pub fn within_window(t: &TimexSpan, w: &TimeWindow) -> bool {
    date_within_window(&t.normalized, w)
}

pub fn date_within_window(d: &PartialDate, w: &TimeWindow) -> bool {
    d.latest() >= w.start() && d.earliest() <= w.anchor
}

/// Documents dated within `length_months` of the patient's last report.
pub fn recent_documents(record: &PatientRecord, length_months: u32) -> Vec<&Document> {
    let window = TimeWindow::new(record.now(), length_months);
    record
        .documents
        .iter()
        .filter(|d| d.record_date >= window.start() && d.record_date <= window.anchor)
        .collect()
}

struct TimexPatterns {
    iso: Regex,
    mdy_slash: Regex,
    month_day_year: Regex,
    month_year: Regex,
    month_slash_year: Regex,
    last_month: Regex,
    units_ago: Regex,
    yesterday: Regex,
    bare_year: Regex,
}

const MONTHS: &str = "january|february|march|april|june|july|august|september|october|november|december|sept|jan|feb|mar|apr|may|jun|jul|aug|sep|oct|nov|dec";

fn patterns() -> &'static TimexPatterns {
    static PATTERNS: OnceLock<TimexPatterns> = OnceLock::new();
    PATTERNS.get_or_init(|| TimexPatterns {
        iso: Regex::new(r"\b(\d{4})-(\d{2})-(\d{2})\b").unwrap(),
        mdy_slash: Regex::new(r"\b(\d{1,2})/(\d{1,2})/(\d{4})\b").unwrap(),
        month_day_year: Regex::new(&format!(
            r"(?i)\b({MONTHS})\.?\s+(\d{{1,2}})(?:st|nd|rd|th)?\s*,?\s+(\d{{4}})\b"
        ))
        .unwrap(),
        month_year: Regex::new(&format!(r"(?i)\b({MONTHS})\.?\s+(?:of\s+)?(\d{{4}})\b")).unwrap(),
        month_slash_year: Regex::new(r"\b(\d{1,2})/(\d{4})\b").unwrap(),
        last_month: Regex::new(&format!(r"(?i)\blast\s+({MONTHS})\b")).unwrap(),
        units_ago: Regex::new(r"(?i)\b(\d{1,3})\s+(day|week|month|year)s?\s+ago\b").unwrap(),
        yesterday: Regex::new(r"(?i)\byesterday\b").unwrap(),
        bare_year: Regex::new(r"\b(\d{4})\b").unwrap(),
    })
}

fn month_number(name: &str) -> Option<u32> {
    let lower = name.to_lowercase();
    let idx = [
        "jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov", "dec",
    ]
    .iter()
    .position(|m| lower.starts_with(m))?;
    Some(idx as u32 + 1)
}

struct Candidate {
    start: usize,
    end: usize,
    normalized: PartialDate,
}

/// Extracts and normalizes temporal expressions from `text` against the
/// `reference` date. Longer matches win over shorter overlapping ones.
pub fn extract_timexes(text: &str, reference: NaiveDate) -> Vec<TimexSpan> {
    let p = patterns();
    let mut candidates: Vec<Candidate> = Vec::new();

    for m in p.iso.captures_iter(text) {
        let whole = m.get(0).unwrap();
        let (y, mo, d) = (cap_i32(&m, 1), cap_u32(&m, 2), cap_u32(&m, 3));
        if let Some(date) = PartialDate::day(y, mo, d) {
            candidates.push(Candidate {
                start: whole.start(),
                end: whole.end(),
                normalized: date,
            });
        }
    }
    for m in p.mdy_slash.captures_iter(text) {
        let whole = m.get(0).unwrap();
        let (mo, d, y) = (cap_u32(&m, 1), cap_u32(&m, 2), cap_i32(&m, 3));
        if let Some(date) = PartialDate::day(y, mo, d) {
            candidates.push(Candidate {
                start: whole.start(),
                end: whole.end(),
                normalized: date,
            });
        }
    }
    for m in p.month_day_year.captures_iter(text) {
        let whole = m.get(0).unwrap();
        let month = month_number(m.get(1).unwrap().as_str());
        let (d, y) = (cap_u32(&m, 2), cap_i32(&m, 3));
        if let Some(date) = month.and_then(|mo| PartialDate::day(y, mo, d)) {
            candidates.push(Candidate {
                start: whole.start(),
                end: whole.end(),
                normalized: date,
            });
        }
    }
    for m in p.month_year.captures_iter(text) {
        let whole = m.get(0).unwrap();
        let month = month_number(m.get(1).unwrap().as_str());
        let y = cap_i32(&m, 2);
        if let Some(date) = month.and_then(|mo| PartialDate::month(y, mo)) {
            candidates.push(Candidate {
                start: whole.start(),
                end: whole.end(),
                normalized: date,
            });
        }
    }
    for m in p.month_slash_year.captures_iter(text) {
        let whole = m.get(0).unwrap();
        let (mo, y) = (cap_u32(&m, 1), cap_i32(&m, 2));
        if !plausible_year(y) {
            continue;
        }
        if let Some(date) = PartialDate::month(y, mo) {
            candidates.push(Candidate {
                start: whole.start(),
                end: whole.end(),
                normalized: date,
            });
        }
    }
    for m in p.last_month.captures_iter(text) {
        let whole = m.get(0).unwrap();
        if let Some(mo) = month_number(m.get(1).unwrap().as_str()) {
            // Most recent strictly-past occurrence of that month.
            let year = if mo < reference.month() {
                reference.year()
            } else {
                reference.year() - 1
            };
            candidates.push(Candidate {
                start: whole.start(),
                end: whole.end(),
                normalized: PartialDate::month(year, mo).unwrap(),
            });
        }
    }
    for m in p.units_ago.captures_iter(text) {
        let whole = m.get(0).unwrap();
        let n: u64 = m.get(1).unwrap().as_str().parse().unwrap_or(0);
        let unit = m.get(2).unwrap().as_str().to_lowercase();
        let normalized = match unit.as_str() {
            "day" => reference.checked_sub_days(Days::new(n)),
            "week" => reference.checked_sub_days(Days::new(7 * n)),
            "month" => reference.checked_sub_months(Months::new(n as u32)),
            "year" => reference.checked_sub_months(Months::new(12 * n as u32)),
            _ => None,
        };
        if let Some(date) = normalized {
            candidates.push(Candidate {
                start: whole.start(),
                end: whole.end(),
                normalized: PartialDate::from_date(date),
            });
        }
    }
    for m in p.yesterday.find_iter(text) {
        if let Some(date) = reference.checked_sub_days(Days::new(1)) {
            candidates.push(Candidate {
                start: m.start(),
                end: m.end(),
                normalized: PartialDate::from_date(date),
            });
        }
    }
    for m in p.bare_year.captures_iter(text) {
        let whole = m.get(0).unwrap();
        let y = cap_i32(&m, 1);
        if !plausible_year(y) || numeric_cluster(text, whole.start(), whole.end()) {
            continue;
        }
        candidates.push(Candidate {
            start: whole.start(),
            end: whole.end(),
            normalized: PartialDate::year(y),
        });
    }

    // Resolve overlaps: earlier start wins, then longer span.
    candidates.sort_by(|a, b| a.start.cmp(&b.start).then(b.end.cmp(&a.end)));
    let mut spans: Vec<TimexSpan> = Vec::new();
    let mut covered_until = 0usize;
    for c in candidates {
        if c.start < covered_until {
            continue;
        }
        covered_until = c.end;
        spans.push(TimexSpan {
            start: c.start,
            end: c.end,
            surface: text[c.start..c.end].to_string(),
            normalized: c.normalized,
        });
    }
    spans
}

fn cap_u32(c: &regex::Captures<'_>, i: usize) -> u32 {
    c.get(i).unwrap().as_str().parse().unwrap_or(0)
}

fn cap_i32(c: &regex::Captures<'_>, i: usize) -> i32 {
    c.get(i).unwrap().as_str().parse().unwrap_or(0)
}

fn plausible_year(y: i32) -> bool {
    (1900..=2199).contains(&y)
}

/// True when the 4-digit run sits inside a larger numeric cluster such as
/// "1234.5" or "2093-06", which disqualifies it as a bare year.
fn numeric_cluster(text: &str, start: usize, end: usize) -> bool {
    let bytes = text.as_bytes();
    if start >= 2 {
        let sep = bytes[start - 1];
        if matches!(sep, b'.' | b'-' | b'/') && bytes[start - 2].is_ascii_digit() {
            return true;
        }
    }
    if end + 1 < bytes.len() {
        let sep = bytes[end];
        if matches!(sep, b'.' | b'-' | b'/') && bytes[end + 1].is_ascii_digit() {
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn single(text: &str, reference: &str) -> TimexSpan {
        let spans = extract_timexes(text, date(reference));
        assert_eq!(spans.len(), 1, "expected one timex in {text:?}: {spans:?}");
        spans.into_iter().next().unwrap()
    }

    #[test]
    fn last_june_in_december() {
        let t = single("she was seen last June for follow-up", "2018-12-15");
        assert_eq!(t.normalized, PartialDate::month(2018, 6).unwrap());
        assert_eq!(t.normalized.granularity(), Granularity::Month);
        assert_eq!(t.surface, "last June");
    }

    #[test]
    fn last_month_is_strictly_past() {
        let t = single("last June", "2018-06-15");
        assert_eq!(t.normalized, PartialDate::month(2017, 6).unwrap());
    }

    #[test]
    fn month_year_form() {
        let t = single("gentleman who had an MI in June 2017", "2017-12-20");
        assert_eq!(t.normalized, PartialDate::month(2017, 6).unwrap());
    }

    #[test]
    fn months_ago_day_granularity() {
        let t = single("event 3 months ago", "2093-06-15");
        assert_eq!(t.normalized, PartialDate::day(2093, 3, 15).unwrap());
        assert_eq!(t.normalized.granularity(), Granularity::Day);
    }

    #[test]
    fn month_subtraction_clamps_day() {
        let t = single("1 month ago", "2093-03-31");
        assert_eq!(t.normalized, PartialDate::day(2093, 2, 28).unwrap());
    }

    #[test]
    fn absolute_forms() {
        assert_eq!(
            single("on 06/15/2093", "2093-07-01").normalized,
            PartialDate::day(2093, 6, 15).unwrap()
        );
        assert_eq!(
            single("on 2093-06-15", "2093-07-01").normalized,
            PartialDate::day(2093, 6, 15).unwrap()
        );
        assert_eq!(
            single("on June 15, 2017", "2018-01-01").normalized,
            PartialDate::day(2017, 6, 15).unwrap()
        );
        assert_eq!(
            single("in 6/2017", "2018-01-01").normalized,
            PartialDate::month(2017, 6).unwrap()
        );
        assert_eq!(
            single("back in 2016", "2018-01-01").normalized,
            PartialDate::year(2016)
        );
    }

    #[test]
    fn yesterday_resolves() {
        let t = single("admitted yesterday", "2093-06-15");
        assert_eq!(t.normalized, PartialDate::day(2093, 6, 14).unwrap());
    }

    #[test]
    fn invalid_dates_yield_nothing() {
        assert!(extract_timexes("on 13/45/2017", date("2018-01-01")).is_empty());
        assert!(extract_timexes("no dates here", date("2018-01-01")).is_empty());
        // Two-digit years and decimals are not years.
        assert!(extract_timexes("dose 2017.5 units", date("2018-01-01")).is_empty());
    }

    #[test]
    fn offsets_slice_to_surface() {
        let text = "MI in June 2017, again 3 months ago, seen 06/15/2093.";
        for t in extract_timexes(text, date("2093-06-15")) {
            assert_eq!(&text[t.start..t.end], t.surface);
        }
    }

    #[test]
    fn longest_overlapping_match_wins() {
        let spans = extract_timexes("June 15, 2017", date("2018-01-01"));
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].normalized, PartialDate::day(2017, 6, 15).unwrap());
    }

    #[test]
    fn window_overlap_cases() {
        let w = TimeWindow::new(date("2017-12-20"), 6);
        assert_eq!(w.start(), date("2017-06-20"));
        let june = TimexSpan {
            start: 0,
            end: 0,
            surface: String::new(),
            normalized: PartialDate::month(2017, 6).unwrap(),
        };
        assert!(within_window(&june, &w), "June 30 >= June 20");
        let y2016 = TimexSpan {
            normalized: PartialDate::year(2016),
            ..june.clone()
        };
        assert!(!within_window(&y2016, &w));
        let anchor_day = TimexSpan {
            normalized: PartialDate::from_date(w.anchor),
            ..june.clone()
        };
        assert!(within_window(&anchor_day, &TimeWindow::new(w.anchor, 1)));
    }

    #[test]
    fn window_membership_monotone_in_length() {
        let d = PartialDate::month(2017, 6).unwrap();
        let anchor = date("2017-12-20");
        let mut seen_true = false;
        for len in 1..=24 {
            let inside = date_within_window(&d, &TimeWindow::new(anchor, len));
            if seen_true {
                assert!(inside, "membership lost when window grew to {len}");
            }
            seen_true |= inside;
        }
        assert!(seen_true);
    }

    #[test]
    fn relative_forms_never_in_future() {
        let reference = date("2093-06-15");
        for text in ["last June", "last December", "2 weeks ago", "10 years ago"] {
            let t = single(text, "2093-06-15");
            assert!(t.normalized.earliest() <= reference, "{text} in the future");
            if text.starts_with("last") {
                assert!(t.normalized.latest() < reference);
            }
        }
    }

    #[test]
    fn recent_documents_filters_by_window() {
        use crate::corpus::{Document, SplitterConfig};
        let splitter = SplitterConfig::default();
        let mk = |id: &str, d: &str| Document::new(id, "p", date(d), "note", &splitter);
        let record = PatientRecord {
            patient_id: "p".into(),
            documents: vec![
                mk("a", "2093-03-15"),
                mk("b", "2093-05-15"),
                mk("c", "2093-06-15"),
            ],
            gold_labels: None,
        };
        let recent = recent_documents(&record, 2);
        let ids: Vec<&str> = recent.iter().map(|d| d.doc_id.as_str()).collect();
        assert_eq!(ids, vec!["b", "c"]);
        assert_eq!(recent_documents(&record, 48).len(), 3);
    }
}
