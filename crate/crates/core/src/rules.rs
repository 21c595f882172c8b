//! Polarity-tagged trigger rules over sentence tokens.
//!
//! The pattern mini-language is closed: literal tokens, alternation
//! `(a|b)`, character gaps `.{m,n}`, a token wildcard `*` (up to five
//! tokens), and named-set placeholders `{SET_NAME}` expanded at compile
//! time. Matching is case-insensitive and token-aligned; gaps measure raw
//! characters between adjacent matched tokens.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{classify_context, ContextCue};
use crate::corpus::{tokenize, Document, Label, PatientRecord, Sentence, Token};

/// Upper bound on tokens consumed by the `*` wildcard.
pub const WILDCARD_MAX_TOKENS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn as_str(&self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
        }
    }
}

/// One compiled pattern element.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Element {
    /// A fixed token sequence (one pattern word may tokenize to several).
    Literal(Vec<String>),
    /// Any one of several token sequences.
    Alternation(Vec<Vec<String>>),
    /// Raw-character gap between the two adjacent matched tokens.
    Gap { min: usize, max: usize },
    /// Zero to five arbitrary tokens.
    Wildcard,
}

#[derive(Debug, Clone)]
pub struct TriggerRule {
    pub id: String,
    pub polarity: Polarity,
    pub weight: f64,
    /// Matches from sensitive rules are discarded in negated, uncertain, or
    /// family contexts. Defaults to true for positive rules.
    pub negation_sensitive: bool,
    pub elements: Vec<Element>,
    pub pattern_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NamedSet {
    pub name: String,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleMatch {
    pub rule_id: String,
    pub polarity: Polarity,
    pub weight: f64,
    pub doc_id: String,
    pub sentence_index: usize,
    /// Byte span in the document text.
    pub start: usize,
    pub end: usize,
    /// Token span within the sentence.
    pub token_start: usize,
    pub token_end: usize,
    pub matched_text: String,
}

#[derive(Debug, Error)]
pub enum RuleError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed line {line} in {path}: {reason}")]
    MalformedLine {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("rule {rule_id}: unknown set name {set}")]
    UnknownSet { rule_id: String, set: String },
    #[error("rule {rule_id}: bad pattern: {reason}")]
    BadPattern { rule_id: String, reason: String },
    #[error("rule {rule_id}: weight must be finite")]
    BadWeight { rule_id: String },
    #[error("named set {0} is empty")]
    EmptySet(String),
}

/// An unparsed rule line.
#[derive(Debug, Clone)]
pub struct RuleFileEntry {
    pub id: String,
    pub polarity: Polarity,
    pub weight: f64,
    pub negation_sensitive: Option<bool>,
    pub pattern: String,
}

/// Compiled, immutable rule collection with a first-token dispatch index.
#[derive(Debug, Clone)]
pub struct RuleEngine {
    rules: Vec<TriggerRule>,
    /// first sentence token -> indices of rules that can start there
    dispatch: HashMap<String, Vec<usize>>,
}

impl RuleEngine {
    pub fn rules(&self) -> &[TriggerRule] {
        &self.rules
    }

    /// All match spans of every rule in one sentence, before context
    /// filtering. Spans are deduplicated per rule.
    pub fn scan_sentence(
        &self,
        raw_text: &str,
        sentence: &Sentence,
        doc_id: &str,
        sentence_index: usize,
    ) -> Vec<RuleMatch> {
        let tokens = &sentence.tokens;
        let mut matches = Vec::new();
        let mut tried: HashSet<(usize, usize)> = HashSet::new();
        for pos in 0..tokens.len() {
            let Some(rule_indices) = self.dispatch.get(tokens[pos].lower.as_str()) else {
                continue;
            };
            for &rule_idx in rule_indices {
                if !tried.insert((rule_idx, pos)) {
                    continue;
                }
                let rule = &self.rules[rule_idx];
                let mut ends = BTreeSet::new();
                collect_ends(&rule.elements, raw_text, tokens, pos, &mut ends);
                for end in ends {
                    let byte_start = tokens[pos].start;
                    let byte_end = tokens[end - 1].end;
                    matches.push(RuleMatch {
                        rule_id: rule.id.clone(),
                        polarity: rule.polarity,
                        weight: rule.weight,
                        doc_id: doc_id.to_string(),
                        sentence_index,
                        start: byte_start,
                        end: byte_end,
                        token_start: pos,
                        token_end: end,
                        matched_text: raw_text[byte_start..byte_end].to_string(),
                    });
                }
            }
        }
        matches
    }
}

fn collect_ends(
    elements: &[Element],
    raw_text: &str,
    tokens: &[Token],
    pos: usize,
    ends: &mut BTreeSet<usize>,
) {
    let Some((first, rest)) = elements.split_first() else {
        if pos > 0 {
            ends.insert(pos);
        }
        return;
    };
    match first {
        Element::Literal(seq) => {
            if seq_matches(seq, tokens, pos) {
                collect_ends(rest, raw_text, tokens, pos + seq.len(), ends);
            }
        }
        Element::Alternation(alternatives) => {
            for seq in alternatives {
                if seq_matches(seq, tokens, pos) {
                    collect_ends(rest, raw_text, tokens, pos + seq.len(), ends);
                }
            }
        }
        Element::Wildcard => {
            for skip in 0..=WILDCARD_MAX_TOKENS {
                if pos + skip > tokens.len() {
                    break;
                }
                collect_ends(rest, raw_text, tokens, pos + skip, ends);
            }
        }
        Element::Gap { min, max } => {
            // Compile validation guarantees a token element on both sides.
            let prev_end = tokens[pos - 1].end;
            for next in pos..tokens.len() {
                let gap_chars = raw_text[prev_end..tokens[next].start].chars().count();
                if gap_chars > *max {
                    break;
                }
                if gap_chars >= *min {
                    collect_ends(rest, raw_text, tokens, next, ends);
                }
            }
        }
    }
}

fn seq_matches(seq: &[String], tokens: &[Token], pos: usize) -> bool {
    pos + seq.len() <= tokens.len()
        && seq
            .iter()
            .enumerate()
            .all(|(k, w)| tokens[pos + k].lower == *w)
}

/// Compiles rule entries against the named sets.
pub fn compile_rules(
    entries: &[RuleFileEntry],
    sets: &[NamedSet],
) -> Result<RuleEngine, RuleError> {
    let set_index: BTreeMap<&str, &NamedSet> =
        sets.iter().map(|s| (s.name.as_str(), s)).collect();
    for set in sets {
        if set.members.is_empty() {
            return Err(RuleError::EmptySet(set.name.clone()));
        }
    }
    let mut rules = Vec::with_capacity(entries.len());
    let mut ids = HashSet::new();
    for entry in entries {
        if !ids.insert(entry.id.as_str()) {
            return Err(RuleError::BadPattern {
                rule_id: entry.id.clone(),
                reason: "duplicate rule id".to_string(),
            });
        }
        if !entry.weight.is_finite() {
            return Err(RuleError::BadWeight {
                rule_id: entry.id.clone(),
            });
        }
        let elements = parse_pattern(&entry.pattern, &set_index).map_err(|reason| {
            if let Some(set) = reason.strip_prefix("unknown set ") {
                RuleError::UnknownSet {
                    rule_id: entry.id.clone(),
                    set: set.to_string(),
                }
            } else {
                RuleError::BadPattern {
                    rule_id: entry.id.clone(),
                    reason,
                }
            }
        })?;
        let negation_sensitive = entry
            .negation_sensitive
            .unwrap_or(entry.polarity == Polarity::Positive);
        rules.push(TriggerRule {
            id: entry.id.clone(),
            polarity: entry.polarity,
            weight: entry.weight,
            negation_sensitive,
            elements,
            pattern_text: entry.pattern.clone(),
        });
    }

    let mut dispatch: HashMap<String, Vec<usize>> = HashMap::new();
    for (idx, rule) in rules.iter().enumerate() {
        for token in first_tokens(&rule.elements[0]) {
            dispatch.entry(token).or_default().push(idx);
        }
    }
    Ok(RuleEngine { rules, dispatch })
}

fn first_tokens(first: &Element) -> Vec<String> {
    match first {
        Element::Literal(seq) => vec![seq[0].clone()],
        Element::Alternation(alternatives) => {
            let mut tokens: Vec<String> = alternatives.iter().map(|s| s[0].clone()).collect();
            tokens.sort();
            tokens.dedup();
            tokens
        }
        _ => unreachable!("patterns start with a token element"),
    }
}

fn parse_pattern(
    pattern: &str,
    sets: &BTreeMap<&str, &NamedSet>,
) -> Result<Vec<Element>, String> {
    let mut elements = Vec::new();
    let chars: Vec<char> = pattern.chars().collect();
    let mut i = 0usize;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        if chars[i] == '(' {
            let close = find_from(&chars, i + 1, ')').ok_or("unbalanced parenthesis")?;
            let inner: String = chars[i + 1..close].iter().collect();
            let mut alternatives = Vec::new();
            for alt in inner.split('|') {
                let seq = to_token_seq(alt);
                if seq.is_empty() {
                    return Err(format!("empty alternative in ({inner})"));
                }
                alternatives.push(seq);
            }
            if alternatives.is_empty() {
                return Err("empty alternation".to_string());
            }
            elements.push(Element::Alternation(alternatives));
            i = close + 1;
        } else if chars[i] == '{' {
            let close = find_from(&chars, i + 1, '}').ok_or("unbalanced brace")?;
            let name: String = chars[i + 1..close].iter().collect();
            let set = sets
                .get(name.as_str())
                .ok_or(format!("unknown set {name}"))?;
            let alternatives: Vec<Vec<String>> = set
                .members
                .iter()
                .map(|m| to_token_seq(m))
                .filter(|seq| !seq.is_empty())
                .collect();
            if alternatives.is_empty() {
                return Err(format!("set {name} has no usable members"));
            }
            elements.push(Element::Alternation(alternatives));
            i = close + 1;
        } else if chars[i] == '*' && boundary(&chars, i + 1) {
            elements.push(Element::Wildcard);
            i += 1;
        } else if chars[i] == '.' && chars.get(i + 1) == Some(&'{') {
            let close = find_from(&chars, i + 2, '}').ok_or("unbalanced gap brace")?;
            let inner: String = chars[i + 2..close].iter().collect();
            let (min, max) = inner.split_once(',').ok_or("gap must be .{m,n}")?;
            let min: usize = min.trim().parse().map_err(|_| "bad gap minimum")?;
            let max: usize = max.trim().parse().map_err(|_| "bad gap maximum")?;
            if min > max {
                return Err(format!("gap minimum {min} above maximum {max}"));
            }
            elements.push(Element::Gap { min, max });
            i = close + 1;
        } else {
            let mut j = i;
            while j < chars.len() && !chars[j].is_whitespace() {
                j += 1;
            }
            let word: String = chars[i..j].iter().collect();
            let seq = to_token_seq(&word);
            if seq.is_empty() {
                return Err(format!("word {word:?} tokenizes to nothing"));
            }
            elements.push(Element::Literal(seq));
            i = j;
        }
    }
    if elements.is_empty() {
        return Err("empty pattern".to_string());
    }
    let is_token_elem =
        |e: &Element| matches!(e, Element::Literal(_) | Element::Alternation(_));
    if !is_token_elem(&elements[0]) || !is_token_elem(elements.last().unwrap()) {
        return Err("gaps and wildcards must sit between token elements".to_string());
    }
    for pair in elements.windows(2) {
        if !is_token_elem(&pair[0]) && !is_token_elem(&pair[1]) {
            return Err("adjacent gaps/wildcards are not allowed".to_string());
        }
    }
    Ok(elements)
}

fn boundary(chars: &[char], i: usize) -> bool {
    chars.get(i).map(|c| c.is_whitespace()).unwrap_or(true)
}

fn find_from(chars: &[char], start: usize, needle: char) -> Option<usize> {
    (start..chars.len()).find(|&k| chars[k] == needle)
}

fn to_token_seq(text: &str) -> Vec<String> {
    tokenize(text).into_iter().map(|t| t.lower).collect()
}

/// Parses `<id>\t<polarity>\t<weight>\t<negation_sensitive>\t<pattern>` lines.
pub fn parse_rule_file(text: &str, source_name: &str) -> Result<Vec<RuleFileEntry>, RuleError> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(RuleError::MalformedLine {
                path: source_name.to_string(),
                line: line_no,
                reason: format!("expected 5 tab-separated fields, got {}", fields.len()),
            });
        }
        let polarity = match fields[1] {
            "positive" => Polarity::Positive,
            "negative" => Polarity::Negative,
            other => {
                return Err(RuleError::MalformedLine {
                    path: source_name.to_string(),
                    line: line_no,
                    reason: format!("unknown polarity {other:?}"),
                })
            }
        };
        let weight: f64 = fields[2].parse().map_err(|_| RuleError::MalformedLine {
            path: source_name.to_string(),
            line: line_no,
            reason: format!("bad weight {:?}", fields[2]),
        })?;
        let negation_sensitive = match fields[3] {
            "true" => Some(true),
            "false" => Some(false),
            "default" => None,
            other => {
                return Err(RuleError::MalformedLine {
                    path: source_name.to_string(),
                    line: line_no,
                    reason: format!("bad negation_sensitive {other:?}"),
                })
            }
        };
        entries.push(RuleFileEntry {
            id: fields[0].to_string(),
            polarity,
            weight,
            negation_sensitive,
            pattern: fields[4].to_string(),
        });
    }
    Ok(entries)
}

/// Parses `<NAME>\t<member1>,<member2>,...` lines; members are lowercased.
pub fn parse_set_file(text: &str, source_name: &str) -> Result<Vec<NamedSet>, RuleError> {
    let mut sets = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, members) = line.split_once('\t').ok_or(RuleError::MalformedLine {
            path: source_name.to_string(),
            line: i + 1,
            reason: "expected `<NAME>\\t<members>`".to_string(),
        })?;
        let members: Vec<String> = members
            .split(',')
            .map(|m| m.trim().to_lowercase())
            .filter(|m| !m.is_empty())
            .collect();
        if members.is_empty() {
            return Err(RuleError::EmptySet(name.to_string()));
        }
        sets.push(NamedSet {
            name: name.to_string(),
            members,
        });
    }
    Ok(sets)
}

pub fn load_rule_file(path: &Path) -> Result<Vec<RuleFileEntry>, RuleError> {
    let text = std::fs::read_to_string(path).map_err(|e| RuleError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_rule_file(&text, &path.display().to_string())
}

pub fn load_set_file(path: &Path) -> Result<Vec<NamedSet>, RuleError> {
    let text = std::fs::read_to_string(path).map_err(|e| RuleError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_set_file(&text, &path.display().to_string())
}

/// Scans every sentence of every document; matches from negation-sensitive
/// rules are discarded when their span is negated, uncertain, or
/// family-scoped.
pub fn scan_patient(
    engine: &RuleEngine,
    record: &PatientRecord,
    cues: &[ContextCue],
) -> Vec<RuleMatch> {
    let mut all = Vec::new();
    for doc in &record.documents {
        all.extend(scan_document(engine, doc, cues));
    }
    all
}

pub fn scan_document(engine: &RuleEngine, doc: &Document, cues: &[ContextCue]) -> Vec<RuleMatch> {
    let mut kept = Vec::new();
    for (sentence_index, sentence) in doc.sentences.iter().enumerate() {
        for m in engine.scan_sentence(&doc.raw_text, sentence, &doc.doc_id, sentence_index) {
            let sensitive = engine
                .rules
                .iter()
                .find(|r| r.id == m.rule_id)
                .map(|r| r.negation_sensitive)
                .unwrap_or(false);
            if sensitive {
                let ctx = classify_context(sentence, m.token_start..m.token_end, cues)
                    .expect("match span lies within its sentence");
                if !ctx.affirmed() {
                    continue;
                }
            }
            kept.push(m);
        }
    }
    kept
}

/// Sums positive weights minus negative weights; no matches fall back to the
/// default class, and a score exactly on the threshold does too.
pub fn weighted_decision(
    matches: &[RuleMatch],
    default_met: bool,
    threshold: f64,
) -> (Label, f64) {
    let default = if default_met { Label::Met } else { Label::NotMet };
    if matches.is_empty() {
        return (default, 0.0);
    }
    let score: f64 = matches
        .iter()
        .map(|m| match m.polarity {
            Polarity::Positive => m.weight,
            Polarity::Negative => -m.weight,
        })
        .sum();
    let label = if score > threshold {
        Label::Met
    } else if score < threshold {
        Label::NotMet
    } else {
        default
    };
    (label, score)
}

/// Audit dump: `<patient>\t<criterion>\t<rule_id>\t<polarity>\t<doc>\t<offset>\t<text>`.
pub fn write_match_dump(
    out: &mut dyn Write,
    patient_id: &str,
    criterion_id: &str,
    matches: &[RuleMatch],
) -> std::io::Result<()> {
    for m in matches {
        writeln!(
            out,
            "{patient_id}\t{criterion_id}\t{}\t{}\t{}\t{}\t{}",
            m.rule_id,
            m.polarity.as_str(),
            m.doc_id,
            m.start,
            m.matched_text
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::parse_cues;
    use crate::corpus::{Document, SplitterConfig};
    use chrono::NaiveDate;

    fn entry(id: &str, polarity: Polarity, pattern: &str) -> RuleFileEntry {
        RuleFileEntry {
            id: id.to_string(),
            polarity,
            weight: 1.0,
            negation_sensitive: None,
            pattern: pattern.to_string(),
        }
    }

    fn drug_set(n: usize) -> NamedSet {
        NamedSet {
            name: "DRUG_NAMES".to_string(),
            members: (0..n).map(|i| format!("drug{i}")).collect(),
        }
    }

    fn doc(text: &str) -> Document {
        Document::new(
            "d1",
            "p1",
            NaiveDate::from_ymd_opt(2093, 1, 1).unwrap(),
            text,
            &SplitterConfig::default(),
        )
    }

    fn default_cues() -> Vec<ContextCue> {
        parse_cues(
            "negation\tpre\t6\tdenies\nnegation\tpre\t6\tno\nfamily\tpre\t6\tbrother\n",
            "test",
        )
        .unwrap()
    }

    fn spans(engine: &RuleEngine, text: &str) -> Vec<(String, usize, usize)> {
        let d = doc(text);
        let mut out = Vec::new();
        for (i, s) in d.sentences.iter().enumerate() {
            for m in engine.scan_sentence(&d.raw_text, s, &d.doc_id, i) {
                out.push((m.rule_id, m.token_start, m.token_end));
            }
        }
        out
    }

    #[test]
    fn placeholder_expands_to_set_size() {
        let set = drug_set(32);
        let engine = compile_rules(
            &[entry("r1", Polarity::Positive, "uses {DRUG_NAMES}")],
            &[set],
        )
        .unwrap();
        let rule = &engine.rules()[0];
        match &rule.elements[1] {
            Element::Alternation(alts) => assert_eq!(alts.len(), 32),
            other => panic!("expected alternation, got {other:?}"),
        }
    }

    #[test]
    fn wildcard_matches_up_to_five_tokens() {
        let engine = compile_rules(
            &[entry("r1", Polarity::Negative, "no alcohol in * (years|yrs)")],
            &[],
        )
        .unwrap();
        assert_eq!(spans(&engine, "no alcohol in 3 years").len(), 1);
        assert_eq!(spans(&engine, "no alcohol in more than 3 yrs").len(), 1);
        assert_eq!(
            spans(&engine, "no alcohol in a b c d e f years").len(),
            0,
            "six tokens exceed the wildcard bound"
        );
    }

    #[test]
    fn char_gap_bounds_raw_distance() {
        let engine = compile_rules(
            &[entry("r1", Polarity::Negative, "clean .{1,10} (alcohol|etoh)")],
            &[],
        )
        .unwrap();
        assert_eq!(spans(&engine, "clean from etoh").len(), 1);
        assert_eq!(
            spans(&engine, "clean for many long months from alcohol").len(),
            0,
            "gap above 10 chars"
        );
    }

    #[test]
    fn unknown_set_is_compile_error() {
        let err = compile_rules(&[entry("r9", Polarity::Positive, "uses {MISSING}")], &[])
            .unwrap_err();
        match err {
            RuleError::UnknownSet { rule_id, set } => {
                assert_eq!(rule_id, "r9");
                assert_eq!(set, "MISSING");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn malformed_patterns_rejected() {
        for bad in ["", "* alcohol", "alcohol *", "a .{3,1} b", "a ( b", "a * .{1,2} b"] {
            assert!(
                compile_rules(&[entry("r", Polarity::Positive, bad)], &[]).is_err(),
                "pattern {bad:?} should not compile"
            );
        }
    }

    #[test]
    fn positive_match_found() {
        let engine =
            compile_rules(&[entry("alc1", Polarity::Positive, "drinks heavily")], &[]).unwrap();
        let d = doc("patient drinks heavily");
        let matches = scan_document(&engine, &d, &default_cues());
        assert_eq!(matches.len(), 1);
        assert_eq!(matches[0].matched_text, "drinks heavily");
    }

    #[test]
    fn negated_positive_match_discarded() {
        let engine =
            compile_rules(&[entry("alc2", Polarity::Positive, "alcohol abuse")], &[]).unwrap();
        let d = doc("denies alcohol abuse");
        assert!(scan_document(&engine, &d, &default_cues()).is_empty());
        // Negative rules are not filtered.
        let neg = compile_rules(&[entry("n1", Polarity::Negative, "denies alcohol abuse")], &[])
            .unwrap();
        assert_eq!(scan_document(&neg, &d, &default_cues()).len(), 1);
    }

    #[test]
    fn family_context_discards_sensitive_match() {
        let engine = compile_rules(
            &[entry("d1", Polarity::Positive, "used {DRUG_NAMES}")],
            &[NamedSet {
                name: "DRUG_NAMES".into(),
                members: vec!["cocaine".into(), "heroin".into()],
            }],
        )
        .unwrap();
        let d = doc("brother used cocaine");
        assert!(scan_document(&engine, &d, &default_cues()).is_empty());
        let d2 = doc("patient used cocaine");
        assert_eq!(scan_document(&engine, &d2, &default_cues()).len(), 1);
    }

    #[test]
    fn case_insensitive_token_aligned() {
        let engine =
            compile_rules(&[entry("r", Polarity::Positive, "etoh abuse")], &[]).unwrap();
        assert_eq!(spans(&engine, "EtOH ABUSE noted").len(), 1);
        assert_eq!(spans(&engine, "heavyetoh abuse").len(), 0);
    }

    #[test]
    fn multi_word_set_members_match() {
        let engine = compile_rules(
            &[entry("r", Polarity::Positive, "takes {MEDS}")],
            &[NamedSet {
                name: "MEDS".into(),
                members: vec!["isosorbide mononitrate".into(), "aspirin".into()],
            }],
        )
        .unwrap();
        assert_eq!(spans(&engine, "takes isosorbide mononitrate daily").len(), 1);
        assert_eq!(spans(&engine, "takes aspirin").len(), 1);
    }

    #[test]
    fn weighted_decision_contract() {
        let mk = |polarity, weight| RuleMatch {
            rule_id: "r".into(),
            polarity,
            weight,
            doc_id: "d".into(),
            sentence_index: 0,
            start: 0,
            end: 1,
            token_start: 0,
            token_end: 1,
            matched_text: "x".into(),
        };
        assert_eq!(weighted_decision(&[], true, 0.0).0, Label::Met);
        assert_eq!(weighted_decision(&[], false, 0.0).0, Label::NotMet);
        assert_eq!(
            weighted_decision(&[mk(Polarity::Negative, 2.0)], true, 0.0).0,
            Label::NotMet
        );
        // Tie goes to the default.
        let tie = [mk(Polarity::Positive, 1.0), mk(Polarity::Negative, 1.0)];
        assert_eq!(weighted_decision(&tie, true, 0.0).0, Label::Met);
        assert_eq!(weighted_decision(&tie, false, 0.0).0, Label::NotMet);
    }

    #[test]
    fn weighted_decision_scale_invariant() {
        let mk = |polarity, weight| RuleMatch {
            rule_id: "r".into(),
            polarity,
            weight,
            doc_id: "d".into(),
            sentence_index: 0,
            start: 0,
            end: 1,
            token_start: 0,
            token_end: 1,
            matched_text: "x".into(),
        };
        let matches = [
            mk(Polarity::Positive, 2.0),
            mk(Polarity::Negative, 0.5),
            mk(Polarity::Positive, 1.0),
        ];
        let scaled: Vec<RuleMatch> = matches
            .iter()
            .cloned()
            .map(|mut m| {
                m.weight *= 3.0;
                m
            })
            .collect();
        assert_eq!(
            weighted_decision(&matches, false, 1.0).0,
            weighted_decision(&scaled, false, 3.0).0
        );
        // Permutation invariant.
        let mut reversed = matches.to_vec();
        reversed.reverse();
        assert_eq!(
            weighted_decision(&matches, false, 1.0).0,
            weighted_decision(&reversed, false, 1.0).0
        );
    }

    #[test]
    fn rule_file_round_trip() {
        let text = "alc1\tpositive\t1.0\tdefault\tdrinks heavily\nalc2\tnegative\t2.5\tfalse\tno alcohol in * (years|yrs)\n";
        let entries = parse_rule_file(text, "test").unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[1].weight, 2.5);
        let engine = compile_rules(&entries, &[]).unwrap();
        assert!(engine.rules()[0].negation_sensitive);
        assert!(!engine.rules()[1].negation_sensitive);
    }

    #[test]
    fn set_file_parses_and_lowercases() {
        let sets = parse_set_file("DRUG_NAMES\tMarijuana, cocaine ,heroin\n", "test").unwrap();
        assert_eq!(sets[0].members, vec!["marijuana", "cocaine", "heroin"]);
        assert!(parse_set_file("EMPTY\t ,\n", "test").is_err());
    }
}
