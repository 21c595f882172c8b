//! Patient note ingestion: files to records, records to documents,
//! documents to sentences and tokens.
//!
//! Input layout: one UTF-8 `<patient_id>.txt` file per patient, blocks
//! separated by a line of 20+ asterisks, each block starting with a
//! `Record date: YYYY-MM-DD` header line.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Binary criterion status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Met,
    NotMet,
}

impl Label {
    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Met => "met",
            Label::NotMet => "notmet",
        }
    }

    pub fn parse(s: &str) -> Option<Label> {
        match s.trim() {
            "met" => Some(Label::Met),
            "notmet" | "not met" | "not-met" => Some(Label::NotMet),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A single token with byte offsets into the text it was cut from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    /// Lowercased shadow used for case-insensitive matching.
    pub lower: String,
    pub start: usize,
    pub end: usize,
}

/// A sentence span within a document, with its tokens (document offsets).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub start: usize,
    pub end: usize,
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn text<'a>(&self, raw: &'a str) -> &'a str {
        &raw[self.start..self.end]
    }
}

/// One dated clinical note.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub patient_id: String,
    pub record_date: NaiveDate,
    pub raw_text: String,
    pub sentences: Vec<Sentence>,
}

impl Document {
    /// Builds a document, running sentence splitting and tokenization.
    pub fn new(
        doc_id: &str,
        patient_id: &str,
        record_date: NaiveDate,
        raw_text: &str,
        splitter: &SplitterConfig,
    ) -> Document {
        let mut sentences = split_sentences_with(raw_text, splitter);
        for sentence in &mut sentences {
            let mut tokens = tokenize(&raw_text[sentence.start..sentence.end]);
            for t in &mut tokens {
                t.start += sentence.start;
                t.end += sentence.start;
            }
            sentence.tokens = tokens;
        }
        Document {
            doc_id: doc_id.to_string(),
            patient_id: patient_id.to_string(),
            record_date,
            raw_text: raw_text.to_string(),
            sentences,
        }
    }
}

/// A patient's notes, ordered by record date, plus optional gold labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub documents: Vec<Document>,
    pub gold_labels: Option<BTreeMap<String, Label>>,
}

impl PatientRecord {
    /// The patient's "now": the date of the last report.
    pub fn now(&self) -> NaiveDate {
        patient_now(self)
    }

    /// All documents concatenated, for patient-level classification.
    pub fn full_text(&self) -> String {
        let mut out = String::new();
        for doc in &self.documents {
            if !out.is_empty() {
                out.push_str("\n\n");
            }
            out.push_str(&doc.raw_text);
        }
        out
    }
}

/// Returns the max record date over the patient's documents.
pub fn patient_now(record: &PatientRecord) -> NaiveDate {
    record
        .documents
        .iter()
        .map(|d| d.record_date)
        .max()
        .expect("patient record has at least one document")
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus root {0} is not a directory")]
    NotADirectory(String),
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// One rejected block or file, in the `INGEST-ERR` diagnostic format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestDiagnostic {
    pub file: String,
    pub block_index: usize,
    pub reason: String,
}

impl fmt::Display for IngestDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "INGEST-ERR {} {} {}", self.file, self.block_index, self.reason)
    }
}

#[derive(Debug, Default)]
pub struct IngestReport {
    pub records: Vec<PatientRecord>,
    pub diagnostics: Vec<IngestDiagnostic>,
}

/// Reads every `*.txt` patient file under `root` into `PatientRecord`s.
///
/// Blocks missing a parseable `Record date:` header are rejected with a
/// diagnostic; files yielding no valid document reject the whole patient.
pub fn ingest_corpus(root: &Path, splitter: &SplitterConfig) -> Result<IngestReport, CorpusError> {
    if !root.is_dir() {
        return Err(CorpusError::NotADirectory(root.display().to_string()));
    }
    let mut files: Vec<_> = std::fs::read_dir(root)
        .map_err(|e| CorpusError::Io {
            path: root.display().to_string(),
            source: e,
        })?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().and_then(|s| s.to_str()) == Some("txt"))
        .collect();
    files.sort();

    let mut report = IngestReport::default();
    for path in files {
        let file_name = path
            .file_name()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let patient_id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) => {
                report.diagnostics.push(IngestDiagnostic {
                    file: file_name,
                    block_index: 0,
                    reason: format!("unreadable: {e}"),
                });
                continue;
            }
        };
        match parse_patient_file(&patient_id, &file_name, &text, splitter) {
            (Some(record), mut diags) => {
                report.records.push(record);
                report.diagnostics.append(&mut diags);
            }
            (None, mut diags) => report.diagnostics.append(&mut diags),
        }
    }
    Ok(report)
}

/// Parses one patient file already read into memory.
pub fn parse_patient_file(
    patient_id: &str,
    file_name: &str,
    text: &str,
    splitter: &SplitterConfig,
) -> (Option<PatientRecord>, Vec<IngestDiagnostic>) {
    let mut diagnostics = Vec::new();
    let mut documents = Vec::new();
    for (block_index, block) in split_blocks(text).into_iter().enumerate() {
        if block.trim().is_empty() {
            continue;
        }
        match parse_record_date(block) {
            Some(date) => {
                let doc_id = format!("{patient_id}-{:02}", block_index + 1);
                documents.push(Document::new(&doc_id, patient_id, date, block, splitter));
            }
            None => diagnostics.push(IngestDiagnostic {
                file: file_name.to_string(),
                block_index,
                reason: "missing or unparseable `Record date:` header".to_string(),
            }),
        }
    }
    if documents.is_empty() {
        diagnostics.push(IngestDiagnostic {
            file: file_name.to_string(),
            block_index: 0,
            reason: "no valid documents; patient rejected".to_string(),
        });
        return (None, diagnostics);
    }
    // Stable sort keeps file order for same-date ties.
    documents.sort_by_key(|d| d.record_date);
    let record = PatientRecord {
        patient_id: patient_id.to_string(),
        documents,
        gold_labels: None,
    };
    (Some(record), diagnostics)
}

fn split_blocks(text: &str) -> Vec<&str> {
    let mut blocks = Vec::new();
    let mut block_start = 0usize;
    let mut pos = 0usize;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim_end_matches(['\n', '\r']);
        let is_delimiter =
            trimmed.len() >= 20 && trimmed.bytes().all(|b| b == b'*') && !trimmed.is_empty();
        if is_delimiter {
            blocks.push(&text[block_start..pos]);
            block_start = pos + line.len();
        }
        pos += line.len();
    }
    blocks.push(&text[block_start..]);
    blocks
}

fn parse_record_date(block: &str) -> Option<NaiveDate> {
    let first_line = block.lines().find(|l| !l.trim().is_empty())?;
    let rest = first_line.trim().strip_prefix("Record date:")?;
    NaiveDate::parse_from_str(rest.trim(), "%Y-%m-%d").ok()
}

/// Sentence splitter knobs. Deterministic, rule-based.
#[derive(Debug, Clone)]
pub struct SplitterConfig {
    /// Lowercased abbreviations (with trailing period) that never end a sentence.
    pub abbreviations: HashSet<String>,
    /// A newline-terminated line with at most this many tokens is a list item
    /// and closes its sentence.
    pub max_list_line_tokens: usize,
    /// Header candidate lines have at most this many tokens.
    pub max_header_tokens: usize,
}

impl Default for SplitterConfig {
    fn default() -> Self {
        let abbreviations = [
            "dr.", "mr.", "mrs.", "ms.", "prof.", "st.", "jr.", "sr.", "vs.", "e.g.", "i.e.",
            "mg.", "ml.", "mcg.", "no.", "dx.", "hx.", "fx.", "approx.",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        SplitterConfig {
            abbreviations,
            max_list_line_tokens: 6,
            max_header_tokens: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LineKind {
    Blank,
    /// Few tokens, colon-terminated or fully uppercase: section-header shaped.
    Header,
    /// Short newline-terminated line, treated as a list item.
    Short,
    Prose,
}

fn classify_line(line: &str, config: &SplitterConfig) -> LineKind {
    let trimmed = line.trim();
    if trimmed.is_empty() {
        return LineKind::Blank;
    }
    let n_tokens = tokenize(trimmed).len();
    if n_tokens <= config.max_header_tokens && is_header_shaped(trimmed) {
        return LineKind::Header;
    }
    if n_tokens <= config.max_list_line_tokens {
        return LineKind::Short;
    }
    LineKind::Prose
}

pub(crate) fn is_header_shaped(trimmed: &str) -> bool {
    if trimmed.ends_with(':') {
        return true;
    }
    let mut saw_letter = false;
    for c in trimmed.chars() {
        if c.is_alphabetic() {
            saw_letter = true;
            if c.is_lowercase() {
                return false;
            }
        }
    }
    saw_letter
}

/// Splits text into sentence spans using the default configuration.
pub fn split_sentences(text: &str) -> Vec<Sentence> {
    split_sentences_with(text, &SplitterConfig::default())
}

/// Splits text into sentence spans. Spans cover every non-whitespace byte,
/// never overlap, and are ordered by start offset.
pub fn split_sentences_with(text: &str, config: &SplitterConfig) -> Vec<Sentence> {
    // Line pass: group lines into segments, breaking around headers and
    // after blank/short lines.
    let mut lines: Vec<(usize, usize)> = Vec::new(); // (start, end) excluding newline
    let mut pos = 0usize;
    for line in text.split_inclusive('\n') {
        let content = line.trim_end_matches(['\n', '\r']);
        lines.push((pos, pos + content.len()));
        pos += line.len();
    }

    let kinds: Vec<LineKind> = lines
        .iter()
        .map(|&(s, e)| classify_line(&text[s..e], config))
        .collect();

    let mut segments: Vec<(usize, usize)> = Vec::new();
    let mut seg_start: Option<usize> = None;
    for (i, &(line_start, line_end)) in lines.iter().enumerate() {
        match kinds[i] {
            LineKind::Blank => {
                if let Some(s) = seg_start.take() {
                    segments.push((s, line_start));
                }
            }
            LineKind::Header => {
                if let Some(s) = seg_start.take() {
                    segments.push((s, line_start));
                }
                segments.push((line_start, line_end));
            }
            LineKind::Short => {
                let s = seg_start.take().unwrap_or(line_start);
                segments.push((s, line_end));
            }
            LineKind::Prose => {
                if seg_start.is_none() {
                    seg_start = Some(line_start);
                }
            }
        }
    }
    if let Some(s) = seg_start {
        segments.push((s, text.len()));
    }

    // Punctuation pass within each segment.
    let mut sentences = Vec::new();
    for (seg_start, seg_end) in segments {
        for (s, e) in punct_split(text, seg_start, seg_end, config) {
            if let Some(span) = trim_span(text, s, e) {
                sentences.push(Sentence {
                    start: span.0,
                    end: span.1,
                    tokens: Vec::new(),
                });
            }
        }
    }
    sentences
}

/// Splits `[start, end)` at `.`/`!`/`?` followed by whitespace and a capital,
/// honoring the abbreviation list.
fn punct_split(
    text: &str,
    start: usize,
    end: usize,
    config: &SplitterConfig,
) -> Vec<(usize, usize)> {
    let segment = &text[start..end];
    let mut spans = Vec::new();
    let mut sent_start = 0usize;
    let chars: Vec<(usize, char)> = segment.char_indices().collect();
    let mut i = 0usize;
    while i < chars.len() {
        let (off, c) = chars[i];
        if matches!(c, '.' | '!' | '?') {
            let punct_end = off + c.len_utf8();
            let next_is_ws = chars.get(i + 1).map(|&(_, n)| n.is_whitespace());
            if next_is_ws == Some(true) {
                let mut j = i + 1;
                while j < chars.len() && chars[j].1.is_whitespace() {
                    j += 1;
                }
                let next_caps = chars
                    .get(j)
                    .map(|&(_, n)| n.is_uppercase())
                    .unwrap_or(false);
                if next_caps && !(c == '.' && ends_with_abbreviation(segment, punct_end, config)) {
                    spans.push((start + sent_start, start + punct_end));
                    sent_start = chars[j].0;
                    i = j;
                    continue;
                }
            }
        }
        i += 1;
    }
    spans.push((start + sent_start, end));
    spans
}

fn ends_with_abbreviation(segment: &str, punct_end: usize, config: &SplitterConfig) -> bool {
    let before = &segment[..punct_end];
    let word_start = before[..before.len() - 1]
        .rfind(|c: char| !c.is_alphabetic())
        .map(|i| i + 1)
        .unwrap_or(0);
    let candidate = before[word_start..].to_lowercase();
    candidate.len() > 1 && config.abbreviations.contains(&candidate)
}

fn trim_span(text: &str, start: usize, end: usize) -> Option<(usize, usize)> {
    let slice = &text[start..end];
    let lead = slice.len() - slice.trim_start().len();
    let trail = slice.len() - slice.trim_end().len();
    let s = start + lead;
    let e = end - trail;
    if s < e {
        Some((s, e))
    } else {
        None
    }
}

/// Whitespace tokenizer with punctuation detachment. Decimal points inside
/// numbers and hyphens inside alphanumeric words do not split.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let n = chars.len();
    let mut tokens = Vec::new();
    let mut i = 0usize;
    while i < n {
        let (off, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if is_word_char(c) {
            let start = off;
            let mut j = i;
            while j < n {
                let cur = chars[j].1;
                if is_word_char(cur) {
                    j += 1;
                    continue;
                }
                // "1.5" stays one token; "mg." does not.
                if cur == '.'
                    && j > i
                    && chars[j - 1].1.is_ascii_digit()
                    && chars.get(j + 1).map(|&(_, d)| d.is_ascii_digit()) == Some(true)
                {
                    j += 2;
                    continue;
                }
                // "follow-up" stays one token.
                if cur == '-'
                    && j > i
                    && chars[j - 1].1.is_alphanumeric()
                    && chars.get(j + 1).map(|&(_, d)| d.is_alphanumeric()) == Some(true)
                {
                    j += 2;
                    continue;
                }
                break;
            }
            let end = if j < n { chars[j].0 } else { text.len() };
            push_token(&mut tokens, text, start, end);
            i = j;
        } else {
            let end = off + c.len_utf8();
            push_token(&mut tokens, text, off, end);
            i += 1;
        }
    }
    tokens
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn push_token(tokens: &mut Vec<Token>, text: &str, start: usize, end: usize) {
    let slice = &text[start..end];
    tokens.push(Token {
        text: slice.to_string(),
        lower: slice.to_lowercase(),
        start,
        end,
    });
}
