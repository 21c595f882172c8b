//! Section-title mining and document segmentation.
//!
//! Titles are short lines ending with a colon or written fully uppercase;
//! mining keeps the ones whose document frequency exceeds a threshold, and
//! splitting opens a new section at every line that starts with a retained
//! title.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{is_header_shaped, tokenize, Document};

const MAX_TITLE_TOKENS: usize = 8;

/// A retained section title with its corpus document frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionTitle {
    /// Lowercased, trailing colon stripped.
    pub normalized_text: String,
    pub document_frequency: f64,
}

/// One section of a document. `title == None` marks the UNKNOWN preamble.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Section {
    pub title: Option<String>,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Error)]
pub enum SectionError {
    #[error("cannot mine section titles from an empty corpus")]
    EmptyCorpus,
    #[error("min_doc_frequency must be in (0, 1), got {0}")]
    BadThreshold(f64),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed title line {line} in {path}")]
    MalformedLine { path: String, line: usize },
}

/// Normalizes a candidate title line: trim, strip one trailing colon, lowercase.
pub fn normalize_title(line: &str) -> String {
    line.trim().trim_end_matches(':').trim_end().to_lowercase()
}

fn title_candidate(line: &str) -> Option<String> {
    let trimmed = line.trim();
    if trimmed.is_empty() || !is_header_shaped(trimmed) {
        return None;
    }
    // Uppercase lab rows ("CRE 1.6 H") are not titles; colon-less candidates
    // must be digit-free.
    if !trimmed.ends_with(':') && trimmed.chars().any(|c| c.is_ascii_digit()) {
        return None;
    }
    if tokenize(trimmed).len() > MAX_TITLE_TOKENS {
        return None;
    }
    let normalized = normalize_title(trimmed);
    if normalized.is_empty() {
        None
    } else {
        Some(normalized)
    }
}

/// Mines candidate titles from the corpus, keeping those whose document
/// frequency strictly exceeds `min_doc_frequency`.
pub fn mine_section_titles(
    corpus: &[Document],
    min_doc_frequency: f64,
) -> Result<Vec<SectionTitle>, SectionError> {
    if corpus.is_empty() {
        return Err(SectionError::EmptyCorpus);
    }
    if !(min_doc_frequency > 0.0 && min_doc_frequency < 1.0) {
        return Err(SectionError::BadThreshold(min_doc_frequency));
    }
    let mut doc_counts: BTreeMap<String, usize> = BTreeMap::new();
    for doc in corpus {
        let mut seen: BTreeSet<String> = BTreeSet::new();
        for line in doc.raw_text.lines() {
            if let Some(normalized) = title_candidate(line) {
                seen.insert(normalized);
            }
        }
        for title in seen {
            *doc_counts.entry(title).or_insert(0) += 1;
        }
    }
    let n_docs = corpus.len() as f64;
    Ok(doc_counts
        .into_iter()
        .filter_map(|(normalized_text, count)| {
            let document_frequency = count as f64 / n_docs;
            (document_frequency > min_doc_frequency).then_some(SectionTitle {
                normalized_text,
                document_frequency,
            })
        })
        .collect())
}

/// Splits a document into sections. Spans partition `[0, len)`; text before
/// the first title line becomes an UNKNOWN section.
pub fn split_into_sections(doc: &Document, titles: &[SectionTitle]) -> Vec<Section> {
    let title_set: BTreeSet<&str> = titles.iter().map(|t| t.normalized_text.as_str()).collect();
    let text = &doc.raw_text;

    let mut opens: Vec<(usize, String)> = Vec::new();
    let mut pos = 0usize;
    for line in text.split_inclusive('\n') {
        let content = line.trim_end_matches(['\n', '\r']);
        if let Some(title) = line_opens_title(content, &title_set) {
            opens.push((pos, title));
        }
        pos += line.len();
    }

    let mut sections = Vec::new();
    let first_open = opens.first().map(|&(s, _)| s).unwrap_or(text.len());
    if first_open > 0 || opens.is_empty() {
        sections.push(Section {
            title: None,
            start: 0,
            end: first_open,
        });
    }
    for (i, (start, title)) in opens.iter().enumerate() {
        let end = opens.get(i + 1).map(|&(s, _)| s).unwrap_or(text.len());
        sections.push(Section {
            title: Some(title.clone()),
            start: *start,
            end,
        });
    }
    sections
}

/// Returns the retained title opening at this line, if any: either the whole
/// line normalizes to a title, or the line starts with `<title>:`.
fn line_opens_title(content: &str, titles: &BTreeSet<&str>) -> Option<String> {
    let trimmed = content.trim();
    if trimmed.is_empty() {
        return None;
    }
    let whole = normalize_title(trimmed);
    if titles.contains(whole.as_str()) {
        return Some(whole);
    }
    let lower = trimmed.to_lowercase();
    if let Some(colon) = lower.find(':') {
        let prefix = normalize_title(&lower[..colon]);
        if titles.contains(prefix.as_str()) {
            return Some(prefix);
        }
    }
    None
}

/// Finds the section containing byte `offset`.
pub fn section_at<'a>(sections: &'a [Section], offset: usize) -> Option<&'a Section> {
    sections.iter().find(|s| s.start <= offset && offset < s.end)
}

/// Writes the persisted title list: `<doc_frequency>\t<normalized_text>`.
pub fn save_titles(titles: &[SectionTitle], path: &Path) -> Result<(), SectionError> {
    let mut out = Vec::new();
    for t in titles {
        writeln!(out, "{:.6}\t{}", t.document_frequency, t.normalized_text).expect("vec write");
    }
    std::fs::write(path, out).map_err(|e| SectionError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn load_titles(path: &Path) -> Result<Vec<SectionTitle>, SectionError> {
    let text = std::fs::read_to_string(path).map_err(|e| SectionError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut titles = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (freq, name) = line.split_once('\t').ok_or(SectionError::MalformedLine {
            path: path.display().to_string(),
            line: i + 1,
        })?;
        let document_frequency = freq.parse().map_err(|_| SectionError::MalformedLine {
            path: path.display().to_string(),
            line: i + 1,
        })?;
        titles.push(SectionTitle {
            normalized_text: name.to_string(),
            document_frequency,
        });
    }
    Ok(titles)
}
