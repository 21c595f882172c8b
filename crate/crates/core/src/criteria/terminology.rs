//! Dictionary concept matching: multi-token longest match over tokens,
//! single-token terms also reachable through their spelling variants,
//! filtered by exclusion entries, section allowlists, time windows, and
//! mention context.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::context::{classify_context, ContextCue};
use crate::corpus::{PatientRecord, Sentence};
use crate::lexvar::VariantLexicon;
use crate::sections::{section_at, split_into_sections, SectionTitle};
use crate::temporal::{date_within_window, extract_timexes, TimeWindow};

use super::{CriterionError, Decision, Evidence};

/// One terminology entry; excluded entries suppress matches of their surface.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TermEntry {
    pub surface: String,
    pub concept_id: Option<String>,
    pub excluded: bool,
}

/// A surviving concept mention.
#[derive(Debug, Clone, PartialEq)]
pub struct TermMatch {
    pub surface: String,
    pub concept_id: Option<String>,
    pub doc_id: String,
    pub sentence_index: usize,
    pub token_start: usize,
    pub token_end: usize,
    pub start: usize,
    pub end: usize,
    pub matched_text: String,
}

#[derive(Debug, Clone)]
struct CompiledTerm {
    surface: String,
    tokens: Vec<String>,
    concept_id: Option<String>,
    excluded: bool,
}

/// Longest-match dictionary matcher with a first-token index.
#[derive(Debug, Clone)]
pub struct TermMatcher {
    terms: Vec<CompiledTerm>,
    /// first token (or variant of a single-token term) -> (term idx, exact?)
    index: HashMap<String, Vec<(usize, bool)>>,
}

impl TermMatcher {
    pub fn new(entries: &[TermEntry], variants: &VariantLexicon) -> Result<TermMatcher, CriterionError> {
        let mut terms: Vec<CompiledTerm> = Vec::new();
        let mut seen: HashMap<Vec<String>, (usize, bool)> = HashMap::new();
        for entry in entries {
            let tokens: Vec<String> = crate::corpus::tokenize(&entry.surface)
                .into_iter()
                .map(|t| t.lower)
                .collect();
            if tokens.is_empty() {
                return Err(CriterionError::BadTermEntry {
                    surface: entry.surface.clone(),
                    reason: "surface tokenizes to nothing".to_string(),
                });
            }
            if let Some(&(_, excluded)) = seen.get(&tokens) {
                if excluded != entry.excluded {
                    return Err(CriterionError::BadTermEntry {
                        surface: entry.surface.clone(),
                        reason: "same surface listed as both include and exclude".to_string(),
                    });
                }
                continue;
            }
            seen.insert(tokens.clone(), (terms.len(), entry.excluded));
            terms.push(CompiledTerm {
                surface: entry.surface.clone(),
                tokens,
                concept_id: entry.concept_id.clone(),
                excluded: entry.excluded,
            });
        }
        let mut index: HashMap<String, Vec<(usize, bool)>> = HashMap::new();
        for (i, term) in terms.iter().enumerate() {
            index.entry(term.tokens[0].clone()).or_default().push((i, true));
            if term.tokens.len() == 1 {
                if let Some(vs) = variants.variants(&term.tokens[0]) {
                    for v in vs {
                        index.entry(v.clone()).or_default().push((i, false));
                    }
                }
            }
        }
        Ok(TermMatcher { terms, index })
    }

    /// Longest-match scan; excluded winners consume their tokens silently.
    pub fn scan_sentence(
        &self,
        raw_text: &str,
        sentence: &Sentence,
        doc_id: &str,
        sentence_index: usize,
    ) -> Vec<TermMatch> {
        let tokens = &sentence.tokens;
        let mut matches = Vec::new();
        let mut pos = 0usize;
        while pos < tokens.len() {
            let Some(candidates) = self.index.get(tokens[pos].lower.as_str()) else {
                pos += 1;
                continue;
            };
            // (length, exact, excluded-first, term idx)
            let mut best: Option<(usize, bool, bool, usize)> = None;
            for &(term_idx, exact) in candidates {
                let term = &self.terms[term_idx];
                let fits = if exact {
                    term.tokens
                        .iter()
                        .enumerate()
                        .all(|(k, w)| tokens.get(pos + k).map(|t| t.lower == *w).unwrap_or(false))
                } else {
                    // Variant hit: single-token term, first token already matched.
                    true
                };
                if !fits {
                    continue;
                }
                let key = (term.tokens.len(), exact, term.excluded, term_idx);
                let better = match best {
                    None => true,
                    Some((len, ex, excl, idx)) => {
                        (key.0, key.1, key.2) > (len, ex, excl)
                            || ((key.0, key.1, key.2) == (len, ex, excl) && term_idx < idx)
                    }
                };
                if better {
                    best = Some(key);
                }
            }
            let Some((len, _, excluded, term_idx)) = best else {
                pos += 1;
                continue;
            };
            if !excluded {
                let term = &self.terms[term_idx];
                let start = tokens[pos].start;
                let end = tokens[pos + len - 1].end;
                matches.push(TermMatch {
                    surface: term.surface.clone(),
                    concept_id: term.concept_id.clone(),
                    doc_id: doc_id.to_string(),
                    sentence_index,
                    token_start: pos,
                    token_end: pos + len,
                    start,
                    end,
                    matched_text: raw_text[start..end].to_string(),
                });
            }
            pos += len;
        }
        matches
    }
}

#[derive(Debug, Clone, Default)]
pub struct TerminologyOptions {
    /// Normalized section titles a match must fall inside, when present.
    pub section_allowlist: Option<BTreeSet<String>>,
    /// Months back from the patient's last report; a match survives when its
    /// document is inside the window or its sentence holds an in-window date.
    pub window_months: Option<u32>,
}

/// Met as soon as one relevant term mention survives every filter.
pub fn eval_terminology(
    record: &PatientRecord,
    matcher: &TermMatcher,
    cues: &[ContextCue],
    titles: &[SectionTitle],
    options: &TerminologyOptions,
    criterion_id: &str,
) -> Decision {
    let window = options
        .window_months
        .map(|months| TimeWindow::new(record.now(), months));
    let mut evidence = Vec::new();
    for doc in &record.documents {
        let sections = if options.section_allowlist.is_some() {
            split_into_sections(doc, titles)
        } else {
            Vec::new()
        };
        for (sentence_index, sentence) in doc.sentences.iter().enumerate() {
            let mentions = matcher.scan_sentence(&doc.raw_text, sentence, &doc.doc_id, sentence_index);
            if mentions.is_empty() {
                continue;
            }
            let sentence_dates = window.map(|_| {
                extract_timexes(sentence.text(&doc.raw_text), doc.record_date)
            });
            for mention in mentions {
                if let Some(allow) = &options.section_allowlist {
                    let inside = section_at(&sections, mention.start)
                        .and_then(|s| s.title.as_deref())
                        .map(|t| allow.contains(t))
                        .unwrap_or(false);
                    if !inside {
                        continue;
                    }
                }
                if let Some(w) = &window {
                    let doc_inside =
                        doc.record_date >= w.start() && doc.record_date <= w.anchor;
                    let sentence_inside = sentence_dates
                        .as_ref()
                        .map(|dates| dates.iter().any(|t| date_within_window(&t.normalized, w)))
                        .unwrap_or(false);
                    if !doc_inside && !sentence_inside {
                        continue;
                    }
                }
                let ctx = classify_context(sentence, mention.token_start..mention.token_end, cues)
                    .expect("mention is inside its sentence");
                if !ctx.affirmed() {
                    continue;
                }
                evidence.push(Evidence::Term(mention));
            }
        }
    }
    Decision {
        patient_id: record.patient_id.clone(),
        criterion_id: criterion_id.to_string(),
        met: !evidence.is_empty(),
        score: Some(evidence.len() as f64),
        evidence,
    }
}

/// Loads `<surface>\t<concept_id|->\t<include|exclude>` lines.
pub fn load_term_file(path: &Path) -> Result<Vec<TermEntry>, CriterionError> {
    let text = std::fs::read_to_string(path).map_err(|e| CriterionError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_term_file(&text, &path.display().to_string())
}

pub fn parse_term_file(text: &str, source_name: &str) -> Result<Vec<TermEntry>, CriterionError> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(CriterionError::MalformedLine {
                path: source_name.to_string(),
                line: i + 1,
                reason: format!("expected 3 tab-separated fields, got {}", fields.len()),
            });
        }
        let excluded = match fields[2] {
            "include" => false,
            "exclude" => true,
            other => {
                return Err(CriterionError::MalformedLine {
                    path: source_name.to_string(),
                    line: i + 1,
                    reason: format!("expected include|exclude, got {other:?}"),
                })
            }
        };
        entries.push(TermEntry {
            surface: fields[0].to_string(),
            concept_id: (fields[1] != "-").then(|| fields[1].to_string()),
            excluded,
        });
    }
    Ok(entries)
}
