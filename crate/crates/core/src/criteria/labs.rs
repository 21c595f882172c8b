//! Lab value extraction from free text and tables, and threshold/range
//! criteria over the extracted observations.

use std::collections::BTreeSet;
use std::path::Path;

use chrono::NaiveDate;

use crate::corpus::{Document, PatientRecord};
use crate::temporal::extract_timexes;

use super::{CriterionError, Decision, Evidence};

/// Name variants plus capture configuration for one analyte.
#[derive(Debug, Clone)]
pub struct AnalytePattern {
    pub analyte: String,
    /// Lowercased single-token name variants ("creatinine", "cre", "cr").
    pub names: BTreeSet<String>,
    /// A name immediately followed by one of these words is not a value
    /// mention ("creatinine clearance").
    pub exclude_following: BTreeSet<String>,
    /// Unit token sequences ("mg/dl" tokenizes to ["mg", "/", "dl"]).
    pub units: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabObservation {
    pub analyte: String,
    pub value: f64,
    pub unit: Option<String>,
    /// Sentence-local date when present, else the document date.
    pub date: NaiveDate,
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
}

/// Tokens allowed between an analyte name and its value.
const CONNECTORS: &[&str] = &[":", "=", "-", "was", "is", "of", "level", "at"];

/// Extracts one observation per analyte-name/value pair found in the
/// document. Handles prose ("creatinine 1.6 mg/dL"), assignments
/// ("HbA1c = 7.2%"), and table rows ("CRE 1.6 H").
pub fn extract_lab_values(doc: &Document, patterns: &[AnalytePattern]) -> Vec<LabObservation> {
    let mut observations = Vec::new();
    for sentence in &doc.sentences {
        let tokens = &sentence.tokens;
        let mut sentence_date: Option<Option<NaiveDate>> = None; // lazily computed
        for (i, token) in tokens.iter().enumerate() {
            for pattern in patterns {
                if !pattern.names.contains(token.lower.as_str()) {
                    continue;
                }
                if let Some(next) = tokens.get(i + 1) {
                    if pattern.exclude_following.contains(next.lower.as_str()) {
                        continue;
                    }
                }
                // Scan past connectors to the value.
                let mut j = i + 1;
                let mut hops = 0usize;
                while j < tokens.len()
                    && hops < 3
                    && CONNECTORS.contains(&tokens[j].lower.as_str())
                {
                    j += 1;
                    hops += 1;
                }
                let Some(value_token) = tokens.get(j) else {
                    continue;
                };
                let Ok(value) = value_token.lower.parse::<f64>() else {
                    continue;
                };
                if !value.is_finite() || value < 0.0 {
                    continue;
                }
                // Reject date-like values: "06/15/2093".
                if tokens.get(j + 1).map(|t| t.text == "/").unwrap_or(false) {
                    continue;
                }
                let mut end = value_token.end;
                let mut unit = None;
                for unit_seq in &pattern.units {
                    let fits = unit_seq
                        .iter()
                        .enumerate()
                        .all(|(k, w)| {
                            tokens
                                .get(j + 1 + k)
                                .map(|t| t.lower == *w)
                                .unwrap_or(false)
                        });
                    if fits {
                        let last = &tokens[j + unit_seq.len()];
                        end = last.end;
                        unit = Some(doc.raw_text[tokens[j + 1].start..last.end].to_string());
                        break;
                    }
                }
                let date = sentence_date
                    .get_or_insert_with(|| {
                        extract_timexes(sentence.text(&doc.raw_text), doc.record_date)
                            .first()
                            .map(|t| t.normalized.earliest())
                    })
                    .unwrap_or(doc.record_date);
                observations.push(LabObservation {
                    analyte: pattern.analyte.clone(),
                    value,
                    unit,
                    date,
                    doc_id: doc.doc_id.clone(),
                    start: token.start,
                    end,
                });
            }
        }
    }
    observations
}

/// Decision mode for a lab criterion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LabMode {
    /// Met when any observation is strictly above the threshold.
    GreaterThan(f64),
    /// Met when any observation lies in the inclusive range.
    InRange(f64, f64),
}

/// Met iff at least one observation of `analyte` qualifies under `mode`.
/// No observations at all means not met.
pub fn eval_lab(
    record: &PatientRecord,
    patterns: &[AnalytePattern],
    analyte: &str,
    mode: LabMode,
    criterion_id: &str,
) -> Decision {
    let mut evidence = Vec::new();
    for doc in &record.documents {
        for obs in extract_lab_values(doc, patterns) {
            if obs.analyte != analyte {
                continue;
            }
            let qualifies = match mode {
                LabMode::GreaterThan(threshold) => obs.value > threshold,
                LabMode::InRange(lo, hi) => obs.value >= lo && obs.value <= hi,
            };
            if qualifies {
                evidence.push(Evidence::Lab(obs));
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

/// Loads `<analyte>\t<names>\t<exclude_following|->\t<units|->` lines,
/// comma-separated within fields.
pub fn load_lab_patterns(path: &Path) -> Result<Vec<AnalytePattern>, CriterionError> {
    let text = std::fs::read_to_string(path).map_err(|e| CriterionError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_lab_patterns(&text, &path.display().to_string())
}

pub fn parse_lab_patterns(
    text: &str,
    source_name: &str,
) -> Result<Vec<AnalytePattern>, CriterionError> {
    let mut patterns = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(CriterionError::MalformedLine {
                path: source_name.to_string(),
                line: i + 1,
                reason: format!("expected 4 tab-separated fields, got {}", fields.len()),
            });
        }
        let csv = |s: &str| -> Vec<String> {
            s.split(',')
                .map(|v| v.trim().to_lowercase())
                .filter(|v| !v.is_empty() && v != "-")
                .collect()
        };
        patterns.push(AnalytePattern {
            analyte: fields[0].to_string(),
            names: csv(fields[1]).into_iter().collect(),
            exclude_following: csv(fields[2]).into_iter().collect(),
            units: csv(fields[3])
                .iter()
                .map(|u| {
                    crate::corpus::tokenize(u)
                        .into_iter()
                        .map(|t| t.lower)
                        .collect()
                })
                .collect(),
        });
    }
    Ok(patterns)
}
