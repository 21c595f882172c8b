//! Silver-standard construction: seed trigger rules applied to an unlabeled
//! corpus yield high-precision (patient, criterion, label) examples.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::context::ContextCue;
use crate::corpus::{Label, PatientRecord};
use crate::rules::{scan_patient, Polarity, RuleEngine, RuleMatch};
use crate::temporal::TimeWindow;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConflictPolicy {
    /// Patients matching both polarities are excluded.
    Drop,
    PositiveWins,
    NegativeWins,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSource {
    Silver,
    Gold,
}

/// A structured code observation, the stand-in channel for criteria whose
/// evidence lives outside the notes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeEntry {
    pub patient_id: String,
    pub code: String,
    pub date: NaiveDate,
}

#[derive(Debug, Clone)]
pub struct SilverLabel {
    pub patient_id: String,
    pub criterion_id: String,
    pub label: Label,
    pub evidence: Vec<RuleMatch>,
    pub code_evidence: Vec<CodeEntry>,
    pub source: LabelSource,
}

#[derive(Debug, Error)]
pub enum SilverError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed line {line} in {path}")]
    MalformedLine { path: String, line: usize },
}

/// Labels each patient from its surviving rule matches: positive-only is met,
/// negative-only is not met, both polarities resolve by `policy`, and
/// patients matching nothing are excluded.
pub fn build_silver(
    engine: &RuleEngine,
    corpus: &[PatientRecord],
    cues: &[ContextCue],
    criterion_id: &str,
    policy: ConflictPolicy,
) -> Vec<SilverLabel> {
    let mut labels: Vec<SilverLabel> = corpus
        .par_iter()
        .filter_map(|record| {
            let matches = scan_patient(engine, record, cues);
            let (positive, negative): (Vec<RuleMatch>, Vec<RuleMatch>) = matches
                .into_iter()
                .partition(|m| m.polarity == Polarity::Positive);
            let (label, evidence) = match (positive.is_empty(), negative.is_empty()) {
                (false, true) => (Label::Met, positive),
                (true, false) => (Label::NotMet, negative),
                (false, false) => match policy {
                    ConflictPolicy::Drop => return None,
                    ConflictPolicy::PositiveWins => (Label::Met, positive),
                    ConflictPolicy::NegativeWins => (Label::NotMet, negative),
                },
                (true, true) => return None,
            };
            Some(SilverLabel {
                patient_id: record.patient_id.clone(),
                criterion_id: criterion_id.to_string(),
                label,
                evidence,
                code_evidence: Vec::new(),
                source: LabelSource::Silver,
            })
        })
        .collect();
    labels.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    labels
}

/// Code-channel silver labels: patients with a `code_prefix` code dated
/// within `window_months` of their last report are met; the remainder become
/// not-met candidates, sampled down to `max_negatives` deterministically.
pub fn build_silver_from_codes(
    corpus: &[PatientRecord],
    codes: &[CodeEntry],
    criterion_id: &str,
    code_prefix: &str,
    window_months: u32,
    max_negatives: usize,
    seed: u64,
) -> Vec<SilverLabel> {
    let mut by_patient: BTreeMap<&str, Vec<&CodeEntry>> = BTreeMap::new();
    for entry in codes {
        by_patient.entry(&entry.patient_id).or_default().push(entry);
    }
    let mut met = Vec::new();
    let mut candidates = Vec::new();
    for record in corpus {
        let window = TimeWindow::new(record.now(), window_months);
        let hits: Vec<CodeEntry> = by_patient
            .get(record.patient_id.as_str())
            .map(|entries| {
                entries
                    .iter()
                    .filter(|e| {
                        e.code.starts_with(code_prefix)
                            && e.date >= window.start()
                            && e.date <= window.anchor
                    })
                    .map(|e| (*e).clone())
                    .collect()
            })
            .unwrap_or_default();
        if hits.is_empty() {
            candidates.push(record.patient_id.clone());
        } else {
            met.push(SilverLabel {
                patient_id: record.patient_id.clone(),
                criterion_id: criterion_id.to_string(),
                label: Label::Met,
                evidence: Vec::new(),
                code_evidence: hits,
                source: LabelSource::Silver,
            });
        }
    }
    candidates.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    candidates.shuffle(&mut rng);
    candidates.truncate(max_negatives);
    candidates.sort();
    let mut labels = met;
    labels.extend(candidates.into_iter().map(|patient_id| SilverLabel {
        patient_id,
        criterion_id: criterion_id.to_string(),
        label: Label::NotMet,
        evidence: Vec::new(),
        code_evidence: Vec::new(),
        source: LabelSource::Silver,
    }));
    labels.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    labels
}

/// One labeled example in the merged training set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingExample {
    pub patient_id: String,
    pub label: Label,
    pub source: LabelSource,
}

/// Merges silver labels with gold `(patient, label)` pairs; gold wins on id
/// collisions, and the source field is preserved for weighting.
pub fn merge_with_gold(
    silver: &[SilverLabel],
    gold: &[(String, Label)],
) -> Vec<TrainingExample> {
    let mut merged: BTreeMap<String, TrainingExample> = BTreeMap::new();
    for s in silver {
        merged.insert(
            s.patient_id.clone(),
            TrainingExample {
                patient_id: s.patient_id.clone(),
                label: s.label,
                source: LabelSource::Silver,
            },
        );
    }
    for (patient_id, label) in gold {
        merged.insert(
            patient_id.clone(),
            TrainingExample {
                patient_id: patient_id.clone(),
                label: *label,
                source: LabelSource::Gold,
            },
        );
    }
    merged.into_values().collect()
}

/// Writes `<patient>\t<criterion>\t<label>\t<n_evidence>` lines.
pub fn write_silver_labels(out: &mut dyn Write, labels: &[SilverLabel]) -> std::io::Result<()> {
    for l in labels {
        let n_evidence = l.evidence.len() + l.code_evidence.len();
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            l.patient_id,
            l.criterion_id,
            l.label.as_str(),
            n_evidence
        )?;
    }
    Ok(())
}

/// Loads a `<patient>\t<code>\t<date>` TSV.
pub fn load_codes(path: &Path) -> Result<Vec<CodeEntry>, SilverError> {
    let text = std::fs::read_to_string(path).map_err(|e| SilverError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut codes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let parsed = (fields.len() == 3)
            .then(|| NaiveDate::parse_from_str(fields[2], "%Y-%m-%d").ok())
            .flatten();
        match parsed {
            Some(date) => codes.push(CodeEntry {
                patient_id: fields[0].to_string(),
                code: fields[1].to_string(),
                date,
            }),
            None => {
                return Err(SilverError::MalformedLine {
                    path: path.display().to_string(),
                    line: i + 1,
                })
            }
        }
    }
    Ok(codes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::parse_cues;
    use crate::corpus::{Document, SplitterConfig};
    use crate::rules::{compile_rules, parse_rule_file};

    fn record(patient_id: &str, text: &str) -> PatientRecord {
        PatientRecord {
            patient_id: patient_id.to_string(),
            documents: vec![Document::new(
                &format!("{patient_id}-01"),
                patient_id,
                NaiveDate::from_ymd_opt(2093, 6, 15).unwrap(),
                text,
                &SplitterConfig::default(),
            )],
            gold_labels: None,
        }
    }

    fn alcohol_engine() -> RuleEngine {
        let rules = "\
alc-pos-1\tpositive\t1.0\tdefault\tdrinks heavily
alc-pos-2\tpositive\t1.0\tdefault\tbinge drinking
alc-neg-1\tnegative\t1.0\tfalse\tno alcohol in * (years|yrs)
alc-neg-2\tnegative\t1.0\tfalse\tetoh : social
";
        compile_rules(&parse_rule_file(rules, "test").unwrap(), &[]).unwrap()
    }

    fn cues() -> Vec<ContextCue> {
        parse_cues("negation\tpre\t6\tdenies\n", "test").unwrap()
    }

    #[test]
    fn positive_only_is_met() {
        let corpus = vec![record("pa", "He drinks heavily on weekends.")];
        let labels = build_silver(&alcohol_engine(), &corpus, &cues(), "ALCOHOL-ABUSE", ConflictPolicy::Drop);
        assert_eq!(labels.len(), 1);
        assert_eq!(labels[0].label, Label::Met);
        assert!(!labels[0].evidence.is_empty());
        assert!(labels[0]
            .evidence
            .iter()
            .all(|m| m.polarity == Polarity::Positive));
    }

    #[test]
    fn negative_only_is_not_met() {
        let corpus = vec![record("pb", "etoh: social")];
        let labels = build_silver(&alcohol_engine(), &corpus, &cues(), "ALCOHOL-ABUSE", ConflictPolicy::Drop);
        assert_eq!(labels.len(), 1);
        assert_eq!(labels[0].label, Label::NotMet);
    }

    #[test]
    fn conflicts_follow_policy() {
        let corpus = vec![record(
            "pc",
            "History of binge drinking. Now reports no alcohol in 2 years.",
        )];
        let dropped = build_silver(&alcohol_engine(), &corpus, &cues(), "A", ConflictPolicy::Drop);
        assert!(dropped.is_empty());
        let pos = build_silver(&alcohol_engine(), &corpus, &cues(), "A", ConflictPolicy::PositiveWins);
        assert_eq!(pos[0].label, Label::Met);
        let neg = build_silver(&alcohol_engine(), &corpus, &cues(), "A", ConflictPolicy::NegativeWins);
        assert_eq!(neg[0].label, Label::NotMet);
    }

    #[test]
    fn unmatched_patients_excluded_and_order_independent() {
        let mut corpus = vec![
            record("p1", "He drinks heavily."),
            record("p2", "Nothing of interest here."),
            record("p3", "etoh: social"),
        ];
        let forward = build_silver(&alcohol_engine(), &corpus, &cues(), "A", ConflictPolicy::Drop);
        corpus.reverse();
        let backward = build_silver(&alcohol_engine(), &corpus, &cues(), "A", ConflictPolicy::Drop);
        assert_eq!(forward.len(), 2);
        let ids: Vec<(String, Label)> = forward
            .iter()
            .map(|l| (l.patient_id.clone(), l.label))
            .collect();
        let ids_b: Vec<(String, Label)> = backward
            .iter()
            .map(|l| (l.patient_id.clone(), l.label))
            .collect();
        assert_eq!(ids, ids_b);
    }

    #[test]
    fn negated_seed_phrase_does_not_label() {
        let corpus = vec![record("pd", "He denies binge drinking.")];
        let labels = build_silver(&alcohol_engine(), &corpus, &cues(), "A", ConflictPolicy::Drop);
        assert!(labels.is_empty());
    }

    #[test]
    fn merge_prefers_gold_on_collision() {
        let silver = vec![SilverLabel {
            patient_id: "x1".into(),
            criterion_id: "A".into(),
            label: Label::Met,
            evidence: Vec::new(),
            code_evidence: Vec::new(),
            source: LabelSource::Silver,
        }];
        let gold = vec![("x1".to_string(), Label::NotMet)];
        let merged = merge_with_gold(&silver, &gold);
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].label, Label::NotMet);
        assert_eq!(merged[0].source, LabelSource::Gold);
    }

    #[test]
    fn merge_counts_and_identity() {
        let silver: Vec<SilverLabel> = (0..100)
            .map(|i| SilverLabel {
                patient_id: format!("s{i:03}"),
                criterion_id: "A".into(),
                label: Label::Met,
                evidence: Vec::new(),
                code_evidence: Vec::new(),
                source: LabelSource::Silver,
            })
            .collect();
        let gold: Vec<(String, Label)> = (0..202)
            .map(|i| (format!("g{i:03}"), Label::NotMet))
            .collect();
        assert_eq!(merge_with_gold(&silver, &gold).len(), 302);
        let gold_only = merge_with_gold(&[], &gold);
        assert_eq!(gold_only.len(), 202);
        assert!(gold_only.iter().all(|e| e.source == LabelSource::Gold));
    }

    #[test]
    fn code_channel_window_and_sampling() {
        let corpus: Vec<PatientRecord> = (0..6)
            .map(|i| record(&format!("k{i}"), "routine visit."))
            .collect();
        let codes = vec![
            CodeEntry {
                patient_id: "k0".into(),
                code: "250.11".into(),
                date: NaiveDate::from_ymd_opt(2093, 1, 10).unwrap(),
            },
            // Outside the 12-month window (now = 2093-06-15).
            CodeEntry {
                patient_id: "k1".into(),
                code: "250.13".into(),
                date: NaiveDate::from_ymd_opt(2091, 1, 10).unwrap(),
            },
            // Different code family.
            CodeEntry {
                patient_id: "k2".into(),
                code: "401.9".into(),
                date: NaiveDate::from_ymd_opt(2093, 5, 1).unwrap(),
            },
        ];
        let labels = build_silver_from_codes(&corpus, &codes, "KETO-1YR", "250.1", 12, 3, 7);
        let met: Vec<&str> = labels
            .iter()
            .filter(|l| l.label == Label::Met)
            .map(|l| l.patient_id.as_str())
            .collect();
        assert_eq!(met, vec!["k0"]);
        assert_eq!(labels.iter().filter(|l| l.label == Label::NotMet).count(), 3);
        // Deterministic under reruns.
        let again = build_silver_from_codes(&corpus, &codes, "KETO-1YR", "250.1", 12, 3, 7);
        let ids: Vec<_> = labels.iter().map(|l| (&l.patient_id, l.label)).collect();
        let ids_again: Vec<_> = again.iter().map(|l| (&l.patient_id, l.label)).collect();
        assert_eq!(ids, ids_again);
    }

    #[test]
    fn label_purity_recheck() {
        let corpus = vec![
            record("p1", "He drinks heavily."),
            record("p2", "etoh: social"),
        ];
        for label in build_silver(&alcohol_engine(), &corpus, &cues(), "A", ConflictPolicy::Drop) {
            match label.label {
                Label::Met => assert!(label.evidence.iter().all(|m| m.polarity == Polarity::Positive)),
                Label::NotMet => assert!(label.evidence.iter().all(|m| m.polarity == Polarity::Negative)),
            }
            assert!(!label.evidence.is_empty());
        }
    }
}
