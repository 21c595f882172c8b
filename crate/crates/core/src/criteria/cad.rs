//! The four-part advanced-cardiovascular-disease evaluator: two or more of
//! {two+ CAD medications, MI history, current angina, ischemia} must hold.

use std::collections::BTreeSet;

use crate::context::{classify_context, ContextCue};
use crate::corpus::PatientRecord;
use crate::lexvar::VariantLexicon;
use crate::rules::NamedSet;
use crate::sections::{section_at, split_into_sections, SectionTitle};
use crate::temporal::{date_within_window, extract_timexes, TimeWindow};

use super::terminology::{TermEntry, TermMatcher};
use super::{CriterionError, Decision, Evidence};

#[derive(Debug, Clone)]
pub struct AdvancedCadConfig {
    /// CAD medication surface forms (the 40-entry list is an input file).
    pub med_set: NamedSet,
    /// Medication mentions only count inside these sections.
    pub med_sections: BTreeSet<String>,
    pub mi_terms: Vec<TermEntry>,
    pub angina_terms: Vec<TermEntry>,
    pub ischemia_terms: Vec<TermEntry>,
    /// Organ words that veto an infarction mention in the same sentence
    /// ("cerebral infarction" is not a cardiac MI).
    pub organ_veto: BTreeSet<String>,
    /// Sections whose MI mentions are ignored (neuro-imaging reports).
    pub mi_excluded_sections: BTreeSet<String>,
    /// Recency window for the angina sub-criterion, in months.
    pub window_months: u32,
    /// Sub-criteria needed for "advanced".
    pub min_count: usize,
}

pub struct CompiledCad {
    config: AdvancedCadConfig,
    med_matcher: TermMatcher,
    mi_matcher: TermMatcher,
    angina_matcher: TermMatcher,
    ischemia_matcher: TermMatcher,
}

impl CompiledCad {
    pub fn new(config: AdvancedCadConfig, variants: &VariantLexicon) -> Result<CompiledCad, CriterionError> {
        let med_entries: Vec<TermEntry> = config
            .med_set
            .members
            .iter()
            .map(|m| TermEntry {
                surface: m.clone(),
                concept_id: None,
                excluded: false,
            })
            .collect();
        Ok(CompiledCad {
            med_matcher: TermMatcher::new(&med_entries, variants)?,
            mi_matcher: TermMatcher::new(&config.mi_terms, variants)?,
            angina_matcher: TermMatcher::new(&config.angina_terms, variants)?,
            ischemia_matcher: TermMatcher::new(&config.ischemia_terms, variants)?,
            config,
        })
    }
}

/// Evaluates the four sub-criteria and requires `min_count` of them.
pub fn eval_advanced_cad(
    record: &PatientRecord,
    cad: &CompiledCad,
    cues: &[ContextCue],
    titles: &[SectionTitle],
    criterion_id: &str,
) -> Decision {
    let window = TimeWindow::new(record.now(), cad.config.window_months);
    let mut distinct_meds: BTreeSet<String> = BTreeSet::new();
    let mut med_evidence = Vec::new();
    let mut mi_evidence = Vec::new();
    let mut angina_evidence = Vec::new();
    let mut ischemia_evidence = Vec::new();

    for doc in &record.documents {
        let sections = split_into_sections(doc, titles);
        for (sentence_index, sentence) in doc.sentences.iter().enumerate() {
            let affirmed = |m: &super::terminology::TermMatch| {
                classify_context(sentence, m.token_start..m.token_end, cues)
                    .expect("mention inside sentence")
                    .affirmed()
            };

            // (1) Two or more distinct CAD medications in medication sections.
            for m in cad
                .med_matcher
                .scan_sentence(&doc.raw_text, sentence, &doc.doc_id, sentence_index)
            {
                let in_med_section = section_at(&sections, m.start)
                    .and_then(|s| s.title.as_deref())
                    .map(|t| cad.config.med_sections.contains(t))
                    .unwrap_or(false);
                if in_med_section && affirmed(&m) {
                    distinct_meds.insert(m.surface.clone());
                    med_evidence.push(Evidence::Term(m));
                }
            }

            // (2) MI history, except other-organ infarctions and
            // neuro-imaging sections.
            for m in cad
                .mi_matcher
                .scan_sentence(&doc.raw_text, sentence, &doc.doc_id, sentence_index)
            {
                let organ_nearby = sentence
                    .tokens
                    .iter()
                    .any(|t| cad.config.organ_veto.contains(t.lower.as_str()));
                let in_excluded_section = section_at(&sections, m.start)
                    .and_then(|s| s.title.as_deref())
                    .map(|t| cad.config.mi_excluded_sections.contains(t))
                    .unwrap_or(false);
                if !organ_nearby && !in_excluded_section && affirmed(&m) {
                    mi_evidence.push(Evidence::Term(m));
                }
            }

            // (3) Current angina: no sentence-local date, or one inside the
            // window.
            let angina_mentions = cad
                .angina_matcher
                .scan_sentence(&doc.raw_text, sentence, &doc.doc_id, sentence_index);
            if !angina_mentions.is_empty() {
                let dates = extract_timexes(sentence.text(&doc.raw_text), doc.record_date);
                let current = dates.is_empty()
                    || dates.iter().any(|t| date_within_window(&t.normalized, &window));
                if current {
                    for m in angina_mentions {
                        if affirmed(&m) {
                            angina_evidence.push(Evidence::Term(m));
                        }
                    }
                }
            }

            // (4) Ischemia, past or present.
            for m in cad
                .ischemia_matcher
                .scan_sentence(&doc.raw_text, sentence, &doc.doc_id, sentence_index)
            {
                if affirmed(&m) {
                    ischemia_evidence.push(Evidence::Term(m));
                }
            }
        }
    }

    let sub_meds = distinct_meds.len() >= 2;
    let sub_mi = !mi_evidence.is_empty();
    let sub_angina = !angina_evidence.is_empty();
    let sub_ischemia = !ischemia_evidence.is_empty();
    let count = usize::from(sub_meds)
        + usize::from(sub_mi)
        + usize::from(sub_angina)
        + usize::from(sub_ischemia);

    let mut evidence = Vec::new();
    if sub_meds {
        evidence.extend(med_evidence);
    }
    if sub_mi {
        evidence.extend(mi_evidence);
    }
    if sub_angina {
        evidence.extend(angina_evidence);
    }
    if sub_ischemia {
        evidence.extend(ischemia_evidence);
    }

    Decision {
        patient_id: record.patient_id.clone(),
        criterion_id: criterion_id.to_string(),
        met: count >= cad.config.min_count,
        score: Some(count as f64),
        evidence,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::parse_cues;
    use crate::corpus::{Document, SplitterConfig};
    use chrono::NaiveDate;

    fn entries(surfaces: &[&str]) -> Vec<TermEntry> {
        surfaces
            .iter()
            .map(|s| TermEntry {
                surface: s.to_string(),
                concept_id: None,
                excluded: false,
            })
            .collect()
    }

    fn config() -> AdvancedCadConfig {
        AdvancedCadConfig {
            med_set: NamedSet {
                name: "CAD_MEDS".into(),
                members: vec![
                    "aspirin".into(),
                    "metoprolol".into(),
                    "atorvastatin".into(),
                    "isosorbide mononitrate".into(),
                ],
            },
            med_sections: ["medications".to_string()].into_iter().collect(),
            mi_terms: entries(&["myocardial infarction", "infarction", "stemi", "mi"]),
            angina_terms: entries(&["angina", "anginal pain"]),
            ischemia_terms: entries(&["ischemia", "ischemic changes"]),
            organ_veto: ["cerebral", "lacunar", "renal", "bowel", "pulmonary"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            mi_excluded_sections: ["head imaging".to_string()].into_iter().collect(),
            window_months: 6,
            min_count: 2,
        }
    }

    fn compiled() -> CompiledCad {
        CompiledCad::new(config(), &VariantLexicon::default()).unwrap()
    }

    fn cues() -> Vec<ContextCue> {
        parse_cues("negation\tpre\t6\tno\nnegation\tpre\t6\tdenies\n", "test").unwrap()
    }

    fn titles() -> Vec<SectionTitle> {
        ["medications", "head imaging", "assessment"]
            .iter()
            .map(|n| SectionTitle {
                normalized_text: n.to_string(),
                document_frequency: 0.5,
            })
            .collect()
    }

    fn record_dated(texts_dates: &[(&str, &str)]) -> PatientRecord {
        let splitter = SplitterConfig::default();
        PatientRecord {
            patient_id: "p1".into(),
            documents: texts_dates
                .iter()
                .enumerate()
                .map(|(i, (text, date))| {
                    Document::new(
                        &format!("d{i}"),
                        "p1",
                        NaiveDate::parse_from_str(date, "%Y-%m-%d").unwrap(),
                        text,
                        &splitter,
                    )
                })
                .collect(),
            gold_labels: None,
        }
    }

    #[test]
    fn two_meds_plus_ischemia_is_met() {
        let r = record_dated(&[(
            "MEDICATIONS:\naspirin 81 mg\nmetoprolol 25 mg\nASSESSMENT:\nchronic ischemia noted\n",
            "2093-06-15",
        )]);
        let d = eval_advanced_cad(&r, &compiled(), &cues(), &titles(), "ADVANCED-CAD");
        assert!(d.met);
        assert_eq!(d.score, Some(2.0));
    }

    #[test]
    fn single_subcriterion_is_not_met() {
        let r = record_dated(&[(
            "ASSESSMENT:\nchronic ischemia noted on stress test\n",
            "2093-06-15",
        )]);
        let d = eval_advanced_cad(&r, &compiled(), &cues(), &titles(), "ADVANCED-CAD");
        assert!(!d.met);
        assert_eq!(d.score, Some(1.0));
    }

    #[test]
    fn one_med_does_not_count() {
        let r = record_dated(&[(
            "MEDICATIONS:\naspirin 81 mg\nASSESSMENT:\nischemia noted\n",
            "2093-06-15",
        )]);
        let d = eval_advanced_cad(&r, &compiled(), &cues(), &titles(), "ADVANCED-CAD");
        assert!(!d.met, "one medication plus ischemia is only one sub-criterion");
    }

    #[test]
    fn meds_outside_medication_section_ignored() {
        let r = record_dated(&[(
            "ASSESSMENT:\ndiscussed aspirin and metoprolol\nischemia noted\n",
            "2093-06-15",
        )]);
        let d = eval_advanced_cad(&r, &compiled(), &cues(), &titles(), "ADVANCED-CAD");
        assert_eq!(d.score, Some(1.0));
    }

    #[test]
    fn old_angina_date_does_not_count() {
        let r = record_dated(&[
            ("ASSESSMENT:\nangina in 2085\nischemia noted\n", "2093-06-15"),
        ]);
        let d = eval_advanced_cad(&r, &compiled(), &cues(), &titles(), "ADVANCED-CAD");
        assert!(!d.met);
        assert_eq!(d.score, Some(1.0), "dated-out angina must not count");
    }

    #[test]
    fn undated_angina_counts_as_current() {
        let r = record_dated(&[(
            "ASSESSMENT:\nreports angina on exertion\nischemia noted\n",
            "2093-06-15",
        )]);
        let d = eval_advanced_cad(&r, &compiled(), &cues(), &titles(), "ADVANCED-CAD");
        assert!(d.met);
    }

    #[test]
    fn recent_angina_date_counts() {
        let r = record_dated(&[(
            "ASSESSMENT:\nangina on 05/01/2093\nischemia noted\n",
            "2093-06-15",
        )]);
        let d = eval_advanced_cad(&r, &compiled(), &cues(), &titles(), "ADVANCED-CAD");
        assert!(d.met);
    }

    #[test]
    fn other_organ_infarction_vetoed() {
        let r = record_dated(&[(
            "ASSESSMENT:\nold cerebral infarction on imaging\nischemia noted\n",
            "2093-06-15",
        )]);
        let d = eval_advanced_cad(&r, &compiled(), &cues(), &titles(), "ADVANCED-CAD");
        assert_eq!(d.score, Some(1.0), "cerebral infarction is not an MI");
    }

    #[test]
    fn mi_in_excluded_section_ignored() {
        let r = record_dated(&[(
            "HEAD IMAGING:\nsmall infarction seen\nASSESSMENT:\nischemia\n",
            "2093-06-15",
        )]);
        let d = eval_advanced_cad(&r, &compiled(), &cues(), &titles(), "ADVANCED-CAD");
        assert_eq!(d.score, Some(1.0));
    }

    #[test]
    fn mi_plus_angina_met() {
        let r = record_dated(&[(
            "ASSESSMENT:\nhad a STEMI in June 2092. Now reports angina.\n",
            "2093-01-15",
        )]);
        let d = eval_advanced_cad(&r, &compiled(), &cues(), &titles(), "ADVANCED-CAD");
        // STEMI mention has an out-of-window date but MI history is
        // timeless; angina sentence carries no date.
        assert!(d.met);
    }

    #[test]
    fn negated_mentions_do_not_count() {
        let r = record_dated(&[(
            "ASSESSMENT:\ndenies angina\nno ischemia\n",
            "2093-06-15",
        )]);
        let d = eval_advanced_cad(&r, &compiled(), &cues(), &titles(), "ADVANCED-CAD");
        assert_eq!(d.score, Some(0.0));
    }
}
