//! Per-criterion evaluators, configured declaratively: terminology matching,
//! lab thresholds, weighted rules, weak-supervised classifiers, and the
//! composite advanced-CAD evaluator.

mod cad;
mod labs;
mod terminology;

pub use cad::{eval_advanced_cad, AdvancedCadConfig, CompiledCad};
pub use labs::{
    eval_lab, extract_lab_values, load_lab_patterns, parse_lab_patterns, AnalytePattern,
    LabMode, LabObservation,
};
pub use terminology::{
    eval_terminology, load_term_file, parse_term_file, TermEntry, TermMatch, TermMatcher,
    TerminologyOptions,
};

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;

use crate::context::ContextCue;
use crate::corpus::{Label, PatientRecord};
use crate::learn::persist::WeakModel;
use crate::learn::LearnError;
use crate::lexvar::{EmbeddingModel, VariantLexicon};
use crate::metrics::LabeledPair;
use crate::rules::{
    compile_rules, load_rule_file, scan_patient, weighted_decision, NamedSet, RuleEngine,
    RuleError, RuleMatch,
};
use crate::sections::SectionTitle;

/// Evidence behind a met decision.
#[derive(Debug, Clone)]
pub enum Evidence {
    Term(TermMatch),
    Rule(RuleMatch),
    Lab(LabObservation),
}

/// One per-patient, per-criterion verdict.
#[derive(Debug, Clone)]
pub struct Decision {
    pub patient_id: String,
    pub criterion_id: String,
    pub met: bool,
    pub score: Option<f64>,
    pub evidence: Vec<Evidence>,
}

impl Decision {
    pub fn label(&self) -> Label {
        if self.met {
            Label::Met
        } else {
            Label::NotMet
        }
    }

    pub fn as_pair(&self) -> LabeledPair {
        LabeledPair::new(&self.patient_id, &self.criterion_id, self.label())
    }
}

#[derive(Debug, Error)]
pub enum CriterionError {
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
    #[error("bad term entry {surface:?}: {reason}")]
    BadTermEntry { surface: String, reason: String },
    #[error("criterion {id}: missing required field {field} for strategy {strategy}")]
    MissingField {
        id: String,
        field: &'static str,
        strategy: &'static str,
    },
    #[error("criterion {id}: unknown section {section:?} (not in the mined vocabulary)")]
    UnknownSection { id: String, section: String },
    #[error("criterion {id}: unknown named set {set:?}")]
    UnknownNamedSet { id: String, set: String },
    #[error("criterion {id}: {source}")]
    Rule {
        id: String,
        #[source]
        source: RuleError,
    },
    #[error("criterion {id}: {source}")]
    Learn {
        id: String,
        #[source]
        source: LearnError,
    },
    #[error("bad criterion config {path}: {reason}")]
    BadConfig { path: String, reason: String },
}

/// Strategy selector, matching the config `strategy = "..."` values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Terminology,
    LabThreshold,
    WeightedRules,
    WeakSupervised,
    Composite,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CadSpec {
    pub med_set: String,
    pub med_sections: Vec<String>,
    pub mi_terms: PathBuf,
    pub angina_terms: PathBuf,
    pub ischemia_terms: PathBuf,
    pub organ_veto: Vec<String>,
    pub mi_excluded_sections: Vec<String>,
    pub window_months: u32,
    pub min_count: usize,
}

/// One declarative criterion config file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriterionSpec {
    pub id: String,
    pub strategy: StrategyKind,
    pub terms: Option<PathBuf>,
    pub sections: Option<Vec<String>>,
    pub window_months: Option<u32>,
    pub analyte: Option<String>,
    pub lab_patterns: Option<PathBuf>,
    pub mode: Option<String>,
    pub threshold_value: Option<f64>,
    pub range: Option<[f64; 2]>,
    pub rules: Option<PathBuf>,
    pub default_met: Option<bool>,
    pub decision_threshold: Option<f64>,
    pub model: Option<PathBuf>,
    pub probability_threshold: Option<f64>,
    pub advanced_cad: Option<CadSpec>,
}

impl CriterionSpec {
    pub fn from_file(path: &Path) -> Result<CriterionSpec, CriterionError> {
        let text = std::fs::read_to_string(path).map_err(|e| CriterionError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        toml::from_str(&text).map_err(|e| CriterionError::BadConfig {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }
}

/// Assets shared across criteria for one pipeline run.
pub struct SharedAssets {
    pub cues: Vec<ContextCue>,
    pub titles: Vec<SectionTitle>,
    pub variants: VariantLexicon,
    pub sets: Vec<NamedSet>,
    pub embeddings: Option<Arc<EmbeddingModel>>,
}

/// A criterion with all its assets resolved and compiled.
pub enum LoadedCriterion {
    Terminology {
        id: String,
        matcher: TermMatcher,
        options: TerminologyOptions,
    },
    Lab {
        id: String,
        patterns: Vec<AnalytePattern>,
        analyte: String,
        mode: LabMode,
    },
    WeightedRules {
        id: String,
        engine: RuleEngine,
        default_met: bool,
        threshold: f64,
    },
    Weak {
        id: String,
        model: WeakModel,
    },
    Composite {
        id: String,
        cad: Box<CompiledCad>,
    },
}

impl LoadedCriterion {
    pub fn id(&self) -> &str {
        match self {
            LoadedCriterion::Terminology { id, .. }
            | LoadedCriterion::Lab { id, .. }
            | LoadedCriterion::WeightedRules { id, .. }
            | LoadedCriterion::Weak { id, .. }
            | LoadedCriterion::Composite { id, .. } => id,
        }
    }
}

fn validate_sections(
    id: &str,
    names: &[String],
    titles: &[SectionTitle],
) -> Result<BTreeSet<String>, CriterionError> {
    let known: BTreeSet<&str> = titles.iter().map(|t| t.normalized_text.as_str()).collect();
    let mut out = BTreeSet::new();
    for name in names {
        let normalized = name.trim().to_lowercase();
        if !known.contains(normalized.as_str()) {
            return Err(CriterionError::UnknownSection {
                id: id.to_string(),
                section: name.clone(),
            });
        }
        out.insert(normalized);
    }
    Ok(out)
}

fn require<T: Clone>(
    field: &Option<T>,
    id: &str,
    name: &'static str,
    strategy: &'static str,
) -> Result<T, CriterionError> {
    field.clone().ok_or(CriterionError::MissingField {
        id: id.to_string(),
        field: name,
        strategy,
    })
}

/// Resolves and compiles one criterion; paths are relative to `base_dir`.
pub fn load_criterion(
    spec: &CriterionSpec,
    base_dir: &Path,
    shared: &SharedAssets,
) -> Result<LoadedCriterion, CriterionError> {
    let resolve = |p: &PathBuf| -> PathBuf {
        if p.is_absolute() {
            p.clone()
        } else {
            base_dir.join(p)
        }
    };
    let id = spec.id.clone();
    match spec.strategy {
        StrategyKind::Terminology => {
            let terms_path = resolve(&require(&spec.terms, &id, "terms", "terminology")?);
            let entries = load_term_file(&terms_path)?;
            let matcher = TermMatcher::new(&entries, &shared.variants)?;
            let section_allowlist = match &spec.sections {
                Some(names) => Some(validate_sections(&id, names, &shared.titles)?),
                None => None,
            };
            Ok(LoadedCriterion::Terminology {
                id,
                matcher,
                options: TerminologyOptions {
                    section_allowlist,
                    window_months: spec.window_months,
                },
            })
        }
        StrategyKind::LabThreshold => {
            let patterns_path =
                resolve(&require(&spec.lab_patterns, &id, "lab_patterns", "lab_threshold")?);
            let patterns = load_lab_patterns(&patterns_path)?;
            let analyte = require(&spec.analyte, &id, "analyte", "lab_threshold")?;
            let mode_name = require(&spec.mode, &id, "mode", "lab_threshold")?;
            let mode = match mode_name.as_str() {
                "greater_than" => LabMode::GreaterThan(require(
                    &spec.threshold_value,
                    &id,
                    "threshold_value",
                    "lab_threshold",
                )?),
                "in_range" => {
                    let r = require(&spec.range, &id, "range", "lab_threshold")?;
                    LabMode::InRange(r[0], r[1])
                }
                other => {
                    return Err(CriterionError::BadConfig {
                        path: id.clone(),
                        reason: format!("unknown lab mode {other:?}"),
                    })
                }
            };
            Ok(LoadedCriterion::Lab {
                id,
                patterns,
                analyte,
                mode,
            })
        }
        StrategyKind::WeightedRules => {
            let rules_path = resolve(&require(&spec.rules, &id, "rules", "weighted_rules")?);
            let entries = load_rule_file(&rules_path).map_err(|source| CriterionError::Rule {
                id: id.clone(),
                source,
            })?;
            let engine = compile_rules(&entries, &shared.sets).map_err(|source| {
                CriterionError::Rule {
                    id: id.clone(),
                    source,
                }
            })?;
            Ok(LoadedCriterion::WeightedRules {
                id,
                engine,
                default_met: require(&spec.default_met, &spec.id, "default_met", "weighted_rules")?,
                threshold: spec.decision_threshold.unwrap_or(0.0),
            })
        }
        StrategyKind::WeakSupervised => {
            let model_path = resolve(&require(&spec.model, &id, "model", "weak_supervised")?);
            let model = crate::learn::persist::load_weak_model(
                &model_path,
                shared.embeddings.clone(),
            )
            .map_err(|source| CriterionError::Learn {
                id: id.clone(),
                source,
            })?;
            Ok(LoadedCriterion::Weak { id, model })
        }
        StrategyKind::Composite => {
            let cad_spec = require(&spec.advanced_cad, &id, "advanced_cad", "composite")?;
            let med_set = shared
                .sets
                .iter()
                .find(|s| s.name == cad_spec.med_set)
                .cloned()
                .ok_or_else(|| CriterionError::UnknownNamedSet {
                    id: id.clone(),
                    set: cad_spec.med_set.clone(),
                })?;
            let config = AdvancedCadConfig {
                med_set,
                med_sections: validate_sections(&id, &cad_spec.med_sections, &shared.titles)?
                    .into_iter()
                    .collect(),
                mi_terms: load_term_file(&resolve(&cad_spec.mi_terms))?,
                angina_terms: load_term_file(&resolve(&cad_spec.angina_terms))?,
                ischemia_terms: load_term_file(&resolve(&cad_spec.ischemia_terms))?,
                organ_veto: cad_spec
                    .organ_veto
                    .iter()
                    .map(|w| w.to_lowercase())
                    .collect(),
                mi_excluded_sections: cad_spec
                    .mi_excluded_sections
                    .iter()
                    .map(|s| s.to_lowercase())
                    .collect(),
                window_months: cad_spec.window_months,
                min_count: cad_spec.min_count,
            };
            let cad = CompiledCad::new(config, &shared.variants)?;
            Ok(LoadedCriterion::Composite {
                id,
                cad: Box::new(cad),
            })
        }
    }
}

/// Lowercased token stream of the whole record, in document order.
pub fn record_tokens(record: &PatientRecord) -> Vec<String> {
    record
        .documents
        .iter()
        .flat_map(|d| d.sentences.iter())
        .flat_map(|s| s.tokens.iter())
        .map(|t| t.lower.clone())
        .collect()
}

/// Evaluates one loaded criterion on one patient.
pub fn evaluate(
    criterion: &LoadedCriterion,
    record: &PatientRecord,
    shared: &SharedAssets,
) -> Result<Decision, CriterionError> {
    match criterion {
        LoadedCriterion::Terminology {
            id,
            matcher,
            options,
        } => Ok(eval_terminology(
            record,
            matcher,
            &shared.cues,
            &shared.titles,
            options,
            id,
        )),
        LoadedCriterion::Lab {
            id,
            patterns,
            analyte,
            mode,
        } => Ok(eval_lab(record, patterns, analyte, *mode, id)),
        LoadedCriterion::WeightedRules {
            id,
            engine,
            default_met,
            threshold,
        } => {
            let matches = scan_patient(engine, record, &shared.cues);
            let (label, score) = weighted_decision(&matches, *default_met, *threshold);
            Ok(Decision {
                patient_id: record.patient_id.clone(),
                criterion_id: id.clone(),
                met: label == Label::Met,
                score: Some(score),
                evidence: matches.into_iter().map(Evidence::Rule).collect(),
            })
        }
        LoadedCriterion::Weak { id, model } => {
            let tokens = record_tokens(record);
            let (met, score) = match model {
                WeakModel::Stacked { model, threshold } => {
                    let p = model.predict_proba(&tokens).map_err(|source| {
                        CriterionError::Learn {
                            id: id.clone(),
                            source,
                        }
                    })?;
                    (p > *threshold, p)
                }
                WeakModel::Forest { vectorizer, model } => {
                    let x = vectorizer.vectorize(&tokens);
                    let (_, positive) = model.votes(&x);
                    (
                        model.predict(&x),
                        positive as f64 / model.trees.len().max(1) as f64,
                    )
                }
            };
            Ok(Decision {
                patient_id: record.patient_id.clone(),
                criterion_id: id.clone(),
                met,
                score: Some(score),
                evidence: Vec::new(),
            })
        }
        LoadedCriterion::Composite { id, cad } => Ok(eval_advanced_cad(
            record,
            cad,
            &shared.cues,
            &shared.titles,
            id,
        )),
    }
}

/// Evaluates every criterion independently; per-criterion failures are
/// collected without aborting the rest.
pub fn evaluate_all(
    record: &PatientRecord,
    criteria: &[LoadedCriterion],
    shared: &SharedAssets,
) -> (Vec<Decision>, Vec<(String, CriterionError)>) {
    let mut decisions = Vec::new();
    let mut errors = Vec::new();
    for criterion in criteria {
        match evaluate(criterion, record, shared) {
            Ok(d) => decisions.push(d),
            Err(e) => errors.push((criterion.id().to_string(), e)),
        }
    }
    (decisions, errors)
}

/// Writes `<patient>\t<criterion>\t<met|notmet>\t<score|->\t<evidence_count>`.
pub fn write_decisions(out: &mut dyn Write, decisions: &[Decision]) -> std::io::Result<()> {
    for d in decisions {
        let score = d
            .score
            .map(|s| format!("{s:.4}"))
            .unwrap_or_else(|| "-".to_string());
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            d.patient_id,
            d.criterion_id,
            d.label().as_str(),
            score,
            d.evidence.len()
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, SplitterConfig};
    use chrono::NaiveDate;

    fn shared() -> SharedAssets {
        SharedAssets {
            cues: crate::context::parse_cues("negation\tpre\t6\tdenies\n", "test").unwrap(),
            titles: vec![SectionTitle {
                normalized_text: "medications".into(),
                document_frequency: 0.5,
            }],
            variants: VariantLexicon::default(),
            sets: vec![NamedSet {
                name: "LANGUAGES".into(),
                members: vec!["spanish".into(), "russian".into()],
            }],
            embeddings: None,
        }
    }

    fn record(text: &str) -> PatientRecord {
        PatientRecord {
            patient_id: "p1".into(),
            documents: vec![Document::new(
                "d1",
                "p1",
                NaiveDate::from_ymd_opt(2093, 6, 15).unwrap(),
                text,
                &SplitterConfig::default(),
            )],
            gold_labels: None,
        }
    }

    fn write_spec(dir: &Path, name: &str, body: &str) -> PathBuf {
        let path = dir.join(name);
        std::fs::write(&path, body).unwrap();
        path
    }

    #[test]
    fn terminology_spec_loads_and_evaluates() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("terms.tsv"), "cholecystectomy\t-\tinclude\n").unwrap();
        let spec_path = write_spec(
            dir.path(),
            "abdominal.toml",
            "id = \"ABDOMINAL\"\nstrategy = \"terminology\"\nterms = \"terms.tsv\"\n",
        );
        let spec = CriterionSpec::from_file(&spec_path).unwrap();
        let loaded = load_criterion(&spec, dir.path(), &shared()).unwrap();
        let d = evaluate(&loaded, &record("s/p cholecystectomy"), &shared()).unwrap();
        assert!(d.met);
    }

    #[test]
    fn unknown_section_reference_is_load_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("terms.tsv"), "calcium\t-\tinclude\n").unwrap();
        let spec_path = write_spec(
            dir.path(),
            "ds.toml",
            "id = \"DIET-SUPP\"\nstrategy = \"terminology\"\nterms = \"terms.tsv\"\nsections = [\"nonexistent section\"]\n",
        );
        let spec = CriterionSpec::from_file(&spec_path).unwrap();
        let err = match load_criterion(&spec, dir.path(), &shared()) {
            Err(e) => e,
            Ok(_) => panic!("expected unknown-section error"),
        };
        assert!(matches!(err, CriterionError::UnknownSection { .. }));
    }

    #[test]
    fn weighted_rules_spec_default_met() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("english.tsv"),
            "en-neg-1\tnegative\t1.0\tfalse\tspeaks only {LANGUAGES}\n",
        )
        .unwrap();
        let spec_path = write_spec(
            dir.path(),
            "english.toml",
            "id = \"ENGLISH\"\nstrategy = \"weighted_rules\"\nrules = \"english.tsv\"\ndefault_met = true\n",
        );
        let spec = CriterionSpec::from_file(&spec_path).unwrap();
        let loaded = load_criterion(&spec, dir.path(), &shared()).unwrap();
        // No matches: defaults to met.
        let d = evaluate(&loaded, &record("pleasant visit today"), &shared()).unwrap();
        assert!(d.met);
        let d = evaluate(&loaded, &record("patient speaks only russian"), &shared()).unwrap();
        assert!(!d.met);
    }

    #[test]
    fn lab_spec_modes() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("lab.tsv"),
            "creatinine\tcreatinine,cr\tclearance\tmg/dl\n",
        )
        .unwrap();
        let spec_path = write_spec(
            dir.path(),
            "creat.toml",
            "id = \"CREATININE\"\nstrategy = \"lab_threshold\"\nlab_patterns = \"lab.tsv\"\nanalyte = \"creatinine\"\nmode = \"greater_than\"\nthreshold_value = 1.5\n",
        );
        let spec = CriterionSpec::from_file(&spec_path).unwrap();
        let loaded = load_criterion(&spec, dir.path(), &shared()).unwrap();
        assert!(evaluate(&loaded, &record("creatinine 1.7"), &shared()).unwrap().met);
        assert!(!evaluate(&loaded, &record("creatinine 1.2"), &shared()).unwrap().met);
    }

    #[test]
    fn missing_field_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let spec_path = write_spec(
            dir.path(),
            "bad.toml",
            "id = \"X\"\nstrategy = \"terminology\"\n",
        );
        let spec = CriterionSpec::from_file(&spec_path).unwrap();
        let err = match load_criterion(&spec, dir.path(), &shared()) {
            Err(e) => e,
            Ok(_) => panic!("expected missing-field error"),
        };
        assert!(matches!(err, CriterionError::MissingField { field: "terms", .. }));
    }

    #[test]
    fn evaluate_all_isolates_and_permutes() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("terms.tsv"), "cholecystectomy\t-\tinclude\n").unwrap();
        std::fs::write(
            dir.path().join("lab.tsv"),
            "hba1c\thba1c\t-\t%\n",
        )
        .unwrap();
        let shared = shared();
        let spec_a = CriterionSpec::from_file(&write_spec(
            dir.path(),
            "a.toml",
            "id = \"ABDOMINAL\"\nstrategy = \"terminology\"\nterms = \"terms.tsv\"\n",
        ))
        .unwrap();
        let spec_b = CriterionSpec::from_file(&write_spec(
            dir.path(),
            "b.toml",
            "id = \"HBA1C\"\nstrategy = \"lab_threshold\"\nlab_patterns = \"lab.tsv\"\nanalyte = \"hba1c\"\nmode = \"in_range\"\nrange = [6.5, 9.5]\n",
        ))
        .unwrap();
        let mut loaded = vec![
            load_criterion(&spec_a, dir.path(), &shared).unwrap(),
            load_criterion(&spec_b, dir.path(), &shared).unwrap(),
        ];
        let r = record("s/p cholecystectomy. HbA1c 7.2% today.");
        let (decisions, errors) = evaluate_all(&r, &loaded, &shared);
        assert_eq!(decisions.len(), 2);
        assert!(errors.is_empty());
        assert!(decisions.iter().all(|d| d.met));
        // Criterion order permutes decisions identically.
        loaded.reverse();
        let (swapped, _) = evaluate_all(&r, &loaded, &shared);
        assert_eq!(swapped[0].criterion_id, "HBA1C");
        assert_eq!(swapped[1].criterion_id, "ABDOMINAL");
        assert!(swapped.iter().all(|d| d.met));
    }

    #[test]
    fn decision_tsv_format() {
        let d = Decision {
            patient_id: "p1".into(),
            criterion_id: "HBA1C".into(),
            met: true,
            score: Some(1.0),
            evidence: Vec::new(),
        };
        let mut buf = Vec::new();
        write_decisions(&mut buf, &[d]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "p1\tHBA1C\tmet\t1.0000\t0\n");
    }
}
