//! Challenge-style scoring: per-criterion precision/recall/F1 for the met
//! and not-met classes, with pooled micro and averaged macro rows. All
//! ratios are computed in exact rational arithmetic and converted to f64
//! only for reporting.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use thiserror::Error;

use crate::corpus::Label;

/// One gold or predicted (patient, criterion, label) triple.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledPair {
    pub patient_id: String,
    pub criterion_id: String,
    pub label: Label,
}

impl LabeledPair {
    pub fn new(patient_id: &str, criterion_id: &str, label: Label) -> LabeledPair {
        LabeledPair {
            patient_id: patient_id.to_string(),
            criterion_id: criterion_id.to_string(),
            label,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn support(&self) -> usize {
        self.tp + self.fn_
    }
}

#[derive(Debug, Clone)]
pub struct ClassMetrics {
    pub counts: ConfusionCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// No gold examples of this class existed (cf. a criterion with an empty
    /// met class, where 0/0 is reported as 0 and flagged).
    pub zero_support: bool,
}

#[derive(Debug, Clone)]
pub struct CriterionMetrics {
    pub criterion_id: String,
    pub met: ClassMetrics,
    pub not_met: ClassMetrics,
    /// Mean of the two class F1 scores.
    pub overall_f1: f64,
}

#[derive(Debug, Clone)]
pub struct OverallRow {
    pub met_precision: f64,
    pub met_recall: f64,
    pub met_f1: f64,
    pub notmet_precision: f64,
    pub notmet_recall: f64,
    pub notmet_f1: f64,
    pub overall_f1: f64,
}

#[derive(Debug, Clone)]
pub struct MetricsReport {
    /// Sorted by criterion id.
    pub criteria: Vec<CriterionMetrics>,
    /// Counts pooled across criteria per class.
    pub micro: OverallRow,
    /// Unweighted means across criteria.
    pub macro_: OverallRow,
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("missing predictions for {0:?}")]
    MissingPredictions(Vec<(String, String)>),
    #[error("duplicate predictions for {0:?}")]
    DuplicatePredictions(Vec<(String, String)>),
    #[error("no gold labels supplied")]
    EmptyGold,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed label line {line} in {path}")]
    MalformedLine { path: String, line: usize },
}

fn ratio(num: usize, den: usize) -> BigRational {
    if den == 0 {
        BigRational::zero()
    } else {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }
}

fn f1_of(p: &BigRational, r: &BigRational) -> BigRational {
    let sum = p + r;
    if sum.is_zero() {
        BigRational::zero()
    } else {
        BigRational::from(BigInt::from(2)) * p * r / sum
    }
}

fn to_f64(r: &BigRational) -> f64 {
    r.to_f64().expect("rational metrics fit in f64")
}

fn class_metrics(counts: ConfusionCounts) -> (ClassMetrics, BigRational, BigRational, BigRational) {
    let precision = ratio(counts.tp, counts.tp + counts.fp);
    let recall = ratio(counts.tp, counts.tp + counts.fn_);
    let f1 = f1_of(&precision, &recall);
    let metrics = ClassMetrics {
        counts,
        precision: to_f64(&precision),
        recall: to_f64(&recall),
        f1: to_f64(&f1),
        zero_support: counts.support() == 0,
    };
    (metrics, precision, recall, f1)
}

/// Scores predictions against gold labels. Every gold (patient, criterion)
/// pair must have exactly one prediction; extra predictions for pairs not in
/// the gold set are ignored.
pub fn score(gold: &[LabeledPair], predicted: &[LabeledPair]) -> Result<MetricsReport, EvalError> {
    if gold.is_empty() {
        return Err(EvalError::EmptyGold);
    }
    let mut predictions: BTreeMap<(&str, &str), Label> = BTreeMap::new();
    let mut duplicates = Vec::new();
    for p in predicted {
        let key = (p.patient_id.as_str(), p.criterion_id.as_str());
        if predictions.insert(key, p.label).is_some() {
            duplicates.push((p.patient_id.clone(), p.criterion_id.clone()));
        }
    }
    if !duplicates.is_empty() {
        duplicates.sort();
        duplicates.dedup();
        return Err(EvalError::DuplicatePredictions(duplicates));
    }
    let mut missing = Vec::new();
    let mut per_criterion: BTreeMap<&str, (ConfusionCounts, ConfusionCounts)> = BTreeMap::new();
    for g in gold {
        let key = (g.patient_id.as_str(), g.criterion_id.as_str());
        let Some(&pred) = predictions.get(&key) else {
            missing.push((g.patient_id.clone(), g.criterion_id.clone()));
            continue;
        };
        let entry = per_criterion.entry(g.criterion_id.as_str()).or_default();
        let (met, not_met) = entry;
        match (g.label, pred) {
            (Label::Met, Label::Met) => met.tp += 1,
            (Label::NotMet, Label::Met) => {
                met.fp += 1;
                not_met.fn_ += 1;
            }
            (Label::Met, Label::NotMet) => {
                met.fn_ += 1;
                not_met.fp += 1;
            }
            (Label::NotMet, Label::NotMet) => not_met.tp += 1,
        }
    }
    if !missing.is_empty() {
        missing.sort();
        missing.dedup();
        return Err(EvalError::MissingPredictions(missing));
    }

    let mut criteria = Vec::new();
    let mut pooled_met = ConfusionCounts::default();
    let mut pooled_not_met = ConfusionCounts::default();
    let mut macro_acc: Vec<BigRational> = vec![BigRational::zero(); 7];
    for (criterion_id, (met_counts, notmet_counts)) in &per_criterion {
        let (met, met_p, met_r, met_f1) = class_metrics(*met_counts);
        let (not_met, nm_p, nm_r, nm_f1) = class_metrics(*notmet_counts);
        let overall = (&met_f1 + &nm_f1) / BigRational::from(BigInt::from(2));
        pooled_met.tp += met_counts.tp;
        pooled_met.fp += met_counts.fp;
        pooled_met.fn_ += met_counts.fn_;
        pooled_not_met.tp += notmet_counts.tp;
        pooled_not_met.fp += notmet_counts.fp;
        pooled_not_met.fn_ += notmet_counts.fn_;
        for (acc, v) in macro_acc
            .iter_mut()
            .zip([&met_p, &met_r, &met_f1, &nm_p, &nm_r, &nm_f1, &overall])
        {
            *acc += v;
        }
        criteria.push(CriterionMetrics {
            criterion_id: criterion_id.to_string(),
            met,
            not_met,
            overall_f1: to_f64(&overall),
        });
    }

    let (_, mi_met_p, mi_met_r, mi_met_f1) = class_metrics(pooled_met);
    let (_, mi_nm_p, mi_nm_r, mi_nm_f1) = class_metrics(pooled_not_met);
    let micro_overall = (&mi_met_f1 + &mi_nm_f1) / BigRational::from(BigInt::from(2));
    let micro = OverallRow {
        met_precision: to_f64(&mi_met_p),
        met_recall: to_f64(&mi_met_r),
        met_f1: to_f64(&mi_met_f1),
        notmet_precision: to_f64(&mi_nm_p),
        notmet_recall: to_f64(&mi_nm_r),
        notmet_f1: to_f64(&mi_nm_f1),
        overall_f1: to_f64(&micro_overall),
    };

    let n = BigRational::from(BigInt::from(criteria.len() as i64));
    let macro_vals: Vec<f64> = macro_acc.iter().map(|acc| to_f64(&(acc / &n))).collect();
    let macro_ = OverallRow {
        met_precision: macro_vals[0],
        met_recall: macro_vals[1],
        met_f1: macro_vals[2],
        notmet_precision: macro_vals[3],
        notmet_recall: macro_vals[4],
        notmet_f1: macro_vals[5],
        overall_f1: macro_vals[6],
    };

    Ok(MetricsReport {
        criteria,
        micro,
        macro_,
    })
}

/// Simple percent agreement between two annotation sets over their common
/// (patient, criterion) pairs.
pub fn agreement(a: &[LabeledPair], b: &[LabeledPair]) -> Option<f64> {
    let index: BTreeMap<(&str, &str), Label> = a
        .iter()
        .map(|p| ((p.patient_id.as_str(), p.criterion_id.as_str()), p.label))
        .collect();
    let mut common = 0usize;
    let mut equal = 0usize;
    for p in b {
        if let Some(&label) = index.get(&(p.patient_id.as_str(), p.criterion_id.as_str())) {
            common += 1;
            if label == p.label {
                equal += 1;
            }
        }
    }
    (common > 0).then(|| equal as f64 / common as f64)
}

fn cell(value: f64, flagged: bool) -> String {
    if flagged {
        format!("{value:.4}*")
    } else {
        format!("{value:.4} ")
    }
}

/// Renders the report as a fixed-width table: one row per criterion, then
/// micro and macro rows. Deterministic byte-for-byte.
pub fn render_report(report: &MetricsReport) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{:<16} {:>5} {:>8} {:>8} {:>8} {:>5} {:>8} {:>8} {:>8} {:>8}",
        "criterion", "sup+", "P+", "R+", "F1+", "sup-", "P-", "R-", "F1-", "overall"
    )
    .unwrap();
    let mut any_zero_support = false;
    for c in &report.criteria {
        any_zero_support |= c.met.zero_support || c.not_met.zero_support;
        writeln!(
            out,
            "{:<16} {:>5} {:>8} {:>8} {:>8} {:>5} {:>8} {:>8} {:>8} {:>8}",
            c.criterion_id,
            c.met.counts.support(),
            cell(c.met.precision, c.met.zero_support),
            cell(c.met.recall, c.met.zero_support),
            cell(c.met.f1, c.met.zero_support),
            c.not_met.counts.support(),
            cell(c.not_met.precision, c.not_met.zero_support),
            cell(c.not_met.recall, c.not_met.zero_support),
            cell(c.not_met.f1, c.not_met.zero_support),
            format!("{:.4}", c.overall_f1),
        )
        .unwrap();
    }
    for (name, row) in [("micro", &report.micro), ("macro", &report.macro_)] {
        writeln!(
            out,
            "{:<16} {:>5} {:>8} {:>8} {:>8} {:>5} {:>8} {:>8} {:>8} {:>8}",
            name,
            "-",
            cell(row.met_precision, false),
            cell(row.met_recall, false),
            cell(row.met_f1, false),
            "-",
            cell(row.notmet_precision, false),
            cell(row.notmet_recall, false),
            cell(row.notmet_f1, false),
            format!("{:.4}", row.overall_f1),
        )
        .unwrap();
    }
    if any_zero_support {
        writeln!(out, "* zero-support class: metrics reported as 0").unwrap();
    }
    out
}

/// Loads a gold label TSV: `<patient>\t<criterion>\t<met|notmet>`.
pub fn load_gold_labels(path: &Path) -> Result<Vec<LabeledPair>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let label = (fields.len() == 3).then(|| Label::parse(fields[2])).flatten();
        match label {
            Some(label) => pairs.push(LabeledPair::new(fields[0], fields[1], label)),
            None => {
                return Err(EvalError::MalformedLine {
                    path: path.display().to_string(),
                    line: i + 1,
                })
            }
        }
    }
    Ok(pairs)
}
