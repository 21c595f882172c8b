//! Deterministic synthetic corpus generator: patients with 2-5 dated notes,
//! planted evidence consistent with the emitted gold labels, and decoys
//! (negated, family, wrong-section, out-of-window) for not-met patients.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use chrono::{Datelike, Months, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::io_util::write_atomic;

pub const KNOWN_CRITERIA: &[&str] = &[
    "ABDOMINAL",
    "ADVANCED-CAD",
    "ALCOHOL-ABUSE",
    "ASP-FOR-MI",
    "CREATININE",
    "DIET-SUPP",
    "DRUG-ABUSE",
    "ENGLISH",
    "HBA1C",
    "KETO-1YR",
    "MAJOR-DIABETES",
    "MAKES-DECISION",
    "MI-6MOS",
];

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub n_unlabeled: usize,
    /// Unlabeled patients planted with both polarities for the weak criteria;
    /// the silver builder must drop all of them.
    #[serde(default)]
    pub n_conflict: usize,
    /// When set, met evidence for the weak criteria comes only from the
    /// paraphrase pools (none of the seed rules fire on it).
    #[serde(default)]
    pub paraphrase_only_positives: bool,
    pub distractors: Vec<String>,
    pub med_distractors: Vec<String>,
    pub lab_distractors: Vec<String>,
    #[serde(default)]
    pub imaging_distractors: Vec<String>,
    /// Medication lines carrying planted misspellings of common drug names.
    #[serde(default)]
    pub typo_lines: Vec<String>,
    pub criteria: Vec<CriterionTemplates>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriterionTemplates {
    pub id: String,
    pub prior: f64,
    /// Prior used for the unlabeled corpus; defaults to `prior`.
    #[serde(default)]
    pub unlabeled_prior: Option<f64>,
    #[serde(default)]
    pub met: Vec<Planted>,
    #[serde(default)]
    pub paraphrase: Vec<Planted>,
    #[serde(default)]
    pub topic: Vec<Planted>,
    #[serde(default)]
    pub notmet: Vec<Planted>,
    #[serde(default)]
    pub decoys: Vec<Planted>,
    /// Chance a met patient receives explicit met evidence (default 1.0;
    /// below 1.0 exercises default-class criteria).
    #[serde(default)]
    pub met_rate: Option<f64>,
    /// Chance a not-met patient receives explicit not-met evidence.
    #[serde(default)]
    pub notmet_rate: Option<f64>,
    #[serde(default)]
    pub decoy_rate: Option<f64>,
    /// Plant decoys on met patients instead (traps for the negative rules of
    /// default-met criteria).
    #[serde(default)]
    pub decoys_on_met: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Planted {
    pub text: String,
    #[serde(default)]
    pub section: Option<String>,
    /// Must land in the latest document (inside every recency window).
    #[serde(default)]
    pub recent: bool,
    /// Must land in the oldest document (outside the recency windows).
    #[serde(default)]
    pub old: bool,
    /// Pool substituted for "{VALUE}" in the text.
    #[serde(default)]
    pub values: Vec<String>,
    /// Sub-criterion grouping used by the ADVANCED-CAD assembler.
    #[serde(default)]
    pub group: String,
}

pub fn load_generator_spec(path: &Path) -> Result<GeneratorSpec> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read generator config {}", path.display()))?;
    let spec: GeneratorSpec = toml::from_str(&text)
        .with_context(|| format!("cannot parse generator config {}", path.display()))?;
    for c in &spec.criteria {
        if !KNOWN_CRITERIA.contains(&c.id.as_str()) {
            bail!("generator template references unknown criterion {:?}", c.id);
        }
    }
    Ok(spec)
}

const SECTION_ORDER: &[&str] = &["HISTORY", "MEDICATIONS", "LABS", "ASSESSMENT", "HEAD IMAGING"];

struct DocDraft {
    date: NaiveDate,
    preamble: Vec<String>,
    sections: BTreeMap<&'static str, Vec<String>>,
    has_imaging: bool,
}

struct PatientDraft {
    docs: Vec<DocDraft>,
}

impl PatientDraft {
    fn render(&self) -> String {
        let mut out = String::new();
        for (i, doc) in self.docs.iter().enumerate() {
            if i > 0 {
                out.push_str("********************\n");
            }
            out.push_str(&format!("Record date: {}\n\n", doc.date.format("%Y-%m-%d")));
            for line in &doc.preamble {
                out.push_str(line);
                out.push('\n');
            }
            out.push('\n');
            for &name in SECTION_ORDER {
                if name == "HEAD IMAGING" && !doc.has_imaging {
                    continue;
                }
                let lines = doc.sections.get(name).cloned().unwrap_or_default();
                if name == "HEAD IMAGING" && lines.is_empty() {
                    continue;
                }
                out.push_str(name);
                out.push_str(":\n");
                for line in &lines {
                    out.push_str(line);
                    out.push('\n');
                }
                out.push('\n');
            }
        }
        out
    }
}

fn section_key(name: &str) -> &'static str {
    match name.to_uppercase().as_str() {
        "HISTORY" => "HISTORY",
        "MEDICATIONS" => "MEDICATIONS",
        "LABS" => "LABS",
        "ASSESSMENT" => "ASSESSMENT",
        "HEAD IMAGING" => "HEAD IMAGING",
        other => panic!("template references unknown section {other:?}"),
    }
}

/// Drops a planted sentence into the right document and section.
fn place(patient: &mut PatientDraft, planted: &Planted, rng: &mut ChaCha8Rng) {
    let n = patient.docs.len();
    let doc_idx = if planted.recent {
        n - 1
    } else if planted.old {
        0
    } else {
        rng.gen_range(0..n)
    };
    let mut text = planted.text.clone();
    if text.contains("{VALUE}") {
        let value = planted
            .values
            .choose(rng)
            .expect("template with {VALUE} needs a values pool");
        text = text.replace("{VALUE}", value);
    }
    if text.contains("{OLDYEAR}") {
        let now_year = patient.docs[n - 1].date.year();
        let year = now_year - rng.gen_range(2..=4) as i32;
        text = text.replace("{OLDYEAR}", &year.to_string());
    }
    let section = section_key(planted.section.as_deref().unwrap_or("ASSESSMENT"));
    let doc = &mut patient.docs[doc_idx];
    if section == "HEAD IMAGING" {
        doc.has_imaging = true;
    }
    doc.sections.entry(section).or_default().push(text);
}

fn new_patient(rng: &mut ChaCha8Rng, spec: &GeneratorSpec) -> PatientDraft {
    let year = 2090 + rng.gen_range(0..4);
    let month = rng.gen_range(1..=12);
    let day = rng.gen_range(1..=28);
    let now = NaiveDate::from_ymd_opt(year, month, day).expect("day <= 28");
    let n_docs: usize = rng.gen_range(2..=5);
    // Oldest document sits well outside the 2- and 6-month windows.
    let mut offsets_months: Vec<u32> = vec![rng.gen_range(9..=14)];
    for _ in 0..n_docs.saturating_sub(2) {
        offsets_months.push(rng.gen_range(1..=8));
    }
    offsets_months.push(0);
    offsets_months.sort_unstable_by(|a, b| b.cmp(a));
    let mut docs = Vec::new();
    for offset in offsets_months {
        let date = now
            .checked_sub_months(Months::new(offset))
            .expect("date in range");
        let mut sections: BTreeMap<&'static str, Vec<String>> = BTreeMap::new();
        for &name in &["HISTORY", "ASSESSMENT"] {
            let mut lines = Vec::new();
            for _ in 0..rng.gen_range(1..=3) {
                lines.push(spec.distractors.choose(rng).unwrap().clone());
            }
            sections.insert(name, lines);
        }
        let mut meds = Vec::new();
        for _ in 0..rng.gen_range(2..=4) {
            meds.push(spec.med_distractors.choose(rng).unwrap().clone());
        }
        if !spec.typo_lines.is_empty() && rng.gen_bool(0.35) {
            meds.push(spec.typo_lines.choose(rng).unwrap().clone());
        }
        sections.insert("MEDICATIONS", meds);
        let mut labs = Vec::new();
        for _ in 0..rng.gen_range(1..=3) {
            labs.push(spec.lab_distractors.choose(rng).unwrap().clone());
        }
        sections.insert("LABS", labs);
        let has_imaging = !spec.imaging_distractors.is_empty() && rng.gen_bool(0.15);
        let mut imaging = Vec::new();
        if has_imaging {
            imaging.push(spec.imaging_distractors.choose(rng).unwrap().clone());
        }
        sections.insert("HEAD IMAGING", imaging);
        docs.push(DocDraft {
            date,
            preamble: vec![spec.distractors.choose(rng).unwrap().clone()],
            sections,
            has_imaging,
        });
    }
    PatientDraft { docs }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SplitRole {
    /// Gold train/test corpora: weak-criterion positives may use paraphrases.
    Gold,
    /// Silver source: weak-criterion positives use seed-rule phrases only.
    Unlabeled,
}

fn pick<'a>(pool: &'a [Planted], rng: &mut ChaCha8Rng) -> &'a Planted {
    pool.choose(rng).expect("non-empty template pool")
}

fn plant_generic(
    patient: &mut PatientDraft,
    tpl: &CriterionTemplates,
    met: bool,
    rng: &mut ChaCha8Rng,
) {
    let decoy_rate = tpl.decoy_rate.unwrap_or(0.5);
    if met {
        if rng.gen_bool(tpl.met_rate.unwrap_or(1.0)) {
            let n = if tpl.met.len() > 1 && rng.gen_bool(0.3) { 2 } else { 1 };
            for _ in 0..n {
                let planted = pick(&tpl.met, rng).clone();
                place(patient, &planted, rng);
            }
        }
        if tpl.decoys_on_met && !tpl.decoys.is_empty() && rng.gen_bool(decoy_rate) {
            place(patient, pick(&tpl.decoys, rng), rng);
        }
    } else {
        if !tpl.notmet.is_empty() && rng.gen_bool(tpl.notmet_rate.unwrap_or(0.6)) {
            place(patient, pick(&tpl.notmet, rng), rng);
        }
        if !tpl.decoys_on_met && !tpl.decoys.is_empty() && rng.gen_bool(decoy_rate) {
            place(patient, pick(&tpl.decoys, rng), rng);
        }
    }
}

/// Recent-MI planting: the out-of-window remote-MI decoy also reads as an MI
/// history, so it only lands on patients already met for ADVANCED-CAD.
fn plant_mi_6mos(
    patient: &mut PatientDraft,
    tpl: &CriterionTemplates,
    met: bool,
    cad_met: bool,
    rng: &mut ChaCha8Rng,
) {
    if met {
        if rng.gen_bool(tpl.met_rate.unwrap_or(1.0)) {
            place(patient, pick(&tpl.met, rng), rng);
        }
        return;
    }
    let (old_mi, safe): (Vec<&Planted>, Vec<&Planted>) =
        tpl.decoys.iter().partition(|p| p.group == "old-mi");
    let decoy_rate = tpl.decoy_rate.unwrap_or(0.5);
    if !safe.is_empty() && rng.gen_bool(decoy_rate) {
        place(patient, safe[rng.gen_range(0..safe.len())], rng);
    }
    if cad_met && !old_mi.is_empty() && rng.gen_bool(0.4) {
        place(patient, old_mi[rng.gen_range(0..old_mi.len())], rng);
    }
}

fn plant_weak(
    patient: &mut PatientDraft,
    tpl: &CriterionTemplates,
    met: bool,
    role: SplitRole,
    paraphrase_only: bool,
    conflict: bool,
    rng: &mut ChaCha8Rng,
) {
    if conflict {
        place(patient, pick(&tpl.met, rng), rng);
        place(patient, pick(&tpl.notmet, rng), rng);
        return;
    }
    if met {
        let use_paraphrase = match role {
            SplitRole::Unlabeled => false,
            SplitRole::Gold => paraphrase_only || (!tpl.paraphrase.is_empty() && rng.gen_bool(0.4)),
        };
        let pool = if use_paraphrase { &tpl.paraphrase } else { &tpl.met };
        place(patient, pick(pool, rng), rng);
        for _ in 0..2 {
            if !tpl.topic.is_empty() {
                place(patient, pick(&tpl.topic, rng), rng);
            }
        }
    } else {
        if !tpl.notmet.is_empty() && rng.gen_bool(0.6) {
            place(patient, pick(&tpl.notmet, rng), rng);
        }
        if !tpl.decoys.is_empty() && rng.gen_bool(0.5) {
            place(patient, pick(&tpl.decoys, rng), rng);
        }
    }
}

/// Assembles ADVANCED-CAD evidence so exactly the intended number of
/// sub-criteria hold. The recent-MI label implies the MI-history
/// sub-criterion; a lone planted aspirin never reaches the two-medication
/// bar, so the meds group is always planted as a full pair.
fn plant_cad(
    patient: &mut PatientDraft,
    tpl: &CriterionTemplates,
    met: bool,
    mi6_met: bool,
    rng: &mut ChaCha8Rng,
) {
    let by_group = |group: &str| -> Vec<&Planted> {
        tpl.met.iter().filter(|p| p.group == group).collect()
    };
    let meds = by_group("med");
    let mi = by_group("mi");
    let angina = by_group("angina");
    let ischemia = by_group("ischemia");

    if met {
        let mut active = usize::from(mi6_met);
        let mut options: Vec<&str> = vec!["meds", "angina", "ischemia"];
        if !mi6_met {
            options.push("mi");
        }
        options.shuffle(rng);
        for option in options {
            if active >= 2 {
                break;
            }
            match option {
                "meds" => {
                    let mut chosen = meds.clone();
                    chosen.shuffle(rng);
                    for planted in chosen.into_iter().take(2) {
                        place(patient, planted, rng);
                    }
                }
                "mi" => place(patient, pick_ref(&mi, rng), rng),
                "angina" => place(patient, pick_ref(&angina, rng), rng),
                "ischemia" => place(patient, pick_ref(&ischemia, rng), rng),
                _ => unreachable!(),
            }
            active += 1;
        }
    } else {
        // At most one sub-criterion in total; a recent MI already counts.
        if !mi6_met && rng.gen_bool(0.5) {
            match *["mi", "angina", "ischemia"].choose(rng).unwrap() {
                "mi" => place(patient, pick_ref(&mi, rng), rng),
                "angina" => place(patient, pick_ref(&angina, rng), rng),
                _ => place(patient, pick_ref(&ischemia, rng), rng),
            }
        }
        if !tpl.decoys.is_empty() && rng.gen_bool(0.5) {
            place(patient, pick(&tpl.decoys, rng), rng);
        }
    }
}

fn pick_ref<'a>(pool: &[&'a Planted], rng: &mut ChaCha8Rng) -> &'a Planted {
    pool.choose(rng).expect("non-empty CAD template group")
}

/// Generates train/test/unlabeled corpora, gold label files, the unlabeled
/// ground-truth file, and the structured-codes file.
pub fn generate_corpus(spec: &GeneratorSpec, seed: u64, out_dir: &Path) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let templates: BTreeMap<&str, &CriterionTemplates> =
        spec.criteria.iter().map(|c| (c.id.as_str(), c)).collect();
    for &required in KNOWN_CRITERIA {
        if !templates.contains_key(required) {
            bail!("generator config is missing templates for {required}");
        }
    }

    let mut conflict_ids: Vec<usize> = (0..spec.n_unlabeled).collect();
    conflict_ids.shuffle(&mut rng);
    conflict_ids.truncate(spec.n_conflict);
    conflict_ids.sort_unstable();

    let mut train_labels = String::new();
    let mut test_labels = String::new();
    let mut unlabeled_truth = String::new();
    let mut codes = String::new();

    for (split, count, role) in [
        ("train", spec.n_train, SplitRole::Gold),
        ("test", spec.n_test, SplitRole::Gold),
        ("unlabeled", spec.n_unlabeled, SplitRole::Unlabeled),
    ] {
        let split_dir = out_dir.join(split);
        std::fs::create_dir_all(&split_dir)
            .with_context(|| format!("cannot create {}", split_dir.display()))?;
        for idx in 0..count {
            let patient_id = format!("{split}-{:04}", idx + 1);
            let mut patient = new_patient(&mut rng, spec);
            let is_conflict =
                role == SplitRole::Unlabeled && conflict_ids.binary_search(&idx).is_ok();

            // Draw all labels first; ADVANCED-CAD planting needs the aspirin
            // and recent-MI outcomes.
            let mut labels: BTreeMap<&str, bool> = BTreeMap::new();
            for &criterion in KNOWN_CRITERIA {
                let tpl = templates[criterion];
                let prior = match role {
                    SplitRole::Unlabeled => tpl.unlabeled_prior.unwrap_or(tpl.prior),
                    SplitRole::Gold => tpl.prior,
                };
                labels.insert(criterion, rng.gen_bool(prior.clamp(0.0, 1.0)));
            }

            for &criterion in KNOWN_CRITERIA {
                let tpl = templates[criterion];
                let met = labels[criterion];
                match criterion {
                    "ALCOHOL-ABUSE" | "DRUG-ABUSE" => plant_weak(
                        &mut patient,
                        tpl,
                        met,
                        role,
                        spec.paraphrase_only_positives,
                        is_conflict,
                        &mut rng,
                    ),
                    "ADVANCED-CAD" => plant_cad(
                        &mut patient,
                        tpl,
                        met,
                        labels["MI-6MOS"],
                        &mut rng,
                    ),
                    "MI-6MOS" => plant_mi_6mos(
                        &mut patient,
                        tpl,
                        met,
                        labels["ADVANCED-CAD"],
                        &mut rng,
                    ),
                    _ => plant_generic(&mut patient, tpl, met, &mut rng),
                }
            }

            write_atomic(
                &split_dir.join(format!("{patient_id}.txt")),
                patient.render().as_bytes(),
            )?;

            for &criterion in KNOWN_CRITERIA {
                let label = if labels[criterion] { "met" } else { "notmet" };
                match role {
                    SplitRole::Gold => {
                        let line = format!("{patient_id}\t{criterion}\t{label}\n");
                        if split == "train" {
                            train_labels.push_str(&line);
                        } else {
                            test_labels.push_str(&line);
                        }
                    }
                    SplitRole::Unlabeled => {
                        let truth = if is_conflict
                            && matches!(criterion, "ALCOHOL-ABUSE" | "DRUG-ABUSE")
                        {
                            "conflict"
                        } else {
                            label
                        };
                        unlabeled_truth.push_str(&format!("{patient_id}\t{criterion}\t{truth}\n"));
                    }
                }
            }

            // Structured codes for the unlabeled corpus; none are in the
            // ketoacidosis family, matching the all-negative setup.
            if role == SplitRole::Unlabeled && rng.gen_bool(0.3) {
                let pool = ["401.9", "272.4", "250.00", "530.81", "714.0"];
                let code = pool.choose(&mut rng).unwrap();
                let date = patient.docs.last().unwrap().date;
                codes.push_str(&format!("{patient_id}\t{code}\t{date}\n"));
            }
        }
    }

    write_atomic(&out_dir.join("train_labels.tsv"), train_labels.as_bytes())?;
    write_atomic(&out_dir.join("test_labels.tsv"), test_labels.as_bytes())?;
    write_atomic(
        &out_dir.join("unlabeled_truth.tsv"),
        unlabeled_truth.as_bytes(),
    )?;
    write_atomic(&out_dir.join("codes.tsv"), codes.as_bytes())?;
    Ok(())
}
