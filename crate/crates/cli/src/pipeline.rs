//! Stage implementations: each subcommand reads its declared inputs, writes
//! its artifacts under the output directory, and is re-runnable.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;

use cohort_core::context::{load_cues, ContextCue};
use cohort_core::corpus::{ingest_corpus, Label, PatientRecord, SplitterConfig};
use cohort_core::criteria::{
    evaluate_all, load_criterion, record_tokens, write_decisions, CriterionSpec, Decision,
    Evidence, LoadedCriterion, SharedAssets,
};
use cohort_core::learn::persist::{save_weak_model, summarize, WeakModel};
use cohort_core::learn::{
    fit_tfidf, train_forest, train_stacked, EmbedLogReg, ForestConfig, LogRegConfig, SparseVec,
    TfidfConfig, TfidfLogReg,
};
use cohort_core::lexvar::{
    expand_variants, train_embeddings, EmbeddingConfig, EmbeddingModel, VariantLexicon,
};
use cohort_core::metrics::{load_gold_labels, render_report, score, LabeledPair};
use cohort_core::rules::{compile_rules, load_rule_file, load_set_file, NamedSet};
use cohort_core::sections::{load_titles, mine_section_titles, SectionTitle};
use cohort_core::silver::{
    build_silver, build_silver_from_codes, load_codes, merge_with_gold, write_silver_labels,
    ConflictPolicy, SilverLabel,
};

use crate::config::LoadedConfig;
use crate::io_util::{derive_seed, lineage_header, write_artifact, write_atomic, write_meta_sidecar};

pub struct Stage<'a> {
    pub loaded: &'a LoadedConfig,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl<'a> Stage<'a> {
    pub fn new(loaded: &'a LoadedConfig, seed: Option<u64>, out: Option<PathBuf>) -> Stage<'a> {
        Stage {
            out_dir: out.unwrap_or_else(|| loaded.out_dir()),
            seed: seed.unwrap_or(loaded.config.seed),
            loaded,
        }
    }

    fn hash(&self) -> &str {
        &self.loaded.config_hash
    }

    fn ingest(&self, dir: &Path) -> Result<(Vec<PatientRecord>, Vec<String>)> {
        let report = ingest_corpus(dir, &SplitterConfig::default())
            .with_context(|| format!("ingesting {}", dir.display()))?;
        let diagnostics = report.diagnostics.iter().map(|d| d.to_string()).collect();
        Ok((report.records, diagnostics))
    }

    fn corpus_dir(&self, which: &str) -> PathBuf {
        let c = &self.loaded.config.corpus;
        match which {
            "train" => self.loaded.resolve(&c.train),
            "test" => self.loaded.resolve(&c.test),
            _ => self.loaded.resolve(&c.unlabeled),
        }
    }
}

pub fn stage_ingest(stage: &Stage) -> Result<()> {
    let mut all_diagnostics = Vec::new();
    for which in ["train", "test", "unlabeled"] {
        let (records, mut diagnostics) = stage.ingest(&stage.corpus_dir(which))?;
        let docs: usize = records.iter().map(|r| r.documents.len()).sum();
        println!("ingest {which}: {} patients, {} documents", records.len(), docs);
        all_diagnostics.append(&mut diagnostics);
    }
    for d in &all_diagnostics {
        eprintln!("{d}");
    }
    write_artifact(
        &stage.out_dir.join("ingest_diagnostics.txt"),
        stage.hash(),
        stage.seed,
        &(all_diagnostics.join("\n") + "\n"),
    )
}

pub fn stage_mine_sections(stage: &Stage) -> Result<()> {
    let (mut docs_corpus, _) = stage.ingest(&stage.corpus_dir("train"))?;
    let (unlabeled, _) = stage.ingest(&stage.corpus_dir("unlabeled"))?;
    docs_corpus.extend(unlabeled);
    let documents: Vec<_> = docs_corpus
        .iter()
        .flat_map(|r| r.documents.iter().cloned())
        .collect();
    let titles = mine_section_titles(
        &documents,
        stage.loaded.config.sections.min_doc_frequency,
    )?;
    println!("mine-sections: {} titles retained", titles.len());
    let mut body = String::new();
    for t in &titles {
        body.push_str(&format!("{:.6}\t{}\n", t.document_frequency, t.normalized_text));
    }
    write_artifact(
        &stage.out_dir.join("sections.tsv"),
        stage.hash(),
        stage.seed,
        &body,
    )
}

fn corpus_tokens(records: &[PatientRecord]) -> Vec<String> {
    records.iter().flat_map(record_tokens).collect()
}

pub fn stage_train_embeddings(stage: &Stage) -> Result<()> {
    let (unlabeled, _) = stage.ingest(&stage.corpus_dir("unlabeled"))?;
    let tokens = corpus_tokens(&unlabeled);
    let e = &stage.loaded.config.embeddings;
    let config = EmbeddingConfig {
        dim: e.dim,
        window: e.window,
        negatives: e.negatives,
        epochs: e.epochs,
        min_count: e.min_count,
        learning_rate: e.learning_rate,
        min_tokens: e.min_tokens,
        seed: derive_seed(stage.seed, "embeddings"),
    };
    let model = train_embeddings(&tokens, &config)?;
    println!(
        "train-embeddings: |V|={} d={} tokens={}",
        model.vocab_size(),
        model.dim(),
        tokens.len()
    );
    let bin_path = stage.out_dir.join("embeddings.bin");
    std::fs::create_dir_all(&stage.out_dir)?;
    model.save(&bin_path)?;
    write_meta_sidecar(&bin_path, stage.hash(), stage.seed)?;
    model.export_text(&stage.out_dir.join("embeddings.txt"))?;
    Ok(())
}

/// Every word of every included term surface referenced by the criterion
/// configs, plus the CAD medication set members.
fn collect_term_words(stage: &Stage) -> Result<Vec<String>> {
    let mut words: Vec<String> = Vec::new();
    let mut push_surface = |surface: &str| {
        for token in cohort_core::corpus::tokenize(surface) {
            if token.lower.chars().any(|c| c.is_alphabetic()) {
                words.push(token.lower);
            }
        }
    };
    for spec_path in &stage.loaded.config.assets.criteria {
        let spec = CriterionSpec::from_file(&stage.loaded.resolve(spec_path))?;
        let spec_dir = stage
            .loaded
            .resolve(spec_path)
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let mut term_files: Vec<PathBuf> = Vec::new();
        if let Some(t) = &spec.terms {
            term_files.push(t.clone());
        }
        if let Some(cad) = &spec.advanced_cad {
            term_files.extend([
                cad.mi_terms.clone(),
                cad.angina_terms.clone(),
                cad.ischemia_terms.clone(),
            ]);
        }
        for file in term_files {
            let full = if file.is_absolute() { file } else { spec_dir.join(file) };
            for entry in cohort_core::criteria::load_term_file(&full)? {
                if !entry.excluded {
                    push_surface(&entry.surface);
                }
            }
        }
    }
    let sets = load_set_file(&stage.loaded.resolve(&stage.loaded.config.assets.sets))?;
    for set in &sets {
        if set.name == "CAD_MEDS" {
            for member in &set.members {
                push_surface(member);
            }
        }
    }
    words.sort();
    words.dedup();
    Ok(words)
}

pub fn stage_expand_variants(stage: &Stage) -> Result<()> {
    let model = EmbeddingModel::load(&stage.out_dir.join("embeddings.bin"))
        .context("expand-variants needs out/embeddings.bin; run train-embeddings first")?;
    let words = collect_term_words(stage)?;
    let lexicon = expand_variants(&model, &words, stage.loaded.config.variants.neighbors);
    let n_variants: usize = lexicon.entries().map(|(_, v)| v.len()).sum();
    println!(
        "expand-variants: {} term words, {} variants",
        lexicon.len(),
        n_variants
    );
    let mut body = String::new();
    for (word, variants) in lexicon.entries() {
        let joined: Vec<&str> = variants.iter().map(|s| s.as_str()).collect();
        body.push_str(&format!("{word}\t{}\n", joined.join(",")));
    }
    write_artifact(
        &stage.out_dir.join("variants.tsv"),
        stage.hash(),
        stage.seed,
        &body,
    )
}

pub fn stage_build_silver(stage: &Stage) -> Result<()> {
    let (unlabeled, _) = stage.ingest(&stage.corpus_dir("unlabeled"))?;
    let cues = load_cues(&stage.loaded.resolve(&stage.loaded.config.assets.cues))?;
    let sets = load_set_file(&stage.loaded.resolve(&stage.loaded.config.assets.sets))?;
    for weak in &stage.loaded.config.weak {
        let labels = build_silver_for(stage, weak, &unlabeled, &cues, &sets)?;
        let met = labels.iter().filter(|l| l.label == Label::Met).count();
        println!(
            "build-silver {}: {} labels ({} met, {} notmet)",
            weak.criterion,
            labels.len(),
            met,
            labels.len() - met
        );
        let mut body = Vec::new();
        write_silver_labels(&mut body, &labels)?;
        let path = stage.out_dir.join("silver").join(format!("{}.tsv", weak.criterion));
        write_artifact(&path, stage.hash(), stage.seed, &String::from_utf8(body)?)?;

        // Audit dump of the rule evidence.
        let mut dump = Vec::new();
        for label in &labels {
            cohort_core::rules::write_match_dump(
                &mut dump,
                &label.patient_id,
                &label.criterion_id,
                &label.evidence,
            )?;
        }
        let dump_path = stage
            .out_dir
            .join("silver")
            .join(format!("{}.matches.tsv", weak.criterion));
        write_artifact(&dump_path, stage.hash(), stage.seed, &String::from_utf8(dump)?)?;
    }
    Ok(())
}

fn build_silver_for(
    stage: &Stage,
    weak: &crate::config::WeakConfig,
    unlabeled: &[PatientRecord],
    cues: &[ContextCue],
    sets: &[NamedSet],
) -> Result<Vec<SilverLabel>> {
    if let Some(rules_path) = &weak.rules {
        let entries = load_rule_file(&stage.loaded.resolve(rules_path))?;
        let engine = compile_rules(&entries, sets)?;
        Ok(build_silver(
            &engine,
            unlabeled,
            cues,
            &weak.criterion,
            ConflictPolicy::Drop,
        ))
    } else if let Some(codes_path) = &weak.codes {
        let codes = load_codes(&stage.loaded.resolve(codes_path))?;
        Ok(build_silver_from_codes(
            unlabeled,
            &codes,
            &weak.criterion,
            weak.code_prefix.as_deref().unwrap_or("250.1"),
            weak.code_window_months.unwrap_or(12),
            weak.max_negatives.unwrap_or(400),
            derive_seed(stage.seed, &format!("silver-{}", weak.criterion)),
        ))
    } else {
        bail!(
            "weak criterion {} needs either `rules` or `codes`",
            weak.criterion
        );
    }
}

/// Reads a silver TSV back as labels (evidence is not needed for training).
fn read_silver_file(path: &Path) -> Result<Vec<SilverLabel>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read silver labels {}", path.display()))?;
    let mut out = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            bail!("malformed silver line in {}: {line}", path.display());
        }
        let label = Label::parse(fields[2])
            .ok_or_else(|| anyhow!("bad label {:?} in {}", fields[2], path.display()))?;
        out.push(SilverLabel {
            patient_id: fields[0].to_string(),
            criterion_id: fields[1].to_string(),
            label,
            evidence: Vec::new(),
            code_evidence: Vec::new(),
            source: cohort_core::silver::LabelSource::Silver,
        });
    }
    Ok(out)
}

pub fn stage_train(stage: &Stage) -> Result<()> {
    let (unlabeled, _) = stage.ingest(&stage.corpus_dir("unlabeled"))?;
    let (train, _) = stage.ingest(&stage.corpus_dir("train"))?;
    let mut tokens_by_id: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for r in unlabeled.iter().chain(train.iter()) {
        tokens_by_id.insert(r.patient_id.clone(), record_tokens(r));
    }
    let gold_pairs = load_gold_labels(
        &stage.loaded.resolve(&stage.loaded.config.corpus.train_labels),
    )?;
    let embeddings = Arc::new(
        EmbeddingModel::load(&stage.out_dir.join("embeddings.bin"))
            .context("train needs out/embeddings.bin; run train-embeddings first")?,
    );
    let learner = &stage.loaded.config.learner;

    for weak in &stage.loaded.config.weak {
        let silver = read_silver_file(
            &stage.out_dir.join("silver").join(format!("{}.tsv", weak.criterion)),
        )?;
        let gold: Vec<(String, Label)> = gold_pairs
            .iter()
            .filter(|p| p.criterion_id == weak.criterion)
            .map(|p| (p.patient_id.clone(), p.label))
            .collect();
        let merged = merge_with_gold(&silver, &gold);
        let mut docs: Vec<Vec<String>> = Vec::new();
        let mut y: Vec<bool> = Vec::new();
        for example in &merged {
            let Some(tokens) = tokens_by_id.get(&example.patient_id) else {
                continue;
            };
            docs.push(tokens.clone());
            y.push(example.label == Label::Met);
        }
        println!(
            "train {}: {} examples ({} met)",
            weak.criterion,
            docs.len(),
            y.iter().filter(|&&b| b).count()
        );

        let tfidf_config = TfidfConfig {
            min_df: learner.min_df,
            l2_normalize: true,
        };
        let logreg_config = LogRegConfig {
            l2: learner.l2,
            learning_rate: learner.learning_rate,
            epochs: learner.epochs,
            batch_size: learner.batch_size,
            seed: derive_seed(stage.seed, &format!("logreg-{}", weak.criterion)),
        };
        let model = match weak.kind.as_str() {
            "stacked" => {
                let base_a = TfidfLogReg::new(tfidf_config, logreg_config);
                let base_b = EmbedLogReg::new(embeddings.clone(), logreg_config);
                let stacked = train_stacked(
                    base_a,
                    base_b,
                    &docs,
                    &y,
                    learner.folds,
                    derive_seed(stage.seed, &format!("stack-{}", weak.criterion)),
                    logreg_config,
                )?;
                WeakModel::Stacked {
                    model: stacked,
                    threshold: learner.threshold,
                }
            }
            "forest" => {
                let vectorizer = fit_tfidf(&docs, tfidf_config)?;
                let x: Vec<SparseVec> = docs.iter().map(|d| vectorizer.vectorize(d)).collect();
                let forest = train_forest(
                    &x,
                    &y,
                    vectorizer.dim(),
                    &ForestConfig {
                        n_trees: learner.forest_trees,
                        max_depth: learner.forest_depth,
                        features_per_split: None,
                        seed: derive_seed(stage.seed, &format!("forest-{}", weak.criterion)),
                    },
                )?;
                WeakModel::Forest {
                    vectorizer,
                    model: forest,
                }
            }
            other => bail!("unknown weak kind {other:?}"),
        };
        let model_path = stage
            .out_dir
            .join("models")
            .join(format!("{}.bin", weak.criterion));
        std::fs::create_dir_all(model_path.parent().unwrap())?;
        save_weak_model(&model, &model_path)?;
        write_meta_sidecar(&model_path, stage.hash(), stage.seed)?;
        write_artifact(
            &stage
                .out_dir
                .join("models")
                .join(format!("{}.summary.txt", weak.criterion)),
            stage.hash(),
            stage.seed,
            &summarize(&model),
        )?;
    }
    Ok(())
}

/// Loads cues, sets, mined titles, variants, and embeddings for prediction.
fn load_shared(stage: &Stage) -> Result<SharedAssets> {
    let cues = load_cues(&stage.loaded.resolve(&stage.loaded.config.assets.cues))?;
    let sets = load_set_file(&stage.loaded.resolve(&stage.loaded.config.assets.sets))?;
    let titles: Vec<SectionTitle> = load_titles(&stage.out_dir.join("sections.tsv"))
        .context("predict needs out/sections.tsv; run mine-sections first")?;
    let variants_path = stage.out_dir.join("variants.tsv");
    let variants = if variants_path.is_file() {
        VariantLexicon::load(&variants_path)?
    } else {
        VariantLexicon::default()
    };
    let embeddings_path = stage.out_dir.join("embeddings.bin");
    let embeddings = if embeddings_path.is_file() {
        Some(Arc::new(EmbeddingModel::load(&embeddings_path)?))
    } else {
        None
    };
    Ok(SharedAssets {
        cues,
        titles,
        variants,
        sets,
        embeddings,
    })
}

fn load_criteria(stage: &Stage, shared: &SharedAssets) -> Result<(Vec<LoadedCriterion>, Vec<String>)> {
    let mut loaded = Vec::new();
    let mut errors = Vec::new();
    for spec_path in &stage.loaded.config.assets.criteria {
        let full = stage.loaded.resolve(spec_path);
        let base_dir = full.parent().map(Path::to_path_buf).unwrap_or_default();
        match CriterionSpec::from_file(&full) {
            Ok(mut spec) => {
                // Model artifacts live under the output directory.
                if let Some(model) = &spec.model {
                    if !model.is_absolute() {
                        let resolved = stage.out_dir.join(model);
                        spec.model = Some(std::path::absolute(&resolved).unwrap_or(resolved));
                    }
                }
                match load_criterion(&spec, &base_dir, shared) {
                    Ok(criterion) => loaded.push(criterion),
                    Err(e) => errors.push(format!("{}: {e}", spec.id)),
                }
            }
            Err(e) => errors.push(format!("{}: {e}", full.display())),
        }
    }
    Ok((loaded, errors))
}

fn evidence_dump_rows(decision: &Decision) -> String {
    let mut out = String::new();
    for e in &decision.evidence {
        let (what, polarity, doc, offset, text) = match e {
            Evidence::Rule(m) => (
                m.rule_id.clone(),
                m.polarity.as_str(),
                m.doc_id.clone(),
                m.start,
                m.matched_text.clone(),
            ),
            Evidence::Term(m) => (
                m.surface.clone(),
                "-",
                m.doc_id.clone(),
                m.start,
                m.matched_text.clone(),
            ),
            Evidence::Lab(o) => (
                o.analyte.clone(),
                "-",
                o.doc_id.clone(),
                o.start,
                format!("{} {}", o.value, o.unit.clone().unwrap_or_default()),
            ),
        };
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            decision.patient_id, decision.criterion_id, what, polarity, doc, offset, text
        ));
    }
    out
}

pub fn stage_predict(stage: &Stage) -> Result<()> {
    let (test, _) = stage.ingest(&stage.corpus_dir("test"))?;
    let shared = load_shared(stage)?;
    let (criteria, load_errors) = load_criteria(stage, &shared)?;
    for e in &load_errors {
        eprintln!("criterion load error: {e}");
    }
    let per_patient: Vec<(Vec<Decision>, Vec<(String, String)>)> = test
        .par_iter()
        .map(|record| {
            let (decisions, errors) = evaluate_all(record, &criteria, &shared);
            let errors = errors
                .into_iter()
                .map(|(id, e)| (id, e.to_string()))
                .collect();
            (decisions, errors)
        })
        .collect();

    let mut decisions: Vec<Decision> = Vec::new();
    let mut runtime_errors: Vec<(String, String)> = Vec::new();
    for (d, e) in per_patient {
        decisions.extend(d);
        runtime_errors.extend(e);
    }
    decisions.sort_by(|a, b| {
        a.patient_id
            .cmp(&b.patient_id)
            .then(a.criterion_id.cmp(&b.criterion_id))
    });
    for (id, e) in &runtime_errors {
        eprintln!("criterion {id} failed: {e}");
    }
    let mut body = Vec::new();
    write_decisions(&mut body, &decisions)?;
    write_artifact(
        &stage.out_dir.join("decisions.tsv"),
        stage.hash(),
        stage.seed,
        &String::from_utf8(body)?,
    )?;
    let mut dump = String::new();
    for d in &decisions {
        dump.push_str(&evidence_dump_rows(d));
    }
    write_artifact(
        &stage.out_dir.join("evidence_dump.tsv"),
        stage.hash(),
        stage.seed,
        &dump,
    )?;
    println!(
        "predict: {} decisions over {} patients, {} criteria",
        decisions.len(),
        test.len(),
        criteria.len()
    );
    if !load_errors.is_empty() || !runtime_errors.is_empty() {
        bail!(
            "{} criterion errors during predict",
            load_errors.len() + runtime_errors.len()
        );
    }
    Ok(())
}

/// Reads a decisions TSV back into labeled pairs.
pub fn read_decisions(path: &Path) -> Result<Vec<LabeledPair>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read decisions {}", path.display()))?;
    let mut pairs = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            bail!("malformed decision line: {line}");
        }
        let label = Label::parse(fields[2]).ok_or_else(|| anyhow!("bad label {:?}", fields[2]))?;
        pairs.push(LabeledPair::new(fields[0], fields[1], label));
    }
    Ok(pairs)
}

pub fn stage_score(stage: &Stage) -> Result<()> {
    let test_labels = stage
        .loaded
        .config
        .corpus
        .test_labels
        .as_ref()
        .ok_or_else(|| anyhow!("score needs corpus.test_labels in the config"))?;
    let gold = load_gold_labels(&stage.loaded.resolve(test_labels))?;
    let predicted = read_decisions(&stage.out_dir.join("decisions.tsv"))?;
    let report = score(&gold, &predicted)?;
    let rendered = render_report(&report);
    print!("{rendered}");
    println!("overall micro F1: {:.4}", report.micro.overall_f1);
    let mut body = rendered;
    body.push_str(&format!("overall micro F1: {:.4}\n", report.micro.overall_f1));
    write_artifact(&stage.out_dir.join("report.txt"), stage.hash(), stage.seed, &body)
}

pub fn run_pipeline(stage: &Stage) -> Result<()> {
    std::fs::create_dir_all(&stage.out_dir)?;
    // Record the seed and config hash once for the whole run.
    write_atomic(
        &stage.out_dir.join("run.meta"),
        lineage_header(stage.hash(), stage.seed).as_bytes(),
    )?;
    println!("== ingest ==");
    stage_ingest(stage)?;
    println!("== mine-sections ==");
    stage_mine_sections(stage)?;
    println!("== train-embeddings ==");
    stage_train_embeddings(stage)?;
    println!("== expand-variants ==");
    stage_expand_variants(stage)?;
    println!("== build-silver ==");
    stage_build_silver(stage)?;
    println!("== train ==");
    stage_train(stage)?;
    println!("== predict ==");
    stage_predict(stage)?;
    if stage.loaded.config.corpus.test_labels.is_some() {
        println!("== score ==");
        stage_score(stage)?;
    }
    Ok(())
}
